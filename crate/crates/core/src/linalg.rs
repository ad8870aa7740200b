//! Small dense helpers: tridiagonal solves and the time-direction cosine basis.

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `sub[i]` multiplies `x[i-1]` in row `i` (`sub[0]` is ignored), `sup[i]`
/// multiplies `x[i+1]` (`sup[n-1]` is ignored). `scratch` must have length `n`.
/// Returns `false` on a vanishing pivot.
pub fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) -> bool {
    let n = diag.len();
    if n == 0 {
        return true;
    }
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return false;
    }
    out[0] = rhs[0] / piv;
    for i in 1..n {
        scratch[i] = sup[i - 1] / piv;
        piv = diag[i] - sub[i] * scratch[i];
        if piv == 0.0 || !piv.is_finite() {
            return false;
        }
        out[i] = (rhs[i] - sub[i] * out[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        out[i] -= scratch[i + 1] * out[i + 1];
    }
    true
}

/// Orthonormal DCT-II basis of length `m`: eigenvectors of the Neumann
/// second-difference matrix `tridiag(-1, 2, -1)` with unit corner entries.
pub struct CosineBasis {
    m: usize,
    /// Row-major `m x m`, row `k` is the `k`-th basis vector.
    q: Vec<f64>,
    eig: Vec<f64>,
}

impl CosineBasis {
    pub fn new(m: usize) -> Self {
        let mut q = vec![0.0; m * m];
        let mut eig = vec![0.0; m];
        let mf = m as f64;
        for k in 0..m {
            let norm = if k == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
            for j in 0..m {
                q[k * m + j] = norm * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / mf).cos();
            }
            let s = (std::f64::consts::PI * k as f64 / (2.0 * mf)).sin();
            eig[k] = 4.0 * s * s;
        }
        Self { m, q, eig }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eig[k]
    }

    /// `out[k] = sum_j q[k][j] v[j]`.
    pub fn forward(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let row = &self.q[k * m..(k + 1) * m];
            out[k] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn inverse(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        out[..m].iter_mut().for_each(|o| *o = 0.0);
        for k in 0..m {
            let row = &self.q[k * m..(k + 1) * m];
            let c = v[k];
            for (o, a) in out.iter_mut().zip(row) {
                *o += c * a;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        let n = 6;
        let sub = [0.0, -1.0, -0.5, -2.0, -0.3, -1.0];
        let diag = [4.0, 5.0, 3.0, 6.0, 2.5, 3.0];
        let sup = [-1.0, -2.0, -0.4, -1.0, -0.7, 0.0];
        let x_true = [1.0, -2.0, 0.5, 3.0, -1.5, 0.25];
        let mut rhs = [0.0; 6];
        for i in 0..n {
            rhs[i] = diag[i] * x_true[i];
            if i > 0 {
                rhs[i] += sub[i] * x_true[i - 1];
            }
            if i + 1 < n {
                rhs[i] += sup[i] * x_true[i + 1];
            }
        }
        let mut out = [0.0; 6];
        let mut scratch = [0.0; 6];
        assert!(solve_tridiagonal(&sub, &diag, &sup, &rhs, &mut out, &mut scratch));
        for i in 0..n {
            assert!((out[i] - x_true[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_basis_diagonalises_neumann_matrix() {
        let m = 7;
        let b = CosineBasis::new(m);
        for k in 0..m {
            let v: Vec<f64> = (0..m).map(|j| b.q[k * m + j]).collect();
            for j in 0..m {
                let left = if j > 0 { v[j - 1] } else { v[j] };
                let right = if j + 1 < m { v[j + 1] } else { v[j] };
                let tv = 2.0 * v[j] - left - right;
                assert!((tv - b.eigenvalue(k) * v[j]).abs() < 1e-13);
            }
        }
        let x: Vec<f64> = (0..m).map(|j| (j as f64).sin()).collect();
        let mut f = vec![0.0; m];
        let mut back = vec![0.0; m];
        b.forward(&x, &mut f);
        b.inverse(&f, &mut back);
        for j in 0..m {
            assert!((back[j] - x[j]).abs() < 1e-13);
        }
    }
}
