//! Staggered space-time discretisation: densities at (node, integer time),
//! fluxes at (face, half time), action evaluated on cells (face, half time)
//! from the four surrounding densities.

use std::sync::Arc;

use crate::action::action_density;
use crate::entropy::{EntropyModel, Mobility};
use crate::grid::GammaGrid;
use crate::linalg::{solve_tridiagonal, CosineBasis};

pub struct SpaceTime {
    pub grid: Arc<GammaGrid>,
    /// Number of time steps `N`; densities live on `N + 1` slices.
    pub ns: usize,
    pub ds: f64,
    n: usize,
    m: usize,
    basis: CosineBasis,
    pivot: usize,
    /// Tridiagonal systems for the nonzero temporal frequencies.
    sys_sub: Vec<Vec<f64>>,
    sys_diag: Vec<Vec<f64>>,
    sys_sup: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

impl SpaceTime {
    pub fn new(grid: &Arc<GammaGrid>, ns: usize) -> Self {
        let n = grid.len();
        let m = grid.n_faces();
        let ds = 1.0 / ns as f64;
        let basis = CosineBasis::new(ns);
        let gn = grid.node_weights();
        let gf = grid.face_weights();
        let c = ds / (grid.dx() * grid.dx());
        let mut sys_sub = Vec::with_capacity(ns);
        let mut sys_diag = Vec::with_capacity(ns);
        let mut sys_sup = Vec::with_capacity(ns);
        for k in 0..ns {
            let ev = basis.eigenvalue(k) / ds;
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            for i in 0..n {
                diag[i] = ev * gn[i];
                if i > 0 {
                    sub[i] = -c * gf[i - 1];
                    diag[i] += c * gf[i - 1];
                }
                if i + 1 < n {
                    sup[i] = -c * gf[i];
                    diag[i] += c * gf[i];
                }
            }
            sys_sub.push(sub);
            sys_diag.push(diag);
            sys_sup.push(sup);
        }
        let pivot = (0..n).max_by(|&a, &b| gn[a].total_cmp(&gn[b])).unwrap_or(0);
        Self {
            grid: grid.clone(),
            ns,
            ds,
            n,
            m,
            basis,
            pivot,
            sys_sub,
            sys_diag,
            sys_sup,
            scratch: vec![0.0; n.max(ns)],
            buf_a: vec![0.0; n.max(ns)],
            buf_b: vec![0.0; n.max(ns)],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_faces(&self) -> usize {
        self.m
    }

    pub fn n_cells(&self) -> usize {
        self.ns * self.m
    }

    pub fn rho_len(&self) -> usize {
        (self.ns + 1) * self.n
    }

    /// Cell densities: average of the four surrounding nodes.
    pub fn interpolate(&self, rho: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for j in 0..self.ns {
            let a = &rho[j * n..(j + 1) * n];
            let b = &rho[(j + 1) * n..(j + 2) * n];
            let o = &mut out[j * m..(j + 1) * m];
            for f in 0..m {
                o[f] = 0.25 * (a[f] + a[f + 1] + b[f] + b[f + 1]);
            }
        }
    }

    /// Adjoint of `interpolate` for the weighted inner products
    /// (nodes weighted by `g_i ds`, cells by `g_f ds`).
    pub fn interpolate_adjoint(&self, cells: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let gn = self.grid.node_weights();
        let gf = self.grid.face_weights();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ns {
            let c = &cells[j * m..(j + 1) * m];
            for f in 0..m {
                let v = 0.25 * gf[f] * c[f];
                out[j * n + f] += v;
                out[j * n + f + 1] += v;
                out[(j + 1) * n + f] += v;
                out[(j + 1) * n + f + 1] += v;
            }
        }
        for j in 0..=self.ns {
            for i in 0..n {
                out[j * n + i] /= gn[i];
            }
        }
    }

    /// Squared operator norm of `interpolate` between the weighted spaces.
    pub fn interpolation_norm_sq(&self) -> f64 {
        let gn = self.grid.node_weights();
        let gf = self.grid.face_weights();
        let mut best: f64 = 0.0;
        for i in 0..self.n {
            let mut s = 0.0;
            if i > 0 {
                s += gf[i - 1];
            }
            if i + 1 < self.n {
                s += gf[i];
            }
            // Interior time nodes touch two cells per adjacent face.
            best = best.max(2.0 * s / (4.0 * gn[i]));
        }
        best
    }

    /// Continuity defect `g_i (rho^{j+1} - rho^j) + ds/dx (g_{f+} w_{f+} - g_{f-} w_{f-})`,
    /// stored node-major (`i * N + j`).
    pub fn residual(&self, rho: &[f64], w: &[f64], out: &mut [f64]) {
        let (n, m, ns) = (self.n, self.m, self.ns);
        let gn = self.grid.node_weights();
        let gf = self.grid.face_weights();
        let c = self.ds / self.grid.dx();
        for j in 0..ns {
            let wj = &w[j * m..(j + 1) * m];
            for i in 0..n {
                let mut r = gn[i] * (rho[(j + 1) * n + i] - rho[j * n + i]);
                if i + 1 < n {
                    r += c * gf[i] * wj[i];
                }
                if i > 0 {
                    r -= c * gf[i - 1] * wj[i - 1];
                }
                out[i * ns + j] = r;
            }
        }
    }

    /// Same as `residual` with the endpoint density slices treated as zero.
    pub fn residual_interior(&self, rho: &[f64], w: &[f64], out: &mut [f64]) {
        let (n, m, ns) = (self.n, self.m, self.ns);
        let gn = self.grid.node_weights();
        let gf = self.grid.face_weights();
        let c = self.ds / self.grid.dx();
        for j in 0..ns {
            let wj = &w[j * m..(j + 1) * m];
            for i in 0..n {
                let up = if j + 1 < ns { rho[(j + 1) * n + i] } else { 0.0 };
                let down = if j > 0 { rho[j * n + i] } else { 0.0 };
                let mut r = gn[i] * (up - down);
                if i + 1 < n {
                    r += c * gf[i] * wj[i];
                }
                if i > 0 {
                    r -= c * gf[i - 1] * wj[i - 1];
                }
                out[i * ns + j] = r;
            }
        }
    }

    /// Solves `A M^{-1} A^T lambda = r` (node-major layout), up to a constant.
    pub fn solve_normal(&mut self, r: &[f64], lambda: &mut [f64]) {
        let (n, ns) = (self.n, self.ns);
        // Forward transform in time, stored frequency-major.
        let mut hat = vec![0.0; n * ns];
        for i in 0..n {
            self.basis.forward(&r[i * ns..(i + 1) * ns], &mut self.buf_a[..ns]);
            for k in 0..ns {
                hat[k * n + i] = self.buf_a[k];
            }
        }
        let mut sol = vec![0.0; n * ns];
        self.solve_zero_frequency(&hat[..n], &mut sol[..n]);
        for k in 1..ns {
            let (rhs, out) = (&hat[k * n..(k + 1) * n], &mut sol[k * n..(k + 1) * n]);
            solve_tridiagonal(&self.sys_sub[k], &self.sys_diag[k], &self.sys_sup[k], rhs, out, &mut self.scratch[..n]);
        }
        for i in 0..n {
            for k in 0..ns {
                self.buf_a[k] = sol[k * n + i];
            }
            self.basis.inverse(&self.buf_a[..ns], &mut self.buf_b[..ns]);
            lambda[i * ns..(i + 1) * ns].copy_from_slice(&self.buf_b[..ns]);
        }
    }

    /// Singular Neumann problem: integrate the flux from both ends towards the
    /// heaviest node so that tiny tail weights never amplify cancellation.
    fn solve_zero_frequency(&self, r: &[f64], out: &mut [f64]) {
        let n = self.n;
        let gf = self.grid.face_weights();
        let c = self.ds / (self.grid.dx() * self.grid.dx());
        let p = self.pivot;
        let mut flux = vec![0.0; n - 1];
        let mut acc = 0.0;
        for f in 0..p {
            acc -= r[f] / c;
            flux[f] = acc;
        }
        acc = 0.0;
        for f in (p..n - 1).rev() {
            acc += r[f + 1] / c;
            flux[f] = acc;
        }
        out[p] = 0.0;
        for f in p..n - 1 {
            out[f + 1] = out[f] + flux[f] / gf[f];
        }
        for f in (0..p).rev() {
            out[f] = out[f + 1] - flux[f] / gf[f];
        }
    }

    /// `U <- U - M^{-1} A^T lambda` on interior slices and all fluxes.
    pub fn apply_correction(&self, lambda: &[f64], rho: &mut [f64], w: &mut [f64]) {
        let (n, m, ns) = (self.n, self.m, self.ns);
        let inv_ds = 1.0 / self.ds;
        let inv_dx = 1.0 / self.grid.dx();
        for j in 1..ns {
            for i in 0..n {
                rho[j * n + i] -= (lambda[i * ns + j - 1] - lambda[i * ns + j]) * inv_ds;
            }
        }
        for j in 0..ns {
            for f in 0..m {
                w[j * m + f] -= (lambda[f * ns + j] - lambda[(f + 1) * ns + j]) * inv_dx;
            }
        }
    }

    /// Weighted projection onto the continuity constraint with the given endpoints.
    pub fn project(&mut self, rho: &mut [f64], w: &mut [f64], rho0: &[f64], rho1: &[f64]) {
        let (n, ns) = (self.n, self.ns);
        rho[..n].copy_from_slice(rho0);
        rho[ns * n..].copy_from_slice(rho1);
        let mut r = vec![0.0; n * ns];
        self.residual(rho, w, &mut r);
        let mut lambda = vec![0.0; n * ns];
        self.solve_normal(&r, &mut lambda);
        self.apply_correction(&lambda, rho, w);
    }

    /// Per-slice action `sum_f g_f phi(rho_cell, w)`.
    pub fn slice_actions(&self, rho: &[f64], w: &[f64], model: &EntropyModel) -> Vec<f64> {
        let m = self.m;
        let mut cells = vec![0.0; self.n_cells()];
        self.interpolate(rho, &mut cells);
        let gf = self.grid.face_weights();
        (0..self.ns)
            .map(|j| {
                (0..m)
                    .map(|f| {
                        let wv = w[j * m + f];
                        if wv == 0.0 {
                            0.0
                        } else {
                            gf[f] * action_density(cells[j * m + f], wv, model)
                        }
                    })
                    .sum()
            })
            .collect()
    }

    pub fn energy(&self, rho: &[f64], w: &[f64], model: &EntropyModel) -> f64 {
        self.slice_actions(rho, w, model).iter().sum::<f64>() * self.ds
    }

    /// Mass-weighted continuity defect `max_j sum_i |r_ij| / ds`.
    pub fn continuity_residual(&self, rho: &[f64], w: &[f64]) -> f64 {
        let (n, ns) = (self.n, self.ns);
        let mut r = vec![0.0; n * ns];
        self.residual(rho, w, &mut r);
        (0..ns)
            .map(|j| (0..n).map(|i| r[i * ns + j].abs()).sum::<f64>() / self.ds)
            .fold(0.0, f64::max)
    }

    /// Rigorous lower bound on the discrete minimum from the multiplier `phi`
    /// (node-major, one value per node and half step) and a nonnegative
    /// tangent point `rho` (full path; only interior slices are used).
    ///
    /// Minimising the Lagrangian over fluxes in closed form leaves a convex
    /// function of the interior densities; its tangent plane at `rho` bounds it
    /// from below on `rho >= 0` provided the gradient is nonnegative, which is
    /// enforced by adding `eps * s` to `phi` at the cost of `eps` times the mass.
    pub fn dual_lower_bound(&self, phi: &[f64], rho: &[f64], model: &EntropyModel) -> f64 {
        let (n, m, ns, ds) = (self.n, self.m, self.ns, self.ds);
        let gn = self.grid.node_weights();
        let gf = self.grid.face_weights();
        let dx = self.grid.dx();
        let mut cells = vec![0.0; self.n_cells()];
        self.interpolate(rho, &mut cells);

        let mut value = 0.0;
        // d/d rho of the flux-minimised cell terms, gathered on nodes.
        let mut grad = vec![0.0; (ns + 1) * n];
        for j in 0..ns {
            for f in 0..m {
                let b = (phi[(f + 1) * ns + j] - phi[f * ns + j]) / dx;
                let rc = cells[j * m + f];
                let q = 0.25 * gf[f] * ds * b * b;
                if q == 0.0 {
                    continue;
                }
                let h = model.h(rc);
                let dh = model.dh(rc);
                let mut interior = 0.0;
                if j > 0 {
                    interior += rho[j * n + f] + rho[j * n + f + 1];
                }
                if j + 1 < ns {
                    interior += rho[(j + 1) * n + f] + rho[(j + 1) * n + f + 1];
                }
                value -= q * (h - dh * 0.25 * interior);
                let gq = 0.25 * q * dh;
                for &(jj, ii) in &[(j, f), (j, f + 1), (j + 1, f), (j + 1, f + 1)] {
                    grad[jj * n + ii] += gq;
                }
            }
        }
        let mut eps: f64 = 0.0;
        for j in 1..ns {
            for i in 0..n {
                let a = (phi[i * ns + j] - phi[i * ns + j - 1]) / ds;
                let slope = a - grad[j * n + i] / (gn[i] * ds);
                eps = eps.max(-slope);
            }
        }
        let mut boundary = 0.0;
        let (mut m0, mut m1) = (0.0, 0.0);
        for i in 0..n {
            boundary += gn[i] * (phi[i * ns + ns - 1] * rho[ns * n + i] - phi[i * ns] * rho[i]);
            m0 += gn[i] * rho[i];
            m1 += gn[i] * rho[ns * n + i];
        }
        value - boundary - eps * ((1.0 - 0.5 * ds) * m1 - 0.5 * ds * m0)
    }
}
