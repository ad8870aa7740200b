//! Proximal map of `t * w^2 / h(rho)` for one space-time cell.

use crate::entropy::{EntropyModel, Mobility};

const PROX_TOL: f64 = 1e-12;
const PROX_MAX_ITER: usize = 200;

/// `argmin_{rho >= 0, w} w^2/h(rho) + |(rho, w) - (rho_hat, w_hat)|^2 / (2t)`.
///
/// The flux is eliminated in closed form, `w = w_hat h / (h + 2t)`, leaving the
/// increasing scalar equation `rho - rho_hat - t w_hat^2 h'(rho) / (h + 2t)^2 = 0`,
/// solved by bracketed Newton.
pub fn prox_action(rho_hat: f64, w_hat: f64, t: f64, model: &EntropyModel) -> (f64, f64) {
    if model.alpha() == Some(0.0) {
        return (rho_hat.max(0.0), w_hat / (1.0 + 2.0 * t));
    }
    if w_hat == 0.0 {
        return (rho_hat.max(0.0), 0.0);
    }
    let c = t * w_hat * w_hat;
    let eq = |r: f64| -> (f64, f64) {
        let h = model.h(r);
        let dh = model.dh(r);
        let d2h = model.d2h(r);
        let s = h + 2.0 * t;
        let val = r - rho_hat - c * dh / (s * s);
        let der = 1.0 - c * (d2h * s - 2.0 * dh * dh) / (s * s * s);
        (val, der)
    };
    let h0 = model.h(0.0);
    let dh0 = model.dh(0.0);
    if h0 == 0.0 && dh0.is_finite() {
        let f0 = -rho_hat - c * dh0 / (4.0 * t * t);
        if f0 >= 0.0 {
            return (0.0, 0.0);
        }
    }
    let mut lo = rho_hat.max(0.0);
    let mut hi = lo.max(1e-12) * 2.0 + c.sqrt();
    let mut guard = 0;
    while eq(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            break;
        }
    }
    let mut x = if lo > 0.0 { lo } else { 0.5 * hi };
    for _ in 0..PROX_MAX_ITER {
        let (f, df) = eq(x);
        if f.abs() <= PROX_TOL * (1.0 + x.abs() + rho_hat.abs()) {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if hi - lo <= 1e-16 * hi.max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    let h = model.h(x);
    (x, w_hat * h / (h + 2.0 * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action_density;

    fn objective(r: f64, w: f64, rh: f64, wh: f64, t: f64, m: &EntropyModel) -> f64 {
        action_density(r, w, m) + ((r - rh).powi(2) + (w - wh).powi(2)) / (2.0 * t)
    }

    #[test]
    fn prox_is_a_minimiser() {
        for &alpha in &[0.0, 0.3, 0.5, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            for &(rh, wh, t) in &[(1.0, 0.5, 0.1), (0.01, 2.0, 1.0), (-0.5, 1.0, 0.3), (2.0, -3.0, 5.0), (0.0, 1e-3, 1e-2)] {
                let (r, w) = prox_action(rh, wh, t, &m);
                let best = objective(r, w, rh, wh, t, &m);
                for &dr in &[-1e-4, 1e-4, 0.0] {
                    for &dw in &[-1e-4, 1e-4, 0.0] {
                        let rr = r + dr;
                        if rr < 0.0 {
                            continue;
                        }
                        assert!(objective(rr, w + dw, rh, wh, t, &m) >= best - 1e-12, "alpha={alpha} {rh} {wh} {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn log_case_vanishing_branch() {
        let m = EntropyModel::power(1.0).unwrap();
        assert_eq!(prox_action(-1.0, 0.1, 1.0, &m), (0.0, 0.0));
    }
}
