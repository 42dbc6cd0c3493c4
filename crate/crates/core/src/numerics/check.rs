//! Finite-difference gradient checker. Every hand-written backward pass in
//! this crate is validated against it on small randomized instances.

use crate::{Error, Result};

/// Diagnostics for the worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckError {
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare an analytic gradient against central finite differences of
/// `loss_fn` at `params`, returning the worst relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over coordinates.
pub fn grad_check<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckError>
where
    F: Fn(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::Config("grad_check: eps must be > 0".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "grad_check: params {}, analytic {}",
            params.len(),
            analytic.len()
        )));
    }
    let mut worst = GradCheckError {
        max_rel_error: 0.0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = loss_fn(&work);
        work[i] = orig - eps;
        let minus = loss_fn(&work);
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Config(format!(
                "grad_check: non-finite loss when perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > worst.max_rel_error {
            worst = GradCheckError {
                max_rel_error: rel,
                worst_coord: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_stream;

    #[test]
    fn linear_loss_is_exact() {
        let w = [0.3, -1.7, 2.5, 0.9];
        let x = [1.0, 2.0, -0.5, 4.0];
        let loss = |p: &[f64]| p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let res = grad_check(loss, &x, &w, 1e-5).unwrap();
        assert!(res.max_rel_error <= 1e-10, "{res:?}");
    }

    #[test]
    fn two_layer_net_checks_out() {
        // Random 2-layer tanh net with d = 8 inputs; analytic gradient of
        // 0.5 * y^2 w.r.t. the input, checked at eps = 1e-5.
        let mut s = seeded_stream(11, &["gradcheck"]);
        let d = 8;
        let h = 5;
        let w1: Vec<f64> = s.normal_vec(h * d);
        let w2: Vec<f64> = s.normal_vec(h);
        let x: Vec<f64> = s.normal_vec(d);

        let forward = |x: &[f64]| -> f64 {
            let mut y = 0.0;
            for i in 0..h {
                let z: f64 = (0..d).map(|j| w1[i * d + j] * x[j]).sum();
                y += w2[i] * z.tanh();
            }
            0.5 * y * y
        };
        // Analytic: dL/dx_j = y * sum_i w2_i (1 - tanh^2(z_i)) w1_ij
        let mut zs = vec![0.0; h];
        let mut y = 0.0;
        for i in 0..h {
            zs[i] = (0..d).map(|j| w1[i * d + j] * x[j]).sum();
            y += w2[i] * zs[i].tanh();
        }
        let analytic: Vec<f64> = (0..d)
            .map(|j| {
                y * (0..h)
                    .map(|i| {
                        let t = zs[i].tanh();
                        w2[i] * (1.0 - t * t) * w1[i * d + j]
                    })
                    .sum::<f64>()
            })
            .collect();

        let res = grad_check(forward, &x, &analytic, 1e-5).unwrap();
        assert!(res.max_rel_error <= 1e-4, "{res:?}");
    }

    #[test]
    fn zero_eps_errors() {
        let res = grad_check(|_| 0.0, &[1.0], &[0.0], 0.0);
        assert!(res.is_err());
    }

    #[test]
    fn non_finite_loss_names_coordinate() {
        let loss = |p: &[f64]| if p[1] > 1.0 { f64::NAN } else { 0.0 };
        let err = grad_check(loss, &[0.0, 1.0], &[0.0, 0.0], 1e-2).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
