use serde::Serialize;

use super::config::TrainConfig;
use super::loss::{evaluate_loss, LossBreakdown, ModelInputs, PlanSource};
use super::params::ModelParams;
use super::sampler::Triplet;
use crate::Result;

/// Denominator floor for relative errors: derivatives smaller than this are
/// compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-6;

/// Reverse-mode gradient of the total objective, plans held constant.
pub fn compute_gradients(
    params: &ModelParams,
    inputs: &ModelInputs,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    plans: &PlanSource,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let out = evaluate_loss(params, inputs, triplets, cfg, plans, true)?;
    Ok((out.breakdown, out.gradient.expect("backward requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub worst_fd: f64,
    pub worst_analytic: f64,
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FD_ABS_FLOOR)
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` at `coords`
/// against `analytic`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> FdReport {
    let mut report = FdReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_coordinate: 0,
        worst_fd: 0.0,
        worst_analytic: 0.0,
    };
    let mut buf = x.to_vec();
    for &k in coords {
        buf[k] = x[k] + h;
        let plus = f(&buf);
        buf[k] = x[k] - h;
        let minus = f(&buf);
        buf[k] = x[k];
        let fd = (plus - minus) / (2.0 * h);
        let err = relative_error(fd, analytic[k]);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = k;
            report.worst_fd = fd;
            report.worst_analytic = analytic[k];
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_probe() {
        let c = [1.0, -2.0, 0.5];
        let x = [0.3, 0.1, -0.7];
        let f = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let g: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
        let r = finite_difference_check(f, &x, &g, &[0, 1, 2], 1e-5);
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-9);
        let wrong = vec![0.0; 3];
        assert!(finite_difference_check(f, &x, &wrong, &[0, 1, 2], 1e-5).max_rel_error > 0.5);
    }
}
