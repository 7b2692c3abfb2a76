//! Numeric checks of the alignment error bounds on synthetic instances with
//! a known bilinear preference function, plus an exact small-`d` transport
//! oracle.

use itertools::Itertools;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::alignment::{cmcl_loss, cost_matrix, fuse_items, infonce_pair_loss};
use crate::{Error, Result};

pub const MAX_EXACT_DIM: usize = 7;
pub const SLACK_TOLERANCE: f64 = 1e-9;

/// Exact OT cost under uniform marginals: the minimum over permutations
/// `sigma` of `(1/d) sum_i C[i, sigma(i)]`, valid because doubly stochastic
/// matrices are convex combinations of permutations.
pub fn exact_w1_bruteforce(cost: &Array2<f64>) -> Result<f64> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::DimensionMismatch(format!("cost must be square, got {n}x{m}")));
    }
    if n > MAX_EXACT_DIM {
        return Err(Error::OracleTooLarge(n));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let best = (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// Constituent terms of a bound check.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundTerms {
    pub k: f64,
    pub l_star: f64,
    pub w1_text: f64,
    pub w1_visual: f64,
    pub w1_id: f64,
    pub l_cmcl: f64,
    pub l_pair: f64,
    pub instance_distance: f64,
    pub tau: f64,
    pub batch: usize,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub reading: String,
    /// User index at which the slack is smallest, when checked per user.
    pub user: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub terms: BoundTerms,
}

impl BoundReport {
    fn new(name: &str, reading: &str, user: Option<usize>, lhs: f64, rhs: f64, terms: BoundTerms) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.into(),
            reading: reading.into(),
            user,
            lhs,
            rhs,
            slack,
            holds: slack >= -SLACK_TOLERANCE,
            terms,
        }
    }
}

fn normalized(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn mean_row_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| (&x - &y).mapv(|v| v * v).sum().sqrt())
        .sum();
    total / a.nrows() as f64
}

/// Instance-level bound `mean_i |z_i^m - z_i| <= sqrt(2 tau L + 2 tau log B)`
/// on row-normalised inputs, with `L` the InfoNCE loss anchored at `z_m`.
pub fn check_distance_bound(z_m: &Array2<f64>, z_unified: &Array2<f64>, tau: f64) -> Result<BoundReport> {
    let a = normalized(z_m);
    let b = normalized(z_unified);
    let l_pair = infonce_pair_loss(&a, &b, tau)?;
    let batch = a.nrows();
    let lhs = mean_row_distance(&a, &b);
    let rhs = (2.0 * tau * l_pair + 2.0 * tau * (batch as f64).ln()).sqrt();
    let terms = BoundTerms {
        l_pair,
        instance_distance: lhs,
        tau,
        batch,
        ..Default::default()
    };
    Ok(BoundReport::new("distance_bound", "printed", None, lhs, rhs, terms))
}

/// Ground truth `f*(u, v) = u^T A v` over item vectors `v`, with modality
/// sample sets paired row by row with the items.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPreferenceSetup {
    pub users: Array2<f64>,
    pub a: Array2<f64>,
    pub items: Array2<f64>,
    pub z_text: Array2<f64>,
    pub z_visual: Array2<f64>,
    pub z_id: Array2<f64>,
    pub gamma_t: f64,
    pub gamma_v: f64,
    pub tau: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

/// Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let g = gaussian(rng, d, d);
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = g.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k).to_owned();
            let proj = qk.dot(&v);
            v.scaled_add(-proj, &qk);
        }
        let n = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / n));
    }
    q
}

impl SyntheticPreferenceSetup {
    /// Unit item vectors, `A = scale * Q` with `Q` orthogonal, ID samples
    /// `normalize(A v + noise)` and modality samples as further perturbed
    /// copies of the ID samples. `misalignment` scales the modality
    /// perturbation.
    pub fn random(d: usize, batch: usize, n_users: usize, misalignment: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = normalized(&gaussian(&mut rng, batch, d));
        let a = random_orthogonal(&mut rng, d) * rng.random_range(0.5..1.5);
        let users = gaussian(&mut rng, n_users, d) / (d as f64).sqrt();
        let target = items.dot(&a.t());
        let z_id = normalized(&(&target + &(gaussian(&mut rng, batch, d) * 0.1)));
        let z_text = normalized(&(&z_id + &(gaussian(&mut rng, batch, d) * misalignment)));
        let rot = random_orthogonal(&mut rng, d);
        let mix = &z_id * (1.0 - misalignment.min(1.0)) + z_id.dot(&rot) * misalignment.min(1.0);
        let z_visual = normalized(&(&mix + &(gaussian(&mut rng, batch, d) * misalignment)));
        Self {
            users,
            a,
            items,
            z_text,
            z_visual,
            z_id,
            gamma_t: 1.0 / 3.0,
            gamma_v: 1.0 / 3.0,
            tau: 0.2,
        }
    }

    pub fn batch(&self) -> usize {
        self.items.nrows()
    }

    /// Row-normalised fused representations.
    pub fn unified(&self) -> Result<Array2<f64>> {
        Ok(normalized(&fuse_items(&self.z_text, &self.z_visual, &self.z_id, self.gamma_t, self.gamma_v)?))
    }

    /// `max_u |u|`.
    pub fn k(&self) -> f64 {
        self.users.rows().into_iter().map(|u| u.dot(&u).sqrt()).fold(0.0, f64::max)
    }

    /// `max_u |A^T u|`, the Lipschitz constant of `f*(u, .)` over the users.
    pub fn l_star(&self) -> f64 {
        self.users
            .rows()
            .into_iter()
            .map(|u| {
                let w = self.a.t().dot(&u);
                w.dot(&w).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `mean_i |u^T z_i - f*(u, v_i)|` for every user.
    pub fn errors(&self, z: &Array2<f64>) -> Array1<f64> {
        let truth = self.users.dot(&self.a).dot(&self.items.t());
        let pred = self.users.dot(&z.t());
        (pred - truth).mapv(f64::abs).mean_axis(Axis(1)).expect("non-empty batch")
    }
}

/// Both guarantees under both quantifier readings plus the intermediate
/// modality-to-unified bound, each reduced to its worst user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBoundReport {
    pub consistency_per_modality: BoundReport,
    pub consistency_max_w1: BoundReport,
    pub comprehensiveness_per_modality: BoundReport,
    pub comprehensiveness_max_w1: BoundReport,
    /// One report per modality (text, visual, id), printed form.
    pub error_gap: Vec<BoundReport>,
}

impl ErrorBoundReport {
    /// Consistency and comprehensiveness each hold under at least one
    /// reading.
    pub fn holds_some_reading(&self) -> bool {
        (self.consistency_per_modality.holds || self.consistency_max_w1.holds)
            && (self.comprehensiveness_per_modality.holds || self.comprehensiveness_max_w1.holds)
    }

    pub fn error_gap_holds(&self) -> bool {
        self.error_gap.iter().all(|r| r.holds)
    }

    pub fn all(&self) -> Vec<&BoundReport> {
        let mut v = vec![
            &self.consistency_per_modality,
            &self.consistency_max_w1,
            &self.comprehensiveness_per_modality,
            &self.comprehensiveness_max_w1,
        ];
        v.extend(&self.error_gap);
        v
    }
}

fn worst(reports: impl IntoIterator<Item = BoundReport>) -> BoundReport {
    reports
        .into_iter()
        .min_by(|a, b| a.slack.total_cmp(&b.slack))
        .expect("at least one user")
}

/// Evaluates the consistency and comprehensiveness bounds with
/// `W1(P^m, Q^id)` the exact transport cost of the feature-wise cost matrix
/// between modality and ID samples, `L_CMCL` the three-pair contrastive loss
/// and `K`, `L*` maximised over the user set.
///
/// * per-modality reading: every modality must satisfy its own inequality
///   with its own `W1`; for consistency the left side is `eps_m - eps_F`.
/// * max-W1 reading: the left side is `max_m eps_m - eps_F` (consistency) or
///   `eps_F - min_m eps_m` (comprehensiveness) against `max_m W1`.
pub fn check_error_bounds(setup: &SyntheticPreferenceSetup) -> Result<ErrorBoundReport> {
    let d = setup.z_id.ncols();
    if d > MAX_EXACT_DIM {
        return Err(Error::OracleTooLarge(d));
    }
    let z = setup.unified()?;
    let tau = setup.tau;
    let batch = setup.batch();
    let modalities = [("text", &setup.z_text), ("visual", &setup.z_visual), ("id", &setup.z_id)];
    let mut w1 = [0.0; 3];
    for (k, (_, zm)) in modalities.iter().enumerate() {
        w1[k] = exact_w1_bruteforce(&cost_matrix(zm, &setup.z_id, 1.0)?)?;
    }
    let l_cmcl = cmcl_loss(&setup.z_id, &setup.z_text, &setup.z_visual, tau)?;
    let k = setup.k();
    let l_star = setup.l_star();
    let kl = k + l_star;
    let instance = (2.0 * tau * kl * kl * (l_cmcl + (batch as f64).ln())).sqrt();
    let eps_f = setup.errors(&z);
    let eps_m: Vec<Array1<f64>> = modalities.iter().map(|(_, zm)| setup.errors(zm)).collect();
    let base = BoundTerms {
        k,
        l_star,
        w1_text: w1[0],
        w1_visual: w1[1],
        w1_id: w1[2],
        l_cmcl,
        tau,
        batch,
        n_users: setup.users.nrows(),
        ..Default::default()
    };
    let w1_max = w1.iter().copied().fold(0.0, f64::max);
    let users = 0..setup.users.nrows();
    let (eps_m, eps_f) = (&eps_m, &eps_f);

    let per_modality = |name: &str, sign: f64| {
        worst(users.clone().flat_map(|u| {
            let base = base.clone();
            (0..3).map(move |m| {
                let lhs = sign * (eps_m[m][u] - eps_f[u]);
                let rhs = kl * w1[m] + instance;
                BoundReport::new(name, &format!("per_modality:{}", modalities[m].0), Some(u), lhs, rhs, base.clone())
            })
        }))
    };
    let consistency_per_modality = per_modality("consistency", 1.0);
    let comprehensiveness_per_modality = per_modality("comprehensiveness", -1.0);
    let consistency_max_w1 = worst(users.clone().map(|u| {
        let max_eps = (0..3).map(|m| eps_m[m][u]).fold(f64::NEG_INFINITY, f64::max);
        BoundReport::new("consistency", "max_w1", Some(u), max_eps - eps_f[u], kl * w1_max + instance, base.clone())
    }));
    let comprehensiveness_max_w1 = worst(users.clone().map(|u| {
        let min_eps = (0..3).map(|m| eps_m[m][u]).fold(f64::INFINITY, f64::min);
        BoundReport::new("comprehensiveness", "max_w1", Some(u), eps_f[u], min_eps + kl * w1_max + instance, base.clone())
    }));
    let error_gap = (0..3)
        .map(|m| {
            let dist = mean_row_distance(modalities[m].1, &z);
            worst(users.clone().map(|u| {
                let terms = BoundTerms {
                    instance_distance: dist,
                    ..base.clone()
                };
                let lhs = (eps_m[m][u] - eps_f[u]).abs();
                BoundReport::new("error_gap", &format!("printed:{}", modalities[m].0), Some(u), lhs, kl * w1[m] + kl * dist, terms)
            }))
        })
        .collect();
    Ok(ErrorBoundReport {
        consistency_per_modality,
        consistency_max_w1,
        comprehensiveness_per_modality,
        comprehensiveness_max_w1,
        error_gap,
    })
}

/// Random normalised pairs for the instance-level bound.
pub fn random_distance_instance(batch: usize, d: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = normalized(&gaussian(&mut rng, batch, d));
    let b = normalized(&gaussian(&mut rng, batch, d));
    (a, b)
}

/// Default verification suite: `distance_trials` random instances at
/// `B = 32, d = 16` and `preference_trials` preference setups at `d = 6,
/// B = 32`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSuite {
    pub distance: Vec<BoundReport>,
    pub error_bounds: Vec<ErrorBoundReport>,
}

impl VerificationSuite {
    pub fn run(distance_trials: usize, preference_trials: usize, seed: u64) -> Result<Self> {
        let distance = (0..distance_trials as u64)
            .map(|t| {
                let (a, b) = random_distance_instance(32, 16, seed.wrapping_add(t));
                check_distance_bound(&a, &b, 0.2)
            })
            .collect::<Result<_>>()?;
        let error_bounds = (0..preference_trials as u64)
            .map(|t| check_error_bounds(&SyntheticPreferenceSetup::random(6, 32, 16, 0.3, seed.wrapping_add(1000 + t))))
            .collect::<Result<_>>()?;
        Ok(Self { distance, error_bounds })
    }

    /// Every distance bound and error-gap bound holds, and each guarantee holds
    /// under at least one reading.
    pub fn passed(&self) -> bool {
        self.distance.iter().all(|r| r.holds) && self.error_bounds.iter().all(|t| t.holds_some_reading() && t.error_gap_holds())
    }

    pub fn reports(&self) -> Vec<&BoundReport> {
        let mut v: Vec<&BoundReport> = self.distance.iter().collect();
        for t in &self.error_bounds {
            v.extend(t.all());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{absolute_epsilon, sinkhorn, uniform_marginal};

    /// Assignment by DP over column subsets, independent of enumeration.
    fn assignment_dp(c: &Array2<f64>) -> f64 {
        let d = c.nrows();
        let mut dp = vec![f64::INFINITY; 1 << d];
        dp[0] = 0.0;
        for mask in 0usize..(1 << d) {
            let row = mask.count_ones() as usize;
            if row >= d || !dp[mask].is_finite() {
                continue;
            }
            for j in 0..d {
                if mask & (1 << j) == 0 {
                    let next = mask | (1 << j);
                    dp[next] = dp[next].min(dp[mask] + c[[row, j]]);
                }
            }
        }
        dp[(1 << d) - 1] / d as f64
    }

    #[test]
    fn exact_w1_cases() {
        assert_eq!(exact_w1_bruteforce(&Array2::zeros((4, 4))).unwrap(), 0.0);
        let c = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(exact_w1_bruteforce(&c).unwrap(), 0.0);
        assert!(matches!(exact_w1_bruteforce(&Array2::zeros((8, 8))), Err(Error::OracleTooLarge(8))));
        assert!(exact_w1_bruteforce(&Array2::zeros((2, 3))).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..=6 {
            let c = Array2::from_shape_fn((d, d), |_| rng.random_range(0.0..1.0));
            assert!((exact_w1_bruteforce(&c).unwrap() - assignment_dp(&c)).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_w1_permutation_symmetry_and_sinkhorn_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Array2::from_shape_fn((5, 5), |_| rng.random_range(0.0..1.0));
        let (pr, pc) = ([3, 1, 4, 0, 2], [2, 0, 1, 4, 3]);
        let permuted = Array2::from_shape_fn((5, 5), |(i, j)| c[[pr[i], pc[j]]]);
        let w = exact_w1_bruteforce(&c).unwrap();
        assert!((w - exact_w1_bruteforce(&permuted).unwrap()).abs() < 1e-15);
        let u = uniform_marginal(5);
        for rel in [0.5, 0.1, 0.01] {
            let r = sinkhorn(&c, &u, &u, absolute_epsilon(&c, rel), 10_000, 1e-9).unwrap();
            assert!(r.cost >= w - 1e-12);
        }
    }

    #[test]
    fn distance_bound_cases() {
        let (a, _) = random_distance_instance(32, 16, 3);
        let same = check_distance_bound(&a, &a, 0.2).unwrap();
        assert!(same.lhs.abs() < 1e-12 && same.holds);
        for seed in 0..20 {
            let (a, b) = random_distance_instance(32, 16, seed);
            assert!(check_distance_bound(&a, &b, 0.2).unwrap().holds);
        }
        let anti = check_distance_bound(&a, &(-&a), 0.2).unwrap();
        assert!((anti.lhs - 2.0).abs() < 1e-12);
        assert!(anti.slack.is_finite());
    }

    #[test]
    fn degenerate_alignment_has_zero_alignment_terms() {
        let mut s = SyntheticPreferenceSetup::random(5, 32, 8, 0.3, 4);
        s.z_text = s.z_id.clone();
        s.z_visual = s.z_id.clone();
        let r = check_error_bounds(&s).unwrap();
        let t = &r.consistency_max_w1.terms;
        assert!(t.w1_text.abs() < 1e-15 && t.w1_visual.abs() < 1e-15 && t.w1_id.abs() < 1e-15);
        // unified equals ID, so every error difference vanishes
        assert!(r.consistency_max_w1.lhs.abs() < 1e-12);
        for l in &r.error_gap {
            assert!(l.lhs.abs() < 1e-12 && l.terms.instance_distance < 1e-12 && l.holds);
        }
        assert!(r.holds_some_reading());
    }

    #[test]
    fn random_setups_satisfy_the_bounds() {
        for seed in 0..3 {
            let r = check_error_bounds(&SyntheticPreferenceSetup::random(6, 32, 16, 0.3, seed)).unwrap();
            assert!(r.holds_some_reading(), "{r:?}");
            assert!(r.error_gap_holds());
        }
    }

    #[test]
    fn constants_match_definitions() {
        let s = SyntheticPreferenceSetup::random(4, 8, 5, 0.2, 6);
        let k = s.users.rows().into_iter().map(|u| u.dot(&u).sqrt()).fold(0.0, f64::max);
        assert_eq!(s.k(), k);
        // A is a scaled orthogonal matrix, so |A^T u| = scale |u|
        let scale = s.a.column(0).dot(&s.a.column(0)).sqrt();
        assert!((s.l_star() - scale * k).abs() < 1e-12);
        for err in s.errors(&s.z_id).iter() {
            assert!(*err >= 0.0);
        }
    }

    #[test]
    fn slack_shrinks_as_alignment_improves() {
        // lower misalignment plays the role of later training checkpoints
        let levels = [1.0, 0.7, 0.5, 0.3, 0.15, 0.05];
        let slacks: Vec<f64> = levels
            .iter()
            .map(|&m| {
                let mut mean = 0.0;
                for seed in 0..5 {
                    let r = check_error_bounds(&SyntheticPreferenceSetup::random(6, 32, 16, m, 50 + seed)).unwrap();
                    mean += r.consistency_max_w1.slack / 5.0;
                }
                mean
            })
            .collect();
        let n = slacks.len() as f64;
        let xm = (n - 1.0) / 2.0;
        let ym = slacks.iter().sum::<f64>() / n;
        let slope: f64 = slacks.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
        assert!(slope <= 0.0, "slacks {slacks:?}");
        assert!(slacks.last().unwrap() < slacks.first().unwrap());
    }

    #[test]
    fn reports_serialize_every_term() {
        let r = check_error_bounds(&SyntheticPreferenceSetup::random(6, 32, 4, 0.3, 7)).unwrap();
        let js = serde_json::to_value(&r.consistency_per_modality).unwrap();
        for key in ["k", "l_star", "w1_text", "w1_visual", "w1_id", "l_cmcl", "tau", "batch"] {
            assert!(js["terms"].get(key).is_some(), "{key}");
        }
        assert!(js["holds"].is_boolean());
    }

    #[test]
    fn default_suite_passes() {
        let s = VerificationSuite::run(10, 5, 0).unwrap();
        assert!(s.passed());
        assert_eq!(s.reports().len(), 10 + 5 * 7);
    }
}
