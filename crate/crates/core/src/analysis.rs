//! Information-loss accounting and post-hoc convergence diagnostics.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::Point;
use crate::gp::{gram, mutual_information, KernelParams};
use crate::replanner::Snapshot;
use crate::safety::{certified, ConfidenceSchedule, TestGrid};

/// Largest exhaustive search for the optimal information gain.
pub const MAX_OPTIMUM_SET: usize = 5;
pub const MAX_OPTIMUM_CANDIDATES: usize = 10;

/// `(1/2) sum ln(1 + lambda_i / noise_var)` over the eigenvalues of the Gram
/// matrix. Points are sorted first, so equal sets give bit-identical results.
pub fn info_gain_eigen(params: &KernelParams, locations: &[Point]) -> Result<(f64, Vec<f64>)> {
    if let Some(p) = locations.iter().find(|p| !p.is_finite()) {
        return Err(Error::Domain {
            coord: p.0.to_vec(),
        });
    }
    if locations.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let mut sorted = locations.to_vec();
    sorted.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut spectrum: Vec<f64> = SymmetricEigen::new(gram(params, &sorted))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let gain = 0.5
        * spectrum
            .iter()
            .map(|l| (l / params.noise_var).ln_1p())
            .sum::<f64>();
    Ok((gain, spectrum))
}

/// Best information gain over all `t`-subsets of `candidates`.
pub fn optimal_info_gain(params: &KernelParams, candidates: &[Point], t: usize) -> Result<f64> {
    if t > MAX_OPTIMUM_SET || candidates.len() > MAX_OPTIMUM_CANDIDATES {
        return Err(Error::arg(format!(
            "exhaustive search limited to {MAX_OPTIMUM_SET} of {MAX_OPTIMUM_CANDIDATES} points"
        )));
    }
    if t > candidates.len() {
        return Err(Error::arg(format!(
            "cannot pick {t} of {} points",
            candidates.len()
        )));
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..t).collect();
    loop {
        let set: Vec<Point> = idx.iter().map(|&i| candidates[i]).collect();
        best = best.max(mutual_information(params, &set));
        // Next combination in lexicographic order.
        let n = candidates.len();
        let Some(i) = (0..t).rev().find(|&i| idx[i] < n - t + i) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..t {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoReport {
    pub gamma_g: f64,
    pub gamma_s: f64,
    pub delta_gamma: f64,
    pub eig_g: Vec<f64>,
    pub eig_s: Vec<f64>,
    /// `(gamma_s / gamma_g)(1 - 1/e)`.
    pub lower_bound_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma_o: Option<f64>,
}

/// Compares the greedy set against the executed set. `candidates` enables the
/// exhaustive optimum when the problem is small enough.
pub fn info_loss(
    params: &KernelParams,
    greedy: &[Point],
    executed: &[Point],
    candidates: Option<&[Point]>,
) -> Result<InfoReport> {
    if greedy.len() != executed.len() {
        return Err(Error::arg(format!(
            "greedy set has {} points, executed set has {}",
            greedy.len(),
            executed.len()
        )));
    }
    let (gamma_g, eig_g) = info_gain_eigen(params, greedy)?;
    let (gamma_s, eig_s) = info_gain_eigen(params, executed)?;
    let ratio = if gamma_g > 0.0 {
        gamma_s / gamma_g
    } else {
        1.0
    };
    let gamma_o = match candidates {
        Some(c) if greedy.len() <= MAX_OPTIMUM_SET && c.len() <= MAX_OPTIMUM_CANDIDATES => {
            Some(optimal_info_gain(params, c, greedy.len())?)
        }
        _ => None,
    };
    Ok(InfoReport {
        gamma_g,
        gamma_s,
        delta_gamma: gamma_g - gamma_s,
        eig_g,
        eig_s,
        lower_bound_ratio: ratio * (1.0 - (-1.0f64).exp()),
        gamma_o,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFailure {
    pub t: usize,
    /// Grid points whose error exceeded the confidence width.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eta: f64,
    /// Steps covered by the audit, one per snapshot.
    pub steps: Vec<usize>,
    pub event_held: bool,
    pub event_failures: Vec<EventFailure>,
    /// Certified points with oracle value above the threshold; only counted
    /// when the event held.
    pub soundness_checked: bool,
    pub soundness_violations: usize,
    /// Oracle value at most `f_bar - L_f h - eta`.
    pub interior: Vec<bool>,
    pub interior_count: usize,
    /// First audited step at which each grid point was certified.
    pub first_certified: Vec<Option<usize>>,
    /// Audited step from which each grid point stays certified through the
    /// last snapshot.
    pub certified_from: Vec<Option<usize>>,
    /// Points that lost certification after first gaining it.
    pub decertified: usize,
    /// Interior points among `decertified`.
    pub interior_decertified: usize,
    /// Latest `certified_from` over the interior; `None` when the interior
    /// is empty or some interior point is uncertified at the last snapshot.
    pub t_star: Option<usize>,
}

impl ConvergenceReport {
    pub fn interior_certified(&self) -> usize {
        self.interior
            .iter()
            .zip(&self.certified_from)
            .filter(|(i, c)| **i && c.is_some())
            .count()
    }
}

/// Replays the safety test on stored posteriors. Snapshot `s` holds the
/// posterior after `s.t` measurements and is audited as step `s.t + 1`.
pub fn convergence_audit(
    snapshots: &[Snapshot],
    field: &FieldSpec,
    f_bar: f64,
    schedule: &ConfidenceSchedule,
    grid: &TestGrid,
    eta: f64,
) -> Result<ConvergenceReport> {
    if snapshots.is_empty() {
        return Err(Error::arg("convergence audit needs posterior snapshots"));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::arg("eta must be a finite non-negative number"));
    }
    let m = grid.len();
    if let Some(s) = snapshots.iter().find(|s| s.posterior.len() != m) {
        return Err(Error::arg(format!(
            "snapshot at t = {} has {} entries, grid has {m}",
            s.t,
            s.posterior.len()
        )));
    }
    let truth: Vec<f64> = grid.points().iter().map(|p| field.value(p)).collect();
    let margin = schedule.lipschitz * grid.fill_distance();
    let interior: Vec<bool> = truth.iter().map(|f| *f <= f_bar - margin - eta).collect();

    let mut steps = Vec::with_capacity(snapshots.len());
    let mut event_failures = Vec::new();
    let mut violations = 0;
    let mut first: Vec<Option<usize>> = vec![None; m];
    let mut from: Vec<Option<usize>> = vec![None; m];
    let mut decertified = vec![false; m];
    for s in snapshots {
        let t = s.t + 1;
        steps.push(t);
        let b = schedule.beta(m, t);
        let width = b.sqrt();
        let post = &s.posterior;
        let misses = (0..m)
            .filter(|&i| (truth[i] - post.mean[i]).abs() > width * post.std(i))
            .count();
        if misses > 0 {
            event_failures.push(EventFailure { t, points: misses });
        }
        for i in 0..m {
            let ok = certified(post.mean[i], post.std(i), b, margin, f_bar);
            if ok {
                if truth[i] > f_bar {
                    violations += 1;
                }
                first[i].get_or_insert(t);
                from[i].get_or_insert(t);
            } else {
                from[i] = None;
                if first[i].is_some() {
                    decertified[i] = true;
                }
            }
        }
    }
    let event_held = event_failures.is_empty();
    let interior_decertified = decertified
        .iter()
        .zip(&interior)
        .filter(|(d, i)| **d && **i)
        .count();
    let interior_count = interior.iter().filter(|b| **b).count();
    let t_star = if interior_count == 0 {
        None
    } else {
        interior
            .iter()
            .zip(&from)
            .filter(|(i, _)| **i)
            .map(|(_, c)| *c)
            .collect::<Option<Vec<usize>>>()
            .and_then(|v| v.into_iter().max())
    };
    Ok(ConvergenceReport {
        eta,
        steps,
        event_held,
        event_failures,
        soundness_checked: event_held,
        soundness_violations: if event_held { violations } else { 0 },
        interior,
        interior_count,
        first_certified: first,
        certified_from: from,
        decertified: decertified.iter().filter(|b| **b).count(),
        interior_decertified,
        t_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsePoint {
    pub t: usize,
    pub rmse: f64,
}

/// Posterior-mean error against the oracle over grid points with `f <= f_bar`.
pub fn rmse_on_safe(
    snapshots: &[Snapshot],
    field: &FieldSpec,
    f_bar: f64,
    grid: &TestGrid,
) -> Result<Vec<RmsePoint>> {
    let truth: Vec<(usize, f64)> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, field.value(p)))
        .filter(|(_, f)| *f <= f_bar)
        .collect();
    if truth.is_empty() {
        return Err(Error::arg("no grid point lies in the safe set"));
    }
    snapshots
        .iter()
        .map(|s| {
            if s.posterior.len() != grid.len() {
                return Err(Error::arg(format!(
                    "snapshot at t = {} does not match the grid",
                    s.t
                )));
            }
            let sse: f64 = truth
                .iter()
                .map(|(i, f)| (s.posterior.mean[*i] - f).powi(2))
                .sum();
            Ok(RmsePoint {
                t: s.t,
                rmse: (sse / truth.len() as f64).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Bounds;
    use crate::gp::{GpModel, Posterior};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params() -> KernelParams {
        KernelParams::new(1.0, 0.15, 1e-4).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new2(r.random(), r.random()))
            .collect()
    }

    #[test]
    fn empty_and_single_point() {
        let p = params();
        let (g, s) = info_gain_eigen(&p, &[]).unwrap();
        assert_eq!(g, 0.0);
        assert!(s.is_empty());
        let p = KernelParams::new(1.3, 0.2, 0.01).unwrap();
        let (g, s) = info_gain_eigen(&p, &[Point::new2(0.3, 0.3)]).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0] - 1.69).abs() < 1e-12);
        assert!((g - 0.5 * (1.0 + 1.69 / 0.01f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn eigen_gain_matches_log_det() {
        let p = KernelParams::new(1.0, 0.3, 0.05).unwrap();
        for seed in 0..10 {
            let pts = random_points(30, seed);
            let (g, _) = info_gain_eigen(&p, &pts).unwrap();
            assert!((g - mutual_information(&p, &pts)).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_sets_lose_nothing() {
        let pts = random_points(12, 3);
        let r = info_loss(&params(), &pts, &pts, None).unwrap();
        assert_eq!(r.delta_gamma, 0.0);
        assert!(r.gamma_o.is_none());
    }

    #[test]
    fn duplicate_loses_information() {
        let p = KernelParams::new(1.0, 0.3, 0.05).unwrap();
        let g = random_points(6, 9);
        let mut s = g.clone();
        s[5] = s[0];
        let r = info_loss(&p, &g, &s, None).unwrap();
        assert!(r.delta_gamma > 0.0);
        assert!((r.delta_gamma - (r.gamma_g - r.gamma_s)).abs() < 1e-12);
    }

    #[test]
    fn cardinality_mismatch_rejected() {
        let pts = random_points(4, 1);
        assert!(matches!(
            info_loss(&params(), &pts, &pts[..3], None),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn optimum_reported_only_for_small_problems() {
        let p = KernelParams::new(1.0, 0.4, 0.1).unwrap();
        let cand = random_points(8, 2);
        let g = cand[..3].to_vec();
        let r = info_loss(&p, &g, &g, Some(&cand)).unwrap();
        let o = r.gamma_o.unwrap();
        assert!(o >= r.gamma_g - 1e-12);
        let big = random_points(11, 2);
        assert!(info_loss(&p, &g, &g, Some(&big)).unwrap().gamma_o.is_none());
        assert!(optimal_info_gain(&p, &big, 3).is_err());
    }

    #[test]
    fn optimum_of_full_set_is_the_set() {
        let p = params();
        let cand = random_points(5, 4);
        let o = optimal_info_gain(&p, &cand, 5).unwrap();
        assert!((o - mutual_information(&p, &cand)).abs() < 1e-12);
    }

    fn flat_field() -> FieldSpec {
        let mut f = FieldSpec::sim2d();
        for s in &mut f.sources {
            s.amplitude = 0.0;
        }
        f
    }

    fn schedule() -> ConfidenceSchedule {
        ConfidenceSchedule {
            delta: 0.05,
            pi_rule: crate::safety::PiRule::Basel,
            lipschitz: 0.0,
        }
    }

    #[test]
    fn audit_needs_snapshots() {
        let grid = TestGrid::uniform(Bounds::unit_square(), 5).unwrap();
        let r = convergence_audit(&[], &flat_field(), 0.7, &schedule(), &grid, 0.1);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn repeated_sampling_certifies_point() {
        // Single grid point observed over and over on a zero field.
        let grid = TestGrid::uniform(Bounds::unit_square(), 1).unwrap();
        let p = KernelParams::new(1.0, 0.15, 1e-4).unwrap();
        let mut gp = GpModel::tracking(p, grid.points().to_vec()).unwrap();
        let mut snaps = vec![Snapshot {
            t: 0,
            posterior: Posterior::prior(&p, 1),
        }];
        for t in 1..=20 {
            gp.add(grid.point(0), 0.0).unwrap();
            snaps.push(Snapshot {
                t,
                posterior: gp.tracked().unwrap().clone(),
            });
        }
        let sched = schedule();
        let rep = convergence_audit(&snaps, &flat_field(), 0.1, &sched, &grid, 0.1).unwrap();
        // Closed-form variance after m samples and the certification it implies.
        let expect = (1..=20)
            .find(|&m| {
                let var = p.noise_var / (m as f64 + p.noise_var);
                sched.beta(1, m + 1).sqrt() * var.sqrt() <= 0.1
            })
            .map(|m| m + 1);
        assert!(expect.is_some());
        assert_eq!(rep.first_certified[0], expect);
        assert_eq!(rep.t_star, expect);
        assert_eq!(rep.decertified, 0);
        assert!(rep.event_held);
        assert_eq!(rep.soundness_violations, 0);
    }

    #[test]
    fn empty_interior_has_no_t_star() {
        let grid = TestGrid::uniform(Bounds::unit_square(), 4).unwrap();
        let p = params();
        let snaps = vec![Snapshot {
            t: 0,
            posterior: Posterior::prior(&p, grid.len()),
        }];
        let rep = convergence_audit(&snaps, &flat_field(), 0.05, &schedule(), &grid, 1.0).unwrap();
        assert_eq!(rep.interior_count, 0);
        assert_eq!(rep.t_star, None);
    }

    #[test]
    fn rmse_of_prior_is_field_norm() {
        let grid = TestGrid::uniform(Bounds::unit_square(), 10).unwrap();
        let f = FieldSpec::sim2d();
        let snaps = vec![Snapshot {
            t: 0,
            posterior: Posterior::prior(&params(), grid.len()),
        }];
        let r = rmse_on_safe(&snaps, &f, 0.7, &grid).unwrap();
        let vals: Vec<f64> = grid
            .points()
            .iter()
            .map(|p| f.value(p))
            .filter(|v| *v <= 0.7)
            .collect();
        let want = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((r[0].rmse - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn delta_is_difference_and_spectra_nonnegative(seed in 0u64..1000, n in 1usize..15) {
            let p = KernelParams::new(1.0, 0.25, 0.01).unwrap();
            let g = random_points(n, seed);
            let s = random_points(n, seed + 7);
            let r = info_loss(&p, &g, &s, None).unwrap();
            prop_assert!((r.delta_gamma - (r.gamma_g - r.gamma_s)).abs() < 1e-9);
            prop_assert!(r.eig_g.iter().chain(&r.eig_s).all(|l| *l >= -1e-9));
        }
    }
}
