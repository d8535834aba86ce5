#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pmbm_core::scalar::log_sum_exp;
use pmbm_core::{PmbmState, StateEstimate};

pub fn min_eigenvalue(m: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

pub fn random_pd4(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let a = Matrix4::from_fn(|_, _| rng.random_range(-3.0..3.0));
    a * a.transpose() + Matrix4::identity() * 0.05
}

pub fn random_pd2(rng: &mut ChaCha8Rng) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Matrix2::identity() * 0.01
}

pub fn random_state(rng: &mut ChaCha8Rng) -> StateEstimate<f64> {
    let mean = Vector4::from_fn(|_, _| rng.random_range(-50.0..50.0));
    StateEstimate::new(mean, random_pd4(rng))
}

/// Structural validity of a filter state; `normalized` additionally requires
/// the global weights to log-sum-exp to zero.
pub fn check_state(s: &PmbmState<f64>, normalized: bool) -> Result<(), String> {
    let mut ids = BTreeSet::new();
    for t in &s.tracks {
        if !ids.insert(t.track_id) {
            return Err(format!("duplicate track id {}", t.track_id));
        }
        for h in &t.hypotheses {
            if !(0.0..=1.0).contains(&h.existence) {
                return Err(format!("track {} existence {}", t.track_id, h.existence));
            }
            if h.score_history.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("track {} score history out of range", t.track_id));
            }
            if h.state.asymmetry() > 1e-9 {
                return Err(format!("track {} covariance not symmetric", t.track_id));
            }
        }
    }
    if s.tracks.windows(2).any(|w| w[0].track_id >= w[1].track_id) {
        return Err("tracks not sorted by id".into());
    }
    for c in &s.ppp {
        if !c.log_weight.is_finite() {
            return Err("non-finite PPP weight".into());
        }
    }
    for (gi, g) in s.globals.iter().enumerate() {
        if !g.log_weight.is_finite() {
            return Err(format!("global {gi} weight {}", g.log_weight));
        }
        let mut used = BTreeSet::new();
        for (&tid, &idx) in &g.selection {
            let tree = s
                .track(tid)
                .ok_or(format!("global {gi} selects missing track {tid}"))?;
            let h = tree.hypotheses.get(idx).ok_or(format!(
                "global {gi} selects missing hypothesis {tid}/{idx}"
            ))?;
            if let Some(j) = h.associated_measurement {
                if !used.insert(j) {
                    return Err(format!("global {gi} uses measurement {j} twice"));
                }
            }
        }
    }
    if normalized && !s.globals.is_empty() {
        let total = log_sum_exp(s.globals.iter().map(|g| g.log_weight));
        if total.abs() > 1e-6 {
            return Err(format!("global weights sum to exp({total})"));
        }
    }
    Ok(())
}

/// Random matrix up to 5×7 with a random +∞ mask. Half of the draws use
/// small integers so that ties are common.
pub fn random_cost_matrix(rng: &mut ChaCha8Rng) -> pmbm_core::CostMatrix<f64> {
    let rows = rng.random_range(1..=5);
    let cols = rng.random_range(rows..=7);
    let integer = rng.random_bool(0.5);
    let mask_p = rng.random_range(0.0..0.5);
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(mask_p) {
                f64::INFINITY
            } else if integer {
                rng.random_range(0..10) as f64
            } else {
                rng.random_range(-100.0..100.0)
            }
        })
        .collect();
    pmbm_core::CostMatrix::new(rows, cols, data).unwrap()
}

/// `Ok(())` when Murty and brute force return identical cost sequences (or
/// both report infeasibility).
pub fn murty_matches_oracle(cost: &pmbm_core::CostMatrix<f64>, k: usize) -> Result<(), String> {
    let fast = pmbm_core::murty_kbest(cost, k);
    let slow = pmbm_core::brute_force_kbest(cost, k);
    match (fast, slow) {
        (Err(_), Err(_)) => Ok(()),
        (Ok(a), Ok(b)) => {
            let ca: Vec<f64> = a.iter().map(|s| s.total_cost).collect();
            let cb: Vec<f64> = b.iter().map(|s| s.total_cost).collect();
            if ca != cb {
                return Err(format!("costs differ: {ca:?} vs {cb:?}"));
            }
            // among equal costs the selected assignments may differ; each
            // must still be a valid solution at that cost
            for s in &a {
                if cost.cost_of(&s.row_to_col) != s.total_cost {
                    return Err(format!("inconsistent cost for {:?}", s.row_to_col));
                }
            }
            Ok(())
        }
        (a, b) => Err(format!(
            "feasibility differs: {:?} vs {:?}",
            a.is_ok(),
            b.is_ok()
        )),
    }
}
