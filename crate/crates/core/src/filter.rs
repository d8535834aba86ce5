//! Poisson multi-Bernoulli mixture recursion.
//!
//! Undetected objects live in a Poisson intensity (`ppp`), detected objects in
//! a mixture over track trees (`tracks` + `globals`). Each global hypothesis
//! selects at most one single-target hypothesis per tree; a tree missing from
//! a selection does not exist under that hypothesis.
//!
//! All hypothesis weights are carried in log space.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{murty_kbest, CostMatrix};
use crate::error::{invalid, Result};
use crate::scalar::{log_add, log_sum_exp, Scalar};
use crate::state::{
    cv_predict, symmetrize, Innovation, Measurement, MeasurementParams, MotionParams, StateEstimate,
};

pub type TrackId = u64;

/// One weighted Gaussian of the undetected-object intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonComponent<T: Scalar> {
    pub log_weight: T,
    pub state: StateEstimate<T>,
}

/// A Bernoulli component together with its association bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTargetHypothesis<T: Scalar> {
    pub existence: T,
    pub state: StateEstimate<T>,
    /// Log-weight this hypothesis contributed in the update that created it.
    pub log_likelihood: T,
    /// Measurement index (within the frame that created it), if any.
    pub associated_measurement: Option<usize>,
    /// Most recent detection confidences, oldest first.
    pub score_history: VecDeque<T>,
    pub consecutive_misses: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackTree<T: Scalar> {
    pub track_id: TrackId,
    pub hypotheses: Vec<SingleTargetHypothesis<T>>,
    pub birth_frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHypothesis<T: Scalar> {
    pub log_weight: T,
    /// Track id → index into that tree's `hypotheses`.
    pub selection: BTreeMap<TrackId, usize>,
}

impl<T: Scalar> GlobalHypothesis<T> {
    fn empty() -> Self {
        Self {
            log_weight: T::zero(),
            selection: BTreeMap::new(),
        }
    }
}

/// Full filter state. `tracks` is kept sorted by `track_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmbmState<T: Scalar> {
    pub ppp: Vec<PoissonComponent<T>>,
    pub tracks: Vec<TrackTree<T>>,
    pub globals: Vec<GlobalHypothesis<T>>,
    pub frame: u64,
    next_track_id: TrackId,
}

impl<T: Scalar> Default for PmbmState<T> {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl<T: Scalar> PmbmState<T> {
    /// A state with no detected objects and the given initial intensity.
    pub fn new(ppp: Vec<PoissonComponent<T>>) -> Self {
        Self {
            ppp,
            tracks: Vec::new(),
            globals: Vec::new(),
            frame: 0,
            next_track_id: 0,
        }
    }

    pub fn track(&self, id: TrackId) -> Option<&TrackTree<T>> {
        self.tracks
            .binary_search_by_key(&id, |t| t.track_id)
            .ok()
            .map(|i| &self.tracks[i])
    }

    /// Expected number of undetected objects.
    pub fn undetected_mass(&self) -> T {
        log_sum_exp(self.ppp.iter().map(|c| c.log_weight)).exp()
    }

    /// Index of the highest-weight global hypothesis (first on ties).
    pub fn best_global(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, g) in self.globals.iter().enumerate() {
            if best.is_none_or(|b| g.log_weight > self.globals[b].log_weight) {
                best = Some(i);
            }
        }
        best
    }
}

/// Axis-aligned rectangle in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect<T: Scalar> {
    pub min_x: T,
    pub min_y: T,
    pub max_x: T,
    pub max_y: T,
}

impl<T: Scalar> Rect<T> {
    pub fn width(&self) -> T {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> T {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.width() > T::zero() && self.height() > T::zero() && self.area().is_finite()
    }
}

/// Uniform grid of stationary birth components covering `area`.
///
/// Cell centres sit `spacing` apart; each component has position standard
/// deviation `spacing` so neighbouring cells overlap and the whole area lies
/// well inside the gate of some component. `total_weight` is the expected
/// number of objects the grid represents.
pub fn birth_grid<T: Scalar>(
    area: &Rect<T>,
    spacing: T,
    total_weight: T,
    velocity_std: T,
) -> Result<Vec<PoissonComponent<T>>> {
    if !area.is_valid() {
        return Err(invalid("birth area must be non-degenerate"));
    }
    if !(spacing > T::zero()) || !(total_weight > T::zero()) || !(velocity_std > T::zero()) {
        return Err(invalid(
            "birth spacing, weight and velocity std must be positive",
        ));
    }
    let nx = (area.width() / spacing)
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let ny = (area.height() / spacing)
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let dx = area.width() / T::lit(nx as f64);
    let dy = area.height() / T::lit(ny as f64);
    let log_w = (total_weight / T::lit((nx * ny) as f64)).ln();
    let half = T::lit(0.5);
    let pos_var = spacing * spacing;
    let vel_var = velocity_std * velocity_std;
    let cov = Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, vel_var, vel_var));
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = area.min_x + dx * (T::lit(ix as f64) + half);
            let y = area.min_y + dy * (T::lit(iy as f64) + half);
            out.push(PoissonComponent {
                log_weight: log_w,
                state: StateEstimate::new(Vector4::new(x, y, T::zero(), T::zero()), cov),
            });
        }
    }
    Ok(out)
}

/// Filter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams<T: Scalar> {
    pub motion: MotionParams<T>,
    pub meas: MeasurementParams<T>,
    /// Intensity appended to the PPP at every prediction.
    pub birth: Vec<PoissonComponent<T>>,
    pub k_best: usize,
    /// Minimum marginal log-mass a selected hypothesis needs to survive.
    pub prune_sth_logw: T,
    pub prune_global_logw: T,
    pub prune_ppp_logw: T,
    pub cap_globals: usize,
    pub cap_tracks: usize,
    pub recycle_r_threshold: T,
    pub extract_r_threshold: T,
    pub pd_floor: T,
    pub pd_ceiling: T,
    /// Number of recent scores averaged into a track's detection probability.
    pub score_window: usize,
    /// Trees whose hypotheses all exceed this miss streak (and sit below the
    /// recycle threshold) are terminated.
    pub max_misses: u32,
}

impl<T: Scalar> Default for FilterParams<T> {
    fn default() -> Self {
        let r = T::lit(0.3 * 0.3);
        Self {
            motion: MotionParams {
                process_noise: T::lit(2.0),
                survival_prob: T::lit(0.99),
            },
            meas: MeasurementParams {
                noise: nalgebra::Matrix2::new(r, T::zero(), T::zero(), r),
                detection_prob: T::lit(0.9),
                clutter_intensity: T::lit(1e-4),
                gate_threshold: T::lit(MeasurementParams::<T>::DEFAULT_GATE),
            },
            birth: Vec::new(),
            k_best: 10,
            prune_sth_logw: T::lit(1e-6f64.ln()),
            prune_global_logw: T::lit(1e-4f64.ln()),
            prune_ppp_logw: T::lit(1e-5f64.ln()),
            cap_globals: 100,
            cap_tracks: 500,
            recycle_r_threshold: T::lit(0.1),
            extract_r_threshold: T::lit(0.5),
            pd_floor: T::lit(0.1),
            pd_ceiling: T::lit(0.97),
            score_window: 5,
            max_misses: 8,
        }
    }
}

impl<T: Scalar> FilterParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.meas.validate()?;
        let unit = T::zero()..=T::one();
        if self.k_best == 0 || self.cap_globals == 0 || self.cap_tracks == 0 {
            return Err(invalid(
                "k_best, cap_globals and cap_tracks must be positive",
            ));
        }
        if self.score_window == 0 {
            return Err(invalid("score_window must be positive"));
        }
        for (name, v) in [
            ("recycle_r_threshold", self.recycle_r_threshold),
            ("extract_r_threshold", self.extract_r_threshold),
            ("pd_floor", self.pd_floor),
            ("pd_ceiling", self.pd_ceiling),
        ] {
            if !unit.contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.pd_floor > self.pd_ceiling {
            return Err(invalid("pd_floor must not exceed pd_ceiling"));
        }
        for (name, v) in [
            ("prune_sth_logw", self.prune_sth_logw),
            ("prune_global_logw", self.prune_global_logw),
            ("prune_ppp_logw", self.prune_ppp_logw),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// `ln(x)` with `ln(0)` clamped to the smallest representable log.
#[inline]
fn safe_ln<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x.ln()
    } else {
        T::log_floor()
    }
}

/// Existence and log-weight of a Bernoulli that went undetected:
/// `r' = r(1-P_d)/(1-r·P_d)`, weight `1 - r·P_d`.
pub fn misdetection<T: Scalar>(existence: T, detection_prob: T) -> (T, T) {
    let miss = T::one() - existence * detection_prob;
    let r = if miss > T::zero() {
        (existence * (T::one() - detection_prob) / miss)
            .min(T::one())
            .max(T::zero())
    } else {
        T::zero()
    };
    (r, safe_ln(miss))
}

/// Existence of a first-detection Bernoulli from the clutter intensity, the
/// detection confidence `score` and the log of the detected PPP mass `ρ(z)`.
pub fn first_detection_existence<T: Scalar>(clutter_intensity: T, score: T, log_rho: T) -> T {
    if !(score > T::zero()) || log_rho == T::neg_infinity() {
        return T::zero();
    }
    let log_num = score.ln() + log_rho;
    let log_den = log_add(safe_ln(clutter_intensity), log_num);
    (log_num - log_den).exp().min(T::one())
}

/// Per-track detection probability from its recent confidence scores.
pub fn effective_detection_prob<T: Scalar>(
    sth: &SingleTargetHypothesis<T>,
    params: &FilterParams<T>,
) -> T {
    if sth.score_history.is_empty() {
        return params.meas.detection_prob;
    }
    let n = T::lit(sth.score_history.len() as f64);
    let mean = sth.score_history.iter().copied().sum::<T>() / n;
    mean.max(params.pd_floor).min(params.pd_ceiling)
}

/// Advances every component and hypothesis by `dt` and appends births.
pub fn pmbm_predict<T: Scalar>(
    mut state: PmbmState<T>,
    dt: T,
    params: &FilterParams<T>,
) -> Result<PmbmState<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let log_ps = safe_ln(params.motion.survival_prob);
    for c in &mut state.ppp {
        c.state = cv_predict(&c.state, dt, &params.motion)?;
        c.log_weight = (c.log_weight + log_ps).max(T::log_floor());
    }
    state.ppp.extend(params.birth.iter().cloned());
    for tree in &mut state.tracks {
        for h in &mut tree.hypotheses {
            h.state = cv_predict(&h.state, dt, &params.motion)?;
            h.existence *= params.motion.survival_prob;
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Update
// ---------------------------------------------------------------------------

/// Children of one prior hypothesis inside the updated tree.
#[derive(Debug, Clone)]
struct ChildIndex<T: Scalar> {
    miss: usize,
    miss_logw: T,
    /// (measurement, child index, log-weight)
    assoc: Vec<(usize, usize, T)>,
}

#[derive(Debug, Clone)]
struct UpdatedTree<T: Scalar> {
    hypotheses: Vec<SingleTargetHypothesis<T>>,
    children: Vec<ChildIndex<T>>,
}

/// Everything the per-global association step needs, computed once per frame.
#[derive(Debug)]
struct Prepared<T: Scalar> {
    birth_log_weight: Vec<T>,
    new_trees: Vec<Option<TrackTree<T>>>,
    updated: Vec<UpdatedTree<T>>,
    ppp: Vec<PoissonComponent<T>>,
}

fn validate_inputs<T: Scalar>(measurements: &[Measurement<T>], scores: &[T]) -> Result<()> {
    if measurements.len() != scores.len() {
        return Err(invalid(format!(
            "{} measurements but {} scores",
            measurements.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores
        .iter()
        .position(|s| !(T::zero()..=T::one()).contains(s))
    {
        return Err(invalid(format!("score {i} outside [0, 1]")));
    }
    if let Some(i) = measurements
        .iter()
        .position(|m| !(m.z[0].is_finite() && m.z[1].is_finite()))
    {
        return Err(invalid(format!("measurement {i} is not finite")));
    }
    Ok(())
}

fn push_score<T: Scalar>(history: &mut VecDeque<T>, score: T, window: usize) {
    history.push_back(score);
    while history.len() > window {
        history.pop_front();
    }
}

fn prepare<T: Scalar>(
    state: &PmbmState<T>,
    measurements: &[Measurement<T>],
    scores: &[T],
    params: &FilterParams<T>,
) -> Result<(Prepared<T>, TrackId)> {
    let meas = &params.meas;
    let log_pd = safe_ln(meas.detection_prob);
    let log_clutter = safe_ln(meas.clutter_intensity);

    // Undetected objects: detected mass per measurement and first-detection Bernoullis.
    let innovations = state
        .ppp
        .iter()
        .map(|c| Innovation::new(&c.state, meas))
        .collect::<Result<Vec<_>>>()?;
    let mut next_id = state.next_track_id;
    let mut birth_log_weight = Vec::with_capacity(measurements.len());
    let mut new_trees = Vec::with_capacity(measurements.len());
    for (j, (z, &score)) in measurements.iter().zip(scores).enumerate() {
        let mut contrib: Vec<(usize, T)> = Vec::new();
        for (c, (comp, inn)) in state.ppp.iter().zip(&innovations).enumerate() {
            if inn.mahalanobis_sq(z) <= meas.gate_threshold {
                contrib.push((c, comp.log_weight + log_pd + inn.log_likelihood(z)));
            }
        }
        let log_rho = log_sum_exp(contrib.iter().map(|&(_, w)| w));
        let log_detected = if score > T::zero() {
            score.ln() + log_rho
        } else {
            T::neg_infinity()
        };
        birth_log_weight.push(log_add(log_clutter, log_detected).max(T::log_floor()));

        let existence = first_detection_existence(meas.clutter_intensity, score, log_rho);
        if existence > T::zero() && !contrib.is_empty() {
            // Moment-matched fusion of the Kalman-updated components.
            let mut mean = Vector4::zeros();
            let mut parts = Vec::with_capacity(contrib.len());
            for &(c, w) in &contrib {
                let alpha = (w - log_rho).exp();
                let post = innovations[c].update(&state.ppp[c].state, z, meas);
                mean += post.mean * alpha;
                parts.push((alpha, post));
            }
            let mut cov = Matrix4::zeros();
            for (alpha, post) in &parts {
                let d = post.mean - mean;
                cov += (post.covariance + d * d.transpose()) * *alpha;
            }
            let mut history = VecDeque::with_capacity(params.score_window);
            push_score(&mut history, score, params.score_window);
            new_trees.push(Some(TrackTree {
                track_id: next_id,
                birth_frame: state.frame,
                hypotheses: vec![SingleTargetHypothesis {
                    existence,
                    state: StateEstimate::new(mean, symmetrize(&cov)),
                    log_likelihood: birth_log_weight[j],
                    associated_measurement: Some(j),
                    score_history: history,
                    consecutive_misses: 0,
                }],
            }));
            next_id += 1;
        } else {
            new_trees.push(None);
        }
    }

    let log_miss_ppp = safe_ln(T::one() - meas.detection_prob);
    let ppp = state
        .ppp
        .iter()
        .map(|c| PoissonComponent {
            log_weight: (c.log_weight + log_miss_ppp).max(T::log_floor()),
            state: c.state.clone(),
        })
        .collect();

    // Detected objects: misdetection and association children for every hypothesis.
    let mut updated = Vec::with_capacity(state.tracks.len());
    for tree in &state.tracks {
        let mut hypotheses = Vec::new();
        let mut children = Vec::with_capacity(tree.hypotheses.len());
        for h in &tree.hypotheses {
            let pd = effective_detection_prob(h, params);
            let (r_miss, miss_logw) = misdetection(h.existence, pd);
            let miss = hypotheses.len();
            hypotheses.push(SingleTargetHypothesis {
                existence: r_miss,
                state: h.state.clone(),
                log_likelihood: miss_logw,
                associated_measurement: None,
                score_history: h.score_history.clone(),
                consecutive_misses: h.consecutive_misses.saturating_add(1),
            });
            let mut assoc = Vec::new();
            if h.existence > T::zero() && pd > T::zero() && !measurements.is_empty() {
                let inn = Innovation::new(&h.state, meas)?;
                let log_rpd = h.existence.ln() + pd.ln();
                for (j, z) in measurements.iter().enumerate() {
                    if inn.mahalanobis_sq(z) > meas.gate_threshold {
                        continue;
                    }
                    let logw = log_rpd + inn.log_likelihood(z);
                    let mut history = h.score_history.clone();
                    push_score(&mut history, scores[j], params.score_window);
                    assoc.push((j, hypotheses.len(), logw));
                    hypotheses.push(SingleTargetHypothesis {
                        existence: T::one(),
                        state: inn.update(&h.state, z, meas),
                        log_likelihood: logw,
                        associated_measurement: Some(j),
                        score_history: history,
                        consecutive_misses: 0,
                    });
                }
            }
            children.push(ChildIndex {
                miss,
                miss_logw,
                assoc,
            });
        }
        updated.push(UpdatedTree {
            hypotheses,
            children,
        });
    }

    Ok((
        Prepared {
            birth_log_weight,
            new_trees,
            updated,
            ppp,
        },
        next_id,
    ))
}

/// Association problem of one parent global hypothesis.
struct Problem<T: Scalar> {
    cost: CostMatrix<T>,
    /// (tree position, prior hypothesis index) per track column.
    columns: Vec<(usize, usize)>,
    /// Parent weight times every selected track's misdetection weight.
    base_log_weight: T,
}

fn build_problem<T: Scalar>(
    state: &PmbmState<T>,
    prepared: &Prepared<T>,
    global: &GlobalHypothesis<T>,
    n_meas: usize,
    compact: bool,
) -> Problem<T> {
    let mut base = global.log_weight;
    let mut columns = Vec::new();
    for (&tid, &idx) in &global.selection {
        let pos = state
            .tracks
            .binary_search_by_key(&tid, |t| t.track_id)
            .expect("selection references a live track");
        let child = &prepared.updated[pos].children[idx];
        base += child.miss_logw;
        if !compact || !child.assoc.is_empty() {
            columns.push((pos, idx));
        }
    }
    let n_cols = columns.len() + n_meas;
    let mut cost = CostMatrix::forbidden(n_meas, n_cols);
    for (col, &(pos, idx)) in columns.iter().enumerate() {
        let child = &prepared.updated[pos].children[idx];
        for &(j, _, logw) in &child.assoc {
            // relative to the misdetection already counted in `base`
            cost.set(j, col, -(logw - child.miss_logw));
        }
    }
    for j in 0..n_meas {
        cost.set(j, columns.len() + j, -prepared.birth_log_weight[j]);
    }
    Problem {
        cost,
        columns,
        base_log_weight: base,
    }
}

/// Cost matrix of one global hypothesis: one row per measurement, one column
/// per selected track hypothesis followed by one birth/clutter column per
/// measurement. Entries are negative log-likelihood ratios against the
/// track's misdetection; ungated pairs are `+∞`.
pub fn build_cost_matrix<T: Scalar>(
    state: &PmbmState<T>,
    global: &GlobalHypothesis<T>,
    measurements: &[Measurement<T>],
    scores: &[T],
    params: &FilterParams<T>,
) -> Result<CostMatrix<T>> {
    validate_inputs(measurements, scores)?;
    let (prepared, _) = prepare(state, measurements, scores, params)?;
    Ok(build_problem(state, &prepared, global, measurements.len(), false).cost)
}

/// Measurement update of the full PMBM density.
pub fn pmbm_update<T: Scalar>(
    state: PmbmState<T>,
    measurements: &[Measurement<T>],
    scores: &[T],
    params: &FilterParams<T>,
) -> Result<PmbmState<T>> {
    validate_inputs(measurements, scores)?;
    let (prepared, next_track_id) = prepare(&state, measurements, scores, params)?;
    let n_meas = measurements.len();

    let parents: Vec<GlobalHypothesis<T>> = if state.globals.is_empty() {
        vec![GlobalHypothesis::empty()]
    } else {
        state.globals.clone()
    };

    // Parents are independent; collecting preserves (parent, rank) order.
    let children: Vec<Vec<GlobalHypothesis<T>>> = parents
        .par_iter()
        .map(|g| -> Result<Vec<GlobalHypothesis<T>>> {
            let problem = build_problem(&state, &prepared, g, n_meas, true);
            let solutions = murty_kbest(&problem.cost, params.k_best)?;
            let mut out = Vec::with_capacity(solutions.len());
            for sol in solutions {
                let mut assigned_row = vec![None; problem.columns.len()];
                let mut selection = BTreeMap::new();
                for (j, &col) in sol.row_to_col.iter().enumerate() {
                    if col < problem.columns.len() {
                        assigned_row[col] = Some(j);
                    } else if let Some(tree) = &prepared.new_trees[j] {
                        selection.insert(tree.track_id, 0);
                    }
                }
                let mut column_of = HashMap::with_capacity(problem.columns.len());
                for (col, &(pos, _)) in problem.columns.iter().enumerate() {
                    column_of.insert(pos, col);
                }
                for (&tid, &idx) in &g.selection {
                    let pos = state
                        .tracks
                        .binary_search_by_key(&tid, |t| t.track_id)
                        .expect("live track");
                    let child = &prepared.updated[pos].children[idx];
                    let row = column_of.get(&pos).and_then(|&c| assigned_row[c]);
                    let new_idx = match row {
                        Some(j) => {
                            child
                                .assoc
                                .iter()
                                .find(|a| a.0 == j)
                                .expect("finite cost implies gated child")
                                .1
                        }
                        None => child.miss,
                    };
                    selection.insert(tid, new_idx);
                }
                out.push(GlobalHypothesis {
                    log_weight: problem.base_log_weight - sol.total_cost,
                    selection,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut globals: Vec<GlobalHypothesis<T>> = children.into_iter().flatten().collect();
    normalize(&mut globals);

    let Prepared {
        new_trees,
        updated,
        ppp,
        ..
    } = prepared;
    let mut tracks: Vec<TrackTree<T>> = state
        .tracks
        .iter()
        .zip(updated)
        .map(|(t, u)| TrackTree {
            track_id: t.track_id,
            hypotheses: u.hypotheses,
            birth_frame: t.birth_frame,
        })
        .collect();
    tracks.extend(new_trees.into_iter().flatten());

    Ok(PmbmState {
        ppp,
        tracks,
        globals,
        frame: state.frame + 1,
        next_track_id,
    })
}

// ---------------------------------------------------------------------------
// Reduction
// ---------------------------------------------------------------------------

fn normalize<T: Scalar>(globals: &mut [GlobalHypothesis<T>]) {
    let total = log_sum_exp(globals.iter().map(|g| g.log_weight));
    if total.is_finite() {
        for g in globals.iter_mut() {
            g.log_weight -= total;
        }
    }
}

fn sort_globals<T: Scalar>(globals: &mut [GlobalHypothesis<T>]) {
    globals.sort_by(|a, b| {
        b.log_weight
            .partial_cmp(&a.log_weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.selection.cmp(&b.selection))
    });
}

/// Marginal log-mass of every selected `(track, hypothesis)` pair.
fn marginals<T: Scalar>(globals: &[GlobalHypothesis<T>]) -> BTreeMap<(TrackId, usize), T> {
    let mut mass: BTreeMap<(TrackId, usize), T> = BTreeMap::new();
    for g in globals {
        for (&tid, &idx) in &g.selection {
            let e = mass.entry((tid, idx)).or_insert(T::neg_infinity());
            *e = log_add(*e, g.log_weight);
        }
    }
    mass
}

fn merge_identical<T: Scalar>(globals: Vec<GlobalHypothesis<T>>) -> Vec<GlobalHypothesis<T>> {
    let mut index: HashMap<Vec<(TrackId, usize)>, usize> = HashMap::new();
    let mut out: Vec<GlobalHypothesis<T>> = Vec::with_capacity(globals.len());
    for g in globals {
        let key: Vec<(TrackId, usize)> = g.selection.iter().map(|(&k, &v)| (k, v)).collect();
        match index.get(&key) {
            Some(&i) => out[i].log_weight = log_add(out[i].log_weight, g.log_weight),
            None => {
                index.insert(key, out.len());
                out.push(g);
            }
        }
    }
    out
}

fn remove_tracks<T: Scalar>(globals: &mut [GlobalHypothesis<T>], doomed: &[TrackId]) {
    if doomed.is_empty() {
        return;
    }
    for g in globals.iter_mut() {
        for tid in doomed {
            g.selection.remove(tid);
        }
    }
}

/// Pruning, capping, recycling, merging and bookkeeping cleanup.
pub fn pmbm_reduce<T: Scalar>(mut state: PmbmState<T>, params: &FilterParams<T>) -> PmbmState<T> {
    let mut globals = std::mem::take(&mut state.globals);
    if !globals.is_empty() {
        normalize(&mut globals);
        sort_globals(&mut globals);

        // prune + cap globals; the best one always survives
        let keep = globals
            .iter()
            .skip(1)
            .take_while(|g| g.log_weight >= params.prune_global_logw)
            .count()
            + 1;
        globals.truncate(keep.min(params.cap_globals));
        normalize(&mut globals);

        // prune hypotheses with negligible marginal mass, with their globals
        let mass = marginals(&globals);
        let weak: Vec<(TrackId, usize)> = mass
            .iter()
            .filter(|(_, &m)| m < params.prune_sth_logw)
            .map(|(&k, _)| k)
            .collect();
        if !weak.is_empty() {
            let best = globals[0].clone();
            globals.retain(|g| !weak.iter().any(|(t, i)| g.selection.get(t) == Some(i)));
            if globals.is_empty() {
                globals.push(best);
            }
            normalize(&mut globals);
        }

        // hard termination of long-missed, unlikely trees
        let terminated: Vec<TrackId> = state
            .tracks
            .iter()
            .filter(|t| {
                t.hypotheses.iter().all(|h| {
                    h.consecutive_misses > params.max_misses
                        && h.existence < params.recycle_r_threshold
                })
            })
            .map(|t| t.track_id)
            .collect();
        remove_tracks(&mut globals, &terminated);

        // cap the number of trees by expected existence
        if state.tracks.len() > params.cap_tracks {
            let mut score: BTreeMap<TrackId, T> = BTreeMap::new();
            for g in &globals {
                let w = g.log_weight.exp();
                for (&tid, &idx) in &g.selection {
                    let r = state.track(tid).expect("live track").hypotheses[idx].existence;
                    *score.entry(tid).or_insert(T::zero()) += w * r;
                }
            }
            let mut ranked: Vec<(TrackId, T)> = state
                .tracks
                .iter()
                .map(|t| {
                    (
                        t.track_id,
                        score.get(&t.track_id).copied().unwrap_or(T::zero()),
                    )
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            let doomed: Vec<TrackId> = ranked[params.cap_tracks..].iter().map(|x| x.0).collect();
            remove_tracks(&mut globals, &doomed);
        }

        // recycle low-existence Bernoullis into the Poisson intensity
        let mass = marginals(&globals);
        let mut recycled: Vec<(TrackId, usize)> = Vec::new();
        for (&(tid, idx), &m) in &mass {
            let h = &state.track(tid).expect("live track").hypotheses[idx];
            if h.existence < params.recycle_r_threshold {
                if h.existence > T::zero() {
                    state.ppp.push(PoissonComponent {
                        log_weight: h.existence.ln() + m,
                        state: h.state.clone(),
                    });
                }
                recycled.push((tid, idx));
            }
        }
        for g in globals.iter_mut() {
            for (tid, idx) in &recycled {
                if g.selection.get(tid) == Some(idx) {
                    g.selection.remove(tid);
                }
            }
        }

        globals = merge_identical(globals);
        normalize(&mut globals);
        sort_globals(&mut globals);
    }

    // drop unreferenced hypotheses, then empty trees
    let mut referenced: BTreeMap<TrackId, Vec<bool>> = BTreeMap::new();
    for g in &globals {
        for (&tid, &idx) in &g.selection {
            let n = state.track(tid).map_or(0, |t| t.hypotheses.len());
            referenced.entry(tid).or_insert_with(|| vec![false; n])[idx] = true;
        }
    }
    let mut remap: BTreeMap<TrackId, Vec<usize>> = BTreeMap::new();
    let tracks = std::mem::take(&mut state.tracks);
    for mut tree in tracks {
        let Some(used) = referenced.get(&tree.track_id) else {
            continue;
        };
        let mut map = vec![usize::MAX; tree.hypotheses.len()];
        let mut kept = Vec::new();
        for (i, h) in tree.hypotheses.into_iter().enumerate() {
            if used[i] {
                map[i] = kept.len();
                kept.push(h);
            }
        }
        tree.hypotheses = kept;
        remap.insert(tree.track_id, map);
        state.tracks.push(tree);
    }
    for g in globals.iter_mut() {
        for (tid, idx) in g.selection.iter_mut() {
            *idx = remap[tid][*idx];
        }
    }
    state.globals = globals;

    state
        .ppp
        .retain(|c| c.log_weight >= params.prune_ppp_logw && c.log_weight.is_finite());
    state
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

/// One reported object.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate<T: Scalar> {
    pub track_id: TrackId,
    pub state: StateEstimate<T>,
    pub existence: T,
    /// Index of the measurement this hypothesis absorbed in the latest
    /// update, if any.
    pub associated_measurement: Option<usize>,
}

/// Objects of the highest-weight global hypothesis with existence at least
/// `extract_r_threshold`, ordered by track id.
pub fn extract_estimates<T: Scalar>(
    state: &PmbmState<T>,
    params: &FilterParams<T>,
) -> Vec<TrackEstimate<T>> {
    let Some(best) = state.best_global() else {
        return Vec::new();
    };
    state.globals[best]
        .selection
        .iter()
        .filter_map(|(&tid, &idx)| {
            let h = &state.track(tid)?.hypotheses[idx];
            (h.existence >= params.extract_r_threshold).then(|| TrackEstimate {
                track_id: tid,
                state: h.state.clone(),
                existence: h.existence,
                associated_measurement: h.associated_measurement,
            })
        })
        .collect()
}

/// One predict → update → reduce cycle. `dt` is `None` for the first frame.
pub fn step<T: Scalar>(
    state: PmbmState<T>,
    dt: Option<T>,
    measurements: &[Measurement<T>],
    scores: &[T],
    params: &FilterParams<T>,
) -> Result<PmbmState<T>> {
    let state = match dt {
        Some(dt) => pmbm_predict(state, dt, params)?,
        None => state,
    };
    let state = pmbm_update(state, measurements, scores, params)?;
    Ok(pmbm_reduce(state, params))
}
