//! Batch pipeline: detections in, tracks out, optional CLEAR-MOT report.
//!
//! Each class runs its own filter over a shared frame timeline. Frames absent
//! from the detection file (no detections of any class) are filled in so the
//! filter still predicts through them and registers the misses.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::error::Error;
use crate::filter::{
    extract_estimates, pmbm_predict, pmbm_reduce, pmbm_update, FilterParams, PmbmState,
    PoissonComponent, TrackId,
};
use crate::io::{
    emit_class_reports, read_detections, read_ground_truth, read_poses, write_records,
    DetectionRecord, FormatError, FrameGroup, GroundTruthRecord, PipelineConfig, PoseRecord,
    TrackRecord,
};
use crate::metrics::{evaluate_per_class, AnnotatedFrame, AnnotatedObject, MotSummary};
use crate::scalar::Scalar;
use crate::sim::{Scenario, ScenarioConfig};
use crate::state::Measurement;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Predict,
    Update,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Predict => "predict",
            Stage::Update => "update",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    Config(Error),
    #[error("frame {frame}, class '{class}': {stage} failed: {source}")]
    Stage {
        frame: u64,
        class: String,
        stage: Stage,
        #[source]
        source: Error,
    },
    #[error("frame {frame}: no ego pose for frame with detections")]
    MissingPose { frame: u64 },
}

/// One step of the shared timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub frame: u64,
    pub timestamp: Option<f64>,
}

/// Every frame index from the first to the last detection frame, with
/// timestamps taken from the records and linearly interpolated across gaps.
pub fn timeline(frames: &[FrameGroup<DetectionRecord>]) -> Vec<Slot> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Vec::new();
    };
    let known: BTreeMap<u64, f64> = frames
        .iter()
        .filter_map(|g| {
            g.records
                .iter()
                .find_map(|r| r.timestamp)
                .map(|t| (g.frame, t))
        })
        .collect();
    (first.frame..=last.frame)
        .map(|frame| {
            let timestamp = known.get(&frame).copied().or_else(|| {
                let (&a, &ta) = known.range(..frame).next_back()?;
                let (&b, &tb) = known.range(frame..).next()?;
                Some(ta + (tb - ta) * (frame - a) as f64 / (b - a) as f64)
            });
            Slot { frame, timestamp }
        })
        .collect()
}

fn step_dt(prev: &Slot, cur: &Slot, default_dt: f64) -> f64 {
    match (prev.timestamp, cur.timestamp) {
        (Some(a), Some(b)) if b > a => b - a,
        _ => default_dt * (cur.frame - prev.frame) as f64,
    }
}

/// Maps each detection from the ego frame into the global frame.
pub fn apply_poses(
    frames: &mut [FrameGroup<DetectionRecord>],
    poses: &BTreeMap<u64, PoseRecord>,
) -> Result<(), PipelineError> {
    for g in frames.iter_mut() {
        let pose = poses
            .get(&g.frame)
            .ok_or(PipelineError::MissingPose { frame: g.frame })?;
        let (s, c) = pose.yaw.sin_cos();
        for r in &mut g.records {
            let [x, y, z] = r.center;
            r.center = [c * x - s * y + pose.x, s * x + c * y + pose.y, z];
            r.yaw += pose.yaw;
        }
    }
    Ok(())
}

/// Tracker output plus timing of the filter work alone.
#[derive(Debug, Clone)]
pub struct TrackingOutput {
    pub records: Vec<TrackRecord>,
    pub frames: usize,
    pub elapsed: Duration,
}

impl TrackingOutput {
    pub fn frames_per_second(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.frames as f64 / secs
        } else {
            f64::INFINITY
        }
    }
}

struct ClassRun {
    /// (frame, local track id, record without global id)
    rows: Vec<(u64, TrackId, TrackRecord)>,
    elapsed: Duration,
}

fn track_class<T: Scalar>(
    class: &str,
    slots: &[Slot],
    by_frame: &BTreeMap<u64, &FrameGroup<DetectionRecord>>,
    params: &FilterParams<T>,
    initial: &[PoissonComponent<T>],
    default_dt: f64,
) -> Result<ClassRun, PipelineError> {
    let stage_err = |frame: u64, stage: Stage| {
        move |source: Error| PipelineError::Stage {
            frame,
            class: class.to_string(),
            stage,
            source,
        }
    };
    let mut state = PmbmState::new(initial.to_vec());
    let mut last_seen: HashMap<TrackId, DetectionRecord> = HashMap::new();
    let mut rows = Vec::new();
    let mut elapsed = Duration::ZERO;
    for (i, slot) in slots.iter().enumerate() {
        let dets: Vec<&DetectionRecord> = by_frame
            .get(&slot.frame)
            .map(|g| g.records.iter().filter(|r| r.class == class).collect())
            .unwrap_or_default();
        let measurements: Vec<Measurement<T>> = dets
            .iter()
            .map(|d| Measurement::new(T::lit(d.center[0]), T::lit(d.center[1])))
            .collect();
        let scores: Vec<T> = dets.iter().map(|d| T::lit(d.score)).collect();

        let start = Instant::now();
        if i > 0 {
            let dt = T::lit(step_dt(&slots[i - 1], slot, default_dt));
            state =
                pmbm_predict(state, dt, params).map_err(stage_err(slot.frame, Stage::Predict))?;
        }
        state = pmbm_update(state, &measurements, &scores, params)
            .map_err(stage_err(slot.frame, Stage::Update))?;
        state = pmbm_reduce(state, params);
        let estimates = extract_estimates(&state, params);
        elapsed += start.elapsed();

        for e in estimates {
            if let Some(j) = e.associated_measurement {
                last_seen.insert(e.track_id, dets[j].clone());
            }
            let Some(src) = last_seen.get(&e.track_id) else {
                continue;
            };
            let pos = e.state.position();
            let vel = e.state.velocity();
            rows.push((
                slot.frame,
                e.track_id,
                TrackRecord {
                    detection: DetectionRecord {
                        frame: slot.frame,
                        timestamp: slot.timestamp,
                        class: class.to_string(),
                        center: [pos[0].to_f64_lossy(), pos[1].to_f64_lossy(), src.center[2]],
                        size: src.size,
                        yaw: src.yaw,
                        score: src.score,
                    },
                    track_id: 0,
                    existence: e.existence.to_f64_lossy().clamp(0.0, 1.0),
                    velocity: [vel[0].to_f64_lossy(), vel[1].to_f64_lossy()],
                },
            ));
        }
    }
    Ok(ClassRun { rows, elapsed })
}

/// Runs one filter per class over the detection frames.
///
/// Output is sorted by frame, class and track; track ids are renumbered in
/// order of first appearance so they are unique across classes.
pub fn track_detections<T: Scalar>(
    frames: &[FrameGroup<DetectionRecord>],
    config: &PipelineConfig,
) -> Result<TrackingOutput, PipelineError> {
    let (params, initial) = config.filter_params::<T>().map_err(PipelineError::Config)?;
    if !(config.default_dt > 0.0) {
        return Err(PipelineError::Config(Error::InvalidArgument(
            "default_dt must be positive".into(),
        )));
    }
    let slots = timeline(frames);
    let by_frame: BTreeMap<u64, &FrameGroup<DetectionRecord>> =
        frames.iter().map(|g| (g.frame, g)).collect();
    let classes: Vec<String> = frames
        .iter()
        .flat_map(|g| g.records.iter().map(|r| r.class.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let run = |class: &String| {
        track_class(
            class,
            &slots,
            &by_frame,
            &params,
            &initial,
            config.default_dt,
        )
    };
    let runs: Vec<ClassRun> = if config.parallel_classes {
        classes.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        classes.iter().map(run).collect::<Result<_, _>>()?
    };

    let mut rows: Vec<(u64, usize, TrackId, TrackRecord)> = Vec::new();
    let mut elapsed = Duration::ZERO;
    for (ci, run) in runs.into_iter().enumerate() {
        elapsed += run.elapsed;
        rows.extend(run.rows.into_iter().map(|(f, id, r)| (f, ci, id, r)));
    }
    rows.sort_by_key(|&(f, ci, id, _)| (f, ci, id));
    let mut ids: HashMap<(usize, TrackId), u64> = HashMap::new();
    let records = rows
        .into_iter()
        .map(|(_, ci, id, mut r)| {
            let next = ids.len() as u64;
            r.track_id = *ids.entry((ci, id)).or_insert(next);
            r
        })
        .collect();
    Ok(TrackingOutput {
        records,
        frames: slots.len(),
        elapsed,
    })
}

/// Aligns both inputs on the union of their frame ranges and evaluates per class.
pub fn evaluate_records(
    gt: &[GroundTruthRecord],
    tracks: &[TrackRecord],
    config: &PipelineConfig,
) -> Result<BTreeMap<String, MotSummary<f64>>, Error> {
    let frames: Vec<u64> = gt
        .iter()
        .map(|g| g.frame)
        .chain(tracks.iter().map(|t| t.detection.frame))
        .collect();
    let (Some(&lo), Some(&hi)) = (frames.iter().min(), frames.iter().max()) else {
        return Ok(BTreeMap::new());
    };
    let mut gt_frames: Vec<AnnotatedFrame<f64>> = (lo..=hi)
        .map(|f| AnnotatedFrame::new(f, Vec::new()))
        .collect();
    let mut tr_frames = gt_frames.clone();
    let mut radii = BTreeMap::new();
    for g in gt {
        radii.insert(g.class.clone(), config.match_radius(&g.class));
        gt_frames[(g.frame - lo) as usize]
            .objects
            .push(AnnotatedObject {
                id: g.object_id,
                position: [g.center[0], g.center[1]],
                class: g.class.clone(),
            });
    }
    for t in tracks {
        let d = &t.detection;
        radii.insert(d.class.clone(), config.match_radius(&d.class));
        tr_frames[(d.frame - lo) as usize]
            .objects
            .push(AnnotatedObject {
                id: t.track_id,
                position: [d.center[0], d.center[1]],
                class: d.class.clone(),
            });
    }
    evaluate_per_class(&gt_frames, &tr_frames, &radii)
}

/// Inputs of [`run_pipeline`].
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub detections: PathBuf,
    pub config: Option<PathBuf>,
    pub output: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub poses: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summaries: Option<BTreeMap<String, MotSummary<f64>>>,
    pub frames: usize,
    pub tracks_written: usize,
    pub frames_per_second: f64,
}

/// Reads detections, tracks every class, writes the track file and, given
/// ground truth, evaluates and optionally writes a report.
pub fn run_pipeline(opts: &PipelineOptions) -> Result<PipelineOutcome, PipelineError> {
    let config = match &opts.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut frames = read_detections(&opts.detections)?;
    if let Some(p) = &opts.poses {
        apply_poses(&mut frames, &read_poses(p)?)?;
    }
    let out = track_detections::<f64>(&frames, &config)?;
    write_records(&opts.output, &out.records)?;

    let summaries = match &opts.ground_truth {
        Some(gt_path) => {
            let gt: Vec<GroundTruthRecord> = read_ground_truth(gt_path)?
                .into_iter()
                .flat_map(|g| g.records)
                .collect();
            let s = evaluate_records(&gt, &out.records, &config).map_err(|source| {
                PipelineError::Stage {
                    frame: 0,
                    class: String::new(),
                    stage: Stage::Evaluate,
                    source,
                }
            })?;
            if let Some(report) = &opts.report {
                emit_class_reports(&s, report)?;
            }
            Some(s)
        }
        None => None,
    };
    Ok(PipelineOutcome {
        summaries,
        frames: out.frames,
        tracks_written: out.records.len(),
        frames_per_second: out.frames_per_second(),
    })
}

// ---------------------------------------------------------------------------
// Scenario export
// ---------------------------------------------------------------------------

/// Detection records of a simulated scenario, grouped by frame. Frames
/// without any detection are omitted, as they would be in a file.
pub fn scenario_detections(
    scenario: &Scenario<f64>,
    config: &ScenarioConfig,
) -> Vec<FrameGroup<DetectionRecord>> {
    scenario
        .detections
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.is_empty())
        .map(|(f, dets)| FrameGroup {
            frame: f as u64,
            records: dets
                .iter()
                .map(|d| DetectionRecord {
                    frame: f as u64,
                    timestamp: Some(scenario.timestamps[f]),
                    class: d.class.clone(),
                    center: [
                        d.measurement.z[0],
                        d.measurement.z[1],
                        config.box_size[2] / 2.0,
                    ],
                    size: config.box_size,
                    yaw: 0.0,
                    score: d.score,
                })
                .collect(),
        })
        .collect()
}

pub fn scenario_ground_truth(
    scenario: &Scenario<f64>,
    config: &ScenarioConfig,
) -> Vec<GroundTruthRecord> {
    scenario
        .gt
        .iter()
        .flat_map(|f| {
            f.objects.iter().map(move |o| GroundTruthRecord {
                frame: f.frame,
                timestamp: Some(scenario.timestamps[f.frame as usize]),
                class: o.class.clone(),
                object_id: o.id,
                center: [o.position[0], o.position[1], config.box_size[2] / 2.0],
                size: config.box_size,
                yaw: 0.0,
            })
        })
        .collect()
}

pub fn write_scenario(
    scenario: &Scenario<f64>,
    config: &ScenarioConfig,
    detections_path: &Path,
    gt_path: &Path,
) -> Result<(), FormatError> {
    let dets: Vec<DetectionRecord> = scenario_detections(scenario, config)
        .into_iter()
        .flat_map(|g| g.records)
        .collect();
    write_records(detections_path, &dets)?;
    write_records(gt_path, &scenario_ground_truth(scenario, config))
}
