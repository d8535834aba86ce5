//! JSON-lines record formats, the flat pipeline config, and report output.
//!
//! Files are UTF-8 with one JSON object per line. Every write goes to a
//! temporary file in the destination directory and is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{birth_grid, FilterParams, Rect};
use crate::metrics::MotSummary;
use crate::scalar::Scalar;
use crate::state::{MeasurementParams, MotionParams};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: invalid field '{field}': {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("{path}:{line}: frame {frame} follows frame {previous}; frames must be nondecreasing")]
    NonMonotoneFrame {
        path: PathBuf,
        line: usize,
        frame: u64,
        previous: u64,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One input detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub class: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub score: f64,
}

/// One output track state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    #[serde(flatten)]
    pub detection: DetectionRecord,
    pub track_id: u64,
    pub existence: f64,
    pub velocity: [f64; 2],
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub class: String,
    pub object_id: u64,
    pub center: [f64; 3],
    #[serde(default)]
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

/// Ego pose of one frame: detections are rotated by `yaw` then shifted by `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Field-level validation hook run on every parsed line.
pub trait Record: Serialize + DeserializeOwned {
    fn frame(&self) -> u64;
    fn check(&self) -> std::result::Result<(), (&'static str, String)>;
}

fn finite(field: &'static str, values: &[f64]) -> std::result::Result<(), (&'static str, String)> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err((field, "must be finite".to_string()))
    }
}

fn check_timestamp(t: Option<f64>) -> std::result::Result<(), (&'static str, String)> {
    match t {
        Some(t) if !t.is_finite() => Err(("timestamp", "must be finite".into())),
        _ => Ok(()),
    }
}

impl Record for DetectionRecord {
    fn frame(&self) -> u64 {
        self.frame
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(("score", format!("{} outside [0, 1]", self.score)));
        }
        check_timestamp(self.timestamp)?;
        finite("center", &self.center)?;
        finite("size", &self.size)?;
        finite("yaw", &[self.yaw])
    }
}

impl Record for TrackRecord {
    fn frame(&self) -> u64 {
        self.detection.frame
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        self.detection.check()?;
        if !(0.0..=1.0).contains(&self.existence) {
            return Err(("existence", format!("{} outside [0, 1]", self.existence)));
        }
        finite("velocity", &self.velocity)
    }
}

impl Record for GroundTruthRecord {
    fn frame(&self) -> u64 {
        self.frame
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        check_timestamp(self.timestamp)?;
        finite("center", &self.center)?;
        finite("size", &self.size)?;
        finite("yaw", &[self.yaw])
    }
}

impl Record for PoseRecord {
    fn frame(&self) -> u64 {
        self.frame
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        finite("pose", &[self.x, self.y, self.yaw])
    }
}

/// Records of one frame, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGroup<R> {
    pub frame: u64,
    pub records: Vec<R>,
}

/// Reads a JSON-lines file, validating every record and requiring
/// nondecreasing frames. Blank lines are skipped.
pub fn read_records<R: Record>(path: &Path) -> Result<Vec<R>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out: Vec<R> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: R = serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        rec.check()
            .map_err(|(field, message)| FormatError::Validation {
                path: path.to_path_buf(),
                line: line_no,
                field,
                message,
            })?;
        if let Some(prev) = out.last() {
            if rec.frame() < prev.frame() {
                return Err(FormatError::NonMonotoneFrame {
                    path: path.to_path_buf(),
                    line: line_no,
                    frame: rec.frame(),
                    previous: prev.frame(),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Groups consecutive records sharing a frame.
pub fn group_by_frame<R: Record>(records: Vec<R>) -> Vec<FrameGroup<R>> {
    let mut out: Vec<FrameGroup<R>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(g) if g.frame == r.frame() => g.records.push(r),
            _ => out.push(FrameGroup {
                frame: r.frame(),
                records: vec![r],
            }),
        }
    }
    out
}

pub fn read_detections(path: &Path) -> Result<Vec<FrameGroup<DetectionRecord>>> {
    Ok(group_by_frame(read_records(path)?))
}

pub fn read_tracks(path: &Path) -> Result<Vec<FrameGroup<TrackRecord>>> {
    Ok(group_by_frame(read_records(path)?))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<FrameGroup<GroundTruthRecord>>> {
    Ok(group_by_frame(read_records(path)?))
}

pub fn read_poses(path: &Path) -> Result<BTreeMap<u64, PoseRecord>> {
    let poses: Vec<PoseRecord> = read_records(path)?;
    Ok(poses.into_iter().map(|p| (p.frame, p)).collect())
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| FormatError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_records<R: Serialize>(path: &Path, records: &[R]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| FormatError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat key-value tracker configuration (TOML). Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub process_noise: f64,
    pub survival_prob: f64,
    /// Isotropic position noise standard deviation (m).
    pub meas_noise_std: f64,
    pub detection_prob: f64,
    pub clutter_intensity: f64,
    pub gate_threshold: f64,
    pub k_best: usize,
    pub prune_sth_logw: f64,
    pub prune_global_logw: f64,
    pub prune_ppp_logw: f64,
    pub cap_globals: usize,
    pub cap_tracks: usize,
    pub recycle_r_threshold: f64,
    pub extract_r_threshold: f64,
    pub pd_floor: f64,
    pub pd_ceiling: f64,
    pub score_window: usize,
    pub max_misses: u32,
    pub area_min_x: f64,
    pub area_min_y: f64,
    pub area_max_x: f64,
    pub area_max_y: f64,
    pub birth_spacing: f64,
    /// Expected new objects per frame over the whole area.
    pub birth_weight: f64,
    /// Expected objects present when tracking starts.
    pub initial_weight: f64,
    pub birth_velocity_std: f64,
    pub default_dt: f64,
    pub radius_vehicle: f64,
    pub radius_pedestrian: f64,
    pub radius_default: f64,
    pub parallel_classes: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = FilterParams::<f64>::default();
        Self {
            process_noise: f.motion.process_noise,
            survival_prob: f.motion.survival_prob,
            meas_noise_std: f.meas.noise[(0, 0)].sqrt(),
            detection_prob: f.meas.detection_prob,
            clutter_intensity: f.meas.clutter_intensity,
            gate_threshold: f.meas.gate_threshold,
            k_best: f.k_best,
            prune_sth_logw: f.prune_sth_logw,
            prune_global_logw: f.prune_global_logw,
            prune_ppp_logw: f.prune_ppp_logw,
            cap_globals: f.cap_globals,
            cap_tracks: f.cap_tracks,
            recycle_r_threshold: f.recycle_r_threshold,
            extract_r_threshold: f.extract_r_threshold,
            pd_floor: f.pd_floor,
            pd_ceiling: f.pd_ceiling,
            score_window: f.score_window,
            max_misses: f.max_misses,
            area_min_x: -100.0,
            area_min_y: -100.0,
            area_max_x: 100.0,
            area_max_y: 100.0,
            birth_spacing: 10.0,
            birth_weight: 0.1,
            initial_weight: 5.0,
            birth_velocity_std: 8.0,
            default_dt: 0.1,
            radius_vehicle: 2.0,
            radius_pedestrian: 1.0,
            radius_default: 2.0,
            parallel_classes: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|message| FormatError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn area(&self) -> Rect<f64> {
        Rect {
            min_x: self.area_min_x,
            min_y: self.area_min_y,
            max_x: self.area_max_x,
            max_y: self.area_max_y,
        }
    }

    pub fn match_radius(&self, class: &str) -> f64 {
        match class {
            "vehicle" => self.radius_vehicle,
            "pedestrian" => self.radius_pedestrian,
            _ => self.radius_default,
        }
    }

    /// Filter parameters plus the initial Poisson intensity.
    pub fn filter_params<T: Scalar>(
        &self,
    ) -> crate::error::Result<(FilterParams<T>, Vec<crate::filter::PoissonComponent<T>>)> {
        let l = T::lit;
        let var = l(self.meas_noise_std * self.meas_noise_std);
        let a = self.area();
        let area = Rect {
            min_x: l(a.min_x),
            min_y: l(a.min_y),
            max_x: l(a.max_x),
            max_y: l(a.max_y),
        };
        let birth = birth_grid(
            &area,
            l(self.birth_spacing),
            l(self.birth_weight),
            l(self.birth_velocity_std),
        )?;
        let initial = if self.initial_weight > 0.0 {
            birth_grid(
                &area,
                l(self.birth_spacing),
                l(self.initial_weight),
                l(self.birth_velocity_std),
            )?
        } else {
            Vec::new()
        };
        let params = FilterParams {
            motion: MotionParams {
                process_noise: l(self.process_noise),
                survival_prob: l(self.survival_prob),
            },
            meas: MeasurementParams {
                noise: nalgebra::Matrix2::new(var, T::zero(), T::zero(), var),
                detection_prob: l(self.detection_prob),
                clutter_intensity: l(self.clutter_intensity),
                gate_threshold: l(self.gate_threshold),
            },
            birth,
            k_best: self.k_best,
            prune_sth_logw: l(self.prune_sth_logw),
            prune_global_logw: l(self.prune_global_logw),
            prune_ppp_logw: l(self.prune_ppp_logw),
            cap_globals: self.cap_globals,
            cap_tracks: self.cap_tracks,
            recycle_r_threshold: l(self.recycle_r_threshold),
            extract_r_threshold: l(self.extract_r_threshold),
            pd_floor: l(self.pd_floor),
            pd_ceiling: l(self.pd_ceiling),
            score_window: self.score_window,
            max_misses: self.max_misses,
        };
        params.validate()?;
        Ok((params, initial))
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

fn fmt_summary(out: &mut String, s: &MotSummary<f64>) {
    use std::fmt::Write as _;
    match s.mota {
        Some(m) => writeln!(out, "mota = {m:.3}"),
        None => writeln!(out, "mota = n/a"),
    }
    .ok();
    writeln!(out, "motp = {:.3}", s.motp).ok();
    writeln!(out, "false_positives = {}", s.false_positives).ok();
    writeln!(out, "misses = {}", s.misses).ok();
    writeln!(out, "id_switches = {}", s.id_switches).ok();
    writeln!(out, "fragmentations = {}", s.fragmentations).ok();
    writeln!(out, "matches = {}", s.matches).ok();
    writeln!(out, "gt_count = {}", s.gt_count).ok();
}

/// Human-readable key-value report text.
pub fn format_report(summary: &MotSummary<f64>) -> String {
    let mut out = String::new();
    fmt_summary(&mut out, summary);
    out
}

/// Key-value report with one `[class]` section per entry.
pub fn format_class_reports(summaries: &BTreeMap<String, MotSummary<f64>>) -> String {
    let mut out = String::new();
    for (i, (class, s)) in summaries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("[{class}]\n"));
        fmt_summary(&mut out, s);
    }
    out
}

/// Path of the machine-readable sidecar written next to a text report.
pub fn json_sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes the text report to `path` and the JSON record to `path.json`.
pub fn emit_report(summary: &MotSummary<f64>, path: &Path) -> Result<()> {
    write_atomic(path, format_report(summary).as_bytes())?;
    let json = serde_json::to_vec_pretty(summary).expect("summary serializes");
    write_atomic(&json_sidecar(path), &json)
}

pub fn emit_class_reports(
    summaries: &BTreeMap<String, MotSummary<f64>>,
    path: &Path,
) -> Result<()> {
    write_atomic(path, format_class_reports(summaries).as_bytes())?;
    let json = serde_json::to_vec_pretty(summaries).expect("summary serializes");
    write_atomic(&json_sidecar(path), &json)
}
