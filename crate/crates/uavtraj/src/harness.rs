//! Benchmark harness: annotation ingestion, window extraction, final
//! displacement error and method comparison reports.
//!
//! Every prediction method implements [`Predictor`]; the harness feeds the
//! identical observation windows to each method and aggregates the Euclidean
//! error of the final predicted position per horizon. Aggregation sorts the
//! per-window errors and Kahan-sums them, so report cells do not depend on
//! sequence order or evaluation parallelism.

use crate::baselines::{
    kalman_filter, kalman_forecast, linear_forecast_with, KalmanParams, LinearFit,
};
use crate::datagen::{add_pixel_noise, ImageTrack};
use crate::seqmodel::{predict, MdnModel};
use crate::util::{fnv1a, stream_rng};
use serde_json::Value;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("annotation file {path}: {message}")]
    Schema { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no evaluation windows (tracks shorter than observed + horizon?)")]
    EmptyEvaluation,
    #[error("method `{method}` failed: {message}")]
    MethodFailure { method: String, message: String },
    #[error("bad report file: {0}")]
    BadReport(String),
}

/// Camera modality of a benchmark sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Eo,
    Ir,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Eo => "EO",
            Modality::Ir => "IR",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eo" => Ok(Modality::Eo),
            "ir" => Ok(Modality::Ir),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Axis-aligned box in pixels, (x, y) top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }
}

/// Per-frame annotations of one benchmark sequence; `None` marks frames
/// where the object is absent or unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSequence {
    pub id: String,
    pub modality: Option<Modality>,
    pub frames: Vec<Option<BoundingBox>>,
}

impl AnnotationSequence {
    pub fn centers(&self) -> Vec<Option<[f64; 2]>> {
        self.frames.iter().map(|f| f.map(|b| b.center())).collect()
    }
}

/// Field names of the annotation JSON schema, remappable so format variants
/// can be ingested without code changes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMapping {
    pub exist_field: String,
    pub rect_field: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            exist_field: "exist".to_string(),
            rect_field: "gt_rect".to_string(),
        }
    }
}

impl FieldMapping {
    /// Load a mapping file: a JSON object with `exist_field` / `rect_field`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| HarnessError::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut mapping = FieldMapping::default();
        if let Some(v) = value.get("exist_field").and_then(Value::as_str) {
            mapping.exist_field = v.to_string();
        }
        if let Some(v) = value.get("rect_field").and_then(Value::as_str) {
            mapping.rect_field = v.to_string();
        }
        Ok(mapping)
    }
}

/// Parse one annotation file: a JSON object holding an existence flag list
/// and a rectangle list. The modality is inferred from `IR`/`EO` in the
/// file name when present.
pub fn ingest_annotations(
    path: &Path,
    mapping: &FieldMapping,
) -> Result<AnnotationSequence, HarnessError> {
    let schema_err = |message: String| HarnessError::Schema {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path)?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| schema_err(format!("not valid JSON: {e}")))?;

    let exists = value
        .get(&mapping.exist_field)
        .ok_or_else(|| schema_err(format!("missing field `{}`", mapping.exist_field)))?
        .as_array()
        .ok_or_else(|| schema_err(format!("field `{}` is not a list", mapping.exist_field)))?;
    let rects = value
        .get(&mapping.rect_field)
        .ok_or_else(|| schema_err(format!("missing field `{}`", mapping.rect_field)))?
        .as_array()
        .ok_or_else(|| schema_err(format!("field `{}` is not a list", mapping.rect_field)))?;
    if exists.len() != rects.len() {
        return Err(schema_err(format!(
            "{} existence flags but {} rectangles",
            exists.len(),
            rects.len()
        )));
    }

    let mut frames = Vec::with_capacity(exists.len());
    for (idx, (flag, rect)) in exists.iter().zip(rects).enumerate() {
        let present = match flag {
            Value::Bool(b) => *b,
            Value::Number(n) => n.as_f64().unwrap_or(0.0) != 0.0,
            other => {
                return Err(schema_err(format!(
                    "frame {idx}: existence flag is {other}, expected bool or number"
                )))
            }
        };
        if !present {
            frames.push(None);
            continue;
        }
        let fields = rect
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| schema_err(format!("frame {idx}: rectangle is not [x, y, w, h]")))?;
        let nums: Vec<f64> = fields
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<_>>()
            .ok_or_else(|| schema_err(format!("frame {idx}: non-numeric rectangle field")))?;
        let bbox = BoundingBox {
            x: nums[0],
            y: nums[1],
            w: nums[2],
            h: nums[3],
        };
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(schema_err(format!(
                "frame {idx}: non-positive box size {}x{}",
                bbox.w, bbox.h
            )));
        }
        frames.push(Some(bbox));
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let upper = stem.to_ascii_uppercase();
    let modality = if upper.contains("IR") {
        Some(Modality::Ir)
    } else if upper.contains("EO") || upper.contains("RGB") {
        Some(Modality::Eo)
    } else {
        None
    };
    Ok(AnnotationSequence {
        id: stem,
        modality,
        frames,
    })
}

/// Write a sequence back out in the same JSON schema.
pub fn export_annotations(
    seq: &AnnotationSequence,
    path: &Path,
    mapping: &FieldMapping,
) -> Result<(), HarnessError> {
    let exist: Vec<Value> = seq
        .frames
        .iter()
        .map(|f| Value::from(if f.is_some() { 1 } else { 0 }))
        .collect();
    let rects: Vec<Value> = seq
        .frames
        .iter()
        .map(|f| match f {
            Some(b) => serde_json::json!([b.x, b.y, b.w, b.h]),
            None => serde_json::json!([]),
        })
        .collect();
    let object = serde_json::json!({
        &mapping.exist_field: exist,
        &mapping.rect_field: rects,
    });
    std::fs::write(path, serde_json::to_string(&object).expect("serializable"))?;
    Ok(())
}

/// One evaluation window: `observed` conditioning points followed by
/// `future` ground-truth points.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub observed: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
}

/// Slide a window of `observed_len + horizon` consecutive *valid* frames
/// over the sequence; windows touching any invalid frame are skipped.
pub fn extract_windows(
    points: &[Option<[f64; 2]>],
    observed_len: usize,
    horizon: usize,
    stride: usize,
) -> Vec<Window> {
    let span = observed_len + horizon;
    let mut out = Vec::new();
    if points.len() < span || stride == 0 {
        return out;
    }
    let mut start = 0;
    while start + span <= points.len() {
        let slice = &points[start..start + span];
        if slice.iter().all(Option::is_some) {
            out.push(Window {
                start,
                observed: slice[..observed_len].iter().map(|p| p.unwrap()).collect(),
                future: slice[observed_len..].iter().map(|p| p.unwrap()).collect(),
            });
        }
        start += stride;
    }
    out
}

/// Euclidean distance between a predicted and a true final position.
pub fn fde(predicted: [f64; 2], truth: [f64; 2]) -> f64 {
    ((predicted[0] - truth[0]).powi(2) + (predicted[1] - truth[1]).powi(2)).sqrt()
}

/// Order-independent mean and population standard deviation: values are
/// sorted before Kahan summation.
fn aggregate(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let mean = kahan_sum(values.iter().copied()) / values.len() as f64;
    let variance =
        kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / values.len() as f64;
    (mean, variance.sqrt())
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// The common prediction interface the harness evaluates.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    /// Forecast `horizon` future positions from the observed window.
    fn forecast(&self, observed: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>, String>;
}

/// Constant-velocity Kalman filter baseline.
#[derive(Default)]
pub struct KalmanPredictor {
    pub params: KalmanParams,
}

impl Predictor for KalmanPredictor {
    fn name(&self) -> &str {
        "kalman"
    }

    fn forecast(&self, observed: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>, String> {
        let state = kalman_filter(observed, &self.params).map_err(|e| e.to_string())?;
        Ok(kalman_forecast(&state, horizon)
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    }
}

/// Linear extrapolation baseline.
#[derive(Default)]
pub struct LinearPredictor {
    pub fit: LinearFit,
}

impl Predictor for LinearPredictor {
    fn name(&self) -> &str {
        "linear"
    }

    fn forecast(&self, observed: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>, String> {
        linear_forecast_with(observed, horizon, self.fit).map_err(|e| e.to_string())
    }
}

/// The trained mixture-density model (its forecast means).
pub struct MdnPredictor {
    pub model: MdnModel,
}

impl Predictor for MdnPredictor {
    fn name(&self) -> &str {
        "mdn"
    }

    fn forecast(&self, observed: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>, String> {
        predict(&self.model, observed, horizon)
            .map(|f| f.means())
            .map_err(|e| e.to_string())
    }
}

/// A sequence under evaluation: an id plus per-frame optional positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub id: String,
    pub points: Vec<Option<[f64; 2]>>,
}

impl From<&ImageTrack> for SequenceData {
    fn from(track: &ImageTrack) -> Self {
        SequenceData {
            id: format!("track-{}", track.id),
            points: track.points_px.iter().map(|p| Some(*p)).collect(),
        }
    }
}

impl From<&AnnotationSequence> for SequenceData {
    fn from(seq: &AnnotationSequence) -> Self {
        SequenceData {
            id: seq.id.clone(),
            points: seq.centers(),
        }
    }
}

/// Observation noise injected into the conditioning windows (ground truth
/// stays clean). The per-sequence noise stream is keyed by the sequence id,
/// so sequence order does not matter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationNoise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    pub observed_len: usize,
    pub stride: usize,
    pub noise: Option<ObservationNoise>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![8, 10, 12],
            observed_len: 8,
            stride: 1,
            noise: None,
        }
    }
}

/// One report cell: a method evaluated at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub method: String,
    pub horizon: usize,
    pub fde_mean_px: f64,
    pub fde_std_px: f64,
    pub windows: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMeta {
    pub dataset_hash: u64,
    pub sequences: u64,
    pub observed_len: usize,
    pub stride: usize,
    pub noise_sigma: Option<f64>,
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn cell(&self, method: &str, horizon: usize) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.horizon == horizon)
    }
}

/// Evaluate every method on the identical windows of every sequence.
/// Windows span `observed_len + max(horizons)` frames; shorter horizons are
/// scored on the forecast prefix.
pub fn evaluate(
    methods: &[&dyn Predictor],
    sequences: &[SequenceData],
    config: &EvalConfig,
) -> Result<EvalReport, HarnessError> {
    assert!(!methods.is_empty() && !config.horizons.is_empty());
    let max_horizon = *config.horizons.iter().max().unwrap();

    let mut windows = Vec::new();
    let mut dataset_hash = 0u64;
    for seq in sequences {
        dataset_hash ^= sequence_hash(seq);
        let observed_points = match &config.noise {
            None => seq.points.clone(),
            Some(noise) => noisy_points(seq, noise),
        };
        for (clean, noisy) in extract_windows(
            &seq.points,
            config.observed_len,
            max_horizon,
            config.stride,
        )
        .into_iter()
        .zip(extract_windows(
            &observed_points,
            config.observed_len,
            max_horizon,
            config.stride,
        )) {
            debug_assert_eq!(clean.start, noisy.start);
            windows.push(Window {
                start: clean.start,
                observed: noisy.observed,
                future: clean.future,
            });
        }
    }
    if windows.is_empty() {
        return Err(HarnessError::EmptyEvaluation);
    }

    let mut cells = Vec::new();
    for method in methods {
        let mut per_horizon: Vec<Vec<f64>> =
            vec![Vec::with_capacity(windows.len()); config.horizons.len()];
        for window in &windows {
            let forecast = method
                .forecast(&window.observed, max_horizon)
                .map_err(|message| HarnessError::MethodFailure {
                    method: method.name().to_string(),
                    message,
                })?;
            for (slot, &h) in per_horizon.iter_mut().zip(&config.horizons) {
                slot.push(fde(forecast[h - 1], window.future[h - 1]));
            }
        }
        for (mut values, &h) in per_horizon.into_iter().zip(&config.horizons) {
            let count = values.len() as u64;
            let (mean, std) = aggregate(&mut values);
            cells.push(ReportCell {
                method: method.name().to_string(),
                horizon: h,
                fde_mean_px: mean,
                fde_std_px: std,
                windows: count,
            });
        }
    }
    Ok(EvalReport {
        cells,
        meta: ReportMeta {
            dataset_hash,
            sequences: sequences.len() as u64,
            observed_len: config.observed_len,
            stride: config.stride,
            noise_sigma: config.noise.map(|n| n.sigma),
            noise_seed: config.noise.map(|n| n.seed),
        },
    })
}

fn sequence_hash(seq: &SequenceData) -> u64 {
    let mut bytes = seq.id.as_bytes().to_vec();
    for p in seq.points.iter().flatten() {
        bytes.extend_from_slice(&p[0].to_bits().to_le_bytes());
        bytes.extend_from_slice(&p[1].to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

fn noisy_points(seq: &SequenceData, noise: &ObservationNoise) -> Vec<Option<[f64; 2]>> {
    let mut valid: Vec<[f64; 2]> = seq.points.iter().flatten().copied().collect();
    let mut rng = stream_rng(noise.seed, fnv1a(seq.id.as_bytes()));
    add_pixel_noise(&mut valid, noise.sigma, &mut rng);
    let mut iter = valid.into_iter();
    seq.points
        .iter()
        .map(|p| p.map(|_| iter.next().expect("one noisy point per valid point")))
        .collect()
}

/// CSV rendering: `#`-prefixed metadata lines, a header, one row per cell.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    let m = &report.meta;
    out.push_str(&format!("# dataset_hash = {:016x}\n", m.dataset_hash));
    out.push_str(&format!("# sequences = {}\n", m.sequences));
    out.push_str(&format!(
        "# observed_len = {}, stride = {}\n",
        m.observed_len, m.stride
    ));
    if let (Some(sigma), Some(seed)) = (m.noise_sigma, m.noise_seed) {
        out.push_str(&format!("# noise_sigma = {sigma}, noise_seed = {seed}\n"));
    }
    out.push_str("method,horizon,fde_mean_px,fde_std_px,windows\n");
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            c.method, c.horizon, c.fde_mean_px, c.fde_std_px, c.windows
        ));
    }
    out
}

pub fn save_report(path: &Path, report: &EvalReport) -> Result<(), HarnessError> {
    Ok(std::fs::write(path, report_to_csv(report))?)
}

/// Parse a report CSV back, including the `#` metadata lines.
pub fn load_report(path: &Path) -> Result<EvalReport, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut cells = Vec::new();
    let mut meta = ReportMeta::default();
    for line in text.lines() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            for entry in comment.split(',') {
                if let Some((key, value)) = entry.split_once('=') {
                    let value = value.trim();
                    match key.trim() {
                        "dataset_hash" => {
                            meta.dataset_hash =
                                u64::from_str_radix(value, 16).unwrap_or_default()
                        }
                        "sequences" => meta.sequences = value.parse().unwrap_or_default(),
                        "observed_len" => meta.observed_len = value.parse().unwrap_or_default(),
                        "stride" => meta.stride = value.parse().unwrap_or_default(),
                        "noise_sigma" => meta.noise_sigma = value.parse().ok(),
                        "noise_seed" => meta.noise_seed = value.parse().ok(),
                        _ => {}
                    }
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with("method,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(HarnessError::BadReport(format!("bad row `{line}`")));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HarnessError::BadReport(format!("`{s}`: {e}")))
        };
        cells.push(ReportCell {
            method: parts[0].to_string(),
            horizon: parts[1]
                .parse()
                .map_err(|e| HarnessError::BadReport(format!("`{}`: {e}", parts[1])))?,
            fde_mean_px: parse_f(parts[2])?,
            fde_std_px: parse_f(parts[3])?,
            windows: parts[4]
                .parse()
                .map_err(|e| HarnessError::BadReport(format!("`{}`: {e}", parts[4])))?,
        });
    }
    if cells.is_empty() {
        return Err(HarnessError::BadReport("no data rows".to_string()));
    }
    Ok(EvalReport { cells, meta })
}

/// Markdown table with one row per method and FDE mean/std column pairs per
/// observed/horizon split.
pub fn report_to_markdown(report: &EvalReport) -> String {
    let mut horizons: Vec<usize> = report.cells.iter().map(|c| c.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut methods: Vec<String> = Vec::new();
    for c in &report.cells {
        if !methods.contains(&c.method) {
            methods.push(c.method.clone());
        }
    }

    let mut out = String::from("| Approach |");
    for h in &horizons {
        out.push_str(&format!(
            " {}/{} FDE/px | {}/{} sigma/px |",
            report.meta.observed_len, h, report.meta.observed_len, h
        ));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &horizons {
        out.push_str("---|---|");
    }
    out.push('\n');
    for method in &methods {
        out.push_str(&format!("| {method} |"));
        for &h in &horizons {
            match report.cell(method, h) {
                Some(c) => {
                    out.push_str(&format!(" {:.3} | {:.3} |", c.fde_mean_px, c.fde_std_px))
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}
