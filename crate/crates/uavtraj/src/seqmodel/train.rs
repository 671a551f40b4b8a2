//! Window extraction, the training loop and model (de)serialization.

use super::{
    AdamOptimizer, GaussianForecast, MdnGradients, MdnModel, ModelDims, SeqModelError,
};
use crate::datagen::{add_observation_noise, ImageTrack};
use crate::util::{parse_field, parse_kv, stream_rng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Training hyperparameters. The learning rate is multiplied by `lr_decay`
/// after every block of `decay_interval` epochs (0 selects epochs / 10).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub observed_len: usize,
    pub horizon: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Observation noise added to conditioning inputs, px.
    pub noise_sigma: f64,
    /// Supervise against noisy targets instead of clean ones.
    pub noisy_targets: bool,
    /// Stride between consecutive training windows within a track.
    pub window_stride: usize,
    pub seed: u64,
    /// Worker threads for in-batch gradient computation. Gradients are
    /// always summed in window order, so the result is thread-count
    /// independent.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            initial_lr: 0.01,
            lr_decay: 0.95,
            decay_interval: 0,
            batch_size: 64,
            observed_len: 8,
            horizon: 12,
            embed_dim: 64,
            hidden_dim: 64,
            noise_sigma: 1.5,
            noisy_targets: false,
            window_stride: 4,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SeqModelError> {
        let err = |m: &str| Err(SeqModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return err("epochs must be positive");
        }
        if self.initial_lr.is_nan()
            || self.initial_lr < 0.0
            || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
        {
            return err("learning rate schedule");
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return err("batch size and window stride must be positive");
        }
        if self.observed_len == 0 || self.horizon == 0 {
            return err("observed length and horizon must be positive");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return err("model dimensions must be positive");
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return err("noise sigma must be non-negative");
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: 2,
            embed: self.embed_dim,
            hidden: self.hidden_dim,
            horizon: self.horizon,
        }
    }

    fn effective_decay_interval(&self) -> usize {
        if self.decay_interval == 0 {
            (self.epochs / 10).max(1)
        } else {
            self.decay_interval
        }
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "# uavtraj training config\n\
             epochs = {}\ninitial_lr = {}\nlr_decay = {}\ndecay_interval = {}\n\
             batch_size = {}\nobserved_len = {}\nhorizon = {}\n\
             embed_dim = {}\nhidden_dim = {}\n\
             noise_sigma = {}\nnoisy_targets = {}\nwindow_stride = {}\n\
             seed = {}\nthreads = {}\n",
            self.epochs,
            self.initial_lr,
            self.lr_decay,
            self.decay_interval,
            self.batch_size,
            self.observed_len,
            self.horizon,
            self.embed_dim,
            self.hidden_dim,
            self.noise_sigma,
            self.noisy_targets,
            self.window_stride,
            self.seed,
            self.threads,
        )
    }

    pub fn from_config_str(text: &str) -> Result<Self, SeqModelError> {
        let mut cfg = TrainConfig::default();
        for (line, key, value) in parse_kv(text).map_err(SeqModelError::InvalidConfig)? {
            match key.as_str() {
                "epochs" => parse_field(line, &key, &value).map(|v| cfg.epochs = v),
                "initial_lr" => parse_field(line, &key, &value).map(|v| cfg.initial_lr = v),
                "lr_decay" => parse_field(line, &key, &value).map(|v| cfg.lr_decay = v),
                "decay_interval" => {
                    parse_field(line, &key, &value).map(|v| cfg.decay_interval = v)
                }
                "batch_size" => parse_field(line, &key, &value).map(|v| cfg.batch_size = v),
                "observed_len" => parse_field(line, &key, &value).map(|v| cfg.observed_len = v),
                "horizon" => parse_field(line, &key, &value).map(|v| cfg.horizon = v),
                "embed_dim" => parse_field(line, &key, &value).map(|v| cfg.embed_dim = v),
                "hidden_dim" => parse_field(line, &key, &value).map(|v| cfg.hidden_dim = v),
                "noise_sigma" => parse_field(line, &key, &value).map(|v| cfg.noise_sigma = v),
                "noisy_targets" => parse_field(line, &key, &value).map(|v| cfg.noisy_targets = v),
                "window_stride" => parse_field(line, &key, &value).map(|v| cfg.window_stride = v),
                "seed" => parse_field(line, &key, &value).map(|v| cfg.seed = v),
                "threads" => parse_field(line, &key, &value).map(|v| cfg.threads = v),
                _ => Err(format!("line {line}: unknown key `{key}`")),
            }
            .map_err(SeqModelError::InvalidConfig)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SeqModelError> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }
}

/// One training example: the conditioning window and its future targets,
/// both in absolute pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_STREAM: u64 = u64::MAX;
const SHUFFLE_STREAM: u64 = u64::MAX - 1;

/// Slide over every track: inputs are taken from a noisy copy (conditioning
/// noise, one stream per track id), targets from the clean track unless
/// `noisy_targets` is set.
pub fn build_windows(tracks: &[ImageTrack], config: &TrainConfig) -> Vec<TrainWindow> {
    let span = config.observed_len + config.horizon;
    let mut windows = Vec::new();
    for track in tracks {
        if track.points_px.len() < span {
            continue;
        }
        let noisy = add_observation_noise(
            track,
            config.noise_sigma,
            &mut stream_rng(config.seed ^ NOISE_SALT, track.id),
        );
        let target_points = if config.noisy_targets {
            &noisy.points_px
        } else {
            &track.points_px
        };
        let mut start = 0;
        while start + span <= track.points_px.len() {
            windows.push(TrainWindow {
                inputs: noisy.points_px[start..start + config.observed_len].to_vec(),
                targets: target_points[start + config.observed_len..start + span].to_vec(),
            });
            start += config.window_stride;
        }
    }
    windows
}

/// A trained model together with the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MdnModel,
    pub loss_curve: Vec<f64>,
}

/// Minibatch ADAM over the extracted windows. Deterministic for a fixed
/// config, including the seed and regardless of `threads`.
pub fn train(tracks: &[ImageTrack], config: &TrainConfig) -> Result<TrainOutcome, SeqModelError> {
    config.validate()?;
    let windows = build_windows(tracks, config);
    if windows.is_empty() {
        return Err(SeqModelError::NoWindows);
    }

    let dims = config.dims();
    let mut model = MdnModel::init(dims, &mut stream_rng(config.seed, INIT_STREAM));
    let mut optimizer = AdamOptimizer::new(dims);
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let interval = config.effective_decay_interval();

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.initial_lr * config.lr_decay.powi((epoch / interval) as i32);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss_sum, mut grads) = batch_gradients(&model, &windows, batch, config.threads)?;
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model, &grads, lr);
            epoch_loss += loss_sum;
        }
        let mean = epoch_loss / windows.len() as f64;
        if !mean.is_finite() {
            return Err(SeqModelError::DivergedTraining { epoch });
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Sum of window losses and gradients over one batch. Per-window gradients
/// are pure functions, and the fold always runs in `batch` order, so worker
/// threads only change wall time, never the result.
fn batch_gradients(
    model: &MdnModel,
    windows: &[TrainWindow],
    batch: &[usize],
    threads: usize,
) -> Result<(f64, MdnGradients), SeqModelError> {
    let fold = |items: Vec<(f64, MdnGradients)>| {
        let mut total = MdnGradients::zeros(model.dims());
        let mut loss = 0.0;
        for (l, g) in &items {
            loss += l;
            total.accumulate(g);
        }
        (loss, total)
    };

    if threads <= 1 || batch.len() <= 1 {
        let mut items = Vec::with_capacity(batch.len());
        for &idx in batch {
            items.push(model.gradients(&windows[idx].inputs, &windows[idx].targets)?);
        }
        return Ok(fold(items));
    }

    let chunk = batch.len().div_ceil(threads);
    let results: Vec<Result<Vec<(f64, MdnGradients)>, SeqModelError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&idx| model.gradients(&windows[idx].inputs, &windows[idx].targets))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        });
    let mut items = Vec::with_capacity(batch.len());
    for r in results {
        items.extend(r?);
    }
    Ok(fold(items))
}

/// Forward pass truncated to the requested horizon.
pub fn predict(
    model: &MdnModel,
    observed: &[[f64; 2]],
    horizon: usize,
) -> Result<GaussianForecast, SeqModelError> {
    let max = model.dims().horizon;
    if horizon > max {
        return Err(SeqModelError::HorizonTooLarge {
            requested: horizon,
            max,
        });
    }
    Ok(model.forward(observed)?.truncated(horizon))
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    coding: String,
    layout: String,
    dims: ModelDims,
    train_config: Option<TrainConfig>,
    tensors: Vec<(String, TensorRecord)>,
}

const MODEL_FORMAT: &str = "uavtraj-mdn-model";

/// Versioned JSON container with every parameter tensor.
pub fn save_model(
    path: &Path,
    model: &MdnModel,
    config: Option<&TrainConfig>,
) -> Result<(), SeqModelError> {
    let dims = model.dims();
    let shapes = tensor_shapes(dims);
    let tensors = model
        .params()
        .iter()
        .zip(shapes)
        .map(|((name, data), (rows, cols))| {
            (
                name.to_string(),
                TensorRecord {
                    rows,
                    cols,
                    data: data.to_vec(),
                },
            )
        })
        .collect();
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: 1,
        coding: format!(
            "inputs: per-step displacements / {}; means: offsets from last observed position",
            super::INPUT_SCALE_PX
        ),
        layout: "column-major".to_string(),
        dims,
        train_config: config.cloned(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| SeqModelError::BadModelFile(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(MdnModel, Option<TrainConfig>), SeqModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| SeqModelError::BadModelFile(e.to_string()))?;
    if file.format != MODEL_FORMAT || file.version != 1 {
        return Err(SeqModelError::BadModelFile(format!(
            "unsupported container {}/{}",
            file.format, file.version
        )));
    }
    let mut model = MdnModel::zeros(file.dims);
    let shapes = tensor_shapes(file.dims);
    for (slot, shape) in model.params_mut().into_iter().zip(shapes) {
        let (name, dest) = slot;
        let tensor = file
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| SeqModelError::BadModelFile(format!("missing tensor {name}")))?;
        if (tensor.rows, tensor.cols) != shape || tensor.data.len() != dest.len() {
            return Err(SeqModelError::BadModelFile(format!(
                "tensor {name} has shape {}x{}, expected {}x{}",
                tensor.rows, tensor.cols, shape.0, shape.1
            )));
        }
        dest.copy_from_slice(&tensor.data);
    }
    Ok((model, file.train_config))
}

fn tensor_shapes(dims: ModelDims) -> [(usize, usize); 7] {
    [
        (dims.embed, dims.input),
        (dims.embed, 1),
        (4 * dims.hidden, dims.embed),
        (4 * dims.hidden, dims.hidden),
        (4 * dims.hidden, 1),
        (dims.head_outputs(), dims.hidden),
        (dims.head_outputs(), 1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraRig, Extrinsics, Intrinsics};

    /// Straight-line synthetic tracks, long enough for a few windows each.
    fn toy_tracks(count: usize, len: usize) -> Vec<ImageTrack> {
        (0..count)
            .map(|id| ImageTrack {
                id: id as u64,
                fps: 15.0,
                camera: CameraRig::new(
                    Intrinsics::default(),
                    Extrinsics::new(1.5, 0.25).unwrap(),
                ),
                points_px: (0..len)
                    .map(|t| {
                        [
                            100.0 + (3.0 + id as f64) * t as f64,
                            300.0 - 2.0 * t as f64 + (id as f64 * 0.1) * (t as f64).sin(),
                        ]
                    })
                    .collect(),
                points_world: None,
                seed: 0,
                config_hash: 0,
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 12,
            batch_size: 16,
            embed_dim: 8,
            hidden_dim: 8,
            horizon: 4,
            observed_len: 6,
            window_stride: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn window_extraction_counts() {
        let config = TrainConfig {
            observed_len: 8,
            horizon: 12,
            window_stride: 1,
            noise_sigma: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(build_windows(&toy_tracks(1, 20), &config).len(), 1);
        assert_eq!(build_windows(&toy_tracks(1, 19), &config).len(), 0);
        assert_eq!(build_windows(&toy_tracks(1, 22), &config).len(), 3);
        assert_eq!(build_windows(&toy_tracks(2, 22), &config).len(), 6);
    }

    #[test]
    fn windows_condition_noisy_supervise_clean() {
        let tracks = toy_tracks(1, 30);
        let config = TrainConfig {
            noise_sigma: 1.5,
            ..tiny_config()
        };
        let windows = build_windows(&tracks, &config);
        let clean = &tracks[0].points_px;
        let w = &windows[0];
        assert!(w.inputs.iter().zip(clean).any(|(a, b)| a != b));
        assert_eq!(w.targets, clean[config.observed_len..config.observed_len + 4].to_vec());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let tracks = toy_tracks(2, 30);
        let config = TrainConfig {
            initial_lr: 0.0,
            epochs: 3,
            ..tiny_config()
        };
        let outcome = train(&tracks, &config).unwrap();
        let reference = MdnModel::init(config.dims(), &mut stream_rng(config.seed, INIT_STREAM));
        assert_eq!(outcome.model, reference);
    }

    #[test]
    fn training_is_deterministic_and_thread_invariant() {
        let tracks = toy_tracks(3, 30);
        let config = tiny_config();
        let a = train(&tracks, &config).unwrap();
        let b = train(&tracks, &config).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.model, b.model);

        let parallel = train(
            &tracks,
            &TrainConfig {
                threads: 4,
                ..config
            },
        )
        .unwrap();
        assert_eq!(a.loss_curve, parallel.loss_curve);
        assert_eq!(a.model, parallel.model);
    }

    #[test]
    fn short_training_reduces_loss() {
        let tracks = toy_tracks(4, 40);
        let config = TrainConfig {
            epochs: 30,
            ..tiny_config()
        };
        let outcome = train(&tracks, &config).unwrap();
        let first = outcome.loss_curve[0];
        let last = *outcome.loss_curve.last().unwrap();
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn lr_schedule_decays_in_blocks() {
        let config = TrainConfig {
            epochs: 100,
            decay_interval: 0,
            ..TrainConfig::default()
        };
        assert_eq!(config.effective_decay_interval(), 10);
        let explicit = TrainConfig {
            epochs: 100,
            decay_interval: 25,
            ..TrainConfig::default()
        };
        assert_eq!(explicit.effective_decay_interval(), 25);
    }

    #[test]
    fn predict_truncates_and_validates_horizon() {
        let model = MdnModel::zeros(ModelDims::with_defaults(12));
        let window = vec![[10.0, 10.0]; 8];
        assert_eq!(predict(&model, &window, 12).unwrap().len(), 12);
        assert_eq!(predict(&model, &window, 8).unwrap().len(), 8);
        assert!(matches!(
            predict(&model, &window, 13),
            Err(SeqModelError::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn model_file_round_trips_exactly() {
        let dir = std::env::temp_dir().join(format!("uavtraj-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");

        let config = tiny_config();
        let model = MdnModel::init(config.dims(), &mut stream_rng(8, 0));
        save_model(&path, &model, Some(&config)).unwrap();
        let (loaded, echoed) = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(echoed.as_ref(), Some(&config));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn config_file_round_trips() {
        let config = TrainConfig {
            epochs: 123,
            noisy_targets: true,
            ..tiny_config()
        };
        let parsed = TrainConfig::from_config_str(&config.to_config_string()).unwrap();
        assert_eq!(config, parsed);
        assert!(TrainConfig::from_config_str("imaginary = 1\n").is_err());
    }
}
