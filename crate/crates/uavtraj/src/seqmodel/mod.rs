//! Recurrent mixture-density predictor: an input embedding, an LSTM encoder
//! and an affine head that emits one bivariate Gaussian per future step, all
//! in double precision with hand-written analytic backpropagation.
//!
//! Coordinates are coded as offsets: the network consumes the per-step
//! pixel displacements of the window, and the head emits mean offsets
//! anchored at the last observed position, which are translated back to
//! absolute pixels. This makes the predictor translation-equivariant and
//! independent of the training image resolution. The consumed displacements
//! are divided by a fixed [`INPUT_SCALE_PX`] so they land in the LSTM's
//! responsive range; the head side stays in raw pixels.
//!
//! Covariances are parameterized as σ = exp(s) per axis and ρ = tanh(r)
//! clamped to |ρ| ≤ 0.999, so they are positive definite for any parameter
//! values.

mod adam;
mod train;

pub use adam::{AdamConfig, AdamOptimizer};
pub use train::{
    build_windows, load_model, predict, save_model, train, TrainConfig, TrainOutcome,
    TrainWindow,
};

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeqModelError {
    #[error("observation window is empty")]
    EmptyWindow,
    #[error("non-finite activation (diverged parameters or inputs)")]
    NonFiniteActivation,
    #[error("requested horizon {requested} exceeds the model horizon {max}")]
    HorizonTooLarge { requested: usize, max: usize },
    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("no training windows could be extracted")]
    NoWindows,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Network dimensions. `horizon` is the number of future steps the head
/// emits in one shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub embed: usize,
    pub hidden: usize,
    pub horizon: usize,
}

impl ModelDims {
    pub fn with_defaults(horizon: usize) -> Self {
        Self {
            input: 2,
            embed: 64,
            hidden: 64,
            horizon,
        }
    }

    /// Head output width: (μ_u, μ_v, s_u, s_v, r) per future step.
    pub fn head_outputs(&self) -> usize {
        5 * self.horizon
    }

    fn gate_rows(&self) -> usize {
        4 * self.hidden
    }
}

/// Parameter group names, in the canonical iteration order used by the
/// optimizer, serialization and the finite-difference checks.
pub const PARAM_GROUPS: [&str; 7] = [
    "embed_w", "embed_b", "gate_wx", "gate_wh", "gate_b", "head_w", "head_b",
];

/// Divisor applied to the per-step input displacements before the embedding.
pub const INPUT_SCALE_PX: f64 = 20.0;

/// All learnable parameters. LSTM gate weights are stacked row-wise in the
/// order input gate, forget gate, cell candidate, output gate.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel {
    dims: ModelDims,
    embed_w: DMatrix<f64>,
    embed_b: DVector<f64>,
    gate_wx: DMatrix<f64>,
    gate_wh: DMatrix<f64>,
    gate_b: DVector<f64>,
    head_w: DMatrix<f64>,
    head_b: DVector<f64>,
}

impl MdnModel {
    /// All parameters zero; useful as an algebraic fixture.
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            embed_w: DMatrix::zeros(dims.embed, dims.input),
            embed_b: DVector::zeros(dims.embed),
            gate_wx: DMatrix::zeros(dims.gate_rows(), dims.embed),
            gate_wh: DMatrix::zeros(dims.gate_rows(), dims.hidden),
            gate_b: DVector::zeros(dims.gate_rows()),
            head_w: DMatrix::zeros(dims.head_outputs(), dims.hidden),
            head_b: DVector::zeros(dims.head_outputs()),
        }
    }

    /// Xavier-uniform weights, zero biases except: forget-gate bias 1, and
    /// log-σ head biases ln(4·step) so the initial uncertainty sits at the
    /// residual scale of step-n-ahead pixel motion. Without the latter, the
    /// first optimizer steps see losses of order (residual/σ₀)² ≈ 1e4 whose
    /// squared gradients poison the ADAM second moments for thousands of
    /// steps.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(dims);
        xavier(&mut model.embed_w, rng);
        xavier(&mut model.gate_wx, rng);
        xavier(&mut model.gate_wh, rng);
        xavier(&mut model.head_w, rng);
        for v in model.gate_b.as_mut_slice()[dims.hidden..2 * dims.hidden].iter_mut() {
            *v = 1.0;
        }
        for n in 0..dims.horizon {
            let sigma0 = (4.0 * (n + 1) as f64).ln();
            model.head_b[5 * n + 2] = sigma0;
            model.head_b[5 * n + 3] = sigma0;
        }
        model
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Parameter tensors as flat slices (column-major for matrices), in
    /// [`PARAM_GROUPS`] order.
    pub fn params(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("embed_w", self.embed_w.as_slice()),
            ("embed_b", self.embed_b.as_slice()),
            ("gate_wx", self.gate_wx.as_slice()),
            ("gate_wh", self.gate_wh.as_slice()),
            ("gate_b", self.gate_b.as_slice()),
            ("head_w", self.head_w.as_slice()),
            ("head_b", self.head_b.as_slice()),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("embed_w", self.embed_w.as_mut_slice()),
            ("embed_b", self.embed_b.as_mut_slice()),
            ("gate_wx", self.gate_wx.as_mut_slice()),
            ("gate_wh", self.gate_wh.as_mut_slice()),
            ("gate_b", self.gate_b.as_mut_slice()),
            ("head_w", self.head_w.as_mut_slice()),
            ("head_b", self.head_b.as_mut_slice()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, s)| s.len()).sum()
    }

    /// Run the window through embedding, LSTM and head.
    pub fn forward(&self, window: &[[f64; 2]]) -> Result<GaussianForecast, SeqModelError> {
        Ok(self.forward_cached(window)?.0)
    }

    fn forward_cached(
        &self,
        window: &[[f64; 2]],
    ) -> Result<(GaussianForecast, ForwardCache), SeqModelError> {
        if window.is_empty() {
            return Err(SeqModelError::EmptyWindow);
        }
        let d = self.dims;
        let origin = *window.last().unwrap();
        if !origin[0].is_finite() || !origin[1].is_finite() {
            return Err(SeqModelError::NonFiniteActivation);
        }

        let steps = window.len();
        let mut cache = ForwardCache {
            origin,
            inputs: Vec::with_capacity(steps),
            embed_pre: Vec::with_capacity(steps),
            embed: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            cell: Vec::with_capacity(steps),
            cell_tanh: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
            head: DVector::zeros(d.head_outputs()),
        };

        let mut h = DVector::zeros(d.hidden);
        let mut c = DVector::zeros(d.hidden);
        for (t, point) in window.iter().enumerate() {
            let prev = window[t.saturating_sub(1)];
            let x = DVector::from_column_slice(&[
                (point[0] - prev[0]) / INPUT_SCALE_PX,
                (point[1] - prev[1]) / INPUT_SCALE_PX,
            ]);
            let e_pre = &self.embed_w * &x + &self.embed_b;
            let e = e_pre.map(|v| v.max(0.0));

            let mut a = &self.gate_wx * &e + &self.gate_b;
            a += &self.gate_wh * &h;
            let gates = DVector::from_fn(d.gate_rows(), |row, _| {
                if row < 2 * d.hidden || row >= 3 * d.hidden {
                    sigmoid(a[row])
                } else {
                    a[row].tanh()
                }
            });
            let (gi, gf, gg, go) = split_gates(&gates, d.hidden);
            let c_next = DVector::from_fn(d.hidden, |k, _| gf[k] * c[k] + gi[k] * gg[k]);
            let tc = c_next.map(f64::tanh);
            let h_next = DVector::from_fn(d.hidden, |k, _| go[k] * tc[k]);

            cache.inputs.push(x);
            cache.embed_pre.push(e_pre);
            cache.embed.push(e);
            cache.gates.push(gates);
            cache.cell.push(c_next.clone());
            cache.cell_tanh.push(tc);
            cache.hidden.push(h_next.clone());
            c = c_next;
            h = h_next;
        }

        cache.head = &self.head_w * &h + &self.head_b;
        if !cache.head.iter().all(|v| v.is_finite()) || !h.iter().all(|v| v.is_finite()) {
            return Err(SeqModelError::NonFiniteActivation);
        }

        let forecast = GaussianForecast {
            steps: (0..d.horizon)
                .map(|n| {
                    let raw = &cache.head.as_slice()[5 * n..5 * n + 5];
                    ForecastStep {
                        mean: [origin[0] + raw[0], origin[1] + raw[1]],
                        sigma: [raw[2].exp(), raw[3].exp()],
                        correlation: raw[4].tanh().clamp(-RHO_LIMIT, RHO_LIMIT),
                    }
                })
                .collect(),
        };
        Ok((forecast, cache))
    }

    /// Loss and analytic parameter gradients for one window/target pair,
    /// via backpropagation through time.
    pub fn gradients(
        &self,
        window: &[[f64; 2]],
        targets: &[[f64; 2]],
    ) -> Result<(f64, MdnGradients), SeqModelError> {
        let (_, cache) = self.forward_cached(window)?;
        let d = self.dims;
        assert_eq!(targets.len(), d.horizon, "target length must match horizon");

        let (loss, d_head) = head_loss_and_grad(cache.head.as_slice(), cache.origin, targets);
        let d_head = DVector::from_vec(d_head);

        let mut grads = MdnGradients::zeros(d);
        let last = cache.hidden.len() - 1;
        grads.head_w += &d_head * cache.hidden[last].transpose();
        grads.head_b += &d_head;

        let mut dh: DVector<f64> = self.head_w.transpose() * &d_head;
        let mut dc: DVector<f64> = DVector::zeros(d.hidden);
        for t in (0..=last).rev() {
            let (gi, gf, gg, go) = split_gates(&cache.gates[t], d.hidden);
            let tc = &cache.cell_tanh[t];
            let c_prev = if t == 0 { None } else { Some(&cache.cell[t - 1]) };
            let h_prev = if t == 0 { None } else { Some(&cache.hidden[t - 1]) };

            let mut da: DVector<f64> = DVector::zeros(d.gate_rows());
            for k in 0..d.hidden {
                let dck = dc[k] + dh[k] * go[k] * (1.0 - tc[k] * tc[k]);
                let cp = c_prev.map_or(0.0, |c| c[k]);
                da[k] = dck * gg[k] * gi[k] * (1.0 - gi[k]);
                da[d.hidden + k] = dck * cp * gf[k] * (1.0 - gf[k]);
                da[2 * d.hidden + k] = dck * gi[k] * (1.0 - gg[k] * gg[k]);
                da[3 * d.hidden + k] = dh[k] * tc[k] * go[k] * (1.0 - go[k]);
                dc[k] = dck * gf[k];
            }

            grads.gate_wx += &da * cache.embed[t].transpose();
            if let Some(hp) = h_prev {
                grads.gate_wh += &da * hp.transpose();
            }
            grads.gate_b += &da;

            let de = self.gate_wx.transpose() * &da;
            dh = self.gate_wh.transpose() * &da;

            let d_epre = DVector::from_fn(d.embed, |k, _| {
                if cache.embed_pre[t][k] > 0.0 {
                    de[k]
                } else {
                    0.0
                }
            });
            grads.embed_w += &d_epre * cache.inputs[t].transpose();
            grads.embed_b += &d_epre;
        }
        Ok((loss, grads))
    }
}

fn xavier(matrix: &mut DMatrix<f64>, rng: &mut impl Rng) {
    let limit = (6.0 / (matrix.nrows() + matrix.ncols()) as f64).sqrt();
    for v in matrix.as_mut_slice() {
        *v = rng.random_range(-limit..limit);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn split_gates(gates: &DVector<f64>, hidden: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
    let s = gates.as_slice();
    (
        &s[..hidden],
        &s[hidden..2 * hidden],
        &s[2 * hidden..3 * hidden],
        &s[3 * hidden..4 * hidden],
    )
}

const RHO_LIMIT: f64 = 0.999;

/// Per-step loss terms and their gradients with respect to the raw head
/// outputs (μ offsets, log-σ, pre-tanh correlation).
fn head_loss_and_grad(raw: &[f64], origin: [f64; 2], targets: &[[f64; 2]]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; raw.len()];
    for (n, target) in targets.iter().enumerate() {
        let r = &raw[5 * n..5 * n + 5];
        let (mu_u, mu_v, su, sv, rr) = (r[0], r[1], r[2], r[3], r[4]);
        let sigma_u = su.exp();
        let sigma_v = sv.exp();
        let rho_raw = rr.tanh();
        let clamped = rho_raw.abs() > RHO_LIMIT;
        let rho = rho_raw.clamp(-RHO_LIMIT, RHO_LIMIT);

        let dx = (target[0] - origin[0]) - mu_u;
        let dy = (target[1] - origin[1]) - mu_v;
        let x = dx / sigma_u;
        let y = dy / sigma_v;
        let d = 1.0 - rho * rho;
        let q = (x * x - 2.0 * rho * x * y + y * y) / d;

        loss += LN_2PI + su + sv + 0.5 * d.ln() + 0.5 * q;

        let g = &mut grad[5 * n..5 * n + 5];
        g[0] = -(x - rho * y) / (d * sigma_u);
        g[1] = -(y - rho * x) / (d * sigma_v);
        g[2] = 1.0 - x * (x - rho * y) / d;
        g[3] = 1.0 - y * (y - rho * x) / d;
        g[4] = if clamped { 0.0 } else { rho * (q - 1.0) - x * y };
    }
    (loss, grad)
}

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// One future step: mean in absolute pixels plus the (σ_u, σ_v, ρ)
/// covariance parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastStep {
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    pub correlation: f64,
}

impl ForecastStep {
    pub fn covariance(&self) -> Matrix2<f64> {
        let [su, sv] = self.sigma;
        let c = self.correlation * su * sv;
        Matrix2::new(su * su, c, c, sv * sv)
    }
}

/// A sequence of per-step bivariate Gaussians over future positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForecast {
    steps: Vec<ForecastStep>,
}

impl GaussianForecast {
    pub fn steps(&self) -> &[ForecastStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| s.mean).collect()
    }

    /// Prefix of the forecast.
    pub fn truncated(&self, horizon: usize) -> Self {
        Self {
            steps: self.steps[..horizon.min(self.steps.len())].to_vec(),
        }
    }
}

/// Exact negative log-likelihood of the targets under the forecast,
/// summed over steps.
pub fn nll_loss(forecast: &GaussianForecast, targets: &[[f64; 2]]) -> f64 {
    assert_eq!(
        forecast.len(),
        targets.len(),
        "forecast and target lengths must match"
    );
    forecast
        .steps()
        .iter()
        .zip(targets)
        .map(|(step, target)| {
            let dx = target[0] - step.mean[0];
            let dy = target[1] - step.mean[1];
            let x = dx / step.sigma[0];
            let y = dy / step.sigma[1];
            let rho = step.correlation;
            let d = 1.0 - rho * rho;
            let q = (x * x - 2.0 * rho * x * y + y * y) / d;
            LN_2PI + step.sigma[0].ln() + step.sigma[1].ln() + 0.5 * d.ln() + 0.5 * q
        })
        .sum()
}

/// Parameter gradients with the same shapes as [`MdnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MdnGradients {
    dims: ModelDims,
    embed_w: DMatrix<f64>,
    embed_b: DVector<f64>,
    gate_wx: DMatrix<f64>,
    gate_wh: DMatrix<f64>,
    gate_b: DVector<f64>,
    head_w: DMatrix<f64>,
    head_b: DVector<f64>,
}

impl MdnGradients {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            embed_w: DMatrix::zeros(dims.embed, dims.input),
            embed_b: DVector::zeros(dims.embed),
            gate_wx: DMatrix::zeros(dims.gate_rows(), dims.embed),
            gate_wh: DMatrix::zeros(dims.gate_rows(), dims.hidden),
            gate_b: DVector::zeros(dims.gate_rows()),
            head_w: DMatrix::zeros(dims.head_outputs(), dims.hidden),
            head_b: DVector::zeros(dims.head_outputs()),
        }
    }

    pub fn params(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("embed_w", self.embed_w.as_slice()),
            ("embed_b", self.embed_b.as_slice()),
            ("gate_wx", self.gate_wx.as_slice()),
            ("gate_wh", self.gate_wh.as_slice()),
            ("gate_b", self.gate_b.as_slice()),
            ("head_w", self.head_w.as_slice()),
            ("head_b", self.head_b.as_slice()),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("embed_w", self.embed_w.as_mut_slice()),
            ("embed_b", self.embed_b.as_mut_slice()),
            ("gate_wx", self.gate_wx.as_mut_slice()),
            ("gate_wh", self.gate_wh.as_mut_slice()),
            ("gate_b", self.gate_b.as_mut_slice()),
            ("head_w", self.head_w.as_mut_slice()),
            ("head_b", self.head_b.as_mut_slice()),
        ]
    }

    /// Accumulate `other` into `self`.
    pub fn accumulate(&mut self, other: &MdnGradients) {
        for ((_, a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, slice) in self.params_mut() {
            for v in slice {
                *v *= factor;
            }
        }
    }
}

struct ForwardCache {
    origin: [f64; 2],
    inputs: Vec<DVector<f64>>,
    embed_pre: Vec<DVector<f64>>,
    embed: Vec<DVector<f64>>,
    gates: Vec<DVector<f64>>,
    cell: Vec<DVector<f64>>,
    cell_tanh: Vec<DVector<f64>>,
    hidden: Vec<DVector<f64>>,
    head: DVector<f64>,
}
