//! Mini-batch training, evaluation and prompt selection.

use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{heaviside_backward, heaviside_forward};
use super::loss::{reconstruction, sparsity, sparsity_mu, RateLoss};
use super::model::{ModelConfig, ToyAutoencoder, Variant, MU_LEVELS};
use super::schedule::GammaSchedule;
use crate::analysis::si_snr;
use crate::codec::{cost_dense, cost_report};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub model: ModelConfig,
    /// Latent steps per clip.
    pub n_steps: usize,
    /// Bit budget per sample for the clipped rate loss.
    pub b0: f64,
    pub gamma_inf: f64,
    pub phase_steps: [usize; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let n_steps = 256;
        Self {
            variant: Variant::Sparse,
            n_steps,
            b0: default_b0(model.n_units, n_steps),
            gamma_inf: 2e-6,
            phase_steps: [8000, 6000, 6000],
            learning_rate: 2e-3,
            batch_size: 4,
            seed: 0,
            grad_clip: Some(1.0),
            model,
        }
    }
}

/// Budget equal to the exact compressed-time cost at 5% density.
pub fn default_b0(n_units: usize, n_steps: usize) -> f64 {
    let (n, t) = (n_units as u64, n_steps as u64);
    let s = (n * t) / 20;
    crate::codec::cost_time(n, t, s, crate::codec::CostMode::Exact) as f64
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.phase_steps.iter().sum()
    }

    pub fn schedule(&self) -> Result<GammaSchedule> {
        let gamma_inf = if self.variant == Variant::Free { 0.0 } else { self.gamma_inf };
        GammaSchedule::new(self.phase_steps, gamma_inf)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n_features == 0 || m.hidden == 0 || m.n_units == 0 || self.n_steps == 0 {
            return Err(Error::Domain("model dimensions and n_steps must be positive".into()));
        }
        if m.enc_kernel.is_multiple_of(2) || m.dec_kernel.is_multiple_of(2) {
            return Err(Error::Domain("kernel sizes must be odd".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.b0 >= 0.0 && self.b0.is_finite()) {
            return Err(Error::Domain(format!("b0 must be finite and >= 0, got {}", self.b0)));
        }
        if self.total_steps() == 0 {
            return Err(Error::Domain("at least one training step is required".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Domain(format!("invalid grad_clip {c}")));
            }
        }
        self.schedule().map(|_| ())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(model: &ToyAutoencoder, learning_rate: f64) -> Self {
        let shapes: Vec<_> = model.params().iter().map(|p| p.value.raw_dim()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn update(&mut self, model: &mut ToyAutoencoder) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for ((p, m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_x: f64,
    pub loss_z: f64,
    pub gamma: f64,
    pub mean_s: f64,
    pub density: f64,
    pub bits_exact: f64,
}

pub const METRICS_HEADER: &str = "step,loss_x,loss_z,gamma,mean_S,density,bits_exact";

pub fn metrics_csv(log: &[StepMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.step, m.loss_x, m.loss_z, m.gamma, m.mean_s, m.density, m.bits_exact
        );
    }
    out
}

fn rate_loss(variant: Variant, n: u64, t: u64, s: u64, b0: f64, mu: Option<usize>) -> Option<RateLoss> {
    match (variant, mu) {
        (Variant::Free, _) => None,
        (Variant::Sparse, _) => Some(sparsity(n, t, s, b0)),
        (Variant::MuSparse, Some(m)) => Some(sparsity_mu(n, t, s, m)),
        (Variant::MuSparse, None) => None,
    }
}

/// Forward and backward pass over one batch in training mode.
/// Gradients are accumulated into the model parameters.
pub fn train_step(
    model: &mut ToyAutoencoder,
    batch: &[&Array2<f64>],
    mus: &[Option<usize>],
    gamma: f64,
    b0: f64,
) -> Result<StepMetrics> {
    let bsz = batch.len() as f64;
    let variant = model.variant;
    let n = model.config.n_units as u64;
    model.zero_grad();
    let mut raws = Vec::with_capacity(batch.len());
    let mut enc_caches = Vec::with_capacity(batch.len());
    for (x, &mu) in batch.iter().zip(mus) {
        let (raw, cache) = model.encode_logits(x, mu);
        raws.push(raw);
        enc_caches.push(cache);
    }
    let (logits, bn_cache) = model.bn.forward_train(&raws);
    let mut d_logits = Vec::with_capacity(batch.len());
    let (mut loss_x, mut loss_z, mut total_s, mut bits) = (0.0, 0.0, 0.0, 0.0);
    for ((x, &mu), l) in batch.iter().zip(mus).zip(&logits) {
        let t = l.ncols() as u64;
        let z = heaviside_forward(l);
        let s = z.sum() as u64;
        let (x_hat, dec_cache) = model.decode_code(&z, mu);
        let (lx, mut d_xhat) = reconstruction(x, &x_hat)?;
        d_xhat /= bsz;
        let mut dz = model.backward_decoder(&dec_cache, &d_xhat);
        if let Some(rl) = rate_loss(variant, n, t, s, b0, mu) {
            loss_z += rl.value / bsz;
            let g = gamma * rl.d_events / bsz;
            if g != 0.0 {
                dz.mapv_inplace(|v| v + g);
            }
        }
        d_logits.push(heaviside_backward(l, &dz)?);
        loss_x += lx / bsz;
        total_s += s as f64;
        bits += cost_report(n, t, s).best_bits() as f64 / bsz;
    }
    let d_raws = model.bn.backward(&bn_cache, &d_logits);
    for (cache, d) in enc_caches.iter().zip(&d_raws) {
        model.backward_encoder(cache, d);
    }
    let loss = loss_x + gamma * loss_z;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss (loss_x={loss_x}, loss_z={loss_z}, gamma={gamma})"
        )));
    }
    let cells = batch.iter().map(|x| x.ncols()).sum::<usize>() as f64 * n as f64;
    Ok(StepMetrics {
        step: 0,
        loss_x,
        loss_z,
        gamma,
        mean_s: total_s / bsz,
        density: total_s / cells,
        bits_exact: bits,
    })
}

fn clip_gradients(model: &mut ToyAutoencoder, max_norm: f64) -> Result<()> {
    let norm = model
        .params()
        .iter()
        .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite gradient norm".into()));
    }
    if norm > max_norm {
        let k = max_norm / norm;
        for p in model.params_mut() {
            p.grad *= k;
        }
    }
    Ok(())
}

/// Called after every step with the latest metrics.
pub trait Progress {
    fn on_step(&mut self, metrics: &StepMetrics);
}

impl<F: FnMut(&StepMetrics)> Progress for F {
    fn on_step(&mut self, metrics: &StepMetrics) {
        self(metrics)
    }
}

pub fn train(cfg: &TrainConfig, data: &[Array2<f64>]) -> Result<(ToyAutoencoder, Vec<StepMetrics>)> {
    train_with_progress(cfg, data, &mut |_: &StepMetrics| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &[Array2<f64>],
    progress: &mut dyn Progress,
) -> Result<(ToyAutoencoder, Vec<StepMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    for x in data {
        if x.dim() != (cfg.model.n_features, cfg.n_steps) {
            return Err(Error::Shape(format!(
                "training clip {:?}, expected {:?}",
                x.dim(),
                (cfg.model.n_features, cfg.n_steps)
            )));
        }
    }
    let schedule = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut model = ToyAutoencoder::new(cfg.model, cfg.variant, cfg.seed);
    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut log = Vec::with_capacity(cfg.total_steps());
    for step in 0..cfg.total_steps() {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let mus: Vec<Option<usize>> = match cfg.variant {
            Variant::MuSparse => (0..cfg.batch_size).map(|_| Some(rng.gen_range(0..MU_LEVELS))).collect(),
            _ => vec![None; cfg.batch_size],
        };
        let gamma = schedule.gamma(step);
        opt.learning_rate = learning_rate_at(cfg, step);
        let mut metrics = train_step(&mut model, &batch, &mus, gamma, cfg.b0)?;
        metrics.step = step;
        if let Some(c) = cfg.grad_clip {
            clip_gradients(&mut model, c)?;
        }
        opt.update(&mut model);
        progress.on_step(&metrics);
        log.push(metrics);
    }
    let mus: Vec<Option<usize>> = match cfg.variant {
        Variant::MuSparse => (0..data.len()).map(|_| Some(rng.gen_range(0..MU_LEVELS))).collect(),
        _ => vec![None; data.len()],
    };
    recalibrate_batch_norm(&mut model, data, &mus)?;
    Ok((model, log))
}

/// Constant in the first two phases, cosine decay to a tenth over the third.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize) -> f64 {
    let [p1, p2, p3] = cfg.phase_steps;
    let start = p1 + p2;
    if step < start || p3 == 0 {
        return cfg.learning_rate;
    }
    let frac = ((step - start) as f64 / p3 as f64).min(1.0);
    cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Replaces the running normalization statistics with the exact mean and
/// unbiased variance of the pre-normalization logits over `data`.
pub fn recalibrate_batch_norm(model: &mut ToyAutoencoder, data: &[Array2<f64>], mus: &[Option<usize>]) -> Result<()> {
    if data.is_empty() || data.len() != mus.len() {
        return Err(Error::Shape("recalibration needs one prompt per clip".into()));
    }
    let raws: Vec<Array2<f64>> = data
        .iter()
        .zip(mus)
        .map(|(x, &mu)| model.encode_logits(x, mu).0)
        .collect();
    let (_, _, mean, var) = model.bn.forward_batch_stats(&raws);
    let count: usize = raws.iter().map(|r| r.ncols()).sum();
    let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
    model.bn.running_mean = mean;
    model.bn.running_var = var.into_iter().map(|v| v * unbias).collect();
    if model.bn.running_var.iter().chain(&model.bn.running_mean).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite normalization statistics".into()));
    }
    Ok(())
}

/// Held-out statistics in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_s: f64,
    pub density: f64,
    pub mse: f64,
    /// Fraction of clips whose exact compressed-time cost is below the dense cost.
    pub sparse_beats_dense: f64,
    pub event_counts: Vec<usize>,
}

pub fn evaluate(model: &ToyAutoencoder, data: &[Array2<f64>], mu: Option<usize>) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    let n = model.config.n_units as u64;
    let (mut mse, mut cells, mut wins) = (0.0, 0.0, 0usize);
    let mut counts = Vec::with_capacity(data.len());
    for x in data {
        let out = model.forward(x, mu)?;
        let t = x.ncols() as u64;
        let s = out.z.sum() as u64;
        mse += reconstruction(x, &out.x_hat)?.0;
        cells += (n * t) as f64;
        let time_bits = crate::codec::cost_time(n, t, s, crate::codec::CostMode::Exact);
        if time_bits < cost_dense(n, t) {
            wins += 1;
        }
        counts.push(s as usize);
    }
    let total: usize = counts.iter().sum();
    let k = data.len() as f64;
    Ok(Evaluation {
        mean_s: total as f64 / k,
        density: total as f64 / cells,
        mse: mse / k,
        sparse_beats_dense: wins as f64 / k,
        event_counts: counts,
    })
}

/// Outcome of a prompt scan for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MuSelection {
    pub mu: usize,
    pub met_floor: bool,
    pub si_snr_db: f64,
    pub events: usize,
    pub bits: u64,
    /// `(μ, SI-SNR)` for every prompt tried, highest first.
    pub scanned: Vec<(usize, f64)>,
}

/// Largest μ whose reconstruction meets `min_si_snr` on the flattened
/// feature frames; `μ = 0` with `met_floor = false` if none does.
pub fn mu_select(model: &ToyAutoencoder, x: &Array2<f64>, min_si_snr: f64) -> Result<MuSelection> {
    if model.variant != Variant::MuSparse {
        return Err(Error::Domain("mu-select requires a mu-sparse model".into()));
    }
    let reference: Vec<f64> = x.iter().copied().collect();
    let n = model.config.n_units as u64;
    let t = x.ncols() as u64;
    let mut scanned = Vec::new();
    for mu in (0..MU_LEVELS).rev() {
        let out = model.forward(x, Some(mu))?;
        let est: Vec<f64> = out.x_hat.iter().copied().collect();
        let db = si_snr(&reference, &est)?;
        scanned.push((mu, db));
        if db >= min_si_snr || mu == 0 {
            let s = out.z.sum() as u64;
            return Ok(MuSelection {
                mu,
                met_floor: db >= min_si_snr,
                si_snr_db: db,
                events: s as usize,
                bits: cost_report(n, t, s).best_bits(),
                scanned,
            });
        }
    }
    unreachable!("the scan always terminates at mu = 0")
}
