//! The binary autoencoder: `z = H(BN(L(mix(enc(x) [+ e_μ]))))` and
//! `x̂ = dec(mix(P z [+ e_μ]))`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    heaviside_forward, tanh_backward, tanh_forward, BatchNorm, BiRecurrentMixer, Conv1d, ConvCache, Embedding,
    MixCache, Param,
};
use crate::error::{Error, Result};
use crate::event_matrix::EventMatrix;

/// Number of compression prompts.
pub const MU_LEVELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// No rate loss.
    Free,
    /// Clipped compressed-time bit budget.
    Sparse,
    /// Prompted event-count target `S_0(μ)`.
    MuSparse,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Free => "free",
            Variant::Sparse => "sparse",
            Variant::MuSparse => "mu",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Variant::Free),
            "sparse" => Ok(Variant::Sparse),
            "mu" | "mu-sparse" | "mu_sparse" => Ok(Variant::MuSparse),
            other => Err(Error::Domain(format!("unknown variant {other:?}"))),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Free => 0,
            Variant::Sparse => 1,
            Variant::MuSparse => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Variant::Free),
            1 => Ok(Variant::Sparse),
            2 => Ok(Variant::MuSparse),
            _ => Err(Error::Corrupt(format!("unknown variant code {code}"))),
        }
    }
}

/// Where the prompt embedding is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MuPlacement {
    EncoderOutput,
    DecoderInput,
    Both,
}

impl MuPlacement {
    fn encoder(self) -> bool {
        matches!(self, MuPlacement::EncoderOutput | MuPlacement::Both)
    }

    fn decoder(self) -> bool {
        matches!(self, MuPlacement::DecoderInput | MuPlacement::Both)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            MuPlacement::EncoderOutput => 0,
            MuPlacement::DecoderInput => 1,
            MuPlacement::Both => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MuPlacement::EncoderOutput),
            1 => Ok(MuPlacement::DecoderInput),
            2 => Ok(MuPlacement::Both),
            _ => Err(Error::Corrupt(format!("unknown placement code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature bins `F` per frame.
    pub n_features: usize,
    pub hidden: usize,
    /// Binary units `N`.
    pub n_units: usize,
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    pub mu_placement: MuPlacement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_features: 64,
            hidden: 48,
            n_units: 32,
            enc_kernel: 3,
            dec_kernel: 5,
            mu_placement: MuPlacement::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyAutoencoder {
    pub config: ModelConfig,
    pub variant: Variant,
    pub enc1: Conv1d,
    pub enc2: Conv1d,
    pub mix_in: BiRecurrentMixer,
    /// The linear map from hidden features to unit logits. Its bias is held
    /// at zero and excluded from the parameter list; the normalization shift
    /// plays that role.
    pub head: Conv1d,
    pub bn: BatchNorm,
    pub dec_in: Conv1d,
    pub mix_out: BiRecurrentMixer,
    pub dec1: Conv1d,
    pub dec2: Conv1d,
    pub mu_embeddings: Embedding,
}

pub struct EncoderCache {
    c1: ConvCache,
    h1: Array2<f64>,
    c2: ConvCache,
    h2: Array2<f64>,
    mix: MixCache,
    head: ConvCache,
    mu: Option<usize>,
}

pub struct DecoderCache {
    proj: ConvCache,
    mix: MixCache,
    c1: ConvCache,
    g1: Array2<f64>,
    c2: ConvCache,
    mu: Option<usize>,
}

/// Result of an evaluation-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub z: Array2<f64>,
    pub x_hat: Array2<f64>,
    pub logits: Array2<f64>,
}

impl ToyAutoencoder {
    /// Seeded uniform fan-in initialization.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelConfig {
            n_features: f,
            hidden: h,
            n_units: n,
            enc_kernel,
            dec_kernel,
            ..
        } = config;
        let mut head = Conv1d::new(&mut rng, h, n, 1);
        head.bias.value.fill(0.0);
        Self {
            config,
            variant,
            enc1: Conv1d::new(&mut rng, f, h, enc_kernel),
            enc2: Conv1d::new(&mut rng, h, h, enc_kernel),
            mix_in: BiRecurrentMixer::new(&mut rng, h),
            head,
            bn: BatchNorm::new(n),
            dec_in: Conv1d::new(&mut rng, n, h, 1),
            mix_out: BiRecurrentMixer::new(&mut rng, h),
            dec1: Conv1d::new(&mut rng, h, h, dec_kernel),
            dec2: Conv1d::new(&mut rng, h, f, dec_kernel),
            mu_embeddings: Embedding::new(&mut rng, h, MU_LEVELS),
        }
    }

    /// Fixed parameter order, shared by the optimizer and checkpoints.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::with_capacity(24);
        out.extend(self.enc1.params_mut());
        out.extend(self.enc2.params_mut());
        out.extend(self.mix_in.params_mut());
        out.push(&mut self.head.weight);
        out.extend(self.bn.params_mut());
        out.extend(self.dec_in.params_mut());
        out.extend(self.mix_out.params_mut());
        out.extend(self.dec1.params_mut());
        out.extend(self.dec2.params_mut());
        out.push(&mut self.mu_embeddings.table);
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::with_capacity(24);
        out.extend(self.enc1.params());
        out.extend(self.enc2.params());
        out.extend(self.mix_in.params());
        out.push(&self.head.weight);
        out.extend(self.bn.params());
        out.extend(self.dec_in.params());
        out.extend(self.mix_out.params());
        out.extend(self.dec1.params());
        out.extend(self.dec2.params());
        out.push(&self.mu_embeddings.table);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Checks the prompt against the variant.
    pub fn check_mu(&self, mu: Option<usize>) -> Result<()> {
        match (self.variant, mu) {
            (Variant::MuSparse, Some(m)) if m < MU_LEVELS => Ok(()),
            (Variant::MuSparse, Some(m)) => Err(Error::Domain(format!("mu {m} outside 0..{MU_LEVELS}"))),
            (Variant::MuSparse, None) => Err(Error::Domain("this model requires a mu prompt".into())),
            (_, Some(_)) => Err(Error::Domain("mu is only accepted by the mu-sparse variant".into())),
            (_, None) => Ok(()),
        }
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() != self.config.n_features || x.ncols() == 0 {
            return Err(Error::Shape(format!(
                "expected {} feature rows, got {:?}",
                self.config.n_features,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Encoder up to the pre-normalization logits.
    pub fn encode_logits(&self, x: &Array2<f64>, mu: Option<usize>) -> (Array2<f64>, EncoderCache) {
        let (mut h1, c1) = self.enc1.forward(x);
        tanh_forward(&mut h1);
        let (mut h2, c2) = self.enc2.forward(&h1);
        tanh_forward(&mut h2);
        let mut e = h2.clone();
        if let Some(m) = mu.filter(|_| self.config.mu_placement.encoder()) {
            self.mu_embeddings.add_to(&mut e, m);
        }
        let (mixed, mix) = self.mix_in.forward(&e);
        let (logits, head) = self.head.forward(&mixed);
        (
            logits,
            EncoderCache {
                c1,
                h1,
                c2,
                h2,
                mix,
                head,
                mu,
            },
        )
    }

    pub fn backward_encoder(&mut self, cache: &EncoderCache, d_logits: &Array2<f64>) {
        let d_mixed = self.head.backward(&cache.head, d_logits);
        let d_e = self.mix_in.backward(&cache.mix, &d_mixed);
        if let Some(m) = cache.mu.filter(|_| self.config.mu_placement.encoder()) {
            self.mu_embeddings.backward(&d_e, m);
        }
        let mut d_h2 = d_e;
        tanh_backward(&cache.h2, &mut d_h2);
        let mut d_h1 = self.enc2.backward(&cache.c2, &d_h2);
        tanh_backward(&cache.h1, &mut d_h1);
        self.enc1.backward(&cache.c1, &d_h1);
    }

    /// Decoder from a (binary or relaxed) `N × T` code.
    pub fn decode_code(&self, z: &Array2<f64>, mu: Option<usize>) -> (Array2<f64>, DecoderCache) {
        let (mut d, proj) = self.dec_in.forward(z);
        if let Some(m) = mu.filter(|_| self.config.mu_placement.decoder()) {
            self.mu_embeddings.add_to(&mut d, m);
        }
        let (mixed, mix) = self.mix_out.forward(&d);
        let (mut g1, c1) = self.dec1.forward(&mixed);
        tanh_forward(&mut g1);
        let (x_hat, c2) = self.dec2.forward(&g1);
        (
            x_hat,
            DecoderCache {
                proj,
                mix,
                c1,
                g1,
                c2,
                mu,
            },
        )
    }

    /// Returns the gradient with respect to the code `z`.
    pub fn backward_decoder(&mut self, cache: &DecoderCache, d_x_hat: &Array2<f64>) -> Array2<f64> {
        let mut d_g1 = self.dec2.backward(&cache.c2, d_x_hat);
        tanh_backward(&cache.g1, &mut d_g1);
        let d_mixed = self.dec1.backward(&cache.c1, &d_g1);
        let d_d = self.mix_out.backward(&cache.mix, &d_mixed);
        if let Some(m) = cache.mu.filter(|_| self.config.mu_placement.decoder()) {
            self.mu_embeddings.backward(&d_d, m);
        }
        self.dec_in.backward(&cache.proj, &d_d)
    }

    /// Evaluation-mode logits (running normalization statistics).
    pub fn logits(&self, x: &Array2<f64>, mu: Option<usize>) -> Result<Array2<f64>> {
        self.check_mu(mu)?;
        self.check_input(x)?;
        let (raw, _) = self.encode_logits(x, mu);
        Ok(self.bn.forward_eval(&raw))
    }

    /// Evaluation-mode pass; a pure function of parameters, input and prompt.
    pub fn forward(&self, x: &Array2<f64>, mu: Option<usize>) -> Result<ForwardOutput> {
        let logits = self.logits(x, mu)?;
        let z = heaviside_forward(&logits);
        let (x_hat, _) = self.decode_code(&z, mu);
        Ok(ForwardOutput { z, x_hat, logits })
    }

    pub fn encode_to_matrix(&self, x: &Array2<f64>, mu: Option<usize>) -> Result<EventMatrix> {
        let logits = self.logits(x, mu)?;
        let (n, t) = logits.dim();
        let mut events = Vec::new();
        for i in 0..n {
            for step in 0..t {
                if logits[[i, step]] > 0.0 {
                    events.push((i, step));
                }
            }
        }
        Ok(EventMatrix::from_sorted_unchecked(n, t, events))
    }

    /// Reconstructs feature frames from a stored event matrix.
    pub fn decode_matrix(&self, m: &EventMatrix, mu: Option<usize>) -> Result<Array2<f64>> {
        self.check_mu(mu)?;
        if m.n_units() != self.config.n_units {
            return Err(Error::Shape(format!(
                "matrix has {} units, model has {}",
                m.n_units(),
                self.config.n_units
            )));
        }
        let z = Array2::from_shape_vec((m.n_units(), m.n_steps()), m.to_f64_row_major())
            .expect("shape matches by construction");
        Ok(self.decode_code(&z, mu).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            n_features: 6,
            hidden: 5,
            n_units: 4,
            enc_kernel: 3,
            dec_kernel: 3,
            mu_placement: MuPlacement::Both,
        }
    }

    fn input(f: usize, t: usize) -> Array2<f64> {
        Array2::from_shape_fn((f, t), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0)
    }

    #[test]
    fn shapes_and_determinism() {
        let model = ToyAutoencoder::new(small(), Variant::Sparse, 1);
        let x = input(6, 20);
        let a = model.forward(&x, None).unwrap();
        let b = model.forward(&x, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z.dim(), (4, 20));
        assert_eq!(a.x_hat.dim(), (6, 20));
        assert!(a.z.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn mu_validation() {
        let free = ToyAutoencoder::new(small(), Variant::Free, 1);
        let x = input(6, 8);
        assert!(free.forward(&x, Some(3)).is_err());
        let mu = ToyAutoencoder::new(small(), Variant::MuSparse, 1);
        assert!(mu.forward(&x, None).is_err());
        assert!(mu.forward(&x, Some(32)).is_err());
        assert!(mu.forward(&x, Some(31)).is_ok());
        assert!(free.forward(&input(5, 8), None).is_err());
    }

    #[test]
    fn saturated_head_gives_empty_code() {
        let mut model = ToyAutoencoder::new(small(), Variant::Free, 2);
        model.head.weight.value.fill(0.0);
        model.bn.shift.value.fill(-50.0);
        let x = input(6, 12);
        let out = model.forward(&x, None).unwrap();
        assert_eq!(out.z.sum(), 0.0);
        let (dec_zero, _) = model.decode_code(&Array2::zeros((4, 12)), None);
        assert_eq!(out.x_hat, dec_zero);
        let m = model.encode_to_matrix(&x, None).unwrap();
        assert_eq!(m.event_count(), 0);
    }

    #[test]
    fn matrix_bridge_matches_direct_decode() {
        let model = ToyAutoencoder::new(small(), Variant::Free, 3);
        let x = input(6, 16);
        let out = model.forward(&x, None).unwrap();
        let m = model.encode_to_matrix(&x, None).unwrap();
        assert_eq!(m.event_count() as f64, out.z.sum());
        assert_eq!(model.decode_matrix(&m, None).unwrap(), out.x_hat);
    }
}
