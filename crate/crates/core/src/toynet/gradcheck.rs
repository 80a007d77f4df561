//! Central finite-difference checks of every smooth backward pass.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, BiRecurrentMixer, Conv1d, Embedding, Param};
use super::loss::reconstruction;
use super::model::{ModelConfig, MuPlacement, ToyAutoencoder, Variant};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

fn weighted(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn assert_close(fd: f64, analytic: f64, what: &str) {
    let denom = fd.abs().max(analytic.abs()).max(1e-5);
    let rel = (fd - analytic).abs() / denom;
    assert!(rel < TOL, "{what}: finite difference {fd} vs analytic {analytic} (rel {rel:e})");
}

/// Perturbs every parameter entry of `probe` and compares with the
/// gradients already accumulated in `analytic`.
fn check_params<M: Clone>(
    probe: &M,
    analytic: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Param>,
    loss: impl Fn(&M) -> f64,
    label: &str,
) {
    let expected: Vec<Vec<f64>> = params(analytic).iter().map(|p| p.grad.iter().copied().collect()).collect();
    let mut m = probe.clone();
    let count = params(&mut m).len();
    for k in 0..count {
        let len = params(&mut m)[k].len();
        for e in 0..len {
            let orig = params(&mut m)[k].value.as_slice().unwrap()[e];
            params(&mut m)[k].value.as_slice_mut().unwrap()[e] = orig + H;
            let up = loss(&m);
            params(&mut m)[k].value.as_slice_mut().unwrap()[e] = orig - H;
            let down = loss(&m);
            params(&mut m)[k].value.as_slice_mut().unwrap()[e] = orig;
            assert_close((up - down) / (2.0 * H), expected[k][e], &format!("{label} param {k}[{e}]"));
        }
    }
}

fn check_input(x: &Array2<f64>, analytic: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64, label: &str) {
    let mut probe = x.clone();
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let orig = probe[[r, c]];
            probe[[r, c]] = orig + H;
            let up = loss(&probe);
            probe[[r, c]] = orig - H;
            let down = loss(&probe);
            probe[[r, c]] = orig;
            assert_close((up - down) / (2.0 * H), analytic[[r, c]], &format!("{label} input[{r},{c}]"));
        }
    }
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1, 3, 5] {
        let conv = Conv1d::new(&mut rng, 3, 4, k);
        let x = rand_array(&mut rng, 3, 9, 1.0);
        let r = rand_array(&mut rng, 4, 9, 1.0);
        let mut analytic = conv.clone();
        let (_, cache) = analytic.forward(&x);
        let dx = analytic.backward(&cache, &r);
        check_params(&conv, &mut analytic, |c| c.params_mut().into_iter().collect(), |c| weighted(&c.forward(&x).0, &r), "conv");
        check_input(&x, &dx, |xi| weighted(&conv.forward(xi).0, &r), "conv");
    }
}

#[test]
fn mixer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mixer = BiRecurrentMixer::new(&mut rng, 4);
    mixer.bias.value = rand_array(&mut rng, 4, 1, 0.3);
    let x = rand_array(&mut rng, 4, 12, 1.0);
    let r = rand_array(&mut rng, 4, 12, 1.0);
    let mut analytic = mixer.clone();
    let (_, cache) = analytic.forward(&x);
    let dx = analytic.backward(&cache, &r);
    check_params(&mixer, &mut analytic, |m| m.params_mut().into_iter().collect(), |m| weighted(&m.forward(&x).0, &r), "mixer");
    check_input(&x, &dx, |xi| weighted(&mixer.forward(xi).0, &r), "mixer");
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bn = BatchNorm::new(3);
    bn.scale.value = rand_array(&mut rng, 3, 1, 2.0);
    bn.shift.value = rand_array(&mut rng, 3, 1, 1.0);
    let xs = vec![rand_array(&mut rng, 3, 5, 2.0), rand_array(&mut rng, 3, 5, 2.0)];
    let rs = vec![rand_array(&mut rng, 3, 5, 1.0), rand_array(&mut rng, 3, 5, 1.0)];
    let loss = |b: &BatchNorm, xs: &[Array2<f64>]| -> f64 {
        let (ys, _, _, _) = b.forward_batch_stats(xs);
        ys.iter().zip(&rs).map(|(y, r)| weighted(y, r)).sum()
    };
    let mut analytic = bn.clone();
    let (_, cache, _, _) = analytic.forward_batch_stats(&xs);
    let dxs = analytic.backward(&cache, &rs);
    check_params(&bn, &mut analytic, |b| b.params_mut().into_iter().collect(), |b| loss(b, &xs), "bn");
    for s in 0..xs.len() {
        check_input(
            &xs[s],
            &dxs[s],
            |xi| {
                let mut probe = xs.clone();
                probe[s] = xi.clone();
                loss(&bn, &probe)
            },
            "bn",
        );
    }
}

#[test]
fn embedding_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let emb = Embedding::new(&mut rng, 3, 5);
    let base = rand_array(&mut rng, 3, 6, 1.0);
    let r = rand_array(&mut rng, 3, 6, 1.0);
    let loss = |e: &Embedding| {
        let mut y = base.clone();
        e.add_to(&mut y, 2);
        weighted(&y.mapv(f64::tanh), &r)
    };
    let mut analytic = emb.clone();
    let mut y = base.clone();
    analytic.add_to(&mut y, 2);
    let dy = &r * &y.mapv(|v| 1.0 - v.tanh().powi(2));
    analytic.backward(&dy, 2);
    check_params(&emb, &mut analytic, |e| vec![&mut e.table], loss, "embedding");
}

fn tiny(placement: MuPlacement) -> ModelConfig {
    ModelConfig {
        n_features: 3,
        hidden: 4,
        n_units: 3,
        enc_kernel: 3,
        dec_kernel: 3,
        mu_placement: placement,
    }
}

#[test]
fn encoder_chain_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (variant, mu) in [(Variant::Sparse, None), (Variant::MuSparse, Some(7))] {
        let model = ToyAutoencoder::new(tiny(MuPlacement::Both), variant, 11);
        let x = rand_array(&mut rng, 3, 8, 1.0);
        let r = rand_array(&mut rng, 3, 8, 1.0);
        let mut analytic = model.clone();
        analytic.zero_grad();
        let (_, cache) = analytic.encode_logits(&x, mu);
        analytic.backward_encoder(&cache, &r);
        let loss = |m: &ToyAutoencoder| weighted(&m.encode_logits(&x, mu).0, &r);
        check_params(&model, &mut analytic, |m| m.params_mut(), loss, "encoder");
    }
}

#[test]
fn encoder_with_batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = ToyAutoencoder::new(tiny(MuPlacement::EncoderOutput), Variant::Free, 12);
    let xs = [rand_array(&mut rng, 3, 6, 1.0), rand_array(&mut rng, 3, 6, 1.0)];
    let rs = [rand_array(&mut rng, 3, 6, 1.0), rand_array(&mut rng, 3, 6, 1.0)];
    let loss = |m: &ToyAutoencoder| {
        let raws: Vec<_> = xs.iter().map(|x| m.encode_logits(x, None).0).collect();
        let (ys, _, _, _) = m.bn.forward_batch_stats(&raws);
        ys.iter().zip(&rs).map(|(y, r)| weighted(y, r)).sum::<f64>()
    };
    let mut analytic = model.clone();
    analytic.zero_grad();
    let (raws, caches): (Vec<_>, Vec<_>) = xs.iter().map(|x| analytic.encode_logits(x, None)).unzip();
    let (_, bn_cache, _, _) = analytic.bn.forward_batch_stats(&raws);
    let d_raws = analytic.bn.backward(&bn_cache, &rs);
    for (c, d) in caches.iter().zip(&d_raws) {
        analytic.backward_encoder(c, d);
    }
    check_params(&model, &mut analytic, |m| m.params_mut(), loss, "encoder+bn");
}

#[test]
fn decoder_chain_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (variant, mu) in [(Variant::Free, None), (Variant::MuSparse, Some(30))] {
        let model = ToyAutoencoder::new(tiny(MuPlacement::Both), variant, 13);
        let z = rand_array(&mut rng, 3, 7, 1.0);
        let x = rand_array(&mut rng, 3, 7, 1.0);
        let loss = |m: &ToyAutoencoder, zi: &Array2<f64>| reconstruction(&x, &m.decode_code(zi, mu).0).unwrap().0;
        let mut analytic = model.clone();
        analytic.zero_grad();
        let (x_hat, cache) = analytic.decode_code(&z, mu);
        let (_, d_xhat) = reconstruction(&x, &x_hat).unwrap();
        let dz = analytic.backward_decoder(&cache, &d_xhat);
        check_params(&model, &mut analytic, |m| m.params_mut(), |m| loss(m, &z), "decoder");
        check_input(&z, &dz, |zi| loss(&model, zi), "decoder");
    }
}

#[test]
fn rate_loss_slope_matches_event_derivative() {
    use super::loss::{sparsity, sparsity_mu};
    use crate::codec::width;
    // Between offset-width changes the clipped cost is affine in S.
    for (n, t, s) in [(32u64, 256u64, 300u64), (5, 10, 5), (80, 1024, 1000)] {
        assert_eq!(width(s + 1), width(s + 2));
        let a = sparsity(n, t, s, 0.0);
        let b = sparsity(n, t, s + 1, 0.0);
        assert_eq!(b.value - a.value, a.d_events);
    }
    let a = sparsity_mu(32, 256, 900, 8);
    let b = sparsity_mu(32, 256, 901, 8);
    assert_eq!(b.value - a.value, a.d_events);
}
