//! Central finite-difference gradient checks.
//!
//! The checker only ever calls forward functions; analytic gradients come
//! from the backward passes under test. [`run_suite`] covers every
//! differentiable operation on small randomized shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc;
use crate::encdec::{self, AttentionMemory};
use crate::hybrid;
use crate::model::{Attention, Model, ModelDims};
use crate::numerics::{self, Blstm, Linear, LstmCell, LstmState, Matrix};
use crate::phoneset::{InventoryMode, PhoneInventory, SymbolId};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so near-zero gradients are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_relative_error <= TOLERANCE
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
/// Returns the largest relative error.
pub fn compare<F>(x: &[f64], analytic: &[f64], mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + STEP;
        let up = f(&probe);
        probe[i] = orig - STEP;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[i], numeric);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    worst
}

/// Knobs for exercising the harness itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteOptions {
    /// Perturbs every analytic gradient before comparison (negative control).
    pub corrupt_gradients: bool,
    pub seed: u64,
}

fn corrupt(v: &mut [f64], opts: SuiteOptions) {
    if opts.corrupt_gradients {
        for g in v.iter_mut() {
            *g = *g * 1.01 + 1e-3;
        }
    }
}

fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    numerics::uniform_vec(n, 1.0, rng)
}

fn report(name: &'static str, checked: usize, worst: f64) -> GradCheckReport {
    GradCheckReport {
        name,
        checked,
        max_relative_error: worst,
    }
}

fn flatten(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn split<'a>(flat: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut off = 0;
    for &n in sizes {
        out.push(&flat[off..off + n]);
        off += n;
    }
    out
}

pub fn check_linb(opts: SuiteOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x11);
    let (n_in, n_out) = (4, 3);
    let lin = Linear::uniform(n_in, n_out, 1.0, &mut rng);
    let x = random_vec(n_in, &mut rng);
    let r = random_vec(n_out, &mut rng);

    let mut grad = Linear::zeros(n_in, n_out);
    let mut dx = vec![0.0; n_in];
    lin.backward(&x, &r, &mut grad, Some(&mut dx));
    let mut analytic = flatten(&[grad.weight.data(), &grad.bias, &dx]);
    corrupt(&mut analytic, opts);

    let sizes = [n_in * n_out, n_out, n_in];
    let point = flatten(&[lin.weight.data(), &lin.bias, &x]);
    let worst = compare(&point, &analytic, |p| {
        let parts = split(p, &sizes);
        let l = Linear::new(
            Matrix::from_vec(n_out, n_in, parts[0].to_vec()).unwrap(),
            parts[1].to_vec(),
        )
        .unwrap();
        numerics::dot(&numerics::linb(parts[2], &l).unwrap(), &r)
    });
    report("linb", point.len(), worst)
}

pub fn check_lstm_step(opts: SuiteOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x22);
    let (n_in, hidden) = (4, 3);
    let cell = LstmCell::uniform(n_in, hidden, 0.8, &mut rng);
    let x = random_vec(n_in, &mut rng);
    let state = LstmState {
        h: random_vec(hidden, &mut rng),
        c: random_vec(hidden, &mut rng),
    };
    let r_h = random_vec(hidden, &mut rng);
    let r_c = random_vec(hidden, &mut rng);

    let (_, cache) = cell.step(&x, &state);
    let mut grad = LstmCell::zeros(n_in, hidden);
    let (dx, dh, dc) = cell.step_backward(&cache, &x, &state.h, &r_h, &r_c, &mut grad);
    let mut analytic = flatten(&[
        grad.w_input.data(),
        grad.w_hidden.data(),
        &grad.bias,
        &dx,
        &dh,
        &dc,
    ]);
    corrupt(&mut analytic, opts);

    let sizes = [4 * hidden * n_in, 4 * hidden * hidden, 4 * hidden, n_in, hidden, hidden];
    let point = flatten(&[
        cell.w_input.data(),
        cell.w_hidden.data(),
        &cell.bias,
        &x,
        &state.h,
        &state.c,
    ]);
    let worst = compare(&point, &analytic, |p| {
        let parts = split(p, &sizes);
        let c = LstmCell {
            w_input: Matrix::from_vec(4 * hidden, n_in, parts[0].to_vec()).unwrap(),
            w_hidden: Matrix::from_vec(4 * hidden, hidden, parts[1].to_vec()).unwrap(),
            bias: parts[2].to_vec(),
        };
        let st = LstmState {
            h: parts[4].to_vec(),
            c: parts[5].to_vec(),
        };
        let out = numerics::lstm_step(parts[3], &st, &c).unwrap();
        numerics::dot(&out.h, &r_h) + numerics::dot(&out.c, &r_c)
    });
    report("lstm_step", point.len(), worst)
}

pub fn check_blstm_layer(opts: SuiteOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x33);
    let (t_len, feat, hidden) = (4, 3, 2);
    let layer = Blstm::uniform(feat, hidden, 0.8, &mut rng);
    let seq = Matrix::uniform(t_len, feat, 1.0, &mut rng);
    let r = Matrix::uniform(t_len, 2 * hidden, 1.0, &mut rng);

    let (_, cache) = layer.forward(&seq);
    let mut grad = Blstm::zeros(feat, hidden);
    let dseq = layer.backward(&seq, &cache, &r, &mut grad, true).unwrap();
    let mut analytic: Vec<f64> = grad.tensors().flat_map(|t| t.iter().copied()).collect();
    analytic.extend_from_slice(dseq.data());
    corrupt(&mut analytic, opts);

    let mut point: Vec<f64> = layer.tensors().flat_map(|t| t.iter().copied()).collect();
    let n_params = point.len();
    point.extend_from_slice(seq.data());
    let worst = compare(&point, &analytic, |p| {
        let mut l = layer.clone();
        let mut off = 0;
        for t in l.tensors_mut() {
            t.copy_from_slice(&p[off..off + t.len()]);
            off += t.len();
        }
        let s = Matrix::from_vec(t_len, feat, p[n_params..].to_vec()).unwrap();
        let out = numerics::blstm_layer(&s, &l).unwrap();
        numerics::dot(out.data(), r.data())
    });
    report("blstm_layer", point.len(), worst)
}

fn tiny_dims(feat_dim: usize) -> ModelDims {
    ModelDims {
        feat_dim,
        enc_layers: 2,
        enc_hidden: 2,
        subsample_layers: 2,
        att_dim: 3,
        conv_filters: 2,
        conv_width: 3,
        dec_hidden: 3,
        embed_dim: 2,
    }
}

fn tiny_model(seed: u64, feat_dim: usize) -> Model {
    let inv = PhoneInventory::build(&["a", "b"], InventoryMode::PerPhoneAnti).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(inv, tiny_dims(feat_dim), &mut rng).unwrap();
    // Larger weights than the training init keep gradients well away from zero.
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v *= 5.0;
        }
    }
    model
}

fn attention_tensors(att: &Attention) -> Vec<f64> {
    flatten(&[
        att.query.data(),
        att.key.weight.data(),
        &att.key.bias,
        att.location.data(),
        att.conv.data(),
        &att.score,
    ])
}

fn load_attention(att: &mut Attention, flat: &[f64]) {
    let mut off = 0;
    for t in [
        att.query.data_mut(),
        att.key.weight.data_mut(),
        &mut att.key.bias[..],
        att.location.data_mut(),
        att.conv.data_mut(),
        &mut att.score[..],
    ] {
        t.copy_from_slice(&flat[off..off + t.len()]);
        off += t.len();
    }
}

/// One location-aware attention step: parameters, encoder rows, query and
/// previous weights.
pub fn check_attention_step(opts: SuiteOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x44);
    let model = tiny_model(opts.seed ^ 0x45, 3);
    let att = &model.params.attention;
    let frames = 5;
    let enc_dim = model.dims.enc_dim();
    let hidden = Matrix::uniform(frames, enc_dim, 1.0, &mut rng);
    let query = random_vec(model.dims.dec_hidden, &mut rng);
    let raw: Vec<f64> = (0..frames).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let prev: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let r_ctx = random_vec(enc_dim, &mut rng);
    let r_w = random_vec(frames, &mut rng);

    let memory = AttentionMemory::new(att, &hidden);
    let (_, cache) = encdec::attend_forward(att, &memory, &query, &prev);
    let mut grad = model.params.zeros_like().attention;
    let mut d_keys = Matrix::zeros(frames, att.score.len());
    let mut d_hidden = Matrix::zeros(frames, enc_dim);
    let (d_prev, d_query) = encdec::attend_backward(
        att, &memory, &query, &prev, &cache, &r_ctx, &r_w, &mut grad, &mut d_keys, &mut d_hidden,
    );
    memory.backward_into(att, &d_keys, &mut grad, &mut d_hidden);

    let mut analytic = attention_tensors(&grad);
    analytic.extend_from_slice(d_hidden.data());
    analytic.extend_from_slice(&d_query);
    analytic.extend_from_slice(&d_prev);
    corrupt(&mut analytic, opts);

    let mut point = attention_tensors(att);
    let n_att = point.len();
    point.extend_from_slice(hidden.data());
    point.extend_from_slice(&query);
    point.extend_from_slice(&prev);
    let n_hidden = frames * enc_dim;
    let n_query = query.len();
    let worst = compare(&point, &analytic, |p| {
        let mut a = att.clone();
        load_attention(&mut a, &p[..n_att]);
        let h = Matrix::from_vec(frames, enc_dim, p[n_att..n_att + n_hidden].to_vec()).unwrap();
        let q = &p[n_att + n_hidden..n_att + n_hidden + n_query];
        let pw = &p[n_att + n_hidden + n_query..];
        let mem = AttentionMemory::new(&a, &h);
        let (ctx, c) = encdec::attend_forward(&a, &mem, q, pw);
        numerics::dot(&ctx, &r_ctx) + numerics::dot(&c.weights, &r_w)
    });
    report("attention_step", point.len(), worst)
}

fn check_model_loss(
    name: &'static str,
    opts: SuiteOptions,
    lambda: f64,
    frames: usize,
    feat_dim: usize,
    targets: &[SymbolId],
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x55 ^ frames as u64);
    let model = tiny_model(opts.seed ^ 0x56, feat_dim);
    let features = Matrix::uniform(frames, feat_dim, 1.0, &mut rng);

    let mut grad = model.params.zeros_like();
    let mut d_features = Matrix::zeros(0, 0);
    hybrid::hybrid_loss_grad(&features, targets, &model, lambda, &mut grad, Some(&mut d_features))
        .unwrap();
    let mut analytic = grad.to_flat();
    analytic.extend_from_slice(d_features.data());
    corrupt(&mut analytic, opts);

    let mut point = model.params.to_flat();
    let n_params = point.len();
    point.extend_from_slice(features.data());
    let mut probe = model.clone();
    let worst = compare(&point, &analytic, |p| {
        probe.params.load_flat(&p[..n_params]).unwrap();
        let f = Matrix::from_vec(frames, feat_dim, p[n_params..].to_vec()).unwrap();
        if lambda == 0.0 {
            encdec::attention_nll(&f, targets, &probe).unwrap()
        } else {
            hybrid::hybrid_loss(&f, targets, &probe, lambda).unwrap()
        }
    });
    report(name, point.len(), worst)
}

/// Full attention branch (encoder, attention, decoder) on T=8, F=4.
pub fn check_attention_nll(opts: SuiteOptions) -> GradCheckReport {
    let targets = [SymbolId(0), SymbolId(3), SymbolId(1)];
    check_model_loss("attention_nll", opts, 0.0, 8, 4, &targets)
}

/// Both branches through the shared encoder.
pub fn check_hybrid_loss(opts: SuiteOptions) -> GradCheckReport {
    let targets = [SymbolId(2), SymbolId(0)];
    check_model_loss("hybrid_loss", opts, 0.3, 8, 4, &targets)
}

/// CTC head plus encoder (lambda = 1).
pub fn check_ctc_head(opts: SuiteOptions) -> GradCheckReport {
    let targets = [SymbolId(1), SymbolId(1)];
    check_model_loss("ctc_head", opts, 1.0, 12, 3, &targets)
}

/// Forward-backward gradient with respect to free log-probabilities.
pub fn check_ctc_loss(opts: SuiteOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x66);
    let (frames, labels) = (6, 4);
    let mut lp = Matrix::zeros(frames, labels);
    for s in 0..frames {
        let row = numerics::log_softmax(&random_vec(labels, &mut rng));
        lp.row_mut(s).copy_from_slice(&row);
    }
    let target = [SymbolId(0), SymbolId(2), SymbolId(2)];
    let out = ctc::ctc_loss(&lp, &target).unwrap();
    let mut analytic = out.grad.data().to_vec();
    corrupt(&mut analytic, opts);
    let worst = compare(lp.data(), &analytic, |p| {
        let m = Matrix::from_vec(frames, labels, p.to_vec()).unwrap();
        ctc::ctc_loss(&m, &target).unwrap().loss
    });
    report("ctc_loss", lp.data().len(), worst)
}

pub fn run_suite(opts: SuiteOptions) -> Vec<GradCheckReport> {
    vec![
        check_linb(opts),
        check_lstm_step(opts),
        check_blstm_layer(opts),
        check_attention_step(opts),
        check_attention_nll(opts),
        check_ctc_loss(opts),
        check_ctc_head(opts),
        check_hybrid_loss(opts),
    ]
}
