//! Attention branch: subsampling BLSTM encoder, location-aware attention,
//! LSTM decoder step and the teacher-forced sequence likelihood.

use crate::error::{Error, Result};
use crate::model::{Attention, Encoder, Model, ModelDims, ModelParams};
use crate::numerics::{
    add_assign, dot, log_softmax, BlstmCache, LstmState, LstmStepCache, Matrix,
};
use crate::phoneset::SymbolId;

/// Encoder output `H^E`, one row per subsampled frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Matrix,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.rows() == 0
    }
}

pub(crate) struct EncoderCache {
    inputs: Vec<Matrix>,
    caches: Vec<BlstmCache>,
    full_rows: Vec<usize>,
}

pub(crate) fn encoder_forward(
    encoder: &Encoder,
    dims: &ModelDims,
    features: &Matrix,
) -> (Matrix, EncoderCache) {
    let mut inputs = Vec::with_capacity(encoder.layers.len());
    let mut caches = Vec::with_capacity(encoder.layers.len());
    let mut full_rows = Vec::with_capacity(encoder.layers.len());
    let mut x = features.clone();
    for (l, layer) in encoder.layers.iter().enumerate() {
        let (out, cache) = layer.forward(&x);
        inputs.push(x);
        caches.push(cache);
        full_rows.push(out.rows());
        x = if l < dims.subsample_layers {
            out.every_nth_row(2)
        } else {
            out
        };
    }
    (
        x,
        EncoderCache {
            inputs,
            caches,
            full_rows,
        },
    )
}

/// Returns dL/d(features) when `want_input_grad`.
pub(crate) fn encoder_backward(
    encoder: &Encoder,
    dims: &ModelDims,
    cache: &EncoderCache,
    d_hidden: &Matrix,
    grad: &mut Encoder,
    want_input_grad: bool,
) -> Option<Matrix> {
    let mut d = d_hidden.clone();
    for l in (0..encoder.layers.len()).rev() {
        let d_out = if l < dims.subsample_layers {
            let mut full = Matrix::zeros(cache.full_rows[l], d.cols());
            for (i, row) in d.iter_rows().enumerate() {
                full.row_mut(2 * i).copy_from_slice(row);
            }
            full
        } else {
            d
        };
        let need = l > 0 || want_input_grad;
        d = encoder.layers[l].backward(
            &cache.inputs[l],
            &cache.caches[l],
            &d_out,
            &mut grad.layers[l],
            need,
        )?;
    }
    Some(d)
}

pub fn encode(features: &Matrix, model: &Model) -> Result<EncoderOutput> {
    check_features(features, model)?;
    let (hidden, _) = encoder_forward(&model.params.encoder, &model.dims, features);
    Ok(EncoderOutput { hidden })
}

pub(crate) fn check_features(features: &Matrix, model: &Model) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::shape("utterance has no frames"));
    }
    if features.cols() != model.dims.feat_dim {
        return Err(Error::shape(format!(
            "feature dimension {} but the model expects {}",
            features.cols(),
            model.dims.feat_dim
        )));
    }
    Ok(())
}

/// Decoder recurrent state plus the previous attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub lstm: LstmState,
    pub attention: Vec<f64>,
}

impl DecoderState {
    /// Zero LSTM state and uniform attention over `frames` encoder steps.
    pub fn initial(dec_hidden: usize, frames: usize) -> Self {
        DecoderState {
            lstm: LstmState::zeros(dec_hidden),
            attention: vec![1.0 / frames as f64; frames],
        }
    }
}

/// Encoder output with the attention keys `V h_s + b` precomputed.
pub(crate) struct AttentionMemory<'a> {
    pub hidden: &'a Matrix,
    pub keys: Matrix,
}

impl<'a> AttentionMemory<'a> {
    pub fn new(att: &Attention, hidden: &'a Matrix) -> Self {
        let mut keys = Matrix::zeros(hidden.rows(), att.key.output_dim());
        for s in 0..hidden.rows() {
            keys.row_mut(s).copy_from_slice(&att.key.forward(hidden.row(s)));
        }
        AttentionMemory { hidden, keys }
    }

    /// Pushes dL/d(keys) back into the key projection and the encoder rows.
    pub(crate) fn backward_into(&self, att: &Attention, d_keys: &Matrix, grad: &mut Attention, d_hidden: &mut Matrix) {
        for s in 0..self.hidden.rows() {
            att.key.backward(
                self.hidden.row(s),
                d_keys.row(s),
                &mut grad.key,
                Some(d_hidden.row_mut(s)),
            );
        }
    }
}

pub(crate) struct AttendCache {
    location: Matrix,
    activation: Matrix,
    pub weights: Vec<f64>,
}

/// Convolves the previous weights with every filter (zero padded, same length).
fn location_features(conv: &Matrix, prev: &[f64]) -> Matrix {
    let frames = prev.len();
    let width = conv.cols();
    let pad = width / 2;
    let mut out = Matrix::zeros(frames, conv.rows());
    for s in 0..frames {
        let row = out.row_mut(s);
        for (k, f) in row.iter_mut().enumerate() {
            let taps = conv.row(k);
            let mut acc = 0.0;
            for (j, &w) in taps.iter().enumerate() {
                let idx = s + j;
                if idx >= pad && idx - pad < frames {
                    acc += w * prev[idx - pad];
                }
            }
            *f = acc;
        }
    }
    out
}

pub(crate) fn attend_forward(
    att: &Attention,
    memory: &AttentionMemory<'_>,
    query_h: &[f64],
    prev: &[f64],
) -> (Vec<f64>, AttendCache) {
    let frames = memory.hidden.rows();
    let a_dim = att.score.len();
    let location = location_features(&att.conv, prev);
    let mut q = vec![0.0; a_dim];
    att.query.gemv_add(query_h, &mut q);

    let mut activation = Matrix::zeros(frames, a_dim);
    let mut scores = vec![0.0; frames];
    for s in 0..frames {
        let row = activation.row_mut(s);
        row.copy_from_slice(memory.keys.row(s));
        add_assign(row, &q);
        att.location.gemv_add(location.row(s), row);
        row.iter_mut().for_each(|v| *v = v.tanh());
        scores[s] = dot(&att.score, row);
    }
    let weights = crate::numerics::softmax_unchecked(&scores);

    let mut context = vec![0.0; memory.hidden.cols()];
    for (s, &a) in weights.iter().enumerate() {
        crate::numerics::axpy(a, memory.hidden.row(s), &mut context);
    }
    (
        context,
        AttendCache {
            location,
            activation,
            weights,
        },
    )
}

/// Returns `(d_prev_weights, d_query)`; encoder and key gradients accumulate
/// into `d_hidden` / `d_keys`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward(
    att: &Attention,
    memory: &AttentionMemory<'_>,
    query_h: &[f64],
    prev: &[f64],
    cache: &AttendCache,
    d_context: &[f64],
    d_weights_ext: &[f64],
    grad: &mut Attention,
    d_keys: &mut Matrix,
    d_hidden: &mut Matrix,
) -> (Vec<f64>, Vec<f64>) {
    let frames = memory.hidden.rows();
    let a_dim = att.score.len();
    let weights = &cache.weights;

    let mut d_weights = d_weights_ext.to_vec();
    for s in 0..frames {
        d_weights[s] += dot(d_context, memory.hidden.row(s));
        crate::numerics::axpy(weights[s], d_context, d_hidden.row_mut(s));
    }
    let d_scores = crate::numerics::softmax_backward(weights, &d_weights);

    let mut d_q = vec![0.0; a_dim];
    let mut d_pre = vec![0.0; a_dim];
    let mut d_loc = vec![0.0; att.conv.rows()];
    let mut d_prev = vec![0.0; frames];
    let width = att.conv.cols();
    let pad = width / 2;
    for s in 0..frames {
        let act = cache.activation.row(s);
        crate::numerics::axpy(d_scores[s], act, &mut grad.score);
        for i in 0..a_dim {
            d_pre[i] = d_scores[s] * att.score[i] * (1.0 - act[i] * act[i]);
        }
        add_assign(&mut d_q, &d_pre);
        add_assign(d_keys.row_mut(s), &d_pre);
        grad.location.ger_add(&d_pre, cache.location.row(s));
        d_loc.iter_mut().for_each(|v| *v = 0.0);
        att.location.gemv_t_add(&d_pre, &mut d_loc);
        for (k, &dl) in d_loc.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let taps = att.conv.row(k);
            let g_taps = grad.conv.row_mut(k);
            for j in 0..width {
                let idx = s + j;
                if idx >= pad && idx - pad < frames {
                    g_taps[j] += dl * prev[idx - pad];
                    d_prev[idx - pad] += dl * taps[j];
                }
            }
        }
    }
    grad.query.ger_add(&d_q, query_h);
    let mut d_query = vec![0.0; query_h.len()];
    att.query.gemv_t_add(&d_q, &mut d_query);
    (d_prev, d_query)
}

/// Context vector and attention weights for the next decoder step.
pub fn attend(
    state: &DecoderState,
    encoded: &EncoderOutput,
    model: &Model,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_encoded(encoded, model)?;
    check_state(state, encoded, model)?;
    let memory = AttentionMemory::new(&model.params.attention, &encoded.hidden);
    let (context, cache) =
        attend_forward(&model.params.attention, &memory, &state.lstm.h, &state.attention);
    Ok((context, cache.weights))
}

fn check_encoded(encoded: &EncoderOutput, model: &Model) -> Result<()> {
    if encoded.is_empty() {
        return Err(Error::shape("empty encoder output"));
    }
    if encoded.hidden.cols() != model.dims.enc_dim() {
        return Err(Error::shape(format!(
            "encoder width {} but the model expects {}",
            encoded.hidden.cols(),
            model.dims.enc_dim()
        )));
    }
    Ok(())
}

fn check_state(state: &DecoderState, encoded: &EncoderOutput, model: &Model) -> Result<()> {
    if state.attention.len() != encoded.len() {
        return Err(Error::shape(format!(
            "{} previous attention weights for {} encoder frames",
            state.attention.len(),
            encoded.len()
        )));
    }
    let hd = model.dims.dec_hidden;
    if state.lstm.h.len() != hd || state.lstm.c.len() != hd {
        return Err(Error::shape("decoder state width mismatch"));
    }
    Ok(())
}

pub(crate) struct StepCache {
    embed_row: usize,
    query: Vec<f64>,
    prev_weights: Vec<f64>,
    attend: AttendCache,
    lstm_input: Vec<f64>,
    lstm: LstmStepCache,
    readout_input: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// One decoder step; returns log-probabilities over U plus `<eos>`.
pub(crate) fn decoder_step_forward(
    model: &Model,
    memory: &AttentionMemory<'_>,
    embed_row: usize,
    state: &DecoderState,
) -> (DecoderState, StepCache) {
    let params = &model.params;
    let (context, attend_cache) =
        attend_forward(&params.attention, memory, &state.lstm.h, &state.attention);

    let mut lstm_input = params.decoder.embed.row(embed_row).to_vec();
    lstm_input.extend_from_slice(&context);
    let (lstm_state, lstm_cache) = params.decoder.lstm.step(&lstm_input, &state.lstm);

    let mut readout_input = lstm_state.h.clone();
    readout_input.extend_from_slice(&context);
    let logits = params.decoder.readout.forward(&readout_input);
    let log_probs = log_softmax(&logits);

    let next = DecoderState {
        lstm: lstm_state,
        attention: attend_cache.weights.clone(),
    };
    let cache = StepCache {
        embed_row,
        query: state.lstm.h.clone(),
        prev_weights: state.attention.clone(),
        attend: attend_cache,
        lstm_input,
        lstm: lstm_cache,
        readout_input,
        log_probs,
    };
    (next, cache)
}

/// Output distribution (probabilities) over U plus `<eos>` and the new state.
pub fn decoder_step(
    y_prev: SymbolId,
    state: &DecoderState,
    encoded: &EncoderOutput,
    model: &Model,
) -> Result<(Vec<f64>, DecoderState)> {
    check_encoded(encoded, model)?;
    check_state(state, encoded, model)?;
    let row = model.embed_row(y_prev)?;
    let memory = AttentionMemory::new(&model.params.attention, &encoded.hidden);
    let (next, cache) = decoder_step_forward(model, &memory, row, state);
    let probs = cache.log_probs.iter().map(|v| v.exp()).collect();
    Ok((probs, next))
}

/// Teacher-forced decoder unroll over `targets` followed by `<eos>`.
pub(crate) struct AttentionUnroll {
    pub loss: f64,
    caches: Vec<StepCache>,
    outputs: Vec<usize>,
}

pub(crate) fn attention_unroll(
    model: &Model,
    memory: &AttentionMemory<'_>,
    targets: &[SymbolId],
) -> AttentionUnroll {
    let mut state = DecoderState::initial(model.dims.dec_hidden, memory.hidden.rows());
    let mut row = model.num_phones();
    let mut caches = Vec::with_capacity(targets.len() + 1);
    let mut outputs = Vec::with_capacity(targets.len() + 1);
    let mut loss = 0.0;
    for step in 0..=targets.len() {
        let out = targets.get(step).map_or(model.eos_index(), |y| y.index());
        let (next, cache) = decoder_step_forward(model, memory, row, &state);
        loss -= cache.log_probs[out];
        caches.push(cache);
        outputs.push(out);
        if let Some(y) = targets.get(step) {
            row = y.index();
        }
        state = next;
    }
    AttentionUnroll {
        loss,
        caches,
        outputs,
    }
}

/// Backward of `scale * unroll.loss`. Parameter gradients land in `grad`,
/// encoder-output gradients in `d_hidden`.
pub(crate) fn attention_backward(
    model: &Model,
    memory: &AttentionMemory<'_>,
    unroll: &AttentionUnroll,
    scale: f64,
    grad: &mut ModelParams,
    d_hidden: &mut Matrix,
) {
    let params = &model.params;
    let hd = model.dims.dec_hidden;
    let embed_dim = model.dims.embed_dim;
    let frames = memory.hidden.rows();
    let mut d_keys = Matrix::zeros(frames, params.attention.score.len());
    let mut dh_carry = vec![0.0; hd];
    let mut dc_carry = vec![0.0; hd];
    let mut dw_carry = vec![0.0; frames];

    for (cache, &out) in unroll.caches.iter().zip(&unroll.outputs).rev() {
        let mut d_logits: Vec<f64> = cache.log_probs.iter().map(|lp| scale * lp.exp()).collect();
        d_logits[out] -= scale;

        let mut d_readout_in = vec![0.0; cache.readout_input.len()];
        params.decoder.readout.backward(
            &cache.readout_input,
            &d_logits,
            &mut grad.decoder.readout,
            Some(&mut d_readout_in),
        );
        let mut dh = d_readout_in[..hd].to_vec();
        add_assign(&mut dh, &dh_carry);
        let mut d_context = d_readout_in[hd..].to_vec();

        let (dx, dh_prev, dc_prev) = params.decoder.lstm.step_backward(
            &cache.lstm,
            &cache.lstm_input,
            &cache.query,
            &dh,
            &dc_carry,
            &mut grad.decoder.lstm,
        );
        add_assign(grad.decoder.embed.row_mut(cache.embed_row), &dx[..embed_dim]);
        add_assign(&mut d_context, &dx[embed_dim..]);

        let (d_prev_w, d_query) = attend_backward(
            &params.attention,
            memory,
            &cache.query,
            &cache.prev_weights,
            &cache.attend,
            &d_context,
            &dw_carry,
            &mut grad.attention,
            &mut d_keys,
            d_hidden,
        );
        dh_carry = dh_prev;
        add_assign(&mut dh_carry, &d_query);
        dc_carry = dc_prev;
        dw_carry = d_prev_w;
    }
    memory.backward_into(&params.attention, &d_keys, &mut grad.attention, d_hidden);
}

pub(crate) fn check_targets(model: &Model, targets: &[SymbolId]) -> Result<()> {
    for &y in targets {
        if !model.inventory.is_phone(y) {
            return Err(Error::UnknownSymbol(format!(
                "target id {} is outside the phone set",
                y.0
            )));
        }
    }
    Ok(())
}

/// `-sum_l log P_att(y_l | y_<l, O)` with `<eos>` appended.
pub fn attention_nll(features: &Matrix, targets: &[SymbolId], model: &Model) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    check_targets(model, targets)?;
    let encoded = encode(features, model)?;
    let memory = AttentionMemory::new(&model.params.attention, &encoded.hidden);
    Ok(attention_unroll(model, &memory, targets).loss)
}

/// Loss and full gradient of the attention branch (features gradient included).
pub fn attention_nll_grad(
    features: &Matrix,
    targets: &[SymbolId],
    model: &Model,
) -> Result<(f64, ModelParams, Matrix)> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    check_targets(model, targets)?;
    check_features(features, model)?;
    let (hidden, enc_cache) = encoder_forward(&model.params.encoder, &model.dims, features);
    let memory = AttentionMemory::new(&model.params.attention, &hidden);
    let unroll = attention_unroll(model, &memory, targets);
    let mut grad = model.params.zeros_like();
    let mut d_hidden = Matrix::zeros(hidden.rows(), hidden.cols());
    attention_backward(model, &memory, &unroll, 1.0, &mut grad, &mut d_hidden);
    let d_features = encoder_backward(
        &model.params.encoder,
        &model.dims,
        &enc_cache,
        &d_hidden,
        &mut grad.encoder,
        true,
    )
    .expect("input gradient requested");
    Ok((unroll.loss, grad, d_features))
}

/// Argmax decoding over the attention decoder alone.
pub fn greedy_attention_decode(
    encoded: &EncoderOutput,
    model: &Model,
    max_steps: usize,
) -> Result<Vec<SymbolId>> {
    check_encoded(encoded, model)?;
    let memory = AttentionMemory::new(&model.params.attention, &encoded.hidden);
    let mut state = DecoderState::initial(model.dims.dec_hidden, encoded.len());
    let mut row = model.num_phones();
    let mut out = Vec::new();
    for _ in 0..max_steps {
        let (next, cache) = decoder_step_forward(model, &memory, row, &state);
        let best = argmax(&cache.log_probs);
        if best == model.eos_index() {
            break;
        }
        out.push(SymbolId::from(best));
        row = best;
        state = next;
    }
    Ok(out)
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneset::{InventoryMode, PhoneInventory};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> Model {
        let inv = PhoneInventory::build(&["a", "b", "c"], InventoryMode::PerPhoneAnti).unwrap();
        let dims = ModelDims {
            feat_dim: 4,
            enc_layers: 2,
            enc_hidden: 3,
            subsample_layers: 2,
            att_dim: 4,
            conv_filters: 2,
            conv_width: 3,
            dec_hidden: 3,
            embed_dim: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::new(inv, dims, &mut rng).unwrap()
    }

    #[test]
    fn subsampled_lengths() {
        let model = small_model(1);
        for (t, s) in [(100, 25), (3, 1), (4, 1), (5, 2), (8, 2), (9, 3)] {
            let feats = Matrix::zeros(t, 4);
            assert_eq!(encode(&feats, &model).unwrap().len(), s, "T={t}");
        }
    }

    #[test]
    fn encode_rejects_bad_input() {
        let model = small_model(1);
        assert!(encode(&Matrix::zeros(0, 4), &model).is_err());
        assert!(encode(&Matrix::zeros(5, 3), &model).is_err());
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        let mut model = small_model(2);
        model.params.attention.score.iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats = Matrix::uniform(20, 4, 1.0, &mut rng);
        let enc = encode(&feats, &model).unwrap();
        let state = DecoderState::initial(3, enc.len());
        let (_, weights) = attend(&state, &enc, &model).unwrap();
        for w in weights {
            assert!((w - 1.0 / enc.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_weights_select_encoder_row() {
        let model = small_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hidden = Matrix::uniform(4, 6, 1.0, &mut rng);
        let memory = AttentionMemory {
            hidden: &hidden,
            keys: Matrix::zeros(4, 4),
        };
        // Saturated tanh units times a huge score vector force a one-hot.
        let mut att = model.params.attention.clone();
        att.score = vec![1e3; 4];
        let mut keys = Matrix::zeros(4, 4);
        keys.row_mut(2).iter_mut().for_each(|v| *v = 1e3);
        for s in [0, 1, 3] {
            keys.row_mut(s).iter_mut().for_each(|v| *v = -1e3);
        }
        let memory = AttentionMemory { keys, ..memory };
        let (context, cache) = attend_forward(&att, &memory, &[0.0; 3], &[0.25; 4]);
        assert_eq!(cache.weights[2], 1.0);
        assert_eq!(context, hidden.row(2));
    }

    #[test]
    fn decoder_step_distribution() {
        let model = small_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = encode(&Matrix::uniform(9, 4, 1.0, &mut rng), &model).unwrap();
        let state = DecoderState::initial(3, enc.len());
        let sos = model.inventory.sos();
        let (p1, s1) = decoder_step(sos, &state, &enc, &model).unwrap();
        let (p2, s2) = decoder_step(sos, &state, &enc, &model).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
        assert_eq!(p1.len(), model.num_phones() + 1);
        assert!(p1.iter().all(|&p| p >= 0.0));
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total: f64 = s1.attention.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(decoder_step(model.inventory.blank(), &state, &enc, &model).is_err());
        assert!(decoder_step(SymbolId(99), &state, &enc, &model).is_err());
    }

    #[test]
    fn uniform_model_loss_is_length_times_log_vocab() {
        let mut model = small_model(5);
        model.params.decoder.readout.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        model.params.decoder.readout.bias.iter_mut().for_each(|v| *v = 0.0);
        let feats = Matrix::zeros(7, 4);
        let targets = [SymbolId(0), SymbolId(4), SymbolId(2)];
        let loss = attention_nll(&feats, &targets, &model).unwrap();
        let vocab = (model.num_phones() + 1) as f64;
        assert!((loss - 4.0 * vocab.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_bad_targets() {
        let model = small_model(6);
        let feats = Matrix::zeros(7, 4);
        assert!(attention_nll(&feats, &[], &model).is_err());
        assert!(attention_nll(&feats, &[model.inventory.blank()], &model).is_err());
    }
}
