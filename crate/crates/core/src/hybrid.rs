//! Joint CTC/attention objective and decoding.

use std::cmp::Ordering;
use std::fmt;

use crate::ctc::{self, CtcPrefixScorer, PrefixState};
use crate::encdec::{self, AttentionMemory, DecoderState, EncoderOutput};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numerics::Matrix;
use crate::phoneset::{PhoneInventory, SymbolId};

/// Interpolation weight used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BEAM: usize = 4;

/// Which branches produce the output sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Joint beam search over both branches.
    #[default]
    Hybrid,
    /// Greedy CTC decoding only.
    CtcOnly,
    /// Beam search over the attention decoder only.
    AttOnly,
}

impl DecodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Hybrid => "hybrid",
            DecodeMode::CtcOnly => "ctc-only",
            DecodeMode::AttOnly => "att-only",
        }
    }

    /// Training-time interpolation weight this ablation pins, if any.
    pub fn forced_lambda(self) -> Option<f64> {
        match self {
            DecodeMode::Hybrid => None,
            DecodeMode::CtcOnly => Some(1.0),
            DecodeMode::AttOnly => Some(0.0),
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(DecodeMode::Hybrid),
            "ctc-only" => Ok(DecodeMode::CtcOnly),
            "att-only" => Ok(DecodeMode::AttOnly),
            other => Err(Error::config(
                "mode",
                format!("expected hybrid, ctc-only or att-only, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridConfig {
    pub lambda: f64,
    pub beam: usize,
    /// Hard cap on decoder steps; `None` means twice the encoder length.
    pub max_steps: Option<usize>,
    pub mode: DecodeMode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            lambda: DEFAULT_LAMBDA,
            beam: DEFAULT_BEAM,
            max_steps: None,
            mode: DecodeMode::Hybrid,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.beam == 0 {
            return Err(Error::config("beam", "must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive"));
        }
        Ok(())
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda", format!("{lambda} is outside [0, 1]")));
    }
    Ok(())
}

/// Per-branch and combined losses of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub ctc: f64,
    pub attention: f64,
    pub hybrid: f64,
    pub ctc_feasible: bool,
}

/// `lambda * L_ctc + (1 - lambda) * L_att` on a shared encoder pass.
pub fn hybrid_loss(
    features: &Matrix,
    targets: &[SymbolId],
    model: &Model,
    lambda: f64,
) -> Result<f64> {
    Ok(hybrid_loss_parts(features, targets, model, lambda)?.hybrid)
}

pub fn hybrid_loss_parts(
    features: &Matrix,
    targets: &[SymbolId],
    model: &Model,
    lambda: f64,
) -> Result<LossParts> {
    Ok(hybrid_forward_backward(features, targets, model, lambda, None)?.0)
}

/// Loss plus parameter gradient; with `d_features` the input gradient too.
pub fn hybrid_loss_grad(
    features: &Matrix,
    targets: &[SymbolId],
    model: &Model,
    lambda: f64,
    grad: &mut ModelParams,
    d_features: Option<&mut Matrix>,
) -> Result<LossParts> {
    let (parts, input_grad) =
        hybrid_forward_backward(features, targets, model, lambda, Some((grad, d_features.is_some())))?;
    if let (Some(dst), Some(src)) = (d_features, input_grad) {
        *dst = src;
    }
    Ok(parts)
}

type GradRequest<'a> = Option<(&'a mut ModelParams, bool)>;

fn hybrid_forward_backward(
    features: &Matrix,
    targets: &[SymbolId],
    model: &Model,
    lambda: f64,
    grad: GradRequest<'_>,
) -> Result<(LossParts, Option<Matrix>)> {
    check_lambda(lambda)?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    encdec::check_targets(model, targets)?;
    encdec::check_features(features, model)?;

    let params = &model.params;
    let (hidden, enc_cache) = encdec::encoder_forward(&params.encoder, &model.dims, features);

    let ctc_weight = lambda;
    let att_weight = 1.0 - lambda;

    let head = ctc::ctc_head_forward(&params.ctc_head, &hidden);
    let ctc_out = ctc::ctc_loss(&head.log_probs, targets)?;

    let memory = AttentionMemory::new(&params.attention, &hidden);
    let unroll = if att_weight > 0.0 || grad.is_none() {
        Some(encdec::attention_unroll(model, &memory, targets))
    } else {
        None
    };
    let att_loss = unroll.as_ref().map_or(f64::NAN, |u| u.loss);

    let mut hybrid = 0.0;
    if ctc_weight > 0.0 {
        hybrid += ctc_weight * ctc_out.loss;
    }
    if att_weight > 0.0 {
        hybrid += att_weight * att_loss;
    }
    let parts = LossParts {
        ctc: ctc_out.loss,
        attention: att_loss,
        hybrid,
        ctc_feasible: ctc_out.feasible,
    };

    let Some((grad, want_input)) = grad else {
        return Ok((parts, None));
    };
    if !hybrid.is_finite() {
        return Ok((parts, None));
    }

    let mut d_hidden = Matrix::zeros(hidden.rows(), hidden.cols());
    if ctc_weight > 0.0 {
        let mut d_lp = ctc_out.grad;
        d_lp.data_mut().iter_mut().for_each(|v| *v *= ctc_weight);
        ctc::ctc_head_backward(
            &params.ctc_head,
            &hidden,
            &head,
            &d_lp,
            &mut grad.ctc_head,
            &mut d_hidden,
        );
    }
    if let (true, Some(unroll)) = (att_weight > 0.0, unroll.as_ref()) {
        encdec::attention_backward(model, &memory, unroll, att_weight, grad, &mut d_hidden);
    }
    let d_features = encdec::encoder_backward(
        &params.encoder,
        &model.dims,
        &enc_cache,
        &d_hidden,
        &mut grad.encoder,
        want_input,
    );
    Ok((parts, d_features))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub phones: Vec<SymbolId>,
    /// Joint score of the returned hypothesis (end of sequence included).
    pub score: f64,
    pub ctc_score: f64,
    pub att_score: f64,
    /// One row of attention weights per emitted phone.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone)]
struct Hypothesis {
    phones: Vec<SymbolId>,
    embed_row: usize,
    att_score: f64,
    ctc: PrefixState,
    state: DecoderState,
    attention: Vec<Vec<f64>>,
}

struct Candidate {
    parent: usize,
    /// Decoder output index; `None` for end of sequence.
    label: Option<usize>,
    att_score: f64,
    ctc_score: f64,
    joint: f64,
}

fn joint_score(lambda: f64, ctc: f64, att: f64) -> f64 {
    if lambda == 0.0 {
        att
    } else if lambda == 1.0 {
        ctc
    } else {
        lambda * ctc + (1.0 - lambda) * att
    }
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Length-synchronous beam search scoring each hypothesis as
/// `lambda * ctc_prefix + (1 - lambda) * attention`. Under
/// [`DecodeMode::CtcOnly`] the CTC branch is decoded greedily instead.
pub fn joint_beam_decode(
    features: &Matrix,
    model: &Model,
    cfg: &HybridConfig,
    inventory: &PhoneInventory,
) -> Result<DecodeResult> {
    cfg.validate()?;
    if inventory != &model.inventory {
        return Err(Error::InventoryMismatch(
            "decode inventory differs from the model's".into(),
        ));
    }
    let encoded = encdec::encode(features, model)?;
    decode_encoded(&encoded, model, cfg)
}

/// Decodes many utterances, fanning out over `threads` workers. Results come
/// back in input order and do not depend on the thread count.
pub fn decode_all(
    features: &[Matrix],
    model: &Model,
    cfg: &HybridConfig,
    threads: usize,
) -> Result<Vec<DecodeResult>> {
    cfg.validate()?;
    let one = |f: &Matrix| encdec::encode(f, model).and_then(|e| decode_encoded(&e, model, cfg));
    if threads <= 1 || features.len() <= 1 {
        return features.iter().map(one).collect();
    }
    let per = features.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = features
            .chunks(per)
            .map(|chunk| scope.spawn(move || chunk.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(features.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

pub fn decode_encoded(
    encoded: &EncoderOutput,
    model: &Model,
    cfg: &HybridConfig,
) -> Result<DecodeResult> {
    if encoded.is_empty() {
        return Err(Error::shape("empty encoder output"));
    }
    let lp = ctc::ctc_head(encoded, model)?;
    if cfg.mode == DecodeMode::CtcOnly {
        let phones = ctc::ctc_greedy_decode(&lp, &model.inventory);
        let scorer = CtcPrefixScorer::new(lp.matrix());
        let ctc_score = scorer.state_for(&phones).full_score();
        return Ok(DecodeResult {
            phones,
            score: ctc_score,
            ctc_score,
            att_score: f64::NAN,
            attention: Vec::new(),
        });
    }
    let lambda = match cfg.mode {
        DecodeMode::AttOnly => 0.0,
        _ => cfg.lambda,
    };

    let scorer = CtcPrefixScorer::new(lp.matrix());
    let memory = AttentionMemory::new(&model.params.attention, &encoded.hidden);
    let max_steps = cfg.max_steps.unwrap_or(2 * encoded.len()).max(1);
    let eos = model.eos_index();

    let mut live = vec![Hypothesis {
        phones: Vec::new(),
        embed_row: model.num_phones(),
        att_score: 0.0,
        ctc: scorer.initial(),
        state: DecoderState::initial(model.dims.dec_hidden, encoded.len()),
        attention: Vec::new(),
    }];
    let mut ended: Vec<DecodeResult> = Vec::new();

    for _ in 0..max_steps {
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let (next, cache) = encdec::decoder_step_forward(model, &memory, hyp.embed_row, &hyp.state);
            for (k, &lp_k) in cache.log_probs.iter().enumerate() {
                let att_score = hyp.att_score + lp_k;
                let (label, ctc_score) = if k == eos {
                    (None, if lambda > 0.0 { hyp.ctc.full_score() } else { 0.0 })
                } else {
                    let s = if lambda > 0.0 {
                        scorer.extend(&hyp.ctc, k).score
                    } else {
                        0.0
                    };
                    (Some(k), s)
                };
                candidates.push(Candidate {
                    parent,
                    label,
                    att_score,
                    ctc_score,
                    joint: joint_score(lambda, ctc_score, att_score),
                });
            }
            steps.push((next, cache.log_probs));
        }
        candidates.sort_by(|a, b| by_score_desc(a.joint, b.joint));
        candidates.truncate(cfg.beam);

        let mut next_live = Vec::with_capacity(cfg.beam);
        for cand in candidates {
            let parent = &live[cand.parent];
            let weights = steps[cand.parent].0.attention.clone();
            match cand.label {
                None => ended.push(DecodeResult {
                    phones: parent.phones.clone(),
                    score: cand.joint,
                    ctc_score: cand.ctc_score,
                    att_score: cand.att_score,
                    attention: parent.attention.clone(),
                }),
                Some(k) => {
                    let mut phones = parent.phones.clone();
                    phones.push(SymbolId::from(k));
                    let mut attention = parent.attention.clone();
                    attention.push(weights);
                    let ctc = if lambda > 0.0 {
                        scorer.extend(&parent.ctc, k)
                    } else {
                        parent.ctc.clone()
                    };
                    next_live.push(Hypothesis {
                        phones,
                        embed_row: k,
                        att_score: cand.att_score,
                        ctc,
                        state: steps[cand.parent].0.clone(),
                        attention,
                    });
                }
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        // Scores never increase along an extension, so no live hypothesis
        // can overtake an ended one that already scores at least as well.
        let best_ended = ended.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live
            .iter()
            .map(|h| joint_score(lambda, h.ctc.score, h.att_score))
            .fold(f64::NEG_INFINITY, f64::max);
        if best_ended >= best_live {
            break;
        }
    }

    if ended.is_empty() {
        // Step cap reached: close the surviving hypotheses as they stand.
        for hyp in live {
            let ctc_score = if lambda > 0.0 { hyp.ctc.full_score() } else { 0.0 };
            ended.push(DecodeResult {
                score: joint_score(lambda, ctc_score, hyp.att_score),
                phones: hyp.phones,
                ctc_score,
                att_score: hyp.att_score,
                attention: hyp.attention,
            });
        }
    }

    let mut best = 0;
    for (i, r) in ended.iter().enumerate() {
        if by_score_desc(r.score, ended[best].score) == Ordering::Less {
            best = i;
        }
    }
    let mut result = ended.swap_remove(best);
    if lambda == 0.0 {
        result.ctc_score = f64::NAN;
    }
    Ok(result)
}
