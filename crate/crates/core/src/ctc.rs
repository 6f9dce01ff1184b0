//! CTC branch: frame posteriors, forward-backward likelihood with analytic
//! gradient, greedy decoding, incremental prefix scoring, and an exhaustive
//! path-enumeration oracle.
//!
//! Frame matrices are `S x V` with the blank in the last column, matching
//! the inventory id layout.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::encdec::EncoderOutput;
use crate::numerics::{log_add_exp, log_softmax, log_softmax_backward, Linear, Matrix};
use crate::phoneset::{PhoneInventory, SymbolId};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Largest frame count [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_MAX_FRAMES: usize = 8;

/// Per-frame log-probabilities over U plus blank.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogProbs(Matrix);

impl FrameLogProbs {
    /// Validates that every row log-sums to zero within 1e-9.
    pub fn new(log_probs: Matrix) -> Result<Self> {
        if log_probs.rows() == 0 || log_probs.cols() < 2 {
            return Err(Error::shape("frame matrix needs at least one frame and two labels"));
        }
        for (s, row) in log_probs.iter_rows().enumerate() {
            let total = crate::numerics::log_sum_exp(row);
            if !(total.abs() <= 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "frame {s} log-sums to {total}, not 0"
                )));
            }
        }
        Ok(FrameLogProbs(log_probs))
    }

    pub fn from_probs(probs: &Matrix) -> Result<Self> {
        let data = probs.data().iter().map(|p| p.ln()).collect();
        Self::new(Matrix::from_vec(probs.rows(), probs.cols(), data)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn blank(&self) -> usize {
        self.0.cols() - 1
    }
}

pub(crate) struct HeadCache {
    pub log_probs: Matrix,
}

pub(crate) fn ctc_head_forward(head: &Linear, hidden: &Matrix) -> HeadCache {
    let mut log_probs = Matrix::zeros(hidden.rows(), head.output_dim());
    for s in 0..hidden.rows() {
        let logits = head.forward(hidden.row(s));
        log_probs.row_mut(s).copy_from_slice(&log_softmax(&logits));
    }
    HeadCache { log_probs }
}

/// Pushes dL/d(log-probs) back through the log-softmax and the projection.
pub(crate) fn ctc_head_backward(
    head: &Linear,
    hidden: &Matrix,
    cache: &HeadCache,
    d_log_probs: &Matrix,
    grad: &mut Linear,
    d_hidden: &mut Matrix,
) {
    for s in 0..hidden.rows() {
        let d_row = d_log_probs.row(s);
        if d_row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let d_logits = log_softmax_backward(cache.log_probs.row(s), d_row);
        head.backward(hidden.row(s), &d_logits, grad, Some(d_hidden.row_mut(s)));
    }
}

pub fn ctc_head(encoded: &EncoderOutput, model: &Model) -> Result<FrameLogProbs> {
    if encoded.is_empty() {
        return Err(Error::shape("empty encoder output"));
    }
    if encoded.hidden.cols() != model.params.ctc_head.input_dim() {
        return Err(Error::shape(format!(
            "encoder width {} but the CTC head expects {}",
            encoded.hidden.cols(),
            model.params.ctc_head.input_dim()
        )));
    }
    Ok(FrameLogProbs(
        ctc_head_forward(&model.params.ctc_head, &encoded.hidden).log_probs,
    ))
}

#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `-ln P(target | frames)`; `+inf` when infeasible.
    pub loss: f64,
    /// dL/d(log-probs), same shape as the input; zero when infeasible.
    pub grad: Matrix,
    pub feasible: bool,
}

/// Minimum number of frames able to emit `target` (repeats need a blank between).
pub fn min_frames(target: &[SymbolId]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_target(target: &[SymbolId], labels: usize) -> Result<()> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty CTC target".into()));
    }
    let blank = labels - 1;
    if let Some(bad) = target.iter().find(|y| y.index() >= blank) {
        return Err(Error::InvalidArgument(format!(
            "target id {} is the blank or outside the label set",
            bad.0
        )));
    }
    Ok(())
}

/// Blank-expanded label sequence `_ y1 _ y2 ... yL _`.
fn expand(target: &[SymbolId], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for y in target {
        ext.push(y.index());
        ext.push(blank);
    }
    ext
}

/// CTC negative log-likelihood by log-space forward-backward.
///
/// `log_probs` is treated as free per-frame scores, so the returned gradient
/// is the partial derivative with respect to each entry.
pub fn ctc_loss(log_probs: &Matrix, target: &[SymbolId]) -> Result<CtcLoss> {
    let frames = log_probs.rows();
    let labels = log_probs.cols();
    if frames == 0 || labels < 2 {
        return Err(Error::shape("frame matrix needs at least one frame and two labels"));
    }
    check_target(target, labels)?;
    if min_frames(target) > frames {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: Matrix::zeros(frames, labels),
            feasible: false,
        });
    }

    let blank = labels - 1;
    let ext = expand(target, blank);
    let n = ext.len();
    let skip_ok = |j: usize| j >= 2 && ext[j] != blank && ext[j] != ext[j - 2];

    let mut alpha = Matrix::zeros(frames, n);
    alpha.data_mut().iter_mut().for_each(|v| *v = NEG_INF);
    alpha.set(0, 0, log_probs.get(0, blank));
    alpha.set(0, 1, log_probs.get(0, ext[1]));
    for t in 1..frames {
        for j in 0..n {
            let mut acc = alpha.get(t - 1, j);
            if j >= 1 {
                acc = log_add_exp(acc, alpha.get(t - 1, j - 1));
            }
            if skip_ok(j) {
                acc = log_add_exp(acc, alpha.get(t - 1, j - 2));
            }
            if acc != NEG_INF {
                alpha.set(t, j, acc + log_probs.get(t, ext[j]));
            }
        }
    }

    let mut beta = Matrix::zeros(frames, n);
    beta.data_mut().iter_mut().for_each(|v| *v = NEG_INF);
    let last = frames - 1;
    beta.set(last, n - 1, log_probs.get(last, blank));
    beta.set(last, n - 2, log_probs.get(last, ext[n - 2]));
    for t in (0..last).rev() {
        for j in 0..n {
            let mut acc = beta.get(t + 1, j);
            if j + 1 < n {
                acc = log_add_exp(acc, beta.get(t + 1, j + 1));
            }
            if j + 2 < n && skip_ok(j + 2) {
                acc = log_add_exp(acc, beta.get(t + 1, j + 2));
            }
            if acc != NEG_INF {
                beta.set(t, j, acc + log_probs.get(t, ext[j]));
            }
        }
    }

    let log_likelihood = log_add_exp(alpha.get(last, n - 1), alpha.get(last, n - 2));
    if log_likelihood == NEG_INF {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: Matrix::zeros(frames, labels),
            feasible: false,
        });
    }

    let mut grad = Matrix::zeros(frames, labels);
    let mut occupancy = vec![NEG_INF; labels];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|v| *v = NEG_INF);
        for (j, &k) in ext.iter().enumerate() {
            occupancy[k] = log_add_exp(occupancy[k], alpha.get(t, j) + beta.get(t, j));
        }
        for (k, &occ) in occupancy.iter().enumerate() {
            if occ != NEG_INF {
                grad.set(t, k, -(occ - log_probs.get(t, k) - log_likelihood).exp());
            }
        }
    }

    Ok(CtcLoss {
        loss: -log_likelihood,
        grad,
        feasible: true,
    })
}

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &z in path {
        if Some(z) != prev && z != blank {
            out.push(z);
        }
        prev = Some(z);
    }
    out
}

/// Sums the probability of every frame-label path collapsing to `target`.
///
/// `probs` holds probabilities (not logs), blank in the last column.
pub fn ctc_brute_force(probs: &Matrix, target: &[SymbolId]) -> Result<f64> {
    let frames = probs.rows();
    let labels = probs.cols();
    if frames > BRUTE_FORCE_MAX_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "{frames} frames exceeds the enumeration limit of {BRUTE_FORCE_MAX_FRAMES}"
        )));
    }
    if frames == 0 || labels < 2 {
        return Err(Error::shape("frame matrix needs at least one frame and two labels"));
    }
    let blank = labels - 1;
    let want: Vec<usize> = target.iter().map(|y| y.index()).collect();
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == want {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &z)| probs.get(t, z))
                .product::<f64>();
        }
        // odometer increment
        let mut t = frames;
        loop {
            if t == 0 {
                return Ok(total);
            }
            t -= 1;
            path[t] += 1;
            if path[t] < labels {
                break;
            }
            path[t] = 0;
        }
    }
}

/// Per-frame argmax, collapse repeats, drop blanks.
pub fn ctc_greedy_decode(log_probs: &FrameLogProbs, inventory: &PhoneInventory) -> Vec<SymbolId> {
    let m = log_probs.matrix();
    debug_assert_eq!(m.cols(), inventory.blank().index() + 1);
    let path: Vec<usize> = m.iter_rows().map(crate::encdec::argmax).collect();
    collapse(&path, inventory.blank().index())
        .into_iter()
        .map(SymbolId::from)
        .collect()
}

/// Incremental prefix-probability state for one hypothesis.
#[derive(Clone, Debug)]
pub struct PrefixState {
    /// log P(prefix emitted by frame t, last frame non-blank)
    non_blank: Vec<f64>,
    /// log P(prefix emitted by frame t, last frame blank)
    blank: Vec<f64>,
    last: Option<usize>,
    /// log P(collapsed sequence starts with the prefix)
    pub score: f64,
}

impl PrefixState {
    /// log P(collapsed sequence equals the prefix exactly).
    pub fn full_score(&self) -> f64 {
        let t = self.blank.len() - 1;
        log_add_exp(self.non_blank[t], self.blank[t])
    }
}

/// Prefix scorer over a fixed frame matrix (blank in the last column).
pub struct CtcPrefixScorer<'a> {
    log_probs: &'a Matrix,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_probs: &'a Matrix) -> Self {
        CtcPrefixScorer { log_probs }
    }

    fn blank(&self) -> usize {
        self.log_probs.cols() - 1
    }

    pub fn initial(&self) -> PrefixState {
        let frames = self.log_probs.rows();
        let b = self.blank();
        let mut blank = vec![0.0; frames];
        let mut acc = 0.0;
        for (t, slot) in blank.iter_mut().enumerate() {
            acc += self.log_probs.get(t, b);
            *slot = acc;
        }
        PrefixState {
            non_blank: vec![NEG_INF; frames],
            blank,
            last: None,
            score: 0.0,
        }
    }

    pub fn extend(&self, state: &PrefixState, label: usize) -> PrefixState {
        let lp = self.log_probs;
        let frames = lp.rows();
        let b = self.blank();
        let mut non_blank = vec![NEG_INF; frames];
        let mut blank = vec![NEG_INF; frames];
        // Before the first frame only the empty prefix has probability one.
        non_blank[0] = if state.last.is_none() {
            lp.get(0, label)
        } else {
            NEG_INF
        };
        let mut score = non_blank[0];
        for t in 1..frames {
            let phi = if state.last == Some(label) {
                state.blank[t - 1]
            } else {
                log_add_exp(state.blank[t - 1], state.non_blank[t - 1])
            };
            let emit = lp.get(t, label);
            non_blank[t] = log_add_exp(non_blank[t - 1], phi) + emit;
            blank[t] = log_add_exp(blank[t - 1], non_blank[t - 1]) + lp.get(t, b);
            score = log_add_exp(score, phi + emit);
        }
        PrefixState {
            non_blank,
            blank,
            last: Some(label),
            score,
        }
    }

    pub fn state_for(&self, prefix: &[SymbolId]) -> PrefixState {
        prefix
            .iter()
            .fold(self.initial(), |st, y| self.extend(&st, y.index()))
    }
}

/// log P(the collapsed frame sequence begins with `prefix`).
pub fn ctc_prefix_logprob(log_probs: &FrameLogProbs, prefix: &[SymbolId]) -> Result<f64> {
    let blank = log_probs.blank();
    if let Some(bad) = prefix.iter().find(|y| y.index() >= blank) {
        return Err(Error::InvalidArgument(format!(
            "prefix id {} is the blank or outside the label set",
            bad.0
        )));
    }
    Ok(CtcPrefixScorer::new(log_probs.matrix()).state_for(prefix).score)
}
