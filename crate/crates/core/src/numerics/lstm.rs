use rand::Rng;

use super::{sigmoid, uniform_vec, Matrix};
use crate::error::{Error, Result};

/// LSTM cell with gates stacked `[input, forget, candidate, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// 4H x I
    pub w_input: Matrix,
    /// 4H x H
    pub w_hidden: Matrix,
    /// 4H
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate activations and cell values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_input: Matrix::zeros(4 * hidden, input),
            w_hidden: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn uniform(input: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        LstmCell {
            w_input: Matrix::uniform(4 * hidden, input, scale, rng),
            w_hidden: Matrix::uniform(4 * hidden, hidden, scale, rng),
            bias: uniform_vec(4 * hidden, scale, rng),
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    #[inline]
    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w_hidden.rows() != 4 * h || self.w_input.rows() != 4 * h || self.bias.len() != 4 * h
        {
            return Err(Error::shape("inconsistent LSTM parameter shapes"));
        }
        Ok(())
    }

    /// Gate pre-activations `W_x x + b` for a whole sequence, one row per step.
    pub(crate) fn project_inputs(&self, xs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(xs.rows(), 4 * self.hidden_dim());
        for t in 0..xs.rows() {
            let row = out.row_mut(t);
            row.copy_from_slice(&self.bias);
            self.w_input.gemv_add(xs.row(t), row);
        }
        out
    }

    /// One step given the projected input `W_x x + b`.
    pub(crate) fn step_projected(
        &self,
        projected: &[f64],
        prev: &LstmState,
    ) -> (LstmState, LstmStepCache) {
        let hd = self.hidden_dim();
        let mut gates = projected.to_vec();
        self.w_hidden.gemv_add(&prev.h, &mut gates);
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * hd..3 * hd).contains(&k) {
                z.tanh()
            } else {
                sigmoid(*z)
            };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * prev.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        let cache = LstmStepCache {
            gates,
            c_prev: prev.c.clone(),
            tanh_c,
        };
        (LstmState { h, c }, cache)
    }

    pub fn step(&self, x: &[f64], prev: &LstmState) -> (LstmState, LstmStepCache) {
        let mut projected = self.bias.clone();
        self.w_input.gemv_add(x, &mut projected);
        self.step_projected(&projected, prev)
    }

    /// Returns dL/d(pre-activation) for all four gates and dL/dc_prev.
    pub(crate) fn step_backward_gates(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, cand, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc * cand * i * (1.0 - i);
            dz[hd + j] = dc * cache.c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dc * i * (1.0 - cand * cand);
            dz[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dc * f;
        }
        (dz, dc_prev)
    }

    /// Full backward of one step. Accumulates parameter gradients and
    /// returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        x: &[f64],
        h_prev: &[f64],
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (dz, dc_prev) = self.step_backward_gates(cache, dh, dc_next);
        grad.w_input.ger_add(&dz, x);
        grad.w_hidden.ger_add(&dz, h_prev);
        super::add_assign(&mut grad.bias, &dz);
        let mut dx = vec![0.0; self.input_dim()];
        self.w_input.gemv_t_add(&dz, &mut dx);
        let mut dh_prev = vec![0.0; self.hidden_dim()];
        self.w_hidden.gemv_t_add(&dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [self.w_input.data(), self.w_hidden.data(), &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_input.data_mut(),
            self.w_hidden.data_mut(),
            &mut self.bias,
        ]
    }
}

/// Shape-checked single LSTM step.
pub fn lstm_step(x: &[f64], state: &LstmState, params: &LstmCell) -> Result<LstmState> {
    params.check()?;
    let hd = params.hidden_dim();
    if x.len() != params.input_dim() || state.h.len() != hd || state.c.len() != hd {
        return Err(Error::shape(format!(
            "LSTM step with input {} / state ({}, {}) for a {}->{} cell",
            x.len(),
            state.h.len(),
            state.c.len(),
            params.input_dim(),
            hd
        )));
    }
    Ok(params.step(x, state).0)
}

/// Bidirectional LSTM layer; output row `t` is `[forward_t, backward_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

pub struct BlstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
    /// Hidden states in time order for each direction.
    fwd_h: Vec<Vec<f64>>,
    bwd_h: Vec<Vec<f64>>,
}

impl Blstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Blstm {
            forward: LstmCell::zeros(input, hidden),
            backward: LstmCell::zeros(input, hidden),
        }
    }

    pub fn uniform(input: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Blstm {
            forward: LstmCell::uniform(input, hidden, scale, rng),
            backward: LstmCell::uniform(input, hidden, scale, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn forward(&self, seq: &Matrix) -> (Matrix, BlstmCache) {
        let t_len = seq.rows();
        let hd = self.hidden_dim();
        let mut out = Matrix::zeros(t_len, 2 * hd);

        let proj_f = self.forward.project_inputs(seq);
        let mut state = LstmState::zeros(hd);
        let mut fwd = Vec::with_capacity(t_len);
        let mut fwd_h = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (next, cache) = self.forward.step_projected(proj_f.row(t), &state);
            out.row_mut(t)[..hd].copy_from_slice(&next.h);
            fwd_h.push(next.h.clone());
            fwd.push(cache);
            state = next;
        }

        let proj_b = self.backward.project_inputs(seq);
        let mut state = LstmState::zeros(hd);
        let mut bwd = Vec::with_capacity(t_len);
        let mut bwd_h = vec![Vec::new(); t_len];
        for t in (0..t_len).rev() {
            let (next, cache) = self.backward.step_projected(proj_b.row(t), &state);
            out.row_mut(t)[hd..].copy_from_slice(&next.h);
            bwd_h[t] = next.h.clone();
            bwd.push(cache);
            state = next;
        }
        bwd.reverse();

        (
            out,
            BlstmCache {
                fwd,
                bwd,
                fwd_h,
                bwd_h,
            },
        )
    }

    /// Accumulates parameter gradients; returns dL/d(seq) when `want_input_grad`.
    pub fn backward(
        &self,
        seq: &Matrix,
        cache: &BlstmCache,
        dout: &Matrix,
        grad: &mut Blstm,
        want_input_grad: bool,
    ) -> Option<Matrix> {
        let t_len = seq.rows();
        let hd = self.hidden_dim();
        let zeros = vec![0.0; hd];
        let mut dz_f = Matrix::zeros(t_len, 4 * hd);
        let mut dz_b = Matrix::zeros(t_len, 4 * hd);

        let mut dh_carry = vec![0.0; hd];
        let mut dc_carry = vec![0.0; hd];
        for t in (0..t_len).rev() {
            let mut dh = dout.row(t)[..hd].to_vec();
            super::add_assign(&mut dh, &dh_carry);
            let (dz, dc_prev) = self
                .forward
                .step_backward_gates(&cache.fwd[t], &dh, &dc_carry);
            let h_prev = if t > 0 { &cache.fwd_h[t - 1] } else { &zeros };
            grad.forward.w_hidden.ger_add(&dz, h_prev);
            dh_carry.iter_mut().for_each(|v| *v = 0.0);
            self.forward.w_hidden.gemv_t_add(&dz, &mut dh_carry);
            dc_carry = dc_prev;
            dz_f.row_mut(t).copy_from_slice(&dz);
        }

        dh_carry.iter_mut().for_each(|v| *v = 0.0);
        dc_carry = vec![0.0; hd];
        for t in 0..t_len {
            let mut dh = dout.row(t)[hd..].to_vec();
            super::add_assign(&mut dh, &dh_carry);
            let (dz, dc_prev) = self
                .backward
                .step_backward_gates(&cache.bwd[t], &dh, &dc_carry);
            let h_prev = if t + 1 < t_len {
                &cache.bwd_h[t + 1]
            } else {
                &zeros
            };
            grad.backward.w_hidden.ger_add(&dz, h_prev);
            dh_carry.iter_mut().for_each(|v| *v = 0.0);
            self.backward.w_hidden.gemv_t_add(&dz, &mut dh_carry);
            dc_carry = dc_prev;
            dz_b.row_mut(t).copy_from_slice(&dz);
        }

        for t in 0..t_len {
            let x = seq.row(t);
            grad.forward.w_input.ger_add(dz_f.row(t), x);
            super::add_assign(&mut grad.forward.bias, dz_f.row(t));
            grad.backward.w_input.ger_add(dz_b.row(t), x);
            super::add_assign(&mut grad.backward.bias, dz_b.row(t));
        }

        if !want_input_grad {
            return None;
        }
        let mut dseq = Matrix::zeros(t_len, seq.cols());
        for t in 0..t_len {
            let row = dseq.row_mut(t);
            self.forward.w_input.gemv_t_add(dz_f.row(t), row);
            self.backward.w_input.gemv_t_add(dz_b.row(t), row);
        }
        Some(dseq)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.forward
            .tensors()
            .into_iter()
            .chain(self.backward.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.forward
            .tensors_mut()
            .into_iter()
            .chain(self.backward.tensors_mut())
    }
}

/// Shape-checked bidirectional layer over a `T x F` sequence.
pub fn blstm_layer(seq: &Matrix, params: &Blstm) -> Result<Matrix> {
    params.forward.check()?;
    params.backward.check()?;
    if seq.rows() == 0 {
        return Err(Error::shape("empty input sequence"));
    }
    if seq.cols() != params.input_dim() || params.backward.input_dim() != params.input_dim() {
        return Err(Error::shape(format!(
            "sequence width {} for a layer expecting {}",
            seq.cols(),
            params.input_dim()
        )));
    }
    if params.backward.hidden_dim() != params.hidden_dim() {
        return Err(Error::shape("direction hidden sizes differ"));
    }
    Ok(params.forward(seq).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_zero_state() {
        let cell = LstmCell::zeros(3, 4);
        let out = lstm_step(&[0.0; 3], &LstmState::zeros(4), &cell).unwrap();
        assert!(out.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::uniform(5, 6, 3.0, &mut rng);
        let mut state = LstmState::zeros(6);
        for k in 0..20 {
            let x: Vec<f64> = (0..5).map(|i| ((i * k) as f64).sin() * 50.0).collect();
            state = lstm_step(&x, &state, &cell).unwrap();
            assert!(state.h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn step_shape_errors() {
        let cell = LstmCell::zeros(3, 2);
        assert!(lstm_step(&[0.0; 2], &LstmState::zeros(2), &cell).is_err());
        assert!(lstm_step(&[0.0; 3], &LstmState::zeros(3), &cell).is_err());
    }

    #[test]
    fn single_frame_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Blstm::uniform(3, 2, 0.5, &mut rng);
        let seq = Matrix::from_vec(1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        let out = blstm_layer(&seq, &layer).unwrap();
        assert_eq!(out.shape(), (1, 4));
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = LstmCell::uniform(3, 2, 0.5, &mut rng);
        // Same cell in both directions makes the symmetry exact.
        let layer = Blstm {
            forward: cell.clone(),
            backward: cell,
        };
        let seq = Matrix::uniform(5, 3, 1.0, &mut rng);
        let out = blstm_layer(&seq, &layer).unwrap();
        let rev = blstm_layer(&seq.reversed_rows(), &layer).unwrap();
        for t in 0..5 {
            let a = out.row(t);
            let b = rev.row(4 - t);
            assert_eq!(&a[..2], &b[2..]);
            assert_eq!(&a[2..], &b[..2]);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let layer = Blstm::zeros(3, 2);
        assert!(blstm_layer(&Matrix::zeros(0, 3), &layer).is_err());
        assert!(blstm_layer(&Matrix::zeros(2, 4), &layer).is_err());
    }
}
