//! Parameter containers for the hybrid CTC/attention network.
//!
//! [`ModelParams`] doubles as the gradient container: gradients are stored in
//! a zero-initialized value of the same shape, and both are traversed in the
//! same declared order by [`ModelParams::tensors`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{uniform_vec, Blstm, Linear, LstmCell, Matrix, INIT_SCALE};
use crate::phoneset::{PhoneInventory, SymbolId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    /// Number of leading encoder layers followed by a keep-every-2nd-frame skip.
    pub subsample_layers: usize,
    pub att_dim: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub dec_hidden: usize,
    pub embed_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feat_dim: 8,
            enc_layers: 2,
            enc_hidden: 32,
            subsample_layers: 2,
            att_dim: 32,
            conv_filters: 10,
            conv_width: 11,
            dec_hidden: 32,
            embed_dim: 16,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("enc_layers", self.enc_layers),
            ("enc_hidden", self.enc_hidden),
            ("att_dim", self.att_dim),
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
            ("dec_hidden", self.dec_hidden),
            ("embed_dim", self.embed_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.subsample_layers > self.enc_layers {
            return Err(Error::config(
                "subsample_layers",
                "cannot exceed the number of encoder layers",
            ));
        }
        Ok(())
    }

    pub fn subsample_factor(&self) -> usize {
        1 << self.subsample_layers
    }

    /// Width of each encoder output vector.
    pub fn enc_dim(&self) -> usize {
        2 * self.enc_hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Blstm>,
}

/// Location-aware attention scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// A x decoder hidden
    pub query: Matrix,
    /// encoder dim -> A, carries the shared score bias
    pub key: Linear,
    /// A x conv filters
    pub location: Matrix,
    /// conv filters x conv width
    pub conv: Matrix,
    /// A
    pub score: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    /// One row per phone in U plus a final row for `<sos>`.
    pub embed: Matrix,
    pub lstm: LstmCell,
    /// `[h, context]` -> U plus `<eos>`
    pub readout: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub attention: Attention,
    pub decoder: Decoder,
    /// encoder dim -> U plus blank
    pub ctc_head: Linear,
}

impl ModelParams {
    /// Uniform initialization in `[-0.1, 0.1]`; draws happen in declared order.
    pub fn init(dims: &ModelDims, num_phones: usize, rng: &mut impl Rng) -> Self {
        let s = INIT_SCALE;
        let mut input = dims.feat_dim;
        let mut layers = Vec::with_capacity(dims.enc_layers);
        for _ in 0..dims.enc_layers {
            layers.push(Blstm::uniform(input, dims.enc_hidden, s, rng));
            input = dims.enc_dim();
        }
        let encoder = Encoder { layers };
        let attention = Attention::uniform(dims, s, rng);
        let decoder = Decoder::uniform(dims, num_phones, s, rng);
        let ctc_head = Linear::uniform(dims.enc_dim(), num_phones + 1, s, rng);
        ModelParams {
            encoder,
            attention,
            decoder,
            ctc_head,
        }
    }

    pub fn zeros(dims: &ModelDims, num_phones: usize) -> Self {
        let mut input = dims.feat_dim;
        let mut layers = Vec::with_capacity(dims.enc_layers);
        for _ in 0..dims.enc_layers {
            layers.push(Blstm::zeros(input, dims.enc_hidden));
            input = dims.enc_dim();
        }
        ModelParams {
            encoder: Encoder { layers },
            attention: Attention::zeros(dims),
            decoder: Decoder::zeros(dims, num_phones),
            ctc_head: Linear::zeros(dims.enc_dim(), num_phones + 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    /// Every tensor in declared (serialization) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.encoder.layers {
            out.extend(layer.tensors());
        }
        out.extend(self.attention.tensors());
        out.extend(self.decoder.tensors());
        out.extend(self.ctc_head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.attention.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out.extend(self.ctc_head.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += scale * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::numerics::axpy(scale, src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Attention {
    fn uniform(dims: &ModelDims, s: f64, rng: &mut impl Rng) -> Self {
        Attention {
            query: Matrix::uniform(dims.att_dim, dims.dec_hidden, s, rng),
            key: Linear::uniform(dims.enc_dim(), dims.att_dim, s, rng),
            location: Matrix::uniform(dims.att_dim, dims.conv_filters, s, rng),
            conv: Matrix::uniform(dims.conv_filters, dims.conv_width, s, rng),
            score: uniform_vec(dims.att_dim, s, rng),
        }
    }

    fn zeros(dims: &ModelDims) -> Self {
        Attention {
            query: Matrix::zeros(dims.att_dim, dims.dec_hidden),
            key: Linear::zeros(dims.enc_dim(), dims.att_dim),
            location: Matrix::zeros(dims.att_dim, dims.conv_filters),
            conv: Matrix::zeros(dims.conv_filters, dims.conv_width),
            score: vec![0.0; dims.att_dim],
        }
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            self.query.data(),
            self.key.weight.data(),
            &self.key.bias,
            self.location.data(),
            self.conv.data(),
            &self.score,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.query.data_mut(),
            self.key.weight.data_mut(),
            &mut self.key.bias,
            self.location.data_mut(),
            self.conv.data_mut(),
            &mut self.score,
        ]
    }
}

impl Decoder {
    fn uniform(dims: &ModelDims, num_phones: usize, s: f64, rng: &mut impl Rng) -> Self {
        Decoder {
            embed: Matrix::uniform(num_phones + 1, dims.embed_dim, s, rng),
            lstm: LstmCell::uniform(dims.embed_dim + dims.enc_dim(), dims.dec_hidden, s, rng),
            readout: Linear::uniform(dims.dec_hidden + dims.enc_dim(), num_phones + 1, s, rng),
        }
    }

    fn zeros(dims: &ModelDims, num_phones: usize) -> Self {
        Decoder {
            embed: Matrix::zeros(num_phones + 1, dims.embed_dim),
            lstm: LstmCell::zeros(dims.embed_dim + dims.enc_dim(), dims.dec_hidden),
            readout: Linear::zeros(dims.dec_hidden + dims.enc_dim(), num_phones + 1),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.embed.data())
            .chain(self.lstm.tensors())
            .chain(self.readout.tensors())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        std::iter::once(self.embed.data_mut())
            .chain(self.lstm.tensors_mut())
            .chain(self.readout.tensors_mut())
    }
}

/// Network parameters together with the inventory and shape they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub inventory: PhoneInventory,
    pub dims: ModelDims,
    pub params: ModelParams,
}

impl Model {
    pub fn new(inventory: PhoneInventory, dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let params = ModelParams::init(&dims, inventory.num_phones(), rng);
        Ok(Model {
            inventory,
            dims,
            params,
        })
    }

    pub fn num_phones(&self) -> usize {
        self.inventory.num_phones()
    }

    /// Decoder output index of `<eos>`.
    pub fn eos_index(&self) -> usize {
        self.num_phones()
    }

    /// Embedding row for a decoder input symbol (a phone or `<sos>`).
    pub fn embed_row(&self, y_prev: SymbolId) -> Result<usize> {
        if self.inventory.is_phone(y_prev) {
            Ok(y_prev.index())
        } else if y_prev == self.inventory.sos() {
            Ok(self.num_phones())
        } else {
            Err(Error::InvalidArgument(format!(
                "symbol id {} cannot be fed to the decoder",
                y_prev.0
            )))
        }
    }

    /// Maps a decoder output index to its symbol id.
    pub fn output_symbol(&self, index: usize) -> SymbolId {
        if index == self.eos_index() {
            self.inventory.eos()
        } else {
            SymbolId::from(index)
        }
    }
}
