use crate::model::ModelParams;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
            for (w, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                k += 1;
            }
        }
        debug_assert_eq!(k, self.m.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let dims = ModelDims {
            enc_hidden: 2,
            att_dim: 2,
            conv_filters: 1,
            conv_width: 3,
            dec_hidden: 2,
            embed_dim: 2,
            feat_dim: 2,
            ..ModelDims::default()
        };
        let mut p = ModelParams::zeros(&dims, 3);
        let mut g = p.zeros_like();
        g.fill(0.5);
        g.ctc_head.bias[0] = -2.0;
        let mut adam = Adam::new(p.num_params(), 0.01);
        adam.step(&mut p, &g);
        assert!((p.ctc_head.bias[0] - 0.01).abs() < 1e-9);
        assert!((p.ctc_head.bias[1] + 0.01).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }
}
