//! AdamW with decoupled weight decay.

use ndarray::Array2;

use crate::encoder::{EncoderParams, GradientSet, Linear};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update of `params` in place: `θ ← θ(1 − lr·wd)` followed by the
    /// bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>]) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.dim() != g.dim())
        {
            return Err(Error::Dimension("gradient shapes differ from parameters".into()));
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::numeric("optimizer", "non-finite gradient"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.dim() != p.dim()) {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut **p)
                .and(*g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *p *= decay;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    pub fn step_encoder(&mut self, params: &mut EncoderParams, grads: &GradientSet) -> Result<()> {
        let g: Vec<&Array2<f64>> = grads.tensors.iter().collect();
        self.step(&mut params.tensors_mut(), &g)
    }

    /// Steps encoder and a classifier head as one parameter vector.
    pub fn step_with_head(
        &mut self,
        params: &mut EncoderParams,
        grads: &GradientSet,
        head: &mut Linear,
        head_grads: &Linear,
    ) -> Result<()> {
        let mut p = params.tensors_mut();
        p.push(&mut head.weight);
        p.push(&mut head.bias);
        let mut g: Vec<&Array2<f64>> = grads.tensors.iter().collect();
        g.push(&head_grads.weight);
        g.push(&head_grads.bias);
        self.step(&mut p, &g)
    }
}
