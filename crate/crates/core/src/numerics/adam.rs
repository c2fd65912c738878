use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A model whose trainable tensors can be enumerated in a fixed order.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut impl Parameters<T>, grads: &[Tensor<T>]) -> Result<()> {
        let mut params = model.tensors_mut();
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let f = T::from_f64_lossy;
        let (b1, b2) = (f(self.cfg.beta1), f(self.cfg.beta2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (lr, eps) = (f(self.cfg.lr), f(self.cfg.eps));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Running sum of per-example gradients, in parameter order.
#[derive(Clone, Debug)]
pub struct GradAccumulator<T> {
    sums: Vec<Tensor<T>>,
    count: usize,
}

impl<T: Real> GradAccumulator<T> {
    pub fn zeros_like(model: &impl Parameters<T>) -> Self {
        Self {
            sums: model.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            count: 0,
        }
    }

    pub fn add(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        for (s, g) in self.sums.iter_mut().zip(grads) {
            s.add_assign(g)?;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradient over everything added since the last reset.
    pub fn mean(&self) -> Vec<Tensor<T>> {
        let inv = T::one() / T::from_usize(self.count.max(1)).unwrap();
        self.sums
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.scale_in_place(inv);
                s
            })
            .collect()
    }

    pub fn reset(&mut self) {
        for s in &mut self.sums {
            s.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        self.count = 0;
    }
}
