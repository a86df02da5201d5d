use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// `base * (1 - iter / total)^power`.
pub fn poly_lr(base: f64, iter: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - iter as f64 / total as f64).max(0.0).powf(power)
}

/// SGD with (optionally Nesterov) momentum and L2 weight decay:
/// `g' = g + wd p`, `v = mu v + g'`, `p -= lr (g' + mu v)` (Nesterov) or
/// `p -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum,
            nesterov,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Updates every parameter; `grads` is indexed like `params`, `None`
    /// meaning a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Tensor<f32>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid("sgd", format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let v = &mut self.velocity[i];
            if let Some(g) = &grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::shape("sgd", format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
                }
            }
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, (pv, vv)) in p.data_mut().iter_mut().zip(v.iter_mut()).enumerate() {
                let gj = g.map_or(0.0, |g| g[j]) + wd * *pv;
                *vv = mu * *vv + gj;
                let upd = if self.nesterov { gj + mu * *vv } else { *vv };
                *pv -= lr * upd;
            }
        }
        Ok(())
    }
}
