use serde::{Deserialize, Serialize};

use crate::model::is_norm_or_bias;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Params, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && [self.learning_rate, self.eps, self.weight_decay]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid AdamW hyperparameters: {self:?}"
            )))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>) -> Self {
        let zeros = params.map_tensors(|_, t| Tensor::zeros(t.shape().to_vec()));
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update:
///
/// ```text
/// m ← β₁m + (1−β₁)g          v ← β₂v + (1−β₂)g²
/// m̂ = m/(1−β₁ᵗ)              v̂ = v/(1−β₂ᵗ)
/// θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ
/// ```
///
/// LayerNorm affine parameters and biases are not decayed. `grads` must
/// hold exactly the paths of `params` with the same shapes.
pub fn adamw_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (path, p) in params.iter() {
        let g = grads.require(path)?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 / (1.0 - b1.powi(t));
    let c2 = 1.0 / (1.0 - b2.powi(t));
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let (nb1, nb2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.eps);

    let mut updated = Params::new();
    let mut new_m = Params::new();
    let mut new_v = Params::new();
    for (path, p) in params.iter() {
        let g = grads.require(path)?.data();
        let m_old = state.m.require(path)?.data();
        let v_old = state.v.require(path)?.data();
        let decay = if is_norm_or_bias(path) {
            0.0
        } else {
            cfg.weight_decay
        };
        let lr_wd = T::from_f64(cfg.learning_rate * decay);
        let n = p.len();
        let (mut m, mut v, mut theta) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for i in 0..n {
            let mi = b1t * m_old[i] + nb1 * g[i];
            let vi = b2t * v_old[i] + nb2 * g[i] * g[i];
            let m_hat = mi * c1;
            let v_hat = vi * c2;
            let th = p.data()[i];
            theta.push(th - lr * m_hat / (v_hat.sqrt() + eps) - lr_wd * th);
            m.push(mi);
            v.push(vi);
        }
        let shape = p.shape().to_vec();
        updated.insert(path, Tensor::from_vec(shape.clone(), theta)?);
        new_m.insert(path, Tensor::from_vec(shape.clone(), m)?);
        new_v.insert(path, Tensor::from_vec(shape, v)?);
    }
    *params = updated;
    state.m = new_m;
    state.v = new_v;
    Ok(())
}
