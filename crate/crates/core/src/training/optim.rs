use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real};

use super::config::AdamWConfig;

/// Number of warmup updates: `warmup_proportion * total_steps`, rounded,
/// leaving at least one update at full rate.
pub fn warmup_steps(total_steps: usize, warmup_proportion: f64) -> usize {
    ((warmup_proportion * total_steps as f64).round() as usize).min(total_steps.saturating_sub(1))
}

/// Learning rate for update `step` (0-based): linear ramp from 0 to
/// `lr_max` over the warmup steps, then linear decay reaching 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_proportion: f64, lr_max: f64) -> f64 {
    if step >= total_steps {
        return 0.0;
    }
    let w = warmup_steps(total_steps, warmup_proportion);
    if step < w {
        lr_max * step as f64 / w as f64
    } else {
        lr_max * (total_steps - step) as f64 / (total_steps - w) as f64
    }
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.v[index]
    }
}

/// One AdamW update from the gradients held in `params`.
///
/// Decay is decoupled: `w <- w (1 - lr wd)` for parameters flagged for
/// decay, followed by the bias-corrected Adam step. Parameters without a
/// gradient buffer are left untouched, moments included.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::invalid(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr_t = T::lit(lr);
    let eps = T::lit(cfg.eps);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let decay = params.decays(id);
        let tensor = params.get_mut(id);
        let Some(grad) = tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        if m.len() != grad.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: vec![m.len()],
                right: vec![grad.len()],
            });
        }
        let shrink = if decay {
            T::one() - lr_t * T::lit(cfg.weight_decay)
        } else {
            T::one()
        };
        for (((w, &g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w *= shrink;
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        if tensor.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "adamw_step" });
        }
    }
    Ok(())
}
