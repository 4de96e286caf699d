use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moments for a fixed, ordered subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    ids: Vec<ParamId>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, ids: &[ParamId]) -> Self {
        Self::with_betas(store, ids, DEFAULT_BETA1, DEFAULT_BETA2)
    }

    pub fn with_betas(store: &ParamStore, ids: &[ParamId], beta1: f64, beta2: f64) -> Self {
        let zeros = |id: &ParamId| {
            let (r, c) = store.value(*id).shape();
            Matrix::zeros(r, c)
        };
        OptimizerState {
            ids: ids.to_vec(),
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            t: 0,
            beta1,
            beta2,
            eps: DEFAULT_EPS,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }
}

/// One bias-corrected Adam update over every tracked parameter; clears their gradients.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if let Some(missing) = state.ids.iter().find(|&&id| store.get(id).grad.is_none()) {
        return Err(Error::State(format!(
            "parameter {} has no gradient",
            store.get(*missing).name
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (k, &id) in state.ids.iter().enumerate() {
        let param = store.get_mut(id);
        let grad = param.grad.take().expect("checked above");
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (((p, &g), mi), vi) in param
            .value
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Polynomial decay `base_lr·(1 − iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base_lr: f64, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::arg("poly_lr needs max_iter > 0"));
    }
    if iter > max_iter {
        return Err(Error::arg(format!(
            "poly_lr iteration {iter} beyond max {max_iter}"
        )));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Matrix::filled(1, 1, value));
        (store, id)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut store, id) = scalar_store(1.5);
        let mut st = OptimizerState::new(&store, &[id]);
        for _ in 0..3 {
            store.zero_grads(&[id]);
            adam_step(&mut store, &mut st, 1e-2).unwrap();
        }
        assert_eq!(store.value(id).as_slice(), &[1.5]);
        assert!(store.get(id).grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let (mut store, id) = scalar_store(0.0);
            let mut st = OptimizerState::new(&store, &[id]);
            store.accumulate_grad(id, &Matrix::filled(1, 1, g)).unwrap();
            adam_step(&mut store, &mut st, 1e-3).unwrap();
            let step = store.value(id).as_slice()[0];
            assert!((step + 1e-3 * g.signum()).abs() < 1e-9, "{step}");
        }
    }

    #[test]
    fn repeated_gradient_keeps_step_size() {
        let (mut store, id) = scalar_store(0.0);
        let mut st = OptimizerState::new(&store, &[id]);
        let mut prev = 0.0;
        let mut steps = Vec::new();
        for _ in 0..2 {
            store.accumulate_grad(id, &Matrix::filled(1, 1, 0.7)).unwrap();
            adam_step(&mut store, &mut st, 1e-3).unwrap();
            let now = store.value(id).as_slice()[0];
            steps.push((now - prev).abs());
            prev = now;
        }
        assert!((steps[1] - steps[0]).abs() / steps[0] < 0.01);
        assert_eq!(st.step_count(), 2);
        assert!(st.second_moments()[0].as_slice()[0] >= 0.0);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let (mut store, id) = scalar_store(0.0);
        let mut st = OptimizerState::new(&store, &[id]);
        assert!(matches!(
            adam_step(&mut store, &mut st, 1e-3),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0, 100, 1e-3, 0.9).unwrap(), 1e-3);
        assert_eq!(poly_lr(100, 100, 1e-3, 0.9).unwrap(), 0.0);
        let mid = poly_lr(50, 100, 1e-3, 0.9).unwrap();
        assert!((mid - 5.359e-4).abs() < 1e-7, "{mid}");
        assert!(poly_lr(101, 100, 1e-3, 0.9).is_err());
        assert!(poly_lr(0, 0, 1e-3, 0.9).is_err());
    }
}
