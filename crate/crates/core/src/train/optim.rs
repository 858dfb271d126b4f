use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One dense gradient buffer per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            grads: store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// Adds every parameter gradient recorded in `g`.
    pub fn add_gradients(&mut self, g: &Gradients) {
        for (id, values) in g.params() {
            for (a, v) in self.grads[id.index()].iter_mut().zip(values) {
                *a += v;
            }
        }
    }

    /// Element-wise sum, in argument order.
    pub fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Bias-corrected Adam update, in place. Frozen rows are left untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &GradBuffer,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    let ids: Vec<_> = store.ids().collect();
    if grads.grads.len() != ids.len() || state.m.len() != ids.len() {
        return Err(TrainError::GradShape {
            param: format!("<{} parameters>", ids.len()),
            expected: ids.len(),
            got: grads.grads.len(),
        });
    }
    for &id in &ids {
        let n = store.get(id).numel();
        let got = grads.grads[id.index()].len();
        if got != n || state.m[id.index()].len() != n {
            return Err(TrainError::GradShape {
                param: store.name(id).to_string(),
                expected: n,
                got,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in ids {
        let k = id.index();
        let frozen = store.frozen_rows(id).to_vec();
        let tensor = store.get_mut(id);
        let width = if tensor.shape().len() == 2 { tensor.shape()[1] } else { tensor.numel() };
        let data = tensor.data_mut();
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads.grads[k]);
        for i in 0..data.len() {
            if !frozen.is_empty() && frozen.contains(&(i / width)) {
                continue;
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one_param(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::new(vec![x, x], &[2]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one_param(1.0);
        let mut st = AdamState::new(&s);
        let g = GradBuffer {
            grads: vec![vec![1.0, 1.0]],
        };
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        for &x in s.by_name("x").unwrap().data() {
            assert!((x - expect).abs() < 1e-15);
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(0.3);
        let mut st = AdamState::new(&s);
        let g = GradBuffer::zeros(&s);
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.by_name("x").unwrap().data(), &[0.3, 0.3]);
    }

    #[test]
    fn converges_on_a_parabola() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(5.0)).unwrap();
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let x = s.by_name("x").unwrap().item();
            let g = GradBuffer {
                grads: vec![vec![2.0 * x]],
            };
            adam_step(&mut s, &g, &mut st, &cfg).unwrap();
        }
        assert!(s.by_name("x").unwrap().item().abs() < 1e-2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = one_param(0.0);
        let mut st = AdamState::new(&s);
        let g = GradBuffer {
            grads: vec![vec![1.0]],
        };
        assert!(matches!(
            adam_step(&mut s, &g, &mut st, &AdamConfig::default()),
            Err(TrainError::GradShape { .. })
        ));
    }

    #[test]
    fn frozen_rows_never_move() {
        let mut s = ParamStore::new();
        let id = s.insert("emb", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        s.freeze_row(id, 0);
        let mut st = AdamState::new(&s);
        let g = GradBuffer {
            grads: vec![vec![1.0; 4]],
        };
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        let d = s.get(id).data();
        assert_eq!(&d[..2], &[0.0, 0.0]);
        assert!(d[2] < 0.0 && d[3] < 0.0);
    }
}
