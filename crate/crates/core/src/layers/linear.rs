use rand::Rng;

use super::{flatten_steps, register, xavier};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Per-step scalar score `x · w + b`; no activation.
#[derive(Clone, Debug)]
pub struct LinearHead {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl LinearHead {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self, TensorError> {
        Ok(Self {
            w: register(store, format!("{name}.w"), xavier(rng, dim, 1)?)?,
            b: register(store, format!("{name}.b"), Tensor::scalar(0.0))?,
            dim,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.id(&format!("{name}.w"))?;
        Some(Self {
            w,
            b: store.id(&format!("{name}.b"))?,
            dim: store.get(w).shape()[0],
        })
    }

    /// `[B, T, d] -> [B, T]`.
    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, TensorError> {
        let (flat, b, t, _) = flatten_steps(tape, x)?;
        let w = tape.param(store, self.w);
        let bias = tape.param(store, self.b);
        let z = tape.matmul(flat, w)?;
        let z = tape.add(z, bias)?;
        tape.reshape(z, &[b, t])
    }
}

/// Affine map applied independently at every step, `[B, T, in] -> [B, T, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let w = register(store, format!("{name}.w"), xavier(rng, in_dim, out_dim)?)?;
        let b = if bias {
            Some(register(store, format!("{name}.b"), Tensor::zeros(&[out_dim])?)?)
        } else {
            None
        };
        Ok(Self { w, b, out_dim })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.id(&format!("{name}.w"))?;
        Some(Self {
            w,
            b: store.id(&format!("{name}.b")),
            out_dim: store.get(w).shape()[1],
        })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, TensorError> {
        let (flat, b, t, _) = flatten_steps(tape, x)?;
        let w = tape.param(store, self.w);
        let mut z = tape.matmul(flat, w)?;
        if let Some(bias) = self.b {
            let bias = tape.param(store, bias);
            z = tape.add(z, bias)?;
        }
        tape.reshape(z, &[b, t, self.out_dim])
    }
}

/// Two affine layers with a ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self, TensorError> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.fc1"), dim, dim, true, rng)?,
            second: Linear::new(store, &format!("{name}.fc2"), dim, dim, true, rng)?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self {
            first: Linear::attach(store, &format!("{name}.fc1"))?,
            second: Linear::attach(store, &format!("{name}.fc2"))?,
        })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, TensorError> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.second.forward(tape, store, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_gives_bias_everywhere() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = LinearHead::new(&mut store, "head", 4, &mut rng).unwrap();
        store.get_mut(head.w).data_mut().fill(0.0);
        store.get_mut(head.b).data_mut()[0] = 0.7;
        let mut tape = Tape::new();
        let x = tape.constant((0..24).map(|i| i as f64).collect(), &[2, 3, 4]).unwrap();
        let out = head.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(out), &[2, 3]);
        assert!(tape.value(out).iter().all(|&v| v == 0.7));
    }

    #[test]
    fn one_dimensional_head() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = LinearHead::new(&mut store, "head", 1, &mut rng).unwrap();
        store.get_mut(head.w).data_mut()[0] = 2.0;
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.5], &[1, 1, 1]).unwrap();
        let out = head.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(out), &[1.0]);
    }

    #[test]
    fn head_gradient_check() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = LinearHead::new(&mut store, "head", 3, &mut rng).unwrap();
        let input: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let err = grad_check_params(
            |tape, store| {
                let x = tape.constant(input.clone(), &[2, 2, 3])?;
                let y = head.forward(tape, store, x)?;
                let s = tape.sigmoid(y);
                Ok::<_, TensorError>(tape.sum(s))
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
