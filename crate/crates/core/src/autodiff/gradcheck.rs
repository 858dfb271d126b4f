use super::{ParamStore, Tape, Tensor, Var};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares the tape gradient of a scalar function at `point` against central
/// differences with step `h`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`. A NaN
/// anywhere in `f` propagates into the result.
pub fn grad_check<E, F>(f: F, point: &Tensor, h: f64) -> Result<f64, E>
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone().with_grad());
    let y = f(&mut tape, x)?;
    let analytic = tape
        .backward(y)
        .expect("grad_check requires a scalar function")
        .wrt(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let eval = |p: Tensor| -> Result<f64, E> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y)[0])
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = rel_err(analytic[i], numeric);
        if err.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] over every coordinate of every parameter in `store`.
///
/// Frozen rows (embedding padding) are skipped: they are excluded from
/// gradient flow on purpose.
pub fn grad_check_params<E, F>(f: F, store: &ParamStore, h: f64) -> Result<f64, E>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Result<Var, E>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let y = f(&mut tape, store)?;
        let grads = tape.backward(y).expect("grad_check requires a scalar function");
        let mut out: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        for (id, g) in grads.params() {
            out[id.index()].copy_from_slice(g);
        }
        out
    };

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let y = f(&mut tape, s)?;
        Ok(tape.value(y)[0])
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let shape = store.get(id).shape().to_vec();
        let width = if shape.len() == 2 { shape[1] } else { usize::MAX };
        let frozen = store.frozen_rows(id).to_vec();
        for i in 0..store.get(id).numel() {
            if width != usize::MAX && frozen.contains(&(i / width)) {
                continue;
            }
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let err = rel_err(analytic[id.index()][i], (up - down) / (2.0 * h));
            if err.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
