//! Central finite-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error used throughout: `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            left: t.shape().to_vec(),
            right: vec![1],
        });
    }
    let x = t.item();
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {x}")));
    }
    Ok(x)
}

/// Checks the gradient of the scalar `f` with respect to every coordinate of
/// `params`, returning the maximum relative error.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    scalar(&tape, out)?;
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let o = f(&t, &vs)?;
        scalar(&t, o)
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        for c in 0..params[pi].len() {
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[c], numeric));
        }
    }
    Ok(worst)
}

/// Same check against trainable entries of a [`ParamStore`]. `f` builds the
/// objective inside a session over the (possibly perturbed) store.
pub fn grad_check_store<F>(store: &mut ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&Session) -> Result<Var>,
{
    let analytic = {
        let s = Session::new(store, true);
        let out = f(&s)?;
        scalar(s.tape(), out)?;
        s.backward(out)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let s = Session::new(store, false);
        let out = f(&s)?;
        scalar(s.tape(), out)
    };
    let mut worst: f64 = 0.0;
    for i in 0..store.len() {
        if !store.entries()[i].trainable {
            continue;
        }
        let id = crate::nn::ParamId(i);
        for c in 0..store.get(id).len() {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[c] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.grads[i][c], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(
            |t, p| t.mul(p[0], p[0]),
            &[Tensor::scalar(3.0)],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn sum_of_softmax_is_flat() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]);
        let tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let s = tape.softmax(v, None).unwrap();
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap().get(v).unwrap();
        assert!(g.data().iter().all(|x| x.abs() < 1e-12));
        let err = grad_check(
            |t, p| {
                let s = t.softmax(p[0], None)?;
                Ok(t.sum(s))
            },
            &[x],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let err = grad_check(
            |t, p| {
                let big = t.scale(p[0], f64::INFINITY);
                Ok(t.sum(big))
            },
            &[Tensor::scalar(1.0)],
            DEFAULT_STEP,
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
