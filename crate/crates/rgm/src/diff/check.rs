//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::scalar::{cast, Real};
use crate::{Error, Result};

/// Central-difference step used by the standard gradient checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Acceptance threshold for every layer's gradient check.
pub const GRAD_TOL: f64 = 1e-4;

/// Compares the tape gradient of `f` at `x` against central finite
/// differences.
///
/// `f` builds a scalar loss from the supplied variable on a fresh tape; any
/// other inputs are baked into the closure. Returns the max over coordinates
/// of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-5)`; the floor
/// keeps central-difference roundoff on dead coordinates (true gradient 0)
/// from registering as relative error. Inputs must avoid nondifferentiable
/// points (relu kinks, clamp edges, pool ties).
pub fn finite_diff_check<T, F>(f: &F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let var = tape.param(x.clone());
    let loss = f(&mut tape, var)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Parameter(
            "finite_diff_check needs a scalar-valued function".into(),
        ));
    }
    tape.backward(loss)?;
    let analytic: Vec<f64> = match tape.grad(var) {
        Some(g) => g.data().iter().map(|&v| v.to_f64().unwrap()).collect(),
        None => vec![0.0; x.len()],
    };

    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[k] = plus.data()[k] + cast(eps);
        let mut minus = x.clone();
        minus.data_mut()[k] = minus.data()[k] - cast(eps);
        let numeric = (eval(f, &plus)? - eval(f, &minus)?) / (2.0 * eps);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    Ok(worst)
}

fn eval<T, F>(f: &F, x: &Tensor<T>) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let var = tape.param(x.clone());
    let loss = f(&mut tape, var)?;
    Ok(tape.value(loss).get(0, 0).to_f64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor<f64> = Tensor::random_uniform(3, 4, -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, v: Var| {
                let s = tape.scale(v, 2.5)?;
                tape.sum_all(s)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-10, "linear check error {err}");
    }

    #[test]
    fn softmax_matmul_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Tensor<f64> = Tensor::random_uniform(4, 3, -1.0, 1.0, &mut rng);
        let w: Tensor<f64> = Tensor::random_uniform(3, 5, -1.0, 1.0, &mut rng);
        let probe: Tensor<f64> = Tensor::random_uniform(4, 5, -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            &move |tape: &mut Tape<f64>, v: Var| {
                let wv = tape.leaf(w.clone());
                let pv = tape.leaf(probe.clone());
                let h = tape.matmul(v, wv)?;
                let s = tape.softmax_rows(h)?;
                let weighted = tape.mul(s, pv)?;
                tape.sum_all(weighted)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "composite check error {err}");
    }

    #[test]
    fn rejects_non_scalar_function() {
        let x: Tensor<f64> = Tensor::zeros(2, 2);
        let r = finite_diff_check(&|_: &mut Tape<f64>, v: Var| Ok(v), &x, DEFAULT_EPS);
        assert!(r.is_err());
    }
}
