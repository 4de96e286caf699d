use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares tape gradients to central finite differences for every entry of `ids`.
///
/// Returns `max |analytic − fd| / max(|analytic|, |fd|, RELATIVE_FLOOR)`.
/// The store is restored to its original values before returning.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::arg("grad_check eps must be positive"));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::inference();
        let out = loss_fn(&mut tape, store)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::with_trainable(ids);
    let out = loss_fn(&mut tape, store)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            tape.param_grad(&grads, id)
                .map(|g| g.as_slice().to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();

    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).as_slice()[j];
            store.value_mut(id).as_mut_slice()[j] = orig + eps;
            let plus = eval(store);
            store.value_mut(id).as_mut_slice()[j] = orig - eps;
            let minus = eval(store);
            store.value_mut(id).as_mut_slice()[j] = orig;
            let fd = (plus? - minus?) / (2.0 * eps);
            let a = analytic[k][j];
            let denom = a.abs().max(fd.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("p", Matrix::from_rows(&[&[0.3, -1.2], &[2.0, 0.7]]));
        let err = grad_check(&mut store, &[id], 1e-5, |tape, store| {
            let p = tape.param(store, id);
            let sq = tape.mul(p, p)?;
            let m = tape.mean(sq)?;
            Ok(tape.scale(m, 0.5 * 4.0))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut store = ParamStore::new();
        let id = store.add("p", Matrix::filled(2, 2, 1.0));
        let err = grad_check(&mut store, &[id], 1e-5, |tape, _| {
            let c = tape.constant(Matrix::filled(1, 1, 3.0));
            Ok(c)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut store = ParamStore::new();
        let id = store.add("p", Matrix::filled(1, 1, 1.0));
        let res = grad_check(&mut store, &[id], 1e-5, |tape, store| {
            let p = tape.param(store, id);
            Ok(tape.scale(p, f64::NAN))
        });
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
