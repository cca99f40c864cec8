//! Central finite differences, used as an independent gradient oracle.

use super::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor for [`relative_error`]; below this magnitude the error is
/// effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every coordinate of parameter `id`.
pub fn finite_difference_grad<F>(mut f: F, store: &ParamStore, id: ParamId, h: f64) -> Result<Array>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut work = store.clone();
    let n = store.value(id).len();
    let mut out = Array::zeros(store.value(id).shape());
    for i in 0..n {
        let orig = work.value(id).data()[i];
        work.get_mut(id).value.data_mut()[i] = orig + h;
        let plus = f(&work)?;
        work.get_mut(id).value.data_mut()[i] = orig - h;
        let minus = f(&work)?;
        work.get_mut(id).value.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest coordinate-wise [`relative_error`].
pub fn max_relative_error(analytic: &Array, numeric: &Array) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` per parameter.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

/// Compares reverse-mode gradients of a scalar `build` against finite
/// differences for every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, build: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = build(&mut t, s)?;
        Ok(t.value(o).item())
    };
    let mut per_param = Vec::with_capacity(store.len());
    for id in store.ids() {
        let numeric = finite_difference_grad(eval, store, id, h)?;
        let analytic = grads
            .params()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Array::zeros(store.value(id).shape()));
        per_param.push((store.get(id).name.clone(), max_relative_error(&analytic, &numeric)));
    }
    Ok(GradCheckReport { per_param })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::scalar(3.0));
        let g = finite_difference_grad(|s| Ok(s.value(x).item().powi(2)), &store, x, 1e-5).unwrap();
        assert!((g.item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn tanh_at_zero() {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::scalar(0.0));
        let g = finite_difference_grad(|s| Ok(s.value(x).item().tanh()), &store, x, 1e-5).unwrap();
        assert!((g.item() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 1e-4 / 1.0001).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) <= 1e-3);
    }
}
