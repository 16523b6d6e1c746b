//! Central finite-difference gradient checking.

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check every `stride`-th coordinate of each parameter (1 = all).
    pub stride: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, stride: 1 }
    }
}

fn eval<F>(f: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    Ok(x)
}

/// Compare tape gradients of the scalar function `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h` for every parameter coordinate.
///
/// `f` must be deterministic: any randomness inside it has to be re-seeded
/// on every call. Parameter values are restored and gradients zeroed on
/// return.
pub fn grad_check<F>(store: &mut ParamStore, opts: GradCheckOptions, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for i in (0..n).step_by(opts.stride.max(1)) {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.h;
            let plus = eval(&mut f, store);
            store.get_mut(id).value.data_mut()[i] = orig - opts.h;
            let minus = eval(&mut f, store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let a = analytic[id.index()].data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if !err.is_finite() {
                return Err(TensorError::NonFinite { op: "grad_check" });
            }
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst_param = Some(store.get(id).name.clone());
                    report.worst_index = i;
                }
            }
        }
    }
    Ok(report)
}
