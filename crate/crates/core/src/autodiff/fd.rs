//! Central finite-difference validation of tape gradients.

use super::{Result, Tape, Tensor};

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at `x`. Returns the max over coordinates of
/// |analytic - numeric| / max(1, |analytic|); non-finite intermediates are
/// reported as infinity.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x);
    let loss = f(&mut tape, &leaf)?;
    let grads = tape.backward(&loss)?;
    let analytic = grads.get(&leaf).expect("leaf registered above").data().to_vec();

    let mut max_rel: f64 = 0.0;
    let base = x.data().to_vec();
    for (i, gi) in analytic.iter().enumerate() {
        let eval = |delta: f64| -> Result<f64> {
            let mut probe = base.clone();
            probe[i] += delta;
            let mut t = Tape::new();
            let xt = Tensor::new(x.shape().to_vec(), probe).expect("same shape");
            Ok(f(&mut t, &xt)?.item())
        };
        let fp = eval(eps)?;
        let fm = eval(-eps)?;
        if !fp.is_finite() || !fm.is_finite() || !gi.is_finite() {
            return Ok(f64::INFINITY);
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (gi - numeric).abs() / gi.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
