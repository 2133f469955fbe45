//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it is checking.

use alloc::string::String;
use alloc::vec::Vec;

use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::{Real, Result};

/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: Real = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_err: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: Real,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: Real) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compare `d loss / d param` from the tape against central differences with
/// step `h` for every scalar of every parameter in `store`.
///
/// `forward` must be deterministic: it is called once for the analytic
/// gradient and twice per scalar for the numeric one.
pub fn check<F>(store: &ParamStore, h: Real, mut forward: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut tape = Tape::new();
    let loss = forward(store, &mut tape)?;
    tape.backward(loss)?.accumulate_into(&mut analytic_store, 1.0);

    let eval = |s: &ParamStore, forward: &mut F| -> Result<Real> {
        let mut tape = Tape::new();
        let loss = forward(s, &mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe, &mut forward)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe, &mut forward)?;
            probe.value_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let analytic = analytic_store.get(id).grad.data()[i];
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some(Mismatch {
                    param: store.get(id).name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    // finite differences at this step size need f64
    #[cfg(not(feature = "f32"))]
    fn detects_a_correct_gradient() {
        use crate::Rng;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let w = store.add_uniform("w", &[3, 2], 3, &mut rng).unwrap();
        let report = check(&store, 1e-5, |s, tape| {
            let wv = tape.param(s, w);
            let sq = tape.mul(wv, wv)?;
            tape.sum(sq)
        })
        .unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-9, 2e-9) < 1e-3);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
