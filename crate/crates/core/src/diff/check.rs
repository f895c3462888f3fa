//! Central finite-difference verification of analytic gradients.

use super::params::{Gradients, ParamKey, ParamStore};

/// Denominator floor for relative errors. Central differences at `h = 1e-6`
/// carry roughly `1e-10 · |f|` of rounding noise, which would swamp the
/// relative error of gradient entries much smaller than this.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// A coordinate is treated as sitting on a kink when its one-sided
/// differences disagree by more than this (relative to the central estimate).
const KINK_RATIO: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub key: ParamKey,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub params: Vec<ParamCheck>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped_kinks).sum()
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `f` for every scalar
/// of every allocated parameter.
///
/// Coordinates where the forward and backward one-sided differences disagree
/// indicate a hinge or absolute-value kink inside `[-h, h]`; those are
/// counted in `skipped_kinks` and left out of the error.
pub fn finite_diff_check<F>(f: F, store: &ParamStore, analytic: &Gradients, h: f64) -> FdReport
where
    F: Fn(&ParamStore) -> f64,
{
    let base = f(store);
    let mut work = store.clone();
    let mut params = Vec::new();
    for key in store.keys() {
        let dense = analytic.dense(key, store.get(key));
        let mut check = ParamCheck {
            key,
            max_rel_error: 0.0,
            worst_index: 0,
            checked: 0,
            skipped_kinks: 0,
        };
        for i in 0..dense.len() {
            let orig = work.get(key).data[i];
            work.get_mut(key).data[i] = orig + h;
            let plus = f(&work);
            work.get_mut(key).data[i] = orig - h;
            let minus = f(&work);
            work.get_mut(key).data[i] = orig;

            let central = (plus - minus) / (2.0 * h);
            let forward = (plus - base) / h;
            let backward = (base - minus) / h;
            if (forward - backward).abs() > KINK_RATIO * central.abs().max(1.0) {
                check.skipped_kinks += 1;
                continue;
            }
            let err = rel_error(dense[i], central);
            check.checked += 1;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        params.push(check);
    }
    FdReport { params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Param, Tape};

    #[test]
    fn detects_kink_and_wrong_gradient() {
        let store = ParamStore::from_params(
            2,
            vec![(
                ParamKey::AttnOut,
                Param {
                    rows: 1,
                    cols: 2,
                    data: vec![0.0, 1.5],
                },
            )],
        );
        let f = |s: &ParamStore| {
            let mut t = Tape::new();
            let x = t.param(s, ParamKey::AttnOut);
            let l = t.l1_norm(x);
            t.scalar_value(l)
        };
        let mut t = Tape::new();
        let x = t.param(&store, ParamKey::AttnOut);
        let l = t.l1_norm(x);
        let g = t.backward(l).unwrap();
        let report = finite_diff_check(f, &store, &g, 1e-6);
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.checked(), 1);
        assert!(report.passes(1e-8));

        let mut wrong = Gradients::new();
        wrong.add_row(ParamKey::AttnOut, 0, &[0.0, -1.0]);
        assert!(!finite_diff_check(f, &store, &wrong, 1e-6).passes(1e-4));
    }
}
