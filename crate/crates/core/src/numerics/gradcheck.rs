//! Central finite-difference checks of autodiff gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of the backward rules it is used to verify.

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rel_tol: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    /// Largest relative error among entries whose absolute error exceeds the floor.
    pub max_rel_err: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

impl GradCheckConfig {
    /// An entry agrees when the absolute error is within the floor, or the
    /// error relative to the larger magnitude is below `rel_tol`.
    pub fn agrees(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= self.abs_floor || err / analytic.abs().max(numeric.abs()) < self.rel_tol
    }
}

/// Compare `backward` against central differences for every entry of
/// `params` (all parameters when `None`).
pub fn check_gradients<F>(
    store: &mut ParamStore,
    params: Option<&[ParamId]>,
    config: GradCheckConfig,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l, store)?;
    let analytic: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();
    drop(g);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.ids().collect(),
    };
    let mut report = GradCheckReport::default();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + config.step;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - config.step;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * config.step);
            let a = analytic[id.0].data()[i];
            report.checked += 1;
            let err = (a - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(err);
            if err > config.abs_floor {
                report.max_rel_err = report.max_rel_err.max(err / a.abs().max(numeric.abs()));
            }
            if !config.agrees(a, numeric) {
                report.mismatches.push(GradMismatch {
                    param: store.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
