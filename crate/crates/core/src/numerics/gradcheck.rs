use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients that are
/// numerically zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[flat_index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `f` for every scalar
/// of every parameter.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &[Option<Tensor>],
    step: f64,
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for id in params.ids() {
        let grad = analytic[id.0]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no analytic gradient for {}", params.name(id))))?;
        for k in 0..params.get(id).numel() {
            let x0 = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = x0 + step;
            let up = f(&probe)?;
            probe.get_mut(id).data_mut()[k] = x0 - step;
            let down = f(&probe)?;
            probe.get_mut(id).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grad.data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{}[{k}] analytic={:e} numeric={:e}", params.name(id), grad.data()[k], numeric);
            }
        }
    }
    Ok(report)
}
