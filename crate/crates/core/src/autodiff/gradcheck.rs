use super::params::{ParamId, ParamStore};
use super::tape::{Gradients, Tape, Var};

/// Settings for comparing analytic gradients with central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so components that are
    /// both essentially zero do not report huge relative errors.
    pub denominator_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-4, tolerance: 1e-3, denominator_floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Components whose ±step evaluations crossed a relu kink.
    pub skipped_nonsmooth: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

impl ParamCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub error: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.params.iter().all(|p| p.passed(self.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        if self.error.is_some() {
            return f64::INFINITY;
        }
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped_nonsmooth).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Computes analytic gradients of the scalar produced by `loss_fn` and compares
/// every parameter component against a central difference.
pub fn finite_difference_check<F>(params: &mut ParamStore<f64>, mut loss_fn: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> (Tape<f64>, Var),
{
    let (tape, loss) = loss_fn(params);
    match tape.gradients(loss) {
        Ok(analytic) => compare_gradients(params, &analytic, loss_fn, opts),
        Err(e) => GradCheckReport { tolerance: opts.tolerance, params: Vec::new(), error: Some(e.to_string()) },
    }
}

/// Compares supplied gradients against central differences of `loss_fn`.
pub fn compare_gradients<F>(
    params: &mut ParamStore<f64>,
    analytic: &Gradients<f64>,
    mut loss_fn: F,
    opts: GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> (Tape<f64>, Var),
{
    let (base_tape, base_loss) = loss_fn(params);
    if base_tape.value(base_loss).numel() != 1 {
        return GradCheckReport {
            tolerance: opts.tolerance,
            params: Vec::new(),
            error: Some(format!("loss has shape {:?}", base_tape.shape(base_loss))),
        };
    }
    let base_kinks = base_tape.kink_signature();
    let ids: Vec<ParamId> = params.ids().collect();
    let mut checks = Vec::with_capacity(ids.len());
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        let grad = analytic.get_or_zero(id, &shape);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            checked: 0,
            skipped_nonsmooth: 0,
            max_rel_error: 0.0,
            worst_index: None,
        };
        for i in 0..grad.numel() {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + opts.step;
            let (tp, lp) = loss_fn(params);
            params.get_mut(id).data_mut()[i] = original - opts.step;
            let (tm, lm) = loss_fn(params);
            params.get_mut(id).data_mut()[i] = original;
            if tp.kink_signature() != base_kinks || tm.kink_signature() != base_kinks {
                check.skipped_nonsmooth += 1;
                continue;
            }
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * opts.step);
            let err = relative_error(grad.data()[i], numeric, opts.denominator_floor);
            check.checked += 1;
            if !(err <= check.max_rel_error) {
                check.max_rel_error = err;
                check.worst_index = Some(i);
            }
        }
        checks.push(check);
    }
    GradCheckReport { tolerance: opts.tolerance, params: checks, error: None }
}
