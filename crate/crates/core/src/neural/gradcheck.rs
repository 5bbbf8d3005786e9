use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per trainable parameter, by name.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub pass: bool,
}

fn eval<F>(store: &ParamStore, loss_fn: &F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    tape.scalar(loss)
}

/// Reverse-mode gradients of `loss_fn` for every parameter of `store`.
pub fn analytic_gradients<F>(store: &mut ParamStore, loss_fn: &F) -> Vec<Tensor>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    tape.backward(loss);
    store.accumulate(&tape);
    let grads = store.ids().map(|id| store.grad(id).clone()).collect();
    store.zero_grads();
    grads
}

/// Compares supplied gradients against central differences, element by element.
///
/// Relative error uses the denominator `max(|a|, |n|, 1e-8)`.
pub fn compare_gradients<F>(store: &mut ParamStore, analytic: &[Tensor], loss_fn: &F, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for (id, a) in ids.into_iter().zip(analytic) {
        if !store.is_trainable(id) {
            continue;
        }
        let mut worst: f64 = 0.0;
        for k in 0..a.len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(store, loss_fn);
            store.value_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(store, loss_fn);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let an = a.data()[k];
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-8);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = worst.max(rel);
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((store.name(id).to_string(), worst));
    }
    GradCheckReport {
        per_param,
        max_rel_error,
        tol,
        pass: max_rel_error < tol,
    }
}

/// Checks reverse-mode gradients of a pure scalar loss against central differences.
pub fn grad_check<F>(store: &mut ParamStore, tol: f64, loss_fn: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let analytic = analytic_gradients(store, &loss_fn);
    compare_gradients(store, &analytic, &loss_fn, tol)
}
