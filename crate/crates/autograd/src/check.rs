//! Central finite-difference gradient checking.
//!
//! The numeric side re-evaluates the forward pass from scratch for every
//! perturbed entry and never touches the backward rules, so it is an
//! independent route to the same derivative.

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so entries whose true derivative is
/// zero are judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// One compared derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    /// Which input (or parameter) the entry belongs to.
    pub tensor: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_error(&self) -> f64 {
        rel_error(self.analytic, self.numeric)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(GradSample::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Compares gradients of a scalar function of `inputs` against central differences.
///
/// `build` receives a fresh graph and one leaf per input and must return a
/// scalar. `elements` optionally restricts the check to `(input, element)`
/// pairs; `None` checks every entry.
pub fn check_inputs<'s, F>(build: F, inputs: &[Tensor], step: f64, elements: Option<&[(usize, usize)]>) -> GradCheckReport
where
    F: Fn(&mut Graph<'s>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };

    let all: Vec<(usize, usize)>;
    let targets = match elements {
        Some(e) => e,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e))).collect();
            &all
        }
    };
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for &(ti, ei) in targets {
        let orig = work[ti].data()[ei];
        work[ti].data_mut()[ei] = orig + step;
        let plus = eval(&work);
        work[ti].data_mut()[ei] = orig - step;
        let minus = eval(&work);
        work[ti].data_mut()[ei] = orig;
        let analytic = grads.get(vars[ti]).map_or(0.0, |t| t.data()[ei]);
        report.samples.push(GradSample { tensor: ti, element: ei, analytic, numeric: (plus - minus) / (2.0 * step) });
    }
    report
}

/// Same as [`check_inputs`] but for entries of a parameter store.
///
/// `build` must construct the loss on a graph that has `store` attached as
/// trainable (it receives the graph already set up that way).
pub fn check_params<F>(store: &mut ParamStore, build: F, entries: &[(ParamId, usize)], step: f64) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic: Vec<f64> = {
        let mut g = Graph::with_params(store);
        let loss = build(&mut g);
        let grads = g.backward(loss);
        entries
            .iter()
            .map(|&(id, e)| grads.param(id).map_or(0.0, |t| t.data()[e]))
            .collect()
    };
    let mut report = GradCheckReport::default();
    for (&(id, e), &a) in entries.iter().zip(&analytic) {
        let orig = store.get(id).data()[e];
        store.get_mut(id).data_mut()[e] = orig + step;
        let plus = eval_store(store, &build);
        store.get_mut(id).data_mut()[e] = orig - step;
        let minus = eval_store(store, &build);
        store.get_mut(id).data_mut()[e] = orig;
        report.samples.push(GradSample { tensor: id.index(), element: e, analytic: a, numeric: (plus - minus) / (2.0 * step) });
    }
    report
}

fn eval_store<F: Fn(&mut Graph) -> Var>(store: &ParamStore, build: &F) -> f64 {
    let mut g = Graph::with_params(store);
    let out = build(&mut g);
    g.value(out).item()
}
