//! Central finite-difference verification of the reverse pass. Runs in f64;
//! the step h = 1e-5 matches the 1e-4 relative-error budget.

use super::graph::{Graph, TensorId};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// Compare autodiff gradients of `build`'s scalar output against central
/// differences over every listed leaf input.
///
/// `build` receives the leaf values and must construct the full graph,
/// returning the scalar loss id together with the leaf ids (in the same
/// order as `inputs`).
pub fn check<F>(name: &str, inputs: &[Vec<f64>], mut build: F) -> GradCheckResult
where
    F: FnMut(&mut Graph<f64>, &[Vec<f64>]) -> (TensorId, Vec<TensorId>),
{
    let mut g = Graph::new();
    let (loss, leaves) = build(&mut g, inputs);
    g.backward(loss).expect("backward failed during gradcheck");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(id).len()]))
        .collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (li, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[li][ei] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[li][ei] -= FD_STEP;
            let fp = eval(&mut build, &plus);
            let fm = eval(&mut build, &minus);
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[li][ei];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    GradCheckResult { name: name.to_string(), max_rel_err: max_rel, checked }
}

/// Like `check`, but probes only the listed (leaf, element) coordinates;
/// used for whole-network checks where exhaustive probing is too slow.
pub fn check_subset<F>(name: &str, inputs: &[Vec<f64>], probes: &[(usize, usize)], mut build: F) -> GradCheckResult
where
    F: FnMut(&mut Graph<f64>, &[Vec<f64>]) -> (TensorId, Vec<TensorId>),
{
    let mut g = Graph::new();
    let (loss, leaves) = build(&mut g, inputs);
    g.backward(loss).expect("backward failed during gradcheck");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(id).len()]))
        .collect();

    let mut max_rel = 0.0f64;
    for &(li, ei) in probes {
        let mut plus = inputs.to_vec();
        plus[li][ei] += FD_STEP;
        let mut minus = inputs.to_vec();
        minus[li][ei] -= FD_STEP;
        let fp = eval(&mut build, &plus);
        let fm = eval(&mut build, &minus);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic[li][ei];
        let denom = a.abs().max(numeric.abs()).max(1.0);
        max_rel = max_rel.max((a - numeric).abs() / denom);
    }
    GradCheckResult { name: name.to_string(), max_rel_err: max_rel, checked: probes.len() }
}

fn eval<F>(build: &mut F, inputs: &[Vec<f64>]) -> f64
where
    F: FnMut(&mut Graph<f64>, &[Vec<f64>]) -> (TensorId, Vec<TensorId>),
{
    let mut g = Graph::new();
    let (loss, _) = build(&mut g, inputs);
    g.value(loss)[0]
}
