//! Central finite-difference checks of recorded gradients.

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Var};

/// Builds a scalar loss from the input handles.
pub type LossBuilder<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar coordinates compared.
    pub probes: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Denominator floor that keeps near-zero gradients from inflating the
/// relative error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

fn evaluate(build: &LossBuilder, inputs: &[ArrayD<f64>]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.scalar(loss)
}

/// Compares analytic and central-difference gradients of `build` with
/// respect to every input. `max_probes_per_input` limits how many
/// coordinates of each input are perturbed; the subset is drawn from `rng`.
pub fn check_gradients<R: Rng + ?Sized>(
    build: &LossBuilder,
    inputs: &[ArrayD<f64>],
    step: f64,
    max_probes_per_input: usize,
    rng: &mut R,
) -> GradCheckReport {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let mut grads = g.backward(loss);
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect();

    let mut report = GradCheckReport {
        probes: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    let mut perturbed: Vec<ArrayD<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let indices: Vec<usize> = if n <= max_probes_per_input {
            (0..n).collect()
        } else {
            sample(rng, n, max_probes_per_input).into_vec()
        };
        for idx in indices {
            let original = input.as_slice().expect("standard layout")[idx];
            perturbed[k].as_slice_mut().expect("standard layout")[idx] = original + step;
            let plus = evaluate(build, &perturbed);
            perturbed[k].as_slice_mut().expect("standard layout")[idx] = original - step;
            let minus = evaluate(build, &perturbed);
            perturbed[k].as_slice_mut().expect("standard layout")[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].as_slice().expect("standard layout")[idx];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.probes += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((k, idx, a, numeric));
            }
        }
    }
    report
}
