//! Central-difference gradient verification on the 64-bit shadow path.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffengine::exec::{evaluate, EvalOptions};
use crate::diffengine::graph::Graph;
use crate::diffengine::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose finite-difference window crossed a relu kink.
    pub skipped: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares back-propagated gradients with central differences.
///
/// Both the analytic gradient and the numeric probe run in `f64`, whatever
/// precision the caller trains in. At most `samples_per_param` coordinates are
/// drawn from each parameter tensor.
pub fn grad_check<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[&Tensor<T>],
    step: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step} outside (0, 0.1]"
        )));
    }
    let mut shadow: ParamSet<f64> = params.cast();
    let inputs64: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let input_refs: Vec<&Tensor<f64>> = inputs64.iter().collect();
    let opts = EvalOptions {
        grads: true,
        track_kinks: true,
    };
    let base = evaluate(graph, &shadow, &input_refs, opts)?;
    let analytic = base.grads.expect("requested");
    let base_sig = base.kinks.expect("requested");
    let probe = EvalOptions {
        grads: false,
        track_kinks: true,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for (name, _) in graph.params() {
        let pos = shadow.position(name).expect("validated by evaluate");
        let len = shadow.tensor_at(pos).len();
        let coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = shadow.tensor_at(pos).data()[idx];
            shadow.tensor_at_mut(pos).data_mut()[idx] = orig + step;
            let plus = evaluate(graph, &shadow, &input_refs, probe)?;
            shadow.tensor_at_mut(pos).data_mut()[idx] = orig - step;
            let minus = evaluate(graph, &shadow, &input_refs, probe)?;
            shadow.tensor_at_mut(pos).data_mut()[idx] = orig;

            if plus.kinks != minus.kinks || plus.kinks.as_ref() != Some(&base_sig) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss.expect("loss") - minus.loss.expect("loss")) / (2.0 * step);
            let a = analytic.tensor_at(pos).data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}
