//! MI estimation on a frozen encoder: a fresh critic is trained on pairs of
//! representations and the estimate is read out on held-out pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cdpgen::{class_entropy, CdpDataset};
use crate::diffengine::{forward, forward_backward, Graph, Optimizer, OptimizerConfig, ParamInit, ParamSet};
use crate::error::{Error, Result};
use crate::nets::{EncoderRunner, HeadArch, CRITIC_PREFIX};
use crate::objective::graph::nt_xent_graph;
use crate::objective::{bound_bits, mi_bits_from_nats, BOUND_SLACK_BITS};
use crate::pairing::{augment_view, Augmentation, PairingStrategy, SameClassSampler};
use crate::rng::{derive_rng, derive_seed, STREAM_EVAL, STREAM_INIT, STREAM_PAIRING};
use crate::tensor::{Real, Tensor};
use crate::trainer::EncoderCheckpoint;

/// Tolerance of [`theorem1_status`] used when none is given.
pub const DEFAULT_EPSILON: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub k_est: usize,
    pub pairing: PairingStrategy,
    pub steps: usize,
    pub eval_batches: usize,
    pub seed: u64,
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k_est: 256,
            pairing: PairingStrategy::same_class(crate::cdpgen::TaskSpec::all()),
            steps: 1000,
            eval_batches: 8,
            seed: 0,
            temperature: 0.1,
            optimizer: OptimizerConfig::adam(1e-3),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_est < 2 || self.eval_batches < 1 {
            return Err(Error::InvalidArgument(
                "k_est must be >= 2 and eval_batches >= 1".into(),
            ));
        }
        if !(self.temperature > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature and epsilon must be positive".into(),
            ));
        }
        if self.optimizer.lr() <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        self.pairing.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremStatus {
    /// The estimate matches H(C), so the true MI is pinned to H(C).
    Pinned,
    /// Below H(C); only the lower-bound reading applies.
    LowerBoundOnly,
    /// Above H(C), which no valid lower bound can be; the estimator is at fault.
    EstimatorViolation,
}

/// Decision rule with tolerance `epsilon` around the class entropy.
pub fn theorem1_status(estimate_bits: f64, class_entropy_bits: f64, epsilon: f64) -> Result<TheoremStatus> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(if estimate_bits > class_entropy_bits + epsilon {
        TheoremStatus::EstimatorViolation
    } else if estimate_bits < class_entropy_bits - epsilon {
        TheoremStatus::LowerBoundOnly
    } else {
        TheoremStatus::Pinned
    })
}

/// As [`theorem1_status`], taking H(C) from a same-class pairing; any other
/// pairing is rejected because the premise does not hold.
pub fn theorem1_status_for(pairing: &PairingStrategy, estimate_bits: f64, epsilon: f64) -> Result<TheoremStatus> {
    match pairing {
        PairingStrategy::SameClass { task } => theorem1_status(estimate_bits, class_entropy(task), epsilon),
        PairingStrategy::Augmented { .. } => Err(Error::Premise(
            "class-entropy pinning needs same-class pairing; augmentation pairs have no class entropy".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Mean over held-out batches.
    pub bits: f64,
    pub std_bits: f64,
    pub k_est: usize,
    pub bound_bits: f64,
    pub pairing: String,
    pub class_entropy_bits: Option<f64>,
    pub epsilon: f64,
    /// Present for same-class pairing only.
    pub theorem_status: Option<TheoremStatus>,
    /// Per-step estimate on the critic's training batches.
    pub train_curve: Vec<f64>,
    pub eval_values: Vec<f64>,
    /// Content hash of the encoder parameters used.
    pub encoder_hash: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub pass: bool,
    /// `bound_bits - bits`; negative on failure.
    pub margin: f64,
}

pub fn check_bound(estimate: &MiEstimate) -> BoundCheck {
    check_bound_bits(estimate.bits, estimate.k_est)
}

pub fn check_bound_bits(bits: f64, k: usize) -> BoundCheck {
    let bound = bound_bits(k);
    BoundCheck {
        pass: bits <= bound + BOUND_SLACK_BITS,
        margin: bound - bits,
    }
}

impl MiEstimate {
    /// Held-out mean within `3 * std_bits` of the best training-batch value.
    pub fn within_training_envelope(&self) -> bool {
        let envelope = self.train_curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.train_curve.is_empty() || self.bits <= envelope + 3.0 * self.std_bits
    }
}

/// Representation pairs for one batch, `[2K, d]` with x rows first.
enum PairSource<'a> {
    /// Frozen representations of every sample, indexed by dataset position.
    SameClass {
        reps: Vec<Vec<f32>>,
        train: SameClassSampler,
        eval_pairs: Vec<(usize, usize)>,
    },
    Augmented {
        ds: &'a CdpDataset,
        ops: Vec<Augmentation>,
        runner: EncoderRunner<'a>,
        train: Vec<usize>,
        eval: Vec<usize>,
    },
}

fn rows_tensor<'a>(rows: impl Iterator<Item = &'a [f32]>, n: usize, d: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(n * d);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(vec![n, d], data)
}

impl PairSource<'_> {
    fn from_pairs(reps: &[Vec<f32>], pairs: &[(usize, usize)], d: usize) -> Result<Tensor<f32>> {
        let k = pairs.len();
        let rows = pairs
            .iter()
            .map(|p| reps[p.0].as_slice())
            .chain(pairs.iter().map(|p| reps[p.1].as_slice()));
        rows_tensor(rows, 2 * k, d)
    }

    fn augmented(
        ds: &CdpDataset,
        ops: &[Augmentation],
        runner: &EncoderRunner<'_>,
        sources: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Tensor<f32>> {
        let mut views = Vec::with_capacity(2 * sources.len());
        let mut ys = Vec::with_capacity(sources.len());
        for &i in sources {
            views.push(augment_view(&ds.samples[i].image, ops, rng)?);
            ys.push(augment_view(&ds.samples[i].image, ops, rng)?);
        }
        views.extend(ys);
        let refs: Vec<&Tensor<f32>> = views.iter().collect();
        runner.encode(&Tensor::stack(&refs)?)
    }

    fn train_batch(&self, k: usize, d: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
        match self {
            PairSource::SameClass { reps, train, .. } => {
                let pairs: Vec<(usize, usize)> = (0..k).map(|_| train.sample(rng)).collect();
                Self::from_pairs(reps, &pairs, d)
            }
            PairSource::Augmented {
                ds, ops, runner, train, ..
            } => {
                let sources: Vec<usize> = (0..k).map(|_| train[rng.gen_range(0..train.len())]).collect();
                Self::augmented(ds, ops, runner, &sources, rng)
            }
        }
    }

    fn eval_batch(&self, b: usize, k: usize, d: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
        match self {
            PairSource::SameClass { reps, eval_pairs, .. } => {
                Self::from_pairs(reps, &eval_pairs[b * k..(b + 1) * k], d)
            }
            PairSource::Augmented {
                ds, ops, runner, eval, ..
            } => {
                let picks = rand::seq::index::sample(rng, eval.len(), k);
                let sources: Vec<usize> = picks.iter().map(|i| eval[i]).collect();
                Self::augmented(ds, ops, runner, &sources, rng)
            }
        }
    }
}

/// Critic on `[2K, d]` representations with the projection-head layout.
pub fn critic_graph(critic: &HeadArch, k: usize, tau: f64) -> Result<Graph> {
    let mut g = Graph::new();
    let h = g.input(&[2 * k, critic.input_dim]);
    let z = critic.build(&mut g, h, CRITIC_PREFIX)?;
    let nodes = nt_xent_graph(&mut g, z, tau)?;
    g.set_loss(nodes.loss);
    Ok(g)
}

fn loss_bits(
    g: &Graph,
    critic: &ParamSet<f32>,
    h: &Tensor<f32>,
    k: usize,
    grads: bool,
) -> Result<(f64, Option<ParamSet<f32>>)> {
    // held-out read-out runs in f64 so a collapsed encoder scores exactly zero
    let (nats, grads) = if grads {
        let ev = forward_backward(g, critic, &[h])?;
        (ev.loss.expect("loss node set").as_f64(), ev.grads)
    } else {
        let ev = forward(g, &critic.cast::<f64>(), &[&h.cast::<f64>()])?;
        (ev.loss.expect("loss node set"), None)
    };
    // f32 rounding can push a collapsed or saturated loss just past its limits
    let nats = nats.clamp(0.0, ((2 * k - 1) as f64).ln());
    Ok((mi_bits_from_nats(nats, k)?.bits, grads))
}

/// Trains a fresh critic on the frozen encoder, then averages the estimate
/// over held-out batches. The checkpoint is only read.
pub fn estimate_mi(ckpt: &EncoderCheckpoint, config: &EstimationConfig, ds: &CdpDataset) -> Result<MiEstimate> {
    config.validate()?;
    let arch = &ckpt.meta.architecture;
    let d = arch.encoder.repr_dim();
    let critic_arch = HeadArch::new(d, arch.head.hidden_dim, arch.head.output_dim);
    if critic_arch.input_dim != arch.encoder.repr_dim() {
        return Err(Error::Shape("critic input does not match the encoder output".into()));
    }
    if ds.size != arch.encoder.image_size() {
        return Err(Error::Shape(format!(
            "dataset images are {}px, encoder expects {}px",
            ds.size,
            arch.encoder.image_size()
        )));
    }
    let k = config.k_est;
    let enc = ckpt.encoder_params();
    let encoder_hash = enc.content_hash();
    let train: Vec<usize> = ds.train_range().collect();
    let eval: Vec<usize> = ds.eval_range().collect();
    let mut eval_rng = derive_rng(config.seed, 0, STREAM_EVAL);

    let source = match &config.pairing {
        PairingStrategy::SameClass { task } => {
            let runner = EncoderRunner::new(&arch.encoder, &enc, 256)?;
            let all: Vec<usize> = (0..ds.len()).collect();
            let h = runner.encode(&ds.images(&all))?;
            let reps: Vec<Vec<f32>> = (0..ds.len()).map(|i| h.row(i).to_vec()).collect();
            let train_sampler = SameClassSampler::new(ds, &train, task)?;
            let eval_sampler = SameClassSampler::new(ds, &eval, task)?;
            let needed = config.eval_batches * k;
            if (eval_sampler.num_pairs() as usize) < needed {
                return Err(Error::SplitTooSmall {
                    required: needed,
                    available: eval_sampler.num_pairs() as usize,
                });
            }
            let eval_pairs = eval_sampler.sample_distinct(needed, &mut eval_rng)?;
            PairSource::SameClass {
                reps,
                train: train_sampler,
                eval_pairs,
            }
        }
        PairingStrategy::Augmented { ops } => {
            if eval.len() < k {
                return Err(Error::SplitTooSmall {
                    required: k,
                    available: eval.len(),
                });
            }
            if train.is_empty() {
                return Err(Error::InvalidArgument("training split is empty".into()));
            }
            PairSource::Augmented {
                ds,
                ops: ops.clone(),
                runner: EncoderRunner::new(&arch.encoder, &enc, 2 * k)?,
                train,
                eval,
            }
        }
    };

    let g = critic_graph(&critic_arch, k, config.temperature)?;
    let mut init = ParamInit::new(derive_seed(config.seed, 1, STREAM_INIT));
    critic_arch.init(&mut init, CRITIC_PREFIX)?;
    let mut critic = init.finish();
    let mut opt = Optimizer::<f32>::new(config.optimizer.clone())?;
    let mut train_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = derive_rng(config.seed, step as u64, STREAM_PAIRING);
        let h = source.train_batch(k, d, &mut rng)?;
        let (bits, grads) = loss_bits(&g, &critic, &h, k, true)?;
        train_curve.push(bits);
        opt.step(&mut critic, grads.as_ref().expect("grads requested"))?;
    }

    let mut eval_values = Vec::with_capacity(config.eval_batches);
    for b in 0..config.eval_batches {
        let h = source.eval_batch(b, k, d, &mut eval_rng)?;
        eval_values.push(loss_bits(&g, &critic, &h, k, false)?.0);
    }
    let n = eval_values.len() as f64;
    let bits = eval_values.iter().sum::<f64>() / n;
    let std_bits = (eval_values.iter().map(|v| (v - bits).powi(2)).sum::<f64>() / n).sqrt();
    let bound = bound_bits(k);
    if bits > bound + BOUND_SLACK_BITS {
        return Err(Error::BoundViolation { bits, bound });
    }
    let (class_entropy_bits, theorem_status) = match &config.pairing {
        PairingStrategy::SameClass { task } => (
            Some(class_entropy(task)),
            Some(theorem1_status_for(&config.pairing, bits, config.epsilon)?),
        ),
        PairingStrategy::Augmented { .. } => (None, None),
    };
    Ok(MiEstimate {
        bits,
        std_bits,
        k_est: k,
        bound_bits: bound,
        pairing: config.pairing.describe(),
        class_entropy_bits,
        epsilon: config.epsilon,
        theorem_status,
        train_curve,
        eval_values,
        encoder_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_thresholds() {
        assert_eq!(theorem1_status(5.97, 6.0, 0.1).unwrap(), TheoremStatus::Pinned);
        assert_eq!(theorem1_status(4.0, 6.0, 0.1).unwrap(), TheoremStatus::LowerBoundOnly);
        assert_eq!(
            theorem1_status(6.4, 6.0, 0.1).unwrap(),
            TheoremStatus::EstimatorViolation
        );
        assert!(theorem1_status(6.0, 6.0, 0.0).is_err());
    }

    #[test]
    fn augmentation_pairing_has_no_theorem_status() {
        assert!(matches!(
            theorem1_status_for(&PairingStrategy::simclr(0.5), 1.0, 0.1),
            Err(Error::Premise(_))
        ));
    }
}
