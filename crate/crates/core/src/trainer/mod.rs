//! Contrastive training of encoder plus projection head.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdpgen::{CdpDataset, TaskSpec};
use crate::diffengine::{forward, forward_backward, Graph, Optimizer, OptimizerConfig, ParamSet};
use crate::error::{Error, Result};
use crate::nets::{Architecture, EncoderRecipe, HEAD_PREFIX};
use crate::objective::graph::{nt_xent_external_graph, nt_xent_graph, NtXentNodes};
use crate::objective::{bound_bits, mi_bits_from_nats};
use crate::pairing::{make_pairs, PairBatch, PairingStrategy};
use crate::rng::{derive_rng, derive_seed, STREAM_INIT, STREAM_NEGATIVES, STREAM_PAIRING};
use crate::tensor::{Real, Tensor};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointMeta, EncoderCheckpoint, MiPoint, CHECKPOINT_VERSION,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub k_tr: usize,
    pub steps: usize,
    pub temperature: f64,
    pub pairing: PairingStrategy,
    pub encoder_recipe: EncoderRecipe,
    pub repr_dim: usize,
    pub proj_dim: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub eval_interval: usize,
    /// External negatives per batch; 0 means in-batch negatives.
    #[serde(default)]
    pub external_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_tr: 16,
            steps: 3000,
            temperature: 0.3,
            pairing: PairingStrategy::same_class(TaskSpec::all()),
            encoder_recipe: EncoderRecipe::SmallConv,
            repr_dim: 64,
            proj_dim: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            eval_interval: 100,
            external_negatives: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_tr < 1 || self.steps < 1 || self.eval_interval < 1 {
            return Err(Error::InvalidArgument(
                "k_tr, steps and eval_interval must all be at least 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.repr_dim < 1 || self.proj_dim < 1 {
            return Err(Error::InvalidArgument("representation sizes must be positive".into()));
        }
        if self.optimizer.lr() <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        self.pairing.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn architecture(&self, image_size: usize) -> Architecture {
        Architecture::new(self.encoder_recipe, image_size, self.repr_dim, self.proj_dim)
    }
}

/// Encoder, head and loss for a batch of `2K + M` stacked views.
pub fn contrastive_graph(arch: &Architecture, k: usize, m: usize, tau: f64) -> Result<(Graph, NtXentNodes)> {
    let mut g = Graph::new();
    let x = g.input(&arch.encoder.input_shape(2 * k + m));
    let h = arch.encoder.build(&mut g, x)?;
    let z = arch.head.build(&mut g, h, HEAD_PREFIX)?;
    let nodes = if m == 0 {
        nt_xent_graph(&mut g, z, tau)?
    } else {
        nt_xent_external_graph(&mut g, z, k, tau)?
    };
    g.set_loss(nodes.loss);
    Ok((g, nodes))
}

/// `[2K + M, ...]`: x views, then y views, then external negatives.
pub fn stack_views(batch: &PairBatch) -> Result<Tensor<f32>> {
    let mut shape = batch.views_x.shape().to_vec();
    let mut data = Vec::with_capacity(2 * batch.views_x.len() + batch.externals.as_ref().map_or(0, Tensor::len));
    data.extend_from_slice(batch.views_x.data());
    data.extend_from_slice(batch.views_y.data());
    shape[0] *= 2;
    if let Some(ext) = &batch.externals {
        data.extend_from_slice(ext.data());
        shape[0] += ext.rows();
    }
    Tensor::new(shape, data)
}

/// Untrained checkpoint: the parameters `train` starts from.
pub fn init_checkpoint(config: &TrainConfig, image_size: usize) -> Result<EncoderCheckpoint> {
    config.validate()?;
    let architecture = config.architecture(image_size);
    let params = architecture.init_params(derive_seed(config.seed, 0, STREAM_INIT))?;
    Ok(EncoderCheckpoint {
        meta: CheckpointMeta {
            architecture,
            seed: config.seed,
            config_hash: config.hash(),
            k_tr: config.k_tr,
            temperature: config.temperature,
            steps_completed: 0,
            final_loss: None,
            mi_curve: Vec::new(),
        },
        params,
    })
}

/// Training batch for `step`; a pure function of (config, datasets, step).
pub fn training_batch(
    config: &TrainConfig,
    ds: &CdpDataset,
    negatives: Option<&CdpDataset>,
    step: usize,
) -> Result<PairBatch> {
    let train: Vec<usize> = ds.train_range().collect();
    let mut rng = derive_rng(config.seed, step as u64, STREAM_PAIRING);
    let mut batch = make_pairs(ds, &train, &config.pairing, config.k_tr, &mut rng)?;
    if config.external_negatives > 0 {
        let neg = negatives
            .ok_or_else(|| Error::InvalidArgument("external_negatives > 0 but no negative dataset given".into()))?;
        let pool: Vec<usize> = neg.train_range().collect();
        if pool.is_empty() {
            return Err(Error::InvalidArgument("negative dataset is empty".into()));
        }
        let mut nrng = derive_rng(config.seed, step as u64, STREAM_NEGATIVES);
        let idx: Vec<usize> = (0..config.external_negatives)
            .map(|_| pool[nrng.gen_range(0..pool.len())])
            .collect();
        batch.externals = Some(neg.images(&idx));
    }
    Ok(batch)
}

/// Loss in nats of `ckpt` on one batch.
pub fn evaluate_loss(ckpt: &EncoderCheckpoint, batch: &PairBatch) -> Result<f64> {
    let m = batch.externals.as_ref().map_or(0, Tensor::rows);
    let (g, _) = contrastive_graph(&ckpt.meta.architecture, batch.k(), m, ckpt.meta.temperature)?;
    let x = stack_views(batch)?;
    let ev = forward(&g, &ckpt.params, &[&x])?;
    Ok(ev.loss.expect("loss node set").as_f64())
}

/// Per-step record kept alongside the checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

pub fn train(config: &TrainConfig, ds: &CdpDataset) -> Result<EncoderCheckpoint> {
    train_with_negatives(config, ds, None).map(|(c, _)| c)
}

/// Trains for exactly `config.steps` optimizer steps.
///
/// The MI curve holds, every `eval_interval` steps, the estimate at K_Tr of
/// the mean loss over the preceding `eval_interval` training batches.
pub fn train_with_negatives(
    config: &TrainConfig,
    ds: &CdpDataset,
    negatives: Option<&CdpDataset>,
) -> Result<(EncoderCheckpoint, TrainLog)> {
    config.validate()?;
    if ds.is_empty() || ds.train_range().is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut ckpt = init_checkpoint(config, ds.size)?;
    let (g, _) = contrastive_graph(
        &ckpt.meta.architecture,
        config.k_tr,
        config.external_negatives,
        config.temperature,
    )?;
    let mut opt = Optimizer::<f32>::new(config.optimizer.clone())?;
    let mut log = TrainLog {
        losses: Vec::with_capacity(config.steps),
    };
    let mut window = 0.0;
    let mut window_len = 0usize;

    for step in 0..config.steps {
        let batch = training_batch(config, ds, negatives, step)?;
        let x = stack_views(&batch)?;
        let diverged = |reason: String, ckpt: &EncoderCheckpoint| Error::Diverged {
            step,
            reason,
            last_good: Box::new(ckpt.clone()),
        };
        let ev = match forward_backward(&g, &ckpt.params, &[&x]) {
            Ok(ev) => ev,
            Err(e @ Error::NonFinite { .. }) => return Err(diverged(e.to_string(), &ckpt)),
            Err(e) => return Err(e),
        };
        let loss = ev.loss.expect("loss node set").as_f64();
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}"), &ckpt));
        }
        let grads: &ParamSet<f32> = ev.grads.as_ref().expect("grads requested");
        let mut next = ckpt.params.clone();
        match opt.step(&mut next, grads) {
            Ok(()) => {}
            Err(e @ Error::NonFiniteGradient(_)) => return Err(diverged(e.to_string(), &ckpt)),
            Err(e) => return Err(e),
        }
        if !next.iter().all(|(_, t)| t.all_finite()) {
            return Err(diverged("parameter update produced non-finite values".into(), &ckpt));
        }
        ckpt.params = next;
        ckpt.meta.steps_completed = step + 1;
        ckpt.meta.final_loss = Some(loss);
        log.losses.push(loss);

        window += loss;
        window_len += 1;
        if (step + 1) % config.eval_interval == 0 || step + 1 == config.steps {
            if config.external_negatives == 0 {
                // f32 rounding can leave a saturated mean loss a hair below zero
                let mi = mi_bits_from_nats((window / window_len as f64).max(0.0), config.k_tr)?;
                debug_assert!(mi.bits <= bound_bits(config.k_tr) + 1e-9);
                ckpt.meta.mi_curve.push(MiPoint {
                    step: step + 1,
                    bits: mi.bits,
                });
            }
            window = 0.0;
            window_len = 0;
        }
    }
    Ok((ckpt, log))
}
