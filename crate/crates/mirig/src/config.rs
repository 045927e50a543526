//! TOML sweep configuration.

use std::path::PathBuf;

use mirig_core::cdpgen::{make_dataset, Attribute, CdpDataset, TaskSpec, SUPPORTED_SIZES};
use mirig_core::diffengine::OptimizerConfig;
use mirig_core::error::{Error, Result};
use mirig_core::nets::EncoderRecipe;
use mirig_core::pairing::{Augmentation, PairingStrategy};
use mirig_core::postestimator::{EstimationConfig, DEFAULT_EPSILON};
use mirig_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub mix: f32,
    /// Packed dataset directory to load instead of generating one.
    pub path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n: 6400,
            seed: 1,
            size: 32,
            mix: 0.3,
            path: None,
        }
    }
}

impl DatasetSection {
    pub fn load(&self) -> Result<CdpDataset> {
        match &self.path {
            Some(dir) => mirig_core::cdpgen::load_dataset(dir),
            None => make_dataset(self.n, self.seed, self.size, self.mix),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.path.is_none() && (self.n == 0 || !SUPPORTED_SIZES.contains(&self.size)) {
            return Err(Error::InvalidArgument(format!(
                "dataset needs n >= 1 and size in {SUPPORTED_SIZES:?}"
            )));
        }
        Ok(())
    }
}

/// Pairing as written in config files:
/// `kind = "same_class"` with `attributes`, or `kind = "augment"` with `ops`
/// (`"crop"`, `"jitter"`, optionally `"crop:0.3"`) sharing `strength`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingSpec {
    pub kind: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub ops: Vec<String>,
    #[serde(default)]
    pub strength: Option<f32>,
}

impl PairingSpec {
    pub fn to_strategy(&self) -> Result<PairingStrategy> {
        match self.kind.as_str() {
            "same_class" => {
                let task = if self.attributes.is_empty() {
                    TaskSpec::all()
                } else {
                    TaskSpec::parse(&self.attributes.join(","))?
                };
                Ok(PairingStrategy::same_class(task))
            }
            "augment" => {
                if self.ops.is_empty() {
                    return Err(Error::InvalidArgument("augment pairing needs at least one op".into()));
                }
                let ops = self
                    .ops
                    .iter()
                    .map(|op| parse_op(op, self.strength))
                    .collect::<Result<Vec<_>>>()?;
                let s = PairingStrategy::augmented(ops);
                s.validate()?;
                Ok(s)
            }
            other => Err(Error::InvalidArgument(format!(
                "pairing kind `{other}` is not same_class or augment"
            ))),
        }
    }
}

fn parse_op(op: &str, default_strength: Option<f32>) -> Result<Augmentation> {
    let (name, strength) = match op.split_once(':') {
        Some((n, s)) => (
            n,
            s.trim()
                .parse::<f32>()
                .map_err(|_| Error::InvalidArgument(format!("bad strength in `{op}`")))?,
        ),
        None => (
            op,
            default_strength.ok_or_else(|| Error::InvalidArgument(format!("op `{op}` has no strength")))?,
        ),
    };
    AugKind::parse(name.trim()).map(|k| k.at(strength))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Crop,
    Jitter,
}

impl AugKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(AugKind::Crop),
            "jitter" => Ok(AugKind::Jitter),
            other => Err(Error::InvalidArgument(format!("unknown augmentation `{other}`"))),
        }
    }

    pub fn at(self, strength: f32) -> Augmentation {
        match self {
            AugKind::Crop => Augmentation::RandomResizedCrop(strength),
            AugKind::Jitter => Augmentation::ColorJitter(strength),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Crop => "crop",
            AugKind::Jitter => "jitter",
        }
    }
}

/// Overrides applied on top of [`TrainConfig::default`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub k_tr: Option<usize>,
    pub steps: Option<usize>,
    pub temperature: Option<f64>,
    pub lr: Option<f64>,
    pub encoder: Option<EncoderRecipe>,
    pub repr_dim: Option<usize>,
    pub proj_dim: Option<usize>,
    pub seed: Option<u64>,
    pub eval_interval: Option<usize>,
    pub external_negatives: Option<usize>,
    pub pairing: Option<PairingSpec>,
}

impl TrainSection {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            k_tr: self.k_tr.unwrap_or(d.k_tr),
            steps: self.steps.unwrap_or(d.steps),
            temperature: self.temperature.unwrap_or(d.temperature),
            pairing: self
                .pairing
                .as_ref()
                .map(PairingSpec::to_strategy)
                .transpose()?
                .unwrap_or(d.pairing),
            encoder_recipe: self.encoder.unwrap_or(d.encoder_recipe),
            repr_dim: self.repr_dim.unwrap_or(d.repr_dim),
            proj_dim: self.proj_dim.unwrap_or(d.proj_dim),
            optimizer: self.lr.map(OptimizerConfig::adam).unwrap_or(d.optimizer),
            seed: self.seed.unwrap_or(d.seed),
            eval_interval: self.eval_interval.unwrap_or(d.eval_interval),
            external_negatives: self.external_negatives.unwrap_or(d.external_negatives),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Overrides applied on top of [`EstimationConfig::default`]. The pairing is
/// chosen per scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub k_est: Option<usize>,
    pub steps: Option<usize>,
    pub eval_batches: Option<usize>,
    pub seed: Option<u64>,
    pub temperature: Option<f64>,
    pub lr: Option<f64>,
    pub epsilon: Option<f64>,
}

impl EstimateSection {
    pub fn resolve(&self) -> Result<EstimationConfig> {
        let d = EstimationConfig::default();
        let cfg = EstimationConfig {
            k_est: self.k_est.unwrap_or(d.k_est),
            pairing: d.pairing,
            steps: self.steps.unwrap_or(d.steps),
            eval_batches: self.eval_batches.unwrap_or(d.eval_batches),
            seed: self.seed.unwrap_or(d.seed),
            temperature: self.temperature.unwrap_or(d.temperature),
            optimizer: self.lr.map(OptimizerConfig::adam).unwrap_or(d.optimizer),
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    BatchSize,
    InfoMin,
    TaskGrid,
    NegSample,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::BatchSize => "batch_size",
            Scenario::InfoMin => "infomin",
            Scenario::TaskGrid => "task_grid",
            Scenario::NegSample => "negsample",
        }
    }
}

/// Source of external negatives for the negative-sampling scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSpec {
    /// CDP images with the colors left out of the training set.
    Related,
    /// Uniform pixel noise.
    Noise,
    /// Value-noise backgrounds with no glyph.
    Background,
}

impl NegativeSpec {
    pub fn name(self) -> &'static str {
        match self {
            NegativeSpec::Related => "related",
            NegativeSpec::Noise => "noise",
            NegativeSpec::Background => "background",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub scenario: Scenario,
    pub k_tr: Vec<usize>,
    pub augmentation: AugKind,
    pub strengths: Vec<f32>,
    /// Training tasks of the grid.
    pub tasks: Vec<String>,
    /// Probe tasks; every scenario probes with these.
    pub probe_tasks: Vec<String>,
    pub negatives: Vec<NegativeSpec>,
    /// Colors kept in the negative-sampling training set.
    pub train_colors: Vec<String>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::BatchSize,
            k_tr: vec![2, 4, 8, 16, 32, 64, 128, 256],
            augmentation: AugKind::Crop,
            strengths: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            tasks: ["color", "digit", "position", "all"].map(String::from).to_vec(),
            probe_tasks: ["color", "digit", "position", "all"].map(String::from).to_vec(),
            negatives: vec![NegativeSpec::Related, NegativeSpec::Noise, NegativeSpec::Background],
            train_colors: vec!["red".into(), "green".into()],
            seeds: vec![0],
            output: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub estimate: EstimateSection,
    pub sweep: SweepSection,
}

pub fn parse_tasks(names: &[String]) -> Result<Vec<TaskSpec>> {
    names.iter().map(|n| TaskSpec::parse(n)).collect()
}

pub fn parse_colors(names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            ["red", "green", "blue", "white"]
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown color `{n}`")))
        })
        .collect()
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("sweep config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("sweep config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.resolve()?;
        self.estimate.resolve()?;
        let s = &self.sweep;
        if s.seeds.is_empty() {
            return Err(Error::InvalidArgument("sweep.seeds is empty".into()));
        }
        for t in parse_tasks(&s.probe_tasks)? {
            t.require_nonempty()?;
        }
        let (list, name) = match s.scenario {
            Scenario::BatchSize => (s.k_tr.len(), "k_tr"),
            Scenario::InfoMin => (s.strengths.len(), "strengths"),
            Scenario::TaskGrid => (s.tasks.len(), "tasks"),
            Scenario::NegSample => (s.negatives.len(), "negatives"),
        };
        if list == 0 {
            return Err(Error::InvalidArgument(format!("sweep.{name} is empty")));
        }
        if s.k_tr.contains(&0) {
            return Err(Error::InvalidArgument("k_tr values must be >= 1".into()));
        }
        if let Some(bad) = s.strengths.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("strength {bad} outside [0, 1]")));
        }
        for t in parse_tasks(&s.tasks)? {
            t.require_nonempty()?;
        }
        if s.scenario == Scenario::NegSample {
            let colors = parse_colors(&s.train_colors)?;
            if colors.is_empty() || colors.len() == 4 {
                return Err(Error::InvalidArgument(
                    "train_colors must keep at least one color and leave at least one out".into(),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the config and the code version.
    pub fn provenance_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn probe_tasks(&self) -> Result<Vec<TaskSpec>> {
        parse_tasks(&self.sweep.probe_tasks)
    }
}

/// Single-attribute tasks in canonical order, then `all`.
pub fn default_tasks() -> Vec<TaskSpec> {
    Attribute::ALL
        .iter()
        .map(|&a| TaskSpec::single(a))
        .chain(std::iter::once(TaskSpec::all()))
        .collect()
}
