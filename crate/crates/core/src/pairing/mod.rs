//! Positive-pair construction: same-class matching and augmentation views.

mod augment;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cdpgen::{CdpAttributes, CdpDataset, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{
    color_jitter, random_resized_crop, Augmentation, CropParams, JitterParams, CROP_AREA_SPAN, JITTER_AMPLITUDE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairingStrategy {
    SameClass { task: TaskSpec },
    Augmented { ops: Vec<Augmentation> },
}

impl PairingStrategy {
    pub fn same_class(task: TaskSpec) -> Self {
        PairingStrategy::SameClass { task }
    }

    pub fn augmented(ops: Vec<Augmentation>) -> Self {
        PairingStrategy::Augmented { ops }
    }

    /// Crop then jitter, both at strength `s`.
    pub fn simclr(s: f32) -> Self {
        Self::augmented(vec![Augmentation::RandomResizedCrop(s), Augmentation::ColorJitter(s)])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PairingStrategy::SameClass { task } => task.require_nonempty(),
            PairingStrategy::Augmented { ops } => ops.iter().try_for_each(Augmentation::validate),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            PairingStrategy::SameClass { task } => format!("same_class({task})"),
            PairingStrategy::Augmented { ops } => {
                let parts: Vec<String> = ops
                    .iter()
                    .map(|op| match op {
                        Augmentation::ColorJitter(s) => format!("jitter:{s}"),
                        Augmentation::RandomResizedCrop(s) => format!("crop:{s}"),
                    })
                    .collect();
                format!("augment({})", parts.join(","))
            }
        }
    }
}

/// K positive pairs of views plus optional negative-only samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    /// `[K, ...]`
    pub views_x: Tensor<f32>,
    /// `[K, ...]`
    pub views_y: Tensor<f32>,
    /// Attributes of the source of each `x` view.
    pub pair_labels: Vec<CdpAttributes>,
    /// Dataset indices the two views of each pair came from.
    pub sources: Vec<(usize, usize)>,
    /// `[M, ...]` negatives from a separate dataset.
    pub externals: Option<Tensor<f32>>,
}

impl PairBatch {
    pub fn k(&self) -> usize {
        self.views_x.rows()
    }
}

/// Uniform sampler over unordered pairs of distinct samples sharing a class.
#[derive(Clone, Debug)]
pub struct SameClassSampler {
    classes: Vec<Vec<usize>>,
    /// Running totals of C(n_c, 2).
    cumulative: Vec<u64>,
    /// Classes present with a single sample, left out of sampling.
    pub excluded_classes: usize,
}

impl SameClassSampler {
    pub fn new(ds: &CdpDataset, indices: &[usize], task: &TaskSpec) -> Result<Self> {
        task.require_nonempty()?;
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in indices {
            by_class
                .entry(ds.samples[i].attributes.class_id(task))
                .or_default()
                .push(i);
        }
        Self::from_groups(by_class.into_values())
    }

    /// Groups of interchangeable indices; groups of size < 2 are excluded.
    pub fn from_groups(groups: impl IntoIterator<Item = Vec<usize>>) -> Result<Self> {
        let mut classes = Vec::new();
        let mut cumulative = Vec::new();
        let mut excluded_classes = 0;
        let mut total = 0u64;
        for g in groups {
            if g.len() < 2 {
                excluded_classes += !g.is_empty() as usize;
                continue;
            }
            let n = g.len() as u64;
            total += n * (n - 1) / 2;
            cumulative.push(total);
            classes.push(g);
        }
        if classes.is_empty() {
            return Err(Error::InvalidArgument(
                "no class has two or more samples to pair".into(),
            ));
        }
        if excluded_classes > 0 {
            log::warn!("{excluded_classes} single-sample classes excluded from same-class pairing");
        }
        Ok(Self {
            classes,
            cumulative,
            excluded_classes,
        })
    }

    pub fn num_pairs(&self) -> u64 {
        *self.cumulative.last().expect("nonempty")
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let r = rng.gen_range(0..self.num_pairs());
        let c = self.cumulative.partition_point(|&t| t <= r);
        let g = &self.classes[c];
        let a = rng.gen_range(0..g.len());
        let mut b = rng.gen_range(0..g.len() - 1);
        if b >= a {
            b += 1;
        }
        (g[a], g[b])
    }

    /// `k` pairs with no unordered pair repeated.
    pub fn sample_distinct<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
        if k as u64 > self.num_pairs() {
            return Err(Error::SplitTooSmall {
                required: k,
                available: self.num_pairs() as usize,
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let (a, b) = self.sample(rng);
            if seen.insert((a.min(b), a.max(b))) {
                out.push((a, b));
            }
        }
        Ok(out)
    }
}

fn gather_pairs(ds: &CdpDataset, sources: Vec<(usize, usize)>) -> PairBatch {
    let xs: Vec<usize> = sources.iter().map(|p| p.0).collect();
    let ys: Vec<usize> = sources.iter().map(|p| p.1).collect();
    PairBatch {
        views_x: ds.images(&xs),
        views_y: ds.images(&ys),
        pair_labels: xs.iter().map(|&i| ds.samples[i].attributes).collect(),
        sources,
        externals: None,
    }
}

/// K same-class pairs drawn from `indices`.
pub fn pair_same_class<R: Rng>(
    ds: &CdpDataset,
    indices: &[usize],
    task: &TaskSpec,
    k: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let sampler = SameClassSampler::new(ds, indices, task)?;
    let sources = (0..k).map(|_| sampler.sample(rng)).collect();
    Ok(gather_pairs(ds, sources))
}

/// Applies `ops` in order with fresh randomness.
pub fn augment_view<R: Rng>(image: &Tensor<f32>, ops: &[Augmentation], rng: &mut R) -> Result<Tensor<f32>> {
    let mut out = image.clone();
    for op in ops {
        out = op.apply(&out, rng)?;
    }
    Ok(out)
}

/// Two independent augmentations of each given source.
pub fn augment_pairs<R: Rng>(
    ds: &CdpDataset,
    sources: &[usize],
    ops: &[Augmentation],
    rng: &mut R,
) -> Result<PairBatch> {
    ops.iter().try_for_each(Augmentation::validate)?;
    let mut xs = Vec::with_capacity(sources.len());
    let mut ys = Vec::with_capacity(sources.len());
    for &i in sources {
        let img = &ds.samples[i].image;
        xs.push(augment_view(img, ops, rng)?);
        ys.push(augment_view(img, ops, rng)?);
    }
    let xr: Vec<&Tensor<f32>> = xs.iter().collect();
    let yr: Vec<&Tensor<f32>> = ys.iter().collect();
    Ok(PairBatch {
        views_x: Tensor::stack(&xr)?,
        views_y: Tensor::stack(&yr)?,
        pair_labels: sources.iter().map(|&i| ds.samples[i].attributes).collect(),
        sources: sources.iter().map(|&i| (i, i)).collect(),
        externals: None,
    })
}

/// K augmentation pairs over sources drawn uniformly from `indices`.
pub fn pair_augment<R: Rng>(
    ds: &CdpDataset,
    indices: &[usize],
    ops: &[Augmentation],
    k: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if k == 0 || indices.is_empty() {
        return Err(Error::InvalidArgument("K and the index set must be nonempty".into()));
    }
    let sources: Vec<usize> = (0..k).map(|_| indices[rng.gen_range(0..indices.len())]).collect();
    augment_pairs(ds, &sources, ops, rng)
}

/// Dispatches on the strategy.
pub fn make_pairs<R: Rng>(
    ds: &CdpDataset,
    indices: &[usize],
    strategy: &PairingStrategy,
    k: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    match strategy {
        PairingStrategy::SameClass { task } => pair_same_class(ds, indices, task, k, rng),
        PairingStrategy::Augmented { ops } => pair_augment(ds, indices, ops, k, rng),
    }
}
