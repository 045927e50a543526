//! Synthetic color/digit/position images with a known class entropy.
//!
//! Each sample draws three independent uniform 4-way attributes, so the
//! entropy of any attribute subset is exactly two bits per attribute.

mod io;
mod render;

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, STREAM_ATTRIBUTES, STREAM_BACKGROUND};
use crate::tensor::Tensor;

pub use io::{
    load_dataset, read_packed, save_dataset, write_packed, Manifest, FORMAT_VERSION, MANIFEST_FILE, PACKED_FILE,
};
pub use render::{background, classify_pixels, glyph_bitmap, glyph_box, render, SUPPORTED_SIZES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    White,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Digit {
    Two,
    Three,
    Four,
    Five,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::White];

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::White => [1.0, 1.0, 1.0],
        }
    }
}

impl Digit {
    pub const ALL: [Digit; 4] = [Digit::Two, Digit::Three, Digit::Four, Digit::Five];

    pub fn value(self) -> u8 {
        self as u8 + 2
    }
}

impl Position {
    pub const ALL: [Position; 4] = [
        Position::UpperLeft,
        Position::UpperRight,
        Position::LowerLeft,
        Position::LowerRight,
    ];

    /// (row, col) of the quadrant, each 0 or 1.
    pub fn quadrant(self) -> (usize, usize) {
        let i = self as usize;
        (i / 2, i % 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Color,
    Digit,
    Position,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Color, Attribute::Digit, Attribute::Position];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Digit => "digit",
            Attribute::Position => "position",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "color" => Ok(Attribute::Color),
            "digit" => Ok(Attribute::Digit),
            "position" => Ok(Attribute::Position),
            other => Err(Error::InvalidArgument(format!("unknown attribute `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CdpAttributes {
    pub color: Color,
    pub digit: Digit,
    pub position: Position,
}

impl CdpAttributes {
    pub fn from_indices(color: u8, digit: u8, position: u8) -> Result<Self> {
        if color > 3 || digit > 3 || position > 3 {
            return Err(Error::Format(format!(
                "attribute index out of range: ({color}, {digit}, {position})"
            )));
        }
        Ok(Self {
            color: Color::ALL[color as usize],
            digit: Digit::ALL[digit as usize],
            position: Position::ALL[position as usize],
        })
    }

    /// Index 0..4 of one attribute.
    pub fn index(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Color => self.color as usize,
            Attribute::Digit => self.digit as usize,
            Attribute::Position => self.position as usize,
        }
    }

    /// Mixed-radix class id over the task's attributes; 0 for the empty task.
    pub fn class_id(&self, task: &TaskSpec) -> usize {
        task.attributes().iter().fold(0, |acc, &a| acc * 4 + self.index(a))
    }
}

/// A subset of attributes defining a downstream classification task.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct TaskSpec {
    attributes: Vec<Attribute>,
}

impl TaskSpec {
    /// Sorted and deduplicated; the empty set is allowed (entropy queries only).
    pub fn new(attrs: impl IntoIterator<Item = Attribute>) -> Self {
        let mut attributes: Vec<Attribute> = attrs.into_iter().collect();
        attributes.sort();
        attributes.dedup();
        Self { attributes }
    }

    pub fn all() -> Self {
        Self::new(Attribute::ALL)
    }

    pub fn single(attr: Attribute) -> Self {
        Self::new([attr])
    }

    /// Comma- or plus-separated attribute names, or `all`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let attrs = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(Attribute::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(attrs))
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        4usize.pow(self.attributes.len() as u32)
    }

    pub fn union(&self, other: &TaskSpec) -> TaskSpec {
        TaskSpec::new(self.attributes.iter().chain(other.attributes.iter()).copied())
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("task needs at least one attribute".into()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Attribute>> for TaskSpec {
    type Error = std::convert::Infallible;

    fn try_from(v: Vec<Attribute>) -> std::result::Result<Self, Self::Error> {
        Ok(TaskSpec::new(v))
    }
}

impl From<TaskSpec> for Vec<Attribute> {
    fn from(t: TaskSpec) -> Self {
        t.attributes
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.attributes.len() == 3 {
            return f.write_str("all");
        }
        if self.attributes.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.attributes.iter().map(|a| a.name()).collect();
        f.write_str(&names.join("+"))
    }
}

/// Entropy in bits of the task label: two bits per independent uniform attribute.
pub fn class_entropy(task: &TaskSpec) -> f64 {
    2.0 * task.attributes().len() as f64
}

pub fn sample_attributes(seed: u64, index: u64) -> CdpAttributes {
    let mut rng = derive_rng(seed, index, STREAM_ATTRIBUTES);
    let c = rng.gen_range(0..4u8);
    let d = rng.gen_range(0..4u8);
    let p = rng.gen_range(0..4u8);
    CdpAttributes::from_indices(c, d, p).expect("indices drawn in range")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdpSample {
    /// `[3, size, size]`, values in [0, 1].
    pub image: Tensor<f32>,
    pub attributes: CdpAttributes,
    pub source_id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdpDataset {
    pub samples: Vec<CdpSample>,
    pub size: usize,
    pub mix: f32,
    pub seed: u64,
}

impl CdpDataset {
    /// Wraps existing samples; all images must be `[3, size, size]`.
    pub fn from_samples(samples: Vec<CdpSample>, size: usize, mix: f32, seed: u64) -> Result<Self> {
        for s in &samples {
            if s.image.shape() != [3, size, size] {
                return Err(Error::Shape(format!(
                    "sample {} has shape {:?}, expected [3, {size}, {size}]",
                    s.source_id,
                    s.image.shape()
                )));
            }
        }
        Ok(Self {
            samples,
            size,
            mix,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Leading 90% (rounded up) of the samples.
    pub fn train_range(&self) -> Range<usize> {
        0..self.len() - self.len() / 10
    }

    /// Trailing `n / 10` samples.
    pub fn eval_range(&self) -> Range<usize> {
        self.len() - self.len() / 10..self.len()
    }

    /// Stacks the selected images into `[n, 3, size, size]`.
    pub fn images(&self, indices: &[usize]) -> Tensor<f32> {
        let per = 3 * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.samples[i].image.data());
        }
        Tensor::new(vec![indices.len(), 3, self.size, self.size], data).expect("uniform sample shapes")
    }

    pub fn labels(&self, task: &TaskSpec, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| self.samples[i].attributes.class_id(task))
            .collect()
    }

    /// Samples satisfying `keep`, with the split recomputed on the result.
    pub fn filter(&self, keep: impl Fn(&CdpSample) -> bool) -> Self {
        Self {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            size: self.size,
            mix: self.mix,
            seed: self.seed,
        }
    }
}

/// Generates `n` samples; a pure function of the arguments.
pub fn make_dataset(n: usize, seed: u64, size: usize, mix: f32) -> Result<CdpDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs n >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let attributes = sample_attributes(seed, i);
        let image = render(&attributes, derive_seed(seed, i, STREAM_BACKGROUND), size, mix)?;
        samples.push(CdpSample {
            image,
            attributes,
            source_id: i,
        });
    }
    CdpDataset::from_samples(samples, size, mix, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ids_are_mixed_radix() {
        let a = CdpAttributes::from_indices(3, 1, 2).unwrap();
        assert_eq!(a.class_id(&TaskSpec::all()), 3 * 16 + 4 + 2);
        assert_eq!(a.class_id(&TaskSpec::single(Attribute::Digit)), 1);
        assert_eq!(a.class_id(&TaskSpec::new([])), 0);
    }

    #[test]
    fn task_parse_and_display() {
        let t = TaskSpec::parse("position,color").unwrap();
        assert_eq!(t.to_string(), "color+position");
        assert_eq!(TaskSpec::parse("all").unwrap(), TaskSpec::all());
        assert!(TaskSpec::parse("shape").is_err());
    }

    #[test]
    fn split_arithmetic() {
        let ds = make_dataset(10, 3, 16, 0.3).unwrap();
        assert_eq!(ds.train_range().len(), 9);
        assert_eq!(ds.eval_range().len(), 1);
    }
}
