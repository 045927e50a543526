use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffengine::params::ParamSet;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, for layers feeding a relu.
    HeUniform,
    /// `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, for linear outputs.
    LecunUniform,
    Zeros,
}

/// Seeded parameter initializer; fan-in is the product of all but the first dim.
pub struct ParamInit {
    rng: ChaCha8Rng,
    params: ParamSet<f32>,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamSet::new(seed),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        let n: usize = shape.iter().product();
        let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::HeUniform | Init::LecunUniform => {
                let gain = if init == Init::HeUniform { 6.0 } else { 3.0 };
                let bound = (gain / fan_in as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        self.params.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn finish(self) -> ParamSet<f32> {
        self.params
    }
}
