//! Swiss-roll data, member/holdout splitting and the energy distance.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// A set of points in `ℝ^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dataset dimension must be positive".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: (values.len() / dim + 1) * dim,
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: &[P]) -> Result<Self> {
        let mut values = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            values.extend_from_slice(p);
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> core::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.point(i));
        }
        Self { dim: self.dim, values }
    }

    /// Squared diameter `max ‖y − z‖²` over all pairs.
    pub fn diameter_sq(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(sq_dist(self.point(i), self.point(j)));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralConfig {
    pub count: usize,
    /// Angular extent in full turns.
    pub turns: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            turns: 2.0,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidParameter(format!("spiral count must be >= 2, got {}", self.count)));
        }
        if !(self.turns > 0.0 && self.turns.is_finite()) {
            return Err(Error::InvalidParameter(format!("turns must be positive, got {}", self.turns)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Maps `u ∈ [0, 1]` to the noiseless spiral point at angle `2π·turns·√u`,
/// scaled into the unit disk.
pub fn spiral_point(u: f64, turns: f64) -> [f64; 2] {
    let extent = 2.0 * PI * turns;
    let theta = extent * math::sqrt(u);
    [theta * math::cos(theta) / extent, theta * math::sin(theta) / extent]
}

pub fn generate_spiral(cfg: &SpiralConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::with_capacity(2 * cfg.count);
    for _ in 0..cfg.count {
        let u: f64 = rng.random();
        let p = spiral_point(u, cfg.turns);
        for c in p {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(c + cfg.noise_std * z);
        }
    }
    Dataset::new(2, values)
}

/// Seeded disjoint split; the member count is `round(fraction · len)`.
pub fn split(data: &Dataset, member_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(member_fraction > 0.0 && member_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "member_fraction must lie in (0, 1), got {member_fraction}"
        )));
    }
    let n = data.len();
    let members = libm::round(member_fraction * n as f64) as usize;
    if members == 0 || members >= n {
        return Err(Error::InvalidParameter(format!(
            "split of {n} points at fraction {member_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.select(&idx[..members]), data.select(&idx[members..])))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_cross_distance(a: &Dataset, b: &Dataset) -> f64 {
    let mut total = 0.0;
    for p in a.iter() {
        for q in b.iter() {
            total += math::sqrt(sq_dist(p, q));
        }
    }
    total / (a.len() * b.len()) as f64
}

/// `2 E‖a − b‖ − E‖a − a′‖ − E‖b − b′‖` with exact double sums (V-statistic).
pub fn energy_distance(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset("energy_distance"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let e = 2.0 * mean_cross_distance(a, b) - mean_cross_distance(a, a) - mean_cross_distance(b, b);
    Ok(e.max(0.0))
}

/// Energy distances of `permutations` random relabellings of `a ∪ b` into
/// groups of the original sizes: draws from the null of equal distributions.
pub fn energy_permutation_null<R: Rng + ?Sized>(
    a: &Dataset,
    b: &Dataset,
    permutations: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset("energy_permutation_null"));
    }
    let mut pooled = a.as_slice().to_vec();
    pooled.extend_from_slice(b.as_slice());
    let pooled = Dataset::new(a.dim(), pooled)?;
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let mut out = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        idx.shuffle(rng);
        let (left, right) = idx.split_at(a.len());
        out.push(energy_distance(&pooled.select(left), &pooled.select(right))?);
    }
    Ok(out)
}
