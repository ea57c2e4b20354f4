//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use holdpp_core::attack::{AttackConfig, Norm};
use holdpp_core::data::SpiralConfig;
use holdpp_core::sampler::Scheme;
use holdpp_core::{Architecture, HoldParams};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "HOLDPP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub repeats: usize,
    pub seed_base: u64,
    /// Runs executed concurrently; each run is single-threaded.
    #[serde(default = "one")]
    pub workers: usize,
    pub grid: GridConfig,
    pub network: NetworkConfig,
    pub train: TrainSettings,
    pub attack: AttackSettings,
    pub data: DataConfig,
    pub sampling: SamplingConfig,
    pub privacy: PrivacySettings,
}

fn one() -> usize {
    1
}

/// Process grid. Every combination of `orders × betas × eps_nums` is run.
/// The couplings are the critically damped ones for `ξ = xi_per_order · n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub orders: Vec<usize>,
    pub betas: Vec<f64>,
    pub eps_nums: Vec<f64>,
    pub inv_mass: f64,
    pub xi_per_order: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub depth: usize,
    pub width: usize,
}

/// Training settings; the seed is derived per run and the time bounds from
/// the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    pub n_time: usize,
    /// Norm order `p`; `inf` for the max norm.
    pub norm: f64,
    pub use_mean: bool,
    pub stochastic_aux_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub turns: f64,
    pub noise_std: f64,
    pub member_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Generated points per run; 0 skips generation and the energy distance.
    pub count: usize,
    pub steps: usize,
    pub scheme: Scheme,
    /// Permutations for the data-vs-data energy-distance null.
    pub null_permutations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySettings {
    pub alpha: f64,
    pub grid_points: usize,
}

/// One point of the process grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub order: usize,
    pub beta: f64,
    pub eps_num: f64,
}

impl ExperimentConfig {
    /// Laptop-scale preset.
    pub fn desk() -> Self {
        Self {
            output_dir: PathBuf::from("runs/desk"),
            repeats: 5,
            seed_base: 0,
            workers: 1,
            grid: GridConfig {
                orders: vec![1, 2, 3],
                betas: vec![2.0, 10.0],
                eps_nums: vec![1e-3],
                inv_mass: 1.0,
                xi_per_order: 1.0,
                horizon: 1.0,
            },
            network: NetworkConfig { depth: 6, width: 128 },
            train: TrainSettings {
                epochs: 5000,
                batch_size: 10,
                learning_rate: 3e-3,
            },
            attack: AttackSettings {
                n_time: 10,
                norm: 2.0,
                use_mean: true,
                stochastic_aux_noise: false,
            },
            data: DataConfig {
                count: 40,
                turns: 2.0,
                noise_std: 0.05,
                member_fraction: 0.5,
            },
            sampling: SamplingConfig {
                count: 500,
                steps: 500,
                scheme: Scheme::ProbabilityFlow,
                null_permutations: 200,
            },
            privacy: PrivacySettings {
                alpha: 2.0,
                grid_points: 50,
            },
        }
    }

    /// Full-scale preset: 40,000 epochs, 25 repeats, depth 15 × 256, 2000 points.
    pub fn full() -> Self {
        let mut cfg = Self::desk();
        cfg.output_dir = PathBuf::from("runs/full");
        cfg.repeats = 25;
        cfg.network = NetworkConfig { depth: 15, width: 256 };
        cfg.train.epochs = 40_000;
        cfg.train.batch_size = 100;
        cfg.train.learning_rate = 1e-3;
        cfg.data.count = 2000;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Applies the `HOLDPP_OUTPUT_DIR` override if it is set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("repeats must be >= 1");
        }
        if self.workers == 0 {
            bail!("workers must be >= 1");
        }
        let g = &self.grid;
        if g.orders.is_empty() || g.betas.is_empty() || g.eps_nums.is_empty() {
            bail!("grid lists must be nonempty");
        }
        for point in self.grid_points() {
            self.hold_params(point)
                .with_context(|| format!("grid point n={} beta={} eps_num={}", point.order, point.beta, point.eps_num))?;
        }
        if self.network.depth == 0 || (self.network.depth > 1 && self.network.width == 0) {
            bail!("network depth and width must be positive");
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            bail!("epochs and batch_size must be >= 1");
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            bail!("learning_rate must be positive");
        }
        self.attack_config(0).validate()?;
        self.spiral_config(0).validate()?;
        if !(self.data.member_fraction > 0.0 && self.data.member_fraction < 1.0) {
            bail!("member_fraction must lie in (0, 1)");
        }
        if self.sampling.count > 0 && self.sampling.steps == 0 {
            bail!("sampling steps must be >= 1");
        }
        if !(self.privacy.alpha > 1.0) || self.privacy.grid_points < 2 {
            bail!("privacy alpha must exceed 1 and grid_points must be >= 2");
        }
        Ok(())
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &order in &self.grid.orders {
            for &beta in &self.grid.betas {
                for &eps_num in &self.grid.eps_nums {
                    out.push(GridPoint { order, beta, eps_num });
                }
            }
        }
        out
    }

    pub fn hold_params(&self, point: GridPoint) -> Result<HoldParams> {
        let g = &self.grid;
        Ok(HoldParams::critically_damped(
            point.order,
            2,
            g.xi_per_order * point.order as f64,
            g.inv_mass,
            point.beta,
            point.eps_num,
            g.horizon,
        )?)
    }

    pub fn architecture(&self, order: usize) -> Architecture {
        Architecture {
            order,
            dim: 2,
            depth: self.network.depth,
            width: self.network.width,
            horizon: self.grid.horizon,
        }
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            n_time: self.attack.n_time,
            norm: norm_from_f64(self.attack.norm),
            use_mean: self.attack.use_mean,
            stochastic_aux_noise: self.attack.stochastic_aux_noise,
            seed,
        }
    }

    pub fn spiral_config(&self, seed: u64) -> SpiralConfig {
        SpiralConfig {
            count: self.data.count,
            turns: self.data.turns,
            noise_std: self.data.noise_std,
            seed,
        }
    }
}

pub fn norm_from_f64(p: f64) -> Norm {
    if p.is_infinite() {
        Norm::Inf
    } else {
        Norm::P(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::full()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn grid_enumerates_all_combinations() {
        let mut cfg = ExperimentConfig::desk();
        cfg.grid.orders = vec![1, 2];
        cfg.grid.betas = vec![2.0, 10.0];
        cfg.grid.eps_nums = vec![1e-3, 1e-2, 1e-1];
        assert_eq!(cfg.grid_points().len(), 12);
    }

    #[test]
    fn rejects_invalid_values() {
        let mut cfg = ExperimentConfig::desk();
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.grid.betas = vec![-1.0];
        assert!(cfg.validate().is_err());
        let text = ExperimentConfig::desk().to_toml_string().unwrap().replace("repeats = 5", "repeats = 5\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
