//! Seeded experiment sweeps: data → training → attack → sampling → privacy
//! report for every grid point and repeat, with one NDJSON record per run.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use fnv::FnvHasher;
use holdpp_core::attack::run_pia;
use holdpp_core::data::{energy_distance, energy_permutation_null, generate_spiral, split, Dataset};
use holdpp_core::privacy::privacy_report;
use holdpp_core::sampler::{generate, IntegratorConfig};
use holdpp_core::train::{train, TrainConfig};
use holdpp_core::ScoreNetwork;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GridPoint};
use crate::io::{format_f64, write_dataset};

pub const RESULTS_FILE: &str = "results.ndjson";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SAMPLES_DIR: &str = "samples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub order: usize,
    pub beta: f64,
    pub eps_num: f64,
    pub xi: f64,
    pub inv_mass: f64,
    pub horizon: f64,
    pub repeat: usize,
    /// Seed of the model-side randomness (initialization, training, attack, sampling).
    pub seed: u64,
    /// Seed of the dataset and its split; shared by all grid points of a repeat.
    pub data_seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub auroc: Option<f64>,
    pub per_time_auroc: Vec<f64>,
    pub attack_times: Vec<f64>,
    /// Generated samples vs holdouts.
    pub energy_distance: Option<f64>,
    /// 95th percentile of the members-vs-holdouts permutation null.
    pub energy_null_q95: Option<f64>,
    /// Mean loss over the last 1% of epochs.
    pub final_loss: Option<f64>,
    pub epsilon_bound: Option<f64>,
    pub aux_mse: Option<f64>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    fn pending(cfg: &ExperimentConfig, point: GridPoint, repeat: usize) -> Self {
        Self {
            run_id: run_id(point, repeat),
            order: point.order,
            beta: point.beta,
            eps_num: point.eps_num,
            xi: cfg.grid.xi_per_order * point.order as f64,
            inv_mass: cfg.grid.inv_mass,
            horizon: cfg.grid.horizon,
            repeat,
            seed: run_seed(cfg.seed_base, point, repeat),
            data_seed: data_seed(cfg.seed_base, repeat),
            status: RunStatus::Failed,
            error: None,
            auroc: None,
            per_time_auroc: Vec::new(),
            attack_times: Vec::new(),
            energy_distance: None,
            energy_null_q95: None,
            final_loss: None,
            epsilon_bound: None,
            aux_mse: None,
            wall_seconds: 0.0,
        }
    }
}

pub fn run_id(point: GridPoint, repeat: usize) -> String {
    format!(
        "n{}-beta{}-eps{}-r{}",
        point.order,
        format_f64(point.beta),
        format_f64(point.eps_num),
        repeat
    )
}

fn stable_hash(tag: &str, words: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(tag.as_bytes());
    for w in words {
        h.write_u64(*w);
    }
    h.finish()
}

/// `seed_base` combined with a stable hash of the parameter tuple and repeat.
pub fn run_seed(seed_base: u64, point: GridPoint, repeat: usize) -> u64 {
    seed_base
        ^ stable_hash(
            "run",
            &[point.order as u64, point.beta.to_bits(), point.eps_num.to_bits(), repeat as u64],
        )
}

pub fn data_seed(seed_base: u64, repeat: usize) -> u64 {
    seed_base ^ stable_hash("data", &[repeat as u64])
}

/// Artifacts of one successful run beyond its record.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub samples: Option<Dataset>,
}

/// Executes one grid point and repeat. Errors are returned, not recorded.
pub fn run_single(cfg: &ExperimentConfig, point: GridPoint, repeat: usize) -> Result<(RunRecord, RunArtifacts)> {
    let started = Instant::now();
    let mut record = RunRecord::pending(cfg, point, repeat);
    let params = cfg.hold_params(point)?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(record.data_seed);
    let data = generate_spiral(&cfg.spiral_config(data_rng.next_u64()))?;
    let (members, holdouts) = split(&data, cfg.data.member_fraction, data_rng.next_u64())?;

    let mut seeds = ChaCha8Rng::seed_from_u64(record.seed);
    let net = ScoreNetwork::new(cfg.architecture(point.order), &mut ChaCha8Rng::seed_from_u64(seeds.next_u64()))?;
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        seed: seeds.next_u64(),
        ..TrainConfig::for_horizon(params.horizon)
    };
    let outcome = train(net, &params, &members, &train_cfg)?;
    let tail = (outcome.loss_trace.len() / 100).max(1);
    record.final_loss =
        Some(outcome.loss_trace[outcome.loss_trace.len() - tail..].iter().sum::<f64>() / tail as f64);
    let model = outcome.model;

    let report = run_pia(&params, &model, &members, &holdouts, &cfg.attack_config(seeds.next_u64()))?;
    record.auroc = Some(report.auroc);
    record.per_time_auroc = report.per_time_auroc;
    record.attack_times = report.times;

    let sampling_seed = seeds.next_u64();
    let null_seed = seeds.next_u64();
    let mut samples = None;
    if cfg.sampling.count > 0 {
        let integ = IntegratorConfig {
            steps: cfg.sampling.steps,
            scheme: cfg.sampling.scheme,
            ..IntegratorConfig::for_horizon(params.horizon)
        };
        let generated = generate(
            &params,
            &model,
            &integ,
            &mut ChaCha8Rng::seed_from_u64(sampling_seed),
            cfg.sampling.count,
        )?;
        record.energy_distance = Some(energy_distance(&generated, &holdouts)?);
        if cfg.sampling.null_permutations > 0 {
            let null = energy_permutation_null(
                &members,
                &holdouts,
                cfg.sampling.null_permutations,
                &mut ChaCha8Rng::seed_from_u64(null_seed),
            )?;
            record.energy_null_q95 = Some(quantile(&null, 0.95));
        }
        samples = Some(generated);
    }

    let privacy = privacy_report(&params, cfg.privacy.grid_points, members.diameter_sq(), cfg.privacy.alpha)?;
    record.epsilon_bound = Some(privacy.epsilon_bound);
    record.aux_mse = Some(privacy.aux_mse);

    record.status = RunStatus::Ok;
    record.wall_seconds = started.elapsed().as_secs_f64();
    Ok((record, RunArtifacts { samples }))
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Reads every complete record; a torn final line from an interrupted
/// sweep is skipped. Returns the records and the number of skipped lines.
pub fn read_records(path: &Path) -> Result<(Vec<RunRecord>, usize)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e).with_context(|| format!("opening {}", path.display())),
    };
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((records, skipped))
}

/// Appends records under a single-writer lock, flushing after each line.
struct ResultsWriter {
    file: Mutex<File>,
}

impl ResultsWriter {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = self.file.lock().expect("results writer poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn results_path(output_dir: &Path) -> PathBuf {
    output_dir.join(RESULTS_FILE)
}

/// Runs every grid point × repeat not already recorded as successful in
/// `output_dir/results.ndjson`, appending each record as it completes.
/// A failing run is recorded with its error and the sweep continues.
/// Returns all records of the sweep, previously recorded ones included.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_experiment_with(cfg, |_| {})
}

pub fn run_experiment_with(cfg: &ExperimentConfig, on_record: impl Fn(&RunRecord) + Sync) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let path = results_path(&cfg.output_dir);
    let (previous, _) = read_records(&path)?;
    let done: HashSet<String> = previous.iter().filter(|r| r.is_ok()).map(|r| r.run_id.clone()).collect();

    let jobs: Vec<(GridPoint, usize)> = cfg
        .grid_points()
        .into_iter()
        .flat_map(|p| (0..cfg.repeats).map(move |r| (p, r)))
        .filter(|(p, r)| !done.contains(&run_id(*p, *r)))
        .collect();

    let writer = ResultsWriter::open(&path)?;
    let samples_dir = cfg.output_dir.join(SAMPLES_DIR);
    let execute = |&(point, repeat): &(GridPoint, usize)| -> Result<RunRecord> {
        let started = Instant::now();
        let record = match run_single(cfg, point, repeat) {
            Ok((record, artifacts)) => {
                if let Some(samples) = artifacts.samples {
                    write_dataset(&samples_dir.join(format!("{}.csv", record.run_id)), &samples)?;
                }
                record
            }
            Err(e) => {
                let mut r = RunRecord::pending(cfg, point, repeat);
                r.error = Some(format!("{e:#}"));
                r.wall_seconds = started.elapsed().as_secs_f64();
                r
            }
        };
        writer.append(&record)?;
        on_record(&record);
        Ok(record)
    };

    let fresh: Vec<RunRecord> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
        pool.install(|| jobs.par_iter().map(execute).collect::<Result<Vec<_>>>())?
    } else {
        jobs.iter().map(execute).collect::<Result<Vec<_>>>()?
    };

    let (mut all, _) = read_records(&path)?;
    // Keep the latest record per run id.
    let mut latest: BTreeMap<String, RunRecord> = BTreeMap::new();
    for r in all.drain(..) {
        latest.insert(r.run_id.clone(), r);
    }
    let records: Vec<RunRecord> = latest.into_values().collect();
    write_summary(&cfg.output_dir.join(SUMMARY_FILE), &records)?;
    debug_assert!(fresh.len() <= records.len());
    Ok(records)
}

/// Flattened one-row-per-run CSV.
pub fn write_summary(path: &Path, records: &[RunRecord]) -> Result<()> {
    let n_time = records.iter().map(|r| r.per_time_auroc.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "run_id",
        "order",
        "beta",
        "eps_num",
        "xi",
        "inv_mass",
        "repeat",
        "seed",
        "status",
        "auroc",
        "energy_distance",
        "energy_null_q95",
        "final_loss",
        "epsilon_bound",
        "aux_mse",
        "wall_seconds",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=n_time).map(|k| format!("auroc_t{k}")));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    for r in records {
        let mut row = vec![
            r.run_id.clone(),
            r.order.to_string(),
            format_f64(r.beta),
            format_f64(r.eps_num),
            format_f64(r.xi),
            format_f64(r.inv_mass),
            r.repeat.to_string(),
            r.seed.to_string(),
            if r.is_ok() { "ok".into() } else { "failed".into() },
            opt(r.auroc),
            opt(r.energy_distance),
            opt(r.energy_null_q95),
            opt(r.final_loss),
            opt(r.epsilon_bound),
            opt(r.aux_mse),
            format!("{:.3}", r.wall_seconds),
        ];
        row.extend((0..n_time).map(|k| r.per_time_auroc.get(k).map(|v| format_f64(*v)).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Order,
    Beta,
    EpsNum,
}

/// Values of the grouping keys; unused keys are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub order: Option<usize>,
    pub beta: Option<f64>,
    pub eps_num: Option<f64>,
}

impl Group {
    fn of(record: &RunRecord, keys: &[GroupKey]) -> Self {
        Self {
            order: keys.contains(&GroupKey::Order).then_some(record.order),
            beta: keys.contains(&GroupKey::Beta).then_some(record.beta),
            eps_num: keys.contains(&GroupKey::EpsNum).then_some(record.eps_num),
        }
    }

    fn sort_key(&self) -> (usize, u64, u64) {
        let bits = |v: Option<f64>| v.map(|x| x.to_bits() ^ (1 << 63)).unwrap_or(0);
        (self.order.unwrap_or(0), bits(self.beta), bits(self.eps_num))
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(n) = self.order {
            parts.push(format!("n={n}"));
        }
        if let Some(b) = self.beta {
            parts.push(format!("beta={b}"));
        }
        if let Some(e) = self.eps_num {
            parts.push(format!("eps_num={e}"));
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub group: Group,
    pub count: usize,
    pub mean: f64,
    /// `1.96 · sd / √k` with the sample standard deviation; `None` when flagged.
    pub half_width: Option<f64>,
    /// Fewer than two records: no interval.
    pub flagged: bool,
}

impl CiRow {
    pub fn interval(&self) -> Option<(f64, f64)> {
        self.half_width.map(|h| (self.mean - h, self.mean + h))
    }
}

/// Normal-approximation 95% interval of `value` per group of successful runs.
pub fn aggregate_by(records: &[RunRecord], keys: &[GroupKey], value: impl Fn(&RunRecord) -> Option<f64>) -> Vec<CiRow> {
    let mut groups: Vec<(Group, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let Some(v) = value(r) else { continue };
        let g = Group::of(r, keys);
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((g, vec![v])),
        }
    }
    groups.sort_by_key(|(g, _)| g.sort_key());
    groups
        .into_iter()
        .map(|(group, vs)| {
            let k = vs.len();
            let mean = vs.iter().sum::<f64>() / k as f64;
            let half_width = (k >= 2).then(|| {
                let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
                1.96 * var.sqrt() / (k as f64).sqrt()
            });
            CiRow {
                group,
                count: k,
                mean,
                half_width,
                flagged: k < 2,
            }
        })
        .collect()
}

/// AUROC intervals per group.
pub fn aggregate_ci(records: &[RunRecord], keys: &[GroupKey]) -> Vec<CiRow> {
    aggregate_by(records, keys, |r| r.auroc)
}
