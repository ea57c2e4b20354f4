use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use holdpp::config::{norm_from_f64, ExperimentConfig, OUTPUT_DIR_ENV};
use holdpp::harness::{aggregate_ci, read_records, results_path, run_experiment_with, GroupKey};
use holdpp::io::{
    load_model, read_dataset, save_model, write_dataset, write_json, write_loss_trace, write_privacy_csv,
    write_roc_csv,
};
use holdpp::plots::emit_plots;
use holdpp_core::attack::{run_pia, AttackConfig};
use holdpp_core::data::{generate_spiral, split, SpiralConfig};
use holdpp_core::privacy::privacy_report;
use holdpp_core::sampler::{generate, IntegratorConfig, Scheme};
use holdpp_core::train::{train, TrainConfig};
use holdpp_core::{Architecture, HoldParams, ScoreNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "holdpp", version, about = "Higher-order Langevin diffusion: training, membership inference and privacy accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy 2-d spiral and split it into members and holdouts.
    GenerateData(GenerateArgs),
    /// Train a score network on a dataset.
    Train(TrainArgs),
    /// Run the membership-inference attack against a trained model.
    Attack(AttackArgs),
    /// Generate samples from a trained model.
    Sample(SampleArgs),
    /// Time-dependent sensitivity and Rényi-DP bound of the forward process.
    PrivacyReport(PrivacyArgs),
    /// Run a seeded grid sweep and append records to results.ndjson.
    Sweep(SweepArgs),
    /// Emit figures from a sweep's records.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ProcessArgs {
    /// Model order n.
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    eps_num: f64,
    /// Friction ξ; defaults to `xi_per_order · n`.
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    xi_per_order: f64,
    #[arg(long, default_value_t = 1.0)]
    inv_mass: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
}

impl ProcessArgs {
    fn params(&self, dim: usize) -> Result<HoldParams> {
        let xi = self.xi.unwrap_or(self.xi_per_order * self.order as f64);
        Ok(HoldParams::critically_damped(
            self.order,
            dim,
            xi,
            self.inv_mass,
            self.beta,
            self.eps_num,
            self.horizon,
        )?)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 2.0)]
    turns: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    member_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes data.csv, members.csv and holdouts.csv here.
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Training set (CSV).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 5000)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; the process parameters go to `<stem>.params.json`
    /// and the loss trace to `<stem>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    members: PathBuf,
    #[arg(long)]
    holdouts: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_time: usize,
    /// Norm order p; `inf` for the max norm.
    #[arg(long, default_value_t = 2.0)]
    norm: f64,
    /// Threshold the best single attack time instead of the time average.
    #[arg(long)]
    best_time: bool,
    #[arg(long)]
    stochastic_aux_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON; the ROC curve goes to `<stem>.roc.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    ProbabilityFlow,
    ReverseSde,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::ProbabilityFlow)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrivacyArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Dataset whose squared diameter sets Δ₂f.
    #[arg(long, conflicts_with = "diameter_sq")]
    data: Option<PathBuf>,
    #[arg(long)]
    diameter_sq: Option<f64>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Report JSON; the per-time curve goes to `<stem>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk, conflicts_with = "config")]
    preset: Preset,
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps_nums: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    data_count: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Sweep output directory containing results.ndjson.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    input: PathBuf,
    /// Figure directory; defaults to `<input>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "status": "error", "error": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateData(a) => generate_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::PrivacyReport(a) => privacy_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn generate_data(a: GenerateArgs) -> Result<()> {
    let data = generate_spiral(&SpiralConfig {
        count: a.count,
        turns: a.turns,
        noise_std: a.noise_std,
        seed: a.seed,
    })?;
    let (members, holdouts) = split(&data, a.member_fraction, a.seed)?;
    write_dataset(&a.output_dir.join("data.csv"), &data)?;
    write_dataset(&a.output_dir.join("members.csv"), &members)?;
    write_dataset(&a.output_dir.join("holdouts.csv"), &holdouts)?;
    println!(
        "{}",
        json!({ "points": data.len(), "members": members.len(), "holdouts": holdouts.len(), "output_dir": a.output_dir })
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let params = a.process.params(data.dim())?;
    let arch = Architecture {
        order: params.order,
        dim: params.dim,
        depth: a.depth,
        width: a.width,
        horizon: params.horizon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let net = ScoreNetwork::new(arch, &mut rng)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed.wrapping_add(1),
        ..TrainConfig::for_horizon(params.horizon)
    };
    let outcome = train(net, &params, &data, &cfg)?;
    save_model(&a.out, &outcome.model)?;
    write_loss_trace(&with_suffix(&a.out, "loss.csv"), &outcome.loss_trace)?;
    println!(
        "{}",
        json!({ "checkpoint": a.out, "final_loss": outcome.loss_trace.last(), "epochs": outcome.loss_trace.len() })
    );
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let members = read_dataset(&a.members)?;
    let holdouts = read_dataset(&a.holdouts)?;
    let cfg = AttackConfig {
        n_time: a.n_time,
        norm: norm_from_f64(a.norm),
        use_mean: !a.best_time,
        stochastic_aux_noise: a.stochastic_aux_noise,
        seed: a.seed,
    };
    let report = run_pia(model.params(), &model, &members, &holdouts, &cfg)?;
    write_json(&a.out, &report)?;
    write_roc_csv(&with_suffix(&a.out, "roc.csv"), &report)?;
    println!("{}", json!({ "auroc": report.auroc, "per_time_auroc": report.per_time_auroc }));
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = IntegratorConfig {
        steps: a.steps,
        scheme: match a.scheme {
            SchemeArg::ProbabilityFlow => Scheme::ProbabilityFlow,
            SchemeArg::ReverseSde => Scheme::ReverseSde,
        },
        ..IntegratorConfig::for_horizon(model.params().horizon)
    };
    let samples = generate(model.params(), &model, &cfg, &mut ChaCha8Rng::seed_from_u64(a.seed), a.count)?;
    write_dataset(&a.out, &samples)?;
    println!("{}", json!({ "samples": samples.len(), "out": a.out }));
    Ok(())
}

fn privacy_cmd(a: PrivacyArgs) -> Result<()> {
    let (diameter_sq, dim) = match (&a.data, a.diameter_sq) {
        (Some(path), _) => {
            let data = read_dataset(path)?;
            (data.diameter_sq(), data.dim())
        }
        (None, Some(d)) => (d, a.dim),
        (None, None) => bail!("either --data or --diameter-sq is required"),
    };
    let params = a.process.params(dim)?;
    let report = privacy_report(&params, a.points, diameter_sq, a.alpha)?;
    write_json(&a.out, &report)?;
    write_privacy_csv(&with_suffix(&a.out, "csv"), &report)?;
    println!(
        "{}",
        json!({ "epsilon_bound": report.epsilon_bound, "aux_mse": report.aux_mse, "alpha": report.alpha })
    );
    Ok(())
}

fn sweep_config(a: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match a.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => ExperimentConfig::full(),
        },
    };
    cfg.apply_env();
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = a.seed_base {
        cfg.seed_base = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = &a.orders {
        cfg.grid.orders = v.clone();
    }
    if let Some(v) = &a.betas {
        cfg.grid.betas = v.clone();
    }
    if let Some(v) = &a.eps_nums {
        cfg.grid.eps_nums = v.clone();
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.data_count {
        cfg.data.count = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let cfg = sweep_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let records = run_experiment_with(&cfg, |r| {
        eprintln!(
            "{} {} auroc={} ({:.1}s)",
            r.run_id,
            if r.is_ok() { "ok" } else { "failed" },
            r.auroc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.wall_seconds
        );
    })?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let table = aggregate_ci(&records, &[GroupKey::Order, GroupKey::Beta, GroupKey::EpsNum]);
    write_json(&cfg.output_dir.join("auroc_ci.json"), &table)?;
    for row in &table {
        match row.interval() {
            Some((lo, hi)) => eprintln!("{}: {:.4} [{lo:.4}, {hi:.4}] k={}", row.group.label(), row.mean, row.count),
            None => eprintln!("{}: {:.4} (k={}, no interval)", row.group.label(), row.mean, row.count),
        }
    }
    println!(
        "{}",
        json!({ "records": records.len(), "failed": failed, "results": results_path(&cfg.output_dir) })
    );
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    let (records, _) = read_records(&results_path(&a.input))?;
    let out = a.out.unwrap_or_else(|| a.input.join("plots"));
    let files = emit_plots(&records, &a.input, &out).context("emitting plots")?;
    println!("{}", json!({ "files": files }));
    Ok(())
}
