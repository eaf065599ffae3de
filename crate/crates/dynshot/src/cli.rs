//! Command-line surface tying the library together: data generation,
//! training, grid reports, the verification suite, and assembly benchmarking.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage, 3 data/IO,
//! 4 numeric divergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::assembly::{assembly_census, ModelCache};
use crate::checkpoint::{read_checkpoint, restore_into, write_checkpoint};
use crate::data::{gen_synthetic, load_features, save_features, split_classes, SynthConfig};
use crate::error::{Error, Result};
use crate::graph::Activation;
use crate::manifest::RunManifest;
use crate::metric::MetricArch;
use crate::optim::{MomentumKind, TrainConfig};
use crate::relational::RelationArch;
use crate::trainer::{evaluate, train, CellStat, GridRow, ResultGrid};
use crate::verify::{all_passed, run_checks, Sabotage};

#[derive(Parser)]
#[command(
    name = "dynshot",
    version,
    about = "Few-shot membership classifier with per-size dynamic graph assembly over shared weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature CSV with a class-level train/heldout split
    GenData(GenDataArgs),
    /// Train a model; writes a DYNP checkpoint, a history CSV, and a manifest
    Train(Box<TrainArgs>),
    /// Evaluate trained checkpoints into a train-size x eval-size accuracy grid
    Report(ReportArgs),
    /// Run the built-in invariant suite
    Verify(VerifyArgs),
    /// Measure per-size assembly cost and graph growth
    BenchAssembly(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Total number of classes, train and heldout together
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 12)]
    per_class: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.35)]
    noise_scale: f64,
    /// Fraction of classes tagged heldout
    #[arg(long, default_value_t = 0.25)]
    heldout_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature CSV produced by gen-data or following the same schema
    #[arg(long, required_unless_present = "from_manifest")]
    data: Option<PathBuf>,
    /// Prefix for <prefix>.ckpt, <prefix>.history.csv, <prefix>.manifest
    #[arg(long)]
    out_prefix: String,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Momentum coefficient
    #[arg(long, default_value_t = 0.9)]
    mu: f64,
    /// classic | nesterov
    #[arg(long, default_value = "classic")]
    momentum: String,
    /// Train at one fixed class size (baseline regimen)
    #[arg(long, conflicts_with = "shot_range")]
    fixed_shot: Option<usize>,
    /// Inclusive class-size range drawn per batch (dynamic regimen)
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    shot_range: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relation-network hidden widths, comma separated
    #[arg(long, default_value = "64", value_delimiter = ',')]
    g_hidden: Vec<usize>,
    /// Class-embedding width
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Metric-network hidden widths, comma separated
    #[arg(long, default_value = "64", value_delimiter = ',')]
    f_hidden: Vec<usize>,
    /// relu | tanh
    #[arg(long, default_value = "relu")]
    activation: String,
    /// Average the relation network over both argument orders
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    symmetrize: bool,
    /// Largest class size the model cache will assemble
    #[arg(long, default_value_t = 32)]
    max_n: usize,
    /// Take every setting from an existing manifest instead of flags
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model prefixes (as given to train --out-prefix), comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    eval_sizes: Vec<usize>,
    /// Episodes per grid cell and evaluation seed
    #[arg(long, default_value_t = 400)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent evaluation seeds per cell (sd is over these)
    #[arg(long, default_value_t = 1)]
    eval_seeds: usize,
    /// Also write the grid as CSV
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single named check (grad, duplicate-collapse, census, cache, optimizer)
    #[arg(long)]
    only: Option<String>,
    /// Deliberately mis-wire one operation to prove the suite catches it
    /// (test builds only); currently: mean-to-sum
    #[cfg(debug_assertions)]
    #[arg(long = "break", value_name = "MUTATION")]
    break_mutation: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Assemble models for every class size from 2 to this
    #[arg(long, default_value_t = 8)]
    max_n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Report(args) => cmd_report(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::BenchAssembly(args) => cmd_bench_assembly(&args),
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<i32> {
    let cfg = SynthConfig {
        num_classes: args.classes,
        examples_per_class: args.per_class,
        feature_dim: args.dim,
        center_scale: args.center_scale,
        noise_scale: args.noise_scale,
        seed: args.seed,
    };
    let dataset = gen_synthetic(&cfg)?;
    let dataset = split_classes(&dataset, args.heldout_fraction, args.seed)?;
    save_features(&dataset, &args.out)?;
    println!(
        "wrote {} examples across {} classes ({} heldout) to {}",
        dataset.num_examples(),
        dataset.num_classes(),
        dataset.classes_in(crate::data::Split::Heldout).len(),
        args.out.display()
    );
    Ok(0)
}

/// Everything a training run depends on; round-trips through the manifest.
struct TrainSettings {
    data: PathBuf,
    steps: usize,
    batch_size: usize,
    alpha: f64,
    mu: f64,
    momentum: MomentumKind,
    shot_range: (usize, usize),
    seed: u64,
    g_hidden: Vec<usize>,
    embed_dim: usize,
    f_hidden: Vec<usize>,
    activation: Activation,
    symmetrize: bool,
    max_n: usize,
}

impl TrainSettings {
    fn from_args(args: &TrainArgs) -> Result<Self> {
        let shot_range = match (args.fixed_shot, &args.shot_range) {
            (Some(k), _) => (k, k),
            (None, Some(range)) => (range[0], range[1]),
            (None, None) => (2, 5),
        };
        Ok(TrainSettings {
            data: args.data.clone().expect("clap enforces --data"),
            steps: args.steps,
            batch_size: args.batch_size,
            alpha: args.alpha,
            mu: args.mu,
            momentum: MomentumKind::parse(&args.momentum)?,
            shot_range,
            seed: args.seed,
            g_hidden: args.g_hidden.clone(),
            embed_dim: args.embed_dim,
            f_hidden: args.f_hidden.clone(),
            activation: Activation::parse(&args.activation)?,
            symmetrize: args.symmetrize,
            max_n: args.max_n,
        })
    }

    fn from_manifest(m: &RunManifest) -> Result<Self> {
        Ok(TrainSettings {
            data: PathBuf::from(m.require("data")?),
            steps: m.require_parsed("steps")?,
            batch_size: m.require_parsed("batch_size")?,
            alpha: m.require_parsed("alpha")?,
            mu: m.require_parsed("mu")?,
            momentum: MomentumKind::parse(m.require("momentum")?)?,
            shot_range: (m.require_parsed("shot_min")?, m.require_parsed("shot_max")?),
            seed: m.require_parsed("seed")?,
            g_hidden: parse_widths(m.require("g_hidden")?)?,
            embed_dim: m.require_parsed("embed_dim")?,
            f_hidden: parse_widths(m.require("f_hidden")?)?,
            activation: Activation::parse(m.require("activation")?)?,
            symmetrize: m.require_parsed("symmetrize")?,
            max_n: m.require_parsed("max_n")?,
        })
    }

    fn manifest(&self, prefix: &str) -> RunManifest {
        let (ckpt, history, _) = artifact_paths(prefix);
        let mut m = RunManifest::new();
        m.set("command", "train")
            .set("tool_version", env!("CARGO_PKG_VERSION"))
            .set("data", self.data.display())
            .set("out_prefix", prefix)
            .set("checkpoint", ckpt.display())
            .set("history", history.display())
            .set("steps", self.steps)
            .set("batch_size", self.batch_size)
            .set("alpha", self.alpha)
            .set("mu", self.mu)
            .set("momentum", self.momentum.name())
            .set("shot_min", self.shot_range.0)
            .set("shot_max", self.shot_range.1)
            .set("seed", self.seed)
            .set("g_hidden", join_widths(&self.g_hidden))
            .set("embed_dim", self.embed_dim)
            .set("f_hidden", join_widths(&self.f_hidden))
            .set("activation", self.activation.name())
            .set("symmetrize", self.symmetrize)
            .set("max_n", self.max_n);
        m
    }

    fn relation_arch(&self) -> RelationArch {
        RelationArch {
            hidden_sizes: self.g_hidden.clone(),
            embed_dim: self.embed_dim,
            activation: self.activation,
            symmetrize: self.symmetrize,
        }
    }

    fn metric_arch(&self) -> MetricArch {
        MetricArch {
            hidden_sizes: self.f_hidden.clone(),
            activation: self.activation,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.alpha,
            momentum: self.mu,
            batch_size: self.batch_size,
            momentum_kind: self.momentum,
            shot_range: self.shot_range,
            steps: self.steps,
            seed: self.seed,
        }
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("bad width `{part}`")))
        })
        .collect()
}

fn join_widths(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn artifact_paths(prefix: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        PathBuf::from(format!("{prefix}.ckpt")),
        PathBuf::from(format!("{prefix}.history.csv")),
        PathBuf::from(format!("{prefix}.manifest")),
    )
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let settings = match &args.from_manifest {
        Some(path) => TrainSettings::from_manifest(&RunManifest::load(path)?)?,
        None => TrainSettings::from_args(args)?,
    };
    let dataset = load_features(&settings.data)?;
    let (ckpt_path, history_path, manifest_path) = artifact_paths(&args.out_prefix);

    settings.manifest(&args.out_prefix).write(&manifest_path)?;

    let mut cache = ModelCache::new(
        dataset.feature_dim(),
        settings.relation_arch(),
        settings.metric_arch(),
        settings.seed,
    )
    .with_max_n(settings.max_n);
    let cfg = settings.train_config();
    let history = train(&mut cache, &dataset, &cfg)?;

    write_checkpoint(&ckpt_path, &cache.registry().read())?;
    history.save(&history_path)?;

    let final_loss = history.records.last().map_or(f64::NAN, |r| r.mean_loss);
    println!(
        "trained {} steps (shot range {}..={}), final batch loss {final_loss:.6}",
        settings.steps, settings.shot_range.0, settings.shot_range.1
    );
    println!(
        "wrote {}, {}, {}",
        ckpt_path.display(),
        history_path.display(),
        manifest_path.display()
    );
    Ok(0)
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    if args.eval_seeds == 0 {
        return Err(Error::Config("eval_seeds must be >= 1".into()));
    }
    let dataset = load_features(&args.data)?;
    let mut rows = Vec::new();
    for (row_idx, prefix) in args.models.iter().enumerate() {
        let (ckpt_path, _, manifest_path) = artifact_paths(prefix);
        if !Path::new(&ckpt_path).exists() {
            return Err(Error::Checkpoint(format!(
                "missing checkpoint {}",
                ckpt_path.display()
            )));
        }
        let manifest = RunManifest::load(&manifest_path)?;
        let settings = TrainSettings::from_manifest(&manifest)?;
        let train_size = if settings.shot_range.0 == settings.shot_range.1 {
            Some(settings.shot_range.0)
        } else {
            None
        };
        let label = match train_size {
            Some(k) => format!("{k}-shot"),
            None => "dynamic".to_string(),
        };

        let mut cache = ModelCache::new(
            dataset.feature_dim(),
            settings.relation_arch(),
            settings.metric_arch(),
            settings.seed,
        )
        .with_max_n(settings.max_n);
        // Materialize the parameter set, then overwrite it from the checkpoint.
        cache.get_or_assemble(args.eval_sizes.iter().copied().min().unwrap_or(2))?;
        let records = read_checkpoint(&ckpt_path)?;
        restore_into(&mut cache.registry().write(), &records)?;

        let mut cells = Vec::new();
        for &eval_size in &args.eval_sizes {
            let accs: Vec<f64> = (0..args.eval_seeds)
                .map(|s| {
                    let stream = crate::registry::splitmix64(
                        args.seed
                            ^ (row_idx as u64) << 32
                            ^ (eval_size as u64) << 16
                            ^ s as u64,
                    );
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    evaluate(&mut cache, &dataset, eval_size, args.episodes, &mut rng)
                })
                .collect::<Result<_>>()?;
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let sd = if accs.len() < 2 {
                0.0
            } else {
                (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                    / (accs.len() - 1) as f64)
                    .sqrt()
            };
            cells.push(CellStat { mean, sd });
        }
        rows.push(GridRow {
            label,
            train_size,
            cells,
            generalization_gap: None,
        });
    }

    let grid = ResultGrid {
        eval_sizes: args.eval_sizes.clone(),
        rows,
    };
    print!("{}", grid.to_text());
    match &args.out_csv {
        Some(path) => fs::write(path, grid.to_csv())?,
        None => print!("\n{}", grid.to_csv()),
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let sabotage = {
        #[cfg(debug_assertions)]
        {
            match &args.break_mutation {
                Some(m) => Sabotage::parse(m)
                    .ok_or_else(|| Error::Config(format!("unknown mutation `{m}`")))?,
                None => Sabotage::None,
            }
        }
        #[cfg(not(debug_assertions))]
        {
            Sabotage::None
        }
    };
    if let Some(only) = &args.only {
        if !crate::verify::check_names().contains(&only.as_str()) {
            return Err(Error::Config(format!(
                "unknown check `{only}`; available: {}",
                crate::verify::check_names().join(", ")
            )));
        }
    }
    let outcomes = run_checks(args.only.as_deref(), sabotage);
    for outcome in &outcomes {
        println!(
            "{} {} ({} us): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.name,
            outcome.micros,
            outcome.detail
        );
    }
    Ok(if all_passed(&outcomes) { 0 } else { 1 })
}

fn cmd_bench_assembly(args: &BenchArgs) -> Result<i32> {
    if args.max_n < 2 {
        return Err(Error::Config("max_n must be >= 2".into()));
    }
    let mut cache = ModelCache::new(
        args.dim,
        RelationArch::default(),
        MetricArch::default(),
        0,
    )
    .with_max_n(args.max_n);
    let mut csv = String::from("n,g_instances,node_count,param_count,assemble_micros\n");
    for n in 2..=args.max_n {
        let start = Instant::now();
        let model = cache.get_or_assemble(n)?;
        let micros = start.elapsed().as_micros();
        let census = assembly_census(model);
        writeln!(
            csv,
            "{n},{},{},{},{micros}",
            census.relation_instances, census.node_count, census.param_count
        )
        .unwrap();
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}
