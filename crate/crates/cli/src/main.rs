use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use phreg::datasets::{generate, Shape, SyntheticSpec};
use phreg::harness::{dump_embeddings, run_experiment_detailed, trace_csv, ExperimentConfig, Variant};
use phreg::id_estimation::{ph_dim_birdal, twonn, SubsetSchedule};
use phreg::nn::FeatureTap;
use phreg::rng::{stream, Stream};
use phreg::tda::{ph0, total_persistence};
use phreg::PointCloud;

#[derive(Parser)]
#[command(name = "phreg", version, about = "Persistent-homology regularized regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it to a directory.
    Generate {
        #[arg(long, value_parser = parse_shape)]
        shape: Shape,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Point-cloud CSV for the mammoth shape.
        #[arg(long)]
        mammoth: Option<PathBuf>,
    },
    /// Train one variant over a set of seeds.
    Train(TrainArgs),
    /// Estimate the intrinsic dimension of a point cloud.
    EstimateId {
        cloud: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Twonn)]
        method: Method,
        /// Seed for the subset draws of the birdal estimator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subsets per size for the birdal estimator.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Censored fraction of the largest TwoNN ratios.
        #[arg(long, default_value_t = 0.1)]
        truncation: f64,
    },
    /// Print the 0-dimensional persistence intervals of a point cloud.
    Ph0 { cloud: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Birdal,
    Twonn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tap {
    /// Before the ReLU.
    Pre,
    /// After the ReLU.
    Post,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_shape)]
    dataset: Shape,
    #[arg(long, value_parser = parse_variant, default_value = "ld_plus_lt")]
    variant: Variant,
    /// Defaults to the dataset preset.
    #[arg(long)]
    lambda_d: Option<f64>,
    /// Defaults to the dataset preset.
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Comma list ("0,1,2") or half-open range ("0..10").
    #[arg(long, value_parser = parse_seeds, default_value = "0..10")]
    seeds: SeedList,
    /// Regularizer batch size; defaults to the training-set size.
    #[arg(long)]
    nm: Option<usize>,
    #[arg(long, default_value_t = 4)]
    schedule_m: usize,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    /// Hidden width override, e.g. 3 for plottable features.
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Hidden-layer features seen by the regularizers.
    #[arg(long, value_enum, default_value_t = Tap::Pre)]
    tap: Tap,
    /// Estimate the feature dimension with TwoNN every k epochs.
    #[arg(long, value_name = "K")]
    track_id: Option<usize>,
    /// Record per-epoch losses in trace.csv.
    #[arg(long)]
    trace: bool,
    /// Write test-set features of the first seed to embeddings.csv.
    #[arg(long)]
    dump_embeddings: bool,
    /// Draw every seed from this one dataset.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    mammoth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.parse().map_err(|e: phreg::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: phreg::Error| e.to_string())
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = |_| format!("invalid seed list {s:?}");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a >= b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',').map(|t| t.trim().parse().map_err(bad)).collect::<Result<_, _>>().map(SeedList)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { shape, seed, out, mammoth } => {
            let spec = SyntheticSpec { mammoth_path: mammoth, ..SyntheticSpec::standard(shape, seed) };
            cmd_generate(&spec, &out)?;
        }
        Command::Train(args) => return cmd_train(args),
        Command::EstimateId { cloud, method, seed, reps, truncation } => {
            let cloud = read_cloud(&cloud)?;
            let est = match method {
                Method::Birdal => {
                    let schedule = SubsetSchedule::estimation_default(cloud.len())?;
                    ph_dim_birdal(&cloud, &schedule, reps, &mut stream(seed, Stream::Estimator))?
                }
                Method::Twonn => twonn(&cloud, truncation)?,
            };
            println!("method,slope,dimension");
            println!("{},{},{}", est.method, est.slope, est.dimension);
        }
        Command::Ph0 { cloud } => {
            let cloud = read_cloud(&cloud)?;
            let total = total_persistence(&cloud)?;
            println!("birth,death");
            for interval in ph0(&cloud) {
                println!("{},{}", interval.birth, interval.death);
            }
            println!("E,{total}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    PointCloud::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_generate(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let data = generate(spec)?;
    fs::create_dir_all(out)?;
    data.data.y.write_csv_path(out.join("targets.csv"))?;
    PointCloud::new(data.data.x.clone())?.write_csv_path(out.join("inputs.csv"))?;
    fs::write(out.join("splits.json"), serde_json::to_string_pretty(&data.split)?)?;
    let meta = serde_json::json!({
        "spec": spec,
        "rows": data.data.len(),
        "noise_assignment_sha256": data.data.noise_digest(),
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::new(args.dataset, args.variant);
    if let Some(v) = args.lambda_d {
        cfg.lambda_d = v;
    }
    if let Some(v) = args.lambda_t {
        cfg.lambda_t = v;
    }
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.seeds = args.seeds.0;
    cfg.n_m = args.nm;
    cfg.schedule_m = args.schedule_m;
    cfg.hidden = args.hidden;
    cfg.feature_dim = args.feature_dim;
    cfg.feature_tap = match args.tap {
        Tap::Pre => FeatureTap::PreActivation,
        Tap::Post => FeatureTap::PostActivation,
    };
    cfg.track_id_every = args.track_id;
    cfg.record_trace = args.trace;
    cfg.dataset.data_seed = args.data_seed;
    cfg.dataset.mammoth_path = args.mammoth;

    let (report, runs) = run_experiment_detailed(&cfg)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("report.json"), report.to_json()?)?;
    fs::write(args.out.join("report.csv"), report.to_csv())?;
    if cfg.record_trace || cfg.track_id_every.is_some() {
        fs::write(args.out.join("trace.csv"), trace_csv(&report))?;
    }
    if let Some(run) = runs.iter().flatten().next() {
        run.model.write_checkpoint(std::io::BufWriter::new(fs::File::create(args.out.join("model.bin"))?))?;
        if args.dump_embeddings {
            dump_embeddings(&run.model, &run.data, cfg.feature_tap, &args.out.join("embeddings.csv"))?;
        }
    }

    match (report.mean_test_mse, report.std_test_mse) {
        (Some(m), Some(s)) => eprintln!("{} on {}: test MSE {m:.6} ± {s:.6}", cfg.variant, cfg.dataset.shape),
        (Some(m), None) => eprintln!("{} on {}: test MSE {m:.6}", cfg.variant, cfg.dataset.shape),
        _ => {}
    }
    if !report.is_complete() {
        for s in &report.seeds {
            if let phreg::harness::SeedStatus::Failed { error } = &s.status {
                eprintln!("seed {} failed: {error}", s.seed);
            }
        }
        if report.completed == 0 {
            bail!("every seed failed");
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
