//! `threatgen` — synthesize threat-field datasets, train the three
//! generative models, and evaluate statistical similarity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use threatgen_cli::config::{ConfigError, ExperimentConfig, Preset};
use threatgen_cli::pipeline::{self, PipelineError};
use threatgen_core::eval::{fit_pca, project, similarity_report_on, EvalError};
use threatgen_core::field::{
    generate_pool, generate_support, subsample, Dataset, FieldError, PoolConfig,
};
use threatgen_core::models::{Model, ModelError, ModelKind, ModelSpec};
use threatgen_core::persistence::{
    loss_history_csv, projection_csv, read_checkpoint, read_dataset, write_checkpoint,
    write_dataset, write_text, PersistError,
};
use threatgen_core::rng::RngStream;
use threatgen_core::training::{train, TrainConfig, TrainError};

const EXIT_DOCS: &str = "Exit codes:\n\
    \x20 0  success\n\
    \x20 2  configuration or usage error (bad flags, config keys, contracts)\n\
    \x20 3  missing file or other I/O failure\n\
    \x20 4  malformed file (magic, version, truncation, checksum)\n\
    \x20 5  geometry mismatch between datasets, models, or bases\n\n\
    Errors print a single machine-parseable line:\n\
    \x20 error: kind=<config|io|format|geometry|internal> msg=\"...\"\n";

fn after_help() -> String {
    format!("{EXIT_DOCS}\n{}\n", ExperimentConfig::key_docs())
}

#[derive(Parser)]
#[command(
    name = "threatgen",
    version,
    about = "Threat-field dataset synthesis, generative-model training, and similarity evaluation",
    after_long_help = after_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Preset/config/flag layering shared by generation commands.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named preset: paper-desk (20x20 grid) or paper-full (100x100 grid)
    #[arg(long, default_value = "paper-desk")]
    preset: String,
    /// Flat key=value config file applied over the preset
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::preset(Preset::parse(&self.preset)?);
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        Ok(cfg)
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("THREATGEN_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training pool of noisy threat-field time series
    GenPool {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset file
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        grid_side: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        np: Option<usize>,
        #[arg(long)]
        sigma1: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Subsample the "real" training set X from a pool
    MakeDataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        pool: PathBuf,
        /// Subset size N_D (config key: nd)
        #[arg(long)]
        nd: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the noiseless support set from a pool's known dynamics
    GenSupport {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pool file supplying the dynamics matrix and geometry
        #[arg(long)]
        pool: PathBuf,
        /// Support set size (config key: ns)
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; split models require --support, the VRNN rejects it
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model kind: svae, vrnn, or svrnn
        #[arg(long)]
        model: String,
        /// Training dataset X
        #[arg(long)]
        data: PathBuf,
        /// Support dataset X_s (split models only)
        #[arg(long)]
        support: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: $THREATGEN_OUT_DIR or .)
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Decode fresh samples from a trained checkpoint
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples to generate (config key: sample_count)
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project datasets on the pool's principal axes; export moments and
    /// 3-D coordinates
    Eval {
        #[arg(long)]
        pool: PathBuf,
        /// Training subset X (optional row in the outputs)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generated datasets as label=path (repeatable)
        #[arg(long = "generated", value_name = "LABEL=PATH")]
        generated: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render the moment-comparison table and per-model distances
    Report {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "generated", value_name = "LABEL=PATH")]
        generated: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the full protocol: pool, X, support, three models, samples,
    /// report, and plot exports
    RunExperiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Override the subset size N_D
        #[arg(long)]
        nd: Option<usize>,
        /// Run a single seed instead of every configured seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, code: u8, message: impl ToString) -> Self {
        Self {
            kind,
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new("config", 2, e)
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Self {
        match &e {
            FieldError::NotHurwitz { .. }
            | FieldError::NotSquare { .. }
            | FieldError::NonPositiveDt { .. }
            | FieldError::DtNotDividingInterval { .. }
            | FieldError::NegativeNoise { .. }
            | FieldError::ZeroCount
            | FieldError::SubsampleTooLarge { .. } => Failure::new("config", 2, e),
            FieldError::MetadataMissing { .. } | FieldError::MetadataParse { .. } => {
                Failure::new("format", 4, e)
            }
            _ => Failure::new("geometry", 5, e),
        }
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io(err) => Failure::new("io", 3, err),
            PersistError::Field(err) => err.into(),
            PersistError::FrameOutOfRange { .. } => Failure::new("config", 2, e),
            other => Failure::new("format", 4, other),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::GeometryMismatch { .. } => Failure::new("geometry", 5, e),
            ModelError::MissingParam { .. } => Failure::new("format", 4, e),
            ModelError::EpsMismatch { .. } => Failure::new("internal", 1, e),
            ModelError::Field(err) => err.into(),
            other => Failure::new("geometry", 5, other),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::UnexpectedSupport
            | TrainError::MissingSupport { .. }
            | TrainError::BadBatchSize { .. }
            | TrainError::BadLearningRate { .. }
            | TrainError::EmptyDataset => Failure::new("config", 2, e),
            TrainError::SupportGeometryMismatch { .. } => Failure::new("geometry", 5, e),
            TrainError::Model(err) => err.into(),
            TrainError::Tensor(err) => Failure::new("geometry", 5, err),
            TrainError::GradCountMismatch { .. } => Failure::new("internal", 1, e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooFewSamples { .. } => Failure::new("config", 2, e),
            other => Failure::new("geometry", 5, other),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(err) => err.into(),
            PipelineError::Field(err) => err.into(),
            PipelineError::Train(err) => err.into(),
            PipelineError::Model(err) => err.into(),
            PipelineError::Eval(err) => err.into(),
            PipelineError::Persist(err) => err.into(),
        }
    }
}

fn parse_labeled(pairs: &[String]) -> Result<Vec<(String, PathBuf)>, Failure> {
    pairs
        .iter()
        .map(|raw| {
            raw.split_once('=')
                .map(|(label, path)| (label.to_string(), PathBuf::from(path)))
                .ok_or_else(|| {
                    Failure::new(
                        "config",
                        2,
                        format!("--generated expects LABEL=PATH, got {raw:?}"),
                    )
                })
        })
        .collect()
}

fn load_labeled(pairs: &[(String, PathBuf)]) -> Result<Vec<(String, Dataset)>, Failure> {
    pairs
        .iter()
        .map(|(label, path)| Ok((label.clone(), read_dataset(path)?)))
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenPool {
            cfg,
            out,
            seed,
            count,
            grid_side,
            horizon,
            np,
            sigma1,
            sigma2,
            dt,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(v) = count {
                cfg.pool_count = v;
            }
            if let Some(v) = grid_side {
                cfg.grid_side = v;
            }
            if let Some(v) = horizon {
                cfg.horizon = v;
            }
            if let Some(v) = np {
                cfg.n_p = v;
            }
            if let Some(v) = sigma1 {
                cfg.sigma1 = v;
            }
            if let Some(v) = sigma2 {
                cfg.sigma2 = v;
            }
            if let Some(v) = dt {
                cfg.dt = v;
            }
            cfg.validate_pool()?;
            let pool_cfg = PoolConfig {
                count: cfg.pool_count,
                grid_side: cfg.grid_side,
                horizon: cfg.horizon,
                n_p: cfg.n_p,
                sigma1: cfg.sigma1,
                sigma2: cfg.sigma2,
                dt: cfg.dt,
                seed: seed.unwrap_or_else(|| cfg.seeds[0]),
            };
            write_dataset(&generate_pool(&pool_cfg)?, &out)?;
            println!("wrote pool of {} data to {}", pool_cfg.count, out.display());
        }
        Command::MakeDataset {
            cfg,
            pool,
            nd,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            let nd = nd.unwrap_or(cfg.nd);
            let pool = read_dataset(&pool)?;
            write_dataset(&subsample(&pool, nd, seed)?, &out)?;
            println!("wrote {nd}-point dataset to {}", out.display());
        }
        Command::GenSupport {
            cfg,
            pool,
            count,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            let count = count.unwrap_or(cfg.ns);
            let pool = read_dataset(&pool)?;
            let a = pool.dynamics_matrix()?;
            let dt: f64 = pool.meta_parsed(threatgen_core::field::meta::DT)?;
            let ds = generate_support(a, count, pool.grid_side(), pool.horizon(), dt, seed)?;
            write_dataset(&ds, &out)?;
            println!("wrote {count} support data to {}", out.display());
        }
        Command::Train {
            cfg,
            model,
            data,
            support,
            epochs,
            batch_size,
            learning_rate,
            seed,
            out_dir,
        } => {
            let cfg = cfg.load()?;
            let epochs = epochs.unwrap_or(cfg.epochs);
            let batch_size = batch_size.unwrap_or(cfg.batch_size);
            let learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            let kind = ModelKind::parse(&model).ok_or_else(|| {
                Failure::new(
                    "config",
                    2,
                    format!("unknown model {model:?}; expected svae, vrnn, or svrnn"),
                )
            })?;
            let x = read_dataset(&data)?;
            let support_data = support.as_ref().map(read_dataset).transpose()?;
            let out_dir = out_dir.unwrap_or_else(default_out_dir);
            std::fs::create_dir_all(&out_dir).map_err(PersistError::Io)?;

            let spec = ModelSpec::paper(kind, x.grid_side(), x.horizon());
            let mut init_rng = RngStream::substream(seed, pipeline::INIT_STREAM);
            let mut model = Model::init(spec, &mut init_rng);
            let tcfg = TrainConfig {
                batch_size,
                learning_rate,
                epochs,
                seed,
                clip_norm: 5.0,
            };
            let report = train(&mut model, &x, support_data.as_ref(), &tcfg)?;
            let name = kind.as_str();
            write_checkpoint(&model, out_dir.join(format!("model-{name}-final.svck")))?;
            let best = Model {
                spec: model.spec.clone(),
                params: report.best_params.clone(),
            };
            write_checkpoint(&best, out_dir.join(format!("model-{name}-best.svck")))?;
            write_text(
                out_dir.join(format!("loss-{name}.csv")),
                &loss_history_csv(&report.history),
            )?;
            let last = report.history.last().map_or(0.0, |e| e.breakdown.total);
            println!(
                "trained {name} for {epochs} epochs (final mean loss {last:.6}); artifacts in {}",
                out_dir.display()
            );
        }
        Command::Sample {
            cfg,
            checkpoint,
            count,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            let count = count.unwrap_or(cfg.sample_count);
            let model = read_checkpoint(&checkpoint)?;
            write_dataset(&model.generate(count, seed)?, &out)?;
            println!(
                "wrote {count} generated data from {} to {}",
                model.kind().as_str(),
                out.display()
            );
        }
        Command::Eval {
            pool,
            data,
            generated,
            out_dir,
        } => {
            let out_dir = out_dir.unwrap_or_else(default_out_dir);
            std::fs::create_dir_all(&out_dir).map_err(PersistError::Io)?;
            let pool = read_dataset(&pool)?;
            let x = data.as_ref().map(read_dataset).transpose()?;
            let labeled = load_labeled(&parse_labeled(&generated)?)?;
            let refs: Vec<(String, &Dataset)> =
                labeled.iter().map(|(l, d)| (l.clone(), d)).collect();
            let basis = fit_pca(&pool, 3)?;
            let report = similarity_report_on(&basis, &pool, x.as_ref(), &refs)?;
            write_text(out_dir.join("moments.csv"), &report.to_csv())?;
            let mut groups = vec![("pool".to_string(), project(&basis, &pool)?)];
            if let Some(x) = &x {
                groups.push(("x".to_string(), project(&basis, x)?));
            }
            for (label, ds) in &labeled {
                groups.push((label.clone(), project(&basis, ds)?));
            }
            write_text(out_dir.join("coords.csv"), &projection_csv(&groups))?;
            println!("wrote moments.csv and coords.csv to {}", out_dir.display());
        }
        Command::Report {
            pool,
            data,
            generated,
            out_dir,
        } => {
            let out_dir = out_dir.unwrap_or_else(default_out_dir);
            std::fs::create_dir_all(&out_dir).map_err(PersistError::Io)?;
            let pool = read_dataset(&pool)?;
            let x = data.as_ref().map(read_dataset).transpose()?;
            let labeled = load_labeled(&parse_labeled(&generated)?)?;
            let refs: Vec<(String, &Dataset)> =
                labeled.iter().map(|(l, d)| (l.clone(), d)).collect();
            let basis = fit_pca(&pool, 3)?;
            let report = similarity_report_on(&basis, &pool, x.as_ref(), &refs)?;
            write_text(out_dir.join("report.txt"), &report.render_text())?;
            write_text(out_dir.join("report.csv"), &report.to_csv())?;
            write_text(out_dir.join("distances.csv"), &report.distances_csv())?;
            print!("{}", report.render_text());
        }
        Command::RunExperiment {
            cfg,
            nd,
            seed,
            out_dir,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(nd) = nd {
                cfg.nd = nd;
            }
            cfg.validate()?;
            let out_dir = out_dir.unwrap_or_else(default_out_dir);
            match seed {
                Some(seed) => {
                    let outcome = pipeline::run_experiment(&cfg, seed, &out_dir)?;
                    print!("{}", outcome.report.render_text());
                    println!("artifacts in {}", out_dir.display());
                }
                None => {
                    let outcomes = pipeline::run_all_seeds(&cfg, &out_dir)?;
                    for outcome in &outcomes {
                        println!("== seed {} ==", outcome.seed);
                        print!("{}", outcome.report.render_text());
                    }
                    println!("artifacts in {}", out_dir.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!(
                "error: kind={} msg={:?}",
                failure.kind,
                failure.message.replace('\n', " ")
            );
            ExitCode::from(failure.code)
        }
    }
}
