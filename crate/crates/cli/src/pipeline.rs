//! Full-experiment orchestration: pool -> subset -> support -> three
//! trained models -> samples -> similarity report and plot exports.
//!
//! Every stage round-trips through the on-disk formats, so one
//! `run-experiment` is byte-equivalent to the corresponding sequence of
//! individual subcommands. Derived seeds are fixed offsets of the master
//! seed and are recorded in `run.txt`.

use std::fmt;
use std::path::{Path, PathBuf};

use threatgen_core::eval::{fit_pca, project, similarity_report_on, EvalError, SimilarityReport};
use threatgen_core::field::{generate_pool, generate_support, subsample, Dataset, FieldError, PoolConfig};
use threatgen_core::models::{Model, ModelError, ModelKind, ModelSpec};
use threatgen_core::persistence::{
    self, loss_history_csv, projection_csv, read_dataset, write_checkpoint, write_dataset,
    write_text, PersistError,
};
use threatgen_core::rng::RngStream;
use threatgen_core::training::{train, TrainConfig, TrainError};

use crate::config::{ConfigError, ExperimentConfig};

// Derived-seed offsets, and the stream id reserved for parameter
// initialization (training itself uses low ids and the shuffle band).
const SUBSAMPLE_OFFSET: u64 = 1;
const SUPPORT_OFFSET: u64 = 2;
const TRAIN_OFFSET: u64 = 10;
const SAMPLE_OFFSET: u64 = 20;
/// Stream id reserved for parameter initialization.
pub const INIT_STREAM: u64 = 1 << 62;

/// The three models in report order.
pub const MODEL_ORDER: [ModelKind; 3] = [ModelKind::Svae, ModelKind::Vrnn, ModelKind::Svrnn];

#[derive(Debug)]
pub enum PipelineError {
    Config(ConfigError),
    Field(FieldError),
    Train(TrainError),
    Model(ModelError),
    Eval(EvalError),
    Persist(PersistError),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config(e) => write!(f, "{e}"),
            PipelineError::Field(e) => write!(f, "{e}"),
            PipelineError::Train(e) => write!(f, "{e}"),
            PipelineError::Model(e) => write!(f, "{e}"),
            PipelineError::Eval(e) => write!(f, "{e}"),
            PipelineError::Persist(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PipelineError {}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::$variant(e)
            }
        }
    };
}
from_err!(Config, ConfigError);
from_err!(Field, FieldError);
from_err!(Train, TrainError);
from_err!(Model, ModelError);
from_err!(Eval, EvalError);
from_err!(Persist, PersistError);

/// Per-model results of one experiment run.
#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub kind: ModelKind,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    /// Normalized L1 moment distance of the generated set to the pool.
    pub distance: f64,
    /// Fraction of generated samples whose peak |x - 1| at the last step
    /// is below the first step's.
    pub decay_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub models: Vec<ModelOutcome>,
    pub report: SimilarityReport,
}

impl ExperimentOutcome {
    pub fn model(&self, kind: ModelKind) -> &ModelOutcome {
        self.models
            .iter()
            .find(|m| m.kind == kind)
            .expect("all three models present")
    }
}

fn max_deviation(frame: &[f64]) -> f64 {
    frame.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
}

fn decay_fraction(ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let last = ds.horizon() - 1;
    let decayed = ds
        .data()
        .iter()
        .filter(|d| max_deviation(d.at(last)) < max_deviation(d.at(0)))
        .count();
    decayed as f64 / ds.len() as f64
}

/// Train one model on already-loaded data and emit its artifacts.
/// Returns the trained model and its loss history endpoints.
fn train_model(
    kind: ModelKind,
    cfg: &ExperimentConfig,
    seed: u64,
    x: &Dataset,
    support: &Dataset,
    out_dir: &Path,
) -> Result<(Model, f64, f64), PipelineError> {
    let train_seed = seed + TRAIN_OFFSET + kind_index(kind);
    let spec = ModelSpec::paper(kind, cfg.grid_side, cfg.horizon);
    let mut init_rng = RngStream::substream(train_seed, INIT_STREAM);
    let mut model = Model::init(spec, &mut init_rng);
    let tcfg = TrainConfig {
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        seed: train_seed,
        clip_norm: 5.0,
    };
    let support_arg = match kind {
        ModelKind::Vrnn => None,
        _ => Some(support),
    };
    let report = train(&mut model, x, support_arg, &tcfg)?;

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

    let first = report.history.first().map_or(0.0, |e| e.breakdown.total);
    let last = report.history.last().map_or(0.0, |e| e.breakdown.total);
    Ok((model, first, last))
}

fn kind_index(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Svae => 0,
        ModelKind::Vrnn => 1,
        ModelKind::Svrnn => 2,
    }
}

/// Run the whole protocol for one seed. Artifacts land in `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentOutcome, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(PersistError::Io)?;

    // Data synthesis, each stage re-read from its file so a manual
    // subcommand pipeline reproduces this run exactly.
    let pool_cfg = PoolConfig {
        count: cfg.pool_count,
        grid_side: cfg.grid_side,
        horizon: cfg.horizon,
        n_p: cfg.n_p,
        sigma1: cfg.sigma1,
        sigma2: cfg.sigma2,
        dt: cfg.dt,
        seed,
    };
    let pool_path = out_dir.join("pool.svtf");
    write_dataset(&generate_pool(&pool_cfg)?, &pool_path)?;
    let pool = read_dataset(&pool_path)?;

    let x_path = out_dir.join("x.svtf");
    write_dataset(&subsample(&pool, cfg.nd, seed + SUBSAMPLE_OFFSET)?, &x_path)?;
    let x = read_dataset(&x_path)?;

    let support_path = out_dir.join("support.svtf");
    let a = pool.dynamics_matrix()?;
    write_dataset(
        &generate_support(
            a,
            cfg.ns,
            cfg.grid_side,
            cfg.horizon,
            cfg.dt,
            seed + SUPPORT_OFFSET,
        )?,
        &support_path,
    )?;
    let support = read_dataset(&support_path)?;

    // Train and sample all three models.
    let mut generated: Vec<(ModelKind, Dataset, f64, f64)> = Vec::new();
    for kind in MODEL_ORDER {
        let (model, first, last) = train_model(kind, cfg, seed, &x, &support, out_dir)?;
        let gen_path = out_dir.join(format!("gen-{}.svtf", kind.as_str()));
        let sample_seed = seed + SAMPLE_OFFSET + kind_index(kind);
        write_dataset(&model.generate(cfg.sample_count, sample_seed)?, &gen_path)?;
        let gen = read_dataset(&gen_path)?;
        generated.push((kind, gen, first, last));
    }

    // Similarity report on the pool's principal axes.
    let basis = fit_pca(&pool, 3)?;
    let labeled: Vec<(String, &Dataset)> = generated
        .iter()
        .map(|(kind, ds, _, _)| (format!("{} generated data", kind.label()), ds))
        .collect();
    let report = similarity_report_on(&basis, &pool, Some(&x), &labeled)?;
    write_text(out_dir.join("report.txt"), &report.render_text())?;
    write_text(out_dir.join("report.csv"), &report.to_csv())?;
    write_text(out_dir.join("distances.csv"), &report.distances_csv())?;

    // 3-D scatter coordinates for the visualization plots.
    let mut coord_groups = vec![
        ("pool".to_string(), project(&basis, &pool)?),
        ("x".to_string(), project(&basis, &x)?),
    ];
    for (kind, ds, _, _) in &generated {
        coord_groups.push((kind.as_str().to_string(), project(&basis, ds)?));
    }
    write_text(out_dir.join("coords.csv"), &projection_csv(&coord_groups))?;

    // Field images: one pool datum and one generated datum per model.
    if let Some(datum) = pool.data().first() {
        for t in 0..pool.horizon() {
            persistence::export_field_image(
                datum,
                t,
                pool.grid_side(),
                out_dir.join(format!("field-pool-t{}.pgm", t + 1)),
            )?;
        }
    }
    for (kind, ds, _, _) in &generated {
        if let Some(datum) = ds.data().first() {
            for t in 0..ds.horizon() {
                persistence::export_field_image(
                    datum,
                    t,
                    ds.grid_side(),
                    out_dir.join(format!("sample-{}-t{}.pgm", kind.as_str(), t + 1)),
                )?;
            }
        }
    }

    // Outcome summary.
    let mut models = Vec::new();
    let mut metrics = String::from("model,first_epoch_loss,final_epoch_loss,distance,decay_fraction\n");
    for (kind, ds, first, last) in &generated {
        let label = format!("{} generated data", kind.label());
        let distance = report
            .distances
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, d)| *d)
            .expect("distance per generated set");
        let outcome = ModelOutcome {
            kind: *kind,
            first_epoch_loss: *first,
            final_epoch_loss: *last,
            distance,
            decay_fraction: decay_fraction(ds),
        };
        metrics.push_str(&format!(
            "{},{},{},{},{}\n",
            kind.as_str(),
            outcome.first_epoch_loss,
            outcome.final_epoch_loss,
            outcome.distance,
            outcome.decay_fraction
        ));
        models.push(outcome);
    }
    write_text(out_dir.join("metrics.csv"), &metrics)?;

    // Auditable run metadata: master and derived seeds plus the config.
    let mut run = String::new();
    run.push_str(&format!("seed={seed}\n"));
    run.push_str(&format!("subsample_seed={}\n", seed + SUBSAMPLE_OFFSET));
    run.push_str(&format!("support_seed={}\n", seed + SUPPORT_OFFSET));
    for kind in MODEL_ORDER {
        run.push_str(&format!(
            "train_seed_{}={}\n",
            kind.as_str(),
            seed + TRAIN_OFFSET + kind_index(kind)
        ));
        run.push_str(&format!(
            "sample_seed_{}={}\n",
            kind.as_str(),
            seed + SAMPLE_OFFSET + kind_index(kind)
        ));
    }
    run.push_str(&format!(
        "pool_count={}\ngrid_side={}\nhorizon={}\nn_p={}\nsigma1={}\nsigma2={}\ndt={}\nnd={}\nns={}\nepochs={}\nbatch_size={}\nlearning_rate={}\nsample_count={}\n",
        cfg.pool_count,
        cfg.grid_side,
        cfg.horizon,
        cfg.n_p,
        cfg.sigma1,
        cfg.sigma2,
        cfg.dt,
        cfg.nd,
        cfg.ns,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.sample_count
    ));
    write_text(out_dir.join("run.txt"), &run)?;

    Ok(ExperimentOutcome {
        seed,
        out_dir: out_dir.to_path_buf(),
        models,
        report,
    })
}

/// Run every configured seed into `seed-<n>/` subdirectories and write a
/// cross-seed summary.
pub fn run_all_seeds(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<ExperimentOutcome>, PipelineError> {
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let sub = out_dir.join(format!("seed-{seed}"));
        outcomes.push(run_experiment(cfg, seed, &sub)?);
    }
    let mut summary =
        String::from("seed,model,first_epoch_loss,final_epoch_loss,distance,decay_fraction\n");
    for outcome in &outcomes {
        for m in &outcome.models {
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                outcome.seed,
                m.kind.as_str(),
                m.first_epoch_loss,
                m.final_epoch_loss,
                m.distance,
                m.decay_fraction
            ));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(PersistError::Io)?;
    write_text(out_dir.join("summary.csv"), &summary)?;
    Ok(outcomes)
}
