//! The `ztps` command line: fit, simulate, predict, eval and export-effects.
//!
//! Every command writes tab-separated tables into an output directory. Each
//! table starts with a `# config:` fingerprint of the command, its options
//! and its input files, then a header row.

pub mod commands;
pub mod error;
pub mod fingerprint;
pub mod input;
pub mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ztps::fit::FitConfig;
use ztps::regression::{GlobalFamily, OptimControls, SplitFamily};

pub use error::{CliError, Result};
use fingerprint::Fingerprint;
use input::DataPaths;

#[derive(Debug, Parser)]
#[command(name = "ztps", version, about = "Zero-inflated tree Polya-splitting regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a regression and write the model, selection, coefficient,
    /// effect and summary tables.
    Fit(FitArgs),
    /// Draw a dataset from a model file or from a random generator model.
    Simulate(SimulateArgs),
    /// Expected counts at new sites.
    Predict(PredictArgs),
    /// K-fold cross-validated prediction errors.
    Eval(EvalArgs),
    /// Size-effect table of a fitted model.
    ExportEffects(ExportEffectsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Site-by-species counts: site id column, then one column per species.
    #[arg(long)]
    pub counts: PathBuf,
    /// Raw covariates by site id (the intercept is added automatically).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Sampling effort by site id; 1 for every site when absent.
    #[arg(long)]
    pub offsets: Option<PathBuf>,
    /// Newick tree over the species.
    #[arg(long)]
    pub tree: PathBuf,
}

impl DataArgs {
    pub fn paths(&self) -> DataPaths {
        DataPaths {
            counts: self.counts.clone(),
            covariates: self.covariates.clone(),
            offsets: self.offsets.clone(),
        }
    }

    fn fingerprint(&self, f: &mut Fingerprint) -> Result<()> {
        f.file("counts", &self.counts)?;
        f.optional_file("covariates", self.covariates.as_deref())?;
        f.optional_file("offsets", self.offsets.as_deref())?;
        f.file("tree", &self.tree)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyChoice {
    Auto,
    Binomial,
    #[value(name = "betabinomial")]
    BetaBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZiChoice {
    Auto,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GlobalChoice {
    Poisson,
    Negbin,
}

impl From<GlobalChoice> for GlobalFamily {
    fn from(c: GlobalChoice) -> Self {
        match c {
            GlobalChoice::Poisson => GlobalFamily::Poisson,
            GlobalChoice::Negbin => GlobalFamily::NegBin,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Split families considered at every node.
    #[arg(long, value_enum, default_value = "auto")]
    pub family: FamilyChoice,
    /// Whether zero-inflated split candidates are considered.
    #[arg(long, value_enum, default_value = "auto")]
    pub zi: ZiChoice,
    /// Law of the total abundance.
    #[arg(long = "global", value_enum, default_value = "negbin")]
    pub global: GlobalChoice,
    /// Gradient tolerance of the optimizer.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Iteration cap of the optimizer per fit
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Worker threads (0: one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

impl ModelArgs {
    pub fn config(&self) -> Result<FitConfig> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(CliError::Usage("--max-iter must be at least 1".into()));
        }
        let families: &[SplitFamily] = match self.family {
            FamilyChoice::Auto => &[SplitFamily::Binomial, SplitFamily::BetaBinomial],
            FamilyChoice::Binomial => &[SplitFamily::Binomial],
            FamilyChoice::BetaBinomial => &[SplitFamily::BetaBinomial],
        };
        let config = FitConfig {
            global_family: self.global.into(),
            controls: OptimControls {
                grad_tol: self.tol,
                max_iter: self.max_iter,
                ..OptimControls::default()
            },
            threads: (self.threads > 0).then_some(self.threads),
            ..FitConfig::default()
        };
        Ok(config.with_candidates(families, self.zi == ZiChoice::Auto))
    }

    fn fingerprint(&self, f: &mut Fingerprint) {
        f.option("family", format!("{:?}", self.family))
            .option("zi", format!("{:?}", self.zi))
            .option("global", format!("{:?}", self.global))
            .option("tol", self.tol)
            .option("max_iter", self.max_iter);
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Extra evaluation rows for the effects table: a label column, then
    /// the covariates.
    #[arg(long)]
    pub at: Option<PathBuf>,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Model file to draw from (truth or fitted); a random generator model
    /// is used when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Species of the generator model.
    #[arg(long, default_value_t = 8)]
    pub species: usize,
    /// Covariates of the generator model.
    #[arg(long, default_value_t = 2)]
    pub n_covariates: usize,
    /// Total-abundance law of the generator model.
    #[arg(long = "global", value_enum, default_value = "negbin")]
    pub global: GlobalChoice,
    #[arg(long, default_value_t = 400)]
    pub sites: usize,
    /// Seed of the random stream; equal seeds give identical files
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a balanced random assignment into this many folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Fitted model file (model.json)
    #[arg(long)]
    pub model: PathBuf,
    /// Covariates of the sites to predict (their site ids label the rows).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub offsets: Option<PathBuf>,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fold label (1..K) by site id.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportEffectsArgs {
    /// Fitted model file (model.json)
    #[arg(long)]
    pub model: PathBuf,
    /// Covariates whose column means give the first evaluation row.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Further evaluation rows: a label column, then the covariates.
    #[arg(long)]
    pub at: Option<PathBuf>,
    /// Sampling effort at the evaluation rows.
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportEffects(a) => commands::export_effects(a),
    }
}
