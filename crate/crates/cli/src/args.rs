use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netpanel::netbuild::{Bandwidth, CategoryDim};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "netpanel", version, about = "Network panel estimation, impacts and homophily")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "NETPANEL_THREADS")]
    pub threads: Option<usize>,

    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel with a known network.
    Simulate(SimulateArgs),
    /// Estimate the interaction network.
    SelectNetwork(SelectArgs),
    /// Unit IV and mean-group estimates on a network.
    Fit(FitArgs),
    /// Direct, indirect and total effects.
    Impacts(ImpactArgs),
    /// Spillins by firm, industry, state and size quintile.
    Spillins(SpillinArgs),
    /// Category homophily, link-formation logit and rank-sum test.
    Homophily(HomophilyArgs),
    /// Every step from loading to homophily.
    Pipeline(PipelineArgs),
    /// Print the tables in an output directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "NETPANEL_OUT", default_value = "netpanel-out")]
    pub out: PathBuf,
}

/// Inclusive link-count range, written `k` or `lo-hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkRange(pub usize, pub usize);

impl FromStr for LinkRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        match s.split_once('-') {
            Some((a, b)) => Ok(LinkRange(parse(a)?, parse(b)?)),
            None => {
                let k = parse(s)?;
                Ok(LinkRange(k, k))
            }
        }
    }
}

/// Pair of numbers written `a,b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair(pub f64, pub f64);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected a,b, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Pair(parse(a)?, parse(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Uniform,
    Heterogeneous,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON file with a full generator configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Number of covariates.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r_y: Option<usize>,
    #[arg(long)]
    pub r_x: Option<usize>,
    /// Links per unit: `k` or `lo-hi`.
    #[arg(long)]
    pub k_links: Option<LinkRange>,
    #[arg(long, value_enum)]
    pub weights: Option<Weights>,
    #[arg(long)]
    pub psi_range: Option<Pair>,
    /// Draw each link coefficient from `a,b`; ψ_i becomes the row sum.
    #[arg(long)]
    pub omega_range: Option<Pair>,
    /// Comma-separated covariate coefficient means.
    #[arg(long, value_delimiter = ',')]
    pub beta_means: Option<Vec<f64>>,
    #[arg(long)]
    pub beta_sd: Option<f64>,
    #[arg(long)]
    pub loading_sd: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub x_noise_sd: Option<f64>,
    #[arg(long)]
    pub v_ar: Option<f64>,
    #[arg(long)]
    pub proxy_fraction: Option<f64>,
    #[arg(long)]
    pub proxy_corr: Option<f64>,
    #[arg(long)]
    pub n_firms: Option<usize>,
    #[arg(long)]
    pub n_states: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

/// Number of common factors: a count or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSpec {
    Auto,
    Fixed(usize),
}

impl FromStr for FactorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(FactorSpec::Auto)
        } else {
            s.parse().map(FactorSpec::Fixed).map_err(|_| format!("expected a count or \"auto\", got {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Panel CSV.
    #[arg(long)]
    pub panel: PathBuf,
    /// Covariate columns to use, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// First-difference the outcome column.
    #[arg(long)]
    pub difference: bool,
    /// Common factors to remove: a count or `auto`.
    #[arg(long, default_value = "auto")]
    pub factors: FactorSpec,
    /// Largest factor count considered by `auto`.
    #[arg(long, default_value_t = 8)]
    pub r_max: usize,
}

/// Where the network comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSpec {
    Estimated,
    Threshold(f64),
    Knn(usize),
    Gaussian(Option<f64>),
    Category(String),
    File(PathBuf),
}

impl NetworkSpec {
    pub fn category(&self) -> Option<CategoryDim> {
        match self {
            NetworkSpec::Category(c) => c.parse().ok(),
            _ => None,
        }
    }

    pub fn bandwidth(sigma: Option<f64>) -> Bandwidth {
        sigma.map(Bandwidth::Miles).unwrap_or(Bandwidth::Auto)
    }
}

impl FromStr for NetworkSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let need = || arg.ok_or_else(|| format!("network {kind:?} needs a parameter, as in {kind}:VALUE"));
        match kind {
            "estimated" => Ok(NetworkSpec::Estimated),
            "threshold" => need()?.parse().map(NetworkSpec::Threshold).map_err(|e| format!("threshold: {e}")),
            "knn" => need()?.parse().map(NetworkSpec::Knn).map_err(|e| format!("knn: {e}")),
            "gaussian" => match arg {
                None | Some("auto") => Ok(NetworkSpec::Gaussian(None)),
                Some(v) => v.parse().map(|b| NetworkSpec::Gaussian(Some(b))).map_err(|e| format!("gaussian: {e}")),
            },
            "category" => {
                let dim = need()?;
                dim.parse::<CategoryDim>().map_err(|e| e.to_string())?;
                Ok(NetworkSpec::Category(dim.to_string()))
            }
            "file" => Ok(NetworkSpec::File(PathBuf::from(need()?))),
            other => Err(format!(
                "unknown network {other:?}; use estimated, threshold:q, knn:k, gaussian:auto|σ, category:firm|industry|state or file:path"
            )),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetworkArgs {
    /// estimated, threshold:q, knn:k, gaussian:auto|σ, category:firm|industry|state, file:path
    #[arg(long, default_value = "estimated")]
    pub network: NetworkSpec,
    /// Nominal size of the link tests.
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Scale of the critical-value function.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Exponent of the critical-value function.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Instruments {
    Auto,
    Neighbors,
    SpatialLag,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long, value_enum, default_value_t = Instruments::Auto)]
    pub instruments: Instruments,
    /// Clamp unit estimates to these quantiles before averaging, as `lo,hi`.
    #[arg(long)]
    pub winsorize: Option<Pair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImpactOptions {
    /// Structural parameters for the impact matrices.
    #[arg(long, value_enum, default_value_t = Mode::Homogeneous)]
    pub mode: Mode,
    /// Simulation draws for effect standard errors; 0 skips them.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpillinOptions {
    /// Covariate whose time mean ranks units into size quintiles (default: the first).
    #[arg(long)]
    pub size_var: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Count,
    Weighted,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HomophilyOptions {
    #[arg(long, default_value_t = 10_000)]
    pub permutations: usize,
    #[arg(long, value_enum, default_value_t = Weighting::Count)]
    pub weighting: Weighting,
    /// Covariate for the rank-sum test (default: the first).
    #[arg(long)]
    pub attr: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImpactArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[command(flatten)]
    pub impact: ImpactOptions,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpillinArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[arg(long, value_enum, default_value_t = Mode::Homogeneous)]
    pub mode: Mode,
    #[command(flatten)]
    pub spillin: SpillinOptions,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HomophilyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub homophily: HomophilyOptions,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[command(flatten)]
    pub impact: ImpactOptions,
    #[command(flatten)]
    pub spillin: SpillinOptions,
    #[command(flatten)]
    pub homophily: HomophilyOptions,
    /// True edge list; the manifest then records link recovery.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Directory written by an earlier command.
    #[arg(long, env = "NETPANEL_OUT", default_value = "netpanel-out")]
    pub dir: PathBuf,
}
