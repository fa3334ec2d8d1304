//! Synthetic panels with a known sparse network, interactive fixed effects
//! and heterogeneous coefficients, plus a Monte Carlo harness that runs the
//! selection and estimation pipeline against the truth.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bolmt::{estimate_network, BolmtConfig};
use crate::error::{Error, Result};
use crate::estimation::{fit_units, mgiv, InstrumentSet};
use crate::exec;
use crate::factors::{estimate_factors, select_num_factors, DefactoredPanel, FactorModel};
use crate::impact::spectral_radius;
use crate::netbuild::{write_edges, NetworkMatrix, Provenance};
use crate::panel::{write_panel, FacilityMeta, PanelDataset};
use crate::rng::{child_seed, substream, StreamRng};
use crate::stats;

/// Tolerance of the structural plug-back check.
pub const PLUG_BACK_TOL: f64 = 1e-10;

const INDUSTRIES: [&str; 9] = [
    "chemicals",
    "metals",
    "paper",
    "petroleum",
    "plastics",
    "food",
    "machinery",
    "electronics",
    "utilities",
];

const STATES: [&str; 50] = [
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME",
    "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA",
    "RI", "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `1/k_i` on each of unit i's links.
    #[default]
    Uniform,
    /// Positive random weights normalized per row.
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGPConfig {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    /// Factors in the outcome error; the first `r_y` of the common factors.
    pub r_y: usize,
    /// Factors in the covariates; the first `r_x` of the common factors.
    pub r_x: usize,
    /// Inclusive range for the number of links per unit.
    pub k_links: (usize, usize),
    pub weight_mode: WeightMode,
    pub psi_range: (f64, f64),
    /// When set, each link's coefficient `ω_ij` is drawn from this range and
    /// `ψ_i` is the row sum; `psi_range` and `weight_mode` are then ignored.
    pub omega_range: Option<(f64, f64)>,
    pub beta_means: Vec<f64>,
    pub beta_sd: f64,
    pub loading_sd: f64,
    /// Scale of the outcome shocks.
    pub noise_sd: f64,
    /// Scale of the covariate shocks.
    pub x_noise_sd: f64,
    /// AR(1) persistence of the covariate shocks.
    pub v_ar: f64,
    /// Share of units whose covariate shocks mirror a true link of another unit.
    pub proxy_fraction: f64,
    pub proxy_corr: f64,
    pub n_firms: usize,
    pub n_states: usize,
    pub seed: u64,
}

impl Default for DGPConfig {
    fn default() -> Self {
        Self {
            n: 50,
            t: 200,
            k: 2,
            r_y: 1,
            r_x: 1,
            k_links: (1, 2),
            weight_mode: WeightMode::Uniform,
            psi_range: (0.2, 0.6),
            omega_range: None,
            beta_means: vec![1.0, 1.0],
            beta_sd: 0.2,
            loading_sd: 1.0,
            noise_sd: 1.0,
            x_noise_sd: 1.0,
            v_ar: 0.0,
            proxy_fraction: 0.0,
            proxy_corr: 0.7,
            n_firms: 25,
            n_states: 10,
            seed: 0,
        }
    }
}

impl DGPConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        let (lo, hi) = self.k_links;
        if lo > hi {
            return bad(format!("k_links range {lo}..{hi} is empty"));
        }
        if hi >= self.n.saturating_sub(1) && hi > 0 {
            return bad(format!("k_links must be below n − 1 = {}, got {hi}", self.n as i64 - 1));
        }
        if self.n < self.k + 2 || self.t < self.k + 2 {
            return bad(format!("need n ≥ k+2 and t ≥ k+2, got n={}, t={}, k={}", self.n, self.t, self.k));
        }
        let (a, b) = self.psi_range;
        if !(a > -1.0 && b < 1.0 && a <= b) {
            return bad(format!("psi_range ({a}, {b}) must be an interval inside (−1, 1)"));
        }
        if let Some((a, b)) = self.omega_range {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return bad(format!("omega_range ({a}, {b}) is not an interval"));
            }
            let worst = a.abs().max(b.abs()) * hi as f64;
            if worst >= 1.0 {
                return bad(format!("omega_range ({a}, {b}) with up to {hi} links allows |ψ| = {worst} ≥ 1"));
            }
            if a <= 0.0 && b >= 0.0 {
                return bad(format!("omega_range ({a}, {b}) must exclude zero"));
            }
        }
        if self.beta_means.len() != self.k {
            return bad(format!("{} beta means for k = {}", self.beta_means.len(), self.k));
        }
        for (name, v) in [
            ("beta_sd", self.beta_sd),
            ("loading_sd", self.loading_sd),
            ("noise_sd", self.noise_sd),
            ("x_noise_sd", self.x_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.v_ar > -1.0 && self.v_ar < 1.0) {
            return bad(format!("v_ar must lie in (−1, 1), got {}", self.v_ar));
        }
        if !(0.0..=1.0).contains(&self.proxy_fraction) {
            return bad(format!("proxy_fraction must lie in [0, 1], got {}", self.proxy_fraction));
        }
        if !(-1.0..=1.0).contains(&self.proxy_corr) {
            return bad(format!("proxy_corr must lie in [−1, 1], got {}", self.proxy_corr));
        }
        if self.n_firms == 0 || self.n_firms > self.n {
            return bad(format!("n_firms must lie in 1..={}, got {}", self.n, self.n_firms));
        }
        if self.n_states == 0 || self.n_states > STATES.len() {
            return bad(format!("n_states must lie in 1..={}, got {}", STATES.len(), self.n_states));
        }
        Ok(())
    }

    /// Population mean of `ψ_i`.
    pub fn psi_target(&self) -> f64 {
        match self.omega_range {
            Some((a, b)) => (self.k_links.0 + self.k_links.1) as f64 / 2.0 * (a + b) / 2.0,
            None => (self.psi_range.0 + self.psi_range.1) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: DGPConfig,
    pub panel: PanelDataset,
    pub true_w: NetworkMatrix,
    pub psi: Vec<f64>,
    /// `beta[i][l]`.
    pub beta: Vec<Vec<f64>>,
    /// Outcome-error factors, T×r_y.
    pub g: DMatrix<f64>,
    /// Covariate factors, T×r_x.
    pub f: DMatrix<f64>,
    /// N×r_y.
    pub lambda: DMatrix<f64>,
    /// Per unit, r_x×K.
    pub gamma: Vec<DMatrix<f64>>,
    /// `(proxy, mirrored)` pairs from proxy planting.
    pub proxies: Vec<(usize, usize)>,
    /// Largest absolute structural residual after solving.
    pub max_residual: f64,
}

fn normal_matrix(rng: &mut StreamRng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    // column-major fill order fixed by from_fn
    DMatrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Row-normalized network plus, in link-coefficient mode, each row's `ψ_i`.
fn draw_network(cfg: &DGPConfig) -> Result<(NetworkMatrix, Option<Vec<f64>>)> {
    let mut rng = substream(cfg.seed, "network", 0);
    let n = cfg.n;
    let mut rows = Vec::with_capacity(n);
    let mut sums = Vec::with_capacity(n);
    for i in 0..n {
        let ki = rng.random_range(cfg.k_links.0..=cfg.k_links.1);
        let mut cols: Vec<usize> = sample(&mut rng, n - 1, ki).into_iter().map(|j| if j >= i { j + 1 } else { j }).collect();
        cols.sort_unstable();
        let raw: Vec<f64> = match (cfg.omega_range, cfg.weight_mode) {
            (Some((a, b)), _) => (0..ki).map(|_| if a == b { a } else { rng.random_range(a..b) }).collect(),
            (None, WeightMode::Uniform) => vec![1.0; ki],
            (None, WeightMode::Heterogeneous) => (0..ki).map(|_| rng.random_range(0.5..1.5)).collect(),
        };
        let total: f64 = raw.iter().sum();
        sums.push(total);
        rows.push(cols.into_iter().zip(raw.into_iter().map(|v| v / total)).collect());
    }
    let w = NetworkMatrix::from_rows(n, rows, Provenance::Simulated)?;
    Ok((w, cfg.omega_range.map(|_| sums)))
}

fn draw_meta(cfg: &DGPConfig) -> Vec<FacilityMeta> {
    let mut rng = substream(cfg.seed, "meta", 0);
    let width = cfg.n.to_string().len().max(3);
    (0..cfg.n)
        .map(|i| FacilityMeta {
            unit_id: format!("u{i:0width$}"),
            firm_id: format!("f{:0width$}", rng.random_range(0..cfg.n_firms)),
            industry: INDUSTRIES[rng.random_range(0..INDUSTRIES.len())].to_string(),
            state: STATES[rng.random_range(0..cfg.n_states)].to_string(),
            latitude: rng.random_range(25.0..49.0),
            longitude: rng.random_range(-124.0..-67.0),
        })
        .collect()
}

/// Pick `(proxy, mirrored)` pairs: the proxy is not a link of some unit `h`
/// but copies the shocks of one of `h`'s true links.
fn plant_proxies(cfg: &DGPConfig, w: &NetworkMatrix) -> Vec<(usize, usize)> {
    let n = cfg.n;
    let count = (cfg.proxy_fraction * n as f64).round() as usize;
    if count == 0 {
        return Vec::new();
    }
    let mut rng = substream(cfg.seed, "proxy", 0);
    let linked: Vec<usize> = (0..n).filter(|&h| !w.row(h).is_empty()).collect();
    if linked.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    for p in sample(&mut rng, n, count).into_iter() {
        for _ in 0..100 {
            let h = linked[rng.random_range(0..linked.len())];
            let row = w.row(h);
            let j = row[rng.random_range(0..row.len())].0;
            if h != p && j != p && w.get(h, p) == 0.0 {
                out.push((p, j));
                break;
            }
        }
    }
    out.sort_unstable();
    out
}

/// Draw a dataset from the configured data-generating process.
pub fn generate(config: &DGPConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let cfg = config;
    let (n, t, k) = (cfg.n, cfg.t, cfg.k);

    let (w, link_sums) = draw_network(cfg)?;

    let mut prng = substream(cfg.seed, "params", 0);
    let psi: Vec<f64> = match link_sums {
        // rows without links carry no spatial coefficient
        Some(sums) => sums,
        None => (0..n)
            .map(|_| {
                let (a, b) = cfg.psi_range;
                if a == b {
                    a
                } else {
                    prng.random_range(a..b)
                }
            })
            .collect(),
    };
    let beta: Vec<Vec<f64>> = (0..n)
        .map(|_| cfg.beta_means.iter().map(|m| m + cfg.beta_sd * prng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let mut frng = substream(cfg.seed, "factors", 0);
    let common = normal_matrix(&mut frng, t, cfg.r_y.max(cfg.r_x), 1.0);
    let g = common.columns(0, cfg.r_y).into_owned();
    let f = common.columns(0, cfg.r_x).into_owned();

    let mut lrng = substream(cfg.seed, "loadings", 0);
    let lambda = normal_matrix(&mut lrng, n, cfg.r_y, cfg.loading_sd);
    let gamma: Vec<DMatrix<f64>> = (0..n).map(|_| normal_matrix(&mut lrng, cfg.r_x, k, cfg.loading_sd)).collect();

    let mut nrng = substream(cfg.seed, "noise", 0);
    let eps = normal_matrix(&mut nrng, n, t, cfg.noise_sd);
    // covariate shocks v[l][(i, t)], AR(1) with stationary start
    let phi = cfg.v_ar;
    let innov_sd = cfg.x_noise_sd * (1.0 - phi * phi).sqrt();
    let mut v: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let mut m = DMatrix::zeros(n, t);
            for i in 0..n {
                m[(i, 0)] = cfg.x_noise_sd * nrng.sample::<f64, _>(StandardNormal);
                for s in 1..t {
                    m[(i, s)] = phi * m[(i, s - 1)] + innov_sd * nrng.sample::<f64, _>(StandardNormal);
                }
            }
            m
        })
        .collect();

    let proxies = plant_proxies(cfg, &w);
    if !proxies.is_empty() {
        let rho = cfg.proxy_corr;
        let keep = (1.0 - rho * rho).sqrt();
        let original = v.clone();
        for vl in v.iter_mut().zip(&original) {
            let (cur, orig) = vl;
            for &(p, j) in &proxies {
                for s in 0..t {
                    cur[(p, s)] = rho * orig[(j, s)] + keep * orig[(p, s)];
                }
            }
        }
    }

    // x_l = (F Γ_i)_l + v_l, u = G λ_i + ε
    let x: Vec<DMatrix<f64>> = (0..k)
        .map(|l| {
            DMatrix::from_fn(n, t, |i, s| {
                let common: f64 = (0..cfg.r_x).map(|q| f[(s, q)] * gamma[i][(q, l)]).sum();
                common + v[l][(i, s)]
            })
        })
        .collect();
    let u = DMatrix::from_fn(n, t, |i, s| (0..cfg.r_y).map(|q| g[(s, q)] * lambda[(i, q)]).sum::<f64>() + eps[(i, s)]);

    let psi_w = DMatrix::from_fn(n, n, |i, j| psi[i] * w.get(i, j));
    let rho = spectral_radius(&psi_w);
    if rho >= 1.0 {
        return Err(Error::Config(format!("unstable configuration: spectral radius {rho}")));
    }
    let mut rhs = u.clone();
    for (l, xl) in x.iter().enumerate() {
        for i in 0..n {
            let b = beta[i][l];
            for s in 0..t {
                rhs[(i, s)] += b * xl[(i, s)];
            }
        }
    }
    let s_mat = DMatrix::identity(n, n) - &psi_w;
    let y = s_mat.lu().solve(&rhs).ok_or(Error::Singularity)?;
    let residual = &y - &psi_w * &y - &rhs;
    let max_residual = residual.amax();
    if max_residual > PLUG_BACK_TOL {
        return Err(Error::Domain(format!("structural plug-back residual {max_residual:e}")));
    }

    let panel = PanelDataset::new(
        y,
        x,
        draw_meta(cfg),
        (1..=k).map(|l| format!("x{l}")).collect(),
        (1..=t).map(|s| s.to_string()).collect(),
    )?;
    Ok(SyntheticDataset {
        config: cfg.clone(),
        panel,
        true_w: w,
        psi,
        beta,
        g,
        f,
        lambda,
        gamma,
        proxies,
        max_residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthUnit {
    pub unit_id: String,
    pub psi: f64,
    pub beta: Vec<f64>,
    pub links: Vec<usize>,
}

/// Per-unit parameters and the generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthParams {
    pub config: DGPConfig,
    pub units: Vec<TruthUnit>,
    pub proxies: Vec<(usize, usize)>,
    pub max_residual: f64,
}

impl SyntheticDataset {
    pub fn truth(&self) -> TruthParams {
        TruthParams {
            config: self.config.clone(),
            units: (0..self.panel.n())
                .map(|i| TruthUnit {
                    unit_id: self.panel.meta[i].unit_id.clone(),
                    psi: self.psi[i],
                    beta: self.beta[i].clone(),
                    links: self.true_w.row(i).iter().map(|&(j, _)| j).collect(),
                })
                .collect(),
            proxies: self.proxies.clone(),
            max_residual: self.max_residual,
        }
    }

    /// Write `panel.csv`, `truth_edges.csv` and `truth_params.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_panel(&self.panel, &dir.join("panel.csv"))?;
        let edges = std::fs::File::create(dir.join("truth_edges.csv"))?;
        write_edges(&self.true_w, std::io::BufWriter::new(edges))?;
        let mut json = serde_json::to_string_pretty(&self.truth())?;
        json.push('\n');
        std::fs::write(dir.join("truth_params.json"), json)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorChoice {
    Fixed(usize),
    Auto { r_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub factors: FactorChoice,
    pub instruments: InstrumentSet,
    /// Also run mean-group estimation on the true and the selected network.
    pub estimate: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            factors: FactorChoice::Fixed(1),
            instruments: InstrumentSet::Auto,
            estimate: true,
        }
    }
}

/// Factor model for a panel under the given choice.
pub fn fit_factor_model(panel: &PanelDataset, choice: FactorChoice) -> Result<FactorModel> {
    let r = match choice {
        FactorChoice::Fixed(r) => r,
        FactorChoice::Auto { r_max } => select_num_factors(panel, r_max)?.r,
    };
    if r == 0 {
        Ok(FactorModel::none(panel.t()))
    } else {
        estimate_factors(panel, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub true_links: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Every unit's selected set equals its true support.
    pub exact: bool,
    pub units_with_links: usize,
    /// Mean-group `(ψ, β…)` on the true network.
    pub theta_true_w: Option<Vec<f64>>,
    /// Mean-group `(ψ, β…)` on the selected network.
    pub theta_est_w: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRecovery {
    pub name: String,
    /// Population mean of the parameter in the DGP.
    pub target: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Standard error of the mean across replications.
    pub mcse: f64,
    pub replications: usize,
}

impl ParamRecovery {
    /// |bias| measured in Monte Carlo standard errors.
    pub fn bias_in_mcse(&self) -> f64 {
        if self.mcse > 0.0 {
            self.bias.abs() / self.mcse
        } else if self.bias == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub replications: usize,
    pub failures: usize,
    /// None when the DGP has no links.
    pub tpr: Option<f64>,
    pub fp_per_unit: f64,
    pub exact_share: f64,
    /// Share of unit-replications with at least one selected link.
    pub any_link_share: f64,
    pub true_w: Vec<ParamRecovery>,
    pub estimated_w: Vec<ParamRecovery>,
    pub outcomes: Vec<ReplicationOutcome>,
}

fn replicate(cfg: &DGPConfig, bolmt: &BolmtConfig, options: &RecoveryOptions) -> Result<ReplicationOutcome> {
    let ds = generate(cfg)?;
    let fm = fit_factor_model(&ds.panel, options.factors)?;
    let data = DefactoredPanel::new(&ds.panel, &fm)?;
    let est = estimate_network(&data, bolmt)?;
    let n = cfg.n;
    let (mut tp, mut fp, mut total, mut any) = (0, 0, 0, 0);
    let mut exact = true;
    for i in 0..n {
        let truth: Vec<usize> = ds.true_w.row(i).iter().map(|e| e.0).collect();
        let mut sel = est.traces[i].selected.clone();
        sel.sort_unstable();
        total += truth.len();
        tp += sel.iter().filter(|j| truth.contains(j)).count();
        fp += sel.iter().filter(|j| !truth.contains(j)).count();
        any += usize::from(!sel.is_empty());
        exact &= sel == truth;
    }
    let (theta_true_w, theta_est_w) = if options.estimate {
        let mg = |w: &NetworkMatrix| -> Result<Vec<f64>> { Ok(mgiv(&fit_units(w, &data, options.instruments)?)?.theta_mg) };
        (Some(mg(&ds.true_w)?), mg(&est.w_hat).ok())
    } else {
        (None, None)
    };
    Ok(ReplicationOutcome {
        replication: 0,
        seed: cfg.seed,
        true_links: total,
        true_positives: tp,
        false_positives: fp,
        exact,
        units_with_links: any,
        theta_true_w,
        theta_est_w,
        error: None,
    })
}

fn param_recovery(names: &[String], targets: &[f64], draws: &[&Vec<f64>]) -> Vec<ParamRecovery> {
    if draws.is_empty() {
        return Vec::new();
    }
    names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let vals: Vec<f64> = draws.iter().map(|d| d[p]).collect();
            let mean = stats::mean(&vals);
            let target = targets[p];
            let rmse = (vals.iter().map(|v| (v - target).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            let mcse = if vals.len() > 1 {
                stats::sample_sd(&vals) / (vals.len() as f64).sqrt()
            } else {
                f64::NAN
            };
            ParamRecovery {
                name: name.clone(),
                target,
                mean,
                bias: mean - target,
                rmse,
                mcse,
                replications: vals.len(),
            }
        })
        .collect()
}

/// Monte Carlo of selection and estimation against the truth. Replication
/// `r` uses the seed `child_seed(config.seed, "replication", r)`; failures
/// are recorded per replication.
pub fn recovery_experiment(
    config: &DGPConfig,
    replications: usize,
    bolmt: &BolmtConfig,
    options: &RecoveryOptions,
) -> Result<RecoveryReport> {
    if replications < 10 {
        return Err(Error::Config(format!("need at least 10 replications, got {replications}")));
    }
    config.validate()?;
    bolmt.validate()?;
    let outcomes: Vec<ReplicationOutcome> = exec::map_range(replications, |r| {
        let cfg = DGPConfig {
            seed: child_seed(config.seed, "replication", r as u64),
            ..config.clone()
        };
        match replicate(&cfg, bolmt, options) {
            Ok(o) => ReplicationOutcome { replication: r, ..o },
            Err(e) => ReplicationOutcome {
                replication: r,
                seed: cfg.seed,
                true_links: 0,
                true_positives: 0,
                false_positives: 0,
                exact: false,
                units_with_links: 0,
                theta_true_w: None,
                theta_est_w: None,
                error: Some(e.to_string()),
            },
        }
    });
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let runs = ok.len().max(1) as f64;
    let total: usize = ok.iter().map(|o| o.true_links).sum();
    let tpr = (total > 0).then(|| ok.iter().map(|o| o.true_positives).sum::<usize>() as f64 / total as f64);
    let n = config.n as f64;

    let mut names = vec!["psi".to_string()];
    names.extend((1..=config.k).map(|l| format!("beta_x{l}")));
    let mut targets = vec![config.psi_target()];
    targets.extend(&config.beta_means);
    let true_draws: Vec<&Vec<f64>> = ok.iter().filter_map(|o| o.theta_true_w.as_ref()).collect();
    let est_draws: Vec<&Vec<f64>> = ok.iter().filter_map(|o| o.theta_est_w.as_ref()).collect();

    Ok(RecoveryReport {
        replications,
        failures: outcomes.len() - ok.len(),
        tpr,
        fp_per_unit: ok.iter().map(|o| o.false_positives).sum::<usize>() as f64 / (n * runs),
        exact_share: ok.iter().filter(|o| o.exact).count() as f64 / runs,
        any_link_share: ok.iter().map(|o| o.units_with_links).sum::<usize>() as f64 / (n * runs),
        true_w: param_recovery(&names, &targets, &true_draws),
        estimated_w: param_recovery(&names, &targets, &est_draws),
        outcomes,
    })
}
