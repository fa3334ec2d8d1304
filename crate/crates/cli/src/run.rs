use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use netpanel::bolmt::{estimate_network, AdjacencyEstimate, BolmtConfig};
use netpanel::estimation::{fit_units, mgiv_with, InstrumentSet, MGResult, MgOptions, UnitEstimates};
use netpanel::factors::{estimate_factors, select_num_factors, DefactoredPanel, FactorCount, FactorModel};
use netpanel::homophily::{
    category_homophily, link_formation_logit, rank_sum_test, HomophilyReport, LinkFormationFit, LinkWeighting,
    RankSumResult,
};
use netpanel::impact::{
    effects, effects_se, impact_from_estimates, quintile_spillins, spillins, EffectsTable, ImpactMatrices, ImpactMode,
    QuintileSpillin, Spillin,
};
use netpanel::netbuild::{
    category_network, gaussian_network, knn_network, network_stats, read_edges, row_normalize,
    threshold_distance_network, write_dot, write_edges, CategoryDim, NetworkMatrix, Provenance,
};
use netpanel::panel::{load_panel, IngestOptions, PanelDataset};
use netpanel::report;
use netpanel::simulator::{generate, DGPConfig, WeightMode};
use netpanel::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_validation() => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Files are written to a staging directory and moved into the output
/// directory only when the whole command succeeds.
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    command: &'static str,
    files: BTreeSet<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: Value,
    outputs: Vec<String>,
    summary: Value,
}

impl Staging {
    fn begin(out: &Path, command: &'static str) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let dir = out.join(format!(".staging-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            command,
            files: BTreeSet::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.to_string());
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> netpanel::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let s = report::json_string(value)?;
        self.write(name, s.as_bytes())
    }

    fn commit(mut self, seed: u64, config: Value, summary: Value) -> CliResult<()> {
        let mut outputs: Vec<String> = self.files.iter().cloned().collect();
        outputs.push("manifest.json".into());
        outputs.sort();
        let manifest = Manifest {
            tool: "netpanel",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed,
            config,
            outputs,
            summary,
        };
        self.write_json("manifest.json", &manifest)?;
        for name in &self.files {
            fs::rename(self.dir.join(name), self.out.join(name))?;
        }
        fs::remove_dir_all(&self.dir)?;
        Ok(())
    }

    fn quarantine(self, err: &CliError) {
        let dest = self.out.join("quarantine").join(self.command);
        let _ = fs::remove_dir_all(&dest);
        if fs::create_dir_all(dest.parent().unwrap()).is_ok() && fs::rename(&self.dir, &dest).is_ok() {
            let _ = fs::write(dest.join("error.txt"), format!("{err}\n"));
        }
    }
}

/// Run `body` against a staging area; commit on success, quarantine on failure.
fn staged<A: Serialize>(
    command: &'static str,
    out: &Path,
    seed: u64,
    args: &A,
    body: impl FnOnce(&mut Staging) -> CliResult<Value>,
) -> CliResult<()> {
    let config = serde_json::to_value(args)?;
    let mut stage = Staging::begin(out, command)?;
    match body(&mut stage) {
        Ok(summary) => stage.commit(seed, config, summary),
        Err(e) => {
            stage.quarantine(&e);
            Err(e)
        }
    }
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(path) => serde_json::from_str::<DGPConfig>(&fs::read_to_string(path)?)?,
        None => DGPConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field.clone() { cfg.$field = v; })*};
    }
    set!(n, t, k, r_y, r_x, beta_sd, loading_sd, noise_sd, x_noise_sd, v_ar, proxy_fraction, proxy_corr, n_states);
    if let Some(LinkRange(lo, hi)) = a.k_links {
        cfg.k_links = (lo, hi);
    }
    if let Some(wm) = a.weights {
        cfg.weight_mode = match wm {
            Weights::Uniform => WeightMode::Uniform,
            Weights::Heterogeneous => WeightMode::Heterogeneous,
        };
    }
    if let Some(Pair(x, y)) = a.psi_range {
        cfg.psi_range = (x, y);
    }
    if let Some(Pair(x, y)) = a.omega_range {
        cfg.omega_range = Some((x, y));
    }
    match &a.beta_means {
        Some(b) => cfg.beta_means = b.clone(),
        None if a.config.is_none() => cfg.beta_means = vec![1.0; cfg.k],
        None => {}
    }
    match a.n_firms {
        Some(f) => cfg.n_firms = f,
        None if a.config.is_none() => cfg.n_firms = (cfg.n / 2).max(1),
        None => {}
    }
    cfg.seed = seed;
    cfg.validate()?;
    staged("simulate", &a.out.out, seed, &cfg, |stage| {
        let ds = generate(&cfg)?;
        stage.write_with("panel.csv", |b| netpanel::panel::write_panel_to(&ds.panel, b))?;
        stage.write_with("truth_edges.csv", |b| write_edges(&ds.true_w, b))?;
        stage.write_json("truth_params.json", &ds.truth())?;
        Ok(json!({ "links": ds.true_w.nnz(), "max_residual": ds.max_residual }))
    })
}

pub struct Prepared {
    pub panel: PanelDataset,
    pub factors: FactorModel,
    pub count: Option<FactorCount>,
    pub data: DefactoredPanel,
}

fn prepare(d: &DataArgs) -> CliResult<Prepared> {
    let options = IngestOptions {
        difference: d.difference,
        covariates: d.covariates.clone(),
    };
    let panel = load_panel(&d.panel, &options)?;
    let (r, count) = match d.factors {
        FactorSpec::Fixed(r) => (r, None),
        FactorSpec::Auto => {
            let c = select_num_factors(&panel, d.r_max)?;
            (c.r, Some(c))
        }
    };
    let factors = if r == 0 {
        FactorModel::none(panel.t())
    } else {
        estimate_factors(&panel, r)?
    };
    let data = DefactoredPanel::new(&panel, &factors)?;
    Ok(Prepared {
        panel,
        factors,
        count,
        data,
    })
}

fn bolmt_config(p: f64, c: f64, delta: f64) -> CliResult<BolmtConfig> {
    let cfg = BolmtConfig { p, c, delta };
    cfg.validate()?;
    Ok(cfg)
}

fn build_network(net: &NetworkArgs, p: &Prepared) -> CliResult<(NetworkMatrix, Option<AdjacencyEstimate>)> {
    let meta = &p.panel.meta;
    let w = match &net.network {
        NetworkSpec::Estimated => {
            let est = estimate_network(&p.data, &bolmt_config(net.p, net.c, net.delta)?)?;
            return Ok((est.w_hat.clone(), Some(est)));
        }
        NetworkSpec::Threshold(q) => threshold_distance_network(meta, *q)?,
        NetworkSpec::Knn(k) => knn_network(meta, *k)?,
        NetworkSpec::Gaussian(s) => gaussian_network(meta, NetworkSpec::bandwidth(*s))?,
        NetworkSpec::Category(c) => {
            let dim = net.network.category().ok_or_else(|| CliError::Usage(format!("unknown category {c:?}")))?;
            category_network(meta, dim)?
        }
        NetworkSpec::File(path) => {
            let w = read_edges(fs::File::open(path)?, p.panel.n(), Provenance::Imported)?;
            if w.is_normalized() {
                w
            } else {
                row_normalize(&w)?
            }
        }
    };
    Ok((w, None))
}

fn write_factors(stage: &mut Staging, p: &Prepared) -> CliResult<()> {
    stage.write_json(
        "factors.json",
        &json!({ "r": p.factors.r, "explained": p.factors.explained, "selection": p.count }),
    )
}

fn write_network(stage: &mut Staging, p: &Prepared, w: &NetworkMatrix, est: Option<&AdjacencyEstimate>) -> CliResult<()> {
    stage.write_with("network.csv", |b| write_edges(w, b))?;
    let ids: Vec<String> = p.panel.meta.iter().map(|m| m.unit_id.clone()).collect();
    stage.write_with("network.dot", |b| write_dot(w, Some(&ids), b))?;
    stage.write_json("network_stats.json", &network_stats(w))?;
    if let Some(est) = est {
        stage.write_json("selection.json", &est.traces)?;
    }
    Ok(())
}

pub fn select_network(a: &SelectArgs, seed: u64) -> CliResult<()> {
    let cfg = bolmt_config(a.p, a.c, a.delta)?;
    staged("select-network", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        let est = estimate_network(&p.data, &cfg)?;
        write_factors(stage, &p)?;
        write_network(stage, &p, &est.w_hat, Some(&est))?;
        Ok(json!({ "factors": p.factors.r, "links": est.w_hat.nnz() }))
    })
}

fn instrument_set(i: Instruments) -> InstrumentSet {
    match i {
        Instruments::Auto => InstrumentSet::Auto,
        Instruments::Neighbors => InstrumentSet::Neighbors,
        Instruments::SpatialLag => InstrumentSet::SpatialLag,
    }
}

fn estimate(p: &Prepared, w: &NetworkMatrix, e: &EstimateArgs) -> CliResult<(UnitEstimates, MGResult)> {
    let units = fit_units(w, &p.data, instrument_set(e.instruments))?;
    let options = MgOptions {
        winsorize: e.winsorize.map(|Pair(lo, hi)| (lo, hi)),
    };
    let mg = mgiv_with(&units, &options)?;
    Ok((units, mg))
}

fn write_fit(stage: &mut Staging, p: &Prepared, units: &UnitEstimates, mg: &MGResult) -> CliResult<()> {
    let names = &p.panel.var_names;
    stage.write_with("coefficients.csv", |b| report::write_mg_table(mg, names, b))?;
    stage.write_with("unit_estimates.csv", |b| report::write_unit_estimates(units, &p.panel.meta, names, b))?;
    stage.write_json("mg.json", mg)?;
    Ok(())
}

fn mg_summary(p: &Prepared, mg: &MGResult) -> Value {
    let names = report::param_names(&p.panel.var_names);
    names
        .iter()
        .zip(mg.theta_mg.iter().zip(&mg.se))
        .map(|(n, (b, s))| (n.clone(), json!({ "estimate": b, "se": s })))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

pub fn fit(a: &FitArgs, seed: u64) -> CliResult<()> {
    staged("fit", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        let (w, est) = build_network(&a.network, &p)?;
        let (units, mg) = estimate(&p, &w, &a.estimate)?;
        write_factors(stage, &p)?;
        write_network(stage, &p, &w, est.as_ref())?;
        write_fit(stage, &p, &units, &mg)?;
        Ok(json!({ "factors": p.factors.r, "links": w.nnz(), "mean_group": mg_summary(&p, &mg) }))
    })
}

fn impact_mode(m: Mode) -> ImpactMode {
    match m {
        Mode::Homogeneous => ImpactMode::Homogeneous,
        Mode::Heterogeneous => ImpactMode::Heterogeneous,
    }
}

fn compute_impacts(
    w: &NetworkMatrix,
    units: &UnitEstimates,
    mg: &MGResult,
    opts: &ImpactOptions,
    seed: u64,
) -> CliResult<(ImpactMatrices, EffectsTable)> {
    let im = impact_from_estimates(impact_mode(opts.mode), mg, units, w)?;
    let point = effects(&im);
    let table = if opts.draws > 0 && opts.mode == Mode::Homogeneous {
        let sim = effects_se(mg, w, opts.draws, seed)?;
        EffectsTable { effects: point, ..sim }
    } else {
        EffectsTable {
            effects: point,
            se: None,
            draws_used: 0,
            draws_discarded: 0,
        }
    };
    Ok((im, table))
}

fn write_effects(stage: &mut Staging, p: &Prepared, table: &EffectsTable) -> CliResult<()> {
    stage.write_with("effects.csv", |b| report::write_effects(table, &p.panel.var_names, b))?;
    stage.write_json("effects.json", table)
}

pub fn impacts(a: &ImpactArgs, seed: u64) -> CliResult<()> {
    staged("impacts", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        let (w, est) = build_network(&a.network, &p)?;
        let (units, mg) = estimate(&p, &w, &a.estimate)?;
        let (_, table) = compute_impacts(&w, &units, &mg, &a.impact, seed)?;
        write_network(stage, &p, &w, est.as_ref())?;
        write_fit(stage, &p, &units, &mg)?;
        write_effects(stage, &p, &table)?;
        Ok(json!({ "factors": p.factors.r, "links": w.nnz(), "effects": table.effects }))
    })
}

fn covariate(p: &Prepared, name: &Option<String>) -> CliResult<(String, Vec<f64>)> {
    let l = match name {
        None => 0,
        Some(n) => p
            .panel
            .var_index(n)
            .ok_or_else(|| CliError::Core(Error::Config(format!("covariate {n:?} not in panel"))))?,
    };
    Ok((p.panel.var_names[l].clone(), p.panel.time_means(l)))
}

type SpillinTables = (Vec<(String, Vec<Spillin>)>, Vec<Vec<QuintileSpillin>>);

fn compute_spillins(p: &Prepared, im: &ImpactMatrices, opts: &SpillinOptions) -> CliResult<SpillinTables> {
    let mut blocks = Vec::new();
    for dim in [CategoryDim::Firm, CategoryDim::Industry, CategoryDim::State] {
        let labels = dim.labels(&p.panel.meta)?;
        blocks.push((dim.name().to_string(), spillins(im, &labels)?));
    }
    let (_, size) = covariate(p, &opts.size_var)?;
    let quint = quintile_spillins(im, &size)?;
    Ok((blocks, quint))
}

fn write_spillins(stage: &mut Staging, p: &Prepared, tables: &SpillinTables) -> CliResult<()> {
    let names = &p.panel.var_names;
    stage.write_with("spillins.csv", |b| report::write_spillins(&tables.0, names, b))?;
    stage.write_with("quintile_spillins.csv", |b| report::write_quintile_spillins(&tables.1, names, b))
}

pub fn spillin_cmd(a: &SpillinArgs, seed: u64) -> CliResult<()> {
    staged("spillins", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        let (w, _) = build_network(&a.network, &p)?;
        let (units, mg) = estimate(&p, &w, &a.estimate)?;
        let im = impact_from_estimates(impact_mode(a.mode), &mg, &units, &w)?;
        let tables = compute_spillins(&p, &im, &a.spillin)?;
        write_spillins(stage, &p, &tables)?;
        Ok(json!({ "factors": p.factors.r, "links": w.nnz() }))
    })
}

#[derive(Serialize)]
struct HomophilyOut {
    categories: Vec<HomophilyReport>,
    link_formation: LinkFormationFit,
    rank_sum: RankSumOut,
}

#[derive(Serialize)]
struct RankSumOut {
    attribute: String,
    #[serde(flatten)]
    result: RankSumResult,
}

fn compute_homophily(p: &Prepared, w: &NetworkMatrix, opts: &HomophilyOptions, seed: u64) -> CliResult<HomophilyOut> {
    let weighting = match opts.weighting {
        Weighting::Count => LinkWeighting::Count,
        Weighting::Weighted => LinkWeighting::Weighted,
    };
    let mut categories = Vec::new();
    for dim in [CategoryDim::Firm, CategoryDim::Industry, CategoryDim::State] {
        let labels = dim.labels(&p.panel.meta)?;
        categories.push(category_homophily(w, &labels, dim.name(), opts.permutations, seed, weighting)?);
    }
    let link_formation = link_formation_logit(w, &p.panel)?;
    let (attribute, attr) = covariate(p, &opts.attr)?;
    let result = rank_sum_test(w, &attr)?;
    Ok(HomophilyOut {
        categories,
        link_formation,
        rank_sum: RankSumOut { attribute, result },
    })
}

fn write_homophily(stage: &mut Staging, h: &HomophilyOut) -> CliResult<()> {
    stage.write_with("homophily.csv", |b| report::write_homophily(&h.categories, b))?;
    stage.write_with("link_formation.csv", |b| report::write_link_formation(&h.link_formation, b))?;
    stage.write_json("homophily.json", h)
}

pub fn homophily(a: &HomophilyArgs, seed: u64) -> CliResult<()> {
    staged("homophily", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        let (w, _) = build_network(&a.network, &p)?;
        let h = compute_homophily(&p, &w, &a.homophily, seed)?;
        write_homophily(stage, &h)?;
        Ok(json!({ "links": w.nnz() }))
    })
}

#[derive(Serialize)]
struct Recovery {
    true_links: usize,
    selected_links: usize,
    true_positives: usize,
    false_positives: usize,
    recovery_rate: Option<f64>,
}

fn recovery(truth: &Path, w: &NetworkMatrix) -> CliResult<Recovery> {
    let t = read_edges(fs::File::open(truth)?, w.n(), Provenance::Imported)?;
    let tp = w.edges().filter(|&(i, j, _)| t.get(i, j) != 0.0).count();
    Ok(Recovery {
        true_links: t.nnz(),
        selected_links: w.nnz(),
        true_positives: tp,
        false_positives: w.nnz() - tp,
        recovery_rate: (t.nnz() > 0).then(|| tp as f64 / t.nnz() as f64),
    })
}

pub fn pipeline(a: &PipelineArgs, seed: u64) -> CliResult<()> {
    staged("pipeline", &a.out.out, seed, a, |stage| {
        let p = prepare(&a.data)?;
        write_factors(stage, &p)?;
        let (w, est) = build_network(&a.network, &p)?;
        write_network(stage, &p, &w, est.as_ref())?;
        let (units, mg) = estimate(&p, &w, &a.estimate)?;
        write_fit(stage, &p, &units, &mg)?;
        let (im, table) = compute_impacts(&w, &units, &mg, &a.impact, seed)?;
        write_effects(stage, &p, &table)?;
        let tables = compute_spillins(&p, &im, &a.spillin)?;
        write_spillins(stage, &p, &tables)?;
        let h = compute_homophily(&p, &w, &a.homophily, seed)?;
        write_homophily(stage, &h)?;
        let rec = match &a.truth {
            Some(path) => {
                let r = recovery(path, &w)?;
                stage.write_json("recovery.json", &r)?;
                Some(r)
            }
            None => None,
        };
        Ok(json!({
            "factors": p.factors.r,
            "links": w.nnz(),
            "mean_group": mg_summary(&p, &mg),
            "recovery": rec,
        }))
    })
}

const REPORT_TABLES: [(&str, &str); 7] = [
    ("coefficients.csv", "Mean-group estimates"),
    ("effects.csv", "Direct, indirect and total effects"),
    ("spillins.csv", "Spillins"),
    ("quintile_spillins.csv", "Spillins by size quintile"),
    ("homophily.csv", "Category homophily"),
    ("link_formation.csv", "Link formation"),
    ("recovery.json", "Link recovery"),
];

fn short(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains(['.', 'e']) && v.is_finite() => format!("{v:.4}"),
        _ => cell.to_string(),
    }
}

fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let split = |l: &str| l.split(',').map(|c| c.trim_matches('"').to_string()).collect::<Vec<_>>();
    let header = lines.next().map(split).unwrap_or_default();
    let rows = lines.map(|l| split(l).iter().map(|c| short(c)).collect()).collect();
    Ok((header, rows))
}

pub fn report_cmd(a: &ReportArgs) -> CliResult<String> {
    if !a.dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", a.dir.display())));
    }
    let mut out = String::new();
    for (file, title) in REPORT_TABLES {
        let path = a.dir.join(file);
        if !path.exists() {
            continue;
        }
        out.push_str(title);
        out.push('\n');
        if file.ends_with(".json") {
            let v: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let obj = v.as_object().cloned().unwrap_or_default();
            let rows: Vec<Vec<String>> = obj.iter().map(|(k, v)| vec![k.clone(), short(&v.to_string())]).collect();
            out.push_str(&report::text_table(&["item".into(), "value".into()], &rows));
        } else {
            let (header, rows) = read_table(&path)?;
            out.push_str(&report::text_table(&header, &rows));
        }
        out.push('\n');
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no tables found in {}", a.dir.display())));
    }
    Ok(out)
}
