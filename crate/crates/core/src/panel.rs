//! Balanced panel of outcomes, covariates and facility metadata.
//!
//! CSV layout: `unit_id,period,firm_id,industry,state,lat,lon,y,x1,...,xK`,
//! one row per (unit, period). Covariates are taken as given; any lagging
//! must be done before ingestion. When differencing is requested the first
//! period is dropped from both outcome and covariates.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const FIXED_COLUMNS: [&str; 8] = [
    "unit_id", "period", "firm_id", "industry", "state", "lat", "lon", "y",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityMeta {
    pub unit_id: String,
    pub firm_id: String,
    pub industry: String,
    pub state: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl FacilityMeta {
    pub fn validate(&self) -> Result<()> {
        if self.latitude.is_finite() && !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Domain(format!(
                "unit {}: latitude {} outside [-90, 90]",
                self.unit_id, self.latitude
            )));
        }
        if self.longitude.is_finite() && !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Domain(format!(
                "unit {}: longitude {} outside [-180, 180]",
                self.unit_id, self.longitude
            )));
        }
        Ok(())
    }
}

/// Balanced N×T panel with K covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    /// Outcomes, N×T.
    pub y: DMatrix<f64>,
    /// One N×T matrix per covariate.
    pub x: Vec<DMatrix<f64>>,
    pub meta: Vec<FacilityMeta>,
    pub var_names: Vec<String>,
    pub periods: Vec<String>,
}

impl PanelDataset {
    pub fn new(
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
        meta: Vec<FacilityMeta>,
        var_names: Vec<String>,
        periods: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.shape();
        let k = x.len();
        if var_names.len() != k {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} covariates",
                var_names.len(),
                k
            )));
        }
        if meta.len() != n || periods.len() != t {
            return Err(Error::Dimension(format!(
                "metadata for {} units and {} period labels, outcome is {n}x{t}",
                meta.len(),
                periods.len()
            )));
        }
        if x.iter().any(|m| m.shape() != (n, t)) {
            return Err(Error::Dimension("covariate arrays must be N×T".into()));
        }
        if n < k + 2 || t < k + 2 {
            return Err(Error::Dimension(format!(
                "need N ≥ K+2 and T ≥ K+2, got N={n}, T={t}, K={k}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &meta {
            m.validate()?;
            if !seen.insert(m.unit_id.as_str()) {
                return Err(Error::Metadata(format!("duplicate unit_id {}", m.unit_id)));
            }
        }
        let all_finite = y.iter().chain(x.iter().flat_map(|m| m.iter())).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain("panel contains non-finite values".into()));
        }
        Ok(Self {
            y,
            x,
            meta,
            var_names,
            periods,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    /// Outcome series of unit `i` (length T).
    pub fn unit_y(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }

    /// Covariates of unit `i` as a T×K matrix.
    pub fn unit_x(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.t(), self.k(), |t, l| self.x[l][(i, t)])
    }

    /// Time average of covariate `l` for every unit.
    pub fn time_means(&self, l: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[l].row(i).mean()).collect()
    }

    /// Index of a covariate by name.
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }
}

/// Options controlling CSV ingestion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Outcome column holds levels; first-difference it.
    #[serde(default)]
    pub difference: bool,
    /// Covariate columns to keep, in order. `None` keeps every column after `y`.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

impl IngestOptions {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn load_panel(path: &Path, options: &IngestOptions) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    read_panel(file, options)
}

struct UnitRows {
    meta: FacilityMeta,
    cells: HashMap<String, (Option<f64>, Vec<Option<f64>>)>,
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        row,
        msg: format!("column {col}: {s:?} is not numeric"),
    })
}

fn parse_coord(s: &str, row: usize, col: &str) -> Result<f64> {
    Ok(parse_cell(s, row, col)?.unwrap_or(f64::NAN))
}

pub fn read_panel<R: Read>(reader: R, options: &IngestOptions) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < FIXED_COLUMNS.len() + 1
        || header.iter().zip(FIXED_COLUMNS).any(|(h, f)| h != f)
    {
        return Err(Error::Parse {
            row: 1,
            msg: format!(
                "header must start with {} followed by at least one covariate",
                FIXED_COLUMNS.join(",")
            ),
        });
    }
    let all_covs = &header[FIXED_COLUMNS.len()..];
    let cov_cols: Vec<usize> = match &options.covariates {
        None => (0..all_covs.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                all_covs
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::Config(format!("covariate {n:?} not in file header")))
            })
            .collect::<Result<_>>()?,
    };
    let var_names: Vec<String> = cov_cols.iter().map(|&c| all_covs[c].clone()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, UnitRows> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_set = std::collections::HashSet::new();

    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let unit = rec[0].to_string();
        let period = rec[1].to_string();
        let meta = FacilityMeta {
            unit_id: unit.clone(),
            firm_id: rec[2].to_string(),
            industry: rec[3].to_string(),
            state: rec[4].to_string(),
            latitude: parse_coord(&rec[5], row, "lat")?,
            longitude: parse_coord(&rec[6], row, "lon")?,
        };
        let y = parse_cell(&rec[7], row, "y")?;
        let xs = cov_cols
            .iter()
            .map(|&c| parse_cell(&rec[FIXED_COLUMNS.len() + c], row, &all_covs[c]))
            .collect::<Result<Vec<_>>>()?;

        if period_set.insert(period.clone()) {
            periods.push(period.clone());
        }
        let entry = units.entry(unit.clone()).or_insert_with(|| {
            order.push(unit.clone());
            UnitRows {
                meta: meta.clone(),
                cells: HashMap::new(),
            }
        });
        let same_meta = entry.meta.firm_id == meta.firm_id
            && entry.meta.industry == meta.industry
            && entry.meta.state == meta.state
            && entry.meta.latitude.to_bits() == meta.latitude.to_bits()
            && entry.meta.longitude.to_bits() == meta.longitude.to_bits();
        if !same_meta {
            return Err(Error::Metadata(format!(
                "row {row}: metadata for unit {unit} differs from its earlier rows"
            )));
        }
        if entry.cells.insert(period.clone(), (y, xs)).is_some() {
            return Err(Error::Duplicate { unit, period });
        }
    }
    if order.is_empty() {
        return Err(Error::Parse {
            row: 2,
            msg: "no data rows".into(),
        });
    }

    sort_periods(&mut periods);
    let n = order.len();
    let t_in = periods.len();
    let k = var_names.len();
    let mut y = DMatrix::zeros(n, t_in);
    let mut x = vec![DMatrix::zeros(n, t_in); k];
    let mut meta = Vec::with_capacity(n);
    for (i, unit) in order.iter().enumerate() {
        let rows = &units[unit];
        for (t, p) in periods.iter().enumerate() {
            let missing = || Error::Balance {
                unit: unit.clone(),
                period: p.clone(),
            };
            let (yv, xv) = rows.cells.get(p).ok_or_else(missing)?;
            y[(i, t)] = yv.ok_or_else(missing)?;
            for (l, v) in xv.iter().enumerate() {
                x[l][(i, t)] = v.ok_or_else(missing)?;
            }
        }
        meta.push(rows.meta.clone());
    }

    if options.difference {
        if t_in < 2 {
            return Err(Error::Dimension("differencing needs at least 2 periods".into()));
        }
        let dy = first_difference(&y);
        let dx = x
            .iter()
            .map(|m| m.columns(1, t_in - 1).into_owned())
            .collect();
        return PanelDataset::new(dy, dx, meta, var_names, periods[1..].to_vec());
    }
    PanelDataset::new(y, x, meta, var_names, periods)
}

/// Row-wise first difference of an N×T array of levels; drops the first period.
pub fn first_difference(levels: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = levels.shape();
    DMatrix::from_fn(n, t.saturating_sub(1), |i, s| levels[(i, s + 1)] - levels[(i, s)])
}

fn sort_periods(periods: &mut [String]) {
    let numeric: Option<Vec<f64>> = periods.iter().map(|p| p.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => periods.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        }),
        None => periods.sort(),
    }
}

pub fn write_panel(panel: &PanelDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_panel_to(panel, std::io::BufWriter::new(file))
}

/// Write the panel in the ingestion schema. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_panel_to<W: Write>(panel: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(panel.var_names.iter().cloned());
    w.write_record(&header)?;
    for (i, m) in panel.meta.iter().enumerate() {
        for (t, p) in panel.periods.iter().enumerate() {
            let mut rec = vec![
                m.unit_id.clone(),
                p.clone(),
                m.firm_id.clone(),
                m.industry.clone(),
                m.state.clone(),
                fmt_coord(m.latitude),
                fmt_coord(m.longitude),
                format!("{}", panel.y[(i, t)]),
            ];
            rec.extend(panel.x.iter().map(|x| format!("{}", x[(i, t)])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_coord(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Per-variable descriptive statistics over all (i, t) cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub count: usize,
}

fn summary_of(name: &str, values: &[f64]) -> VarSummary {
    VarSummary {
        name: name.to_string(),
        mean: stats::mean(values),
        median: stats::median(values),
        sd: stats::sample_sd(values),
        count: values.len(),
    }
}

/// Summary table: the outcome first, then each covariate.
pub fn summarize(panel: &PanelDataset) -> Vec<VarSummary> {
    let mut out = vec![summary_of("y", panel.y.as_slice())];
    for (name, x) in panel.var_names.iter().zip(&panel.x) {
        out.push(summary_of(name, x.as_slice()));
    }
    out
}

/// Group units by a label, preserving first-appearance order of groups.
pub fn group_index<'a>(labels: impl Iterator<Item = &'a str>) -> (Vec<usize>, Vec<String>) {
    let mut codes = Vec::new();
    let mut names = Vec::new();
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        let next = map.len();
        let c = *map.entry(l).or_insert_with(|| {
            names.push(l.to_string());
            next
        });
        codes.push(c);
    }
    (codes, names)
}
