//! Sparse network matrices and the a-priori weight builders
//! (distance threshold, k nearest neighbours, Gaussian kernel, shared category).

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::panel::FacilityMeta;
use crate::stats;

/// Mean Earth radius in miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

/// Kernel weights below this are not stored.
pub const GAUSSIAN_DROP: f64 = 1e-12;

/// Tolerance for "row sums to one".
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Estimated,
    ThresholdDistance,
    Knn,
    Gaussian,
    Category,
    /// Read from an edge list.
    Imported,
    /// True network of a synthetic dataset.
    Simulated,
}

/// N×N weight matrix stored as sorted sparse rows. The diagonal is always zero
/// and every stored weight is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    normalized: bool,
    provenance: Provenance,
}

impl NetworkMatrix {
    pub fn empty(n: usize, provenance: Provenance) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
            normalized: true,
            provenance,
        }
    }

    /// Build from per-row `(column, weight)` lists. Zero weights are dropped.
    pub fn from_rows(
        n: usize,
        rows: Vec<Vec<(usize, f64)>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Dimension(format!("{} rows for n = {n}", rows.len())));
        }
        let mut clean = Vec::with_capacity(n);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, w)| w != 0.0);
            row.sort_by_key(|&(j, _)| j);
            for win in row.windows(2) {
                if win[0].0 == win[1].0 {
                    return Err(Error::Domain(format!("duplicate entry ({i}, {})", win[0].0)));
                }
            }
            for &(j, w) in &row {
                if j >= n {
                    return Err(Error::Dimension(format!("column {j} out of range in row {i}")));
                }
                if j == i {
                    return Err(Error::Domain(format!("nonzero diagonal entry at unit {i}")));
                }
                if !w.is_finite() {
                    return Err(Error::Domain(format!("non-finite weight at ({i}, {j})")));
                }
            }
            clean.push(row);
        }
        let mut out = Self {
            n,
            rows: clean,
            normalized: false,
            provenance,
        };
        out.normalized = out.rows_sum_to_one();
        Ok(out)
    }

    pub fn from_triplets(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for (i, j, w) in entries {
            if i >= n {
                return Err(Error::Dimension(format!("row {i} out of range")));
            }
            rows[i].push((j, w));
        }
        Self::from_rows(n, rows, provenance)
    }

    pub fn from_dense(m: &DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension("weight matrix must be square".into()));
        }
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)])).collect())
            .collect();
        Self::from_rows(n, rows, provenance)
    }

    fn rows_sum_to_one(&self) -> bool {
        self.rows.iter().all(|r| {
            r.is_empty() || (r.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|p| self.rows[i][p].1)
            .unwrap_or(0.0)
    }

    /// Number of stored (nonzero, off-diagonal) entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, w)| w).sum()
    }

    /// All entries as `(i, j, w)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, w)| (i, j, w)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.edges() {
            m[(i, j)] = w;
        }
        m
    }

    /// Apply a permutation: unit `perm[i]` of the result is unit `i` here.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j, w) in self.edges() {
            rows[perm[i]].push((perm[j], w));
        }
        for r in &mut rows {
            r.sort_by_key(|&(j, _)| j);
        }
        Self {
            n: self.n,
            rows,
            normalized: self.normalized,
            provenance: self.provenance,
        }
    }
}

/// Divide every nonzero row by its sum. All-zero rows are unchanged.
pub fn row_normalize(w: &NetworkMatrix) -> Result<NetworkMatrix> {
    let mut rows = Vec::with_capacity(w.n);
    for (i, r) in w.rows.iter().enumerate() {
        if r.is_empty() {
            rows.push(Vec::new());
            continue;
        }
        let s: f64 = r.iter().map(|&(_, v)| v).sum();
        if s == 0.0 {
            return Err(Error::Normalization { row: i });
        }
        rows.push(r.iter().map(|&(j, v)| (j, v / s)).collect());
    }
    Ok(NetworkMatrix {
        n: w.n,
        rows,
        normalized: true,
        provenance: w.provenance,
    })
}

/// Geographic coordinates in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn check(&self) -> Result<()> {
        if !(self.lat.is_finite() && self.lon.is_finite()) {
            return Err(Error::Domain("coordinate is not finite".into()));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Domain(format!(
                "coordinate ({}, {}) out of range",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in miles.
pub fn haversine(a: LatLon, b: LatLon) -> Result<f64> {
    a.check()?;
    b.check()?;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlmb = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlmb / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin())
}

fn coords(meta: &[FacilityMeta]) -> Result<Vec<LatLon>> {
    meta.iter()
        .map(|m| {
            if !(m.latitude.is_finite() && m.longitude.is_finite()) {
                return Err(Error::Metadata(format!("unit {} has no coordinates", m.unit_id)));
            }
            let p = LatLon::new(m.latitude, m.longitude);
            p.check()?;
            Ok(p)
        })
        .collect()
}

/// Dense symmetric matrix of pairwise Haversine distances.
pub fn distance_matrix(meta: &[FacilityMeta]) -> Result<DMatrix<f64>> {
    let pts = coords(meta)?;
    let n = pts.len();
    let rows = exec::map_range(n, |i| {
        (0..n)
            .map(|j| if i == j { Ok(0.0) } else { haversine(pts[i], pts[j]) })
            .collect::<Result<Vec<f64>>>()
    });
    let mut d = DMatrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r?.into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    Ok(d)
}

fn upper_distances(d: &DMatrix<f64>) -> Vec<f64> {
    let n = d.nrows();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            v.push(d[(i, j)]);
        }
    }
    v
}

fn need_units(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain("network needs at least two units".into()));
    }
    Ok(())
}

/// Inverse-distance weights for pairs closer than the given empirical
/// percentile (type 7) of all pairwise distances, row-normalized.
pub fn threshold_distance_network(meta: &[FacilityMeta], percentile: f64) -> Result<NetworkMatrix> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::Domain(format!("percentile {percentile} not in (0, 1]")));
    }
    need_units(meta.len())?;
    let d = distance_matrix(meta)?;
    threshold_from_distances(&d, percentile)
}

pub(crate) fn threshold_from_distances(d: &DMatrix<f64>, percentile: f64) -> Result<NetworkMatrix> {
    let n = d.nrows();
    let mut all = upper_distances(d);
    all.sort_by(|a, b| a.total_cmp(b));
    let cutoff = stats::quantile_sorted(&all, percentile);
    let mut rows = vec![Vec::new(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = d[(i, j)];
            if dij <= cutoff {
                if dij == 0.0 {
                    return Err(Error::DegenerateDistance { i: i.min(j), j: i.max(j) });
                }
                row.push((j, 1.0 / dij));
            }
        }
    }
    row_normalize(&NetworkMatrix::from_rows(n, rows, Provenance::ThresholdDistance)?)
}

/// Each unit links its `k` nearest units with weight `1/k`.
/// Ties at equal distance go to the smaller unit index.
pub fn knn_network(meta: &[FacilityMeta], k: usize) -> Result<NetworkMatrix> {
    let n = meta.len();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("k = {k} must satisfy 1 ≤ k < N = {n}")));
    }
    let d = distance_matrix(meta)?;
    Ok(knn_from_distances(&d, k))
}

pub(crate) fn knn_from_distances(d: &DMatrix<f64>, k: usize) -> NetworkMatrix {
    let n = d.nrows();
    let rows = exec::map_range(n, |i| {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]).then(a.cmp(&b)));
        let mut row: Vec<(usize, f64)> = others[..k].iter().map(|&j| (j, 1.0 / k as f64)).collect();
        row.sort_by_key(|&(j, _)| j);
        row
    });
    NetworkMatrix {
        n,
        rows,
        normalized: true,
        provenance: Provenance::Knn,
    }
}

/// Bandwidth for the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Sample standard deviation of pairwise distances divided by 3.
    Auto,
    Miles(f64),
}

/// Gaussian-kernel weights `exp(-d²/(2σ²))`, row-normalized.
pub fn gaussian_network(meta: &[FacilityMeta], sigma: Bandwidth) -> Result<NetworkMatrix> {
    need_units(meta.len())?;
    let d = distance_matrix(meta)?;
    gaussian_from_distances(&d, sigma)
}

pub fn auto_bandwidth(d: &DMatrix<f64>) -> f64 {
    stats::sample_sd(&upper_distances(d)) / 3.0
}

pub(crate) fn gaussian_from_distances(d: &DMatrix<f64>, sigma: Bandwidth) -> Result<NetworkMatrix> {
    let s = match sigma {
        Bandwidth::Auto => auto_bandwidth(d),
        Bandwidth::Miles(s) => s,
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("bandwidth {s} must be positive")));
    }
    let n = d.nrows();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, (-d[(i, j)].powi(2) / (2.0 * s * s)).exp()))
                .filter(|&(_, w)| w >= GAUSSIAN_DROP)
                .collect()
        })
        .collect();
    row_normalize(&NetworkMatrix::from_rows(n, rows, Provenance::Gaussian)?)
}

/// Grouping dimension for category networks and homophily.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryDim {
    Firm,
    Industry,
    State,
}

impl CategoryDim {
    pub const ALL: [CategoryDim; 3] = [CategoryDim::Firm, CategoryDim::Industry, CategoryDim::State];

    pub fn label<'a>(&self, m: &'a FacilityMeta) -> &'a str {
        match self {
            CategoryDim::Firm => &m.firm_id,
            CategoryDim::Industry => &m.industry,
            CategoryDim::State => &m.state,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CategoryDim::Firm => "firm",
            CategoryDim::Industry => "industry",
            CategoryDim::State => "state",
        }
    }

    /// Labels for every unit; errors on an empty label.
    pub fn labels(&self, meta: &[FacilityMeta]) -> Result<Vec<String>> {
        meta.iter()
            .map(|m| {
                let l = self.label(m);
                if l.trim().is_empty() {
                    Err(Error::Metadata(format!(
                        "unit {} has no {} label",
                        m.unit_id,
                        self.name()
                    )))
                } else {
                    Ok(l.to_string())
                }
            })
            .collect()
    }
}

impl std::str::FromStr for CategoryDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "firm" => Ok(CategoryDim::Firm),
            "industry" => Ok(CategoryDim::Industry),
            "state" => Ok(CategoryDim::State),
            other => Err(Error::Config(format!("unknown category dimension {other:?}"))),
        }
    }
}

/// Link every pair of distinct units sharing a label; row-normalized.
pub fn category_network(meta: &[FacilityMeta], dim: CategoryDim) -> Result<NetworkMatrix> {
    let labels = dim.labels(meta)?;
    Ok(category_from_labels(&labels))
}

pub fn category_from_labels(labels: &[String]) -> NetworkMatrix {
    let n = labels.len();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let rows = (0..n)
        .map(|i| {
            let members = &groups[labels[i].as_str()];
            let m = members.len();
            if m < 2 {
                return Vec::new();
            }
            members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (j, 1.0 / (m - 1) as f64))
                .collect()
        })
        .collect();
    NetworkMatrix {
        n,
        rows,
        normalized: true,
        provenance: Provenance::Category,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkStats {
    pub n: usize,
    pub links: usize,
    pub density: f64,
    pub mean_out_degree: f64,
    pub max_out_degree: usize,
    /// `degree_histogram[d]` = number of units with out-degree `d`.
    pub degree_histogram: Vec<usize>,
}

pub fn network_stats(w: &NetworkMatrix) -> NetworkStats {
    let n = w.n();
    let degrees: Vec<usize> = w.rows.iter().map(Vec::len).collect();
    let links: usize = degrees.iter().sum();
    let max = degrees.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0; max + 1];
    for &d in &degrees {
        hist[d] += 1;
    }
    let pairs = n * n.saturating_sub(1);
    NetworkStats {
        n,
        links,
        density: if pairs > 0 { links as f64 / pairs as f64 } else { 0.0 },
        mean_out_degree: if n > 0 { links as f64 / n as f64 } else { 0.0 },
        max_out_degree: max,
        degree_histogram: hist,
    }
}

/// Density counting only entries with weight strictly above `cutoff`.
pub fn density_above(w: &NetworkMatrix, cutoff: f64) -> f64 {
    let n = w.n();
    let pairs = n * n.saturating_sub(1);
    if pairs == 0 {
        return 0.0;
    }
    w.edges().filter(|&(_, _, v)| v > cutoff).count() as f64 / pairs as f64
}

/// Edge list `i,j,weight` with 0-based unit indices and 17 significant digits.
pub fn write_edges<W: Write>(w: &NetworkMatrix, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["i", "j", "weight"])?;
    for (i, j, v) in w.edges() {
        out.write_record([i.to_string(), j.to_string(), format!("{v:.16e}")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_edges<R: Read>(reader: R, n: usize, provenance: Provenance) -> Result<NetworkMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["i", "j", "weight"] {
        return Err(Error::Parse {
            row: 1,
            msg: "edge list header must be i,j,weight".into(),
        });
    }
    let mut entries = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        let parse_err = |what: &str| Error::Parse {
            row,
            msg: format!("bad {what}"),
        };
        let i: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| parse_err("i"))?;
        let j: usize = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| parse_err("j"))?;
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err("weight"))?;
        entries.push((i, j, v));
    }
    NetworkMatrix::from_triplets(n, entries, provenance)
}

/// Graphviz export; node labels are the unit ids when given.
pub fn write_dot<W: Write>(w: &NetworkMatrix, labels: Option<&[String]>, mut writer: W) -> Result<()> {
    writeln!(writer, "digraph W {{")?;
    for i in 0..w.n() {
        let name = labels.map(|l| l[i].as_str()).unwrap_or("");
        writeln!(writer, "  {i} [label=\"{}\"];", if name.is_empty() { i.to_string() } else { name.replace('"', "'") })?;
    }
    for (i, j, v) in w.edges() {
        writeln!(writer, "  {i} -> {j} [weight={v:.6}];")?;
    }
    writeln!(writer, "}}")?;
    Ok(())
}
