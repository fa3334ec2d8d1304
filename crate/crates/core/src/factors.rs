//! Principal-components factor space of the covariates and the annihilator
//! used to strip common factors from every series.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::panel::PanelDataset;

/// Best eigenvalue ratio below this counts as "no clear factor structure".
pub const LOW_SIGNAL_RATIO: f64 = 2.0;

/// Estimated factor space.
#[derive(Debug, Clone)]
pub struct FactorModel {
    /// T×r factors scaled so `F'F/T = I`.
    pub f_hat: DMatrix<f64>,
    pub r: usize,
    /// Share of total covariate variance carried by each retained factor.
    pub explained: Vec<f64>,
    /// T×T annihilator `I − F(F'F)⁻¹F'`.
    pub projection: DMatrix<f64>,
}

impl FactorModel {
    /// Wrap a known factor matrix (any scaling).
    pub fn from_factors(f: DMatrix<f64>) -> Result<Self> {
        let t = f.nrows();
        let r = f.ncols();
        if r >= t {
            return Err(Error::Dimension(format!("r = {r} must be below T = {t}")));
        }
        let projection = annihilator(&f)?;
        Ok(Self {
            f_hat: f,
            r,
            explained: vec![f64::NAN; r],
            projection,
        })
    }

    /// No factors: the projection is the identity.
    pub fn none(t: usize) -> Self {
        Self {
            f_hat: DMatrix::zeros(t, 0),
            r: 0,
            explained: Vec::new(),
            projection: DMatrix::identity(t, t),
        }
    }

    pub fn t(&self) -> usize {
        self.projection.nrows()
    }
}

/// `I − F(F'F)⁻¹F'`.
pub fn annihilator(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = f.nrows();
    if f.ncols() == 0 {
        return Ok(DMatrix::identity(t, t));
    }
    let ftf = f.transpose() * f;
    let coef = crate::linalg::solve_spd(&ftf, &f.transpose(), "factor cross-product")?;
    let mut m = DMatrix::identity(t, t) - f * coef;
    // symmetrize away rounding
    let mt = m.transpose();
    m = (&m + mt) * 0.5;
    Ok(m)
}

/// T×(N·K) matrix of every covariate series, each demeaned over time.
pub fn covariate_stack(panel: &PanelDataset) -> DMatrix<f64> {
    let (n, t, k) = (panel.n(), panel.t(), panel.k());
    let mut z = DMatrix::zeros(t, n * k);
    for i in 0..n {
        for l in 0..k {
            let row = panel.x[l].row(i);
            let m = row.mean();
            let c = i * k + l;
            for s in 0..t {
                z[(s, c)] = row[s] - m;
            }
        }
    }
    z
}

/// Eigenvalues (descending) and matching eigenvectors of `ZZ'/(T·m)`.
fn spectrum(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (t, m) = z.shape();
    let s = z * z.transpose() / (t as f64 * m.max(1) as f64);
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vecs = DMatrix::zeros(t, t);
    for (c, &i) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        vecs.set_column(c, &v);
    }
    (values, vecs)
}

/// Top-`r` principal components of the demeaned covariate series.
pub fn estimate_factors(panel: &PanelDataset, r: usize) -> Result<FactorModel> {
    factors_from_stack(&covariate_stack(panel), r)
}

/// Factors from a T×m matrix of already demeaned series.
pub fn factors_from_stack(z: &DMatrix<f64>, r: usize) -> Result<FactorModel> {
    let t = z.nrows();
    if r == 0 || r >= t {
        return Err(Error::Dimension(format!("factor count {r} must satisfy 1 ≤ r < T = {t}")));
    }
    let (values, vecs) = spectrum(z);
    let total: f64 = values.iter().sum();
    let f_hat = vecs.columns(0, r) * (t as f64).sqrt();
    let explained = values[..r]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    // F'F/T = I, so the annihilator is I − FF'/T
    let mut projection = DMatrix::identity(t, t) - &f_hat * f_hat.transpose() / t as f64;
    let pt = projection.transpose();
    projection = (&projection + pt) * 0.5;
    Ok(FactorModel {
        f_hat,
        r,
        explained,
        projection,
    })
}

/// Outcome of the eigenvalue-ratio factor count.
#[derive(Debug, Clone, Serialize)]
pub struct FactorCount {
    pub r: usize,
    /// `λ_k / λ_{k+1}` for the admissible k = 1, 2, ….
    pub ratios: Vec<f64>,
    /// Set when no ratio reaches [`LOW_SIGNAL_RATIO`] or the spectrum is flat.
    pub low_signal: bool,
}

/// Eigenvalue-ratio choice of the factor count over `1..=r_max`.
pub fn select_num_factors(panel: &PanelDataset, r_max: usize) -> Result<FactorCount> {
    count_from_stack(&covariate_stack(panel), r_max)
}

pub fn count_from_stack(z: &DMatrix<f64>, r_max: usize) -> Result<FactorCount> {
    let t = z.nrows();
    if r_max == 0 || 2 * r_max >= t {
        return Err(Error::Dimension(format!("r_max = {r_max} must satisfy 1 ≤ r_max < T/2 = {}", t as f64 / 2.0)));
    }
    let (values, _) = spectrum(z);
    let top = values[0];
    let flat = top <= 0.0 || values.iter().all(|v| (v - top).abs() <= 1e-14 * top.max(1.0));
    if flat {
        return Ok(FactorCount {
            r: 1,
            ratios: Vec::new(),
            low_signal: true,
        });
    }
    let nonzero = values.iter().filter(|&&v| v > top * 1e-12).count();
    let kmax = r_max.min(nonzero.saturating_sub(1));
    let ratios: Vec<f64> = (0..kmax).map(|k| values[k] / values[k + 1]).collect();
    let mut best = 0;
    for (k, &q) in ratios.iter().enumerate() {
        if q > ratios[best] {
            best = k;
        }
    }
    let best_ratio = ratios.get(best).copied().unwrap_or(1.0);
    if best_ratio < LOW_SIGNAL_RATIO {
        return Ok(FactorCount {
            r: 1,
            ratios,
            low_signal: true,
        });
    }
    Ok(FactorCount {
        r: best + 1,
        ratios,
        low_signal: false,
    })
}

/// `M · series`.
pub fn defactor(series: &DMatrix<f64>, fm: &FactorModel) -> Result<DMatrix<f64>> {
    if series.nrows() != fm.t() {
        return Err(Error::Dimension(format!(
            "series has {} rows, factor model has T = {}",
            series.nrows(),
            fm.t()
        )));
    }
    Ok(&fm.projection * series)
}

/// Panel with every unit's outcome and covariates demeaned over time and
/// then defactored, so unit intercepts are removed along with the factors.
#[derive(Debug, Clone)]
pub struct DefactoredPanel {
    /// T×N, one column per unit.
    pub y: DMatrix<f64>,
    /// Per unit, T×K.
    pub x: Vec<DMatrix<f64>>,
}

impl DefactoredPanel {
    pub fn new(panel: &PanelDataset, fm: &FactorModel) -> Result<Self> {
        if panel.t() != fm.t() {
            return Err(Error::Dimension(format!(
                "panel T = {} does not match factor model T = {}",
                panel.t(),
                fm.t()
            )));
        }
        let y = &fm.projection * demean_columns(&panel.y.transpose());
        let x = exec::map_range(panel.n(), |i| &fm.projection * demean_columns(&panel.unit_x(i)));
        Ok(Self { y, x })
    }

    /// Assemble from already transformed series.
    pub fn from_parts(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        if x.len() != y.ncols() || x.iter().any(|m| m.nrows() != y.nrows()) {
            return Err(Error::Dimension("defactored parts do not conform".into()));
        }
        let k = x.first().map(|m| m.ncols()).unwrap_or(0);
        if x.iter().any(|m| m.ncols() != k) {
            return Err(Error::Dimension("units disagree on covariate count".into()));
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn t(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.first().map(|m| m.ncols()).unwrap_or(0)
    }

    pub fn unit_y(&self, i: usize) -> DVector<f64> {
        self.y.column(i).into_owned()
    }
}

/// Subtract each column's mean.
pub fn demean_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let mu = c.mean();
        c.add_scalar_mut(-mu);
    }
    out
}

/// Largest principal angle (degrees) between the column spaces of `a` and `b`.
pub fn principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let sv = (qa.transpose() * qb).singular_values();
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    min.acos().to_degrees()
}
