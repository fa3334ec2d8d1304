//! Per-unit spatial IV, the mean-group aggregate and a two-way fixed-effects
//! baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::factors::DefactoredPanel;
use crate::linalg;
use crate::netbuild::NetworkMatrix;
use crate::panel::{group_index, PanelDataset};
use crate::stats;

/// Instrument choice for the spatial lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentSet {
    /// Own covariates plus every neighbour's covariates.
    Neighbors,
    /// Own covariates plus the weighted average of neighbours' covariates.
    SpatialLag,
    /// Neighbours while the instrument count leaves `K + 1` degrees of
    /// freedom, spatial lag otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitEstimate {
    /// `(ψ, β_1, …, β_K)`, or `(β_1, …, β_K)` when the unit has no links.
    pub theta: Vec<f64>,
    /// Residual sd with denominator T.
    pub sigma: f64,
    pub psi_identified: bool,
    /// Condition number of the instrument moment matrix.
    pub condition: f64,
    /// Instruments actually used.
    pub instruments: InstrumentSet,
}

impl UnitEstimate {
    pub fn psi(&self) -> Option<f64> {
        self.psi_identified.then(|| self.theta[0])
    }

    pub fn beta(&self) -> &[f64] {
        if self.psi_identified {
            &self.theta[1..]
        } else {
            &self.theta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitEstimates {
    pub k: usize,
    pub units: Vec<UnitEstimate>,
}

impl UnitEstimates {
    /// Entry `p` of the full `(ψ, β)` vector for unit `i`, if it contributes.
    pub fn param(&self, i: usize, p: usize) -> Option<f64> {
        let u = &self.units[i];
        if p == 0 {
            u.psi()
        } else {
            Some(u.beta()[p - 1])
        }
    }
}

/// Spatial lag `Σ_j w_ij s_j` of the columns of `s` (T×N) for unit `i`.
fn lag(w: &NetworkMatrix, i: usize, s: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(s.nrows());
    for &(j, wij) in w.row(i) {
        out.axpy(wij, &s.column(j), 1.0);
    }
    out
}

/// GMM fit of unit `i`'s outcome on its spatial lag and own covariates.
pub fn unit_iv(i: usize, w: &NetworkMatrix, data: &DefactoredPanel, instruments: InstrumentSet) -> Result<UnitEstimate> {
    if w.n() != data.n() {
        return Err(Error::Dimension(format!("network has {} units, data {}", w.n(), data.n())));
    }
    let (t, k) = (data.t(), data.k());
    let y = data.unit_y(i);
    let xi = &data.x[i];
    let row = w.row(i);
    if row.is_empty() {
        let xx = xi.transpose() * xi;
        let coef = linalg::ols(xi, &DMatrix::from_column_slice(t, 1, y.as_slice()), "own covariates")?;
        let resid = &y - xi * coef.column(0);
        return Ok(UnitEstimate {
            theta: coef.column(0).iter().copied().collect(),
            sigma: (resid.norm_squared() / t as f64).sqrt(),
            psi_identified: false,
            condition: linalg::condition_number(&xx),
            instruments,
        });
    }
    let ylag = lag(w, i, &data.y);
    let mut regressors = DMatrix::zeros(t, k + 1);
    regressors.set_column(0, &ylag);
    regressors.view_mut((0, 1), (t, k)).copy_from(xi);

    let per_neighbour = k * (1 + row.len());
    let used = match instruments {
        InstrumentSet::Auto if per_neighbour + k < t => InstrumentSet::Neighbors,
        InstrumentSet::Auto => InstrumentSet::SpatialLag,
        other => other,
    };
    let z = match used {
        InstrumentSet::Neighbors => {
            let mut blocks: Vec<&DMatrix<f64>> = vec![xi];
            blocks.extend(row.iter().map(|&(j, _)| &data.x[j]));
            linalg::hstack(&blocks)
        }
        _ => {
            let mut xl = DMatrix::zeros(t, k);
            for &(j, wij) in row {
                xl += &data.x[j] * wij;
            }
            linalg::hstack(&[xi, &xl])
        }
    };
    if z.ncols() < k + 1 {
        return Err(Error::Underidentified {
            instruments: z.ncols(),
            regressors: k + 1,
        });
    }
    let (theta, condition) = linalg::generalized_iv(&y, &regressors, &z)?;
    let resid = &y - &regressors * &theta;
    Ok(UnitEstimate {
        theta: theta.iter().copied().collect(),
        sigma: (resid.norm_squared() / t as f64).sqrt(),
        psi_identified: true,
        condition,
        instruments: used,
    })
}

/// [`unit_iv`] for every unit, in parallel.
pub fn fit_units(w: &NetworkMatrix, data: &DefactoredPanel, instruments: InstrumentSet) -> Result<UnitEstimates> {
    let units = exec::map_range(data.n(), |i| unit_iv(i, w, data, instruments))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(UnitEstimates { k: data.k(), units })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MGResult {
    /// `(ψ, β_1, …, β_K)`.
    pub theta_mg: Vec<f64>,
    pub se: Vec<f64>,
    pub n_units_used: Vec<usize>,
    #[serde(serialize_with = "linalg::serialize_rows")]
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MgOptions {
    /// Clamp each parameter's unit estimates to these quantiles first.
    pub winsorize: Option<(f64, f64)>,
}

/// Mean-group average with dispersion-based covariance.
pub fn mgiv(units: &UnitEstimates) -> Result<MGResult> {
    mgiv_with(units, &MgOptions::default())
}

pub fn mgiv_with(units: &UnitEstimates, options: &MgOptions) -> Result<MGResult> {
    let np = units.k + 1;
    let n = units.units.len();
    // values[p][i]
    let mut values: Vec<Vec<Option<f64>>> = (0..np).map(|p| (0..n).map(|i| units.param(i, p)).collect()).collect();
    if let Some((lo, hi)) = options.winsorize {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!("winsorize quantiles ({lo}, {hi}) invalid")));
        }
        for col in &mut values {
            let present: Vec<f64> = col.iter().flatten().copied().collect();
            if present.is_empty() {
                continue;
            }
            let (a, b) = (stats::quantile(&present, lo), stats::quantile(&present, hi));
            for v in col.iter_mut().flatten() {
                *v = v.clamp(a, b);
            }
        }
    }
    let mut theta = vec![0.0; np];
    let mut used = vec![0; np];
    for p in 0..np {
        let present: Vec<f64> = values[p].iter().flatten().copied().collect();
        if present.len() < 2 {
            return Err(Error::InsufficientUnits {
                param: p,
                units: present.len(),
            });
        }
        used[p] = present.len();
        theta[p] = stats::mean(&present);
    }
    let mut cov = DMatrix::zeros(np, np);
    for p in 0..np {
        for q in p..np {
            let common: Vec<(f64, f64)> = (0..n)
                .filter_map(|i| Some((values[p][i]?, values[q][i]?)))
                .collect();
            let m = common.len();
            let c = if m < 2 {
                0.0
            } else {
                let mp = common.iter().map(|c| c.0).sum::<f64>() / m as f64;
                let mq = common.iter().map(|c| c.1).sum::<f64>() / m as f64;
                let s: f64 = common.iter().map(|c| (c.0 - mp) * (c.1 - mq)).sum::<f64>() / (m - 1) as f64;
                // Cov(mean_p, mean_q) when only `m` units enter both means
                s * m as f64 / (used[p] * used[q]) as f64
            };
            cov[(p, q)] = c;
            cov[(q, p)] = c;
        }
    }
    let se = (0..np).map(|p| cov[(p, p)].max(0.0).sqrt()).collect();
    Ok(MGResult {
        theta_mg: theta,
        se,
        n_units_used: used,
        covariance: cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffects {
    Firm,
    Facility,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwfeResult {
    pub beta: Vec<f64>,
    /// Standard errors clustered by the effect group.
    pub se: Vec<f64>,
    pub n_groups: usize,
    pub n_obs: usize,
}

/// Pooled OLS after removing group and time means.
pub fn twfe(panel: &PanelDataset, effects: FixedEffects) -> Result<TwfeResult> {
    let (n, t, k) = (panel.n(), panel.t(), panel.k());
    if k == 0 {
        return Err(Error::Config("two-way fixed effects need at least one covariate".into()));
    }
    let (codes, _) = match effects {
        FixedEffects::Facility => group_index(panel.meta.iter().map(|m| m.unit_id.as_str())),
        FixedEffects::Firm => {
            if let Some(m) = panel.meta.iter().find(|m| m.firm_id.trim().is_empty()) {
                return Err(Error::Metadata(format!("unit {} has no firm label", m.unit_id)));
            }
            group_index(panel.meta.iter().map(|m| m.firm_id.as_str()))
        }
    };
    let g = codes.iter().copied().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; g];
    for &c in &codes {
        size[c] += 1;
    }
    if g < 2 {
        return Err(Error::DegenerateGroup("need at least two groups".into()));
    }
    if t < 2 || size.iter().any(|&s| s * t < 2) {
        return Err(Error::DegenerateGroup("a group has a single observation".into()));
    }
    // balanced cells (group size × T) make the one-pass two-way demeaning exact
    let demean = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let grand = m.mean();
        let tm = m.row_mean();
        let mut gm = vec![0.0; g];
        for i in 0..n {
            gm[codes[i]] += m.row(i).sum();
        }
        for c in 0..g {
            gm[c] /= (size[c] * t) as f64;
        }
        DMatrix::from_fn(n, t, |i, s| m[(i, s)] - gm[codes[i]] - tm[s] + grand)
    };
    let yd = demean(&panel.y);
    let xd: Vec<DMatrix<f64>> = panel.x.iter().map(demean).collect();
    let obs = n * t;
    let x = DMatrix::from_fn(obs, k, |r, l| xd[l][(r / t, r % t)]);
    let y = DMatrix::from_fn(obs, 1, |r, _| yd[(r / t, r % t)]);
    let xtx = x.transpose() * &x;
    let beta = linalg::solve_spd(&xtx, &(x.transpose() * &y), "within-transformed covariates")?;
    let resid = &y - &x * &beta;
    let mut meat = DMatrix::zeros(k, k);
    let mut score = vec![DVector::<f64>::zeros(k); g];
    for r in 0..obs {
        score[codes[r / t]] += x.row(r).transpose() * resid[(r, 0)];
    }
    for s in &score {
        meat += s * s.transpose();
    }
    let bread = linalg::solve_spd(&xtx, &DMatrix::identity(k, k), "within-transformed covariates")?;
    let dof = (g as f64 / (g - 1) as f64) * ((obs - 1) as f64 / (obs - k).max(1) as f64);
    let v = &bread * meat * &bread * dof;
    Ok(TwfeResult {
        beta: beta.column(0).iter().copied().collect(),
        se: (0..k).map(|l| v[(l, l)].max(0.0).sqrt()).collect(),
        n_groups: g,
        n_obs: obs,
    })
}
