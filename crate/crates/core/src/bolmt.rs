//! One-link-at-a-time network selection with a multiple-testing stopping
//! rule, followed by joint re-estimation and row normalization of the
//! selected links.
//!
//! For unit `i`, stage ℓ tests every remaining candidate `j` by the IV
//! t-ratio of `ỹ_j` in a regression of `ỹ_i` on the links already selected,
//! the unit's own covariates `X̃_i` and `ỹ_j`. Each outcome regressor `ỹ_m` is
//! instrumented by its fitted value on its own covariates, `P_{X̃_m} ỹ_m`.
//! The strongest candidate is kept when `|t|` exceeds
//! `Φ⁻¹(1 − p / (2 c n^δ))`, with `n` the current candidate count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::factors::DefactoredPanel;
use crate::linalg;
use crate::netbuild::{NetworkMatrix, Provenance};
use crate::stats;

/// Residual norms below this fraction of the outcome norm count as an exact fit.
const EXACT_FIT: f64 = 1e-10;
/// Fitted instruments below this fraction of the series norm are weak.
const WEAK_FIT: f64 = 1e-10;
/// Signed row sums smaller than this fall back to absolute normalization.
const SIGNED_SUM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolmtConfig {
    /// Nominal size.
    pub p: f64,
    pub c: f64,
    pub delta: f64,
}

impl Default for BolmtConfig {
    fn default() -> Self {
        Self {
            p: 0.05,
            c: 1.0,
            delta: 1.0,
        }
    }
}

impl BolmtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p = {} must lie in (0, 1)", self.p)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c = {} must be positive", self.c)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta = {} must be positive", self.delta)));
        }
        Ok(())
    }
}

/// `Φ⁻¹(1 − p / (2 c n^δ))`.
pub fn critical_value(p: f64, n: usize, c: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0 && c > 0.0 && delta > 0.0) || n == 0 {
        return Err(Error::Domain(format!(
            "critical value needs 0 < p < 1, n ≥ 1, c > 0, delta > 0 (got p={p}, n={n}, c={c}, delta={delta})"
        )));
    }
    let q = p / (2.0 * c * (n as f64).powf(delta));
    if q >= 1.0 {
        return Err(Error::Domain(format!("tail probability {q} ≥ 1")));
    }
    Ok(stats::norm_upper_quantile(q))
}

/// A candidate that could not be tested at some stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub candidate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub n_candidates: usize,
    pub threshold: f64,
    /// Strongest candidate and its t-ratio, if any candidate could be tested.
    pub best: Option<(usize, f64)>,
    pub accepted: bool,
    /// t-ratio of every tested candidate, by index.
    pub t_ratios: Vec<(usize, f64)>,
    pub skipped: Vec<Skip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub unit: usize,
    /// Links in order of selection.
    pub selected: Vec<usize>,
    pub candidate_set: Vec<usize>,
    /// `selected.len() + 1`.
    pub stage: usize,
    pub trace: Vec<StageRecord>,
    /// Row normalized by the absolute sum because the signed sum vanished.
    pub abs_normalized: bool,
}

#[derive(Debug, Clone)]
pub struct AdjacencyEstimate {
    pub w_hat: NetworkMatrix,
    /// Re-estimated coefficients per row before normalization.
    pub omega_hat: Vec<Vec<(usize, f64)>>,
    pub traces: Vec<SelectionState>,
}

/// Fitted values `P_{X̃_m} ỹ_m` for every unit, as a T×N matrix.
pub fn generated_instruments(data: &DefactoredPanel) -> Result<DMatrix<f64>> {
    let cols = exec::map_range(data.n(), |m| {
        let y = DMatrix::from_column_slice(data.t(), 1, data.y.column(m).as_slice());
        linalg::project(&data.x[m], &y, "own covariates")
    });
    let mut out = DMatrix::zeros(data.t(), data.n());
    for (m, c) in cols.into_iter().enumerate() {
        out.set_column(m, &c?.column(0));
    }
    Ok(out)
}

/// Per-unit view with `X̃_i` partialled out of every series.
struct UnitSystem {
    t: usize,
    /// `M_{X̃_i} ỹ_i`.
    a: DVector<f64>,
    y_norm: f64,
    /// `M_{X̃_i} ỹ_m`, T×N.
    y_perp: DMatrix<f64>,
    /// `M_{X̃_i} P_{X̃_m} ỹ_m`, T×N.
    h_perp: DMatrix<f64>,
    /// `‖ỹ_m‖`, the scale for the weak-instrument check.
    y_norms: Vec<f64>,
}

impl UnitSystem {
    fn new(i: usize, data: &DefactoredPanel, yhat: &DMatrix<f64>) -> Result<Self> {
        let x = &data.x[i];
        let y_perp = linalg::residualize(x, &data.y, "own covariates")?;
        let h_perp = linalg::residualize(x, yhat, "own covariates")?;
        Ok(Self {
            t: data.t(),
            a: y_perp.column(i).into_owned(),
            y_norm: data.y.column(i).norm(),
            y_perp,
            h_perp,
            y_norms: data.y.column_iter().map(|c| c.norm()).collect(),
        })
    }

    /// IV of the unit's outcome on `links`, each instrumented by its fitted
    /// value. Returns coefficients, their covariance and the residual sd.
    fn fit(&self, links: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let s = links.len();
        let r = DMatrix::from_fn(self.t, s, |t, c| self.y_perp[(t, links[c])]);
        let z = DMatrix::from_fn(self.t, s, |t, c| self.h_perp[(t, links[c])]);
        let fit = linalg::iv_exact(&self.a, &r, &z)?;
        Ok((fit.coef, fit.cov, fit.sigma))
    }

    /// t-ratio of the last entry of `links`.
    fn t_ratio(&self, unit: usize, links: &[usize]) -> Result<f64> {
        let j = *links.last().expect("candidate");
        if self.h_perp.column(j).norm() <= WEAK_FIT * self.y_norms[j] {
            return Err(Error::WeakInstrument { unit, candidate: j });
        }
        if self.a.norm() <= EXACT_FIT * self.y_norm {
            // own covariates already fit the outcome exactly
            return Ok(0.0);
        }
        let (coef, cov, _) = self.fit(links)?;
        let b = coef[links.len() - 1];
        let se = cov[(links.len() - 1, links.len() - 1)].max(0.0).sqrt();
        Ok(if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        })
    }
}

/// IV t-ratio of candidate `j` for unit `i` given the already included links.
pub fn iv_t_ratio(i: usize, j: usize, included: &[usize], data: &DefactoredPanel) -> Result<f64> {
    if i == j || included.contains(&j) || included.contains(&i) {
        return Err(Error::Domain(format!("candidate {j} is the unit itself or already included")));
    }
    let yhat = generated_instruments(data)?;
    let sys = UnitSystem::new(i, data, &yhat)?;
    let mut links = included.to_vec();
    links.push(j);
    sys.t_ratio(i, &links)
}

/// Staged selection for one unit.
pub fn select_links_for_unit(i: usize, data: &DefactoredPanel, config: &BolmtConfig) -> Result<SelectionState> {
    config.validate()?;
    let yhat = generated_instruments(data)?;
    select_with(i, data, &yhat, config)
}

fn select_with(
    i: usize,
    data: &DefactoredPanel,
    yhat: &DMatrix<f64>,
    config: &BolmtConfig,
) -> Result<SelectionState> {
    let sys = UnitSystem::new(i, data, yhat)?;
    let mut selected: Vec<usize> = Vec::new();
    let mut candidates: Vec<usize> = (0..data.n()).filter(|&j| j != i).collect();
    let mut trace = Vec::new();
    // regressors (K + links) must leave residual degrees of freedom
    while !candidates.is_empty() && data.k() + selected.len() + 1 < data.t() {
        let n = candidates.len();
        let threshold = critical_value(config.p, n, config.c, config.delta)?;
        let mut t_ratios = Vec::with_capacity(n);
        let mut skipped = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        let mut links = selected.clone();
        links.push(0);
        for &j in &candidates {
            *links.last_mut().unwrap() = j;
            match sys.t_ratio(i, &links) {
                Ok(t) if t.is_nan() => skipped.push(Skip {
                    candidate: j,
                    reason: "undefined t-ratio".into(),
                }),
                Ok(t) => {
                    t_ratios.push((j, t));
                    // strict comparison keeps the lowest index on ties
                    if best.is_none_or(|(_, bt)| t.abs() > bt.abs()) {
                        best = Some((j, t));
                    }
                }
                Err(e) => skipped.push(Skip {
                    candidate: j,
                    reason: e.to_string(),
                }),
            }
        }
        let accepted = best.is_some_and(|(_, t)| t.abs() > threshold);
        trace.push(StageRecord {
            stage: selected.len() + 1,
            n_candidates: n,
            threshold,
            best,
            accepted,
            t_ratios,
            skipped,
        });
        if !accepted {
            break;
        }
        let (j, _) = best.unwrap();
        selected.push(j);
        candidates.retain(|&c| c != j);
    }
    Ok(SelectionState {
        unit: i,
        stage: selected.len() + 1,
        selected,
        candidate_set: candidates,
        trace,
        abs_normalized: false,
    })
}

/// Select links for every unit, re-estimate each row jointly and normalize.
pub fn estimate_network(data: &DefactoredPanel, config: &BolmtConfig) -> Result<AdjacencyEstimate> {
    config.validate()?;
    let yhat = generated_instruments(data)?;
    let n = data.n();
    let results = exec::map_range(n, |i| -> Result<(SelectionState, Vec<(usize, f64)>)> {
        let mut state = select_with(i, data, &yhat, config)?;
        if state.selected.is_empty() {
            return Ok((state, Vec::new()));
        }
        let mut links = state.selected.clone();
        links.sort_unstable();
        let omega = reestimate(i, &links, data, &yhat)?;
        let raw: Vec<(usize, f64)> = links.iter().copied().zip(omega.iter().copied()).collect();
        state.abs_normalized = raw.iter().map(|p| p.1).sum::<f64>().abs() < SIGNED_SUM_FLOOR;
        Ok((state, raw))
    });
    let mut traces = Vec::with_capacity(n);
    let mut omega_hat = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (i, res) in results.into_iter().enumerate() {
        let (state, raw) = res?;
        rows.push(normalize_row(i, &raw)?);
        traces.push(state);
        omega_hat.push(raw);
    }
    let mut w_hat = NetworkMatrix::from_rows(n, rows, Provenance::Estimated)?;
    if !w_hat.is_normalized() {
        // rows are normalized above; the flag only lags on all-negative rounding
        w_hat = crate::netbuild::row_normalize(&w_hat)?;
    }
    Ok(AdjacencyEstimate {
        w_hat,
        omega_hat,
        traces,
    })
}

/// Joint IV of `ỹ_i` on the selected `ỹ_j` and `X̃_i`, instruments
/// `(X̃_i, X̃_j …)`. Falls back to fitted-value instruments when the
/// covariate instrument set is rank deficient.
fn reestimate(i: usize, links: &[usize], data: &DefactoredPanel, yhat: &DMatrix<f64>) -> Result<Vec<f64>> {
    let t = data.t();
    let k = data.k();
    let s = links.len();
    let ylinks = DMatrix::from_fn(t, s, |r, c| data.y[(r, links[c])]);
    let regressors = linalg::hstack(&[&ylinks, &data.x[i]]);
    let mut blocks: Vec<&DMatrix<f64>> = vec![&data.x[i]];
    blocks.extend(links.iter().map(|&j| &data.x[j]));
    let z = linalg::hstack(&blocks);
    let y = data.unit_y(i);
    match linalg::generalized_iv(&y, &regressors, &z) {
        Ok((theta, _)) => Ok(theta.rows(0, s).iter().copied().collect()),
        Err(_) => {
            let hl = DMatrix::from_fn(t, s, |r, c| yhat[(r, links[c])]);
            let zj = linalg::hstack(&[&hl, &data.x[i]]);
            let fit = linalg::iv_exact(&y, &regressors, &zj)?;
            debug_assert_eq!(fit.coef.len(), s + k);
            Ok(fit.coef.rows(0, s).iter().copied().collect())
        }
    }
}

fn normalize_row(row: usize, raw: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let signed: f64 = raw.iter().map(|p| p.1).sum();
    let denom = if signed.abs() >= SIGNED_SUM_FLOOR {
        signed
    } else {
        raw.iter().map(|p| p.1.abs()).sum()
    };
    if denom == 0.0 {
        return Err(Error::Normalization { row });
    }
    Ok(raw.iter().map(|&(j, w)| (j, w / denom)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Panel with independent outcomes driven by own covariates.
    fn independent(seed: u64, n: usize, t: usize, k: usize) -> DefactoredPanel {
        let mut rng = substream(seed, "bolmt-test", 0);
        let x: Vec<_> = (0..n).map(|_| normal(&mut rng, t, k)).collect();
        let y = DMatrix::from_fn(t, n, |r, i| x[i].row(r).sum() + rng.sample::<f64, _>(StandardNormal));
        DefactoredPanel::from_parts(y, x).unwrap()
    }

    /// Frozen at 50 digits with an independent arbitrary-precision quantile.
    #[allow(clippy::excessive_precision)]
    const ORACLE: [(f64, usize, f64, f64); 36] = [
        (0.01, 1, 0.5, 2.5758293035489007538),
        (0.01, 1, 1.0, 2.5758293035489007538),
        (0.01, 1, 2.0, 2.5758293035489007538),
        (0.01, 10, 0.5, 2.9515066214008452364),
        (0.01, 10, 1.0, 3.2905267314918947874),
        (0.01, 10, 2.0, 3.890591886413093962),
        (0.01, 100, 0.5, 3.2905267314918947874),
        (0.01, 100, 1.0, 3.890591886413093962),
        (0.01, 100, 2.0, 4.8916384756985903821),
        (0.01, 1000, 0.5, 3.6016303749654265308),
        (0.01, 1000, 1.0, 4.4171734134690221022),
        (0.01, 1000, 2.0, 5.7307288682362896465),
        (0.05, 1, 0.5, 1.9599639845400542118),
        (0.05, 1, 1.0, 1.9599639845400542118),
        (0.05, 1, 2.0, 1.9599639845400542118),
        (0.05, 10, 0.5, 2.4132403686667335572),
        (0.05, 10, 1.0, 2.8070337683438040993),
        (0.05, 10, 2.0, 3.4807564043462127626),
        (0.05, 100, 0.5, 2.8070337683438040993),
        (0.05, 100, 1.0, 3.4807564043462127626),
        (0.05, 100, 2.0, 4.5647877302808843343),
        (0.05, 1000, 0.5, 3.1593639872152873793),
        (0.05, 1000, 1.0, 4.0556269811224011888),
        (0.05, 1000, 2.0, 5.4513104378454784929),
        (0.1, 1, 0.5, 1.644853626951472688),
        (0.1, 1, 1.0, 1.644853626951472688),
        (0.1, 1, 2.0, 1.644853626951472688),
        (0.1, 10, 0.5, 2.1491466523650777968),
        (0.1, 10, 1.0, 2.5758293035489007418),
        (0.1, 10, 2.0, 3.2905267314918947776),
        (0.1, 100, 0.5, 2.5758293035489007418),
        (0.1, 100, 1.0, 3.2905267314918947776),
        (0.1, 100, 2.0, 4.4171734134690220947),
        (0.1, 1000, 0.5, 2.9515066214008452257),
        (0.1, 1000, 1.0, 3.8905918864130939536),
        (0.1, 1000, 2.0, 5.3267238863844963077),
    ];

    #[test]
    fn critical_values_match_oracle() {
        for &(p, n, d, v) in &ORACLE {
            let got = critical_value(p, n, 1.0, d).unwrap();
            assert!((got - v).abs() < 1e-8, "p={p} n={n} d={d}: {got} vs {v}");
        }
        let c398 = critical_value(0.05, 398, 1.0, 1.0).unwrap();
        assert!((c398 - 3.8348750533472287194).abs() < 1e-8);
        assert!((critical_value(0.05, 1, 1.0, 1.0).unwrap() - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn critical_value_monotone_and_domain() {
        let mut prev = 0.0;
        for n in 1..2000 {
            let v = critical_value(0.05, n, 1.0, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(critical_value(0.05, 10, 1.0, 2.0).unwrap() > critical_value(0.05, 10, 1.0, 1.0).unwrap());
        assert!(matches!(critical_value(0.05, 0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(critical_value(1.5, 3, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(critical_value(0.9, 1, 0.1, 1.0), Err(Error::Domain(_))));
    }

    /// FWL shortcut against the full IV with X̃_i as explicit regressors.
    #[test]
    fn partialled_fit_matches_full_iv() {
        let data = independent(3, 6, 60, 2);
        let yhat = generated_instruments(&data).unwrap();
        let sys = UnitSystem::new(0, &data, &yhat).unwrap();
        let links = [2, 4, 1];
        let (coef, cov, sigma) = sys.fit(&links).unwrap();
        let yl = DMatrix::from_fn(60, 3, |r, c| data.y[(r, links[c])]);
        let hl = DMatrix::from_fn(60, 3, |r, c| yhat[(r, links[c])]);
        let full = linalg::iv_exact(
            &data.unit_y(0),
            &linalg::hstack(&[&yl, &data.x[0]]),
            &linalg::hstack(&[&hl, &data.x[0]]),
        )
        .unwrap();
        assert!((full.coef.rows(0, 3) - coef).amax() < 1e-10);
        assert!((full.cov.view((0, 0), (3, 3)) - cov).amax() < 1e-10);
        assert!((full.sigma - sigma).abs() < 1e-12);
    }

    #[test]
    fn stage_one_matches_closed_form() {
        let data = independent(4, 8, 80, 2);
        let yhat = generated_instruments(&data).unwrap();
        let t = 80.0_f64;
        for j in 1..8 {
            let got = iv_t_ratio(0, j, &[], &data).unwrap();
            let mx = DMatrix::identity(80, 80)
                - &data.x[0] * (data.x[0].transpose() * &data.x[0]).try_inverse().unwrap() * data.x[0].transpose();
            let h = yhat.column(j);
            let yi = data.y.column(0);
            let yj = data.y.column(j);
            let b = (h.transpose() * &mx * yi)[0] / (h.transpose() * &mx * yj)[0];
            let e = &mx * (yi - yj * b);
            let sigma = (e.norm_squared() / t).sqrt();
            let closed = (h.transpose() * &mx * yi)[0] / t.sqrt() / (sigma * ((h.transpose() * &mx * h)[0] / t).sqrt());
            assert!((got.abs() - closed.abs()).abs() < 1e-10, "j={j}: {got} vs {closed}");
        }
    }

    #[test]
    fn exact_null_fit_has_zero_t() {
        let mut data = independent(5, 5, 50, 2);
        let own = &data.x[0] * DVector::from_vec(vec![1.5, -0.7]);
        data.y.set_column(0, &own);
        let t = iv_t_ratio(0, 3, &[], &data).unwrap();
        assert!(t.abs() <= 1e-6);
    }

    #[test]
    fn strong_link_has_large_t() {
        let mut data = independent(6, 5, 200, 2);
        let mut rng = substream(6, "noise", 1);
        let yj = data.y.column(2).into_owned();
        let link = yj * 0.5 + DVector::from_fn(200, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
        let col = data.y.column(0) + link;
        data.y.set_column(0, &col);
        assert!(iv_t_ratio(0, 2, &[], &data).unwrap() > 10.0);
    }

    #[test]
    fn weak_candidate_is_skipped_not_fatal() {
        let mut data = independent(7, 5, 40, 1);
        // candidate 3's covariate is orthogonal to its outcome: fitted value vanishes
        let x3 = data.x[3].column(0).into_owned();
        let y3 = data.y.column(3).into_owned();
        let y3_orth = &y3 - &x3 * (x3.dot(&y3) / x3.dot(&x3));
        data.y.set_column(3, &y3_orth);
        assert!(matches!(iv_t_ratio(0, 3, &[], &data), Err(Error::WeakInstrument { unit: 0, candidate: 3 })));
        let st = select_links_for_unit(0, &data, &BolmtConfig::default()).unwrap();
        assert!(st.trace[0].skipped.iter().any(|s| s.candidate == 3));
    }

    #[test]
    fn two_units_boundary() {
        let data = independent(8, 2, 30, 0);
        let st = select_links_for_unit(0, &data, &BolmtConfig::default()).unwrap();
        assert!(st.selected.len() <= 1);
        assert_eq!(st.stage, st.selected.len() + 1);
    }

    #[test]
    fn selection_state_invariants_and_replay() {
        let data = chain(9, 12, 150);
        let est = estimate_network(&data, &BolmtConfig::default()).unwrap();
        for st in &est.traces {
            assert_eq!(st.stage, st.selected.len() + 1);
            assert!(!st.selected.contains(&st.unit));
            assert!(st.selected.iter().all(|j| !st.candidate_set.contains(j)));
            for rec in &st.trace {
                if rec.accepted {
                    assert!(rec.best.unwrap().1.abs() > rec.threshold);
                    let again = critical_value(0.05, rec.n_candidates, 1.0, 1.0).unwrap();
                    assert_eq!(again, rec.threshold);
                }
            }
            assert!(!st.trace.last().unwrap().accepted || st.candidate_set.is_empty());
            let mut support: Vec<usize> = est.w_hat.row(st.unit).iter().map(|p| p.0).collect();
            let mut sel = st.selected.clone();
            support.sort();
            sel.sort();
            assert_eq!(support, sel);
            if !sel.is_empty() {
                assert!((est.w_hat.row_sum(st.unit) - 1.0).abs() < 1e-12);
            }
        }
        // deterministic
        let again = estimate_network(&data, &BolmtConfig::default()).unwrap();
        assert_eq!(again.traces, est.traces);
        assert_eq!(again.w_hat, est.w_hat);
    }

    /// Each unit i > 0 depends on unit i − 1.
    fn chain(seed: u64, n: usize, t: usize) -> DefactoredPanel {
        let mut rng = substream(seed, "chain", 0);
        let x: Vec<_> = (0..n).map(|_| normal(&mut rng, t, 2)).collect();
        let mut y = DMatrix::zeros(t, n);
        for i in 0..n {
            for r in 0..t {
                let own = x[i][(r, 0)] - x[i][(r, 1)] + 0.5 * rng.sample::<f64, _>(StandardNormal);
                y[(r, i)] = own + if i > 0 { 0.6 * y[(r, i - 1)] } else { 0.0 };
            }
        }
        DefactoredPanel::from_parts(y, x).unwrap()
    }

    #[test]
    fn raising_delta_shrinks_to_a_prefix() {
        for seed in 0..5 {
            let data = chain(20 + seed, 10, 120);
            let yhat = generated_instruments(&data).unwrap();
            for i in 0..10 {
                let lo = select_with(i, &data, &yhat, &BolmtConfig { delta: 1.0, ..Default::default() }).unwrap();
                let hi = select_with(i, &data, &yhat, &BolmtConfig { delta: 2.0, ..Default::default() }).unwrap();
                assert!(hi.selected.len() <= lo.selected.len());
                assert_eq!(&lo.selected[..hi.selected.len()], &hi.selected[..]);
            }
        }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_row(0, &[(3, 0.42)]).unwrap(), vec![(3, 1.0)]);
        let two = normalize_row(0, &[(1, 0.3), (2, 0.1)]).unwrap();
        assert!((two[0].1 - 0.75).abs() < 1e-15 && (two[1].1 - 0.25).abs() < 1e-15);
        let cancel = normalize_row(0, &[(1, 0.5), (2, -0.5)]).unwrap();
        assert_eq!(cancel, vec![(1, 0.5), (2, -0.5)]);
        assert!(matches!(normalize_row(4, &[(1, 0.0)]), Err(Error::Normalization { row: 4 })));
    }
}
