//! Homophily diagnostics for a network: same-category link share with a
//! label-permutation test, a bias-reduced logit of link presence on
//! attribute distances, and a rank-sum comparison of linked and unlinked
//! pair distances.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::netbuild::NetworkMatrix;
use crate::panel::{group_index, PanelDataset};
use crate::rng::substream;
use crate::stats;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// How links are tallied in the same-category total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkWeighting {
    /// Each nonzero entry counts once.
    #[default]
    Count,
    /// Entries count with their weight.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomophilyReport {
    pub dimension: String,
    pub l_same: f64,
    pub l_total: f64,
    /// Observed same-category share.
    pub h: f64,
    /// Mean share under label permutation.
    pub h_null: f64,
    pub excess: f64,
    /// One-sided: share of permutations with at least the observed total.
    pub p_value: f64,
    pub permutations: usize,
}

fn link_value(w: f64, weighting: LinkWeighting) -> f64 {
    match weighting {
        LinkWeighting::Count => 1.0,
        LinkWeighting::Weighted => w,
    }
}

fn same_total(w: &NetworkMatrix, codes: &[usize], weighting: LinkWeighting) -> f64 {
    w.edges()
        .filter(|&(i, j, _)| codes[i] == codes[j])
        .map(|(_, _, v)| link_value(v, weighting))
        .sum()
}

/// Same-category homophily with a one-sided permutation p-value.
pub fn category_homophily(
    w: &NetworkMatrix,
    labels: &[String],
    dimension: &str,
    permutations: usize,
    seed: u64,
    weighting: LinkWeighting,
) -> Result<HomophilyReport> {
    let n = w.n();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} units", labels.len())));
    }
    if permutations < 100 {
        return Err(Error::Config(format!("need at least 100 permutations, got {permutations}")));
    }
    if labels.iter().any(|l| l.trim().is_empty()) {
        return Err(Error::Metadata(format!("a unit has no {dimension} label")));
    }
    let (codes, names) = group_index(labels.iter().map(String::as_str));
    if names.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let l_total: f64 = w.edges().map(|(_, _, v)| link_value(v, weighting)).sum();
    if l_total == 0.0 {
        return Err(Error::Domain("network has no links".into()));
    }
    let l_same = same_total(w, &codes, weighting);
    let null = exec::map_range(permutations, |b| {
        let mut rng = substream(seed, "permutation", b as u64);
        let mut perm = codes.clone();
        perm.shuffle(&mut rng);
        same_total(w, &perm, weighting)
    });
    let tol = 1e-12 * l_total.abs();
    let exceed = null.iter().filter(|&&l| l >= l_same - tol).count();
    let h = l_same / l_total;
    let h_null = null.iter().sum::<f64>() / permutations as f64 / l_total;
    Ok(HomophilyReport {
        dimension: dimension.to_string(),
        l_same,
        l_total,
        h,
        h_null,
        excess: h - h_null,
        p_value: exceed as f64 / permutations as f64,
        permutations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    pub max_iter: usize,
    /// Convergence on the largest Newton step.
    pub tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

/// Penalized-likelihood logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub penalized_loglik: f64,
}

fn log_sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        -(-eta).exp().ln_1p()
    } else {
        eta - eta.exp().ln_1p()
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Loglik plus half the log-determinant of the information.
fn penalized(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Option<f64> {
    let eta = x * beta;
    let mut ll = 0.0;
    let mut info = DMatrix::zeros(x.ncols(), x.ncols());
    for (r, &e) in eta.iter().enumerate() {
        ll += y[r] * log_sigmoid(e) + (1.0 - y[r]) * log_sigmoid(-e);
        let p = sigmoid(e);
        let row = x.row(r);
        info.ger(p * (1.0 - p), &row.transpose(), &row.transpose(), 1.0);
    }
    let chol = info.cholesky()?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(ll + 0.5 * logdet)
}

/// Logistic regression with the Jeffreys-prior penalty: Newton steps on the
/// modified score `X'(y − π + h(½ − π))`, halved until the penalized
/// likelihood does not fall. Finite under complete separation.
pub fn firth_logit(x: &DMatrix<f64>, y: &[f64], options: &LogitOptions) -> Result<LogitFit> {
    let (m, p) = x.shape();
    if y.len() != m {
        return Err(Error::Dimension(format!("{} outcomes for {m} rows", y.len())));
    }
    let mut beta = DVector::zeros(p);
    let mut current = penalized(x, y, &beta).ok_or_else(|| Error::SingularDesign {
        context: "logit information".into(),
        condition: f64::INFINITY,
    })?;
    let mut grad_norm = f64::INFINITY;
    for iter in 1..=options.max_iter {
        let eta = x * &beta;
        let pi: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut info = DMatrix::zeros(p, p);
        for (r, &pr) in pi.iter().enumerate() {
            let row = x.row(r).transpose();
            info.ger(pr * (1.0 - pr), &row, &row, 1.0);
        }
        let chol = info.clone().cholesky().ok_or_else(|| Error::SingularDesign {
            context: "logit information".into(),
            condition: crate::linalg::condition_number(&info),
        })?;
        let inv = chol.inverse();
        let mut score = DVector::zeros(p);
        for r in 0..m {
            let row = x.row(r).transpose();
            let wr = pi[r] * (1.0 - pi[r]);
            let h = wr * (row.transpose() * &inv * &row)[0];
            score.axpy(y[r] - pi[r] + h * (0.5 - pi[r]), &row, 1.0);
        }
        grad_norm = score.norm();
        let step = &inv * &score;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            if let Some(v) = penalized(x, y, &cand) {
                if v >= current - 1e-12 * current.abs().max(1.0) {
                    accepted = Some((cand, v));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next, value)) = accepted else {
            break;
        };
        let moved = (&next - &beta).amax();
        beta = next;
        current = value;
        if moved < options.tol {
            let se = logit_se(x, &beta)?;
            return Ok(LogitFit {
                coef: beta.iter().copied().collect(),
                se,
                iterations: iter,
                converged: true,
                penalized_loglik: current,
            });
        }
    }
    Err(Error::Convergence {
        iterations: options.max_iter,
        grad_norm,
    })
}

fn logit_se(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<Vec<f64>> {
    let p = x.ncols();
    let eta = x * beta;
    let mut info = DMatrix::zeros(p, p);
    for (r, &e) in eta.iter().enumerate() {
        let pr = sigmoid(e);
        let row = x.row(r).transpose();
        info.ger(pr * (1.0 - pr), &row, &row, 1.0);
    }
    let inv = crate::linalg::solve_spd(&info, &DMatrix::identity(p, p), "logit information")?;
    Ok((0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkFormationFit {
    pub alpha: f64,
    pub se_alpha: f64,
    /// One coefficient per covariate distance.
    pub delta: Vec<f64>,
    /// Infinite for distance columns that are identically zero.
    pub se: Vec<f64>,
    pub odds_ratios: Vec<f64>,
    /// Distance columns dropped because every pair has distance 0.
    pub dropped: Vec<bool>,
    pub var_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub n_pairs: usize,
    pub n_links: usize,
}

/// Logit of link presence on absolute differences of time-averaged covariates
/// over all ordered pairs.
pub fn link_formation_logit(w: &NetworkMatrix, panel: &PanelDataset) -> Result<LinkFormationFit> {
    let means: Vec<Vec<f64>> = (0..panel.k()).map(|l| panel.time_means(l)).collect();
    link_formation_from_attributes(w, &means, &panel.var_names, &LogitOptions::default())
}

/// Same as [`link_formation_logit`] from per-unit attributes `attrs[l][i]`.
pub fn link_formation_from_attributes(
    w: &NetworkMatrix,
    attrs: &[Vec<f64>],
    var_names: &[String],
    options: &LogitOptions,
) -> Result<LinkFormationFit> {
    let n = w.n();
    let k = attrs.len();
    if attrs.iter().any(|a| a.len() != n) {
        return Err(Error::Dimension("attribute length differs from unit count".into()));
    }
    let m = n * n.saturating_sub(1);
    if m < 10 * (k + 1) {
        return Err(Error::Domain(format!("{m} pairs are too few for {} coefficients", k + 1)));
    }
    let mut dist = DMatrix::zeros(m, k);
    let mut y = Vec::with_capacity(m);
    let mut r = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for l in 0..k {
                dist[(r, l)] = (attrs[l][i] - attrs[l][j]).abs();
            }
            y.push(if w.get(i, j) != 0.0 { 1.0 } else { 0.0 });
            r += 1;
        }
    }
    let n_links = y.iter().filter(|&&v| v == 1.0).count();
    if n_links == 0 || n_links == m {
        return Err(Error::Domain("need at least one linked and one unlinked pair".into()));
    }
    let dropped: Vec<bool> = (0..k).map(|l| dist.column(l).iter().all(|&d| d == 0.0)).collect();
    let kept: Vec<usize> = (0..k).filter(|&l| !dropped[l]).collect();
    let mut x = DMatrix::from_element(m, kept.len() + 1, 1.0);
    for (c, &l) in kept.iter().enumerate() {
        x.set_column(c + 1, &dist.column(l));
    }
    let fit = firth_logit(&x, &y, options)?;
    let mut delta = vec![0.0; k];
    let mut se = vec![f64::INFINITY; k];
    for (c, &l) in kept.iter().enumerate() {
        delta[l] = fit.coef[c + 1];
        se[l] = fit.se[c + 1];
    }
    Ok(LinkFormationFit {
        alpha: fit.coef[0],
        se_alpha: fit.se[0],
        odds_ratios: delta.iter().map(|d| d.exp()).collect(),
        delta,
        se,
        dropped,
        var_names: var_names.to_vec(),
        converged: fit.converged,
        iterations: fit.iterations,
        n_pairs: m,
        n_links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSumResult {
    /// Rank sum of the linked sample.
    pub rank_sum: f64,
    pub z: f64,
    /// One-sided p-value for "linked distances are smaller".
    pub p: f64,
    pub n_linked: usize,
    pub n_unlinked: usize,
}

/// Normal-approximation rank-sum test with tie-corrected variance and no
/// continuity correction.
pub fn rank_sum(linked: &[f64], unlinked: &[f64]) -> Result<RankSumResult> {
    let (nl, nu) = (linked.len(), unlinked.len());
    if nl == 0 || nu == 0 {
        return Err(Error::Domain("rank-sum test needs both samples non-empty".into()));
    }
    let mut all: Vec<(f64, bool)> = linked.iter().map(|&v| (v, true)).chain(unlinked.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum = 0.0;
    let mut ties = 0.0;
    let mut s = 0;
    while s < n {
        let mut e = s;
        while e + 1 < n && all[e + 1].0 == all[s].0 {
            e += 1;
        }
        let mid = (s + e) as f64 / 2.0 + 1.0;
        let t = (e - s + 1) as f64;
        ties += t * t * t - t;
        rank_sum += mid * all[s..=e].iter().filter(|p| p.1).count() as f64;
        s = e + 1;
    }
    let (nlf, nuf, nf) = (nl as f64, nu as f64, n as f64);
    let u = rank_sum - nlf * (nlf + 1.0) / 2.0;
    let mean = nlf * nuf / 2.0;
    let var = nlf * nuf / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    let (z, p) = if var > 0.0 {
        let z = (u - mean) / var.sqrt();
        (z, stats::norm_cdf(z))
    } else {
        (0.0, 0.5)
    };
    Ok(RankSumResult {
        rank_sum,
        z,
        p,
        n_linked: nl,
        n_unlinked: nu,
    })
}

/// Rank-sum test of `|attr_i − attr_j|` for linked against unlinked ordered pairs.
pub fn rank_sum_test(w: &NetworkMatrix, attr: &[f64]) -> Result<RankSumResult> {
    let n = w.n();
    if attr.len() != n {
        return Err(Error::Dimension(format!("{} attribute values for {n} units", attr.len())));
    }
    let (mut linked, mut unlinked) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = (attr[i] - attr[j]).abs();
            if w.get(i, j) != 0.0 {
                linked.push(d);
            } else {
                unlinked.push(d);
            }
        }
    }
    rank_sum(&linked, &unlinked)
}
