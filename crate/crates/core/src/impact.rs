//! Reduced-form impact matrices `A_ℓ = (I − ΨW)⁻¹ B_ℓ`, the direct /
//! indirect / total decomposition, simulation standard errors and spillin
//! attribution by group or size quintile.

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{MGResult, UnitEstimates};
use crate::exec;
use crate::netbuild::NetworkMatrix;
use crate::rng::substream;
use crate::stats;

/// Required gap between the spectral radius and one.
pub const STABILITY_MARGIN: f64 = 1e-6;
/// Share of unstable draws above which simulated standard errors are refused.
pub const MAX_UNSTABLE_SHARE: f64 = 0.2;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_ITERS: usize = 100_000;

/// Spectral radius. Falls back to the max absolute row sum (an upper bound)
/// if the Schur iteration does not converge.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    match Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_ITERS) {
        Some(s) => s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone)]
pub struct ImpactMatrices {
    pub s_inv: DMatrix<f64>,
    /// One N×N matrix per covariate.
    pub a: Vec<DMatrix<f64>>,
    pub psi_diag: Vec<f64>,
    pub b_diag: Vec<Vec<f64>>,
    /// Spectral radius of ΨW.
    pub rho: f64,
}

/// `S = I − ΨW`, its inverse and `A_ℓ = S⁻¹ diag(β_ℓ)`; `betas` is N×K.
pub fn impact_matrices(psi: &[f64], w: &NetworkMatrix, betas: &DMatrix<f64>) -> Result<ImpactMatrices> {
    let n = w.n();
    if psi.len() != n || betas.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} spatial coefficients and {} beta rows for {n} units",
            psi.len(),
            betas.nrows()
        )));
    }
    let mut pw = w.to_dense();
    for (i, &p) in psi.iter().enumerate() {
        pw.row_mut(i).scale_mut(p);
    }
    let rho = spectral_radius(&pw);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::Stability { rho });
    }
    let s = DMatrix::identity(n, n) - pw;
    let s_inv = s.clone().lu().try_inverse().ok_or(Error::Singularity)?;
    if (&s * &s_inv - DMatrix::identity(n, n)).amax() > 1e-8 {
        return Err(Error::Singularity);
    }
    let b_diag: Vec<Vec<f64>> = (0..betas.ncols()).map(|l| betas.column(l).iter().copied().collect()).collect();
    let a = exec::map_slice(&b_diag, |b| {
        let mut m = s_inv.clone();
        for (j, &bj) in b.iter().enumerate() {
            m.column_mut(j).scale_mut(bj);
        }
        m
    });
    Ok(ImpactMatrices {
        s_inv,
        a,
        psi_diag: psi.to_vec(),
        b_diag,
        rho,
    })
}

/// Where the structural parameters for the impact matrices come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMode {
    /// Ψ = ψ_MG·I and B_ℓ = β_ℓ,MG·I.
    #[default]
    Homogeneous,
    /// Per-unit ψ_i and β_i (ψ_i = 0 for link-free units).
    Heterogeneous,
}

pub fn impact_from_estimates(
    mode: ImpactMode,
    mg: &MGResult,
    units: &UnitEstimates,
    w: &NetworkMatrix,
) -> Result<ImpactMatrices> {
    let n = w.n();
    let k = units.k;
    match mode {
        ImpactMode::Homogeneous => {
            let psi = vec![mg.theta_mg[0]; n];
            let betas = DMatrix::from_fn(n, k, |_, l| mg.theta_mg[l + 1]);
            impact_matrices(&psi, w, &betas)
        }
        ImpactMode::Heterogeneous => {
            if units.units.len() != n {
                return Err(Error::Dimension("unit estimates do not match the network".into()));
            }
            let psi: Vec<f64> = units.units.iter().map(|u| u.psi().unwrap_or(0.0)).collect();
            let betas = DMatrix::from_fn(n, k, |i, l| units.units[i].beta()[l]);
            impact_matrices(&psi, w, &betas)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effects {
    pub de: f64,
    pub ie: f64,
    pub te: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectsTable {
    pub effects: Vec<Effects>,
    /// Simulation standard errors, when computed.
    pub se: Option<Vec<Effects>>,
    pub draws_used: usize,
    pub draws_discarded: usize,
}

/// DE = tr(A)/N, TE = 1'A1/N, IE = TE − DE.
pub fn effects(im: &ImpactMatrices) -> Vec<Effects> {
    im.a.iter()
        .map(|a| {
            let n = a.nrows() as f64;
            let de = a.trace() / n;
            let te = a.sum() / n;
            Effects { de, ie: te - de, te }
        })
        .collect()
}

/// `tr((I − ψW)⁻¹)` and `1'(I − ψW)⁻¹1` for scalar ψ from one real Schur
/// factorization `W = QTQ'`, at O(N²) per evaluation.
#[derive(Debug, Clone)]
pub struct ScalarMultiplier {
    t: DMatrix<f64>,
    q1: DVector<f64>,
    /// Diagonal blocks as (start, size).
    blocks: Vec<(usize, usize)>,
    /// ρ(W).
    pub rho: f64,
    dense: Option<DMatrix<f64>>,
}

impl ScalarMultiplier {
    pub fn new(w: &NetworkMatrix) -> Self {
        let wd = w.to_dense();
        let n = wd.nrows();
        let schur = Schur::try_new(wd.clone(), SCHUR_EPS, SCHUR_ITERS);
        let Some(schur) = schur else {
            let rho = wd.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
            return Self {
                t: DMatrix::zeros(0, 0),
                q1: DVector::zeros(0),
                blocks: Vec::new(),
                rho,
                dense: Some(wd),
            };
        };
        let rho = schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let (q, t) = schur.unpack();
        let q1 = q.transpose() * DVector::from_element(n, 1.0);
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        let mut out = Self {
            t,
            q1,
            blocks,
            rho,
            dense: None,
        };
        // guard against a malformed quasi-triangular pattern
        let probe = if rho > 0.0 { 0.5 / rho } else { 0.5 };
        let (tr, tot) = out.trace_total(probe);
        let (dtr, dtot) = dense_trace_total(&wd, probe);
        if (tr - dtr).abs() > 1e-8 * dtr.abs().max(1.0) || (tot - dtot).abs() > 1e-8 * dtot.abs().max(1.0) {
            out.dense = Some(wd);
        }
        out
    }

    pub fn trace_total(&self, psi: f64) -> (f64, f64) {
        if let Some(wd) = &self.dense {
            return dense_trace_total(wd, psi);
        }
        let n = self.t.nrows();
        let mut x = DVector::zeros(n);
        let mut trace = 0.0;
        for &(s, size) in self.blocks.iter().rev() {
            let mut rhs = [0.0; 2];
            for (r, v) in rhs.iter_mut().enumerate().take(size) {
                let row = s + r;
                let mut acc = self.q1[row];
                for c in s + size..n {
                    acc += psi * self.t[(row, c)] * x[c];
                }
                *v = acc;
            }
            if size == 1 {
                let m = 1.0 - psi * self.t[(s, s)];
                x[s] = rhs[0] / m;
                trace += 1.0 / m;
            } else {
                let a = 1.0 - psi * self.t[(s, s)];
                let b = -psi * self.t[(s, s + 1)];
                let c = -psi * self.t[(s + 1, s)];
                let d = 1.0 - psi * self.t[(s + 1, s + 1)];
                let det = a * d - b * c;
                x[s] = (d * rhs[0] - b * rhs[1]) / det;
                x[s + 1] = (a * rhs[1] - c * rhs[0]) / det;
                trace += (a + d) / det;
            }
        }
        (trace, self.q1.dot(&x))
    }
}

fn dense_trace_total(w: &DMatrix<f64>, psi: f64) -> (f64, f64) {
    let n = w.nrows();
    let s = DMatrix::identity(n, n) - w * psi;
    match s.lu().try_inverse() {
        Some(inv) => (inv.trace(), inv.sum()),
        None => (f64::NAN, f64::NAN),
    }
}

/// Symmetric square root factor `L` with `LL' = cov`; eigenvalues clipped at 0
/// when Cholesky fails.
fn cov_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let mut v = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        v.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    v
}

fn spread(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        0.0
    } else {
        stats::sample_sd(xs)
    }
}

/// Point effects at the mean-group parameters plus parametric simulation
/// standard errors: `draws` parameter vectors from N(θ_MG, Cov_MG), each
/// evaluated at homogeneous Ψ and B. Unstable draws are discarded.
pub fn effects_se(mg: &MGResult, w: &NetworkMatrix, draws: usize, seed: u64) -> Result<EffectsTable> {
    if draws < 100 {
        return Err(Error::Config(format!("need at least 100 draws, got {draws}")));
    }
    let n = w.n() as f64;
    let k = mg.theta_mg.len() - 1;
    let kernel = ScalarMultiplier::new(w);
    let limit = 1.0 - STABILITY_MARGIN;
    if mg.theta_mg[0].abs() * kernel.rho >= limit {
        return Err(Error::Stability {
            rho: mg.theta_mg[0].abs() * kernel.rho,
        });
    }
    let point = {
        let (tr, tot) = kernel.trace_total(mg.theta_mg[0]);
        scalar_effects(&mg.theta_mg[1..], tr / n, tot / n)
    };
    let mean = DVector::from_column_slice(&mg.theta_mg);
    let factor = cov_factor(&mg.covariance);
    let np = k + 1;
    let sims: Vec<Option<Vec<Effects>>> = exec::map_range(draws, |d| {
        let mut rng = substream(seed, "impact-draws", d as u64);
        let z = DVector::from_fn(np, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = &mean + &factor * z;
        if theta[0].abs() * kernel.rho >= limit {
            return None;
        }
        let (tr, tot) = kernel.trace_total(theta[0]);
        Some(scalar_effects(&theta.as_slice()[1..], tr / n, tot / n))
    });
    let kept: Vec<&Vec<Effects>> = sims.iter().flatten().collect();
    let discarded = draws - kept.len();
    if discarded as f64 > MAX_UNSTABLE_SHARE * draws as f64 {
        return Err(Error::UnreliableSe {
            unstable: discarded,
            draws,
        });
    }
    let se = (0..k)
        .map(|l| {
            let col = |f: fn(&Effects) -> f64| -> f64 { spread(&kept.iter().map(|e| f(&e[l])).collect::<Vec<_>>()) };
            Effects {
                de: col(|e| e.de),
                ie: col(|e| e.ie),
                te: col(|e| e.te),
            }
        })
        .collect();
    Ok(EffectsTable {
        effects: point,
        se: Some(se),
        draws_used: kept.len(),
        draws_discarded: discarded,
    })
}

fn scalar_effects(betas: &[f64], mean_trace: f64, mean_total: f64) -> Vec<Effects> {
    betas
        .iter()
        .map(|&b| {
            let de = b * mean_trace;
            let te = b * mean_total;
            Effects { de, ie: te - de, te }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spillin {
    pub within: f64,
    pub between: f64,
    /// The indirect effect, `within + between`.
    pub all: f64,
    /// `within / (within + between)`; undefined when both vanish.
    pub within_share: Option<f64>,
}

fn share(within: f64, between: f64) -> Option<f64> {
    let total = within + between;
    (total != 0.0).then(|| within / total)
}

/// Split each covariate's indirect effect by whether the receiving and the
/// source unit share a label.
pub fn spillins(im: &ImpactMatrices, groups: &[String]) -> Result<Vec<Spillin>> {
    let n = im.s_inv.nrows();
    if groups.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} units", groups.len())));
    }
    let (codes, _) = crate::panel::group_index(groups.iter().map(String::as_str));
    Ok(im
        .a
        .iter()
        .zip(effects(im))
        .map(|(a, e)| {
            let (mut within, mut between) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    if codes[i] == codes[j] {
                        within += a[(i, j)];
                    } else {
                        between += a[(i, j)];
                    }
                }
            }
            let (within, between) = (within / n as f64, between / n as f64);
            Spillin {
                within,
                between,
                all: e.ie,
                within_share: share(within, between),
            }
        })
        .collect())
}

/// Quintile (0-based) of every unit by rank after sorting on (value, index).
pub fn quintiles(size: &[f64]) -> Result<Vec<usize>> {
    let n = size.len();
    if n < 5 {
        return Err(Error::Quantile(format!("need at least 5 units for quintiles, got {n}")));
    }
    if size.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quantile("size measure must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| size[a].total_cmp(&size[b]).then(a.cmp(&b)));
    let mut q = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = rank * 5 / n;
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuintileSpillin {
    /// 1 = smallest.
    pub quintile: usize,
    pub units: usize,
    pub within: f64,
    pub between: f64,
    pub within_share: Option<f64>,
}

/// Per covariate, per size quintile of the receiving unit: average spillin
/// from sources in the same quintile and from other quintiles.
pub fn quintile_spillins(im: &ImpactMatrices, size: &[f64]) -> Result<Vec<Vec<QuintileSpillin>>> {
    let n = im.s_inv.nrows();
    if size.len() != n {
        return Err(Error::Dimension(format!("{} sizes for {n} units", size.len())));
    }
    let q = quintiles(size)?;
    Ok(im
        .a
        .iter()
        .map(|a| {
            (0..5)
                .map(|g| {
                    let members: Vec<usize> = (0..n).filter(|&i| q[i] == g).collect();
                    let (mut within, mut between) = (0.0, 0.0);
                    for &i in &members {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            if q[j] == g {
                                within += a[(i, j)];
                            } else {
                                between += a[(i, j)];
                            }
                        }
                    }
                    let m = members.len().max(1) as f64;
                    let (within, between) = (within / m, between / m);
                    QuintileSpillin {
                        quintile: g + 1,
                        units: members.len(),
                        within,
                        between,
                        within_share: share(within, between),
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{UnitEstimate, InstrumentSet};
    use crate::netbuild::{category_from_labels, Provenance};

    fn random_network(seed: u64, n: usize, per_row: usize) -> NetworkMatrix {
        let mut rng = substream(seed, "impact-net", 0);
        let rows = (0..n)
            .map(|i| {
                let mut js: Vec<usize> = Vec::new();
                while js.len() < per_row {
                    let j = rng.random_range(0..n);
                    if j != i && !js.contains(&j) {
                        js.push(j);
                    }
                }
                let ws: Vec<f64> = js.iter().map(|_| rng.random::<f64>() + 0.1).collect();
                let s: f64 = ws.iter().sum();
                js.into_iter().zip(ws).map(|(j, v)| (j, v / s)).collect()
            })
            .collect();
        NetworkMatrix::from_rows(n, rows, Provenance::Imported).unwrap()
    }

    fn random_instance(seed: u64, n: usize, k: usize, psi_max: f64) -> (Vec<f64>, NetworkMatrix, DMatrix<f64>) {
        let w = random_network(seed, n, 3.min(n - 1));
        let mut rng = substream(seed, "impact-params", 0);
        let psi = (0..n).map(|_| rng.random_range(-psi_max..psi_max)).collect();
        let betas = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..2.0));
        (psi, w, betas)
    }

    #[test]
    fn two_unit_closed_form() {
        let w = NetworkMatrix::from_triplets(2, [(0, 1, 1.0), (1, 0, 1.0)], Provenance::Imported).unwrap();
        let im = impact_matrices(&[0.5, 0.5], &w, &DMatrix::from_element(2, 1, 1.0)).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0]);
        assert!((&im.s_inv - expect).amax() < 1e-15);
        let e = effects(&im)[0];
        assert!((e.de - 4.0 / 3.0).abs() < 1e-12);
        assert!((e.te - 2.0).abs() < 1e-12);
        assert!((e.ie - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_network_effect() {
        let (_, w, betas) = random_instance(1, 10, 2, 0.5);
        let im = impact_matrices(&[0.0; 10], &w, &betas).unwrap();
        assert_eq!(im.s_inv, DMatrix::identity(10, 10));
        for (l, a) in im.a.iter().enumerate() {
            assert_eq!(a, &DMatrix::from_diagonal(&betas.column(l).into_owned()));
        }
        assert!(effects(&im).iter().all(|e| e.ie == 0.0));
    }

    #[test]
    fn matches_neumann_series() {
        for seed in 0..10 {
            let (psi, w, betas) = random_instance(seed, 20, 2, 0.85);
            let im = impact_matrices(&psi, &w, &betas).unwrap();
            let mut pw = w.to_dense();
            for i in 0..20 {
                pw.row_mut(i).scale_mut(psi[i]);
            }
            assert!(spectral_radius(&pw) < 0.9);
            let mut sum = DMatrix::identity(20, 20);
            let mut term = DMatrix::identity(20, 20);
            for _ in 1..=60 {
                term = &term * &pw;
                sum += &term;
            }
            for l in 0..2 {
                let b = DMatrix::from_diagonal(&betas.column(l).into_owned());
                assert!((&sum * b - &im.a[l]).amax() < 1e-8);
            }
            for e in effects(&im) {
                assert!((e.de + e.ie - e.te).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unstable_system_is_rejected() {
        let w = NetworkMatrix::from_triplets(2, [(0, 1, 1.0), (1, 0, 1.0)], Provenance::Imported).unwrap();
        let r = impact_matrices(&[1.0, 1.0], &w, &DMatrix::from_element(2, 1, 1.0));
        assert!(matches!(r, Err(Error::Stability { rho }) if (rho - 1.0).abs() < 1e-9));
    }

    #[test]
    fn permutation_equivariance() {
        let (psi, w, betas) = random_instance(3, 15, 2, 0.7);
        let im = impact_matrices(&psi, &w, &betas).unwrap();
        let perm: Vec<usize> = (0..15).map(|i| (i * 7 + 3) % 15).collect();
        let wp = w.permuted(&perm);
        let mut psip = vec![0.0; 15];
        let mut bp = DMatrix::zeros(15, 2);
        for i in 0..15 {
            psip[perm[i]] = psi[i];
            bp.set_row(perm[i], &betas.row(i));
        }
        let imp = impact_matrices(&psip, &wp, &bp).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert!((im.a[0][(i, j)] - imp.a[0][(perm[i], perm[j])]).abs() < 1e-12);
            }
        }
        for (e, f) in effects(&im).iter().zip(effects(&imp)) {
            assert!((e.de - f.de).abs() < 1e-12 && (e.te - f.te).abs() < 1e-12);
        }
    }

    #[test]
    fn schur_kernel_matches_dense() {
        for seed in 0..8 {
            let w = random_network(seed, 30, 2);
            let kern = ScalarMultiplier::new(&w);
            assert!(kern.dense.is_none());
            for &psi in &[-0.9, -0.3, 0.0, 0.4, 0.95] {
                let (a, b) = kern.trace_total(psi);
                let (c, d) = dense_trace_total(&w.to_dense(), psi);
                assert!((a - c).abs() < 1e-9 && (b - d).abs() < 1e-9, "{a} {c} {b} {d}");
            }
            assert!((kern.rho - 1.0).abs() < 1e-9);
        }
    }

    fn mg(theta: Vec<f64>, cov: DMatrix<f64>) -> MGResult {
        let k = theta.len();
        MGResult {
            se: (0..k).map(|p| cov[(p, p)].sqrt()).collect(),
            theta_mg: theta,
            n_units_used: vec![10; k],
            covariance: cov,
        }
    }

    #[test]
    fn simulated_se_cases() {
        let w = random_network(5, 25, 2);
        let zero = mg(vec![0.4, 1.0, -0.5], DMatrix::zeros(3, 3));
        let t = effects_se(&zero, &w, 200, 1).unwrap();
        assert!(t.se.as_ref().unwrap().iter().all(|e| e.de == 0.0 && e.ie == 0.0 && e.te == 0.0));
        // point values agree with the dense route
        let im = impact_matrices(&[0.4; 25], &w, &DMatrix::from_fn(25, 2, |_, l| [1.0, -0.5][l])).unwrap();
        for (a, b) in t.effects.iter().zip(effects(&im)) {
            assert!((a.de - b.de).abs() < 1e-10 && (a.te - b.te).abs() < 1e-10);
        }

        let cov = DMatrix::from_row_slice(3, 3, &[0.002, 0.0, 0.0, 0.0, 0.01, 0.002, 0.0, 0.002, 0.01]);
        let m = mg(vec![0.4, 1.0, -0.5], cov);
        let a = effects_se(&m, &w, 500, 9).unwrap();
        let b = effects_se(&m, &w, 500, 9).unwrap();
        assert_eq!(a, b);
        let single = exec::with_threads(1, || effects_se(&m, &w, 500, 9).unwrap());
        assert_eq!(a, single);
        assert!(matches!(effects_se(&m, &w, 50, 9), Err(Error::Config(_))));
    }

    #[test]
    fn se_converges_with_draws() {
        let w = random_network(6, 40, 2);
        let cov = DMatrix::from_row_slice(2, 2, &[0.003, 0.0005, 0.0005, 0.02]);
        let m = mg(vec![0.3, 0.8], cov);
        let a = effects_se(&m, &w, 2000, 2).unwrap().se.unwrap()[0];
        let b = effects_se(&m, &w, 4000, 2).unwrap().se.unwrap()[0];
        for (x, y) in [(a.de, b.de), (a.ie, b.ie), (a.te, b.te)] {
            assert!(((x - y) / y).abs() < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn too_many_unstable_draws() {
        let w = random_network(7, 10, 2);
        let m = mg(vec![0.95, 1.0], DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.01]));
        assert!(matches!(effects_se(&m, &w, 400, 3), Err(Error::UnreliableSe { .. })));
    }

    #[test]
    fn non_psd_covariance_is_clipped() {
        let w = random_network(8, 12, 2);
        let cov = DMatrix::from_row_slice(2, 2, &[0.001, 0.01, 0.01, 0.001]);
        let m = mg(vec![0.2, 1.0], cov);
        assert!(effects_se(&m, &w, 200, 4).is_ok());
    }

    #[test]
    fn spillin_closure_and_saturation() {
        let mut rng = substream(9, "labels", 0);
        for seed in 0..5 {
            let (psi, w, betas) = random_instance(seed, 20, 2, 0.8);
            let im = impact_matrices(&psi, &w, &betas).unwrap();
            let labels: Vec<String> = (0..20).map(|_| format!("g{}", rng.random_range(0..4))).collect();
            let sp = spillins(&im, &labels).unwrap();
            for (l, s) in sp.iter().enumerate() {
                assert!((s.within + s.between - s.all).abs() < 1e-12);
                let mut masked = 0.0;
                for i in 0..20 {
                    for j in 0..20 {
                        if i != j && labels[i] != labels[j] {
                            masked += im.a[l][(i, j)];
                        }
                    }
                }
                assert!((s.between - masked / 20.0).abs() < 1e-12);
            }
            let one = spillins(&im, &vec!["a".to_string(); 20]).unwrap();
            for s in one {
                assert_eq!(s.between, 0.0);
                assert!((s.within - s.all).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn homogeneous_shares_are_common_across_covariates() {
        let w = random_network(10, 20, 3);
        let betas = DMatrix::from_fn(20, 3, |_, l| [0.5, -2.0, 1.3][l]);
        let im = impact_matrices(&[0.6; 20], &w, &betas).unwrap();
        let labels: Vec<String> = (0..20).map(|i| format!("g{}", i % 3)).collect();
        let sp = spillins(&im, &labels).unwrap();
        for s in &sp[1..] {
            assert!((s.within_share.unwrap() - sp[0].within_share.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn quintile_cases() {
        assert!(matches!(quintiles(&[1.0; 4]), Err(Error::Quantile(_))));
        assert_eq!(quintiles(&[2.0; 10]).unwrap(), vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        let q = quintiles(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!(q, vec![4, 0, 3, 1, 2]);

        // links only inside quintiles
        let size: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let q = quintiles(&size).unwrap();
        let labels: Vec<String> = q.iter().map(|g| g.to_string()).collect();
        let w = category_from_labels(&labels);
        let im = impact_matrices(&[0.5; 25], &w, &DMatrix::from_element(25, 1, 1.0)).unwrap();
        for row in &quintile_spillins(&im, &size).unwrap()[0] {
            assert_eq!(row.within_share, Some(1.0));
            assert_eq!(row.units, 5);
        }
    }

    #[test]
    fn heterogeneous_mode_uses_unit_parameters() {
        let w = NetworkMatrix::from_triplets(3, [(0, 1, 1.0), (1, 0, 1.0)], Provenance::Imported).unwrap();
        let unit = |theta: Vec<f64>, id: bool| UnitEstimate {
            theta,
            sigma: 1.0,
            psi_identified: id,
            condition: 1.0,
            instruments: InstrumentSet::Auto,
        };
        let units = UnitEstimates {
            k: 1,
            units: vec![unit(vec![0.5, 2.0], true), unit(vec![0.1, 1.0], true), unit(vec![3.0], false)],
        };
        let m = mg(vec![0.3, 2.0], DMatrix::zeros(2, 2));
        let im = impact_from_estimates(ImpactMode::Heterogeneous, &m, &units, &w).unwrap();
        assert_eq!(im.psi_diag, vec![0.5, 0.1, 0.0]);
        assert_eq!(im.b_diag[0], vec![2.0, 1.0, 3.0]);
        let hom = impact_from_estimates(ImpactMode::Homogeneous, &m, &units, &w).unwrap();
        assert_eq!(hom.psi_diag, vec![0.3; 3]);
    }
}
