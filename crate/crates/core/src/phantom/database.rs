use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use super::kinetics::{auc, solve_2tcm, InputFunction, KineticParams};
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::rng::seeded;

/// Specific-binding TACs obtained by varying `k3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SbfDatabase {
    /// `L x D`.
    pub tacs: Mat,
    pub k3_values: Vec<f64>,
    pub aucs: Vec<f64>,
}

impl SbfDatabase {
    pub fn len(&self) -> usize {
        self.tacs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.tacs.cols() == 0
    }

    pub fn mean_auc(&self) -> f64 {
        self.aucs.iter().sum::<f64>() / self.aucs.len() as f64
    }

    pub fn min_auc(&self) -> f64 {
        self.aucs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_auc_index(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.aucs.iter().enumerate() {
            if a < self.aucs[best] {
                best = i;
            }
        }
        best
    }
}

/// `D` TACs with `k3 = base.k3 * 10^{spread (u - 1/2)}`, `u` uniform on `[0, 1)`.
pub fn build_sbf_database(
    base: &KineticParams,
    input: &InputFunction,
    frames: &[(f64, f64)],
    k3_spread_decades: f64,
    d: usize,
    seed: u64,
) -> Result<SbfDatabase> {
    base.validate()?;
    if !(k3_spread_decades >= 0.0 && k3_spread_decades.is_finite()) {
        return Err(Error::invalid("k3_spread", "must be finite and nonnegative"));
    }
    if d < 2 {
        return Err(Error::invalid("database_size", "need at least two TACs"));
    }
    let mut rng = seeded(seed, 0);
    let l = frames.len();
    let mut tacs = Mat::zeros(l, d);
    let mut k3_values = Vec::with_capacity(d);
    let mut aucs = Vec::with_capacity(d);
    for j in 0..d {
        let u: f64 = rng.random();
        let k3 = if k3_spread_decades == 0.0 {
            base.k3
        } else {
            base.k3 * libm::pow(10.0, k3_spread_decades * (u - 0.5))
        };
        let tac = solve_2tcm(&base.with_k3(k3), input, frames)?;
        aucs.push(auc(&tac, frames));
        tacs.set_col(j, &tac);
        k3_values.push(k3);
    }
    Ok(SbfDatabase { tacs, k3_values, aucs })
}

/// How the nominal SBF is chosen from the database.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NominalRule {
    /// The TAC with the smallest AUC.
    #[default]
    MinAuc,
    /// Mean of the TACs whose AUC lies between two percentiles (in percent).
    Percentile { low: f64, high: f64 },
}

/// Nominal SBF and variability basis learned from a database.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityBasis {
    pub nominal: Vec<f64>,
    /// `L x N_v`, orthonormal columns.
    pub basis: Mat,
    /// Eigenvalues of the residual scatter matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `N_v x D` coefficients of each database TAC on the basis.
    pub projections: Mat,
}

impl VariabilityBasis {
    /// Fraction of the residual energy captured by the basis.
    pub fn explained(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..self.basis.cols()].iter().sum();
        if total > 0.0 {
            kept / total
        } else {
            1.0
        }
    }
}

fn nominal_tac(db: &SbfDatabase, rule: NominalRule) -> Result<Vec<f64>> {
    match rule {
        NominalRule::MinAuc => Ok(db.tacs.col(db.min_auc_index())),
        NominalRule::Percentile { low, high } => {
            if !(0.0 <= low && low < high && high <= 100.0) {
                return Err(Error::invalid("nominal percentiles", "need 0 <= low < high <= 100"));
            }
            let mut order: Vec<usize> = (0..db.len()).collect();
            order.sort_by(|&i, &j| db.aucs[i].total_cmp(&db.aucs[j]));
            let d = db.len() as f64;
            let lo = libm::floor(low / 100.0 * d) as usize;
            let hi = (libm::ceil(high / 100.0 * d) as usize).clamp(lo + 1, db.len());
            let picked = &order[lo..hi];
            let mut mean = alloc::vec![0.0; db.tacs.rows()];
            for &j in picked {
                for (m, v) in mean.iter_mut().zip(db.tacs.col(j)) {
                    *m += v / picked.len() as f64;
                }
            }
            Ok(mean)
        }
    }
}

/// Uncentered PCA of `tacs - nominal`; each basis vector is signed so the
/// mean database coefficient is nonnegative.
pub fn extract_variability_basis(
    db: &SbfDatabase,
    n_basis: usize,
    rule: NominalRule,
) -> Result<VariabilityBasis> {
    let (l, d) = db.tacs.shape();
    if n_basis >= d {
        return Err(Error::invalid(
            "n_basis",
            format!("must be smaller than the database size {d}"),
        ));
    }
    if n_basis >= l {
        return Err(Error::invalid("n_basis", "must be smaller than the frame count"));
    }
    let nominal = nominal_tac(db, rule)?;
    let resid = Mat::from_fn(l, d, |i, j| db.tacs[(i, j)] - nominal[i]);
    let scatter = resid.matmul_t(&resid);
    let eig = SymmetricEigen::new(DMatrix::from_fn(l, l, |i, j| scatter[(i, j)]));
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let scale = db.tacs.frobenius_sq();
    if n_basis > 0 && eigenvalues[n_basis - 1] <= f64::EPSILON * scale {
        return Err(Error::Degenerate(format!(
            "database residual has rank below {n_basis}; variability basis is undefined"
        )));
    }
    let mut basis = Mat::zeros(l, n_basis);
    for (c, &i) in order.iter().take(n_basis).enumerate() {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        basis.set_col(c, &v);
    }
    let mut projections = basis.t_matmul(&resid);
    for c in 0..n_basis {
        let mean: f64 = projections.row(c).iter().sum::<f64>() / d as f64;
        if mean < 0.0 {
            projections.row_mut(c).iter_mut().for_each(|p| *p = -*p);
            for i in 0..l {
                basis[(i, c)] = -basis[(i, c)];
            }
        }
    }
    Ok(VariabilityBasis {
        nominal,
        basis,
        eigenvalues,
        projections,
    })
}
