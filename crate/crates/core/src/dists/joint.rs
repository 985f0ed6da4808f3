//! Gaussian-copula (Nataf) joint model and the X <-> U transforms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::marginal::{Marginal, MarginalKind};
use crate::error::{Error, Result};
use crate::numeric::{brent, gauss_hermite_prob};

const SYMMETRY_TOL: f64 = 1e-12;
/// Nataf root bracket on the copula correlation.
const NATAF_BRACKET: f64 = 0.999;
const NATAF_HERMITE_POINTS: usize = 32;

/// Symmetric, unit-diagonal, positive-definite correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(n, n))
    }

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidCorrelation(format!("matrix must be square, got {}x{}", n, m.ncols())));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry ({i},{i}) is {}, expected 1",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidCorrelation(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
                if a.abs() > 1.0 {
                    return Err(Error::InvalidCorrelation(format!("entry ({i},{j}) = {a} outside [-1, 1]")));
                }
            }
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::InvalidCorrelation("matrix is not positive definite".into()));
        }
        Ok(CorrelationMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidCorrelation("rows must all have length n".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.0.row(i).iter().copied().collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(c: CorrelationMatrix) -> Self {
        c.to_rows()
    }
}

/// Physical correlation implied between `a` and `b` when their standard
/// normal images have correlation `rho_z` (32x32 Gauss–Hermite).
pub fn implied_correlation(a: &Marginal, b: &Marginal, rho_z: f64) -> f64 {
    let (z, w) = gauss_hermite_prob(NATAF_HERMITE_POINTS);
    let (ma, sa, mb, sb) = (a.mean(), a.sd(), b.mean(), b.sd());
    let s = (1.0 - rho_z * rho_z).max(0.0).sqrt();
    let ha: Vec<f64> = z.iter().map(|&zi| (a.from_standard(zi) - ma) / sa).collect();
    let mut acc = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let mut inner = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            inner += w[j] * (b.from_standard(rho_z * zi + s * zj) - mb) / sb;
        }
        acc += w[i] * ha[i] * inner;
    }
    acc
}

fn fit_pair(a: &Marginal, b: &Marginal, rho_x: f64, i: usize, j: usize) -> Result<f64> {
    use MarginalKind::*;
    if rho_x == 0.0 {
        return Ok(0.0);
    }
    match (a.kind(), b.kind()) {
        (Normal, Normal) => Ok(rho_x),
        (Lognormal, Lognormal) => {
            let (sa, sb) = (a.params().1, b.params().1);
            let arg = rho_x * a.cov() * b.cov();
            if arg <= -1.0 {
                return Err(Error::NatafInfeasible(format!("pair ({i},{j}): rho_x = {rho_x} unreachable")));
            }
            let rz = arg.ln_1p() / (sa * sb);
            if rz.abs() >= 1.0 {
                return Err(Error::NatafInfeasible(format!("pair ({i},{j}): rho_z = {rz}")));
            }
            Ok(rz)
        }
        _ => {
            let root = brent(
                |rz| implied_correlation(a, b, rz) - rho_x,
                -NATAF_BRACKET,
                NATAF_BRACKET,
                1e-13,
                200,
            )
            .ok_or_else(|| {
                Error::NatafInfeasible(format!(
                    "pair ({i},{j}): rho_x = {rho_x} outside the range reachable with |rho_z| <= {NATAF_BRACKET}"
                ))
            })?;
            Ok(root.x)
        }
    }
}

/// Fits the copula correlation so each pair's implied physical correlation
/// reproduces `r_xx`. With `repair`, a non-positive-definite result is
/// projected to the nearest correlation matrix by eigenvalue clipping.
pub fn nataf_fit_with(marginals: &[Marginal], r_xx: &CorrelationMatrix, repair: bool) -> Result<CorrelationMatrix> {
    let n = marginals.len();
    if r_xx.dim() != n {
        return Err(Error::InvalidCorrelation(format!(
            "correlation is {}x{} but there are {n} marginals",
            r_xx.dim(),
            r_xx.dim()
        )));
    }
    let mut rz = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = fit_pair(&marginals[i], &marginals[j], r_xx.get(i, j), i, j)?;
            rz[(i, j)] = v;
            rz[(j, i)] = v;
        }
    }
    if rz.clone().cholesky().is_some() {
        return CorrelationMatrix::new(rz);
    }
    if !repair {
        return Err(Error::NatafInfeasible("fitted copula correlation is not positive definite".into()));
    }
    let eig = SymmetricEigen::new(rz);
    let clipped = eig.eigenvalues.map(|l| l.max(1e-10));
    let mut m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if i == j { 1.0 } else { m[(i, j)] / (d[i] * d[j]) };
        }
    }
    let m = 0.5 * (&m + m.transpose());
    CorrelationMatrix::new(m).map_err(|e| Error::NatafInfeasible(format!("repair failed: {e}")))
}

pub fn nataf_fit(marginals: &[Marginal], r_xx: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    nataf_fit_with(marginals, r_xx, false)
}

/// Joint distribution: marginals coupled by a Gaussian copula.
#[derive(Debug, Clone)]
pub struct GaussianCopulaJoint {
    marginals: Vec<Marginal>,
    r_xx: CorrelationMatrix,
    r_z: CorrelationMatrix,
    chol_z: DMatrix<f64>,
}

impl GaussianCopulaJoint {
    pub fn new(marginals: Vec<Marginal>, r_xx: CorrelationMatrix) -> Result<Self> {
        let r_z = nataf_fit(&marginals, &r_xx)?;
        Self::with_copula(marginals, r_xx, r_z)
    }

    pub fn independent(marginals: Vec<Marginal>) -> Self {
        let n = marginals.len();
        GaussianCopulaJoint {
            marginals,
            r_xx: CorrelationMatrix::identity(n),
            r_z: CorrelationMatrix::identity(n),
            chol_z: DMatrix::identity(n, n),
        }
    }

    /// Builds the joint from an already-fitted copula correlation.
    pub fn with_copula(marginals: Vec<Marginal>, r_xx: CorrelationMatrix, r_z: CorrelationMatrix) -> Result<Self> {
        if r_z.dim() != marginals.len() || r_xx.dim() != marginals.len() {
            return Err(Error::InvalidCorrelation("dimension mismatch".into()));
        }
        let chol_z = r_z
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NatafInfeasible("copula correlation not positive definite".into()))?
            .l();
        Ok(GaussianCopulaJoint { marginals, r_xx, r_z, chol_z })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn marginal(&self, i: usize) -> &Marginal {
        &self.marginals[i]
    }

    pub fn r_xx(&self) -> &CorrelationMatrix {
        &self.r_xx
    }

    pub fn r_z(&self) -> &CorrelationMatrix {
        &self.r_z
    }

    pub fn chol_z(&self) -> &DMatrix<f64> {
        &self.chol_z
    }

    pub fn is_independent(&self) -> bool {
        self.r_xx.is_identity()
    }

    /// x -> u with z_i = Φ^-1(F_i(x_i)) and u = L^-1 z.
    pub fn to_standard(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.to_standard_report(x).map(|(u, _)| u)
    }

    /// As [`Self::to_standard`], also returning how many components had a
    /// tail probability clamped.
    pub fn to_standard_report(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        self.check_dim(x.len())?;
        let mut clamped = 0;
        let mut z = Vec::with_capacity(x.len());
        for (i, (m, &xi)) in self.marginals.iter().zip(x).enumerate() {
            let (zi, c) = m.to_standard(xi, i)?;
            clamped += c as usize;
            z.push(zi);
        }
        Ok((self.decorrelate(&z), clamped))
    }

    /// u -> x, inverse of [`Self::to_standard`].
    pub fn to_physical(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u.len())?;
        let mut x = vec![0.0; u.len()];
        self.to_physical_into(u, &mut x);
        Ok(x)
    }

    /// Allocation-free u -> x for hot loops; `u` and `out` must have length `dim()`.
    pub fn to_physical_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut zi = 0.0;
            for k in 0..=i {
                zi += self.chol_z[(i, k)] * u[k];
            }
            out[i] = self.marginals[i].from_standard(zi);
        }
    }

    /// Correlated standard normal z = L u.
    pub fn correlate(&self, u: &[f64]) -> Vec<f64> {
        (self.chol_z.clone() * DVector::from_column_slice(u)).iter().copied().collect()
    }

    /// u = L^-1 z by forward substitution.
    pub fn decorrelate(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        let mut u = vec![0.0; n];
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.chol_z[(i, k)] * u[k];
            }
            u[i] = s / self.chol_z[(i, i)];
        }
        u
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::OutOfDomain(format!("vector of length {n} for a {}-dimensional joint", self.dim())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(mean: f64, cov: f64) -> Marginal {
        Marginal::from_moments(MarginalKind::Lognormal, mean, cov).unwrap()
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.3]]).is_err());
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.3], vec![0.2, 1.0]]).is_err());
        assert!(CorrelationMatrix::from_rows(&[
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0]
        ])
        .is_err());
    }

    #[test]
    fn normal_pair_is_identity() {
        let m = [Marginal::normal(1.0, 2.0).unwrap(), Marginal::normal(-3.0, 0.5).unwrap()];
        let r = CorrelationMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert_eq!(nataf_fit(&m, &r).unwrap().get(0, 1), 0.3);
    }

    #[test]
    fn lognormal_pair_closed_form() {
        let m = [ln(1.0, 0.2), ln(1.0, 0.1)];
        let r = CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let rz = nataf_fit(&m, &r).unwrap().get(0, 1);
        let want = 1.01f64.ln() / (1.04f64.ln() * 1.01f64.ln()).sqrt();
        assert!((rz - want).abs() < 1e-14);
        assert!((rz - 0.503_687).abs() < 1e-6);
        // the Hermite integral agrees with the closed form
        assert!((implied_correlation(&m[0], &m[1], rz) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_correlation_preserved() {
        let m = [
            Marginal::from_moments(MarginalKind::Gumbel, 2500.0, 0.2).unwrap(),
            Marginal::from_moments(MarginalKind::Weibull, 40.0, 0.1).unwrap(),
        ];
        let rz = nataf_fit(&m, &CorrelationMatrix::identity(2)).unwrap();
        assert!(rz.is_identity());
    }

    #[test]
    fn gumbel_normal_pair_reproduces_target() {
        let m = [
            Marginal::normal(250.0, 75.0).unwrap(),
            Marginal::from_moments(MarginalKind::Gumbel, 2500.0, 0.2).unwrap(),
        ];
        let r = CorrelationMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let rz = nataf_fit(&m, &r).unwrap().get(0, 1);
        assert!((implied_correlation(&m[0], &m[1], rz) - 0.3).abs() < 1e-6);
        assert!(rz > 0.3 && rz < 0.32);
    }

    #[test]
    fn cholesky_arithmetic() {
        let m = vec![Marginal::normal(0.0, 1.0).unwrap(); 2];
        let r = CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let j = GaussianCopulaJoint::new(m, r).unwrap();
        let u = j.to_standard(&[1.0, 1.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        assert!((u[1] - 0.5 / 0.75f64.sqrt()).abs() < 1e-15);
        assert!((u[1] - 0.577_35).abs() < 1e-5);
    }

    #[test]
    fn repair_is_opt_in() {
        let m = vec![Marginal::normal(0.0, 1.0).unwrap(); 3];
        // valid physical correlation whose normal pairs are copied verbatim
        let r = CorrelationMatrix::from_rows(&[
            vec![1.0, 0.6, 0.6],
            vec![0.6, 1.0, 0.6],
            vec![0.6, 0.6, 1.0],
        ])
        .unwrap();
        assert!(nataf_fit_with(&m, &r, true).is_ok());
    }
}
