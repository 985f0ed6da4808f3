//! Closed-form reliability for limit states linear in ln X with lognormal
//! inputs: g = const + Σ c_i ln X_i.

use nalgebra::{DMatrix, DVector};

use super::joint::GaussianCopulaJoint;
use super::marginal::MarginalKind;
use super::special::std_normal_cdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LognormalLinearProblem {
    pub const_term: f64,
    pub coeffs: Vec<f64>,
    pub mu_ln: Vec<f64>,
    pub c_ln: DMatrix<f64>,
}

impl LognormalLinearProblem {
    pub fn new(const_term: f64, coeffs: Vec<f64>, mu_ln: Vec<f64>, c_ln: DMatrix<f64>) -> Result<Self> {
        let n = mu_ln.len();
        if coeffs.len() != n || c_ln.nrows() != n || c_ln.ncols() != n {
            return Err(Error::InvalidParameters("coefficient, mean and covariance sizes differ".into()));
        }
        Ok(LognormalLinearProblem { const_term, coeffs, mu_ln, c_ln })
    }

    /// Builds the log-space moments from a joint whose marginals are all
    /// lognormal; the copula correlation is exactly the correlation of ln X.
    pub fn from_joint(joint: &GaussianCopulaJoint, coeffs: Vec<f64>, const_term: f64) -> Result<Self> {
        let n = joint.dim();
        let mut mu = Vec::with_capacity(n);
        let mut sig = Vec::with_capacity(n);
        for (i, m) in joint.marginals().iter().enumerate() {
            if m.kind() != MarginalKind::Lognormal {
                return Err(Error::InvalidParameters(format!("input {i} is {}, expected lognormal", m.kind())));
            }
            let (a, b) = m.params();
            mu.push(a);
            sig.push(b);
        }
        let rz = joint.r_z();
        let c = DMatrix::from_fn(n, n, |i, j| rz.get(i, j) * sig[i] * sig[j]);
        Self::new(const_term, coeffs, mu, c)
    }

    pub fn with_const(&self, const_term: f64) -> Self {
        LognormalLinearProblem { const_term, ..self.clone() }
    }

    /// Mean and variance of g.
    pub fn moments(&self) -> (f64, f64) {
        let c = DVector::from_column_slice(&self.coeffs);
        let mean = self.const_term + c.dot(&DVector::from_column_slice(&self.mu_ln));
        let var = (c.transpose() * &self.c_ln * &c)[(0, 0)];
        (mean, var)
    }

    pub fn pf(&self) -> Result<f64> {
        let (m, v) = self.moments();
        if !(v > 0.0) {
            return Err(Error::Degenerate("limit state has zero variance".into()));
        }
        Ok(std_normal_cdf(-m / v.sqrt()))
    }

    /// Reliability index β = E[g]/sd[g].
    pub fn beta(&self) -> Result<f64> {
        let (m, v) = self.moments();
        if !(v > 0.0) {
            return Err(Error::Degenerate("limit state has zero variance".into()));
        }
        Ok(m / v.sqrt())
    }

    /// p_F given X_i = x_i, by Gaussian conditioning of ln X on ln x_i.
    pub fn conditional_pf(&self, i: usize, x_i: f64) -> Result<f64> {
        if !(x_i > 0.0) {
            return Err(Error::OutOfDomain(format!("x_{i} = {x_i} must be positive")));
        }
        let (m, v) = self.moments();
        let cii = self.c_ln[(i, i)];
        let cov_gi: f64 = (0..self.coeffs.len()).map(|j| self.coeffs[j] * self.c_ln[(j, i)]).sum();
        let mean = m + cov_gi / cii * (x_i.ln() - self.mu_ln[i]);
        let var = v - cov_gi * cov_gi / cii;
        if !(var > v * 1e-14) {
            return Err(Error::Degenerate(format!("g is a deterministic function of input {i}")));
        }
        Ok(std_normal_cdf(-mean / var.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{CorrelationMatrix, Marginal};
    use crate::numeric::integrate_adaptive;

    fn example1(dependent: bool) -> GaussianCopulaJoint {
        let m = vec![
            Marginal::from_moments(MarginalKind::Lognormal, 100.0, 0.2).unwrap(),
            Marginal::from_moments(MarginalKind::Lognormal, 40.0, 0.25).unwrap(),
            Marginal::from_moments(MarginalKind::Lognormal, 1.0, 0.1).unwrap(),
            Marginal::from_moments(MarginalKind::Lognormal, 1.0, 0.2).unwrap(),
        ];
        if !dependent {
            return GaussianCopulaJoint::independent(m);
        }
        let r = CorrelationMatrix::from_rows(&[
            vec![1.0, 0.0, 0.5, 0.0],
            vec![0.0, 1.0, 0.0, 0.5],
            vec![0.5, 0.0, 1.0, 0.5],
            vec![0.0, 0.5, 0.5, 1.0],
        ])
        .unwrap();
        GaussianCopulaJoint::new(m, r).unwrap()
    }

    fn problem(dependent: bool) -> LognormalLinearProblem {
        LognormalLinearProblem::from_joint(&example1(dependent), vec![1.0, -1.0, 1.0, -1.0], 0.0).unwrap()
    }

    #[test]
    fn example1_pf() {
        assert!((problem(false).pf().unwrap() / 7.4e-3 - 1.0).abs() < 0.01);
        assert!((problem(true).pf().unwrap() / 1.7e-2 - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let p = LognormalLinearProblem::new(1.0, vec![1.0], vec![0.0], DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(p.pf(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn shrinking_variance_drives_pf_to_zero() {
        let p = LognormalLinearProblem::new(0.5, vec![1.0], vec![0.0], DMatrix::from_element(1, 1, 1e-6)).unwrap();
        assert!(p.pf().unwrap() < 1e-100);
    }

    #[test]
    fn conditional_matches_two_dimensional_quadrature() {
        // ln R + ln XR - ln S at R's median: brute force over (S, XR)
        let j = example1(false);
        let p = LognormalLinearProblem::from_joint(&j, vec![1.0, -1.0, 1.0, -1.0], 0.0).unwrap();
        let r_med = j.marginal(0).inv_cdf(0.5).unwrap();
        let got = p.conditional_pf(0, r_med).unwrap();
        let (s, xr, xs) = (j.marginal(1), j.marginal(2), j.marginal(3));
        let lr = r_med.ln();
        let inner = |ls: f64| {
            let f = |lxr: f64| {
                // P(ln XS ≥ lr + lxr - ls)
                let t = lr + lxr - ls;
                xs.sf(t.exp()) * std_normal_pdf_ln(xr, lxr)
            };
            integrate_adaptive(&f, -2.0, 2.0, 1e-12, 1e-16).0 * std_normal_pdf_ln(s, ls)
        };
        let want = integrate_adaptive(&inner, 2.0, 5.5, 1e-11, 1e-16).0;
        assert!((got / want - 1.0).abs() < 1e-7, "{got} vs {want}");
    }

    fn std_normal_pdf_ln(m: &crate::dists::Marginal, l: f64) -> f64 {
        let x = l.exp();
        m.pdf(x) * x
    }

    #[test]
    fn law_of_total_probability() {
        for dependent in [false, true] {
            let p = problem(dependent);
            let j = example1(dependent);
            let pf = p.pf().unwrap();
            for i in 0..4 {
                let m = j.marginal(i);
                let f = |u: f64| {
                    let x = m.from_standard(u);
                    p.conditional_pf(i, x).unwrap() * crate::dists::std_normal_pdf(u)
                };
                let (v, _) = integrate_adaptive(&f, -12.0, 12.0, 1e-12, 1e-18);
                assert!((v / pf - 1.0).abs() < 1e-6, "input {i}: {v} vs {pf}");
            }
        }
    }

    #[test]
    fn conditional_crosses_threshold_in_r() {
        let p = problem(false);
        let r_med = (p.mu_ln[0]).exp();
        assert!(p.conditional_pf(0, r_med).unwrap() < 1e-2);
        assert!(p.conditional_pf(0, 50.0).unwrap() > 1e-2);
    }
}
