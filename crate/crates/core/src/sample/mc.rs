use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{substream, SampleMatrix};
use crate::dists::GaussianCopulaJoint;
use crate::error::{Error, Result};
use crate::lsf::LimitState;

/// Samples per RNG substream.
pub const BATCH_SIZE: usize = 1 << 16;

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub pf_hat: f64,
    pub n: usize,
    pub n_failures: usize,
    pub ci95: (f64, f64),
    /// Physical-space rows with g ≤ 0, in sampling order.
    #[serde(skip)]
    pub failure_samples: SampleMatrix,
    pub seed: u64,
}

impl McResult {
    pub fn cov(&self) -> f64 {
        if self.n_failures == 0 {
            f64::INFINITY
        } else {
            ((1.0 - self.pf_hat) / (self.n as f64 * self.pf_hat)).sqrt()
        }
    }
}

/// Crude Monte Carlo. The result depends only on `seed`, not on the number
/// of worker threads.
pub fn crude_mc(joint: &GaussianCopulaJoint, lsf: &LimitState, a: Option<f64>, n: usize, seed: u64) -> Result<McResult> {
    if n == 0 {
        return Err(Error::OutOfDomain("crude Monte Carlo needs n >= 1".into()));
    }
    let dim = joint.dim();
    let n_batches = n.div_ceil(BATCH_SIZE);
    let batches: Vec<Result<Vec<f64>>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH_SIZE;
            let len = BATCH_SIZE.min(n - start);
            let mut rng = substream(seed, b as u64);
            let mut u = vec![0.0; dim];
            let mut x = vec![0.0; dim];
            let mut fails = Vec::new();
            for k in 0..len {
                for v in u.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                joint.to_physical_into(&u, &mut x);
                let g = lsf
                    .evaluate(&x, a)
                    .map_err(|e| Error::SampleEval { index: start + k, source: Box::new(e) })?;
                if g <= 0.0 {
                    fails.extend_from_slice(&x);
                }
            }
            Ok(fails)
        })
        .collect();
    let mut data = Vec::new();
    for b in batches {
        data.extend(b?);
    }
    let failure_samples = SampleMatrix::from_rows(dim.max(1), data);
    let n_failures = failure_samples.nrows();
    let p = n_failures as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    Ok(McResult {
        pf_hat: p,
        n,
        n_failures,
        ci95: ((p - half).max(0.0), (p + half).min(1.0)),
        failure_samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{Marginal, MarginalKind};

    fn example1() -> (GaussianCopulaJoint, LimitState) {
        let m = [(100.0, 0.2), (40.0, 0.25), (1.0, 0.1), (1.0, 0.2)]
            .iter()
            .map(|&(mu, c)| Marginal::from_moments(MarginalKind::Lognormal, mu, c).unwrap())
            .collect();
        (GaussianCopulaJoint::independent(m), LimitState::builtin("example1_safety").unwrap())
    }

    #[test]
    fn certain_failure() {
        let j = GaussianCopulaJoint::independent(vec![Marginal::normal(0.0, 1.0).unwrap()]);
        let names = vec!["X".to_string()];
        let g = LimitState::from_expression("-1 + 0*X", &names).unwrap();
        let r = crude_mc(&j, &g, None, 1000, 1).unwrap();
        assert_eq!(r.pf_hat, 1.0);
        assert_eq!(r.failure_samples.nrows(), 1000);
    }

    #[test]
    fn failure_rows_have_nonpositive_g() {
        let (j, g) = example1();
        let r = crude_mc(&j, &g, None, 100_000, 3).unwrap();
        for row in r.failure_samples.rows() {
            assert!(g.evaluate(row, None).unwrap() <= 0.0);
        }
        assert_eq!(r.n_failures, r.failure_samples.nrows());
        assert_eq!(r.pf_hat, r.n_failures as f64 / 1e5);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let (j, g) = example1();
        let a = crude_mc(&j, &g, None, 200_000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| crude_mc(&j, &g, None, 200_000, 42).unwrap());
        assert_eq!(a.pf_hat, b.pf_hat);
        assert_eq!(a.failure_samples, b.failure_samples);
        let c = crude_mc(&j, &g, None, 200_000, 43).unwrap();
        assert_ne!(a.failure_samples, c.failure_samples);
    }

    #[test]
    fn example1_million_samples() {
        let (j, g) = example1();
        let r = crude_mc(&j, &g, None, 1_000_000, 7).unwrap();
        let pf = 7.357_872_962_414_236e-3;
        let sigma = (pf * (1.0 - pf) / 1e6_f64).sqrt();
        assert!((r.pf_hat - pf).abs() < 3.0 * sigma, "{}", r.pf_hat);
    }

    #[test]
    fn ci_coverage() {
        let (j, g) = example1();
        let pf = 7.357_872_962_414_236e-3;
        let hits = (0..200u64)
            .filter(|&s| {
                let r = crude_mc(&j, &g, None, 100_000, 1000 + s).unwrap();
                r.ci95.0 <= pf && pf <= r.ci95.1
            })
            .count();
        assert!(hits >= 180, "{hits}/200");
    }

    #[test]
    fn evaluation_errors_carry_index() {
        let j = GaussianCopulaJoint::independent(vec![Marginal::normal(0.0, 1.0).unwrap()]);
        let names = vec!["X".to_string()];
        let g = LimitState::from_expression("ln(X)", &names).unwrap();
        match crude_mc(&j, &g, None, 100, 1) {
            Err(Error::SampleEval { index, .. }) => assert!(index < 100),
            other => panic!("{other:?}"),
        }
    }
}
