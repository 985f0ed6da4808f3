use serde::{Deserialize, Serialize};

use super::special::{std_normal_cdf, std_normal_inv, std_normal_pdf};
use crate::error::{Error, Result};
use crate::numeric::brent;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Smallest tail probability passed to the normal quantile.
pub const TAIL_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalKind {
    Normal,
    Lognormal,
    Gumbel,
    Weibull,
}

impl std::fmt::Display for MarginalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MarginalKind::Normal => "normal",
            MarginalKind::Lognormal => "lognormal",
            MarginalKind::Gumbel => "gumbel",
            MarginalKind::Weibull => "weibull",
        };
        f.write_str(s)
    }
}

/// A univariate distribution in its native parameters:
///
/// | kind      | `p1`                 | `p2`                  |
/// |-----------|----------------------|-----------------------|
/// | Normal    | mean                 | standard deviation    |
/// | Lognormal | mean of ln X         | std. dev. of ln X     |
/// | Gumbel    | location (max-type)  | scale                 |
/// | Weibull   | shape                | scale                 |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    kind: MarginalKind,
    p1: f64,
    p2: f64,
}

impl Marginal {
    pub fn new(kind: MarginalKind, p1: f64, p2: f64) -> Result<Self> {
        let ok = p1.is_finite()
            && p2.is_finite()
            && p2 > 0.0
            && (kind != MarginalKind::Weibull || p1 > 0.0);
        if !ok {
            return Err(Error::InvalidParameters(format!("{kind}({p1}, {p2})")));
        }
        Ok(Marginal { kind, p1, p2 })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(MarginalKind::Normal, mean, sd)
    }

    pub fn lognormal(mu_ln: f64, sigma_ln: f64) -> Result<Self> {
        Self::new(MarginalKind::Lognormal, mu_ln, sigma_ln)
    }

    pub fn gumbel(location: f64, scale: f64) -> Result<Self> {
        Self::new(MarginalKind::Gumbel, location, scale)
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Self::new(MarginalKind::Weibull, shape, scale)
    }

    /// Fits native parameters to a mean and coefficient of variation.
    pub fn from_moments(kind: MarginalKind, mean: f64, cov: f64) -> Result<Self> {
        if !(cov > 0.0 && cov.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParameters(format!("{kind} with mean {mean}, c.o.v. {cov}")));
        }
        if kind != MarginalKind::Normal && mean <= 0.0 {
            return Err(Error::InvalidParameters(format!("{kind} requires a positive mean, got {mean}")));
        }
        if kind == MarginalKind::Normal && mean == 0.0 {
            return Err(Error::InvalidParameters("normal with zero mean has no c.o.v.".into()));
        }
        let sd = cov * mean.abs();
        match kind {
            MarginalKind::Normal => Self::normal(mean, sd),
            MarginalKind::Lognormal => {
                let s2 = (cov * cov).ln_1p();
                Self::lognormal(mean.ln() - 0.5 * s2, s2.sqrt())
            }
            MarginalKind::Gumbel => {
                let scale = sd * 6f64.sqrt() / std::f64::consts::PI;
                Self::gumbel(mean - EULER_GAMMA * scale, scale)
            }
            MarginalKind::Weibull => {
                // c.o.v. is strictly decreasing in the shape; solve in ln(shape).
                let resid = |ln_k: f64| weibull_cov(ln_k.exp()) - cov;
                let root = brent(resid, (0.02f64).ln(), (1e4f64).ln(), 1e-15, 300)
                    .ok_or(Error::FitFailure { kind: kind.to_string(), residual: f64::NAN })?;
                let shape = root.x.exp();
                let residual = weibull_cov(shape) - cov;
                if !root.converged || residual.abs() > 1e-10 * cov {
                    return Err(Error::FitFailure { kind: kind.to_string(), residual });
                }
                let scale = mean / libm::tgamma(1.0 + 1.0 / shape);
                Self::weibull(shape, scale)
            }
        }
    }

    pub fn kind(&self) -> MarginalKind {
        self.kind
    }

    pub fn params(&self) -> (f64, f64) {
        (self.p1, self.p2)
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            MarginalKind::Normal => self.p1,
            MarginalKind::Lognormal => (self.p1 + 0.5 * self.p2 * self.p2).exp(),
            MarginalKind::Gumbel => self.p1 + EULER_GAMMA * self.p2,
            MarginalKind::Weibull => self.p2 * libm::tgamma(1.0 + 1.0 / self.p1),
        }
    }

    pub fn sd(&self) -> f64 {
        match self.kind {
            MarginalKind::Normal => self.p2,
            MarginalKind::Lognormal => self.mean() * (self.p2 * self.p2).exp_m1().sqrt(),
            MarginalKind::Gumbel => self.p2 * std::f64::consts::PI / 6f64.sqrt(),
            MarginalKind::Weibull => self.mean() * weibull_cov(self.p1),
        }
    }

    /// Coefficient of variation, sd / |mean|.
    pub fn cov(&self) -> f64 {
        self.sd() / self.mean().abs()
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self.kind {
            MarginalKind::Normal | MarginalKind::Gumbel => x.is_finite(),
            MarginalKind::Lognormal => x > 0.0 && x.is_finite(),
            MarginalKind::Weibull => x >= 0.0 && x.is_finite(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => std_normal_pdf((x - a) / b) / b,
            MarginalKind::Lognormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_pdf((x.ln() - a) / b) / (b * x)
                }
            }
            MarginalKind::Gumbel => {
                let z = (x - a) / b;
                (-(z + (-z).exp())).exp() / b
            }
            MarginalKind::Weibull => {
                if x < 0.0 {
                    0.0
                } else {
                    let t = x / b;
                    a / b * t.powf(a - 1.0) * (-t.powf(a)).exp()
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => std_normal_cdf((x - a) / b),
            MarginalKind::Lognormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - a) / b)
                }
            }
            MarginalKind::Gumbel => (-(-(x - a) / b).exp()).exp(),
            MarginalKind::Weibull => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / b).powf(a)).exp_m1()
                }
            }
        }
    }

    /// Survival function 1 - F(x), accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => std_normal_cdf(-(x - a) / b),
            MarginalKind::Lognormal => {
                if x <= 0.0 {
                    1.0
                } else {
                    std_normal_cdf(-(x.ln() - a) / b)
                }
            }
            MarginalKind::Gumbel => -(-(-(x - a) / b).exp()).exp_m1(),
            MarginalKind::Weibull => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-(x / b).powf(a)).exp()
                }
            }
        }
    }

    /// Quantile function F^-1(p).
    pub fn inv_cdf(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OutOfDomain(format!("{} quantile requires 0 < p < 1, got {p}", self.kind)));
        }
        Ok(if p <= 0.5 { self.quantile_lower(p) } else { self.quantile_upper(1.0 - p) })
    }

    fn quantile_lower(&self, p: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => a + b * std_normal_inv(p).unwrap_or(f64::NEG_INFINITY),
            MarginalKind::Lognormal => (a + b * std_normal_inv(p).unwrap_or(f64::NEG_INFINITY)).exp(),
            MarginalKind::Gumbel => a - b * (-p.ln()).ln(),
            MarginalKind::Weibull => b * (-(-p).ln_1p()).powf(1.0 / a),
        }
    }

    /// Inverse survival function, S^-1(q), q = 1 - p.
    fn quantile_upper(&self, q: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => a - b * std_normal_inv(q).unwrap_or(f64::NEG_INFINITY),
            MarginalKind::Lognormal => (a - b * std_normal_inv(q).unwrap_or(f64::NEG_INFINITY)).exp(),
            MarginalKind::Gumbel => a - b * (-(-q).ln_1p()).ln(),
            MarginalKind::Weibull => b * (-q.ln()).powf(1.0 / a),
        }
    }

    /// Maps `x` to the standard normal quantile `Φ^-1(F(x))`.
    ///
    /// Returns the value and whether a tail probability had to be clamped to
    /// [`TAIL_CLAMP`]. Points outside the support are an error for
    /// `component`.
    pub fn to_standard(&self, x: f64, component: usize) -> Result<(f64, bool)> {
        if !self.in_support(x) {
            return Err(Error::Support { component, value: x });
        }
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => Ok(((x - a) / b, false)),
            MarginalKind::Lognormal => Ok(((x.ln() - a) / b, false)),
            _ => {
                let p = self.cdf(x);
                if p <= 0.5 {
                    let clamped = p < TAIL_CLAMP;
                    Ok((std_normal_inv(p.max(TAIL_CLAMP))?, clamped))
                } else {
                    let q = self.sf(x);
                    let clamped = q < TAIL_CLAMP;
                    Ok((-std_normal_inv(q.max(TAIL_CLAMP))?, clamped))
                }
            }
        }
    }

    /// Inverse of [`Marginal::to_standard`]: `F^-1(Φ(u))`.
    pub fn from_standard(&self, u: f64) -> f64 {
        let (a, b) = (self.p1, self.p2);
        match self.kind {
            MarginalKind::Normal => a + b * u,
            MarginalKind::Lognormal => (a + b * u).exp(),
            _ => {
                if u <= 0.0 {
                    self.quantile_lower(std_normal_cdf(u).max(f64::MIN_POSITIVE))
                } else {
                    self.quantile_upper(std_normal_cdf(-u).max(f64::MIN_POSITIVE))
                }
            }
        }
    }
}

fn weibull_cov(shape: f64) -> f64 {
    let r = (libm::lgamma(1.0 + 2.0 / shape) - 2.0 * libm::lgamma(1.0 + 1.0 / shape)).exp();
    (r - 1.0).max(0.0).sqrt()
}
