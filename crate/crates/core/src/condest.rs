//! Conditional failure-probability curves pF(xᵢ): analytic, FORM, and
//! estimated from failure samples by Bayes' rule with a kernel density.

use serde::{Deserialize, Serialize};

use crate::dists::{std_normal_pdf, GaussianCopulaJoint, LognormalLinearProblem, Marginal};
use crate::error::{Error, Result};
use crate::form::{conditional_pf_u_unchecked, FormResult};
use crate::numeric::{linspace, trapezoid};
use crate::table::Table;

/// Default curve resolution and its span in standard normal space.
pub const GRID_POINTS: usize = 512;
pub const GRID_U_MAX: f64 = 8.5;

const MIN_KDE_POINTS: usize = 20;
/// Kernels farther than this many bandwidths away are skipped.
const KERNEL_CUTOFF: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KdeTransform {
    Identity,
    #[default]
    StandardNormal,
}

/// Gaussian kernel density estimate of one input's conditional density,
/// fitted either in physical space or after z = Φ⁻¹(F(x)).
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Vec<f64>,
    bandwidth: f64,
    transform: KdeTransform,
    marginal: Marginal,
}

fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Silverman's rule: 1.06 · min(sd, IQR/1.34) · n^(−1/5).
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * n.powf(-0.2)
}

pub fn kde_fit(values: &[f64], marginal: &Marginal, transform: KdeTransform) -> Result<KdeModel> {
    if values.len() < MIN_KDE_POINTS {
        return Err(Error::DegenerateSample(format!(
            "{} values; at least {MIN_KDE_POINTS} are needed",
            values.len()
        )));
    }
    let mut points = match transform {
        KdeTransform::Identity => values.to_vec(),
        KdeTransform::StandardNormal => values
            .iter()
            .map(|&v| marginal.to_standard(v, 0).map(|(z, _)| z))
            .collect::<Result<Vec<_>>>()?,
    };
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::DegenerateSample("non-finite value".into()));
    }
    points.sort_by(f64::total_cmp);
    let bandwidth = silverman_bandwidth(&points);
    if !(bandwidth > 0.0) {
        return Err(Error::DegenerateSample("values have zero spread".into()));
    }
    Ok(KdeModel { points, bandwidth, transform, marginal: *marginal })
}

impl KdeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn transform(&self) -> KdeTransform {
        self.transform
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Density in the fitting space.
    fn kernel_density(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.points.partition_point(|&p| p < t - KERNEL_CUTOFF * h);
        let hi = self.points.partition_point(|&p| p <= t + KERNEL_CUTOFF * h);
        let s: f64 = self.points[lo..hi].iter().map(|&p| std_normal_pdf((t - p) / h)).sum();
        s / (self.points.len() as f64 * h)
    }

    /// Estimated density of the physical value `x`.
    pub fn density(&self, x: f64) -> f64 {
        match self.transform {
            KdeTransform::Identity => self.kernel_density(x),
            KdeTransform::StandardNormal => match self.marginal.to_standard(x, 0) {
                Ok((z, _)) => {
                    let phi = std_normal_pdf(z);
                    if phi == 0.0 {
                        0.0
                    } else {
                        self.kernel_density(z) * self.marginal.pdf(x) / phi
                    }
                }
                Err(_) => 0.0,
            },
        }
    }

    /// f̂(x) / f(x), the Bayes factor turning pF into pF(x). `None` where the
    /// prior density underflows.
    pub fn ratio_to_prior(&self, x: f64, u: f64) -> Option<f64> {
        match self.transform {
            KdeTransform::Identity => {
                let f = self.marginal.pdf(x);
                (f > 0.0 && f.is_finite()).then(|| self.kernel_density(x) / f)
            }
            KdeTransform::StandardNormal => {
                let phi = std_normal_pdf(u);
                (phi > 0.0).then(|| self.kernel_density(u) / phi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSource {
    Analytic,
    Form,
    Kde,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CurveDiagnostics {
    pub n_samples: Option<usize>,
    pub effective_sample_size: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Share of grid points where the Bayes ratio exceeded 1 and was clipped.
    pub clip_fraction: f64,
    pub dropped_points: usize,
}

/// pF(xᵢ) tabulated on a grid of xᵢ, with the grid's standard normal image.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalPfCurve {
    pub input_index: usize,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub pf_values: Vec<f64>,
    pub source: CurveSource,
    pub pf_uncond: f64,
    pub density_prior: Vec<f64>,
    pub density_conditional: Option<Vec<f64>>,
    pub diagnostics: CurveDiagnostics,
}

/// Curve abscissae: physical values and their standard normal images.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Grid {
    /// `n` points uniform in u on [−u_max, u_max], mapped through the marginal.
    pub fn uniform_u(marginal: &Marginal, n: usize, u_max: f64) -> Self {
        let u = linspace(-u_max, u_max, n);
        let x = u.iter().map(|&v| marginal.from_standard(v)).collect();
        Grid { x, u }
    }

    /// From physical values; must be strictly increasing and in the support.
    pub fn from_x(marginal: &Marginal, x: Vec<f64>) -> Result<Self> {
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("grid", "grid must be strictly increasing"));
        }
        let u = x.iter().map(|&v| marginal.to_standard(v, 0).map(|r| r.0)).collect::<Result<_>>()?;
        Ok(Grid { x, u })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// 512 points spanning u ∈ [−8.5, 8.5].
pub fn default_grid(marginal: &Marginal) -> Grid {
    Grid::uniform_u(marginal, GRID_POINTS, GRID_U_MAX)
}

fn curve(i: usize, grid: &Grid, marginal: &Marginal, pf: Vec<f64>, source: CurveSource, pf_uncond: f64) -> ConditionalPfCurve {
    ConditionalPfCurve {
        input_index: i,
        density_prior: grid.x.iter().map(|&x| marginal.pdf(x)).collect(),
        grid: grid.x.clone(),
        u: grid.u.clone(),
        pf_values: pf,
        source,
        pf_uncond,
        density_conditional: None,
        diagnostics: CurveDiagnostics::default(),
    }
}

/// Exact curve of a lognormal-linear problem.
pub fn analytic_curve(problem: &LognormalLinearProblem, marginal: &Marginal, i: usize, grid: &Grid) -> Result<ConditionalPfCurve> {
    let pf = grid.x.iter().map(|&x| problem.conditional_pf(i, x)).collect::<Result<Vec<_>>>()?;
    Ok(curve(i, grid, marginal, pf, CurveSource::Analytic, problem.pf()?))
}

/// FORM curve Φ((ρᵢuᵢ − β₀)/√(1 − ρᵢ²)) with ρᵢ the conditioning coefficient.
pub fn form_curve(form: &FormResult, marginal: &Marginal, i: usize, grid: &Grid) -> ConditionalPfCurve {
    let a = form.alpha_conditional[i];
    let pf = grid.u.iter().map(|&u| conditional_pf_u_unchecked(form.beta0, a, u)).collect();
    curve(i, grid, marginal, pf, CurveSource::Form, form.pf())
}

/// pF(xᵢ) = f̂(xᵢ | F) / f(xᵢ) · p̂F, clipped to [0, 1].
pub fn conditional_pf_from_failure_samples(
    joint: &GaussianCopulaJoint,
    i: usize,
    failure_values: &[f64],
    pf_hat: f64,
    grid: &Grid,
    transform: KdeTransform,
) -> Result<ConditionalPfCurve> {
    if !(pf_hat > 0.0 && pf_hat < 1.0) {
        return Err(Error::OutOfDomain(format!("pf_hat = {pf_hat} must lie in (0, 1)")));
    }
    let marginal = joint.marginal(i);
    let kde = kde_fit(failure_values, marginal, transform)?;
    let mut x_kept = Vec::with_capacity(grid.len());
    let mut u_kept = Vec::with_capacity(grid.len());
    let mut pf = Vec::with_capacity(grid.len());
    let mut dens = Vec::with_capacity(grid.len());
    let mut clipped = 0usize;
    for (&x, &u) in grid.x.iter().zip(&grid.u) {
        match kde.ratio_to_prior(x, u) {
            Some(r) => {
                let v = r * pf_hat;
                if v > 1.0 {
                    clipped += 1;
                }
                x_kept.push(x);
                u_kept.push(u);
                pf.push(v.clamp(0.0, 1.0));
                dens.push(kde.density(x));
            }
            None => log::warn!("input {i}: prior density underflows at x = {x}; grid point dropped"),
        }
    }
    let dropped = grid.len() - x_kept.len();
    let kept = Grid { x: x_kept, u: u_kept };
    let mut c = curve(i, &kept, marginal, pf, CurveSource::Kde, pf_hat);
    c.density_conditional = Some(dens);
    c.diagnostics = CurveDiagnostics {
        n_samples: Some(failure_values.len()),
        effective_sample_size: Some(effective_sample_size(failure_values)),
        bandwidth: Some(kde.bandwidth()),
        clip_fraction: if kept.is_empty() { 0.0 } else { clipped as f64 / kept.len() as f64 },
        dropped_points: dropped,
    };
    Ok(c)
}

/// n / (1 + 2 Σ ρ_k), summing autocorrelations of the sequence until they
/// first turn nonpositive. About n for independent draws; smaller for
/// Markov-chain output.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 3 {
        return n as f64;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let mut s = 0.0;
    for lag in 1..n.min(1000) {
        let c: f64 = (0..n - lag).map(|k| (values[k] - mean) * (values[k + lag] - mean)).sum::<f64>() / n as f64;
        let rho = c / var;
        if rho <= 0.0 {
            break;
        }
        s += rho;
    }
    n as f64 / (1.0 + 2.0 * s)
}

impl ConditionalPfCurve {
    /// ∫ pF(x) f(x) dx over the grid (trapezoid in u); equals pF_uncond
    /// when the curve is consistent.
    pub fn total_probability(&self) -> f64 {
        let y: Vec<f64> = self.pf_values.iter().zip(&self.u).map(|(p, &u)| p * std_normal_pdf(u)).collect();
        trapezoid(&self.u, &y)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["x", "u", "pf", "density_prior", "density_conditional"]);
        for k in 0..self.grid.len() {
            t.push(vec![
                self.grid[k].into(),
                self.u[k].into(),
                self.pf_values[k].into(),
                self.density_prior[k].into(),
                self.density_conditional.as_ref().map(|d| d[k]).into(),
            ]);
        }
        t
    }
}
