//! Decision models and EVPPI for safety assessment (do nothing or replace)
//! and for design (choose a from a discrete set).

use serde::{Deserialize, Serialize};

use crate::condest::ConditionalPfCurve;
use crate::dists::std_normal_pdf;
use crate::error::{Error, Result};
use crate::lsf::expr::{parse, Compiled};
use crate::lsf::DESIGN_SYMBOL;
use crate::numeric::trapezoid;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyDecision {
    pub c_f: f64,
    pub c_r: f64,
}

impl SafetyDecision {
    pub fn new(c_f: f64, c_r: f64) -> Result<Self> {
        if !(c_r > 0.0 && c_f.is_finite() && c_r < c_f) {
            return Err(Error::config("decision.safety", format!("need 0 < c_r < c_f, got c_r = {c_r}, c_f = {c_f}")));
        }
        Ok(SafetyDecision { c_f, c_r })
    }

    /// c_r / c_F, the failure probability above which replacing pays off.
    pub fn ratio(&self) -> f64 {
        self.c_r / self.c_f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DoNothing,
    Replace,
}

/// Do nothing iff pF ≤ c_r/c_F.
pub fn prior_action(pf: f64, d: &SafetyDecision) -> Action {
    if pf * d.c_f <= d.c_r {
        Action::DoNothing
    } else {
        Action::Replace
    }
}

/// Conditional value of perfect information at each grid point.
pub fn cvppi_curve(curve: &ConditionalPfCurve, d: &SafetyDecision) -> Vec<f64> {
    let prior = prior_action(curve.pf_uncond, d);
    curve
        .pf_values
        .iter()
        .map(|&p| if prior_action(p, d) != prior { (d.c_f * p - d.c_r).abs() } else { 0.0 })
        .collect()
}

/// Value of perfect information on the failure event itself.
pub fn evpi_safety(pf: f64, d: &SafetyDecision) -> f64 {
    match prior_action(pf, d) {
        Action::DoNothing => pf * (d.c_f - d.c_r),
        Action::Replace => d.c_r * (1.0 - pf),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    pub value: f64,
    /// Distance to the plain trapezoid value on the same nodes.
    pub error_estimate: f64,
}

/// EVPPI of one input for the safety decision.
///
/// The gain density s(u) = ±(c_F pF − c_r) φ(u) is interpolated by local
/// quintics on the curve's u nodes and its positive part is integrated exactly
/// in every cell where a node shows a changed decision.
pub fn evppi_safety(curve: &ConditionalPfCurve, d: &SafetyDecision) -> Result<Quadrature> {
    let u = &curve.u;
    let n = u.len();
    if n < 2 || curve.pf_values.len() != n {
        return Err(Error::OutOfDomain("curve needs at least two points".into()));
    }
    let sign = match prior_action(curve.pf_uncond, d) {
        Action::DoNothing => 1.0,
        Action::Replace => -1.0,
    };
    // Scale by c_F so the integrand stays O(pF).
    let r = d.ratio();
    let s: Vec<f64> = curve.pf_values.iter().zip(u).map(|(&p, &ui)| sign * (p - r) * std_normal_pdf(ui)).collect();
    // Node positivity must agree with the pointwise decision rule; at a tie
    // the action is unchanged.
    let gain: Vec<bool> = curve.pf_values.iter().map(|&p| prior_action(p, d) != prior_action(curve.pf_uncond, d)).collect();

    let mut total = 0.0;
    for k in 0..n - 1 {
        if !(gain[k] || gain[k + 1]) {
            continue;
        }
        let width = STENCIL.min(n);
        let lo = (k + 1).saturating_sub(width / 2).min(n - width);
        let h = u[k + 1] - u[k];
        let ts: Vec<f64> = u[lo..lo + width].iter().map(|&v| (v - u[k]) / h).collect();
        let coef = lagrange_monomial(&ts, &s[lo..lo + width]);
        total += h * positive_part_integral(&coef);
    }
    let pos: Vec<f64> = s.iter().zip(&gain).map(|(&v, &g)| if g { v.max(0.0) } else { 0.0 }).collect();
    let trap = trapezoid(u, &pos) * d.c_f;
    let value = (total * d.c_f).max(0.0);
    Ok(Quadrature { value, error_estimate: (value - trap).abs() })
}

/// Nodes per local interpolant (degree five).
const STENCIL: usize = 6;
/// Sign scan resolution when locating roots inside a cell.
const ROOT_SCAN: usize = 32;

/// Monomial coefficients (ascending) of the interpolant through (t_j, y_j).
fn lagrange_monomial(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for j in 0..t.len() {
        let mut poly = vec![0.0; t.len()];
        poly[0] = 1.0;
        let mut deg = 0;
        let mut denom = 1.0;
        for m in 0..t.len() {
            if m == j {
                continue;
            }
            // poly *= (t - t_m)
            for q in (0..=deg + 1).rev() {
                let shifted = if q > 0 { poly[q - 1] } else { 0.0 };
                poly[q] = shifted - t[m] * poly[q];
            }
            deg += 1;
            denom *= t[j] - t[m];
        }
        for (o, p) in out.iter_mut().zip(&poly) {
            *o += y[j] * p / denom;
        }
    }
    out
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * t + v)
}

fn poly_antiderivative(c: &[f64], t: f64) -> f64 {
    c.iter().enumerate().rev().fold(0.0, |acc, (k, &v)| acc * t + v / (k + 1) as f64) * t
}

/// ∫₀¹ max(0, p(t)) dt.
fn positive_part_integral(c: &[f64]) -> f64 {
    let mut pts = vec![0.0];
    for k in 0..ROOT_SCAN {
        let (mut lo, mut hi) = (k as f64 / ROOT_SCAN as f64, (k + 1) as f64 / ROOT_SCAN as f64);
        let (flo, fhi) = (poly_eval(c, lo), poly_eval(c, hi));
        if flo * fhi < 0.0 {
            let rising = fhi > flo;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (poly_eval(c, mid) > 0.0) == rising {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            pts.push(0.5 * (lo + hi));
        }
    }
    pts.push(1.0);
    pts.windows(2)
        .filter(|w| poly_eval(c, 0.5 * (w[0] + w[1])) > 0.0)
        .map(|w| poly_antiderivative(c, w[1]) - poly_antiderivative(c, w[0]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvppiMethod {
    Analytic,
    Form,
    McKde,
    SubsetKde,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InputDiagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_failure_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature_error: Option<f64>,
    /// Design case: c_F times the gap between pF(a_opt) and its curve's
    /// total probability.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputEvppi {
    pub name: String,
    pub absolute: f64,
    pub normalized: Option<f64>,
    pub relative: Option<f64>,
    pub diagnostics: InputDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvppiReport {
    pub inputs: Vec<InputEvppi>,
    pub evpi: Option<f64>,
    pub method: EvppiMethod,
}

impl EvppiReport {
    pub fn new(method: EvppiMethod) -> Self {
        EvppiReport { inputs: Vec::new(), evpi: None, method }
    }

    pub fn push(&mut self, name: &str, absolute: f64, diagnostics: InputDiagnostics) {
        self.inputs.push(InputEvppi { name: name.to_string(), absolute, normalized: None, relative: None, diagnostics });
    }

    pub fn absolute(&self) -> Vec<f64> {
        self.inputs.iter().map(|e| e.absolute).collect()
    }

    /// Shares of the summed EVPPI.
    pub fn normalize(&mut self) -> Result<()> {
        let sum: f64 = self.inputs.iter().map(|e| e.absolute).sum();
        if !(sum > 0.0) {
            for e in &mut self.inputs {
                e.normalized = None;
            }
            return Err(Error::NormalizationUndefined);
        }
        for e in &mut self.inputs {
            e.normalized = Some(e.absolute / sum);
        }
        Ok(())
    }

    /// EVPPI as a fraction of the EVPI.
    pub fn relativize(&mut self, evpi: f64) {
        self.evpi = Some(evpi);
        for e in &mut self.inputs {
            e.relative = (evpi > 0.0).then(|| (e.absolute / evpi).clamp(0.0, 1.0));
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["input", "absolute", "normalized", "relative"]);
        for e in &self.inputs {
            t.push(vec![e.name.as_str().into(), e.absolute.into(), e.normalized.into(), e.relative.into()]);
        }
        t
    }
}

/// Safety EVPPI of every curve, normalized and relative to the EVPI.
pub fn safety_report(curves: &[ConditionalPfCurve], names: &[String], d: &SafetyDecision, method: EvppiMethod) -> Result<EvppiReport> {
    let mut rep = EvppiReport::new(method);
    let mut pf = None;
    for (c, name) in curves.iter().zip(names) {
        let q = evppi_safety(c, d)?;
        pf.get_or_insert(c.pf_uncond);
        rep.push(
            name,
            q.value,
            InputDiagnostics {
                n_failure_samples: c.diagnostics.n_samples,
                effective_sample_size: c.diagnostics.effective_sample_size,
                clip_fraction: c.diagnostics.n_samples.map(|_| c.diagnostics.clip_fraction),
                quadrature_error: Some(q.error_estimate),
                consistency_gap: None,
            },
        );
    }
    match rep.normalize() {
        Ok(()) | Err(Error::NormalizationUndefined) => {}
        Err(e) => return Err(e),
    }
    if let Some(pf) = pf {
        rep.relativize(evpi_safety(pf, d));
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub report: EvppiReport,
}

/// Safety EVPPI for a range of cost ratios c_r/c_F at fixed c_F. The curves
/// do not depend on the costs, so they are computed once by the caller.
pub fn threshold_sweep(curves: &[ConditionalPfCurve], names: &[String], c_f: f64, ratios: &[f64], method: EvppiMethod) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::config("ratios", format!("cost ratio {ratio} outside (0, 1)")));
            }
            let d = SafetyDecision::new(c_f, ratio * c_f)?;
            Ok(SweepRow { ratio, report: safety_report(curves, names, &d, method)? })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let names: Vec<&str> = rows.first().map(|r| r.report.inputs.iter().map(|e| e.name.as_str()).collect()).unwrap_or_default();
    let mut header = vec!["ratio".to_string(), "evpi".to_string()];
    for kind in ["absolute", "relative", "normalized"] {
        header.extend(names.iter().map(|n| format!("{kind}_{n}")));
    }
    let mut t = Table::new(header);
    for r in rows {
        let mut row = vec![r.ratio.into(), r.report.evpi.into()];
        row.extend(r.report.inputs.iter().map(|e| e.absolute.into()));
        row.extend(r.report.inputs.iter().map(|e| e.relative.into()));
        row.extend(r.report.inputs.iter().map(|e| e.normalized.into()));
        t.push(row);
    }
    t
}

/// Design choice among a discrete grid a₁ < … < a_m with cost c_d(a).
#[derive(Debug, Clone)]
pub struct DesignDecision {
    pub c_f: f64,
    cost_text: String,
    costs: Vec<f64>,
    grid: Vec<f64>,
}

impl DesignDecision {
    pub fn new(c_f: f64, cost: &str, grid: Vec<f64>) -> Result<Self> {
        if !(c_f > 0.0 && c_f.is_finite()) {
            return Err(Error::config("decision.design.c_f", format!("c_f = {c_f} must be positive")));
        }
        if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("decision.design.grid", "grid must be nonempty and strictly increasing"));
        }
        let compiled = Compiled::bind(&parse(cost)?, &[], Some(DESIGN_SYMBOL))?;
        let costs = grid
            .iter()
            .map(|&a| match compiled.eval(&[], a) {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(Error::config("decision.design.cost", format!("cost at a = {a} is {v}"))),
                Err(m) => Err(Error::config("decision.design.cost", format!("cost at a = {a}: {m}"))),
            })
            .collect::<Result<_>>()?;
        Ok(DesignDecision { c_f, cost_text: cost.to_string(), costs, grid })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost_expression(&self) -> &str {
        &self.cost_text
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Same costs and failure cost on the sub-grid `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let grid: Vec<f64> = indices.iter().map(|&i| self.grid[i]).collect();
        if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("decision.design.grid", "sub-grid must be nonempty and strictly increasing"));
        }
        Ok(DesignDecision {
            c_f: self.c_f,
            cost_text: self.cost_text.clone(),
            costs: indices.iter().map(|&i| self.costs[i]).collect(),
            grid,
        })
    }

    fn check_len(&self, m: usize) -> Result<()> {
        if m != self.grid.len() {
            return Err(Error::config("decision.design.grid", format!("{m} values for {} designs", self.grid.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorDesign {
    pub index: usize,
    pub a_opt: f64,
    pub pf: f64,
    pub expected_loss: f64,
}

/// argmin_j c_d(a_j) + pF(a_j) c_F; ties go to the smaller a.
pub fn prior_design(pf_per_design: &[f64], d: &DesignDecision) -> Result<PriorDesign> {
    d.check_len(pf_per_design.len())?;
    let mut best = 0;
    let loss = |j: usize| d.costs[j] + pf_per_design[j] * d.c_f;
    for j in 1..d.len() {
        if loss(j) < loss(best) {
            best = j;
        }
    }
    Ok(PriorDesign { index: best, a_opt: d.grid[best], pf: pf_per_design[best], expected_loss: loss(best) })
}

/// min_j c_d(a_j) + pF(x, a_j) c_F at every grid point of the curves.
pub fn posterior_loss_curve(curves: &[ConditionalPfCurve], d: &DesignDecision) -> Result<Vec<f64>> {
    d.check_len(curves.len())?;
    let first = &curves[0];
    if curves.iter().any(|c| c.u != first.u) {
        return Err(Error::config("decision.design", "conditional curves of all designs must share one grid"));
    }
    Ok((0..first.u.len())
        .map(|k| curves.iter().zip(&d.costs).map(|(c, &cd)| cd + c.pf_values[k] * d.c_f).fold(f64::INFINITY, f64::min))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignEvppi {
    pub value: f64,
    /// min_j c_d(a_j) + pF(a_j) c_F.
    pub prior_loss: f64,
    /// Expected loss when the input is known before the design is chosen.
    pub posterior_loss: f64,
    /// pF(a_opt) minus the curve's own total probability, times c_F. Zero up
    /// to quadrature error for exact curves; sampling noise otherwise.
    pub consistency_gap: f64,
}

/// Prior expected loss minus the expected loss when x is known before the
/// design is chosen.
///
/// Evaluated as the expected regret of the prior design,
/// E[L(a_opt, x) − min_j L(a_j, x)], which is nonnegative pointwise. Both
/// forms agree when the curve of a_opt integrates to pF(a_opt); the
/// difference is reported as `consistency_gap`.
pub fn evppi_design(curves: &[ConditionalPfCurve], pf_per_design: &[f64], d: &DesignDecision) -> Result<DesignEvppi> {
    let prior = prior_design(pf_per_design, d)?;
    let post = posterior_loss_curve(curves, d)?;
    let u = &curves[0].u;
    let chosen = &curves[prior.index];
    let w: Vec<f64> = u.iter().map(|&v| std_normal_pdf(v)).collect();
    let regret: Vec<f64> = (0..u.len())
        .map(|k| (d.costs[prior.index] + chosen.pf_values[k] * d.c_f - post[k]).max(0.0) * w[k])
        .collect();
    let y: Vec<f64> = post.iter().zip(&w).map(|(l, w)| l * w).collect();
    let total: Vec<f64> = chosen.pf_values.iter().zip(&w).map(|(p, w)| p * w).collect();
    let gap = (prior.pf - trapezoid(u, &total)) * d.c_f;
    if gap.abs() > 0.05 * prior.pf * d.c_f {
        log::warn!("design a = {}: curve integrates to a failure probability {:.1}% off pF", prior.a_opt, 100.0 * gap / (prior.pf * d.c_f));
    }
    Ok(DesignEvppi {
        value: trapezoid(u, &regret),
        prior_loss: prior.expected_loss,
        posterior_loss: trapezoid(u, &y),
        consistency_gap: gap,
    })
}
