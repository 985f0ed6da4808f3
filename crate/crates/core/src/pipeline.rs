//! End-to-end runs behind the command line: reliability, conditional
//! curves, EVPPI, and the report files with their manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::condest::{
    analytic_curve, conditional_pf_from_failure_samples, form_curve, ConditionalPfCurve, Grid, GRID_U_MAX,
};
use crate::config::{Method, Problem, RunConfig};
use crate::decision::{
    cvppi_curve, evpi_safety, evppi_design, posterior_loss_curve, prior_action, prior_design, safety_report, sweep_table,
    threshold_sweep, EvppiMethod, EvppiReport, InputDiagnostics, SafetyDecision,
};
use crate::dists::{std_normal_inv_upper, LognormalLinearProblem};
use crate::error::{Error, Result};
use crate::form::{evppi_form_design, evppi_form_safety, form_analysis, FormEvppiMethod, FormResult};
use crate::numeric::{linspace, logspace};
use crate::sample::{crude_mc, subset_simulation, SampleMatrix};
use crate::table::{Cell, Table};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub threads: Option<usize>,
}

impl RunOptions {
    fn install<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        match self.threads {
            None => f(),
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?
                .install(f),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub name: String,
    pub inputs: Vec<String>,
    pub method: Method,
    pub dependent: bool,
    pub safety_ratios: Vec<f64>,
    pub design_points: Option<usize>,
}

fn load(path: &Path, opts: &RunOptions) -> Result<(RunConfig, Problem, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config(path.display().to_string(), "not UTF-8"))?;
    let cfg = RunConfig::from_json_str(&text)?;
    let mut problem = cfg.resolve(opts.method)?;
    if let Some(s) = opts.seed {
        problem.seed = s;
    }
    Ok((cfg, problem, bytes))
}

pub fn cmd_validate(path: &Path) -> Result<ValidationSummary> {
    let (_, p, _) = load(path, &RunOptions::default())?;
    Ok(ValidationSummary {
        name: p.name.clone(),
        inputs: p.names.clone(),
        method: p.method,
        dependent: !p.joint.is_independent(),
        safety_ratios: p.safety.iter().map(|d| d.ratio()).collect(),
        design_points: p.design.as_ref().map(|d| d.len()),
    })
}

/// Failure probability of one limit state (at one design) with what the
/// conditional curves need.
#[derive(Debug, Clone)]
pub struct Reliability {
    pub pf: f64,
    pub details: Value,
    source: Source,
}

#[derive(Debug, Clone)]
enum Source {
    Analytic(LognormalLinearProblem),
    Form(FormResult),
    Samples(SampleMatrix),
}

pub fn reliability(p: &Problem, a: Option<f64>) -> Result<Reliability> {
    match p.method {
        Method::Analytic => {
            let form = p.log_linear.as_ref().expect("resolved analytic problems carry their log-linear form");
            let prob = LognormalLinearProblem::from_joint(&p.joint, form.coeffs.clone(), form.constant(a)?)?;
            let pf = prob.pf()?;
            Ok(Reliability { pf, details: json!({ "pf": pf, "beta": prob.beta()? }), source: Source::Analytic(prob) })
        }
        Method::Form => {
            let f = form_analysis(&p.joint, &p.lsf, a, &p.form)?;
            if !f.converged {
                log::warn!("FORM did not converge in {} iterations (gradient norm {})", f.iterations, f.grad_norm);
            }
            Ok(Reliability { pf: f.pf(), details: serde_json::to_value(&f)?, source: Source::Form(f) })
        }
        Method::Mc => {
            let r = crude_mc(&p.joint, &p.lsf, a, p.n.expect("mc has n"), p.seed)?;
            let mut details = serde_json::to_value(&r)?;
            details["cov"] = json!(finite_or_null(r.cov()));
            Ok(Reliability { pf: r.pf_hat, details, source: Source::Samples(r.failure_samples) })
        }
        Method::Subset => {
            let opts = p.subset.expect("subset has options");
            let r = subset_simulation(&p.joint, &p.lsf, a, &opts, p.seed)?;
            let mut details = serde_json::to_value(&r)?;
            details["n_failure_samples"] = json!(r.last_level_samples.nrows());
            Ok(Reliability { pf: r.pf_hat, details, source: Source::Samples(r.last_level_samples) })
        }
    }
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn grids(p: &Problem) -> Vec<Grid> {
    p.joint.marginals().iter().map(|m| Grid::uniform_u(m, p.grid_points, GRID_U_MAX)).collect()
}

pub fn curves(p: &Problem, rel: &Reliability, grids: &[Grid]) -> Result<Vec<ConditionalPfCurve>> {
    (0..p.names.len())
        .map(|i| match &rel.source {
            Source::Analytic(prob) => analytic_curve(prob, p.joint.marginal(i), i, &grids[i]),
            Source::Form(f) => Ok(form_curve(f, p.joint.marginal(i), i, &grids[i])),
            Source::Samples(s) => {
                if rel.pf <= 0.0 || rel.pf >= 1.0 {
                    return Err(Error::DegenerateSample(format!("estimated pF = {}; no conditional density to fit", rel.pf)));
                }
                conditional_pf_from_failure_samples(&p.joint, i, &s.column(i), rel.pf, &grids[i], p.kde_transform)
            }
        })
        .collect()
}

fn evppi_method(m: Method) -> EvppiMethod {
    match m {
        Method::Analytic => EvppiMethod::Analytic,
        Method::Form => EvppiMethod::Form,
        Method::Mc => EvppiMethod::McKde,
        Method::Subset => EvppiMethod::SubsetKde,
    }
}

/// Safety reports, one per cost ratio. FORM values use the closed form;
/// the curve quadrature is kept as its error estimate.
pub fn safety_reports(p: &Problem, rel: &Reliability, curves: &[ConditionalPfCurve]) -> Result<Vec<EvppiReport>> {
    p.safety
        .iter()
        .map(|d| {
            let mut rep = safety_report(curves, &p.names, d, evppi_method(p.method))?;
            if let Source::Form(f) = &rel.source {
                for (i, e) in rep.inputs.iter_mut().enumerate() {
                    let exact = evppi_form_safety(f.beta0, f.alpha_conditional[i], d.c_f, d.c_r, FormEvppiMethod::Closed)?;
                    e.diagnostics.quadrature_error = Some((exact - e.absolute).abs());
                    e.absolute = exact;
                }
                let _ = rep.normalize();
                rep.relativize(evpi_safety(rel.pf, d));
            }
            Ok(rep)
        })
        .collect()
}

/// Files of one run, written together at the end so that a failed run
/// leaves nothing behind.
#[derive(Debug, Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: String, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn add_table(&mut self, name: String, t: &Table) {
        self.add(name, t.to_csv().into_bytes());
    }

    fn manifest_entries(&self) -> Vec<Value> {
        self.files.iter().map(|(n, b)| json!({ "path": n, "sha256": sha256(b), "bytes": b.len() })).collect()
    }

    fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = std::fs::write(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(())
    }
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Stages {
    list: Vec<Value>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f().map_err(|e| e.in_stage(name))?;
        self.list.push(json!({ "name": name, "seconds": t.elapsed().as_secs_f64() }));
        Ok(r)
    }

    fn note(&mut self, diagnostics: Value) {
        if let Some(last) = self.list.last_mut() {
            last["diagnostics"] = diagnostics;
        }
    }
}

/// File-name-safe version of an input name.
fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub report: Value,
}

fn out_dir(cfg: &RunConfig, config_path: &Path, opts: &RunOptions) -> PathBuf {
    opts.out.clone().or_else(|| cfg.outputs.clone()).unwrap_or_else(|| {
        let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        PathBuf::from("out").join(stem)
    })
}

pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let (cfg, p, raw) = load(config_path, opts)?;
    let dir = out_dir(&cfg, config_path, opts);
    let mut stages = Stages { list: Vec::new() };
    let mut out = Outputs::default();
    let grids = grids(&p);
    let mut report = json!({
        "name": p.name,
        "inputs": p.names,
        "method": p.method,
        "dependent": !p.joint.is_independent(),
    });

    opts.install(|| {
        if !p.safety.is_empty() {
            let rel = stages.run("reliability", || reliability(&p, None))?;
            stages.note(rel.details.clone());
            let cs = stages.run("conditional_curves", || curves(&p, &rel, &grids))?;
            stages.note(json!(cs.iter().map(|c| &c.diagnostics).collect::<Vec<_>>()));
            let reps = stages.run("evppi", || safety_reports(&p, &rel, &cs))?;
            report["reliability"] = rel.details.clone();
            report["pf"] = json!(rel.pf);
            report["safety"] = Value::Array(
                p.safety
                    .iter()
                    .zip(&reps)
                    .map(|(d, r)| {
                        json!({
                            "c_f": d.c_f, "c_r": d.c_r, "ratio": d.ratio(),
                            "prior_action": prior_action(rel.pf, d),
                            "evpi": evpi_safety(rel.pf, d),
                            "evppi": r,
                        })
                    })
                    .collect(),
            );
            out.add_table("evppi_table.csv".into(), &evppi_table(&p.safety, &reps, None));
            for (i, c) in cs.iter().enumerate() {
                let stem = file_stem(&p.names[i]);
                out.add_table(format!("pf_curve_{stem}.csv"), &c.to_table());
                out.add_table(format!("cvppi_{stem}.csv"), &cvppi_table(c, &p.safety));
            }
        }
        if let Some(d) = &p.design {
            let rels = stages.run("reliability", || {
                d.grid().par_iter().map(|&a| reliability(&p, Some(a))).collect::<Result<Vec<_>>>()
            })?;
            let pf: Vec<f64> = rels.iter().map(|r| r.pf).collect();
            stages.note(json!({ "pf_per_design": pf }));
            let per_design = stages.run("conditional_curves", || {
                rels.par_iter().map(|r| curves(&p, r, &grids)).collect::<Result<Vec<_>>>()
            })?;
            let prior = prior_design(&pf, d)?;
            let (rep, design_inputs) = stages.run("evppi", || {
                let mut rep = EvppiReport::new(evppi_method(p.method));
                let mut extra = Vec::new();
                for (i, name) in p.names.iter().enumerate() {
                    let cs: Vec<ConditionalPfCurve> = per_design.iter().map(|c| c[i].clone()).collect();
                    let e = evppi_design(&cs, &pf, d)?;
                    rep.push(name, e.value, InputDiagnostics { consistency_gap: Some(e.consistency_gap), ..Default::default() });
                    let post = posterior_loss_curve(&cs, d)?;
                    out.add_table(format!("design_loss_{}.csv", file_stem(name)), &design_loss_table(&cs[prior.index], &post, d.costs()[prior.index], d.c_f));
                    out.add_table(format!("pf_curve_{}.csv", file_stem(name)), &cs[prior.index].to_table());
                    extra.push(json!({ "name": name, "posterior_loss": e.posterior_loss }));
                }
                let _ = rep.normalize();
                Ok((rep, extra))
            })?;
            let mut t = Table::new(["a", "cost", "pf", "expected_loss"]);
            for (j, &a) in d.grid().iter().enumerate() {
                t.push(vec![a.into(), d.costs()[j].into(), pf[j].into(), (d.costs()[j] + pf[j] * d.c_f).into()]);
            }
            out.add_table("pf_per_design.csv".into(), &t);
            out.add_table("evppi_table.csv".into(), &evppi_table(&[], &[], Some(&rep)));
            report["design"] = json!({
                "c_f": d.c_f,
                "cost": d.cost_expression(),
                "grid_points": d.len(),
                "a_opt": prior.a_opt,
                "pf_opt": prior.pf,
                "prior_loss": prior.expected_loss,
                "evppi": rep,
                "inputs": design_inputs,
            });
        }
        Ok(())
    })?;

    report["manifest"] = json!({
        "config": config_path.display().to_string(),
        "config_sha256": sha256(&raw),
        "seed": p.seed,
        "method": p.method,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "stages": stages.list,
        "files": out.manifest_entries(),
    });
    out.add(REPORT_FILE.into(), serde_json::to_vec_pretty(&report)?);
    out.write_all(&dir).map_err(|e| e.in_stage("write"))?;
    Ok(RunOutcome { out_dir: dir, report })
}

fn evppi_table(safety: &[SafetyDecision], reps: &[EvppiReport], design: Option<&EvppiReport>) -> Table {
    let mut t = Table::new(["decision", "ratio", "input", "absolute", "normalized", "relative"]);
    for (d, r) in safety.iter().zip(reps) {
        for e in &r.inputs {
            t.push(vec!["safety".into(), d.ratio().into(), e.name.as_str().into(), e.absolute.into(), e.normalized.into(), e.relative.into()]);
        }
    }
    if let Some(r) = design {
        for e in &r.inputs {
            t.push(vec!["design".into(), Cell::Empty, e.name.as_str().into(), e.absolute.into(), e.normalized.into(), Cell::Empty]);
        }
    }
    t
}

fn cvppi_table(c: &ConditionalPfCurve, safety: &[SafetyDecision]) -> Table {
    let mut header = vec!["x".to_string(), "u".to_string()];
    if safety.len() == 1 {
        header.push("cvppi".into());
    } else {
        header.extend(safety.iter().map(|d| format!("cvppi_{}", crate::fmt_f64(d.ratio()))));
    }
    let cols: Vec<Vec<f64>> = safety.iter().map(|d| cvppi_curve(c, d)).collect();
    let mut t = Table::new(header);
    for k in 0..c.grid.len() {
        let mut row: Vec<Cell> = vec![c.grid[k].into(), c.u[k].into()];
        row.extend(cols.iter().map(|col| col[k].into()));
        t.push(row);
    }
    t
}

fn design_loss_table(prior_curve: &ConditionalPfCurve, post: &[f64], prior_cost: f64, c_f: f64) -> Table {
    let mut t = Table::new(["x", "u", "prior_design_loss", "posterior_loss"]);
    for k in 0..post.len() {
        t.push(vec![
            prior_curve.grid[k].into(),
            prior_curve.u[k].into(),
            (prior_cost + prior_curve.pf_values[k] * c_f).into(),
            post[k].into(),
        ]);
    }
    t
}

/// `logspace:a:b:n`, `linspace:a:b:n`, or a comma-separated list.
pub fn parse_ratio_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::config("ratios", m);
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let ratios = if let Some(rest) = spec.strip_prefix("logspace:").or_else(|| spec.strip_prefix("linspace:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected `{}:start:stop:count`", &spec[..8])));
        }
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2].trim().parse().map_err(|_| bad(format!("`{}` is not a count", parts[2])))?;
        if n == 0 {
            return Err(bad("count must be at least 1".into()));
        }
        if spec.starts_with("log") {
            if !(a > 0.0 && b > 0.0) {
                return Err(bad("logspace bounds must be positive".into()));
            }
            logspace(a, b, n)
        } else {
            linspace(a, b, n)
        }
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(bad(format!("cost ratio {r} outside (0, 1)")));
    }
    Ok(ratios)
}

/// EVPPI against the cost ratio at the configured c_F; writes sweep.csv.
pub fn cmd_sweep(config_path: &Path, ratio_spec: &str, opts: &RunOptions) -> Result<PathBuf> {
    let ratios = parse_ratio_grid(ratio_spec)?;
    let (cfg, p, _) = load(config_path, opts)?;
    let c_f = match &cfg.decision.safety {
        Some(s) => s.c_f,
        None => return Err(Error::config("decision.safety", "a sweep needs a safety decision block")),
    };
    let dir = out_dir(&cfg, config_path, opts);
    let table = opts.install(|| {
        let rel = reliability(&p, None).map_err(|e| e.in_stage("reliability"))?;
        let cs = curves(&p, &rel, &grids(&p)).map_err(|e| e.in_stage("conditional_curves"))?;
        let mut rows = threshold_sweep(&cs, &p.names, c_f, &ratios, evppi_method(p.method)).map_err(|e| e.in_stage("evppi"))?;
        if let Source::Form(f) = &rel.source {
            for row in &mut rows {
                let d = SafetyDecision::new(c_f, row.ratio * c_f)?;
                for (i, e) in row.report.inputs.iter_mut().enumerate() {
                    e.absolute = evppi_form_safety(f.beta0, f.alpha_conditional[i], d.c_f, d.c_r, FormEvppiMethod::Closed)?;
                }
                let _ = row.report.normalize();
                row.report.relativize(evpi_safety(rel.pf, &d));
            }
        }
        Ok(sweep_table(&rows))
    })?;
    let mut out = Outputs::default();
    out.add_table("sweep.csv".into(), &table);
    out.write_all(&dir)?;
    Ok(dir.join("sweep.csv"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    Safety,
    Design,
}

impl std::str::FromStr for CurveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safety" => Ok(CurveMode::Safety),
            "design" => Ok(CurveMode::Design),
            _ => Err(Error::config("mode", format!("unknown mode `{s}`; expected safety or design"))),
        }
    }
}

/// Points of |α| per curve.
pub const FORM_CURVE_POINTS: usize = 99;

/// FORM EVPPI against |α| for each β, at c_F = 1. Design curves are divided
/// by their value at |α| = 1.
pub fn form_curves_table(betas: &[f64], ratio: f64, mode: CurveMode) -> Result<Table> {
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::config("beta", format!("β = {b} must be positive")));
    }
    if mode == CurveMode::Safety && !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("ratio", format!("cost ratio {ratio} outside (0, 1)")));
    }
    let alphas = linspace(0.01, 0.99, FORM_CURVE_POINTS);
    let mut t = Table::new(["mode", "beta", "pf", "ratio", "alpha", "alpha2", "evppi", "evppi_normalized"]);
    for &beta in betas {
        let pf = crate::dists::std_normal_cdf(-beta);
        let scale = match mode {
            CurveMode::Safety => None,
            CurveMode::Design => Some(evppi_form_design(beta, 1.0, 1.0)?),
        };
        for &a in &alphas {
            let (v, ratio_cell): (f64, Cell) = match mode {
                CurveMode::Safety => (evppi_form_safety(beta, a, 1.0, ratio, FormEvppiMethod::Closed)?, ratio.into()),
                CurveMode::Design => (evppi_form_design(beta, a, 1.0)?, Cell::Empty),
            };
            t.push(vec![
                match mode {
                    CurveMode::Safety => "safety".into(),
                    CurveMode::Design => "design".into(),
                },
                beta.into(),
                pf.into(),
                ratio_cell,
                a.into(),
                (a * a).into(),
                v.into(),
                scale.map(|s| v / s).into(),
            ]);
        }
    }
    Ok(t)
}

/// β for a failure probability.
pub fn beta_of_pf(pf: f64) -> Result<f64> {
    if !(pf > 0.0 && pf < 1.0) {
        return Err(Error::config("pf", format!("pF = {pf} outside (0, 1)")));
    }
    std_normal_inv_upper(pf)
}

pub fn cmd_form_curves(betas: &[f64], ratio: f64, mode: CurveMode, out: &Path) -> Result<PathBuf> {
    let t = form_curves_table(betas, ratio, mode)?;
    let mut o = Outputs::default();
    o.add_table("curves.csv".into(), &t);
    o.write_all(out)?;
    Ok(out.join("curves.csv"))
}

/// Re-reads a run directory and checks every listed file's checksum.
pub fn verify_manifest(dir: &Path) -> Result<usize> {
    let report: Value = serde_json::from_slice(&std::fs::read(dir.join(REPORT_FILE))?)?;
    let files = report["manifest"]["files"]
        .as_array()
        .ok_or_else(|| Error::config(REPORT_FILE, "manifest has no file list"))?;
    for f in files {
        let name = f["path"].as_str().unwrap_or_default();
        let bytes = std::fs::read(dir.join(name))?;
        if f["sha256"].as_str() != Some(sha256(&bytes).as_str()) {
            return Err(Error::config(format!("manifest.files.{name}"), "checksum mismatch"));
        }
    }
    Ok(files.len())
}
