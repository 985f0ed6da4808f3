//! JSON run configuration and its resolution into a checked problem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condest::KdeTransform;
use crate::decision::{DesignDecision, SafetyDecision};
use crate::dists::{CorrelationMatrix, GaussianCopulaJoint, Marginal, MarginalKind};
use crate::error::{Error, Result};
use crate::form::FormOptions;
use crate::lsf::{log_linear_form, LimitState, LogLinearForm, DESIGN_SYMBOL};
use crate::numeric::linspace;
use crate::sample::SubsetOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Form,
    Mc,
    Subset,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("method", format!("unknown method `{s}`; expected analytic, form, mc or subset")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Analytic => "analytic",
            Method::Form => "form",
            Method::Mc => "mc",
            Method::Subset => "subset",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    pub dist: MarginalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<f64>,
    /// Native parameters, as an alternative to mean and c.o.v.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum LsfSpec {
    Builtin(String),
    Expression(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySpec {
    pub c_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_r: Option<f64>,
    /// Several cost ratios c_r/c_F evaluated in one run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Range { start: f64, stop: f64, points: usize },
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub c_f: f64,
    /// Design cost c_d(a) as an expression in `a`.
    pub cost: String,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, rename = "$schema", skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub inputs: Vec<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    pub lsf: LsfSpec,
    pub decision: DecisionSpec,
    pub method: Method,
    /// Crude Monte Carlo sample size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<FormOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde_transform: Option<KdeTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 1;

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "(root)".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_json_str(&text)
    }

    /// Checks the configuration and builds the model. `method` overrides the
    /// configured one; fields belonging to other methods are then ignored
    /// instead of rejected.
    pub fn resolve(&self, method: Option<Method>) -> Result<Problem> {
        let names: Vec<String> = self.inputs.iter().map(|i| i.name.clone()).collect();
        if names.is_empty() {
            return Err(Error::config("inputs", "at least one input is required"));
        }
        for (k, n) in names.iter().enumerate() {
            if names[..k].contains(n) {
                return Err(Error::config(format!("inputs[{k}].name"), format!("duplicate input name `{n}`")));
            }
            if n == DESIGN_SYMBOL {
                return Err(Error::config(format!("inputs[{k}].name"), format!("`{DESIGN_SYMBOL}` is reserved for the design parameter")));
            }
        }
        let marginals = self
            .inputs
            .iter()
            .enumerate()
            .map(|(k, spec)| marginal(spec).map_err(|e| Error::config(format!("inputs[{k}]"), e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let joint = match &self.correlation {
            None => GaussianCopulaJoint::independent(marginals),
            Some(rows) => {
                if rows.len() != names.len() {
                    return Err(Error::config("correlation", format!("{} rows for {} inputs", rows.len(), names.len())));
                }
                let r = CorrelationMatrix::from_rows(rows)?;
                if r.is_identity() {
                    GaussianCopulaJoint::independent(marginals)
                } else {
                    GaussianCopulaJoint::new(marginals, r)?
                }
            }
        };
        let lsf = self.limit_state(&names)?;

        let safety = match &self.decision.safety {
            None => Vec::new(),
            Some(s) => safety_decisions(s)?,
        };
        let design = match &self.decision.design {
            None => None,
            Some(d) => Some(design_decision(d)?),
        };
        match (safety.is_empty(), design.is_none(), lsf.has_design_param()) {
            (true, true, _) => return Err(Error::config("decision", "a safety or design block is required")),
            (false, false, _) => {
                return Err(Error::config("decision", "give either a safety or a design block; they need different limit states"))
            }
            (false, _, true) => {
                return Err(Error::config("lsf", format!("a safety decision needs a limit state without the design parameter `{DESIGN_SYMBOL}`")))
            }
            (_, false, false) => {
                return Err(Error::config("lsf", format!("a design decision needs a limit state that uses the design parameter `{DESIGN_SYMBOL}`")))
            }
            _ => {}
        }

        let overridden = method.is_some_and(|m| m != self.method);
        let method = method.unwrap_or(self.method);
        let log_linear = match method {
            Method::Analytic => {
                let form = log_linear_form(&lsf).ok_or_else(|| {
                    Error::config("method", "analytic method needs a limit state linear in the logarithms of its inputs")
                })?;
                if let Some(k) = joint.marginals().iter().position(|m| m.kind() != MarginalKind::Lognormal) {
                    return Err(Error::config(format!("inputs[{k}].dist"), "analytic method needs lognormal inputs"));
                }
                Some(form)
            }
            _ => None,
        };
        let n = match (method, self.n) {
            (Method::Mc, Some(0)) => return Err(Error::config("n", "must be at least 1")),
            (Method::Mc, Some(n)) => Some(n),
            (Method::Mc, None) => return Err(Error::config("n", "method mc needs a sample size `n`")),
            (_, Some(_)) if !overridden => return Err(Error::config("n", format!("`n` is only used by method mc, not {method}"))),
            _ => None,
        };
        let subset = match (method, self.subset) {
            (Method::Subset, s) => Some(s.unwrap_or_default()),
            (_, Some(_)) if !overridden => {
                return Err(Error::config("subset", format!("`subset` is only used by method subset, not {method}")))
            }
            _ => None,
        };
        if self.form.is_some() && method != Method::Form && !overridden {
            return Err(Error::config("form", format!("`form` is only used by method form, not {method}")));
        }
        let sampled = matches!(method, Method::Mc | Method::Subset);
        if !sampled && !overridden {
            if self.kde_transform.is_some() {
                return Err(Error::config("kde_transform", format!("only sampling methods fit densities, not {method}")));
            }
            if self.seed.is_some() {
                return Err(Error::config("seed", format!("method {method} draws no random numbers")));
            }
        }
        let grid_points = self.grid_points.unwrap_or(crate::condest::GRID_POINTS);
        if grid_points < 8 {
            return Err(Error::config("grid_points", "at least 8 points are needed"));
        }
        Ok(Problem {
            name: self.name.clone().unwrap_or_else(|| "run".into()),
            names,
            joint,
            lsf,
            log_linear,
            safety,
            design,
            method,
            n,
            subset,
            form: self.form.unwrap_or_default(),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            kde_transform: self.kde_transform.unwrap_or_default(),
            grid_points,
        })
    }

    fn limit_state(&self, names: &[String]) -> Result<LimitState> {
        match &self.lsf {
            LsfSpec::Expression(text) => LimitState::from_expression(text, names).map_err(|e| match e {
                Error::UnknownIdentifier(v) => Error::config("lsf.expression", format!("variable `{v}` is not a declared input")),
                e @ (Error::Syntax { .. } | Error::UnknownFunction { .. }) => Error::config("lsf.expression", e.to_string()),
                e => e,
            }),
            LsfSpec::Builtin(id) => {
                let g = LimitState::builtin(id).map_err(|e| Error::config("lsf.builtin", e.to_string()))?;
                let mut want = g.input_names().to_vec();
                let mut have = names.to_vec();
                want.sort();
                have.sort();
                if want != have {
                    return Err(Error::config(
                        "inputs",
                        format!("builtin `{id}` uses inputs {:?}, config declares {:?}", g.input_names(), names),
                    ));
                }
                g.rebind(names)
            }
        }
    }
}

fn marginal(spec: &InputSpec) -> Result<Marginal> {
    match (spec.mean, spec.cov, spec.params) {
        (Some(mean), Some(cov), None) => Marginal::from_moments(spec.dist, mean, cov),
        (None, None, Some([p1, p2])) => Marginal::new(spec.dist, p1, p2),
        _ => Err(Error::config("", "give either `mean` and `cov`, or `params`")),
    }
}

fn safety_decisions(s: &SafetySpec) -> Result<Vec<SafetyDecision>> {
    let at = |field: &str, e: Error| match e {
        Error::Config { message, .. } => Error::config(format!("decision.safety.{field}"), message),
        e => e,
    };
    match (s.c_r, &s.ratios) {
        (Some(c_r), None) => Ok(vec![SafetyDecision::new(s.c_f, c_r).map_err(|e| at("c_r", e))?]),
        (None, Some(r)) if !r.is_empty() => r
            .iter()
            .map(|&ratio| {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::config("decision.safety.ratios", format!("cost ratio {ratio} outside (0, 1)")));
                }
                SafetyDecision::new(s.c_f, ratio * s.c_f).map_err(|e| at("ratios", e))
            })
            .collect(),
        _ => Err(Error::config("decision.safety", "give either `c_r` or a nonempty `ratios` list")),
    }
}

fn design_decision(d: &DesignSpec) -> Result<DesignDecision> {
    let grid = match &d.grid {
        GridSpec::Range { start, stop, points } => {
            if *points == 0 || !(start.is_finite() && stop.is_finite()) || (*points > 1 && !(stop > start)) {
                return Err(Error::config("decision.design.grid", "need points >= 1 and start < stop"));
            }
            linspace(*start, *stop, *points)
        }
        GridSpec::Values { values } => values.clone(),
    };
    DesignDecision::new(d.c_f, &d.cost, grid).map_err(|e| match e {
        Error::UnknownIdentifier(v) => Error::config("decision.design.cost", format!("unknown variable `{v}`; the cost may only use `{DESIGN_SYMBOL}`")),
        e @ (Error::Syntax { .. } | Error::UnknownFunction { .. }) => Error::config("decision.design.cost", e.to_string()),
        e => e,
    })
}

/// A validated configuration: model, decisions and estimator settings.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub names: Vec<String>,
    pub joint: GaussianCopulaJoint,
    pub lsf: LimitState,
    pub log_linear: Option<LogLinearForm>,
    pub safety: Vec<SafetyDecision>,
    pub design: Option<DesignDecision>,
    pub method: Method,
    pub n: Option<usize>,
    pub subset: Option<SubsetOptions>,
    pub form: FormOptions,
    pub seed: u64,
    pub kde_transform: KdeTransform,
    pub grid_points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX1: &str = r#"{
        "inputs": [
            {"name": "R", "dist": "lognormal", "mean": 100, "cov": 0.2},
            {"name": "S", "dist": "lognormal", "mean": 40, "cov": 0.25},
            {"name": "XR", "dist": "lognormal", "mean": 1, "cov": 0.1},
            {"name": "XS", "dist": "lognormal", "mean": 1, "cov": 0.2}
        ],
        "lsf": {"builtin": "example1_safety"},
        "decision": {"safety": {"c_f": 1e8, "c_r": 1e6}},
        "method": "analytic"
    }"#;

    fn with(patch: serde_json::Value) -> String {
        let mut v: serde_json::Value = serde_json::from_str(EX1).unwrap();
        for (k, val) in patch.as_object().unwrap() {
            v[k] = val.clone();
        }
        v.to_string()
    }

    fn config_path(r: Result<Problem>) -> String {
        match r {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn example_resolves() {
        let p = RunConfig::from_json_str(EX1).unwrap().resolve(None).unwrap();
        assert_eq!(p.names, ["R", "S", "XR", "XS"]);
        assert!(p.log_linear.is_some());
        assert_eq!(p.safety.len(), 1);
    }

    #[test]
    fn unknown_fields_report_their_path() {
        let text = EX1.replace("\"cov\": 0.2}", "\"cov\": 0.2, \"sd\": 3}");
        match RunConfig::from_json_str(&text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "inputs[0].sd");
                assert!(message.contains("sd"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undeclared_variable_named() {
        let cfg = with(serde_json::json!({"lsf": {"expression": "R - S*T"}, "method": "form"}));
        match RunConfig::from_json_str(&cfg).unwrap().resolve(None) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "lsf.expression");
                assert!(message.contains("`T`"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_diagonal_is_a_correlation_error() {
        let cfg = with(serde_json::json!({"correlation": [[1,0,0,0],[0,1,0,0],[0,0,1.3,0],[0,0,0,1]]}));
        let e = RunConfig::from_json_str(&cfg).unwrap().resolve(None).unwrap_err();
        assert!(matches!(e, Error::InvalidCorrelation(_)));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn method_fields_checked() {
        let cfg = RunConfig::from_json_str(&with(serde_json::json!({"n": 1000}))).unwrap();
        assert_eq!(config_path(cfg.resolve(None)), "n");
        // an override ignores the other method's fields
        assert!(cfg.resolve(Some(Method::Form)).is_ok());
        let cfg = RunConfig::from_json_str(&with(serde_json::json!({"method": "mc"}))).unwrap();
        assert_eq!(config_path(cfg.resolve(None)), "n");
        let cfg = RunConfig::from_json_str(&with(serde_json::json!({"lsf": {"expression": "R + S - 100"}}))).unwrap();
        assert_eq!(config_path(cfg.resolve(None)), "method");
    }

    #[test]
    fn decision_blocks_checked() {
        let cfg = with(serde_json::json!({"decision": {"safety": {"c_f": 1e8, "ratios": [0.5, 1.5]}}}));
        assert_eq!(config_path(RunConfig::from_json_str(&cfg).unwrap().resolve(None)), "decision.safety.ratios");
        let cfg = with(serde_json::json!({"decision": {"design": {"c_f": 1e8, "cost": "1e5*a", "grid": {"start": 0.5, "stop": 2, "points": 5}}}}));
        assert_eq!(config_path(RunConfig::from_json_str(&cfg).unwrap().resolve(None)), "lsf");
        let cfg = with(serde_json::json!({
            "lsf": {"builtin": "example1_design"},
            "decision": {"design": {"c_f": 1e8, "cost": "1e5*b", "grid": {"values": [1, 2]}}}
        }));
        assert_eq!(config_path(RunConfig::from_json_str(&cfg).unwrap().resolve(None)), "decision.design.cost");
    }

    #[test]
    fn builtin_inputs_must_match() {
        let cfg = EX1.replace("\"XS\"", "\"XT\"");
        assert_eq!(config_path(RunConfig::from_json_str(&cfg).unwrap().resolve(None)), "inputs");
    }

    #[test]
    fn builtin_rebinds_to_config_order() {
        let mut v: serde_json::Value = serde_json::from_str(EX1).unwrap();
        v["inputs"].as_array_mut().unwrap().reverse();
        let p = RunConfig::from_json_str(&v.to_string()).unwrap().resolve(None).unwrap();
        assert_eq!(p.names, ["XS", "XR", "S", "R"]);
        assert_eq!(p.log_linear.unwrap().coeffs, vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn method_parses() {
        assert_eq!("subset".parse::<Method>().unwrap(), Method::Subset);
        assert!("mcmc".parse::<Method>().is_err());
    }
}
