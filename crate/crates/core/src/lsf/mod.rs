//! Limit-state functions: failure is the event {g ≤ 0}.

pub mod expr;
mod loglinear;

use serde::Serialize;

use crate::error::{Error, Result};
pub use expr::{parse, BinOp, Compiled, Expr, Func};
pub use loglinear::{log_linear_form, LogLinearForm};

/// Name reserved for the design parameter in expressions.
pub const DESIGN_SYMBOL: &str = "a";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LsfSource {
    Expression(String),
    Builtin(String),
}

/// Evaluable g(x, a) with named, ordered inputs.
#[derive(Debug, Clone)]
pub struct LimitState {
    source: LsfSource,
    expr: Expr,
    input_names: Vec<String>,
    has_design_param: bool,
    compiled: Compiled,
}

/// Built-in limit states with their input names.
///
/// * `example1_safety`: ln XR + ln R − ln XS − ln S, inputs R, S, XR, XS.
/// * `example1_design`: a·XR·R − XS·S, same inputs.
/// * `example2_column`: 1 − M1/(s1·Y) − M2/(s2·Y) − (P/(A·Y))² with
///   s1 = 0.03 m³, s2 = 0.015 m³, A = 0.190 m². M1, M2 in kNm, P in kN and
///   Y in MPa; Y is multiplied by 1000 internally to get kN/m².
pub const BUILTINS: &[&str] = &["example1_safety", "example1_design", "example2_column"];

fn builtin_text(id: &str) -> Option<(&'static str, &'static [&'static str])> {
    const EX1: &[&str] = &["R", "S", "XR", "XS"];
    Some(match id {
        "example1_safety" => ("ln(XR) + ln(R) - ln(XS) - ln(S)", EX1),
        "example1_design" => ("a*XR*R - XS*S", EX1),
        "example2_column" => (
            "1 - M1/(0.03*(1000*Y)) - M2/(0.015*(1000*Y)) - (P/(0.190*(1000*Y)))^2",
            &["M1", "M2", "P", "Y"],
        ),
        _ => return None,
    })
}

impl LimitState {
    fn from_parts(source: LsfSource, expr: Expr, input_names: Vec<String>) -> Result<Self> {
        if let Some(dup) = input_names.iter().enumerate().find(|(k, n)| input_names[..*k].contains(n)) {
            return Err(Error::config("inputs", format!("duplicate input name `{}`", dup.1)));
        }
        if input_names.iter().any(|n| n == DESIGN_SYMBOL) {
            return Err(Error::DesignParam(format!("`{DESIGN_SYMBOL}` is reserved for the design parameter")));
        }
        let compiled = Compiled::bind(&expr, &input_names, Some(DESIGN_SYMBOL))?;
        let has_design_param = expr.mentions(DESIGN_SYMBOL);
        Ok(LimitState { source, expr, input_names, has_design_param, compiled })
    }

    /// Parses `text` and binds it to `input_names`.
    pub fn from_expression(text: &str, input_names: &[String]) -> Result<Self> {
        let expr = parse(text)?;
        Self::from_parts(LsfSource::Expression(text.to_string()), expr, input_names.to_vec())
    }

    pub fn builtin(id: &str) -> Result<Self> {
        let (text, names) = builtin_text(id).ok_or_else(|| Error::UnknownBuiltin(id.to_string()))?;
        let expr = parse(text).expect("builtin expressions parse");
        Self::from_parts(LsfSource::Builtin(id.to_string()), expr, names.iter().map(|s| s.to_string()).collect())
    }

    /// g(u) = β₀ − Σ αᵢuᵢ on inputs U1..Un.
    pub fn linear(beta0: f64, alpha: &[f64]) -> Self {
        let mut e = num(beta0);
        for (k, &a) in alpha.iter().enumerate() {
            let term = Expr::Bin(BinOp::Mul, Box::new(num(a)), Box::new(Expr::Var(format!("U{}", k + 1))));
            e = Expr::Bin(BinOp::Sub, Box::new(e), Box::new(term));
        }
        let names = (1..=alpha.len()).map(|k| format!("U{k}")).collect();
        Self::from_parts(LsfSource::Builtin("linear".into()), e, names).expect("linear limit state binds")
    }

    /// g_d(x, a) = g(x) + a for a limit state without a design parameter.
    pub fn annex_affine(inner: &LimitState) -> Result<Self> {
        if inner.has_design_param {
            return Err(Error::DesignParam("inner limit state already uses the design parameter".into()));
        }
        let e = Expr::Bin(BinOp::Add, Box::new(inner.expr.clone()), Box::new(Expr::Var(DESIGN_SYMBOL.into())));
        Self::from_parts(LsfSource::Builtin("annex_affine".into()), e, inner.input_names.clone())
    }

    /// Same function with inputs reordered to `names`, which must be a
    /// permutation of the current input names.
    pub fn rebind(&self, names: &[String]) -> Result<Self> {
        let mut a = names.to_vec();
        let mut b = self.input_names.clone();
        a.sort();
        b.sort();
        if a != b {
            for want in &self.input_names {
                if !names.contains(want) {
                    return Err(Error::UnknownIdentifier(want.clone()));
                }
            }
            return Err(Error::config(
                "inputs",
                format!("inputs {names:?} do not match the limit state inputs {:?}", self.input_names),
            ));
        }
        Self::from_parts(self.source.clone(), self.expr.clone(), names.to_vec())
    }

    pub fn source(&self) -> &LsfSource {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn has_design_param(&self) -> bool {
        self.has_design_param
    }

    /// g(x, a). `a` must be given exactly when the limit state uses it.
    pub fn evaluate(&self, x: &[f64], a: Option<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::OutOfDomain(format!("expected {} inputs, got {}", self.dim(), x.len())));
        }
        let av = match (self.has_design_param, a) {
            (true, Some(v)) => v,
            (false, None) => f64::NAN,
            (true, None) => return Err(Error::DesignParam("limit state needs a value for `a`".into())),
            (false, Some(_)) => {
                return Err(Error::DesignParam("limit state has no design parameter `a`".into()));
            }
        };
        self.compiled.eval(x, av).map_err(|message| Error::EvalDomain {
            message,
            values: self.describe_point(x, a),
        })
    }

    fn describe_point(&self, x: &[f64], a: Option<f64>) -> String {
        let mut parts: Vec<String> = self.input_names.iter().zip(x).map(|(n, v)| format!("{n}={v}")).collect();
        if let Some(a) = a {
            parts.push(format!("{DESIGN_SYMBOL}={a}"));
        }
        parts.join(", ")
    }
}

fn num(v: f64) -> Expr {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        Expr::Neg(Box::new(Expr::Num(-v)))
    } else {
        Expr::Num(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example1_safety_at_means() {
        let g = LimitState::builtin("example1_safety").unwrap();
        assert_eq!(g.input_names(), ["R", "S", "XR", "XS"]);
        assert!(!g.has_design_param());
        let v = g.evaluate(&[100.0, 40.0, 1.0, 1.0], None).unwrap();
        assert!((v - 2.5f64.ln()).abs() < 1e-15);
        assert!((v - 0.916_29).abs() < 1e-5);
        assert!(g.evaluate(&[100.0, 80.0, 1.0, 1.0], None).unwrap() < v);
    }

    #[test]
    fn example1_design_at_means() {
        let g = LimitState::builtin("example1_design").unwrap();
        assert!(g.has_design_param());
        assert_eq!(g.evaluate(&[100.0, 40.0, 1.0, 1.0], Some(1.0)).unwrap(), 60.0);
        assert!(matches!(g.evaluate(&[100.0, 40.0, 1.0, 1.0], None), Err(Error::DesignParam(_))));
        let s = LimitState::builtin("example1_safety").unwrap();
        assert!(matches!(s.evaluate(&[100.0, 40.0, 1.0, 1.0], Some(1.0)), Err(Error::DesignParam(_))));
    }

    #[test]
    fn example2_column_at_means() {
        let g = LimitState::builtin("example2_column").unwrap();
        let v = g.evaluate(&[250.0, 125.0, 2500.0, 40.0], None).unwrap();
        let want = 1.0 - 250.0 / 1200.0 - 125.0 / 600.0 - (2500.0f64 / 7600.0).powi(2);
        assert!((v - want).abs() < 1e-14);
        assert!((v - 0.475_13).abs() < 1e-5);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(LimitState::builtin("example3"), Err(Error::UnknownBuiltin(_))));
    }

    #[test]
    fn undeclared_variable_named() {
        let names: Vec<String> = ["M1", "Y"].iter().map(|s| s.to_string()).collect();
        match LimitState::from_expression("1 - M1/(s1*Y)", &names) {
            Err(Error::UnknownIdentifier(v)) => assert_eq!(v, "s1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn domain_error_reports_values() {
        let g = LimitState::builtin("example1_safety").unwrap();
        match g.evaluate(&[-1.0, 40.0, 1.0, 1.0], None) {
            Err(Error::EvalDomain { values, .. }) => assert!(values.contains("R=-1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn annex_affine_adds_design_parameter() {
        let inner = LimitState::linear(3.0, &[0.6, -0.8]);
        let gd = LimitState::annex_affine(&inner).unwrap();
        assert!(gd.has_design_param());
        let u = [0.3, -1.2];
        assert_eq!(gd.evaluate(&u, Some(0.0)).unwrap(), inner.evaluate(&u, None).unwrap());
        assert!((gd.evaluate(&u, Some(0.5)).unwrap() - inner.evaluate(&u, None).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rebind_permutes_inputs() {
        let g = LimitState::builtin("example1_safety").unwrap();
        let names: Vec<String> = ["XS", "XR", "S", "R"].iter().map(|s| s.to_string()).collect();
        let h = g.rebind(&names).unwrap();
        assert_eq!(
            h.evaluate(&[1.0, 1.0, 40.0, 100.0], None).unwrap(),
            g.evaluate(&[100.0, 40.0, 1.0, 1.0], None).unwrap()
        );
        let bad: Vec<String> = ["XS", "XR", "S", "Q"].iter().map(|s| s.to_string()).collect();
        assert!(g.rebind(&bad).is_err());
    }

    #[test]
    fn reserved_design_symbol() {
        let names = vec!["a".to_string()];
        assert!(LimitState::from_expression("a + 1", &names).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn safety_sign_matches_failure_definition(
            r in 1e-3f64..500.0, s in 1e-3f64..500.0, xr in 1e-2f64..5.0, xs in 1e-2f64..5.0
        ) {
            let g = LimitState::builtin("example1_safety").unwrap();
            let v = g.evaluate(&[r, s, xr, xs], None).unwrap();
            let (lhs, rhs) = (xr * r, xs * s);
            // skip points within rounding of the boundary
            prop_assume!((lhs - rhs).abs() > 1e-12 * lhs.max(rhs));
            prop_assert_eq!(v <= 0.0, lhs <= rhs);
        }
    }
}
