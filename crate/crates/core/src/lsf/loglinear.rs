//! Recognition of limit states that are linear in the logarithms of their
//! inputs, g ~ k(a) + Σ cᵢ ln xᵢ, which have exact solutions for lognormal
//! inputs.

use super::expr::{BinOp, Compiled, Expr, Func};
use super::{LimitState, DESIGN_SYMBOL};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct LogLinearForm {
    pub coeffs: Vec<f64>,
    constant: Compiled,
    constant_text: String,
}

impl LogLinearForm {
    /// k(a); `a` is ignored when the constant does not depend on it.
    pub fn constant(&self, a: Option<f64>) -> Result<f64> {
        self.constant
            .eval(&[], a.unwrap_or(f64::NAN))
            .map_err(|m| crate::Error::EvalDomain { message: m, values: format!("a = {a:?}") })
    }

    pub fn constant_expression(&self) -> &str {
        &self.constant_text
    }
}

#[derive(Default)]
struct Acc {
    coeffs: Vec<f64>,
    constant: Vec<(f64, Expr)>,
}

impl Acc {
    fn new(n: usize) -> Self {
        Acc { coeffs: vec![0.0; n], constant: Vec::new() }
    }

    fn add(&mut self, other: Acc, scale: f64) {
        for (c, o) in self.coeffs.iter_mut().zip(other.coeffs) {
            *c += scale * o;
        }
        self.constant.extend(other.constant.into_iter().map(|(s, e)| (s * scale, e)));
    }
}

fn number(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Neg(inner) => number(inner).map(|v| -v),
        _ => None,
    }
}

/// ln of a product of positive factors raised to constant powers.
fn log_monomial(e: &Expr, names: &[String]) -> Option<Acc> {
    let mut acc = Acc::new(names.len());
    match e {
        Expr::Num(v) if *v > 0.0 => acc.constant.push((1.0, Expr::Num(v.ln()))),
        Expr::Var(v) if v == DESIGN_SYMBOL => {
            acc.constant.push((1.0, Expr::Call(Func::Ln, vec![Expr::Var(v.clone())])));
        }
        Expr::Var(v) => acc.coeffs[names.iter().position(|n| n == v)?] = 1.0,
        Expr::Bin(BinOp::Mul, a, b) => {
            acc.add(log_monomial(a, names)?, 1.0);
            acc.add(log_monomial(b, names)?, 1.0);
        }
        Expr::Bin(BinOp::Div, a, b) => {
            acc.add(log_monomial(a, names)?, 1.0);
            acc.add(log_monomial(b, names)?, -1.0);
        }
        Expr::Bin(BinOp::Pow, a, k) => acc.add(log_monomial(a, names)?, number(k)?),
        _ => return None,
    }
    Some(acc)
}

/// Sum of constants and multiples of ln(monomial).
fn log_sum(e: &Expr, names: &[String]) -> Option<Acc> {
    let mut acc = Acc::new(names.len());
    match e {
        Expr::Num(v) => acc.constant.push((1.0, Expr::Num(*v))),
        Expr::Neg(a) => acc.add(log_sum(a, names)?, -1.0),
        Expr::Bin(op @ (BinOp::Add | BinOp::Sub), a, b) => {
            acc.add(log_sum(a, names)?, 1.0);
            acc.add(log_sum(b, names)?, if *op == BinOp::Add { 1.0 } else { -1.0 });
        }
        Expr::Call(Func::Ln, args) if args.len() == 1 => acc.add(log_monomial(&args[0], names)?, 1.0),
        Expr::Bin(BinOp::Mul, k, a) | Expr::Bin(BinOp::Mul, a, k) if number(k).is_some() => {
            acc.add(log_sum(a, names)?, number(k)?);
        }
        _ => return None,
    }
    Some(acc)
}

/// Finds g's log-linear form if it has one: either `M₁ − M₂` with M₁, M₂
/// products of powers, or a sum of logarithms of such products. The sign of
/// g is preserved in both cases, which is all the failure event needs.
pub fn log_linear_form(lsf: &LimitState) -> Option<LogLinearForm> {
    let names = lsf.input_names();
    let e = lsf.expr();
    let acc = match e {
        Expr::Bin(BinOp::Sub, a, b) => match (log_monomial(a, names), log_monomial(b, names)) {
            (Some(x), Some(y)) => {
                let mut acc = Acc::new(names.len());
                acc.add(x, 1.0);
                acc.add(y, -1.0);
                acc
            }
            _ => log_sum(e, names)?,
        },
        _ => log_sum(e, names)?,
    };
    let mut k = Expr::Num(0.0);
    for (s, term) in acc.constant {
        k = Expr::Bin(BinOp::Add, Box::new(k), Box::new(Expr::Bin(BinOp::Mul, Box::new(Expr::Num(s)), Box::new(term))));
    }
    let constant = Compiled::bind(&k, &[], Some(DESIGN_SYMBOL)).ok()?;
    Some(LogLinearForm { coeffs: acc.coeffs, constant, constant_text: k.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn builtins() {
        let f = log_linear_form(&LimitState::builtin("example1_safety").unwrap()).unwrap();
        assert_eq!(f.coeffs, vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(f.constant(None).unwrap(), 0.0);
        let f = log_linear_form(&LimitState::builtin("example1_design").unwrap()).unwrap();
        assert_eq!(f.coeffs, vec![1.0, -1.0, 1.0, -1.0]);
        assert!((f.constant(Some(1.5)).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!(log_linear_form(&LimitState::builtin("example2_column").unwrap()).is_none());
    }

    #[test]
    fn powers_and_constants() {
        let g = LimitState::from_expression("2*R^2/X - S", &names(&["R", "S", "X"])).unwrap();
        let f = log_linear_form(&g).unwrap();
        assert_eq!(f.coeffs, vec![2.0, -1.0, -1.0]);
        assert!((f.constant(None).unwrap() - 2f64.ln()).abs() < 1e-15);
        let g = LimitState::from_expression("3 + 0.5*ln(R) - ln(S*X)", &names(&["R", "S", "X"])).unwrap();
        let f = log_linear_form(&g).unwrap();
        assert_eq!(f.coeffs, vec![0.5, -1.0, -1.0]);
        assert_eq!(f.constant(None).unwrap(), 3.0);
    }

    #[test]
    fn rejects_nonlinear() {
        for text in ["R - S - 1", "R + S", "ln(R + S)", "R*S - exp(S)", "-R - S"] {
            let g = LimitState::from_expression(text, &names(&["R", "S"])).unwrap();
            assert!(log_linear_form(&g).is_none(), "{text}");
        }
    }
}
