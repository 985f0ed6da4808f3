//! Small numerical building blocks: Brent root finding and Gauss quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, Copy)]
pub struct Root {
    pub x: f64,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Brent's method on `[a, b]`. Requires a sign change; returns `None` otherwise.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Option<Root> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(Root { x: a, f: 0.0, iterations: 0, converged: true });
    }
    if fb == 0.0 {
        return Some(Root { x: b, f: 0.0, iterations: 0, converged: true });
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for it in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(Root { x: b, f: fb, iterations: it, converged: true });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(Root { x: b, f: fb, iterations: max_iter, converged: false })
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Probabilists' Gauss–Hermite rule: nodes `z_k` and weights `w_k` with
/// `sum w_k h(z_k) ≈ E[h(Z)]`, `Z ~ N(0, 1)`. Golub–Welsch.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(z, w)| (z, w / total)).unzip()
}

/// Adaptive Gauss–Legendre integration (10 vs 20 points per panel, bisect
/// until the panel estimates agree).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> (f64, f64) {
    thread_local! {
        static RULES: ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>)) = (gauss_legendre(10), gauss_legendre(20));
    }
    RULES.with(|(lo, hi)| {
        let panel = |a: f64, b: f64| -> (f64, f64) {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a);
            let coarse: f64 = lo.0.iter().zip(&lo.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h;
            let fine: f64 = hi.0.iter().zip(&hi.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h;
            (fine, (fine - coarse).abs())
        };
        let (whole, _) = panel(a, b);
        let mut stack = vec![(a, b, 0usize)];
        let mut total = 0.0;
        let mut err = 0.0;
        while let Some((lo_x, hi_x, depth)) = stack.pop() {
            let (val, e) = panel(lo_x, hi_x);
            let tol = (rel_tol * whole.abs()).max(abs_tol) * ((hi_x - lo_x) / (b - a)).max(1e-6);
            if e <= tol || depth >= 40 {
                total += val;
                err += e;
            } else {
                let mid = 0.5 * (lo_x + hi_x);
                stack.push((lo_x, mid, depth + 1));
                stack.push((mid, hi_x, depth + 1));
            }
        }
        (total, err)
    })
}

/// `n` points evenly spaced on `[a, b]` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|k| if k == n - 1 { b } else { a + (b - a) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// `n` points log-evenly spaced on `[a, b]`, both positive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Composite trapezoid over tabulated points.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 100).unwrap();
        assert!(r.converged);
        assert!((r.x - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn brent_rejects_missing_bracket() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 50).is_none());
    }

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(12);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((v - 2.0 / 23.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        let (z, w) = gauss_hermite_prob(32);
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        let m6: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(6)).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        assert!((m6 - 15.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_kink() {
        let (v, _) = integrate_adaptive(&|x: f64| x.abs(), -1.0, 2.0, 1e-12, 0.0);
        assert!((v - 2.5).abs() < 1e-10);
    }
}
