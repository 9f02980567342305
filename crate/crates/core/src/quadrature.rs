//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration.

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&v| v * half).collect(),
    )
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive G7K15 with a global bisection-by-worst-interval strategy.
///
/// Returns `(value, error_estimate)`.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<(f64, f64)> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite limits [{a}, {b}]")));
    }
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (v, e) = kronrod15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature("integrand produced a non-finite value".into()));
        }
        if err <= abs_tol {
            let mut sorted = pieces.clone();
            sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
            let value = sorted.iter().map(|p| p.2).sum();
            return Ok((value, err));
        }
        if pieces.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {err:.3e} above {abs_tol:.3e} after {max_intervals} intervals"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (pa, pb, _, _) = pieces.swap_remove(worst);
        let m = 0.5 * (pa + pb);
        let (v1, e1) = kronrod15(&f, pa, m);
        let (v2, e2) = kronrod15(&f, m, pb);
        pieces.push((pa, m, v1, e1));
        pieces.push((m, pb, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(&t, &v)| v * t.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn large_rule_weights_sum() {
        let (_, w) = gauss_legendre(128);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn adaptive_gaussian() {
        let eps = 0.01f64;
        let f = |x: f64| (-x * x / eps).exp() / (std::f64::consts::PI * eps).sqrt();
        let (v, e) = integrate(f, 0.0, 3.0, 1e-13, 500).unwrap();
        assert!((v - 0.5).abs() < 1e-13, "{v} {e}");
    }

    #[test]
    fn adaptive_rejects_infinite_limits() {
        assert!(integrate(|x| x, 0.0, f64::INFINITY, 1e-10, 10).is_err());
    }
}
