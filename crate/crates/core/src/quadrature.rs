//! Quadrature rules used by the oracle.
//!
//! Every coincidence integrand is a trigonometric polynomial in `λ`, so the
//! uniform-grid rule on a full period is exact up to degree `N-1`. The only
//! non-smooth integrand (Eve's error, which switches branch at `π/4`) is
//! split at the kink and handled with Gauss-Legendre on each smooth piece.

use std::f64::consts::{PI, TAU};

/// Node count of the periodic rule.
pub const PERIODIC_NODES: usize = 512;

/// Node count of the Gauss-Legendre rule.
pub const GAUSS_NODES: usize = 48;

/// Mean of a `2π`-periodic function, `(1/2π)∫₀^{2π} f`, on a uniform grid.
pub fn periodic_mean<F: Fn(f64) -> f64>(f: F) -> f64 {
    periodic_mean_with(PERIODIC_NODES, f)
}

pub fn periodic_mean_with<F: Fn(f64) -> f64>(nodes: usize, f: F) -> f64 {
    let h = TAU / nodes as f64;
    let sum: f64 = (0..nodes).map(|i| f(i as f64 * h)).sum();
    sum / nodes as f64
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_a^b f` by Gauss-Legendre with [`GAUSS_NODES`] nodes.
pub fn integrate<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let (x, w) = gauss_legendre(GAUSS_NODES);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}
