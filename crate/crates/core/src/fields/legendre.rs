//! Legendre polynomials, their tensor products on the square, and
//! Gauss-Legendre quadrature.

use crate::Vec2;

/// Largest per-axis degree supported by the stack-allocated evaluators.
pub const MAX_DEGREE: usize = 15;

/// Number of tensor-product basis functions of per-axis degree `d`.
pub const fn basis_len(d: usize) -> usize {
    (d + 1) * (d + 1)
}

/// Flat index of `L_i(x) L_j(y)`; `j` varies fastest.
pub const fn basis_index(i: usize, j: usize, d: usize) -> usize {
    i * (d + 1) + j
}

/// `L_0(x) ..= L_d(x)` by the three-term recurrence, written into `out`.
pub fn legendre_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}

pub fn legendre(x: f64, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d + 1];
    legendre_into(x, &mut v);
    v
}

/// Values and first derivatives of `L_0 ..= L_d` at `x`.
///
/// Derivatives use `L'_{n+1} = L'_{n-1} + (2n + 1) L_n`, which stays finite at
/// the endpoints.
pub fn legendre_with_derivative(x: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let p = legendre(x, d);
    let mut dp = vec![0.0; d + 1];
    if d >= 1 {
        dp[1] = 1.0;
    }
    for n in 1..d {
        dp[n + 1] = dp[n - 1] + (2 * n + 1) as f64 * p[n];
    }
    (p, dp)
}

/// Tensor basis `L_i(x_1) L_j(x_2)` for `0 <= i, j <= d` in
/// [`basis_index`] order: `(0,0), (0,1), ..., (0,d), (1,0), ...`.
pub fn legendre_tensor_basis(x: &Vec2, d: usize) -> Vec<f64> {
    let px = legendre(x.x, d);
    let py = legendre(x.y, d);
    let mut out = Vec::with_capacity(basis_len(d));
    for a in &px {
        for b in &py {
            out.push(a * b);
        }
    }
    out
}

/// Tensor basis values together with their x- and y-partial derivatives.
pub fn tensor_basis_with_gradient(x: &Vec2, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (px, dpx) = legendre_with_derivative(x.x, d);
    let (py, dpy) = legendre_with_derivative(x.y, d);
    let m = basis_len(d);
    let (mut v, mut gx, mut gy) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
    for i in 0..=d {
        for j in 0..=d {
            v.push(px[i] * py[j]);
            gx.push(dpx[i] * py[j]);
            gy.push(px[i] * dpy[j]);
        }
    }
    (v, gx, gy)
}

/// Evaluate `sum_{ij} c_{ij} L_i(x) L_j(y)` without allocating.
pub fn tensor_series(coeffs: &[f64], d: usize, p: &Vec2) -> f64 {
    debug_assert!(d <= MAX_DEGREE);
    let mut lx = [0.0; MAX_DEGREE + 1];
    let mut ly = [0.0; MAX_DEGREE + 1];
    legendre_into(p.x, &mut lx[..=d]);
    legendre_into(p.y, &mut ly[..=d]);
    let mut total = 0.0;
    for i in 0..=d {
        let row = &coeffs[i * (d + 1)..(i + 1) * (d + 1)];
        let inner: f64 = row.iter().zip(&ly[..=d]).map(|(c, l)| c * l).sum();
        total += lx[i] * inner;
    }
    total
}

/// `n`-point Gauss-Legendre nodes and weights on `[-1, 1]`, via Newton
/// iteration on `L_n` from Chebyshev initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 1..n {
                let mf = m as f64;
                let p2 = ((2.0 * mf + 1.0) * x * p1 - mf * p0) / (mf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = x;
        nodes[n - 1 - k] = -x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        // middle node is exactly zero
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
