//! Ideal low-pass kernel `s(u) = sin(πu)/(πu)` sampled on the integer grid.
//!
//! For integer `n`, `sin(π(n - τ)) = -(-1)^n sin(πτ)`, so a whole channel of
//! shifted sinc samples costs one `sin` and one division per sample, with no
//! large-argument trigonometry. The sample nearest to `τ` is evaluated
//! directly.

use std::f64::consts::PI;

/// `s(u)` with a series expansion near zero.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let x = PI * u;
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        (PI * u).sin() / (PI * u)
    }
}

/// `ds/du`.
pub fn sinc_derivative(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let p2 = PI * PI;
        -p2 * u / 3.0 + p2 * p2 * u.powi(3) / 30.0
    } else {
        ((PI * u).cos() - sinc(u)) / u
    }
}

/// Splits `τ = k + f` with integer `k` and returns
/// `(k, (-1)^k sin(πf)/π, (-1)^k cos(πf))` so that for `n ≠ k`:
/// `s(n - τ) = -(-1)^n A / (n - τ)` and `cos(π(n - τ)) = (-1)^n B`.
#[inline]
fn split(tau: f64) -> (i64, f64, f64) {
    let k = tau.round();
    let f = tau - k;
    let ki = k as i64;
    let sign = if ki.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let (s, c) = (PI * f).sin_cos();
    (ki, sign * s / PI, sign * c)
}

#[inline]
fn alt(n: usize) -> f64 {
    1.0 - 2.0 * (n & 1) as f64
}

/// `out[n] += gain * s(n - τ)` for every sample `n`.
pub fn add_shifted(out: &mut [f64], tau: f64, gain: f64) {
    let (k, a, _) = split(tau);
    let c = -gain * a;
    let len = out.len();
    let (lo, hi) = exclusion(k, len);
    for (n, o) in out.iter_mut().enumerate().take(lo) {
        *o += c * alt(n) / (n as f64 - tau);
    }
    for (n, o) in out.iter_mut().enumerate().skip(hi) {
        *o += c * alt(n) / (n as f64 - tau);
    }
    if lo < hi {
        out[lo] += gain * sinc(lo as f64 - tau);
    }
}

/// `(Σ x[n] s(n-τ), Σ x[n] s'(n-τ))`.
pub fn shifted_dots(x: &[f64], tau: f64) -> (f64, f64) {
    let (k, a, b) = split(tau);
    let (lo, hi) = exclusion(k, x.len());
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut acc = |n: usize, v: f64| {
        let inv = 1.0 / (n as f64 - tau);
        let w = v * alt(n) * inv;
        a1 += w;
        a2 += w * inv;
    };
    for (n, v) in x.iter().enumerate().take(lo) {
        acc(n, *v);
    }
    for (n, v) in x.iter().enumerate().skip(hi) {
        acc(n, *v);
    }
    let mut dot = -a * a1;
    let mut dot_d = b * a1 + a * a2;
    if lo < hi {
        let u = lo as f64 - tau;
        dot += x[lo] * sinc(u);
        dot_d += x[lo] * sinc_derivative(u);
    }
    (dot, dot_d)
}

/// `Σ x[n] s(n-τ)`: the band-limited interpolation of `x` at `τ`.
pub fn shifted_dot(x: &[f64], tau: f64) -> f64 {
    let (k, a, _) = split(tau);
    let (lo, hi) = exclusion(k, x.len());
    let mut a1 = 0.0;
    for (n, v) in x.iter().enumerate().take(lo) {
        a1 += v * alt(n) / (n as f64 - tau);
    }
    for (n, v) in x.iter().enumerate().skip(hi) {
        a1 += v * alt(n) / (n as f64 - tau);
    }
    let mut dot = -a * a1;
    if lo < hi {
        dot += x[lo] * sinc(lo as f64 - tau);
    }
    dot
}

/// `Σ x[n] s(n-τ)` restricted to `|n - τ| <= half_width`: a truncated
/// interpolator for coarse scans.
pub fn shifted_dot_window(x: &[f64], tau: f64, half_width: usize) -> f64 {
    let (k, a, _) = split(tau);
    let len = x.len() as i64;
    let first = (k - half_width as i64).max(0);
    let last = (k + half_width as i64).min(len - 1);
    let mut acc = 0.0;
    let mut centre = 0.0;
    for n in first..=last {
        let v = x[n as usize];
        if n == k {
            centre = v * sinc(n as f64 - tau);
        } else {
            acc += v * alt(n as usize) / (n as f64 - tau);
        }
    }
    centre - a * acc
}

/// Index range `[lo, hi)` holding the sample nearest to `τ` when it lies in
/// `0..len`; empty otherwise (`lo == hi == len`).
#[inline]
fn exclusion(k: i64, len: usize) -> (usize, usize) {
    if k >= 0 && (k as usize) < len {
        (k as usize, k as usize + 1)
    } else {
        (len, len)
    }
}
