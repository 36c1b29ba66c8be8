//! Renewal sequences, their first-passage sequences, and the special
//! functions used by the closed forms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DiscreteDist, DistError};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenewalError {
    #[error("u_0 = {0}, expected 1")]
    BadU0(f64),
    #[error("empty sequence")]
    Empty,
    #[error("f_{index} = {value} is negative")]
    NegativeF { index: usize, value: f64 },
    #[error("partial sums of f exceed 1 at index {0}")]
    FOverflow(usize),
    #[error("u_{index} = {value} is outside (0, 1]")]
    KaluzaRange { index: usize, value: f64 },
    #[error("log-convexity u_n^2 <= u_(n-1) u_(n+1) fails at n = {0}")]
    KaluzaConvexity(usize),
    #[error("argument {0} is a pole")]
    Pole(f64),
    #[error("argument {0} is outside the domain")]
    Domain(f64),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// `f_n = u_n - Σ_{k=1}^{n-1} f_k u_{n-k}` for `n = 1..u.len()-1`.
pub fn f_from_u(u: &[f64]) -> Result<Vec<f64>, RenewalError> {
    let u0 = *u.first().ok_or(RenewalError::Empty)?;
    if (u0 - 1.0).abs() > 1e-12 {
        return Err(RenewalError::BadU0(u0));
    }
    let mut f: Vec<f64> = Vec::with_capacity(u.len().saturating_sub(1));
    for n in 1..u.len() {
        let conv: f64 = (1..n).map(|k| f[k - 1] * u[n - k]).sum();
        f.push(u[n] - conv);
    }
    Ok(f)
}

/// `u_0..=u_horizon` from `f_1, f_2, ...` (entries beyond `f.len()` are zero).
pub fn u_from_f(f: &[f64], horizon: usize) -> Result<Vec<f64>, RenewalError> {
    let mut acc = 0.0;
    for (i, &x) in f.iter().enumerate() {
        if x < 0.0 || x.is_nan() {
            return Err(RenewalError::NegativeF { index: i + 1, value: x });
        }
        acc += x;
        if acc > 1.0 + 1e-9 {
            return Err(RenewalError::FOverflow(i + 1));
        }
    }
    let mut u = Vec::with_capacity(horizon + 1);
    u.push(1.0);
    for n in 1..=horizon {
        let kmax = n.min(f.len());
        let s: f64 = (1..=kmax).map(|k| f[k - 1] * u[n - k]).sum();
        u.push(s);
    }
    Ok(u)
}

/// A renewal sequence `u_0 = 1, u_1, ...` paired with `f_1, f_2, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalSeq {
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    /// True when `f` is known to vanish beyond its stored entries.
    #[serde(default)]
    pub f_complete: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum Classification {
    Transient { total_f: f64 },
    NullRecurrent,
    PositiveRecurrent { mu: f64, u_inf: f64 },
    /// The horizon is too short to tell the cases apart.
    Undetermined { horizon: usize },
}

impl RenewalSeq {
    pub fn from_u(u: Vec<f64>) -> Result<Self, RenewalError> {
        let f = f_from_u(&u)?;
        Ok(Self { u, f, f_complete: false })
    }

    /// A finitely supported first-passage law, expanded to `horizon`.
    pub fn from_f(f: Vec<f64>, horizon: usize) -> Result<Self, RenewalError> {
        let u = u_from_f(&f, horizon)?;
        Ok(Self { u, f, f_complete: true })
    }

    pub fn horizon(&self) -> usize {
        self.u.len() - 1
    }

    /// Checks bounds and the defining convolution at every stored index.
    pub fn check(&self, tol: f64) -> Result<(), String> {
        if (self.u[0] - 1.0).abs() > tol {
            return Err(format!("u_0 = {}", self.u[0]));
        }
        for (n, &x) in self.u.iter().enumerate() {
            if !(-tol..=1.0 + tol).contains(&x) {
                return Err(format!("u_{n} = {x} outside [0, 1]"));
            }
        }
        for (n, &x) in self.f.iter().enumerate() {
            if !(-tol..=1.0 + tol).contains(&x) {
                return Err(format!("f_{} = {x} outside [0, 1]", n + 1));
            }
        }
        if self.f.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err("Σ f exceeds 1".into());
        }
        for n in 1..self.u.len() {
            let kmax = n.min(self.f.len());
            let s: f64 = (1..=kmax).map(|k| self.f[k - 1] * self.u[n - k]).sum();
            if (s - self.u[n]).abs() > tol {
                return Err(format!("convolution fails at n = {n}"));
            }
        }
        Ok(())
    }

    /// `U(z) = Σ u_n z^n` truncated at the horizon.
    pub fn u_gf(&self, z: f64) -> f64 {
        power_series(&self.u, z)
    }

    /// `F(z) = Σ f_n z^n` truncated at the horizon.
    pub fn f_gf(&self, z: f64) -> f64 {
        z * power_series(&self.f, z)
    }

    /// Classification from the truncated first-passage law.
    ///
    /// When `f` is not known to be finitely supported, its last quarter must
    /// have `n f_n <= tol` everywhere, otherwise the result is undetermined.
    pub fn classify(&self, tol: f64) -> Classification {
        let total: f64 = self.f.iter().sum();
        let exhausted = self.f_complete || {
            let h = self.f.len();
            h >= 4 && self.f[h - h / 4..].iter().enumerate().all(|(i, &x)| (h - h / 4 + i + 1) as f64 * x <= tol)
        };
        if !exhausted {
            return Classification::Undetermined { horizon: self.horizon() };
        }
        let defect_tol = if self.f_complete { 1e-9 } else { tol.max(1e-9) };
        if 1.0 - total > defect_tol {
            return Classification::Transient { total_f: total };
        }
        let mu: f64 = self.f.iter().enumerate().map(|(i, &x)| (i + 1) as f64 * x).sum();
        Classification::PositiveRecurrent { mu, u_inf: 1.0 / mu }
    }
}

/// `Π_{j<=n} F(j)` for `n = 0..=n_max`: the block probabilities of the
/// p-shifted permutation.
pub fn product_u(p: &DiscreteDist, n_max: usize) -> Vec<f64> {
    let mut u = Vec::with_capacity(n_max + 1);
    u.push(1.0);
    let mut acc = 1.0;
    for j in 1..=n_max {
        acc *= p.cdf(j);
        u.push(acc);
    }
    u
}

/// Inverts the product formula: `p_1 = u_1`, `p_n = u_n/u_{n-1} - u_{n-1}/u_{n-2}`,
/// with the unused mass placed at infinity.
pub fn kaluza_to_p(u: &[f64]) -> Result<DiscreteDist, RenewalError> {
    let u0 = *u.first().ok_or(RenewalError::Empty)?;
    if (u0 - 1.0).abs() > 1e-12 {
        return Err(RenewalError::BadU0(u0));
    }
    for (n, &x) in u.iter().enumerate().skip(1) {
        if !(x > 0.0 && x <= 1.0 + 1e-12) {
            return Err(RenewalError::KaluzaRange { index: n, value: x });
        }
    }
    let r: Vec<f64> = (1..u.len()).map(|n| u[n] / u[n - 1]).collect();
    for n in 1..r.len() {
        // u_n^2 <= u_{n-1} u_{n+1}  <=>  r_n <= r_{n+1}
        if r[n - 1] > r[n] * (1.0 + 1e-12) {
            return Err(RenewalError::KaluzaConvexity(n));
        }
    }
    if let Some(&last) = r.last() {
        if last > 1.0 + 1e-12 {
            return Err(RenewalError::KaluzaRange { index: r.len(), value: u[r.len()] });
        }
    }
    let mut p = Vec::with_capacity(r.len());
    let mut prev = 0.0;
    for &x in &r {
        let x = x.min(1.0);
        p.push((x - prev).max(0.0));
        prev = prev.max(x);
    }
    let total: f64 = p.iter().sum();
    Ok(DiscreteDist::fixed(p, (1.0 - total).max(0.0))?)
}

/// Horner evaluation of `Σ c_n z^n`.
pub fn power_series(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * z + x)
}

/// Riemann zeta at an integer `k >= 2`: direct sum plus an Euler–Maclaurin tail.
pub fn zeta(k: u32) -> Result<f64, RenewalError> {
    if k < 2 {
        return Err(RenewalError::Domain(k as f64));
    }
    const N: u32 = 40;
    let kf = k as f64;
    let nf = N as f64;
    let head: f64 = (1..=N).rev().map(|n| (n as f64).powf(-kf)).sum();
    let fnk = nf.powf(-kf);
    let tail = nf.powf(1.0 - kf) / (kf - 1.0) - fnk / 2.0 + kf * fnk / (12.0 * nf)
        - kf * (kf + 1.0) * (kf + 2.0) * fnk / (720.0 * nf.powi(3))
        + kf * (kf + 1.0) * (kf + 2.0) * (kf + 3.0) * (kf + 4.0) * fnk / (30240.0 * nf.powi(5));
    Ok(head + tail)
}

fn is_pole(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// The digamma function `Ψ = Γ'/Γ` on the reals.
pub fn digamma(x: f64) -> Result<f64, RenewalError> {
    if is_pole(x) || !x.is_finite() {
        return Err(RenewalError::Pole(x));
    }
    if x < 0.5 {
        // Ψ(x) = Ψ(1 - x) - π cot(πx)
        return Ok(digamma(1.0 - x)? - PI / (PI * x).tan());
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 15.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let series = x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 / 132.0))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

/// `Ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64, RenewalError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(RenewalError::Domain(x));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 15.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let ix = 1.0 / x;
    let x2 = ix * ix;
    let series = ix + x2 / 2.0 + ix * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)));
    Ok(acc + series)
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64, RenewalError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(RenewalError::Domain(x));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let ix = 1.0 / x;
    let x2 = ix * ix;
    let series = ix * (1.0 / 12.0 - x2 * (1.0 / 360.0 - x2 * (1.0 / 1260.0 - x2 / 1680.0)));
    Ok(shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}
