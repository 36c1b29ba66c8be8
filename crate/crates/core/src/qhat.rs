//! The nondecreasing chain `Q̂` whose strictly increasing runs give the
//! renewal probabilities of RAM-biased permutations, and the closed forms
//! for GEM masses.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::dist::{FactorLaw, StickBreaking};
use crate::renewal::{KahanSum, EULER_GAMMA};
use crate::rng::{batch_size, geometric_failures, open01, par_batches, Stream, DEFAULT_BATCHES};
use crate::samplers::Estimate;

/// States above this are treated as escaped: from `m` the chain returns to
/// a repeat with probability of order `1/m`.
pub const ESCAPE_STATE: u64 = 1 << 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QhatError {
    #[error("q̂(m, n) needs 1 <= m <= n (got m = {m}, n = {n})")]
    Order { m: u64, n: u64 },
    #[error("theta must be positive (got {0})")]
    Theta(f64),
    #[error("{0} is outside the domain of the closed form")]
    Domain(f64),
    #[error("{0}")]
    Unsupported(String),
}

// Arguments below are always inside the domain of the special functions.
fn lg(x: f64) -> f64 {
    crate::renewal::log_gamma(x).expect("positive argument")
}

fn psi(x: f64) -> f64 {
    crate::renewal::digamma(x).expect("not a pole")
}

fn psi1(x: f64) -> f64 {
    crate::renewal::trigamma(x).expect("positive argument")
}

/// Transition kernel `q̂(m, n) = C(n-1, m-1) E W^{n-m} (1-W)^m`.
#[derive(Clone, Debug)]
pub enum QhatKernel {
    Gem { theta: f64 },
    Ram(StickBreaking),
}

impl QhatKernel {
    pub fn gem(theta: f64) -> Result<Self, QhatError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(QhatError::Theta(theta));
        }
        Ok(QhatKernel::Gem { theta })
    }

    pub fn from_stick(stick: &StickBreaking) -> Self {
        match stick.gem_theta() {
            Some(theta) => QhatKernel::Gem { theta },
            None => QhatKernel::Ram(stick.clone()),
        }
    }

    /// `q̂(m, n)`. GEM(θ) uses `(m)_{n-m} (θ)_m / (1+θ)_n`; constant factors
    /// are exact; other factor laws average over 10^5 fixed-seed draws.
    pub fn kernel(&self, m: u64, n: u64) -> Result<f64, QhatError> {
        if m < 1 || m > n {
            return Err(QhatError::Order { m, n });
        }
        let (mf, nf) = (m as f64, n as f64);
        Ok(match self {
            QhatKernel::Gem { theta } if *theta == 1.0 => mf / (nf * (nf + 1.0)),
            QhatKernel::Gem { theta } => {
                let t = *theta;
                (lg(nf) - lg(mf) + lg(t + mf) - lg(t) + lg(1.0 + t) - lg(1.0 + t + nf)).exp()
            }
            QhatKernel::Ram(stick) => {
                let log_binom = lg(nf) - lg(mf) - lg(nf - mf + 1.0);
                let term = |w: f64| {
                    if w <= 0.0 {
                        return if n == m { 1.0 } else { 0.0 };
                    }
                    (log_binom + (nf - mf) * w.ln() + mf * (1.0 - w).ln()).exp()
                };
                match stick.law {
                    FactorLaw::Constant(w) => term(w),
                    _ => {
                        let mut rng = crate::rng::stream(0x5eed, 0);
                        let draws = 100_000;
                        (0..draws).map(|_| term(stick.sample_factor(&mut rng).0)).sum::<f64>() / draws as f64
                    }
                }
            }
        })
    }

    /// `Σ_{n > big_n} q̂(m, n)`.
    pub fn row_tail(&self, m: u64, big_n: u64) -> Result<f64, QhatError> {
        if big_n < m {
            return Ok(1.0);
        }
        Ok(match self {
            QhatKernel::Gem { theta } => {
                // q̂(m, n) = a(m) b(n) with Σ_{n > N} b(n) = Γ(N+1) / (θ Γ(θ+N+1)).
                let t = *theta;
                let (mf, nf) = (m as f64, big_n as f64);
                let log_a = lg(t + mf) - lg(mf) - lg(t) + lg(1.0 + t);
                let log_tail = lg(nf + 1.0) - t.ln() - lg(t + nf + 1.0);
                (log_a + log_tail).exp()
            }
            QhatKernel::Ram(_) => {
                let mut s = KahanSum::default();
                for n in m..=big_n {
                    s.add(self.kernel(m, n)?);
                }
                (1.0 - s.value()).max(0.0)
            }
        })
    }

    /// One step from state `m`.
    pub fn step(&self, m: u64, rng: &mut Stream) -> u64 {
        if m >= ESCAPE_STATE {
            return m.saturating_mul(2);
        }
        match self {
            QhatKernel::Gem { theta } if *theta == 1.0 => {
                // P(next >= n) = m / n for n >= m
                let x = (m as f64 / open01(rng)).floor();
                if x >= u64::MAX as f64 { u64::MAX } else { (x as u64).max(m) }
            }
            QhatKernel::Gem { theta } => {
                let w = beta_one(*theta, rng);
                m.saturating_add(negative_binomial(m, w, rng))
            }
            QhatKernel::Ram(stick) => {
                let w = stick.sample_factor(rng).0;
                m.saturating_add(negative_binomial(m, w, rng))
            }
        }
    }

    /// Mean one-step increment from `m`, `m E[W/(1-W)]`, when finite.
    pub fn mean_increment(&self, m: u64) -> Option<f64> {
        let mf = m as f64;
        match self {
            QhatKernel::Gem { theta } if *theta > 1.0 => Some(mf / (theta - 1.0)),
            QhatKernel::Gem { .. } => None,
            QhatKernel::Ram(s) => match s.law {
                FactorLaw::Constant(w) => Some(mf * w / (1.0 - w)),
                _ => None,
            },
        }
    }
}

fn beta_one(theta: f64, rng: &mut Stream) -> f64 {
    // W ~ beta(1, θ): 1 - W = U^{1/θ}
    1.0 - open01(rng).powf(1.0 / theta)
}

/// Number of failures (probability `w` each) before the `m`-th success.
fn negative_binomial(m: u64, w: f64, rng: &mut Stream) -> u64 {
    if w <= 0.0 {
        return 0;
    }
    if m <= 32 {
        return (0..m).map(|_| geometric_failures(rng, w)).fold(0u64, u64::saturating_add);
    }
    let lambda = Gamma::new(m as f64, w / (1.0 - w)).expect("valid gamma").sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 1e18 {
        return lambda as u64;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(lambda as u64)
}

/// `Q̂_0 = m0, Q̂_1, ..., Q̂_horizon`.
pub fn qhat_sample_path(kernel: &QhatKernel, m0: u64, horizon: usize, rng: &mut Stream) -> Vec<u64> {
    assert!(m0 >= 1);
    let mut path = Vec::with_capacity(horizon + 1);
    let mut m = m0;
    path.push(m);
    for _ in 0..horizon {
        m = kernel.step(m, rng);
        path.push(m);
    }
    path
}

/// `P(Q̂_0 < Q̂_1 < ... < Q̂_k | Q̂_0 = m0)` by Monte Carlo.
pub fn increasing_run_probability(kernel: &QhatKernel, m0: u64, k: usize, n_chains: u64, seed: u64) -> Estimate {
    let per = par_batches(seed, DEFAULT_BATCHES, |b, rng| {
        let n = batch_size(n_chains, DEFAULT_BATCHES, b);
        let mut hits = 0.0;
        for _ in 0..n {
            let mut m = m0;
            let mut ok = true;
            for _ in 0..k {
                if m >= ESCAPE_STATE {
                    break;
                }
                let next = kernel.step(m, rng);
                if next == m {
                    ok = false;
                    break;
                }
                m = next;
            }
            hits += f64::from(ok);
        }
        (hits, n as f64)
    });
    let (value, se) = crate::stats::ratio_estimate(&per);
    Estimate { value, se }
}

/// `u_k = P(Q̂_0 < ... < Q̂_k | Q̂_0 = 1)` by Monte Carlo.
pub fn u_k_via_increasing_runs(kernel: &QhatKernel, k: usize, n_chains: u64, seed: u64) -> Estimate {
    increasing_run_probability(kernel, 1, k, n_chains, seed)
}

/// Exact `u_k` for GEM(1) as an interval `value ± half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bracket {
    pub value: f64,
    pub half_width: f64,
}

/// Nested sums over increasing paths for GEM(1), truncated at state `big_n`.
///
/// With `v_r(m) = P(r increasing steps | Q̂_0 = m)`, `v_0 = 1` and
/// `v_r(m) = m Σ_{n>m} v_{r-1}(n) / (n(n+1))`. States beyond `big_n` use
/// `v_r(n) = 1 - a_r/(n+1) + O(r^2/n^2)` with `a_r = 1 + a_{r-1}/2`, and the
/// `O` term is carried as the bracket width.
pub fn u_k_exact_gem1(k: usize, big_n: usize) -> Vec<Bracket> {
    let nn = big_n.max(2);
    let nf = nn as f64;
    let mut lo = vec![1.0; nn + 1];
    let mut hi = vec![1.0; nn + 1];
    let mut out = vec![Bracket { value: 1.0, half_width: 0.0 }];
    // Σ_{n>N} 1/(n(n+1)), Σ_{n>N} 1/(n(n+1)^2), and a bound on Σ_{n>N} 1/(n(n+1)^3)
    let s1 = 1.0 / (nf + 1.0);
    let s2 = s1 - psi1(nf + 2.0);
    let s3 = 1.0 / (3.0 * nf * nf * nf);
    let mut a = 0.0;
    for r in 1..=k {
        let slack = ((r - 1) * (r - 1)) as f64;
        let beyond = s1 - a * s2;
        let mut s_lo = KahanSum::default();
        let mut s_hi = KahanSum::default();
        let mut new_lo = vec![0.0; nn + 1];
        let mut new_hi = vec![0.0; nn + 1];
        // suffix sums over n in (m, N]
        for m in (1..=nn).rev() {
            let mf = m as f64;
            new_lo[m] = mf * (s_lo.value() + beyond - slack * s3);
            new_hi[m] = (mf * (s_hi.value() + beyond + slack * s3)).min(1.0);
            let w = 1.0 / (mf * (mf + 1.0));
            s_lo.add(lo[m] * w);
            s_hi.add(hi[m] * w);
        }
        lo = new_lo;
        hi = new_hi;
        a = 1.0 + a / 2.0;
        out.push(Bracket { value: 0.5 * (lo[1] + hi[1]), half_width: 0.5 * (hi[1] - lo[1]) });
    }
    out
}

/// `u_0..=u_{k_max}` for GEM(1) from `2u_k + 3u_{k-1} + u_{k-2} = 2ζ(k)`.
pub fn gem1_u_recursion(k_max: usize) -> Result<Vec<f64>, QhatError> {
    let mut u = vec![1.0, 0.5];
    for k in 2..=k_max {
        let z = crate::renewal::zeta(k as u32).map_err(|_| QhatError::Domain(k as f64))?;
        u.push(z - 1.5 * u[k - 1] - 0.5 * u[k - 2]);
    }
    u.truncate(k_max + 1);
    Ok(u)
}

/// `u_k = Σ_{j>=1} 2 / (j^k (j+1)(j+2))` for GEM(1).
pub fn gem1_u_series(k: u32) -> f64 {
    let big_j = 200_000usize;
    let mut s = KahanSum::default();
    for j in (1..=big_j).rev() {
        let jf = j as f64;
        s.add(2.0 / (jf.powi(k as i32) * (jf + 1.0) * (jf + 2.0)));
    }
    let jf = big_j as f64;
    let tail = match k {
        0 => 2.0 / (jf + 2.0),
        1 => 1.0 / ((jf + 1.0) * (jf + 2.0)),
        _ => {
            // Σ_{j>J} 2 j^{-k-2} (1 - 3/j + ...) by Euler–Maclaurin on the leading terms
            let a = (k + 1) as f64;
            2.0 * ((jf + 0.5).powf(-a) / a - 3.0 * (jf + 0.5).powf(-a - 1.0) / (a + 1.0))
        }
    };
    s.add(tail);
    s.value()
}

/// `U(z) = Σ u_k z^k = 2/((1+z)(2+z)) [1 + (2 - γ - ψ(1-z)) z]` for GEM(1).
pub fn gem1_u_closed_form(z: f64) -> Result<f64, QhatError> {
    if !z.is_finite() || z <= -1.0 || z >= 1.0 {
        return Err(QhatError::Domain(z));
    }
    Ok(2.0 / ((1.0 + z) * (2.0 + z)) * (1.0 + (2.0 - EULER_GAMMA - psi(1.0 - z)) * z))
}

/// `F(z) = 1 - 1/U(z)`, continued analytically through `z = 1` using
/// `ψ(1 - z) = ψ(2 - z) - 1/(1 - z)`.
pub fn gem1_first_passage_gf(z: f64) -> Result<f64, QhatError> {
    if !z.is_finite() || z <= -1.0 || z >= 1.29 {
        return Err(QhatError::Domain(z));
    }
    let e = 1.0 - z;
    let bracket = (1.0 + (2.0 - EULER_GAMMA - psi(2.0 - z)) * z) * e + z;
    Ok(1.0 - (1.0 + z) * (2.0 + z) * e / (2.0 * bracket))
}

/// First and second derivatives of `F` at 1 by backward differences with
/// Richardson extrapolation; `E Y_1 = F'(1)` and `Var Y_1 = F''(1) + F'(1) - F'(1)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Y1Moments {
    pub mean: f64,
    pub variance: f64,
    pub f1: f64,
    pub f2: f64,
}

fn richardson(mut estimates: Vec<f64>) -> f64 {
    // estimates at h, h/2, h/4, ... with errors in integer powers of h
    let mut factor = 2.0;
    while estimates.len() > 1 {
        estimates = estimates.windows(2).map(|w| (factor * w[1] - w[0]) / (factor - 1.0)).collect();
        factor *= 2.0;
    }
    estimates[0]
}

pub fn gem1_y1_moments() -> Y1Moments {
    let f = |z: f64| gem1_first_passage_gf(z).expect("in domain");
    let f1_at = 1.0;
    let hs: Vec<f64> = (0..7).map(|i| 0.05 / 2f64.powi(i)).collect();
    let d1: Vec<f64> = hs.iter().map(|&h| (f1_at - f(1.0 - h)) / h).collect();
    let d2: Vec<f64> = hs.iter().map(|&h| (f1_at - 2.0 * f(1.0 - h) + f(1.0 - 2.0 * h)) / (h * h)).collect();
    let f1 = richardson(d1);
    let f2 = richardson(d2);
    Y1Moments { mean: f1, variance: f2 + f1 - f1 * f1, f1, f2 }
}

/// `u_∞ = Γ(θ+2)Γ(θ+1)/Γ(2θ+2)` for GEM(θ).
pub fn gem_uinfty(theta: f64) -> Result<f64, QhatError> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(QhatError::Theta(theta));
    }
    Ok((lg(theta + 2.0) + lg(theta + 1.0) - lg(2.0 * theta + 2.0)).exp())
}

/// `(1/(1+θ)) Π_{j=2}^{J} j(j+2θ)/(j+θ)^2`, with the remaining factors
/// approximated by `exp(-θ^2 ψ'(J+1+θ))`.
pub fn gem_uinfty_product(theta: f64, big_j: usize) -> Result<f64, QhatError> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(QhatError::Theta(theta));
    }
    let mut log = KahanSum::default();
    log.add(-(1.0 + theta).ln());
    for j in 2..=big_j {
        let jf = j as f64;
        log.add((-(theta / (jf + theta)).powi(2)).ln_1p());
    }
    log.add(-theta * theta * psi1(big_j as f64 + 1.0 + theta));
    Ok(log.value().exp())
}

/// Entrance law `P(Q̂_0 = m) = E W^m / (m E[-log(1-W)])`.
#[derive(Clone, Debug)]
pub struct EntranceLaw {
    law: FactorLaw,
}

impl EntranceLaw {
    pub fn new(stick: &StickBreaking) -> Result<Self, QhatError> {
        match stick.law {
            FactorLaw::Constant(_) | FactorLaw::Beta { .. } => Ok(Self { law: stick.law.clone() }),
            FactorLaw::Custom(_) => Err(QhatError::Unsupported("entrance law needs closed-form moments of W".into())),
        }
    }

    pub fn pmf(&self, m: u64) -> f64 {
        let mf = m as f64;
        match &self.law {
            FactorLaw::Constant(w) => w.powf(mf) / (mf * -(1.0 - w).ln()),
            FactorLaw::Beta { theta } => {
                // E W^m = θ Γ(m+1) Γ(θ) / Γ(m+1+θ), E[-log(1-W)] = 1/θ
                let t = *theta;
                (2.0 * t.ln() + lg(mf + 1.0) + lg(t) - lg(mf + 1.0 + t) - mf.ln()).exp()
            }
            FactorLaw::Custom(_) => unreachable!(),
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> u64 {
        if let FactorLaw::Beta { theta } = self.law {
            if theta == 1.0 {
                // P(Q̂_0 >= m) = 1/m
                let x = (1.0 / open01(rng)).floor();
                return if x >= u64::MAX as f64 { u64::MAX } else { x as u64 };
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut m = 1u64;
        loop {
            acc += self.pmf(m);
            if u < acc || m >= ESCAPE_STATE {
                return m;
            }
            m += 1;
            if m > 50_000_000 {
                return m;
            }
        }
    }
}

/// The GEM(1) start law `1/(m(m+1))`.
pub fn gem1_start(rng: &mut Stream) -> u64 {
    let x = (1.0 / open01(rng)).floor();
    if x >= u64::MAX as f64 { u64::MAX } else { x as u64 }
}

/// `P(strictly increasing forever | Q̂_0 = m) = m/(m+2)` for GEM(1).
pub fn gem1_escape_probability(m: u64) -> f64 {
    m as f64 / (m as f64 + 2.0)
}

/// Empirical occupation-time laws `P(G_j = g)` for `j <= j_max`, `g <= g_max`
/// (last cell lumps `g >= g_max`), joint tables for `(G_1, G_2)` and
/// `(G_2, G_3)`, and the fraction of chains still at or below `j_max` when
/// the horizon ran out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationReport {
    pub chains: u64,
    pub marginals: Vec<Vec<u64>>,
    pub joint12: Vec<Vec<u64>>,
    pub joint23: Vec<Vec<u64>>,
    pub truncated: u64,
    /// Chains whose path never repeated a state within the horizon.
    pub strictly_increasing: u64,
    /// Σ_j (G_j - 1)_+ summed over chains, for states up to the horizon.
    pub l_sum: f64,
    pub l_sq_sum: f64,
}

pub enum Start<'a> {
    Fixed(u64),
    Entrance(&'a EntranceLaw),
}

pub fn occupation_times(kernel: &QhatKernel, start: Start<'_>, horizon: usize, j_max: usize, g_max: usize, n_chains: u64, seed: u64) -> OccupationReport {
    let j_cap = j_max.max(3);
    let per = par_batches(seed, DEFAULT_BATCHES, |b, rng| {
        let n = batch_size(n_chains, DEFAULT_BATCHES, b);
        let mut marg = vec![vec![0u64; g_max + 1]; j_cap];
        let mut j12 = vec![vec![0u64; g_max + 1]; g_max + 1];
        let mut j23 = vec![vec![0u64; g_max + 1]; g_max + 1];
        let mut truncated = 0u64;
        let mut increasing = 0u64;
        let mut l_sum = 0.0;
        let mut l_sq = 0.0;
        let mut g = vec![0usize; j_cap + 1];
        for _ in 0..n {
            g.iter_mut().for_each(|x| *x = 0);
            let mut m = match start {
                Start::Fixed(m) => m,
                Start::Entrance(e) => e.sample(rng),
            };
            let mut l = 0u64;
            let mut run = 1u64;
            let mut repeated = false;
            let mut steps = 0;
            loop {
                if (m as usize) <= j_cap {
                    g[m as usize] += 1;
                }
                let next = if steps < horizon && m < ESCAPE_STATE { Some(kernel.step(m, rng)) } else { None };
                steps += 1;
                match next {
                    Some(x) if x == m => {
                        run += 1;
                        repeated = true;
                    }
                    Some(x) => {
                        l += run - 1;
                        run = 1;
                        m = x;
                    }
                    None => {
                        l += run - 1;
                        if (m as usize) <= j_cap {
                            truncated += 1;
                        }
                        break;
                    }
                }
            }
            increasing += u64::from(!repeated);
            l_sum += l as f64;
            l_sq += (l * l) as f64;
            let cell = |x: usize| x.min(g_max);
            for j in 1..=j_cap {
                marg[j - 1][cell(g[j])] += 1;
            }
            j12[cell(g[1])][cell(g[2])] += 1;
            j23[cell(g[2])][cell(g[3])] += 1;
        }
        (marg, j12, j23, truncated, increasing, l_sum, l_sq)
    });
    let mut rep = OccupationReport {
        chains: n_chains,
        marginals: vec![vec![0; g_max + 1]; j_cap],
        joint12: vec![vec![0; g_max + 1]; g_max + 1],
        joint23: vec![vec![0; g_max + 1]; g_max + 1],
        truncated: 0,
        strictly_increasing: 0,
        l_sum: 0.0,
        l_sq_sum: 0.0,
    };
    let add = |a: &mut Vec<Vec<u64>>, b: &Vec<Vec<u64>>| {
        for (x, y) in a.iter_mut().zip(b) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q;
            }
        }
    };
    for (marg, j12, j23, t, inc, ls, lq) in &per {
        add(&mut rep.marginals, marg);
        add(&mut rep.joint12, j12);
        add(&mut rep.joint23, j23);
        rep.truncated += t;
        rep.strictly_increasing += inc;
        rep.l_sum += ls;
        rep.l_sq_sum += lq;
    }
    rep.marginals.truncate(j_max);
    rep
}

/// `E[-log W] / E[-log(1-W)]`, the mean of `Σ_j (G_j - 1)_+` under the
/// entrance law.
pub fn expected_l_infinity(stick: &StickBreaking) -> Option<f64> {
    Some(-stick.mean_log_factor()? / -stick.mean_log_residual()?)
}

/// Sufficient condition for positive recurrence of a RAM-biased
/// permutation: `E[-log W] < ∞` and `E[-log(1-W)] < ∞`. The non-lattice
/// requirement on `-log(1-W)` is left to the caller.
pub fn sufficient_condition(stick: &StickBreaking) -> Option<bool> {
    stick.log_moments_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::chi_square_gof;

    const PI2_6: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;

    #[test]
    fn kernel_examples() {
        let k1 = QhatKernel::gem(1.0).unwrap();
        assert_eq!(k1.kernel(1, 1).unwrap(), 0.5);
        assert!((k1.kernel(1, 2).unwrap() - 1.0 / 6.0).abs() < 1e-16);
        let k2 = QhatKernel::gem(2.0).unwrap();
        assert!((k2.kernel(1, 1).unwrap() - 2.0 / 3.0).abs() < 1e-13);
        assert!(k1.kernel(3, 2).is_err());
        for m in 1..6u64 {
            for k in [&k1, &k2, &QhatKernel::gem(0.7).unwrap()] {
                let big_n = 5000;
                let mut s = KahanSum::default();
                let mut prev = 0.0;
                for n in m..=big_n {
                    s.add(k.kernel(m, n).unwrap());
                    assert!(s.value() >= prev);
                    prev = s.value();
                }
                s.add(k.row_tail(m, big_n).unwrap());
                assert!((s.value() - 1.0).abs() < 1e-10, "m={m} {}", s.value());
            }
            assert!((k1.row_tail(m, 99).unwrap() - m as f64 / 100.0).abs() < 1e-13);
        }
        let c = QhatKernel::Ram(StickBreaking::constant(0.5).unwrap());
        assert!((c.kernel(2, 3).unwrap() - 2.0 * 0.125).abs() < 1e-12);
    }

    #[test]
    fn sample_paths() {
        let mut rng = stream(1, 0);
        let c = QhatKernel::Ram(StickBreaking::constant(0.5).unwrap());
        let n = 200_000;
        let mean = (0..n).map(|_| (c.step(1, &mut rng) - 1) as f64).sum::<f64>() / n as f64;
        assert!((mean - c.mean_increment(1).unwrap()).abs() < 0.01);
        let k1 = QhatKernel::gem(1.0).unwrap();
        let mut counts = vec![0u64; 30];
        for _ in 0..n {
            let x = k1.step(1, &mut rng) as usize;
            if x < 30 {
                counts[x - 1] += 1;
            }
        }
        counts.truncate(29);
        let probs: Vec<f64> = (1..30).map(|x| k1.kernel(1, x).unwrap()).collect();
        let extra = n - counts.iter().sum::<u64>();
        counts.push(extra);
        assert!(chi_square_gof(&counts, &probs, 5.0).p_value > 1e-3);
        for k in [&k1, &QhatKernel::gem(2.5).unwrap(), &c] {
            let p = qhat_sample_path(k, 3, 40, &mut rng);
            assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn gem1_tower() {
        let rec = gem1_u_recursion(30).unwrap();
        assert_eq!((rec[0], rec[1]), (1.0, 0.5));
        assert!((rec[2] - (PI2_6 - 1.25)).abs() < 1e-14);
        let exact = u_k_exact_gem1(12, 1_000_000);
        for k in 0..=12 {
            let s = gem1_u_series(k as u32);
            assert!((rec[k] - s).abs() < 1e-9, "k={k} {} {}", rec[k], s);
            assert!(exact[k].half_width < 1e-9);
            assert!((exact[k].value - rec[k]).abs() < 1e-9, "k={k} {:?} {}", exact[k], rec[k]);
        }
        assert!(rec.windows(2).all(|w| w[1] < w[0] && w[1] > 1.0 / 3.0));
        assert!((rec[30] - 1.0 / 3.0).abs() < 1e-8);
        let series: f64 = rec.iter().chain(gem1_u_recursion(60).unwrap()[31..].iter()).enumerate().map(|(k, u)| u * 0.5f64.powi(k as i32)).sum();
        assert!((series - gem1_u_closed_form(0.5).unwrap()).abs() < 1e-8);
        assert!(gem1_u_closed_form(1.0).is_err());
    }

    #[test]
    fn y1_moments() {
        let m = gem1_y1_moments();
        assert!((m.mean - 3.0).abs() < 1e-6, "{m:?}");
        assert!((m.variance - 11.0).abs() < 1e-6, "{m:?}");
        assert!((gem1_first_passage_gf(1.0).unwrap() - 1.0).abs() < 1e-15);
        let z = 0.3;
        let f = gem1_first_passage_gf(z).unwrap();
        assert!((f - (1.0 - 1.0 / gem1_u_closed_form(z).unwrap())).abs() < 1e-13);
    }

    #[test]
    fn uinfty() {
        assert!((gem_uinfty(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((gem_uinfty(2.0).unwrap() - 0.1).abs() < 1e-14);
        assert!((gem_uinfty(1e-9).unwrap() - 1.0).abs() < 1e-8);
        assert!(gem_uinfty(0.0).is_err());
        for theta in [0.5, 1.0, 2.0] {
            let a = gem_uinfty(theta).unwrap();
            let b = gem_uinfty_product(theta, 20_000).unwrap();
            assert!((a - b).abs() < 1e-10, "θ={theta} {a} {b}");
        }
    }

    #[test]
    fn runs_and_escape() {
        let k1 = QhatKernel::gem(1.0).unwrap();
        let rec = gem1_u_recursion(4).unwrap();
        for k in 1..=4 {
            let e = u_k_via_increasing_runs(&k1, k, 200_000, k as u64);
            assert!(((e.value - rec[k]) / e.se).abs() < 4.5, "k={k} {e:?}");
        }
        let e = increasing_run_probability(&k1, 2, 64, 200_000, 9);
        assert!((e.value - 0.5).abs() < 0.005);
    }

    #[test]
    fn occupation_geometrics() {
        let k1 = QhatKernel::gem(1.0).unwrap();
        let stick = StickBreaking::gem(1.0).unwrap();
        let law = EntranceLaw::new(&stick).unwrap();
        for m in 1..5 {
            assert!((law.pmf(m) - 1.0 / (m * (m + 1)) as f64).abs() < 1e-12);
        }
        let total: f64 = (1..100_000).map(|m| law.pmf(m)).sum::<f64>() + 1.0 / 100_000.0;
        assert!((total - 1.0).abs() < 1e-9);
        let n = 200_000;
        let rep = occupation_times(&k1, Start::Entrance(&law), 200, 3, 8, n, 2);
        assert_eq!(rep.truncated, 0);
        let p0 = rep.marginals[0][0] as f64 / n as f64;
        assert!((p0 - 0.5).abs() < 0.005);
        let inc = rep.strictly_increasing as f64 / n as f64;
        assert!((inc - 0.5).abs() < 0.005);
        for j in 1..=3usize {
            let probs: Vec<f64> = (0..8).map(|g| (j as f64 / (j as f64 + 1.0)) * (1.0 / (j as f64 + 1.0)).powi(g)).collect();
            assert!(chi_square_gof(&rep.marginals[j - 1], &probs, 5.0).p_value > 1e-3, "j={j}");
        }
        let mean_l = rep.l_sum / n as f64;
        let sd = (rep.l_sq_sum / n as f64 - mean_l * mean_l).sqrt() / (n as f64).sqrt();
        assert!((mean_l - expected_l_infinity(&stick).unwrap()).abs() < 4.5 * sd, "{mean_l} ± {sd}");
        let c = EntranceLaw::new(&StickBreaking::constant(0.4).unwrap()).unwrap();
        let total: f64 = (1..200).map(|m| c.pmf(m)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(sufficient_condition(&stick), Some(true));
    }
}
