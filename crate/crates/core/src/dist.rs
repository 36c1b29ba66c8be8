//! Distributions on the positive integers and stick-breaking laws.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::rng::{geometric_failures, open01, Stream};

/// Tolerance on total mass.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("mass p_{index} = {value} is not a probability")]
    BadMass { index: usize, value: f64 },
    #[error("defect p_inf = {0} is not a probability")]
    BadDefect(f64),
    #[error("masses plus defect sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("partial sums exceed 1 at index {0}")]
    PartialSumOverflow(usize),
    #[error("geometric parameter q = {0} must lie in (0, 1)")]
    BadQ(f64),
    #[error("stick-breaking shape theta = {0} must be positive")]
    BadTheta(f64),
    #[error("constant stick factor {0} must lie in (0, 1)")]
    BadFactor(f64),
}

/// A sample from a distribution on `{1, 2, ..., ∞}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Draw {
    Finite(u64),
    Infinite,
}

impl Draw {
    pub fn finite(self) -> Option<u64> {
        match self {
            Draw::Finite(k) => Some(k),
            Draw::Infinite => None,
        }
    }
}

impl From<u64> for Draw {
    fn from(k: u64) -> Self {
        Draw::Finite(k)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct FixedMasses {
    masses: Vec<f64>,
    /// `cdf[j] = p_1 + ... + p_{j+1}`.
    cdf: Vec<f64>,
    /// `tails[j] = P(X > j)` for `j = 0..=len`, including the defect.
    tails: Vec<f64>,
    p_inf: f64,
}

/// A probability distribution `p = (p_1, p_2, ...)` on the positive integers,
/// possibly defective with mass `p_inf` at infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist(Kind);

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Fixed(FixedMasses),
    /// `p_i = q^{i-1} (1 - q)`.
    Geometric { q: f64 },
}

impl DiscreteDist {
    /// A finitely supported vector of masses with an explicit defect.
    pub fn fixed(masses: Vec<f64>, p_inf: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&p_inf) || !p_inf.is_finite() {
            return Err(DistError::BadDefect(p_inf));
        }
        let mut cdf = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for (i, &m) in masses.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) || !m.is_finite() {
                return Err(DistError::BadMass { index: i + 1, value: m });
            }
            acc += m;
            if acc > 1.0 + MASS_TOL {
                return Err(DistError::PartialSumOverflow(i + 1));
            }
            cdf.push(acc);
        }
        if (acc + p_inf - 1.0).abs() > MASS_TOL {
            return Err(DistError::NotNormalized(acc + p_inf));
        }
        let mut tails = vec![0.0; masses.len() + 1];
        let mut suffix = p_inf;
        tails[masses.len()] = suffix;
        for j in (0..masses.len()).rev() {
            suffix += masses[j];
            tails[j] = suffix;
        }
        Ok(Self(Kind::Fixed(FixedMasses { masses, cdf, tails, p_inf })))
    }

    /// The geometric(1 - q) law on the positive integers.
    pub fn geometric(q: f64) -> Result<Self, DistError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(DistError::BadQ(q));
        }
        Ok(Self(Kind::Geometric { q }))
    }

    pub fn point_mass(k: usize) -> Self {
        assert!(k >= 1);
        let mut m = vec![0.0; k];
        m[k - 1] = 1.0;
        Self::fixed(m, 0.0).expect("point mass is a distribution")
    }

    pub fn is_geometric(&self) -> Option<f64> {
        match self.0 {
            Kind::Geometric { q } => Some(q),
            Kind::Fixed(_) => None,
        }
    }

    /// Number of explicitly stored masses; `None` for infinite support.
    pub fn support_len(&self) -> Option<usize> {
        match &self.0 {
            Kind::Fixed(f) => Some(f.masses.len()),
            Kind::Geometric { .. } => None,
        }
    }

    /// `p_i`; zero beyond the stored masses.
    pub fn mass(&self, i: usize) -> f64 {
        assert!(i >= 1, "masses are indexed from 1");
        match &self.0 {
            Kind::Fixed(f) => f.masses.get(i - 1).copied().unwrap_or(0.0),
            Kind::Geometric { q } => q.powi((i - 1) as i32) * (1.0 - q),
        }
    }

    /// `F(j) = p_1 + ... + p_j`, with `F(0) = 0`.
    pub fn cdf(&self, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        match &self.0 {
            Kind::Fixed(f) => f.cdf.get(j - 1).or(f.cdf.last()).copied().unwrap_or(0.0),
            Kind::Geometric { q } => -(j as f64 * q.ln()).exp_m1(),
        }
    }

    /// `P(X > j)`, counting the defect.
    pub fn tail(&self, j: usize) -> f64 {
        match &self.0 {
            Kind::Fixed(f) => f.tails[j.min(f.masses.len())],
            Kind::Geometric { q } => q.powi(j as i32),
        }
    }

    pub fn p_inf(&self) -> f64 {
        match &self.0 {
            Kind::Fixed(f) => f.p_inf,
            Kind::Geometric { .. } => 0.0,
        }
    }

    /// `p_i / P(X >= i)`, the conditional probability of stopping at `i`.
    pub fn hazard(&self, i: usize) -> f64 {
        match &self.0 {
            Kind::Geometric { q } => 1.0 - q,
            Kind::Fixed(_) => {
                let t = self.tail(i - 1);
                if t > 0.0 {
                    (self.mass(i) / t).min(1.0)
                } else {
                    1.0
                }
            }
        }
    }

    /// `m = Σ i p_i`; infinite when there is mass at infinity.
    pub fn mean(&self) -> f64 {
        if self.p_inf() > 0.0 {
            return f64::INFINITY;
        }
        match &self.0 {
            Kind::Fixed(f) => f.masses.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum(),
            Kind::Geometric { q } => 1.0 / (1.0 - q),
        }
    }

    /// Masses `p_1..=p_n`.
    pub fn masses(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.mass(i)).collect()
    }

    /// Smallest `n` with `P(X > n) <= eps` (the stored length for fixed vectors).
    pub fn effective_support(&self, eps: f64) -> usize {
        match &self.0 {
            Kind::Fixed(f) => f.masses.len(),
            Kind::Geometric { q } => ((eps.ln() / q.ln()).ceil() as usize).max(1),
        }
    }

    /// Inversion: closed form for the geometric law, linear walk over the
    /// cached cumulative sums otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        match &self.0 {
            Kind::Geometric { q } => Draw::Finite(1 + geometric_failures(rng, *q)),
            Kind::Fixed(f) => {
                let u: f64 = rng.random();
                for (i, &c) in f.cdf.iter().enumerate() {
                    if u < c {
                        return Draw::Finite(i as u64 + 1);
                    }
                }
                if f.p_inf > 0.0 {
                    Draw::Infinite
                } else {
                    // Rounding left u in [cdf_last, 1): take the last atom with mass.
                    let last = f.masses.iter().rposition(|&m| m > 0.0).unwrap_or(0);
                    Draw::Finite(last as u64 + 1)
                }
            }
        }
    }

    /// A draw from the size-biased law `n p_n / m`.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        let m = self.mean();
        if !m.is_finite() {
            return None;
        }
        match &self.0 {
            Kind::Geometric { q } => {
                Some(1 + geometric_failures(rng, *q) + geometric_failures(rng, *q))
            }
            Kind::Fixed(f) => {
                let u: f64 = rng.random::<f64>() * m;
                let mut acc = 0.0;
                for (i, &p) in f.masses.iter().enumerate() {
                    acc += (i + 1) as f64 * p;
                    if u < acc {
                        return Some(i as u64 + 1);
                    }
                }
                f.masses.iter().rposition(|&p| p > 0.0).map(|i| i as u64 + 1)
            }
        }
    }
}

/// Custom factor sampler: returns a value in (0, 1).
#[derive(Clone)]
pub struct CustomFactor(pub Arc<dyn Fn(&mut Stream) -> f64 + Send + Sync>);

impl fmt::Debug for CustomFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomFactor(..)")
    }
}

/// Law of the i.i.d. residual factors `W_i`.
#[derive(Clone, Debug)]
pub enum FactorLaw {
    /// `W ≡ w`; with `w = 1 - q` the masses are geometric(1 - q).
    Constant(f64),
    /// beta(1, θ), giving GEM(θ).
    Beta { theta: f64 },
    Custom(CustomFactor),
}

/// A residual allocation model `P_i = (1 - W_1) ... (1 - W_{i-1}) W_i`.
#[derive(Clone, Debug)]
pub struct StickBreaking {
    pub law: FactorLaw,
}

/// `n` factors with their derived masses and tails `T_i = (1-W_1)...(1-W_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StickDraw {
    pub w: Vec<f64>,
    pub p: Vec<f64>,
    pub t: Vec<f64>,
}

impl StickBreaking {
    pub fn constant(w: f64) -> Result<Self, DistError> {
        if !(w > 0.0 && w < 1.0) {
            return Err(DistError::BadFactor(w));
        }
        Ok(Self { law: FactorLaw::Constant(w) })
    }

    pub fn gem(theta: f64) -> Result<Self, DistError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(DistError::BadTheta(theta));
        }
        Ok(Self { law: FactorLaw::Beta { theta } })
    }

    pub fn custom(f: impl Fn(&mut Stream) -> f64 + Send + Sync + 'static) -> Self {
        Self { law: FactorLaw::Custom(CustomFactor(Arc::new(f))) }
    }

    pub fn gem_theta(&self) -> Option<f64> {
        match self.law {
            FactorLaw::Beta { theta } => Some(theta),
            _ => None,
        }
    }

    /// One factor as the pair `(W, 1 - W)`, both strictly inside (0, 1).
    pub fn sample_factor(&self, rng: &mut Stream) -> (f64, f64) {
        match &self.law {
            FactorLaw::Constant(w) => (*w, 1.0 - w),
            FactorLaw::Beta { theta } => loop {
                // 1 - W = U^{1/θ}
                let l = open01(rng).ln() / theta;
                let w = -l.exp_m1();
                let r = l.exp();
                if w > 0.0 && w < 1.0 && r > 0.0 {
                    return (w, r);
                }
            },
            FactorLaw::Custom(c) => loop {
                let w = (c.0)(rng);
                if w > 0.0 && w < 1.0 {
                    return (w, 1.0 - w);
                }
            },
        }
    }

    pub fn stick_sample(&self, n: usize, rng: &mut Stream) -> StickDraw {
        let mut w = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut tail = 1.0;
        for _ in 0..n {
            let (wi, ri) = self.sample_factor(rng);
            w.push(wi);
            p.push(tail * wi);
            tail *= ri;
            t.push(tail);
        }
        StickDraw { w, p, t }
    }

    /// `E W^m`, when known in closed form.
    pub fn moment(&self, m: u32) -> Option<f64> {
        match self.law {
            FactorLaw::Constant(w) => Some(w.powi(m as i32)),
            // θ B(m+1, θ) = m! Γ(θ+1) / Γ(m+θ+1) = Π_{i=1}^m i / (i + θ)
            FactorLaw::Beta { theta } => Some((1..=m).map(|i| i as f64 / (i as f64 + theta)).product()),
            FactorLaw::Custom(_) => None,
        }
    }

    /// `E[-log(1 - W)]`.
    pub fn mean_log_residual(&self) -> Option<f64> {
        match self.law {
            FactorLaw::Constant(w) => Some(-(-w).ln_1p()),
            FactorLaw::Beta { theta } => Some(1.0 / theta),
            FactorLaw::Custom(_) => None,
        }
    }

    /// `E[-log W]`.
    pub fn mean_log_factor(&self) -> Option<f64> {
        match self.law {
            FactorLaw::Constant(w) => Some(-w.ln()),
            // ψ(θ + 1) - ψ(1)
            FactorLaw::Beta { theta } => Some(crate::renewal::digamma(theta + 1.0).ok()? + crate::renewal::EULER_GAMMA),
            FactorLaw::Custom(_) => None,
        }
    }

    /// The moment conditions `E[-log W] < ∞` and `E[-log(1-W)] < ∞` under which
    /// a non-lattice RAM gives a positive recurrent biased permutation. The
    /// non-lattice requirement is not checked here.
    pub fn log_moments_finite(&self) -> Option<bool> {
        Some(self.mean_log_factor()?.is_finite() && self.mean_log_residual()?.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mass_examples() {
        let g = DiscreteDist::geometric(0.5).unwrap();
        assert_eq!(g.mass(3), 0.125);
        let f = DiscreteDist::fixed(vec![0.5, 0.5], 0.0).unwrap();
        assert_eq!(f.mass(3), 0.0);
        let d = DiscreteDist::fixed(vec![0.3, 0.2], 0.5).unwrap();
        assert_eq!(d.mass(2), 0.2);
        assert_eq!(d.tail(2), 0.5);
        assert!((d.cdf(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(matches!(DiscreteDist::fixed(vec![0.6, 0.6], 0.0), Err(DistError::PartialSumOverflow(2))));
        assert!(matches!(DiscreteDist::fixed(vec![0.5, 0.4], 0.0), Err(DistError::NotNormalized(_))));
        assert!(matches!(DiscreteDist::fixed(vec![-0.1, 1.1], 0.0), Err(DistError::BadMass { index: 1, .. })));
        assert!(DiscreteDist::geometric(1.0).is_err());
        assert!(DiscreteDist::geometric(0.0).is_err());
        assert!(StickBreaking::gem(0.0).is_err());
    }

    #[test]
    fn geometric_cdf_and_tail() {
        let g = DiscreteDist::geometric(0.3).unwrap();
        for j in 0..40 {
            assert!((g.cdf(j) + g.tail(j) - 1.0).abs() < 1e-15);
            if j > 0 {
                assert!(g.cdf(j) >= g.cdf(j - 1));
            }
        }
        assert!((g.mean() - 1.0 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = stream(11, 0);
        let n = 1_000_000;
        let g = DiscreteDist::geometric(0.5).unwrap();
        let ones = (0..n).filter(|_| g.sample(&mut rng) == Draw::Finite(1)).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.002);

        let one = DiscreteDist::fixed(vec![1.0], 0.0).unwrap();
        assert!((0..1000).all(|_| one.sample(&mut rng) == Draw::Finite(1)));

        let defective = DiscreteDist::fixed(vec![0.5], 0.5).unwrap();
        let inf = (0..n).filter(|_| defective.sample(&mut rng) == Draw::Infinite).count();
        assert!((inf as f64 / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn size_biased_geometric_matches_definition() {
        let mut rng = stream(12, 0);
        let g = DiscreteDist::geometric(0.5).unwrap();
        let n = 400_000;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            let y = g.sample_size_biased(&mut rng).unwrap() as usize;
            if y <= 5 {
                counts[y] += 1;
            }
        }
        for (y, &c) in counts.iter().enumerate().skip(1) {
            let exact = y as f64 * g.mass(y) / g.mean();
            assert!((c as f64 / n as f64 - exact).abs() < 0.004, "y={y}");
        }
    }

    #[test]
    fn stick_examples() {
        let mut rng = stream(3, 0);
        let s = StickBreaking::constant(0.5).unwrap();
        let d = s.stick_sample(3, &mut rng);
        assert_eq!(d.p, vec![0.5, 0.25, 0.125]);
        assert_eq!(d.t[2], 0.125);

        let gem = StickBreaking::gem(1.0).unwrap();
        let n = 1_000_000;
        let mean = (0..n).map(|_| gem.sample_factor(&mut rng).0).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002);

        for _ in 0..100 {
            let d = gem.stick_sample(20, &mut rng);
            assert!(d.w.iter().all(|&w| w > 0.0 && w < 1.0));
            let total: f64 = d.p.iter().sum::<f64>() + d.t[19];
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_sticks_reproduce_geometric_masses() {
        let q = 0.37;
        let mut rng = stream(4, 0);
        let d = StickBreaking::constant(1.0 - q).unwrap().stick_sample(50, &mut rng);
        let g = DiscreteDist::geometric(q).unwrap();
        for i in 1..=50 {
            assert!((d.p[i - 1] - g.mass(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_moments() {
        let s = StickBreaking::gem(2.0).unwrap();
        // E W = 1/3, E W^2 = 2/(3*4)
        assert!((s.moment(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.moment(2).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.mean_log_residual(), Some(0.5));
        // E[-log W] for θ = 1 is H_1 = 1
        let s1 = StickBreaking::gem(1.0).unwrap();
        assert!((s1.mean_log_factor().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s1.log_moments_finite(), Some(true));
    }
}
