//! Model configuration: the family, its driver and sampler options, with a
//! JSON form and a few named presets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DiscreteDist, DistError, FactorLaw, StickBreaking};
use crate::perm::UniformBlocked;
use crate::renewal::{f_from_u, product_u, u_from_f};
use crate::rng::Stream;
use crate::samplers::{
    sample_blocked_run, sample_pshifted_run, u_n_inclusion_exclusion, ExponentialRace, IntervalProcess, Masses, Sample,
    SamplerError, SequentialBiased, Stop, DEFAULT_BUDGET, SUBSET_CAP,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Blocked,
    PShifted,
    PBiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Driver {
    /// `p_i = (1 - q) q^{i-1}`.
    Geometric { q: f64 },
    /// Masses `p_1, p_2, ...` with optional defect at infinity.
    Fixed {
        p: Vec<f64>,
        #[serde(default)]
        p_inf: f64,
    },
    /// GEM(θ) stick-breaking, factors beta(1, θ).
    Gem { theta: f64 },
    /// Stick-breaking with every factor equal to `w`.
    Constant { w: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLaw {
    #[default]
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Sequential,
    Ppy,
    Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub driver: Driver,
    #[serde(default, rename = "block-law", alias = "block_law")]
    pub block_law: BlockLaw,
    #[serde(default)]
    pub method: Method,
    /// Draw budget for the sequential p-biased sampler; `0` disables it.
    #[serde(default)]
    pub budget: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid driver: {0}")]
    Dist(#[from] DistError),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// A validated model ready to sample.
#[derive(Clone, Debug)]
pub enum Model {
    Blocked { p: DiscreteDist },
    Shifted { p: DiscreteDist },
    Biased { source: BiasedSource, method: Method, budget: Option<u64> },
}

#[derive(Clone, Debug)]
pub enum BiasedSource {
    Fixed(DiscreteDist),
    Ram(StickBreaking),
}

impl BiasedSource {
    pub fn masses(&self) -> Masses<'_> {
        match self {
            BiasedSource::Fixed(d) => Masses::Fixed(d),
            BiasedSource::Ram(s) => Masses::Ram(s),
        }
    }
}

impl ModelSpec {
    pub fn new(family: Family, driver: Driver) -> Self {
        Self { family, driver, block_law: BlockLaw::Uniform, method: Method::Sequential, budget: None }
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Named models: `gem1`, `gem:θ`, `mallows:q`, `shifted-geometric:q`,
    /// `biased-geometric:q`, `blocked-geometric:q`, `identity`.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let num = || -> Result<f64, ModelError> {
            arg.and_then(|a| a.parse().ok()).ok_or_else(|| ModelError::UnknownPreset(name.to_string()))
        };
        let spec = match head {
            "gem1" if arg.is_none() => Self::new(Family::PBiased, Driver::Gem { theta: 1.0 }),
            "gem" => Self::new(Family::PBiased, Driver::Gem { theta: num()? }),
            "mallows" | "shifted-geometric" => Self::new(Family::PShifted, Driver::Geometric { q: num()? }),
            "biased-geometric" => Self::new(Family::PBiased, Driver::Geometric { q: num()? }),
            "blocked-geometric" => Self::new(Family::Blocked, Driver::Geometric { q: num()? }),
            "identity" if arg.is_none() => Self::new(Family::PShifted, Driver::Fixed { p: vec![1.0], p_inf: 0.0 }),
            _ => return Err(ModelError::UnknownPreset(name.to_string())),
        };
        Ok(spec)
    }

    /// JSON when the text starts with `{`, a preset name otherwise.
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if s.trim_start().starts_with('{') {
            Self::from_json(s)
        } else {
            Self::preset(s.trim())
        }
    }

    fn discrete(&self) -> Result<DiscreteDist, ModelError> {
        Ok(match &self.driver {
            Driver::Geometric { q } => DiscreteDist::geometric(*q)?,
            Driver::Fixed { p, p_inf } => DiscreteDist::fixed(p.clone(), *p_inf)?,
            Driver::Constant { w } => DiscreteDist::geometric(1.0 - *w)?,
            Driver::Gem { .. } => {
                return Err(ModelError::Invalid("a gem driver needs the p-biased family".into()));
            }
        })
    }

    pub fn build(&self) -> Result<Model, ModelError> {
        match self.family {
            Family::Blocked => {
                let p = self.discrete()?;
                if p.p_inf() > 0.0 {
                    return Err(ModelError::Invalid("block lengths must be finite (p_inf = 0)".into()));
                }
                Ok(Model::Blocked { p })
            }
            Family::PShifted => {
                let p = self.discrete()?;
                if p.mass(1) <= 0.0 {
                    return Err(ModelError::Invalid("p-shifted requires p_1 > 0".into()));
                }
                Ok(Model::Shifted { p })
            }
            Family::PBiased => {
                let source = match &self.driver {
                    Driver::Gem { theta } => BiasedSource::Ram(StickBreaking::gem(*theta)?),
                    Driver::Constant { w } => BiasedSource::Ram(StickBreaking::constant(*w)?),
                    _ => {
                        let p = self.discrete()?;
                        if p.p_inf() > 0.0 {
                            return Err(ModelError::Invalid("p-biased requires p_inf = 0".into()));
                        }
                        if let Some(k) = p.support_len() {
                            if let Some(i) = (1..=k).find(|&i| p.mass(i) <= 0.0) {
                                return Err(ModelError::Invalid(format!("p-biased requires p_{i} > 0")));
                            }
                        }
                        BiasedSource::Fixed(p)
                    }
                };
                let budget = match self.budget {
                    Some(0) => None,
                    Some(b) => Some(b),
                    None => Some(DEFAULT_BUDGET),
                };
                Ok(Model::Biased { source, method: self.method, budget })
            }
        }
    }
}

/// Anything that yields the next image of a prefix.
trait NextImage {
    fn next_image(&mut self, rng: &mut Stream) -> Result<u64, SamplerError>;
}

impl NextImage for SequentialBiased<'_> {
    fn next_image(&mut self, rng: &mut Stream) -> Result<u64, SamplerError> {
        self.next_value(rng)
    }
}

impl NextImage for ExponentialRace<'_> {
    fn next_image(&mut self, rng: &mut Stream) -> Result<u64, SamplerError> {
        self.next_value(rng)
    }
}

impl NextImage for IntervalProcess<'_> {
    fn next_image(&mut self, rng: &mut Stream) -> Result<u64, SamplerError> {
        Ok(self.advance(rng) as u64)
    }
}

fn run_incremental(s: &mut dyn NextImage, stop: Stop, rng: &mut Stream) -> Result<Sample, SamplerError> {
    let mut images = Vec::with_capacity(stop_len(stop));
    let mut renewals = Vec::new();
    let mut max = 0u64;
    loop {
        let last = renewals.last().copied().unwrap_or(0);
        let done = match stop {
            Stop::Length(n) => images.len() >= n,
            Stop::RenewalAtLeast { n, max_len } => (images.len() >= n && last == images.len()) || images.len() >= max_len,
        };
        if done {
            break;
        }
        let v = s.next_image(rng)?;
        images.push(v);
        max = max.max(v);
        if max == images.len() as u64 {
            renewals.push(images.len());
        }
    }
    Ok(Sample { prefix: crate::perm::PermPrefix::from_images_unchecked(images), renewals })
}

fn stop_len(stop: Stop) -> usize {
    match stop {
        Stop::Length(n) | Stop::RenewalAtLeast { n, .. } => n,
    }
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Blocked { .. } => Family::Blocked,
            Model::Shifted { .. } => Family::PShifted,
            Model::Biased { .. } => Family::PBiased,
        }
    }

    /// Samples a prefix. Renewals are splits, except for blocked
    /// permutations where they are block ends.
    pub fn sample(&self, stop: Stop, rng: &mut Stream) -> Result<Sample, SamplerError> {
        match self {
            Model::Blocked { p } => sample_blocked_run(p, stop, rng),
            Model::Shifted { p } => sample_pshifted_run(p, stop, rng),
            Model::Biased { source, method, budget } => {
                let src = source.masses();
                if let BiasedSource::Fixed(d) = source {
                    if let Some(k) = d.support_len() {
                        if stop_len(stop) > k {
                            return Err(SamplerError::NotEnoughAtoms { available: k, requested: stop_len(stop) });
                        }
                    }
                }
                match method {
                    Method::Sequential => run_incremental(&mut SequentialBiased::new(src, *budget), stop, rng),
                    Method::Ppy => {
                        let mut s = ExponentialRace::new(src, rng);
                        run_incremental(&mut s, stop, rng)
                    }
                    Method::Interval => run_incremental(&mut IntervalProcess::new(src), stop, rng),
                }
            }
        }
    }

    /// Whether the model is positive recurrent, when known.
    pub fn positive_recurrent(&self) -> Option<bool> {
        match self {
            Model::Blocked { p } | Model::Shifted { p } => Some(p.p_inf() == 0.0 && p.mean().is_finite()),
            Model::Biased { source, .. } => match source {
                BiasedSource::Fixed(d) => d.is_geometric().map(|_| true),
                BiasedSource::Ram(s) => match s.law {
                    FactorLaw::Constant(_) | FactorLaw::Beta { .. } => Some(true),
                    FactorLaw::Custom(_) => None,
                },
            },
        }
    }

    /// Exact `u_0..=u_{n_max}` where a closed form or exact evaluation exists.
    pub fn exact_u(&self, n_max: usize) -> Option<Vec<f64>> {
        match self {
            Model::Blocked { p } => {
                let f: Vec<f64> = (1..=n_max.max(1)).map(|i| p.mass(i)).collect();
                u_from_f(&f, n_max).ok()
            }
            Model::Shifted { p } => Some(product_u(p, n_max)),
            Model::Biased { source, .. } => {
                if let BiasedSource::Ram(s) = source {
                    if s.gem_theta() == Some(1.0) {
                        return crate::qhat::gem1_u_recursion(n_max).ok();
                    }
                }
                let deterministic = match source {
                    BiasedSource::Fixed(_) => true,
                    BiasedSource::Ram(s) => matches!(s.law, FactorLaw::Constant(_)),
                };
                if !deterministic || n_max > SUBSET_CAP {
                    return None;
                }
                let mut u = vec![1.0];
                for n in 1..=n_max {
                    u.push(u_n_inclusion_exclusion(source.masses(), n, 0, 0).ok()?.value);
                }
                Some(u)
            }
        }
    }

    /// Exact first-renewal probabilities `f_1..=f_{n_max}`.
    pub fn exact_f(&self, n_max: usize) -> Option<Vec<f64>> {
        f_from_u(&self.exact_u(n_max)?).ok()
    }

    pub fn uniform_blocked(&self) -> Option<UniformBlocked> {
        match self {
            Model::Blocked { p } => Some(UniformBlocked::new(p.clone())),
            _ => None,
        }
    }
}
