//! Monte Carlo estimation with batch-means standard errors, estimate
//! reports, and the goodness-of-fit helpers used by the test suites.
//!
//! Work is split into indexed batches of independent realizations
//! ([`crate::rng::par_batches`]). A statistic is a ratio `Σ num / Σ den`
//! over batches; its standard error is
//! `sqrt(B/(B-1) Σ_b ((num_b - r den_b) / Σ den)^2)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::model::{Family, Model};
use crate::perm::{PermPrefix, UniformBlocked};
use crate::rng::{batch_size, par_batches, DEFAULT_BATCHES};
use crate::samplers::{sample_stationary_cover, sample_stationary_window, SamplerError, Stop, TwoSidedWindow};

/// Default `|z|` above which a record is flagged.
pub const DEFAULT_Z_FLAG: f64 = 4.0;
pub const DEFAULT_J_MAX: usize = 12;
pub const DEFAULT_D_MAX: i64 = 30;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("requires positive recurrence")]
    NotPositiveRecurrent,
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Ratio estimate `Σ num / Σ den` over batches `(num_b, den_b)` with its
/// batch-means standard error.
pub fn ratio_estimate(batches: &[(f64, f64)]) -> (f64, f64) {
    let num: f64 = batches.iter().map(|b| b.0).sum();
    let den: f64 = batches.iter().map(|b| b.1).sum();
    if den == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let r = num / den;
    let k = batches.iter().filter(|b| b.1 > 0.0).count();
    if k < 2 {
        return (r, 0.0);
    }
    let ss: f64 = batches.iter().map(|&(n, d)| ((n - r * d) / den).powi(2)).sum();
    (r, (ss * k as f64 / (k as f64 - 1.0)).sqrt())
}

/// `(estimate - exact) / se`; zero when both agree with no noise.
pub fn z_score(estimate: f64, se: f64, exact: f64) -> f64 {
    let diff = estimate - exact;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * exact.abs().max(1.0) {
        0.0
    } else {
        f64::MAX.copysign(diff)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z: Option<f64>,
}

impl Record {
    pub fn new(name: impl Into<String>, estimate: f64, se: f64, exact: Option<f64>) -> Self {
        let z = exact.map(|e| z_score(estimate, se, e));
        Self { name: name.into(), estimate, se, exact, z }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub samples: u64,
    pub batches: u64,
    /// Realizations abandoned because a sampler gave up.
    pub aborted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub model: String,
    pub statistic: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
    pub records: Vec<Record>,
    pub meta: RunMeta,
}

impl EstimateReport {
    pub fn new(model: impl Into<String>, statistic: impl Into<String>, meta: RunMeta) -> Self {
        let mut notes = Vec::new();
        if meta.aborted > 0 {
            notes.push(format!(
                "partial: {} realizations exceeded the draw budget; estimates are conditional on the rest, so z-scores are omitted",
                meta.aborted
            ));
        }
        Self { model: model.into(), statistic: statistic.into(), notes, records: Vec::new(), meta }
    }

    /// Aborted realizations are not a random subset (long excursions hit the
    /// budget first), so no z-score is attached to a partial report.
    pub fn push(&mut self, name: impl Into<String>, estimate: f64, se: f64, exact: Option<f64>) {
        let mut r = Record::new(name, estimate, se, exact);
        if self.meta.aborted > 0 {
            r.z = None;
        }
        self.records.push(r);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.records.iter().filter_map(|r| r.z).map(f64::abs).fold(0.0, f64::max)
    }

    pub fn flagged(&self, threshold: f64) -> Vec<&Record> {
        self.records.iter().filter(|r| r.z.is_some_and(|z| z.abs() >= threshold)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,estimate,se,exact,z\n");
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{},{}", r.name, r.estimate, r.se, opt(r.exact), opt(r.z));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} | {} | seed {} | samples {} | batches {}\n",
            self.statistic, self.model, self.meta.seed, self.meta.samples, self.meta.batches
        );
        if self.meta.aborted > 0 {
            let _ = writeln!(out, "aborted realizations: {}", self.meta.aborted);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let _ = writeln!(out, "{:<16} {:>14} {:>12} {:>14} {:>8}", "name", "estimate", "se", "exact", "z");
        for r in &self.records {
            let exact = r.exact.map(|v| format!("{v:.8}")).unwrap_or_else(|| "-".into());
            let z = r.z.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<16} {:>14.8} {:>12.3e} {:>14} {:>8}", r.name, r.estimate, r.se, exact, z);
        }
        out
    }
}

/// Per-batch sums for a vector of ratio statistics sharing one denominator.
#[derive(Clone, Debug)]
struct Tally {
    num: Vec<f64>,
    den: f64,
    aborted: u64,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self { num: vec![0.0; k], den: 0.0, aborted: 0 }
    }
}

fn summarize(tallies: &[Tally], i: usize) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> = tallies.iter().map(|t| (t.num[i], t.den)).collect();
    ratio_estimate(&pairs)
}

fn run_tallies<F>(seed: u64, samples: u64, k: usize, f: F) -> Vec<Tally>
where
    F: Fn(&mut crate::rng::Stream, &mut Tally) -> Result<(), SamplerError> + Sync,
{
    par_batches(seed, DEFAULT_BATCHES, |b, rng| {
        let mut t = Tally::new(k);
        for _ in 0..batch_size(samples, DEFAULT_BATCHES, b) {
            match f(rng, &mut t) {
                Ok(()) => {}
                Err(SamplerError::BudgetExceeded { .. }) => t.aborted += 1,
                Err(e) => panic!("sampler failed: {e}"),
            }
        }
        t
    })
}

fn first_error(model: &Model, stop: Stop, seed: u64) -> Result<(), StatsError> {
    // Configuration errors surface on the first realization; budget
    // exhaustion is a per-realization event handled by the tallies.
    match model.sample(stop, &mut crate::rng::stream(seed, u64::MAX)) {
        Ok(_) | Err(SamplerError::BudgetExceeded { .. }) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

fn meta(seed: u64, samples: u64, tallies: &[Tally]) -> RunMeta {
    RunMeta { seed, samples, batches: DEFAULT_BATCHES, aborted: tallies.iter().map(|t| t.aborted).sum() }
}

/// Empirical `u_n` (renewal at `n`) and `f_n` (first renewal at `n`) for
/// `n = 1..=n_max`.
pub fn estimate_renewal(model: &Model, label: &str, n_max: usize, samples: u64, seed: u64) -> Result<EstimateReport, StatsError> {
    first_error(model, Stop::Length(n_max), seed)?;
    let tallies = run_tallies(seed, samples, 2 * n_max, |rng, t| {
        let s = model.sample(Stop::Length(n_max), rng)?;
        for (i, &r) in s.renewals.iter().enumerate() {
            if r >= 1 && r <= n_max {
                t.num[r - 1] += 1.0;
                if i == 0 {
                    t.num[n_max + r - 1] += 1.0;
                }
            }
        }
        t.den += 1.0;
        Ok(())
    });
    let exact_u = model.exact_u(n_max);
    let exact_f = model.exact_f(n_max);
    let mut rep = EstimateReport::new(label, "renewal", meta(seed, samples, &tallies));
    if model.family() == Family::Blocked {
        rep.notes.push("renewals are block ends".into());
    }
    for n in 1..=n_max {
        let (e, se) = summarize(&tallies, n - 1);
        rep.push(format!("u_{n}"), e, se, exact_u.as_ref().map(|u| u[n]));
    }
    for n in 1..=n_max {
        let (e, se) = summarize(&tallies, n_max + n - 1);
        rep.push(format!("f_{n}"), e, se, exact_f.as_ref().map(|f| f[n - 1]));
    }
    Ok(rep)
}

/// A finite permutation of `[lo, hi]` (given as images) with every cycle
/// visited once; calls `visit(min, len)`.
fn for_each_cycle(lo: i64, images: &[i64], mut visit: impl FnMut(i64, usize)) {
    let n = images.len();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut min = i64::MAX;
        let mut z = start;
        while !seen[z] {
            seen[z] = true;
            len += 1;
            min = min.min(lo + z as i64);
            z = (images[z] - lo) as usize;
        }
        visit(min, len);
    }
}

/// Components of a permutation of `[lo, hi]` as `(first, len)`.
fn for_each_component(lo: i64, images: &[i64], mut visit: impl FnMut(i64, usize)) {
    let mut max = i64::MIN;
    let mut start = 0usize;
    for (k, &v) in images.iter().enumerate() {
        max = max.max(v);
        if max == lo + k as i64 {
            visit(lo + start as i64, k + 1 - start);
            start = k + 1;
        }
    }
}

/// A complete piece of a realization: a bijection of `[lo, hi]` whose cycles
/// and components with least element in `[1, n]` are all contained in it.
fn covering_piece(model: &Model, n: usize, rng: &mut crate::rng::Stream) -> Result<(i64, Vec<i64>), SamplerError> {
    match model {
        Model::Blocked { p } => {
            let w: TwoSidedWindow = sample_stationary_cover(p, n as i64, rng)?;
            Ok((w.lo, w.images))
        }
        _ => {
            let s = model.sample(Stop::RenewalAtLeast { n, max_len: usize::MAX }, rng)?;
            Ok((1, s.prefix.images().iter().map(|&v| v as i64).collect()))
        }
    }
}

fn require_recurrent(model: &Model) -> Result<(), StatsError> {
    match model.positive_recurrent() {
        Some(true) => Ok(()),
        Some(false) => Err(StatsError::NotPositiveRecurrent),
        None => Err(StatsError::Unsupported("positive recurrence of this model is not established".into())),
    }
}

/// `C_{n,j}/n`: cycles of length `j` with least element in `[n]`, per unit
/// length, for `j = 1..=j_max`. Blocked models are sampled in their
/// stationary version, which makes the estimate unbiased for every `n`;
/// the other families use zero-delay prefixes extended to a split.
pub fn cycle_frequencies(model: &Model, label: &str, n: usize, j_max: usize, samples: u64, seed: u64) -> Result<EstimateReport, StatsError> {
    require_recurrent(model)?;
    let tallies = run_tallies(seed, samples, j_max, |rng, t| {
        let (lo, images) = covering_piece(model, n, rng)?;
        for_each_cycle(lo, &images, |min, len| {
            if (1..=n as i64).contains(&min) && len <= j_max {
                t.num[len - 1] += 1.0;
            }
        });
        t.den += n as f64;
        Ok(())
    });
    let ub = model.uniform_blocked();
    let mut rep = EstimateReport::new(label, "cycles", meta(seed, samples, &tallies));
    rep.notes.push(format!("C_{{n,j}} counts cycles with least element in [{n}]"));
    for j in 1..=j_max {
        let (e, se) = summarize(&tallies, j - 1);
        rep.push(format!("C_{j}/n"), e, se, ub.as_ref().map(|u| u.cycle_frequency(j)));
    }
    Ok(rep)
}

/// Relative frequencies of cycle lengths (`p°_j`) and component lengths
/// (`p†_j`) among cycles and components with least element in `[n]`.
pub fn component_frequencies(model: &Model, label: &str, n: usize, j_max: usize, samples: u64, seed: u64) -> Result<EstimateReport, StatsError> {
    require_recurrent(model)?;
    let cyc = run_tallies(seed, samples, j_max, |rng, t| {
        let (lo, images) = covering_piece(model, n, rng)?;
        for_each_cycle(lo, &images, |min, len| {
            if (1..=n as i64).contains(&min) {
                t.den += 1.0;
                if len <= j_max {
                    t.num[len - 1] += 1.0;
                }
            }
        });
        Ok(())
    });
    let cmp = run_tallies(seed.wrapping_add(1), samples, j_max, |rng, t| {
        let (lo, images) = covering_piece(model, n, rng)?;
        for_each_component(lo, &images, |first, len| {
            if (1..=n as i64).contains(&first) {
                t.den += 1.0;
                if len <= j_max {
                    t.num[len - 1] += 1.0;
                }
            }
        });
        Ok(())
    });
    let ub = model.uniform_blocked();
    let dagger = match (&ub, model.family()) {
        (Some(u), _) => Some(u.p_dagger(j_max)),
        (None, Family::PShifted | Family::PBiased) => model.exact_f(j_max),
        _ => None,
    };
    let mut rep = EstimateReport::new(label, "components", meta(seed, samples, &cyc));
    for j in 1..=j_max {
        let (e, se) = summarize(&cyc, j - 1);
        rep.push(format!("p_circ_{j}"), e, se, ub.as_ref().map(|u| u.p_circ(j)));
    }
    for j in 1..=j_max {
        let (e, se) = summarize(&cmp, j - 1);
        rep.push(format!("p_dagger_{j}"), e, se, dagger.as_ref().map(|d| d[j - 1]));
    }
    Ok(rep)
}

fn require_blocked(model: &Model) -> Result<&crate::dist::DiscreteDist, StatsError> {
    match model {
        Model::Blocked { p } => {
            if p.p_inf() > 0.0 || !p.mean().is_finite() {
                Err(StatsError::NotPositiveRecurrent)
            } else {
                Ok(p)
            }
        }
        _ => match model.positive_recurrent() {
            Some(false) => Err(StatsError::NotPositiveRecurrent),
            _ => Err(StatsError::Unsupported("two-sided windows are implemented for blocked models".into())),
        },
    }
}

/// Histogram of `D*_z = Π*_z - z` pooled over `z ∈ [lo, hi]` of the
/// stationary version, with `E|D*|`, `P(D* > 0)` and `P(R*_z = 1)`.
pub fn displacement_law(model: &Model, label: &str, lo: i64, hi: i64, d_max: i64, samples: u64, seed: u64) -> Result<EstimateReport, StatsError> {
    let p = require_blocked(model)?;
    if !(lo <= 0 && 0 <= hi) {
        return Err(SamplerError::BadWindow.into());
    }
    let width = (hi - lo + 1) as f64;
    let k = (2 * d_max + 1) as usize;
    let tallies = run_tallies(seed, samples, k + 3, |rng, t| {
        let w = sample_stationary_window(p, lo, hi, rng)?;
        for z in lo..=hi {
            let d = w.displacement(z);
            if d.abs() <= d_max {
                t.num[(d + d_max) as usize] += 1.0 / width;
            }
            t.num[k] += d.abs() as f64 / width;
            t.num[k + 1] += f64::from(d > 0) / width;
            t.num[k + 2] += f64::from(w.renewal(z)) / width;
        }
        t.den += 1.0;
        Ok(())
    });
    let ub = UniformBlocked::new(p.clone());
    let mut rep = EstimateReport::new(label, "displacement", meta(seed, samples, &tallies));
    rep.notes.push(format!("pooled over z in [{lo}, {hi}]"));
    for d in -d_max..=d_max {
        let (e, se) = summarize(&tallies, (d + d_max) as usize);
        rep.push(format!("P(D={d})"), e, se, Some(ub.displacement_mass(d)));
    }
    let (e, se) = summarize(&tallies, k);
    rep.push("E|D|", e, se, Some(ub.mean_abs_displacement()));
    let (e, se) = summarize(&tallies, k + 1);
    rep.push("P(D>0)", e, se, Some(ub.positive_displacement()));
    let (e, se) = summarize(&tallies, k + 2);
    rep.push("P(R=1)", e, se, Some(1.0 / ub.mu()));
    Ok(rep)
}

/// Per-`z` displacement counts on `[-d_max, d_max]` (outside values
/// lumped into the end cells) for the stationarity tests.
pub fn displacement_counts(p: &crate::dist::DiscreteDist, zs: &[i64], d_max: i64, samples: u64, seed: u64) -> Result<Vec<Vec<u64>>, StatsError> {
    let lo = zs.iter().copied().min().unwrap_or(0).min(0);
    let hi = zs.iter().copied().max().unwrap_or(0).max(0);
    let k = (2 * d_max + 1) as usize;
    let per = par_batches(seed, DEFAULT_BATCHES, |b, rng| {
        let mut c = vec![vec![0u64; k]; zs.len()];
        for _ in 0..batch_size(samples, DEFAULT_BATCHES, b) {
            let w = sample_stationary_window(p, lo, hi, rng)?;
            for (row, &z) in c.iter_mut().zip(zs) {
                row[(w.displacement(z).clamp(-d_max, d_max) + d_max) as usize] += 1;
            }
        }
        Ok::<_, SamplerError>(c)
    });
    let mut total = vec![vec![0u64; k]; zs.len()];
    for c in per {
        for (t, r) in total.iter_mut().zip(c?) {
            for (a, b) in t.iter_mut().zip(r) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// The fixed-point density `C_{n,1}/n` of p-biased permutations across a
/// parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedPointFamily {
    /// p-biased with `p_i = (1 - q) q^{i-1}`.
    GeometricBiased,
    /// p-biased with GEM(θ) masses.
    GemBiased,
}

pub fn fixed_point_density(family: FixedPointFamily, grid: &[f64], n: usize, samples: u64, seed: u64) -> Result<EstimateReport, StatsError> {
    let (name, key) = match family {
        FixedPointFamily::GeometricBiased => ("biased-geometric", "q"),
        FixedPointFamily::GemBiased => ("gem", "theta"),
    };
    let mut rep = EstimateReport::new(name, "fixed-points", RunMeta { seed, samples, batches: DEFAULT_BATCHES, aborted: 0 });
    let mut values = Vec::new();
    for (i, &x) in grid.iter().enumerate() {
        let spec = crate::model::ModelSpec::preset(&format!("{name}:{x}")).map_err(|e| StatsError::Unsupported(e.to_string()))?;
        let mut spec = spec;
        spec.budget = Some(0);
        let model = spec.build().map_err(|e| StatsError::Unsupported(e.to_string()))?;
        let tallies = run_tallies(seed.wrapping_add(i as u64), samples, 1, |rng, t| {
            let s = model.sample(Stop::Length(n), rng)?;
            t.num[0] += fixed_points(&s.prefix) as f64 / n as f64;
            t.den += 1.0;
            Ok(())
        });
        let (e, se) = summarize(&tallies, 0);
        values.push(e);
        rep.push(format!("{key}={x}"), e, se, None);
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    rep.notes.push(format!("estimates increase along the grid: {monotone}"));
    Ok(rep)
}

pub fn fixed_points(prefix: &PermPrefix) -> usize {
    prefix.images().iter().enumerate().filter(|&(i, &v)| v == i as u64 + 1).count()
}

// ---------------------------------------------------------------------------
// Goodness of fit.

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn chi_p_value(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive df").sf(stat)
}

/// Groups consecutive cells so every group reaches `min_expected`; a short
/// final group is merged into its predecessor.
fn lump(expected: &[f64], min_expected: f64) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (i, &e) in expected.iter().enumerate() {
        acc += e;
        if acc >= min_expected {
            groups.push(start..i + 1);
            start = i + 1;
            acc = 0.0;
        }
    }
    if start < expected.len() {
        match groups.pop() {
            Some(g) => groups.push(g.start..expected.len()),
            None => groups.push(0..expected.len()),
        }
    }
    groups
}

/// Pearson goodness of fit of `observed` counts to cell probabilities
/// `probs`. Probability mass outside the listed cells, if any, forms one
/// extra cell with zero observed count unless `observed` has one more entry.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquareTest {
    let n: u64 = observed.iter().sum();
    let mut p = probs.to_vec();
    let rest = 1.0 - p.iter().sum::<f64>();
    let mut obs = observed.to_vec();
    if obs.len() == p.len() + 1 {
        p.push(rest.max(0.0));
    } else if rest > 1e-12 {
        p.push(rest);
        obs.push(0);
    }
    let expected: Vec<f64> = p.iter().map(|&x| x * n as f64).collect();
    let groups = lump(&expected, min_expected);
    let mut stat = 0.0;
    for g in &groups {
        let e: f64 = expected[g.clone()].iter().sum();
        let o: f64 = obs[g.clone()].iter().map(|&x| x as f64).sum();
        if e > 0.0 {
            stat += (o - e).powi(2) / e;
        }
    }
    let df = groups.len().saturating_sub(1);
    ChiSquareTest { statistic: stat, df, p_value: chi_p_value(stat, df) }
}

/// Pearson test that the rows of a contingency table share one law. Columns
/// are lumped on the pooled expected counts.
pub fn chi_square_homogeneity(rows: &[Vec<u64>], min_expected: f64) -> ChiSquareTest {
    let k = rows.iter().map(Vec::len).max().unwrap_or(0);
    let row_tot: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let mut col_tot = vec![0.0; k];
    for r in rows {
        for (c, &x) in r.iter().enumerate() {
            col_tot[c] += x as f64;
        }
    }
    let total: f64 = row_tot.iter().sum();
    let min_row = row_tot.iter().copied().fold(f64::INFINITY, f64::min);
    let scaled: Vec<f64> = col_tot.iter().map(|c| c / total * min_row).collect();
    let groups = lump(&scaled, min_expected);
    let mut stat = 0.0;
    for (r, &rt) in rows.iter().zip(&row_tot) {
        for g in &groups {
            let o: f64 = g.clone().map(|c| r.get(c).copied().unwrap_or(0) as f64).sum();
            let e = rt * g.clone().map(|c| col_tot[c]).sum::<f64>() / total;
            if e > 0.0 {
                stat += (o - e).powi(2) / e;
            }
        }
    }
    let df = (rows.len().saturating_sub(1)) * groups.len().saturating_sub(1);
    ChiSquareTest { statistic: stat, df, p_value: chi_p_value(stat, df) }
}

/// Two-sample Kolmogorov–Smirnov distance and the asymptotic critical value
/// at level `alpha`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    (d, c * ((n + m) / (n * m)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::stream;
    use rand::Rng;

    fn model(s: &str) -> Model {
        ModelSpec::parse(s).unwrap().build().unwrap()
    }

    #[test]
    fn ratio_estimate_basics() {
        let (r, se) = ratio_estimate(&[(1.0, 2.0), (1.0, 2.0), (1.0, 2.0)]);
        assert_eq!((r, se), (0.5, 0.0));
        let (r, se) = ratio_estimate(&[(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(r, 0.5);
        assert!((se - 0.5).abs() < 1e-15);
        assert_eq!(z_score(1.0, 0.0, 1.0), 0.0);
        assert!(z_score(1.0, 0.0, 0.5) > 1e300);
    }

    #[test]
    fn renewal_shifted_geometric() {
        let m = model("shifted-geometric:0.5");
        let rep = estimate_renewal(&m, "shifted-geometric:0.5", 6, 200_000, 1).unwrap();
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());
        let exact: f64 = (1..=3).map(|j| 1.0 - 0.5f64.powi(j)).product();
        assert!((rep.get("u_3").unwrap().exact.unwrap() - exact).abs() < 1e-15);
        assert!(rep.records.iter().all(|r| r.se > 0.0));
    }

    #[test]
    fn renewal_point_mass() {
        let m = model("identity");
        let rep = estimate_renewal(&m, "identity", 5, 1000, 1).unwrap();
        for r in rep.records.iter().take(5) {
            assert_eq!((r.estimate, r.se, r.z), (1.0, 0.0, Some(0.0)));
        }
    }

    #[test]
    fn renewal_gem1() {
        let m = model("gem1");
        let rep = estimate_renewal(&m, "gem1", 3, 300_000, 2).unwrap();
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());
    }

    #[test]
    fn cycles_and_components_blocked() {
        let m = model("blocked-geometric:0.5");
        let rep = cycle_frequencies(&m, "b", 50, 6, 100_000, 3).unwrap();
        assert!((rep.records[0].exact.unwrap() - 0.5).abs() < 1e-15);
        assert!((rep.records[1].exact.unwrap() - 0.125).abs() < 1e-15);
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());
        let rep = component_frequencies(&m, "b", 50, 6, 50_000, 4).unwrap();
        assert!((rep.records[0].exact.unwrap() - 1.0 / (2.0 * 2f64.ln())).abs() < 1e-12);
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());

        let two = ModelSpec::new(Family::Blocked, crate::model::Driver::Fixed { p: vec![0.5, 0.5], p_inf: 0.0 })
            .build()
            .unwrap();
        let rep = component_frequencies(&two, "two", 30, 2, 50_000, 5).unwrap();
        assert!((rep.records[0].exact.unwrap() - 0.8).abs() < 1e-12);
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());

        let one = model("identity");
        let rep = cycle_frequencies(&one, "id", 20, 3, 100, 6).unwrap();
        assert_eq!(rep.records[0].estimate, 1.0);
        let rep = component_frequencies(&one, "id", 20, 3, 100, 6).unwrap();
        assert_eq!(rep.records[0].estimate, 1.0);
    }

    #[test]
    fn displacement_two_blocks() {
        let m = ModelSpec::new(Family::Blocked, crate::model::Driver::Fixed { p: vec![0.0, 1.0], p_inf: 0.0 })
            .build()
            .unwrap();
        let rep = displacement_law(&m, "y2", -3, 3, 3, 100_000, 7).unwrap();
        assert_eq!(rep.get("P(D=0)").unwrap().exact, Some(0.5));
        assert_eq!(rep.get("P(D=1)").unwrap().exact, Some(0.25));
        assert_eq!(rep.get("E|D|").unwrap().exact, Some(0.5));
        assert_eq!(rep.get("P(D>0)").unwrap().exact, Some(0.25));
        assert!(rep.max_abs_z() < 4.5, "{}", rep.to_text());
        let shifted = model("shifted-geometric:0.5");
        assert!(displacement_law(&shifted, "s", -1, 1, 3, 10, 1).is_err());
        let transient = ModelSpec::new(Family::PShifted, crate::model::Driver::Fixed { p: vec![0.5], p_inf: 0.5 })
            .build()
            .unwrap();
        assert!(matches!(displacement_law(&transient, "t", -1, 1, 3, 10, 1), Err(StatsError::NotPositiveRecurrent)));
    }

    #[test]
    fn fixed_point_trend() {
        let rep = fixed_point_density(FixedPointFamily::GeometricBiased, &[0.4, 0.05], 200, 2000, 8).unwrap();
        assert!(rep.records[1].estimate >= 0.8);
        assert!(rep.records[1].estimate > rep.records[0].estimate);
    }

    #[test]
    fn reports_are_deterministic_and_serialize() {
        let m = model("shifted-geometric:0.3");
        let a = estimate_renewal(&m, "x", 4, 5000, 9).unwrap();
        let b = estimate_renewal(&m, "x", 4, 5000, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back: EstimateReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.to_csv().lines().count(), 1 + a.records.len());
    }

    #[test]
    fn chi_square_behaviour() {
        let mut rng = stream(10, 0);
        let probs = [0.5, 0.25, 0.125];
        let mut obs = [0u64; 4];
        for _ in 0..100_000 {
            let u: f64 = rng.random();
            let k = if u < 0.5 { 0 } else if u < 0.75 { 1 } else if u < 0.875 { 2 } else { 3 };
            obs[k] += 1;
        }
        assert!(chi_square_gof(&obs, &probs, 5.0).p_value > 1e-3);
        assert!(chi_square_gof(&obs, &[0.4, 0.35, 0.125], 5.0).p_value < 1e-6);
        let h = chi_square_homogeneity(&[obs.to_vec(), obs.to_vec()], 5.0);
        assert_eq!(h.statistic, 0.0);
        let (d, crit) = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1e-3);
        assert_eq!(d, 0.0);
        assert!(crit > 0.0);
    }
}
