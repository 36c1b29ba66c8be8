//! Exact samplers for the blocked, p-shifted and p-biased families, the gap
//! chain `M_n`, the interval process, and two-sided stationary windows.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dist::{DiscreteDist, Draw, FactorLaw, StickBreaking};
use crate::perm::{fold_permutations, is_indecomposable, uniform_permutation, PermPrefix, ENUMERATION_CAP};
use crate::renewal::{f_from_u, product_u};
use crate::rng::{exp1, open01, par_batches, Stream};

/// Default cap on i.i.d. draws per sequential p-biased realization.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Largest `n` accepted by the subset enumeration of the inclusion–exclusion formula.
pub const SUBSET_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("draw budget of {budget} exhausted after collecting {distinct} distinct values")]
    BudgetExceeded { budget: u64, distinct: usize },
    #[error("only {available} atoms carry mass, {requested} distinct values requested")]
    NotEnoughAtoms { available: usize, requested: usize },
    #[error("p-shifted permutations require p_1 > 0")]
    NeedsP1,
    #[error("block lengths must be finite almost surely (p_inf = {0})")]
    DefectiveBlocks(f64),
    #[error("requires positive recurrence")]
    NotPositiveRecurrent,
    #[error("n = {n} exceeds the subset enumeration cap {cap}")]
    SubsetGuard { n: usize, cap: usize },
    #[error("window must satisfy lo <= 0 <= hi")]
    BadWindow,
}

/// A sampled prefix together with the renewal times observed in it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub prefix: PermPrefix,
    /// Renewal times `<= prefix.len()`: splits for the strictly regenerative
    /// families, block ends for blocked permutations.
    pub renewals: Vec<usize>,
}

/// Where a sampling run stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stop {
    /// Exactly `n` positions.
    Length(usize),
    /// The first renewal at or after `n`, giving up at `max_len` positions.
    RenewalAtLeast { n: usize, max_len: usize },
}

impl Stop {
    fn min_len(self) -> usize {
        match self {
            Stop::Length(n) => n,
            Stop::RenewalAtLeast { n, .. } => n,
        }
    }

    fn done(self, len: usize, last_renewal: usize) -> bool {
        match self {
            Stop::Length(n) => len >= n,
            Stop::RenewalAtLeast { n, max_len } => (len >= n && last_renewal == len) || len >= max_len,
        }
    }
}

// ---------------------------------------------------------------------------
// Order statistics of the unused positive integers.

#[derive(Clone, Debug)]
struct Fenwick {
    cap: usize,
    tree: Vec<i64>,
    used: Vec<bool>,
}

impl Fenwick {
    fn with_cap(cap: usize, used_values: impl IntoIterator<Item = u64>) -> Self {
        let cap = cap.next_power_of_two().max(64);
        let mut used = vec![false; cap + 1];
        for v in used_values {
            used[v as usize] = true;
        }
        let mut tree = vec![0i64; cap + 1];
        for i in 1..=cap {
            tree[i] += i64::from(!used[i]);
            let j = i + (i & i.wrapping_neg());
            if j <= cap {
                tree[j] += tree[i];
            }
        }
        Self { cap, tree, used }
    }

    fn unused_total(&self) -> i64 {
        self.tree[self.cap]
    }

    fn grow(&mut self, min_cap: usize) {
        let used: Vec<u64> = (1..=self.cap).filter(|&i| self.used[i]).map(|i| i as u64).collect();
        *self = Self::with_cap(min_cap.max(2 * self.cap), used);
    }

    fn take_kth(&mut self, k: u64) -> u64 {
        let k = k as i64;
        let total = self.unused_total();
        if k > total {
            let v = self.cap as i64 + (k - total);
            self.grow(v as usize);
        }
        let mut pos = 0usize;
        let mut rem = k;
        let mut step = self.cap;
        while step > 0 {
            if pos + step <= self.cap && self.tree[pos + step] < rem {
                pos += step;
                rem -= self.tree[pos];
            }
            step >>= 1;
        }
        let v = pos + 1;
        self.used[v] = true;
        let mut i = v;
        while i <= self.cap {
            self.tree[i] -= 1;
            i += i & i.wrapping_neg();
        }
        v as u64
    }
}

/// The set of positive integers not yet used as images, with "k-th smallest
/// unused" queries. A sorted list serves short prefixes; longer ones switch
/// to a Fenwick tree.
#[derive(Clone, Debug)]
enum UnusedSet {
    Small(Vec<u64>),
    Tree(Fenwick),
}

const SMALL_LIMIT: usize = 64;

impl UnusedSet {
    fn new(n_hint: usize) -> Self {
        if n_hint <= SMALL_LIMIT {
            UnusedSet::Small(Vec::new())
        } else {
            UnusedSet::Tree(Fenwick::with_cap(2 * n_hint, []))
        }
    }

    fn take_kth(&mut self, k: u64) -> u64 {
        match self {
            UnusedSet::Small(used) => {
                let mut v = k;
                for &u in used.iter() {
                    if u <= v {
                        v += 1;
                    } else {
                        break;
                    }
                }
                let pos = used.partition_point(|&u| u < v);
                used.insert(pos, v);
                if used.len() > SMALL_LIMIT {
                    let max = *used.last().unwrap();
                    let tree = Fenwick::with_cap(2 * max as usize, used.iter().copied());
                    *self = UnusedSet::Tree(tree);
                }
                v
            }
            UnusedSet::Tree(t) => t.take_kth(k),
        }
    }
}

// ---------------------------------------------------------------------------
// p-shifted permutations.

/// Incremental form of the shifted construction: each step places the
/// `X`-th smallest unused positive integer.
#[derive(Clone, Debug)]
pub struct PShiftedBuilder {
    unused: UnusedSet,
    images: Vec<u64>,
    max: u64,
    splits: Vec<usize>,
}

impl PShiftedBuilder {
    pub fn new(n_hint: usize) -> Self {
        Self { unused: UnusedSet::new(n_hint), images: Vec::with_capacity(n_hint), max: 0, splits: Vec::new() }
    }

    pub fn push(&mut self, x: u64) -> u64 {
        assert!(x >= 1);
        let v = self.unused.take_kth(x);
        self.images.push(v);
        self.max = self.max.max(v);
        if self.max == self.images.len() as u64 {
            self.splits.push(self.images.len());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn last_split(&self) -> usize {
        self.splits.last().copied().unwrap_or(0)
    }

    pub fn splits(&self) -> &[usize] {
        &self.splits
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }
}

/// The shifted permutation driven by a given stream of draws.
pub fn pshifted_from_draws(xs: &[u64]) -> PermPrefix {
    let mut b = PShiftedBuilder::new(xs.len());
    for &x in xs {
        b.push(x);
    }
    PermPrefix::from_images_unchecked(b.images)
}

/// The shifted permutation of the positive integers with no finite
/// components: `... 6 -> 4 -> 2 -> 1 -> 3 -> 5 -> ...`.
pub fn zigzag(i: u64) -> u64 {
    match i {
        1 => 3,
        2 => 1,
        _ if i % 2 == 0 => i - 2,
        _ => i + 2,
    }
}

/// Samples a p-shifted prefix. When `p` has mass at infinity the
/// construction stops at the first infinite draw and everything after the
/// last split before it is replaced by a shifted copy of [`zigzag`].
pub fn sample_pshifted_run(p: &DiscreteDist, stop: Stop, rng: &mut Stream) -> Result<Sample, SamplerError> {
    if p.mass(1) <= 0.0 {
        return Err(SamplerError::NeedsP1);
    }
    let target = stop.min_len();
    let transient = p.p_inf() > 0.0;
    let mut b = PShiftedBuilder::new(target);
    loop {
        // With a defect, positions after the last split may still be
        // overwritten by the completion, so they are not final yet.
        if stop.done(b.len(), b.last_split()) && (!transient || b.last_split() >= target.min(b.len())) {
            break;
        }
        match p.sample(rng) {
            Draw::Finite(x) => {
                b.push(x);
            }
            Draw::Infinite => {
                let keep = b.last_split();
                let mut images = b.images;
                images.truncate(keep);
                let len = target.max(keep);
                for i in keep + 1..=len {
                    images.push(keep as u64 + zigzag((i - keep) as u64));
                }
                let mut renewals = b.splits;
                if let Stop::Length(n) = stop {
                    images.truncate(n);
                    renewals.retain(|&s| s <= n);
                }
                return Ok(Sample { prefix: PermPrefix::from_images_unchecked(images), renewals });
            }
        }
    }
    let mut images = b.images;
    let mut renewals = b.splits;
    if let Stop::Length(n) = stop {
        images.truncate(n);
        renewals.retain(|&s| s <= n);
    }
    Ok(Sample { prefix: PermPrefix::from_images_unchecked(images), renewals })
}

pub fn sample_pshifted(p: &DiscreteDist, n: usize, rng: &mut Stream) -> Result<PermPrefix, SamplerError> {
    Ok(sample_pshifted_run(p, Stop::Length(n), rng)?.prefix)
}

/// `u_n = Π_{j<=n} F(j)`.
pub fn pshifted_u(p: &DiscreteDist, n: usize) -> f64 {
    product_u(p, n)[n]
}

/// First-split probabilities `f_1..=f_{n_max}` of the p-shifted permutation.
pub fn pshifted_f_polynomials(p: &DiscreteDist, n_max: usize) -> Vec<f64> {
    f_from_u(&product_u(p, n_max)).expect("u_0 = 1")
}

/// The shifted draws that produce a given injection:
/// `x_j = π_j - #{i < j : π_i < π_j}`.
pub fn shifted_ranks(pi: &[usize]) -> Vec<usize> {
    (0..pi.len()).map(|j| pi[j] - (0..j).filter(|&i| pi[i] < pi[j]).count()).collect()
}

/// `P(Π_j = π_j, j <= n) = Π_j p(π_j - #{i < j : π_i < π_j})`.
pub fn injection_mass(p: &DiscreteDist, pi: &[usize]) -> f64 {
    shifted_ranks(pi).into_iter().map(|r| p.mass(r)).product()
}

/// `u_n` as the sum of injection masses over 𝔖_n.
pub fn enumerated_u(p: &DiscreteDist, n: usize) -> f64 {
    assert!(n <= ENUMERATION_CAP);
    fold_permutations(n, || 0.0, |s, pi| *s += injection_mass(p, pi), |a, b| a + b)
}

/// `f_n` as the sum of injection masses over indecomposable permutations.
pub fn enumerated_f(p: &DiscreteDist, n: usize) -> f64 {
    assert!(n <= ENUMERATION_CAP);
    fold_permutations(
        n,
        || 0.0,
        |s, pi| {
            if is_indecomposable(pi) {
                *s += injection_mass(p, pi)
            }
        },
        |a, b| a + b,
    )
}

/// The polynomial `f_n(p_1, ..., p_n)` as a map from exponent vectors
/// `(r_1, ..., r_n)` to integer coefficients.
pub fn f_polynomial(n: usize) -> BTreeMap<Vec<u32>, u64> {
    assert!(n >= 1 && n <= ENUMERATION_CAP);
    fold_permutations(
        n,
        BTreeMap::new,
        |m: &mut BTreeMap<Vec<u32>, u64>, pi| {
            if is_indecomposable(pi) {
                let mut r = vec![0u32; n];
                for x in shifted_ranks(pi) {
                    r[x - 1] += 1;
                }
                *m.entry(r).or_insert(0) += 1;
            }
        },
        |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        },
    )
}

pub fn eval_polynomial(poly: &BTreeMap<Vec<u32>, u64>, p: &[f64]) -> f64 {
    poly.iter()
        .map(|(r, &c)| c as f64 * r.iter().zip(p).map(|(&e, &x)| x.powi(e as i32)).product::<f64>())
        .sum()
}

// ---------------------------------------------------------------------------
// The gap chain.

/// `M_0 = 0`, `M_n = max(M_{n-1}, X_n) - 1`; returns `M_1..M_n`.
pub fn mn_from_draws(xs: &[u64]) -> Vec<u64> {
    let mut m = 0u64;
    xs.iter()
        .map(|&x| {
            m = m.max(x) - 1;
            m
        })
        .collect()
}

pub fn mn_chain(p: &DiscreteDist, n_steps: usize, rng: &mut Stream) -> Result<Vec<u64>, SamplerError> {
    if p.p_inf() > 0.0 {
        return Err(SamplerError::NotPositiveRecurrent);
    }
    let xs: Vec<u64> = (0..n_steps).map(|_| p.sample(rng).finite().expect("proper law")).collect();
    Ok(mn_from_draws(&xs))
}

/// Invariant measure of the gap chain normalised by `μ_0 = 1`:
/// `μ_i = P(X > i) / Π_{j<=i} (1 - P(X > j))`.
pub fn mn_invariant_measure(p: &DiscreteDist, i_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(i_max + 1);
    out.push(1.0);
    let mut prod = 1.0;
    for i in 1..=i_max {
        prod *= 1.0 - p.tail(i);
        out.push(p.tail(i) / prod);
    }
    out
}

// ---------------------------------------------------------------------------
// Random masses revealed on demand.

/// The mass sequence driving a p-biased permutation.
#[derive(Clone, Copy, Debug)]
pub enum Masses<'a> {
    Fixed(&'a DiscreteDist),
    Ram(&'a StickBreaking),
}

/// One realization of the masses, revealed box by box.
#[derive(Clone, Debug)]
pub struct Realized<'a> {
    src: Masses<'a>,
    w: Vec<f64>,
    p: Vec<f64>,
    /// `t[i] = T_i`, with `t[0] = 1`.
    t: Vec<f64>,
}

impl<'a> Realized<'a> {
    pub fn new(src: Masses<'a>) -> Self {
        Self { src, w: Vec::new(), p: Vec::new(), t: vec![1.0] }
    }

    pub fn revealed(&self) -> usize {
        self.p.len()
    }

    pub fn ensure(&mut self, i: usize, rng: &mut Stream) {
        while self.p.len() < i {
            let k = self.p.len() + 1;
            let tail = *self.t.last().unwrap();
            let (w, p, t) = match self.src {
                Masses::Fixed(d) => {
                    let (p, t) = (d.mass(k), d.tail(k));
                    let w = if tail > 0.0 { (p / tail).min(1.0) } else { 1.0 };
                    (w, p, t)
                }
                Masses::Ram(s) => {
                    let (w, r) = s.sample_factor(rng);
                    (w, tail * w, tail * r)
                }
            };
            self.w.push(w);
            self.p.push(p);
            self.t.push(t);
        }
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.p[i - 1]
    }

    pub fn factor(&self, i: usize) -> f64 {
        self.w[i - 1]
    }

    /// `T_i`.
    pub fn tail(&self, i: usize) -> f64 {
        self.t[i]
    }

    fn available(&self) -> usize {
        match self.src {
            Masses::Fixed(d) => d.support_len().map_or(usize::MAX, |_| {
                (1..=d.support_len().unwrap()).filter(|&i| d.mass(i) > 0.0).count()
            }),
            Masses::Ram(_) => usize::MAX,
        }
    }
}

/// Number of failures before a success of probability `s`, computed without
/// forming `1 - s`.
fn failures_before(rng: &mut Stream, s: f64) -> u64 {
    if s >= 1.0 {
        return 0;
    }
    let g = (open01(rng).ln() / (-s).ln_1p()).floor();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

// ---------------------------------------------------------------------------
// Sequential p-biased sampler.

/// Distinct values of an i.i.d. sample in order of first appearance.
///
/// Runs of draws that repeat an already seen value are generated in one step
/// as a geometric count, so the draw counter has exactly the law of the
/// literal scheme while the work per new value stays bounded.
#[derive(Clone, Debug)]
pub struct SequentialBiased<'a> {
    masses: Realized<'a>,
    seen: Vec<bool>,
    unseen: Vec<usize>,
    opened: usize,
    draws: u64,
    budget: Option<u64>,
    images: Vec<u64>,
}

impl<'a> SequentialBiased<'a> {
    pub fn new(src: Masses<'a>, budget: Option<u64>) -> Self {
        Self {
            masses: Realized::new(src),
            seen: vec![false],
            unseen: Vec::new(),
            opened: 0,
            draws: 0,
            budget,
            images: Vec::new(),
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }

    pub fn next_value(&mut self, rng: &mut Stream) -> Result<u64, SamplerError> {
        let r: f64 = self.unseen.iter().map(|&i| self.masses.mass(i)).sum();
        let t = self.masses.tail(self.opened);
        let s = r + t;
        if s <= 0.0 {
            return Err(SamplerError::NotEnoughAtoms {
                available: self.images.len(),
                requested: self.images.len() + 1,
            });
        }
        let repeats = failures_before(rng, s.min(1.0));
        self.draws = self.draws.saturating_add(repeats).saturating_add(1);
        if let Some(b) = self.budget {
            if self.draws > b {
                return Err(SamplerError::BudgetExceeded { budget: b, distinct: self.images.len() });
            }
        }
        let mut u = open01(rng) * s;
        let mut pick = None;
        if u < r {
            for (pos, &i) in self.unseen.iter().enumerate() {
                let m = self.masses.mass(i);
                if u < m {
                    pick = Some(pos);
                    break;
                }
                u -= m;
            }
            // Rounding may leave u just above the last mass.
            let pos = pick.unwrap_or(self.unseen.len() - 1);
            let v = self.unseen.swap_remove(pos);
            return Ok(self.record(v));
        }
        // Walk the unopened boxes: box i is chosen with probability W_i.
        loop {
            let i = self.opened + 1;
            self.masses.ensure(i, rng);
            if self.masses.tail(i - 1) <= 0.0 {
                return Err(SamplerError::NotEnoughAtoms {
                    available: self.images.len(),
                    requested: self.images.len() + 1,
                });
            }
            self.opened = i;
            if self.seen.len() <= i {
                self.seen.resize(i + 1, false);
            }
            if rng.random::<f64>() < self.masses.factor(i) {
                return Ok(self.record(i));
            }
            if self.masses.mass(i) > 0.0 {
                self.unseen.push(i);
            }
        }
    }

    fn record(&mut self, v: usize) -> u64 {
        if self.seen.len() <= v {
            self.seen.resize(v + 1, false);
        }
        self.seen[v] = true;
        self.images.push(v as u64);
        v as u64
    }
}

pub fn sample_pbiased_sequential(
    src: Masses<'_>,
    n: usize,
    budget: Option<u64>,
    rng: &mut Stream,
) -> Result<PermPrefix, SamplerError> {
    check_atoms(src, n)?;
    let mut s = SequentialBiased::new(src, budget);
    for _ in 0..n {
        s.next_value(rng)?;
    }
    Ok(PermPrefix::from_images_unchecked(s.images))
}

fn check_atoms(src: Masses<'_>, n: usize) -> Result<(), SamplerError> {
    let available = Realized::new(src).available();
    if n > available {
        return Err(SamplerError::NotEnoughAtoms { available, requested: n });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exponential-race sampler.

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ranks of `Y_i = ε_i / P_i` in increasing order, with boxes revealed only
/// as far as needed. The minimum of the unrevealed keys is tracked exactly:
/// it is exponential with rate `T_L`, and when box `L+1` is revealed it is
/// the minimiser with probability `P_{L+1} / T_L`.
#[derive(Clone, Debug)]
pub struct ExponentialRace<'a> {
    masses: Realized<'a>,
    heap: BinaryHeap<Key>,
    tail_min: f64,
    window: usize,
    images: Vec<u64>,
}

impl<'a> ExponentialRace<'a> {
    pub fn new(src: Masses<'a>, rng: &mut Stream) -> Self {
        Self { masses: Realized::new(src), heap: BinaryHeap::new(), tail_min: exp1(rng), window: 0, images: Vec::new() }
    }

    /// Number of boxes revealed so far.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn next_value(&mut self, rng: &mut Stream) -> Result<u64, SamplerError> {
        loop {
            if let Some(&Key(y, i)) = self.heap.peek() {
                if y < self.tail_min {
                    self.heap.pop();
                    self.images.push(i as u64);
                    return Ok(i as u64);
                }
            }
            if !self.tail_min.is_finite() {
                return Err(SamplerError::NotEnoughAtoms {
                    available: self.images.len(),
                    requested: self.images.len() + 1,
                });
            }
            let i = self.window + 1;
            self.masses.ensure(i, rng);
            self.window = i;
            let m = self.tail_min;
            let p = self.masses.mass(i);
            if rng.random::<f64>() < self.masses.factor(i) {
                self.heap.push(Key(m, i));
                let t = self.masses.tail(i);
                self.tail_min = if t > 0.0 { m + exp1(rng) / t } else { f64::INFINITY };
            } else if p > 0.0 {
                self.heap.push(Key(m + exp1(rng) / p, i));
            }
        }
    }
}

/// A p-biased prefix by ranking exponential keys; also returns the number
/// of boxes that had to be revealed.
pub fn sample_pbiased_ppy(src: Masses<'_>, n: usize, rng: &mut Stream) -> Result<(PermPrefix, usize), SamplerError> {
    check_atoms(src, n)?;
    let mut s = ExponentialRace::new(src, rng);
    for _ in 0..n {
        s.next_value(rng)?;
    }
    let w = s.window;
    Ok((PermPrefix::from_images_unchecked(s.images), w))
}

// ---------------------------------------------------------------------------
// Interval process.

/// The finite union of open intervals `𝒲_k`: the unsampled boxes below the
/// last opened box, plus the rightmost interval `(F_j, 1)`.
#[derive(Clone, Debug)]
pub struct IntervalProcess<'a> {
    masses: Realized<'a>,
    /// Gaps as `(box, left endpoint)`, ordered left to right.
    gaps: Vec<(usize, f64)>,
    /// Index `j` of the rightmost interval `(F_j, 1)`.
    right: usize,
    k: usize,
    images: Vec<u64>,
}

impl<'a> IntervalProcess<'a> {
    pub fn new(src: Masses<'a>) -> Self {
        Self { masses: Realized::new(src), gaps: Vec::new(), right: 0, k: 0, images: Vec::new() }
    }

    pub fn step(&mut self) -> usize {
        self.k
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }

    /// `F_j = 1 - T_j`.
    fn f(&self, j: usize) -> f64 {
        1.0 - self.masses.tail(j)
    }

    /// The intervals of the current state as `(left, right)` pairs.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.gaps.iter().map(|&(i, l)| (l, l + self.masses.mass(i))).collect();
        v.push((self.f(self.right), 1.0));
        v
    }

    pub fn is_single_interval(&self) -> bool {
        self.k > 0 && self.gaps.is_empty()
    }

    /// Drops `U_k` uniformly on `𝒲_{k-1}` and returns the box it lands in.
    pub fn advance(&mut self, rng: &mut Stream) -> usize {
        let gap_len: f64 = self.gaps.iter().map(|&(i, _)| self.masses.mass(i)).sum();
        let tail = self.masses.tail(self.right);
        let mut x = open01(rng) * (gap_len + tail);
        self.k += 1;
        if x < gap_len {
            let mut hit = self.gaps.len() - 1;
            for (pos, &(i, _)) in self.gaps.iter().enumerate() {
                let m = self.masses.mass(i);
                if x < m {
                    hit = pos;
                    break;
                }
                x -= m;
            }
            let (i, _) = self.gaps.remove(hit);
            self.images.push(i as u64);
            return i;
        }
        // Relative position inside (F_j, 1); open boxes j+1, j+2, ... until
        // the one containing it.
        let mut r = ((x - gap_len) / tail).clamp(0.0, 1.0 - f64::EPSILON);
        loop {
            let i = self.right + 1;
            self.masses.ensure(i, rng);
            let left = self.f(i - 1);
            self.right = i;
            let w = self.masses.factor(i);
            if r < w {
                self.images.push(i as u64);
                return i;
            }
            self.gaps.push((i, left));
            r = ((r - w) / (1.0 - w)).clamp(0.0, 1.0 - f64::EPSILON);
        }
    }
}

/// Outcome of running the interval process to its first single-interval state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WkOutcome {
    /// Length of the first component.
    pub y1: usize,
    /// The recovered prefix `Π_1..Π_{Y_1}`.
    pub images: Vec<u64>,
    /// `𝒲_1..𝒲_{Y_1}` when recorded.
    pub trajectory: Vec<Vec<(f64, f64)>>,
}

pub fn wk_interval_process(stick: &StickBreaking, record: bool, rng: &mut Stream) -> WkOutcome {
    let mut w = IntervalProcess::new(Masses::Ram(stick));
    let mut trajectory = Vec::new();
    loop {
        w.advance(rng);
        if record {
            trajectory.push(w.intervals());
        }
        if w.is_single_interval() {
            return WkOutcome { y1: w.k, images: w.images, trajectory };
        }
    }
}

// ---------------------------------------------------------------------------
// Inclusion–exclusion and the integral representation.

/// All subset sums `Σ_{i∈S} P_i` for `S ⊆ [n]`, indexed by bitmask.
fn subset_sums(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut sums = vec![0.0; 1 << n];
    for mask in 1usize..(1 << n) {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + p[low];
    }
    sums
}

/// `Σ_{|S|=j} T_n / (T_n + P_S)` for one realization, for every `j = 0..=n`.
fn sigma_row(p: &[f64], t: f64) -> Vec<f64> {
    let sums = subset_sums(p);
    let mut row = vec![0.0; p.len() + 1];
    for (mask, s) in sums.iter().enumerate() {
        row[mask.count_ones() as usize] += t / (t + s);
    }
    row
}

/// Estimate with a standard error; the error is zero for exact evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

fn first_masses(src: Masses<'_>, n: usize, rng: &mut Stream) -> (Vec<f64>, f64) {
    let mut r = Realized::new(src);
    r.ensure(n, rng);
    ((1..=n).map(|i| r.mass(i)).collect(), r.tail(n))
}

fn is_deterministic(src: Masses<'_>) -> bool {
    match src {
        Masses::Fixed(_) => true,
        Masses::Ram(s) => matches!(s.law, FactorLaw::Constant(_)),
    }
}

/// `Σ_{n,j} = Σ_{|S| = j} E[T_n / (T_n + P_S)]` for `j = 0..=n`; exact for
/// fixed masses, Monte Carlo over `draws` realizations otherwise.
pub fn sigma_table(src: Masses<'_>, n: usize, draws: u64, seed: u64) -> Result<Vec<Estimate>, SamplerError> {
    if n > SUBSET_CAP {
        return Err(SamplerError::SubsetGuard { n, cap: SUBSET_CAP });
    }
    if is_deterministic(src) {
        let (p, t) = first_masses(src, n, &mut crate::rng::stream(seed, 0));
        return Ok(sigma_row(&p, t).into_iter().map(|value| Estimate { value, se: 0.0 }).collect());
    }
    let batches = crate::rng::DEFAULT_BATCHES;
    let per = par_batches(seed, batches, |b, rng| {
        let m = crate::rng::batch_size(draws, batches, b);
        let mut acc = vec![0.0; n + 1];
        for _ in 0..m {
            let (p, t) = first_masses(src, n, rng);
            for (a, x) in acc.iter_mut().zip(sigma_row(&p, t)) {
                *a += x;
            }
        }
        (m as f64, acc)
    });
    Ok((0..=n)
        .map(|j| {
            let pairs: Vec<(f64, f64)> = per.iter().map(|(m, a)| (a[j], *m)).collect();
            let (value, se) = crate::stats::ratio_estimate(&pairs);
            Estimate { value, se }
        })
        .collect())
}

pub fn sigma_nj(src: Masses<'_>, n: usize, j: usize, draws: u64, seed: u64) -> Result<Estimate, SamplerError> {
    Ok(sigma_table(src, n, draws, seed)?[j])
}

/// `u_n = 1 + Σ_j (-1)^j Σ_{n,j}`, averaged per realization so the standard
/// error reflects the combined estimator.
pub fn u_n_inclusion_exclusion(src: Masses<'_>, n: usize, draws: u64, seed: u64) -> Result<Estimate, SamplerError> {
    if n > SUBSET_CAP {
        return Err(SamplerError::SubsetGuard { n, cap: SUBSET_CAP });
    }
    let combine = |p: &[f64], t: f64| {
        let sums = subset_sums(p);
        sums.iter().enumerate().map(|(mask, s)| if mask.count_ones() % 2 == 0 { t / (t + s) } else { -t / (t + s) }).sum::<f64>()
    };
    if is_deterministic(src) {
        let (p, t) = first_masses(src, n, &mut crate::rng::stream(seed, 0));
        return Ok(Estimate { value: combine(&p, t), se: 0.0 });
    }
    let batches = crate::rng::DEFAULT_BATCHES;
    let per = par_batches(seed, batches, |b, rng| {
        let m = crate::rng::batch_size(draws, batches, b);
        let mut acc = 0.0;
        for _ in 0..m {
            let (p, t) = first_masses(src, n, rng);
            acc += combine(&p, t);
        }
        (acc, m as f64)
    });
    let (value, se) = crate::stats::ratio_estimate(&per);
    Ok(Estimate { value, se })
}

/// Adaptive Simpson quadrature on `[a, b]`; returns the value and an error estimate.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return (left + right + delta / 15.0, delta.abs() / 15.0);
        }
        let (l, el) = rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1);
        let (r, er) = rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
        (l + r, el + er)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    /// Accumulated quadrature error estimate.
    pub quad_err: f64,
    /// Monte Carlo standard error over the factor draws.
    pub mc_se: f64,
}

/// `u_n = ∫_0^∞ e^{-x} E Π_{i<=n} (1 - exp(-x W_i / T_i)) dx`.
///
/// With `y = 1 - e^{-x}` the integrand becomes `Π (1 - (1 - y)^{a_i})` on
/// `[0, 1]` with `a_i = W_i / T_i`; each factor draw is integrated by
/// adaptive Simpson and the draws are averaged.
pub fn pta_integral(stick: &StickBreaking, n: usize, tol: f64, draws: u64, seed: u64) -> IntegralEstimate {
    let integrate = |w: &[f64]| {
        let mut t = 1.0;
        let a: Vec<f64> = w
            .iter()
            .map(|&wi| {
                t *= 1.0 - wi;
                wi / t
            })
            .collect();
        let f = |y: f64| a.iter().map(|&ai| -(ai * (-y).ln_1p()).exp_m1()).product::<f64>();
        adaptive_simpson(&f, 0.0, 1.0, tol)
    };
    if let FactorLaw::Constant(w) = stick.law {
        let (value, quad_err) = integrate(&vec![w; n]);
        return IntegralEstimate { value, quad_err, mc_se: 0.0 };
    }
    let batches = crate::rng::DEFAULT_BATCHES;
    let per = par_batches(seed, batches, |b, rng| {
        let m = crate::rng::batch_size(draws, batches, b);
        let mut acc = 0.0;
        let mut err = 0.0;
        for _ in 0..m {
            let w: Vec<f64> = (0..n).map(|_| stick.sample_factor(rng).0).collect();
            let (v, e) = integrate(&w);
            acc += v;
            err += e;
        }
        (acc, m as f64, err)
    });
    let pairs: Vec<(f64, f64)> = per.iter().map(|x| (x.0, x.1)).collect();
    let (value, mc_se) = crate::stats::ratio_estimate(&pairs);
    let total: f64 = per.iter().map(|x| x.1).sum();
    let quad_err = per.iter().map(|x| x.2).sum::<f64>() / total;
    IntegralEstimate { value, quad_err, mc_se }
}

// ---------------------------------------------------------------------------
// Blocked permutations and stationary windows.

/// Concatenates independent uniform blocks with lengths drawn from `p`
/// until the blocks cover `[n]`. The prefix ends at a block boundary.
pub fn sample_blocked_run(p: &DiscreteDist, stop: Stop, rng: &mut Stream) -> Result<Sample, SamplerError> {
    if p.p_inf() > 0.0 {
        return Err(SamplerError::DefectiveBlocks(p.p_inf()));
    }
    let n = stop.min_len();
    let mut images = Vec::with_capacity(n + 8);
    let mut renewals = Vec::new();
    while images.len() < n {
        let y = p.sample(rng).finite().expect("proper law") as usize;
        let base = images.len() as u64;
        for x in uniform_permutation(y, rng) {
            images.push(base + x as u64);
        }
        renewals.push(images.len());
    }
    if let Stop::Length(n) = stop {
        images.truncate(n);
        renewals.retain(|&r| r <= n);
    }
    Ok(Sample { prefix: PermPrefix::from_images_unchecked(images), renewals })
}

pub fn sample_blocked(p: &DiscreteDist, n: usize, rng: &mut Stream) -> Result<PermPrefix, SamplerError> {
    Ok(sample_blocked_run(p, Stop::RenewalAtLeast { n, max_len: usize::MAX }, rng)?.prefix)
}

/// A window `[lo, hi]` of the stationary two-sided blocked permutation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoSidedWindow {
    pub lo: i64,
    pub hi: i64,
    /// `Π*_z` for `z = lo..=hi`.
    pub images: Vec<i64>,
    /// `R*_z` for `z = lo..=hi`: true when a block ends at `z`.
    pub renewals: Vec<bool>,
    /// `T_0`, the first block end at or after 0.
    pub t0: i64,
    /// `Y_0`, the size-biased length of the block containing 0.
    pub y0: usize,
}

impl TwoSidedWindow {
    pub fn image(&self, z: i64) -> i64 {
        self.images[(z - self.lo) as usize]
    }

    pub fn renewal(&self, z: i64) -> bool {
        self.renewals[(z - self.lo) as usize]
    }

    pub fn displacement(&self, z: i64) -> i64 {
        self.image(z) - z
    }
}

/// Samples the stationary version on `[lo, hi]`: `Y_0` size-biased, `T_0`
/// uniform on `{0, ..., Y_0 - 1}`, block `(T_0 - Y_0, T_0]` around 0, and
/// i.i.d. blocks on either side.
pub fn sample_stationary_window(p: &DiscreteDist, lo: i64, hi: i64, rng: &mut Stream) -> Result<TwoSidedWindow, SamplerError> {
    if !(lo <= 0 && 0 <= hi) {
        return Err(SamplerError::BadWindow);
    }
    stationary(p, Some(lo), hi, rng)
}

/// The stationary version on whole blocks: from the first point of the block
/// containing 0 up to the first block end at or after `n`.
pub fn sample_stationary_cover(p: &DiscreteDist, n: i64, rng: &mut Stream) -> Result<TwoSidedWindow, SamplerError> {
    stationary(p, None, n.max(0), rng)
}

fn stationary(p: &DiscreteDist, lo: Option<i64>, hi: i64, rng: &mut Stream) -> Result<TwoSidedWindow, SamplerError> {
    if p.p_inf() > 0.0 || !p.mean().is_finite() {
        return Err(SamplerError::NotPositiveRecurrent);
    }
    let y0 = p.sample_size_biased(rng).ok_or(SamplerError::NotPositiveRecurrent)? as usize;
    let t0 = rng.random_range(0..y0) as i64;
    let mut starts = vec![t0 - y0 as i64];
    let mut lens = vec![y0];
    let mut right = t0;
    while right < hi {
        let y = p.sample(rng).finite().expect("proper law") as usize;
        starts.push(right);
        lens.push(y);
        right += y as i64;
    }
    let mut left = t0 - y0 as i64;
    if let Some(lo) = lo {
        while left >= lo {
            let y = p.sample(rng).finite().expect("proper law") as usize;
            left -= y as i64;
            starts.push(left);
            lens.push(y);
        }
    }
    let (lo, hi) = match lo {
        Some(lo) => (lo, hi),
        None => (t0 - y0 as i64 + 1, right),
    };
    let len = (hi - lo + 1) as usize;
    let mut images = vec![0i64; len];
    let mut renewals = vec![false; len];
    for (&start, &y) in starts.iter().zip(&lens) {
        // block occupying (start, start + y]
        for (k, &x) in uniform_permutation(y, rng).iter().enumerate() {
            let z = start + k as i64 + 1;
            if (lo..=hi).contains(&z) {
                images[(z - lo) as usize] = start + x as i64;
            }
        }
        let end = start + y as i64;
        if (lo..=hi).contains(&end) {
            renewals[(end - lo) as usize] = true;
        }
    }
    Ok(TwoSidedWindow { lo, hi, images, renewals, t0, y0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn geo(q: f64) -> DiscreteDist {
        DiscreteDist::geometric(q).unwrap()
    }

    #[test]
    fn shifted_examples() {
        assert_eq!(pshifted_from_draws(&[2, 1, 2, 3, 4, 1]).images(), &[2, 1, 4, 6, 8, 3]);
        assert_eq!(pshifted_from_draws(&[1; 6]).images(), &[1, 2, 3, 4, 5, 6]);
        let mut rng = stream(1, 0);
        let n = 1_000_000;
        let p = geo(0.5);
        let hits = (0..n).filter(|_| sample_pshifted(&p, 3, &mut rng).unwrap().last_split() == 3).count();
        assert!((hits as f64 / n as f64 - 21.0 / 64.0).abs() < 0.0015);
    }

    #[test]
    fn tree_and_list_agree() {
        let mut rng = stream(2, 0);
        for _ in 0..50 {
            let xs: Vec<u64> = (0..300).map(|_| rng.random_range(1..20)).collect();
            let mut small = UnusedSet::Small(Vec::new());
            let mut tree = UnusedSet::Tree(Fenwick::with_cap(4, []));
            let mut naive: Vec<u64> = Vec::new();
            for &x in &xs {
                let a = small.take_kth(x);
                let b = tree.take_kth(x);
                let mut v = 0;
                let mut k = 0;
                while k < x {
                    v += 1;
                    if !naive.contains(&v) {
                        k += 1;
                    }
                }
                naive.push(v);
                assert_eq!((a, b), (v, v));
            }
        }
    }

    #[test]
    fn zigzag_has_no_finite_component() {
        let img: Vec<u64> = (1..=200).map(zigzag).collect();
        let prefix = PermPrefix::new(img.clone()).unwrap();
        assert!(prefix.splitting_times().is_empty());
        let mut sorted = img;
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 200);
        assert_eq!(zigzag(2), 1);
        assert_eq!(zigzag(1), 3);
        assert_eq!(zigzag(4), 2);
    }

    #[test]
    fn transient_completion() {
        let p = DiscreteDist::fixed(vec![0.6, 0.2], 0.2).unwrap();
        let mut rng = stream(3, 0);
        let n = 200_000;
        let mut split_counts = [0u64; 8];
        for _ in 0..n {
            let s = sample_pshifted_run(&p, Stop::Length(7), &mut rng).unwrap();
            assert_eq!(s.prefix.len(), 7);
            assert!(PermPrefix::new(s.prefix.images().to_vec()).is_ok());
            for k in s.prefix.splitting_times() {
                split_counts[k] += 1;
            }
        }
        for k in 1..=7 {
            let exact = pshifted_u(&p, k);
            let se = (exact * (1.0 - exact) / n as f64).sqrt();
            assert!((split_counts[k] as f64 / n as f64 - exact).abs() < 4.5 * se, "k={k}");
        }
    }

    #[test]
    fn polynomials() {
        let p = DiscreteDist::fixed(vec![0.4, 0.3, 0.2, 0.1], 0.0).unwrap();
        let f = pshifted_f_polynomials(&p, 4);
        assert!((f[0] - 0.4).abs() < 1e-15);
        assert!((f[1] - 0.4 * 0.3).abs() < 1e-15);
        let f3 = f_polynomial(3);
        let expected: BTreeMap<Vec<u32>, u64> =
            [(vec![1, 2, 0], 1), (vec![2, 0, 1], 1), (vec![1, 1, 1], 1)].into_iter().collect();
        assert_eq!(f3, expected);
        let f4 = f_polynomial(4);
        let expected: BTreeMap<Vec<u32>, u64> = [
            (vec![1, 3, 0, 0], 1),
            (vec![2, 1, 1, 0], 2),
            (vec![1, 2, 1, 0], 2),
            (vec![2, 0, 2, 0], 1),
            (vec![1, 1, 2, 0], 1),
            (vec![3, 0, 0, 1], 1),
            (vec![2, 1, 0, 1], 2),
            (vec![1, 2, 0, 1], 1),
            (vec![2, 0, 1, 1], 1),
            (vec![1, 1, 1, 1], 1),
        ]
        .into_iter()
        .collect();
        assert_eq!(f4, expected);
        let t = crate::perm::indecomposable_counts(6);
        for n in 1..=6 {
            let total: u64 = f_polynomial(n).values().sum();
            assert_eq!(num_bigint::BigUint::from(total), t.get(n, 1));
        }
        for n in 1..=4 {
            assert!((enumerated_f(&p, n) - f[n - 1]).abs() < 1e-12);
            assert!((enumerated_u(&p, n) - pshifted_u(&p, n)).abs() < 1e-12);
        }
        let one = DiscreteDist::point_mass(1);
        assert!((1..10).all(|n| pshifted_u(&one, n) == 1.0));
    }

    #[test]
    fn mn_chain_examples() {
        assert_eq!(mn_from_draws(&[2, 1, 2, 3, 4, 1]), vec![1, 0, 1, 2, 3, 2]);
        let mut rng = stream(4, 0);
        assert!(mn_chain(&DiscreteDist::point_mass(1), 100, &mut rng).unwrap().iter().all(|&m| m == 0));
        let p = geo(0.5);
        let path = mn_chain(&p, 2_000_000, &mut rng).unwrap();
        let zeros = path.iter().filter(|&&m| m == 0).count() as f64 / path.len() as f64;
        let u_inf: f64 = (1..60).map(|j| 1.0 - 0.5f64.powi(j)).product();
        assert!((zeros - u_inf).abs() < 0.002);
        let mu = mn_invariant_measure(&p, 60);
        let total: f64 = mu.iter().sum();
        assert!((1.0 / total - u_inf).abs() < 1e-12);
        for i in 1..4 {
            let freq = path.iter().filter(|&&m| m == i as u64).count() as f64 / path.len() as f64;
            assert!((freq - mu[i] / total).abs() < 0.003, "i={i}");
        }
    }

    #[test]
    fn biased_samplers_basic() {
        let mut rng = stream(5, 0);
        let one = DiscreteDist::point_mass(1);
        assert_eq!(sample_pbiased_sequential(Masses::Fixed(&one), 1, None, &mut rng).unwrap().images(), &[1]);
        assert_eq!(sample_pbiased_ppy(Masses::Fixed(&one), 1, &mut rng).unwrap().0.images(), &[1]);
        assert!(matches!(
            sample_pbiased_sequential(Masses::Fixed(&one), 2, None, &mut rng),
            Err(SamplerError::NotEnoughAtoms { .. })
        ));

        let two = DiscreteDist::fixed(vec![2.0 / 3.0, 1.0 / 3.0], 0.0).unwrap();
        let n = 1_000_000;
        let ones = (0..n)
            .filter(|_| sample_pbiased_ppy(Masses::Fixed(&two), 2, &mut rng).unwrap().0.images()[0] == 1)
            .count() as f64
            / n as f64;
        assert!((ones - 2.0 / 3.0).abs() < 3.0 * (2.0 / 9.0 / n as f64).sqrt() * 1.5);

        let g = geo(0.5);
        let n = 400_000;
        let mut counts = [0u64; 5];
        for _ in 0..n {
            let x = sample_pbiased_sequential(Masses::Fixed(&g), 3, None, &mut rng).unwrap().images()[0] as usize;
            if x < 5 {
                counts[x] += 1;
            }
        }
        for k in 1..5 {
            let e = 0.5f64.powi(k as i32);
            let se = (e * (1.0 - e) / n as f64).sqrt();
            assert!((counts[k] as f64 / n as f64 - e).abs() < 4.0 * se);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = DiscreteDist::geometric(0.001).unwrap();
        let mut rng = stream(6, 0);
        let r = sample_pbiased_sequential(Masses::Fixed(&g), 10, Some(5), &mut rng);
        assert!(matches!(r, Err(SamplerError::BudgetExceeded { budget: 5, .. })));
    }

    #[test]
    fn gem_first_split() {
        let gem = StickBreaking::gem(1.0).unwrap();
        let mut rng = stream(7, 0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| sample_pbiased_sequential(Masses::Ram(&gem), 1, None, &mut rng).unwrap().images()[0] == 1)
            .count() as f64
            / n as f64;
        assert!((hits - 0.5).abs() < 0.0015);
    }

    #[test]
    fn interval_process_examples() {
        let mut rng = stream(8, 0);
        let geo_sticks = StickBreaking::constant(0.5).unwrap();
        let n = 200_000;
        let ones = (0..n).filter(|_| wk_interval_process(&geo_sticks, false, &mut rng).y1 == 1).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 0.005);

        let gem = StickBreaking::gem(1.0).unwrap();
        let out = wk_interval_process(&gem, true, &mut rng);
        assert_eq!(out.trajectory.len(), out.y1);
        let last = out.trajectory.last().unwrap();
        assert_eq!(last.len(), 1);
        assert_eq!(last[0].1, 1.0);
        let prefix = PermPrefix::new(out.images.clone()).unwrap();
        assert_eq!(prefix.splitting_times(), vec![out.y1]);
        for w in &out.trajectory {
            for pair in w.windows(2) {
                assert!(pair[0].1 <= pair[1].0 + 1e-15);
            }
        }
    }

    #[test]
    fn inclusion_exclusion_examples() {
        let g = geo(0.5);
        let s = sigma_nj(Masses::Fixed(&g), 1, 1, 0, 0).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(u_n_inclusion_exclusion(Masses::Fixed(&g), 1, 0, 0).unwrap().value, 0.5);
        let gem = StickBreaking::gem(1.0).unwrap();
        let e = u_n_inclusion_exclusion(Masses::Ram(&gem), 2, 1_000_000, 3).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 6.0 - 1.25;
        assert!((e.value - exact).abs() < 0.003, "{e:?}");
        assert!(matches!(u_n_inclusion_exclusion(Masses::Ram(&gem), 21, 1, 0), Err(SamplerError::SubsetGuard { .. })));
    }

    #[test]
    fn integral_examples() {
        let c = StickBreaking::constant(0.5).unwrap();
        let v = pta_integral(&c, 1, 1e-12, 0, 0);
        assert!((v.value - 0.5).abs() < 1e-9);
        let c = StickBreaking::constant(0.3).unwrap();
        // geometric(0.7)-biased: compare with inclusion–exclusion on fixed masses
        let g = geo(0.7);
        for n in 1..=6 {
            let a = pta_integral(&c, n, 1e-12, 0, 0).value;
            let b = u_n_inclusion_exclusion(Masses::Fixed(&g), n, 0, 0).unwrap().value;
            assert!((a - b).abs() < 1e-8, "n={n} {a} {b}");
        }
        let gem = StickBreaking::gem(1.0).unwrap();
        let v = pta_integral(&gem, 1, 1e-10, 200_000, 4);
        assert!((v.value - 0.5).abs() < 0.002);
    }

    #[test]
    fn blocked_examples() {
        let mut rng = stream(9, 0);
        let one = DiscreteDist::point_mass(1);
        assert_eq!(sample_blocked(&one, 5, &mut rng).unwrap().images(), &[1, 2, 3, 4, 5]);
        let g = geo(0.5);
        let n = 200_000;
        let mut both = 0;
        let mut renew = 0;
        for _ in 0..n {
            let s = sample_blocked_run(&g, Stop::RenewalAtLeast { n: 40, max_len: usize::MAX }, &mut rng).unwrap();
            let im = s.prefix.images();
            both += usize::from(im[0] == 1 && im[1] == 2);
            renew += usize::from(s.renewals.contains(&40));
        }
        assert!((both as f64 / n as f64 - 0.5).abs() < 0.005);
        assert!((renew as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn stationary_window_examples() {
        let mut rng = stream(10, 0);
        let one = DiscreteDist::point_mass(1);
        let w = sample_stationary_window(&one, -3, 3, &mut rng).unwrap();
        assert_eq!(w.images, (-3..=3).collect::<Vec<i64>>());
        assert!(w.renewals.iter().all(|&r| r));

        let g = geo(0.5);
        let n = 200_000;
        let mut r0 = 0;
        let mut d0 = 0;
        for _ in 0..n {
            let w = sample_stationary_window(&g, -3, 3, &mut rng).unwrap();
            r0 += usize::from(w.renewal(0));
            d0 += usize::from(w.displacement(0) == 0);
        }
        assert!((r0 as f64 / n as f64 - 0.5).abs() < 0.005);
        let exact = crate::perm::UniformBlocked::new(g).displacement_mass(0);
        assert!((d0 as f64 / n as f64 - exact).abs() < 0.005);
        assert!(sample_stationary_window(&DiscreteDist::fixed(vec![0.5], 0.5).unwrap(), -1, 1, &mut rng).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn samplers_are_injective_with_valid_splits(seed in 0u64..1000, n in 1usize..120, q in 0.05f64..0.95) {
            let mut rng = stream(seed, 0);
            let g = geo(q);
            let gem = StickBreaking::gem(0.5 + q * 3.0).unwrap();
            let outs = vec![
                sample_pshifted(&g, n, &mut rng).unwrap(),
                sample_blocked(&g, n, &mut rng).unwrap(),
                sample_pbiased_sequential(Masses::Fixed(&g), n, None, &mut rng).unwrap(),
                sample_pbiased_ppy(Masses::Ram(&gem), n, &mut rng).unwrap().0,
            ];
            for p in outs {
                prop_assert!(PermPrefix::new(p.images().to_vec()).is_ok());
                let mut max = 0;
                let splits = p.splitting_times();
                for (i, &x) in p.images().iter().enumerate() {
                    max = max.max(x);
                    prop_assert_eq!(splits.contains(&(i + 1)), max == i as u64 + 1);
                }
            }
            let w = sample_stationary_window(&g, -20, 20, &mut rng).unwrap();
            let mut prev: Option<i64> = None;
            for z in -20..=20i64 {
                if w.renewal(z) {
                    if let Some(a) = prev {
                        let m = (a + 1..=z).map(|y| w.image(y)).max().unwrap();
                        prop_assert_eq!(m, z);
                    }
                    prev = Some(z);
                }
            }
        }
    }
}
