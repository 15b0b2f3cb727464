//! Bernoulli and finite-order Markov measures on the full shift.
//!
//! A measure of order `k` is given by a stochastic kernel from `k`-tuples to
//! symbols together with its stationary law on `k`-tuples. Convex
//! combinations are kept formally, as a list of weighted components, so that
//! entropy, Lyapunov exponent and `Φ*` evaluate affinely.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interval_maps::BranchMap;
use crate::symbolic::{all_words, suffix_spans, Word};

/// Additive smoothing used by [`MarkovMeasure::empirical`].
pub const SMOOTHING: f64 = 1e-9;

const ROW_TOLERANCE: f64 = 1e-12;
const MAX_STATES: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq)]
struct Chain {
    order: usize,
    kernel: Vec<f64>,
    stationary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Chain(Chain),
    Mixture(Vec<(f64, MarkovMeasure)>),
}

/// Shift-invariant Markov measure of finite order, or a formal convex
/// combination of such measures.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMeasure {
    alphabet: usize,
    kind: Kind,
}

/// Config-level description of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureDescriptor {
    Bernoulli {
        bernoulli: Vec<f64>,
    },
    Markov {
        order: usize,
        transition: Vec<Vec<f64>>,
    },
}

impl MeasureDescriptor {
    pub fn build(&self) -> Result<MarkovMeasure> {
        match self {
            MeasureDescriptor::Bernoulli { bernoulli } => MarkovMeasure::bernoulli(bernoulli),
            MeasureDescriptor::Markov { order, transition } => {
                MarkovMeasure::markov(*order, transition.clone())
            }
        }
    }
}

/// Interval `[lower, upper]` certified to contain a quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

impl Bracket {
    pub fn exact(value: f64) -> Self {
        Bracket {
            lower: value,
            upper: value,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower - tol && x <= self.upper + tol
    }
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn stationary_of(alphabet: usize, order: usize, kernel: &[f64]) -> Result<Vec<f64>> {
    let states = alphabet.pow(order as u32);
    if states == 1 {
        return Ok(vec![1.0]);
    }
    let next = |t: usize, a: usize| (t * alphabet + a) % states;
    // π(P − I) = 0 with the last equation replaced by Σπ = 1.
    let mut system = DMatrix::<f64>::zeros(states, states);
    for t in 0..states {
        for a in 0..alphabet {
            system[(next(t, a), t)] += kernel[t * alphabet + a];
        }
        system[(t, t)] -= 1.0;
    }
    for t in 0..states {
        system[(states - 1, t)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(states);
    rhs[states - 1] = 1.0;
    if let Some(pi) = system.lu().solve(&rhs) {
        let pi: Vec<f64> = pi
            .iter()
            .map(|&p| if p.abs() < 1e-15 { 0.0 } else { p })
            .collect();
        if pi.iter().all(|&p| p >= -1e-12 && p.is_finite())
            && residual(alphabet, order, kernel, &pi) < 1e-11
        {
            return Ok(pi.into_iter().map(|p| p.max(0.0)).collect());
        }
    }
    // Reducible chain: Cesàro limit of the lazy chain from the uniform law.
    let mut pi = vec![1.0 / states as f64; states];
    for _ in 0..200_000 {
        let mut new = vec![0.0; states];
        for t in 0..states {
            new[t] += 0.5 * pi[t];
            for a in 0..alphabet {
                new[next(t, a)] += 0.5 * pi[t] * kernel[t * alphabet + a];
            }
        }
        let diff: f64 = new.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        pi = new;
        if diff < 1e-15 {
            break;
        }
    }
    if residual(alphabet, order, kernel, &pi) > 1e-10 {
        return Err(Error::Numeric("stationary law did not converge".into()));
    }
    Ok(pi)
}

fn residual(alphabet: usize, order: usize, kernel: &[f64], pi: &[f64]) -> f64 {
    let states = alphabet.pow(order as u32);
    let mut image = vec![0.0; states];
    for t in 0..states {
        for a in 0..alphabet {
            image[(t * alphabet + a) % states] += pi[t] * kernel[t * alphabet + a];
        }
    }
    image
        .iter()
        .zip(pi)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

impl MarkovMeasure {
    /// Product measure with symbol probabilities `p`.
    pub fn bernoulli(p: &[f64]) -> Result<Self> {
        Self::from_kernel(p.len(), 0, p.to_vec())
    }

    /// Order-`k` measure from kernel rows indexed by `k`-tuples in base `m`
    /// (oldest symbol most significant).
    pub fn markov(order: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let alphabet = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != alphabet) {
            return Err(invalid("transition rows have different lengths"));
        }
        if alphabet == 0 || rows.len() != alphabet.pow(order as u32) {
            return Err(invalid(format!(
                "order {order} needs {} rows over the alphabet",
                alphabet.max(1).pow(order as u32)
            )));
        }
        Self::from_kernel(alphabet, order, rows.concat())
    }

    /// Order-`k` measure from a flat row-major kernel.
    pub fn from_kernel(alphabet: usize, order: usize, kernel: Vec<f64>) -> Result<Self> {
        if alphabet < 2 {
            return Err(invalid("alphabet needs at least two symbols"));
        }
        let states = alphabet
            .checked_pow(order as u32)
            .filter(|&s| s <= MAX_STATES)
            .ok_or_else(|| invalid(format!("order {order} is too large")))?;
        if kernel.len() != states * alphabet {
            return Err(invalid("kernel has the wrong size"));
        }
        for row in kernel.chunks(alphabet) {
            if row.iter().any(|&p| !(p >= 0.0 && p <= 1.0 + ROW_TOLERANCE)) {
                return Err(invalid("kernel entries must lie in [0,1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("kernel row sums to {sum}, not 1")));
            }
        }
        // Renormalise rows to 1 within rounding.
        let kernel: Vec<f64> = kernel
            .chunks(alphabet)
            .flat_map(|row| {
                let sum: f64 = row.iter().sum();
                row.iter().map(move |p| p / sum)
            })
            .collect();
        let stationary = stationary_of(alphabet, order, &kernel)?;
        Ok(MarkovMeasure {
            alphabet,
            kind: Kind::Chain(Chain {
                order,
                kernel,
                stationary,
            }),
        })
    }

    /// Formal convex combination `s μ + (1 − s) ν`.
    pub fn mix(mu: &MarkovMeasure, nu: &MarkovMeasure, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid(format!("mixing weight {s} outside [0,1]")));
        }
        if mu.alphabet != nu.alphabet {
            return Err(invalid("mixed measures must share an alphabet"));
        }
        if s == 1.0 {
            return Ok(mu.clone());
        }
        if s == 0.0 {
            return Ok(nu.clone());
        }
        Ok(MarkovMeasure {
            alphabet: mu.alphabet,
            kind: Kind::Mixture(vec![(s, mu.clone()), (1.0 - s, nu.clone())]),
        })
    }

    /// Order-`k` transition frequencies of `w` with additive smoothing.
    pub fn empirical(w: &Word, order: usize, alphabet: usize) -> Result<Self> {
        if w.len() <= order + 1 {
            return Err(invalid(format!(
                "a word of length {} cannot estimate order {order}",
                w.len()
            )));
        }
        w.validate(alphabet)?;
        let states = alphabet
            .checked_pow(order as u32)
            .filter(|&s| s <= MAX_STATES)
            .ok_or_else(|| invalid(format!("order {order} is too large")))?;
        let mut counts = vec![0.0; states * alphabet];
        let s = w.symbols();
        for i in order..s.len() {
            let t = s[i - order..i]
                .iter()
                .fold(0usize, |acc, &x| acc * alphabet + x as usize);
            counts[t * alphabet + s[i] as usize] += 1.0;
        }
        let kernel = counts
            .chunks(alphabet)
            .flat_map(|row| {
                let total: f64 = row.iter().sum();
                row.iter()
                    .map(move |c| (c + SMOOTHING) / (total + alphabet as f64 * SMOOTHING))
            })
            .collect();
        Self::from_kernel(alphabet, order, kernel)
    }

    /// Order-`k` Markov measure with the same `(k+1)`-cylinder marginals,
    /// smoothed by `eps` so that every kernel entry is positive (hence the
    /// result is ergodic). Used to replace a mixture by an ergodic measure.
    pub fn markov_approximation(&self, order: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("smoothing must be positive"));
        }
        let m = self.alphabet;
        let masses = self.word_masses(order + 1);
        let kernel = masses
            .chunks(m)
            .flat_map(|row| {
                let total: f64 = row.iter().sum();
                row.iter()
                    .map(move |x| (x + eps) / (total + m as f64 * eps))
            })
            .collect();
        Self::from_kernel(m, order, kernel)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Markov order; for mixtures the largest component order.
    pub fn order(&self) -> usize {
        match &self.kind {
            Kind::Chain(c) => c.order,
            Kind::Mixture(parts) => parts.iter().map(|(_, m)| m.order()).max().unwrap_or(0),
        }
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self.kind, Kind::Mixture(_))
    }

    /// Weighted components of a mixture (a chain is its own single component).
    pub fn components(&self) -> Vec<(f64, &MarkovMeasure)> {
        match &self.kind {
            Kind::Chain(_) => vec![(1.0, self)],
            Kind::Mixture(parts) => parts.iter().map(|(w, m)| (*w, m)).collect(),
        }
    }

    /// Row-major kernel, for chains.
    pub fn kernel(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Chain(c) => Some(&c.kernel),
            Kind::Mixture(_) => None,
        }
    }

    /// Stationary law on `k`-tuples, for chains.
    pub fn stationary(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Chain(c) => Some(&c.stationary),
            Kind::Mixture(_) => None,
        }
    }

    pub fn descriptor(&self) -> Result<MeasureDescriptor> {
        match &self.kind {
            Kind::Chain(c) if c.order == 0 => Ok(MeasureDescriptor::Bernoulli {
                bernoulli: c.kernel.clone(),
            }),
            Kind::Chain(c) => Ok(MeasureDescriptor::Markov {
                order: c.order,
                transition: c
                    .kernel
                    .chunks(self.alphabet)
                    .map(<[f64]>::to_vec)
                    .collect(),
            }),
            Kind::Mixture(_) => Err(Error::Unsupported("mixtures have no descriptor".into())),
        }
    }

    /// Metric entropy `h(μ, σ)` in nats.
    pub fn entropy(&self) -> f64 {
        match &self.kind {
            Kind::Chain(c) => -c
                .stationary
                .iter()
                .enumerate()
                .map(|(t, &pi)| {
                    pi * c.kernel[t * self.alphabet..(t + 1) * self.alphabet]
                        .iter()
                        .map(|&p| xlogx(p))
                        .sum::<f64>()
                })
                .sum::<f64>(),
            Kind::Mixture(parts) => parts.iter().map(|(w, m)| w * m.entropy()).sum(),
        }
    }

    /// `ln μ[w]`, accumulated in log space; `-∞` for null cylinders.
    pub fn log_cylinder_mass(&self, w: &[u8]) -> f64 {
        match &self.kind {
            Kind::Chain(c) => {
                let m = self.alphabet;
                let k = c.order;
                if w.len() <= k {
                    let idx = w.iter().fold(0usize, |acc, &x| acc * m + x as usize);
                    let span = m.pow((k - w.len()) as u32);
                    let mass: f64 = c.stationary[idx * span..(idx + 1) * span].iter().sum();
                    return mass.ln();
                }
                let states = m.pow(k as u32);
                let mut t = w[..k].iter().fold(0usize, |acc, &x| acc * m + x as usize);
                let mut log = c.stationary[t].ln();
                for &a in &w[k..] {
                    log += c.kernel[t * m + a as usize].ln();
                    if log == f64::NEG_INFINITY {
                        return log;
                    }
                    t = (t * m + a as usize) % states.max(1);
                }
                log
            }
            Kind::Mixture(parts) => {
                let logs: Vec<f64> = parts
                    .iter()
                    .map(|(s, m)| s.ln() + m.log_cylinder_mass(w))
                    .collect();
                log_sum_exp(&logs)
            }
        }
    }

    /// `μ[w]`.
    pub fn cylinder_mass(&self, w: &Word) -> f64 {
        self.log_cylinder_mass(w.symbols()).exp()
    }

    /// Masses of all words of length `len`, indexed in base `m`.
    pub fn word_masses(&self, len: usize) -> Vec<f64> {
        let m = self.alphabet;
        match &self.kind {
            Kind::Chain(c) => {
                let k = c.order;
                if len <= k {
                    let span = m.pow((k - len) as u32);
                    return c
                        .stationary
                        .chunks(span)
                        .map(|ch| ch.iter().sum())
                        .collect();
                }
                let states = m.pow(k as u32);
                let mut masses = c.stationary.clone();
                for _ in k..len {
                    let mut next = vec![0.0; masses.len() * m];
                    for (i, &mass) in masses.iter().enumerate() {
                        if mass == 0.0 {
                            continue;
                        }
                        let t = i % states;
                        for a in 0..m {
                            next[i * m + a] = mass * c.kernel[t * m + a];
                        }
                    }
                    masses = next;
                }
                masses
            }
            Kind::Mixture(parts) => {
                let mut total = vec![0.0; m.pow(len as u32)];
                for (s, mu) in parts {
                    for (acc, x) in total.iter_mut().zip(mu.word_masses(len)) {
                        *acc += s * x;
                    }
                }
                total
            }
        }
    }

    /// Appends `n` symbols drawn from the measure.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<u8>) {
        match &self.kind {
            Kind::Chain(c) => {
                let m = self.alphabet;
                let k = c.order;
                let states = m.pow(k as u32);
                let t0 = draw(rng, &c.stationary);
                let first = Word::from_index(t0, m, k);
                out.extend_from_slice(&first.symbols()[..k.min(n)]);
                let mut t = t0;
                for _ in k.min(n)..n {
                    let a = draw(rng, &c.kernel[t * m..(t + 1) * m]);
                    out.push(a as u8);
                    t = (t * m + a) % states;
                }
            }
            Kind::Mixture(parts) => {
                let weights: Vec<f64> = parts.iter().map(|(s, _)| *s).collect();
                let i = draw(rng, &weights);
                parts[i].1.sample_into(rng, n, out);
            }
        }
    }

    pub fn sample_with(&self, rng: &mut ChaCha8Rng, n: usize) -> Word {
        let mut out = Vec::with_capacity(n);
        self.sample_into(rng, n, &mut out);
        Word::new(out)
    }

    /// Word of length `n` drawn from the measure; deterministic in `seed`.
    pub fn sample_word(&self, n: usize, seed: u64) -> Word {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
}

/// Per-cylinder range of `ln |T'|` at a fixed depth, used to bracket
/// Lyapunov exponents of many measures.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTable {
    depth: usize,
    alphabet: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    center: Vec<f64>,
}

impl LyapunovTable {
    /// Enumerates the `m^depth` cylinders; `|T'|` being monotone per branch,
    /// its extremes over a cylinder sit at the cylinder endpoints.
    pub fn new(map: &BranchMap, depth: usize) -> Result<Self> {
        let m = map.branch_count();
        if depth == 0 {
            return Err(invalid("Lyapunov depth must be at least 1"));
        }
        if (m as f64).powi(depth as i32) > (1u64 << 20) as f64 {
            return Err(Error::Budget(format!(
                "{m}^{depth} cylinders for the Lyapunov table"
            )));
        }
        let mut lower = Vec::with_capacity(m.pow(depth as u32));
        let mut upper = Vec::with_capacity(m.pow(depth as u32));
        let mut center = Vec::with_capacity(m.pow(depth as u32));
        for w in all_words(m, depth) {
            let spans = suffix_spans(map, w.symbols())?;
            let (lo, hi) =
                map.log_derivative_range(w.symbols()[0] as usize, spans[0].lo, spans[0].hi);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite log-derivative on cylinder {w}"
                )));
            }
            lower.push(lo);
            upper.push(hi);
            center.push(
                map.log_derivative(w.symbols()[0] as usize, spans[0].mid())
                    .clamp(lo, hi),
            );
        }
        Ok(LyapunovTable {
            depth,
            alphabet: m,
            lower,
            upper,
            center,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Bracket for `∫ ln|T'| dμ`.
    pub fn bracket(&self, mu: &MarkovMeasure) -> Bracket {
        self.bracket_from_masses(&mu.word_masses(self.depth))
    }

    /// Same, given the measure's masses at `depth()`.
    pub fn bracket_from_masses(&self, masses: &[f64]) -> Bracket {
        debug_assert_eq!(masses.len(), self.alphabet.pow(self.depth as u32));
        let mut lower = 0.0;
        let mut upper = 0.0;
        for ((&mass, &lo), &hi) in masses.iter().zip(&self.lower).zip(&self.upper) {
            lower += mass * lo;
            upper += mass * hi;
        }
        Bracket { lower, upper }
    }

    /// Point estimate of `λ` from the log-derivative at cylinder midpoints;
    /// always inside [`Self::bracket_from_masses`].
    pub fn estimate_from_masses(&self, masses: &[f64]) -> f64 {
        masses.iter().zip(&self.center).map(|(m, c)| m * c).sum()
    }
}

/// Default cylinder depth for Lyapunov tables: 1 for affine maps (exact),
/// otherwise the largest depth up to 10 with at most 4096 cylinders.
pub fn default_lyapunov_depth(map: &BranchMap) -> usize {
    if map.is_affine() {
        return 1;
    }
    let m = map.branch_count() as f64;
    (1..=10)
        .take_while(|&k| m.powi(k as i32) <= 4096.0)
        .last()
        .unwrap_or(1)
}

/// Bracket for the Lyapunov exponent `λ(μ) = ∫ g dμ`.
///
/// Exact (zero width) for affine maps at any depth.
pub fn lyapunov(map: &BranchMap, mu: &MarkovMeasure, depth: usize) -> Result<Bracket> {
    if mu.alphabet() != map.branch_count() {
        return Err(invalid("measure alphabet does not match the map"));
    }
    Ok(LyapunovTable::new(map, depth)?.bracket(mu))
}
