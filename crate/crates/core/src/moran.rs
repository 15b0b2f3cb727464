//! Moran constructions from two alternating measures.
//!
//! Stage `s` (0-based) draws blocks of length `l_s` from the μ-phase measure
//! when `s` is even and from the ν-phase measure when `s` is odd; it repeats
//! `N_s` times. Each stage keeps only *typical* blocks (Birkhoff average,
//! expansion rate and information all within `ε_s` of the phase values, and
//! never a constant word), and the concatenated measure `η` picks blocks
//! independently with weights `ρ_w = μ[w] / μ(kept)`.
//!
//! All lengths are symbol counts; diameters and radii are handled in log
//! space because the words involved run to millions of symbols.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dimension::{DimensionEstimate, ScaleRow};
use crate::error::{invalid, Error, Result};
use crate::interval_maps::{euclid, BranchMap};
use crate::measures::{default_lyapunov_depth, log_sum_exp, lyapunov, Bracket, MarkovMeasure};
use crate::potentials::Potential;
use crate::symbolic::{log_diameter, project, Word};

/// Margin for the dominance and tail ratios.
pub const DOMINANCE_MARGIN: f64 = 0.05;
/// Upper bound on the total schedule length.
pub const MAX_TOTAL_LENGTH: usize = 50_000_000;
/// Families are enumerated exhaustively up to this many candidate words.
pub const EXPLICIT_LIMIT: usize = 1 << 16;
/// Default number of sampled candidates per stage for large block lengths.
pub const DEFAULT_HARVEST_BUDGET: usize = 4000;
/// Symbols used when projecting a generated word to a coordinate.
pub const PROJECTION_DEPTH: usize = 64;

// n_{i-1}/n_i targets for the desk-scale multiplicity rule: the last two
// stages before the final odd one get RATIO_TARGET, earlier ones a factor
// RATIO_GROWTH more per stage, and a trailing ν-stage FINAL_EVEN_RATIO.
const RATIO_TARGET: f64 = 0.7 * DOMINANCE_MARGIN;
const RATIO_GROWTH: f64 = 2.5;
const FINAL_EVEN_RATIO: f64 = 0.5;

const MIN_HARVEST_SAMPLES: usize = 256;
const HARVEST_BATCH: usize = 32;
const HARVEST_ROUND: usize = 8;
const REPRESENTATIVES: usize = 32;
const MAX_REJECTIONS: usize = 100_000;
const WILSON_Z: f64 = 1.96;
// Partial blocks are summed exactly when at most this many completions exist.
const COMPLETION_LIMIT: usize = 256;
const MAX_NEIGHBOR_STEPS: usize = 64;
const DEFAULT_RADII: usize = 16;
const MIN_RADII: usize = 4;
const FLOOR_CHECK_LIMIT: usize = 4096;

/// Which of the two measures feeds a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Mu,
    Nu,
}

impl PhaseKind {
    pub fn of_stage(stage: usize) -> Self {
        if stage % 2 == 0 {
            PhaseKind::Mu
        } else {
            PhaseKind::Nu
        }
    }
}

/// Block lengths `l_s`, multiplicities `N_s`, tolerances `ε_s` and the mass
/// allowance `δ`. The flat block sequence `l*` repeats `l_s` exactly `N_s`
/// times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoranSchedule {
    lengths: Vec<usize>,
    multiplicities: Vec<usize>,
    epsilons: Vec<f64>,
    delta: f64,
    #[serde(skip)]
    block_ends: Vec<usize>,
    #[serde(skip)]
    stage_blocks: Vec<usize>,
}

impl MoranSchedule {
    pub fn new(
        lengths: Vec<usize>,
        multiplicities: Vec<usize>,
        epsilons: Vec<f64>,
        delta: f64,
    ) -> Result<Self> {
        let s = lengths.len();
        if s == 0 || multiplicities.len() != s || epsilons.len() != s {
            return Err(invalid(
                "lengths, multiplicities and epsilons need one entry per stage",
            ));
        }
        if lengths.iter().any(|&l| l < 2) {
            return Err(invalid(
                "block lengths must be at least 2 (length-1 blocks are constant)",
            ));
        }
        if multiplicities.contains(&0) {
            return Err(invalid("multiplicities must be positive"));
        }
        if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(invalid("epsilons must be positive"));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("epsilons must be strictly decreasing"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        let total: u128 = lengths
            .iter()
            .zip(&multiplicities)
            .map(|(&l, &n)| l as u128 * n as u128)
            .sum();
        if total > MAX_TOTAL_LENGTH as u128 {
            return Err(Error::Budget(format!(
                "total length {total} exceeds {MAX_TOTAL_LENGTH} symbols"
            )));
        }
        let mut block_ends = Vec::new();
        let mut stage_blocks = Vec::with_capacity(s);
        let mut end = 0;
        for (&l, &n) in lengths.iter().zip(&multiplicities) {
            for _ in 0..n {
                end += l;
                block_ends.push(end);
            }
            stage_blocks.push(block_ends.len());
        }
        Ok(MoranSchedule {
            lengths,
            multiplicities,
            epsilons,
            delta,
            block_ends,
            stage_blocks,
        })
    }

    pub fn stages(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn final_epsilon(&self) -> f64 {
        self.epsilons[self.stages() - 1]
    }

    /// Phase boundaries `n_s = Σ_{i≤s} l_i N_i`, one per stage.
    pub fn boundaries(&self) -> Vec<usize> {
        self.stage_blocks
            .iter()
            .map(|&b| self.block_ends[b - 1])
            .collect()
    }

    pub fn total_length(&self) -> usize {
        *self.block_ends.last().unwrap_or(&0)
    }

    pub fn block_count(&self) -> usize {
        self.block_ends.len()
    }

    /// Start of flat block `j` (0-based).
    pub fn block_start(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else {
            self.block_ends[j - 1]
        }
    }

    pub fn block_end(&self, j: usize) -> usize {
        self.block_ends[j]
    }

    /// Stage that flat block `j` belongs to.
    pub fn block_stage(&self, j: usize) -> usize {
        self.stage_blocks.partition_point(|&b| b <= j)
    }

    /// The flat sequence `l*`.
    pub fn relabeled_lengths(&self) -> Vec<usize> {
        (0..self.block_count())
            .map(|j| self.lengths[self.block_stage(j)])
            .collect()
    }

    /// `(J, r)`: `J` is the number of complete blocks within the first `n`
    /// symbols and `r` the number of complete stages among them.
    pub fn j_of_n(&self, n: usize) -> Result<(usize, usize)> {
        if n == 0 || n > self.total_length() {
            return Err(invalid(format!(
                "n = {n} outside 1..={}",
                self.total_length()
            )));
        }
        let j = self.block_ends.partition_point(|&e| e <= n);
        let r = self.stage_blocks.partition_point(|&b| b <= j);
        Ok((j, r))
    }

    /// Share of ν-phase symbols among the first `n_s` for every μ-phase
    /// stage `s` (0-based even).
    pub fn dominance_ratios(&self) -> Vec<f64> {
        let bounds = self.boundaries();
        (0..self.stages())
            .step_by(2)
            .map(|s| {
                let nu: usize = (1..s)
                    .step_by(2)
                    .map(|i| self.lengths[i] * self.multiplicities[i])
                    .sum();
                nu as f64 / bounds[s] as f64
            })
            .collect()
    }

    /// `l*_B / Σ_{i<B} l*_i` for the last block `B`.
    pub fn tail_ratio(&self) -> f64 {
        let last = *self.lengths.last().unwrap_or(&0);
        let before = self.total_length() - last;
        if before == 0 {
            f64::INFINITY
        } else {
            last as f64 / before as f64
        }
    }

    /// Checks that the dominance ratios decrease from the second μ-phase
    /// stage on, the last one stays below `margin`, and so does the tail
    /// ratio.
    pub fn check_ratios(&self, margin: f64) -> Result<()> {
        let dom = self.dominance_ratios();
        if dom.len() > 2 && dom[1..].windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid(format!(
                "dominance ratios {dom:?} are not decreasing"
            )));
        }
        if let Some(&last) = dom.last() {
            if last >= margin {
                return Err(invalid(format!(
                    "final dominance ratio {last:.4} not below {margin}"
                )));
            }
        }
        let tail = self.tail_ratio();
        if tail >= margin {
            return Err(invalid(format!("tail ratio {tail:.4} not below {margin}")));
        }
        Ok(())
    }
}

/// Schedule with `l_s = ⌈base·growth^s⌉`, `ε_s = eps0/2^s` (`s = 1..stages`)
/// and the smallest multiplicities that keep `n_{s-1}/n_s` under the
/// desk-scale targets, so both ratio checks pass with margin
/// [`DOMINANCE_MARGIN`].
pub fn build_schedule(
    stages: usize,
    base_length: usize,
    growth: f64,
    eps0: f64,
    delta: f64,
) -> Result<MoranSchedule> {
    if stages < 2 {
        return Err(invalid(
            "a schedule needs at least two stages (one per phase)",
        ));
    }
    if !(growth > 1.0 && growth.is_finite()) {
        return Err(invalid("growth must exceed 1"));
    }
    if base_length == 0 || !(eps0 > 0.0) {
        return Err(invalid("base length and eps0 must be positive"));
    }
    let lengths: Vec<usize> = (1..=stages)
        .map(|i| (base_length as f64 * growth.powi(i as i32)).ceil() as usize)
        .collect();
    let epsilons: Vec<f64> = (1..=stages).map(|i| eps0 / 2f64.powi(i as i32)).collect();
    // 1-based index of the last μ-phase stage.
    let last_odd = if stages % 2 == 1 { stages } else { stages - 1 };
    let mut multiplicities = vec![1usize];
    let mut n_prev = lengths[0] as f64;
    for i in 2..=stages {
        let l = lengths[i - 1] as f64;
        let t = if i <= last_odd {
            let k = (last_odd as i64 - 1 - i as i64).max(0);
            (RATIO_TARGET * RATIO_GROWTH.powi(k as i32)).min(0.5)
        } else {
            FINAL_EVEN_RATIO
        };
        let mut n = (n_prev * (1.0 - t) / (t * l) - 1e-9).ceil().max(1.0);
        if i == stages {
            // Tail ratio: the last block is under 5% of what precedes it.
            let tail_min = ((21.0 * l - n_prev) / l).floor() + 1.0;
            n = n.max(tail_min);
        }
        if n_prev + n * l > MAX_TOTAL_LENGTH as f64 {
            return Err(Error::Budget(format!(
                "dominance ratio at stage {i} needs {n} blocks of length {l}, beyond {MAX_TOTAL_LENGTH} symbols"
            )));
        }
        multiplicities.push(n as usize);
        n_prev += n * l;
    }
    let schedule = MoranSchedule::new(lengths, multiplicities, epsilons, delta)?;
    schedule.check_ratios(DOMINANCE_MARGIN)?;
    Ok(schedule)
}

/// Multiplicities `N_i = 2^{l_{i+2} + N_{i-1}}`, `N_0 = 1`, for as long as
/// they fit in 64 bits; `lengths[0]` is `l_1`.
pub fn doubly_exponential_multiplicities(lengths: &[usize]) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    let mut prev: u64 = 1;
    let mut i = 1;
    while i + 1 < lengths.len() {
        let exponent = lengths[i + 1] as u64 + prev;
        if exponent >= 64 {
            return Err(Error::Budget(format!("N_{i} = 2^{exponent} does not fit")));
        }
        prev = 1u64 << exponent;
        out.push(prev);
        i += 1;
    }
    Ok(out)
}

/// Values of one phase measure that the block filters test against.
#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub kind: PhaseKind,
    #[serde(skip)]
    pub measure: MarkovMeasure,
    pub entropy: f64,
    pub lyapunov: Bracket,
    pub phi_star: Vec<f64>,
}

impl Phase {
    pub fn new(
        kind: PhaseKind,
        map: &BranchMap,
        pot: &Potential,
        measure: &MarkovMeasure,
    ) -> Result<Self> {
        if measure.is_mixture() {
            return Err(invalid(
                "phase measures must be ergodic Markov measures, not mixtures",
            ));
        }
        if measure.alphabet() != map.branch_count() || pot.alphabet() != map.branch_count() {
            return Err(invalid("measure, potential and map alphabets differ"));
        }
        let lyap = lyapunov(map, measure, default_lyapunov_depth(map))?;
        Ok(Phase {
            kind,
            measure: measure.clone(),
            entropy: measure.entropy(),
            lyapunov: lyap,
            phi_star: pot.phi_star(measure)?,
        })
    }

    /// `h / λ` with `λ` at its bracket midpoint.
    pub fn dimension_ratio(&self) -> f64 {
        self.entropy / self.lyapunov.midpoint()
    }
}

#[derive(Debug, Clone)]
enum Members {
    Explicit {
        words: Vec<Vec<u8>>,
        log_masses: Vec<f64>,
        index: HashMap<Vec<u8>, usize>,
        sampler: WeightedIndex<f64>,
    },
    Implicit {
        drawn: usize,
        accepted: usize,
        representatives: Vec<Vec<u8>>,
    },
}

/// The kept blocks `Σ(s)` of one stage with their masses.
///
/// Small families are enumerated. Large ones are defined by the filter
/// itself: the kept mass is estimated from the acceptance rate of sampled
/// candidates, and blocks are drawn by rejection, which realises the
/// normalised weights `ρ_w` exactly.
#[derive(Debug, Clone)]
pub struct BlockFamily {
    stage: usize,
    length: usize,
    epsilon: f64,
    phase: Phase,
    pot: Potential,
    g: Potential,
    log_total_mass: f64,
    members: Members,
}

/// One kept word with its measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordMass {
    pub word: Word,
    pub mass: f64,
}

impl BlockFamily {
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    /// `μ(Σ(s))`, estimated for sampled families.
    pub fn total_mass(&self) -> f64 {
        self.log_total_mass.exp()
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.members, Members::Explicit { .. })
    }

    /// `(drawn, accepted)` candidate counts of a sampled family.
    pub fn acceptance(&self) -> Option<(usize, usize)> {
        match &self.members {
            Members::Implicit {
                drawn, accepted, ..
            } => Some((*drawn, *accepted)),
            Members::Explicit { .. } => None,
        }
    }

    /// Kept words with their `μ`-masses: all of them for enumerated
    /// families, the stored representatives otherwise.
    pub fn words(&self) -> Vec<WordMass> {
        let list: Vec<(&Vec<u8>, f64)> = match &self.members {
            Members::Explicit {
                words, log_masses, ..
            } => words
                .iter()
                .zip(log_masses.iter().map(|l| l.exp()))
                .collect(),
            Members::Implicit {
                representatives, ..
            } => representatives
                .iter()
                .map(|w| (w, self.phase.measure.log_cylinder_mass(w).exp()))
                .collect(),
        };
        list.into_iter()
            .map(|(w, mass)| WordMass {
                word: Word::new(w.clone()),
                mass,
            })
            .collect()
    }

    /// `|Σ_w ρ_w − 1|` for enumerated families; sampled families are
    /// normalised by construction and report 0.
    pub fn normalization_error(&self) -> f64 {
        match &self.members {
            Members::Explicit { log_masses, .. } => {
                let s: f64 = log_masses
                    .iter()
                    .map(|l| (l - self.log_total_mass).exp())
                    .sum();
                (s - 1.0).abs()
            }
            Members::Implicit { .. } => 0.0,
        }
    }

    /// `ln μ[w]` if `w` passes the typicality filter of this stage.
    fn typical_log_mass(&self, w: &[u8]) -> Result<Option<f64>> {
        if w.len() != self.length || w.iter().all(|&a| a == w[0]) {
            return Ok(None);
        }
        let l = self.length as f64;
        let lm = self.phase.measure.log_cylinder_mass(w);
        if !lm.is_finite() || (-lm / l - self.phase.entropy).abs() >= self.epsilon {
            return Ok(None);
        }
        let rate = self.g.evaluate(w)?[0] / l;
        if (rate - self.phase.lyapunov.midpoint()).abs() >= self.epsilon {
            return Ok(None);
        }
        let phi = self.pot.evaluate(w)?;
        if phi
            .iter()
            .zip(&self.phase.phi_star)
            .any(|(v, t)| (v / l - t).abs() >= self.epsilon)
        {
            return Ok(None);
        }
        Ok(Some(lm))
    }

    /// `ln ρ_w` for a complete block; `-∞` outside the family.
    pub fn log_rho(&self, w: &[u8]) -> Result<f64> {
        match &self.members {
            Members::Explicit {
                log_masses, index, ..
            } => Ok(index
                .get(w)
                .map_or(f64::NEG_INFINITY, |&i| log_masses[i] - self.log_total_mass)),
            Members::Implicit { .. } => Ok(self
                .typical_log_mass(w)?
                .map_or(f64::NEG_INFINITY, |lm| lm - self.log_total_mass)),
        }
    }

    /// `ln Σ ρ_w` over kept blocks starting with `prefix`. Exact for
    /// enumerated families and for short completions; otherwise the upper
    /// bound `μ[prefix]/μ(Σ(s))`.
    pub fn log_rho_prefix(&self, prefix: &[u8]) -> Result<f64> {
        if prefix.len() >= self.length {
            return self.log_rho(&prefix[..self.length]);
        }
        if prefix.is_empty() {
            return Ok(0.0);
        }
        match &self.members {
            Members::Explicit {
                words, log_masses, ..
            } => {
                let logs: Vec<f64> = words
                    .iter()
                    .zip(log_masses)
                    .filter(|(w, _)| w.starts_with(prefix))
                    .map(|(_, l)| l - self.log_total_mass)
                    .collect();
                Ok(log_sum_exp(&logs))
            }
            Members::Implicit { .. } => {
                let m = self.phase.measure.alphabet();
                let free = self.length - prefix.len();
                let completions = (m as f64).powi(free as i32);
                if completions > COMPLETION_LIMIT as f64 {
                    let lm = self.phase.measure.log_cylinder_mass(prefix);
                    return Ok(lm - self.log_total_mass);
                }
                let mut buf = prefix.to_vec();
                let mut logs = Vec::with_capacity(completions as usize);
                for idx in 0..completions as usize {
                    buf.truncate(prefix.len());
                    buf.extend_from_slice(Word::from_index(idx, m, free).symbols());
                    logs.push(self.log_rho(&buf)?);
                }
                Ok(log_sum_exp(&logs))
            }
        }
    }

    /// Appends one block drawn with probability `ρ_w`.
    pub fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) -> Result<()> {
        match &self.members {
            Members::Explicit { words, sampler, .. } => {
                out.extend_from_slice(&words[sampler.sample(rng)]);
                Ok(())
            }
            Members::Implicit { .. } => {
                let start = out.len();
                for _ in 0..MAX_REJECTIONS {
                    self.phase.measure.sample_into(rng, self.length, out);
                    if self.typical_log_mass(&out[start..])?.is_some() {
                        return Ok(());
                    }
                    out.truncate(start);
                }
                Err(Error::Budget(format!(
                    "no typical block of stage {} in {MAX_REJECTIONS} draws",
                    self.stage + 1
                )))
            }
        }
    }
}

fn wilson_bounds(accepted: usize, drawn: usize) -> (f64, f64) {
    let n = drawn as f64;
    let p = accepted as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (center - half, center + half)
}

/// Harvest settings shared by all stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestOptions {
    pub seed: u64,
    /// Maximum number of sampled candidates per stage.
    pub budget: usize,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            seed: 0,
            budget: DEFAULT_HARVEST_BUDGET,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn harvest(
    pot: &Potential,
    g: &Potential,
    phase: &Phase,
    stage: usize,
    length: usize,
    epsilon: f64,
    delta: f64,
    options: HarvestOptions,
) -> Result<BlockFamily> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if length < 2 {
        return Err(invalid("block length must be at least 2"));
    }
    let m = phase.measure.alphabet();
    let mut family = BlockFamily {
        stage,
        length,
        epsilon,
        phase: phase.clone(),
        pot: pot.clone(),
        g: g.clone(),
        log_total_mass: 0.0,
        members: Members::Implicit {
            drawn: 0,
            accepted: 0,
            representatives: Vec::new(),
        },
    };
    let required = 1.0 - delta;
    let candidates = (m as f64).powi(length as i32);
    if candidates <= EXPLICIT_LIMIT as f64 {
        let kept: Vec<(Vec<u8>, f64)> = (0..candidates as usize)
            .into_par_iter()
            .map(|idx| {
                let w = Word::from_index(idx, m, length).into_symbols();
                Ok(family.typical_log_mass(&w)?.map(|lm| (w, lm)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let log_masses: Vec<f64> = kept.iter().map(|(_, l)| *l).collect();
        let log_total = log_sum_exp(&log_masses);
        let achieved = log_total.exp();
        if kept.is_empty() || achieved < required {
            return Err(Error::Harvest {
                stage: stage + 1,
                achieved,
                required,
            });
        }
        let weights: Vec<f64> = log_masses.iter().map(|l| (l - log_total).exp()).collect();
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::Numeric(format!("block weights: {e}")))?;
        let words: Vec<Vec<u8>> = kept.into_iter().map(|(w, _)| w).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        family.log_total_mass = log_total;
        family.members = Members::Explicit {
            words,
            log_masses,
            index,
            sampler,
        };
        return Ok(family);
    }

    let budget = options.budget.max(MIN_HARVEST_SAMPLES);
    let mut drawn = 0;
    let mut accepted = 0;
    let mut representatives: Vec<Vec<u8>> = Vec::new();
    let mut seen = HashSet::new();
    let mut batch = 0u64;
    loop {
        let results: Vec<(usize, Vec<Vec<u8>>)> = (batch..batch + HARVEST_ROUND as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(((stage as u64) << 40) | b);
                let mut buf = Vec::with_capacity(length);
                let mut ok = 0;
                let mut reps = Vec::new();
                for _ in 0..HARVEST_BATCH {
                    buf.clear();
                    phase.measure.sample_into(&mut rng, length, &mut buf);
                    if family.typical_log_mass(&buf)?.is_some() {
                        ok += 1;
                        if reps.len() < 2 {
                            reps.push(buf.clone());
                        }
                    }
                }
                Ok((ok, reps))
            })
            .collect::<Result<Vec<_>>>()?;
        batch += HARVEST_ROUND as u64;
        for (ok, reps) in results {
            drawn += HARVEST_BATCH;
            accepted += ok;
            for w in reps {
                if representatives.len() < REPRESENTATIVES && seen.insert(w.clone()) {
                    representatives.push(w);
                }
            }
        }
        let (lower, upper) = wilson_bounds(accepted, drawn);
        let rate = accepted as f64 / drawn as f64;
        if lower >= required || (drawn >= budget && rate >= required) {
            break;
        }
        if upper < required || drawn >= budget {
            return Err(Error::Harvest {
                stage: stage + 1,
                achieved: rate,
                required,
            });
        }
    }
    family.log_total_mass = (accepted as f64 / drawn as f64).ln();
    family.members = Members::Implicit {
        drawn,
        accepted,
        representatives,
    };
    Ok(family)
}

/// Kept blocks of length `l` for a single measure: words whose Birkhoff
/// average, expansion rate and information per symbol are all within `eps`
/// of the values of `mu`, excluding constant words.
#[allow(clippy::too_many_arguments)]
pub fn harvest_blocks(
    map: &BranchMap,
    pot: &Potential,
    mu: &MarkovMeasure,
    l: usize,
    eps: f64,
    delta: f64,
    seed: u64,
    budget: usize,
) -> Result<BlockFamily> {
    let phase = Phase::new(PhaseKind::Mu, map, pot, mu)?;
    let g = Potential::geometric(map)?;
    harvest(
        pot,
        &g,
        &phase,
        0,
        l,
        eps,
        delta,
        HarvestOptions { seed, budget },
    )
}

/// The measure `η` on the Moran set: blocks drawn independently per flat
/// position with the weights of their stage's family.
#[derive(Debug, Clone)]
pub struct ConcatenatedMeasure {
    schedule: MoranSchedule,
    families: Vec<BlockFamily>,
    map: BranchMap,
    pot: Potential,
    phases: [Phase; 2],
    g_norm: f64,
    // Σ_{i<J} l*_i (λ_i + 4ε_i) for J = 0..=B, with λ_i the upper bracket.
    rho_prefix: Vec<f64>,
}

/// Birkhoff data at one phase boundary `n_s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    /// 1-based stage number.
    pub stage: usize,
    pub boundary: usize,
    pub phase: PhaseKind,
    pub average: Vec<f64>,
    /// `Φ*` of the stage's phase measure.
    pub target: Vec<f64>,
    pub deviation: f64,
    /// Length-weighted mixture of the phase targets up to this boundary.
    pub predicted: Vec<f64>,
    pub residual: f64,
    /// `Σ_{i≤s} N_i (3 l_i ε_i + C) / n_s`.
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationProfile {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub final_epsilon: f64,
    pub rows: Vec<BoundaryRow>,
}

impl OscillationProfile {
    /// Largest distance between boundary averages, ignoring the first
    /// boundary (a single block).
    pub fn oscillation(&self) -> f64 {
        let rows = if self.rows.len() > 1 {
            &self.rows[1..]
        } else {
            &self.rows[..]
        };
        let mut best: f64 = 0.0;
        for a in rows {
            for b in rows {
                best = best.max(euclid(&a.average, &b.average));
            }
        }
        best
    }

    /// `|β − α|(1 − margin) − 2ε_final`.
    pub fn required_oscillation(&self, margin: f64) -> f64 {
        euclid(&self.alpha, &self.beta) * (1.0 - margin) - 2.0 * self.final_epsilon
    }

    /// Every boundary average within its error budget of the predicted
    /// mixture.
    pub fn within_budget(&self) -> bool {
        self.rows.iter().all(|r| r.residual <= r.budget)
    }

    /// CSV of this profile alone; see [`write_profiles_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_profiles_csv(out, std::slice::from_ref(self))
    }
}

/// CSV with one row per boundary of each profile, `point` indexing the
/// profile. Vector entries are `;`-separated.
pub fn write_profiles_csv<W: Write>(out: W, profiles: &[OscillationProfile]) -> Result<()> {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "point",
        "stage",
        "boundary",
        "phase",
        "average",
        "target",
        "deviation",
        "predicted",
        "residual",
        "budget",
    ])?;
    for (k, p) in profiles.iter().enumerate() {
        for r in &p.rows {
            let phase = match r.phase {
                PhaseKind::Mu => "mu",
                PhaseKind::Nu => "nu",
            };
            w.write_record([
                k.to_string(),
                r.stage.to_string(),
                r.boundary.to_string(),
                phase.to_string(),
                join(&r.average),
                join(&r.target),
                r.deviation.to_string(),
                join(&r.predicted),
                r.residual.to_string(),
                r.budget.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One radius of a local-dimension estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalRow {
    pub log_radius: f64,
    /// Cylinder depth `n` from `e^{-ρ(n+1)} ≤ r < e^{-ρ(n)}`.
    pub depth: usize,
    /// Depth-`n` cylinders of the Moran set meeting the ball.
    pub cylinders: usize,
    pub log_mass: f64,
}

/// Regression of `ln η(B(x,r))` on `ln r`. In the estimate's table the
/// `scale` and `x` columns hold `ln r` and `value` the cylinder count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalDimension {
    pub estimate: DimensionEstimate,
    pub rows: Vec<LocalRow>,
    /// `min(h/λ)` over the two phases.
    pub floor: f64,
    pub max_cylinders: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub stage: usize,
    pub phase: PhaseKind,
    pub length: usize,
    pub multiplicity: usize,
    pub epsilon: f64,
    pub total_mass: f64,
    pub explicit: bool,
    pub drawn: Option<usize>,
    pub accepted: Option<usize>,
    pub words: Vec<WordMass>,
}

/// Serializable description of a construction.
#[derive(Debug, Clone, Serialize)]
pub struct MoranSummary {
    pub schedule: MoranSchedule,
    pub boundaries: Vec<usize>,
    pub total_length: usize,
    pub dominance_ratios: Vec<f64>,
    pub tail_ratio: f64,
    pub phases: Vec<Phase>,
    pub g_norm: f64,
    pub families: Vec<FamilySummary>,
}

impl ConcatenatedMeasure {
    /// Harvests every stage of `schedule`, μ-phase stages from `mu` and
    /// ν-phase stages from `nu`.
    pub fn build(
        map: &BranchMap,
        pot: &Potential,
        mu: &MarkovMeasure,
        nu: &MarkovMeasure,
        schedule: MoranSchedule,
        options: HarvestOptions,
    ) -> Result<Self> {
        let g = Potential::geometric(map)?;
        let phases = [
            Phase::new(PhaseKind::Mu, map, pot, mu)?,
            Phase::new(PhaseKind::Nu, map, pot, nu)?,
        ];
        let g_norm = map.sup_log_derivative();
        if !g_norm.is_finite() {
            return Err(Error::Unsupported("unbounded expansion rate".into()));
        }
        let families = (0..schedule.stages())
            .map(|s| {
                harvest(
                    pot,
                    &g,
                    &phases[s % 2],
                    s,
                    schedule.lengths[s],
                    schedule.epsilons[s],
                    schedule.delta,
                    options,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rho_prefix = Vec::with_capacity(schedule.block_count() + 1);
        rho_prefix.push(0.0);
        for j in 0..schedule.block_count() {
            let s = schedule.block_stage(j);
            let step = schedule.lengths[s] as f64
                * (phases[s % 2].lyapunov.upper + 4.0 * schedule.epsilons[s]);
            rho_prefix.push(rho_prefix[j] + step);
        }
        Ok(ConcatenatedMeasure {
            schedule,
            families,
            map: map.clone(),
            pot: pot.clone(),
            phases,
            g_norm,
            rho_prefix,
        })
    }

    pub fn schedule(&self) -> &MoranSchedule {
        &self.schedule
    }

    pub fn families(&self) -> &[BlockFamily] {
        &self.families
    }

    pub fn map(&self) -> &BranchMap {
        &self.map
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn phases(&self) -> &[Phase; 2] {
        &self.phases
    }

    /// Level-1 bound `sup ln|T'|` used for the incomplete block in `ρ(n)`.
    pub fn g_norm(&self) -> f64 {
        self.g_norm
    }

    /// `min(h/λ)` over the two phases.
    pub fn dimension_floor(&self) -> f64 {
        self.phases[0]
            .dimension_ratio()
            .min(self.phases[1].dimension_ratio())
    }

    // ρ as a function of the number J ≤ B−1 of complete blocks.
    fn rho_blocks(&self, j: usize) -> f64 {
        let eps = if j == 0 {
            self.schedule.epsilons[0]
        } else {
            self.schedule.epsilons[self.schedule.block_stage(j - 1)]
        };
        let next = self.schedule.lengths[self.schedule.block_stage(j)] as f64;
        self.rho_prefix[j] + next * (self.g_norm + eps)
    }

    /// `ρ(n) = Σ_{i≤J} l*_i(λ_i + 4ε_i) + l*_{J+1}(‖g‖ + ε_J)` with
    /// `J = J(n)`, capped at `B − 1` at the end of the schedule.
    pub fn rho_bound(&self, n: usize) -> Result<f64> {
        let (j, _) = self.schedule.j_of_n(n)?;
        Ok(self.rho_blocks(j.min(self.schedule.block_count() - 1)))
    }

    /// Prefix of length `n` of a word drawn from `η`; deterministic in `seed`.
    pub fn generate_point(&self, seed: u64, n: usize) -> Result<Word> {
        if n > self.schedule.total_length() {
            return Err(invalid(format!(
                "n = {n} exceeds the schedule length {}",
                self.schedule.total_length()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n + self.schedule.lengths[self.schedule.stages() - 1]);
        let mut j = 0;
        while out.len() < n {
            self.families[self.schedule.block_stage(j)].draw(&mut rng, &mut out)?;
            j += 1;
        }
        out.truncate(n);
        Ok(Word::new(out))
    }

    /// Coordinate `Π(w)` from the first [`PROJECTION_DEPTH`] symbols.
    pub fn coordinate(&self, w: &Word) -> Result<f64> {
        project(&self.map, &w.prefix(w.len().min(PROJECTION_DEPTH)))
    }

    fn check_word(&self, w: &[u8]) -> Result<()> {
        if w.len() > self.schedule.total_length() {
            return Err(invalid("word longer than the schedule"));
        }
        let m = self.map.branch_count();
        if let Some(&a) = w.iter().find(|&&a| a as usize >= m) {
            return Err(invalid(format!("symbol {} outside the alphabet", a + 1)));
        }
        Ok(())
    }

    /// `ln η[w]`: the product of block weights, a partial last block
    /// contributing the weight of its kept completions; `-∞` off the Moran
    /// set.
    pub fn eta_mass(&self, w: &[u8]) -> Result<f64> {
        self.check_word(w)?;
        let mut total = 0.0;
        let mut j = 0;
        while self.schedule.block_start(j) < w.len() {
            let start = self.schedule.block_start(j);
            let end = self.schedule.block_end(j).min(w.len());
            let family = &self.families[self.schedule.block_stage(j)];
            total += if end == self.schedule.block_end(j) {
                family.log_rho(&w[start..end])?
            } else {
                family.log_rho_prefix(&w[start..end])?
            };
            if total == f64::NEG_INFINITY {
                break;
            }
            j += 1;
        }
        Ok(total)
    }

    /// `max_n (−ln D_n(w) − ρ(n))`; non-positive when the diameter floor
    /// holds along `w`.
    pub fn diameter_floor_excess(&self, w: &[u8]) -> Result<f64> {
        self.check_word(w)?;
        let mut worst = f64::NEG_INFINITY;
        if self.map.is_affine() {
            let mut log_d = 0.0;
            for (k, &a) in w.iter().enumerate() {
                log_d += self.map.domain(a as usize).length().ln();
                worst = worst.max(-log_d - self.rho_bound(k + 1)?);
            }
        } else {
            if w.len() > FLOOR_CHECK_LIMIT {
                return Err(Error::Budget(format!(
                    "diameter checks on nonlinear maps are limited to {FLOOR_CHECK_LIMIT} symbols"
                )));
            }
            for n in 1..=w.len() {
                worst = worst.max(-log_diameter(&self.map, &w[..n])? - self.rho_bound(n)?);
            }
        }
        Ok(worst)
    }

    /// Birkhoff averages of the potential at every phase boundary within
    /// `w`, against the phase targets and the proof's error budget.
    pub fn oscillation_profile(&self, w: &[u8]) -> Result<OscillationProfile> {
        self.check_word(w)?;
        let bounds = self.schedule.boundaries();
        if w.len() < bounds[0] {
            return Err(invalid(format!(
                "word of length {} ends before the first phase boundary {}",
                w.len(),
                bounds[0]
            )));
        }
        let c = self
            .pot
            .constant()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let d = self.pot.dim();
        let mut weighted = vec![0.0; d];
        let mut slack = 0.0;
        let mut rows = Vec::new();
        for (s, &n) in bounds.iter().enumerate() {
            let l = self.schedule.lengths[s] as f64;
            let count = self.schedule.multiplicities[s] as f64;
            let phase = &self.phases[s % 2];
            for (acc, t) in weighted.iter_mut().zip(&phase.phi_star) {
                *acc += l * count * t;
            }
            slack += count * (3.0 * l * self.schedule.epsilons[s] + c);
            if n > w.len() {
                break;
            }
            let nf = n as f64;
            let average: Vec<f64> = self.pot.evaluate_on(w, n)?.iter().map(|v| v / nf).collect();
            let predicted: Vec<f64> = weighted.iter().map(|v| v / nf).collect();
            rows.push(BoundaryRow {
                stage: s + 1,
                boundary: n,
                phase: phase.kind,
                deviation: euclid(&average, &phase.phi_star),
                residual: euclid(&average, &predicted),
                target: phase.phi_star.clone(),
                predicted,
                average,
                budget: slack / nf,
            });
        }
        Ok(OscillationProfile {
            alpha: self.phases[0].phi_star.clone(),
            beta: self.phases[1].phi_star.clone(),
            final_epsilon: self.schedule.final_epsilon(),
            rows,
        })
    }

    /// `ln r` values spread evenly over the scales of the last two stages,
    /// stopping one block short of the end.
    pub fn default_log_radii(&self) -> Vec<f64> {
        let b = self.schedule.block_count();
        let s = self.schedule.stages();
        let mut lo = if s >= 3 {
            self.schedule.stage_blocks[s - 3]
        } else {
            0
        };
        if lo + 1 >= b {
            lo = 0;
        }
        let hi = b.saturating_sub(1);
        let (t0, t1) = (self.rho_blocks(lo), self.rho_blocks(hi));
        (1..=DEFAULT_RADII)
            .map(|k| -(t0 + (t1 - t0) * k as f64 / DEFAULT_RADII as f64))
            .collect()
    }

    /// Local dimension of `η` at the point coded by the full generated word
    /// `w`: for each radius the ball `B(x, r)` is covered by the depth-`n`
    /// cylinders of the Moran set that meet it, found by walking
    /// lexicographic neighbours, and `ln η(B)` is regressed on `ln r`.
    ///
    /// Needs an affine map with increasing branches. Gaps between
    /// neighbouring cylinders are counted only at the first differing
    /// symbol, which can only over-count the ball's mass.
    pub fn local_dimension(&self, w: &[u8], log_radii: Option<&[f64]>) -> Result<LocalDimension> {
        if !self.map.is_affine() || !self.map.all_increasing() {
            return Err(Error::Unsupported(
                "local dimension needs an affine map with increasing branches".into(),
            ));
        }
        self.check_word(w)?;
        if w.len() != self.schedule.total_length() {
            return Err(invalid(
                "local dimension needs a word covering the whole schedule",
            ));
        }
        let defaults;
        let log_radii = match log_radii {
            Some(r) => r,
            None => {
                defaults = self.default_log_radii();
                &defaults
            }
        };
        let ctx = PointContext::new(self, w)?;
        let b = self.schedule.block_count();
        let rho: Vec<f64> = (0..b).map(|j| self.rho_blocks(j)).collect();
        let mut rows = Vec::new();
        for &log_r in log_radii {
            let t = -log_r;
            let below = rho.partition_point(|&v| v < t);
            if below == 0 || below > b - 1 {
                continue;
            }
            let depth = self.schedule.block_end(below - 1) - 1;
            let (cylinders, log_mass) = ctx.ball_mass(depth, log_r)?;
            rows.push(LocalRow {
                log_radius: log_r,
                depth,
                cylinders,
                log_mass,
            });
        }
        if rows.len() < MIN_RADII {
            return Err(Error::Estimation(format!(
                "{} usable radii, at least {MIN_RADII} needed",
                rows.len()
            )));
        }
        let table = rows
            .iter()
            .map(|r| ScaleRow {
                scale: r.log_radius,
                value: r.cylinders as f64,
                x: r.log_radius,
                y: r.log_mass,
            })
            .collect();
        let estimate = DimensionEstimate::fit(table)?;
        let max_cylinders = rows.iter().map(|r| r.cylinders).max().unwrap_or(0);
        Ok(LocalDimension {
            estimate,
            rows,
            floor: self.dimension_floor(),
            max_cylinders,
        })
    }

    pub fn summary(&self, max_words: usize) -> MoranSummary {
        let families = self
            .families
            .iter()
            .map(|f| {
                let mut words = f.words();
                words.truncate(max_words);
                FamilySummary {
                    stage: f.stage + 1,
                    phase: f.phase.kind,
                    length: f.length,
                    multiplicity: self.schedule.multiplicities[f.stage],
                    epsilon: f.epsilon,
                    total_mass: f.total_mass(),
                    explicit: f.is_explicit(),
                    drawn: f.acceptance().map(|a| a.0),
                    accepted: f.acceptance().map(|a| a.1),
                    words,
                }
            })
            .collect();
        MoranSummary {
            boundaries: self.schedule.boundaries(),
            total_length: self.schedule.total_length(),
            dominance_ratios: self.schedule.dominance_ratios(),
            tail_ratio: self.schedule.tail_ratio(),
            schedule: self.schedule.clone(),
            phases: self.phases.to_vec(),
            g_norm: self.g_norm,
            families,
        }
    }
}

/// CSV of generated points: digit string and coordinate.
pub fn write_points_csv<W: Write>(out: W, points: &[(Word, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["word", "x"])?;
    for (word, x) in points {
        w.write_record([word.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A word `w[..keep]` followed by runs `(digit, length)`; lexicographic
/// neighbours of a long word differ from it only in such a tail.
#[derive(Debug, Clone, PartialEq)]
struct SparseWord {
    keep: usize,
    runs: Vec<(u8, usize)>,
}

impl SparseWord {
    fn len(&self) -> usize {
        self.keep + self.runs.iter().map(|r| r.1).sum::<usize>()
    }

    fn push_run(runs: &mut Vec<(u8, usize)>, digit: u8, len: usize) {
        if len == 0 {
            return;
        }
        match runs.last_mut() {
            Some(last) if last.0 == digit => last.1 += len,
            _ => runs.push((digit, len)),
        }
    }

    /// Lexicographic successor (`up`) or predecessor in `{0..m-1}^n`, with
    /// the position that changed and its previous digit.
    fn step(&self, w: &[u8], m: usize, up: bool) -> Option<(SparseWord, usize, u8)> {
        let (top, bottom) = if up {
            (m as u8 - 1, 0)
        } else {
            (0, m as u8 - 1)
        };
        let mut runs = self.runs.clone();
        let mut end = self.len();
        let mut reset = 0;
        while let Some((d, len)) = runs.pop() {
            end -= len;
            if d == top {
                reset += len;
                continue;
            }
            let k = end + len - 1;
            Self::push_run(&mut runs, d, len - 1);
            Self::push_run(&mut runs, if up { d + 1 } else { d - 1 }, 1);
            Self::push_run(&mut runs, bottom, reset);
            return Some((
                SparseWord {
                    keep: self.keep,
                    runs,
                },
                k,
                d,
            ));
        }
        let k = (0..self.keep).rev().find(|&i| w[i] != top)?;
        let d = w[k];
        let mut runs = Vec::new();
        Self::push_run(&mut runs, if up { d + 1 } else { d - 1 }, 1);
        Self::push_run(&mut runs, bottom, self.len() - k - 1);
        Some((SparseWord { keep: k, runs }, k, d))
    }

    fn materialize(&self, w: &[u8], start: usize, end: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(end - start);
        if start < self.keep {
            out.extend_from_slice(&w[start..end.min(self.keep)]);
        }
        let mut pos = self.keep;
        for &(d, len) in &self.runs {
            let (a, b) = (pos.max(start), (pos + len).min(end));
            if a < b {
                out.extend(std::iter::repeat_n(d, b - a));
            }
            pos += len;
            if pos >= end {
                break;
            }
        }
        out
    }
}

/// Per-point tables for the neighbour walk: block-level prefix sums of
/// `ln D` and `ln ρ` along the generated word.
struct PointContext<'a> {
    cm: &'a ConcatenatedMeasure,
    w: &'a [u8],
    log_len: Vec<f64>,
    gap: Vec<f64>,
    block_log_d: Vec<f64>,
    block_log_rho: Vec<f64>,
}

impl<'a> PointContext<'a> {
    fn new(cm: &'a ConcatenatedMeasure, w: &'a [u8]) -> Result<Self> {
        let m = cm.map.branch_count();
        let doms = cm.map.domains();
        let log_len: Vec<f64> = doms.iter().map(|d| d.length().ln()).collect();
        let gap: Vec<f64> = (0..m.saturating_sub(1))
            .map(|a| doms[a + 1].lo - doms[a].hi)
            .collect();
        let b = cm.schedule.block_count();
        let mut block_log_d = Vec::with_capacity(b + 1);
        let mut block_log_rho = Vec::with_capacity(b + 1);
        block_log_d.push(0.0);
        block_log_rho.push(0.0);
        for j in 0..b {
            let block = &w[cm.schedule.block_start(j)..cm.schedule.block_end(j)];
            let d: f64 = block.iter().map(|&a| log_len[a as usize]).sum();
            let r = cm.families[cm.schedule.block_stage(j)].log_rho(block)?;
            block_log_d.push(block_log_d[j] + d);
            block_log_rho.push(block_log_rho[j] + r);
        }
        Ok(PointContext {
            cm,
            w,
            log_len,
            gap,
            block_log_d,
            block_log_rho,
        })
    }

    fn blocks_within(&self, k: usize) -> usize {
        self.cm.schedule.block_ends.partition_point(|&e| e <= k)
    }

    // ln D of w[..k].
    fn log_d_prefix(&self, k: usize) -> f64 {
        let j = self.blocks_within(k);
        let start = self.cm.schedule.block_start(j);
        self.block_log_d[j]
            + self.w[start..k]
                .iter()
                .map(|&a| self.log_len[a as usize])
                .sum::<f64>()
    }

    // ln D of the first `upto` symbols of a sparse word.
    fn log_d(&self, sp: &SparseWord, upto: usize) -> f64 {
        if upto <= sp.keep {
            return self.log_d_prefix(upto);
        }
        let mut total = self.log_d_prefix(sp.keep);
        let mut pos = sp.keep;
        for &(d, len) in &sp.runs {
            let take = len.min(upto - pos);
            total += take as f64 * self.log_len[d as usize];
            pos += take;
            if pos >= upto {
                break;
            }
        }
        total
    }

    fn log_eta(&self, sp: &SparseWord) -> Result<f64> {
        let sched = &self.cm.schedule;
        let n = sp.len();
        // A run covering a whole block within depth n makes it constant.
        let mut pos = sp.keep;
        for &(_, len) in &sp.runs {
            let j = if pos == 0 {
                0
            } else {
                sched.block_ends.partition_point(|&e| e < pos) + 1
            };
            if j < sched.block_count() && sched.block_start(j) >= pos {
                let end = sched.block_end(j);
                if end <= pos + len && end <= n {
                    return Ok(f64::NEG_INFINITY);
                }
            }
            pos += len;
        }
        let mut j = self.blocks_within(sp.keep);
        let mut total = self.block_log_rho[j];
        while total > f64::NEG_INFINITY && j < sched.block_count() && sched.block_start(j) < n {
            let start = sched.block_start(j);
            let end = sched.block_end(j).min(n);
            let seg = sp.materialize(self.w, start, end);
            let family = &self.cm.families[sched.block_stage(j)];
            total += if end == sched.block_end(j) {
                family.log_rho(&seg)?
            } else {
                family.log_rho_prefix(&seg)?
            };
            j += 1;
        }
        Ok(total)
    }

    /// Number of Moran cylinders of depth `n` meeting `B(x, r)` and the log
    /// of their total mass.
    fn ball_mass(&self, n: usize, log_r: f64) -> Result<(usize, f64)> {
        let map = &self.cm.map;
        let m = map.branch_count();
        // Distances from x to the left and right ends of its own cylinder,
        // as fractions of the cylinder, from the symbols after n.
        let tail = &self.w[n..(n + PROJECTION_DEPTH).min(self.w.len())];
        let (mut left, mut right) = (0.5, 0.5);
        for &a in tail.iter().rev() {
            let d = map.domain(a as usize);
            left = d.lo + d.length() * left;
            right = (1.0 - d.hi) + d.length() * right;
        }
        let own = SparseWord {
            keep: n,
            runs: Vec::new(),
        };
        let own_log_d = self.log_d(&own, n);
        let mut logs = vec![self.log_eta(&own)?];
        for (up, frac) in [(true, right), (false, left)] {
            // Distance from x to the near edge of the next neighbour, in units of r.
            let mut reach = frac * (own_log_d - log_r).exp();
            let mut cur = own.clone();
            for _ in 0..MAX_NEIGHBOR_STEPS {
                if reach >= 1.0 {
                    break;
                }
                let Some((next, k, d)) = cur.step(self.w, m, up) else {
                    break;
                };
                let gap = if up {
                    self.gap[d as usize]
                } else {
                    self.gap[d as usize - 1]
                };
                reach += gap * (self.log_d(&next, k) - log_r).exp();
                if reach >= 1.0 {
                    break;
                }
                let eta = self.log_eta(&next)?;
                if eta > f64::NEG_INFINITY {
                    logs.push(eta);
                }
                reach += (self.log_d(&next, n) - log_r).exp();
                cur = next;
            }
        }
        Ok((logs.len(), log_sum_exp(&logs)))
    }
}
