//! Almost additive potentials on the full shift, evaluated on finite words.
//!
//! Three families are supported:
//!
//! - additive potentials `φ_n = Σ_{j<n} f∘σ^j` with `f` of finite range `r`
//!   (the value of `f` depends on the first `r` symbols only), exactly
//!   additive so `C = 0`;
//! - the geometric potential `g(ω) = ln |T'(Π ω)|` of a branch map, the
//!   positive expansion rate along the orbit;
//! - a genuinely almost additive perturbation `φ_n = S_n f + b(ω_1)`, whose
//!   defect `φ_{n+p} − φ_n − φ_p∘σ^n = −b(ω_{n+1})` is bounded by
//!   `C = max |b|`.
//!
//! On a finite word the terms that look past its end are replaced by the
//! midpoint over all completions (additive) or by the value at the cylinder
//! midpoint (geometric); the induced error is bounded by the variation.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interval_maps::BranchMap;
use crate::measures::{Bracket, LyapunovTable, MarkovMeasure};
use crate::symbolic::{all_words, suffix_spans, Word};

/// Largest table of an additive potential, `m^r` entries.
const MAX_TABLE: usize = 1 << 20;
/// Enumeration budget for the exact variation of finite-range potentials.
const VARIATION_ENUMERATION: usize = 10_000_000;
/// Largest depth of the oscillation table of `g`.
const OMEGA_DEPTH: usize = 12;
/// Length of the tails appended to sampled words in [`variation_norm`].
const TAIL: usize = 48;

/// Finite-range table `f(u)`, `|u| = r`, with midpoint values on shorter
/// prefixes.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    alphabet: usize,
    range: usize,
    dim: usize,
    /// `values[q]` holds the completion midpoints over prefixes of length `q`
    /// (`q = r` is the table itself), flattened with stride `dim`.
    values: Vec<Vec<f64>>,
    /// Exact `||Φ||_n` for `n = 0..r-1`; constant from `n = r-1` on.
    variation: Vec<f64>,
}

impl Table {
    fn new(alphabet: usize, range: usize, dim: usize, full: Vec<f64>) -> Result<Self> {
        let mut values = vec![Vec::new(); range + 1];
        values[range] = full.clone();
        // Per-coordinate min/max over completions, built from the full table down.
        let mut lo = full.clone();
        let mut hi = full;
        let mut levels = vec![(lo.clone(), hi.clone())];
        for _ in (0..range).rev() {
            let count = lo.len() / dim / alphabet;
            let mut nlo = vec![f64::INFINITY; count * dim];
            let mut nhi = vec![f64::NEG_INFINITY; count * dim];
            for i in 0..count {
                for a in 0..alphabet {
                    for k in 0..dim {
                        let src = (i * alphabet + a) * dim + k;
                        nlo[i * dim + k] = nlo[i * dim + k].min(lo[src]);
                        nhi[i * dim + k] = nhi[i * dim + k].max(hi[src]);
                    }
                }
            }
            lo = nlo;
            hi = nhi;
            levels.push((lo.clone(), hi.clone()));
        }
        levels.reverse();
        for (q, (l, h)) in levels.iter().enumerate().take(range) {
            values[q] = l.iter().zip(h).map(|(a, b)| 0.5 * (a + b)).collect();
        }
        let mut table = Table {
            alphabet,
            range,
            dim,
            values,
            variation: Vec::new(),
        };
        table.variation = (0..range)
            .map(|q| table.exact_variation(q, &levels))
            .collect();
        Ok(table)
    }

    /// `f` on the first `min(|u|, r)` symbols of `u`.
    fn term(&self, u: &[u8]) -> &[f64] {
        let q = u.len().min(self.range);
        let idx = u[..q]
            .iter()
            .fold(0usize, |acc, &x| acc * self.alphabet + x as usize);
        &self.values[q][idx * self.dim..(idx + 1) * self.dim]
    }

    /// Sum of the terms `j < n` of `S_n f` on a sequence starting with `seq`.
    fn birkhoff_sum(&self, seq: &[u8], n: usize) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for j in 0..n {
            for (acc, v) in sum.iter_mut().zip(self.term(&seq[j..])) {
                *acc += v;
            }
        }
        sum
    }

    /// Exact sup over `u ∈ A^q` and two completions of the terms that look
    /// beyond `u`; falls back to the per-term oscillation bound when the
    /// enumeration would be too large.
    fn exact_variation(&self, q: usize, levels: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        if q == 0 {
            return 0.0;
        }
        let m = self.alphabet;
        let ext = self.range - 1;
        let prefixes = m.pow(q as u32);
        let completions = m.pow(ext as u32);
        if prefixes
            .saturating_mul(completions)
            .saturating_mul(completions)
            > VARIATION_ENUMERATION
        {
            // Σ_t of the Euclidean oscillation of f over completions of u[t..].
            return (0..q)
                .map(|t| {
                    let len = q - t;
                    let (l, h) = &levels[len];
                    l.chunks(self.dim)
                        .zip(h.chunks(self.dim))
                        .map(|(a, b)| euclid(a, b))
                        .fold(0.0, f64::max)
                })
                .sum();
        }
        let mut best = 0.0f64;
        let mut sums = vec![0.0; completions * self.dim];
        for u in all_words(m, q) {
            for e in 0..completions {
                let mut seq = u.symbols().to_vec();
                seq.extend_from_slice(Word::from_index(e, m, ext).symbols());
                let s = &mut sums[e * self.dim..(e + 1) * self.dim];
                s.iter_mut().for_each(|x| *x = 0.0);
                for t in 0..q {
                    for (acc, v) in s.iter_mut().zip(self.term(&seq[t..])) {
                        *acc += v;
                    }
                }
            }
            for a in 0..completions {
                for b in a + 1..completions {
                    best = best.max(euclid(
                        &sums[a * self.dim..(a + 1) * self.dim],
                        &sums[b * self.dim..(b + 1) * self.dim],
                    ));
                }
            }
        }
        best
    }

    fn variation(&self, n: usize) -> f64 {
        if self.range <= 1 {
            return 0.0;
        }
        self.variation[n.min(self.range - 1)]
    }

    /// `∫ f dμ`.
    fn expectation(&self, mu: &MarkovMeasure) -> Vec<f64> {
        let masses = mu.word_masses(self.range);
        let mut total = vec![0.0; self.dim];
        for (i, &mass) in masses.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (k, acc) in total.iter_mut().enumerate() {
                *acc += mass * self.values[self.range][i * self.dim + k];
            }
        }
        total
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug)]
struct Geometric {
    map: BranchMap,
    lyapunov: LyapunovTable,
    /// `omega[k-1]` bounds the oscillation of `ln|T'|` over any `k`-cylinder.
    omega: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Kind {
    Additive(Table),
    Geometric(Arc<Geometric>),
    Perturbed { base: Table, boundary: Vec<f64> },
}

/// Almost additive potential `Φ = (φ_n)` with values in `ℝ^d`.
#[derive(Debug, Clone)]
pub struct Potential {
    alphabet: usize,
    dim: usize,
    constant: Vec<f64>,
    kind: Kind,
}

impl Potential {
    /// Additive potential of the finite-range function `f`, which receives
    /// words of length exactly `range`.
    pub fn from_additive<F>(alphabet: usize, range: usize, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&Word) -> Vec<f64>,
    {
        if range == 0 {
            return Err(invalid("range must be at least 1"));
        }
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if alphabet < 2 {
            return Err(invalid("alphabet needs at least two symbols"));
        }
        if (alphabet as f64).powi(range as i32) > MAX_TABLE as f64 {
            return Err(Error::Budget(format!("{alphabet}^{range} table entries")));
        }
        let mut full = Vec::with_capacity(alphabet.pow(range as u32) * dim);
        for u in all_words(alphabet, range) {
            let v = f(&u);
            if v.len() != dim {
                return Err(invalid(format!(
                    "f({u}) has {} coordinates, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("f({u}) is not finite")));
            }
            full.extend(v);
        }
        Ok(Potential {
            alphabet,
            dim,
            constant: vec![0.0; dim],
            kind: Kind::Additive(Table::new(alphabet, range, dim, full)?),
        })
    }

    /// `f = 1_{[prefix]}`.
    pub fn indicator(alphabet: usize, prefix: &Word) -> Result<Self> {
        if prefix.is_empty() {
            return Err(invalid("indicator needs a non-empty prefix"));
        }
        prefix.validate(alphabet)?;
        let p = prefix.clone();
        Self::from_additive(alphabet, p.len(), 1, move |u| {
            vec![if u.symbols() == p.symbols() { 1.0 } else { 0.0 }]
        })
    }

    /// `φ_n = n c`.
    pub fn constant_potential(alphabet: usize, c: &[f64]) -> Result<Self> {
        let c = c.to_vec();
        Self::from_additive(alphabet, 1, c.len().max(1), move |_| c.clone())
    }

    /// Geometric potential `g = ln |T'∘Π|`.
    pub fn geometric(map: &BranchMap) -> Result<Self> {
        g_potential(map)
    }

    /// `φ_n = S_n f + b(ω_1)` for an additive `base`; `boundary[a]` is the
    /// vector `b(a)`, and `C = max_a |b(a)|` coordinatewise.
    pub fn perturbed(base: &Potential, boundary: &[Vec<f64>]) -> Result<Self> {
        let Kind::Additive(table) = &base.kind else {
            return Err(Error::Unsupported(
                "only additive potentials can be perturbed".into(),
            ));
        };
        if boundary.len() != base.alphabet || boundary.iter().any(|b| b.len() != base.dim) {
            return Err(invalid(
                "boundary term needs one vector of dimension d per symbol",
            ));
        }
        let constant = (0..base.dim)
            .map(|k| boundary.iter().map(|b| b[k].abs()).fold(0.0, f64::max))
            .collect();
        Ok(Potential {
            alphabet: base.alphabet,
            dim: base.dim,
            constant,
            kind: Kind::Perturbed {
                base: table.clone(),
                boundary: boundary.concat(),
            },
        })
    }

    /// Additive potential whose coordinates are those of the given additive
    /// potentials, in order.
    pub fn stack(parts: &[Potential]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to stack"))?;
        let mut tables = Vec::new();
        for p in parts {
            match &p.kind {
                Kind::Additive(t) if p.alphabet == first.alphabet => tables.push(t),
                Kind::Additive(_) => {
                    return Err(invalid("stacked potentials must share an alphabet"))
                }
                _ => {
                    return Err(Error::Unsupported(
                        "only additive potentials can be stacked".into(),
                    ))
                }
            }
        }
        let range = tables.iter().map(|t| t.range).max().unwrap_or(1);
        let dim = tables.iter().map(|t| t.dim).sum();
        Self::from_additive(first.alphabet, range, dim, |u| {
            tables
                .iter()
                .flat_map(|t| t.term(u.symbols()).to_vec())
                .collect()
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Almost-additivity constant `C(Φ)`.
    pub fn constant(&self) -> Vec<f64> {
        self.constant.clone()
    }

    /// Range of the local function, for finite-range potentials.
    pub fn finite_range(&self) -> Option<usize> {
        match &self.kind {
            Kind::Additive(t) | Kind::Perturbed { base: t, .. } => Some(t.range),
            Kind::Geometric(_) => None,
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self.kind, Kind::Geometric(_))
    }

    /// Value of the local function on a window of exactly `range` symbols,
    /// for finite-range potentials.
    pub fn local_term(&self, window: &[u8]) -> Option<&[f64]> {
        match &self.kind {
            Kind::Additive(t) | Kind::Perturbed { base: t, .. } if window.len() >= t.range => {
                Some(t.term(window))
            }
            _ => None,
        }
    }

    /// Boundary vector `b(a)` of a perturbed potential (zero otherwise).
    pub fn boundary_term(&self, symbol: u8) -> Vec<f64> {
        match &self.kind {
            Kind::Perturbed { boundary, .. } => {
                let a = symbol as usize;
                boundary[a * self.dim..(a + 1) * self.dim].to_vec()
            }
            _ => vec![0.0; self.dim],
        }
    }

    /// `φ_n` on the cylinder `[w]`, `n = |w|`.
    pub fn evaluate(&self, w: &[u8]) -> Result<Vec<f64>> {
        self.evaluate_on(w, w.len())
    }

    /// `φ_n(ω)` for `ω` starting with `seq`, `|seq| ≥ n`; symbols past `n`
    /// sharpen the terms that look ahead.
    pub fn evaluate_on(&self, seq: &[u8], n: usize) -> Result<Vec<f64>> {
        if n > seq.len() {
            return Err(invalid(format!("φ_{n} needs at least {n} symbols")));
        }
        if let Some(&bad) = seq.iter().find(|&&a| a as usize >= self.alphabet) {
            return Err(invalid(format!("symbol {} outside the alphabet", bad + 1)));
        }
        match &self.kind {
            Kind::Additive(t) => Ok(t.birkhoff_sum(seq, n)),
            Kind::Perturbed { base, .. } => {
                let mut sum = base.birkhoff_sum(seq, n);
                if n > 0 {
                    for (acc, b) in sum.iter_mut().zip(self.boundary_term(seq[0])) {
                        *acc += b;
                    }
                }
                Ok(sum)
            }
            Kind::Geometric(g) => {
                if g.map.is_affine() {
                    return Ok(vec![seq[..n]
                        .iter()
                        .map(|&a| -g.map.domain(a as usize).length().ln())
                        .sum()]);
                }
                let spans = suffix_spans(&g.map, seq)?;
                let mut sum = 0.0;
                for j in 0..n {
                    let v = g.map.log_derivative(seq[j] as usize, spans[j].mid());
                    if !v.is_finite() {
                        return Err(Error::Numeric(format!(
                            "degenerate derivative at position {j}"
                        )));
                    }
                    sum += v;
                }
                Ok(vec![sum])
            }
        }
    }

    /// `φ_n` along the fixed orbit `a^∞`.
    pub fn fixed_orbit_sum(&self, symbol: u8, n: usize) -> Result<Vec<f64>> {
        if symbol as usize >= self.alphabet {
            return Err(invalid(format!(
                "symbol {} outside the alphabet",
                symbol + 1
            )));
        }
        match &self.kind {
            Kind::Additive(t) => {
                let v = t.term(&vec![symbol; t.range]);
                Ok(v.iter().map(|x| n as f64 * x).collect())
            }
            Kind::Perturbed { base, .. } => {
                let v = base.term(&vec![symbol; base.range]);
                let b = self.boundary_term(symbol);
                Ok(v.iter().zip(b).map(|(x, b)| n as f64 * x + b).collect())
            }
            Kind::Geometric(g) => {
                let p = g.map.fixed_points()[symbol as usize];
                Ok(vec![n as f64 * g.map.log_derivative(symbol as usize, p)])
            }
        }
    }

    /// Declared bound on `||Φ||_n` (exact for finite range).
    pub fn variation_bound(&self, n: usize) -> f64 {
        match &self.kind {
            Kind::Additive(t) | Kind::Perturbed { base: t, .. } => t.variation(n),
            Kind::Geometric(g) => (1..=n).map(|k| g.omega[k.min(g.omega.len()) - 1]).sum(),
        }
    }

    /// Bracket for `∫ φ_m dμ` on infinite sequences, per coordinate.
    pub fn integral(&self, mu: &MarkovMeasure, m: usize) -> Result<Vec<Bracket>> {
        if mu.alphabet() != self.alphabet {
            return Err(invalid("measure alphabet does not match the potential"));
        }
        let m = m as f64;
        Ok(match &self.kind {
            Kind::Additive(t) => t
                .expectation(mu)
                .into_iter()
                .map(|e| Bracket::exact(m * e))
                .collect(),
            Kind::Perturbed { base, .. } => {
                let first = mu.word_masses(1);
                base.expectation(mu)
                    .into_iter()
                    .enumerate()
                    .map(|(k, e)| {
                        let b: f64 = (0..self.alphabet)
                            .map(|a| first[a] * self.boundary_term(a as u8)[k])
                            .sum();
                        Bracket::exact(m * e + b)
                    })
                    .collect()
            }
            Kind::Geometric(g) => {
                let l = g.lyapunov.bracket(mu);
                vec![Bracket {
                    lower: m * l.lower,
                    upper: m * l.upper,
                }]
            }
        })
    }

    /// `Φ*(μ) = lim ∫ φ_n/n dμ`, exact for finite range; for the geometric
    /// potential a cylinder-midpoint estimate inside the Lyapunov bracket.
    pub fn phi_star(&self, mu: &MarkovMeasure) -> Result<Vec<f64>> {
        if mu.alphabet() != self.alphabet {
            return Err(invalid("measure alphabet does not match the potential"));
        }
        Ok(match &self.kind {
            Kind::Additive(t) | Kind::Perturbed { base: t, .. } => t.expectation(mu),
            Kind::Geometric(g) => vec![g
                .lyapunov
                .estimate_from_masses(&mu.word_masses(g.lyapunov.depth()))],
        })
    }

    /// The geometric potential's Lyapunov table, if any.
    pub fn lyapunov_table(&self) -> Option<&LyapunovTable> {
        match &self.kind {
            Kind::Geometric(g) => Some(&g.lyapunov),
            _ => None,
        }
    }
}

/// Geometric potential of `map`: `A_n g = ln 2` on the doubling map,
/// `ln 3` on the middle-third Cantor system.
pub fn g_potential(map: &BranchMap) -> Result<Potential> {
    let m = map.branch_count();
    let (depth, omega) = if map.is_affine() {
        (1, vec![0.0])
    } else {
        let depth = (1..=OMEGA_DEPTH)
            .take_while(|&k| (m as f64).powi(k as i32) <= (1u64 << OMEGA_DEPTH) as f64)
            .last()
            .unwrap_or(1);
        let mut omega = Vec::with_capacity(depth);
        for k in 1..=depth {
            let mut worst = 0.0f64;
            for w in all_words(m, k) {
                let spans = suffix_spans(map, w.symbols())?;
                let (lo, hi) =
                    map.log_derivative_range(w.symbols()[0] as usize, spans[0].lo, spans[0].hi);
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Numeric(format!(
                        "degenerate derivative on cylinder {w}"
                    )));
                }
                worst = worst.max(hi - lo);
            }
            omega.push(worst);
        }
        (crate::measures::default_lyapunov_depth(map), omega)
    };
    let lyapunov = LyapunovTable::new(map, depth)?;
    Ok(Potential {
        alphabet: m,
        dim: 1,
        constant: vec![0.0],
        kind: Kind::Geometric(Arc::new(Geometric {
            map: map.clone(),
            lyapunov,
            omega,
        })),
    })
}

/// `φ_n(w)/n`, with error at most `variation_bound(n)/n`.
pub fn birkhoff_average(pot: &Potential, w: &[u8]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(invalid("Birkhoff average of the empty word"));
    }
    let n = w.len() as f64;
    Ok(pot.evaluate(w)?.into_iter().map(|x| x / n).collect())
}

/// Threshold approximation of membership in the set where the lower
/// Lyapunov exponent is positive: `A_n g(w) > c`.
pub fn exceeds_expansion(g: &Potential, w: &[u8], c: f64) -> Result<bool> {
    if c <= 0.0 {
        return Err(invalid("threshold must be positive"));
    }
    Ok(birkhoff_average(g, w)?[0] > c)
}

/// `φ_{n+p}(ω) − φ_n(ω) − φ_p(σ^n ω)` with `ω` starting with `seq`.
pub fn additivity_defect(pot: &Potential, seq: &[u8], n: usize, p: usize) -> Result<Vec<f64>> {
    let whole = pot.evaluate_on(seq, n + p)?;
    let head = pot.evaluate_on(seq, n)?;
    let tail = pot.evaluate_on(&seq[n..], p)?;
    Ok(whole
        .iter()
        .zip(head)
        .zip(tail)
        .map(|((a, b), c)| a - b - c)
        .collect())
}

/// Bounds on `||Φ||_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationReport {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
    pub exact: bool,
    pub warning: Option<String>,
}

impl VariationReport {
    /// The exact value, or the sampled lower bound.
    pub fn estimate(&self) -> f64 {
        self.lower
    }
}

/// `||Φ||_n = sup_{ω|n = τ|n} |φ_n(ω) − φ_n(τ)|`.
///
/// Exact for finite-range potentials. For the geometric potential, `budget`
/// uniformly random `n`-words are extended by the tails `1^T`, `m^T` and a
/// random tail; the largest difference is a lower bound, reported together
/// with the analytic bound from cylinder oscillations.
pub fn variation_norm(
    pot: &Potential,
    n: usize,
    budget: usize,
    seed: u64,
) -> Result<VariationReport> {
    if n == 0 {
        return Err(invalid("variation norm needs n ≥ 1"));
    }
    match &pot.kind {
        Kind::Additive(_) | Kind::Perturbed { .. } => {
            let v = pot.variation_bound(n);
            Ok(VariationReport {
                n,
                lower: v,
                upper: v,
                exact: true,
                warning: None,
            })
        }
        Kind::Geometric(g) => {
            let upper = pot.variation_bound(n);
            if g.map.is_affine() {
                return Ok(VariationReport {
                    n,
                    lower: 0.0,
                    upper: 0.0,
                    exact: true,
                    warning: None,
                });
            }
            if budget == 0 {
                return Err(invalid("sampling budget must be positive"));
            }
            let m = pot.alphabet;
            let lower = (0..budget)
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let w: Vec<u8> = (0..n).map(|_| rng.random_range(0..m) as u8).collect();
                    let random: Vec<u8> = (0..TAIL).map(|_| rng.random_range(0..m) as u8).collect();
                    let mut values = Vec::with_capacity(3);
                    for tail in [vec![0u8; TAIL], vec![(m - 1) as u8; TAIL], random] {
                        let mut seq = w.clone();
                        seq.extend(tail);
                        values.push(pot.evaluate_on(&seq, n)?[0]);
                    }
                    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                    Ok(hi - lo)
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(VariationReport {
                n,
                lower,
                upper,
                exact: false,
                warning: (upper > 2.0 * lower + 1e-12).then(|| {
                    format!("sampled lower bound {lower:.3e} is far below the analytic bound {upper:.3e}")
                }),
            })
        }
    }
}

/// `max_{m ≤ n_max} (1/m)∫(φ_m − C)dμ ≤ Φ*(μ) ≤ min_{m ≤ n_max} (1/m)∫(φ_m + C)dμ`.
pub fn phi_star_bracket(
    pot: &Potential,
    mu: &MarkovMeasure,
    n_max: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_max == 0 {
        return Err(invalid("n_max must be positive"));
    }
    let d = pot.dim();
    let c = pot.constant();
    let mut lower = vec![f64::NEG_INFINITY; d];
    let mut upper = vec![f64::INFINITY; d];
    // ∫φ_m dμ is affine in m for every supported family, so one evaluation
    // of the per-step integral suffices.
    let one = pot.integral(mu, 1)?;
    let zero = pot.integral(mu, 0)?;
    for m in 1..=n_max {
        let mf = m as f64;
        for k in 0..d {
            let slope_lo = one[k].lower - zero[k].lower;
            let slope_hi = one[k].upper - zero[k].upper;
            let lo = zero[k].lower + mf * slope_lo;
            let hi = zero[k].upper + mf * slope_hi;
            lower[k] = lower[k].max((lo - c[k]) / mf);
            upper[k] = upper[k].min((hi + c[k]) / mf);
        }
    }
    for k in 0..d {
        if lower[k] > upper[k] + 1e-12 {
            return Err(Error::InvertedBracket {
                lower: lower[k],
                upper: upper[k],
            });
        }
    }
    Ok((lower, upper))
}

/// Config-level description of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialDescriptor {
    /// `1_{[prefix]}`, prefix in 1-based digits.
    Indicator {
        prefix: Word,
    },
    Constant {
        value: Vec<f64>,
    },
    /// Explicit table keyed by 1-based words of length `range`.
    Additive {
        range: usize,
        values: BTreeMap<String, Vec<f64>>,
    },
    Geometric,
    Perturbed {
        base: Box<PotentialDescriptor>,
        boundary: Vec<Vec<f64>>,
    },
    Stack {
        parts: Vec<PotentialDescriptor>,
    },
}

impl PotentialDescriptor {
    pub fn build(&self, map: &BranchMap) -> Result<Potential> {
        let m = map.branch_count();
        match self {
            PotentialDescriptor::Indicator { prefix } => Potential::indicator(m, prefix),
            PotentialDescriptor::Constant { value } => {
                if value.is_empty() {
                    return Err(invalid("constant potential needs a value"));
                }
                Potential::constant_potential(m, value)
            }
            PotentialDescriptor::Additive { range, values } => {
                let mut table = BTreeMap::new();
                for (key, v) in values {
                    let w: Word = key.parse()?;
                    if w.len() != *range {
                        return Err(invalid(format!(
                            "table key {key} does not have length {range}"
                        )));
                    }
                    w.validate(m)?;
                    table.insert(w, v.clone());
                }
                let dim = table.values().next().map(Vec::len).unwrap_or(0);
                let expected = (m as f64).powi(*range as i32);
                if (table.len() as f64) != expected {
                    return Err(invalid(format!(
                        "table has {} entries, expected {expected}",
                        table.len()
                    )));
                }
                Potential::from_additive(m, *range, dim, |u| table[u].clone())
            }
            PotentialDescriptor::Geometric => g_potential(map),
            PotentialDescriptor::Perturbed { base, boundary } => {
                Potential::perturbed(&base.build(map)?, boundary)
            }
            PotentialDescriptor::Stack { parts } => {
                let built = parts
                    .iter()
                    .map(|p| p.build(map))
                    .collect::<Result<Vec<_>>>()?;
                Potential::stack(&built)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::Interval;
    use crate::symbolic::log_diameter;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn doubling() -> BranchMap {
        BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)]).unwrap()
    }

    fn first_is_one() -> Potential {
        Potential::indicator(2, &Word::from_digits(&[1])).unwrap()
    }

    fn digits(d: &[u8]) -> Vec<u8> {
        d.iter().map(|x| x - 1).collect()
    }

    /// `1_{[12]}`: a range-2 potential.
    fn pair() -> Potential {
        Potential::indicator(2, &Word::from_digits(&[1, 2])).unwrap()
    }

    #[test]
    fn indicator_sums_and_averages() {
        let f = first_is_one();
        assert_eq!(f.evaluate(&digits(&[1, 2, 1, 2, 1, 2])).unwrap(), vec![3.0]);
        assert_eq!(
            birkhoff_average(&f, &digits(&[1, 1, 2, 2])).unwrap(),
            vec![0.5]
        );
        assert_eq!(
            birkhoff_average(&f, &digits(&[2, 2, 2, 2])).unwrap(),
            vec![0.0]
        );
        assert!(birkhoff_average(&f, &[]).is_err());
        assert!(Potential::from_additive(2, 0, 1, |_| vec![0.0]).is_err());
    }

    #[test]
    fn constant_potential() {
        let c = Potential::constant_potential(2, &[0.7]).unwrap();
        assert!((c.evaluate(&[0, 1, 1, 0, 1]).unwrap()[0] - 3.5).abs() < 1e-15);
        assert_eq!(c.variation_bound(3), 0.0);
    }

    #[test]
    fn finite_range_variation() {
        assert_eq!(variation_norm(&first_is_one(), 5, 1, 0).unwrap().upper, 0.0);
        // The last term of 1_{[12]} is decided by the next symbol.
        let v = variation_norm(&pair(), 4, 1, 0).unwrap();
        assert!(v.exact && v.lower == 1.0);
        // Oracle: enumerate all 4-words and both completions by hand.
        let f = pair();
        let mut worst = 0.0f64;
        for w in all_words(2, 4) {
            let mut a = w.symbols().to_vec();
            let mut b = a.clone();
            a.push(0);
            b.push(1);
            let d = f.evaluate_on(&a, 4).unwrap()[0] - f.evaluate_on(&b, 4).unwrap()[0];
            worst = worst.max(d.abs());
        }
        assert_eq!(worst, v.lower);
        // A range-2 potential whose value never depends on the second symbol.
        let flat = Potential::from_additive(2, 2, 1, |u| vec![u.symbols()[0] as f64]).unwrap();
        assert_eq!(flat.variation_bound(7), 0.0);
    }

    #[test]
    fn truncated_terms_use_completion_midpoint() {
        // φ_1([1]) for 1_{[12]}: completions give 0 or 1.
        assert_eq!(pair().evaluate(&[0]).unwrap(), vec![0.5]);
        assert_eq!(pair().evaluate_on(&[0, 1], 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn geometric_on_linear_maps() {
        let g = g_potential(&doubling()).unwrap();
        assert!((birkhoff_average(&g, &[0, 1, 1, 0, 1]).unwrap()[0] - LN2).abs() < 1e-15);
        assert_eq!(variation_norm(&g, 10, 10, 0).unwrap().upper, 0.0);
        let cantor = BranchMap::linear(vec![
            Interval::new(0.0, 1.0 / 3.0),
            Interval::new(2.0 / 3.0, 1.0),
        ])
        .unwrap();
        let g = g_potential(&cantor).unwrap();
        assert!((birkhoff_average(&g, &[1, 0, 0]).unwrap()[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn geometric_on_parabolic_orbit_tends_to_zero() {
        let map = BranchMap::manneville_pomeau(0.5).unwrap();
        let g = g_potential(&map).unwrap();
        let avg = |n: usize| birkhoff_average(&g, &vec![0u8; n]).unwrap()[0];
        assert!(avg(1000) < avg(100) && avg(100) < avg(10));
        assert!(avg(1000) < 0.05);
        assert!(avg(10) > 0.0);
    }

    #[test]
    fn geometric_average_tracks_cylinder_size() {
        // -ln D_n / n and A_n g agree up to a vanishing error.
        let map = BranchMap::manneville_pomeau(1.0).unwrap();
        let g = g_potential(&map).unwrap();
        let mu = MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        let mut prev = f64::INFINITY;
        for (i, n) in [50usize, 400, 3200].into_iter().enumerate() {
            let mut worst = 0.0f64;
            for seed in 0..20 {
                let w = mu.sample_word(n, seed + 100 * i as u64);
                let d = -log_diameter(&map, w.symbols()).unwrap() / n as f64;
                let a = birkhoff_average(&g, w.symbols()).unwrap()[0];
                worst = worst.max((d - a).abs());
            }
            assert!(worst < prev + 1e-3);
            prev = worst;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn geometric_variation_decays() {
        let map = BranchMap::manneville_pomeau(1.0).unwrap();
        let g = g_potential(&map).unwrap();
        let r10 = variation_norm(&g, 10, 400, 1).unwrap();
        let r200 = variation_norm(&g, 200, 400, 1).unwrap();
        assert!(!r10.exact && r10.lower <= r10.upper);
        assert!(r200.lower / 200.0 < r10.lower / 10.0);
        assert!(r200.upper / 200.0 < r10.upper / 10.0);
    }

    #[test]
    fn phi_star_of_indicator() {
        let f = first_is_one();
        let mu = MarkovMeasure::bernoulli(&[0.3, 0.7]).unwrap();
        let (lo, hi) = phi_star_bracket(&f, &mu, 50).unwrap();
        assert!((lo[0] - 0.3).abs() < 1e-15 && (hi[0] - 0.3).abs() < 1e-15);
        assert!((f.phi_star(&mu).unwrap()[0] - 0.3).abs() < 1e-15);
        let p = pair();
        let chain = MarkovMeasure::markov(1, vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        let (lo, hi) = phi_star_bracket(&p, &chain, 10).unwrap();
        assert!((lo[0] - 0.08).abs() < 1e-14 && (hi[0] - 0.08).abs() < 1e-14);
    }

    #[test]
    fn perturbed_bracket_width() {
        let base = first_is_one();
        let pot = Potential::perturbed(&base, &[vec![1.0], vec![0.25]]).unwrap();
        assert_eq!(pot.constant(), vec![1.0]);
        let mu = MarkovMeasure::bernoulli(&[0.3, 0.7]).unwrap();
        for n_max in [10, 100, 1000] {
            let (lo, hi) = phi_star_bracket(&pot, &mu, n_max).unwrap();
            assert!(hi[0] - lo[0] <= 2.0 / n_max as f64 + 1e-12);
            assert!(lo[0] <= 0.3 + 1e-12 && hi[0] >= 0.3 - 1e-12);
        }
        assert_eq!(pot.fixed_orbit_sum(1, 4).unwrap(), vec![0.25]);
    }

    #[test]
    fn geometric_bracket_contains_lyapunov() {
        let map = BranchMap::manneville_pomeau(1.0).unwrap();
        let g = g_potential(&map).unwrap();
        let mu = MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        let (lo, hi) = phi_star_bracket(&g, &mu, 20).unwrap();
        let star = g.phi_star(&mu).unwrap()[0];
        assert!(lo[0] <= star && star <= hi[0]);
        assert!(hi[0] - lo[0] < 0.05);
    }

    #[test]
    fn stack_and_descriptors() {
        let text = r#"
kind = "stack"
[[parts]]
kind = "indicator"
prefix = "1"
[[parts]]
kind = "additive"
range = 2
values = { "11" = [0.0], "12" = [1.0], "21" = [2.0], "22" = [3.0] }
"#;
        let desc: PotentialDescriptor = toml::from_str(text).unwrap();
        let pot = desc.build(&doubling()).unwrap();
        assert_eq!(pot.dim(), 2);
        assert_eq!(pot.evaluate_on(&[0, 1, 1], 2).unwrap(), vec![1.0, 4.0]);
        let bad: PotentialDescriptor =
            toml::from_str("kind = \"additive\"\nrange = 2\nvalues = { \"11\" = [0.0] }").unwrap();
        assert!(bad.build(&doubling()).is_err());
        let g: PotentialDescriptor = toml::from_str("kind = \"geometric\"").unwrap();
        assert!(g.build(&doubling()).unwrap().is_geometric());
    }

    #[test]
    fn affinity_of_phi_star() {
        let f = pair();
        let mu = MarkovMeasure::bernoulli(&[0.3, 0.7]).unwrap();
        let nu = MarkovMeasure::markov(1, vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        for s in [0.0, 0.2, 0.5, 1.0] {
            let mix = MarkovMeasure::mix(&mu, &nu, s).unwrap();
            let direct = s * f.phi_star(&mu).unwrap()[0] + (1.0 - s) * f.phi_star(&nu).unwrap()[0];
            assert!((f.phi_star(&mix).unwrap()[0] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn continuity_in_parameters() {
        let g = g_potential(&BranchMap::manneville_pomeau(1.0).unwrap()).unwrap();
        let target = g
            .phi_star(&MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap())
            .unwrap()[0];
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let p = 0.5 + 0.2 / 2f64.powi(k);
            let v = g
                .phi_star(&MarkovMeasure::bernoulli(&[p, 1.0 - p]).unwrap())
                .unwrap()[0];
            assert!((v - target).abs() < prev);
            prev = (v - target).abs();
        }
    }

    fn builtins() -> Vec<Potential> {
        let mp = BranchMap::manneville_pomeau(1.0).unwrap();
        vec![
            first_is_one(),
            pair(),
            Potential::perturbed(&pair(), &[vec![1.0], vec![0.0]]).unwrap(),
            g_potential(&doubling()).unwrap(),
            g_potential(&mp).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn almost_additivity(seq in prop::collection::vec(0u8..2, 80), n in 1usize..30, p in 1usize..30) {
            for pot in builtins() {
                let defect = additivity_defect(&pot, &seq, n, p).unwrap();
                let slack = 2.0 * (pot.variation_bound(n) + pot.variation_bound(p));
                let c = pot.constant();
                prop_assert!(defect[0].abs() <= c[0] + slack + 1e-9, "defect {:?}", defect);
            }
        }

        #[test]
        fn evaluation_within_variation(w in prop::collection::vec(0u8..2, 1..40), t1 in prop::collection::vec(0u8..2, 8), t2 in prop::collection::vec(0u8..2, 8)) {
            for pot in builtins() {
                let n = w.len();
                let mut a = w.clone();
                a.extend(&t1);
                let mut b = w.clone();
                b.extend(&t2);
                let d = pot.evaluate_on(&a, n).unwrap()[0] - pot.evaluate_on(&b, n).unwrap()[0];
                prop_assert!(d.abs() <= pot.variation_bound(n) + 1e-9);
            }
        }
    }
}
