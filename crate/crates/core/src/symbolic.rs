//! Words over the branch alphabet and the geometry of their cylinders.
//!
//! Symbols are stored zero-based (`0..m`) and printed one-based, so the
//! word `(1, 2, 1)` is written `"121"`. Cylinder diameters are tracked in log
//! space: `D_n` underflows `f64` after roughly a thousand doublings.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::interval_maps::BranchMap;

/// Maximum cylinder depth accepted by [`cylinder`].
pub const MAX_DEPTH: usize = 100_000;

/// Widths below this are propagated through the mean value theorem instead
/// of by differencing mapped endpoints.
const NARROW_WIDTH: f64 = 1e-7;

/// Finite word over `{0, …, m-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(Vec<u8>);

impl Word {
    /// Word from zero-based symbols.
    pub fn new(symbols: Vec<u8>) -> Self {
        Word(symbols)
    }

    /// Word from one-based digits, as printed.
    pub fn from_digits(digits: &[u8]) -> Self {
        Word(digits.iter().map(|d| d - 1).collect())
    }

    pub fn constant(symbol: u8, len: usize) -> Self {
        Word(vec![symbol; len])
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn into_symbols(self) -> Vec<u8> {
        self.0
    }

    /// `σw`: drops the first symbol.
    pub fn shift(&self) -> Word {
        Word(self.0.get(1..).unwrap_or(&[]).to_vec())
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.len())].to_vec())
    }

    pub fn push(&mut self, symbol: u8) {
        self.0.push(symbol);
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn is_constant(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }

    pub fn validate(&self, alphabet: usize) -> Result<()> {
        match self.0.iter().find(|&&s| s as usize >= alphabet) {
            Some(s) => Err(invalid(format!(
                "symbol {} outside alphabet of size {alphabet}",
                s + 1
            ))),
            None => Ok(()),
        }
    }

    /// Index of the word in base `m`, most significant symbol first.
    pub fn index(&self, alphabet: usize) -> usize {
        self.0.iter().fold(0, |acc, &s| acc * alphabet + s as usize)
    }

    /// Inverse of [`Word::index`].
    pub fn from_index(mut index: usize, alphabet: usize, len: usize) -> Word {
        let mut v = vec![0u8; len];
        for slot in v.iter_mut().rev() {
            *slot = (index % alphabet) as u8;
            index /= alphabet;
        }
        Word(v)
    }
}

impl From<&[u8]> for Word {
    fn from(symbols: &[u8]) -> Self {
        Word(symbols.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            write!(f, "{}", s + 1)?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c.to_digit(10) {
                Some(d) if d >= 1 => Ok((d - 1) as u8),
                _ => Err(invalid(format!("bad symbol {c:?} in word {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All words of length `n` over an alphabet of size `m`, in lexicographic order.
pub fn all_words(alphabet: usize, n: usize) -> impl Iterator<Item = Word> {
    let count = alphabet.pow(n as u32);
    (0..count).map(move |i| Word::from_index(i, alphabet, n))
}

/// Geometric cylinder `I_w = T_{w_1} ∘ … ∘ T_{w_n}[0,1]`.
///
/// For deep words `lo`/`hi` are only as accurate as `f64` allows near the
/// midpoint; `log_diameter` stays accurate at any depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderInterval {
    pub word: Word,
    pub lo: f64,
    pub hi: f64,
    pub log_diameter: f64,
}

impl CylinderInterval {
    pub fn diameter(&self) -> f64 {
        self.log_diameter.exp()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// State of a right-to-left composition of inverse branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Span {
    pub lo: f64,
    pub hi: f64,
    pub log_width: f64,
}

impl Span {
    pub const UNIT: Span = Span {
        lo: 0.0,
        hi: 1.0,
        log_width: 0.0,
    };

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Applies the inverse branch `T_a` to a span.
pub(crate) fn pull_back(map: &BranchMap, a: usize, span: Span) -> Result<Span> {
    if map.is_affine() {
        let p = map.inverse(a, span.lo)?;
        let q = map.inverse(a, span.hi)?;
        return Ok(Span {
            lo: p.min(q),
            hi: p.max(q),
            log_width: span.log_width + map.domain(a).length().ln(),
        });
    }
    if span.hi - span.lo > NARROW_WIDTH {
        let p = map.inverse(a, span.lo)?;
        let q = map.inverse(a, span.hi)?;
        let (lo, hi) = (p.min(q), p.max(q));
        if hi > lo {
            return Ok(Span {
                lo,
                hi,
                log_width: (hi - lo).ln(),
            });
        }
    }
    let x = map.inverse(a, span.mid())?;
    let dlog = -map.log_derivative(a, x);
    if !dlog.is_finite() {
        return Err(Error::Numeric(format!(
            "degenerate derivative on branch {}",
            a + 1
        )));
    }
    let log_width = span.log_width + dlog;
    let half = 0.5 * log_width.exp();
    Ok(Span {
        lo: x - half,
        hi: x + half,
        log_width,
    })
}

fn tag_depth(err: Error, depth: usize) -> Error {
    match err {
        Error::RootFinding { branch, .. } => Error::RootFinding { branch, depth },
        other => other,
    }
}

pub(crate) fn span_of(map: &BranchMap, symbols: &[u8]) -> Result<Span> {
    let mut span = Span::UNIT;
    for (k, &a) in symbols.iter().enumerate().rev() {
        span = pull_back(map, a as usize, span).map_err(|e| tag_depth(e, k + 1))?;
    }
    Ok(span)
}

/// Spans of every suffix: entry `k` is the cylinder of `symbols[k..]`
/// (entry `len` is `[0,1]`).
pub(crate) fn suffix_spans(map: &BranchMap, symbols: &[u8]) -> Result<Vec<Span>> {
    let mut out = vec![Span::UNIT; symbols.len() + 1];
    for k in (0..symbols.len()).rev() {
        out[k] =
            pull_back(map, symbols[k] as usize, out[k + 1]).map_err(|e| tag_depth(e, k + 1))?;
    }
    Ok(out)
}

/// Cylinder interval of `w`.
pub fn cylinder(map: &BranchMap, w: &Word) -> Result<CylinderInterval> {
    w.validate(map.branch_count())?;
    if w.len() > MAX_DEPTH {
        return Err(invalid(format!(
            "cylinder depth {} exceeds cap {MAX_DEPTH}",
            w.len()
        )));
    }
    let span = span_of(map, w.symbols())?;
    Ok(CylinderInterval {
        word: w.clone(),
        lo: span.lo,
        hi: span.hi,
        log_diameter: span.log_width,
    })
}

/// `ln D_n` for the cylinder of `symbols`.
///
/// Exact prefix sums for affine maps; a full composition otherwise.
pub fn log_diameter(map: &BranchMap, symbols: &[u8]) -> Result<f64> {
    if map.is_affine() {
        return Ok(symbols
            .iter()
            .map(|&a| map.domain(a as usize).length().ln())
            .sum());
    }
    Ok(span_of(map, symbols)?.log_width)
}

/// `λ̃_n = -ln D_n / n`.
pub fn lambda_tilde(map: &BranchMap, w: &Word) -> Result<f64> {
    if w.is_empty() {
        return Err(invalid("λ̃ needs a non-empty word"));
    }
    Ok(-log_diameter(map, w.symbols())? / w.len() as f64)
}

/// Approximation of `Π(ω)` for any `ω` extending `w`: the cylinder midpoint,
/// with error at most half the diameter.
pub fn project(map: &BranchMap, w: &Word) -> Result<f64> {
    Ok(cylinder(map, w)?.midpoint())
}

/// First `n` symbols of the coding of `x`, using the left branch at shared
/// endpoints.
pub fn itinerary(map: &BranchMap, x: f64, n: usize) -> Result<Word> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("{x} is outside [0,1]")));
    }
    let mut symbols = Vec::with_capacity(n);
    let mut y = x;
    for k in 0..n {
        let (branch, next) = map.step(y).ok_or(Error::Escape { time: k + 1 })?;
        symbols.push(branch as u8);
        y = next;
    }
    Ok(Word(symbols))
}

/// `|Π(σw) − T(Π(w))|`, a diagnostic for the conjugacy `Π∘σ = T∘Π`.
pub fn conjugacy_residual(map: &BranchMap, w: &Word) -> Result<f64> {
    if w.len() < 2 {
        return Err(invalid(
            "conjugacy residual needs a word of length at least 2",
        ));
    }
    let x = project(map, w)?;
    let image = map.forward(w.symbols()[0] as usize, x);
    Ok((project(map, &w.shift())? - image).abs())
}

/// Relative position `(T_p(y) − lo(I_p)) / D_p` of the image of `y` inside
/// the cylinder of `prefix`.
///
/// For increasing affine maps this is `y` itself. Otherwise the composition
/// runs right to left and stops once the span is narrow enough that the
/// remaining branches act affinely on it.
pub fn relative_position(map: &BranchMap, prefix: &[u8], y: f64) -> Result<f64> {
    if map.is_affine() {
        return Ok(y);
    }
    let mut span = Span::UNIT;
    let mut point = y;
    let mut flipped = false;
    for &a in prefix.iter().rev() {
        let a = a as usize;
        if span.hi - span.lo <= NARROW_WIDTH {
            if !map.is_increasing(a) {
                flipped = !flipped;
            }
            continue;
        }
        point = map.inverse(a, point)?;
        span = pull_back(map, a, span)?;
    }
    let rel = if span.hi > span.lo {
        ((point - span.lo) / (span.hi - span.lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    Ok(if flipped { 1.0 - rel } else { rel })
}

/// Largest diameter over all words of length `n` (enumeration).
pub fn max_log_diameter(map: &BranchMap, n: usize) -> Result<f64> {
    let m = map.branch_count();
    if (m as f64).powi(n as i32) > 4e6 {
        return Err(Error::Budget(format!("{m}^{n} cylinders")));
    }
    let mut best = f64::NEG_INFINITY;
    for w in all_words(m, n) {
        best = best.max(log_diameter(map, w.symbols())?);
    }
    Ok(best)
}

/// Writes cylinders as CSV rows `word,a,b,diameter,log_diameter`.
pub fn write_cylinders_csv<W: Write>(out: W, cylinders: &[CylinderInterval]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["word", "a", "b", "diameter", "log_diameter"])?;
    for c in cylinders {
        writer.write_record([
            c.word.to_string(),
            c.lo.to_string(),
            c.hi.to_string(),
            c.diameter().to_string(),
            c.log_diameter.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::Interval;
    use proptest::prelude::*;

    fn doubling() -> BranchMap {
        BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)]).unwrap()
    }

    fn cantor() -> BranchMap {
        BranchMap::linear(vec![
            Interval::new(0.0, 1.0 / 3.0),
            Interval::new(2.0 / 3.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn word_text_format() {
        let w: Word = "12112".parse().unwrap();
        assert_eq!(w.symbols(), &[0, 1, 0, 0, 1]);
        assert_eq!(w.to_string(), "12112");
        assert_eq!(w.shift().to_string(), "2112");
        assert!("1a2".parse::<Word>().is_err());
        assert!("102".parse::<Word>().is_err());
        assert!(Word::from_digits(&[1, 3]).validate(2).is_err());
        assert_eq!(Word::from_index(w.index(2), 2, 5), w);
    }

    #[test]
    fn doubling_first_level() {
        let c = cylinder(&doubling(), &Word::from_digits(&[1])).unwrap();
        assert_eq!((c.lo, c.hi), (0.0, 0.5));
        assert!((c.diameter() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn doubling_diameters_are_dyadic() {
        let map = doubling();
        for n in [1usize, 5, 17, 40] {
            let w = Word::new((0..n).map(|k| (k * 7 % 3 == 0) as u8).collect());
            let c = cylinder(&map, &w).unwrap();
            assert!((c.log_diameter + n as f64 * 2f64.ln()).abs() < 1e-12 * n as f64);
        }
    }

    #[test]
    fn cantor_second_level() {
        let c = cylinder(&cantor(), &Word::from_digits(&[1, 2])).unwrap();
        assert!((c.lo - 2.0 / 9.0).abs() < 1e-15);
        assert!((c.hi - 3.0 / 9.0).abs() < 1e-15);
        assert!((c.diameter() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let mut w = Word::from_digits(&[2]);
        for _ in 0..19 {
            w.push(0);
        }
        let x = project(&doubling(), &w).unwrap();
        assert!((x - (0.5 + 2f64.powi(-21))).abs() <= 2f64.powi(-21));

        let x = project(&cantor(), &Word::constant(0, 20)).unwrap();
        assert!(x.abs() <= 3f64.powi(-20) / 2.0 + 1e-18);

        let mp = BranchMap::manneville_pomeau(1.0).unwrap();
        let c22 = cylinder(&mp, &Word::from_digits(&[2, 2])).unwrap();
        let c2 = cylinder(&mp, &Word::from_digits(&[2])).unwrap();
        assert!(c2.lo <= c22.lo && c22.hi <= c2.hi);
        // T_2 T_2 [0,1] = [3/4, 1] since T_2(y) = (y+1)/2.
        assert!((c22.lo - 0.75).abs() < 1e-12 && (c22.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn itinerary_examples() {
        let map = doubling();
        assert_eq!(itinerary(&map, 1.0 / 3.0, 4).unwrap().to_string(), "1212");
        assert_eq!(itinerary(&map, 0.0, 6).unwrap(), Word::constant(0, 6));
        match itinerary(&cantor(), 0.5, 1) {
            Err(Error::Escape { time }) => assert_eq!(time, 1),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn conjugacy_on_doubling_map() {
        let map = doubling();
        let w = Word::new((0..30).map(|k| ((k * k + 1) % 2) as u8).collect());
        assert!(conjugacy_residual(&map, &w).unwrap() < 2f64.powi(-28));
        let short = Word::from_digits(&[2, 1]);
        assert!(conjugacy_residual(&map, &short).unwrap() <= 0.5);
        assert!(conjugacy_residual(&map, &Word::from_digits(&[1])).is_err());
    }

    #[test]
    fn conjugacy_on_manneville_pomeau() {
        let map = BranchMap::manneville_pomeau(0.5).unwrap();
        let w = Word::new((0..25).map(|k| ((k * 5 + k / 3) % 2) as u8).collect());
        let d = cylinder(&map, &w.shift()).unwrap().diameter();
        assert!(conjugacy_residual(&map, &w).unwrap() < d);
    }

    #[test]
    fn deep_cylinders_do_not_underflow() {
        let map = doubling();
        let c = cylinder(&map, &Word::constant(1, 2000)).unwrap();
        assert!((c.log_diameter + 2000.0 * 2f64.ln()).abs() < 1e-9);
        assert!((c.midpoint() - 1.0).abs() < 1e-12);
        assert!(cylinder(&map, &Word::constant(0, MAX_DEPTH + 1)).is_err());
    }

    #[test]
    fn uniform_shrinking_is_monotone() {
        for map in [
            doubling(),
            cantor(),
            BranchMap::manneville_pomeau(1.0).unwrap(),
            BranchMap::farey(),
        ] {
            let mut prev = 0.0;
            for n in 1..=10 {
                let d = max_log_diameter(&map, n).unwrap();
                assert!(d <= prev + 1e-12, "{} at depth {n}", map.name());
                prev = d;
            }
        }
    }

    #[test]
    fn relative_position_matches_direct_computation() {
        let map = BranchMap::manneville_pomeau(1.0).unwrap();
        let prefix = Word::from_digits(&[1, 2, 1]);
        let y = 0.3;
        let c = cylinder(&map, &prefix).unwrap();
        let mut x = y;
        for &a in prefix.symbols().iter().rev() {
            x = map.inverse(a as usize, x).unwrap();
        }
        let direct = (x - c.lo) / (c.hi - c.lo);
        let rel = relative_position(&map, prefix.symbols(), y).unwrap();
        assert!((rel - direct).abs() < 1e-9);
        // The Farey second branch reverses orientation.
        let farey = BranchMap::farey();
        assert!(relative_position(&farey, &[1], 0.0).unwrap() > 0.99);
    }

    #[test]
    fn csv_export() {
        let map = cantor();
        let rows: Vec<_> = all_words(2, 2)
            .map(|w| cylinder(&map, &w).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_cylinders_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("word,a,b,diameter,log_diameter\n11,0,"));
        assert_eq!(text.lines().count(), 5);
    }

    fn maps() -> Vec<BranchMap> {
        vec![
            doubling(),
            cantor(),
            BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.75, 1.0)]).unwrap(),
            BranchMap::manneville_pomeau(0.5).unwrap(),
            BranchMap::manneville_pomeau(1.0).unwrap(),
            BranchMap::farey(),
        ]
    }

    proptest! {
        #[test]
        fn nesting(which in 0usize..6, symbols in prop::collection::vec(0u8..2, 0..30), a in 0u8..2) {
            let map = &maps()[which];
            let w = Word::new(symbols);
            let mut wa = w.clone();
            wa.push(a);
            let outer = cylinder(map, &w).unwrap();
            let inner = cylinder(map, &wa).unwrap();
            let slack = 1e-12 + 1e-7 * outer.diameter();
            prop_assert!(inner.lo >= outer.lo - slack && inner.hi <= outer.hi + slack);
            prop_assert!(inner.log_diameter <= outer.log_diameter + 1e-9);
        }

        #[test]
        fn affine_diameter_is_product(symbols in prop::collection::vec(0u8..2, 1..60)) {
            let map = BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.75, 1.0)]).unwrap();
            let w = Word::new(symbols);
            let expected: f64 = w.symbols().iter().map(|&a| map.domain(a as usize).length().ln()).sum();
            let c = cylinder(&map, &w).unwrap();
            prop_assert!(((c.log_diameter - expected) / expected).abs() < 1e-12);
        }

        #[test]
        fn itinerary_round_trip(which in 0usize..5, symbols in prop::collection::vec(0u8..2, 1..12)) {
            let map = &maps()[which];
            let w = Word::new(symbols);
            let x = project(map, &w).unwrap();
            let back = itinerary(map, x, w.len()).unwrap();
            // Skip orbits that pass close to a shared branch endpoint.
            let mut y = x;
            let mut near_boundary = false;
            for _ in 0..w.len() {
                near_boundary |= map.domains().iter().any(|d| (y - d.lo).abs() < 1e-9 || (y - d.hi).abs() < 1e-9);
                match map.step(y) { Some((_, next)) => y = next, None => break }
            }
            if !near_boundary {
                prop_assert_eq!(back, w);
            }
        }
    }
}
