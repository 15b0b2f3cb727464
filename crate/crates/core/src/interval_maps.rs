//! Piecewise expanding interval maps with full branches.
//!
//! A [`BranchMap`] is a map `T: I_1 ∪ … ∪ I_m → [0,1]` whose restriction to
//! each `I_i` is a C¹ bijection onto `[0,1]` with exactly one fixed point.
//! Fixed points with `|T'| = 1` are *parabolic*; they are the source of
//! non-uniform hyperbolicity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::potentials::Potential;

/// Closed subinterval `[lo, hi]` of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Threshold below which a fixed point is classified as parabolic.
pub const PARABOLIC_TOLERANCE: f64 = 1e-9;

const BISECTION_WIDTH: f64 = 1e-13;
const NEWTON_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Linear,
    MannevillePomeau { s: f64 },
    Farey,
}

/// Structured description of a builtin map, used in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapDescriptor {
    Linear { domains: Vec<[f64; 2]> },
    MannevillePomeau { s: f64 },
    Farey,
}

impl MapDescriptor {
    pub fn build(&self) -> Result<BranchMap> {
        match self {
            MapDescriptor::Linear { domains } => {
                BranchMap::linear(domains.iter().map(|d| Interval::new(d[0], d[1])).collect())
            }
            MapDescriptor::MannevillePomeau { s } => BranchMap::manneville_pomeau(*s),
            MapDescriptor::Farey => Ok(BranchMap::farey()),
        }
    }
}

/// Piecewise expanding map with full branches.
///
/// Immutable after construction and cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMap {
    kind: Kind,
    domains: Vec<Interval>,
    fixed_points: Vec<f64>,
    parabolic: Vec<usize>,
    caveat: Option<String>,
}

impl BranchMap {
    /// Affine branches `T(x) = (x - lo_i) / |I_i|` on the given domains.
    pub fn linear(mut domains: Vec<Interval>) -> Result<Self> {
        if domains.len() < 2 {
            return Err(invalid("a branch map needs at least two branches"));
        }
        if domains.len() > 9 {
            return Err(invalid("at most nine branches are supported"));
        }
        for d in &domains {
            if !(d.lo.is_finite() && d.hi.is_finite()) || d.lo < 0.0 || d.hi > 1.0 {
                return Err(invalid(format!(
                    "domain [{}, {}] is not inside [0,1]",
                    d.lo, d.hi
                )));
            }
            if d.hi - d.lo <= 0.0 {
                return Err(invalid(format!(
                    "domain [{}, {}] is degenerate",
                    d.lo, d.hi
                )));
            }
        }
        domains.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for pair in domains.windows(2) {
            if pair[0].hi > pair[1].lo {
                return Err(invalid(format!(
                    "domains [{}, {}] and [{}, {}] overlap",
                    pair[0].lo, pair[0].hi, pair[1].lo, pair[1].hi
                )));
            }
        }
        let fixed_points = domains
            .iter()
            .map(|d| d.lo / (1.0 - d.length()))
            .collect::<Vec<_>>();
        Ok(Self::assemble(Kind::Linear, domains, fixed_points, None))
    }

    /// Two-branch Manneville–Pomeau map: `x(1 + 2^s x^s)` on `[0, 1/2]` and
    /// `2x - 1` on `[1/2, 1]`. The fixed point 0 is parabolic.
    pub fn manneville_pomeau(s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid(format!(
                "Manneville-Pomeau exponent must be positive, got {s}"
            )));
        }
        let domains = vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)];
        Ok(Self::assemble(
            Kind::MannevillePomeau { s },
            domains,
            vec![0.0, 1.0],
            None,
        ))
    }

    /// Farey map: `x/(1-x)` on `[0, 1/2]` and `(1-x)/x` on `[1/2, 1]`.
    ///
    /// Carries a caveat: `|T'(1)| = 1` although 1 is not a fixed point.
    pub fn farey() -> Self {
        let domains = vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)];
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let caveat = "|T'(1)| = 1 at the non-fixed point 1; expansion fails there".to_string();
        Self::assemble(Kind::Farey, domains, vec![0.0, golden], Some(caveat))
    }

    fn assemble(
        kind: Kind,
        domains: Vec<Interval>,
        fixed_points: Vec<f64>,
        caveat: Option<String>,
    ) -> Self {
        let mut map = BranchMap {
            kind,
            domains,
            fixed_points,
            parabolic: Vec::new(),
            caveat,
        };
        map.parabolic = (0..map.branch_count())
            .filter(|&i| map.derivative(i, map.fixed_points[i]).abs() < 1.0 + PARABOLIC_TOLERANCE)
            .collect();
        map
    }

    pub fn descriptor(&self) -> MapDescriptor {
        match self.kind {
            Kind::Linear => MapDescriptor::Linear {
                domains: self.domains.iter().map(|d| [d.lo, d.hi]).collect(),
            },
            Kind::MannevillePomeau { s } => MapDescriptor::MannevillePomeau { s },
            Kind::Farey => MapDescriptor::Farey,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            Kind::Linear => "linear".into(),
            Kind::MannevillePomeau { s } => format!("manneville_pomeau(s={s})"),
            Kind::Farey => "farey".into(),
        }
    }

    /// Number of branches, i.e. the alphabet size.
    pub fn branch_count(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[Interval] {
        &self.domains
    }

    pub fn domain(&self, branch: usize) -> Interval {
        self.domains[branch]
    }

    /// True when every branch is affine.
    pub fn is_affine(&self) -> bool {
        matches!(self.kind, Kind::Linear)
    }

    /// Orientation of branch `i`.
    pub fn is_increasing(&self, branch: usize) -> bool {
        !matches!(self.kind, Kind::Farey if branch == 1)
    }

    pub fn all_increasing(&self) -> bool {
        (0..self.branch_count()).all(|i| self.is_increasing(i))
    }

    pub fn fixed_points(&self) -> &[f64] {
        &self.fixed_points
    }

    /// Branch indices whose fixed point is parabolic.
    pub fn parabolic_set(&self) -> &[usize] {
        &self.parabolic
    }

    pub fn caveat(&self) -> Option<&str> {
        self.caveat.as_deref()
    }

    /// `T|_{I_i}(x)`.
    pub fn forward(&self, branch: usize, x: f64) -> f64 {
        match self.kind {
            Kind::Linear => {
                let d = self.domains[branch];
                (x - d.lo) / d.length()
            }
            Kind::MannevillePomeau { s } => {
                if branch == 0 {
                    x * (1.0 + (2.0 * x).powf(s))
                } else {
                    2.0 * x - 1.0
                }
            }
            Kind::Farey => {
                if branch == 0 {
                    x / (1.0 - x)
                } else {
                    (1.0 - x) / x
                }
            }
        }
    }

    /// Signed derivative of branch `i` at `x`.
    pub fn derivative(&self, branch: usize, x: f64) -> f64 {
        match self.kind {
            Kind::Linear => 1.0 / self.domains[branch].length(),
            Kind::MannevillePomeau { s } => {
                if branch == 0 {
                    1.0 + (1.0 + s) * (2.0 * x).powf(s)
                } else {
                    2.0
                }
            }
            Kind::Farey => {
                if branch == 0 {
                    1.0 / ((1.0 - x) * (1.0 - x))
                } else {
                    -1.0 / (x * x)
                }
            }
        }
    }

    /// `ln |T'(x)|` on branch `i`.
    pub fn log_derivative(&self, branch: usize, x: f64) -> f64 {
        self.derivative(branch, x).abs().ln()
    }

    /// Minimum and maximum of `ln |T'|` over `[lo, hi] ⊂ I_i`.
    ///
    /// `|T'|` is monotone on every builtin branch, so the extremes sit at the
    /// endpoints.
    pub fn log_derivative_range(&self, branch: usize, lo: f64, hi: f64) -> (f64, f64) {
        let a = self.log_derivative(branch, lo);
        let b = self.log_derivative(branch, hi);
        (a.min(b), a.max(b))
    }

    /// `sup ln |T'|` over all branch domains.
    pub fn sup_log_derivative(&self) -> f64 {
        (0..self.branch_count())
            .map(|i| {
                let d = self.domains[i];
                self.log_derivative_range(i, d.lo, d.hi).1
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Inverse branch `T_i: [0,1] → I_i`.
    pub fn inverse(&self, branch: usize, y: f64) -> Result<f64> {
        let y = y.clamp(0.0, 1.0);
        match self.kind {
            Kind::Linear => {
                let d = self.domains[branch];
                Ok(d.lo + y * d.length())
            }
            Kind::MannevillePomeau { .. } => {
                if branch == 1 {
                    return Ok(0.5 * (y + 1.0));
                }
                self.solve_branch(0, y, 0.0, y.min(0.5))
            }
            Kind::Farey => Ok(if branch == 0 {
                y / (1.0 + y)
            } else {
                1.0 / (1.0 + y)
            }),
        }
    }

    // Bisection to width 1e-13 on an increasing branch, then Newton polish.
    fn solve_branch(&self, branch: usize, y: f64, lo: f64, hi: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(lo);
        }
        let (mut a, mut b) = (lo, hi);
        if self.forward(branch, a) > y || self.forward(branch, b) < y {
            return Err(Error::RootFinding { branch, depth: 0 });
        }
        while b - a > BISECTION_WIDTH {
            let mid = 0.5 * (a + b);
            if self.forward(branch, mid) < y {
                a = mid;
            } else {
                b = mid;
            }
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..NEWTON_STEPS {
            let residual = self.forward(branch, x) - y;
            if residual == 0.0 {
                break;
            }
            let next = x - residual / self.derivative(branch, x);
            if !(next >= lo && next <= hi) {
                break;
            }
            if (self.forward(branch, next) - y).abs() >= residual.abs() {
                break;
            }
            x = next;
        }
        if !x.is_finite() {
            return Err(Error::RootFinding { branch, depth: 0 });
        }
        Ok(x)
    }

    /// Branch containing `x`, preferring the left branch at shared endpoints.
    pub fn branch_of(&self, x: f64) -> Option<usize> {
        self.domains.iter().position(|d| d.contains(x))
    }

    /// One step of the dynamics: `(branch, T(x))`, or `None` if `x` lies in a gap.
    pub fn step(&self, x: f64) -> Option<(usize, f64)> {
        let i = self.branch_of(x)?;
        Some((i, self.forward(i, x).clamp(0.0, 1.0)))
    }

    /// Checks the structural invariants on a grid of `samples` points per branch
    /// and returns the worst inverse residual `|T(T_i(y)) - y|`.
    pub fn max_inverse_residual(&self, samples: usize) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.branch_count() {
            for k in 0..=samples {
                let y = k as f64 / samples as f64;
                let x = self.inverse(i, y)?;
                worst = worst.max((self.forward(i, x) - y).abs());
            }
        }
        Ok(worst)
    }
}

/// Convex hull of the limits `lim φ_n(x_j)/n` over parabolic fixed points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParabolicHull {
    /// One limit vector per parabolic fixed point.
    pub generator_points: Vec<Vec<f64>>,
    /// Hull vertices: `[min, max]` for `d = 1`, a counter-clockwise polygon
    /// for `d = 2`, the deduplicated generators otherwise.
    pub vertices: Vec<Vec<f64>>,
    /// Width of the convergence bracket for each generator.
    pub bracket_widths: Vec<f64>,
}

impl ParabolicHull {
    pub fn empty() -> Self {
        ParabolicHull {
            generator_points: Vec::new(),
            vertices: Vec::new(),
            bracket_widths: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.generator_points.is_empty()
    }

    /// For `d = 1`, the hull as an interval.
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self.vertices.as_slice() {
            [a] if a.len() == 1 => Some((a[0], a[0])),
            [a, b] if a.len() == 1 => Some((a[0], b[0])),
            _ => None,
        }
    }

    /// Membership up to `tol` (Euclidean distance for `d ≤ 2`).
    pub fn contains(&self, alpha: &[f64], tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        match alpha.len() {
            1 => {
                let (lo, hi) = self.interval().expect("d = 1 hull is an interval");
                alpha[0] >= lo - tol && alpha[0] <= hi + tol
            }
            2 => polygon_contains(&self.vertices, alpha, tol),
            _ => self.vertices.iter().any(|v| euclid(v, alpha) <= tol),
        }
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return euclid(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    euclid(p, &[a[0] + t * dx, a[1] + t * dy])
}

pub(crate) fn polygon_contains(vertices: &[Vec<f64>], p: &[f64], tol: f64) -> bool {
    match vertices.len() {
        0 => false,
        1 => euclid(&vertices[0], p) <= tol,
        2 => segment_distance(p, &vertices[0], &vertices[1]) <= tol,
        n => {
            let inside = (0..n).all(|i| {
                let a = &vertices[i];
                let b = &vertices[(i + 1) % n];
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
            });
            inside
                || (0..n).any(|i| segment_distance(p, &vertices[i], &vertices[(i + 1) % n]) <= tol)
        }
    }
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub(crate) fn convex_hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64], a: &[f64], b: &[f64]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<Vec<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<Vec<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Estimates `lim φ_n(x_j)/n` at each parabolic fixed point along the fixed
/// orbit `j^∞` and returns the convex hull of the limits.
///
/// Convergence is certified by the Fekete bracket
/// `max_m (φ_m − C)/m ≤ lim ≤ min_m (φ_m + C)/m` over `m ≤ n_limit`; a bracket
/// wider than `tolerance` in any coordinate is a [`Error::NonConvergence`].
pub fn parabolic_hull(
    map: &BranchMap,
    potential: &Potential,
    n_limit: usize,
    tolerance: f64,
) -> Result<ParabolicHull> {
    if map.parabolic_set().is_empty() {
        return Ok(ParabolicHull::empty());
    }
    if n_limit == 0 {
        return Err(invalid("n_limit must be positive"));
    }
    if potential.alphabet() != map.branch_count() {
        return Err(invalid("potential alphabet does not match the map"));
    }
    let d = potential.dim();
    let c = potential.constant();
    let mut generators = Vec::new();
    let mut widths = Vec::new();
    for &j in map.parabolic_set() {
        let mut lower = vec![f64::NEG_INFINITY; d];
        let mut upper = vec![f64::INFINITY; d];
        for m in 1..=n_limit {
            let value = potential.fixed_orbit_sum(j as u8, m)?;
            for k in 0..d {
                lower[k] = lower[k].max((value[k] - c[k]) / m as f64);
                upper[k] = upper[k].min((value[k] + c[k]) / m as f64);
            }
        }
        let mut width = 0.0f64;
        for k in 0..d {
            let w = upper[k] - lower[k];
            if w < -1e-12 {
                return Err(Error::InvertedBracket {
                    lower: lower[k],
                    upper: upper[k],
                });
            }
            if w > tolerance {
                return Err(Error::NonConvergence {
                    lower: lower[k],
                    upper: upper[k],
                    tolerance,
                });
            }
            width = width.max(w);
        }
        generators.push(
            (0..d)
                .map(|k| 0.5 * (lower[k] + upper[k]))
                .collect::<Vec<_>>(),
        );
        widths.push(width);
    }
    let vertices = match d {
        1 => {
            let lo = generators
                .iter()
                .map(|g| g[0])
                .fold(f64::INFINITY, f64::min);
            let hi = generators
                .iter()
                .map(|g| g[0])
                .fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                vec![vec![lo]]
            } else {
                vec![vec![lo], vec![hi]]
            }
        }
        2 => convex_hull_2d(&generators),
        _ => {
            let mut v = generators.clone();
            v.dedup();
            v
        }
    };
    Ok(ParabolicHull {
        generator_points: generators,
        vertices,
        bracket_widths: widths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn doubling_map_slopes_and_fixed_points() {
        let map = doubling();
        assert_eq!(map.derivative(0, 0.1), 2.0);
        assert_eq!(map.derivative(1, 0.9), 2.0);
        assert_eq!(map.fixed_points(), &[0.0, 1.0]);
        assert!(map.parabolic_set().is_empty());
    }

    #[test]
    fn cantor_system_slopes() {
        let map = cantor();
        for i in 0..2 {
            assert!((map.derivative(i, 0.5) - 3.0).abs() < 1e-12);
        }
        assert!((map.fixed_points()[1] - 1.0).abs() < 1e-12);
        assert!(map.branch_of(0.5).is_none());
    }

    #[test]
    fn overlapping_domains_rejected() {
        let err = BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.4, 1.0)]);
        assert!(matches!(err, Err(Error::Validation(_))));
        let degenerate = BranchMap::linear(vec![Interval::new(0.0, 0.0), Interval::new(0.4, 1.0)]);
        assert!(degenerate.is_err());
        assert!(BranchMap::linear(vec![Interval::new(0.0, 1.0)]).is_err());
    }

    #[test]
    fn full_branches_map_endpoints_to_boundary() {
        for map in [
            doubling(),
            cantor(),
            BranchMap::manneville_pomeau(1.0).unwrap(),
            BranchMap::manneville_pomeau(0.5).unwrap(),
            BranchMap::farey(),
        ] {
            for i in 0..map.branch_count() {
                let d = map.domain(i);
                let mut ends = [map.forward(i, d.lo), map.forward(i, d.hi)];
                ends.sort_by(f64::total_cmp);
                assert!(ends[0].abs() < 1e-12, "{}", map.name());
                assert!((ends[1] - 1.0).abs() < 1e-12, "{}", map.name());
            }
        }
    }

    #[test]
    fn manneville_pomeau_full_branch_and_parabolic_point() {
        let map = BranchMap::manneville_pomeau(1.0).unwrap();
        assert_eq!(map.forward(0, 0.5), 1.0);
        assert_eq!(map.derivative(0, 0.0), 1.0);
        assert_eq!(map.parabolic_set(), &[0]);
        assert!(BranchMap::manneville_pomeau(0.0).is_err());
        assert!(BranchMap::manneville_pomeau(-1.0).is_err());
    }

    // Independent oracle: plain bisection to machine precision.
    fn bisect(f: impl Fn(f64) -> f64, y: f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) < y {
                a = m
            } else {
                b = m
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn manneville_pomeau_inverse_matches_bisection_oracle() {
        let s = 0.5;
        let map = BranchMap::manneville_pomeau(s).unwrap();
        let x = map.inverse(0, 0.3).unwrap();
        assert!((map.forward(0, x) - 0.3).abs() < 1e-10);
        let oracle = bisect(|t| t * (1.0 + (2.0 * t).powf(s)), 0.3, 0.0, 0.5);
        assert!((x - oracle).abs() < 1e-12);
    }

    #[test]
    fn farey_fixed_point_and_caveat() {
        let map = BranchMap::farey();
        assert_eq!(map.forward(0, 0.5), 1.0);
        assert_eq!(map.forward(1, 0.5), 1.0);
        let x = map.fixed_points()[1];
        assert!((x - 0.618034).abs() < 1e-6);
        assert!((map.forward(1, x) - x).abs() < 1e-12);
        assert!((map.derivative(1, x).abs() - 2.618034).abs() < 1e-6);
        assert_eq!(map.derivative(1, 1.0).abs(), 1.0);
        assert!(map.caveat().is_some());
        assert_eq!(map.parabolic_set(), &[0]);
        assert!(!map.is_increasing(1));
    }

    #[test]
    fn inverse_branches_are_accurate_on_a_grid() {
        for map in [
            doubling(),
            cantor(),
            BranchMap::manneville_pomeau(1.0).unwrap(),
            BranchMap::manneville_pomeau(0.5).unwrap(),
            BranchMap::manneville_pomeau(2.0).unwrap(),
            BranchMap::farey(),
        ] {
            assert!(
                map.max_inverse_residual(1000).unwrap() < 1e-10,
                "{}",
                map.name()
            );
        }
    }

    #[test]
    fn expansion_away_from_fixed_points() {
        for map in [
            doubling(),
            cantor(),
            BranchMap::manneville_pomeau(0.5).unwrap(),
        ] {
            for i in 0..map.branch_count() {
                let d = map.domain(i);
                for k in 1..100 {
                    let x = d.lo + d.length() * k as f64 / 100.0;
                    if (x - map.fixed_points()[i]).abs() > 1e-9 {
                        assert!(map.derivative(i, x).abs() > 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_slope_is_reciprocal_width() {
        let map =
            BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.75, 1.0)]).unwrap();
        assert_eq!(map.derivative(0, 0.2), 2.0);
        assert_eq!(map.derivative(1, 0.8), 4.0);
        assert!(map.parabolic_set().is_empty());
    }

    #[test]
    fn descriptor_round_trip() {
        for map in [
            cantor(),
            BranchMap::manneville_pomeau(0.5).unwrap(),
            BranchMap::farey(),
        ] {
            let text = toml::to_string(&map.descriptor()).unwrap();
            let back: MapDescriptor = toml::from_str(&text).unwrap();
            assert_eq!(back.build().unwrap(), map);
        }
    }

    #[test]
    fn hull_membership() {
        let hull = ParabolicHull {
            generator_points: vec![vec![0.0], vec![1.0]],
            vertices: vec![vec![0.0], vec![1.0]],
            bracket_widths: vec![0.0, 0.0],
        };
        assert_eq!(hull.interval(), Some((0.0, 1.0)));
        assert!(hull.contains(&[0.5], 0.0));
        assert!(!hull.contains(&[1.5], 1e-9));
        let square = convex_hull_2d(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ]);
        assert_eq!(square.len(), 4);
        assert!(polygon_contains(&square, &[0.3, 0.7], 0.0));
        assert!(!polygon_contains(&square, &[1.3, 0.7], 1e-9));
    }
}
