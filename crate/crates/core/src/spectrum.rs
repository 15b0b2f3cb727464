//! Variational dimension formulas over finite-order Markov measures.
//!
//! The dimension of a level set `{φ_n/n → α}` is computed as
//! `sup { h(μ)/λ(μ) : Φ*(μ) = α, λ(μ) > 0 }`, the sup being taken over
//! order-`k` Markov measures. Kernels are parametrised row by row through
//! stick-breaking coordinates in `[0,1]^{m-1}`, the equality constraint is
//! enforced with a quadratic penalty whose weight doubles each round, and the
//! search is restarted from seeded Dirichlet draws. Results are reduced
//! deterministically, so serial and parallel runs agree.

use std::io::Write;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interval_maps::{
    convex_hull_2d, euclid, parabolic_hull, polygon_contains, BranchMap, ParabolicHull,
};
use crate::measures::{default_lyapunov_depth, LyapunovTable, MarkovMeasure};
use crate::optimize::NelderMead;
use crate::potentials::Potential;

/// Fekete horizon and tolerance for the parabolic hull.
const HULL_HORIZON: usize = 10_000;
const HULL_TOLERANCE: f64 = 1e-3;
/// Largest number of deterministic kernels tried as candidates.
const MAX_CORNERS: usize = 4096;
/// Objective value of points violating the Lyapunov floor.
const FLOOR_PENALTY: f64 = 1e3;
/// Starts whose exponent stays below this are degenerate.
const DEGENERATE_LAMBDA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Markov order `k` of the candidate measures.
    pub order: usize,
    pub starts: usize,
    pub penalty_weight: f64,
    pub penalty_factor: f64,
    pub penalty_rounds: usize,
    pub constraint_tolerance: f64,
    pub lambda_floor: f64,
    /// Cylinder depth of the Lyapunov table; defaults per map.
    pub lyapunov_depth: Option<usize>,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            order: 1,
            starts: 16,
            penalty_weight: 10.0,
            penalty_factor: 2.0,
            penalty_rounds: 30,
            constraint_tolerance: 1e-6,
            lambda_floor: 1e-6,
            lyapunov_depth: None,
            max_evals: 4000,
            seed: 0,
        }
    }
}

impl SpectrumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(invalid("at least one start is needed"));
        }
        if !(self.penalty_weight > 0.0) || !(self.penalty_factor > 1.0) || self.penalty_rounds == 0
        {
            return Err(invalid(
                "penalty schedule needs weight > 0, factor > 1 and rounds ≥ 1",
            ));
        }
        if !(self.constraint_tolerance > 0.0) || !(self.lambda_floor > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.lyapunov_depth == Some(0) {
            return Err(invalid("Lyapunov depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Interior,
    Endpoint,
    InParabolicHull,
    Infeasible,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Interior => "interior",
            Status::Endpoint => "endpoint",
            Status::InParabolicHull => "in_parabolic_hull",
            Status::Infeasible => "infeasible",
        })
    }
}

/// One evaluation of the variational formula.
///
/// `dim_value` is the dimension of the level set under the standing
/// assumption that some invariant measure has positive exponent.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumPoint {
    pub alpha: Vec<f64>,
    pub dim_value: f64,
    pub status: Status,
    /// Row-major kernel of the maximising measure.
    pub witness_kernel: Vec<f64>,
    #[serde(skip)]
    pub witness: Option<MarkovMeasure>,
    pub h: f64,
    pub lambda: f64,
    pub phi_star: Vec<f64>,
    /// `|Φ*(witness) − α|`.
    pub residual: f64,
}

impl SpectrumPoint {
    fn infeasible(alpha: &[f64]) -> Self {
        SpectrumPoint {
            alpha: alpha.to_vec(),
            dim_value: 0.0,
            status: Status::Infeasible,
            witness_kernel: Vec::new(),
            witness: None,
            h: f64::NAN,
            lambda: f64::NAN,
            phi_star: Vec::new(),
            residual: f64::NAN,
        }
    }
}

/// `L_Φ`: the compact convex set of values `Φ*(μ)`, approximated over
/// order-`k` Markov measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LPhi {
    /// `[min], [max]` for `d = 1`; a counter-clockwise polygon for `d = 2`;
    /// support points otherwise.
    pub vertices: Vec<Vec<f64>>,
}

impl LPhi {
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self.vertices.as_slice() {
            [a] if a.len() == 1 => Some((a[0], a[0])),
            [a, b] if a.len() == 1 => Some((a[0], b[0])),
            _ => None,
        }
    }

    pub fn contains(&self, alpha: &[f64], tol: f64) -> bool {
        match alpha.len() {
            1 => self
                .interval()
                .is_some_and(|(lo, hi)| alpha[0] >= lo - tol && alpha[0] <= hi + tol),
            2 => polygon_contains(&self.vertices, alpha, tol),
            _ => self.vertices.iter().any(|v| euclid(v, alpha) <= tol),
        }
    }

    /// Whether `alpha` lies within `tol` of the boundary (for `d ≤ 2`).
    pub fn on_boundary(&self, alpha: &[f64], tol: f64) -> bool {
        match alpha.len() {
            1 => self.interval().is_some_and(|(lo, hi)| {
                (alpha[0] - lo).abs() <= tol || (alpha[0] - hi).abs() <= tol
            }),
            2 => {
                let n = self.vertices.len();
                n < 3
                    || (0..n).any(|i| {
                        let a = &self.vertices[i];
                        let b = &self.vertices[(i + 1) % n];
                        polygon_contains(&[a.clone(), b.clone()], alpha, tol)
                    })
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
struct Eval {
    params: Vec<f64>,
    measure: MarkovMeasure,
    h: f64,
    lambda: f64,
    phi: Vec<f64>,
}

impl Eval {
    fn ratio(&self) -> f64 {
        self.h / self.lambda
    }

    fn residual(&self, alpha: &[f64]) -> f64 {
        euclid(&self.phi, alpha)
    }
}

/// Maximiser of `h/λ` over order-`k` Markov measures for a fixed map and
/// potential.
pub struct SpectrumSolver {
    map: BranchMap,
    potential: Potential,
    config: SpectrumConfig,
    lyapunov: LyapunovTable,
    hull: ParabolicHull,
    l_phi: OnceLock<LPhi>,
    hyperbolic: OnceLock<SpectrumPoint>,
}

/// Row-major kernel from stick-breaking coordinates.
pub fn kernel_from_params(params: &[f64], alphabet: usize) -> Vec<f64> {
    let mut kernel = Vec::with_capacity(params.len() / (alphabet - 1) * alphabet);
    for row in params.chunks(alphabet - 1) {
        let mut rest = 1.0;
        for &t in row {
            let p = rest * t.clamp(0.0, 1.0);
            kernel.push(p);
            rest -= p;
        }
        kernel.push(rest.max(0.0));
    }
    kernel
}

/// Stick-breaking coordinates of a row-major kernel.
pub fn params_from_kernel(kernel: &[f64], alphabet: usize) -> Vec<f64> {
    let mut params = Vec::with_capacity(kernel.len() / alphabet * (alphabet - 1));
    for row in kernel.chunks(alphabet) {
        let mut rest = 1.0;
        for &p in &row[..alphabet - 1] {
            params.push(if rest > 1e-300 {
                (p / rest).clamp(0.0, 1.0)
            } else {
                0.0
            });
            rest -= p;
        }
    }
    params
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

impl SpectrumSolver {
    pub fn new(map: &BranchMap, potential: &Potential, config: SpectrumConfig) -> Result<Self> {
        config.validate()?;
        if potential.alphabet() != map.branch_count() {
            return Err(invalid("potential alphabet does not match the map"));
        }
        map.branch_count()
            .checked_pow(config.order as u32)
            .filter(|&s| s * (map.branch_count() - 1) <= 256)
            .ok_or_else(|| {
                invalid(format!(
                    "order {} gives too many kernel parameters",
                    config.order
                ))
            })?;
        let depth = config
            .lyapunov_depth
            .unwrap_or_else(|| default_lyapunov_depth(map));
        let lyapunov = LyapunovTable::new(map, depth)?;
        let hull = parabolic_hull(map, potential, HULL_HORIZON, HULL_TOLERANCE)?;
        Ok(SpectrumSolver {
            map: map.clone(),
            potential: potential.clone(),
            config,
            lyapunov,
            hull,
            l_phi: OnceLock::new(),
            hyperbolic: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &SpectrumConfig {
        &self.config
    }

    pub fn parabolic_hull(&self) -> &ParabolicHull {
        &self.hull
    }

    fn alphabet(&self) -> usize {
        self.map.branch_count()
    }

    fn param_count(&self) -> usize {
        self.alphabet().pow(self.config.order as u32) * (self.alphabet() - 1)
    }

    fn evaluate(&self, params: &[f64]) -> Result<Eval> {
        let m = self.alphabet();
        let measure =
            MarkovMeasure::from_kernel(m, self.config.order, kernel_from_params(params, m))?;
        let masses = measure.word_masses(self.lyapunov.depth());
        let lambda = self.lyapunov.estimate_from_masses(&masses);
        let phi = self.potential.phi_star(&measure)?;
        Ok(Eval {
            params: params.to_vec(),
            h: measure.entropy(),
            lambda,
            phi,
            measure,
        })
    }

    /// Independent recomputation of `(h, λ, Φ*)` for a measure.
    pub fn measure_values(&self, mu: &MarkovMeasure) -> Result<(f64, f64, Vec<f64>)> {
        let lambda = self
            .lyapunov
            .estimate_from_masses(&mu.word_masses(self.lyapunov.depth()));
        Ok((mu.entropy(), lambda, self.potential.phi_star(mu)?))
    }

    fn start_points(&self, salt: u64) -> Vec<Vec<f64>> {
        let m = self.alphabet();
        let rows = self.param_count() / (m - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config
                .seed
                .wrapping_add(salt.wrapping_mul(0x9E37_79B9)),
        );
        let mut starts = vec![params_from_kernel(&vec![1.0 / m as f64; rows * m], m)];
        while starts.len() < self.config.starts {
            let kernel: Vec<f64> = (0..rows)
                .flat_map(|_| {
                    let g: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = g.iter().sum();
                    g.into_iter().map(move |x: f64| x / total)
                })
                .collect();
            starts.push(params_from_kernel(&kernel, m));
        }
        starts
    }

    /// Deterministic kernels (every row a unit vector).
    fn corners(&self) -> Vec<Vec<f64>> {
        let m = self.alphabet();
        let rows = self.param_count() / (m - 1);
        let count = (m as f64).powi(rows as i32);
        if count > MAX_CORNERS as f64 {
            return Vec::new();
        }
        (0..count as usize)
            .map(|mut idx| {
                let mut kernel = vec![0.0; rows * m];
                for r in 0..rows {
                    kernel[r * m + idx % m] = 1.0;
                    idx /= m;
                }
                params_from_kernel(&kernel, m)
            })
            .collect()
    }

    fn optimizer(&self) -> NelderMead {
        NelderMead {
            max_evals: self.config.max_evals,
            ..NelderMead::default()
        }
    }

    /// Minimises `objective` from every start in parallel and returns the
    /// evaluations in start order.
    fn multistart<F>(&self, salt: u64, objective: F) -> Vec<Result<Eval>>
    where
        F: Fn(&Eval) -> f64 + Sync,
    {
        let nm = self.optimizer();
        self.start_points(salt)
            .into_par_iter()
            .map(|x0| {
                let min = nm.minimize(
                    |x| match self.evaluate(x) {
                        Ok(e) => objective(&e),
                        Err(_) => f64::INFINITY,
                    },
                    &x0,
                );
                self.evaluate(&min.x)
            })
            .collect()
    }

    /// `L_Φ` over order-`k` Markov measures, including deterministic kernels.
    pub fn compute_l_phi(&self) -> Result<LPhi> {
        if let Some(l) = self.l_phi.get() {
            return Ok(l.clone());
        }
        let d = self.potential.dim();
        let directions: Vec<Vec<f64>> = match d {
            1 => vec![vec![1.0], vec![-1.0]],
            2 => (0..32)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / 32.0;
                    vec![t.cos(), t.sin()]
                })
                .collect(),
            _ => (0..2 * d)
                .map(|j| {
                    let mut u = vec![0.0; d];
                    u[j / 2] = if j % 2 == 0 { 1.0 } else { -1.0 };
                    u
                })
                .collect(),
        };
        let corners = self
            .corners()
            .iter()
            .filter_map(|c| self.evaluate(c).ok())
            .collect::<Vec<_>>();
        let mut points = Vec::new();
        for (i, u) in directions.iter().enumerate() {
            let dot = |phi: &[f64]| phi.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            let mut best: Option<Vec<f64>> = None;
            let mut best_val = f64::NEG_INFINITY;
            let runs = self.multistart(1000 + i as u64, |e| -dot(&e.phi));
            for e in runs.iter().flatten().chain(&corners) {
                let v = dot(&e.phi);
                if v > best_val {
                    best_val = v;
                    best = Some(e.phi.clone());
                }
            }
            points.push(best.ok_or_else(|| {
                Error::Optimizer(format!("every start failed for support direction {u:?}"))
            })?);
        }
        let vertices = match d {
            1 => {
                let (lo, hi) = (points[1][0], points[0][0]);
                if (hi - lo).abs() <= 1e-12 {
                    vec![vec![lo]]
                } else {
                    vec![vec![lo], vec![hi]]
                }
            }
            2 => convex_hull_2d(&points),
            _ => points,
        };
        let l = LPhi { vertices };
        let _ = self.l_phi.set(l.clone());
        Ok(l)
    }

    fn point_from(&self, alpha: &[f64], e: &Eval, status: Status) -> SpectrumPoint {
        SpectrumPoint {
            alpha: alpha.to_vec(),
            dim_value: e.ratio().clamp(0.0, 1.0),
            status,
            witness_kernel: kernel_from_params(&e.params, self.alphabet()),
            witness: Some(e.measure.clone()),
            h: e.h,
            lambda: e.lambda,
            phi_star: e.phi.clone(),
            residual: if alpha.is_empty() {
                0.0
            } else {
                e.residual(alpha)
            },
        }
    }

    /// Best candidate by ratio, ties broken by the lexicographic kernel.
    fn select<'a>(candidates: impl Iterator<Item = &'a Eval>) -> Option<&'a Eval> {
        candidates.fold(None, |best: Option<&Eval>, e| match best {
            None => Some(e),
            Some(b) => {
                let better = e.ratio() > b.ratio()
                    || (e.ratio() == b.ratio() && lexicographic(&e.params, &b.params).is_lt());
                Some(if better { e } else { b })
            }
        })
    }

    /// `sup h/λ` without constraint: the dimension of the hyperbolic part.
    pub fn hyperbolic_dimension(&self) -> Result<SpectrumPoint> {
        if let Some(p) = self.hyperbolic.get() {
            return Ok(p.clone());
        }
        let floor = self.config.lambda_floor;
        let runs = self.multistart(1, |e| {
            if e.lambda < floor {
                FLOOR_PENALTY + (floor - e.lambda)
            } else {
                -e.ratio()
            }
        });
        let corners: Vec<Eval> = self
            .corners()
            .iter()
            .filter_map(|c| self.evaluate(c).ok())
            .collect();
        let evals: Vec<&Eval> = runs.iter().flatten().chain(&corners).collect();
        let best =
            Self::select(evals.iter().copied().filter(|e| e.lambda >= floor)).ok_or_else(|| {
                Error::Optimizer(
                    "every start converged to a measure with vanishing exponent".into(),
                )
            })?;
        let point = self.point_from(&[], best, Status::Interior);
        let _ = self.hyperbolic.set(point.clone());
        Ok(point)
    }

    /// `dim Λ_α = sup { h/λ : Φ*(μ) = α, λ > 0 }`.
    pub fn dimension_spectrum(&self, alpha: &[f64]) -> Result<SpectrumPoint> {
        if alpha.len() != self.potential.dim() {
            return Err(invalid(format!(
                "α has {} coordinates, the potential has {}",
                alpha.len(),
                self.potential.dim()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(invalid("α must be finite"));
        }
        let tol = self.config.constraint_tolerance;
        if self.hull.contains(alpha, tol) {
            let mut p = self.hyperbolic_dimension()?;
            p.alpha = alpha.to_vec();
            p.status = Status::InParabolicHull;
            p.residual = euclid(&p.phi_star, alpha);
            return Ok(p);
        }
        let l = self.compute_l_phi()?;
        if !l.contains(alpha, tol) {
            return Ok(SpectrumPoint::infeasible(alpha));
        }
        let floor = self.config.lambda_floor;
        let nm = self.optimizer();
        let refine = NelderMead {
            initial_step: 0.02,
            ..nm.clone()
        };
        let runs: Vec<Result<Eval>> = self
            .start_points(2)
            .into_par_iter()
            .map(|x0| {
                let mut x = x0;
                let mut weight = self.config.penalty_weight;
                let mut last = self.evaluate(&x)?;
                for round in 0..self.config.penalty_rounds {
                    let objective = |e: &Eval| {
                        let c: f64 = e
                            .phi
                            .iter()
                            .zip(alpha)
                            .map(|(p, a)| (p - a) * (p - a))
                            .sum();
                        let base = if e.lambda < floor {
                            FLOOR_PENALTY + (floor - e.lambda)
                        } else {
                            -e.ratio()
                        };
                        base + weight * c
                    };
                    let opt = if round == 0 { &nm } else { &refine };
                    let min = opt.minimize(
                        |p| match self.evaluate(p) {
                            Ok(e) => objective(&e),
                            Err(_) => f64::INFINITY,
                        },
                        &x,
                    );
                    x = min.x;
                    last = self.evaluate(&x)?;
                    if last.residual(alpha) <= tol {
                        break;
                    }
                    weight *= self.config.penalty_factor;
                }
                Ok(last)
            })
            .collect();
        let corners: Vec<Eval> = self
            .corners()
            .iter()
            .filter_map(|c| self.evaluate(c).ok())
            .collect();
        let evals: Vec<&Eval> = runs.iter().flatten().chain(&corners).collect();
        let feasible = evals
            .iter()
            .copied()
            .filter(|e| e.residual(alpha) <= tol && e.lambda >= floor);
        let Some(best) = Self::select(feasible) else {
            if evals.iter().all(|e| e.lambda <= DEGENERATE_LAMBDA) {
                return Err(Error::Optimizer(
                    "every start converged to a measure with vanishing exponent".into(),
                ));
            }
            let closest = evals
                .iter()
                .map(|e| e.residual(alpha))
                .fold(f64::INFINITY, f64::min);
            return Err(Error::Optimizer(format!(
                "no start met the constraint within {tol:e}; closest residual {closest:e}"
            )));
        };
        let status = if l.on_boundary(alpha, tol) {
            Status::Endpoint
        } else {
            Status::Interior
        };
        Ok(self.point_from(alpha, best, status))
    }

    /// Spectrum over a grid of scalar `α`, evaluated in parallel; per-point
    /// failures are kept in place.
    pub fn spectrum_curve(&self, alphas: &[f64]) -> Result<SpectrumCurve> {
        if self.potential.dim() != 1 {
            return Err(invalid("spectrum curves need a scalar potential"));
        }
        let points: Vec<CurvePoint> = alphas
            .par_iter()
            .map(|&a| CurvePoint {
                alpha: a,
                result: self.dimension_spectrum(&[a]).map_err(|e| e.to_string()),
            })
            .collect();
        let concavity_flags = concavity_flags(&points, 1e-4);
        Ok(SpectrumCurve {
            points,
            concavity_flags,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub alpha: f64,
    pub result: std::result::Result<SpectrumPoint, String>,
}

#[derive(Debug, Clone)]
pub struct SpectrumCurve {
    pub points: Vec<CurvePoint>,
    /// Grid values whose discrete second difference breaks concavity.
    pub concavity_flags: Vec<f64>,
}

fn concavity_flags(points: &[CurvePoint], tol: f64) -> Vec<f64> {
    let interior: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| match &p.result {
            Ok(s) if s.status == Status::Interior => Some((p.alpha, s.dim_value)),
            _ => None,
        })
        .collect();
    interior
        .windows(3)
        .filter_map(|w| {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let (x2, y2) = w[2];
            let chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0);
            (y1 < chord - tol).then_some(x1)
        })
        .collect()
}

impl SpectrumCurve {
    /// CSV with columns `alpha,dim,status,witness,h,lambda,residual,error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "alpha", "dim", "status", "witness", "h", "lambda", "residual", "error",
        ])?;
        for p in &self.points {
            match &p.result {
                Ok(s) => {
                    let witness = s
                        .witness_kernel
                        .iter()
                        .map(|x| format!("{x:.9}"))
                        .collect::<Vec<_>>()
                        .join(" ");
                    w.write_record([
                        p.alpha.to_string(),
                        format!("{:.9}", s.dim_value),
                        s.status.to_string(),
                        witness,
                        format!("{:.9}", s.h),
                        format!("{:.9}", s.lambda),
                        format!("{:.3e}", s.residual),
                        String::new(),
                    ])?;
                }
                Err(e) => w.write_record([
                    p.alpha.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Convenience wrapper around [`SpectrumSolver::dimension_spectrum`].
pub fn dimension_spectrum(
    map: &BranchMap,
    pot: &Potential,
    alpha: &[f64],
    config: SpectrumConfig,
) -> Result<SpectrumPoint> {
    SpectrumSolver::new(map, pot, config)?.dimension_spectrum(alpha)
}

/// Convenience wrapper around [`SpectrumSolver::hyperbolic_dimension`].
pub fn hyperbolic_dimension(map: &BranchMap, config: SpectrumConfig) -> Result<SpectrumPoint> {
    let zero = Potential::constant_potential(map.branch_count(), &[0.0])?;
    SpectrumSolver::new(map, &zero, config)?.hyperbolic_dimension()
}

/// Convenience wrapper around [`SpectrumSolver::compute_l_phi`].
pub fn compute_l_phi(map: &BranchMap, pot: &Potential, config: SpectrumConfig) -> Result<LPhi> {
    SpectrumSolver::new(map, pot, config)?.compute_l_phi()
}

/// Root of `Σ |I_i|^t = 1` for a linear map.
pub fn moran_root(map: &BranchMap) -> Result<f64> {
    if !map.is_affine() {
        return Err(Error::Unsupported(
            "the Moran equation needs a linear map".into(),
        ));
    }
    let lens: Vec<f64> = map.domains().iter().map(|d| d.length()).collect();
    let f = |t: f64| lens.iter().map(|l| l.powf(t)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(hi) > 0.0 {
        return Err(Error::Numeric("branch lengths sum above 1".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::Interval;
    use crate::symbolic::Word;

    const LN2: f64 = std::f64::consts::LN_2;

    fn doubling() -> BranchMap {
        BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)]).unwrap()
    }

    fn digit() -> Potential {
        Potential::indicator(2, &Word::from_digits(&[1])).unwrap()
    }

    fn binary_entropy(p: f64) -> f64 {
        let xl = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
        xl(p) + xl(1.0 - p)
    }

    fn cfg(order: usize) -> SpectrumConfig {
        SpectrumConfig {
            order,
            starts: 6,
            ..SpectrumConfig::default()
        }
    }

    /// Oracle: best Bernoulli(p) on a grid of step 1e-4 with |p − α| small.
    fn bernoulli_grid(alpha: f64) -> f64 {
        (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .filter(|p| (p - alpha).abs() < 5e-5)
            .map(|p| binary_entropy(p) / LN2)
            .fold(0.0, f64::max)
    }

    #[test]
    fn stick_breaking_round_trip() {
        let kernel = [0.2, 0.3, 0.5, 1.0, 0.0, 0.0];
        let params = params_from_kernel(&kernel, 3);
        let back = kernel_from_params(&params, 3);
        for (a, b) in kernel.iter().zip(back) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn digit_frequency_spectrum() {
        let solver = SpectrumSolver::new(&doubling(), &digit(), cfg(0)).unwrap();
        let l = solver.compute_l_phi().unwrap();
        let (lo, hi) = l.interval().unwrap();
        assert!(lo.abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        let half = solver.dimension_spectrum(&[0.5]).unwrap();
        assert!((half.dim_value - 1.0).abs() < 1e-6);
        assert!((half.witness_kernel[0] - 0.5).abs() < 1e-4);
        let p = solver.dimension_spectrum(&[0.2]).unwrap();
        assert!((p.dim_value - 0.721928).abs() < 1e-5);
        assert!(p.dim_value >= bernoulli_grid(0.2) - 1e-6);
        assert!(p.residual <= 1e-6);
        assert_eq!(p.status, Status::Interior);
        assert_eq!(
            solver.dimension_spectrum(&[1.2]).unwrap().status,
            Status::Infeasible
        );
        let end = solver.dimension_spectrum(&[0.0]).unwrap();
        assert_eq!(end.status, Status::Endpoint);
        // Feasible measures have p ≤ 1e-6, so the value is small but positive.
        assert!(end.dim_value.abs() < 1e-4);
    }

    #[test]
    fn witness_values_recompute() {
        let solver = SpectrumSolver::new(&doubling(), &digit(), cfg(1)).unwrap();
        let p = solver.dimension_spectrum(&[0.3]).unwrap();
        let mu = p.witness.clone().unwrap();
        let (h, lambda, phi) = solver.measure_values(&mu).unwrap();
        assert!((h - p.h).abs() < 1e-8 && (lambda - p.lambda).abs() < 1e-8);
        assert!((phi[0] - p.phi_star[0]).abs() < 1e-8);
        assert!((mu.entropy() - binary_entropy(0.3)).abs() < 1e-4);
    }

    #[test]
    fn pair_potential_l_phi() {
        let f = Potential::indicator(2, &Word::from_digits(&[1, 1])).unwrap();
        let l = compute_l_phi(&doubling(), &f, cfg(1)).unwrap();
        let (lo, hi) = l.interval().unwrap();
        assert!(lo.abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_potential_has_one_point() {
        let c = Potential::constant_potential(2, &[0.4]).unwrap();
        let solver = SpectrumSolver::new(&doubling(), &c, cfg(0)).unwrap();
        let vertices = solver.compute_l_phi().unwrap().vertices;
        assert_eq!(vertices.len(), 1);
        assert!((vertices[0][0] - 0.4).abs() < 1e-12);
        let p = solver.dimension_spectrum(&[0.4]).unwrap();
        assert_eq!(p.status, Status::Endpoint);
        assert!((p.dim_value - 1.0).abs() < 1e-6);
        assert_eq!(
            solver.dimension_spectrum(&[0.5]).unwrap().status,
            Status::Infeasible
        );
    }

    #[test]
    fn hyperbolic_dimension_of_linear_maps() {
        let cantor = BranchMap::linear(vec![
            Interval::new(0.0, 1.0 / 3.0),
            Interval::new(2.0 / 3.0, 1.0),
        ])
        .unwrap();
        let p = hyperbolic_dimension(&cantor, cfg(1)).unwrap();
        assert!((p.dim_value - LN2 / 3f64.ln()).abs() < 1e-6);
        let skew =
            BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.75, 1.0)]).unwrap();
        let root = moran_root(&skew).unwrap();
        assert!((0.5f64.powf(root) + 0.25f64.powf(root) - 1.0).abs() < 1e-12);
        assert!((root - 0.6942).abs() < 1e-4);
        let p = hyperbolic_dimension(&skew, cfg(1)).unwrap();
        assert!((p.dim_value - root).abs() < 1e-6);
        // Witness is the Bernoulli measure with weights |I_i|^t.
        assert!((p.witness_kernel[0] - 0.5f64.powf(root)).abs() < 1e-3);
        assert!((hyperbolic_dimension(&doubling(), cfg(0)).unwrap().dim_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn refinement_in_the_order() {
        let skew =
            BranchMap::linear(vec![Interval::new(0.0, 0.5), Interval::new(0.75, 1.0)]).unwrap();
        let k0 = hyperbolic_dimension(&skew, cfg(0)).unwrap().dim_value;
        let k1 = hyperbolic_dimension(&skew, cfg(1)).unwrap().dim_value;
        assert!(k1 >= k0 - 1e-8);
    }

    #[test]
    fn scaling_the_potential_keeps_the_witness() {
        let f = digit();
        let two = Potential::from_additive(2, 1, 1, |u| {
            vec![if u.symbols()[0] == 0 { 2.0 } else { 0.0 }]
        })
        .unwrap();
        let a = dimension_spectrum(&doubling(), &f, &[0.3], cfg(0)).unwrap();
        let b = dimension_spectrum(&doubling(), &two, &[0.6], cfg(0)).unwrap();
        assert!((a.witness_kernel[0] - b.witness_kernel[0]).abs() < 1e-5);
        assert!((a.dim_value - b.dim_value).abs() < 1e-5);
    }

    #[test]
    fn parabolic_hull_point_takes_full_dimension() {
        let mp = BranchMap::manneville_pomeau(1.0).unwrap();
        let solver = SpectrumSolver::new(&mp, &digit(), cfg(1)).unwrap();
        let hyper = solver.hyperbolic_dimension().unwrap();
        let p = solver.dimension_spectrum(&[1.0]).unwrap();
        assert_eq!(p.status, Status::InParabolicHull);
        assert_eq!(p.dim_value, hyper.dim_value);
        assert!(hyper.dim_value > 0.9 && hyper.dim_value <= 1.0);
    }

    #[test]
    fn symmetric_curve_with_csv() {
        let solver = SpectrumSolver::new(&doubling(), &digit(), cfg(0)).unwrap();
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let curve = solver.spectrum_curve(&grid).unwrap();
        let dims: Vec<f64> = curve
            .points
            .iter()
            .map(|p| p.result.as_ref().unwrap().dim_value)
            .collect();
        for i in 0..9 {
            assert!((dims[i] - dims[8 - i]).abs() < 1e-3);
        }
        assert!(curve.concavity_flags.is_empty());
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("alpha,dim,status,witness,h,lambda,residual,error"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let solver = SpectrumSolver::new(&doubling(), &digit(), cfg(1)).unwrap();
        let parallel = solver.dimension_spectrum(&[0.35]).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| {
            SpectrumSolver::new(&doubling(), &digit(), cfg(1))
                .unwrap()
                .dimension_spectrum(&[0.35])
                .unwrap()
        });
        assert_eq!(parallel.dim_value.to_bits(), serial.dim_value.to_bits());
        assert_eq!(parallel.witness_kernel, serial.witness_kernel);
    }

    #[test]
    fn invalid_inputs() {
        let solver = SpectrumSolver::new(&doubling(), &digit(), cfg(0)).unwrap();
        assert!(solver.dimension_spectrum(&[0.1, 0.2]).is_err());
        assert!(solver.dimension_spectrum(&[f64::NAN]).is_err());
        let bad = SpectrumConfig {
            starts: 0,
            ..SpectrumConfig::default()
        };
        assert!(SpectrumSolver::new(&doubling(), &digit(), bad).is_err());
    }
}
