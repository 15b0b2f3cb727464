//! Derivative-free minimisation on the unit box `[0,1]^n`.

/// Nelder–Mead simplex search; every trial point is clamped into the box.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the simplex spread in function value falls below this.
    pub ftol: f64,
    /// ... and its spread in every coordinate falls below this.
    pub xtol: f64,
    pub initial_step: f64,
    /// Rebuild the simplex around the best point this many times.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 4000,
            ftol: 1e-14,
            xtol: 1e-10,
            initial_step: 0.15,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) };
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut best = x0.to_vec();
        clamp(&mut best);
        let mut evals = 0;
        let mut value = f(&best);
        evals += 1;
        let mut converged = false;
        let mut step = self.initial_step;
        for _ in 0..=self.restarts {
            let (x, v, used, ok) =
                self.run(&mut f, &best, step, self.max_evals.saturating_sub(evals));
            evals += used;
            let improved = v < value - self.ftol;
            if v <= value {
                best = x;
                value = v;
            }
            converged = ok;
            if !improved || evals >= self.max_evals {
                break;
            }
            step *= 0.5;
        }
        Minimum {
            x: best,
            value,
            evals,
            converged,
        }
    }

    fn run<F>(
        &self,
        f: &mut F,
        x0: &[f64],
        step: f64,
        budget: usize,
    ) -> (Vec<f64>, f64, usize, bool)
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut evals = 0;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
        for i in 0..n {
            let mut x = x0.to_vec();
            // Step inward if the outward step would leave the box.
            x[i] += if x[i] + step <= 1.0 { step } else { -step };
            clamp(&mut x);
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
        let mut converged = false;
        while evals < budget {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let fspread = (values[n] - values[0]).abs();
            let xspread = (0..n)
                .map(|k| {
                    simplex
                        .iter()
                        .map(|x| (x[k] - simplex[0][k]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if fspread <= self.ftol && xspread <= self.xtol {
                converged = true;
                break;
            }
            if xspread <= 1e-15 {
                converged = fspread <= self.ftol;
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut x: Vec<f64> = (0..n)
                    .map(|k| centroid[k] + t * (simplex[n][k] - centroid[k]))
                    .collect();
                clamp(&mut x);
                x
            };
            let reflected = along(-1.0);
            let fr = eval(&reflected, &mut evals);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = eval(&expanded, &mut evals);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let v = eval(&c, &mut evals);
                (c, v)
            } else {
                let c = along(0.5);
                let v = eval(&c, &mut evals);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            for i in 1..=n {
                let mut x: Vec<f64> = (0..n)
                    .map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]))
                    .collect();
                clamp(&mut x);
                values[i] = eval(&x, &mut evals);
                simplex[i] = x;
            }
        }
        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        (simplex[best].clone(), values[best], evals, converged)
    }
}
