//! Derivative-free optimisers and the parameter transforms used to run them
//! on unconstrained scales.

use rand::Rng;

/// Outcome of a Nelder–Mead run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    /// Stop once `max f - min f` over the simplex falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            f_tol: 1e-8,
            max_evals: 2000,
            initial_step: 0.5,
        }
    }
}

impl NelderMead {
    /// Minimises `f` from `start`. Non-finite objective values are treated as
    /// `+∞`, which makes the simplex retreat from invalid regions.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut v = start.to_vec();
            v[i] += self.initial_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
        let mut converged = false;
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            if (values[n] - values[0]).abs() < self.f_tol
                || (values[0].is_finite() && values[n] - values[0] < self.f_tol)
            {
                converged = true;
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let worst = &simplex[n];
            for j in 0..n {
                trial[j] = centroid[j] + (centroid[j] - worst[j]);
            }
            let fr = eval(&trial, &mut evals);

            if fr < values[0] {
                for j in 0..n {
                    trial2[j] = centroid[j] + 2.0 * (centroid[j] - worst[j]);
                }
                let fe = eval(&trial2, &mut evals);
                if fe < fr {
                    simplex[n].copy_from_slice(&trial2);
                    values[n] = fe;
                } else {
                    simplex[n].copy_from_slice(&trial);
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
                continue;
            }
            // contraction, outside if the reflection improved on the worst point
            let outside = fr < values[n];
            for j in 0..n {
                trial2[j] = if outside {
                    centroid[j] + 0.5 * (trial[j] - centroid[j])
                } else {
                    centroid[j] + 0.5 * (simplex[n][j] - centroid[j])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if fc < values[n].min(fr) {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fc;
                continue;
            }
            // shrink towards the best vertex
            let best = simplex[0].clone();
            for i in 1..=n {
                for j in 0..n {
                    simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                }
                values[i] = eval(&simplex[i], &mut evals);
            }
        }

        let (best, &value) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, v))
            .expect("simplex is non-empty");
        Minimum {
            x: simplex[best].clone(),
            value,
            evaluations: evals,
            converged,
        }
    }

    /// Runs from every start and keeps the lowest minimum.
    pub fn minimize_multistart<F: FnMut(&[f64]) -> f64>(
        &self,
        mut f: F,
        starts: &[Vec<f64>],
    ) -> Option<Minimum> {
        let mut best: Option<Minimum> = None;
        for s in starts {
            let m = self.minimize(&mut f, s);
            if !m.value.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
        best
    }
}

/// Result of a bounded scalar minimisation.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMinimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Brent's method for minimising a continuous function on `[a, b]`.
///
/// The endpoints are evaluated as well, and the overall smallest value wins,
/// so minima sitting exactly on the boundary are returned exactly.
pub fn brent_minimize<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_iter: usize,
) -> ScalarMinimum {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let fa = f(lo);
    let fb = f(hi);
    if hi - lo <= abs_tol {
        let (x, value) = if fa <= fb { (lo, fa) } else { (hi, fb) };
        return ScalarMinimum {
            x,
            value,
            iterations: 0,
            converged: true,
        };
    }

    let mut x = lo + GOLDEN * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let tol1 = 1e-10 * x.abs() + abs_tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            converged = true;
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            // parabolic fit
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    let mut best = ScalarMinimum {
        x,
        value: fx,
        iterations,
        converged,
    };
    for (xe, fe) in [(a.min(b), fa), (a.max(b), fb)] {
        if fe <= best.value {
            best.x = xe;
            best.value = fe;
        }
    }
    best
}

/// Latin hypercube design on the unit cube: `n` points in `dims` dimensions.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    for j in 0..dims {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            perm.swap(i, k);
        }
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[j] = (perm[i] as f64 + u) / n as f64;
        }
    }
    pts
}

/// Maps between constrained parameters and the unconstrained optimiser scale.
pub mod transform {
    #[inline]
    pub fn logistic(t: f64) -> f64 {
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }

    /// `κ ∈ (0, 2]` from an unconstrained value.
    #[inline]
    pub fn kappa_from(t: f64) -> f64 {
        2.0 * logistic(t)
    }

    #[inline]
    pub fn kappa_to(kappa: f64) -> f64 {
        let p = (kappa / 2.0).clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    }

    #[inline]
    pub fn softplus(t: f64) -> f64 {
        if t > 30.0 {
            t
        } else {
            t.exp().ln_1p()
        }
    }

    /// Inverse softplus with a floor, so that zero maps to a finite value.
    #[inline]
    pub fn softplus_inv(z: f64) -> f64 {
        let z = z.max(1e-8);
        if z > 30.0 {
            z
        } else {
            z.exp_m1().ln()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let nm = NelderMead {
            f_tol: 1e-14,
            max_evals: 5000,
            initial_step: 0.5,
        };
        let m = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
        );
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn nelder_mead_retreats_from_infinite_region() {
        let nm = NelderMead::default();
        let m = nm.minimize(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.3).powi(2) },
            &[1.0],
        );
        assert!((m.x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn brent_interior_and_boundary_minima() {
        let m = brent_minimize(|x| (x - 0.7).powi(2) + 1.0, 0.0, 2.0, 1e-10, 200);
        assert!((m.x - 0.7).abs() < 1e-7);
        // monotone increasing: minimum is the left endpoint, returned exactly
        let m = brent_minimize(|x| x + 3.0, 0.0, 5.0, 1e-8, 200);
        assert_eq!(m.x, 0.0);
        assert_eq!(m.value, 3.0);
    }

    #[test]
    fn transforms_invert() {
        for &k in &[0.1, 0.5, 1.0, 1.9] {
            assert!((transform::kappa_from(transform::kappa_to(k)) - k).abs() < 1e-12);
        }
        for &z in &[1e-4, 0.5, 3.0, 50.0] {
            assert!((transform::softplus(transform::softplus_inv(z)) - z).abs() < 1e-10 * z.max(1.0));
        }
    }

    #[test]
    fn latin_hypercube_stratifies_each_axis() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(5, 3, &mut rng);
        for j in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[j] * 5.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, vec![0, 1, 2, 3, 4]);
        }
    }
}
