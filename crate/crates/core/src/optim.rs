//! Derivative-free Nelder–Mead simplex minimization.
//!
//! Uses the dimension-adaptive coefficients of Gao & Han (2012), which keep
//! the method effective on the 15–17 dimensional scoring-rule fits. Non-finite
//! objective values are treated as `+∞`, so an objective can encode
//! constraints by returning `f64::INFINITY` outside the feasible region.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when `f_worst − f_best ≤ rel_tol·|f_best| + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_evals: usize,
    /// Initial edge length along coordinate `i` is `step·max(|x0_i|, 1)`.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-6, abs_tol: 1e-12, max_evals: 10_000, step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` starting from `x0`. The returned value never exceeds
/// `f(x0)`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut obj = Counter { f, evals: 0 };
    let f0 = obj.eval(x0);
    if n == 0 {
        return Minimum { x: Vec::new(), value: f0, evals: obj.evals, converged: true };
    }

    let dim = n as f64;
    let (reflect, expand, contract, shrink) =
        (1.0, 1.0 + 2.0 / dim, 0.75 - 1.0 / (2.0 * dim), 1.0 - 1.0 / dim);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut h = opts.step * x0[i].abs().max(1.0);
        let mut vertex = x0.to_vec();
        vertex[i] = x0[i] + h;
        let mut value = obj.eval(&vertex);
        // Pull infeasible vertices back toward the start.
        let mut tries = 0;
        while !value.is_finite() && tries < 20 {
            h *= -0.5;
            vertex[i] = x0[i] + h;
            value = obj.eval(&vertex);
            tries += 1;
        }
        simplex.push((vertex, value));
    }

    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let point = |out: &mut Vec<f64>, c: &[f64], w: &[f64], t: f64| {
        for ((o, ci), wi) in out.iter_mut().zip(c).zip(w) {
            *o = ci + t * (ci - wi);
        }
    };

    while obj.evals < opts.max_evals {
        sort(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && worst - best <= opts.rel_tol * best.abs() + opts.abs_tol {
            converged = true;
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (v, _) in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / dim;
            }
        }

        let worst_x = simplex[n].0.clone();
        point(&mut trial, &centroid, &worst_x, reflect);
        let fr = obj.eval(&trial);
        if fr < simplex[0].1 {
            let reflected = trial.clone();
            point(&mut trial, &centroid, &worst_x, reflect * expand);
            let fe = obj.eval(&trial);
            simplex[n] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (trial.clone(), fr);
            continue;
        }
        let outside = fr < worst;
        let t = if outside { reflect * contract } else { -contract };
        point(&mut trial, &centroid, &worst_x, t);
        let fc = obj.eval(&trial);
        if (outside && fc <= fr) || (!outside && fc < worst) {
            simplex[n] = (trial.clone(), fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (vi, bi) in v.iter_mut().zip(&best_x) {
                *vi = bi + shrink * (*vi - bi);
            }
            *fv = obj.eval(v);
        }
    }
    sort(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    if value <= f0 {
        Minimum { x, value, evals: obj.evals, converged }
    } else {
        Minimum { x: x0.to_vec(), value: f0, evals: obj.evals, converged }
    }
}
