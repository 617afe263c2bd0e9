//! Bound-constrained derivative-free minimization with a quadratic
//! interpolation model and a trust region, in the BOBYQA family.
//!
//! The model interpolates `2n+1` points. Each iteration rebuilds it from the
//! current point set, choosing the Hessian that changes least in Frobenius
//! norm from the previous one, so the curvature learned so far carries over.
//! Trust-region steps are truncated conjugate gradient on the box. Points
//! that drift far from the best one are replaced by geometry steps that
//! maximize the corresponding Lagrange function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("start point outside bounds at coordinate {0}")]
    StartOutOfBounds(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Maximum objective evaluations, at least `2n+1`.
    pub budget: usize,
    /// Stop once the trust radius falls below this.
    pub x_tolerance: f64,
    /// Starting trust radius; defaults to a tenth of the narrowest range.
    #[serde(default)]
    pub initial_radius: Option<f64>,
}

impl OptProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, budget: usize, x_tolerance: f64) -> Self {
        OptProblem {
            lower,
            upper,
            budget,
            x_tolerance,
            initial_radius: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), OptError> {
        let n = self.lower.len();
        let bad = |m: String| Err(OptError::InvalidProblem(m));
        if n == 0 {
            return bad("dimension must be at least 1".into());
        }
        if self.upper.len() != n {
            return bad(format!(
                "{} lower bounds but {} upper bounds",
                n,
                self.upper.len()
            ));
        }
        for i in 0..n {
            if !(self.lower[i].is_finite()
                && self.upper[i].is_finite()
                && self.lower[i] < self.upper[i])
            {
                return bad(format!(
                    "bounds at coordinate {i} are not a finite non-empty interval"
                ));
            }
        }
        if self.budget < 2 * n + 1 {
            return bad(format!("budget {} below 2n+1 = {}", self.budget, 2 * n + 1));
        }
        if !(self.x_tolerance > 0.0 && self.x_tolerance.is_finite()) {
            return bad("x_tolerance must be positive".into());
        }
        if let Some(r) = self.initial_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad("initial_radius must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    StepTolerance,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evaluations: usize,
    pub stop_reason: StopReason,
    /// Best value seen after each evaluation.
    pub history: Vec<f64>,
}

const STAGNATION_PER_DIM: usize = 20;
const STAGNATION_REL: f64 = 1e-12;

struct Evaluator<'a, F: FnMut(&[f64]) -> f64> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    budget: usize,
    history: Vec<f64>,
    best_x: Vec<f64>,
    best_f: f64,
    since_improvement: usize,
}

impl<F: FnMut(&[f64]) -> f64> Evaluator<'_, F> {
    fn exhausted(&self) -> bool {
        self.history.len() >= self.budget
    }

    /// Clamps `x` into the box and evaluates it. Non-finite values count as +inf.
    fn eval(&mut self, x: &mut DVector<f64>) -> f64 {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
        let v = (self.f)(x.as_slice());
        let v = if v.is_nan() { f64::INFINITY } else { v };
        let significant =
            v < self.best_f - STAGNATION_REL * self.best_f.abs().max(f64::MIN_POSITIVE);
        if v < self.best_f {
            self.best_f = v;
            self.best_x = x.as_slice().to_vec();
        }
        if significant || self.history.is_empty() {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.history.push(self.best_f);
        v
    }
}

/// Quadratic model `c + gᵀs + ½sᵀHs` around `center`, together with the
/// factored interpolation system needed for Lagrange functions.
struct Model {
    g: DVector<f64>,
    h: DMatrix<f64>,
    /// Inverse of the scaled KKT matrix.
    w_inv: DMatrix<f64>,
    /// Coordinates are divided by this before entering the KKT system.
    sigma: f64,
}

fn kkt_matrix(s: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let m = s.len();
    let mut w = DMatrix::zeros(m + n + 1, m + n + 1);
    for j in 0..m {
        for k in 0..m {
            w[(j, k)] = 0.5 * s[j].dot(&s[k]).powi(2);
        }
        w[(j, m)] = 1.0;
        w[(m, j)] = 1.0;
        for i in 0..n {
            w[(j, m + 1 + i)] = s[j][i];
            w[(m + 1 + i, j)] = s[j][i];
        }
    }
    w
}

fn build_model(
    points: &[DVector<f64>],
    values: &[f64],
    center: &DVector<f64>,
    f_center: f64,
    h_prev: &DMatrix<f64>,
) -> Option<Model> {
    let n = center.len();
    let m = points.len();
    let sigma = points
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    if sigma <= 0.0 || !values.iter().all(|v| v.is_finite()) {
        return None;
    }
    let s: Vec<DVector<f64>> = points.iter().map(|p| (p - center) / sigma).collect();
    let h_prev_s = h_prev * (sigma * sigma);
    let w_inv = kkt_matrix(&s, n).try_inverse()?;
    let mut rhs = DVector::zeros(m + n + 1);
    for j in 0..m {
        rhs[j] = values[j] - f_center - 0.5 * s[j].dot(&(&h_prev_s * &s[j]));
    }
    let sol = &w_inv * rhs;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut h = h_prev_s;
    for j in 0..m {
        h += sol[j] * &s[j] * s[j].transpose();
    }
    let g = DVector::from_iterator(n, (0..n).map(|i| sol[m + 1 + i] / sigma));
    Some(Model {
        g,
        h: h / (sigma * sigma),
        w_inv,
        sigma,
    })
}

impl Model {
    fn predict(&self, s: &DVector<f64>) -> f64 {
        self.g.dot(s) + 0.5 * s.dot(&(&self.h * s))
    }

    /// Values of all Lagrange functions at `center + d`.
    fn lagrange(
        &self,
        points: &[DVector<f64>],
        center: &DVector<f64>,
        d: &DVector<f64>,
    ) -> DVector<f64> {
        let m = points.len();
        let n = d.len();
        let dz = d / self.sigma;
        let mut w = DVector::zeros(m + n + 1);
        for j in 0..m {
            let sj = (&points[j] - center) / self.sigma;
            w[j] = 0.5 * sj.dot(&dz).powi(2);
        }
        w[m] = 1.0;
        for i in 0..n {
            w[m + 1 + i] = dz[i];
        }
        let out = &self.w_inv * w;
        out.rows(0, m).into_owned()
    }

    /// Gradient at the center of Lagrange function `j`.
    fn lagrange_gradient(&self, j: usize, n: usize) -> DVector<f64> {
        let m = self.w_inv.nrows() - n - 1;
        DVector::from_iterator(n, (0..n).map(|i| self.w_inv[(m + 1 + i, j)] / self.sigma))
    }
}

/// Truncated conjugate gradient for `min gᵀs + ½sᵀHs` with `|s| ≤ delta`
/// and `lower ≤ x + s ≤ upper`. Variables that hit a bound are frozen and
/// CG restarts on the remaining ones.
fn trust_region_step(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    x: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    delta: f64,
) -> DVector<f64> {
    let n = g.len();
    let mut s = DVector::zeros(n);
    let mut free: Vec<bool> = (0..n)
        .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
        .collect();
    let mask = |v: &DVector<f64>, free: &[bool]| {
        DVector::from_iterator(n, (0..n).map(|i| if free[i] { v[i] } else { 0.0 }))
    };
    'restart: for _ in 0..=n {
        let mut r = mask(&(g + h * &s), &free);
        let mut d = -r.clone();
        let r0 = r.norm();
        for _ in 0..n {
            let rr = r.dot(&r);
            if rr.sqrt() <= 1e-12 * r0.max(1e-300) || d.norm() == 0.0 {
                break 'restart;
            }
            let hd = h * &d;
            let curv = d.dot(&hd);
            // distance to the trust boundary along d
            let (sd, dd, ss) = (s.dot(&d), d.dot(&d), s.dot(&s));
            let disc = (sd * sd + dd * (delta * delta - ss)).max(0.0);
            let alpha_tr = (-sd + disc.sqrt()) / dd;
            // distance to the nearest bound along d
            let (mut alpha_b, mut hit) = (f64::INFINITY, None);
            for i in 0..n {
                if !free[i] || d[i] == 0.0 {
                    continue;
                }
                let room = if d[i] > 0.0 {
                    upper[i] - x[i] - s[i]
                } else {
                    lower[i] - x[i] - s[i]
                };
                let a = (room / d[i]).max(0.0);
                if a < alpha_b {
                    alpha_b = a;
                    hit = Some(i);
                }
            }
            let alpha_cg = if curv > 0.0 { rr / curv } else { f64::INFINITY };
            let alpha = alpha_cg.min(alpha_tr).min(alpha_b);
            s += alpha * &d;
            if alpha == alpha_b && alpha_b < alpha_cg.min(alpha_tr) {
                let i = hit.expect("bound step has an index");
                s[i] = if d[i] > 0.0 {
                    upper[i] - x[i]
                } else {
                    lower[i] - x[i]
                };
                free[i] = false;
                continue 'restart;
            }
            if alpha == alpha_tr && alpha_tr <= alpha_cg {
                break 'restart;
            }
            let r_new = &r + alpha * mask(&hd, &free);
            let beta = r_new.dot(&r_new) / rr;
            d = -&r_new + beta * d;
            r = r_new;
        }
        break;
    }
    s
}

/// Whether `x` coincides with an interpolation point other than `skip`;
/// a repeated point makes the interpolation system singular.
fn duplicates(points: &[DVector<f64>], x: &DVector<f64>, skip: usize) -> bool {
    points
        .iter()
        .enumerate()
        .any(|(j, p)| j != skip && (p - x).norm() <= 1e-12 * x.norm().max(1.0))
}

/// Minimizes `f` over the box starting from `x0`. The objective is only
/// ever called on points inside the box.
pub fn minimize<F>(f: F, x0: &[f64], problem: &OptProblem) -> Result<OptResult, OptError>
where
    F: FnMut(&[f64]) -> f64,
{
    problem.validate()?;
    let n = problem.dimension();
    if x0.len() != n {
        return Err(OptError::InvalidProblem(format!(
            "start point has {} coordinates, expected {n}",
            x0.len()
        )));
    }
    for i in 0..n {
        if !(problem.lower[i]..=problem.upper[i]).contains(&x0[i]) {
            return Err(OptError::StartOutOfBounds(i));
        }
    }
    let (lower, upper) = (&problem.lower[..], &problem.upper[..]);
    let min_range = (0..n)
        .map(|i| upper[i] - lower[i])
        .fold(f64::INFINITY, f64::min);
    let max_range = (0..n).map(|i| upper[i] - lower[i]).fold(0.0, f64::max);
    let mut delta = problem
        .initial_radius
        .unwrap_or(0.1 * min_range)
        .min(0.5 * min_range);

    let mut ev = Evaluator {
        f,
        lower,
        upper,
        budget: problem.budget,
        history: Vec::with_capacity(problem.budget),
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
        since_improvement: 0,
    };
    let stagnation_limit = STAGNATION_PER_DIM * n;

    let mut points: Vec<DVector<f64>> = Vec::with_capacity(2 * n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(2 * n + 1);
    let mut h_prev = DMatrix::zeros(n, n);

    // start design: x0 and a step of `delta` along each axis in both
    // directions, or twice in one direction when a bound is too close
    let design = |center: &DVector<f64>, delta: f64| -> Vec<DVector<f64>> {
        let mut out = vec![center.clone()];
        for i in 0..n {
            let (up, down) = (upper[i] - center[i], center[i] - lower[i]);
            let steps = if up >= delta && down >= delta {
                [delta, -delta]
            } else if up >= down {
                [delta.min(up / 2.0), (2.0 * delta).min(up)]
            } else {
                [-delta.min(down / 2.0), -(2.0 * delta).min(down)]
            };
            for st in steps {
                let mut p = center.clone();
                p[i] += st;
                out.push(p);
            }
        }
        out
    };

    let reset = |center: DVector<f64>,
                 delta: f64,
                 ev: &mut Evaluator<F>,
                 points: &mut Vec<DVector<f64>>,
                 values: &mut Vec<f64>,
                 known: Option<f64>| {
        points.clear();
        values.clear();
        for (k, mut p) in design(&center, delta).into_iter().enumerate() {
            if ev.exhausted() {
                break;
            }
            let v = match (k, known) {
                (0, Some(v)) => v,
                _ => ev.eval(&mut p),
            };
            points.push(p);
            values.push(v);
        }
    };

    reset(
        DVector::from_column_slice(x0),
        delta,
        &mut ev,
        &mut points,
        &mut values,
        None,
    );
    let mut need_geometry = false;

    let stop = loop {
        if ev.exhausted() {
            break StopReason::Budget;
        }
        if ev.since_improvement >= stagnation_limit {
            break StopReason::Stagnation;
        }
        if delta < problem.x_tolerance {
            break StopReason::StepTolerance;
        }
        if points.len() < 2 * n + 1 {
            // budget ran out during a reset
            break StopReason::Budget;
        }
        let kb = (0..points.len())
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .expect("non-empty");
        let center = points[kb].clone();
        let f_center = values[kb];
        let Some(model) = build_model(&points, &values, &center, f_center, &h_prev) else {
            // a rebuilt design at the same radius could fail the same way
            h_prev = DMatrix::zeros(n, n);
            delta *= 0.5;
            reset(
                center,
                delta,
                &mut ev,
                &mut points,
                &mut values,
                Some(f_center),
            );
            continue;
        };

        let far = (0..points.len())
            .filter(|&j| j != kb)
            .map(|j| (j, (&points[j] - &center).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least two points");

        if need_geometry && far.1 > 2.0 * delta {
            need_geometry = false;
            // move the farthest point to where its Lagrange function is largest
            let j = far.0;
            let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(2 * n + 4);
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut d = DVector::zeros(n);
                    d[i] = sign * delta;
                    candidates.push(d);
                }
            }
            let toward = (&points[j] - &center) / far.1;
            let grad = model.lagrange_gradient(j, n);
            for dir in [toward, grad.normalize()] {
                if dir.iter().all(|v| v.is_finite()) {
                    candidates.push(&dir * delta);
                    candidates.push(-&dir * delta);
                }
            }
            let best = candidates
                .into_iter()
                .map(|d| {
                    let mut x = &center + &d;
                    for i in 0..n {
                        x[i] = x[i].clamp(lower[i], upper[i]);
                    }
                    let d = &x - &center;
                    let l = model.lagrange(&points, &center, &d)[j].abs();
                    (x, l)
                })
                .filter(|(x, _)| (x - &center).norm() > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((mut x, _)) = best.filter(|(x, _)| !duplicates(&points, x, j)) {
                let v = ev.eval(&mut x);
                points[j] = x;
                values[j] = v;
                h_prev = model.h.clone();
                continue;
            }
            // no usable replacement: tighten instead of spinning
            delta *= 0.5;
            h_prev = model.h.clone();
            continue;
        }
        need_geometry = false;

        let s = trust_region_step(&model.g, &model.h, &center, lower, upper, delta);
        let s_norm = s.norm();
        if s_norm < 0.1 * delta {
            // the model thinks we are at its minimum; refine the neighbourhood
            if far.1 > 2.0 * delta {
                need_geometry = true;
            } else {
                delta *= 0.5;
            }
            h_prev = model.h.clone();
            continue;
        }

        let mut x_new = &center + &s;
        for i in 0..n {
            x_new[i] = x_new[i].clamp(lower[i], upper[i]);
        }
        if duplicates(&points, &x_new, usize::MAX) {
            // the step lands on a point we already have; nothing to learn
            delta *= 0.5;
            h_prev = model.h.clone();
            continue;
        }
        let f_new = ev.eval(&mut x_new);
        let s = &x_new - &center;
        let predicted = -model.predict(&s);
        let ratio = if predicted > 0.0 {
            (f_center - f_new) / predicted
        } else {
            -1.0
        };
        if ratio < 0.25 {
            if far.1 > 2.0 * delta {
                need_geometry = true;
            } else {
                delta *= 0.5;
            }
        } else if ratio > 0.75 {
            delta = (2.0 * delta).min(max_range);
        }

        // the new point replaces the one whose removal best keeps the set
        // well poised, weighted towards distant points
        let ell = model.lagrange(&points, &center, &s);
        let new_best = f_new < f_center;
        let pivot = if new_best { &x_new } else { &center };
        let t = (0..points.len())
            .filter(|&j| new_best || j != kb)
            .max_by(|&a, &b| {
                let score = |j: usize| {
                    let dist = (&points[j] - pivot).norm() / delta;
                    ell[j].abs() * dist.max(1.0).powi(4)
                };
                score(a).total_cmp(&score(b))
            })
            .expect("replacement candidate");
        points[t] = x_new;
        values[t] = f_new;
        h_prev = model.h.clone();
    };

    Ok(OptResult {
        x_best: ev.best_x,
        f_best: ev.best_f,
        evaluations: ev.history.len(),
        stop_reason: stop,
        history: ev.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_reaches_center() {
        let c = [0.3, -1.2, 2.5, 0.8];
        let p = OptProblem::new(vec![-3.0; 4], vec![3.0; 4], 200, 1e-9);
        let r = minimize(
            |x| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum(),
            &[0.0; 4],
            &p,
        )
        .unwrap();
        let err = r
            .x_best
            .iter()
            .zip(&c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{r:?}");
        assert!(r.evaluations <= 200);
    }

    #[test]
    fn rosenbrock_2d() {
        let p = OptProblem::new(vec![-2.0; 2], vec![2.0; 2], 500, 1e-10);
        let r = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &p,
        )
        .unwrap();
        assert!(r.f_best < 1e-3, "{r:?}");
    }

    #[test]
    fn linear_hits_bound_exactly() {
        let p = OptProblem::new(vec![0.5], vec![2.0], 50, 1e-9);
        let r = minimize(|x| x[0], &[1.5], &p).unwrap();
        assert_eq!(r.x_best, vec![0.5]);
        assert_eq!(r.f_best, 0.5);
    }

    #[test]
    fn validation() {
        let ok = OptProblem::new(vec![0.0; 2], vec![1.0; 2], 10, 1e-6);
        assert!(minimize(|_| 0.0, &[0.5, 1.5], &ok).is_err());
        assert!(minimize(|_| 0.0, &[0.5], &ok).is_err());
        let small = OptProblem::new(vec![0.0; 2], vec![1.0; 2], 4, 1e-6);
        assert!(small.validate().is_err());
        let flipped = OptProblem::new(vec![1.0], vec![0.0], 10, 1e-6);
        assert!(flipped.validate().is_err());
        let tol = OptProblem::new(vec![0.0], vec![1.0], 10, 0.0);
        assert!(tol.validate().is_err());
    }

    #[test]
    fn constant_objective_stagnates() {
        let p = OptProblem::new(vec![0.0; 3], vec![1.0; 3], 1000, 1e-12);
        let r = minimize(|_| 1.0, &[0.5; 3], &p).unwrap();
        assert_ne!(r.stop_reason, StopReason::Budget);
        assert!(r.evaluations < 1000);
    }
}
