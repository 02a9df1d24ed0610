//! Minimizes `h(y) = max_i g_i(y)` where each `g_i` is a shifted distance
//! `|y - c_i| - r_i` or a signed halfspace gap `<a_i, y> - b_i`.
//!
//! A Polyak-step subgradient run from the centroid of the ball centers gives
//! a first iterate. The result is then refined on the epigraph form
//! `min t s.t. g_i(y) <= t` with a log-barrier Newton method over a working
//! set of constraints, adding the most violated constraints until none is
//! left. The barrier limit is the deepest point of the intersection, which
//! makes the answer unique and reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::space::Point;

#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// `|y - center| - radius`.
    Ball { center: Point, radius: f64 },
    /// `<normal, y> - offset`, `normal` of unit length.
    Halfspace { normal: Point, offset: f64 },
}

impl Constraint {
    pub fn ball(center: Point, radius: f64) -> Self {
        Constraint::Ball { center, radius }
    }

    /// Normalizes `normal`; errors on a zero normal.
    pub fn halfspace(normal: &Point, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("halfspace constraint needs a nonzero normal".into()));
        }
        Ok(Constraint::Halfspace { normal: normal.scale(1.0 / n), offset: offset / n })
    }

    pub fn dim(&self) -> usize {
        match self {
            Constraint::Ball { center, .. } => center.dim(),
            Constraint::Halfspace { normal, .. } => normal.dim(),
        }
    }

    pub fn gap(&self, y: &[f64]) -> f64 {
        match self {
            Constraint::Ball { center, radius } => dist(y, center.coords()) - radius,
            Constraint::Halfspace { normal, offset } => dot(normal.coords(), y) - offset,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Constraint::Ball { center, .. } => center.check_dim(dim),
            Constraint::Halfspace { normal, .. } => normal.check_dim(dim),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Constraint::Ball { center, radius } => center.is_finite() && radius.is_finite(),
            Constraint::Halfspace { normal, offset } => normal.is_finite() && offset.is_finite(),
        }
    }

    /// Barrier parameter of the cone behind the constraint.
    fn barrier_weight(&self) -> f64 {
        match self {
            Constraint::Ball { .. } => 2.0,
            Constraint::Halfspace { .. } => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimaxSettings {
    /// Subgradient iterations.
    pub max_iter: usize,
    /// Early exit for the subgradient run when `polish` is off.
    pub tol: f64,
    /// Run the barrier refinement after the subgradient phase.
    pub polish: bool,
    /// Target duality gap of the barrier refinement.
    pub gap_tol: f64,
}

impl Default for MinimaxSettings {
    fn default() -> Self {
        MinimaxSettings { max_iter: 60, tol: 1e-6, polish: true, gap_tol: 1e-11 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxSolution {
    pub point: Point,
    /// `h` at `point`, over all constraints.
    pub value: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `h(y)` and the index attaining it (first on ties).
pub fn max_gap(cons: &[Constraint], y: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, c) in cons.iter().enumerate() {
        let g = c.gap(y);
        if g > best.0 {
            best = (g, i);
        }
    }
    best
}

/// Deepest point of the balls `B[c_i, r_i]`, i.e. the minimizer of
/// `max_i (|y - c_i| - r_i)`.
pub fn solve_minimax(balls: &[(Point, f64)], settings: &MinimaxSettings) -> Result<MinimaxSolution> {
    let cons: Vec<Constraint> = balls.iter().map(|(c, r)| Constraint::ball(c.clone(), *r)).collect();
    solve_constraints(&cons, None, settings)
}

/// Minimizes `max_i g_i` over mixed ball and halfspace constraints. At least
/// one ball is required so the problem is bounded below.
pub fn solve_constraints(cons: &[Constraint], start: Option<&Point>, settings: &MinimaxSettings) -> Result<MinimaxSolution> {
    let Some(first) = cons.first() else {
        return Err(Error::InvalidParameter("minimax needs at least one constraint".into()));
    };
    let dim = first.dim();
    for c in cons {
        c.check_dim(dim)?;
        if !c.is_finite() {
            return Err(Error::InvalidParameter("minimax constraint with non-finite data".into()));
        }
    }
    let centers: Vec<&Point> = cons
        .iter()
        .filter_map(|c| match c {
            Constraint::Ball { center, .. } => Some(center),
            _ => None,
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::InvalidParameter("minimax needs at least one ball constraint".into()));
    }

    let y = match start {
        Some(s) => {
            s.check_dim(dim)?;
            s.coords().to_vec()
        }
        None => {
            let mut c = vec![0.0; dim];
            for p in &centers {
                for (acc, v) in c.iter_mut().zip(p.coords()) {
                    *acc += v;
                }
            }
            c.iter_mut().for_each(|v| *v /= centers.len() as f64);
            c
        }
    };

    let (mut best_y, mut best_h, mut iterations) = subgradient(cons, &y, settings);
    if settings.polish {
        let (z, it) = refine(cons, &best_y, settings.gap_tol);
        iterations += it;
        let h = max_gap(cons, &z).0;
        if h <= best_h || !best_h.is_finite() {
            best_y = z;
            best_h = h;
        }
    }
    Ok(MinimaxSolution { point: Point::new(best_y)?, value: best_h, iterations })
}

/// Polyak steps toward the target `best - delta`, halving `delta` whenever a
/// run of steps fails to improve on the best value.
fn subgradient(cons: &[Constraint], y0: &[f64], settings: &MinimaxSettings) -> (Vec<f64>, f64, usize) {
    let mut y = y0.to_vec();
    let (mut h, _) = max_gap(cons, &y);
    let mut best = (y.clone(), h);
    let mut delta = 0.5 * h.abs().max(1e-3);
    let mut stall = 0;
    let mut k = 0;
    while k < settings.max_iter {
        if !settings.polish && best.1 <= settings.tol {
            break;
        }
        let (hk, i) = max_gap(cons, &y);
        h = hk;
        let g: Vec<f64> = match &cons[i] {
            Constraint::Ball { center, .. } => {
                let d = dist(&y, center.coords());
                if d == 0.0 {
                    // y sits at the active center: nothing lower along this constraint.
                    break;
                }
                y.iter().zip(center.coords()).map(|(a, c)| (a - c) / d).collect()
            }
            Constraint::Halfspace { normal, .. } => normal.coords().to_vec(),
        };
        let step = (h - best.1 + delta) / dot(&g, &g);
        y.iter_mut().zip(&g).for_each(|(a, gi)| *a -= step * gi);
        k += 1;

        let hn = max_gap(cons, &y).0;
        if hn < best.1 - 0.1 * delta {
            best = (y.clone(), hn);
            stall = 0;
        } else {
            if hn < best.1 {
                best = (y.clone(), hn);
            }
            stall += 1;
            if stall >= 5 {
                delta *= 0.5;
                stall = 0;
                y.clone_from(&best.0);
            }
        }
        if delta < 1e-14 {
            break;
        }
    }
    (best.0, best.1, k)
}

/// Constraint generation around [`barrier`]: start from the constraints
/// largest at `y0`, add violators of the working-set solution, repeat.
fn refine(cons: &[Constraint], y0: &[f64], gap_tol: f64) -> (Vec<f64>, usize) {
    let dim = y0.len();
    let batch = 2 * (dim + 1);
    let mut gaps: Vec<(f64, usize)> = cons.iter().enumerate().map(|(i, c)| (c.gap(y0), i)).collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut in_set = vec![false; cons.len()];
    let mut work: Vec<usize> = Vec::new();
    let add = |i: usize, work: &mut Vec<usize>, in_set: &mut Vec<bool>| {
        if !in_set[i] {
            in_set[i] = true;
            work.push(i);
        }
    };
    for &(_, i) in gaps.iter().take(4 * (dim + 1)) {
        add(i, &mut work, &mut in_set);
    }
    // Keep a ball in the set so the subproblem is bounded.
    if !work.iter().any(|&i| matches!(cons[i], Constraint::Ball { .. })) {
        if let Some(&(_, i)) = gaps.iter().find(|(_, i)| matches!(cons[*i], Constraint::Ball { .. })) {
            add(i, &mut work, &mut in_set);
        }
    }

    let mut y = y0.to_vec();
    let mut total = 0;
    loop {
        let subset: Vec<&Constraint> = work.iter().map(|&i| &cons[i]).collect();
        let (z, it) = barrier(&subset, &y, gap_tol);
        total += it;
        y = z;
        let inner = subset.iter().map(|c| c.gap(&y)).fold(f64::NEG_INFINITY, f64::max);
        let mut violators: Vec<(f64, usize)> = cons
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_set[*i])
            .map(|(i, c)| (c.gap(&y), i))
            .filter(|(g, _)| *g > inner + 1e-13)
            .collect();
        if violators.is_empty() || work.len() == cons.len() {
            return (y, total);
        }
        violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in violators.iter().take(batch) {
            add(i, &mut work, &mut in_set);
        }
    }
}

/// Value, gradient and Hessian of `tau t - sum log s_i` at `z = (y, t)`;
/// `None` outside the domain.
fn barrier_terms(cons: &[&Constraint], z: &[f64], tau: f64, with_derivatives: bool) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = z.len();
    let d = n - 1;
    let (y, t) = (&z[..d], z[d]);
    let mut value = tau * t;
    let mut grad = DVector::zeros(if with_derivatives { n } else { 0 });
    let mut hess = DMatrix::zeros(if with_derivatives { n } else { 0 }, if with_derivatives { n } else { 0 });
    if with_derivatives {
        grad[d] = tau;
    }
    let mut u = vec![0.0; d];
    for c in cons {
        match c {
            Constraint::Ball { center, radius } => {
                for (k, uk) in u.iter_mut().enumerate() {
                    *uk = y[k] - center.coords()[k];
                }
                let norm = dot(&u, &u).sqrt();
                let s = radius + t;
                let slack = s - norm;
                if !(slack > 0.0) {
                    return None;
                }
                let g = slack * (s + norm);
                value -= g.ln();
                if with_derivatives {
                    let g2 = g * g;
                    for i in 0..d {
                        grad[i] += 2.0 * u[i] / g;
                        for j in 0..d {
                            hess[(i, j)] += 4.0 * u[i] * u[j] / g2;
                        }
                        hess[(i, i)] += 2.0 / g;
                        hess[(i, d)] -= 4.0 * u[i] * s / g2;
                        hess[(d, i)] -= 4.0 * u[i] * s / g2;
                    }
                    grad[d] -= 2.0 * s / g;
                    hess[(d, d)] += 2.0 * (s * s + norm * norm) / g2;
                }
            }
            Constraint::Halfspace { normal, offset } => {
                let a = normal.coords();
                let w = offset + t - dot(a, y);
                if !(w > 0.0) {
                    return None;
                }
                value -= w.ln();
                if with_derivatives {
                    let w2 = w * w;
                    for i in 0..d {
                        grad[i] += a[i] / w;
                        for j in 0..d {
                            hess[(i, j)] += a[i] * a[j] / w2;
                        }
                        hess[(i, d)] -= a[i] / w2;
                        hess[(d, i)] -= a[i] / w2;
                    }
                    grad[d] -= 1.0 / w;
                    hess[(d, d)] += 1.0 / w2;
                }
            }
        }
    }
    Some((value, grad, hess))
}

/// Barrier method on `min t s.t. g_i(y) <= t` for the given constraints.
fn barrier(cons: &[&Constraint], y0: &[f64], gap_tol: f64) -> (Vec<f64>, usize) {
    let d = y0.len();
    let h0 = cons.iter().map(|c| c.gap(y0)).fold(f64::NEG_INFINITY, f64::max);
    let margin = 1.0 + 0.1 * h0.abs();
    let mut z: Vec<f64> = y0.iter().copied().chain(std::iter::once(h0 + margin)).collect();
    let nu: f64 = cons.iter().map(|c| c.barrier_weight()).sum();
    let mut tau = nu / margin;
    let mut iterations = 0;

    loop {
        for _ in 0..100 {
            let Some((value, grad, hess)) = barrier_terms(cons, &z, tau, true) else { break };
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    let reg = 1e-14 * hess.trace().abs().max(1e-300);
                    match (hess + DMatrix::identity(d + 1, d + 1) * reg).cholesky() {
                        Some(ch) => ch.solve(&(-&grad)),
                        None => break,
                    }
                }
            };
            iterations += 1;
            let decrement = -grad.dot(&step);
            if !(decrement > 1e-18) {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-20 {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
                if let Some((v, _, _)) = barrier_terms(cons, &trial, tau, false) {
                    if v <= value - 0.25 * alpha * decrement {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted || decrement < 1e-14 {
                break;
            }
        }
        if nu / tau <= gap_tol {
            break;
        }
        tau *= 10.0;
    }
    z.truncate(d);
    (z, iterations)
}
