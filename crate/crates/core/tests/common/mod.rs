//! Independent oracles shared by the integration tests. None of them call the
//! solver under test.
#![allow(dead_code)]

use feasops::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn p(c: &[f64]) -> Point {
    Point::new(c.to_vec()).unwrap()
}

/// `max_i (|y - c_i| - r_i)` for plain coordinate slices.
pub fn h(balls: &[(Vec<f64>, f64)], y: &[f64]) -> f64 {
    balls
        .iter()
        .map(|(c, r)| c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() - r)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Grid search for `argmin h` over `[lo, hi]^d`, `d` in {1, 2}: a full grid at
/// step `step`, then local grids of +-10 cells, each ten times finer, down to
/// a step of `1e-7`. A local grid is re-centred until its best point stops
/// moving, so shallow valleys are followed past the window edge.
pub fn grid_argmin(balls: &[(Vec<f64>, f64)], lo: f64, hi: f64, step: f64) -> (Vec<f64>, f64) {
    let d = balls[0].0.len();
    let mut best = scan(balls, &vec![lo; d], &vec![hi; d], step);
    let mut s = step;
    while s > 1.5e-7 {
        let coarse = s;
        s /= 10.0;
        for _ in 0..10_000 {
            let lo_w: Vec<f64> = best.0.iter().map(|v| v - 10.0 * coarse).collect();
            let hi_w: Vec<f64> = best.0.iter().map(|v| v + 10.0 * coarse).collect();
            let local = scan(balls, &lo_w, &hi_w, s);
            if local.1 < best.1 {
                best = local;
            } else {
                break;
            }
        }
    }
    best
}

fn scan(balls: &[(Vec<f64>, f64)], lo: &[f64], hi: &[f64], step: f64) -> (Vec<f64>, f64) {
    let n: Vec<usize> = lo.iter().zip(hi).map(|(l, u)| ((u - l) / step).round() as usize).collect();
    let mut best = (lo.to_vec(), f64::INFINITY);
    match lo.len() {
        1 => {
            for i in 0..=n[0] {
                let y = [lo[0] + i as f64 * step];
                let v = h(balls, &y);
                if v < best.1 {
                    best = (y.to_vec(), v);
                }
            }
        }
        2 => {
            for i in 0..=n[0] {
                for j in 0..=n[1] {
                    let y = [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
                    let v = h(balls, &y);
                    if v < best.1 {
                        best = (y.to_vec(), v);
                    }
                }
            }
        }
        _ => panic!("grid oracle supports d <= 2"),
    }
    best
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_distance(y: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 { 0.0 } else { (((y[0] - a[0]) * ab[0] + (y[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((y[0] - q[0]).powi(2) + (y[1] - q[1]).powi(2)).sqrt()
}

/// Distance from `y` to the convex hull of planar points (monotone chain).
pub fn hull_distance_2d(points: &[[f64; 2]], y: [f64; 2]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() == 1 {
        return segment_distance(y, pts[0], pts[0]);
    }
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let n = hull.len();
    let inside = n >= 3 && (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], y) >= 0.0);
    if inside {
        return 0.0;
    }
    (0..n).map(|i| segment_distance(y, hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Random sample of an `l`-Lipschitz map on `[-1, 1]^d`: `v = l * shrink * P_B(Q a + b)`
/// with `Q` orthogonal and `P_B` the projection onto the unit ball.
pub fn random_lipschitz_data(rng: &mut ChaCha8Rng, d: usize, m: usize, l: f64, shrink: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let flip = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    (0..m)
        .map(|_| {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut q: Vec<f64> = if d == 1 {
                vec![flip * a[0]]
            } else {
                vec![angle.cos() * a[0] - angle.sin() * a[1], flip * (angle.sin() * a[0] + angle.cos() * a[1])]
            };
            q.iter_mut().zip(&b).for_each(|(x, bi)| *x += bi);
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1.0 {
                q.iter_mut().for_each(|x| *x /= n);
            }
            (a, q.iter().map(|x| l * shrink * x).collect())
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact `argmin h` for `d` in {1, 2} by enumerating support sets: the
/// minimizer is pinned by at most `d + 1` balls with equal gaps, so it is a
/// center, a point on a segment between two centers, or an Apollonius point
/// of three balls.
pub fn support_argmin(balls: &[(Vec<f64>, f64)]) -> (Vec<f64>, f64) {
    let d = balls[0].0.len();
    let mut candidates: Vec<Vec<f64>> = balls.iter().map(|(c, _)| c.clone()).collect();
    let m = balls.len();
    for i in 0..m {
        for j in i + 1..m {
            let (ci, ri) = (&balls[i].0, balls[i].1);
            let (cj, rj) = (&balls[j].0, balls[j].1);
            let dist = ci.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let t = ((dist + ri - rj) / 2.0).clamp(0.0, dist);
            candidates.push(ci.iter().zip(cj).map(|(a, b)| a + t * (b - a) / dist).collect());
        }
    }
    if d == 2 {
        for i in 0..m {
            for j in i + 1..m {
                for k in j + 1..m {
                    candidates.extend(apollonius([&balls[i], &balls[j], &balls[k]]));
                }
            }
        }
    }
    candidates
        .into_iter()
        .map(|y| {
            let v = h(balls, &y);
            (y, v)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Points `y` with `|y - c_k| = r_k + t` for three planar balls.
fn apollonius(b: [&(Vec<f64>, f64); 3]) -> Vec<Vec<f64>> {
    let (c1, r1) = (&b[0].0, b[0].1);
    let sq = |c: &Vec<f64>| c[0] * c[0] + c[1] * c[1];
    // Rows: 2 (c_k - c_1) . y + 2 (r_k - r_1) t = |c_k|^2 - |c_1|^2 - r_k^2 + r_1^2.
    let row = |k: usize| {
        let (ck, rk) = (&b[k].0, b[k].1);
        (2.0 * (ck[0] - c1[0]), 2.0 * (ck[1] - c1[1]), 2.0 * (rk - r1), sq(ck) - sq(c1) - rk * rk + r1 * r1)
    };
    let (a11, a12, b1, e1) = row(1);
    let (a21, a22, b2, e2) = row(2);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-12 {
        return Vec::new();
    }
    // y = p + q t.
    let p = [(e1 * a22 - a12 * e2) / det, (a11 * e2 - e1 * a21) / det];
    let q = [(-b1 * a22 + a12 * b2) / det, (-a11 * b2 + b1 * a21) / det];
    let u = [p[0] - c1[0], p[1] - c1[1]];
    // |u + q t|^2 = (r1 + t)^2.
    let qa = q[0] * q[0] + q[1] * q[1] - 1.0;
    let qb = 2.0 * (u[0] * q[0] + u[1] * q[1]) - 2.0 * r1;
    let qc = u[0] * u[0] + u[1] * u[1] - r1 * r1;
    let roots: Vec<f64> = if qa.abs() < 1e-14 {
        if qb == 0.0 { Vec::new() } else { vec![-qc / qb] }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            Vec::new()
        } else {
            vec![(-qb + disc.sqrt()) / (2.0 * qa), (-qb - disc.sqrt()) / (2.0 * qa)]
        }
    };
    roots.into_iter().map(|t| vec![p[0] + q[0] * t, p[1] + q[1] * t]).collect()
}
