mod common;

use std::sync::OnceLock;

use common::p;
use feasops::ergodic::{smooth, SmoothingPlan};
use feasops::kirszbraun::{build_f_with, BuildOptions, ExcisedOperator};
use feasops::lipschitz::{
    bounds_table, dr_bound, family_bound, projection_pair_bound, sphere_projection_bound, sphere_reflection_bound,
    TableSpec,
};
use feasops::operators::{check_sign_invariance, dr_step, family_step, vn_step};
use feasops::space::{inner, sample_ball};
use feasops::{Ball, DouglasRachford, FamilyParams, Operator, Point, SamplerConfig, SetDescriptor};
use proptest::prelude::*;

fn coords(dim: usize, span: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-span..span, dim)
}

/// A point with `lo <= |x| <= hi`.
fn shell(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = Point> {
    (prop::collection::vec(-1.0..1.0f64, dim), 0.0..1.0f64).prop_filter_map("direction too short", move |(d, t)| {
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        (n > 1e-3).then(|| p(&d).scale((lo + t * (hi - lo)) / n))
    })
}

fn convex_sets(dim: usize) -> Vec<SetDescriptor> {
    let mut normal = vec![0.0; dim];
    normal[0] = 0.6;
    normal[1] = -0.8;
    let mut dir = vec![0.0; dim];
    dir[1] = 1.0;
    vec![
        SetDescriptor::line(0.5, dim).unwrap(),
        SetDescriptor::affine(Point::padded(&[0.3, -0.2], dim).unwrap(), vec![]).unwrap(),
        SetDescriptor::affine(Point::zeros(dim), vec![p(&dir)]).unwrap(),
        SetDescriptor::halfspace(p(&normal), 0.4).unwrap(),
        SetDescriptor::closed_ball(Point::padded(&[1.5, 0.0], dim).unwrap(), 1.0).unwrap(),
        SetDescriptor::boxed(p(&vec![-0.5; dim]), p(&vec![0.7; dim])).unwrap(),
    ]
}

fn all_sets(dim: usize) -> Vec<SetDescriptor> {
    let mut sets = convex_sets(dim);
    sets.push(SetDescriptor::unit_sphere(dim));
    sets.push(SetDescriptor::scaled_sphere(2.5, dim).unwrap());
    sets
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cauchy_schwarz_and_parallelogram(dim in 1usize..8, seed in any::<u64>()) {
        let pts = sample_ball(&Ball::closed(Point::zeros(dim), 10.0).unwrap(), SamplerConfig::new(seed, 2)).unwrap();
        let (x, y) = (&pts[0], &pts[1]);
        prop_assert!(inner(x, y).unwrap().abs() <= x.norm() * y.norm() * (1.0 + 1e-15));
        let lhs = x.combine(1.0, y, 1.0).norm_squared() + x.combine(1.0, y, -1.0).norm_squared();
        let rhs = 2.0 * x.norm_squared() + 2.0 * y.norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
    }

    #[test]
    fn sampling_is_deterministic(dim in 1usize..6, seed in any::<u64>(), count in 1usize..64) {
        let ball = Ball::closed(Point::zeros(dim), 2.0).unwrap();
        let a = sample_ball(&ball, SamplerConfig::new(seed, count)).unwrap();
        let b = sample_ball(&ball, SamplerConfig::new(seed, count)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn projection_is_idempotent(dim in 2usize..6, c in coords(5, 4.0)) {
        let x = p(&c[..dim]);
        for s in all_sets(dim) {
            let Ok(px) = s.project(&x) else { continue };
            prop_assert!(s.project(&px).unwrap().distance(&px) <= 1e-10, "{}", s);
        }
    }

    #[test]
    fn convex_projection_is_firmly_nonexpansive(dim in 2usize..6, a in coords(5, 4.0), b in coords(5, 4.0)) {
        let (x, y) = (p(&a[..dim]), p(&b[..dim]));
        for s in convex_sets(dim) {
            let (px, py) = (s.project(&x).unwrap(), s.project(&y).unwrap());
            let rest = x.combine(1.0, &px, -1.0).distance(&y.combine(1.0, &py, -1.0));
            prop_assert!(px.distance_squared(&py) + rest * rest <= x.distance_squared(&y) + 1e-9, "{}", s);
            let (rx, ry) = (s.reflect(&x).unwrap(), s.reflect(&y).unwrap());
            prop_assert!(rx.distance(&ry) <= x.distance(&y) + 1e-9, "{}", s);
        }
    }

    #[test]
    fn reflection_fixes_the_set(dim in 2usize..6, c in coords(5, 4.0)) {
        let x = p(&c[..dim]);
        for s in all_sets(dim) {
            let Ok(on) = s.project(&x) else { continue };
            prop_assert!(s.reflect(&on).unwrap().distance(&on) <= 1e-9, "{}", s);
        }
    }

    #[test]
    fn presets_match_named_operators(dim in 2usize..6, c in coords(5, 4.0)) {
        let x = p(&c[..dim]);
        let sphere = SetDescriptor::unit_sphere(dim);
        prop_assume!(x.norm() > 1e-9);
        for set in convex_sets(dim) {
            let dr = dr_step(&sphere, &set, &x).unwrap();
            prop_assert!(family_step(FamilyParams::DR, &sphere, &set, &x).unwrap().distance(&dr) <= 1e-14 * (1.0 + dr.norm()));
            let vn = vn_step(&set, &x).unwrap();
            prop_assert!(family_step(FamilyParams::VN, &sphere, &set, &x).unwrap().distance(&vn) <= 1e-14 * (1.0 + vn.norm()));
        }
    }

    #[test]
    fn convex_douglas_rachford_is_firmly_nonexpansive(dim in 2usize..5, a in coords(4, 4.0), b in coords(4, 4.0)) {
        let (x, y) = (p(&a[..dim]), p(&b[..dim]));
        let sets = convex_sets(dim);
        for (i, s1) in sets.iter().enumerate() {
            let s2 = &sets[(i + 1) % sets.len()];
            let t = DouglasRachford::new(s1.clone(), s2.clone()).unwrap();
            let (tx, ty) = (t.apply(&x).unwrap(), t.apply(&y).unwrap());
            let rest = x.combine(1.0, &tx, -1.0).distance(&y.combine(1.0, &ty, -1.0));
            prop_assert!(tx.distance(&ty) <= x.distance(&y) + 1e-9);
            prop_assert!(tx.distance_squared(&ty) + rest * rest <= x.distance_squared(&y) + 1e-9);
        }
    }

    #[test]
    fn sphere_reflection_identity(x in shell(3, 0.05, 3.0), y in shell(3, 0.05, 3.0)) {
        let s = SetDescriptor::unit_sphere(3);
        let lhs = s.reflect(&x).unwrap().distance_squared(&s.reflect(&y).unwrap());
        let cos = inner(&x, &y).unwrap() / (x.norm() * y.norm());
        let rhs = x.distance_squared(&y) + 4.0 * (2.0 - x.norm() - y.norm()) * (1.0 - cos);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn angle_gap_is_controlled(beta in 0.0..0.95f64, u in shell(3, 0.0, 1.0), v in shell(3, 0.0, 1.0), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let rho = 1.0 - beta;
        let x = u.scale((rho + s * 2.0) / u.norm());
        let y = v.scale((rho + t * 2.0) / v.norm());
        let cos = inner(&x, &y).unwrap() / (x.norm() * y.norm());
        prop_assert!(1.0 - cos <= x.distance_squared(&y) / (2.0 * rho * rho) + 1e-12);
    }

    #[test]
    fn closed_form_bounds_certify_pairs(beta in 0.0..0.95f64, lam in 0.0..1.5f64, u in shell(2, 0.0, 1.0), v in shell(2, 0.0, 1.0), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let rho = 1.0 - beta;
        let x = u.scale((rho + s * 2.0) / u.norm());
        let y = v.scale((rho + t * 2.0) / v.norm());
        let d = x.distance(&y);
        prop_assume!(d > 1e-12);
        let sphere = SetDescriptor::unit_sphere(2);
        let rr = sphere.reflect(&x).unwrap().distance(&sphere.reflect(&y).unwrap());
        prop_assert!(rr <= sphere_reflection_bound(beta).unwrap().value * d + 1e-9);
        let pp = sphere.project(&x).unwrap().distance(&sphere.project(&y).unwrap());
        prop_assert!(pp <= sphere_projection_bound(beta).unwrap().value * d + 1e-9);
        prop_assert!(pp <= projection_pair_bound(&x, &y).unwrap() * d + 1e-12);
        let t = DouglasRachford::sphere_first(SetDescriptor::line(lam, 2).unwrap());
        let tt = t.apply(&x).unwrap().distance(&t.apply(&y).unwrap());
        prop_assert!(tt <= dr_bound(beta).unwrap().value * d + 1e-9);
    }

    #[test]
    fn smoothing_gap_is_gamma_times_distance_to_theta(alpha in 0.0..=1.0f64, c in coords(3, 4.0), th in coords(3, 1.0)) {
        let plan = SmoothingPlan { theta: p(&th), ..SmoothingPlan::new(0.0, alpha, 5.0, p(&[1.0, 0.0, 0.0]), FamilyParams::DR) };
        let t = DouglasRachford::new(SetDescriptor::closed_ball(Point::zeros(3), 1.0).unwrap(), SetDescriptor::line(0.0, 3).unwrap()).unwrap();
        let g = smooth(t.clone(), 1.0, &plan).unwrap();
        let x = p(&c);
        let fx = t.apply(&x).unwrap();
        let gap = g.apply(&x).unwrap().distance(&fx);
        prop_assert!((gap - g.gamma * fx.distance(&plan.theta)).abs() <= 1e-12 * (1.0 + gap));
    }

    #[test]
    fn powers_of_g_contract(alpha in 0.05..=1.0f64, a in coords(3, 4.0), b in coords(3, 4.0)) {
        let plan = SmoothingPlan::new(0.0, alpha, 5.0, p(&[1.0, 0.0, 0.0]), FamilyParams::DR);
        let t = DouglasRachford::new(SetDescriptor::closed_ball(Point::zeros(3), 1.0).unwrap(), SetDescriptor::line(0.0, 3).unwrap()).unwrap();
        let g = smooth(t, 1.0, &plan).unwrap();
        let (mut x, mut y) = (p(&a), p(&b));
        let d0 = x.distance(&y);
        prop_assume!(d0 > 1e-9);
        for n in 1..=10 {
            x = g.apply(&x).unwrap();
            y = g.apply(&y).unwrap();
            prop_assert!(x.distance(&y) / d0 <= alpha.powi(n) + 1e-6, "n = {}", n);
        }
    }
}

fn halfspace_f() -> &'static ExcisedOperator {
    static F: OnceLock<ExcisedOperator> = OnceLock::new();
    F.get_or_init(|| {
        let c = SetDescriptor::line(0.5, 2).unwrap();
        let options = BuildOptions {
            upper_half_only: true,
            range: Some(SetDescriptor::halfspace(p(&[-1.0, 0.0]), 0.0).unwrap()),
            ..Default::default()
        };
        let region = Ball::closed(p(&[0.75f64.sqrt(), 0.5]), 4.0).unwrap();
        build_f_with(&c, 0.5, FamilyParams::DR, SamplerConfig::new(21, 256), &region, &options).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn halfspace_variant_of_g_keeps_sign(x1 in 0.0..2.0f64, x2 in -2.0..2.0f64, alpha in 0.1..2.0f64) {
        let f = halfspace_f();
        let plan = SmoothingPlan::new(0.5, alpha, 4.0, p(&[0.75f64.sqrt(), 0.5]), FamilyParams::DR);
        let gamma = 1.0 - alpha / f.lipschitz();
        let fx = f.apply(&p(&[x1, x2])).unwrap();
        let gx = fx.combine(1.0 - gamma, &plan.theta, gamma);
        prop_assert!(gx.coord(0) >= -1e-9, "{:?}", gx);
    }
}

#[test]
fn plans_differing_in_alpha_differ() {
    let t = DouglasRachford::sphere_first(SetDescriptor::line(0.5, 2).unwrap());
    let x0 = p(&[0.75f64.sqrt(), 0.5]);
    let g1 = smooth(t.clone(), 2.0, &SmoothingPlan::new(0.5, 0.9, 4.0, x0.clone(), FamilyParams::DR)).unwrap();
    let g2 = smooth(t, 2.0, &SmoothingPlan::new(0.5, 0.5, 4.0, x0, FamilyParams::DR)).unwrap();
    let x = p(&[2.0, -1.0]);
    assert!(g1.apply(&x).unwrap().distance(&g2.apply(&x).unwrap()) > 1e-3);
}

#[test]
fn sign_invariance_for_all_heights() {
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0, 1.5] {
        let report = check_sign_invariance(lambda, 2, SamplerConfig::new(31, 2_000)).unwrap();
        assert!(report.passed(), "λ = {lambda}: {:?}", report.violations.first());
    }
}

#[test]
fn table_bounds_equal_calculators_bitwise() {
    let spec = TableSpec {
        betas: vec![0.1, 0.5, 0.9],
        set: SetDescriptor::line(0.5, 2).unwrap(),
        family: FamilyParams::VN,
        pairs: 200,
        seed: 3,
        radius: 3.0,
    };
    for row in bounds_table(&spec).unwrap() {
        let expected = match row.kind.as_str() {
            "sphere_reflection" => sphere_reflection_bound(row.beta).unwrap().value,
            "sphere_projection" => sphere_projection_bound(row.beta).unwrap().value,
            "douglas_rachford" => dr_bound(row.beta).unwrap().value,
            "family" => family_bound(FamilyParams::VN, row.beta).map_or(f64::NAN, |b| b.value),
            other => panic!("unexpected row {other}"),
        };
        assert_eq!(row.theoretical.to_bits(), expected.to_bits(), "{}", row.kind);
    }
}
