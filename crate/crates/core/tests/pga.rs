use core::f64::consts::PI;

use planar_gatr_core::pga::{
    decode_point, encode_line, encode_point, idx, motor_from_pose, sandwich, wrap_angle, Motor, Multivector, Pose2, BASIS_NAMES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Geometric product table x·y, rows x, columns y, basis order 1,e0,e1,e2,e01,e20,e12,e012.
const GP_TABLE: [[&str; 8]; 8] = [
    ["1", "e0", "e1", "e2", "e01", "e20", "e12", "e012"],
    ["e0", "0", "e01", "-e20", "0", "0", "e012", "0"],
    ["e1", "-e01", "1", "e12", "-e0", "e012", "e2", "e20"],
    ["e2", "e20", "-e12", "1", "e012", "e0", "-e1", "e01"],
    ["e01", "0", "e0", "e012", "0", "0", "-e20", "0"],
    ["e20", "0", "e012", "-e0", "0", "0", "e01", "0"],
    ["e12", "e012", "-e2", "e1", "e20", "-e01", "-1", "-e0"],
    ["e012", "0", "e20", "e01", "0", "0", "-e0", "0"],
];

const WEDGE_TABLE: [[&str; 8]; 8] = [
    ["1", "e0", "e1", "e2", "e01", "e20", "e12", "e012"],
    ["e0", "0", "e01", "-e20", "0", "0", "e012", "0"],
    ["e1", "-e01", "0", "e12", "0", "e012", "0", "0"],
    ["e2", "e20", "-e12", "0", "e012", "0", "0", "0"],
    ["e01", "0", "0", "e012", "0", "0", "0", "0"],
    ["e20", "0", "e012", "0", "0", "0", "0", "0"],
    ["e12", "e012", "0", "0", "0", "0", "0", "0"],
    ["e012", "0", "0", "0", "0", "0", "0", "0"],
];

fn parse_entry(s: &str) -> Multivector {
    if s == "0" {
        return Multivector::ZERO;
    }
    let (sign, name) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s),
    };
    let i = BASIS_NAMES.iter().position(|n| *n == name).expect("basis name");
    Multivector::basis(i).scale(sign)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mv(r: &mut ChaCha8Rng) -> Multivector {
    let mut c = [0.0; 8];
    for v in c.iter_mut() {
        *v = r.random_range(-2.0..2.0);
    }
    Multivector(c)
}

fn random_pose(r: &mut ChaCha8Rng, extent: f64) -> Pose2 {
    Pose2::new(r.random_range(-extent..extent), r.random_range(-extent..extent), r.random_range(-PI..PI))
}

fn rel_err(a: &Multivector, b: &Multivector) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(b.max_abs()).max(1.0)
}

#[test]
fn geometric_product_matches_table_exactly() {
    for i in 0..8 {
        for j in 0..8 {
            let got = Multivector::basis(i) * Multivector::basis(j);
            assert_eq!(got, parse_entry(GP_TABLE[i][j]), "{} * {}", BASIS_NAMES[i], BASIS_NAMES[j]);
        }
    }
}

#[test]
fn wedge_product_matches_table_exactly() {
    for i in 0..8 {
        for j in 0..8 {
            let got = Multivector::basis(i).wedge(&Multivector::basis(j));
            assert_eq!(got, parse_entry(WEDGE_TABLE[i][j]), "{} ^ {}", BASIS_NAMES[i], BASIS_NAMES[j]);
        }
    }
}

#[test]
fn geometric_product_is_associative() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (a, b, c) = (random_mv(&mut r), random_mv(&mut r), random_mv(&mut r));
        let lhs = (a * b) * c;
        let rhs = a * (b * c);
        assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }
}

#[test]
fn scalar_is_identity() {
    let mut r = rng(2);
    for _ in 0..100 {
        let x = random_mv(&mut r);
        assert_eq!(x * Multivector::ONE, x);
        assert_eq!(Multivector::ONE * x, x);
    }
}

#[test]
fn wedge_of_vectors_is_antisymmetric() {
    let mut r = rng(3);
    for _ in 0..100 {
        let v = random_mv(&mut r).grade_project(1).unwrap();
        assert!(v.wedge(&v).max_abs() < 1e-15);
        let w = random_mv(&mut r).grade_project(1).unwrap();
        assert!((v.wedge(&w) + w.wedge(&v)).max_abs() < 1e-14);
    }
}

#[test]
fn dual_is_reversal_and_involution() {
    let mut r = rng(4);
    for _ in 0..100 {
        let x = random_mv(&mut r);
        assert_eq!(x.dual().dual(), x);
        let mut rev = x.0;
        rev.reverse();
        assert_eq!(x.dual().0, rev);
    }
    // each basis blade wedged with its dual gives the pseudoscalar
    for i in 0..8 {
        let b = Multivector::basis(i);
        assert_eq!(b.wedge(&b.dual()), Multivector::E012, "{}", BASIS_NAMES[i]);
    }
}

#[test]
fn join_is_dual_of_wedge_of_duals_bitwise() {
    let mut r = rng(5);
    for _ in 0..200 {
        let (a, b) = (random_mv(&mut r), random_mv(&mut r));
        assert_eq!(a.join(&b), a.dual().wedge(&b.dual()).dual());
    }
}

#[test]
fn grade_projections_sum_to_input() {
    let mut r = rng(6);
    for _ in 0..100 {
        let x = random_mv(&mut r);
        let sum = (0..4).map(|k| x.grade_project(k).unwrap()).fold(Multivector::ZERO, |a, b| a + b);
        assert_eq!(sum, x);
    }
}

#[test]
fn line_intersection_closed_form() {
    // (1,0,0) is x = 0 and (0,1,0) is y = 0: they meet at the origin with unit weight.
    let l1 = encode_line(1.0, 0.0, 0.0, false).unwrap();
    let l2 = encode_line(0.0, 1.0, 0.0, false).unwrap();
    assert_eq!(l1.wedge(&l2), Multivector::E12);

    let mut r = rng(7);
    for _ in 0..1000 {
        let (a1, b1, c1) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-5.0..5.0));
        let (a2, b2, c2) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-5.0..5.0));
        let det: f64 = a1 * b2 - a2 * b1;
        if det.abs() < 0.1 {
            continue;
        }
        let p = encode_line(a1, b1, c1, false).unwrap().wedge(&encode_line(a2, b2, c2, false).unwrap());
        let x0 = (b1 * c2 - b2 * c1) / det;
        let y0 = (a2 * c1 - a1 * c2) / det;
        let expected = encode_point(x0, y0).scale(det);
        assert!(rel_err(&p, &expected) < 1e-12);
        let (x, y) = decode_point(&p).unwrap();
        let n1 = (a1 * a1 + b1 * b1).sqrt();
        let n2 = (a2 * a2 + b2 * b2).sqrt();
        assert!(((a1 * x + b1 * y + c1) / n1).abs() <= 1e-10);
        assert!(((a2 * x + b2 * y + c2) / n2).abs() <= 1e-10);
    }
}

#[test]
fn join_of_points_closed_form() {
    let l = encode_point(0.0, 0.0).join(&encode_point(1.0, 0.0));
    assert_eq!(l, Multivector::E2);

    let mut r = rng(8);
    for _ in 0..1000 {
        let (a, b, c, d) =
            (r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
        let line = encode_point(a, b).join(&encode_point(c, d));
        let expected = Multivector::E1.scale(b - d) + Multivector::E2.scale(c - a) + Multivector::E0.scale(a * d - b * c);
        assert!(rel_err(&line, &expected) < 1e-12);
        let (la, lb, lc) = (line[idx::E1], line[idx::E2], line[idx::E0]);
        let n = (la * la + lb * lb).sqrt();
        if n > 1e-3 {
            assert!(((la * a + lb * b + lc) / n).abs() <= 1e-10);
            assert!(((la * c + lb * d + lc) / n).abs() <= 1e-10);
        }
    }
}

#[test]
fn point_line_join_is_signed_distance() {
    let d = encode_point(3.0, 4.0).join(&encode_line(1.0, 0.0, 0.0, true).unwrap());
    assert_eq!(d, Multivector::scalar(3.0));

    let mut r = rng(9);
    for _ in 0..1000 {
        let (x0, y0) = (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0));
        let phi: f64 = r.random_range(-PI..PI);
        let c = r.random_range(-10.0..10.0);
        let (a, b) = (phi.cos(), phi.sin());
        let j = encode_point(x0, y0).join(&encode_line(a, b, c, true).unwrap());
        let expected = a * x0 + b * y0 + c;
        assert!((j.s() - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!(j.grade_project(0).unwrap().max_abs_diff(&j) == 0.0);
    }
}

#[test]
fn translation_acts_on_points_and_lines() {
    let p = sandwich(&Motor::translator(2.0, 3.0), &encode_point(1.0, 1.0)).unwrap();
    assert_eq!(decode_point(&p).unwrap(), (3.0, 4.0));

    let mut r = rng(10);
    for _ in 0..200 {
        let (a, b) = (r.random_range(-50.0..50.0), r.random_range(-50.0..50.0));
        let (la, lb, lc) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-5.0..5.0));
        let l = sandwich(&Motor::translator(a, b), &encode_line(la, lb, lc, false).unwrap()).unwrap();
        let expected = encode_line(la, lb, lc - la * a - lb * b, false).unwrap();
        assert!(rel_err(&l, &expected) <= 1e-12);
    }
}

#[test]
fn rotation_quarter_turn() {
    let x = sandwich(&Motor::rotor(PI / 2.0), &Multivector::E1).unwrap();
    assert!(x.max_abs_diff(&Multivector::E2) < 1e-15);
}

#[test]
fn pseudoscalar_is_fixed_by_every_motor() {
    let mut r = rng(11);
    for _ in 0..100 {
        let u = motor_from_pose(&random_pose(&mut r, 100.0));
        let y = sandwich(&u, &Multivector::E012).unwrap();
        assert!(y.max_abs_diff(&Multivector::E012) < 1e-12);
    }
}

// General translation / rotation formulas from the gated-nonlinearity proof.
fn translate_formula(x: &Multivector, a: f64, b: f64) -> Multivector {
    let c = x.0;
    Multivector([c[0], c[1] - a * c[2] - b * c[3], c[2], c[3], c[4] + b * c[6], c[5] + a * c[6], c[6], c[7]])
}

fn rotate_formula(x: &Multivector, t: f64) -> Multivector {
    let c = x.0;
    let (s, co) = t.sin_cos();
    Multivector([c[0], c[1], c[2] * co - c[3] * s, c[2] * s + c[3] * co, c[4] * co + c[5] * s, c[5] * co - c[4] * s, c[6], c[7]])
}

#[test]
fn sandwich_matches_general_formulas() {
    let mut r = rng(12);
    for _ in 0..500 {
        let x = random_mv(&mut r);
        let (a, b) = (r.random_range(-100.0..100.0), r.random_range(-100.0..100.0));
        let t = r.random_range(-PI..PI);
        let y = sandwich(&Motor::translator(a, b), &x).unwrap();
        assert!(rel_err(&y, &translate_formula(&x, a, b)) <= 1e-12);
        let z = sandwich(&Motor::rotor(t), &x).unwrap();
        assert!(rel_err(&z, &rotate_formula(&x, t)) <= 1e-12);
    }
}

#[test]
fn pose_motor_matches_matrix_oracle_on_points() {
    let mut r = rng(13);
    for _ in 0..1000 {
        let g = random_pose(&mut r, 100.0);
        let (px, py) = (r.random_range(-100.0..100.0), r.random_range(-100.0..100.0));
        let moved = sandwich(&motor_from_pose(&g), &encode_point(px, py)).unwrap();
        let (x, y) = decode_point(&moved).unwrap();
        // R(θ) p + t
        let (s, c) = g.theta.sin_cos();
        let (ex, ey) = (c * px - s * py + g.x, s * px + c * py + g.y);
        let scale = ex.abs().max(ey.abs()).max(1.0);
        assert!((x - ex).abs() <= 1e-12 * scale && (y - ey).abs() <= 1e-12 * scale);
    }
}

#[test]
fn pose_motor_matches_matrix_oracle_on_lines() {
    let mut r = rng(14);
    for _ in 0..1000 {
        let g = random_pose(&mut r, 100.0);
        let phi: f64 = r.random_range(-PI..PI);
        let (a, b, c) = (phi.cos(), phi.sin(), r.random_range(-20.0..20.0));
        let moved = sandwich(&motor_from_pose(&g), &encode_line(a, b, c, true).unwrap()).unwrap();
        // normal rotates with R, offset picks up -n'·t
        let (s, co) = g.theta.sin_cos();
        let (na, nb) = (co * a - s * b, s * a + co * b);
        let nc = c - na * g.x - nb * g.y;
        let expected = encode_line(na, nb, nc, false).unwrap();
        assert!(rel_err(&moved, &expected) <= 1e-12);
    }
}

#[test]
fn pose_motor_maps_origin_to_pose() {
    let mut r = rng(15);
    for _ in 0..200 {
        let p = random_pose(&mut r, 50.0);
        let o = motor_from_pose(&p).apply(&encode_point(0.0, 0.0));
        let (x, y) = decode_point(&o).unwrap();
        assert!((x - p.x).abs() < 1e-12 && (y - p.y).abs() < 1e-12);
    }
}

#[test]
fn motor_composition_is_pose_composition() {
    let mut r = rng(16);
    for _ in 0..500 {
        let (a, b) = (random_pose(&mut r, 30.0), random_pose(&mut r, 30.0));
        let lhs = motor_from_pose(&a).compose(&motor_from_pose(&b));
        let rhs = motor_from_pose(&a.compose(&b));
        assert!(lhs.approx_eq_action(&rhs, 1e-12));
        let n = lhs.norm_sq().sqrt();
        assert!((n - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn motor_times_inverse_is_one() {
    let mut r = rng(17);
    for _ in 0..500 {
        let u = motor_from_pose(&random_pose(&mut r, 100.0));
        let p = u.to_multivector() * u.inverse().unwrap().to_multivector();
        assert!(p.max_abs_diff(&Multivector::ONE) <= 1e-12);
    }
}

#[test]
fn inner_product_is_invariant() {
    let mut r = rng(18);
    for _ in 0..1000 {
        let u = motor_from_pose(&random_pose(&mut r, 100.0));
        let (x, y) = (random_mv(&mut r), random_mv(&mut r));
        let before = x.inner(&y);
        let after = u.apply(&x).inner(&u.apply(&y));
        let scale = x.max_abs() * y.max_abs() * 4.0;
        assert!((before - after).abs() <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn sandwich_is_linear() {
    let mut r = rng(19);
    for _ in 0..500 {
        let u = motor_from_pose(&random_pose(&mut r, 100.0));
        let (x, y) = (random_mv(&mut r), random_mv(&mut r));
        let (al, be) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let lhs = u.apply(&(x.scale(al) + y.scale(be)));
        let rhs = u.apply(&x).scale(al) + u.apply(&y).scale(be);
        assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }
}

#[test]
fn line_through_origin_at_angle() {
    for k in 0..16 {
        let t = -PI + k as f64 * PI / 8.0 + 0.01;
        let (s, c) = t.sin_cos();
        let l = encode_line(-s, c, 0.0, true).unwrap();
        // direction (cos t, sin t) lies on the line
        assert!((l[idx::E1] * c + l[idx::E2] * s).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn decode_inverts_encode(x in -1e4f64..1e4, y in -1e4f64..1e4) {
        prop_assert_eq!(decode_point(&encode_point(x, y)).unwrap(), (x, y));
    }

    #[test]
    fn wrap_angle_range(t in -100.0f64..100.0) {
        let w = wrap_angle(t);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((w - t) / (2.0 * PI)).round() * 2.0 * PI - (w - t) < 1e-9);
    }

    #[test]
    fn products_stay_finite(a in proptest::array::uniform8(-1e3f64..1e3), b in proptest::array::uniform8(-1e3f64..1e3)) {
        let (a, b) = (Multivector(a), Multivector(b));
        prop_assert!((a * b).is_finite());
        prop_assert!(a.wedge(&b).is_finite());
        prop_assert!(a.join(&b).is_finite());
    }
}
