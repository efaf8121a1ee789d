use contactdiff::collision::{ccd_toi, contact_jacobian, evaluate, narrow_phase, Collider};
use contactdiff::{Fixture, Material, MechanismModel, Shape};
use nalgebra::{DVector, Vector2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type V = Vector2<f64>;

fn floor() -> Fixture {
    Fixture {
        shape: Shape::floor(0.0),
        position: V::zeros(),
        angle: 0.0,
        material: Material::new(0.5, 0.3),
    }
}

fn rot(v: &V, a: f64) -> V {
    let (s, c) = a.sin_cos();
    V::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Independent geometry of a free body at `(x, y, θ)`.
#[derive(Clone)]
enum World {
    Circle(V, f64),
    Polygon(Vec<V>),
}

fn world(shape: &Shape, q: &[f64]) -> World {
    let c = V::new(q[0], q[1]);
    match shape {
        Shape::Circle { radius } => World::Circle(c, *radius),
        Shape::Polygon { vertices } => World::Polygon(vertices.iter().map(|v| c + rot(v, q[2])).collect()),
        Shape::Halfplane { .. } => unreachable!(),
    }
}

fn segment_distance(p: V, a: V, b: V) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

/// Signed distance from `p` to a ccw convex polygon.
fn polygon_distance(p: V, poly: &[V]) -> f64 {
    let n = poly.len();
    let d = (0..n)
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min);
    let inside = (0..n).all(|i| {
        let e = poly[(i + 1) % n] - poly[i];
        e.x * (p.y - poly[i].y) - e.y * (p.x - poly[i].x) >= 0.0
    });
    if inside {
        -d
    } else {
        d
    }
}

/// Best separating-axis separation of two convex polygons. Equals the
/// signed distance when they overlap and bounds it from below otherwise.
fn sat_separation(a: &[V], b: &[V]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (p, o) in [(a, b), (b, a)] {
        for i in 0..p.len() {
            let e = p[(i + 1) % p.len()] - p[i];
            let n = V::new(e.y, -e.x).normalize();
            let lo = o.iter().map(|v| n.dot(&(v - p[i]))).fold(f64::INFINITY, f64::min);
            best = best.max(lo);
        }
    }
    best
}

fn separation(x: &World, y: &World) -> f64 {
    match (x, y) {
        (World::Circle(a, ra), World::Circle(b, rb)) => (a - b).norm() - ra - rb,
        (World::Circle(c, r), World::Polygon(p)) | (World::Polygon(p), World::Circle(c, r)) => {
            polygon_distance(*c, p) - r
        }
        (World::Polygon(a), World::Polygon(b)) => sat_separation(a, b),
    }
}

fn floor_separation(x: &World) -> f64 {
    match x {
        World::Circle(c, r) => c.y - r,
        World::Polygon(p) => p.iter().map(|v| v.y).fold(f64::INFINITY, f64::min),
    }
}

fn min_separation(shapes: &[Shape], q: &DVector<f64>) -> f64 {
    let worlds: Vec<World> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| world(s, &q.as_slice()[3 * i..3 * i + 3]))
        .collect();
    let mut best = worlds.iter().map(floor_separation).fold(f64::INFINITY, f64::min);
    for i in 0..worlds.len() {
        for j in i + 1..worlds.len() {
            best = best.min(separation(&worlds[i], &worlds[j]));
        }
    }
    best
}

fn random_shape(rng: &mut StdRng) -> Shape {
    if rng.random_bool(0.5) {
        Shape::circle(rng.random_range(0.1..0.5))
    } else {
        Shape::rectangle(rng.random_range(0.05..0.5), rng.random_range(0.05..0.5))
    }
}

#[test]
fn ccd_never_passes_a_penetrating_configuration() {
    let mut rng = StdRng::seed_from_u64(17);
    let dt = 0.05;
    let mut hits = 0;
    for _ in 0..200 {
        let bodies = rng.random_range(1..=2);
        let mut model = MechanismModel::new(V::zeros());
        model.add_fixture(floor());
        let shapes: Vec<Shape> = (0..bodies).map(|_| random_shape(&mut rng)).collect();
        for s in &shapes {
            model.add_free_body(1.0, 0.1, s.clone(), Material::default());
        }
        let q = loop {
            let q = DVector::from_fn(3 * bodies, |i, _| match i % 3 {
                0 => rng.random_range(-0.6..0.6),
                1 => rng.random_range(0.6..1.5),
                _ => rng.random_range(-3.0..3.0),
            });
            if min_separation(&shapes, &q) > 1e-3 {
                break q;
            }
        };
        let qd = DVector::from_fn(3 * bodies, |i, _| match i % 3 {
            0 => rng.random_range(-10.0..10.0),
            1 => rng.random_range(-30.0..5.0),
            _ => rng.random_range(-40.0..40.0),
        });

        let hit = ccd_toi(&model, &q, &qd, dt);
        let end = hit.as_ref().map_or(dt, |h| h.toi);
        for k in 0..=1000 {
            let s = end * k as f64 / 1000.0;
            let sep = min_separation(&shapes, &(&q + &qd * s));
            assert!(sep >= -1e-6, "penetration {sep:e} at s = {s} before reported impact {end}");
        }
        if let Some(h) = hit {
            hits += 1;
            let sep = min_separation(&shapes, &(&q + &qd * h.toi));
            assert!(sep <= 1e-6, "impact reported at separation {sep:e}: {shapes:?} q {q} qd {qd} {h:?}");
        } else {
            // nothing missed between the samples either
            for k in 0..=1000 {
                let s = dt * k as f64 / 1000.0;
                assert!(min_separation(&shapes, &(&q + &qd * s)) >= -1e-6);
            }
        }
    }
    assert!(hits > 50, "only {hits} trials produced an impact");
}

#[test]
fn resting_circle_jacobian() {
    let r = 0.5;
    let mut model = MechanismModel::new(V::zeros());
    model.add_fixture(floor());
    model.add_free_body(1.0, 0.1, Shape::circle(r), Material::default());
    let q = DVector::from_row_slice(&[0.2, r, 0.7]);
    let set = narrow_phase(&model, &q, 1e-4);
    assert_eq!(set.len(), 1);
    let j = &set.jacobian;
    // normal (0, 1) through the center; the tangent row picks up the lever arm
    let expected = [[0.0, 1.0, 0.0], [1.0, 0.0, r]];
    for (row, e) in expected.iter().enumerate() {
        for col in 0..3 {
            assert!((j[(row, col)] - e[col]).abs() < 1e-14, "{j}");
        }
    }
}

#[test]
fn box_on_floor_has_two_corner_contacts() {
    let mut model = MechanismModel::new(V::zeros());
    model.add_fixture(floor());
    model.add_free_body(1.0, 0.1, Shape::rectangle(0.5, 0.25), Material::default());
    let set = narrow_phase(&model, &DVector::from_row_slice(&[0.0, 0.25, 0.0]), 1e-4);
    assert_eq!(set.len(), 2);
    assert!(set.gaps().amax() < 1e-14);
    let xs: Vec<f64> = set.contacts.iter().map(|c| c.point.x).collect();
    assert!(xs.iter().any(|x| (x + 0.5).abs() < 1e-14) && xs.iter().any(|x| (x - 0.5).abs() < 1e-14));
    assert!(narrow_phase(&model, &DVector::from_row_slice(&[0.0, 0.26, 0.0]), 1e-4).is_empty());
}

#[test]
fn stacked_boxes_share_a_face() {
    let mut model = MechanismModel::new(V::zeros());
    model.add_free_body(1.0, 0.1, Shape::rectangle(0.5, 0.5), Material::default());
    model.add_free_body(1.0, 0.1, Shape::rectangle(0.3, 0.3), Material::default());
    let q = DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.1, 0.8, 0.0]);
    let set = narrow_phase(&model, &q, 1e-4);
    assert_eq!(set.len(), 2);
    for c in &set.contacts {
        assert!(c.gap.abs() < 1e-14);
        assert!((c.normal.y.abs() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn jacobian_rows_are_gap_gradient_and_point_velocity() {
    let mut rng = StdRng::seed_from_u64(23);
    let mut checked = 0;
    for _ in 0..100 {
        let shapes = [random_shape(&mut rng), random_shape(&mut rng)];
        let mut model = MechanismModel::new(V::zeros());
        model.add_fixture(floor());
        for s in &shapes {
            model.add_free_body(1.0, 0.1, s.clone(), Material::default());
        }
        let q = DVector::from_fn(6, |i, _| match i % 3 {
            0 => rng.random_range(-0.3..0.3),
            1 => rng.random_range(0.0..0.6),
            _ => rng.random_range(-3.0..3.0),
        });
        let qd = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let set = narrow_phase(&model, &q, 1e3);
        let j = contact_jacobian(&model, &q, &set.contacts);
        for (k, c) in set.contacts.iter().enumerate() {
            let h = 1e-6;
            for d in 0..6 {
                let mut e = DVector::zeros(6);
                e[d] = h;
                let gp = evaluate(&model, &c.pair, (&q + &e).as_slice()).gap;
                let gm = evaluate(&model, &c.pair, (&q - &e).as_slice()).gap;
                assert!((j[(2 * k, d)] - (gp - gm) / (2.0 * h)).abs() < 1e-6);
            }
            // tangential relative velocity of the witness points
            let kin = evaluate(&model, &c.pair, q.as_slice());
            let velocity = |col: Collider, w: [f64; 2]| match col {
                Collider::Fixture(_) => V::zeros(),
                Collider::Body(b) => {
                    let (x, y, w_rate) = (q[3 * b], q[3 * b + 1], qd[3 * b + 2]);
                    V::new(qd[3 * b], qd[3 * b + 1]) + V::new(-(w[1] - y), w[0] - x) * w_rate
                }
            };
            let rel = velocity(c.pair.b, kin.witness_b) - velocity(c.pair.a, kin.witness_a);
            let t = V::new(kin.tangent[0], kin.tangent[1]);
            assert!((j.row(2 * k + 1).dot(&qd.transpose()) - t.dot(&rel)).abs() < 1e-12);
            assert!((t.norm() - 1.0).abs() < 1e-12 && t.dot(&c.normal).abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 100);
}
