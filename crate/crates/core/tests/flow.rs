use contactdiff::collision::narrow_phase;
use contactdiff::flow::{collision_response, replay, simulate, step_full, Segment};
use contactdiff::{FlowOptions, Fixture, Material, MechanismModel, Shape, SystemState};
use nalgebra::{DVector, Vector2};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn floor(e: f64, mu: f64) -> Fixture {
    Fixture {
        shape: Shape::floor(0.0),
        position: Vector2::zeros(),
        angle: 0.0,
        material: Material::new(e, mu),
    }
}

fn momentum(masses: &[f64], qd: &DVector<f64>) -> Vector2<f64> {
    masses
        .iter()
        .enumerate()
        .map(|(b, m)| Vector2::new(qd[3 * b], qd[3 * b + 1]) * *m)
        .sum()
}

/// Two bodies placed in contact along a random direction and moving
/// toward each other.
fn touching_pair(rng: &mut StdRng, restitution: f64) -> (MechanismModel, SystemState, [f64; 2]) {
    let masses = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
    let (r1, r2) = (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5));
    let mut model = MechanismModel::new(Vector2::zeros());
    model.add_free_body(masses[0], rng.random_range(0.05..0.5), Shape::circle(r1), Material::new(restitution, 0.0));
    let box_b = rng.random_bool(0.5);
    let shape = if box_b { Shape::rectangle(r2, r2) } else { Shape::circle(r2) };
    model.add_free_body(masses[1], rng.random_range(0.05..0.5), shape, Material::new(restitution, 0.0));
    let dir = if box_b { Vector2::new(1.0, rng.random_range(-0.9..0.9) * r2 / (r1 + r2)) } else {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Vector2::new(a.cos(), a.sin())
    };
    // circle against the box's left face, or two circles along `dir`
    let p2 = if box_b {
        Vector2::new(r1 + r2, -dir.y * (r1 + r2))
    } else {
        dir * (r1 + r2)
    };
    let n = if box_b { Vector2::new(1.0, 0.0) } else { dir };
    let v1 = n * rng.random_range(0.5..3.0) + Vector2::new(-n.y, n.x) * rng.random_range(-1.0..1.0);
    let v2 = -n * rng.random_range(0.0..2.0);
    let q = dv(&[0.0, 0.0, 0.0, p2.x, p2.y, 0.0]);
    let qd = dv(&[v1.x, v1.y, rng.random_range(-2.0..2.0), v2.x, v2.y, rng.random_range(-2.0..2.0)]);
    (model, SystemState::new(q, qd), masses)
}

#[test]
fn elastic_response_conserves_energy_and_momentum() {
    let mut rng = StdRng::seed_from_u64(9);
    let opts = FlowOptions::default();
    for _ in 0..200 {
        let (model, state, masses) = touching_pair(&mut rng, 1.0);
        assert_eq!(narrow_phase(&model, &state.q, opts.slop).len(), 1);
        let (after, seg) = collision_response(&model, &state, None, &opts).unwrap();
        assert!(seg.lcp.is_some());
        let (e0, e1) = (model.kinetic_energy(&state.q, &state.qd), model.kinetic_energy(&after.q, &after.qd));
        assert!((e1 - e0).abs() <= 1e-8 * e0, "energy {e0} -> {e1}");
        assert!((momentum(&masses, &after.qd) - momentum(&masses, &state.qd)).amax() <= 1e-10);
        assert_eq!(after.q, state.q);
    }
}

#[test]
fn plastic_response_stops_normal_approach() {
    let mut rng = StdRng::seed_from_u64(10);
    let opts = FlowOptions::default();
    for _ in 0..50 {
        let (model, state, masses) = touching_pair(&mut rng, 0.0);
        let (after, seg) = collision_response(&model, &state, None, &opts).unwrap();
        let v = &seg.contacts.jacobian * &after.qd;
        assert!(v[0].abs() < 1e-12);
        assert!((momentum(&masses, &after.qd) - momentum(&masses, &state.qd)).amax() <= 1e-10);
        assert!(model.kinetic_energy(&after.q, &after.qd) <= model.kinetic_energy(&state.q, &state.qd));
    }
}

#[test]
fn resting_box_stays_at_rest() {
    let mut model = MechanismModel::new(Vector2::new(0.0, -9.81));
    model.add_free_body(2.0, 0.2, Shape::rectangle(0.5, 0.25), Material::new(0.0, 0.5));
    model.add_fixture(floor(0.0, 0.5));
    let state = SystemState::new(dv(&[0.3, 0.25, 0.0]), DVector::zeros(3));
    let out = simulate(&model, &state, &DVector::zeros(3), 0.01, 100, &FlowOptions::default()).unwrap();
    let last = &out.last().unwrap().state;
    assert!(last.qd.norm() <= 1e-10, "{}", last.qd);
    assert!((&last.q - &state.q).amax() <= 1e-10);
}

#[test]
fn bounce_splits_the_step_at_impact() {
    let mut model = MechanismModel::new(Vector2::zeros());
    model.add_free_body(1.0, 0.1, Shape::circle(0.5), Material::new(1.0, 0.0));
    model.add_fixture(floor(1.0, 0.0));
    let state = SystemState::new(dv(&[0.0, 1.0, 0.0]), dv(&[0.0, -1.0, 0.0]));
    let r = step_full(&model, &state, &DVector::zeros(3), 1.0, &FlowOptions::default()).unwrap();
    assert_eq!(r.events.collisions, 1);
    assert!((r.events.tois[0] - 0.5).abs() < 1e-9);
    assert!((r.state.q[1] - 1.0).abs() < 1e-9);
    assert!((r.state.qd[1] - 1.0).abs() < 1e-12);

    let no_ccd = FlowOptions { ccd: false, ..FlowOptions::default() };
    let r = step_full(&model, &state, &DVector::zeros(3), 1.0, &no_ccd).unwrap();
    assert_eq!(r.events.discrete_responses, 1);
    assert!(r.state.q[1].abs() < 1e-12);
}

#[test]
fn thin_wall_is_not_tunneled() {
    let mut model = MechanismModel::new(Vector2::zeros());
    model.add_free_body(1.0, 0.01, Shape::circle(0.05), Material::new(0.5, 0.0));
    model.add_fixture(Fixture {
        shape: Shape::rectangle(0.001, 0.5),
        position: Vector2::new(0.5, 0.0),
        angle: 0.0,
        material: Material::new(0.5, 0.0),
    });
    let state = SystemState::new(dv(&[0.0, 0.0, 0.0]), dv(&[10.0, 0.0, 0.0]));
    let out = simulate(&model, &state, &DVector::zeros(3), 0.01, 100, &FlowOptions::default()).unwrap();
    for r in &out {
        assert!(r.state.q[0] + 0.05 <= 0.499 + 1e-6);
    }
    assert!(out.iter().any(|r| r.events.collisions > 0));
    assert!(out.last().unwrap().state.qd[0] < 0.0);

    let no_ccd = FlowOptions { ccd: false, ..FlowOptions::default() };
    let out = simulate(&model, &state, &DVector::zeros(3), 0.01, 100, &no_ccd).unwrap();
    assert!(out.last().unwrap().state.q[0] > 0.5, "discrete stepping tunnels through");
}

fn random_scene(rng: &mut StdRng) -> (MechanismModel, SystemState) {
    let mut model = MechanismModel::new(Vector2::new(0.0, -9.81));
    model.add_fixture(floor(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
    let bodies = rng.random_range(1..=2);
    for _ in 0..bodies {
        let shape = if rng.random_bool(0.5) { Shape::circle(0.2) } else { Shape::rectangle(0.25, 0.15) };
        model.add_free_body(1.0, 0.05, shape, Material::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
    }
    let q = DVector::from_fn(3 * bodies, |i, _| match i % 3 {
        0 => 0.8 * (i / 3) as f64,
        1 => rng.random_range(0.3..0.8),
        _ => rng.random_range(-1.0..1.0),
    });
    let qd = DVector::from_fn(3 * bodies, |_, _| rng.random_range(-3.0..3.0));
    (model, SystemState::new(q, qd))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tape_replays_and_partitions_the_step(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (model, state) = random_scene(&mut rng);
        let opts = FlowOptions::default();
        let out = simulate(&model, &state, &DVector::zeros(model.dofs()), 0.02, 20, &opts).unwrap();
        for r in &out {
            prop_assert!((r.tape.p_dt_sum() - r.tape.dt).abs() <= 1e-12);
            prop_assert!(matches!(r.tape.segments.first(), Some(Segment::P(_))));
            for w in r.tape.segments.windows(2) {
                prop_assert!(!(matches!(w[0], Segment::C(_)) && matches!(w[1], Segment::C(_))));
                prop_assert_eq!(&w[0].state_out().q, match &w[1] {
                    Segment::P(p) => &p.state_in.q,
                    Segment::C(c) => &c.state_in.q,
                });
            }
            let again = replay(&model, &r.tape, &opts.solver).unwrap();
            prop_assert!((&again.q - &r.state.q).amax() <= 1e-12);
            prop_assert!((&again.qd - &r.state.qd).amax() <= 1e-12);
            for seg in &r.tape.segments {
                if let Some(l) = seg.lcp() {
                    let rep = contactdiff::lcp::validate_solution(&l.problem, &l.solution, 1e-8).unwrap();
                    prop_assert!(rep.valid);
                }
            }
        }
    }
}
