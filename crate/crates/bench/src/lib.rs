//! Shared fixtures for the benchmarks.

use contactdiff::fixtures::random_contact_lcp;
use contactdiff::mechanics::Fixture;
use contactdiff::{LcpProblem, Material, MechanismModel, Shape, SystemState};
use nalgebra::{DVector, Vector2};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// `count` frictional contact LCPs with `contacts` contacts each.
pub fn frictional_batch(seed: u64, contacts: usize, count: usize) -> Vec<LcpProblem> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count).map(|_| random_contact_lcp(&mut rng, contacts, true)).collect()
}

/// A stack of `n` unit boxes resting on the floor, each slightly perturbed
/// sideways so contacts keep changing class.
pub fn box_stack(n: usize) -> (MechanismModel, SystemState) {
    let mut model = MechanismModel::new(Vector2::new(0.0, -9.81));
    let mut q = Vec::new();
    for k in 0..n {
        model.add_free_body(1.0, 1.0 / 6.0, Shape::rectangle(0.5, 0.5), Material::new(0.2, 0.4));
        q.extend([0.02 * k as f64, 0.5 + k as f64, 0.0]);
    }
    model.add_fixture(Fixture {
        shape: Shape::floor(0.0),
        position: Vector2::zeros(),
        angle: 0.0,
        material: Material::new(0.2, 0.4),
    });
    let mut qd = DVector::zeros(3 * n);
    qd[0] = 0.5;
    (model, SystemState::new(DVector::from_vec(q), qd))
}

/// A ball dropped onto the floor so one impact happens inside each step.
pub fn bouncing_ball() -> (MechanismModel, SystemState) {
    let mut model = MechanismModel::new(Vector2::zeros());
    model.add_free_body(1.0, 0.125, Shape::circle(0.5), Material::new(1.0, 0.3));
    model.add_fixture(Fixture {
        shape: Shape::floor(0.0),
        position: Vector2::zeros(),
        angle: 0.0,
        material: Material::new(1.0, 0.3),
    });
    let q = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let qd = DVector::from_vec(vec![0.3, -1.0, 0.5]);
    (model, SystemState::new(q, qd))
}
