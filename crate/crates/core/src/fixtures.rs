//! Random contact-structured LCPs, `A = J M⁻¹ Jᵀ` with a random full-row-rank
//! Jacobian and a positive diagonal mass matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::lcp::{FrictionPair, LcpProblem};

/// Friction coefficients are drawn from this range.
pub const MU_RANGE: (f64, f64) = (0.1, 1.5);

/// Jacobians with a smaller σ_min/σ_max are redrawn.
pub const MIN_SINGULAR_RATIO: f64 = 0.05;

/// Builds a problem with `contacts` normal rows, each followed by a
/// tangent row when `friction` is set.
pub fn random_contact_lcp<R: Rng + ?Sized>(rng: &mut R, contacts: usize, friction: bool) -> LcpProblem {
    let rows = if friction { 2 * contacts } else { contacts };
    let dofs = rows + rng.random_range(0..=3);
    let j = loop {
        let j = DMatrix::from_fn(rows, dofs, |_, _| rng.random_range(-1.0..1.0));
        let sv = j.singular_values();
        if sv.min() >= MIN_SINGULAR_RATIO * sv.max() {
            break j;
        }
    };
    let inv_mass = DVector::from_fn(dofs, |_, _| 1.0 / rng.random_range(0.5..5.0));
    let a = &j * DMatrix::from_diagonal(&inv_mass) * j.transpose();
    let a = (&a + a.transpose()) * 0.5;

    let velocity = DVector::from_fn(dofs, |_, _| rng.random_range(-1.0..1.0));
    let mut b = &j * velocity;
    let stride = if friction { 2 } else { 1 };
    for c in 0..contacts {
        // bias toward approaching contacts so most problems have active rows
        b[c * stride] -= rng.random_range(0.0..1.0);
    }

    let pairs = if friction {
        (0..contacts)
            .map(|c| FrictionPair {
                index: 2 * c + 1,
                normal: 2 * c,
                mu: rng.random_range(MU_RANGE.0..MU_RANGE.1),
            })
            .collect()
    } else {
        Vec::new()
    };
    LcpProblem::new(a, b, pairs).expect("generated problems are well formed")
}

/// Inputs of the random gradient-audit scenes.
pub mod scenes {
    use nalgebra::{DVector, Vector2};
    use rand::Rng;

    use crate::diffsim::Rollout;
    use crate::flow::FlowOptions;
    use crate::mechanics::{Fixture, LinkSpec, Material, MechanismModel, SystemState};
    use crate::shape::Shape;

    /// `Σ wᵢ xᵢ²` over the stacked final state, with fixed distinct weights.
    pub fn weighted_square(state: &SystemState) -> (f64, DVector<f64>) {
        let n = state.q.len();
        let x = DVector::from_iterator(2 * n, state.q.iter().chain(state.qd.iter()).copied());
        let w = DVector::from_fn(2 * n, |i, _| 0.3 + 0.1 * i as f64);
        let value = x.iter().zip(w.iter()).map(|(x, w)| w * x * x).sum();
        (value, x.component_mul(&w) * 2.0)
    }

    /// A revolute chain under gravity or free bodies drifting apart; nothing
    /// ever touches.
    pub fn contact_free<R: Rng + ?Sized>(rng: &mut R) -> Rollout {
        let mut model = MechanismModel::new(Vector2::new(0.0, -9.81));
        if rng.random_bool(0.5) {
            let links = (0..rng.random_range(1..=3))
                .map(|_| LinkSpec {
                    length: rng.random_range(0.3..1.0),
                    com_offset: rng.random_range(0.1..0.3),
                    mass: rng.random_range(0.5..2.0),
                    inertia: rng.random_range(0.01..0.2),
                    shape: Shape::circle(0.01),
                    material: Material::default(),
                })
                .collect();
            model.add_chain(Vector2::zeros(), links);
        } else {
            for _ in 0..rng.random_range(1..=2) {
                model.add_free_body(
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.05..0.5),
                    Shape::circle(0.1),
                    Material::default(),
                );
            }
        }
        let n = model.dofs();
        let mut q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut qd = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if model.chains().is_empty() {
            // bodies start far apart and separate
            for b in 0..n / 3 {
                q[3 * b] = 3.0 * b as f64;
                qd[3 * b] = b as f64;
            }
        }
        let state = SystemState::new(q.clone(), qd.clone());
        Rollout {
            model,
            state,
            tau: DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)),
            dt: 0.01,
            steps: 10,
            opts: FlowOptions::default(),
        }
    }

    /// A spinning circle or box thrown at the floor, drawn until the rollout
    /// has exactly one impact.
    pub fn single_collision<R: Rng + ?Sized>(rng: &mut R) -> Rollout {
        loop {
            let (e, mu) = (rng.random_range(0.2..1.0), rng.random_range(0.0..0.8));
            let mut model = MechanismModel::new(Vector2::new(0.0, -9.81));
            let shape = if rng.random_bool(0.5) {
                Shape::circle(rng.random_range(0.1..0.4))
            } else {
                Shape::rectangle(rng.random_range(0.1..0.4), rng.random_range(0.1..0.4))
            };
            let clearance = rng.random_range(0.02..0.3);
            let angle: f64 = rng.random_range(-0.6..0.6);
            let lowest = match &shape {
                Shape::Polygon { vertices } => vertices
                    .iter()
                    .map(|v| v.x * angle.sin() + v.y * angle.cos())
                    .fold(f64::INFINITY, f64::min),
                _ => -shape.bounding_radius(),
            };
            model.add_free_body(rng.random_range(0.5..2.0), rng.random_range(0.02..0.2), shape, Material::new(e, mu));
            model.add_fixture(Fixture {
                shape: Shape::floor(0.0),
                position: Vector2::zeros(),
                angle: 0.0,
                material: Material::new(e, mu),
            });
            let state = SystemState::new(
                DVector::from_row_slice(&[0.0, clearance - lowest, angle]),
                DVector::from_row_slice(&[
                    rng.random_range(-2.0..2.0),
                    -rng.random_range(2.0..6.0),
                    rng.random_range(-3.0..3.0),
                ]),
            );
            let rollout = Rollout {
                model,
                tau: DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5)),
                state,
                dt: 0.01,
                steps: 10,
                opts: FlowOptions::default(),
            };
            let Ok(results) = rollout.run() else { continue };
            let impacts: usize = results.iter().map(|r| r.events.collisions).sum();
            // no sustained contact force during propagation
            let resting = results.iter().flat_map(|r| r.tape.segments.iter()).any(|s| match s {
                crate::flow::Segment::P(p) => p
                    .lcp
                    .as_ref()
                    .is_some_and(|l| l.solution.classes.contains(&crate::lcp::Class::C)),
                crate::flow::Segment::C(_) => false,
            });
            if impacts == 1 && !resting {
                return rollout;
            }
        }
    }
}
