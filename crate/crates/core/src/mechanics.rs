//! Generalized-coordinate models of free planar bodies and planar revolute
//! chains.
//!
//! A free body contributes `(x, y, θ)`. A chain contributes one relative
//! joint angle per link; link `j` has absolute angle `φ_j = q_0 + … + q_j`
//! (measured from the +x axis) and its body frame sits at its center of
//! mass, `com_offset` along the link from its joint.
//!
//! Dynamics follow `M q̈ = τ − c`, with gravity folded into `c`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::shape::Shape;

pub const MAX_CHAIN_LINKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub restitution: f64,
    pub friction: f64,
}

impl Material {
    pub fn new(restitution: f64, friction: f64) -> Self {
        Self {
            restitution,
            friction,
        }
    }
}

impl Default for Material {
    fn default() -> Self {
        Self::new(0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyKind {
    /// First of the body's three coordinates.
    Free { dof: usize },
    Link { chain: usize, link: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub kind: BodyKind,
    pub mass: f64,
    pub inertia: f64,
    pub shape: Shape,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub base: Vector2<f64>,
    pub lengths: Vec<f64>,
    pub com_offsets: Vec<f64>,
    /// Coordinate of the first joint.
    pub dof: usize,
    pub bodies: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub length: f64,
    pub com_offset: f64,
    pub mass: f64,
    pub inertia: f64,
    pub shape: Shape,
    pub material: Material,
}

impl LinkSpec {
    /// A massless rod of length `length` with a point mass at its tip.
    pub fn point_mass(length: f64, mass: f64, shape: Shape, material: Material) -> Self {
        Self {
            length,
            com_offset: length,
            mass,
            inertia: 0.0,
            shape,
            material,
        }
    }
}

/// Static collision geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub shape: Shape,
    pub position: Vector2<f64>,
    pub angle: f64,
    pub material: Material,
}

/// Generalized positions and velocities at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub t: f64,
}

impl SystemState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd, t: 0.0 }
    }

    pub fn check(&self, model: &MechanismModel) -> Result<()> {
        for len in [self.q.len(), self.qd.len()] {
            if len != model.dofs() {
                return Err(Error::DimensionMismatch {
                    expected: model.dofs(),
                    got: len,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<S> {
    pub position: [S; 2],
    pub angle: S,
}

impl<S: Scalar> Pose<S> {
    pub fn constant(position: Vector2<f64>, angle: f64) -> Self {
        Self {
            position: [S::from_f64(position.x), S::from_f64(position.y)],
            angle: S::from_f64(angle),
        }
    }

    pub fn rotate(&self, r: Vector2<f64>) -> [S; 2] {
        let (s, c) = (self.angle.sin(), self.angle.cos());
        [c.scale(r.x) - s.scale(r.y), s.scale(r.x) + c.scale(r.y)]
    }

    pub fn to_world(&self, r: Vector2<f64>) -> [S; 2] {
        let d = self.rotate(r);
        [self.position[0] + d[0], self.position[1] + d[1]]
    }

    pub fn value(&self) -> Pose<f64> {
        Pose {
            position: [self.position[0].value(), self.position[1].value()],
            angle: self.angle.value(),
        }
    }
}

/// Counter-clockwise quarter turn.
pub fn perp<S: Scalar>(v: [S; 2]) -> [S; 2] {
    [-v[1], v[0]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismModel {
    bodies: Vec<Body>,
    chains: Vec<Chain>,
    fixtures: Vec<Fixture>,
    gravity: Vector2<f64>,
    dofs: usize,
    pub friction_override: Option<f64>,
    pub restitution_override: Option<f64>,
}

impl MechanismModel {
    pub fn new(gravity: Vector2<f64>) -> Self {
        Self {
            bodies: Vec::new(),
            chains: Vec::new(),
            fixtures: Vec::new(),
            gravity,
            dofs: 0,
            friction_override: None,
            restitution_override: None,
        }
    }

    pub fn add_free_body(&mut self, mass: f64, inertia: f64, shape: Shape, material: Material) -> usize {
        self.bodies.push(Body {
            kind: BodyKind::Free { dof: self.dofs },
            mass,
            inertia,
            shape,
            material,
        });
        self.dofs += 3;
        self.bodies.len() - 1
    }

    /// Returns the chain index; its link bodies are appended in order.
    pub fn add_chain(&mut self, base: Vector2<f64>, links: Vec<LinkSpec>) -> usize {
        let chain = self.chains.len();
        let mut bodies = Vec::with_capacity(links.len());
        let mut lengths = Vec::with_capacity(links.len());
        let mut com_offsets = Vec::with_capacity(links.len());
        for (link, spec) in links.into_iter().enumerate() {
            lengths.push(spec.length);
            com_offsets.push(spec.com_offset);
            bodies.push(self.bodies.len());
            self.bodies.push(Body {
                kind: BodyKind::Link { chain, link },
                mass: spec.mass,
                inertia: spec.inertia,
                shape: spec.shape,
                material: spec.material,
            });
        }
        let n = lengths.len();
        self.chains.push(Chain {
            base,
            lengths,
            com_offsets,
            dof: self.dofs,
            bodies,
        });
        self.dofs += n;
        chain
    }

    pub fn add_fixture(&mut self, fixture: Fixture) -> usize {
        self.fixtures.push(fixture);
        self.fixtures.len() - 1
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn fixtures(&self) -> &[Fixture] {
        &self.fixtures
    }

    pub fn gravity(&self) -> Vector2<f64> {
        self.gravity
    }

    pub fn dofs(&self) -> usize {
        self.dofs
    }

    pub fn validate(&self) -> Result<()> {
        let material_ok = |m: &Material| (0.0..=1.0).contains(&m.restitution) && m.friction >= 0.0;
        for (i, b) in self.bodies.iter().enumerate() {
            if !(b.mass > 0.0) {
                return Err(Error::InvalidModel(format!("body {i}: mass must be positive")));
            }
            // point-mass links carry no rotational inertia
            let inertia_ok = match b.kind {
                BodyKind::Free { .. } => b.inertia > 0.0,
                BodyKind::Link { .. } => b.inertia >= 0.0,
            };
            if !inertia_ok {
                return Err(Error::InvalidModel(format!("body {i}: invalid inertia {}", b.inertia)));
            }
            if !material_ok(&b.material) {
                return Err(Error::InvalidModel(format!("body {i}: invalid material")));
            }
            if matches!(b.shape, Shape::Halfplane { .. }) {
                return Err(Error::InvalidModel(format!("body {i}: halfplanes must be fixtures")));
            }
            b.shape.validate()?;
        }
        for (i, c) in self.chains.iter().enumerate() {
            if c.lengths.is_empty() || c.lengths.len() > MAX_CHAIN_LINKS {
                return Err(Error::InvalidModel(format!(
                    "chain {i}: link count must be 1..={MAX_CHAIN_LINKS}"
                )));
            }
            if c.lengths.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::InvalidModel(format!("chain {i}: link lengths must be positive")));
            }
        }
        for (i, f) in self.fixtures.iter().enumerate() {
            if !material_ok(&f.material) {
                return Err(Error::InvalidModel(format!("fixture {i}: invalid material")));
            }
            f.shape.validate()?;
        }
        for (name, v) in [("friction", self.friction_override), ("restitution", self.restitution_override)] {
            if let Some(v) = v {
                if v < 0.0 || (name == "restitution" && v > 1.0) {
                    return Err(Error::InvalidModel(format!("{name} override {v} out of range")));
                }
            }
        }
        Ok(())
    }

    /// Inertial parameter vector: `[mass_0, inertia_0, mass_1, …]`.
    pub fn params(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.bodies.len(),
            self.bodies.iter().flat_map(|b| [b.mass, b.inertia]),
        )
    }

    pub fn with_params(&self, params: &DVector<f64>) -> Result<Self> {
        if params.len() != 2 * self.bodies.len() {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.bodies.len(),
                got: params.len(),
            });
        }
        let mut out = self.clone();
        for (i, b) in out.bodies.iter_mut().enumerate() {
            b.mass = params[2 * i];
            b.inertia = params[2 * i + 1];
        }
        Ok(out)
    }

    /// Restitution and friction for a contact between two materials.
    pub fn pair_material(&self, a: &Material, b: &Material) -> (f64, f64) {
        let restitution = self
            .restitution_override
            .unwrap_or(a.restitution.max(b.restitution));
        let friction = self
            .friction_override
            .unwrap_or((a.friction * b.friction).sqrt());
        (restitution, friction)
    }

    /// Joint positions of a chain followed by the absolute link angles.
    fn chain_geometry<S: Scalar>(&self, chain: &Chain, q: &[S]) -> (Vec<[S; 2]>, Vec<S>) {
        let mut joints = Vec::with_capacity(chain.lengths.len());
        let mut angles = Vec::with_capacity(chain.lengths.len());
        let mut p = [S::from_f64(chain.base.x), S::from_f64(chain.base.y)];
        let mut phi = S::zero();
        for (k, &len) in chain.lengths.iter().enumerate() {
            phi += q[chain.dof + k];
            joints.push(p);
            angles.push(phi);
            p = [p[0] + phi.cos().scale(len), p[1] + phi.sin().scale(len)];
        }
        (joints, angles)
    }

    pub fn pose<S: Scalar>(&self, body: usize, q: &[S]) -> Pose<S> {
        match self.bodies[body].kind {
            BodyKind::Free { dof } => Pose {
                position: [q[dof], q[dof + 1]],
                angle: q[dof + 2],
            },
            BodyKind::Link { chain, link } => {
                let c = &self.chains[chain];
                let (joints, angles) = self.chain_geometry(c, q);
                let phi = angles[link];
                let off = c.com_offsets[link];
                Pose {
                    position: [
                        joints[link][0] + phi.cos().scale(off),
                        joints[link][1] + phi.sin().scale(off),
                    ],
                    angle: phi,
                }
            }
        }
    }

    /// Columns `∂p/∂q_m` of a world point `p` rigidly attached to `body`;
    /// coordinates that do not move the body are omitted.
    pub fn point_jacobian<S: Scalar>(&self, body: usize, q: &[S], point: [S; 2]) -> Vec<(usize, [S; 2])> {
        match self.bodies[body].kind {
            BodyKind::Free { dof } => {
                let (one, zero) = (S::from_f64(1.0), S::zero());
                let r = [point[0] - q[dof], point[1] - q[dof + 1]];
                vec![(dof, [one, zero]), (dof + 1, [zero, one]), (dof + 2, perp(r))]
            }
            BodyKind::Link { chain, link } => {
                let c = &self.chains[chain];
                let (joints, _) = self.chain_geometry(c, q);
                (0..=link)
                    .map(|m| {
                        let r = [point[0] - joints[m][0], point[1] - joints[m][1]];
                        (c.dof + m, perp(r))
                    })
                    .collect()
            }
        }
    }

    /// Coordinates whose rate adds to the body's angular velocity.
    pub fn angular_dofs(&self, body: usize) -> Vec<usize> {
        match self.bodies[body].kind {
            BodyKind::Free { dof } => vec![dof + 2],
            BodyKind::Link { chain, link } => {
                let d = self.chains[chain].dof;
                (d..=d + link).collect()
            }
        }
    }

    /// Velocity-product acceleration of a body's center of mass, `J̇ q̇`.
    fn com_bias<S: Scalar>(&self, body: usize, q: &[S], qd: &[S]) -> [S; 2] {
        match self.bodies[body].kind {
            BodyKind::Free { .. } => [S::zero(), S::zero()],
            BodyKind::Link { chain, link } => {
                let c = &self.chains[chain];
                let (_, angles) = self.chain_geometry(c, q);
                let mut rate = S::zero();
                let mut acc = [S::zero(), S::zero()];
                for k in 0..=link {
                    rate += qd[c.dof + k];
                    let len = if k == link { c.com_offsets[k] } else { c.lengths[k] };
                    let w2 = (rate * rate).scale(len);
                    acc[0] -= w2 * angles[k].cos();
                    acc[1] -= w2 * angles[k].sin();
                }
                acc
            }
        }
    }

    /// Row-major mass matrix for inertial parameters `params`.
    pub fn mass_matrix_with<S: Scalar>(&self, q: &[S], params: &[S]) -> Vec<S> {
        let n = self.dofs;
        let mut m = vec![S::zero(); n * n];
        for b in 0..self.bodies.len() {
            let (mass, inertia) = (params[2 * b], params[2 * b + 1]);
            let com = self.pose(b, q).position;
            let jv = self.point_jacobian(b, q, com);
            for &(r, vr) in &jv {
                for &(c, vc) in &jv {
                    m[r * n + c] += mass * (vr[0] * vc[0] + vr[1] * vc[1]);
                }
            }
            let jw = self.angular_dofs(b);
            for &r in &jw {
                for &c in &jw {
                    m[r * n + c] += inertia;
                }
            }
        }
        m
    }

    pub fn coriolis_with<S: Scalar>(&self, q: &[S], qd: &[S], params: &[S]) -> Vec<S> {
        let mut c = vec![S::zero(); self.dofs];
        let g = [S::from_f64(self.gravity.x), S::from_f64(self.gravity.y)];
        for b in 0..self.bodies.len() {
            let mass = params[2 * b];
            let com = self.pose(b, q).position;
            let bias = self.com_bias(b, q, qd);
            let load = [bias[0] - g[0], bias[1] - g[1]];
            for (dof, v) in self.point_jacobian(b, q, com) {
                c[dof] += mass * (v[0] * load[0] + v[1] * load[1]);
            }
        }
        c
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * qd.dot(&(mass_matrix(self, q) * qd))
    }
}

pub fn mass_matrix(model: &MechanismModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dofs();
    let params = model.params();
    DMatrix::from_row_slice(n, n, &model.mass_matrix_with(q.as_slice(), params.as_slice()))
}

pub fn coriolis(model: &MechanismModel, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    let params = model.params();
    DVector::from_vec(model.coriolis_with(q.as_slice(), qd.as_slice(), params.as_slice()))
}

/// `M⁻¹ z`, by Cholesky with an LU fallback.
pub fn solve_mass(m: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(z),
        None => m
            .clone()
            .lu()
            .solve(z)
            .expect("mass matrix is nonsingular for a valid model"),
    }
}

/// Partials of `M⁻¹z` and `c` at a state, column `j` holding the
/// derivative with respect to the `j`-th variable.
#[derive(Debug, Clone, PartialEq)]
pub struct InertialPartials {
    pub minv_z_dq: DMatrix<f64>,
    pub minv_z_dm: DMatrix<f64>,
    pub c_dq: DMatrix<f64>,
    pub c_dqd: DMatrix<f64>,
    pub c_dm: DMatrix<f64>,
}

fn dual_parts(v: &[Dual]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|d| d.du))
}

pub fn inertial_partials(
    model: &MechanismModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    z: &DVector<f64>,
) -> InertialPartials {
    let n = model.dofs();
    let params = model.params();
    let np = params.len();
    let mass = mass_matrix(model, q);
    let minv_z = solve_mass(&mass, z);

    let cq = crate::dual::constants(q.as_slice());
    let cqd = crate::dual::constants(qd.as_slice());
    let cp = crate::dual::constants(params.as_slice());

    // ∂(M⁻¹z)/∂x = −M⁻¹ (∂M/∂x) M⁻¹ z
    let minv_column = |dm: &[Dual]| {
        let dm = DMatrix::from_row_slice(n, n, &dm.iter().map(|d| d.du).collect::<Vec<_>>());
        -solve_mass(&mass, &(dm * &minv_z))
    };

    let mut out = InertialPartials {
        minv_z_dq: DMatrix::zeros(n, n),
        minv_z_dm: DMatrix::zeros(n, np),
        c_dq: DMatrix::zeros(n, n),
        c_dqd: DMatrix::zeros(n, n),
        c_dm: DMatrix::zeros(n, np),
    };
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let dq = crate::dual::seed(q.as_slice(), &e);
        out.minv_z_dq
            .set_column(j, &minv_column(&model.mass_matrix_with(&dq, &cp)));
        out.c_dq
            .set_column(j, &dual_parts(&model.coriolis_with(&dq, &cqd, &cp)));
        let dqd = crate::dual::seed(qd.as_slice(), &e);
        out.c_dqd
            .set_column(j, &dual_parts(&model.coriolis_with(&cq, &dqd, &cp)));
    }
    for j in 0..np {
        let mut e = vec![0.0; np];
        e[j] = 1.0;
        let dp = crate::dual::seed(params.as_slice(), &e);
        out.minv_z_dm
            .set_column(j, &minv_column(&model.mass_matrix_with(&cq, &dp)));
        out.c_dm
            .set_column(j, &dual_parts(&model.coriolis_with(&cq, &cqd, &dp)));
    }
    out
}
