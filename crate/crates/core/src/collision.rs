//! Contact manifolds, contact Jacobians and continuous collision detection.
//!
//! Every contact is a frozen pairing of features: either a face (halfplane
//! or polygon edge) of collider `a` against a point (circle center or
//! polygon vertex) of collider `b`, or a point of `a` against a point of
//! `b`. The normal points from `a` to `b` and the tangent is `(n_y, −n_x)`.
//! Witness points are the closest points of the two features, so the
//! normal Jacobian row is the gradient of the gap.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::dual::{self, Scalar};
use crate::lcp::FrictionPair;
use crate::mechanics::{BodyKind, Material, MechanismModel, Pose};
use crate::shape::Shape;

/// Contacts with a gap up to this value are reported by the narrow phase.
pub const DEFAULT_SLOP: f64 = 1e-4;
/// Gap below which an approaching pair is treated as already touching.
pub const TOUCH_TOL: f64 = 1e-6;
/// Normal velocity below `-APPROACH_TOL` counts as approaching.
pub const APPROACH_TOL: f64 = 1e-9;
/// Slack on segment parameters and Voronoi tests.
pub const FEATURE_TOL: f64 = 1e-9;

const BASE_SAMPLES: usize = 16;
const MAX_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Collider {
    Body(usize),
    Fixture(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Anchor {
    /// Circle center; the radius comes from the shape.
    Center,
    Vertex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Face {
    Plane,
    /// Edge from vertex `i` to vertex `i + 1`.
    Edge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    /// Face of `a` against a point of `b`.
    FacePoint { face: Face, point: Anchor },
    PointPoint { a: Anchor, b: Anchor },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeaturePair {
    pub a: Collider,
    pub b: Collider,
    pub feature: Feature,
}

impl FeaturePair {
    /// Unordered collider pair, used for deterministic ordering.
    pub fn colliders(&self) -> (Collider, Collider) {
        (self.a.min(self.b), self.a.max(self.b))
    }

    fn sort_key(&self) -> (Collider, Collider, FeaturePair) {
        let (lo, hi) = self.colliders();
        (lo, hi, *self)
    }
}

/// Geometry of one feature pair at a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics<S> {
    pub gap: S,
    pub normal: [S; 2],
    pub tangent: [S; 2],
    pub witness_a: [S; 2],
    pub witness_b: [S; 2],
    /// Whether the closest points lie inside their features.
    pub in_feature: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub pair: FeaturePair,
    pub point: Vector2<f64>,
    pub normal: Vector2<f64>,
    pub tangent: Vector2<f64>,
    pub gap: f64,
    pub restitution: f64,
    pub friction: f64,
}

/// Contacts with their stacked Jacobian, rows `[n₀, t₀, n₁, t₁, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<ContactPoint>,
    pub jacobian: DMatrix<f64>,
}

impl ContactSet {
    pub fn empty(dofs: usize) -> Self {
        Self {
            contacts: Vec::new(),
            jacobian: DMatrix::zeros(0, dofs),
        }
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn friction_pairs(&self) -> Vec<FrictionPair> {
        self.contacts
            .iter()
            .enumerate()
            .map(|(j, c)| FrictionPair {
                index: 2 * j + 1,
                normal: 2 * j,
                mu: c.friction,
            })
            .collect()
    }

    /// Per-row restitution: the contact's ε on normal rows, 0 on tangent
    /// rows.
    pub fn row_restitution(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.len(),
            self.contacts.iter().flat_map(|c| [c.restitution, 0.0]),
        )
    }

    pub fn gaps(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.contacts.iter().map(|c| c.gap))
    }
}

fn sub<S: Scalar>(a: [S; 2], b: [S; 2]) -> [S; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn add<S: Scalar>(a: [S; 2], b: [S; 2]) -> [S; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn mul<S: Scalar>(a: [S; 2], k: S) -> [S; 2] {
    [a[0] * k, a[1] * k]
}

fn dot<S: Scalar>(a: [S; 2], b: [S; 2]) -> S {
    a[0] * b[0] + a[1] * b[1]
}

fn to_vec(a: [f64; 2]) -> Vector2<f64> {
    Vector2::new(a[0], a[1])
}

fn values<S: Scalar>(a: [S; 2]) -> [f64; 2] {
    [a[0].value(), a[1].value()]
}

pub fn shape_of<'m>(model: &'m MechanismModel, c: Collider) -> &'m Shape {
    match c {
        Collider::Body(i) => &model.bodies()[i].shape,
        Collider::Fixture(j) => &model.fixtures()[j].shape,
    }
}

pub fn material_of(model: &MechanismModel, c: Collider) -> Material {
    match c {
        Collider::Body(i) => model.bodies()[i].material,
        Collider::Fixture(j) => model.fixtures()[j].material,
    }
}

pub fn collider_pose<S: Scalar>(model: &MechanismModel, c: Collider, q: &[S]) -> Pose<S> {
    match c {
        Collider::Body(i) => model.pose(i, q),
        Collider::Fixture(j) => {
            let f = &model.fixtures()[j];
            Pose::constant(f.position, f.angle)
        }
    }
}

fn polygon(shape: &Shape) -> &[Vector2<f64>] {
    match shape {
        Shape::Polygon { vertices } => vertices,
        _ => panic!("feature refers to a polygon vertex or edge of a non-polygon"),
    }
}

fn anchor_point<S: Scalar>(model: &MechanismModel, c: Collider, anchor: Anchor, q: &[S]) -> ([S; 2], f64) {
    let pose = collider_pose(model, c, q);
    match (anchor, shape_of(model, c)) {
        (Anchor::Center, Shape::Circle { radius }) => (pose.position, *radius),
        (Anchor::Vertex(i), shape) => (pose.to_world(polygon(shape)[i]), 0.0),
        (Anchor::Center, _) => panic!("center anchor on a non-circle"),
    }
}

/// Point on the face, outward unit normal, and the edge endpoints.
#[allow(clippy::type_complexity)]
fn face_plane<S: Scalar>(
    model: &MechanismModel,
    c: Collider,
    face: Face,
    q: &[S],
) -> ([S; 2], [S; 2], Option<([S; 2], [S; 2])>) {
    let pose = collider_pose(model, c, q);
    match (face, shape_of(model, c)) {
        (Face::Plane, Shape::Halfplane { normal, offset }) => {
            (pose.to_world(normal * *offset), pose.rotate(*normal), None)
        }
        (Face::Edge(e), shape) => {
            let v = polygon(shape);
            let (l0, l1) = (v[e], v[(e + 1) % v.len()]);
            let d = l1 - l0;
            let n = Vector2::new(d.y, -d.x) / d.norm();
            let (e0, e1) = (pose.to_world(l0), pose.to_world(l1));
            (e0, pose.rotate(n), Some((e0, e1)))
        }
        (Face::Plane, _) => panic!("plane face on a non-halfplane"),
    }
}

/// Whether `dir` (pointing away from vertex `i`) lies in the vertex's
/// normal cone.
fn in_vertex_region(model: &MechanismModel, c: Collider, i: usize, q: &[f64], dir: [f64; 2]) -> bool {
    let v = polygon(shape_of(model, c));
    let n = v.len();
    let pose = collider_pose(model, c, q);
    let prev = pose.rotate(v[i] - v[(i + n - 1) % n]);
    let next = pose.rotate(v[(i + 1) % n] - v[i]);
    let scale = (dir[0].hypot(dir[1])) * FEATURE_TOL;
    dot(dir, prev) >= -scale * prev[0].hypot(prev[1]) && dot(dir, next) <= scale * next[0].hypot(next[1])
}

/// Evaluates a frozen feature pair at `q`.
pub fn evaluate<S: Scalar>(model: &MechanismModel, pair: &FeaturePair, q: &[S]) -> Kinematics<S> {
    let (gap, normal, wa, wb, in_feature) = match pair.feature {
        Feature::FacePoint { face, point } => {
            let (x0, n, edge) = face_plane(model, pair.a, face, q);
            let (p, r) = anchor_point(model, pair.b, point, q);
            let dist = dot(n, sub(p, x0));
            let wb = sub(p, n.map(|v| v.scale(r)));
            let wa = sub(p, mul(n, dist));
            let in_feature = match edge {
                None => true,
                Some((e0, e1)) => {
                    let d = values(sub(e1, e0));
                    let t = dot(values(sub(wa, e0)), d) / dot(d, d);
                    (-FEATURE_TOL..=1.0 + FEATURE_TOL).contains(&t)
                }
            };
            (dist - S::from_f64(r), n, wa, wb, in_feature)
        }
        Feature::PointPoint { a, b } => {
            let (pa, ra) = anchor_point(model, pair.a, a, q);
            let (pb, rb) = anchor_point(model, pair.b, b, q);
            let d = sub(pb, pa);
            let len = dot(d, d).sqrt();
            let n = if len.value() > 0.0 {
                mul(d, S::from_f64(1.0) / len)
            } else {
                [S::zero(), S::from_f64(1.0)]
            };
            let wa = add(pa, n.map(|v| v.scale(ra)));
            let wb = sub(pb, n.map(|v| v.scale(rb)));
            let qv: Vec<f64> = q.iter().map(|x| x.value()).collect();
            let nv = values(n);
            let mut in_feature = true;
            if let Anchor::Vertex(i) = a {
                in_feature &= in_vertex_region(model, pair.a, i, &qv, nv);
            }
            if let Anchor::Vertex(i) = b {
                in_feature &= in_vertex_region(model, pair.b, i, &qv, [-nv[0], -nv[1]]);
            }
            (len - S::from_f64(ra + rb), n, wa, wb, in_feature)
        }
    };
    Kinematics {
        gap,
        normal,
        tangent: [normal[1], -normal[0]],
        witness_a: wa,
        witness_b: wb,
        in_feature,
    }
}

/// Normal and tangent Jacobian rows (dense, length `dofs`).
pub fn rows_with<S: Scalar>(model: &MechanismModel, pair: &FeaturePair, q: &[S]) -> (Kinematics<S>, Vec<S>, Vec<S>) {
    let k = evaluate(model, pair, q);
    let n = model.dofs();
    let mut jn = vec![S::zero(); n];
    let mut jt = vec![S::zero(); n];
    for (collider, witness, sign) in [(pair.a, k.witness_a, -1.0), (pair.b, k.witness_b, 1.0)] {
        if let Collider::Body(i) = collider {
            for (dof, col) in model.point_jacobian(i, q, witness) {
                jn[dof] += dot(k.normal, col).scale(sign);
                jt[dof] += dot(k.tangent, col).scale(sign);
            }
        }
    }
    (k, jn, jt)
}

pub fn make_contact(model: &MechanismModel, q: &DVector<f64>, pair: FeaturePair) -> ContactPoint {
    let k = evaluate(model, &pair, q.as_slice());
    let (restitution, friction) = model.pair_material(&material_of(model, pair.a), &material_of(model, pair.b));
    ContactPoint {
        pair,
        point: (to_vec(k.witness_a) + to_vec(k.witness_b)) * 0.5,
        normal: to_vec(k.normal),
        tangent: to_vec(k.tangent),
        gap: k.gap,
        restitution,
        friction,
    }
}

/// Row-major stacked Jacobian `2k × dofs` for frozen contacts.
pub fn jacobian_with<S: Scalar>(model: &MechanismModel, q: &[S], contacts: &[ContactPoint]) -> Vec<S> {
    let mut out = Vec::with_capacity(2 * contacts.len() * model.dofs());
    for c in contacts {
        let (_, jn, jt) = rows_with(model, &c.pair, q);
        out.extend(jn);
        out.extend(jt);
    }
    out
}

pub fn contact_jacobian(model: &MechanismModel, q: &DVector<f64>, contacts: &[ContactPoint]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2 * contacts.len(), model.dofs(), &jacobian_with(model, q.as_slice(), contacts))
}

/// Directional derivative `(∂J/∂q · d)` of the stacked Jacobian.
pub fn jacobian_directional(
    model: &MechanismModel,
    q: &DVector<f64>,
    contacts: &[ContactPoint],
    d: &DVector<f64>,
) -> DMatrix<f64> {
    let dq = dual::seed(q.as_slice(), d.as_slice());
    let j = jacobian_with(model, &dq, contacts);
    DMatrix::from_row_slice(
        2 * contacts.len(),
        model.dofs(),
        &j.iter().map(|v| v.du).collect::<Vec<_>>(),
    )
}

/// `∂(Jᵀ f)/∂q` for fixed `f`, column `j` holding the derivative along
/// `q_j`.
pub fn jt_f_partial(model: &MechanismModel, q: &DVector<f64>, contacts: &[ContactPoint], f: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dofs();
    let mut out = DMatrix::zeros(n, n);
    if contacts.is_empty() || f.amax() == 0.0 {
        return out;
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let dj = jacobian_directional(model, q, contacts, &e);
        out.set_column(j, &(dj.transpose() * f));
    }
    out
}

pub fn build_contact_set(model: &MechanismModel, q: &DVector<f64>, contacts: Vec<ContactPoint>) -> ContactSet {
    let jacobian = contact_jacobian(model, q, &contacts);
    ContactSet { contacts, jacobian }
}

fn colliders(model: &MechanismModel) -> Vec<Collider> {
    (0..model.bodies().len())
        .map(Collider::Body)
        .chain((0..model.fixtures().len()).map(Collider::Fixture))
        .collect()
}

fn same_chain(model: &MechanismModel, a: Collider, b: Collider) -> bool {
    match (a, b) {
        (Collider::Body(i), Collider::Body(j)) => matches!(
            (model.bodies()[i].kind, model.bodies()[j].kind),
            (BodyKind::Link { chain: c1, .. }, BodyKind::Link { chain: c2, .. }) if c1 == c2
        ),
        _ => false,
    }
}

/// Collider pairs that may touch: no fixture pairs, no links of one chain.
pub fn collider_pairs(model: &MechanismModel) -> Vec<(Collider, Collider)> {
    let all = colliders(model);
    let mut out = Vec::new();
    for (i, &a) in all.iter().enumerate() {
        for &b in &all[i + 1..] {
            if matches!(b, Collider::Fixture(_)) && matches!(a, Collider::Fixture(_)) {
                continue;
            }
            if same_chain(model, a, b) {
                continue;
            }
            if matches!(
                (shape_of(model, a), shape_of(model, b)),
                (Shape::Halfplane { .. }, Shape::Halfplane { .. })
            ) {
                continue;
            }
            out.push((a, b));
        }
    }
    out
}

fn vertex_count(model: &MechanismModel, c: Collider) -> usize {
    match shape_of(model, c) {
        Shape::Polygon { vertices } => vertices.len(),
        _ => 0,
    }
}

/// Every feature pairing between two colliders that can start a contact.
pub fn candidate_features(model: &MechanismModel, c1: Collider, c2: Collider) -> Vec<FeaturePair> {
    use Shape::*;
    let fp = |a, b, face, point| FeaturePair {
        a,
        b,
        feature: Feature::FacePoint { face, point },
    };
    let pp = |a, b, pa, pb| FeaturePair {
        a,
        b,
        feature: Feature::PointPoint { a: pa, b: pb },
    };
    let (s1, s2) = (shape_of(model, c1), shape_of(model, c2));
    match (s1, s2) {
        (Halfplane { .. }, Halfplane { .. }) => Vec::new(),
        (Halfplane { .. }, Circle { .. }) => vec![fp(c1, c2, Face::Plane, Anchor::Center)],
        (Circle { .. }, Halfplane { .. }) => vec![fp(c2, c1, Face::Plane, Anchor::Center)],
        (Halfplane { .. }, Polygon { .. }) => (0..vertex_count(model, c2))
            .map(|v| fp(c1, c2, Face::Plane, Anchor::Vertex(v)))
            .collect(),
        (Polygon { .. }, Halfplane { .. }) => (0..vertex_count(model, c1))
            .map(|v| fp(c2, c1, Face::Plane, Anchor::Vertex(v)))
            .collect(),
        (Circle { .. }, Circle { .. }) => vec![pp(c1, c2, Anchor::Center, Anchor::Center)],
        (Polygon { .. }, Circle { .. }) | (Circle { .. }, Polygon { .. }) => {
            let (poly, circle) = if matches!(s1, Polygon { .. }) { (c1, c2) } else { (c2, c1) };
            let n = vertex_count(model, poly);
            (0..n)
                .map(|e| fp(poly, circle, Face::Edge(e), Anchor::Center))
                .chain((0..n).map(|v| pp(poly, circle, Anchor::Vertex(v), Anchor::Center)))
                .collect()
        }
        (Polygon { .. }, Polygon { .. }) => {
            let (n1, n2) = (vertex_count(model, c1), vertex_count(model, c2));
            let mut out = Vec::with_capacity(2 * n1 * n2);
            for e in 0..n1 {
                for v in 0..n2 {
                    out.push(fp(c1, c2, Face::Edge(e), Anchor::Vertex(v)));
                }
            }
            for e in 0..n2 {
                for v in 0..n1 {
                    out.push(fp(c2, c1, Face::Edge(e), Anchor::Vertex(v)));
                }
            }
            out
        }
    }
}

fn world_vertices(model: &MechanismModel, c: Collider, q: &[f64]) -> Vec<Vector2<f64>> {
    let pose = collider_pose(model, c, q);
    polygon(shape_of(model, c))
        .iter()
        .map(|v| to_vec(pose.to_world(*v)))
        .collect()
}

/// Separating-axis test with reference-face clipping.
fn polygon_contacts(
    model: &MechanismModel,
    q: &DVector<f64>,
    c1: Collider,
    c2: Collider,
    slop: f64,
) -> Vec<FeaturePair> {
    let qs = q.as_slice();
    let w = [world_vertices(model, c1, qs), world_vertices(model, c2, qs)];
    let ids = [c1, c2];
    let outward = |poly: &[Vector2<f64>], e: usize| {
        let d = poly[(e + 1) % poly.len()] - poly[e];
        Vector2::new(d.y, -d.x) / d.norm()
    };

    // (separation, reference polygon, edge)
    let mut best: Option<(f64, usize, usize)> = None;
    for r in 0..2 {
        let (reff, inc) = (&w[r], &w[1 - r]);
        for e in 0..reff.len() {
            let n = outward(reff, e);
            let sep = inc
                .iter()
                .map(|v| n.dot(&(v - reff[e])))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(b, _, _)| sep > b + FEATURE_TOL) {
                best = Some((sep, r, e));
            }
        }
    }
    let Some((sep, r, e)) = best else {
        return Vec::new();
    };
    if sep > slop {
        return Vec::new();
    }
    let (ref_id, inc_id) = (ids[r], ids[1 - r]);
    let (reff, inc) = (&w[r], &w[1 - r]);
    let n_ref = outward(reff, e);
    let ie = (0..inc.len())
        .min_by(|&i, &j| outward(inc, i).dot(&n_ref).total_cmp(&outward(inc, j).dot(&n_ref)))
        .expect("polygons have vertices");

    let mut pairs = Vec::new();
    let mut points: Vec<Vector2<f64>> = Vec::new();
    for v in [ie, (ie + 1) % inc.len()] {
        let pair = FeaturePair {
            a: ref_id,
            b: inc_id,
            feature: Feature::FacePoint {
                face: Face::Edge(e),
                point: Anchor::Vertex(v),
            },
        };
        let k = evaluate(model, &pair, qs);
        if k.in_feature && k.gap <= slop {
            pairs.push(pair);
            points.push(inc[v]);
        }
    }
    for v in [e, (e + 1) % reff.len()] {
        if points.iter().any(|p| (p - reff[v]).norm() <= FEATURE_TOL.max(1e-9 * reff[v].norm())) {
            continue;
        }
        let pair = FeaturePair {
            a: inc_id,
            b: ref_id,
            feature: Feature::FacePoint {
                face: Face::Edge(ie),
                point: Anchor::Vertex(v),
            },
        };
        let k = evaluate(model, &pair, qs);
        if k.in_feature && k.gap <= slop {
            pairs.push(pair);
        }
    }
    pairs
}

fn pair_contacts(model: &MechanismModel, q: &DVector<f64>, c1: Collider, c2: Collider, slop: f64) -> Vec<FeaturePair> {
    let qs = q.as_slice();
    let keep = |p: &FeaturePair| {
        let k = evaluate(model, p, qs);
        k.in_feature && k.gap <= slop
    };
    match (shape_of(model, c1), shape_of(model, c2)) {
        (Shape::Polygon { .. }, Shape::Polygon { .. }) => polygon_contacts(model, q, c1, c2, slop),
        (Shape::Polygon { .. }, Shape::Circle { .. }) | (Shape::Circle { .. }, Shape::Polygon { .. }) => {
            // the in-feature candidate with the largest gap is the closest
            // feature outside the polygon and the least-penetrating edge inside
            candidate_features(model, c1, c2)
                .into_iter()
                .filter_map(|p| {
                    let k = evaluate(model, &p, qs);
                    k.in_feature.then_some((k.gap, p))
                })
                .fold(None::<(f64, FeaturePair)>, |best, (g, p)| match best {
                    Some((bg, _)) if bg >= g => best,
                    _ => Some((g, p)),
                })
                .filter(|(g, _)| *g <= slop)
                .map(|(_, p)| vec![p])
                .unwrap_or_default()
        }
        _ => candidate_features(model, c1, c2).into_iter().filter(keep).collect(),
    }
}

/// All contacts with gap ≤ `slop`, ordered by collider pair then feature.
pub fn narrow_phase(model: &MechanismModel, q: &DVector<f64>, slop: f64) -> ContactSet {
    let mut pairs: Vec<FeaturePair> = collider_pairs(model)
        .into_iter()
        .flat_map(|(a, b)| pair_contacts(model, q, a, b, slop))
        .collect();
    pairs.sort_by_key(|p| p.sort_key());
    let contacts = pairs.into_iter().map(|p| make_contact(model, q, p)).collect();
    build_contact_set(model, q, contacts)
}

/// Smallest gap over all collider pairs, `None` when nothing can touch.
/// Penetration depths are exact; separations between polygons are
/// separating-axis lower bounds.
pub fn min_gap(model: &MechanismModel, q: &DVector<f64>) -> Option<f64> {
    collider_pairs(model)
        .into_iter()
        .flat_map(|(a, b)| pair_contacts(model, q, a, b, f64::INFINITY))
        .map(|p| evaluate(model, &p, q.as_slice()).gap)
        .reduce(f64::min)
}

/// Earliest time of impact along `q + s·q̇`, `s ∈ [0, dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Toi {
    pub toi: f64,
    pub contact: ContactPoint,
}

fn point_velocity(model: &MechanismModel, c: Collider, q: &[f64], qd: &[f64], p: [f64; 2]) -> [f64; 2] {
    match c {
        Collider::Fixture(_) => [0.0, 0.0],
        Collider::Body(i) => model
            .point_jacobian(i, q, p)
            .into_iter()
            .fold([0.0, 0.0], |acc, (dof, col)| add(acc, mul(col, qd[dof]))),
    }
}

fn angular_rate(model: &MechanismModel, c: Collider, qd: &[f64]) -> f64 {
    match c {
        Collider::Fixture(_) => 0.0,
        Collider::Body(i) => model.angular_dofs(i).into_iter().map(|d| qd[d]).sum(),
    }
}

fn quadratic_roots(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c2.abs().max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c2.abs() <= 1e-14 * scale {
        return if c1 != 0.0 { vec![-c0 / c1] } else { Vec::new() };
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let t = -0.5 * (c1 + c1.signum() * sq);
    let mut roots = vec![t / c2];
    if t != 0.0 {
        roots.push(c0 / t);
    }
    roots
}

/// Roots of the feature's gap with world vertex velocities frozen at `s = 0`.
fn linearized_roots(model: &MechanismModel, pair: &FeaturePair, q: &[f64], qd: &[f64]) -> Vec<f64> {
    match pair.feature {
        Feature::FacePoint { face, point } => {
            let (x0, n, _) = face_plane(model, pair.a, face, q);
            let (p, r) = anchor_point(model, pair.b, point, q);
            let vx = point_velocity(model, pair.a, q, qd, x0);
            let vp = point_velocity(model, pair.b, q, qd, p);
            let w = mul([-n[1], n[0]], angular_rate(model, pair.a, qd));
            let (d0, dv) = (sub(p, x0), sub(vp, vx));
            quadratic_roots(dot(w, dv), dot(n, dv) + dot(w, d0), dot(n, d0) - r)
        }
        Feature::PointPoint { a, b } => {
            let (pa, ra) = anchor_point(model, pair.a, a, q);
            let (pb, rb) = anchor_point(model, pair.b, b, q);
            let va = point_velocity(model, pair.a, q, qd, pa);
            let vb = point_velocity(model, pair.b, q, qd, pb);
            let (d, dv) = (sub(pb, pa), sub(vb, va));
            let r = ra + rb;
            quadratic_roots(dot(dv, dv), 2.0 * dot(d, dv), dot(d, d) - r * r)
        }
    }
}

fn advance(q: &DVector<f64>, qd: &DVector<f64>, s: f64) -> DVector<f64> {
    q + qd * s
}

/// Normal velocity `J_n q̇` of a feature pair at `q`.
pub fn normal_velocity(model: &MechanismModel, pair: &FeaturePair, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    let (_, jn, _) = rows_with(model, pair, q.as_slice());
    jn.iter().zip(qd.iter()).map(|(a, b)| a * b).sum()
}

fn sample_count(model: &MechanismModel, qd: &DVector<f64>, dt: f64) -> usize {
    let qd = qd.as_slice();
    let rotation = (0..model.bodies().len())
        .map(|i| angular_rate(model, Collider::Body(i), qd).abs() * dt)
        .fold(0.0, f64::max);
    let extra = (rotation / (std::f64::consts::PI / 64.0)).ceil() as usize;
    (BASE_SAMPLES + extra).min(MAX_SAMPLES)
}

fn feature_toi(
    model: &MechanismModel,
    pair: &FeaturePair,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    dt: f64,
    samples: usize,
) -> Option<f64> {
    let gap_at = |s: f64| evaluate(model, pair, advance(q, qd, s).as_slice()).gap;
    let accept = |s: f64| {
        let qs = advance(q, qd, s);
        evaluate(model, pair, qs.as_slice()).in_feature && normal_velocity(model, pair, &qs, qd) < -APPROACH_TOL
    };

    let g0 = gap_at(0.0);
    // a deeply negative gap is the far side of a face line, not a touch
    if (-DEFAULT_SLOP..=TOUCH_TOL).contains(&g0) && accept(0.0) {
        return Some(0.0);
    }

    let mut times: Vec<f64> = (0..=samples).map(|k| dt * k as f64 / samples as f64).collect();
    for r in linearized_roots(model, pair, q.as_slice(), qd.as_slice()) {
        if r > 0.0 && r < dt {
            times.push(r);
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut prev = (0.0, g0);
    for &s in &times[1..] {
        let g = gap_at(s);
        if prev.1 > 0.0 && g <= 0.0 {
            let (mut lo, mut hi) = (prev.0, s);
            while hi - lo > 1e-12 * dt {
                let mid = 0.5 * (lo + hi);
                if gap_at(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if accept(lo) {
                return Some(lo);
            }
        }
        prev = (s, g);
    }
    None
}

/// Axis-aligned box swept by a collider over the sampled motion.
fn swept_box(model: &MechanismModel, c: Collider, q: &DVector<f64>, qd: &DVector<f64>, dt: f64, samples: usize) -> Option<[f64; 4]> {
    let radius = shape_of(model, c).bounding_radius();
    if !radius.is_finite() {
        return None;
    }
    let mut bx = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut last: Option<[f64; 2]> = None;
    let mut margin = 0.0f64;
    for k in 0..=samples {
        let s = dt * k as f64 / samples as f64;
        let p = collider_pose(model, c, advance(q, qd, s).as_slice()).position;
        if let Some(l) = last {
            margin = margin.max((p[0] - l[0]).hypot(p[1] - l[1]));
        }
        last = Some(p);
        bx = [bx[0].min(p[0]), bx[1].min(p[1]), bx[2].max(p[0]), bx[3].max(p[1])];
    }
    let r = radius + margin + TOUCH_TOL;
    Some([bx[0] - r, bx[1] - r, bx[2] + r, bx[3] + r])
}

fn boxes_overlap(a: Option<[f64; 4]>, b: Option<[f64; 4]>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3],
        _ => true,
    }
}

/// Earliest impact along the linear coordinate path over `[0, dt]`.
pub fn ccd_toi(model: &MechanismModel, q: &DVector<f64>, qd: &DVector<f64>, dt: f64) -> Option<Toi> {
    let samples = sample_count(model, qd, dt);
    let boxes: std::collections::HashMap<Collider, Option<[f64; 4]>> = colliders(model)
        .into_iter()
        .map(|c| (c, swept_box(model, c, q, qd, dt, samples)))
        .collect();
    let mut best: Option<(f64, FeaturePair)> = None;
    for (c1, c2) in collider_pairs(model) {
        if !boxes_overlap(boxes[&c1], boxes[&c2]) {
            continue;
        }
        for pair in candidate_features(model, c1, c2) {
            if let Some(t) = feature_toi(model, &pair, q, qd, dt, samples) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, pair));
                }
            }
        }
    }
    best.map(|(toi, pair)| Toi {
        toi,
        contact: make_contact(model, &advance(q, qd, toi), pair),
    })
}
