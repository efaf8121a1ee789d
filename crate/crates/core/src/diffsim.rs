//! Gradients of simulated trajectories.
//!
//! Each tape segment is a map from `(q, q̇, τ, m, h)` to `(q', q̇')`, with
//! `h` its duration. Its Jacobian is assembled column by column from
//! forward-mode directional derivatives (dual numbers through the mass
//! matrix, bias forces and contact Jacobian, and the LCP's active linear
//! system), then the tape is traversed backward with vector-Jacobian
//! products. Durations that end at an impact are functions of the state
//! that started the query, `h = T(q, q̇)`; the final duration is whatever
//! remains of the outer step.

use nalgebra::{DMatrix, DVector};

use crate::collision;
use crate::dual::{self, Dual};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, Segment, SolvedLcp, StepResult, StepTape, TRecord};
use crate::lcp::{Class, LcpProblem, LcpSolution};
use crate::mechanics::{MechanismModel, SystemState};

/// Values closer than this to a class boundary mark the run as
/// near-boundary.
pub const BOUNDARY_TOL: f64 = 1e-7;

/// Derivative of a loss with respect to everything a trajectory depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub tau: DVector<f64>,
    pub m: DVector<f64>,
    pub dt: f64,
    /// Some impact had near-zero approach speed; its time-of-impact
    /// contribution is omitted.
    pub grazing: bool,
    /// Some active LCP block was rank deficient (minimum-norm derivative).
    pub rank_deficient: bool,
}

impl GradientBundle {
    pub fn zeros(dofs: usize, params: usize) -> Self {
        Self {
            q: DVector::zeros(dofs),
            qd: DVector::zeros(dofs),
            tau: DVector::zeros(dofs),
            m: DVector::zeros(params),
            dt: 0.0,
            grazing: false,
            rank_deficient: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.q, &self.qd, &self.tau, &self.m]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.dt.is_finite()
    }
}

/// Derivative of an LCP solution with its class assignment held fixed.
#[derive(Debug, Clone)]
pub struct LcpGradient {
    f: DVector<f64>,
    active: Vec<usize>,
    /// Inverse (or pseudo-inverse) of the folded active block.
    inverse: DMatrix<f64>,
    slaved: Vec<(usize, usize, f64)>,
    pub rank_deficient: bool,
}

impl LcpGradient {
    /// `∂f` for perturbations `∂A`, `∂b`.
    pub fn directional(&self, da: &DMatrix<f64>, db: &DVector<f64>) -> DVector<f64> {
        let n = self.f.len();
        let mut df = DVector::zeros(n);
        if self.active.is_empty() {
            return df;
        }
        let r = da * &self.f + db;
        let ru = DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| r[i]));
        let x = -(&self.inverse * ru);
        for (&i, v) in self.active.iter().zip(x.iter()) {
            df[i] = *v;
        }
        for &(i, normal, coef) in &self.slaved {
            df[i] = coef * df[normal];
        }
        df
    }
}

/// Differentiates the active system `A'_UU f_U = −b_U` (U = C ∪ F, sliding
/// friction folded into its normal column, separated rows zero).
pub fn lcp_gradients(p: &LcpProblem, s: &LcpSolution) -> Result<LcpGradient> {
    let n = p.dim();
    if s.classes.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.classes.len(),
        });
    }
    let active: Vec<usize> = (0..n)
        .filter(|&i| matches!(s.classes[i], Class::C | Class::F))
        .collect();
    let mut folded = p.a().clone();
    let mut slaved = Vec::new();
    for fp in p.friction_pairs() {
        let sign = match s.classes[fp.index] {
            Class::H => 1.0,
            Class::L => -1.0,
            _ => continue,
        };
        let col = p.a().column(fp.index) * (sign * fp.mu);
        let mut target = folded.column_mut(fp.normal);
        target += col;
        slaved.push((fp.index, fp.normal, sign * fp.mu));
    }
    let block = crate::linalg::submatrix(&folded, &active, &active);
    let (inverse, rank_deficient) = if active.is_empty() {
        (DMatrix::zeros(0, 0), false)
    } else {
        let nonsingular = crate::linalg::solve_checked(&block, &DVector::zeros(active.len())).is_some();
        match nonsingular.then(|| block.clone().try_inverse()).flatten() {
            Some(inv) => (inv, false),
            None => {
                let svd = block.svd(true, true);
                let tol = 1e-12 * svd.singular_values.max();
                let pinv = svd.pseudo_inverse(tol).map_err(|_| Error::SingularBlock)?;
                (pinv, true)
            }
        }
    };
    Ok(LcpGradient {
        f: s.f.clone(),
        active,
        inverse,
        slaved,
        rank_deficient,
    })
}

/// Whether any row sits within `tol` of a class boundary other than the one
/// its class pins it to. Friction rows with a zero bound are ignored.
pub fn near_boundary(p: &LcpProblem, s: &LcpSolution, tol: f64) -> bool {
    (0..p.dim()).any(|i| {
        let (f, a) = (s.f[i], s.a[i]);
        match (s.classes[i], p.friction_of(i)) {
            (Class::C, _) => f.abs() < tol,
            (Class::N, _) => a.abs() < tol,
            (class, Some((normal, mu))) => {
                let bound = mu * s.f[normal];
                if bound <= tol || s.classes[normal] == Class::N {
                    return false;
                }
                match class {
                    Class::F => bound - f.abs() < tol,
                    _ => a.abs() < tol,
                }
            }
            _ => false,
        }
    })
}

/// Jacobian of one segment's output `(q', q̇')` (stacked, length `2n`).
#[derive(Debug, Clone)]
pub struct SegmentJacobian {
    pub state: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
    pub rank_deficient: bool,
}

struct SegmentContext<'a> {
    model: &'a MechanismModel,
    q: &'a DVector<f64>,
    qd: &'a DVector<f64>,
    params: DVector<f64>,
    h: f64,
    contacts: &'a [collision::ContactPoint],
    restitution: Option<&'a DVector<f64>>,
    minv: DMatrix<f64>,
    u: DVector<f64>,
    v_free: DVector<f64>,
    j: DMatrix<f64>,
    w: DMatrix<f64>,
    f: DVector<f64>,
    grad: Option<LcpGradient>,
}

fn du(v: &[Dual]) -> Vec<f64> {
    v.iter().map(|d| d.du).collect()
}

impl<'a> SegmentContext<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &'a MechanismModel,
        state: &'a SystemState,
        tau: &DVector<f64>,
        h: f64,
        contacts: &'a [collision::ContactPoint],
        restitution: Option<&'a DVector<f64>>,
        lcp: Option<&SolvedLcp>,
    ) -> Result<Self> {
        let n = model.dofs();
        let m = crate::mechanics::mass_matrix(model, &state.q);
        let minv = match m.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => m.clone().try_inverse().ok_or(Error::SingularBlock)?,
        };
        let c = crate::mechanics::coriolis(model, &state.q, &state.qd);
        let u = tau - c;
        let v_free = &state.qd + &minv * &u * h;
        let j = collision::contact_jacobian(model, &state.q, contacts);
        let w = &minv * j.transpose();
        let (f, grad) = match lcp {
            Some(l) => (l.solution.f.clone(), Some(lcp_gradients(&l.problem, &l.solution)?)),
            None => (DVector::zeros(j.nrows()), None),
        };
        debug_assert_eq!(w.nrows(), n);
        Ok(Self {
            model,
            q: &state.q,
            qd: &state.qd,
            params: model.params(),
            h,
            contacts,
            restitution,
            minv,
            u,
            v_free,
            j,
            w,
            f,
            grad,
        })
    }

    /// Directional derivative of `(q', q̇')`.
    fn directional(
        &self,
        dq: &DVector<f64>,
        dqd: &DVector<f64>,
        dtau: &DVector<f64>,
        dm: &DVector<f64>,
        dh: f64,
    ) -> DVector<f64> {
        let n = self.model.dofs();
        let qs = dual::seed(self.q.as_slice(), dq.as_slice());
        let qds = dual::seed(self.qd.as_slice(), dqd.as_slice());
        let ps = dual::seed(self.params.as_slice(), dm.as_slice());

        let dmass = DMatrix::from_row_slice(n, n, &du(&self.model.mass_matrix_with(&qs, &ps)));
        let dc = DVector::from_vec(du(&self.model.coriolis_with(&qs, &qds, &ps)));
        let du_vec = dtau - dc;

        // δ(M⁻¹y) = M⁻¹(δy − δM M⁻¹y)
        let minv_u = &self.minv * &self.u;
        let d_minv_u = &self.minv * (du_vec - &dmass * &minv_u);
        let dv_free = dqd + minv_u * dh + d_minv_u * self.h;

        let mut dqd_out = dv_free.clone();
        if !self.contacts.is_empty() {
            let rows = self.j.nrows();
            let dj = DMatrix::from_row_slice(rows, n, &du(&collision::jacobian_with(self.model, &qs, self.contacts)));
            let dw = &self.minv * (dj.transpose() - &dmass * &self.w);
            let da = &dj * &self.w + &self.j * &dw;
            let da = (&da + da.transpose()) * 0.5;
            let mut db = &dj * &self.v_free + &self.j * &dv_free;
            if let Some(eps) = self.restitution {
                db += (&dj * self.qd + &self.j * dqd).component_mul(eps);
            }
            let df = self
                .grad
                .as_ref()
                .map(|g| g.directional(&da, &db))
                .unwrap_or_else(|| DVector::zeros(rows));
            dqd_out += dw * &self.f + &self.w * df;
        }
        let dq_out = dq + self.qd * dh + dqd * self.h;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&dq_out);
        out.rows_mut(n, n).copy_from(&dqd_out);
        out
    }

    fn jacobian(&self) -> SegmentJacobian {
        let n = self.model.dofs();
        let np = self.params.len();
        let z = DVector::zeros(n);
        let zp = DVector::zeros(np);
        let unit = |len: usize, i: usize| {
            let mut e = DVector::zeros(len);
            e[i] = 1.0;
            e
        };
        let mut state = DMatrix::zeros(2 * n, 2 * n);
        let mut tau = DMatrix::zeros(2 * n, n);
        let mut m = DMatrix::zeros(2 * n, np);
        for i in 0..n {
            state.set_column(i, &self.directional(&unit(n, i), &z, &z, &zp, 0.0));
            state.set_column(n + i, &self.directional(&z, &unit(n, i), &z, &zp, 0.0));
            tau.set_column(i, &self.directional(&z, &z, &unit(n, i), &zp, 0.0));
        }
        for i in 0..np {
            m.set_column(i, &self.directional(&z, &z, &z, &unit(np, i), 0.0));
        }
        let h = self.directional(&z, &z, &z, &zp, 1.0);
        SegmentJacobian {
            state,
            tau,
            m,
            h,
            rank_deficient: self.grad.as_ref().is_some_and(|g| g.rank_deficient),
        }
    }
}

/// Jacobian of a recorded segment with respect to its inputs.
pub fn segment_jacobian(model: &MechanismModel, seg: &Segment, tau: &DVector<f64>) -> Result<SegmentJacobian> {
    let ctx = match seg {
        Segment::P(p) => SegmentContext::new(model, &p.state_in, &p.tau, p.dt, &p.contacts.contacts, None, p.lcp.as_ref())?,
        Segment::C(c) => {
            let zero = DVector::zeros(tau.len());
            SegmentContext::new(model, &c.state_in, &zero, 0.0, &c.contacts.contacts, Some(&c.restitution), c.lcp.as_ref())?
        }
    };
    Ok(ctx.jacobian())
}

/// Partials of the time of impact with respect to the query state.
#[derive(Debug, Clone, PartialEq)]
pub struct ToiGradient {
    pub dq: DVector<f64>,
    pub dqd: DVector<f64>,
}

/// From `gap(q + T·q̇) = 0`: `∂T/∂q = −J_n/(J_n q̇)` and
/// `∂T/∂q̇ = −T·J_n/(J_n q̇)`, with `J_n` taken at the impact configuration.
pub fn toi_gradients(record: &TRecord) -> Result<ToiGradient> {
    if record.grazing {
        return Err(Error::GrazingContact {
            speed: record.normal_speed,
        });
    }
    let n = record.normal_row.len();
    if record.immediate {
        return Ok(ToiGradient {
            dq: DVector::zeros(n),
            dqd: DVector::zeros(n),
        });
    }
    let scale = -1.0 / record.normal_speed;
    Ok(ToiGradient {
        dq: &record.normal_row * scale,
        dqd: &record.normal_row * (scale * record.toi),
    })
}

/// Backward pass over one step. `seed` is `∂loss/∂(q', q̇')` stacked.
pub fn backward(model: &MechanismModel, tape: &StepTape, seed: &DVector<f64>) -> Result<GradientBundle> {
    let n = model.dofs();
    let np = 2 * model.bodies().len();
    if seed.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: seed.len(),
        });
    }
    let mut out = GradientBundle::zeros(n, np);
    let last_p = tape
        .segments
        .iter()
        .rposition(|s| matches!(s, Segment::P(_)));

    let mut g = seed.clone();
    // adjoint of the remainder duration; every earlier duration enters it
    // with a minus sign
    let mut remainder_bar = 0.0;
    for (idx, seg) in tape.segments.iter().enumerate().rev() {
        let jac = segment_jacobian(model, seg, &tape.tau)?;
        out.rank_deficient |= jac.rank_deficient;
        let h_bar = jac.h.dot(&g);
        out.m += jac.m.transpose() * &g;
        let mut g_in = jac.state.transpose() * &g;
        if let Segment::P(_) = seg {
            out.tau += jac.tau.transpose() * &g;
            if Some(idx) == last_p {
                remainder_bar = h_bar;
                out.dt += h_bar;
            } else {
                let eff = h_bar - remainder_bar;
                let record = match tape.segments.get(idx + 1) {
                    Some(Segment::C(c)) => c.toi.as_ref(),
                    _ => None,
                };
                if let Some(record) = record {
                    match toi_gradients(record) {
                        Ok(tg) => {
                            let mut gq = g_in.rows_mut(0, n);
                            gq += &tg.dq * eff;
                            let mut gqd = g_in.rows_mut(n, n);
                            gqd += &tg.dqd * eff;
                        }
                        Err(Error::GrazingContact { .. }) => out.grazing = true,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        g = g_in;
    }
    out.q = g.rows(0, n).into_owned();
    out.qd = g.rows(n, n).into_owned();
    Ok(out)
}

/// Backward pass through consecutive steps sharing `τ`, `m` and `dt`;
/// `seed` applies to the final state.
pub fn backward_trajectory(model: &MechanismModel, tapes: &[StepTape], seed: &DVector<f64>) -> Result<GradientBundle> {
    let n = model.dofs();
    let mut total = GradientBundle::zeros(n, 2 * model.bodies().len());
    let mut g = seed.clone();
    for tape in tapes.iter().rev() {
        let b = backward(model, tape, &g)?;
        total.tau += &b.tau;
        total.m += &b.m;
        total.dt += b.dt;
        total.grazing |= b.grazing;
        total.rank_deficient |= b.rank_deficient;
        g = DVector::from_iterator(2 * n, b.q.iter().chain(b.qd.iter()).copied());
    }
    total.q = g.rows(0, n).into_owned();
    total.qd = g.rows(n, n).into_owned();
    Ok(total)
}

/// A differentiable input of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Q(usize),
    Qd(usize),
    Tau(usize),
    /// Index into the inertial parameter vector.
    M(usize),
    Dt,
}

impl Param {
    pub fn label(&self) -> String {
        match self {
            Param::Q(i) => format!("q[{i}]"),
            Param::Qd(i) => format!("qd[{i}]"),
            Param::Tau(i) => format!("tau[{i}]"),
            Param::M(i) => format!("m[{i}]"),
            Param::Dt => "dt".into(),
        }
    }

    pub fn read(&self, g: &GradientBundle) -> f64 {
        match *self {
            Param::Q(i) => g.q[i],
            Param::Qd(i) => g.qd[i],
            Param::Tau(i) => g.tau[i],
            Param::M(i) => g.m[i],
            Param::Dt => g.dt,
        }
    }

    /// Every input of a model.
    pub fn all(model: &MechanismModel) -> Vec<Param> {
        let n = model.dofs();
        (0..n)
            .map(Param::Q)
            .chain((0..n).map(Param::Qd))
            .chain((0..n).map(Param::Tau))
            .chain((0..2 * model.bodies().len()).map(Param::M))
            .chain([Param::Dt])
            .collect()
    }
}

/// Inputs of a fixed-length rollout with constant `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub model: MechanismModel,
    pub state: SystemState,
    pub tau: DVector<f64>,
    pub dt: f64,
    pub steps: usize,
    pub opts: FlowOptions,
}

impl Rollout {
    pub fn run(&self) -> Result<Vec<StepResult>> {
        flow::simulate(&self.model, &self.state, &self.tau, self.dt, self.steps, &self.opts)
    }

    fn perturbed(&self, p: Param, delta: f64) -> Result<Rollout> {
        let mut r = self.clone();
        match p {
            Param::Q(i) => r.state.q[i] += delta,
            Param::Qd(i) => r.state.qd[i] += delta,
            Param::Tau(i) => r.tau[i] += delta,
            Param::M(i) => {
                let mut params = r.model.params();
                params[i] += delta;
                r.model = r.model.with_params(&params)?;
            }
            Param::Dt => r.dt += delta,
        }
        Ok(r)
    }

    fn value(&self, p: Param) -> f64 {
        match p {
            Param::Q(i) => self.state.q[i],
            Param::Qd(i) => self.state.qd[i],
            Param::Tau(i) => self.tau[i],
            Param::M(i) => self.model.params()[i],
            Param::Dt => self.dt,
        }
    }
}

/// Loss of a final state and its gradient `∂loss/∂(q, q̇)` stacked.
pub trait Loss {
    fn eval(&self, state: &SystemState) -> (f64, DVector<f64>);
}

impl<F: Fn(&SystemState) -> (f64, DVector<f64>)> Loss for F {
    fn eval(&self, state: &SystemState) -> (f64, DVector<f64>) {
        self(state)
    }
}

/// Loss value and analytic gradient bundle of a rollout.
pub fn loss_and_gradient(rollout: &Rollout, loss: &dyn Loss) -> Result<(f64, GradientBundle, Vec<StepResult>)> {
    let results = rollout.run()?;
    let last = results.last().map(|r| r.state.clone()).unwrap_or_else(|| rollout.state.clone());
    let (value, seed) = loss.eval(&last);
    let tapes: Vec<StepTape> = results.iter().map(|r| r.tape.clone()).collect();
    let bundle = backward_trajectory(&rollout.model, &tapes, &seed)?;
    Ok((value, bundle, results))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub param: Param,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_error: f64,
    /// Some LCP sat near a class boundary, or a perturbed run changed its
    /// contact modes; gradients are one-sided there.
    pub boundary: bool,
    pub grazing: bool,
}

impl FdReport {
    /// Every entry within `rel_tol` relative error, or within `abs_tol` for
    /// derivatives that vanish structurally.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.entries
            .iter()
            .all(|e| e.rel_error <= rel_tol || e.abs_error <= abs_tol)
    }
}

/// Mode signature of a run: segment kinds and class assignments.
fn signature(results: &[StepResult]) -> Vec<(bool, Vec<Class>)> {
    results
        .iter()
        .flat_map(|r| r.tape.segments.iter())
        .map(|s| {
            (
                matches!(s, Segment::C(_)),
                s.lcp().map(mode_classes).unwrap_or_default(),
            )
        })
        .collect()
}

/// Classes with zero-bound friction rows collapsed to F: with no friction
/// available, F, H and L describe the same state.
fn mode_classes(l: &SolvedLcp) -> Vec<Class> {
    let (p, s) = (&l.problem, &l.solution);
    (0..p.dim())
        .map(|i| match p.friction_of(i) {
            Some((normal, mu)) if mu * s.f[normal] <= BOUNDARY_TOL => Class::F,
            _ => s.classes[i],
        })
        .collect()
}

fn any_near_boundary(results: &[StepResult]) -> bool {
    results
        .iter()
        .flat_map(|r| r.tape.segments.iter())
        .filter_map(|s| s.lcp())
        .any(|l| near_boundary(&l.problem, &l.solution, BOUNDARY_TOL))
}

/// Central differences of the loss against the analytic bundle. The step
/// for parameter `x` is `eps·max(1, |x|)`.
pub fn finite_difference_check(rollout: &Rollout, loss: &dyn Loss, params: &[Param], eps: f64) -> Result<FdReport> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let (_, bundle, results) = loss_and_gradient(rollout, loss)?;
    let base_sig = signature(&results);
    let mut boundary = any_near_boundary(&results);
    let mut entries = Vec::with_capacity(params.len());
    for &p in params {
        let h = eps * rollout.value(p).abs().max(1.0);
        let mut side = |delta: f64| -> Result<f64> {
            let r = rollout.perturbed(p, delta)?;
            let res = r.run()?;
            if signature(&res) != base_sig {
                boundary = true;
            }
            let last = res.last().map(|s| s.state.clone()).unwrap_or_else(|| r.state.clone());
            Ok(loss.eval(&last).0)
        };
        let numeric = (side(h)? - side(-h)?) / (2.0 * h);
        let analytic = p.read(&bundle);
        let abs_error = (analytic - numeric).abs();
        entries.push(FdEntry {
            param: p,
            analytic,
            numeric,
            rel_error: abs_error / (analytic.abs() + numeric.abs() + 1e-12),
            abs_error,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(FdReport {
        entries,
        max_rel_error,
        boundary,
        grazing: bundle.grazing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcp::FrictionPair;
    use crate::mechanics::{Fixture, Material};
    use crate::shape::Shape;
    use nalgebra::Vector2;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn lcp_gradient_examples() {
        let p = LcpProblem::frictionless(DMatrix::from_element(1, 1, 1.0), dv(&[-1.0])).unwrap();
        let s = LcpSolution::from_forces(&p, dv(&[1.0]), vec![Class::C]);
        let g = lcp_gradients(&p, &s).unwrap();
        assert_eq!(g.directional(&DMatrix::zeros(1, 1), &dv(&[1.0]))[0], -1.0);

        let s = LcpSolution::from_forces(&p, dv(&[0.0]), vec![Class::N]);
        let g = lcp_gradients(&p, &s).unwrap();
        assert_eq!(g.directional(&DMatrix::from_element(1, 1, 3.0), &dv(&[1.0]))[0], 0.0);

        let fp = FrictionPair { index: 1, normal: 0, mu: 1.0 };
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let p = LcpProblem::new(a, dv(&[-1.0, -3.0]), vec![fp]).unwrap();
        let s = LcpSolution::from_forces(&p, dv(&[5.0 / 6.0, 5.0 / 6.0]), vec![Class::C, Class::H]);
        let g = lcp_gradients(&p, &s).unwrap();
        let df = g.directional(&DMatrix::zeros(2, 2), &dv(&[1.0, 0.0]));
        assert!((df[0] + 1.0 / 1.2).abs() < 1e-15);
        assert!((df[1] + 1.0 / 1.2).abs() < 1e-15);
    }

    #[test]
    fn toi_gradient_examples() {
        // ball at gap 0.5 closing at speed 1 along y
        let record = TRecord {
            pair: collision::FeaturePair {
                a: collision::Collider::Fixture(0),
                b: collision::Collider::Body(0),
                feature: collision::Feature::FacePoint {
                    face: collision::Face::Plane,
                    point: collision::Anchor::Center,
                },
            },
            toi: 0.5,
            q_query: dv(&[0.0, 1.0, 0.0]),
            qd_query: dv(&[0.0, -1.0, 0.0]),
            gap: 0.5,
            normal_row: dv(&[0.0, 1.0, 0.0]),
            normal_speed: -1.0,
            immediate: false,
            grazing: false,
        };
        let g = toi_gradients(&record).unwrap();
        assert_eq!(g.dq[1], 1.0);
        // d/d(closing speed) = −∂T/∂q̇_y = −0.5
        assert_eq!(-g.dqd[1], -0.5);
        // scaling q̇ by (1+k) scales T by 1/(1+k): directional derivative −T
        assert_eq!(g.dqd.dot(&record.qd_query), -0.5);

        let grazing = TRecord {
            grazing: true,
            ..record
        };
        assert!(matches!(toi_gradients(&grazing), Err(Error::GrazingContact { .. })));
    }

    fn bounce_rollout(ccd: bool) -> Rollout {
        let mut model = MechanismModel::new(Vector2::zeros());
        model.add_free_body(1.0, 0.1, Shape::circle(0.5), Material::new(1.0, 0.0));
        model.add_fixture(Fixture {
            shape: Shape::floor(0.0),
            position: Vector2::zeros(),
            angle: 0.0,
            material: Material::new(1.0, 0.0),
        });
        Rollout {
            model,
            state: SystemState::new(dv(&[0.0, 1.0, 0.0]), dv(&[0.0, -1.0, 0.0])),
            tau: DVector::zeros(3),
            dt: 1.0,
            steps: 1,
            opts: FlowOptions {
                ccd,
                ..FlowOptions::default()
            },
        }
    }

    fn height(s: &SystemState) -> (f64, DVector<f64>) {
        let mut g = DVector::zeros(6);
        g[1] = 1.0;
        (s.q[1], g)
    }

    #[test]
    fn bounce_height_gradient() {
        let (_, g, _) = loss_and_gradient(&bounce_rollout(true), &height).unwrap();
        assert!((g.q[1] + 1.0).abs() < 1e-9);
        let (_, g, _) = loss_and_gradient(&bounce_rollout(false), &height).unwrap();
        assert!((g.q[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contact_free_position_velocity_block() {
        let mut r = bounce_rollout(true);
        r.state.q[1] = 10.0;
        r.dt = 0.1;
        let tape = r.run().unwrap().remove(0).tape;
        let jac = segment_jacobian(&r.model, &tape.segments[0], &r.tau).unwrap();
        for i in 0..3 {
            assert_eq!(jac.state[(i, 3 + i)], 0.1);
        }
    }
}
