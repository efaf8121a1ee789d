//! Forward maps of one timestep: collision-free propagation, instantaneous
//! collision response, and the full step that backtracks to every time of
//! impact. Each step records a tape for the backward pass.

use nalgebra::{DMatrix, DVector};

use crate::collision::{self, ContactPoint, ContactSet, FeaturePair, APPROACH_TOL, DEFAULT_SLOP};
use crate::dantzig::{self, DantzigOptions};
use crate::error::{Error, Result};
use crate::lcp::{LcpProblem, LcpSolution};
use crate::mechanics::{coriolis, mass_matrix, solve_mass, MechanismModel, SystemState};

pub const DEFAULT_SUBSTEP_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Backtrack to each time of impact; otherwise resolve penetrations
    /// at the end of the step.
    pub ccd: bool,
    pub substep_cap: usize,
    pub slop: f64,
    pub solver: DantzigOptions,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            ccd: true,
            substep_cap: DEFAULT_SUBSTEP_CAP,
            slop: DEFAULT_SLOP,
            solver: DantzigOptions::default(),
        }
    }
}

/// Contact LCP of a segment together with its solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedLcp {
    pub problem: LcpProblem,
    pub solution: LcpSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PSegment {
    pub state_in: SystemState,
    pub state_out: SystemState,
    pub tau: DVector<f64>,
    pub dt: f64,
    pub contacts: ContactSet,
    pub lcp: Option<SolvedLcp>,
}

/// Data of the time-of-impact query that ended the preceding propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct TRecord {
    pub pair: FeaturePair,
    pub toi: f64,
    /// State at the start of the query; the motion is `q + s·q̇`.
    pub q_query: DVector<f64>,
    pub qd_query: DVector<f64>,
    /// Gap at the start of the query.
    pub gap: f64,
    /// Normal Jacobian row at the impact configuration.
    pub normal_row: DVector<f64>,
    /// `J_n q̇` at impact (negative when approaching).
    pub normal_speed: f64,
    /// Impact reported at the start of the query (already touching).
    pub immediate: bool,
    pub grazing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CSegment {
    pub state_in: SystemState,
    pub state_out: SystemState,
    pub contacts: ContactSet,
    /// Restitution per LCP row.
    pub restitution: DVector<f64>,
    pub lcp: Option<SolvedLcp>,
    /// Absent for end-of-step discrete responses.
    pub toi: Option<TRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    P(PSegment),
    C(CSegment),
}

impl Segment {
    pub fn state_out(&self) -> &SystemState {
        match self {
            Segment::P(p) => &p.state_out,
            Segment::C(c) => &c.state_out,
        }
    }

    pub fn lcp(&self) -> Option<&SolvedLcp> {
        match self {
            Segment::P(p) => p.lcp.as_ref(),
            Segment::C(c) => c.lcp.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTape {
    pub dt: f64,
    pub tau: DVector<f64>,
    pub segments: Vec<Segment>,
}

impl StepTape {
    pub fn p_dt_sum(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::P(p) => p.dt,
                Segment::C(_) => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub collisions: usize,
    pub tois: Vec<f64>,
    pub substep_cap_hit: bool,
    pub discrete_responses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: SystemState,
    pub tape: StepTape,
    pub events: StepEvents,
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// Explicit Euler propagation with contact impulses:
/// `q̇' = q̇ + M⁻¹(dt(τ − c) + Jᵀf)`, `q' = q + dt·q̇`, where `f` solves the
/// LCP with `A = J M⁻¹ Jᵀ` and `b = J(q̇ + dt M⁻¹(τ − c)) + diag(ε) J q̇`.
pub fn propagate(
    model: &MechanismModel,
    state: &SystemState,
    tau: &DVector<f64>,
    dt: f64,
    contacts: &ContactSet,
    restitution: Option<&DVector<f64>>,
    solver: &DantzigOptions,
) -> Result<(SystemState, Option<SolvedLcp>)> {
    if dt < 0.0 {
        return Err(Error::NegativeTimestep(dt));
    }
    state.check(model)?;
    let m = mass_matrix(model, &state.q);
    let mut qd = state.qd.clone();
    if dt > 0.0 {
        let c = coriolis(model, &state.q, &state.qd);
        qd += solve_mass(&m, &((tau - c) * dt));
    }
    let mut lcp = None;
    if !contacts.is_empty() {
        let j = &contacts.jacobian;
        let minv_jt = DMatrix::from_columns(
            &(0..j.nrows())
                .map(|r| solve_mass(&m, &j.row(r).transpose()))
                .collect::<Vec<_>>(),
        );
        let a = symmetrize(j * &minv_jt);
        let mut b = j * &qd;
        if let Some(eps) = restitution {
            b += (j * &state.qd).component_mul(eps);
        }
        let problem = LcpProblem::new(a, b, contacts.friction_pairs())?;
        let (solution, _) = dantzig::solve(&problem, solver)?;
        qd += &minv_jt * &solution.f;
        lcp = Some(SolvedLcp { problem, solution });
    }
    let next = SystemState {
        q: &state.q + &state.qd * dt,
        qd,
        t: state.t + dt,
    };
    Ok((next, lcp))
}

/// Collision-free propagation over `dt` with contacts from the narrow phase.
pub fn step_p(
    model: &MechanismModel,
    state: &SystemState,
    tau: &DVector<f64>,
    dt: f64,
    opts: &FlowOptions,
) -> Result<(SystemState, PSegment)> {
    let contacts = if dt > 0.0 {
        collision::narrow_phase(model, &state.q, opts.slop)
    } else {
        ContactSet::empty(model.dofs())
    };
    let (next, lcp) = propagate(model, state, tau, dt, &contacts, None, &opts.solver)?;
    let seg = PSegment {
        state_in: state.clone(),
        state_out: next.clone(),
        tau: tau.clone(),
        dt,
        contacts,
        lcp,
    };
    Ok((next, seg))
}

/// Per-row restitution: ε on approaching normal rows, 0 elsewhere.
pub fn response_restitution(set: &ContactSet, qd: &DVector<f64>) -> DVector<f64> {
    let v = &set.jacobian * qd;
    let mut eps = set.row_restitution();
    for j in 0..set.len() {
        if v[2 * j] >= -APPROACH_TOL {
            eps[2 * j] = 0.0;
        }
    }
    eps
}

/// Impulsive response at the current configuration, `b = (1 + ε) J q̇⁻`.
/// `extra` is added to the contact set when the narrow phase misses it.
pub fn collision_response(
    model: &MechanismModel,
    state: &SystemState,
    extra: Option<&ContactPoint>,
    opts: &FlowOptions,
) -> Result<(SystemState, CSegment)> {
    let mut set = collision::narrow_phase(model, &state.q, opts.slop);
    if let Some(c) = extra {
        let known = set.contacts.iter().any(|k| {
            k.pair.colliders() == c.pair.colliders() && (k.point - c.point).norm() <= 1e-6
        });
        if !known {
            let mut contacts = set.contacts.clone();
            contacts.push(c.clone());
            set = collision::build_contact_set(model, &state.q, contacts);
        }
    }
    response_on(model, state, set, opts)
}

fn response_on(model: &MechanismModel, state: &SystemState, set: ContactSet, opts: &FlowOptions) -> Result<(SystemState, CSegment)> {
    let restitution = response_restitution(&set, &state.qd);
    let tau = DVector::zeros(model.dofs());
    let (next, lcp) = propagate(model, state, &tau, 0.0, &set, Some(&restitution), &opts.solver)?;
    let seg = CSegment {
        state_in: state.clone(),
        state_out: next.clone(),
        contacts: set,
        restitution,
        lcp,
        toi: None,
    };
    Ok((next, seg))
}

/// Penetrating, approaching contacts at the end of a step; resolved by one
/// response when present.
fn discrete_response(model: &MechanismModel, state: &SystemState, opts: &FlowOptions) -> Result<Option<(SystemState, CSegment)>> {
    let set = collision::narrow_phase(model, &state.q, opts.slop);
    let v = &set.jacobian * &state.qd;
    let hit = (0..set.len()).any(|j| set.contacts[j].gap < 0.0 && v[2 * j] < -APPROACH_TOL);
    if !hit {
        return Ok(None);
    }
    response_on(model, state, set, opts).map(Some)
}

fn grazing(normal_speed: f64, qd: &DVector<f64>) -> bool {
    normal_speed.abs() < 1e-9 * (1.0 + qd.amax())
}

/// One outer step: propagate to each time of impact, respond, continue with
/// the remaining time.
pub fn step_full(
    model: &MechanismModel,
    state: &SystemState,
    tau: &DVector<f64>,
    dt: f64,
    opts: &FlowOptions,
) -> Result<StepResult> {
    if dt < 0.0 {
        return Err(Error::NegativeTimestep(dt));
    }
    state.check(model)?;
    let mut segments = Vec::new();
    let mut events = StepEvents::default();
    let mut current = state.clone();
    let mut remaining = dt;

    if !opts.ccd {
        let (next, seg) = step_p(model, &current, tau, remaining, opts)?;
        segments.push(Segment::P(seg));
        current = next;
        if let Some((next, seg)) = discrete_response(model, &current, opts)? {
            segments.push(Segment::C(seg));
            events.discrete_responses += 1;
            events.collisions += 1;
            current = next;
        }
    } else {
        loop {
            if events.collisions >= opts.substep_cap {
                events.substep_cap_hit = true;
                let (next, seg) = step_p(model, &current, tau, remaining, opts)?;
                segments.push(Segment::P(seg));
                current = next;
                if let Some((next, seg)) = discrete_response(model, &current, opts)? {
                    segments.push(Segment::C(seg));
                    events.discrete_responses += 1;
                    events.collisions += 1;
                    current = next;
                }
                break;
            }
            let Some(hit) = collision::ccd_toi(model, &current.q, &current.qd, remaining) else {
                let (next, seg) = step_p(model, &current, tau, remaining, opts)?;
                segments.push(Segment::P(seg));
                current = next;
                break;
            };
            let (q_query, qd_query) = (current.q.clone(), current.qd.clone());
            let gap = collision::evaluate(model, &hit.contact.pair, q_query.as_slice()).gap;
            let (next, seg) = step_p(model, &current, tau, hit.toi, opts)?;
            segments.push(Segment::P(seg));
            current = next;

            let (_, jn, _) = collision::rows_with(model, &hit.contact.pair, current.q.as_slice());
            let normal_row = DVector::from_vec(jn);
            let normal_speed = normal_row.dot(&qd_query);
            let record = TRecord {
                pair: hit.contact.pair,
                toi: hit.toi,
                q_query,
                gap,
                normal_row,
                normal_speed,
                immediate: hit.toi == 0.0,
                grazing: grazing(normal_speed, &qd_query),
                qd_query,
            };
            let (next, mut seg) = collision_response(model, &current, Some(&hit.contact), opts)?;
            seg.toi = Some(record);
            segments.push(Segment::C(seg));
            current = next;
            events.collisions += 1;
            events.tois.push(hit.toi);
            remaining -= hit.toi;
        }
    }

    Ok(StepResult {
        state: current,
        tape: StepTape {
            dt,
            tau: tau.clone(),
            segments,
        },
        events,
    })
}

/// Re-runs the recorded segments from the tape's first input state.
pub fn replay(model: &MechanismModel, tape: &StepTape, solver: &DantzigOptions) -> Result<SystemState> {
    let mut state = match tape.segments.first() {
        Some(Segment::P(p)) => p.state_in.clone(),
        Some(Segment::C(c)) => c.state_in.clone(),
        None => return Err(Error::InvalidProblem("empty tape".into())),
    };
    for seg in &tape.segments {
        state = match seg {
            Segment::P(p) => propagate(model, &state, &p.tau, p.dt, &p.contacts, None, solver)?.0,
            Segment::C(c) => {
                let tau = DVector::zeros(model.dofs());
                propagate(model, &state, &tau, 0.0, &c.contacts, Some(&c.restitution), solver)?.0
            }
        };
    }
    Ok(state)
}

/// Runs `steps` outer steps with constant `τ`.
pub fn simulate(
    model: &MechanismModel,
    state: &SystemState,
    tau: &DVector<f64>,
    dt: f64,
    steps: usize,
    opts: &FlowOptions,
) -> Result<Vec<StepResult>> {
    let mut out = Vec::with_capacity(steps);
    let mut current = state.clone();
    for _ in 0..steps {
        let r = step_full(model, &current, tau, dt, opts)?;
        current = r.state.clone();
        out.push(r);
    }
    Ok(out)
}
