//! Experiment runners: plain simulation, the two-ball initial-velocity
//! optimization, the sliding and pushing box experiments, gradient checks
//! and single LCP solves.

use contactdiff::dantzig::{self, FallbackReason};
use contactdiff::diffsim::{finite_difference_check, loss_and_gradient, FdReport, Param, Rollout};
use contactdiff::fixtures::scenes::weighted_square;
use contactdiff::flow::{simulate as run_steps, Segment};
use contactdiff::lcp::{validate_solution, LcpProblem};
use contactdiff::{DantzigOptions, StepResult, SystemState};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::metrics::RunMetrics;
use crate::scene::{Built, Experiment, GradcheckConfig, LossConfig, PushConfig, SceneConfig, SlideConfig, TwoBallConfig};

/// Validation tolerance for every LCP audited by the runners.
pub const LCP_TOLERANCE: f64 = 1e-8;

/// Relative error accepted by the gradient check.
pub const GRADCHECK_REL_TOL: f64 = 1e-4;
/// Absolute error accepted for derivatives that vanish structurally.
pub const GRADCHECK_ABS_TOL: f64 = 1e-8;

/// A full run of a scene with its step results.
pub struct Run {
    pub built: Built,
    pub results: Vec<StepResult>,
    pub metrics: RunMetrics,
}

pub fn simulate(scene: &SceneConfig) -> Result<Run> {
    let built = scene.build()?;
    let results = run_steps(&built.model, &built.state, &built.tau, scene.dt_s, scene.steps, &built.opts)?;
    let metrics = RunMetrics::collect(scene, &built.model, &built.state, &results, LCP_TOLERANCE);
    Ok(Run { built, results, metrics })
}

fn experiment<'s, T>(scene: &'s SceneConfig, name: &'static str, pick: impl Fn(&'s Experiment) -> Option<&'s T>) -> Result<&'s T> {
    scene.experiment.as_ref().and_then(pick).ok_or(CliError::MissingExperiment(name))
}

fn free_body(scene: &SceneConfig, name: &str, field: &str) -> Result<usize> {
    scene.body_index(name).ok_or_else(|| CliError::Invalid {
        scene: scene.name.clone(),
        field: field.to_string(),
        message: format!("`{name}` is not a free body"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub velocity_mps: [f64; 2],
    pub gradient: [f64; 2],
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub scene: String,
    pub initial_velocity_mps: [f64; 2],
    pub final_velocity_mps: [f64; 2],
    pub final_position_m: [f64; 2],
    pub target_m: [f64; 2],
    pub error_m: f64,
    pub final_loss: f64,
    pub epochs: Vec<EpochRow>,
    /// Epochs at which the learning rate was halved.
    pub halvings: Vec<usize>,
    pub assumptions: Vec<String>,
}

struct TwoBall<'a> {
    scene: &'a SceneConfig,
    cfg: &'a TwoBallConfig,
    base: Built,
    striker: usize,
    target: usize,
}

impl TwoBall<'_> {
    fn rollout(&self, v: [f64; 2]) -> Rollout {
        let mut state = self.base.state.clone();
        state.qd[3 * self.striker] = v[0];
        state.qd[3 * self.striker + 1] = v[1];
        Rollout {
            model: self.base.model.clone(),
            state,
            tau: self.base.tau.clone(),
            dt: self.scene.dt_s,
            steps: self.scene.steps,
            opts: self.base.opts,
        }
    }

    fn position(&self, s: &SystemState) -> [f64; 2] {
        [s.q[3 * self.target], s.q[3 * self.target + 1]]
    }

    /// Loss `scale·‖p − p_target‖²` with its gradient in the initial
    /// striker velocity, plus the final target position.
    fn evaluate(&self, v: [f64; 2]) -> Result<(f64, [f64; 2], [f64; 2])> {
        let (t, goal, scale) = (self.target, self.cfg.target_m, self.cfg.loss_scale);
        let loss = move |s: &SystemState| {
            let d = [s.q[3 * t] - goal[0], s.q[3 * t + 1] - goal[1]];
            let mut g = DVector::zeros(2 * s.q.len());
            g[3 * t] = 2.0 * scale * d[0];
            g[3 * t + 1] = 2.0 * scale * d[1];
            (scale * (d[0] * d[0] + d[1] * d[1]), g)
        };
        let rollout = self.rollout(v);
        let (value, grad, results) = loss_and_gradient(&rollout, &loss)?;
        let last = results.last().map(|r| &r.state).unwrap_or(&rollout.state);
        let b = self.striker;
        Ok((value, [grad.qd[3 * b], grad.qd[3 * b + 1]], self.position(last)))
    }
}

/// Gradient descent on the striker's initial velocity. The learning rate is
/// halved, and the step undone, whenever the loss exceeds ten times the
/// best loss so far.
pub fn optimize_two_ball(scene: &SceneConfig, epochs_override: Option<usize>) -> Result<OptimizeReport> {
    let cfg = experiment(scene, "two_ball", |e| match e {
        Experiment::TwoBall(t) => Some(t),
        _ => None,
    })?;
    let striker = free_body(scene, &cfg.striker, "experiment.two_ball.striker")?;
    let target = free_body(scene, &cfg.target_body, "experiment.two_ball.target_body")?;
    let problem = TwoBall {
        scene,
        cfg,
        base: scene.build()?,
        striker,
        target,
    };
    let epochs = epochs_override.unwrap_or(cfg.epochs);
    let v0 = {
        let qd = &problem.base.state.qd;
        [qd[3 * striker], qd[3 * striker + 1]]
    };

    let model = &problem.base.model;
    let (eps, mu) = model.pair_material(&model.bodies()[striker].material, &model.bodies()[target].material);
    let mut assumptions = vec![format!("restitution {eps} and friction {mu} between the balls")];
    if scene.gravity_mps2 == [0.0, 0.0] {
        assumptions.push("top-down table modeled in 2D with zero gravity".into());
    }

    let mut v = v0;
    let mut lr = cfg.learning_rate;
    let mut best = (f64::INFINITY, v0);
    let mut rows = Vec::with_capacity(epochs);
    let mut halvings = Vec::new();
    for epoch in 0..epochs {
        let (loss, grad, _) = problem.evaluate(v)?;
        rows.push(EpochRow {
            epoch,
            loss,
            velocity_mps: v,
            gradient: grad,
            learning_rate: lr,
        });
        if loss > 10.0 * best.0 || !loss.is_finite() {
            lr *= 0.5;
            halvings.push(epoch);
            v = best.1;
            continue;
        }
        if loss < best.0 {
            best = (loss, v);
        }
        v = [v[0] - lr * grad[0], v[1] - lr * grad[1]];
    }
    // keep the best velocity seen; the last update may have overshot
    let (mut final_loss, _, mut p) = problem.evaluate(v)?;
    if final_loss > best.0 {
        v = best.1;
        (final_loss, _, p) = problem.evaluate(v)?;
    }
    let goal = cfg.target_m;
    Ok(OptimizeReport {
        scene: scene.name.clone(),
        initial_velocity_mps: v0,
        final_velocity_mps: v,
        final_position_m: p,
        target_m: goal,
        error_m: (p[0] - goal[0]).hypot(p[1] - goal[1]),
        final_loss,
        epochs: rows,
        halvings,
        assumptions,
    })
}

/// Final target position for a given striker velocity, without optimizing.
pub fn two_ball_position(scene: &SceneConfig, velocity: [f64; 2]) -> Result<[f64; 2]> {
    let mut scene = scene.clone();
    let cfg = experiment(&scene, "two_ball", |e| match e {
        Experiment::TwoBall(t) => Some(t),
        _ => None,
    })?
    .clone();
    let striker = free_body(&scene, &cfg.striker, "experiment.two_ball.striker")?;
    let target = free_body(&scene, &cfg.target_body, "experiment.two_ball.target_body")?;
    scene.bodies[striker].velocity_mps = velocity;
    let run = simulate(&scene)?;
    let q = &run.metrics.summary.final_q;
    Ok([q[3 * target], q[3 * target + 1]])
}

fn friction_against_floor(built: &Built, body: usize) -> (f64, f64) {
    let model = &built.model;
    let mu = model
        .fixtures()
        .first()
        .map(|f| model.pair_material(&model.bodies()[body].material, &f.material).1)
        .unwrap_or(0.0);
    (mu, -model.gravity().y)
}

/// Least-squares slope of `y` against the sample index.
pub fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (num, den) = y.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, v)| {
        let dx = i as f64 - mx;
        (a + dx * (v - my), b + dx * dx)
    });
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlideReport {
    pub scene: String,
    pub mu: f64,
    pub gravity_mps2: f64,
    pub expected_slope_mps_per_step: f64,
    pub slope_mps_per_step: f64,
    pub relative_error: f64,
    /// Steps `[start, end)` during which the box slides the whole step.
    pub sliding_steps: [usize; 2],
    pub stopped_at_step: Option<usize>,
    pub velocities_mps: Vec<f64>,
    pub lcp_failures: usize,
}

/// A box sliding on the floor: the per-step velocity change is `−μ g dt`
/// until it stops.
pub fn slide(scene: &SceneConfig) -> Result<SlideReport> {
    let cfg: &SlideConfig = experiment(scene, "slide", |e| match e {
        Experiment::Slide(s) => Some(s),
        _ => None,
    })?;
    let body = free_body(scene, &cfg.body, "experiment.slide.body")?;
    let run = simulate(scene)?;
    let v: Vec<f64> = run.metrics.rows.iter().map(|r| r.qd[3 * body]).collect();
    let moving = |x: f64| x.abs() > 1e-9;
    // the phase is every row whose next row is still moving the same way
    let end = (0..v.len().saturating_sub(1))
        .find(|&k| !(moving(v[k + 1]) && v[k + 1].signum() == v[0].signum()))
        .unwrap_or(v.len().saturating_sub(1));
    let phase = &v[..=end.min(v.len() - 1)];
    let (mu, g) = friction_against_floor(&run.built, body);
    let expected = -mu * g * scene.dt_s * v[0].signum();
    let measured = if phase.len() >= 2 { slope(phase) } else { f64::NAN };
    Ok(SlideReport {
        scene: scene.name.clone(),
        mu,
        gravity_mps2: g,
        expected_slope_mps_per_step: expected,
        slope_mps_per_step: measured,
        relative_error: ((measured - expected) / expected).abs(),
        sliding_steps: [0, end],
        stopped_at_step: v.iter().skip(1).position(|&x| !moving(x)).map(|k| k + 1),
        velocities_mps: v,
        lcp_failures: run.metrics.summary.lcp_failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlidingPhase {
    pub body: String,
    /// Steps `[start, end)`.
    pub steps: [usize; 2],
    pub deceleration_mps2: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushReport {
    pub scene: String,
    pub expected_deceleration_mps2: f64,
    pub phases: Vec<SlidingPhase>,
    pub impact_step: Option<usize>,
    /// Horizontal momentum of the two boxes just before and after the
    /// impact response.
    pub momentum_at_impact: Option<[f64; 2]>,
    pub both_at_rest: bool,
    /// Per row: horizontal velocity of pusher and pushed box.
    pub velocities_mps: Vec<[f64; 2]>,
    pub lcp_solves: usize,
    pub lcp_failures: usize,
}

/// Runs of at least three collision-free steps during which `v` keeps its
/// sign and is nonzero at both ends.
fn sliding_phases(v: &[f64], collided: &[bool]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for k in 0..v.len().saturating_sub(1) {
        let ok = !collided[k] && v[k].abs() > 1e-9 && v[k + 1].abs() > 1e-9 && v[k].signum() == v[k + 1].signum();
        match (ok, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                if k - s >= 3 {
                    out.push([s, k]);
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let k = v.len() - 1;
        if k - s >= 3 {
            out.push([s, k]);
        }
    }
    out
}

pub fn push(scene: &SceneConfig) -> Result<PushReport> {
    let cfg: &PushConfig = experiment(scene, "push", |e| match e {
        Experiment::Push(p) => Some(p),
        _ => None,
    })?;
    let a = free_body(scene, &cfg.pusher, "experiment.push.pusher")?;
    let b = free_body(scene, &cfg.pushed, "experiment.push.pushed")?;
    let run = simulate(scene)?;
    let rows = &run.metrics.rows;
    let (mu, g) = friction_against_floor(&run.built, a);
    let expected = mu * g;

    let collided: Vec<bool> = run.results.iter().map(|r| r.events.collisions > 0).collect();
    let mut phases = Vec::new();
    for (body, name) in [(a, &cfg.pusher), (b, &cfg.pushed)] {
        let v: Vec<f64> = rows.iter().map(|r| r.qd[3 * body]).collect();
        for [s, e] in sliding_phases(&v, &collided) {
            let decel = -(v[e] - v[s]) / ((e - s) as f64 * scene.dt_s) * v[s].signum();
            phases.push(SlidingPhase {
                body: name.clone(),
                steps: [s, e],
                deceleration_mps2: decel,
                relative_error: ((decel - expected) / expected).abs(),
            });
        }
    }

    let masses = (run.built.model.bodies()[a].mass, run.built.model.bodies()[b].mass);
    let momentum = |s: &SystemState| masses.0 * s.qd[3 * a] + masses.1 * s.qd[3 * b];
    let impact_step = collided.iter().position(|&c| c);
    let momentum_at_impact = impact_step.and_then(|k| {
        run.results[k].tape.segments.iter().find_map(|s| match s {
            Segment::C(c) if c.toi.is_some() => Some([momentum(&c.state_in), momentum(&c.state_out)]),
            _ => None,
        })
    });
    let last = rows.last().expect("initial row present");
    Ok(PushReport {
        scene: scene.name.clone(),
        expected_deceleration_mps2: expected,
        phases,
        impact_step,
        momentum_at_impact,
        both_at_rest: last.qd[3 * a].abs() <= 1e-9 && last.qd[3 * b].abs() <= 1e-9,
        velocities_mps: rows.iter().map(|r| [r.qd[3 * a], r.qd[3 * b]]).collect(),
        lcp_solves: run.metrics.summary.lcp_solves,
        lcp_failures: run.metrics.summary.lcp_failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEntry {
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub abs_error: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub scene: String,
    pub loss: String,
    pub eps: f64,
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub boundary: bool,
    pub grazing: bool,
    /// Every entry within tolerance, or the run was flagged and its
    /// failures are expected.
    pub passed: bool,
}

impl GradcheckReport {
    fn from_fd(scene: &SceneConfig, cfg: &GradcheckConfig, fd: FdReport) -> Self {
        let entries: Vec<GradEntry> = fd
            .entries
            .iter()
            .map(|e| GradEntry {
                param: e.param.label(),
                analytic: e.analytic,
                numeric: e.numeric,
                rel_error: e.rel_error,
                abs_error: e.abs_error,
                ok: e.rel_error <= GRADCHECK_REL_TOL || e.abs_error <= GRADCHECK_ABS_TOL,
            })
            .collect();
        let flagged = fd.boundary || fd.grazing;
        GradcheckReport {
            scene: scene.name.clone(),
            loss: match cfg.loss {
                LossConfig::WeightedSquare => "weighted_square".into(),
                LossConfig::Coordinate { index } => format!("q[{index}]"),
            },
            eps: cfg.eps,
            passed: flagged || entries.iter().all(|e| e.ok),
            entries,
            max_rel_error: fd.max_rel_error,
            boundary: fd.boundary,
            grazing: fd.grazing,
        }
    }
}

pub fn gradcheck(scene: &SceneConfig) -> Result<GradcheckReport> {
    let default = GradcheckConfig {
        loss: LossConfig::WeightedSquare,
        eps: 1e-6,
    };
    let cfg = match &scene.experiment {
        Some(Experiment::Gradcheck(g)) => g,
        _ => &default,
    };
    let built = scene.build()?;
    let rollout = Rollout {
        model: built.model,
        state: built.state,
        tau: built.tau,
        dt: scene.dt_s,
        steps: scene.steps,
        opts: built.opts,
    };
    let params = Param::all(&rollout.model);
    let fd = match cfg.loss {
        LossConfig::WeightedSquare => finite_difference_check(&rollout, &weighted_square, &params, cfg.eps)?,
        LossConfig::Coordinate { index } => {
            let loss = move |s: &SystemState| {
                let mut g = DVector::zeros(2 * s.q.len());
                g[index] = 1.0;
                (s.q[index], g)
            };
            finite_difference_check(&rollout, &loss, &params, cfg.eps)?
        }
    };
    Ok(GradcheckReport::from_fd(scene, cfg, fd))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcpReport {
    pub dim: usize,
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    pub classes: String,
    pub valid: bool,
    pub worst_violation: f64,
    pub pivots: usize,
    pub fallbacks: Vec<(usize, String)>,
}

pub fn solve_lcp(problem: &LcpProblem, opts: &DantzigOptions) -> Result<LcpReport> {
    let (s, trace) = dantzig::solve(problem, opts)?;
    let rep = validate_solution(problem, &s, LCP_TOLERANCE)?;
    Ok(LcpReport {
        dim: problem.dim(),
        f: s.f.iter().copied().collect(),
        a: s.a.iter().copied().collect(),
        classes: s.classes.iter().map(|c| c.symbol()).collect(),
        valid: rep.valid,
        worst_violation: rep.worst_violation,
        pivots: trace.pivots(),
        fallbacks: trace
            .fallbacks
            .iter()
            .map(|&(k, r)| {
                let reason = match r {
                    FallbackReason::LoopDetected => "loop",
                    FallbackReason::IterationCap => "iteration_cap",
                    FallbackReason::SingularBlock => "singular_block",
                    FallbackReason::UnboundedRay => "unbounded_ray",
                };
                (k, reason.to_string())
            })
            .collect(),
    })
}
