//! Per-step records of a run and their CSV/JSON forms.

use std::io::Write;

use contactdiff::collision::min_gap;
use contactdiff::lcp::validate_solution;
use contactdiff::{MechanismModel, StepResult, SystemState};
use serde::Serialize;

use crate::error::Result;
use crate::scene::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub t_s: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Smallest signed gap over all collider pairs; absent when nothing can
    /// touch.
    pub min_gap_m: Option<f64>,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcpFailure {
    pub step: usize,
    pub segment: usize,
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scene: String,
    pub steps: usize,
    pub dt_s: f64,
    pub ccd: bool,
    pub legacy_max_step: bool,
    pub collisions: usize,
    /// `(step, time of impact within the step)`.
    pub tois: Vec<(usize, f64)>,
    pub substep_cap_hits: usize,
    pub discrete_responses: usize,
    /// `max(0, −min gap)` over all step boundaries.
    pub max_penetration_m: f64,
    pub lcp_solves: usize,
    pub lcp_failures: Vec<LcpFailure>,
    pub final_q: Vec<f64>,
    pub final_qd: Vec<f64>,
}

/// Rows hold the initial state followed by one row per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub summary: RunSummary,
    pub rows: Vec<StepRow>,
}

fn row(model: &MechanismModel, step: usize, state: &SystemState, collisions: usize) -> StepRow {
    StepRow {
        step,
        t_s: state.t,
        q: state.q.iter().copied().collect(),
        qd: state.qd.iter().copied().collect(),
        min_gap_m: min_gap(model, &state.q),
        collisions,
    }
}

impl RunMetrics {
    pub fn collect(scene: &SceneConfig, model: &MechanismModel, initial: &SystemState, results: &[StepResult], validation_tol: f64) -> Self {
        let mut rows = vec![row(model, 0, initial, 0)];
        let mut tois = Vec::new();
        let mut lcp_solves = 0;
        let mut lcp_failures = Vec::new();
        let (mut caps, mut discrete) = (0, 0);
        for (k, r) in results.iter().enumerate() {
            let mut state = r.state.clone();
            state.t = scene.dt_s * (k + 1) as f64;
            rows.push(row(model, k + 1, &state, r.events.collisions));
            tois.extend(r.events.tois.iter().map(|&t| (k, t)));
            caps += usize::from(r.events.substep_cap_hit);
            discrete += r.events.discrete_responses;
            for (i, seg) in r.tape.segments.iter().enumerate() {
                if let Some(l) = seg.lcp() {
                    lcp_solves += 1;
                    let rep = validate_solution(&l.problem, &l.solution, validation_tol).expect("tape dimensions agree");
                    if !rep.valid {
                        lcp_failures.push(LcpFailure {
                            step: k,
                            segment: i,
                            worst_violation: rep.worst_violation,
                        });
                    }
                }
            }
        }
        let max_penetration_m = rows
            .iter()
            .filter_map(|r| r.min_gap_m)
            .map(|g| (-g).max(0.0))
            .fold(0.0, f64::max);
        let last = rows.last().expect("initial row present");
        let summary = RunSummary {
            scene: scene.name.clone(),
            steps: results.len(),
            dt_s: scene.dt_s,
            ccd: scene.solver.ccd,
            legacy_max_step: scene.solver.max_step == crate::scene::MaxStepConfig::Legacy,
            collisions: results.iter().map(|r| r.events.collisions).sum(),
            tois,
            substep_cap_hits: caps,
            discrete_responses: discrete,
            max_penetration_m,
            lcp_solves,
            lcp_failures,
            final_q: last.q.clone(),
            final_qd: last.qd.clone(),
        };
        Self { summary, rows }
    }

    /// Trajectory CSV: `step, t_s`, then positions and velocities named by
    /// body, then `min_gap_m` and `collisions`.
    pub fn write_csv<W: Write>(&self, scene: &SceneConfig, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (pos, vel) = column_names(scene);
        let mut header = vec!["step".to_string(), "t_s".to_string()];
        header.extend(pos);
        header.extend(vel);
        header.extend(["min_gap_m".to_string(), "collisions".to_string()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.t_s.to_string()];
            rec.extend(r.q.iter().chain(r.qd.iter()).map(|v| v.to_string()));
            rec.push(r.min_gap_m.map(|g| g.to_string()).unwrap_or_default());
            rec.push(r.collisions.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Coordinate and velocity column names in generalized-coordinate order.
pub fn column_names(scene: &SceneConfig) -> (Vec<String>, Vec<String>) {
    let mut pos = Vec::new();
    let mut vel = Vec::new();
    for b in &scene.bodies {
        for (p, v) in [("x_m", "vx_mps"), ("y_m", "vy_mps"), ("angle_rad", "rate_radps")] {
            pos.push(format!("{}.{p}", b.name));
            vel.push(format!("{}.{v}", b.name));
        }
    }
    for c in &scene.chains {
        for l in &c.links {
            pos.push(format!("{}.joint_rad", l.name));
            vel.push(format!("{}.joint_rate_radps", l.name));
        }
    }
    (pos, vel)
}
