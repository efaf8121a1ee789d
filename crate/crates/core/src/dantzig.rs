//! Dantzig's principal pivoting method for contact LCPs, with Coulomb
//! friction rows.
//!
//! Indices are driven one at a time in order. While an index is outside its
//! solution zone its force is pushed in the direction that moves its
//! residual toward zero; every already-classified index keeps its class
//! until it reaches a class boundary, at which point it transits to the
//! neighbouring class and driving continues.
//!
//! Two things differ from the textbook friction variant:
//!
//! * the step limit for a static friction index accounts for the bound
//!   `μ f_N` moving while `f_N` itself changes ([`MaxStepRule::Corrected`]);
//! * a drive loop that revisits a set configuration (or otherwise stalls)
//!   falls back to an exhaustive search over class assignments of the
//!   indices driven so far, nearest to the current assignment first.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lcp::{classify_point, validate_solution, Class, LcpProblem, LcpSolution};
use crate::linalg::{solve_checked, submatrix, subvector};

/// Values this close to a class boundary are put on the boundary.
pub const ZERO_TOL: f64 = 1e-10;

/// Enumeration budget of the ergodic fallback.
pub const ERGODIC_LIMIT: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetTag {
    Untouched,
    C,
    N,
    F,
    H,
    L,
}

impl SetTag {
    fn from_class(c: Class) -> Self {
        match c {
            Class::C => SetTag::C,
            Class::N => SetTag::N,
            Class::F => SetTag::F,
            Class::H => SetTag::H,
            Class::L => SetTag::L,
        }
    }

    fn class(self) -> Option<Class> {
        match self {
            SetTag::Untouched => None,
            SetTag::C => Some(Class::C),
            SetTag::N => Some(Class::N),
            SetTag::F => Some(Class::F),
            SetTag::H => Some(Class::H),
            SetTag::L => Some(Class::L),
        }
    }
}

/// Partition of the indices into the pivoting sets. Stored as one tag per
/// index, so the partition property holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorkingSets {
    tags: Vec<SetTag>,
}

impl WorkingSets {
    pub fn new(n: usize) -> Self {
        Self {
            tags: vec![SetTag::Untouched; n],
        }
    }

    pub fn from_tags(tags: Vec<SetTag>) -> Self {
        Self { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, i: usize) -> SetTag {
        self.tags[i]
    }

    pub fn tags(&self) -> &[SetTag] {
        &self.tags
    }

    pub fn with(mut self, i: usize, tag: SetTag) -> Self {
        self.tags[i] = tag;
        self
    }

    pub fn members(&self, tag: SetTag) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    pub fn cc(&self) -> Vec<usize> {
        self.members(SetTag::C)
    }

    pub fn cn(&self) -> Vec<usize> {
        self.members(SetTag::N)
    }

    pub fn ccf(&self) -> Vec<usize> {
        self.members(SetTag::F)
    }

    pub fn cnh(&self) -> Vec<usize> {
        self.members(SetTag::H)
    }

    pub fn cnl(&self) -> Vec<usize> {
        self.members(SetTag::L)
    }

    pub fn untouched(&self) -> Vec<usize> {
        self.members(SetTag::Untouched)
    }

    /// Indices whose force is solved for in a drive step (C ∪ F).
    fn active(&self) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| matches!(self.tags[i], SetTag::C | SetTag::F))
            .collect()
    }

    pub fn snapshot_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.tags.hash(&mut h);
        h.finish()
    }

    /// Checks the set-membership rules against the friction map.
    pub fn check(&self, p: &LcpProblem) -> Result<()> {
        if self.tags.len() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                got: self.tags.len(),
            });
        }
        for (i, &tag) in self.tags.iter().enumerate() {
            let friction = p.friction_of(i);
            match (tag, friction) {
                (SetTag::C | SetTag::N, Some(_)) | (SetTag::F | SetTag::H | SetTag::L, None) => {
                    return Err(Error::InvalidProblem(format!(
                        "index {i} tagged {tag:?} has the wrong kind"
                    )))
                }
                (SetTag::F | SetTag::H | SetTag::L, Some((normal, _)))
                    if self.tags[normal] == SetTag::Untouched =>
                {
                    return Err(Error::InvalidProblem(format!(
                        "friction index {i} classified before its normal {normal}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Which friction step limit to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxStepRule {
    /// Bound crossing of a moving bound: `(±μ f_N − f_i)/(Δf_i ∓ μ Δf_N)`.
    #[default]
    Corrected,
    /// Treats the bound as fixed: `(±μ f_N − f_i)/Δf_i`. Kept as a
    /// regression witness; it produces invalid solutions.
    Legacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Upper,
    Lower,
}

/// Limiting index of a drive step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub step: f64,
    pub index: usize,
    /// For friction indices: the bound that was reached, if any.
    pub bound: Option<Bound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotStep {
    pub driven: usize,
    pub blocking: usize,
    pub step: f64,
    pub sets_hash: u64,
    /// Smallest normal force after the step.
    pub min_normal_force: f64,
    /// Largest |a_i| over clamped (C and F) indices after the step.
    pub max_clamped_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    LoopDetected,
    IterationCap,
    SingularBlock,
    UnboundedRay,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PivotTrace {
    pub steps: Vec<PivotStep>,
    pub loop_detected: bool,
    /// One entry per ergodic search: (driven index, reason).
    pub fallbacks: Vec<(usize, FallbackReason)>,
}

impl PivotTrace {
    pub fn pivots(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DantzigOptions {
    pub max_step_rule: MaxStepRule,
    /// Total pivot budget before forcing the ergodic search; `None` means
    /// `50·n`.
    pub iteration_cap: Option<usize>,
    /// Tolerance of the final acceptance check on the polished forces.
    pub tolerance: f64,
}

impl Default for DantzigOptions {
    fn default() -> Self {
        Self {
            max_step_rule: MaxStepRule::Corrected,
            iteration_cap: None,
            tolerance: 1e-8,
        }
    }
}

impl DantzigOptions {
    pub fn legacy() -> Self {
        Self {
            max_step_rule: MaxStepRule::Legacy,
            ..Self::default()
        }
    }
}

/// Force direction for driving `k` in the frictionless method:
/// `Δf_k = 1`, `Δf_C = −A_CC⁻¹ A_Ck`, zero elsewhere.
pub fn solve_df(k: usize, sets: &WorkingSets, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let cc = sets.cc();
    let mut df = DVector::zeros(n);
    df[k] = 1.0;
    if !cc.is_empty() {
        let block = submatrix(a, &cc, &cc);
        let rhs = -DVector::from_iterator(cc.len(), cc.iter().map(|&i| a[(i, k)]));
        let x = solve_checked(&block, &rhs).ok_or(Error::SingularBlock)?;
        for (&i, v) in cc.iter().zip(x.iter()) {
            df[i] = *v;
        }
    }
    Ok(df)
}

/// Largest step along `Δf` that keeps every class (frictionless).
pub fn max_step(
    k: usize,
    f: &DVector<f64>,
    df: &DVector<f64>,
    a: &DVector<f64>,
    da: &DVector<f64>,
    sets: &WorkingSets,
) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..f.len() {
        if i == k {
            continue;
        }
        let s = match sets.tag(i) {
            SetTag::C if df[i] < 0.0 => -f[i] / df[i],
            SetTag::N if da[i] < 0.0 => -a[i] / da[i],
            _ => continue,
        };
        let s = s.max(0.0);
        if best.is_none_or(|(b, _)| s < b) {
            best = Some((s, i));
        }
    }
    if da[k] > 0.0 {
        let s = (-a[k] / da[k]).max(0.0);
        if best.is_none_or(|(b, _)| s < b) {
            best = Some((s, k));
        }
    }
    best.ok_or(Error::UnboundedRay { index: k })
}

/// Moves `j` between C and N; the finished driven index enters C.
pub fn transit_set(j: usize, sets: &WorkingSets, driven: bool) -> WorkingSets {
    let next = match sets.tag(j) {
        SetTag::C if !driven => SetTag::N,
        SetTag::N if !driven => SetTag::C,
        _ => SetTag::C,
    };
    sets.clone().with(j, next)
}

/// Copy of `A` with each sliding friction column folded into its normal's
/// column, `A'_{*N(i)} ± μ A'_{*i}`.
fn folded_operator(p: &LcpProblem, sets: &WorkingSets) -> DMatrix<f64> {
    let mut folded = p.a().clone();
    for fp in p.friction_pairs() {
        let sign = match sets.tag(fp.index) {
            SetTag::H => 1.0,
            SetTag::L => -1.0,
            _ => continue,
        };
        let col = p.a().column(fp.index) * (sign * fp.mu);
        let mut target = folded.column_mut(fp.normal);
        target += col;
    }
    folded
}

fn slave_sliding(p: &LcpProblem, sets: &WorkingSets, v: &mut DVector<f64>) {
    for fp in p.friction_pairs() {
        match sets.tag(fp.index) {
            SetTag::H => v[fp.index] = fp.mu * v[fp.normal],
            SetTag::L => v[fp.index] = -fp.mu * v[fp.normal],
            _ => {}
        }
    }
}

/// Force direction for driving `k` with friction rows. `residual_negative`
/// is the sign test `a_k < 0` that picks the drive direction.
pub fn solve_df_friction(
    k: usize,
    sets: &WorkingSets,
    p: &LcpProblem,
    residual_negative: bool,
) -> Result<DVector<f64>> {
    let n = p.dim();
    let drive = if residual_negative { 1.0 } else { -1.0 };
    let active = sets.active();
    let mut df = DVector::zeros(n);
    df[k] = drive;
    if !active.is_empty() {
        let folded = folded_operator(p, sets);
        let block = submatrix(&folded, &active, &active);
        let rhs = DVector::from_iterator(
            active.len(),
            active.iter().map(|&i| -p.a()[(i, k)] * drive),
        );
        let x = solve_checked(&block, &rhs).ok_or(Error::SingularBlock)?;
        for (&i, v) in active.iter().zip(x.iter()) {
            df[i] = *v;
        }
    }
    slave_sliding(p, sets, &mut df);
    Ok(df)
}

/// Steps at which a friction force reaches its upper / lower bound while the
/// bound itself moves with the normal force.
fn bound_steps(
    rule: MaxStepRule,
    fi: f64,
    dfi: f64,
    f_normal: f64,
    df_normal: f64,
    mu: f64,
) -> [Option<(f64, Bound)>; 2] {
    match rule {
        MaxStepRule::Corrected => {
            let up_den = dfi - mu * df_normal;
            let lo_den = dfi + mu * df_normal;
            [
                (up_den > 0.0).then(|| ((mu * f_normal - fi) / up_den, Bound::Upper)),
                (lo_den < 0.0).then(|| ((-mu * f_normal - fi) / lo_den, Bound::Lower)),
            ]
        }
        MaxStepRule::Legacy => [
            (dfi > 0.0).then(|| ((mu * f_normal - fi) / dfi, Bound::Upper)),
            (dfi < 0.0).then(|| ((-mu * f_normal - fi) / dfi, Bound::Lower)),
        ],
    }
}

/// Largest step along `Δf` that keeps every class, with friction rows.
#[allow(clippy::too_many_arguments)]
pub fn max_step_friction(
    k: usize,
    f: &DVector<f64>,
    df: &DVector<f64>,
    a: &DVector<f64>,
    da: &DVector<f64>,
    sets: &WorkingSets,
    p: &LcpProblem,
    rule: MaxStepRule,
) -> Result<Block> {
    let mut best: Option<Block> = None;
    let offer = |best: &mut Option<Block>, step: f64, index: usize, bound: Option<Bound>| {
        if !step.is_finite() {
            return;
        }
        let step = step.max(0.0);
        if best.is_none_or(|b| step < b.step) {
            *best = Some(Block { step, index, bound });
        }
    };

    for i in 0..p.dim() {
        if i == k {
            continue;
        }
        match sets.tag(i) {
            SetTag::C if df[i] < 0.0 => offer(&mut best, -f[i] / df[i], i, None),
            SetTag::F => {
                let (normal, mu) = p.friction_of(i).expect("F holds friction indices");
                for (s, bound) in bound_steps(rule, f[i], df[i], f[normal], df[normal], mu)
                    .into_iter()
                    .flatten()
                {
                    offer(&mut best, s, i, Some(bound));
                }
            }
            SetTag::N | SetTag::L if da[i] < 0.0 => offer(&mut best, -a[i] / da[i], i, None),
            SetTag::H if da[i] > 0.0 => offer(&mut best, -a[i] / da[i], i, None),
            _ => {}
        }
    }

    // the driven index loses ties
    let mut driven: Option<Block> = None;
    let residual_closing = if p.is_friction(k) {
        a[k] * da[k] < 0.0
    } else {
        da[k] > 0.0
    };
    if residual_closing {
        offer(&mut driven, -a[k] / da[k], k, None);
    }
    if let Some((normal, mu)) = p.friction_of(k) {
        let candidates = bound_steps(rule, f[k], df[k], f[normal], df[normal], mu);
        for (s, bound) in candidates.into_iter().flatten() {
            // the legacy rule only watches the bound in the drive direction
            let ahead = (bound == Bound::Upper) == (df[k] > 0.0);
            if rule == MaxStepRule::Corrected || ahead {
                offer(&mut driven, s, k, Some(bound));
            }
        }
    }
    if let Some(d) = driven {
        if best.is_none_or(|b| d.step < b.step) {
            best = Some(d);
        }
    }
    best.ok_or(Error::UnboundedRay { index: k })
}

/// Class move for the blocking index `block.index`; `k` is the index being
/// driven and `k_is_friction` tells which kind it is.
pub fn transit_set_friction(
    block: &Block,
    k: usize,
    k_is_friction: bool,
    sets: &WorkingSets,
    df: &DVector<f64>,
) -> WorkingSets {
    let j = block.index;
    let bound_tag = match block.bound {
        Some(Bound::Upper) => SetTag::H,
        Some(Bound::Lower) => SetTag::L,
        None if df[j] > 0.0 => SetTag::H,
        None => SetTag::L,
    };
    let next = if j == k {
        match (k_is_friction, block.bound) {
            (false, _) => SetTag::C,
            (true, Some(_)) => bound_tag,
            (true, None) => SetTag::F,
        }
    } else {
        match sets.tag(j) {
            SetTag::C => SetTag::N,
            SetTag::N => SetTag::C,
            SetTag::F => bound_tag,
            SetTag::H | SetTag::L => SetTag::F,
            SetTag::Untouched => SetTag::Untouched,
        }
    };
    sets.clone().with(j, next)
}

/// Forces for the current classification from the folded reduced system.
/// `None` when the clamped block is singular.
fn forces_from_sets(p: &LcpProblem, sets: &WorkingSets) -> Option<DVector<f64>> {
    let n = p.dim();
    let active = sets.active();
    let mut f = DVector::zeros(n);
    if !active.is_empty() {
        let folded = folded_operator(p, sets);
        let block = submatrix(&folded, &active, &active);
        let rhs = -subvector(p.b(), &active);
        let x = solve_checked(&block, &rhs)?;
        for (&i, v) in active.iter().zip(x.iter()) {
            f[i] = *v;
        }
    }
    slave_sliding(p, sets, &mut f);
    Some(f)
}

struct DriveState {
    f: DVector<f64>,
    a: DVector<f64>,
    sets: WorkingSets,
}

impl DriveState {
    fn refresh(&mut self, p: &LcpProblem) {
        slave_sliding(p, &self.sets, &mut self.f);
        self.a = p.residual(&self.f);
    }
}

enum DriveOutcome {
    Done,
    Fallback(FallbackReason),
}

/// Classifies `k` directly when `(f_k, a_k)` already lies in its zone.
fn zone_class(p: &LcpProblem, st: &DriveState, k: usize) -> Option<SetTag> {
    let ak = st.a[k];
    match p.friction_of(k) {
        None => {
            if ak.abs() <= ZERO_TOL {
                Some(SetTag::C)
            } else if ak > 0.0 {
                Some(SetTag::N)
            } else {
                None
            }
        }
        Some((normal, mu)) => {
            let bound = mu * st.f[normal];
            if bound <= ZERO_TOL {
                Some(if ak <= 0.0 { SetTag::H } else { SetTag::L })
            } else if ak.abs() <= ZERO_TOL {
                Some(SetTag::F)
            } else {
                None
            }
        }
    }
}

fn snap(p: &LcpProblem, st: &mut DriveState, j: usize) {
    match st.sets.tag(j) {
        SetTag::N => st.f[j] = 0.0,
        SetTag::H | SetTag::L => {
            // slaved on refresh
        }
        _ => {}
    }
    st.refresh(p);
}

fn record_step(p: &LcpProblem, st: &DriveState, k: usize, block: &Block) -> PivotStep {
    let mut min_normal = f64::INFINITY;
    let mut max_clamped = 0.0f64;
    for i in 0..p.dim() {
        match st.sets.tag(i) {
            SetTag::C | SetTag::N => min_normal = min_normal.min(st.f[i]),
            _ => {}
        }
        if matches!(st.sets.tag(i), SetTag::C | SetTag::F) {
            max_clamped = max_clamped.max(st.a[i].abs());
        }
    }
    PivotStep {
        driven: k,
        blocking: block.index,
        step: block.step,
        sets_hash: st.sets.snapshot_hash(),
        min_normal_force: min_normal,
        max_clamped_residual: max_clamped,
    }
}

#[allow(clippy::too_many_arguments)]
fn drive_index(
    p: &LcpProblem,
    st: &mut DriveState,
    k: usize,
    frictionless: bool,
    rule: MaxStepRule,
    trace: &mut PivotTrace,
    budget: &mut usize,
) -> DriveOutcome {
    if let Some(tag) = zone_class(p, st, k) {
        st.sets = st.sets.clone().with(k, tag);
        st.refresh(p);
        return DriveOutcome::Done;
    }
    let mut seen: HashSet<Vec<SetTag>> = HashSet::new();
    loop {
        if !seen.insert(st.sets.tags().to_vec()) {
            return DriveOutcome::Fallback(FallbackReason::LoopDetected);
        }
        if *budget == 0 {
            return DriveOutcome::Fallback(FallbackReason::IterationCap);
        }
        *budget -= 1;

        let df = if frictionless {
            solve_df(k, &st.sets, p.a())
        } else {
            solve_df_friction(k, &st.sets, p, st.a[k] < 0.0)
        };
        let df = match df {
            Ok(df) => df,
            Err(_) => return DriveOutcome::Fallback(FallbackReason::SingularBlock),
        };
        let da = p.a() * &df;
        let block = if frictionless {
            max_step(k, &st.f, &df, &st.a, &da, &st.sets).map(|(step, index)| Block {
                step,
                index,
                bound: None,
            })
        } else {
            max_step_friction(k, &st.f, &df, &st.a, &da, &st.sets, p, rule)
        };
        let block = match block {
            Ok(b) => b,
            Err(_) => return DriveOutcome::Fallback(FallbackReason::UnboundedRay),
        };

        st.f.axpy(block.step, &df, 1.0);
        st.sets = if frictionless {
            transit_set(block.index, &st.sets, block.index == k)
        } else {
            transit_set_friction(&block, k, p.is_friction(k), &st.sets, &df)
        };
        snap(p, st, block.index);
        trace.steps.push(record_step(p, st, k, &block));
        if block.index == k {
            return DriveOutcome::Done;
        }
    }
}

/// Assignments of the leading `m` indices ordered by Hamming distance from
/// `seed`, lexicographic within one distance.
fn ergodic_order(p: &LcpProblem, seed: &[Class]) -> Result<Vec<Vec<Class>>> {
    let m = seed.len();
    let total = (0..m).try_fold(1usize, |acc, i| acc.checked_mul(p.class_options(i).len()));
    match total {
        Some(t) if t <= ERGODIC_LIMIT => {}
        _ => return Err(Error::IterationCap { cap: ERGODIC_LIMIT }),
    }
    let mut levels: Vec<Vec<Vec<Class>>> = vec![Vec::new(); m + 1];
    let options: Vec<&[Class]> = (0..m).map(|i| p.class_options(i)).collect();
    let mut digits = vec![0usize; m];
    loop {
        let assignment: Vec<Class> = digits.iter().zip(&options).map(|(&d, o)| o[d]).collect();
        let distance = assignment.iter().zip(seed).filter(|(x, y)| x != y).count();
        levels[distance].push(assignment);
        let mut pos = m;
        loop {
            if pos == 0 {
                // odometer order is already lexicographic within each level
                return Ok(levels.into_iter().flatten().collect());
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < options[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

fn ergodic_search(p: &LcpProblem, st: &mut DriveState, k: usize) -> Result<()> {
    let prefix = p.leading(k + 1);
    let mut seed: Vec<Class> = (0..k)
        .map(|i| st.sets.tag(i).class().expect("driven indices are classified"))
        .collect();
    seed.push(classify_point(p, &st.f, &st.a, k, ZERO_TOL));
    if seed[k].is_normal() != !p.is_friction(k) {
        seed[k] = p.class_options(k)[0];
    }
    for assignment in ergodic_order(&prefix, &seed)? {
        let tags: Vec<SetTag> = assignment.iter().map(|&c| SetTag::from_class(c)).collect();
        let sets = WorkingSets::from_tags(tags);
        let Some(f) = forces_from_sets(&prefix, &sets) else {
            continue;
        };
        let s = LcpSolution::from_forces(&prefix, f, assignment.clone());
        if validate_solution(&prefix, &s, 1e-8)?.valid {
            let n = p.dim();
            let mut tags = vec![SetTag::Untouched; n];
            let mut f = DVector::zeros(n);
            for i in 0..=k {
                tags[i] = SetTag::from_class(assignment[i]);
                f[i] = s.f[i];
            }
            st.sets = WorkingSets::from_tags(tags);
            st.f = f;
            st.refresh(p);
            return Ok(());
        }
    }
    Err(Error::NoValidAssignment)
}

/// Solves the LCP by pivoting. The returned solution's forces are re-solved
/// from the final classification when that improves the residuals.
pub fn solve(p: &LcpProblem, opts: &DantzigOptions) -> Result<(LcpSolution, PivotTrace)> {
    let n = p.dim();
    let frictionless = p.friction_pairs().is_empty();
    let mut st = DriveState {
        f: DVector::zeros(n),
        a: p.b().clone(),
        sets: WorkingSets::new(n),
    };
    let mut trace = PivotTrace::default();
    let mut budget = opts.iteration_cap.unwrap_or(50 * n.max(1));

    for k in 0..n {
        match drive_index(p, &mut st, k, frictionless, opts.max_step_rule, &mut trace, &mut budget) {
            DriveOutcome::Done => {}
            DriveOutcome::Fallback(reason) => {
                if reason == FallbackReason::LoopDetected {
                    trace.loop_detected = true;
                }
                trace.fallbacks.push((k, reason));
                ergodic_search(p, &mut st, k)?;
            }
        }
    }

    let classes: Vec<Class> = st
        .sets
        .tags()
        .iter()
        .map(|t| t.class().expect("all indices classified"))
        .collect();
    let pivoted = LcpSolution::from_forces(p, st.f.clone(), classes.clone());
    let pivoted_worst = validate_solution(p, &pivoted, opts.tolerance)?.worst_violation;
    let solution = match forces_from_sets(p, &st.sets) {
        Some(f) => {
            let polished = LcpSolution::from_forces(p, f, classes);
            let worst = validate_solution(p, &polished, opts.tolerance)?.worst_violation;
            if worst <= pivoted_worst {
                polished
            } else {
                pivoted
            }
        }
        None => pivoted,
    };
    Ok((solution, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcp::FrictionPair;

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn tags(t: &[SetTag]) -> WorkingSets {
        WorkingSets::from_tags(t.to_vec())
    }

    use SetTag::*;

    #[test]
    fn solve_df_examples() {
        let a = mat(2, &[2.0, 1.0, 1.0, 2.0]);
        let df = solve_df(1, &tags(&[C, Untouched]), &a).unwrap();
        assert_eq!(df.as_slice(), &[-0.5, 1.0]);
        let df = solve_df(0, &tags(&[Untouched, Untouched, Untouched]), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(df.as_slice(), &[1.0, 0.0, 0.0]);
        let df = solve_df(2, &tags(&[C, C, Untouched]), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(df.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn solve_df_singular_block() {
        let a = mat(3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(solve_df(2, &tags(&[C, C, Untouched]), &a), Err(Error::SingularBlock));
    }

    #[test]
    fn max_step_examples() {
        let z = DVector::zeros(2);
        // only the driven index limits
        let (s, j) = max_step(1, &z, &vecd(&[0.0, 1.0]), &vecd(&[0.0, -1.0]), &vecd(&[0.0, 1.0]), &tags(&[Untouched, Untouched])).unwrap();
        assert_eq!((s, j), (1.0, 1));
        // clamped force reaches zero first
        let (s, j) = max_step(1, &vecd(&[2.0, 0.0]), &vecd(&[-1.0, 1.0]), &vecd(&[0.0, -3.0]), &vecd(&[0.0, 1.0]), &tags(&[C, Untouched])).unwrap();
        assert_eq!((s, j), (2.0, 0));
        // separated contact re-engages
        let (s, j) = max_step(0, &z, &vecd(&[1.0, 0.0]), &vecd(&[-5.0, 3.0]), &vecd(&[1.0, -1.0]), &tags(&[Untouched, N])).unwrap();
        assert_eq!((s, j), (3.0, 1));
        // nothing limits
        assert!(matches!(
            max_step(0, &z, &vecd(&[1.0, 0.0]), &vecd(&[-1.0, 0.0]), &vecd(&[-1.0, 0.0]), &tags(&[Untouched, Untouched])),
            Err(Error::UnboundedRay { index: 0 })
        ));
    }

    #[test]
    fn max_step_ties_go_to_smallest_non_driven_index() {
        let (s, j) = max_step(
            2,
            &vecd(&[1.0, 1.0, 0.0]),
            &vecd(&[-1.0, -1.0, 1.0]),
            &vecd(&[0.0, 0.0, -1.0]),
            &vecd(&[0.0, 0.0, 1.0]),
            &tags(&[C, C, Untouched]),
        )
        .unwrap();
        assert_eq!((s, j), (1.0, 0));
    }

    #[test]
    fn transit_set_examples() {
        let s = tags(&[C, N, Untouched]);
        assert_eq!(transit_set(0, &s, false).tag(0), N);
        assert_eq!(transit_set(1, &s, false).tag(1), C);
        assert_eq!(transit_set(2, &s, true).tag(2), C);
    }

    fn sliding_pair(mu: f64) -> LcpProblem {
        let fp = FrictionPair { index: 1, normal: 0, mu };
        LcpProblem::new(mat(2, &[1.0, 0.2, 0.2, 1.0]), vecd(&[-1.0, -3.0]), vec![fp]).unwrap()
    }

    #[test]
    fn solve_df_friction_folds_sliding_columns() {
        let p = sliding_pair(1.0);
        let df = solve_df_friction(0, &tags(&[Untouched, H]), &p, true).unwrap();
        assert!((df[0] - 1.0).abs() < 1e-15);
        assert!((df[1] - 1.0).abs() < 1e-15);

        // a driven friction with its normal clamped, folded 1x1 system A'00 = 1.2
        let fp = FrictionPair { index: 2, normal: 1, mu: 1.0 };
        let p3 = LcpProblem::new(
            mat(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.2, 0.0, 0.2, 1.0]),
            vecd(&[0.0, -1.0, -3.0]),
            vec![fp],
        )
        .unwrap();
        let df = solve_df_friction(0, &tags(&[Untouched, C, H]), &p3, true).unwrap();
        assert_eq!(df[0], 1.0);
        assert!(df[1].abs() < 1e-15);

        let p = sliding_pair(1.0);
        let sets = tags(&[C, Untouched]);
        let df = solve_df_friction(1, &sets, &p, true).unwrap();
        assert!((df[0] + 0.2).abs() < 1e-15 && df[1] == 1.0);
        let neg = solve_df_friction(1, &sets, &p, false).unwrap();
        assert_eq!(neg, -df);
    }

    #[test]
    fn solve_df_friction_without_sliding_matches_frictionless() {
        let fp = FrictionPair { index: 2, normal: 0, mu: 0.5 };
        let a = mat(3, &[2.0, 0.5, 0.1, 0.5, 2.0, 0.3, 0.1, 0.3, 1.0]);
        let p = LcpProblem::new(a.clone(), vecd(&[-1.0, -1.0, 0.0]), vec![fp]).unwrap();
        let sets = tags(&[C, Untouched, Untouched]);
        let with = solve_df_friction(1, &sets, &p, true).unwrap();
        let without = solve_df(1, &sets, &a).unwrap();
        assert!((with - without).amax() < 1e-15);
    }

    #[test]
    fn corrected_bound_step_examples() {
        // friction index 1 in F, normal 0 in C
        let p = LcpProblem::new(DMatrix::identity(3, 3), vecd(&[0.0, 0.0, -1.0]), vec![FrictionPair { index: 1, normal: 0, mu: 0.5 }]).unwrap();
        let sets = tags(&[C, F, Untouched]);
        let f = vecd(&[1.0, 0.0, 0.0]);
        let a = vecd(&[0.0, 0.0, -10.0]);
        let da = vecd(&[0.0, 0.0, 1.0]);

        // stationary bound
        let b = max_step_friction(2, &f, &vecd(&[0.0, 1.0, 1.0]), &a, &da, &sets, &p, MaxStepRule::Corrected).unwrap();
        assert_eq!((b.step, b.index, b.bound), (0.5, 1, Some(Bound::Upper)));

        // bound moving with the normal force
        let df = vecd(&[1.0, 1.0, 1.0]);
        let b = max_step_friction(2, &f, &df, &a, &da, &sets, &p, MaxStepRule::Corrected).unwrap();
        assert_eq!((b.step, b.index), (1.0, 1));
        let fi = f[1] + b.step * df[1];
        let bound = 0.5 * (f[0] + b.step * df[0]);
        assert!((fi - bound).abs() < 1e-15);
        let legacy = max_step_friction(2, &f, &df, &a, &da, &sets, &p, MaxStepRule::Legacy).unwrap();
        assert_eq!((legacy.step, legacy.index), (0.5, 1));

        // bound receding as fast as the force grows
        let b = max_step_friction(2, &f, &vecd(&[2.0, 1.0, 1.0]), &a, &da, &sets, &p, MaxStepRule::Corrected).unwrap();
        assert_eq!(b.index, 2);
    }

    #[test]
    fn transit_set_friction_examples() {
        let sets = tags(&[C, F, Untouched]);
        let df = vecd(&[0.0, 1.0, 1.0]);
        let up = Block { step: 0.5, index: 1, bound: Some(Bound::Upper) };
        assert_eq!(transit_set_friction(&up, 2, false, &sets, &df).tag(1), H);

        let sets = tags(&[C, H, Untouched]);
        let release = Block { step: 0.5, index: 1, bound: None };
        assert_eq!(transit_set_friction(&release, 2, false, &sets, &df).tag(1), F);

        let sets = tags(&[C, Untouched]);
        let df = vecd(&[0.0, -1.0]);
        let lower = Block { step: 0.5, index: 1, bound: Some(Bound::Lower) };
        assert_eq!(transit_set_friction(&lower, 1, true, &sets, &df).tag(1), L);
        let interior = Block { step: 0.5, index: 1, bound: None };
        assert_eq!(transit_set_friction(&interior, 1, true, &sets, &df).tag(1), F);

        let sets = tags(&[C, N, Untouched]);
        let b = Block { step: 0.0, index: 0, bound: None };
        assert_eq!(transit_set_friction(&b, 2, false, &sets, &df).tag(0), N);
    }

    #[test]
    fn solve_examples() {
        let p = LcpProblem::frictionless(mat(1, &[1.0]), vecd(&[2.0])).unwrap();
        let (s, trace) = solve(&p, &DantzigOptions::default()).unwrap();
        assert_eq!(s.f[0], 0.0);
        assert_eq!(s.classes, vec![Class::N]);
        assert_eq!(trace.pivots(), 0);

        let p = LcpProblem::frictionless(mat(2, &[2.0, 1.0, 1.0, 2.0]), vecd(&[-1.0, -1.0])).unwrap();
        let (s, _) = solve(&p, &DantzigOptions::default()).unwrap();
        assert!((s.f[0] - 1.0 / 3.0).abs() < 1e-12 && (s.f[1] - 1.0 / 3.0).abs() < 1e-12);

        let fp = FrictionPair { index: 1, normal: 0, mu: 0.5 };
        let p = LcpProblem::new(DMatrix::identity(2, 2), vecd(&[-1.0, -2.0]), vec![fp]).unwrap();
        let (s, _) = solve(&p, &DantzigOptions::default()).unwrap();
        assert!((s.f[0] - 1.0).abs() < 1e-12 && (s.f[1] - 0.5).abs() < 1e-12);
        assert_eq!(s.classes, vec![Class::C, Class::H]);

        let (s, _) = solve(&sliding_pair(1.0), &DantzigOptions::default()).unwrap();
        assert!((s.f[0] - 5.0 / 6.0).abs() < 1e-12 && (s.f[1] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn working_set_membership_rules() {
        let p = sliding_pair(1.0);
        assert!(tags(&[C, H]).check(&p).is_ok());
        assert!(tags(&[H, C]).check(&p).is_err());
        assert!(tags(&[Untouched, F]).check(&p).is_err());
    }

    #[test]
    fn ergodic_order_starts_at_seed() {
        let p = sliding_pair(1.0);
        let order = ergodic_order(&p, &[Class::N, Class::L]).unwrap();
        assert_eq!(order.len(), 6);
        assert_eq!(order[0], vec![Class::N, Class::L]);
        assert_eq!(order[1], vec![Class::C, Class::L]);
        assert_eq!(order[2], vec![Class::N, Class::F]);
        assert_eq!(order[5], vec![Class::C, Class::H]);
    }
}
