//! Linear complementarity problems with Coulomb friction rows, the solution
//! validator and two reference solvers.
//!
//! A problem is `a = A f + b` over `n` indices. Normal indices satisfy
//! `f ≥ 0, a ≥ 0, f·a = 0`. A friction index `i` is tied to a normal index
//! `N(i) < i` and a coefficient `μ`, and satisfies `|f_i| ≤ μ f_N`,
//! `a_i f_i ≤ 0` and `a_i (μ f_N − |f_i|) = 0`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::max_abs;

/// Relative slack for the symmetry check and the eigenvalue lower bound.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Default size limit of the enumerative oracle.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionPair {
    pub index: usize,
    pub normal: usize,
    pub mu: f64,
}

/// Complementarity class of one index. The declaration order is the
/// tie-break order of the enumerative oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Class {
    /// Clamping normal: `a = 0`, `f ≥ 0`.
    C,
    /// Separated normal: `f = 0`, `a ≥ 0`.
    N,
    /// Static friction: `a = 0`, `|f| ≤ μ f_N`.
    F,
    /// Sliding at the upper bound: `f = μ f_N`, `a ≤ 0`.
    H,
    /// Sliding at the lower bound: `f = −μ f_N`, `a ≥ 0`.
    L,
}

impl Class {
    pub fn is_normal(self) -> bool {
        matches!(self, Class::C | Class::N)
    }

    pub fn symbol(self) -> char {
        match self {
            Class::C => 'C',
            Class::N => 'N',
            Class::F => 'F',
            Class::H => 'H',
            Class::L => 'L',
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    friction: Vec<FrictionPair>,
    // friction index -> (normal index, mu)
    friction_of: Vec<Option<(usize, f64)>>,
}

impl LcpProblem {
    /// Builds a problem and checks every structural invariant: square `A`
    /// matching `b`, symmetric, positive semidefinite, and a well-formed
    /// friction map.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, friction: Vec<FrictionPair>) -> Result<Self> {
        let p = Self::new_unchecked(a, b, friction)?;
        p.check_operator()?;
        Ok(p)
    }

    pub fn frictionless(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Self::new(a, b, Vec::new())
    }

    /// Checks dimensions and the friction map only; skips the symmetry and
    /// eigenvalue tests.
    pub fn new_unchecked(
        a: DMatrix<f64>,
        b: DVector<f64>,
        friction: Vec<FrictionPair>,
    ) -> Result<Self> {
        let n = b.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.nrows().max(a.ncols()),
            });
        }
        let mut friction_of = vec![None; n];
        for fp in &friction {
            if fp.index >= n || fp.normal >= n {
                return Err(Error::InvalidProblem(format!(
                    "friction pair {} -> {} out of range",
                    fp.index, fp.normal
                )));
            }
            if fp.normal >= fp.index {
                return Err(Error::InvalidProblem(format!(
                    "friction index {} must come after its normal {}",
                    fp.index, fp.normal
                )));
            }
            if !(fp.mu >= 0.0) || !fp.mu.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "friction coefficient {} of index {} must be finite and >= 0",
                    fp.mu, fp.index
                )));
            }
            if friction_of[fp.index].is_some() {
                return Err(Error::InvalidProblem(format!(
                    "friction index {} listed twice",
                    fp.index
                )));
            }
            friction_of[fp.index] = Some((fp.normal, fp.mu));
        }
        for fp in &friction {
            if friction_of[fp.normal].is_some() {
                return Err(Error::InvalidProblem(format!(
                    "normal {} of friction index {} is itself a friction index",
                    fp.normal, fp.index
                )));
            }
        }
        let mut friction = friction;
        friction.sort_by_key(|fp| fp.index);
        Ok(Self {
            a,
            b,
            friction,
            friction_of,
        })
    }

    fn check_operator(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Ok(());
        }
        let scale = self.a.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.a[(i, j)] - self.a[(j, i)]).abs() > STRUCTURE_TOL * scale {
                    return Err(Error::InvalidProblem(format!(
                        "A is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&self.a + self.a.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        if min_eig < -STRUCTURE_TOL * scale {
            return Err(Error::InvalidProblem(format!(
                "A is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn friction_pairs(&self) -> &[FrictionPair] {
        &self.friction
    }

    /// `(N(i), μ(i))` when `i` is a friction index.
    pub fn friction_of(&self, i: usize) -> Option<(usize, f64)> {
        self.friction_of[i]
    }

    pub fn is_friction(&self, i: usize) -> bool {
        self.friction_of[i].is_some()
    }

    pub fn residual(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.a * f + &self.b
    }

    /// Restriction to the leading `k` indices. Friction pairs reach back only,
    /// so the prefix is itself a well-formed problem.
    pub fn leading(&self, k: usize) -> LcpProblem {
        let friction = self
            .friction
            .iter()
            .copied()
            .filter(|fp| fp.index < k)
            .collect();
        LcpProblem::new_unchecked(
            self.a.view((0, 0), (k, k)).into_owned(),
            self.b.rows(0, k).into_owned(),
            friction,
        )
        .expect("prefix of a valid problem is valid")
    }

    /// Class options for index `i` in tie-break order.
    pub fn class_options(&self, i: usize) -> &'static [Class] {
        if self.is_friction(i) {
            &[Class::F, Class::H, Class::L]
        } else {
            &[Class::C, Class::N]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub f: DVector<f64>,
    pub a: DVector<f64>,
    pub classes: Vec<Class>,
}

impl LcpSolution {
    /// Builds a solution from forces, recomputing `a = A f + b`.
    pub fn from_forces(p: &LcpProblem, f: DVector<f64>, classes: Vec<Class>) -> Self {
        let a = p.residual(&f);
        Self { f, a, classes }
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// `a − (A f + b)` is not zero.
    Residual,
    /// Class tag not allowed for the index kind.
    ClassTag,
    NormalResidualSign,
    NormalForceSign,
    NormalComplementarity,
    FrictionBound,
    FrictionDissipation,
    FrictionComplementarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub condition: Condition,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub valid: bool,
    pub worst_violation: f64,
    pub violations: Vec<Violation>,
}

/// Checks every complementarity and Coulomb condition of `s` against `p`.
pub fn validate_solution(p: &LcpProblem, s: &LcpSolution, tol: f64) -> Result<ValidationReport> {
    let n = p.dim();
    for len in [s.f.len(), s.a.len(), s.classes.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    assert!(tol > 0.0, "validation tolerance must be positive");

    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    let mut check = |index: usize, condition: Condition, amount: f64| {
        let amount = if amount.is_nan() { f64::INFINITY } else { amount };
        worst = worst.max(amount);
        if amount > tol {
            violations.push(Violation {
                index,
                condition,
                amount,
            });
        }
    };

    let recomputed = p.residual(&s.f);
    let res_scale = 1.0 + max_abs(p.b());
    for i in 0..n {
        check(i, Condition::Residual, (s.a[i] - recomputed[i]).abs() / res_scale);
    }

    for i in 0..n {
        let (fi, ai) = (s.f[i], s.a[i]);
        match p.friction_of(i) {
            None => {
                check(
                    i,
                    Condition::ClassTag,
                    if s.classes[i].is_normal() { 0.0 } else { f64::INFINITY },
                );
                check(i, Condition::NormalResidualSign, -ai);
                check(i, Condition::NormalForceSign, -fi);
                check(i, Condition::NormalComplementarity, (fi * ai).abs());
            }
            Some((normal, mu)) => {
                check(
                    i,
                    Condition::ClassTag,
                    if s.classes[i].is_normal() { f64::INFINITY } else { 0.0 },
                );
                let bound = mu * s.f[normal];
                check(i, Condition::FrictionBound, fi.abs() - bound);
                check(i, Condition::FrictionDissipation, ai * fi);
                check(
                    i,
                    Condition::FrictionComplementarity,
                    (ai.abs() * (bound - fi.abs())).abs(),
                );
            }
        }
    }

    Ok(ValidationReport {
        valid: worst <= tol,
        worst_violation: worst,
        violations,
    })
}

/// Forces implied by a full class assignment, from the `n × n` system that
/// stacks one equation per index: `(A f + b)_i = 0` for C/F, `f_i = 0` for
/// N, `f_i ∓ μ f_N = 0` for H/L. `None` when that system is singular.
pub fn forces_for_assignment(p: &LcpProblem, classes: &[Class]) -> Option<DVector<f64>> {
    let n = p.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (i, &class) in classes.iter().enumerate() {
        match class {
            Class::C | Class::F => {
                m.row_mut(i).copy_from(&p.a().row(i));
                rhs[i] = -p.b()[i];
            }
            Class::N => m[(i, i)] = 1.0,
            Class::H | Class::L => {
                let (normal, mu) = p.friction_of(i)?;
                let sign = if class == Class::H { 1.0 } else { -1.0 };
                m[(i, i)] = 1.0;
                m[(i, normal)] = -sign * mu;
            }
        }
    }
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= 1e-12 * smax {
        return None;
    }
    svd.solve(&rhs, 0.0).ok()
}

/// Class-enumeration oracle: tries every assignment in lexicographic class
/// order and returns the first one whose forces validate at `1e-8`.
pub fn solve_enumerative(p: &LcpProblem, limit: usize) -> Result<LcpSolution> {
    let n = p.dim();
    if n > limit {
        return Err(Error::DimensionTooLarge { dim: n, limit });
    }
    let options: Vec<&[Class]> = (0..n).map(|i| p.class_options(i)).collect();
    let mut digits = vec![0usize; n];
    loop {
        let classes: Vec<Class> = digits
            .iter()
            .zip(&options)
            .map(|(&d, opts)| opts[d])
            .collect();
        if let Some(f) = forces_for_assignment(p, &classes) {
            let s = LcpSolution::from_forces(p, f, classes);
            if validate_solution(p, &s, 1e-8)?.valid {
                return Ok(s);
            }
        }
        // odometer, last index fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Err(Error::NoValidAssignment);
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

/// Projected Gauss–Seidel with relaxation. Approximate; intended as a
/// reference, not as a production solver.
pub fn solve_pgs(p: &LcpProblem, iters: usize, relax: f64) -> Result<LcpSolution> {
    assert!(iters >= 1, "PGS needs at least one sweep");
    assert!(relax > 0.0 && relax <= 1.0, "relaxation must lie in (0, 1]");
    let n = p.dim();
    let a = p.a();
    let b = p.b();
    let mut f = DVector::zeros(n);
    for _ in 0..iters {
        for i in 0..n {
            let diag = a[(i, i)];
            if diag <= 0.0 {
                continue;
            }
            let ai = a.row(i).dot(&f.transpose()) + b[i];
            let raw = f[i] - relax * ai / diag;
            f[i] = match p.friction_of(i) {
                None => raw.max(0.0),
                Some((normal, mu)) => {
                    let bound = mu * f[normal];
                    raw.clamp(-bound, bound)
                }
            };
        }
    }
    let a_vec = p.residual(&f);
    let classes = (0..n)
        .map(|i| classify_point(p, &f, &a_vec, i, 1e-10))
        .collect();
    Ok(LcpSolution { f, a: a_vec, classes })
}

/// Class of `(f_i, a_i)` by position in the solution zone, snapping values
/// within `eps` of a boundary onto it (C over N, bounds over F).
pub fn classify_point(p: &LcpProblem, f: &DVector<f64>, a: &DVector<f64>, i: usize, eps: f64) -> Class {
    match p.friction_of(i) {
        None => {
            if a[i].abs() <= eps || f[i] > eps {
                Class::C
            } else {
                Class::N
            }
        }
        Some((normal, mu)) => {
            let bound = mu * f[normal];
            if f[i] >= bound - eps && a[i] <= eps {
                Class::H
            } else if f[i] <= -bound + eps && a[i] >= -eps {
                Class::L
            } else {
                Class::F
            }
        }
    }
}

/// Parses the textual problem format: `n`, then `n` rows of `A`, one row of
/// `b`, then optional `friction <i> <normal> <mu>` lines.
pub fn parse_problem(text: &str) -> Result<LcpProblem> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(no, l)| (no + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let bad = |line: usize, msg: &str| Error::InvalidProblem(format!("line {line}: {msg}"));
    let numbers = |line: usize, l: &str, count: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(line, &format!("bad number ({e})")))?;
        if vals.len() != count {
            return Err(bad(line, &format!("expected {count} numbers, found {}", vals.len())));
        }
        Ok(vals)
    };

    let (line, first) = lines.next().ok_or_else(|| bad(1, "empty problem file"))?;
    let n: usize = first
        .parse()
        .map_err(|_| bad(line, "first line must be the dimension"))?;
    let mut a = DMatrix::zeros(n, n);
    for r in 0..n {
        let (line, l) = lines.next().ok_or_else(|| bad(line, "missing rows of A"))?;
        let row = numbers(line, l, n)?;
        for (c, v) in row.into_iter().enumerate() {
            a[(r, c)] = v;
        }
    }
    let (bline, l) = lines.next().ok_or_else(|| bad(line, "missing b"))?;
    let b = DVector::from_vec(numbers(bline, l, n)?);
    let mut friction = Vec::new();
    for (line, l) in lines {
        let mut toks = l.split_whitespace();
        if toks.next() != Some("friction") {
            return Err(bad(line, "expected `friction <i> <normal> <mu>`"));
        }
        let rest: Vec<&str> = toks.collect();
        if rest.len() != 3 {
            return Err(bad(line, "expected `friction <i> <normal> <mu>`"));
        }
        let index = rest[0].parse().map_err(|_| bad(line, "bad friction index"))?;
        let normal = rest[1].parse().map_err(|_| bad(line, "bad normal index"))?;
        let mu = rest[2].parse().map_err(|_| bad(line, "bad friction coefficient"))?;
        friction.push(FrictionPair { index, normal, mu });
    }
    LcpProblem::new(a, b, friction)
}

/// Inverse of [`parse_problem`].
pub fn format_problem(p: &LcpProblem) -> String {
    let mut out = format!("{}\n", p.dim());
    for r in 0..p.dim() {
        let row: Vec<String> = p.a().row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let b: Vec<String> = p.b().iter().map(|v| v.to_string()).collect();
    out.push_str(&b.join(" "));
    out.push('\n');
    for fp in p.friction_pairs() {
        out.push_str(&format!("friction {} {} {}\n", fp.index, fp.normal, fp.mu));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn scalar(a: f64, b: f64) -> LcpProblem {
        LcpProblem::frictionless(mat(1, &[a]), vecd(&[b])).unwrap()
    }

    #[test]
    fn validator_scalar_cases() {
        let p = scalar(1.0, -1.0);
        let s = LcpSolution { f: vecd(&[1.0]), a: vecd(&[0.0]), classes: vec![Class::C] };
        assert!(validate_solution(&p, &s, 1e-8).unwrap().valid);

        let p = scalar(1.0, 2.0);
        let s = LcpSolution { f: vecd(&[0.0]), a: vecd(&[2.0]), classes: vec![Class::N] };
        assert!(validate_solution(&p, &s, 1e-8).unwrap().valid);

        let p = scalar(1.0, -1.0);
        let s = LcpSolution { f: vecd(&[0.0]), a: vecd(&[-1.0]), classes: vec![Class::N] };
        let r = validate_solution(&p, &s, 1e-8).unwrap();
        assert!(!r.valid);
        assert!(r
            .violations
            .iter()
            .any(|v| v.condition == Condition::NormalResidualSign && (v.amount - 1.0).abs() < 1e-15));
    }

    #[test]
    fn validator_rejects_dimension_mismatch() {
        let p = scalar(1.0, -1.0);
        let s = LcpSolution { f: vecd(&[1.0, 0.0]), a: vecd(&[0.0, 0.0]), classes: vec![Class::C; 2] };
        assert!(matches!(validate_solution(&p, &s, 1e-8), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn validator_worst_matches_tolerance_rule() {
        let p = scalar(1.0, -1.0);
        let s = LcpSolution::from_forces(&p, vecd(&[0.9]), vec![Class::C]);
        let r = validate_solution(&p, &s, 0.2).unwrap();
        assert!(r.valid);
        assert!((r.worst_violation - 0.1).abs() < 1e-12);
        let r = validate_solution(&p, &s, 0.05).unwrap();
        assert!(!r.valid);
    }

    #[test]
    fn enumerative_frictionless_pair() {
        let p = LcpProblem::frictionless(mat(2, &[2.0, 1.0, 1.0, 2.0]), vecd(&[-1.0, -1.0])).unwrap();
        let s = solve_enumerative(&p, DEFAULT_ENUMERATION_LIMIT).unwrap();
        assert!((s.f[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.f[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.classes, vec![Class::C, Class::C]);
    }

    #[test]
    fn enumerative_sliding_friction() {
        let fp = FrictionPair { index: 1, normal: 0, mu: 0.5 };
        let p = LcpProblem::new(mat(2, &[1.0, 0.0, 0.0, 1.0]), vecd(&[-1.0, -2.0]), vec![fp]).unwrap();
        let s = solve_enumerative(&p, 8).unwrap();
        assert!((s.f[0] - 1.0).abs() < 1e-12 && (s.f[1] - 0.5).abs() < 1e-12);
        assert_eq!(s.classes, vec![Class::C, Class::H]);

        let fp = FrictionPair { index: 1, normal: 0, mu: 1.0 };
        let p = LcpProblem::new(mat(2, &[1.0, 0.2, 0.2, 1.0]), vecd(&[-1.0, -3.0]), vec![fp]).unwrap();
        let s = solve_enumerative(&p, 8).unwrap();
        assert!((s.f[0] - 5.0 / 6.0).abs() < 1e-12 && (s.f[1] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(s.classes, vec![Class::C, Class::H]);
    }

    #[test]
    fn enumerative_limits() {
        let p = LcpProblem::frictionless(DMatrix::identity(3, 3), vecd(&[-1.0, 0.0, 1.0])).unwrap();
        assert!(matches!(solve_enumerative(&p, 2), Err(Error::DimensionTooLarge { dim: 3, limit: 2 })));
    }

    #[test]
    fn pgs_examples() {
        let s = solve_pgs(&scalar(1.0, -1.0), 50, 1.0).unwrap();
        assert!((s.f[0] - 1.0).abs() < 1e-6);
        let s = solve_pgs(&scalar(1.0, 2.0), 1, 1.0).unwrap();
        assert_eq!(s.f[0], 0.0);
        let p = LcpProblem::frictionless(mat(2, &[2.0, 1.0, 1.0, 2.0]), vecd(&[-1.0, -1.0])).unwrap();
        let s = solve_pgs(&p, 200, 1.0).unwrap();
        assert!((s.f[0] - 1.0 / 3.0).abs() < 1e-5 && (s.f[1] - 1.0 / 3.0).abs() < 1e-5);
        assert!((&s.a - p.residual(&s.f)).amax() < 1e-12);
    }

    #[test]
    fn structural_checks() {
        let fp = FrictionPair { index: 0, normal: 1, mu: 0.5 };
        assert!(LcpProblem::new(DMatrix::identity(2, 2), vecd(&[0.0, 0.0]), vec![fp]).is_err());
        let fp = FrictionPair { index: 1, normal: 0, mu: -0.5 };
        assert!(LcpProblem::new(DMatrix::identity(2, 2), vecd(&[0.0, 0.0]), vec![fp]).is_err());
        assert!(LcpProblem::frictionless(mat(2, &[1.0, 2.0, 0.0, 1.0]), vecd(&[0.0, 0.0])).is_err());
        assert!(LcpProblem::frictionless(mat(2, &[1.0, 2.0, 2.0, 1.0]), vecd(&[0.0, 0.0])).is_err());
        let chained = vec![
            FrictionPair { index: 1, normal: 0, mu: 0.5 },
            FrictionPair { index: 2, normal: 1, mu: 0.5 },
        ];
        assert!(LcpProblem::new(DMatrix::identity(3, 3), vecd(&[0.0; 3]), chained).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let text = "2\n1 0.2\n0.2 1\n-1 -3\nfriction 1 0 1\n";
        let p = parse_problem(text).unwrap();
        assert_eq!(p.friction_of(1), Some((0, 1.0)));
        let again = parse_problem(&format_problem(&p)).unwrap();
        assert_eq!(p, again);
        let err = parse_problem("2\n1 0\n0 1 5\n0 0\n").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }
}
