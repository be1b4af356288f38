//! CNF formulas, DIMACS text, defect counting, an exhaustive oracle and a
//! planted k-SAT generator.

use std::fmt;
use std::num::NonZeroI32;

use thiserror::Error;

use crate::rng::{bounded, coin, seeded};

/// Largest variable count accepted by [`brute_force_solve`].
pub const BRUTE_FORCE_MAX_VARS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CnfError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: clause before 'p cnf' header")]
    MissingHeader { line: usize },
    #[error("line {line}: invalid token '{token}'")]
    InvalidToken { line: usize, token: String },
    #[error("line {line}: literal index exceeds n ({literal} > {num_vars})")]
    LiteralOutOfRange { line: usize, literal: i64, num_vars: usize },
    #[error("line {line}: empty clause")]
    EmptyClause { line: usize },
    #[error("line {line}: variable {var} repeated in one clause")]
    DuplicateVariable { line: usize, var: usize },
    #[error("line {line}: clause count mismatch (declared {declared}, found {found})")]
    ClauseCountMismatch { line: usize, declared: usize, found: usize },
    #[error("line {line}: clause not terminated by 0")]
    UnterminatedClause { line: usize },
    #[error("invalid formula: {0}")]
    InvalidFormula(String),
    #[error("assignment has {got} values, formula has {expected} variables")]
    AssignmentLength { expected: usize, got: usize },
    #[error("brute force refuses n = {0} (limit {BRUTE_FORCE_MAX_VARS})")]
    TooManyVariables(usize),
    #[error("invalid generator parameters: {0}")]
    Parameter(String),
}

/// A signed variable reference; the DIMACS integer it prints as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal(NonZeroI32);

impl Literal {
    /// `var` is 1-based.
    pub fn new(var: usize, positive: bool) -> Self {
        assert!(var >= 1 && var <= i32::MAX as usize, "variable index out of range");
        let v = var as i32;
        Literal(NonZeroI32::new(if positive { v } else { -v }).unwrap())
    }

    pub fn from_dimacs(value: i32) -> Option<Self> {
        NonZeroI32::new(value).map(Literal)
    }

    pub fn var(self) -> usize {
        self.0.get().unsigned_abs() as usize
    }

    pub fn is_positive(self) -> bool {
        self.0.get() > 0
    }

    /// +1.0 for a positive literal, -1.0 for a negated one.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_dimacs(self) -> i32 {
        self.0.get()
    }

    pub fn is_true_under(self, assignment: &Assignment) -> bool {
        assignment.value(self.var()) == self.is_positive()
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    /// Rejects empty clauses and clauses mentioning a variable twice.
    pub fn new(literals: Vec<Literal>) -> Result<Self, CnfError> {
        if literals.is_empty() {
            return Err(CnfError::InvalidFormula("empty clause".into()));
        }
        if let Some(var) = first_repeated_var(&literals) {
            return Err(CnfError::InvalidFormula(format!("variable {var} repeated in one clause")));
        }
        Ok(Clause { literals })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn is_satisfied_by(&self, assignment: &Assignment) -> bool {
        self.literals.iter().any(|l| l.is_true_under(assignment))
    }
}

fn first_repeated_var(literals: &[Literal]) -> Option<usize> {
    for (i, a) in literals.iter().enumerate() {
        if literals[..i].iter().any(|b| b.var() == a.var()) {
            return Some(a.var());
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Clause>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<Clause>) -> Result<Self, CnfError> {
        if num_vars == 0 {
            return Err(CnfError::InvalidFormula("formula needs at least one variable".into()));
        }
        if clauses.is_empty() {
            return Err(CnfError::InvalidFormula("formula needs at least one clause".into()));
        }
        for clause in &clauses {
            if let Some(l) = clause.literals().iter().find(|l| l.var() > num_vars) {
                return Err(CnfError::InvalidFormula(format!("literal index exceeds n ({} > {num_vars})", l.var())));
            }
        }
        Ok(CnfFormula { num_vars, clauses })
    }

    /// Builds a formula from DIMACS-style integer clauses.
    pub fn from_dimacs_clauses(num_vars: usize, clauses: &[&[i32]]) -> Result<Self, CnfError> {
        let clauses = clauses
            .iter()
            .map(|c| {
                let lits = c
                    .iter()
                    .map(|&x| Literal::from_dimacs(x).ok_or_else(|| CnfError::InvalidFormula("zero literal".into())))
                    .collect::<Result<Vec<_>, _>>()?;
                Clause::new(lits)
            })
            .collect::<Result<Vec<_>, _>>()?;
        CnfFormula::new(num_vars, clauses)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }
}

/// Truth values for variables `1..=n`, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    values: Vec<bool>,
}

impl Assignment {
    pub fn new(values: Vec<bool>) -> Self {
        Assignment { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of 1-based variable `var`.
    pub fn value(&self, var: usize) -> bool {
        self.values[var - 1]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Number of positions where the two assignments differ.
    pub fn hamming_distance(&self, other: &Assignment) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count()
    }

    /// The solver-output `v` line, e.g. `v 1 -2 3 0`.
    pub fn to_v_line(&self) -> String {
        let mut s = String::from("v");
        for (i, &b) in self.values.iter().enumerate() {
            let lit = if b { (i + 1) as i64 } else { -((i + 1) as i64) };
            s.push_str(&format!(" {lit}"));
        }
        s.push_str(" 0");
        s
    }
}

impl From<Vec<bool>> for Assignment {
    fn from(values: Vec<bool>) -> Self {
        Assignment::new(values)
    }
}

/// Parses DIMACS CNF text.
///
/// Comment lines start with `c`. Clauses may span lines; each ends with `0`.
/// A `%` line (SATLIB trailer) ends the clause section.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula, CnfError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses: Vec<Clause> = Vec::new();
    let mut current: Vec<Literal> = Vec::new();
    let mut clause_line = 0;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(CnfError::MalformedHeader { line: line_no, reason: "duplicate header".into() });
            }
            header = Some(parse_header(line, line_no)?);
            continue;
        }
        let (num_vars, _) = header.ok_or(CnfError::MissingHeader { line: line_no })?;
        for token in line.split_whitespace() {
            let value: i64 =
                token.parse().map_err(|_| CnfError::InvalidToken { line: line_no, token: token.to_string() })?;
            if current.is_empty() {
                clause_line = line_no;
            }
            if value == 0 {
                if current.is_empty() {
                    return Err(CnfError::EmptyClause { line: line_no });
                }
                clauses.push(Clause { literals: std::mem::take(&mut current) });
                continue;
            }
            if value.unsigned_abs() as usize > num_vars {
                return Err(CnfError::LiteralOutOfRange { line: line_no, literal: value, num_vars });
            }
            let lit = Literal::from_dimacs(value as i32).expect("nonzero");
            if current.iter().any(|l| l.var() == lit.var()) {
                return Err(CnfError::DuplicateVariable { line: line_no, var: lit.var() });
            }
            current.push(lit);
        }
    }

    let (num_vars, declared) =
        header.ok_or(CnfError::MalformedHeader { line: last_line.max(1), reason: "missing 'p cnf' header".into() })?;
    if !current.is_empty() {
        return Err(CnfError::UnterminatedClause { line: clause_line });
    }
    if clauses.len() != declared {
        return Err(CnfError::ClauseCountMismatch { line: last_line, declared, found: clauses.len() });
    }
    CnfFormula::new(num_vars, clauses).map_err(|e| match e {
        CnfError::InvalidFormula(reason) => CnfError::MalformedHeader { line: 1, reason },
        other => other,
    })
}

fn parse_header(line: &str, line_no: usize) -> Result<(usize, usize), CnfError> {
    let bad = |reason: &str| CnfError::MalformedHeader { line: line_no, reason: reason.to_string() };
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
        return Err(bad("expected 'p cnf <n> <M>'"));
    }
    let n: usize = parts[2].parse().map_err(|_| bad("variable count is not a nonnegative integer"))?;
    let m: usize = parts[3].parse().map_err(|_| bad("clause count is not a nonnegative integer"))?;
    if n == 0 {
        return Err(bad("variable count must be positive"));
    }
    if m == 0 {
        return Err(bad("clause count must be positive"));
    }
    Ok((n, m))
}

/// Renders a formula as DIMACS with LF line endings, one clause per line.
pub fn emit_dimacs(formula: &CnfFormula) -> String {
    let mut out = format!("p cnf {} {}\n", formula.num_vars(), formula.num_clauses());
    for clause in formula.clauses() {
        for lit in clause.literals() {
            out.push_str(&lit.to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}

/// Number of clauses with no true literal.
pub fn count_defects(formula: &CnfFormula, assignment: &Assignment) -> Result<usize, CnfError> {
    if assignment.len() != formula.num_vars() {
        return Err(CnfError::AssignmentLength { expected: formula.num_vars(), got: assignment.len() });
    }
    Ok(formula.clauses().iter().filter(|c| !c.is_satisfied_by(assignment)).count())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Satisfiability {
    Sat(Assignment),
    Unsat,
}

impl Satisfiability {
    pub fn is_sat(&self) -> bool {
        matches!(self, Satisfiability::Sat(_))
    }
}

/// Exhaustive search in lexicographic order (x1 most significant, false < true).
///
/// Returns the first satisfying assignment in that order.
pub fn brute_force_solve(formula: &CnfFormula) -> Result<Satisfiability, CnfError> {
    let n = formula.num_vars();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(CnfError::TooManyVariables(n));
    }
    // Variable i lives at bit n - i so that counting up walks lexicographic order.
    let masks: Vec<(u32, u32)> = formula
        .clauses()
        .iter()
        .map(|c| {
            c.literals().iter().fold((0u32, 0u32), |(pos, neg), l| {
                let bit = 1u32 << (n - l.var());
                if l.is_positive() {
                    (pos | bit, neg)
                } else {
                    (pos, neg | bit)
                }
            })
        })
        .collect();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    for bits in 0..=full {
        let flipped = !bits & full;
        if masks.iter().all(|&(pos, neg)| bits & pos != 0 || flipped & neg != 0) {
            let values = (1..=n).map(|i| bits & (1 << (n - i)) != 0).collect();
            return Ok(Satisfiability::Sat(Assignment::new(values)));
        }
    }
    Ok(Satisfiability::Unsat)
}

/// Random k-SAT with a hidden satisfying assignment.
///
/// Draw order from the seeded stream: n plant bits, then per clause k
/// distinct variables (rejecting repeats) followed by k sign bits, the sign
/// block redrawn until the plant satisfies the clause.
pub fn generate_planted_ksat(n: usize, ratio: f64, k: usize, seed: u64) -> Result<(CnfFormula, Assignment), CnfError> {
    if k < 2 {
        return Err(CnfError::Parameter(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(CnfError::Parameter(format!("n = {n} is smaller than k = {k}")));
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(CnfError::Parameter(format!("ratio must be positive, got {ratio}")));
    }
    let m = (ratio * n as f64).round() as usize;
    if m == 0 {
        return Err(CnfError::Parameter(format!("ratio * n = {} rounds to zero clauses", ratio * n as f64)));
    }
    if n > u32::MAX as usize {
        return Err(CnfError::Parameter("n too large".into()));
    }

    let mut rng = seeded(seed);
    let plant = Assignment::new((0..n).map(|_| coin(&mut rng)).collect());
    let mut clauses = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(k);
    for _ in 0..m {
        vars.clear();
        while vars.len() < k {
            let v = bounded(&mut rng, n as u32) as usize + 1;
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        let literals = loop {
            let lits: Vec<Literal> = vars.iter().map(|&v| Literal::new(v, coin(&mut rng))).collect();
            if lits.iter().any(|l| l.is_true_under(&plant)) {
                break lits;
            }
        };
        clauses.push(Clause { literals });
    }
    Ok((CnfFormula::new(n, clauses)?, plant))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(n: usize, clauses: &[&[i32]]) -> CnfFormula {
        CnfFormula::from_dimacs_clauses(n, clauses).unwrap()
    }

    #[test]
    fn parses_minimal_instance() {
        let f = parse_dimacs("p cnf 2 1\n1 -2 0").unwrap();
        assert_eq!(f, formula(2, &[&[1, -2]]));
    }

    #[test]
    fn skips_comments() {
        let f = parse_dimacs("c comment\np cnf 1 1\n1 0").unwrap();
        assert_eq!(f, formula(1, &[&[1]]));
    }

    #[test]
    fn clauses_may_span_lines() {
        let f = parse_dimacs("p cnf 3 2\n1 -2\n3 0 -1\n 0\n").unwrap();
        assert_eq!(f, formula(3, &[&[1, -2, 3], &[-1]]));
    }

    #[test]
    fn literal_out_of_range_names_line() {
        let err = parse_dimacs("p cnf 1 1\n2 0").unwrap_err();
        assert_eq!(err, CnfError::LiteralOutOfRange { line: 2, literal: 2, num_vars: 1 });
        assert!(err.to_string().contains("literal index exceeds n"));
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert!(matches!(parse_dimacs("p cnf x 1\n1 0"), Err(CnfError::MalformedHeader { line: 1, .. })));
        assert!(matches!(parse_dimacs("p dnf 1 1\n1 0"), Err(CnfError::MalformedHeader { line: 1, .. })));
        assert!(matches!(parse_dimacs("1 0\n"), Err(CnfError::MissingHeader { line: 1 })));
        assert!(matches!(parse_dimacs("c only\n"), Err(CnfError::MalformedHeader { .. })));
        assert!(matches!(
            parse_dimacs("p cnf 2 2\n1 0\n"),
            Err(CnfError::ClauseCountMismatch { declared: 2, found: 1, .. })
        ));
        assert!(matches!(parse_dimacs("p cnf 2 2\n1 0\n0\n"), Err(CnfError::EmptyClause { line: 3 })));
        assert!(matches!(parse_dimacs("p cnf 2 1\n1 1 0"), Err(CnfError::DuplicateVariable { line: 2, var: 1 })));
        assert!(matches!(parse_dimacs("p cnf 2 1\n1 -1 0"), Err(CnfError::DuplicateVariable { .. })));
        assert!(matches!(parse_dimacs("p cnf 2 1\n1 2"), Err(CnfError::UnterminatedClause { line: 2 })));
        assert!(matches!(parse_dimacs("p cnf 2 1\n1 a 0"), Err(CnfError::InvalidToken { line: 2, .. })));
    }

    #[test]
    fn emits_expected_text() {
        assert_eq!(emit_dimacs(&formula(2, &[&[1, -2]])), "p cnf 2 1\n1 -2 0\n");
        assert_eq!(emit_dimacs(&formula(1, &[&[1]])), "p cnf 1 1\n1 0\n");
    }

    #[test]
    fn defect_counts() {
        let contradiction = formula(1, &[&[1], &[-1]]);
        assert_eq!(count_defects(&contradiction, &vec![true].into()).unwrap(), 1);
        let or = formula(2, &[&[1, 2]]);
        assert_eq!(count_defects(&or, &vec![true, false].into()).unwrap(), 0);
        assert_eq!(
            count_defects(&formula(1, &[&[1]]), &Assignment::new(vec![])),
            Err(CnfError::AssignmentLength { expected: 1, got: 0 })
        );
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_solve(&formula(1, &[&[1], &[-1]])).unwrap(), Satisfiability::Unsat);
        // 00 fails, 01 is the first satisfying assignment.
        assert_eq!(brute_force_solve(&formula(2, &[&[1, 2]])).unwrap(), Satisfiability::Sat(vec![false, true].into()));
        assert_eq!(brute_force_solve(&formula(1, &[&[1]])).unwrap(), Satisfiability::Sat(vec![true].into()));
    }

    #[test]
    fn brute_force_refuses_large_n() {
        let f = formula(25, &[&[25]]);
        assert_eq!(brute_force_solve(&f), Err(CnfError::TooManyVariables(25)));
        assert!(brute_force_solve(&formula(24, &[&[24], &[-1]])).unwrap().is_sat());
    }

    #[test]
    fn planted_generator_contract() {
        let (f, plant) = generate_planted_ksat(20, 4.25, 3, 7).unwrap();
        assert_eq!(f.num_clauses(), 85);
        assert_eq!(count_defects(&f, &plant).unwrap(), 0);
        let (g, _) = generate_planted_ksat(20, 4.25, 3, 7).unwrap();
        assert_eq!(emit_dimacs(&f), emit_dimacs(&g));
        assert!(matches!(generate_planted_ksat(2, 1.0, 3, 1), Err(CnfError::Parameter(_))));
        assert!(f.clauses().iter().all(|c| c.len() == 3));
    }

    #[test]
    fn v_line_format() {
        assert_eq!(Assignment::new(vec![true, false, true]).to_v_line(), "v 1 -2 3 0");
    }
}
