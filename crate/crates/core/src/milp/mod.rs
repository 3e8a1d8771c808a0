//! Mixed-integer model of a ReLU network plus fairness constraints, and a
//! branch-and-bound solver for it.

mod bnb;
mod encode;

use std::fmt::Write as _;

pub use bnb::{bnb_solve, bnb_solve_with_stats, ABS_GAP, BnbOutcome, BnbStats, Limits, MilpSolution, SolutionPool, SolveMode};
pub use encode::{
    add_exact_flip_constraint, add_fairness_ce_constraints, add_flip_constraint, add_no_good_cut, encode_network, encode_network_with,
    fix_prefix, query_bounds, GroupChoice, NetworkEncoding, SensitiveGroup, EPS_STRICT, ONE_HOT_GRID_LIMIT,
};

pub use crate::lp::{Direction, Sense};

/// Tolerance for treating an LP value as integral.
pub const INT_TOL: f64 = 1e-6;
/// Tolerance for accepting a candidate solution against the model rows.
pub const CHECK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

/// Why a constraint exists; the solver uses this to decide which shortcuts
/// are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Network,
    OneHot,
    Tie,
    Prefix,
    Flip,
    NoGood,
    User,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub role: Role,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }

    /// Activity range over a box.
    pub fn activity_range(&self, lower: &[f64], upper: &[f64]) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0, 0.0);
        for &(j, c) in &self.coeffs {
            if c >= 0.0 {
                lo += c * lower[j];
                hi += c * upper[j];
            } else {
                lo += c * upper[j];
                hi += c * lower[j];
            }
        }
        (lo, hi)
    }

    /// Whether no point of the box can satisfy the row.
    pub fn impossible_on(&self, lower: &[f64], upper: &[f64], tol: f64) -> bool {
        let (lo, hi) = self.activity_range(lower, upper);
        match self.sense {
            Sense::Le => lo > self.rhs + tol,
            Sense::Ge => hi < self.rhs - tol,
            Sense::Eq => lo > self.rhs + tol || hi < self.rhs - tol,
        }
    }

    /// Whether every point of the box satisfies the row.
    pub fn implied_on(&self, lower: &[f64], upper: &[f64]) -> bool {
        let (lo, hi) = self.activity_range(lower, upper);
        match self.sense {
            Sense::Le => hi <= self.rhs,
            Sense::Ge => lo >= self.rhs,
            Sense::Eq => lo == self.rhs && hi == self.rhs,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Sparse linear objective.
    pub objective: Vec<(usize, f64)>,
    pub direction: Option<Direction>,
    pub encoding: Option<NetworkEncoding>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> usize {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.vars.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64, role: Role) {
        self.constraints.push(Constraint {
            coeffs,
            sense,
            rhs,
            role,
        });
    }

    pub fn set_objective(&mut self, coeffs: Vec<(usize, f64)>, direction: Direction) {
        self.objective = coeffs;
        self.direction = Some(direction);
    }

    pub fn is_integer(&self, j: usize) -> bool {
        self.vars[j].kind != VarKind::Continuous
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Largest violation of bounds, integrality or rows. Flip rows are held
    /// to zero tolerance by [`MilpModel::is_feasible`], so they are reported
    /// separately there.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xj) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xj).max(xj - v.upper);
            if v.kind != VarKind::Continuous {
                worst = worst.max((xj - xj.round()).abs());
            }
        }
        self.constraints.iter().fold(worst, |w, c| w.max(c.violation(x)))
    }

    /// Whether `x` satisfies the model: rows within `CHECK_TOL`, flip rows exactly.
    pub fn is_feasible(&self, x: &[f64]) -> bool {
        if x.len() != self.vars.len() {
            return false;
        }
        for (v, &xj) in self.vars.iter().zip(x) {
            if xj < v.lower - CHECK_TOL || xj > v.upper + CHECK_TOL {
                return false;
            }
            if v.kind != VarKind::Continuous && (xj - xj.round()).abs() > INT_TOL {
                return false;
            }
        }
        self.constraints.iter().all(|c| {
            let tol = if c.role == Role::Flip { 0.0 } else { CHECK_TOL };
            c.violation(x) <= tol
        })
    }

    /// LP-format text of the model, one constraint per line.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let term_list = |coeffs: &[(usize, f64)]| -> String {
            if coeffs.is_empty() {
                return "0".into();
            }
            coeffs
                .iter()
                .enumerate()
                .map(|(n, &(j, c))| {
                    let sign = if c < 0.0 { "-" } else if n > 0 { "+" } else { "" };
                    format!("{sign}{} {}", fmt_num(c.abs()), self.vars[j].name)
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let dir = match self.direction {
            Some(Direction::Maximize) => "Maximize",
            _ => "Minimize",
        };
        let _ = writeln!(out, "{dir}\n obj: {}", term_list(&self.objective));
        let _ = writeln!(out, "Subject To");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " c{i}: {} {op} {}", term_list(&c.coeffs), fmt_num(c.rhs));
        }
        let _ = writeln!(out, "Bounds");
        for v in &self.vars {
            if v.kind != VarKind::Binary {
                let _ = writeln!(out, " {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper));
            } else if v.lower == v.upper {
                let _ = writeln!(out, " {} = {}", v.name, fmt_num(v.lower));
            }
        }
        for (title, kind) in [("Binaries", VarKind::Binary), ("Generals", VarKind::Integer)] {
            let names: Vec<&str> = self.vars.iter().filter(|v| v.kind == kind).map(|v| v.name.as_str()).collect();
            if !names.is_empty() {
                let _ = writeln!(out, "{title}\n {}", names.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_ranges() {
        let c = Constraint {
            coeffs: vec![(0, 1.0), (1, -2.0)],
            sense: Sense::Le,
            rhs: 0.0,
            role: Role::User,
        };
        assert_eq!(c.activity_range(&[0.0, 0.0], &[1.0, 1.0]), (-2.0, 1.0));
        assert!(!c.impossible_on(&[0.0, 0.0], &[1.0, 1.0], 0.0));
        assert!(c.impossible_on(&[1.0, 0.0], &[1.0, 0.25], 0.0));
        assert!(c.implied_on(&[0.0, 0.5], &[1.0, 1.0]));
    }

    #[test]
    fn lp_dump_lists_every_row() {
        let mut m = MilpModel::new();
        let x = m.add_var("z_0_0", VarKind::Continuous, 0.0, 1.0);
        let d = m.add_var("delta_1_0", VarKind::Binary, 0.0, 1.0);
        m.add_constraint(vec![(x, 1.0), (d, -1.0)], Sense::Le, 0.0, Role::User);
        m.add_constraint(vec![(x, 1.0)], Sense::Ge, 0.5, Role::User);
        m.set_objective(vec![(x, 1.0)], Direction::Maximize);
        let text = m.to_lp_format();
        assert!(text.starts_with("Maximize\n obj: 1 z_0_0\n"));
        assert!(text.contains(" c0: 1 z_0_0 -1 delta_1_0 <= 0\n"));
        assert!(text.contains(" c1: 1 z_0_0 >= 0.5\n"));
        assert!(text.contains("Binaries\n delta_1_0\n"));
        assert!(text.ends_with("End\n"));
    }
}
