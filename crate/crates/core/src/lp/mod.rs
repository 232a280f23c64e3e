//! Linear programs of the form `max c'x  s.t.  Ax <= b, 0 <= x <= u` with
//! `b >= 0`, and the solver interface used by flow matching.

mod lu;
mod simplex;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use simplex::{PivotRule, Simplex};

/// One `<=` constraint row in sparse form.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    /// Per-variable upper bound, `f64::INFINITY` for none.
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    /// Optional variable names for dumps.
    pub names: Vec<String>,
}

/// Where a variable (or a row's slack) sits in a basic solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarStatus {
    #[default]
    Lower,
    Upper,
    Basic,
}

/// Status of every variable and of every row's slack; returned with a
/// solution and accepted back as a starting point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Basis {
    pub cols: Vec<VarStatus>,
    pub rows: Vec<VarStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Basis,
}

/// Anything that can solve a [`LinearProgram`] to optimality.
pub trait LpSolver: Send + Sync {
    /// Solves starting from `start` when given; a start that does not fit
    /// the program is ignored.
    fn solve_from(&self, lp: &LinearProgram, start: Option<&Basis>) -> Result<Solution>;

    fn solve(&self, lp: &LinearProgram) -> Result<Solution> {
        self.solve_from(lp, None)
    }
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "{} upper bounds for {n} variables",
                self.upper.len()
            )));
        }
        if !self.names.is_empty() && self.names.len() != n {
            return Err(Error::Dimension(format!("{} names for {n} variables", self.names.len())));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("non-finite objective coefficient".into()));
        }
        if self.upper.iter().any(|&u| !(u >= 0.0)) {
            return Err(Error::Lp("negative or NaN upper bound".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !(row.rhs >= 0.0) || !row.rhs.is_finite() {
                return Err(Error::Lp(format!("row {r}: right-hand side {} must be finite and >= 0", row.rhs)));
            }
            for &(j, a) in &row.coefs {
                if j >= n {
                    return Err(Error::Dimension(format!("row {r} references variable {j} of {n}")));
                }
                if !a.is_finite() {
                    return Err(Error::Lp(format!("row {r}: non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound, relative to the row's scale
    /// `max(|rhs|, sum |a_j x_j|, 1)`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(-v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let mut lhs = 0.0;
            let mut mag = row.rhs.abs();
            for &(j, a) in &row.coefs {
                lhs += a * x[j];
                mag += (a * x[j]).abs();
            }
            worst = worst.max((lhs - row.rhs) / mag.max(1.0));
        }
        worst
    }

    /// CPLEX LP text format, readable by most external solvers.
    pub fn to_lp_format(&self) -> String {
        let name = |j: usize| {
            self.names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("x{j}"))
        };
        let mut s = String::from("\\ flow-matching LP\nMaximize\n obj:");
        let mut any = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(s, " {} {:e} {}", if c < 0.0 { '-' } else { '+' }, c.abs(), name(j));
                any = true;
            }
        }
        if !any {
            s.push_str(" 0 x0");
        }
        s.push_str("\nSubject To\n");
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{r}:");
            for &(j, a) in &row.coefs {
                let _ = write!(s, " {} {:e} {}", if a < 0.0 { '-' } else { '+' }, a.abs(), name(j));
            }
            if row.coefs.is_empty() {
                s.push_str(" 0 x0");
            }
            let _ = writeln!(s, " <= {:e}", row.rhs);
        }
        s.push_str("Bounds\n");
        for (j, &u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                let _ = writeln!(s, " 0 <= {} <= {:e}", name(j), u);
            } else {
                let _ = writeln!(s, " {} >= 0", name(j));
            }
        }
        s.push_str("End\n");
        s
    }
}
