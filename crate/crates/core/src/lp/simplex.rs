//! Bounded-variable primal revised simplex over a sparse LU factorization
//! with product-form updates.
//!
//! Every row is `<=` with a non-negative right-hand side, so the all-slack
//! basis is always feasible. A starting basis from a related program may be
//! infeasible; the solve then minimizes the total bound violation first and
//! falls back to the all-slack start if that gets stuck. Pricing is Dantzig's
//! rule over partial scans of the columns; after a run of degenerate pivots
//! the solve switches to Bland's rule for good, which rules out cycling.

use super::lu::Lu;
use super::{Basis, LinearProgram, LpSolver, Solution, VarStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Largest reduced cost within a partial scan, falling back to Bland on
    /// degenerate stalls.
    Dantzig,
    /// Lowest-index entering and leaving variables throughout.
    Bland,
}

#[derive(Debug, Clone)]
pub struct Simplex {
    pub rule: PivotRule,
    /// Consecutive degenerate pivots tolerated before switching to Bland.
    pub degenerate_limit: usize,
    /// Number of basis updates between fresh factorizations.
    pub refactor_every: usize,
    /// Hard cap; `None` means `50 * (rows + cols) + 1000`.
    pub max_iterations: Option<usize>,
}

impl Default for Simplex {
    fn default() -> Self {
        Self {
            rule: PivotRule::Dantzig,
            degenerate_limit: 50,
            refactor_every: 100,
            max_iterations: None,
        }
    }
}

impl LpSolver for Simplex {
    fn solve_from(&self, lp: &LinearProgram, start: Option<&Basis>) -> Result<Solution> {
        lp.validate()?;
        let reduced = Reduced::new(lp);
        let start = start.filter(|b| b.cols.len() == lp.num_vars() && b.rows.len() == lp.rows.len());
        match start {
            Some(b) => match self.attempt(lp, &reduced, Some(b)) {
                Ok(sol) => Ok(sol),
                Err(e) => {
                    log::debug!("warm start abandoned: {e}");
                    self.attempt(lp, &reduced, None)
                }
            },
            None => self.attempt(lp, &reduced, None),
        }
    }
}

impl Simplex {
    fn attempt(&self, lp: &LinearProgram, reduced: &Reduced, start: Option<&Basis>) -> Result<Solution> {
        let mut basis = Basis {
            cols: vec![VarStatus::Lower; lp.num_vars()],
            rows: vec![VarStatus::Basic; lp.rows.len()],
        };
        let mut x = vec![0.0; lp.num_vars()];
        let mut iterations = 0;
        if !reduced.cols.is_empty() {
            let hint = start.map(|b| {
                let cols: Vec<u8> = reduced.cols.iter().map(|&j| code(b.cols[j])).collect();
                let rows: Vec<u8> = reduced.rows.iter().map(|&i| code(b.rows[i])).collect();
                (cols, rows)
            });
            let mut state = State::new(reduced, self, hint.as_ref().map(|(c, r)| (&c[..], &r[..])))?;
            state.run()?;
            iterations = state.iterations;
            for (k, &j) in reduced.cols.iter().enumerate() {
                x[j] = state.x[k].clamp(0.0, lp.upper[j]);
                basis.cols[j] = status(state.status[k]);
            }
            for (r, &i) in reduced.rows.iter().enumerate() {
                basis.rows[i] = status(state.status[state.n + r]);
            }
        }
        let viol = lp.max_violation(&x);
        if viol > 1e-7 {
            return Err(Error::Lp(format!("solution violates constraints by {viol:e}")));
        }
        Ok(Solution {
            objective: lp.objective_value(&x),
            x,
            iterations,
            basis,
        })
    }
}

/// The LP after trivial reductions, row scaling and conversion to columns.
struct Reduced {
    /// Original index of each kept variable.
    cols: Vec<usize>,
    /// Original index of each kept row.
    rows: Vec<usize>,
    cost: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
}

impl Reduced {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut upper = lp.upper.clone();
        // rows with two or more nonzeros stay rows; singletons become bounds
        let mut multi = Vec::with_capacity(lp.rows.len());
        let mut has_neg = vec![false; n];
        for (i, row) in lp.rows.iter().enumerate() {
            let mut nz = row.coefs.iter().filter(|&&(_, a)| a != 0.0);
            let Some(&(j, a)) = nz.next() else { continue };
            if nz.next().is_none() {
                // a x <= b with a < 0 and b >= 0 always holds
                if a > 0.0 {
                    upper[j] = upper[j].min(row.rhs / a);
                }
                continue;
            }
            multi.push(i);
            for &(j, a) in &row.coefs {
                has_neg[j] |= a < 0.0;
            }
        }
        // a variable with no benefit and no negative coefficient stays at 0
        let keep: Vec<usize> = (0..n)
            .filter(|&j| upper[j] > 0.0 && (lp.objective[j] > 0.0 || has_neg[j]))
            .collect();
        let mut new_idx = vec![usize::MAX; n];
        for (k, &j) in keep.iter().enumerate() {
            new_idx[j] = k;
        }

        let kept = |i: usize| {
            lp.rows[i]
                .coefs
                .iter()
                .filter(|&&(j, a)| a != 0.0 && new_idx[j] != usize::MAX)
        };
        let mut counts = vec![0usize; keep.len() + 1];
        let mut rhs = Vec::with_capacity(multi.len());
        let mut kept_rows = Vec::with_capacity(multi.len());
        let mut scales = Vec::with_capacity(multi.len());
        for &i in &multi {
            let scale = kept(i).fold(0.0f64, |m, &(_, a)| m.max(a.abs()));
            if scale == 0.0 {
                continue;
            }
            for &(j, _) in kept(i) {
                counts[new_idx[j] + 1] += 1;
            }
            rhs.push(lp.rows[i].rhs / scale);
            kept_rows.push(i);
            scales.push(scale);
        }
        for k in 0..keep.len() {
            counts[k + 1] += counts[k];
        }
        let nnz = counts[keep.len()];
        let col_start = counts.clone();
        let mut fill = counts;
        let mut col_row = vec![0; nnz];
        let mut col_val = vec![0.0; nnz];
        // rows are visited in increasing order so each column stays sorted
        for (r, (&i, &scale)) in kept_rows.iter().zip(&scales).enumerate() {
            for &(j, a) in kept(i) {
                let k = new_idx[j];
                col_row[fill[k]] = r;
                col_val[fill[k]] = a / scale;
                fill[k] += 1;
            }
        }
        Self {
            cost: keep.iter().map(|&j| lp.objective[j]).collect(),
            upper: keep.iter().map(|&j| upper[j]).collect(),
            cols: keep,
            rows: kept_rows,
            rhs,
            col_start,
            col_row,
            col_val,
        }
    }
}

const BASIC: u8 = 0;
const LOWER: u8 = 1;
const UPPER: u8 = 2;

fn code(s: VarStatus) -> u8 {
    match s {
        VarStatus::Basic => BASIC,
        VarStatus::Lower => LOWER,
        VarStatus::Upper => UPPER,
    }
}

fn status(c: u8) -> VarStatus {
    match c {
        BASIC => VarStatus::Basic,
        UPPER => VarStatus::Upper,
        _ => VarStatus::Lower,
    }
}

/// Column `pos` of the basis replaced by the ftran'd entering column.
struct Eta {
    pos: usize,
    pivot: f64,
    rest: Vec<(usize, f64)>,
}

struct State<'a> {
    lp: &'a Reduced,
    opts: &'a Simplex,
    n: usize,
    m: usize,
    /// Values of structurals then slacks.
    x: Vec<f64>,
    status: Vec<u8>,
    /// Variable at each basis position.
    head: Vec<usize>,
    lu: Lu,
    etas: Vec<Eta>,
    bland: bool,
    /// Where the next partial pricing scan starts.
    cursor: usize,
    iterations: usize,
    dtol: f64,
    ftol: f64,
    // scratch
    col: Vec<f64>,
    cb: Vec<f64>,
    y: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(lp: &'a Reduced, opts: &'a Simplex, hint: Option<(&[u8], &[u8])>) -> Result<Self> {
        let n = lp.cols.len();
        let m = lp.rhs.len();
        let mut status = vec![LOWER; n + m];
        match hint {
            Some((cols, rows)) => {
                status[..n].copy_from_slice(cols);
                status[n..].copy_from_slice(rows);
                for k in 0..n {
                    if status[k] == UPPER && !lp.upper[k].is_finite() {
                        status[k] = LOWER;
                    }
                }
                for s in &mut status[n..] {
                    if *s == UPPER {
                        *s = LOWER;
                    }
                }
            }
            None => status[n..].iter_mut().for_each(|s| *s = BASIC),
        }
        // exactly m basic variables: trim slacks first, then pad with slacks
        let mut head: Vec<usize> = (0..n + m).filter(|&k| status[k] == BASIC).collect();
        while head.len() > m {
            let k = head.pop().expect("non-empty");
            status[k] = LOWER;
        }
        let mut r = 0;
        while head.len() < m {
            if status[n + r] != BASIC {
                status[n + r] = BASIC;
                head.push(n + r);
            }
            r += 1;
        }
        let cmax = lp.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let bmax = lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut state = Self {
            lp,
            opts,
            n,
            m,
            x: vec![0.0; n + m],
            status,
            head,
            lu: Lu::factor(0, &[]).0,
            etas: Vec::new(),
            bland: opts.rule == PivotRule::Bland,
            cursor: 0,
            iterations: 0,
            dtol: 1e-9 * cmax,
            ftol: 1e-9 * (1.0 + bmax),
            col: vec![0.0; m],
            cb: vec![0.0; m],
            y: vec![0.0; m],
            alpha: vec![0.0; m],
        };
        for k in 0..n {
            if state.status[k] == UPPER {
                state.x[k] = lp.upper[k];
            }
        }
        state.refactor()?;
        Ok(state)
    }

    fn upper(&self, k: usize) -> f64 {
        if k < self.n {
            self.lp.upper[k]
        } else {
            f64::INFINITY
        }
    }

    fn cost(&self, k: usize) -> f64 {
        if k < self.n {
            self.lp.cost[k]
        } else {
            0.0
        }
    }

    fn column(&self, k: usize) -> Vec<(usize, f64)> {
        if k < self.n {
            (self.lp.col_start[k]..self.lp.col_start[k + 1])
                .map(|p| (self.lp.col_row[p], self.lp.col_val[p]))
                .collect()
        } else {
            vec![(k - self.n, 1.0)]
        }
    }

    /// `B^{-1} a_k` into `self.alpha`.
    fn ftran_column(&mut self, k: usize) {
        self.col.iter_mut().for_each(|v| *v = 0.0);
        if k < self.n {
            for p in self.lp.col_start[k]..self.lp.col_start[k + 1] {
                self.col[self.lp.col_row[p]] = self.lp.col_val[p];
            }
        } else {
            self.col[k - self.n] = 1.0;
        }
        self.lu.ftran(&mut self.col, &mut self.alpha);
        apply_etas(&self.etas, &mut self.alpha);
    }

    /// Duals `y` for basic costs in `self.cb` (clobbered).
    fn btran(&mut self) {
        for eta in self.etas.iter().rev() {
            let mut s = self.cb[eta.pos];
            for &(i, v) in &eta.rest {
                s -= v * self.cb[i];
            }
            self.cb[eta.pos] = s / eta.pivot;
        }
        self.lu.btran(&mut self.cb, &mut self.y);
    }

    fn push_eta(&mut self, pos: usize) {
        let rest = self
            .alpha
            .iter()
            .enumerate()
            .filter(|&(i, &v)| i != pos && v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        self.etas.push(Eta {
            pos,
            pivot: self.alpha[pos],
            rest,
        });
    }

    /// Fresh factorization of the current basis; dependent columns are
    /// swapped for slacks. Basic values are recomputed from scratch.
    fn refactor(&mut self) -> Result<()> {
        let cols: Vec<_> = self.head.iter().map(|&k| self.column(k)).collect();
        let (lu, replaced) = Lu::factor(self.m, &cols);
        for (pos, row) in replaced {
            let old = self.head[pos];
            self.status[old] = LOWER;
            self.x[old] = 0.0;
            let slack = self.n + row;
            if self.status[slack] == BASIC {
                return Err(Error::Lp("basis repair picked a basic slack".into()));
            }
            self.status[slack] = BASIC;
            self.head[pos] = slack;
        }
        self.lu = lu;
        self.etas.clear();
        self.recompute_basics();
        Ok(())
    }

    fn recompute_basics(&mut self) {
        self.col.copy_from_slice(&self.lp.rhs);
        for k in 0..self.n {
            if self.status[k] == UPPER {
                let u = self.lp.upper[k];
                for p in self.lp.col_start[k]..self.lp.col_start[k + 1] {
                    self.col[self.lp.col_row[p]] -= self.lp.col_val[p] * u;
                }
            }
        }
        self.lu.ftran(&mut self.col, &mut self.alpha);
        for (p, &k) in self.head.iter().enumerate() {
            self.x[k] = self.alpha[p];
        }
    }

    fn limit(&self) -> usize {
        self.opts
            .max_iterations
            .unwrap_or(50 * (self.n + self.m) + 1000)
    }

    /// Sign of the bound violation of basic variable `k`: +1 below zero,
    /// -1 above its upper bound.
    fn violation(&self, k: usize) -> f64 {
        let v = self.x[k];
        if v < -self.ftol {
            1.0
        } else if v > self.upper(k) + self.ftol {
            -1.0
        } else {
            0.0
        }
    }

    /// Entering variable for phase one (total violation) or phase two.
    fn price(&mut self, phase_one: bool) -> Option<usize> {
        for p in 0..self.m {
            let k = self.head[p];
            self.cb[p] = if phase_one { self.violation(k) } else { self.cost(k) };
        }
        self.btran();
        let tol = if phase_one { 1e-9 } else { self.dtol };
        let total = self.n + self.m;
        if self.bland {
            return (0..total).find(|&k| self.gain(k, phase_one) > tol);
        }
        // partial pricing: scan chunks from where the last scan stopped and
        // take the best candidate of the first chunk that has one
        let chunk = (total / 8).max(64);
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        let mut k = self.cursor % total;
        while scanned < total {
            let g = self.gain(k, phase_one);
            if g > tol && best.is_none_or(|(_, b)| g > b) {
                best = Some((k, g));
            }
            scanned += 1;
            k = if k + 1 == total { 0 } else { k + 1 };
            if best.is_some() && scanned % chunk == 0 {
                break;
            }
        }
        self.cursor = k;
        best.map(|(k, _)| k)
    }

    /// Objective improvement per unit move of nonbasic `k` away from its
    /// bound, given the duals in `self.y`.
    fn gain(&self, k: usize, phase_one: bool) -> f64 {
        let st = self.status[k];
        if st == BASIC {
            return 0.0;
        }
        let d = if k < self.n {
            let mut d = if phase_one { 0.0 } else { self.lp.cost[k] };
            for p in self.lp.col_start[k]..self.lp.col_start[k + 1] {
                d -= self.y[self.lp.col_row[p]] * self.lp.col_val[p];
            }
            d
        } else {
            -self.y[k - self.n]
        };
        if st == LOWER {
            d
        } else {
            -d
        }
    }

    /// Step length at which the basic variable at `p` hits a bound when it
    /// decreases at rate `a`, and whether that bound is its upper one.
    /// Variables outside their bounds only block once they reach the bound
    /// they violate.
    fn ratio(&self, p: usize, a: f64, ptol: f64) -> Option<(f64, bool)> {
        let h = self.head[p];
        let v = self.x[h];
        let u = self.upper(h);
        if a > ptol {
            if v > u + self.ftol {
                Some(((v - u) / a, true))
            } else if v < -self.ftol {
                None
            } else {
                Some((v.max(0.0) / a, false))
            }
        } else if a < -ptol {
            if v < -self.ftol {
                Some((-v / -a, false))
            } else if v > u + self.ftol || !u.is_finite() {
                None
            } else {
                Some(((u - v).max(0.0) / -a, true))
            }
        } else {
            None
        }
    }

    fn run(&mut self) -> Result<()> {
        let limit = self.limit();
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= limit {
                return Err(Error::Lp(format!("iteration limit {limit} reached")));
            }
            let phase_one = self.head.iter().any(|&k| self.violation(k) != 0.0);
            let Some(k) = self.price(phase_one) else {
                if phase_one {
                    return Err(Error::Lp("no feasible basis reachable from the start".into()));
                }
                return Ok(());
            };
            self.iterations += 1;
            self.ftran_column(k);
            let dir = if self.status[k] == LOWER { 1.0 } else { -1.0 };

            let amax = self.alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let ptol = (1e-9 * amax).max(1e-12);
            // first pass: smallest ratio
            let mut theta = self.upper(k);
            let mut leave = usize::MAX;
            for p in 0..self.m {
                if let Some((r, _)) = self.ratio(p, self.alpha[p] * dir, ptol) {
                    if r < theta {
                        theta = r;
                        leave = p;
                    }
                }
            }
            if !theta.is_finite() {
                return Err(Error::Lp("unbounded".into()));
            }
            // second pass: among near-ties pick a stable (or, under Bland,
            // lowest-index) leaving variable
            let mut to_upper = false;
            if leave != usize::MAX {
                let slack = 1e-12 * (1.0 + theta);
                let mut pick = leave;
                for p in 0..self.m {
                    if let Some((r, _)) = self.ratio(p, self.alpha[p] * dir, ptol) {
                        if r <= theta + slack {
                            let better = if self.bland {
                                self.head[p] < self.head[pick]
                            } else {
                                self.alpha[p].abs() > self.alpha[pick].abs()
                            };
                            if better {
                                pick = p;
                            }
                        }
                    }
                }
                leave = pick;
                to_upper = self
                    .ratio(leave, self.alpha[leave] * dir, ptol)
                    .is_some_and(|(_, up)| up);
            }

            for p in 0..self.m {
                let a = self.alpha[p];
                if a != 0.0 {
                    let h = self.head[p];
                    self.x[h] -= theta * dir * a;
                }
            }
            if leave == usize::MAX {
                // bound flip, basis unchanged
                if dir > 0.0 {
                    self.x[k] = self.upper(k);
                    self.status[k] = UPPER;
                } else {
                    self.x[k] = 0.0;
                    self.status[k] = LOWER;
                }
                degenerate = 0;
                continue;
            }
            let out = self.head[leave];
            if to_upper {
                self.x[out] = self.upper(out);
                self.status[out] = UPPER;
            } else {
                self.x[out] = 0.0;
                self.status[out] = LOWER;
            }
            self.x[k] += dir * theta;
            self.status[k] = BASIC;
            self.head[leave] = k;
            self.push_eta(leave);

            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > self.opts.degenerate_limit {
                    self.bland = true;
                }
            } else {
                degenerate = 0;
            }
            if self.etas.len() >= self.opts.refactor_every {
                self.refactor()?;
            }
        }
    }
}

fn apply_etas(etas: &[Eta], d: &mut [f64]) {
    for eta in etas {
        let dp = d[eta.pos];
        if dp == 0.0 {
            continue;
        }
        let dp = dp / eta.pivot;
        d[eta.pos] = dp;
        for &(i, v) in &eta.rest {
            d[i] -= v * dp;
        }
    }
}
