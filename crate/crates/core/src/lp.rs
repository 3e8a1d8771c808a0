//! Dense bounded-variable primal simplex.
//!
//! Every constraint row `a·x (<=|=|>=) b` becomes `a·x - r = 0` with a row
//! variable `r` bounded by the right-hand side, so all rows are homogeneous
//! and bounds carry the data. Phase 1 adds one artificial per row whose row
//! variable starts out of bounds. Pricing is Dantzig, switching to Bland's
//! rule after a run of degenerate pivots; the ratio test is Harris' two-pass
//! variant.

use crate::error::{Error, Result};

/// Feasibility tolerance on returned primal values.
pub const FEAS_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const HARRIS_TOL: f64 = 1e-9;
const FIXED_TOL: f64 = 1e-12;
const DEGENERATE_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<LpConstraint>,
    /// Dense objective coefficients, one per variable.
    pub objective: Vec<f64>,
    pub direction: Direction,
}

impl LpProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, direction: Direction) -> Self {
        let n = lower.len();
        Self {
            lower,
            upper,
            constraints: Vec::new(),
            objective: vec![0.0; n],
            direction,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(LpConstraint { coeffs, sense, rhs });
    }

    /// Largest violation of any bound or constraint by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for c in &self.constraints {
            let act: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match c.sense {
                Sense::Le => act - c.rhs,
                Sense::Ge => c.rhs - act,
                Sense::Eq => (act - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective in the problem's own direction; NaN when infeasible.
    pub objective: f64,
    /// Primal assignment (empty when infeasible).
    pub x: Vec<f64>,
    /// Optimal phase-1 sum of infeasibilities; positive certifies infeasibility.
    pub infeasibility: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn infeasible(infeasibility: f64, iterations: usize) -> Self {
        Self {
            status: LpStatus::Infeasible,
            objective: f64::NAN,
            x: Vec::new(),
            infeasibility,
            iterations,
        }
    }
}

pub fn lp_solve(p: &LpProblem) -> Result<LpSolution> {
    let n = p.num_vars();
    if p.upper.len() != n || p.objective.len() != n {
        return Err(Error::Lp("bound/objective vectors disagree with variable count".into()));
    }
    for j in 0..n {
        if !p.lower[j].is_finite() || !p.upper[j].is_finite() {
            return Err(Error::Lp(format!("variable {j} is not box-bounded")));
        }
        if p.lower[j] > p.upper[j] + FIXED_TOL {
            return Ok(LpSolution::infeasible(p.lower[j] - p.upper[j], 0));
        }
    }

    // Fixed-variable elimination.
    let mut col_of = vec![usize::MAX; n];
    let mut free = Vec::new();
    for j in 0..n {
        if p.upper[j] - p.lower[j] > FIXED_TOL {
            col_of[j] = free.len();
            free.push(j);
        }
    }
    let fixed_value = |j: usize| p.lower[j];

    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        let mut constant = 0.0;
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(c.coeffs.len());
        for &(j, a) in &c.coeffs {
            if j >= n {
                return Err(Error::Lp(format!("constraint references variable {j} >= {n}")));
            }
            if a == 0.0 {
                continue;
            }
            if col_of[j] == usize::MAX {
                constant += a * fixed_value(j);
            } else {
                coeffs.push((col_of[j], a));
            }
        }
        let rhs = c.rhs - constant;
        let (lo, hi) = match c.sense {
            Sense::Le => (f64::NEG_INFINITY, rhs),
            Sense::Ge => (rhs, f64::INFINITY),
            Sense::Eq => (rhs, rhs),
        };
        if coeffs.is_empty() {
            let viol = (lo - 0.0).max(0.0 - hi);
            if viol > FEAS_TOL {
                return Ok(LpSolution::infeasible(viol, 0));
            }
            continue;
        }
        rows.push((coeffs, lo, hi));
    }

    let sign = match p.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let cost: Vec<f64> = free.iter().map(|&j| sign * p.objective[j]).collect();
    let lower: Vec<f64> = free.iter().map(|&j| p.lower[j]).collect();
    let upper: Vec<f64> = free.iter().map(|&j| p.upper[j]).collect();

    let mut tab = Tableau::build(&rows, lower, upper);
    let outcome = tab.solve(&cost)?;
    let iterations = tab.iterations;
    match outcome {
        Phase1::Infeasible(v) => Ok(LpSolution::infeasible(v, iterations)),
        Phase1::Feasible => {
            let mut x: Vec<f64> = (0..n).map(fixed_value).collect();
            for (k, &j) in free.iter().enumerate() {
                x[j] = tab.value[k].clamp(p.lower[j], p.upper[j]);
            }
            let objective = p.objective_value(&x);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                objective,
                x,
                infeasibility: 0.0,
                iterations,
            })
        }
    }
}

enum Phase1 {
    Feasible,
    Infeasible(f64),
}

/// Dense tableau `B^-1 A` over structural, row and artificial columns.
struct Tableau {
    m: usize,
    ncols: usize,
    n_struct: usize,
    first_art: usize,
    t: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    at_upper: Vec<bool>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    d: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
    bland: bool,
}

impl Tableau {
    fn build(rows: &[(Vec<(usize, f64)>, f64, f64)], lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = lower.len();
        let m = rows.len();
        let mut value: Vec<f64> = lower.clone();
        let mut at_upper = vec![false; n];
        // Start each structural at the bound nearer zero.
        for j in 0..n {
            if upper[j].abs() < lower[j].abs() {
                value[j] = upper[j];
                at_upper[j] = true;
            }
        }

        let mut row_lo = Vec::with_capacity(m);
        let mut row_hi = Vec::with_capacity(m);
        let mut act = vec![0.0; m];
        let mut needs_art = Vec::new();
        for (i, (coeffs, lo, hi)) in rows.iter().enumerate() {
            act[i] = coeffs.iter().map(|&(j, a)| a * value[j]).sum();
            row_lo.push(*lo);
            row_hi.push(*hi);
            if act[i] < lo - FEAS_TOL || act[i] > hi + FEAS_TOL {
                needs_art.push(i);
            }
        }
        let n_art = needs_art.len();
        let ncols = n + m + n_art;
        let first_art = n + m;

        let mut lo_all = lower;
        lo_all.extend_from_slice(&row_lo);
        lo_all.extend(std::iter::repeat(0.0).take(n_art));
        let mut hi_all = upper;
        hi_all.extend_from_slice(&row_hi);
        hi_all.extend(std::iter::repeat(f64::INFINITY).take(n_art));
        value.resize(ncols, 0.0);
        at_upper.resize(ncols, false);

        let mut t = vec![0.0; m * ncols];
        let mut basis = vec![0; m];
        let mut is_basic = vec![false; ncols];
        let mut art_of_row = vec![usize::MAX; m];
        for (k, &i) in needs_art.iter().enumerate() {
            art_of_row[i] = first_art + k;
        }
        for (i, (coeffs, _, _)) in rows.iter().enumerate() {
            let row = &mut t[i * ncols..(i + 1) * ncols];
            let r = n + i;
            if art_of_row[i] == usize::MAX {
                // basic r: row is -(a·x - r) so the r column is +1
                for &(j, a) in coeffs {
                    row[j] -= a;
                }
                row[r] = 1.0;
                basis[i] = r;
                value[r] = act[i];
            } else {
                let art = art_of_row[i];
                let target = if act[i] > row_hi[i] { row_hi[i] } else { row_lo[i] };
                value[r] = target;
                at_upper[r] = act[i] > row_hi[i];
                // a·x - r + s·art = 0 with s·art = target - act
                let s = if target - act[i] >= 0.0 { 1.0 } else { -1.0 };
                for &(j, a) in coeffs {
                    row[j] += a * s;
                }
                row[r] = -s;
                row[art] = 1.0;
                basis[i] = art;
                value[art] = (target - act[i]).abs();
            }
            is_basic[basis[i]] = true;
        }

        Self {
            m,
            ncols,
            n_struct: n,
            first_art,
            t,
            lower: lo_all,
            upper: hi_all,
            value,
            at_upper,
            basis,
            is_basic,
            d: vec![0.0; ncols],
            iterations: 0,
            max_iterations: 50 * (m + n).max(1),
            degenerate_run: 0,
            bland: false,
        }
    }

    fn solve(&mut self, cost: &[f64]) -> Result<Phase1> {
        if self.first_art < self.ncols {
            let mut c1 = vec![0.0; self.ncols];
            c1[self.first_art..].fill(1.0);
            self.price_from(&c1);
            self.iterate(true)?;
            let infeas: f64 = (self.first_art..self.ncols).map(|j| self.value[j]).sum();
            if infeas > FEAS_TOL {
                return Ok(Phase1::Infeasible(infeas));
            }
            for j in self.first_art..self.ncols {
                self.upper[j] = 0.0;
                if !self.is_basic[j] {
                    self.value[j] = 0.0;
                    self.at_upper[j] = false;
                }
            }
            self.drive_out_artificials();
        }
        let mut c2 = vec![0.0; self.ncols];
        c2[..self.n_struct].copy_from_slice(cost);
        self.price_from(&c2);
        self.iterate(false)?;
        self.refresh_basics();
        Ok(Phase1::Feasible)
    }

    fn price_from(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    fn refresh_basics(&mut self) {
        for i in 0..self.m {
            let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
            let b = self.basis[i];
            let mut v = 0.0;
            for (j, &a) in row.iter().enumerate() {
                if j != b && a != 0.0 && !self.is_basic[j] {
                    v -= a * self.value[j];
                }
            }
            self.value[b] = v;
        }
    }

    fn drive_out_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.first_art {
                continue;
            }
            let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
            let best = (0..self.first_art)
                .filter(|&j| !self.is_basic[j])
                .map(|j| (j, row[j].abs()))
                .filter(|&(_, a)| a > 1e-7)
                .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((j, _)) = best {
                let leaving = self.basis[i];
                self.value[leaving] = 0.0;
                self.at_upper[leaving] = false;
                self.pivot(i, j);
            }
        }
    }

    fn eligible(&self, j: usize, phase1: bool) -> Option<f64> {
        if self.is_basic[j] || (!phase1 && j >= self.first_art) {
            return None;
        }
        if self.upper[j] - self.lower[j] <= FIXED_TOL {
            return None;
        }
        let dj = self.d[j];
        if self.at_upper[j] {
            (dj > OPT_TOL).then_some(-1.0)
        } else {
            (dj < -OPT_TOL).then_some(1.0)
        }
    }

    fn iterate(&mut self, phase1: bool) -> Result<()> {
        loop {
            if phase1 && (self.first_art..self.ncols).all(|j| self.value[j] <= FIXED_TOL) {
                return Ok(());
            }
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if let Some(dir) = self.eligible(j, phase1) {
                    if self.bland {
                        entering = Some((j, dir));
                        break;
                    }
                    let score = self.d[j].abs();
                    if score > best {
                        best = score;
                        entering = Some((j, dir));
                    }
                }
            }
            let Some((e, dir)) = entering else {
                return Ok(());
            };
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::NumericalStall {
                    iterations: self.iterations,
                });
            }

            // Harris pass 1: relaxed step bound.
            let mut relaxed = self.upper[e] - self.lower[e];
            for i in 0..self.m {
                let alpha = self.t[i * self.ncols + e] * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                // basic value moves by -alpha * step
                let limit = if alpha > 0.0 {
                    (self.value[b] - self.lower[b] + HARRIS_TOL) / alpha
                } else {
                    (self.upper[b] - self.value[b] + HARRIS_TOL) / -alpha
                };
                if limit < relaxed {
                    relaxed = limit;
                }
            }
            if !relaxed.is_finite() {
                return Err(Error::Lp("unbounded direction in a box-bounded problem".into()));
            }
            // Pass 2: largest pivot among rows within the relaxed bound.
            let mut leave: Option<usize> = None;
            let mut step = self.upper[e] - self.lower[e];
            let mut best_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.t[i * self.ncols + e] * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let exact = if alpha > 0.0 {
                    (self.value[b] - self.lower[b]) / alpha
                } else {
                    (self.upper[b] - self.value[b]) / -alpha
                };
                if exact <= relaxed && alpha.abs() > best_alpha {
                    best_alpha = alpha.abs();
                    leave = Some(i);
                    step = exact;
                }
            }
            if leave.is_some() && self.upper[e] - self.lower[e] <= step {
                leave = None;
                step = self.upper[e] - self.lower[e];
            }
            let step = step.max(0.0);

            if step <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run >= DEGENERATE_LIMIT {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }

            // Move the entering variable and the basics.
            self.value[e] += dir * step;
            for i in 0..self.m {
                let a = self.t[i * self.ncols + e];
                if a != 0.0 {
                    let b = self.basis[i];
                    self.value[b] -= a * dir * step;
                }
            }

            match leave {
                None => {
                    self.at_upper[e] = dir > 0.0;
                    self.value[e] = if self.at_upper[e] { self.upper[e] } else { self.lower[e] };
                }
                Some(r) => {
                    let b = self.basis[r];
                    let alpha = self.t[r * self.ncols + e] * dir;
                    if alpha > 0.0 {
                        self.value[b] = self.lower[b];
                        self.at_upper[b] = false;
                    } else {
                        self.value[b] = self.upper[b];
                        self.at_upper[b] = true;
                    }
                    self.pivot(r, e);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let nc = self.ncols;
        let piv = self.t[r * nc + e];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            let inv = 1.0 / piv;
            row.iter_mut().for_each(|v| *v *= inv);
            row[e] = 1.0;
        }
        let nz: Vec<usize> = (0..nc).filter(|&j| self.t[r * nc + j] != 0.0).collect();
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        let eliminate = |row: &mut [f64]| {
            let f = row[e];
            if f != 0.0 {
                for &j in &nz {
                    row[j] -= f * prow[j];
                }
                row[e] = 0.0;
            }
        };
        before.chunks_exact_mut(nc).for_each(eliminate);
        after.chunks_exact_mut(nc).for_each(eliminate);
        let f = self.d[e];
        if f != 0.0 {
            for &j in &nz {
                self.d[j] -= f * prow[j];
            }
            self.d[e] = 0.0;
        }
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[e] = true;
        self.basis[r] = e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable_max() {
        let mut p = LpProblem::new(vec![0.0], vec![10.0], Direction::Maximize);
        p.objective[0] = 1.0;
        p.add(vec![(0, 1.0)], Sense::Le, 3.0);
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = LpProblem::new(vec![0.0], vec![10.0], Direction::Minimize);
        p.add(vec![(0, 1.0)], Sense::Ge, 2.0);
        p.add(vec![(0, 1.0)], Sense::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        assert!(s.infeasibility > 0.0);
    }

    #[test]
    fn equality_and_fixed_variables() {
        // min x + 2y s.t. x + y = 4, y fixed at 1
        let mut p = LpProblem::new(vec![0.0, 1.0], vec![10.0, 1.0], Direction::Minimize);
        p.objective = vec![1.0, 2.0];
        p.add(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 4.0);
        let s = lp_solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn unbounded_variable_is_rejected() {
        let p = LpProblem::new(vec![0.0], vec![f64::INFINITY], Direction::Minimize);
        assert!(lp_solve(&p).is_err());
    }

    #[test]
    fn classic_two_dimensional_lp() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut p = LpProblem::new(vec![0.0, 0.0], vec![100.0, 100.0], Direction::Maximize);
        p.objective = vec![3.0, 5.0];
        p.add(vec![(0, 1.0)], Sense::Le, 4.0);
        p.add(vec![(1, 2.0)], Sense::Le, 12.0);
        p.add(vec![(0, 3.0), (1, 2.0)], Sense::Le, 18.0);
        let s = lp_solve(&p).unwrap();
        assert_abs_diff_eq!(s.objective, 36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn deterministic() {
        let mut p = LpProblem::new(vec![-1.0; 3], vec![1.0; 3], Direction::Maximize);
        p.objective = vec![1.0, 1.0, 1.0];
        p.add(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Sense::Le, 1.0);
        let a = lp_solve(&p).unwrap();
        let b = lp_solve(&p).unwrap();
        assert_eq!(a, b);
    }
}
