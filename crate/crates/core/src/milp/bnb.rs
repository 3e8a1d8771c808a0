//! Best-bound branch-and-bound over LP relaxations.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use super::encode::{add_no_good_cut, GroupChoice, NetworkEncoding};
use super::{Constraint, MilpModel, Role, VarKind, CHECK_TOL, INT_TOL};
use crate::error::{Error, Result};
use crate::lp::{lp_solve, Direction, LpProblem, LpStatus, Sense};
use crate::network::Layer;

/// Absolute optimality gap of optimize mode.
pub const ABS_GAP: f64 = 1e-6;
/// Pool-mode boxes with at most this many input points are always settled by
/// forward passes instead of further branching.
pub const LEAF_ENUMERATION: usize = 64;
/// Boxes holding at most this share of the root space are enumerated.
pub const LEAF_FRACTION: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Stop at the first integer-feasible solution.
    Feasibility,
    /// Optimise the model objective to within [`ABS_GAP`].
    Optimize,
    /// Collect up to `K` solutions that differ on the assignment binaries.
    Pool(usize),
    /// Like `Pool(K)` but only the first solution is kept.
    Count(usize),
}

impl SolveMode {
    fn cap(self) -> Option<usize> {
        match self {
            SolveMode::Pool(k) | SolveMode::Count(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Limits {
    pub time: Option<Duration>,
    pub nodes: Option<u64>,
}

impl Limits {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn time(d: Duration) -> Self {
        Self {
            time: Some(d),
            nodes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPool {
    pub solutions: Vec<MilpSolution>,
    pub cap: usize,
    /// Fewer than `cap` solutions exist.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BnbOutcome {
    Infeasible,
    Feasible(MilpSolution),
    Optimal(MilpSolution),
    Pool(SolutionPool),
    Count {
        count: usize,
        first: Option<MilpSolution>,
        /// Fewer than the cap exist.
        exhausted: bool,
    },
    /// A limit was hit; carries every solution found so far.
    Timeout(Vec<MilpSolution>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BnbStats {
    pub nodes: u64,
    pub lp_solves: u64,
    pub enumerated: u64,
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    bound: f64,
    seq: u64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap order: smallest bound first, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

enum Flow {
    Continue,
    Stop,
}

struct Solver {
    model: MilpModel,
    mode: SolveMode,
    limits: Limits,
    start: Instant,
    sign: f64,
    heap: BinaryHeap<Node>,
    seq: u64,
    incumbent: Option<MilpSolution>,
    pool: Vec<MilpSolution>,
    found: HashSet<Vec<usize>>,
    count: usize,
    leaf_limit: usize,
    stats: BnbStats,
    /// Every variable belongs to the network encoding.
    covered: bool,
    /// Shortcut that enumerates a box once every point in it is proven feasible.
    box_enumeration: bool,
    root_lower: Vec<f64>,
    root_upper: Vec<f64>,
    /// Variables branched on before any other (sensitive assignment).
    priority: Vec<bool>,
    timed_out: bool,
}

/// Solves `model` with the given mode and limits.
pub fn bnb_solve(model: &MilpModel, mode: SolveMode, limits: Limits) -> Result<BnbOutcome> {
    bnb_solve_with_stats(model, mode, limits).map(|(o, _)| o)
}

pub fn bnb_solve_with_stats(model: &MilpModel, mode: SolveMode, limits: Limits) -> Result<(BnbOutcome, BnbStats)> {
    for v in &model.vars {
        if !v.lower.is_finite() || !v.upper.is_finite() {
            return Err(Error::Milp(format!("variable {} is not box-bounded", v.name)));
        }
    }
    if mode.cap().is_some() {
        if let Some(enc) = &model.encoding {
            if enc.groups.iter().any(|g| g.indicators.is_empty()) {
                return Err(Error::Milp(
                    "pool mode needs every sensitive feature encoded with binary indicators".into(),
                ));
            }
        }
    }
    let covered = model.encoding.as_ref().is_some_and(|enc| covered_vars(enc) == model.num_vars());
    let box_enumeration = covered
        && mode != SolveMode::Optimize
        && model.constraints.iter().all(|c| c.role != Role::User)
        && model.encoding.as_ref().is_some_and(|enc| enc.groups.iter().all(|g| !g.is_continuous()));
    let sign = match model.direction {
        Some(Direction::Maximize) => -1.0,
        _ => 1.0,
    };
    let mut priority = vec![false; model.num_vars()];
    if let Some(enc) = &model.encoding {
        for g in &enc.groups {
            g.indicators.iter().chain(&g.integer).for_each(|&v| priority[v] = true);
        }
    }
    let mut s = Solver {
        priority,
        root_lower: model.vars.iter().map(|v| v.lower).collect(),
        root_upper: model.vars.iter().map(|v| v.upper).collect(),
        model: model.clone(),
        mode,
        limits,
        start: Instant::now(),
        sign,
        heap: BinaryHeap::new(),
        seq: 0,
        incumbent: None,
        pool: Vec::new(),
        count: 0,
        leaf_limit: LEAF_ENUMERATION,
        found: HashSet::new(),
        stats: BnbStats::default(),
        covered,
        box_enumeration,
        timed_out: false,
    };
    if let Some(enc) = &model.encoding {
        let root = enc
            .groups
            .iter()
            .fold(1usize, |n, g| n.saturating_mul(g.options.len()));
        s.leaf_limit = LEAF_ENUMERATION.max(root / LEAF_FRACTION);
    }
    let outcome = s.run()?;
    Ok((outcome, s.stats))
}

fn covered_vars(enc: &NetworkEncoding) -> usize {
    let mut n = enc.input_dim();
    for g in &enc.groups {
        if g.columns.first() != g.indicators.first() {
            n += g.indicators.len();
        }
        n += usize::from(g.integer.is_some());
    }
    n + enc.pre.iter().map(Vec::len).sum::<usize>()
        + enc.post.iter().map(Vec::len).sum::<usize>()
        + enc.delta.iter().map(Vec::len).sum::<usize>()
}

impl Solver {
    fn run(&mut self) -> Result<BnbOutcome> {
        if self.mode.cap() == Some(0) {
            return Ok(self.finish(false));
        }
        let root = Node {
            lower: self.root_lower.clone(),
            upper: self.root_upper.clone(),
            bound: f64::NEG_INFINITY,
            seq: 0,
        };
        self.heap.push(root);
        while let Some(node) = self.heap.pop() {
            if self.limit_hit() {
                return Ok(self.timeout());
            }
            if self.mode == SolveMode::Optimize {
                if let Some(inc) = &self.incumbent {
                    if node.bound >= self.sign * inc.objective - ABS_GAP {
                        continue;
                    }
                }
            }
            self.stats.nodes += 1;
            if let Flow::Stop = self.process(node)? {
                return Ok(self.finish(false));
            }
            if self.timed_out {
                return Ok(self.timeout());
            }
        }
        Ok(self.finish(true))
    }

    fn limit_hit(&mut self) -> bool {
        let hit = self.limits.nodes.is_some_and(|n| self.stats.nodes >= n)
            || self.limits.time.is_some_and(|t| self.start.elapsed() >= t);
        self.timed_out |= hit;
        hit
    }

    fn timeout(&mut self) -> BnbOutcome {
        let mut sols = std::mem::take(&mut self.pool);
        if let Some(inc) = self.incumbent.take() {
            sols.push(inc);
        }
        BnbOutcome::Timeout(sols)
    }

    fn finish(&mut self, tree_exhausted: bool) -> BnbOutcome {
        match self.mode {
            SolveMode::Feasibility => match self.incumbent.take() {
                Some(s) => BnbOutcome::Feasible(s),
                None => BnbOutcome::Infeasible,
            },
            SolveMode::Optimize => match self.incumbent.take() {
                Some(s) => BnbOutcome::Optimal(s),
                None => BnbOutcome::Infeasible,
            },
            SolveMode::Pool(cap) => BnbOutcome::Pool(SolutionPool {
                solutions: std::mem::take(&mut self.pool),
                cap,
                exhausted: tree_exhausted,
            }),
            SolveMode::Count(_) => BnbOutcome::Count {
                count: self.count,
                first: self.pool.pop(),
                exhausted: tree_exhausted,
            },
        }
    }

    fn push(&mut self, lower: Vec<f64>, upper: Vec<f64>, bound: f64) {
        self.seq += 1;
        self.heap.push(Node {
            lower,
            upper,
            bound,
            seq: self.seq,
        });
    }

    fn enc(&self) -> Option<&NetworkEncoding> {
        self.model.encoding.as_ref()
    }

    /// Records a solution; `node` is re-queued in pool mode so the rest of
    /// its region is still searched under the new cut.
    fn on_solution(&mut self, values: Vec<f64>, node: Option<(Vec<f64>, Vec<f64>, f64)>) -> Result<Flow> {
        let objective = self.model.objective_value(&values);
        match self.mode {
            SolveMode::Feasibility => {
                self.incumbent = Some(MilpSolution { values, objective });
                Ok(Flow::Stop)
            }
            SolveMode::Optimize => {
                let better = self
                    .incumbent
                    .as_ref()
                    .map_or(true, |inc| self.sign * objective < self.sign * inc.objective);
                if better {
                    self.incumbent = Some(MilpSolution { values, objective });
                }
                Ok(Flow::Continue)
            }
            SolveMode::Pool(cap) | SolveMode::Count(cap) => {
                if let Some(enc) = self.enc() {
                    let key = choice_key(&enc.choices_of(&values));
                    if !self.found.insert(key) {
                        return Ok(Flow::Continue);
                    }
                }
                add_no_good_cut(&mut self.model, &values)?;
                if self.keep(values, objective) >= cap {
                    return Ok(Flow::Stop);
                }
                if let Some((lo, hi, bound)) = node {
                    self.push(lo, hi, bound);
                }
                Ok(Flow::Continue)
            }
        }
    }

    /// Stores a solution as the mode requires and returns the count so far.
    fn keep(&mut self, values: Vec<f64>, objective: f64) -> usize {
        self.count += 1;
        if matches!(self.mode, SolveMode::Pool(_)) || self.pool.is_empty() {
            self.pool.push(MilpSolution { values, objective });
        }
        self.count
    }

    /// Count mode past its first solution: points only need counting, and
    /// a forward pass that satisfies the flip rows completes to a solution.
    fn only_counting(&self) -> bool {
        matches!(self.mode, SolveMode::Count(_)) && !self.pool.is_empty()
    }

    /// Solution from a node that is closed afterwards. Open nodes are
    /// disjoint from it and from each other, so it is recorded without a
    /// no-good cut and only checked against the cut points.
    fn on_closed_solution(&mut self, values: Vec<f64>) -> Result<Flow> {
        let Some(cap) = self.mode.cap() else {
            return self.on_solution(values, None);
        };
        if !self.found.is_empty() {
            if let Some(enc) = self.enc() {
                if self.found.contains(&choice_key(&enc.choices_of(&values))) {
                    return Ok(Flow::Continue);
                }
            }
        }
        let objective = self.model.objective_value(&values);
        Ok(if self.keep(values, objective) >= cap { Flow::Stop } else { Flow::Continue })
    }

    fn flip_rows_hold(&self, values: &[f64]) -> bool {
        self.model
            .constraints
            .iter()
            .filter(|c| c.role == Role::Flip)
            .all(|c| c.violation(values) <= 0.0)
    }

    fn feasible_ignoring_cuts(&self, values: &[f64]) -> bool {
        let m = &self.model;
        for (v, &x) in m.vars.iter().zip(values) {
            if x < v.lower - CHECK_TOL || x > v.upper + CHECK_TOL {
                return false;
            }
            if v.kind != VarKind::Continuous && (x - x.round()).abs() > INT_TOL {
                return false;
            }
        }
        m.constraints.iter().filter(|c| c.role != Role::NoGood).all(|c| {
            let tol = if c.role == Role::Flip { 0.0 } else { CHECK_TOL };
            c.violation(values) <= tol
        })
    }

    /// Candidate at input choices, built by a forward pass.
    fn candidate(&self, base: &[f64], choices: &[GroupChoice]) -> Option<Vec<f64>> {
        let enc = self.enc()?;
        if self.mode == SolveMode::Feasibility || self.mode.cap().is_some() {
            if !self.found.is_empty() && self.found.contains(&choice_key(choices)) {
                return None;
            }
        }
        let x = enc.point_with(base, choices);
        let values = enc.complete(&x, choices, &self.root_lower);
        let ok = if self.mode.cap().is_some() {
            self.flip_rows_hold(&values) && self.feasible_ignoring_cuts(&values)
        } else {
            self.model.is_feasible(&values)
        };
        ok.then_some(values)
    }

    fn process(&mut self, node: Node) -> Result<Flow> {
        let Node {
            mut lower,
            mut upper,
            bound: parent_bound,
            ..
        } = node;
        if let Some(enc) = self.model.encoding.as_ref() {
            if !enc.propagate(&mut lower, &mut upper, true) {
                return Ok(Flow::Continue);
            }
        }
        if self.model.constraints.iter().any(|c| c.impossible_on(&lower, &upper, 1e-9)) {
            return Ok(Flow::Continue);
        }

        if self.covered {
            if let Some(flow) = self.try_point(&lower, &upper)? {
                return Ok(flow);
            }
            if self.box_enumeration {
                if let Some(flow) = self.try_box(&lower, &upper)? {
                    return Ok(flow);
                }
                if let Some(flow) = self.try_small_box(&lower, &upper)? {
                    return Ok(flow);
                }
            }
        }

        let box_bound = self
            .model
            .objective
            .iter()
            .map(|&(j, c)| {
                let c = self.sign * c;
                if c >= 0.0 {
                    c * lower[j]
                } else {
                    c * upper[j]
                }
            })
            .sum::<f64>();
        let parent_bound = parent_bound.max(box_bound);
        if self.mode == SolveMode::Optimize {
            if let Some(inc) = &self.incumbent {
                if parent_bound >= self.sign * inc.objective - ABS_GAP {
                    return Ok(Flow::Continue);
                }
            }
        }

        if self.limit_hit() {
            return Ok(Flow::Continue);
        }
        let lp = self.node_lp(&lower, &upper);
        self.stats.lp_solves += 1;
        let sol = match lp_solve(&lp) {
            Ok(sol) => sol,
            Err(e) => {
                log::warn!("node LP failed ({e}); branching without a bound");
                return Ok(self.branch_unfixed(lower, upper, parent_bound));
            }
        };
        if sol.status == LpStatus::Infeasible {
            return Ok(Flow::Continue);
        }
        let bound = sol.objective.max(parent_bound);
        if self.mode == SolveMode::Optimize {
            if let Some(inc) = &self.incumbent {
                if bound >= self.sign * inc.objective - ABS_GAP {
                    return Ok(Flow::Continue);
                }
            }
        }

        let heuristic = self.enc().and_then(|enc| {
            let choices = enc.choices_of(&sol.x);
            self.candidate(&sol.x, &choices)
        });
        let branch_var = self.most_fractional(&sol.x, &lower, &upper);

        match (branch_var, heuristic) {
            (None, Some(values)) => self.on_solution(values, Some((lower, upper, bound))),
            (None, None) if self.enc().is_none() => {
                let mut values = sol.x.clone();
                for j in 0..values.len() {
                    if self.model.is_integer(j) {
                        values[j] = values[j].round();
                    }
                }
                self.on_solution(values, None)
            }
            (None, None) => {
                // Integral relaxation whose forward-pass completion fails the
                // rows: split the first free integer variable instead.
                if (0..lower.len()).any(|j| self.model.is_integer(j) && lower[j] < upper[j]) {
                    Ok(self.branch_unfixed(lower, upper, bound))
                } else {
                    log::debug!("dropping node with an integral relaxation that fails the exact check");
                    Ok(Flow::Continue)
                }
            }
            (Some(j), heuristic) => {
                if let Some(values) = heuristic {
                    let requeue = self.mode.cap().is_some();
                    let flow = self.on_solution(values, requeue.then(|| (lower.clone(), upper.clone(), bound)))?;
                    if requeue || matches!(flow, Flow::Stop) {
                        return Ok(flow);
                    }
                }
                if !self.branch_group(j, &lower, &upper, bound) {
                    self.branch(j, sol.x[j], lower, upper, bound);
                }
                Ok(Flow::Continue)
            }
        }
    }

    /// Pool mode splits the one-hot group owning indicator `j` into two
    /// halves of its allowed options, so subtrees cover contiguous option
    /// ranges that bounds can settle in bulk. `false` when not applicable.
    fn branch_group(&mut self, j: usize, lower: &[f64], upper: &[f64], bound: f64) -> bool {
        if self.mode.cap().is_none() {
            return false;
        }
        let Some(enc) = self.enc() else { return false };
        let Some(g) = enc.groups.iter().find(|g| g.indicators.contains(&j)) else {
            return false;
        };
        let allowed = match g.allowed(lower, upper) {
            Some(a) if a.len() > 2 => a,
            _ => return false,
        };
        let indicators = g.indicators.clone();
        let (first, second) = allowed.split_at(allowed.len() / 2);
        let mut up_a = upper.to_vec();
        second.iter().for_each(|&k| up_a[indicators[k]] = 0.0);
        let mut up_b = upper.to_vec();
        first.iter().for_each(|&k| up_b[indicators[k]] = 0.0);
        self.push(lower.to_vec(), up_a, bound);
        self.push(lower.to_vec(), up_b, bound);
        true
    }

    /// Node whose input box is a single point: evaluate it directly.
    fn try_point(&mut self, lower: &[f64], upper: &[f64]) -> Result<Option<Flow>> {
        let enc = self.enc().expect("covered models have an encoding");
        if enc.free_columns.iter().any(|&c| lower[c] != upper[c]) {
            return Ok(None);
        }
        let mut choices = Vec::with_capacity(enc.groups.len());
        for g in &enc.groups {
            match g.allowed(lower, upper) {
                Some(a) if a.len() == 1 => choices.push(GroupChoice::Option(a[0])),
                _ => return Ok(None),
            }
        }
        self.stats.enumerated += 1;
        match self.candidate(lower, &choices) {
            Some(values) => self.on_closed_solution(values).map(Some),
            None => Ok(Some(Flow::Continue)),
        }
    }

    /// If every point of the node's input box satisfies the flip rows, all of
    /// them are solutions: emit them without further search.
    fn try_box(&mut self, lower: &[f64], upper: &[f64]) -> Result<Option<Flow>> {
        let enc = self.enc().expect("covered models have an encoding");
        if enc.free_columns.iter().any(|&c| lower[c] != upper[c]) {
            return Ok(None);
        }
        let mut lo = self.root_lower.clone();
        let mut hi = self.root_upper.clone();
        let d = enc.input_dim();
        lo[..d].copy_from_slice(&lower[..d]);
        hi[..d].copy_from_slice(&upper[..d]);
        for g in &enc.groups {
            for &v in &g.indicators {
                lo[v] = lower[v];
                hi[v] = upper[v];
            }
        }
        if !enc.propagate(&mut lo, &mut hi, false) {
            return Ok(None);
        }
        let proven = self
            .model
            .constraints
            .iter()
            .filter(|c| !matches!(c.role, Role::Network | Role::OneHot | Role::Tie | Role::Prefix | Role::NoGood))
            .all(|c| c.implied_on(&lo, &hi));
        if !proven {
            return Ok(None);
        }
        let allowed: Vec<Vec<usize>> = enc
            .groups
            .iter()
            .map(|g| g.allowed(lower, upper).expect("discrete group"))
            .collect();
        self.enumerate_points(lower, &allowed)
    }

    /// Pool and count modes settle a small box (see [`LEAF_FRACTION`]) by
    /// checking each point with a forward pass.
    fn try_small_box(&mut self, lower: &[f64], upper: &[f64]) -> Result<Option<Flow>> {
        if self.mode.cap().is_none() {
            return Ok(None);
        }
        let enc = self.enc().expect("covered models have an encoding");
        if enc.free_columns.iter().any(|&c| lower[c] != upper[c]) {
            return Ok(None);
        }
        let allowed: Vec<Vec<usize>> = enc
            .groups
            .iter()
            .map(|g| g.allowed(lower, upper).expect("discrete group"))
            .collect();
        let points = allowed.iter().fold(1usize, |n, a| n.saturating_mul(a.len()));
        if points > self.leaf_limit {
            return Ok(None);
        }
        self.enumerate_points(lower, &allowed)
    }

    /// Offers every point of the product of `allowed` as a closed solution.
    /// Points whose output already breaks a flip row are dropped after a
    /// plain forward pass.
    fn enumerate_points(&mut self, lower: &[f64], allowed: &[Vec<usize>]) -> Result<Option<Flow>> {
        let enc = self.enc().expect("covered models have an encoding");
        let out = enc.output();
        let flips: Vec<Constraint> = self
            .model
            .constraints
            .iter()
            .filter(|c| c.role == Role::Flip && c.coeffs.iter().all(|&(j, _)| j == out))
            .cloned()
            .collect();
        let d = enc.input_dim();
        let mut idx = vec![0usize; allowed.len()];
        let base = lower[..d].to_vec();
        let leaf = LeafNet::new(enc, &base, allowed);
        let mut x = base.clone();
        let mut z = vec![0.0; out + 1];
        loop {
            self.stats.enumerated += 1;
            z[out] = leaf.logit(&idx);
            let slack = LEAF_MARGIN * (1.0 + z[out].abs());
            let maybe = flips.iter().all(|c| match c.sense {
                Sense::Le => c.activity(&z) <= c.rhs + slack * c.coeffs[0].1.abs(),
                Sense::Ge => c.activity(&z) >= c.rhs - slack * c.coeffs[0].1.abs(),
                Sense::Eq => true,
            });
            if maybe {
                let enc = self.enc().expect("covered models have an encoding");
                for ((g, &i), a) in enc.groups.iter().zip(&idx).zip(allowed) {
                    for (&c, &o) in g.columns.iter().zip(&g.options[a[i]]) {
                        x[c] = o;
                    }
                }
                z[out] = enc.net.logit(&x);
                if flips.iter().all(|c| c.violation(&z) <= 0.0) && self.only_counting() {
                    let key: Vec<usize> = idx.iter().zip(allowed).map(|(&i, a)| a[i]).collect();
                    if self.found.is_empty() || !self.found.contains(&key) {
                        self.count += 1;
                        if Some(self.count) >= self.mode.cap() {
                            return Ok(Some(Flow::Stop));
                        }
                    }
                } else if flips.iter().all(|c| c.violation(&z) <= 0.0) {
                    let choices: Vec<GroupChoice> = idx
                        .iter()
                        .zip(allowed)
                        .map(|(&i, a)| GroupChoice::Option(a[i]))
                        .collect();
                    if let Some(values) = self.candidate(&base, &choices) {
                        if let Flow::Stop = self.on_closed_solution(values)? {
                            return Ok(Some(Flow::Stop));
                        }
                    }
                }
            }
            if self.stats.enumerated % 1024 == 0 && self.limit_hit() {
                return Ok(Some(Flow::Continue));
            }
            // Mixed-radix increment, last group fastest.
            let mut k = idx.len();
            loop {
                if k == 0 {
                    return Ok(Some(Flow::Continue));
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < allowed[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    fn node_lp(&self, lower: &[f64], upper: &[f64]) -> LpProblem {
        let mut p = LpProblem::new(lower.to_vec(), upper.to_vec(), Direction::Minimize);
        for &(j, c) in &self.model.objective {
            p.objective[j] += self.sign * c;
        }
        for c in &self.model.constraints {
            if c.implied_on(lower, upper) {
                continue;
            }
            p.add(c.coeffs.clone(), c.sense, c.rhs);
        }
        p
    }

    /// Most fractional integer variable, assignment variables first; ties go
    /// to the lowest index.
    fn most_fractional(&self, x: &[f64], lower: &[f64], upper: &[f64]) -> Option<usize> {
        self.most_fractional_in(x, lower, upper, |j| self.priority[j])
            .or_else(|| self.largest_unfixed_priority(x, lower, upper))
            .or_else(|| self.most_fractional_in(x, lower, upper, |_| true))
    }

    /// Unfixed assignment variable with the largest relaxation value: once a
    /// point is fixed it is settled by a forward pass, so ReLU indicators
    /// only need branching when some sensitive column is continuous.
    fn largest_unfixed_priority(&self, x: &[f64], lower: &[f64], upper: &[f64]) -> Option<usize> {
        if !self.covered {
            return None;
        }
        let mut best: Option<usize> = None;
        for j in 0..x.len() {
            if self.priority[j] && lower[j] < upper[j] && best.map_or(true, |b| x[j] > x[b]) {
                best = Some(j);
            }
        }
        best
    }

    fn most_fractional_in(&self, x: &[f64], lower: &[f64], upper: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in x.iter().enumerate() {
            if !self.model.is_integer(j) || lower[j] == upper[j] || !keep(j) {
                continue;
            }
            let frac = v - v.floor();
            let dist = frac.min(1.0 - frac);
            if dist <= INT_TOL {
                continue;
            }
            if best.map_or(true, |(_, b)| dist > b) {
                best = Some((j, dist));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Down child (`x_j <= floor(v)`) is queued first. An integral `v`
    /// splits just below itself, or just above at the lower bound.
    fn branch(&mut self, j: usize, v: f64, lower: Vec<f64>, upper: Vec<f64>, bound: f64) {
        let r = v.round();
        let split = if (v - r).abs() > INT_TOL {
            v.floor()
        } else if r > lower[j] {
            r - 1.0
        } else {
            r
        };
        let mut down_upper = upper.clone();
        down_upper[j] = split;
        let mut up_lower = lower.clone();
        up_lower[j] = split + 1.0;
        self.push(lower, down_upper, bound);
        self.push(up_lower, upper, bound);
    }

    fn branch_unfixed(&mut self, lower: Vec<f64>, upper: Vec<f64>, bound: f64) -> Flow {
        match (0..lower.len()).find(|&j| self.model.is_integer(j) && lower[j] < upper[j]) {
            Some(j) => {
                let mid = ((lower[j] + upper[j]) / 2.0).floor() + 0.5;
                self.branch(j, mid, lower, upper, bound);
            }
            None => log::warn!("dropping node: relaxation failed with every integer fixed"),
        }
        Flow::Continue
    }
}

fn choice_key(choices: &[GroupChoice]) -> Vec<usize> {
    choices
        .iter()
        .map(|c| match c {
            GroupChoice::Option(k) => *k,
            GroupChoice::Continuous => usize::MAX,
        })
        .collect()
}

/// Relative slack of the leaf prefilter; points inside it get an exact pass.
const LEAF_MARGIN: f64 = 1e-9;

/// Network restricted to a box whose free columns are fixed: the first
/// layer is a base vector plus one precomputed term per group option.
struct LeafNet {
    rest: Vec<Layer>,
    base: Vec<f64>,
    terms: Vec<Vec<Vec<f64>>>,
}

impl LeafNet {
    fn new(enc: &NetworkEncoding, point: &[f64], allowed: &[Vec<usize>]) -> Self {
        let layer = &enc.net.layers[0];
        let n = layer.inputs;
        let mut grouped = vec![false; n];
        enc.groups.iter().flat_map(|g| &g.columns).for_each(|&c| grouped[c] = true);
        let base = (0..layer.outputs())
            .map(|j| {
                let row = &layer.weights[j * n..(j + 1) * n];
                layer.bias[j] + (0..n).filter(|&c| !grouped[c]).map(|c| row[c] * point[c]).sum::<f64>()
            })
            .collect();
        let terms = enc
            .groups
            .iter()
            .zip(allowed)
            .map(|(g, a)| {
                a.iter()
                    .map(|&k| {
                        (0..layer.outputs())
                            .map(|j| {
                                g.columns
                                    .iter()
                                    .zip(&g.options[k])
                                    .map(|(&c, &o)| layer.weights[j * n + c] * o)
                                    .sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            rest: enc.net.layers[1..].to_vec(),
            base,
            terms,
        }
    }

    fn logit(&self, idx: &[usize]) -> f64 {
        let mut act = self.base.clone();
        for (t, &i) in self.terms.iter().zip(idx) {
            act.iter_mut().zip(&t[i]).for_each(|(a, v)| *a += v);
        }
        for layer in &self.rest {
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            act = layer.affine(&act);
        }
        act[0]
    }
}
