//! Big-M encoding of a ReLU network, fairness counterexample rows and
//! no-good cuts.

use super::{Direction, MilpModel, Role, Sense, VarKind, INT_TOL};
use crate::bounds::{BoundsCache, BIG_M_SLACK};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::schema::{AssignmentSpace, EncodedPoint, FeatureSchema, Mode, SensitiveDomain};

/// Margin that realises the strict inequality of a `1 -> 0` flip.
pub const EPS_STRICT: f64 = 1e-6;
/// Integer sensitive features with at most this many grid points get a
/// binary indicator per grid point; larger grids use one general integer.
pub const ONE_HOT_GRID_LIMIT: usize = 64;

/// Variables encoding one sensitive feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveGroup {
    /// Index into the assignment space's domains.
    pub domain: usize,
    /// One binary per option; empty for general-integer and continuous groups.
    pub indicators: Vec<usize>,
    /// Option index variable of a general-integer group.
    pub integer: Option<usize>,
    /// Input columns written by the group.
    pub columns: Vec<usize>,
    /// Values of `columns` for each option; empty for continuous groups.
    pub options: Vec<Vec<f64>>,
}

impl SensitiveGroup {
    pub fn is_continuous(&self) -> bool {
        self.options.is_empty()
    }

    /// Options still allowed by the variable bounds, or `None` for a
    /// continuous group.
    pub fn allowed(&self, lower: &[f64], upper: &[f64]) -> Option<Vec<usize>> {
        if self.is_continuous() {
            return None;
        }
        if !self.indicators.is_empty() {
            if let Some(k) = (0..self.indicators.len()).find(|&k| lower[self.indicators[k]] > 0.5) {
                return Some(if upper[self.indicators[k]] > 0.5 { vec![k] } else { vec![] });
            }
            return Some((0..self.indicators.len()).filter(|&k| upper[self.indicators[k]] > 0.5).collect());
        }
        if let Some(t) = self.integer {
            let lo = (lower[t] - INT_TOL).ceil().max(0.0) as usize;
            let hi = (upper[t] + INT_TOL).floor();
            if hi < 0.0 {
                return Some(vec![]);
            }
            let hi = (hi as usize).min(self.options.len() - 1);
            return Some((lo..=hi).collect());
        }
        Some((0..self.options.len()).collect())
    }

    /// Contribution range `min/max_k sum_c w[c] * options[k][c]` of the
    /// allowed options to a first-layer neuron with input weights `w`.
    fn contribution(&self, w: &[f64], allowed: &[usize]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &k in allowed {
            let v: f64 = self.columns.iter().zip(&self.options[k]).map(|(&c, &o)| w[c] * o).sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Which option a group takes in a concrete point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupChoice {
    Option(usize),
    Continuous,
}

/// Layout of the network inside a [`MilpModel`]. Input column `j` is variable `j`.
#[derive(Debug, Clone)]
pub struct NetworkEncoding {
    pub net: NetworkSpec,
    /// Bounds used for the big-M constants (already inflated).
    pub bounds: BoundsCache,
    pub space: AssignmentSpace,
    pub prefix_dim: usize,
    /// `z_i` variables per layer, output layer last.
    pub pre: Vec<Vec<usize>>,
    /// `zhat_i` variables per hidden layer.
    pub post: Vec<Vec<usize>>,
    /// `delta_i` variables per hidden layer.
    pub delta: Vec<Vec<usize>>,
    pub groups: Vec<SensitiveGroup>,
    /// Input columns that belong to no sensitive group.
    pub free_columns: Vec<usize>,
}

impl NetworkEncoding {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output(&self) -> usize {
        self.pre.last().expect("network has an output layer")[0]
    }

    /// Binary variables that identify a sensitive assignment.
    pub fn assignment_vars(&self) -> Vec<usize> {
        self.groups.iter().flat_map(|g| g.indicators.iter().copied()).collect()
    }

    /// Interval propagation of the variable box through the network, exact
    /// on the first layer for one-hot and grid groups. Tightens `lower` and
    /// `upper` in place; with `use_delta` the ReLU indicators are respected
    /// and fixed for neurons that become stable. Returns `false` when the box
    /// is provably empty.
    pub fn propagate(&self, lower: &mut [f64], upper: &mut [f64], use_delta: bool) -> bool {
        let tol = 1e-9;
        let mut allowed_sets = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            match g.allowed(lower, upper) {
                Some(a) if a.is_empty() => return false,
                Some(a) => {
                    for (ci, &c) in g.columns.iter().enumerate() {
                        let lo = a.iter().map(|&k| g.options[k][ci]).fold(f64::INFINITY, f64::min);
                        let hi = a.iter().map(|&k| g.options[k][ci]).fold(f64::NEG_INFINITY, f64::max);
                        lower[c] = lower[c].max(lo);
                        upper[c] = upper[c].min(hi);
                    }
                    if use_delta && a.len() == 1 {
                        for (k, &v) in g.indicators.iter().enumerate() {
                            let on = if k == a[0] { 1.0 } else { 0.0 };
                            lower[v] = on;
                            upper[v] = on;
                        }
                        if let Some(t) = g.integer {
                            lower[t] = a[0] as f64;
                            upper[t] = a[0] as f64;
                        }
                    }
                    allowed_sets.push(Some(a));
                }
                None => allowed_sets.push(None),
            }
        }

        let mut act_lo: Vec<f64> = Vec::new();
        let mut act_hi: Vec<f64> = Vec::new();
        let last = self.net.layers.len() - 1;
        for (i, layer) in self.net.layers.iter().enumerate() {
            let mut next_lo = Vec::with_capacity(layer.outputs());
            let mut next_hi = Vec::with_capacity(layer.outputs());
            for j in 0..layer.outputs() {
                let w = layer.row(j);
                let (mut lo, mut hi) = (layer.bias[j], layer.bias[j]);
                if i == 0 {
                    for &c in &self.free_columns {
                        let (a, b) = (w[c] * lower[c], w[c] * upper[c]);
                        lo += a.min(b);
                        hi += a.max(b);
                    }
                    for (g, allowed) in self.groups.iter().zip(&allowed_sets) {
                        match allowed {
                            Some(a) => {
                                let (a, b) = g.contribution(w, a);
                                lo += a;
                                hi += b;
                            }
                            None => {
                                for &c in &g.columns {
                                    let (a, b) = (w[c] * lower[c], w[c] * upper[c]);
                                    lo += a.min(b);
                                    hi += a.max(b);
                                }
                            }
                        }
                    }
                } else {
                    for (k, &wk) in w.iter().enumerate() {
                        if wk >= 0.0 {
                            lo += wk * act_lo[k];
                            hi += wk * act_hi[k];
                        } else {
                            lo += wk * act_hi[k];
                            hi += wk * act_lo[k];
                        }
                    }
                }
                let z = self.pre[i][j];
                lo = lo.max(lower[z]);
                hi = hi.min(upper[z]);
                if lo > hi + tol {
                    return false;
                }
                if i < last {
                    let d = self.delta[i][j];
                    let zh = self.post[i][j];
                    let (mut plo, mut phi);
                    if use_delta && upper[d] < 0.5 {
                        if lo > tol {
                            return false;
                        }
                        hi = hi.min(0.0);
                        plo = 0.0;
                        phi = 0.0;
                    } else if use_delta && lower[d] > 0.5 {
                        if hi < -tol {
                            return false;
                        }
                        lo = lo.max(0.0);
                        plo = lo;
                        phi = hi.max(0.0);
                    } else {
                        plo = lo.max(0.0);
                        phi = hi.max(0.0);
                        if use_delta {
                            if lo >= 0.0 {
                                lower[d] = 1.0;
                            } else if hi <= 0.0 {
                                upper[d] = 0.0;
                            }
                        }
                    }
                    plo = plo.max(lower[zh]);
                    phi = phi.min(upper[zh]);
                    if plo > phi + tol {
                        return false;
                    }
                    lower[zh] = plo;
                    upper[zh] = phi.max(plo);
                    next_lo.push(plo);
                    next_hi.push(phi.max(plo));
                }
                lower[z] = lo;
                upper[z] = hi.max(lo);
            }
            act_lo = next_lo;
            act_hi = next_hi;
        }
        self.back_substitution_pass(lower, upper, &allowed_sets, use_delta)
    }

    /// Tightens hidden and output pre-activation bounds with the linear ReLU
    /// relaxation substituted back to the input box.
    fn back_substitution_pass(&self, lower: &mut [f64], upper: &mut [f64], allowed_sets: &[Option<Vec<usize>>], use_delta: bool) -> bool {
        let tol = 1e-9;
        let last = self.net.layers.len() - 1;
        for i in 1..=last {
            for j in 0..self.net.layers[i].outputs() {
                let (lo, hi) = {
                    let range = |w: &[f64], bias: f64| self.input_range(w, bias, lower, upper, allowed_sets);
                    let bound = |k: usize, m: usize| (lower[self.pre[k][m]], upper[self.pre[k][m]]);
                    let (_, ub) = back_substitute(&self.net, &bound, i, j, 1.0, &range);
                    let (_, nlb) = back_substitute(&self.net, &bound, i, j, -1.0, &range);
                    (-nlb, ub)
                };
                let z = self.pre[i][j];
                let lo = lo.max(lower[z]);
                let hi = hi.min(upper[z]);
                if lo > hi + tol {
                    return false;
                }
                lower[z] = lo;
                upper[z] = hi.max(lo);
                if i < last {
                    let (d, zh) = (self.delta[i][j], self.post[i][j]);
                    upper[zh] = upper[zh].min(hi.max(0.0));
                    lower[zh] = lower[zh].max(lo.max(0.0));
                    if lower[zh] > upper[zh] + tol {
                        return false;
                    }
                    upper[zh] = upper[zh].max(lower[zh]);
                    if use_delta {
                        if lo >= 0.0 {
                            lower[d] = 1.0;
                        } else if hi <= 0.0 {
                            upper[d] = 0.0;
                        }
                        if lower[d] > upper[d] {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Range of `w . x + bias` over the input box with discrete groups
    /// restricted to their allowed options.
    fn input_range(&self, w: &[f64], bias: f64, lower: &[f64], upper: &[f64], allowed_sets: &[Option<Vec<usize>>]) -> (f64, f64) {
        let (mut lo, mut hi) = (bias, bias);
        for &c in &self.free_columns {
            let (a, b) = (w[c] * lower[c], w[c] * upper[c]);
            lo += a.min(b);
            hi += a.max(b);
        }
        for (g, allowed) in self.groups.iter().zip(allowed_sets) {
            match allowed {
                Some(a) => {
                    let (a, b) = g.contribution(w, a);
                    lo += a;
                    hi += b;
                }
                None => {
                    for &c in &g.columns {
                        let (a, b) = (w[c] * lower[c], w[c] * upper[c]);
                        lo += a.min(b);
                        hi += a.max(b);
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Full variable assignment for input point `x` (network values from a
    /// forward pass). Variables outside the encoding, and indicators of
    /// neurons sitting exactly at zero, are taken from `fill`.
    pub fn complete(&self, x: &[f64], choices: &[GroupChoice], fill: &[f64]) -> Vec<f64> {
        let mut v = fill.to_vec();
        v[..x.len()].copy_from_slice(x);
        for (g, choice) in self.groups.iter().zip(choices) {
            if let GroupChoice::Option(k) = *choice {
                for (i, &ind) in g.indicators.iter().enumerate() {
                    v[ind] = if i == k { 1.0 } else { 0.0 };
                }
                if let Some(t) = g.integer {
                    v[t] = k as f64;
                }
            }
        }
        let trace = self.net.forward(x).expect("input width matches the encoding");
        let last = self.net.layers.len() - 1;
        for (i, zs) in trace.pre.iter().enumerate() {
            for (j, &z) in zs.iter().enumerate() {
                v[self.pre[i][j]] = z;
                if i < last {
                    v[self.post[i][j]] = trace.post[i][j];
                    let d = self.delta[i][j];
                    v[d] = if z > 0.0 {
                        1.0
                    } else if z < 0.0 {
                        0.0
                    } else {
                        fill[d]
                    };
                }
            }
        }
        v
    }

    /// Input point with every group snapped to `choices`.
    pub fn point_with(&self, base: &[f64], choices: &[GroupChoice]) -> Vec<f64> {
        let mut x = base[..self.input_dim()].to_vec();
        for (g, choice) in self.groups.iter().zip(choices) {
            match *choice {
                GroupChoice::Option(k) => {
                    for (&c, &o) in g.columns.iter().zip(&g.options[k]) {
                        x[c] = o;
                    }
                }
                GroupChoice::Continuous => {
                    for &c in &g.columns {
                        x[c] = x[c].clamp(0.0, 1.0);
                    }
                }
            }
        }
        x
    }

    /// Group choices read from a full variable assignment (largest indicator,
    /// nearest integer).
    pub fn choices_of(&self, values: &[f64]) -> Vec<GroupChoice> {
        self.groups
            .iter()
            .map(|g| {
                if g.is_continuous() {
                    GroupChoice::Continuous
                } else if !g.indicators.is_empty() {
                    let mut best = 0;
                    for (k, &v) in g.indicators.iter().enumerate() {
                        if values[v] > values[g.indicators[best]] {
                            best = k;
                        }
                    }
                    GroupChoice::Option(best)
                } else {
                    let t = g.integer.expect("discrete group without indicators has an integer");
                    GroupChoice::Option(values[t].round().clamp(0.0, (g.options.len() - 1) as f64) as usize)
                }
            })
            .collect()
    }

    /// Encoded input point of a full variable assignment.
    pub fn decode(&self, values: &[f64]) -> EncodedPoint {
        EncodedPoint(self.point_with(values, &self.choices_of(values)))
    }
}

fn groups_for(space: &AssignmentSpace, one_hot_limit: usize) -> Vec<(usize, &SensitiveDomain, bool)> {
    space
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let one_hot = match d {
                SensitiveDomain::Grid { values, .. } => values.len() <= one_hot_limit,
                _ => true,
            };
            (i, d, one_hot)
        })
        .collect()
}

fn layout_group(domain_index: usize, d: &SensitiveDomain) -> SensitiveGroup {
    match d {
        SensitiveDomain::Categorical { start, n, .. } => SensitiveGroup {
            domain: domain_index,
            indicators: vec![],
            integer: None,
            columns: (*start..start + n).collect(),
            options: (0..*n).map(|k| (0..*n).map(|i| f64::from(u8::from(i == k))).collect()).collect(),
        },
        SensitiveDomain::Grid { col, values, .. } => SensitiveGroup {
            domain: domain_index,
            indicators: vec![],
            integer: None,
            columns: vec![*col],
            options: values.iter().map(|&v| vec![v]).collect(),
        },
        SensitiveDomain::Continuous { col, .. } => SensitiveGroup {
            domain: domain_index,
            indicators: vec![],
            integer: None,
            columns: vec![*col],
            options: vec![],
        },
    }
}

/// Bounds for the query box that fixes the nonsensitive prefix of `x` and
/// leaves the sensitive columns free: exact on the first layer, interval
/// arithmetic afterwards, intersected with `global` when given.
pub fn query_bounds(
    net: &NetworkSpec,
    space: &AssignmentSpace,
    x: &EncodedPoint,
    global: Option<&BoundsCache>,
) -> Result<BoundsCache> {
    let d = net.input_dim();
    if x.len() != d {
        return Err(Error::Dimension(format!("point has {} columns, network expects {d}", x.len())));
    }
    let groups: Vec<SensitiveGroup> = space.domains.iter().enumerate().map(|(i, dm)| layout_group(i, dm)).collect();
    let mut sensitive = vec![false; d];
    for g in &groups {
        for &c in &g.columns {
            sensitive[c] = true;
        }
    }
    let mut lo: Vec<f64> = x.0.clone();
    let mut hi: Vec<f64> = x.0.clone();
    for c in 0..d {
        if sensitive[c] {
            lo[c] = 0.0;
            hi[c] = 1.0;
        }
    }
    let mut cache = crate::bounds::interval_bounds(net, &lo, &hi);
    let range = |w: &[f64], bias: f64| -> (f64, f64) {
        let mut a = bias;
        let mut b = bias;
        for c in (0..d).filter(|&c| !sensitive[c]) {
            a += w[c] * x.0[c];
            b += w[c] * x.0[c];
        }
        for g in &groups {
            if g.is_continuous() {
                for &c in &g.columns {
                    a += w[c].min(0.0);
                    b += w[c].max(0.0);
                }
            } else {
                let all: Vec<usize> = (0..g.options.len()).collect();
                let (p, q) = g.contribution(w, &all);
                a += p;
                b += q;
            }
        }
        (a, b)
    };
    let l0 = &net.layers[0];
    for j in 0..l0.outputs() {
        let (a, b) = range(l0.row(j), l0.bias[j]);
        cache.lower[0][j] = cache.lower[0][j].max(a);
        cache.upper[0][j] = cache.upper[0][j].min(b);
    }
    if let Some(g) = global {
        for j in 0..l0.outputs() {
            cache.lower[0][j] = cache.lower[0][j].max(g.lower[0][j]);
            cache.upper[0][j] = cache.upper[0][j].min(g.upper[0][j]);
        }
    }
    for i in 1..net.layers.len() {
        let layer = &net.layers[i];
        let (plo, phi): (Vec<f64>, Vec<f64>) =
            (cache.lower[i - 1].iter().map(|v| v.max(0.0)).collect(), cache.upper[i - 1].iter().map(|v| v.max(0.0)).collect());
        for j in 0..layer.outputs() {
            let (mut a, mut b) = (layer.bias[j], layer.bias[j]);
            for (k, &w) in layer.row(j).iter().enumerate() {
                if w >= 0.0 {
                    a += w * plo[k];
                    b += w * phi[k];
                } else {
                    a += w * phi[k];
                    b += w * plo[k];
                }
            }
            let bound = |k: usize, m: usize| (cache.lower[k][m], cache.upper[k][m]);
            let (_, ub) = back_substitute(net, &bound, i, j, 1.0, &range);
            let (_, nlb) = back_substitute(net, &bound, i, j, -1.0, &range);
            cache.lower[i][j] = a.max(-nlb);
            cache.upper[i][j] = b.min(ub);
        }
        if let Some(g) = global {
            for j in 0..layer.outputs() {
                cache.lower[i][j] = cache.lower[i][j].max(g.lower[i][j]);
                cache.upper[i][j] = cache.upper[i][j].min(g.upper[i][j]);
            }
        }
    }
    Ok(cache)
}

/// Upper bound of `sign * z_i[j]` from the linear ReLU relaxation of every
/// earlier layer, substituted back to the inputs and maximized by `range`.
fn back_substitute(
    net: &NetworkSpec,
    bound: &impl Fn(usize, usize) -> (f64, f64),
    layer: usize,
    j: usize,
    sign: f64,
    range: &impl Fn(&[f64], f64) -> (f64, f64),
) -> (f64, f64) {
    // Linear form over post-activations of layer `layer - 1`.
    let mut coef: Vec<f64> = net.layers[layer].row(j).iter().map(|w| sign * w).collect();
    let mut constant = sign * net.layers[layer].bias[j];
    for k in (0..layer).rev() {
        // Relax the ReLUs of layer k to get a form over z_k.
        for (m, c) in coef.iter_mut().enumerate() {
            let (l, u) = bound(k, m);
            if l >= 0.0 {
                continue;
            }
            if u <= 0.0 {
                *c = 0.0;
                continue;
            }
            let slope = u / (u - l);
            if *c > 0.0 {
                constant -= *c * slope * l;
                *c *= slope;
            } else if u < -l {
                *c = 0.0;
            }
        }
        // Substitute z_k = W_k a_{k-1} + b_k.
        let w = &net.layers[k];
        let mut next = vec![0.0; w.inputs];
        for (m, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            constant += c * w.bias[m];
            for (n, &v) in w.row(m).iter().enumerate() {
                next[n] += c * v;
            }
        }
        coef = next;
    }
    range(&coef, constant)
}

/// Encoding with the default one-hot limit for integer grids.
pub fn encode_network(net: &NetworkSpec, bounds: &BoundsCache, schema: &FeatureSchema, mode: Mode) -> Result<MilpModel> {
    encode_network_with(net, bounds, schema, mode, ONE_HOT_GRID_LIMIT)
}

/// Big-M encoding of `net` over the input box of `bounds`.
pub fn encode_network_with(
    net: &NetworkSpec,
    bounds: &BoundsCache,
    schema: &FeatureSchema,
    mode: Mode,
    one_hot_limit: usize,
) -> Result<MilpModel> {
    let d = net.input_dim();
    if schema.input_dim() != d {
        return Err(Error::Dimension(format!(
            "schema encodes {} columns, network expects {d}",
            schema.input_dim()
        )));
    }
    if bounds.layers() != net.layers.len() || bounds.input_lower.len() != d {
        return Err(Error::Dimension("bounds do not match the network".into()));
    }
    if !bounds.is_finite() || bounds.input_lower.iter().chain(&bounds.input_upper).any(|v| !v.is_finite()) {
        return Err(Error::Milp("unbounded neuron: bounds must be finite".into()));
    }
    let space = schema.assignment_space(mode)?;
    let mut m = MilpModel::new();
    for j in 0..d {
        m.add_var(format!("z_0_{j}"), VarKind::Continuous, bounds.input_lower[j], bounds.input_upper[j]);
    }

    let mut groups = Vec::new();
    let mut in_group = vec![false; d];
    for (i, domain, one_hot) in groups_for(&space, one_hot_limit) {
        let mut g = layout_group(i, domain);
        g.columns.iter().for_each(|&c| in_group[c] = true);
        let feature = domain.feature();
        match domain {
            SensitiveDomain::Categorical { .. } => {
                g.indicators = g.columns.clone();
                for &c in &g.columns {
                    m.vars[c].kind = VarKind::Binary;
                    m.vars[c].lower = m.vars[c].lower.max(0.0);
                    m.vars[c].upper = m.vars[c].upper.min(1.0);
                }
                m.add_constraint(g.columns.iter().map(|&c| (c, 1.0)).collect(), Sense::Eq, 1.0, Role::OneHot);
            }
            SensitiveDomain::Grid { col, values, .. } if one_hot => {
                g.indicators = (0..values.len())
                    .map(|k| m.add_var(format!("s_{feature}_{k}"), VarKind::Binary, 0.0, 1.0))
                    .collect();
                m.add_constraint(g.indicators.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0, Role::OneHot);
                let mut tie = vec![(*col, 1.0)];
                tie.extend(g.indicators.iter().zip(values).map(|(&v, &val)| (v, -val)));
                m.add_constraint(tie, Sense::Eq, 0.0, Role::Tie);
            }
            SensitiveDomain::Grid { col, values, .. } => {
                let step = if values.len() > 1 { values[1] - values[0] } else { 0.0 };
                let t = m.add_var(format!("t_{feature}"), VarKind::Integer, 0.0, (values.len() - 1) as f64);
                g.integer = Some(t);
                m.add_constraint(vec![(*col, 1.0), (t, -step)], Sense::Eq, values[0], Role::Tie);
            }
            SensitiveDomain::Continuous { .. } => {}
        }
        groups.push(g);
    }
    let free_columns: Vec<usize> = (0..d).filter(|&c| !in_group[c]).collect();

    let big_m = bounds.inflated(BIG_M_SLACK);
    let last = net.layers.len() - 1;
    let mut feed: Vec<usize> = (0..d).collect();
    let (mut pre, mut post, mut delta) = (Vec::new(), Vec::new(), Vec::new());
    for (i, layer) in net.layers.iter().enumerate() {
        let n = i + 1;
        let mut zs = Vec::with_capacity(layer.outputs());
        let (mut hs, mut ds) = (Vec::new(), Vec::new());
        for j in 0..layer.outputs() {
            let (l, u) = (big_m.lower[i][j], big_m.upper[i][j]);
            let z = m.add_var(format!("z_{n}_{j}"), VarKind::Continuous, l, u);
            let mut row = vec![(z, 1.0)];
            row.extend(feed.iter().zip(layer.row(j)).filter(|(_, w)| **w != 0.0).map(|(&v, &w)| (v, -w)));
            m.add_constraint(row, Sense::Eq, layer.bias[j], Role::Network);
            zs.push(z);
            if i == last {
                continue;
            }
            let (raw_l, raw_u) = (bounds.lower[i][j], bounds.upper[i][j]);
            if raw_l >= 0.0 {
                let zh = m.add_var(format!("zhat_{n}_{j}"), VarKind::Continuous, 0.0, u.max(0.0));
                let dv = m.add_var(format!("delta_{n}_{j}"), VarKind::Binary, 1.0, 1.0);
                m.add_constraint(vec![(zh, 1.0), (z, -1.0)], Sense::Eq, 0.0, Role::Network);
                hs.push(zh);
                ds.push(dv);
            } else if raw_u <= 0.0 {
                let zh = m.add_var(format!("zhat_{n}_{j}"), VarKind::Continuous, 0.0, 0.0);
                let dv = m.add_var(format!("delta_{n}_{j}"), VarKind::Binary, 0.0, 0.0);
                hs.push(zh);
                ds.push(dv);
            } else {
                let zh = m.add_var(format!("zhat_{n}_{j}"), VarKind::Continuous, 0.0, u);
                let dv = m.add_var(format!("delta_{n}_{j}"), VarKind::Binary, 0.0, 1.0);
                m.add_constraint(vec![(zh, 1.0), (dv, -u)], Sense::Le, 0.0, Role::Network);
                m.add_constraint(vec![(zh, 1.0), (z, -1.0)], Sense::Ge, 0.0, Role::Network);
                m.add_constraint(vec![(zh, 1.0), (z, -1.0), (dv, -l)], Sense::Le, -l, Role::Network);
                hs.push(zh);
                ds.push(dv);
            }
        }
        pre.push(zs);
        if i < last {
            feed = hs.clone();
            post.push(hs);
            delta.push(ds);
        }
    }

    m.direction = Some(Direction::Minimize);
    m.encoding = Some(NetworkEncoding {
        net: net.clone(),
        bounds: big_m,
        space,
        prefix_dim: schema.nonsensitive_dim(),
        pre,
        post,
        delta,
        groups,
        free_columns,
    });
    Ok(m)
}

/// Fixes the nonsensitive prefix of `x` and requires the decision to differ
/// from `label`.
pub fn add_fairness_ce_constraints(m: &mut MilpModel, x: &EncodedPoint, label: u8) -> Result<()> {
    fix_prefix(m, x)?;
    add_flip_constraint(m, label, EPS_STRICT)
}

/// Pins the nonsensitive columns of the model input to those of `x`.
pub fn fix_prefix(m: &mut MilpModel, x: &EncodedPoint) -> Result<()> {
    let enc = m
        .encoding
        .as_ref()
        .ok_or_else(|| Error::Milp("model has no network encoding".into()))?;
    let k = enc.prefix_dim;
    if x.len() != enc.input_dim() {
        return Err(Error::Dimension(format!(
            "point has {} columns, network expects {}",
            x.len(),
            enc.input_dim()
        )));
    }
    for i in 0..k {
        let v = x.0[i];
        m.add_constraint(vec![(i, 1.0)], Sense::Eq, v, Role::Prefix);
        m.vars[i].lower = v;
        m.vars[i].upper = v;
    }
    Ok(())
}

/// Flip row with no margin: `z_n < logit(threshold)` exactly (as the largest
/// float below it) for `label = 1`, `z_n >= logit(threshold)` for `label = 0`.
pub fn add_exact_flip_constraint(m: &mut MilpModel, label: u8) -> Result<()> {
    let enc = m
        .encoding
        .as_ref()
        .ok_or_else(|| Error::Milp("model has no network encoding".into()))?;
    let out = enc.output();
    let t = enc.net.logit_threshold();
    match label {
        1 => m.add_constraint(vec![(out, 1.0)], Sense::Le, t.next_down(), Role::Flip),
        0 => m.add_constraint(vec![(out, 1.0)], Sense::Ge, t, Role::Flip),
        other => return Err(Error::Milp(format!("label must be 0 or 1, got {other}"))),
    }
    Ok(())
}

/// `label = 1`: `z_n <= logit(threshold) - eps`; `label = 0`: `z_n >= logit(threshold)`.
pub fn add_flip_constraint(m: &mut MilpModel, label: u8, eps: f64) -> Result<()> {
    let enc = m
        .encoding
        .as_ref()
        .ok_or_else(|| Error::Milp("model has no network encoding".into()))?;
    let out = enc.output();
    let t = enc.net.logit_threshold();
    match label {
        1 => m.add_constraint(vec![(out, 1.0)], Sense::Le, t - eps, Role::Flip),
        0 => m.add_constraint(vec![(out, 1.0)], Sense::Ge, t, Role::Flip),
        other => return Err(Error::Milp(format!("label must be 0 or 1, got {other}"))),
    }
    Ok(())
}

/// Excludes the binary assignment of `prev`: at least one assignment
/// variable must change.
pub fn add_no_good_cut(m: &mut MilpModel, prev: &[f64]) -> Result<()> {
    let vars = match &m.encoding {
        Some(enc) => {
            if enc.groups.iter().any(|g| g.indicators.is_empty()) {
                return Err(Error::Milp(
                    "no-good cuts need every sensitive feature encoded with binary indicators".into(),
                ));
            }
            enc.assignment_vars()
        }
        None => (0..m.num_vars()).filter(|&j| m.vars[j].kind == VarKind::Binary).collect(),
    };
    if prev.len() != m.num_vars() {
        return Err(Error::Dimension("solution length differs from the model".into()));
    }
    let mut coeffs = Vec::with_capacity(vars.len());
    let mut rhs = 1.0;
    for v in vars {
        let p = prev[v];
        if (p - p.round()).abs() > INT_TOL {
            return Err(Error::Milp(format!("{} is fractional ({p}) in the cut solution", m.vars[v].name)));
        }
        if p.round() == 0.0 {
            coeffs.push((v, 1.0));
        } else {
            coeffs.push((v, -1.0));
            rhs -= 1.0;
        }
    }
    m.add_constraint(coeffs, Sense::Ge, rhs, Role::NoGood);
    Ok(())
}
