//! Pre-activation bounds `[l_i, u_i]` for every neuron over an input box.
//!
//! [`interval_bounds`] is plain interval propagation. [`tighten_bounds`]
//! solves, for each unstable neuron, the min and max of its pre-activation
//! over the triangle relaxation of all earlier ReLUs (one layer-by-layer
//! pass).

use crate::lp::{lp_solve, Direction, LpProblem, LpStatus, Sense};
use crate::network::NetworkSpec;

/// Absolute slack added to bounds before they are used as big-M constants.
pub const BIG_M_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsCache {
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Per layer (hidden layers then the output), lower pre-activation bound.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl BoundsCache {
    pub fn layers(&self) -> usize {
        self.lower.len()
    }

    /// Neuron is provably active over the box.
    pub fn is_active(&self, layer: usize, j: usize) -> bool {
        self.lower[layer][j] >= 0.0
    }

    /// Neuron is provably inactive over the box.
    pub fn is_inactive(&self, layer: usize, j: usize) -> bool {
        self.upper[layer][j] <= 0.0
    }

    pub fn is_unstable(&self, layer: usize, j: usize) -> bool {
        !self.is_active(layer, j) && !self.is_inactive(layer, j)
    }

    /// Number of unstable hidden neurons.
    pub fn unstable_count(&self) -> usize {
        (0..self.layers().saturating_sub(1))
            .map(|i| (0..self.lower[i].len()).filter(|&j| self.is_unstable(i, j)).count())
            .sum()
    }

    /// Elementwise intersection of two sound caches for nested boxes.
    pub fn intersect(&self, other: &BoundsCache) -> BoundsCache {
        let zip = |a: &[Vec<f64>], b: &[Vec<f64>], f: fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect())
                .collect()
        };
        BoundsCache {
            input_lower: other.input_lower.clone(),
            input_upper: other.input_upper.clone(),
            lower: zip(&self.lower, &other.lower, f64::max),
            upper: zip(&self.upper, &other.upper, f64::min),
        }
    }

    /// Copy widened by `slack` on both sides.
    pub fn inflated(&self, slack: f64) -> BoundsCache {
        let mut out = self.clone();
        out.lower.iter_mut().flatten().for_each(|v| *v -= slack);
        out.upper.iter_mut().flatten().for_each(|v| *v += slack);
        out
    }

    /// Whether every recorded bound is finite.
    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.upper).flatten().all(|v| v.is_finite())
    }

    /// Whether `pre` (a forward trace's pre-activations) lies inside the bounds.
    pub fn contains(&self, pre: &[Vec<f64>], tol: f64) -> bool {
        pre.iter().enumerate().all(|(i, z)| {
            z.iter()
                .enumerate()
                .all(|(j, &v)| v >= self.lower[i][j] - tol && v <= self.upper[i][j] + tol)
        })
    }
}

/// Interval propagation of the box `[lower, upper]` through the network.
pub fn interval_bounds(net: &NetworkSpec, lower: &[f64], upper: &[f64]) -> BoundsCache {
    assert_eq!(lower.len(), net.input_dim());
    assert_eq!(upper.len(), net.input_dim());
    let mut lo_act = lower.to_vec();
    let mut hi_act = upper.to_vec();
    let mut out_lo = Vec::with_capacity(net.layers.len());
    let mut out_hi = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mut l = Vec::with_capacity(layer.outputs());
        let mut u = Vec::with_capacity(layer.outputs());
        for j in 0..layer.outputs() {
            let (mut a, mut b) = (layer.bias[j], layer.bias[j]);
            for (k, &w) in layer.row(j).iter().enumerate() {
                if w >= 0.0 {
                    a += w * lo_act[k];
                    b += w * hi_act[k];
                } else {
                    a += w * hi_act[k];
                    b += w * lo_act[k];
                }
            }
            l.push(a);
            u.push(b);
        }
        lo_act = l.iter().map(|v| v.max(0.0)).collect();
        hi_act = u.iter().map(|v| v.max(0.0)).collect();
        out_lo.push(l);
        out_hi.push(u);
    }
    BoundsCache {
        input_lower: lower.to_vec(),
        input_upper: upper.to_vec(),
        lower: out_lo,
        upper: out_hi,
    }
}

/// Variable layout of the triangle relaxation LP up to (excluding) `layer`.
struct RelaxationLp {
    problem: LpProblem,
    /// Post-activation variable of each neuron of the layer feeding `layer`.
    feed: Vec<usize>,
}

fn relaxation_upto(net: &NetworkSpec, cache: &BoundsCache, layer: usize) -> RelaxationLp {
    let mut lower = cache.input_lower.clone();
    let mut upper = cache.input_upper.clone();
    let mut rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = Vec::new();
    let mut feed: Vec<usize> = (0..net.input_dim()).collect();

    for i in 0..layer {
        let l = &net.layers[i];
        let mut next = Vec::with_capacity(l.outputs());
        for j in 0..l.outputs() {
            let (lo, hi) = (cache.lower[i][j], cache.upper[i][j]);
            let z = lower.len();
            lower.push(lo);
            upper.push(hi);
            // z - W row · feed = b
            let mut coeffs = vec![(z, 1.0)];
            coeffs.extend(feed.iter().zip(l.row(j)).filter(|(_, w)| **w != 0.0).map(|(&v, &w)| (v, -w)));
            rows.push((coeffs, Sense::Eq, l.bias[j]));

            if lo >= 0.0 {
                next.push(z);
            } else if hi <= 0.0 {
                let zh = lower.len();
                lower.push(0.0);
                upper.push(0.0);
                next.push(zh);
            } else {
                let zh = lower.len();
                lower.push(0.0);
                upper.push(hi);
                rows.push((vec![(zh, 1.0), (z, -1.0)], Sense::Ge, 0.0));
                // zh <= u (z - l) / (u - l)
                let s = hi / (hi - lo);
                rows.push((vec![(zh, 1.0), (z, -s)], Sense::Le, -s * lo));
                next.push(zh);
            }
        }
        feed = next;
    }
    let mut problem = LpProblem::new(lower, upper, Direction::Minimize);
    for (c, s, r) in rows {
        problem.add(c, s, r);
    }
    RelaxationLp { problem, feed }
}

/// One pass of LP tightening over the triangle relaxation. Never loosens a
/// bound; an LP failure keeps the previous bound for that neuron.
pub fn tighten_bounds(net: &NetworkSpec, cache: &BoundsCache) -> BoundsCache {
    let mut out = cache.clone();
    // The first layer's interval bounds are already exact over a box.
    for layer in 1..net.layers.len() {
        let unstable: Vec<usize> = (0..net.layers[layer].outputs())
            .filter(|&j| out.lower[layer][j] < 0.0 && out.upper[layer][j] > 0.0)
            .collect();
        if unstable.is_empty() {
            continue;
        }
        let RelaxationLp { mut problem, feed } = relaxation_upto(net, &out, layer);
        let l = &net.layers[layer];
        for j in unstable {
            problem.objective.iter_mut().for_each(|c| *c = 0.0);
            for (&v, &w) in feed.iter().zip(l.row(j)) {
                problem.objective[v] += w;
            }
            for (direction, is_lower) in [(Direction::Minimize, true), (Direction::Maximize, false)] {
                problem.direction = direction;
                match lp_solve(&problem) {
                    Ok(sol) if sol.status == LpStatus::Optimal => {
                        let v = sol.objective + l.bias[j];
                        let pad = 1e-9 * (1.0 + v.abs());
                        if is_lower {
                            out.lower[layer][j] = out.lower[layer][j].max(v - pad);
                        } else {
                            out.upper[layer][j] = out.upper[layer][j].min(v + pad);
                        }
                    }
                    Ok(_) => log::warn!("bound LP for neuron ({layer}, {j}) reported infeasible; keeping interval bound"),
                    Err(e) => log::warn!("bound LP for neuron ({layer}, {j}) failed: {e}; keeping interval bound"),
                }
            }
        }
    }
    out
}

/// Interval bounds over `[lower, upper]` followed by one tightening pass.
pub fn compute_bounds(net: &NetworkSpec, lower: &[f64], upper: &[f64]) -> BoundsCache {
    tighten_bounds(net, &interval_bounds(net, lower, upper))
}
