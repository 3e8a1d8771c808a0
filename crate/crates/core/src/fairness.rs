//! Counterexample search, guaranteed-fair prediction by counting, the
//! enumeration oracle, and per-dataset fairness reports.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsCache;
use crate::error::{Error, Result};
use crate::milp::{
    add_exact_flip_constraint, add_flip_constraint, bnb_solve, encode_network_with, fix_prefix, query_bounds,
    BnbOutcome, Direction, Limits, MilpModel, SolveMode, EPS_STRICT, ONE_HOT_GRID_LIMIT,
};
use crate::network::{sigmoid, NetworkSpec};
use crate::schema::{Dataset, EncodedPoint, FeatureSchema, Mode};

/// Default per-sample solver time limit.
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(60);
/// Default cap on `|A(x)|` for [`enumerate_predict`].
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// A point sharing `x`'s nonsensitive columns with the opposite decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub point: EncodedPoint,
    pub logit: f64,
    pub probability: f64,
    /// `|f(x') - f(x)|` in probability space.
    pub violation: f64,
    /// Decoded sensitive feature values of `x'`, as `(name, value)`.
    pub assignment: Vec<(String, String)>,
}

impl Counterexample {
    /// `name=value` pairs joined by `;`.
    pub fn assignment_text(&self) -> String {
        self.assignment
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerificationOutcome {
    Counterexample(Counterexample),
    /// The search tree was exhausted without a counterexample.
    Fair,
    /// A solver limit was hit first.
    Unknown,
}

impl VerificationOutcome {
    pub fn counterexample(&self) -> Option<&Counterexample> {
        match self {
            VerificationOutcome::Counterexample(c) => Some(c),
            _ => None,
        }
    }
}

/// Result of counting opposite labels over `A(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FairPrediction {
    pub label: u8,
    pub raw_label: u8,
    /// Opposite-label assignments found before stopping.
    pub opposite: usize,
    /// Opposite labels needed to flip.
    pub threshold: usize,
    pub space_size: u64,
    /// First opposite-label point found, if any.
    pub witness: Option<EncodedPoint>,
}

fn ce_model(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    global: Option<&BoundsCache>,
    x: &EncodedPoint,
    mode: Mode,
    one_hot_limit: usize,
) -> Result<MilpModel> {
    let space = schema.assignment_space(mode)?;
    let qb = query_bounds(net, &space, x, global)?;
    let mut m = encode_network_with(net, &qb, schema, mode, one_hot_limit)?;
    fix_prefix(&mut m, x)?;
    Ok(m)
}

/// Re-validates a solver point with a forward pass.
fn recheck(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    x: &EncodedPoint,
    label: u8,
    point: EncodedPoint,
) -> Result<Option<Counterexample>> {
    let k = schema.nonsensitive_dim();
    if point.0[..k] != x.0[..k] || net.decide(&point.0)? == label {
        return Ok(None);
    }
    Ok(Some(counterexample_at(net, schema, x, point)?))
}

fn counterexample_at(net: &NetworkSpec, schema: &FeatureSchema, x: &EncodedPoint, point: EncodedPoint) -> Result<Counterexample> {
    let z = net.logit(&point.0);
    let p = sigmoid(z);
    let raw = schema.decode_point(&point)?;
    let assignment = schema
        .sensitive_features()
        .map(|i| (schema.features()[i].name.clone(), raw[i].to_string()))
        .collect();
    Ok(Counterexample {
        logit: z,
        probability: p,
        violation: (p - net.probability(&x.0)).abs(),
        assignment,
        point,
    })
}

fn check_point(schema: &FeatureSchema, x: &EncodedPoint) -> Result<()> {
    if x.len() != schema.input_dim() {
        return Err(Error::Dimension(format!(
            "point has {} columns, schema expects {}",
            x.len(),
            schema.input_dim()
        )));
    }
    if let Some(v) = x.0.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input point ({v})")));
    }
    Ok(())
}

/// Searches `A(x)` (prediction mode) for any point with the opposite decision.
pub fn verify(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    x: &EncodedPoint,
    limits: Limits,
) -> Result<VerificationOutcome> {
    check_point(schema, x)?;
    let label = net.decide(&x.0)?;
    let base = ce_model(net, schema, bounds, x, Mode::Prediction, ONE_HOT_GRID_LIMIT)?;
    for eps in [EPS_STRICT, EPS_STRICT * 10.0] {
        let mut m = base.clone();
        add_flip_constraint(&mut m, label, eps)?;
        let sol = match bnb_solve(&m, SolveMode::Feasibility, limits)? {
            BnbOutcome::Infeasible => return Ok(VerificationOutcome::Fair),
            BnbOutcome::Feasible(s) | BnbOutcome::Optimal(s) => s,
            BnbOutcome::Timeout(_) => return Ok(VerificationOutcome::Unknown),
            BnbOutcome::Pool(_) | BnbOutcome::Count { .. } => unreachable!("feasibility mode returns no pool"),
        };
        let point = m.encoding.as_ref().expect("encoded").decode(&sol.values);
        if let Some(ce) = recheck(net, schema, x, label, point)? {
            return Ok(VerificationOutcome::Counterexample(ce));
        }
        log::warn!("counterexample failed the forward recheck at eps={eps}");
    }
    Ok(VerificationOutcome::Unknown)
}

/// Counterexample maximizing `|f(x') - f(x)|`: the logit is pushed as far
/// as possible across the threshold.
pub fn verify_max_violation(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    x: &EncodedPoint,
    mode: Mode,
    limits: Limits,
) -> Result<VerificationOutcome> {
    check_point(schema, x)?;
    let label = net.decide(&x.0)?;
    let base = ce_model(net, schema, bounds, x, mode, ONE_HOT_GRID_LIMIT)?;
    let out = base.encoding.as_ref().expect("encoded").output();
    let direction = if label == 0 {
        Direction::Maximize
    } else {
        Direction::Minimize
    };
    for eps in [EPS_STRICT, EPS_STRICT * 10.0] {
        let mut m = base.clone();
        add_flip_constraint(&mut m, label, eps)?;
        m.set_objective(vec![(out, 1.0)], direction);
        let sol = match bnb_solve(&m, SolveMode::Optimize, limits)? {
            BnbOutcome::Infeasible => return Ok(VerificationOutcome::Fair),
            BnbOutcome::Feasible(s) | BnbOutcome::Optimal(s) => s,
            BnbOutcome::Timeout(_) => return Ok(VerificationOutcome::Unknown),
            BnbOutcome::Pool(_) | BnbOutcome::Count { .. } => unreachable!("optimize mode returns no pool"),
        };
        let point = m.encoding.as_ref().expect("encoded").decode(&sol.values);
        if let Some(ce) = recheck(net, schema, x, label, point)? {
            return Ok(VerificationOutcome::Counterexample(ce));
        }
        log::warn!("max-violation counterexample failed the forward recheck at eps={eps}");
    }
    Ok(VerificationOutcome::Unknown)
}

/// Opposite labels needed to flip `raw`. Exact ties go to label 1, so a
/// label-1 prediction needs a strict majority of zeros while a label-0
/// prediction flips once the ones reach half.
pub fn flip_threshold(size: u64, raw: u8) -> u64 {
    if raw == 1 {
        size / 2 + 1
    } else {
        size.div_ceil(2)
    }
}

/// Majority label over `A(x)` with ties going to 1.
pub fn fair_predict(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    x: &EncodedPoint,
    limits: Limits,
) -> Result<u8> {
    fair_predict_detailed(net, schema, bounds, x, limits).map(|p| p.label)
}

/// [`fair_predict`] with the counting details. Returns
/// [`Error::Undecided`] when a limit stops the count early.
pub fn fair_predict_detailed(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    x: &EncodedPoint,
    limits: Limits,
) -> Result<FairPrediction> {
    check_point(schema, x)?;
    let raw = net.decide(&x.0)?;
    let size = schema
        .assignment_space(Mode::Prediction)?
        .size()
        .ok_or_else(|| Error::SpaceOverflow("prediction-mode space is not discrete".into()))?;
    let threshold = usize::try_from(flip_threshold(size, raw))
        .map_err(|_| Error::SpaceOverflow(format!("|A(x)| = {size} is too large to count")))?;
    let mut m = ce_model(net, schema, bounds, x, Mode::Prediction, usize::MAX)?;
    add_exact_flip_constraint(&mut m, raw)?;
    let (opposite, first) = match bnb_solve(&m, SolveMode::Count(threshold), limits)? {
        BnbOutcome::Count { count, first, .. } => (count, first),
        BnbOutcome::Infeasible => (0, None),
        BnbOutcome::Timeout(_) => return Err(Error::Undecided),
        _ => unreachable!("count mode returns a count"),
    };
    let enc = m.encoding.as_ref().expect("encoded");
    Ok(FairPrediction {
        label: if opposite >= threshold { 1 - raw } else { raw },
        raw_label: raw,
        opposite,
        threshold,
        space_size: size,
        witness: first.map(|s| enc.decode(&s.values)),
    })
}

/// Majority label over `A(x)` by a forward pass on every assignment.
pub fn enumerate_predict(net: &NetworkSpec, schema: &FeatureSchema, x: &EncodedPoint, cap: u64) -> Result<u8> {
    check_point(schema, x)?;
    let space = schema.assignment_space(Mode::Prediction)?;
    let size = space
        .size()
        .ok_or_else(|| Error::SpaceOverflow("prediction-mode space is not discrete".into()))?;
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    let (mut ones, mut zeros) = (0u64, 0u64);
    for a in space.iter() {
        if net.decide(&space.apply(x, &a).0)? == 1 {
            ones += 1;
        } else {
            zeros += 1;
        }
    }
    Ok(u8::from(ones >= zeros))
}

/// Which decision function an audit scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// The network's own thresholded output.
    Raw,
    /// The counting post-processor over the network.
    Fair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub predictor: Predictor,
    pub limits: Limits,
    /// Also compute the maximum violation of each sample.
    pub max_violation: bool,
    /// Record wall-clock times; when false every time is 0.
    pub timing: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            predictor: Predictor::Raw,
            limits: Limits::time(DEFAULT_TIME_LIMIT),
            max_violation: false,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    /// Verification hit a limit.
    Unknown,
    /// Fair prediction hit a limit.
    Undecided,
}

impl SampleStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleStatus::Ok => "ok",
            SampleStatus::Unknown => "unknown",
            SampleStatus::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub true_label: u8,
    pub raw_label: u8,
    pub fair_label: Option<u8>,
    /// The audited predictor has a counterexample at this sample.
    pub has_ce: Option<bool>,
    /// The audited predictor disagrees with the fair post-processor.
    pub flipped: Option<bool>,
    pub violation: Option<f64>,
    pub solve_ms: f64,
    /// Time spent in fair prediction alone.
    pub predict_ms: f64,
    pub status: SampleStatus,
    pub counterexample: Option<Counterexample>,
}

impl SampleRecord {
    fn predicted(&self, predictor: Predictor) -> Option<u8> {
        match predictor {
            Predictor::Raw => Some(self.raw_label),
            Predictor::Fair => self.fair_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub predictor: Predictor,
    pub samples: usize,
    /// Samples counted in the rates.
    pub decided: usize,
    pub unknown: usize,
    pub undecided: usize,
    pub ce_rate: f64,
    pub flip_rate: f64,
    /// Accuracy of the audited predictor.
    pub accuracy: f64,
    pub raw_accuracy: f64,
    pub fair_accuracy: f64,
    /// Mean over decided samples, 0 for samples without a counterexample.
    pub avg_violation: Option<f64>,
    pub max_violation: Option<f64>,
    pub solve_ms_total: f64,
    pub predict_ms_total: f64,
    pub records: Vec<SampleRecord>,
}

fn elapsed_ms(start: Instant, timing: bool) -> f64 {
    if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn audit_sample(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    id: usize,
    x: &EncodedPoint,
    y: u8,
    cfg: &AuditConfig,
) -> Result<(SampleRecord, SampleRecord)> {
    let start = Instant::now();
    let raw = net.decide(&x.0)?;
    let mut rec = SampleRecord {
        sample_id: id,
        true_label: y,
        raw_label: raw,
        fair_label: None,
        has_ce: None,
        flipped: None,
        violation: None,
        solve_ms: 0.0,
        predict_ms: 0.0,
        status: SampleStatus::Ok,
        counterexample: None,
    };
    let t = Instant::now();
    let fair = match fair_predict(net, schema, bounds, x, cfg.limits) {
        Ok(h) => h,
        Err(Error::Undecided) => {
            rec.status = SampleStatus::Undecided;
            rec.solve_ms = elapsed_ms(start, cfg.timing);
            return Ok((rec.clone(), rec));
        }
        Err(e) => return Err(e),
    };
    rec.predict_ms = elapsed_ms(t, cfg.timing);
    rec.fair_label = Some(fair);
    let mut post = rec.clone();
    // The post-processor is its own fair version.
    post.flipped = Some(false);
    rec.flipped = Some(fair != raw);
    match verify(net, schema, bounds, x, cfg.limits)? {
        VerificationOutcome::Unknown => {
            rec.status = SampleStatus::Unknown;
            post.status = SampleStatus::Unknown;
        }
        VerificationOutcome::Fair => {
            rec.has_ce = Some(false);
            post.has_ce = Some(false);
        }
        VerificationOutcome::Counterexample(ce) => {
            rec.has_ce = Some(true);
            // Empirical check: the post-processor at the network's
            // counterexample must agree with its value at x.
            match fair_predict(net, schema, bounds, &ce.point, cfg.limits) {
                Ok(h) => {
                    post.has_ce = Some(h != fair);
                    if h != fair {
                        post.counterexample = Some(ce.clone());
                    }
                }
                Err(Error::Undecided) => post.status = SampleStatus::Undecided,
                Err(e) => return Err(e),
            }
            rec.counterexample = Some(ce);
        }
    }
    if cfg.max_violation && rec.status == SampleStatus::Ok {
        match verify_max_violation(net, schema, bounds, x, Mode::Prediction, cfg.limits)? {
            VerificationOutcome::Unknown => rec.status = SampleStatus::Unknown,
            VerificationOutcome::Fair => rec.violation = Some(0.0),
            VerificationOutcome::Counterexample(ce) => {
                rec.violation = Some(ce.violation);
                rec.counterexample = Some(ce);
            }
        }
    }
    if cfg.max_violation && post.status == SampleStatus::Ok {
        post.violation = Some(if post.has_ce == Some(true) { 1.0 } else { 0.0 });
    }
    rec.solve_ms = elapsed_ms(start, cfg.timing);
    post.solve_ms = rec.solve_ms;
    Ok((rec, post))
}

/// Per-sample verification and fair prediction over `data`, in parallel on
/// the current rayon pool. Records keep the dataset order.
pub fn audit(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    data: &Dataset,
    cfg: &AuditConfig,
) -> Result<FairnessReport> {
    let (raw, fair) = audit_pair(net, schema, bounds, data, cfg)?;
    Ok(match cfg.predictor {
        Predictor::Raw => raw,
        Predictor::Fair => fair,
    })
}

/// Reports for the network and for its fair post-processor from a single
/// pass of solves. `cfg.predictor` is ignored.
pub fn audit_pair(
    net: &NetworkSpec,
    schema: &FeatureSchema,
    bounds: Option<&BoundsCache>,
    data: &Dataset,
    cfg: &AuditConfig,
) -> Result<(FairnessReport, FairnessReport)> {
    if net.input_dim() != schema.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects {} inputs, schema encodes {}",
            net.input_dim(),
            schema.input_dim()
        )));
    }
    let pairs = data
        .points
        .par_iter()
        .zip(data.labels.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| audit_sample(net, schema, bounds, i, x, y, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (raw, fair): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((summarize(Predictor::Raw, raw), summarize(Predictor::Fair, fair)))
}

/// Aggregates per-sample records into a report.
pub fn summarize(predictor: Predictor, records: Vec<SampleRecord>) -> FairnessReport {
    let decided: Vec<&SampleRecord> = records.iter().filter(|r| r.status == SampleStatus::Ok).collect();
    let n = decided.len();
    let rate = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let ce = decided.iter().filter(|r| r.has_ce == Some(true)).count();
    let flips = decided.iter().filter(|r| r.flipped == Some(true)).count();
    let correct = |p: Predictor| decided.iter().filter(|r| r.predicted(p) == Some(r.true_label)).count();
    let violations: Vec<f64> = decided.iter().filter_map(|r| r.violation).collect();
    let (avg_violation, max_violation) = if violations.is_empty() {
        (None, None)
    } else {
        (
            Some(violations.iter().sum::<f64>() / violations.len() as f64),
            Some(violations.iter().copied().fold(0.0, f64::max)),
        )
    };
    FairnessReport {
        predictor,
        samples: records.len(),
        decided: n,
        unknown: records.iter().filter(|r| r.status == SampleStatus::Unknown).count(),
        undecided: records.iter().filter(|r| r.status == SampleStatus::Undecided).count(),
        ce_rate: rate(ce),
        flip_rate: rate(flips),
        accuracy: rate(correct(predictor)),
        raw_accuracy: rate(correct(Predictor::Raw)),
        fair_accuracy: rate(correct(Predictor::Fair)),
        avg_violation,
        max_violation,
        solve_ms_total: records.iter().map(|r| r.solve_ms).sum(),
        predict_ms_total: records.iter().map(|r| r.predict_ms).sum(),
        records,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl FairnessReport {
    /// Per-sample CSV: `sample_id, raw_label, fair_label, has_ce, flipped,
    /// violation, solve_ms, status`, plus the decoded counterexample.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sample_id",
            "raw_label",
            "fair_label",
            "has_ce",
            "flipped",
            "violation",
            "solve_ms",
            "status",
            "ce_assignment",
        ])?;
        for r in &self.records {
            w.write_record([
                r.sample_id.to_string(),
                r.raw_label.to_string(),
                opt(r.fair_label),
                opt(r.has_ce),
                opt(r.flipped),
                opt(r.violation),
                format!("{:.3}", r.solve_ms),
                r.status.as_str().to_string(),
                r.counterexample.as_ref().map(Counterexample::assignment_text).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use crate::schema::{FeatureKind, FeatureSpec, RawValue};

    fn one_real_one_flag(sensitive_kind: FeatureKind) -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec {
                    name: "a".into(),
                    kind: FeatureKind::Real { lo: 0.0, hi: 1.0 },
                    sensitive: false,
                },
                FeatureSpec {
                    name: "s".into(),
                    kind: sensitive_kind,
                    sensitive: true,
                },
            ],
            "y",
        )
        .unwrap()
    }

    fn linear(w: Vec<f64>, b: f64) -> NetworkSpec {
        let d = w.len();
        NetworkSpec::new(vec![Layer::new(w, vec![b], d).unwrap()], 0.5).unwrap()
    }

    #[test]
    fn thresholds_send_ties_to_one() {
        assert_eq!(flip_threshold(2, 1), 2);
        assert_eq!(flip_threshold(2, 0), 1);
        assert_eq!(flip_threshold(3, 1), 2);
        assert_eq!(flip_threshold(3, 0), 2);
        assert_eq!(flip_threshold(456, 1), 229);
        assert_eq!(flip_threshold(456, 0), 228);
    }

    #[test]
    fn constructed_flip_and_blind_net() {
        let schema = one_real_one_flag(FeatureKind::Int { lo: 0, hi: 1 });
        let x = schema.encode_row(&[RawValue::Real(0.3), RawValue::Int(0)]).unwrap();
        let unfair = linear(vec![0.0, 10.0], -5.0);
        let out = verify(&unfair, &schema, None, &x, Limits::none()).unwrap();
        let ce = out.counterexample().expect("flip exists");
        assert_eq!(ce.assignment, vec![("s".to_string(), "1".to_string())]);
        assert_eq!(ce.point.0[0], 0.3);
        let blind = linear(vec![3.0, 0.0], -1.0);
        assert_eq!(verify(&blind, &schema, None, &x, Limits::none()).unwrap(), VerificationOutcome::Fair);
    }

    #[test]
    fn max_violation_closed_form() {
        let schema = one_real_one_flag(FeatureKind::Real { lo: 0.0, hi: 1.0 });
        let x = schema.encode_row(&[RawValue::Real(0.5), RawValue::Real(0.0)]).unwrap();
        let net = linear(vec![0.0, 8.0], -4.0);
        let out = verify_max_violation(&net, &schema, None, &x, Mode::Training, Limits::none()).unwrap();
        let ce = out.counterexample().expect("flip exists");
        let expected = sigmoid(4.0) - sigmoid(-4.0);
        assert!((ce.violation - expected).abs() < 1e-9, "{}", ce.violation);
        assert!((expected - 0.96403).abs() < 1e-5);
        assert!((ce.point.0[1] - 1.0).abs() < 1e-9);
        let always_one = linear(vec![0.0, 4.0], 0.0);
        assert_eq!(
            verify_max_violation(&always_one, &schema, None, &x, Mode::Training, Limits::none()).unwrap(),
            VerificationOutcome::Fair
        );
    }

    #[test]
    fn majority_and_tie() {
        // s in {0,1,2}: logit positive for s >= 1, so labels {0,1,1}.
        let schema = one_real_one_flag(FeatureKind::Int { lo: 0, hi: 2 });
        let net = linear(vec![0.0, 4.0], -1.0);
        let x = schema.encode_row(&[RawValue::Real(0.1), RawValue::Int(0)]).unwrap();
        assert_eq!(net.decide(&x.0).unwrap(), 0);
        assert_eq!(fair_predict(&net, &schema, None, &x, Limits::none()).unwrap(), 1);
        assert_eq!(enumerate_predict(&net, &schema, &x, ENUMERATION_CAP).unwrap(), 1);
        // Binary s with labels {0,1}: a tie goes to 1 from either side.
        let schema = one_real_one_flag(FeatureKind::Int { lo: 0, hi: 1 });
        let net = linear(vec![0.0, 4.0], -2.0);
        for s in 0..2 {
            let x = schema.encode_row(&[RawValue::Real(0.1), RawValue::Int(s)]).unwrap();
            assert_eq!(fair_predict(&net, &schema, None, &x, Limits::none()).unwrap(), 1);
            assert_eq!(enumerate_predict(&net, &schema, &x, ENUMERATION_CAP).unwrap(), 1);
        }
    }

    #[test]
    fn enumeration_cap() {
        let schema = one_real_one_flag(FeatureKind::Int { lo: 0, hi: 9 });
        let net = linear(vec![1.0, 1.0], 0.0);
        let x = schema.encode_row(&[RawValue::Real(0.1), RawValue::Int(0)]).unwrap();
        assert!(matches!(
            enumerate_predict(&net, &schema, &x, 5),
            Err(Error::CapExceeded { size: 10, cap: 5 })
        ));
    }

    #[test]
    fn report_invariants_and_csv() {
        let schema = one_real_one_flag(FeatureKind::Int { lo: 0, hi: 1 });
        let net = linear(vec![1.0, 3.0], -2.0);
        let rows: Vec<EncodedPoint> = [(0.1, 0), (0.9, 0), (0.9, 1), (0.2, 1)]
            .iter()
            .map(|&(a, s)| schema.encode_row(&[RawValue::Real(a), RawValue::Int(s)]).unwrap())
            .collect();
        let data = Dataset::new(schema.clone(), rows, vec![0, 1, 1, 0]).unwrap();
        let cfg = AuditConfig {
            max_violation: true,
            timing: false,
            ..AuditConfig::default()
        };
        let raw = audit(&net, &schema, None, &data, &cfg).unwrap();
        assert!(raw.flip_rate <= raw.ce_rate);
        assert!(raw.ce_rate > 0.0);
        let fair = audit(&net, &schema, None, &data, &AuditConfig { predictor: Predictor::Fair, ..cfg }).unwrap();
        assert_eq!(fair.ce_rate, 0.0);
        assert_eq!(fair.flip_rate, 0.0);
        let mut buf = Vec::new();
        raw.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample_id,raw_label,fair_label,has_ce,flipped,violation,solve_ms,status"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("s="));
    }
}
