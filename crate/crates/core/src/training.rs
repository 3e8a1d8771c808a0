//! BCE pretraining, counterexample-guided retraining and model selection.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{compute_bounds, BoundsCache};
use crate::error::{Error, Result};
use crate::fairness::{verify, verify_max_violation, VerificationOutcome};
use crate::milp::Limits;
use crate::network::{bce, Gradients, NetworkSpec};
use crate::schema::{Dataset, EncodedPoint, FeatureSchema, Mode};

/// Validation points checked for counterexamples after each retraining epoch.
pub const VALIDATION_CE_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    /// Every sampled original plus the counterexamples.
    FullBatch,
    /// Only originals that produced a counterexample, plus those counterexamples.
    CeBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of each batch searched for counterexamples.
    pub rho: f64,
    pub batch_strategy: BatchStrategy,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Per-search solver time limit in milliseconds.
    pub time_limit_ms: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            rho: 1.0,
            batch_strategy: BatchStrategy::FullBatch,
            seed: 0,
            adam: AdamConfig::default(),
            time_limit_ms: Some(60_000),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits {
            time: self.time_limit_ms.map(Duration::from_millis),
            nodes: None,
        }
    }
}

/// Metrics of one epoch. Epoch 0 describes the starting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub val_ce_rate: Option<f64>,
    /// Mean maximum violation over the points searched this epoch.
    pub avg_violation: Option<f64>,
    pub max_violation: Option<f64>,
    pub searched: usize,
    pub counterexamples: usize,
    pub timeouts: usize,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_epoch: usize,
    pub distance: f64,
    /// Distance of every record in `trajectory`, same order.
    pub distances: Vec<f64>,
    pub trajectory: Vec<EpochRecord>,
}

/// Adam state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &NetworkSpec, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut NetworkSpec, g: &Gradients) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            update(&mut layer.weights, &g.weights[i], &mut self.m.weights[i], &mut self.v.weights[i]);
            update(&mut layer.bias, &g.bias[i], &mut self.m.bias[i], &mut self.v.bias[i]);
        }
    }
}

/// Mean loss and gradient over `(point, label)` pairs.
fn batch_gradient<'a>(net: &NetworkSpec, items: impl Iterator<Item = (&'a EncodedPoint, u8)>) -> Result<(f64, Gradients, usize)> {
    let mut g = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut n = 0;
    for (x, y) in items {
        let (l, gi) = net.backward(&x.0, y)?;
        loss += l;
        g.add_scaled(&gi, 1.0);
        n += 1;
    }
    if n > 0 {
        let s = 1.0 / n as f64;
        let zero = Gradients::zeros_like(net);
        let mut scaled = zero;
        scaled.add_scaled(&g, s);
        g = scaled;
        loss *= s;
    }
    Ok((loss, g, n))
}

/// Mean BCE and accuracy of `net` on `data`.
pub fn evaluate(net: &NetworkSpec, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, &y) in data.points.iter().zip(&data.labels) {
        let p = net.probability(&x.0);
        loss += bce(p, y);
        correct += usize::from(net.decide(&x.0)? == y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Column mask of first-layer weights kept at zero during training.
fn zero_columns(net: &mut NetworkSpec, g: Option<&mut Gradients>, frozen: &[bool]) {
    let d = net.input_dim();
    let l0 = &mut net.layers[0];
    for j in 0..l0.outputs() {
        for c in (0..d).filter(|&c| frozen[c]) {
            l0.weights[j * d + c] = 0.0;
        }
    }
    if let Some(g) = g {
        for j in 0..l0.outputs() {
            for c in (0..d).filter(|&c| frozen[c]) {
                g.weights[0][j * d + c] = 0.0;
            }
        }
    }
}

fn check_data(net: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if net.input_dim() != data.schema.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects {} inputs, data has {}",
            net.input_dim(),
            data.schema.input_dim()
        )));
    }
    Ok(())
}

fn pretrain_masked(
    net_init: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
) -> Result<(NetworkSpec, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_data(net_init, train)?;
    let mut net = net_init.clone();
    if let Some(f) = frozen {
        zero_columns(&mut net, None, f);
    }
    let mut adam = Adam::new(&net, cfg.learning_rate, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let score = |net: &NetworkSpec, train_loss: Option<f64>, epoch: usize| -> Result<EpochRecord> {
        let (tl, ta) = evaluate(net, train)?;
        let (vl, va) = if val.is_empty() { (tl, ta) } else { evaluate(net, val)? };
        Ok(EpochRecord {
            epoch,
            loss: train_loss.unwrap_or(tl),
            train_accuracy: ta,
            val_accuracy: va,
            val_loss: vl,
            val_ce_rate: None,
            avg_violation: None,
            max_violation: None,
            searched: 0,
            counterexamples: 0,
            timeouts: 0,
        })
    };
    let mut records = vec![score(&net, None, 0)?];
    let mut best = (records[0].val_loss, net.clone());
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let (loss, mut g, _) = batch_gradient(&net, batch.iter().map(|&i| (&train.points[i], train.labels[i])))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            if let Some(f) = frozen {
                zero_columns(&mut net, Some(&mut g), f);
            }
            adam.step(&mut net, &g);
        }
        let rec = score(&net, Some(total / train.len() as f64), epoch)?;
        if !rec.val_loss.is_finite() || net.layers.iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("pretrain epoch {epoch}: loss {:.4} val acc {:.4}", rec.loss, rec.val_accuracy);
        if rec.val_loss < best.0 {
            best = (rec.val_loss, net.clone());
        }
        records.push(rec);
    }
    Ok((best.1, records))
}

/// Minibatch Adam on clamped BCE. Returns the weights with the lowest
/// validation loss (training loss when `val` is empty), ties to the
/// earliest epoch, along with every epoch's metrics.
pub fn pretrain(net_init: &NetworkSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(NetworkSpec, Vec<EpochRecord>)> {
    pretrain_masked(net_init, train, val, cfg, None)
}

/// Pretraining with every sensitive input column zeroed in the data and
/// held at zero weight, so the result ignores the sensitive features.
pub fn train_blind(net_template: &NetworkSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(NetworkSpec, Vec<EpochRecord>)> {
    let k = train.schema.nonsensitive_dim();
    let frozen: Vec<bool> = (0..train.schema.input_dim()).map(|c| c >= k).collect();
    pretrain_masked(net_template, &train.mask_sensitive(), &val.mask_sensitive(), cfg, Some(&frozen))
}

/// One optimization batch after counterexample augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub originals: Vec<(EncodedPoint, u8)>,
    /// Counterexamples, each with its source sample's label.
    pub counterexamples: Vec<(EncodedPoint, u8)>,
}

/// Combines sampled originals with their counterexamples (`ces[i]` belongs
/// to `sampled[i]`).
pub fn assemble_batch(sampled: &[(EncodedPoint, u8)], ces: &[Option<EncodedPoint>], strategy: BatchStrategy) -> AugmentedBatch {
    let mut originals = Vec::new();
    let mut counterexamples = Vec::new();
    for ((x, y), ce) in sampled.iter().zip(ces) {
        match ce {
            Some(p) => {
                originals.push((x.clone(), *y));
                counterexamples.push((p.clone(), *y));
            }
            None if strategy == BatchStrategy::FullBatch => originals.push((x.clone(), *y)),
            None => {}
        }
    }
    AugmentedBatch {
        originals,
        counterexamples,
    }
}

/// Loss and gradient of an augmented batch: mean BCE over originals plus
/// mean BCE over counterexamples.
pub fn augmented_gradient(net: &NetworkSpec, batch: &AugmentedBatch) -> Result<(f64, Gradients)> {
    let (l1, g1, _) = batch_gradient(net, batch.originals.iter().map(|(x, y)| (x, *y)))?;
    let (l2, g2, _) = batch_gradient(net, batch.counterexamples.iter().map(|(x, y)| (x, *y)))?;
    let mut g = g1;
    g.add_scaled(&g2, 1.0);
    Ok((l1 + l2, g))
}

/// Outcome of the counterexample search for one epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochSearch {
    pub loss: f64,
    pub searched: usize,
    pub counterexamples: usize,
    pub timeouts: usize,
    /// Maximum violation per searched point (0 when fair).
    pub violations: Vec<f64>,
}

/// Sound bounds over the whole encoded input box.
pub fn global_bounds(net: &NetworkSpec, schema: &FeatureSchema) -> BoundsCache {
    let (lo, hi) = schema.column_bounds();
    compute_bounds(net, &lo, &hi)
}

/// One pass of counterexample-guided retraining over shuffled batches.
pub fn ce_fair_epoch(
    net: &mut NetworkSpec,
    train: &Dataset,
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<EpochSearch> {
    let schema = &train.schema;
    let limits = cfg.limits();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(rng);
    let mut out = EpochSearch::default();
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for batch in idx.chunks(cfg.batch_size) {
        let take = ((batch.len() as f64) * cfg.rho).ceil().max(1.0) as usize;
        let picked: Vec<usize> = batch.choose_multiple(rng, take.min(batch.len())).copied().collect();
        let sampled: Vec<(EncodedPoint, u8)> = picked.iter().map(|&i| (train.points[i].clone(), train.labels[i])).collect();
        let bounds = global_bounds(net, schema);
        let snapshot = &*net;
        let outcomes = sampled
            .par_iter()
            .map(|(x, _)| verify_max_violation(snapshot, schema, Some(&bounds), x, Mode::Training, limits))
            .collect::<Result<Vec<_>>>()?;
        let mut ces = Vec::with_capacity(outcomes.len());
        let mut timeouts = 0;
        for o in outcomes {
            match o {
                VerificationOutcome::Counterexample(c) => {
                    out.violations.push(c.violation);
                    ces.push(Some(c.point));
                }
                VerificationOutcome::Fair => {
                    out.violations.push(0.0);
                    ces.push(None);
                }
                VerificationOutcome::Unknown => {
                    timeouts += 1;
                    ces.push(None);
                }
            }
        }
        if timeouts == sampled.len() {
            log::warn!("every counterexample search in a batch timed out; training on originals only");
        }
        out.searched += sampled.len();
        out.timeouts += timeouts;
        let aug = assemble_batch(&sampled, &ces, cfg.batch_strategy);
        out.counterexamples += aug.counterexamples.len();
        if aug.originals.is_empty() && aug.counterexamples.is_empty() {
            continue;
        }
        let (loss, g) = augmented_gradient(net, &aug)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
        weighted += loss * sampled.len() as f64;
        weight += sampled.len();
        adam.step(net, &g);
    }
    out.loss = if weight == 0 { 0.0 } else { weighted / weight as f64 };
    Ok(out)
}

/// Fraction of `points` with a counterexample, ignoring searches that hit
/// a limit. `None` when every search did.
pub fn ce_rate(net: &NetworkSpec, schema: &FeatureSchema, points: &[EncodedPoint], limits: Limits) -> Result<Option<f64>> {
    let bounds = global_bounds(net, schema);
    let outcomes = points
        .par_iter()
        .map(|x| verify(net, schema, Some(&bounds), x, limits))
        .collect::<Result<Vec<_>>>()?;
    let decided: Vec<&VerificationOutcome> = outcomes.iter().filter(|o| **o != VerificationOutcome::Unknown).collect();
    if decided.is_empty() {
        return Ok(None);
    }
    let ce = decided.iter().filter(|o| o.counterexample().is_some()).count();
    Ok(Some(ce as f64 / decided.len() as f64))
}

/// Euclidean distance of `(accuracy, ce_rate)` to `(1, 0)`.
pub fn utopia_distance(accuracy: f64, ce_rate: f64) -> f64 {
    (1.0 - accuracy).hypot(ce_rate)
}

/// Index of the point closest to `(1, 0)`; ties go to the earliest.
pub fn select_nadir(points: &[(f64, f64)]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(acc, ce)) in points.iter().enumerate() {
        let d = utopia_distance(acc, ce);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best
}

fn retrain_record(net: &NetworkSpec, train: &Dataset, val: &Dataset, probe: &[EncodedPoint], limits: Limits, epoch: usize) -> Result<EpochRecord> {
    let (tl, ta) = evaluate(net, train)?;
    let (vl, va) = if val.is_empty() { (tl, ta) } else { evaluate(net, val)? };
    Ok(EpochRecord {
        epoch,
        loss: tl,
        train_accuracy: ta,
        val_accuracy: va,
        val_loss: vl,
        val_ce_rate: ce_rate(net, &train.schema, probe, limits)?,
        avg_violation: None,
        max_violation: None,
        searched: 0,
        counterexamples: 0,
        timeouts: 0,
    })
}

/// Runs `cfg.epochs` retraining epochs and keeps the epoch whose
/// validation `(accuracy, ce_rate)` lies closest to `(1, 0)`. The starting
/// model is recorded as epoch 0 but is not a candidate. `on_epoch` sees
/// every record with the weights after that epoch.
pub fn ce_fair_train(
    net: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &NetworkSpec) -> Result<()>,
) -> Result<(NetworkSpec, SelectionResult)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    check_data(net, train)?;
    let limits = cfg.limits();
    let source = if val.is_empty() { train } else { val };
    let probe: Vec<EncodedPoint> = source.points.iter().take(VALIDATION_CE_CAP).cloned().collect();
    let mut current = net.clone();
    let mut adam = Adam::new(&current, cfg.learning_rate, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = retrain_record(&current, train, val, &probe, limits, 0)?;
    on_epoch(&start, &current)?;
    let mut trajectory = vec![start];
    let mut best: Option<(usize, f64, NetworkSpec)> = None;
    for epoch in 1..=cfg.epochs {
        let search = ce_fair_epoch(&mut current, train, cfg, &mut adam, &mut rng).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { epoch },
            other => other,
        })?;
        let mut rec = retrain_record(&current, train, val, &probe, limits, epoch)?;
        rec.loss = search.loss;
        rec.searched = search.searched;
        rec.counterexamples = search.counterexamples;
        rec.timeouts = search.timeouts;
        if !search.violations.is_empty() {
            rec.avg_violation = Some(search.violations.iter().sum::<f64>() / search.violations.len() as f64);
            rec.max_violation = Some(search.violations.iter().copied().fold(0.0, f64::max));
        }
        log::info!(
            "epoch {epoch}: loss {:.4} val acc {:.4} val ce {:?} ces {}",
            rec.loss,
            rec.val_accuracy,
            rec.val_ce_rate,
            rec.counterexamples
        );
        on_epoch(&rec, &current)?;
        let d = utopia_distance(rec.val_accuracy, rec.val_ce_rate.unwrap_or(1.0));
        if best.as_ref().is_none_or(|(_, b, _)| d < *b) {
            best = Some((epoch, d, current.clone()));
        }
        trajectory.push(rec);
    }
    let (chosen_epoch, distance, chosen) = best.expect("at least one epoch ran");
    let distances = trajectory
        .iter()
        .map(|r| utopia_distance(r.val_accuracy, r.val_ce_rate.unwrap_or(1.0)))
        .collect();
    Ok((
        chosen,
        SelectionResult {
            chosen_epoch,
            distance,
            distances,
            trajectory,
        },
    ))
}
