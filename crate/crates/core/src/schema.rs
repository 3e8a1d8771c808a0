//! Tabular feature space: declared features, the sensitive/nonsensitive
//! split, the encoding into the network's numeric input vector and the finite
//! space of sensitive assignments.
//!
//! Encoded layout: every nonsensitive feature first (declaration order), then
//! every sensitive feature (declaration order). Numeric features occupy one
//! min-max scaled column in `[0, 1]`; categorical features are one-hot.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain of a single raw feature.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Categorical(Vec<String>),
    Int { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub sensitive: bool,
}

impl FeatureSpec {
    /// Number of encoded columns this feature occupies.
    pub fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::Categorical(cats) => cats.len(),
            _ => 1,
        }
    }

    fn numeric_range(&self) -> Option<(f64, f64)> {
        match self.kind {
            FeatureKind::Int { lo, hi } => Some((lo as f64, hi as f64)),
            FeatureKind::Real { lo, hi } => Some((lo, hi)),
            FeatureKind::Categorical(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureKind::Categorical(cats) => {
                if cats.is_empty() {
                    return Err(Error::domain(&self.name, "empty category list"));
                }
                let mut seen = HashSet::new();
                for c in cats {
                    if !seen.insert(c.as_str()) {
                        return Err(Error::domain(&self.name, format!("duplicate category `{c}`")));
                    }
                }
            }
            FeatureKind::Int { lo, hi } => {
                if lo > hi {
                    return Err(Error::domain(&self.name, format!("lo {lo} > hi {hi}")));
                }
            }
            FeatureKind::Real { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::domain(&self.name, "non-finite bound"));
                }
                if lo > hi {
                    return Err(Error::domain(&self.name, format!("lo {lo} > hi {hi}")));
                }
            }
        }
        Ok(())
    }
}

/// A raw (decoded) feature value.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Category(String),
    Int(i64),
    Real(f64),
}

impl fmt::Display for RawValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawValue::Category(c) => f.write_str(c),
            RawValue::Int(v) => write!(f, "{v}"),
            RawValue::Real(v) => write!(f, "{v}"),
        }
    }
}

/// Placement of one feature inside the encoded vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpan {
    pub feature: usize,
    pub start: usize,
    pub width: usize,
}

/// A point in encoded space: `d` scaled columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedPoint(pub Vec<f64>);

impl EncodedPoint {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawFeature {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(default)]
    sensitive: bool,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawSchema {
    features: Vec<RawFeature>,
    label: String,
}

/// Declared feature space with its encoded layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    label: String,
    spans: Vec<ColumnSpan>,
    input_dim: usize,
    nonsensitive_dim: usize,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        if names.contains(label.as_str()) {
            return Err(Error::Schema(format!("label `{label}` is also declared as a feature")));
        }
        if !features.iter().any(|f| f.sensitive) {
            return Err(Error::NoSensitiveFeatures);
        }

        let mut spans = vec![
            ColumnSpan {
                feature: 0,
                start: 0,
                width: 0
            };
            features.len()
        ];
        let mut col = 0;
        for sensitive in [false, true] {
            for (i, f) in features.iter().enumerate().filter(|(_, f)| f.sensitive == sensitive) {
                spans[i] = ColumnSpan {
                    feature: i,
                    start: col,
                    width: f.width(),
                };
                col += f.width();
            }
        }
        let nonsensitive_dim = features.iter().filter(|f| !f.sensitive).map(FeatureSpec::width).sum();
        Ok(Self {
            features,
            label,
            spans,
            input_dim: col,
            nonsensitive_dim,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSchema = serde_json::from_str(text)?;
        let mut features = Vec::with_capacity(raw.features.len());
        for rf in raw.features {
            let kind = match rf.kind.as_str() {
                "categorical" => FeatureKind::Categorical(
                    rf.categories
                        .ok_or_else(|| Error::domain(&rf.name, "categorical feature needs `categories`"))?,
                ),
                "int" | "integer" => {
                    let (lo, hi) = numeric_bounds(&rf)?;
                    if lo.fract() != 0.0 || hi.fract() != 0.0 {
                        return Err(Error::domain(&rf.name, "integer bounds must be whole numbers"));
                    }
                    FeatureKind::Int {
                        lo: lo as i64,
                        hi: hi as i64,
                    }
                }
                "real" => {
                    let (lo, hi) = numeric_bounds(&rf)?;
                    FeatureKind::Real { lo, hi }
                }
                other => return Err(Error::domain(&rf.name, format!("unknown kind `{other}`"))),
            };
            features.push(FeatureSpec {
                name: rf.name,
                kind,
                sensitive: rf.sensitive,
            });
        }
        Self::new(features, raw.label)
    }

    pub fn to_json(&self) -> String {
        let features = self
            .features
            .iter()
            .map(|f| {
                let (kind, categories, lo, hi) = match &f.kind {
                    FeatureKind::Categorical(c) => ("categorical", Some(c.clone()), None, None),
                    FeatureKind::Int { lo, hi } => ("int", None, Some(*lo as f64), Some(*hi as f64)),
                    FeatureKind::Real { lo, hi } => ("real", None, Some(*lo), Some(*hi)),
                };
                RawFeature {
                    name: f.name.clone(),
                    kind: kind.to_string(),
                    categories,
                    lo,
                    hi,
                    sensitive: f.sensitive,
                }
            })
            .collect();
        let raw = RawSchema {
            features,
            label: self.label.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("schema serializes")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Encoded width `d`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Encoded width `k` of the nonsensitive prefix.
    pub fn nonsensitive_dim(&self) -> usize {
        self.nonsensitive_dim
    }

    pub fn span(&self, feature: usize) -> ColumnSpan {
        self.spans[feature]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Indices of sensitive features, in encoded (= declaration) order.
    pub fn sensitive_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.features.iter().enumerate().filter(|(_, f)| f.sensitive).map(|(i, _)| i)
    }

    /// Column bounds `[L, U]` of the encoded space (always `[0, 1]`).
    pub fn column_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.input_dim], vec![1.0; self.input_dim])
    }

    /// Parses one raw string into a typed value for `feature`.
    pub fn parse_value(&self, feature: usize, text: &str) -> Result<RawValue> {
        let f = &self.features[feature];
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::domain(&f.name, "missing value"));
        }
        let value = match &f.kind {
            FeatureKind::Categorical(_) => RawValue::Category(text.to_string()),
            FeatureKind::Int { .. } => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::domain(&f.name, format!("`{text}` is not a number")))?;
                if v.fract() != 0.0 {
                    return Err(Error::domain(&f.name, format!("`{text}` is not an integer")));
                }
                RawValue::Int(v as i64)
            }
            FeatureKind::Real { .. } => RawValue::Real(
                text.parse()
                    .map_err(|_| Error::domain(&f.name, format!("`{text}` is not a number")))?,
            ),
        };
        Ok(value)
    }

    /// Encodes raw values given in declaration order.
    pub fn encode_row(&self, raw: &[RawValue]) -> Result<EncodedPoint> {
        if raw.len() != self.features.len() {
            return Err(Error::Dimension(format!(
                "expected {} raw values, got {}",
                self.features.len(),
                raw.len()
            )));
        }
        let mut out = vec![0.0; self.input_dim];
        for (i, (f, v)) in self.features.iter().zip(raw).enumerate() {
            let span = self.spans[i];
            match (&f.kind, v) {
                (FeatureKind::Categorical(cats), RawValue::Category(c)) => {
                    let pos = cats
                        .iter()
                        .position(|k| k == c)
                        .ok_or_else(|| Error::domain(&f.name, format!("unknown category `{c}`")))?;
                    out[span.start + pos] = 1.0;
                }
                (FeatureKind::Int { lo, hi }, RawValue::Int(x)) => {
                    if x < lo || x > hi {
                        return Err(Error::domain(&f.name, format!("{x} outside [{lo}, {hi}]")));
                    }
                    out[span.start] = scale(*x as f64, *lo as f64, *hi as f64);
                }
                (FeatureKind::Real { lo, hi }, RawValue::Real(_) | RawValue::Int(_)) => {
                    let x = match v {
                        RawValue::Real(x) => *x,
                        RawValue::Int(x) => *x as f64,
                        RawValue::Category(_) => unreachable!(),
                    };
                    if !x.is_finite() || x < *lo || x > *hi {
                        return Err(Error::domain(&f.name, format!("{x} outside [{lo}, {hi}]")));
                    }
                    out[span.start] = scale(x, *lo, *hi);
                }
                _ => return Err(Error::domain(&f.name, format!("value `{v}` does not match feature kind"))),
            }
        }
        Ok(EncodedPoint(out))
    }

    /// Inverse of [`encode_row`](Self::encode_row); integer columns snap to
    /// the nearest grid point.
    pub fn decode_point(&self, p: &EncodedPoint) -> Result<Vec<RawValue>> {
        if p.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "expected {} encoded columns, got {}",
                self.input_dim,
                p.len()
            )));
        }
        self.features
            .iter()
            .enumerate()
            .map(|(i, f)| self.decode_feature(i, &p.0[self.spans[i].start..][..f.width()]))
            .collect()
    }

    pub(crate) fn decode_feature(&self, feature: usize, cols: &[f64]) -> Result<RawValue> {
        let f = &self.features[feature];
        Ok(match &f.kind {
            FeatureKind::Categorical(cats) => {
                let (pos, best) = cols
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
                if best < 0.5 {
                    return Err(Error::domain(&f.name, "malformed one-hot group (no column >= 0.5)"));
                }
                RawValue::Category(cats[pos].clone())
            }
            FeatureKind::Int { lo, hi } => {
                let span = (hi - lo) as f64;
                let steps = (cols[0] * span).round() as i64;
                RawValue::Int((lo + steps).clamp(*lo, *hi))
            }
            FeatureKind::Real { lo, hi } => RawValue::Real(lo + cols[0] * (hi - lo)),
        })
    }

    /// The space of sensitive assignments `A(x)` shared by every point with a
    /// given nonsensitive prefix.
    pub fn assignment_space(&self, mode: Mode) -> Result<AssignmentSpace> {
        AssignmentSpace::new(self, mode)
    }
}

fn numeric_bounds(rf: &RawFeature) -> Result<(f64, f64)> {
    match (rf.lo, rf.hi) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => Err(Error::domain(&rf.name, "numeric feature needs `lo` and `hi`")),
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Reads and validates a schema JSON file.
pub fn load_schema(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeatureSchema::from_json(&text)
}

/// How numeric sensitive features are treated when enumerating `A(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Numeric sensitive features are continuous boxes.
    Training,
    /// Numeric sensitive features live on their integer grid (step 1 in raw units).
    Prediction,
}

/// Domain of one sensitive feature inside `A(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitiveDomain {
    /// One-hot group of `n` columns starting at `start`.
    Categorical { feature: usize, start: usize, n: usize },
    /// Integer grid: option `j` sets column `col` to `values[j]`.
    Grid {
        feature: usize,
        col: usize,
        raw: Vec<i64>,
        values: Vec<f64>,
    },
    /// Continuous interval of the scaled column.
    Continuous { feature: usize, col: usize, lo: f64, hi: f64 },
}

impl SensitiveDomain {
    pub fn feature(&self) -> usize {
        match self {
            SensitiveDomain::Categorical { feature, .. }
            | SensitiveDomain::Grid { feature, .. }
            | SensitiveDomain::Continuous { feature, .. } => *feature,
        }
    }

    /// Number of discrete options; `None` for continuous domains.
    pub fn options(&self) -> Option<usize> {
        match self {
            SensitiveDomain::Categorical { n, .. } => Some(*n),
            SensitiveDomain::Grid { values, .. } => Some(values.len()),
            SensitiveDomain::Continuous { .. } => None,
        }
    }

    /// Writes option `j` into the encoded point.
    pub fn apply(&self, point: &mut [f64], j: usize) {
        match self {
            SensitiveDomain::Categorical { start, n, .. } => {
                point[*start..start + n].fill(0.0);
                point[start + j] = 1.0;
            }
            SensitiveDomain::Grid { col, values, .. } => point[*col] = values[j],
            SensitiveDomain::Continuous { .. } => panic!("continuous domain has no discrete options"),
        }
    }

    /// Option index represented by the encoded point, if it lies on the grid.
    pub fn option_of(&self, point: &[f64]) -> Option<usize> {
        match self {
            SensitiveDomain::Categorical { start, n, .. } => {
                let cols = &point[*start..start + n];
                let hot: Vec<usize> = (0..*n).filter(|&j| cols[j] >= 0.5).collect();
                (hot.len() == 1).then(|| hot[0])
            }
            SensitiveDomain::Grid { col, values, .. } => values.iter().position(|v| (v - point[*col]).abs() <= 1e-9),
            SensitiveDomain::Continuous { .. } => None,
        }
    }
}

/// The assignment space `A(x)`: the product of all sensitive domains.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSpace {
    pub mode: Mode,
    pub domains: Vec<SensitiveDomain>,
    size: Option<u64>,
}

impl AssignmentSpace {
    fn new(schema: &FeatureSchema, mode: Mode) -> Result<Self> {
        let mut domains = Vec::new();
        for i in schema.sensitive_features() {
            let f = &schema.features[i];
            let span = schema.spans[i];
            let domain = match (&f.kind, mode) {
                (FeatureKind::Categorical(c), _) => SensitiveDomain::Categorical {
                    feature: i,
                    start: span.start,
                    n: c.len(),
                },
                (FeatureKind::Int { .. } | FeatureKind::Real { .. }, Mode::Training) => SensitiveDomain::Continuous {
                    feature: i,
                    col: span.start,
                    lo: 0.0,
                    hi: 1.0,
                },
                (FeatureKind::Int { .. } | FeatureKind::Real { .. }, Mode::Prediction) => {
                    let (lo, hi) = f.numeric_range().expect("numeric");
                    let first = lo.ceil();
                    let last = hi.floor();
                    if first > last {
                        return Err(Error::domain(&f.name, "no integer grid point inside the domain"));
                    }
                    let count = (last - first) as u64 + 1;
                    if count > (1 << 40) {
                        return Err(Error::SpaceOverflow(format!("feature `{}` has {count} grid points", f.name)));
                    }
                    let raw: Vec<i64> = (0..count).map(|j| first as i64 + j as i64).collect();
                    let values = raw.iter().map(|&r| scale(r as f64, lo, hi)).collect();
                    SensitiveDomain::Grid {
                        feature: i,
                        col: span.start,
                        raw,
                        values,
                    }
                }
            };
            domains.push(domain);
        }
        if domains.is_empty() {
            return Err(Error::NoSensitiveFeatures);
        }
        let mut size: Option<u64> = Some(1);
        for d in &domains {
            size = match (size, d.options()) {
                (Some(s), Some(n)) => Some(
                    s.checked_mul(n as u64)
                        .filter(|&v| v <= 1u64 << 63)
                        .ok_or_else(|| Error::SpaceOverflow("|A(x)| exceeds 2^63".into()))?,
                ),
                _ => None,
            };
        }
        Ok(Self { mode, domains, size })
    }

    /// `|A(x)|`; `None` when some domain is continuous.
    pub fn size(&self) -> Option<u64> {
        self.size
    }

    pub fn is_discrete(&self) -> bool {
        self.size.is_some()
    }

    /// Iterates every assignment as a vector of per-domain option indices
    /// (mixed radix, last domain fastest).
    pub fn iter(&self) -> AssignmentIter {
        let radices: Vec<usize> = self
            .domains
            .iter()
            .map(|d| d.options().expect("assignment iteration needs a discrete space"))
            .collect();
        AssignmentIter {
            done: radices.contains(&0),
            current: vec![0; radices.len()],
            radices,
        }
    }

    /// Copy of `x` with the sensitive columns replaced by `assignment`.
    pub fn apply(&self, x: &EncodedPoint, assignment: &[usize]) -> EncodedPoint {
        let mut p = x.clone();
        for (d, &j) in self.domains.iter().zip(assignment) {
            d.apply(&mut p.0, j);
        }
        p
    }

    /// Option indices of `x`'s own sensitive values, if they lie in the space.
    pub fn assignment_of(&self, x: &EncodedPoint) -> Option<Vec<usize>> {
        self.domains.iter().map(|d| d.option_of(&x.0)).collect()
    }
}

pub struct AssignmentIter {
    radices: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl Iterator for AssignmentIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let mut i = self.radices.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.current[i] += 1;
            if self.current[i] < self.radices[i] {
                break;
            }
            self.current[i] = 0;
        }
        Some(out)
    }
}

/// Labelled rows conforming to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub points: Vec<EncodedPoint>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, points: Vec<EncodedPoint>, labels: Vec<u8>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Dimension("points and labels differ in length".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != schema.input_dim()) {
            return Err(Error::Dimension(format!(
                "row has {} columns, schema expects {}",
                p.len(),
                schema.input_dim()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Schema("labels must be 0 or 1".into()));
        }
        Ok(Self { schema, points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a CSV whose header names match the schema exactly.
    pub fn from_csv(schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(schema, file)
    }

    pub fn from_reader(schema: &FeatureSchema, reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let mut column_of = Vec::with_capacity(schema.features.len());
        for f in &schema.features {
            let pos = header
                .iter()
                .position(|h| h == f.name)
                .ok_or_else(|| Error::Schema(format!("CSV has no column `{}`", f.name)))?;
            column_of.push(pos);
        }
        let label_col = header
            .iter()
            .position(|h| h == schema.label)
            .ok_or_else(|| Error::Schema(format!("CSV has no label column `{}`", schema.label)))?;

        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let row = line + 2;
            let raw = column_of
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    schema
                        .parse_value(i, record.get(c).unwrap_or(""))
                        .map_err(|e| Error::Schema(format!("row {row}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(
                schema
                    .encode_row(&raw)
                    .map_err(|e| Error::Schema(format!("row {row}: {e}")))?,
            );
            let y = match record.get(label_col).map(str::trim) {
                Some("0") => 0,
                Some("1") => 1,
                Some("") | None => return Err(Error::Schema(format!("row {row}: missing label"))),
                Some(other) => return Err(Error::Schema(format!("row {row}: label `{other}` is not 0/1"))),
            };
            labels.push(y);
        }
        Self::new(schema.clone(), points, labels)
    }

    /// Writes the dataset back as CSV (declaration order, label last).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.label);
        w.write_record(&header)?;
        for (p, y) in self.points.iter().zip(&self.labels) {
            let mut rec: Vec<String> = self.schema.decode_point(p)?.iter().map(ToString::to_string).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Deterministic shuffled split: the first `fraction` of a seeded
    /// permutation goes left, the rest right.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Copy with every sensitive column set to zero.
    pub fn mask_sensitive(&self) -> Self {
        let mut out = self.clone();
        let k = self.schema.nonsensitive_dim();
        for p in &mut out.points {
            p.0[k..].fill(0.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn income_sex() -> FeatureSchema {
        FeatureSchema::from_json(
            r#"{"features":[
                {"name":"income","kind":"real","lo":0,"hi":100000},
                {"name":"sex","kind":"categorical","categories":["F","M"],"sensitive":true}
            ],"label":"y"}"#,
        )
        .unwrap()
    }

    #[test]
    fn dims_for_real_plus_binary_categorical() {
        let s = income_sex();
        assert_eq!(s.input_dim(), 3);
        assert_eq!(s.nonsensitive_dim(), 1);
    }

    #[test]
    fn zero_sensitive_features_is_an_error() {
        let err = FeatureSchema::from_json(r#"{"features":[{"name":"a","kind":"real","lo":0,"hi":1}],"label":"y"}"#)
            .unwrap_err();
        assert!(matches!(err, Error::NoSensitiveFeatures));
        assert!(err.to_string().contains("no sensitive features"));
    }

    #[test]
    fn inverted_domain_is_rejected() {
        let err = FeatureSchema::from_json(
            r#"{"features":[{"name":"a","kind":"int","lo":5,"hi":1,"sensitive":true}],"label":"y"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn duplicate_categories_are_rejected() {
        let err = FeatureSchema::from_json(
            r#"{"features":[{"name":"a","kind":"categorical","categories":["x","x"],"sensitive":true}],"label":"y"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn layout_puts_sensitive_columns_last() {
        let s = FeatureSchema::from_json(
            r#"{"features":[
                {"name":"s","kind":"categorical","categories":["a","b"],"sensitive":true},
                {"name":"x","kind":"real","lo":0,"hi":10},
                {"name":"c","kind":"categorical","categories":["p","q","r"]}
            ],"label":"y"}"#,
        )
        .unwrap();
        assert_eq!(s.span(1).start, 0);
        assert_eq!(s.span(2).start, 1);
        assert_eq!(s.span(0).start, 4);
        assert_eq!(s.nonsensitive_dim(), 4);
        assert_eq!(s.input_dim(), 6);
    }

    #[test]
    fn encode_examples() {
        let s = FeatureSchema::from_json(
            r#"{"features":[
                {"name":"r","kind":"real","lo":0,"hi":10},
                {"name":"i","kind":"int","lo":19,"hi":75},
                {"name":"c","kind":"categorical","categories":["A","B","C"],"sensitive":true}
            ],"label":"y"}"#,
        )
        .unwrap();
        let p = s
            .encode_row(&[RawValue::Real(5.0), RawValue::Int(19), RawValue::Category("B".into())])
            .unwrap();
        assert_eq!(p.0, vec![0.5, 0.0, 0.0, 1.0, 0.0]);

        let err = s
            .encode_row(&[RawValue::Real(5.0), RawValue::Int(19), RawValue::Category("Z".into())])
            .unwrap_err();
        assert!(err.to_string().contains("unknown category"));
        let err = s
            .encode_row(&[RawValue::Real(11.0), RawValue::Int(19), RawValue::Category("A".into())])
            .unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn decode_examples() {
        let s = FeatureSchema::from_json(
            r#"{"features":[
                {"name":"r","kind":"real","lo":0,"hi":10},
                {"name":"i","kind":"int","lo":0,"hi":1},
                {"name":"c","kind":"categorical","categories":["A","B","C"],"sensitive":true}
            ],"label":"y"}"#,
        )
        .unwrap();
        let raw = s.decode_point(&EncodedPoint(vec![0.5, 0.499999, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(raw, vec![RawValue::Real(5.0), RawValue::Int(0), RawValue::Category("B".into())]);
        let err = s.decode_point(&EncodedPoint(vec![0.5, 0.0, 0.2, 0.2, 0.2])).unwrap_err();
        assert!(err.to_string().contains("malformed one-hot"));
    }

    #[test]
    fn assignment_space_sizes() {
        let s = FeatureSchema::from_json(
            r#"{"features":[
                {"name":"x","kind":"real","lo":0,"hi":1},
                {"name":"sex","kind":"categorical","categories":["F","M"],"sensitive":true},
                {"name":"foreign","kind":"categorical","categories":["y","n"],"sensitive":true}
            ],"label":"y"}"#,
        )
        .unwrap();
        assert_eq!(s.assignment_space(Mode::Prediction).unwrap().size(), Some(4));

        let s = FeatureSchema::from_json(
            r#"{"features":[
                {"name":"x","kind":"real","lo":0,"hi":1},
                {"name":"age","kind":"int","lo":19,"hi":75,"sensitive":true},
                {"name":"sex","kind":"categorical","categories":["a","b","c","d"],"sensitive":true},
                {"name":"foreign","kind":"categorical","categories":["y","n"],"sensitive":true}
            ],"label":"y"}"#,
        )
        .unwrap();
        let a = s.assignment_space(Mode::Prediction).unwrap();
        assert_eq!(a.size(), Some(57 * 4 * 2));
        assert_eq!(a.iter().count(), 456);
        let t = s.assignment_space(Mode::Training).unwrap();
        assert_eq!(t.size(), None);
        assert!(matches!(t.domains[0], SensitiveDomain::Continuous { .. }));
    }

    #[test]
    fn real_sensitive_feature_is_discretized_for_prediction() {
        let s = FeatureSchema::from_json(
            r#"{"features":[{"name":"age","kind":"real","lo":17.5,"hi":20.2,"sensitive":true}],"label":"y"}"#,
        )
        .unwrap();
        let a = s.assignment_space(Mode::Prediction).unwrap();
        match &a.domains[0] {
            SensitiveDomain::Grid { raw, .. } => assert_eq!(raw, &vec![18, 19, 20]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn huge_space_overflows() {
        let feats: Vec<String> = (0..70)
            .map(|i| format!(r#"{{"name":"s{i}","kind":"categorical","categories":["a","b"],"sensitive":true}}"#))
            .collect();
        let json = format!(r#"{{"features":[{}],"label":"y"}}"#, feats.join(","));
        let s = FeatureSchema::from_json(&json).unwrap();
        assert!(matches!(s.assignment_space(Mode::Prediction), Err(Error::SpaceOverflow(_))));
    }

    #[test]
    fn csv_rejects_missing_values_and_unknown_headers() {
        let s = income_sex();
        let ok = "income,sex,y\n50000,F,1\n0,M,0\n";
        let d = Dataset::from_reader(&s, ok.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.points[0].0, vec![0.5, 1.0, 0.0]);

        let missing = "income,sex,y\n,F,1\n";
        assert!(Dataset::from_reader(&s, missing.as_bytes()).is_err());
        let wrong_case = "Income,sex,y\n1,F,1\n";
        assert!(Dataset::from_reader(&s, wrong_case.as_bytes()).is_err());
        let bad_label = "income,sex,y\n1,F,2\n";
        assert!(Dataset::from_reader(&s, bad_label.as_bytes()).is_err());
    }
}
