//! Fully-connected ReLU network with a single logit output.
//!
//! `f(x) = sigmoid(z_n)` and the decision is `1` iff `f(x) >= threshold`,
//! i.e. `z_n >= logit(threshold)`. Hidden layers apply ReLU, the output layer
//! does not.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before taking logs in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
}

impl Layer {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, inputs: usize) -> Result<Self> {
        if inputs == 0 || weights.len() != bias.len() * inputs {
            return Err(Error::Dimension(format!(
                "layer weights have {} entries, expected {}x{}",
                weights.len(),
                bias.len(),
                inputs
            )));
        }
        Ok(Self { weights, bias, inputs })
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weights: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
            inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.inputs + i]
    }

    /// `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs())
            .map(|j| dot(self.row(j), x) + self.bias[j])
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Clamped binary cross-entropy of probability `p` against label `y`.
pub fn bce(p: f64, y: u8) -> f64 {
    if y == 1 {
        -p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
    } else {
        -(1.0 - p).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    pub threshold: f64,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `z_i` for every layer (the last entry is the single output logit).
    pub pre: Vec<Vec<f64>>,
    /// `max(0, z_i)` for hidden layers.
    pub post: Vec<Vec<f64>>,
    pub logit: f64,
    pub probability: f64,
}

/// Gradient with the same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkSpec) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>, threshold: f64) -> Result<Self> {
        let net = Self { layers, threshold };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[1].inputs != pair[0].outputs() {
                return Err(Error::Dimension(format!(
                    "layer {} expects {} inputs but layer {} has {} outputs",
                    i + 1,
                    pair[1].inputs,
                    i,
                    pair[0].outputs()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.outputs() * l.inputs {
                return Err(Error::Dimension(format!("layer {i} weight matrix is ragged")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        if self.layers.last().map(Layer::outputs) != Some(1) {
            return Err(Error::Dimension("final layer must have exactly one output".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// He-uniform initialisation, biases zero.
    pub fn random(widths: &[usize], threshold: f64, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Dimension("widths must end with a single output".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                Layer {
                    weights: (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect(),
                    bias: vec![0.0; fan_out],
                    inputs: fan_in,
                }
            })
            .collect();
        Self::new(layers, threshold)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Widths `t_0, ..., t_n`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    /// `logit(threshold)`: the decision boundary in logit space.
    pub fn logit_threshold(&self) -> f64 {
        logit(self.threshold)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() - 1);
        let mut act = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&act);
            if i < last {
                act = z.iter().map(|v| v.max(0.0)).collect();
                post.push(act.clone());
            }
            pre.push(z);
        }
        let logit = pre[last][0];
        Ok(ForwardTrace {
            pre,
            post,
            logit,
            probability: sigmoid(logit),
        })
    }

    /// Output logit without recording the trace.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            act = layer.affine(&act);
            if i < last {
                act.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        act[0]
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Label of a logit under this network's threshold (boundary goes to 1).
    pub fn label_of_logit(&self, z: f64) -> u8 {
        u8::from(z >= self.logit_threshold())
    }

    pub fn decide(&self, x: &[f64]) -> Result<u8> {
        self.check_input(x)?;
        Ok(self.label_of_logit(self.logit(x)))
    }

    /// Loss and gradient of clamped BCE for one sample.
    pub fn backward(&self, x: &[f64], y: u8) -> Result<(f64, Gradients)> {
        let trace = self.forward(x)?;
        let p = trace.probability;
        let loss = bce(p, y);
        let mut grads = Gradients::zeros_like(self);

        // d loss / d z_n; zero once the clamp is active.
        let clamped = p < PROB_CLAMP || p > 1.0 - PROB_CLAMP;
        let mut delta = vec![if clamped { 0.0 } else { p - y as f64 }];
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 { x } else { &trace.post[i - 1] };
            for (j, &d) in delta.iter().enumerate() {
                grads.bias[i][j] = d;
                let row = &mut grads.weights[i][j * layer.inputs..(j + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, a)| *g = d * a);
            }
            if i > 0 {
                let z_prev = &trace.pre[i - 1];
                delta = (0..layer.inputs)
                    .map(|k| {
                        if z_prev[k] > 0.0 {
                            delta.iter().enumerate().map(|(j, d)| d * layer.weight(j, k)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok((loss, grads))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layers: Vec<LayerFile>,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl From<&NetworkSpec> for ModelFile {
    fn from(net: &NetworkSpec) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                    b: l.bias.clone(),
                })
                .collect(),
            threshold: net.threshold,
        }
    }
}

impl TryFrom<ModelFile> for NetworkSpec {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            let inputs = l.w.first().map_or(0, Vec::len);
            if l.w.len() != l.b.len() || l.w.iter().any(|r| r.len() != inputs) {
                return Err(Error::Dimension(format!("layer {i}: `w` shape does not match `b`")));
            }
            layers.push(Layer::new(l.w.concat(), l.b, inputs)?);
        }
        NetworkSpec::new(layers, file.threshold)
    }
}

pub fn save_model(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkSpec::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn scalar_net() -> NetworkSpec {
        NetworkSpec::new(
            vec![
                Layer::new(vec![1.0], vec![0.0], 1).unwrap(),
                Layer::new(vec![1.0], vec![0.0], 1).unwrap(),
            ],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn relu_kills_negative_input() {
        let t = scalar_net().forward(&[-2.0]).unwrap();
        assert_eq!(t.pre[0], vec![-2.0]);
        assert_eq!(t.post[0], vec![0.0]);
        assert_eq!(t.logit, 0.0);
        assert_eq!(t.probability, 0.5);
    }

    #[test]
    fn positive_input_passes_through() {
        let t = scalar_net().forward(&[3.0]).unwrap();
        assert_eq!(t.logit, 3.0);
        assert_abs_diff_eq!(t.probability, 0.952574126822433, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_net_is_constant() {
        let net = NetworkSpec::new(
            vec![Layer::zeros(4, 3), Layer::new(vec![0.0; 4], vec![-0.7], 4).unwrap()],
            0.5,
        )
        .unwrap();
        let t = net.forward(&[0.3, 0.9, 0.1]).unwrap();
        assert_eq!(t.logit, -0.7);
        assert_abs_diff_eq!(t.probability, sigmoid(-0.7));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(scalar_net().forward(&[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn decide_boundary_and_threshold() {
        let mut net = scalar_net();
        // identity on nonnegative inputs, so the logit equals the input
        assert_eq!(net.decide(&[0.0]).unwrap(), 1);
        assert_eq!(net.label_of_logit(-0.1), 0);
        net.threshold = 0.9;
        assert_eq!(net.label_of_logit(1.0), 0);
        assert_eq!(net.label_of_logit(2.5), 1);
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(bce(0.5, 1), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(bce(1.0, 0), -(1e-12f64).ln(), epsilon = 1e-3);
        assert_abs_diff_eq!(bce(1.0, 0), 27.631021, epsilon = 1e-5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let net = NetworkSpec::random(&[3, 5, 4, 1], 0.5, &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = rng.gen_range(0..2u8);
            let (_, g) = net.backward(&x, y).unwrap();
            let h = 1e-5;
            for li in 0..net.layers.len() {
                for wi in 0..net.layers[li].weights.len() {
                    let mut plus = net.clone();
                    plus.layers[li].weights[wi] += h;
                    let mut minus = net.clone();
                    minus.layers[li].weights[wi] -= h;
                    let fd = (bce(plus.probability(&x), y) - bce(minus.probability(&x), y)) / (2.0 * h);
                    let an = g.weights[li][wi];
                    assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = NetworkSpec::random(&[6, 16, 16, 16, 1], 0.5, &mut rng).unwrap();
        let back = NetworkSpec::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            assert_eq!(net.logit(&x).to_bits(), back.logit(&x).to_bits());
        }
    }

    #[test]
    fn malformed_model_files_are_rejected() {
        let wrong_width = r#"{"layers":[{"w":[[1,2]],"b":[0]},{"w":[[1,1]],"b":[0]}],"threshold":0.5}"#;
        assert!(matches!(NetworkSpec::from_json(wrong_width), Err(Error::Dimension(_))));
        let ragged = r#"{"layers":[{"w":[[1,2],[1]],"b":[0,0]},{"w":[[1,1]],"b":[0]}]}"#;
        assert!(NetworkSpec::from_json(ragged).is_err());
        // JSON has no NaN literal; the parser refuses it outright.
        let nan = r#"{"layers":[{"w":[[NaN]],"b":[0]}],"threshold":0.5}"#;
        assert!(NetworkSpec::from_json(nan).is_err());
        let inf = r#"{"layers":[{"w":[[1e999]],"b":[0]}],"threshold":0.5}"#;
        assert!(NetworkSpec::from_json(inf).is_err());
    }
}
