//! Small feed-forward classifier with hand-written backpropagation.
//!
//! Parameters are laid out layer by layer (see [`ParamVector`]). The loss is
//! mean softmax cross-entropy. All sums run row-major, left to right, so a
//! given input produces the same bits on every run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{LayerShape, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Hidden layer widths. Empty means softmax regression.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 2,
            hidden_dims: vec![32],
            num_classes: 4,
            activation: Activation::Relu,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "must be at least 2"));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::config("model.hidden", "hidden widths must be at least 1"));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2)
            .map(|w| LayerShape {
                rows: w[1],
                cols: w[0],
            })
            .collect()
    }
}

/// Row-major inputs with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("batch dimension must be positive".into()));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::Dimension(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch {
            dim,
            inputs,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Batch {
            dim,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.inputs.extend_from_slice(row);
        self.labels.push(label);
    }

    /// Rows at `indices`, in that order; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut out = Batch::empty(self.dim);
        out.inputs.reserve(indices.len() * self.dim);
        out.labels.reserve(indices.len());
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub ppl: f64,
    pub accuracy: f64,
}

/// The classifier. Holds only the architecture; parameters live outside.
#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    shapes: Vec<LayerShape>,
}

/// Per-row forward state kept for backpropagation.
struct Trace {
    /// Pre-activations of every layer; the last entry holds the logits.
    pre: Vec<Vec<f64>>,
    /// Post-activations of hidden layers, with the input at index 0.
    post: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        Ok(Mlp { config, shapes })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn num_params(&self) -> usize {
        self.shapes.iter().map(LayerShape::len).sum()
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(&self.shapes)
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    ///
    /// Draws come from ChaCha8 seeded with `seed`, consumed layer by layer in
    /// storage order.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = self.zeros();
        for (i, shape) in self.shapes.iter().enumerate() {
            let bound = (6.0 / (shape.cols + shape.rows) as f64).sqrt();
            let (w, _) = params.layer_mut(i);
            for v in w.iter_mut() {
                let u: f64 = rng.random();
                *v = (2.0 * u - 1.0) * bound;
            }
        }
        params
    }

    fn check(&self, params: &ParamVector, batch: &Batch) -> Result<()> {
        if params.shapes() != self.shapes.as_slice() {
            return Err(Error::Dimension(format!(
                "parameter vector of {} values does not match a model with {} parameters",
                params.len(),
                self.num_params()
            )));
        }
        if batch.dim() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "batch rows have {} features, model expects {}",
                batch.dim(),
                self.config.input_dim
            )));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= self.config.num_classes) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {} classes",
                self.config.num_classes
            )));
        }
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        Ok(())
    }

    fn forward_row(&self, params: &ParamVector, x: &[f64]) -> Trace {
        let depth = self.shapes.len();
        let mut pre = Vec::with_capacity(depth);
        let mut post = Vec::with_capacity(depth);
        post.push(x.to_vec());
        for (l, shape) in self.shapes.iter().enumerate() {
            let (w, b) = params.layer(l);
            let input = &post[l];
            let mut z = Vec::with_capacity(shape.rows);
            for r in 0..shape.rows {
                let row = &w[r * shape.cols..(r + 1) * shape.cols];
                let mut acc = b[r];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                z.push(acc);
            }
            if l + 1 < depth {
                let a = z.iter().map(|&v| self.config.activation.apply(v)).collect();
                post.push(a);
            }
            pre.push(z);
        }
        Trace { pre, post }
    }

    /// Raw class scores for one input row.
    pub fn logits(&self, params: &ParamVector, x: &[f64]) -> Vec<f64> {
        self.forward_row(params, x).pre.pop().unwrap_or_default()
    }

    pub fn forward_loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let logits = self.logits(params, batch.row(i));
            total += row_cross_entropy(&logits, batch.label(i));
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and its exact gradient.
    pub fn backward(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let n = batch.len() as f64;
        let depth = self.shapes.len();
        let mut grad = params.zeros_like();
        let mut total = 0.0;
        for i in 0..batch.len() {
            let trace = self.forward_row(params, batch.row(i));
            let logits = &trace.pre[depth - 1];
            let label = batch.label(i);
            total += row_cross_entropy(logits, label);

            // d(loss_i / n) / d logits = (softmax - onehot) / n
            let mut delta = softmax(logits);
            delta[label] -= 1.0;
            for d in &mut delta {
                *d /= n;
            }

            for l in (0..depth).rev() {
                let shape = self.shapes[l];
                let input = &trace.post[l];
                let prev_delta = if l > 0 {
                    let (w, _) = params.layer(l);
                    let act = self.config.activation;
                    let mut back = vec![0.0; shape.cols];
                    for (r, d) in delta.iter().enumerate() {
                        let row = &w[r * shape.cols..(r + 1) * shape.cols];
                        for (c, wv) in row.iter().enumerate() {
                            back[c] += wv * d;
                        }
                    }
                    for (c, v) in back.iter_mut().enumerate() {
                        *v *= act.derivative(trace.pre[l - 1][c], input[c]);
                    }
                    Some(back)
                } else {
                    None
                };

                let (gw, gb) = grad.layer_mut(l);
                for (r, d) in delta.iter().enumerate() {
                    let row = &mut gw[r * shape.cols..(r + 1) * shape.cols];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    gb[r] += d;
                }
                match prev_delta {
                    Some(p) => delta = p,
                    None => break,
                }
            }
        }
        Ok((total / n, grad))
    }

    /// Central-difference gradient of [`Mlp::forward_loss`].
    pub fn finite_diff_grad(&self, params: &ParamVector, batch: &Batch, h: f64) -> Result<ParamVector> {
        self.check(params, batch)?;
        if !(h > 0.0) {
            return Err(Error::Argument(format!("finite-difference step must be positive, got {h}")));
        }
        let mut probe = params.clone();
        let values = finite_diff(
            |theta| {
                probe.values_mut().copy_from_slice(theta);
                self.forward_loss(&probe, batch).expect("shape checked above")
            },
            params.values(),
            h,
        );
        ParamVector::from_values(&self.shapes, values)
    }

    /// Loss, perplexity proxy `exp(loss)` and accuracy over a dataset.
    ///
    /// Ties in the argmax resolve to the lowest class index.
    pub fn eval_metrics(&self, params: &ParamVector, dataset: &Batch) -> Result<EvalMetrics> {
        if dataset.is_empty() {
            return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
        }
        self.check(params, dataset)?;
        let mut total = 0.0;
        let mut correct = 0usize;
        for i in 0..dataset.len() {
            let logits = self.logits(params, dataset.row(i));
            total += row_cross_entropy(&logits, dataset.label(i));
            if argmax(&logits) == dataset.label(i) {
                correct += 1;
            }
        }
        let loss = total / dataset.len() as f64;
        Ok(EvalMetrics {
            loss,
            ppl: loss.exp(),
            accuracy: correct as f64 / dataset.len() as f64,
        })
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z {
        s += (v - max).exp();
    }
    max + s.ln()
}

fn row_cross_entropy(logits: &[f64], label: usize) -> f64 {
    // lse >= z_label, clamp away the last-ulp negative
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Max-norm relative error `|a - b|_inf / max(|a|_inf, |b|_inf)`.
///
/// Returns the absolute error when both vectors are (near) zero.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn softmax_regression(input_dim: usize, classes: usize) -> Mlp {
        Mlp::new(MlpConfig {
            input_dim,
            hidden_dims: vec![],
            num_classes: classes,
            activation: Activation::Relu,
        })
        .unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize, n: usize) -> Batch {
        let inputs = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(dim, inputs, labels).unwrap()
    }

    #[test]
    fn init_biases_are_zero_and_deterministic() {
        let mlp = softmax_regression(3, 4);
        let a = mlp.init_params(0);
        let b = mlp.init_params(0);
        assert_eq!(a, b);
        let (_, bias) = a.layer(0);
        assert!(bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mlp = Mlp::new(MlpConfig {
            input_dim: 2,
            hidden_dims: vec![8],
            num_classes: 4,
            activation: Activation::Relu,
        })
        .unwrap();
        let p = mlp.init_params(7);
        let bound = (6.0f64 / 10.0).sqrt();
        let (w0, _) = p.layer(0);
        assert_eq!(w0.len(), 16);
        assert!(w0.iter().all(|v| v.abs() <= bound));
        assert!(w0.iter().any(|v| *v != 0.0));
        let (w1, _) = p.layer(1);
        let bound1 = (6.0f64 / 12.0).sqrt();
        assert!(w1.iter().all(|v| v.abs() <= bound1));
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp4 = Mlp::new(MlpConfig::default()).unwrap();
        let batch = random_batch(&mut rng, 2, 4, 9);
        let loss = mlp4.forward_loss(&mlp4.zeros(), &batch).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-15);

        let mlp2 = softmax_regression(2, 2);
        let batch = random_batch(&mut rng, 2, 2, 5);
        let loss = mlp2.forward_loss(&mlp2.zeros(), &batch).unwrap();
        assert_abs_diff_eq!(loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn biased_logit_loss_matches_hand_softmax() {
        let mlp = softmax_regression(1, 2);
        let mut p = mlp.zeros();
        p.layer_mut(0).1.copy_from_slice(&[5.0, 0.0]);
        let batch = Batch::new(1, vec![0.3], vec![0]).unwrap();
        let loss = mlp.forward_loss(&p, &batch).unwrap();
        // -ln(1 / (1 + e^-5))
        let expected = (1.0 + (-5.0f64).exp()).ln();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(loss, 0.00672, epsilon = 5e-6);
    }

    #[test]
    fn gradient_at_uniform_softmax() {
        let mlp = softmax_regression(1, 2);
        let batch = Batch::new(1, vec![1.0], vec![0]).unwrap();
        let (loss, g) = mlp.backward(&mlp.zeros(), &batch).unwrap();
        assert_abs_diff_eq!(loss, 2f64.ln(), epsilon = 1e-15);
        let (gw, gb) = g.layer(0);
        // x = 1 so weight gradient equals the logit gradient
        assert_eq!(gw, &[-0.5, 0.5]);
        assert_eq!(gb, &[-0.5, 0.5]);
    }

    #[test]
    fn backward_loss_equals_forward_loss_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(MlpConfig::default()).unwrap();
        let p = mlp.init_params(11);
        let batch = random_batch(&mut rng, 2, 4, 17);
        let (loss, _) = mlp.backward(&p, &batch).unwrap();
        assert_eq!(loss.to_bits(), mlp.forward_loss(&p, &batch).unwrap().to_bits());
    }

    #[test]
    fn duplicated_rows_keep_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(MlpConfig::default()).unwrap();
        let p = mlp.init_params(2);
        let one = random_batch(&mut rng, 2, 4, 1);
        let three = one.select(&[0, 0, 0]);
        let (_, g1) = mlp.backward(&p, &one).unwrap();
        let (_, g3) = mlp.backward(&p, &three).unwrap();
        assert!(g1.max_abs_diff(&g3).unwrap() <= 1e-15);
    }

    #[test]
    fn finite_diff_of_square() {
        let g = finite_diff(|x| x[0] * x[0], &[3.0], 1e-5);
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_diff_constant_coordinate_is_zero() {
        let g = finite_diff(|x| x[0] * x[0] + 2.0, &[1.5, -4.0], 1e-5);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn backward_matches_finite_diff_on_2_2_2() {
        let mlp = Mlp::new(MlpConfig {
            input_dim: 2,
            hidden_dims: vec![2],
            num_classes: 2,
            activation: Activation::Tanh,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = mlp.init_params(0);
        let batch = random_batch(&mut rng, 2, 2, 8);
        let (_, g) = mlp.backward(&p, &batch).unwrap();
        let fd = mlp.finite_diff_grad(&p, &batch, 1e-5).unwrap();
        assert!(max_relative_error(g.values(), fd.values()) <= 1e-5);
    }

    #[test]
    fn eval_metrics_edge_cases() {
        let mlp = softmax_regression(1, 4);
        let data = Batch::new(1, vec![0.0, 1.0], vec![0, 3]).unwrap();
        let m = mlp.eval_metrics(&mlp.zeros(), &data).unwrap();
        assert_abs_diff_eq!(m.ppl, 4.0, epsilon = 1e-12);
        assert_eq!(m.ppl, m.loss.exp());
        assert_eq!(m.accuracy, 0.5);

        assert!(matches!(
            mlp.eval_metrics(&mlp.zeros(), &Batch::empty(1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn confident_correct_predictions() {
        let mlp = softmax_regression(1, 2);
        let mut p = mlp.zeros();
        // logits (800 x, -800 x): saturated, loss rounds to exactly 0
        p.layer_mut(0).0.copy_from_slice(&[800.0, -800.0]);
        let data = Batch::new(1, vec![1.0, -1.0], vec![0, 1]).unwrap();
        let m = mlp.eval_metrics(&p, &data).unwrap();
        assert_eq!(m.loss, 0.0);
        assert_eq!(m.ppl, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn ppl_of_ln2_is_two() {
        let loss = 2f64.ln();
        assert_abs_diff_eq!(loss.exp(), 2.0, epsilon = 1e-9);
        let mlp = softmax_regression(1, 2);
        let data = Batch::new(1, vec![0.5], vec![1]).unwrap();
        let m = mlp.eval_metrics(&mlp.zeros(), &data).unwrap();
        assert_abs_diff_eq!(m.ppl, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let mlp = softmax_regression(2, 2);
        let bad_dim = Batch::new(3, vec![0.0; 3], vec![0]).unwrap();
        assert!(matches!(mlp.forward_loss(&mlp.zeros(), &bad_dim), Err(Error::Dimension(_))));
        let bad_label = Batch::new(2, vec![0.0; 2], vec![2]).unwrap();
        assert!(matches!(mlp.forward_loss(&mlp.zeros(), &bad_label), Err(Error::Dimension(_))));
        let other = softmax_regression(3, 2).zeros();
        let ok = Batch::new(2, vec![0.0; 2], vec![1]).unwrap();
        assert!(matches!(mlp.forward_loss(&other, &ok), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut c = MlpConfig::default();
        c.num_classes = 1;
        assert!(Mlp::new(c).is_err());
        let mut c = MlpConfig::default();
        c.hidden_dims = vec![4, 0];
        assert!(Mlp::new(c).is_err());
        let mut c = MlpConfig::default();
        c.input_dim = 0;
        assert!(Mlp::new(c).is_err());
    }
}
