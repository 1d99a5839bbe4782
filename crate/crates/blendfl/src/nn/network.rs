//! Dense feed-forward networks with explicit parameter vectors.
//!
//! The whole parameter set of a network lives in one flat [`ParamVector`]
//! (per layer: weights in row-major `input x output` order, then biases).
//! Keeping parameters flat makes averaging across parties and shipping
//! gradients across a network cut trivial.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Per-layer nonlinearity. Softmax is only valid on the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            3 => Ok(Activation::Softmax),
            other => Err(Error::Checkpoint(format!(
                "unknown activation tag {other}"
            ))),
        }
    }

    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for v in row {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in row {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            Activation::Softmax => {
                // Max-shifted for stability; exact up to rounding.
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row {
                    *v /= sum;
                }
            }
        }
    }

    /// Pulls an output-side gradient row back through the activation.
    ///
    /// `post` is the activation output for the same row. The softmax case
    /// applies the full Jacobian, so upstream losses need no special casing.
    fn backward_row(self, post: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, y) in grad.iter_mut().zip(post) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, y) in grad.iter_mut().zip(post) {
                    *g *= y * (1.0 - y);
                }
            }
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(post).map(|(g, y)| g * y).sum();
                for (g, y) in grad.iter_mut().zip(post) {
                    *g = y * (*g - dot);
                }
            }
        }
    }
}

/// Shape of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec {
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Flat parameter or gradient vector for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Concatenates several vectors into one, in order.
    pub fn concat(parts: &[&ParamVector]) -> ParamVector {
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            out.extend_from_slice(p.values());
        }
        ParamVector(out)
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::shape("network layers", "at least one layer", "none"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.input == 0 || l.output == 0 {
            return Err(Error::shape(
                "network layers",
                format!("layer {i} with nonzero dimensions"),
                format!("{}x{}", l.input, l.output),
            ));
        }
        if l.activation == Activation::Softmax && i + 1 != layers.len() {
            return Err(Error::shape(
                "network layers",
                "softmax only on the final layer",
                format!("softmax on layer {i}"),
            ));
        }
    }
    for w in layers.windows(2) {
        if w[0].output != w[1].input {
            return Err(Error::shape(
                "network layers",
                format!("consecutive layers to agree ({} outputs)", w[0].output),
                format!("{} inputs", w[1].input),
            ));
        }
    }
    Ok(())
}

/// Cached forward pass needed to run the matching backward pass.
///
/// The trace records the batch input and every layer's post-activation
/// output, plus a fingerprint of the parameters it was computed with so a
/// stale trace (parameters changed in between) is rejected instead of
/// silently producing wrong gradients.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    post: Vec<Matrix>,
    fingerprint: u64,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

fn fingerprint_params(layers: &[LayerSpec], params: &ParamVector) -> u64 {
    // FNV-1a over layer shapes and raw parameter bits.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    };
    for l in layers {
        eat(&(l.input as u64).to_le_bytes());
        eat(&(l.output as u64).to_le_bytes());
        eat(&[l.activation.tag()]);
    }
    for v in params.values() {
        eat(&v.to_bits().to_le_bytes());
    }
    h
}

/// Dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: ParamVector,
}

impl Network {
    /// All-zero parameters; mostly useful as an aggregation accumulator.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        let len = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Network {
            layers,
            params: ParamVector::zeros(len),
        })
    }

    /// Uniform Xavier init, `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn seeded<R: Rng>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(layers)?;
        let mut offset = 0;
        for l in net.layers.clone() {
            let bound = (6.0 / (l.input + l.output) as f64).sqrt();
            let weights = &mut net.params.values_mut()[offset..offset + l.input * l.output];
            for w in weights {
                *w = rng.gen_range(-bound..=bound);
            }
            offset += l.param_count();
        }
        Ok(net)
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: ParamVector) -> Result<Self> {
        validate_layers(&layers)?;
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        if params.len() != expected {
            return Err(Error::shape(
                "network parameters",
                format!("{expected} values"),
                format!("{} values", params.len()),
            ));
        }
        Ok(Network { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    /// Replaces the parameters; the layout must match the layer shapes.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(
                "network parameters",
                format!("{} values", self.params.len()),
                format!("{} values", params.len()),
            ));
        }
        self.params = params;
        Ok(())
    }

    fn layer_weights(&self, index: usize) -> (&[f64], &[f64]) {
        let mut offset = 0;
        for l in &self.layers[..index] {
            offset += l.param_count();
        }
        let l = &self.layers[index];
        let w = &self.params.values()[offset..offset + l.input * l.output];
        let b = &self.params.values()[offset + l.input * l.output..offset + l.param_count()];
        (w, b)
    }

    /// Runs the batch through every layer, returning outputs and the trace
    /// required by [`Network::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "network forward",
                format!("{} input columns", self.input_dim()),
                format!("{} columns", batch.cols()),
            ));
        }
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (li, l) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_weights(li);
            let mut next = Matrix::zeros(current.rows(), l.output);
            for r in 0..current.rows() {
                let x = current.row(r);
                let out = next.row_mut(r);
                out.copy_from_slice(b);
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * l.output..(i + 1) * l.output];
                    for (o, &wio) in wrow.iter().enumerate() {
                        out[o] += xi * wio;
                    }
                }
                l.activation.apply_row(out);
            }
            post.push(next.clone());
            current = next;
        }
        let trace = ForwardTrace {
            input: batch.clone(),
            post,
            fingerprint: fingerprint_params(&self.layers, &self.params),
        };
        Ok((current, trace))
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    /// Backpropagates `output_grad` (gradient of a scalar objective with
    /// respect to the network outputs) through the trace.
    ///
    /// Returns the parameter gradient and the gradient with respect to the
    /// batch input. No averaging happens here: whatever normalization the
    /// objective used is carried through unchanged, which is what lets a
    /// network split at an arbitrary layer agree with its unsplit form.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: &Matrix,
    ) -> Result<(ParamVector, Matrix)> {
        if trace.fingerprint != fingerprint_params(&self.layers, &self.params) {
            return Err(Error::Trace(
                "forward trace does not match current parameters".to_string(),
            ));
        }
        let last = trace.post.last().expect("validated networks have layers");
        if output_grad.rows() != last.rows() || output_grad.cols() != last.cols() {
            return Err(Error::shape(
                "network backward",
                format!("{}x{} output gradient", last.rows(), last.cols()),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }

        let mut param_grad = ParamVector::zeros(self.params.len());
        let mut grad = output_grad.clone();
        let mut offsets: Vec<usize> = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_count();
        }

        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            let post = &trace.post[li];
            for r in 0..grad.rows() {
                l.activation.backward_row(post.row(r), grad.row_mut(r));
            }
            let input = if li == 0 {
                &trace.input
            } else {
                &trace.post[li - 1]
            };
            let (w, _) = self.layer_weights(li);
            let base = offsets[li];
            {
                let pg = param_grad.values_mut();
                for r in 0..grad.rows() {
                    let x = input.row(r);
                    let dz = grad.row(r);
                    for (i, &xi) in x.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        let wg = &mut pg[base + i * l.output..base + (i + 1) * l.output];
                        for (o, &dzo) in dz.iter().enumerate() {
                            wg[o] += xi * dzo;
                        }
                    }
                    let bg = &mut pg[base + l.input * l.output..base + l.param_count()];
                    for (o, &dzo) in dz.iter().enumerate() {
                        bg[o] += dzo;
                    }
                }
            }
            let mut next_grad = Matrix::zeros(grad.rows(), l.input);
            for r in 0..grad.rows() {
                let dz = grad.row(r);
                let out = next_grad.row_mut(r);
                for i in 0..l.input {
                    let wrow = &w[i * l.output..(i + 1) * l.output];
                    let mut s = 0.0;
                    for (o, &wio) in wrow.iter().enumerate() {
                        s += wio * dz[o];
                    }
                    out[i] = s;
                }
            }
            grad = next_grad;
        }
        Ok((param_grad, grad))
    }

    /// One plain gradient step, `p -= lr * g`.
    pub fn sgd_step(&mut self, grad: &ParamVector, learning_rate: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::shape(
                "sgd step",
                format!("{} gradient values", self.params.len()),
                format!("{} values", grad.len()),
            ));
        }
        for (p, g) in self.params.values_mut().iter_mut().zip(grad.values()) {
            *p -= learning_rate * g;
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite(
                "parameters left finite range after sgd step".to_string(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn simple_net() -> Network {
        // 2 -> 3 relu -> 2 softmax, fixed params so tests are exact.
        let layers = vec![
            LayerSpec::new(2, 3, Activation::Relu),
            LayerSpec::new(3, 2, Activation::Softmax),
        ];
        let params = ParamVector::from_vec(vec![
            // layer 0 weights (2x3) then biases (3)
            0.5, -0.2, 0.1, 0.3, 0.8, -0.5, 0.01, -0.02, 0.03,
            // layer 1 weights (3x2) then biases (2)
            0.7, -0.3, 0.2, 0.4, -0.6, 0.5, 0.05, -0.05,
        ]);
        Network::from_params(layers, params).unwrap()
    }

    #[test]
    fn forward_matches_hand_computation() {
        // Single layer, identity activation: y = x W + b computed by hand.
        let layers = vec![LayerSpec::new(2, 2, Activation::Identity)];
        let params = ParamVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        let net = Network::from_params(layers, params).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        // row 0: [1*1 + 1*3 + 0.5, 1*2 + 1*4 - 0.5] = [4.5, 5.5]
        assert_eq!(y.row(0), &[4.5, 5.5]);
        // row 1: [2*1 + 0.5, 2*2 - 0.5] = [2.5, 3.5]
        assert_eq!(y.row(1), &[2.5, 3.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = simple_net();
        let x = Matrix::from_rows(&[vec![0.4, -1.2], vec![2.0, 0.3], vec![0.0, 0.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        for r in 0..y.rows() {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(y.row(r).iter().all(|&p| p > 0.0));
        }
    }

    // Central finite differences over a scalar objective. The objective is
    // sum(output * probe) so its output gradient is just the probe matrix.
    fn finite_diff_check(net: &Network, x: &Matrix) {
        let probe: Vec<f64> = (0..x.rows() * net.output_dim())
            .map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4)
            .collect();
        let probe = Matrix::from_vec(x.rows(), net.output_dim(), probe).unwrap();
        let objective = |n: &Network| -> f64 {
            let y = n.predict(x).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (out, trace) = net.forward(x).unwrap();
        assert_eq!(out.rows(), x.rows());
        let (analytic, _) = net.backward(&trace, &probe).unwrap();

        let h = 1e-5;
        for k in 0..net.param_len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.params.values_mut()[k] += h;
            minus.params.values_mut()[k] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic.values()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "param {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = simple_net();
        let x = Matrix::from_rows(&[
            vec![0.9, -0.4],
            vec![-1.1, 0.6],
            vec![0.2, 0.2],
            vec![1.5, -2.0],
        ])
        .unwrap();
        finite_diff_check(&net, &x);
    }

    #[test]
    fn gradients_match_finite_differences_sigmoid_stack() {
        let layers = vec![
            LayerSpec::new(3, 4, Activation::Sigmoid),
            LayerSpec::new(4, 4, Activation::Relu),
            LayerSpec::new(4, 1, Activation::Sigmoid),
        ];
        let mut rng = substream(99, "test/fd");
        let net = Network::seeded(layers, &mut rng).unwrap();
        let x = Matrix::from_rows(&[
            vec![0.3, -0.8, 1.2],
            vec![0.0, 0.5, -0.5],
            vec![-1.4, 0.9, 0.1],
        ])
        .unwrap();
        finite_diff_check(&net, &x);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = simple_net();
        let x = Matrix::from_rows(&[vec![0.7, -0.3], vec![-0.2, 1.1]]).unwrap();
        let probe = Matrix::from_rows(&[vec![0.5, -0.1], vec![0.3, 0.9]]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let (_, input_grad) = net.backward(&trace, &probe).unwrap();
        let h = 1e-5;
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus.set(r, c, x.get(r, c) + h);
                minus.set(r, c, x.get(r, c) - h);
                let f = |m: &Matrix| -> f64 {
                    let y = net.predict(m).unwrap();
                    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                };
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let a = input_grad.get(r, c);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "input ({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn sgd_step_is_entrywise() {
        let mut net = simple_net();
        let before = net.params().clone();
        let grad = ParamVector::from_vec((0..net.param_len()).map(|i| i as f64 * 0.1).collect());
        net.sgd_step(&grad, 0.5).unwrap();
        for (i, (&b, &a)) in before
            .values()
            .iter()
            .zip(net.params().values())
            .enumerate()
        {
            assert!((a - (b - 0.5 * grad.values()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn stale_trace_rejected() {
        let mut net = simple_net();
        let x = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let grad = ParamVector::zeros(net.param_len());
        net.sgd_step(&grad, 0.0).unwrap(); // zero step, params bit-identical
        assert!(net.backward(&trace, &Matrix::zeros(1, 2)).is_ok());
        let bump = ParamVector::from_vec(vec![1.0; net.param_len()]);
        net.sgd_step(&bump, 0.1).unwrap();
        assert!(matches!(
            net.backward(&trace, &Matrix::zeros(1, 2)),
            Err(Error::Trace(_))
        ));
    }

    #[test]
    fn seeded_init_is_deterministic_and_bounded() {
        let layers = vec![
            LayerSpec::new(5, 7, Activation::Relu),
            LayerSpec::new(7, 2, Activation::Softmax),
        ];
        let a = Network::seeded(layers.clone(), &mut substream(42, "init")).unwrap();
        let b = Network::seeded(layers.clone(), &mut substream(42, "init")).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Network::seeded(layers, &mut substream(43, "init")).unwrap();
        assert_ne!(a.params(), c.params());

        let bound0 = (6.0 / 12.0f64).sqrt();
        for &w in &a.params().values()[..35] {
            assert!(w.abs() <= bound0);
        }
        // Biases stay zero under this init.
        assert!(a.params().values()[35..42].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn shape_validation() {
        assert!(Network::zeros(vec![]).is_err());
        assert!(Network::zeros(vec![LayerSpec::new(0, 3, Activation::Relu)]).is_err());
        assert!(Network::zeros(vec![
            LayerSpec::new(2, 3, Activation::Relu),
            LayerSpec::new(4, 1, Activation::Identity),
        ])
        .is_err());
        assert!(Network::zeros(vec![
            LayerSpec::new(2, 3, Activation::Softmax),
            LayerSpec::new(3, 1, Activation::Identity),
        ])
        .is_err());
        let net = simple_net();
        assert!(net.predict(&Matrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn sgd_step_rejects_non_finite_result() {
        let mut net = simple_net();
        let grad = ParamVector::from_vec(vec![f64::INFINITY; net.param_len()]);
        assert!(matches!(
            net.sgd_step(&grad, 1.0),
            Err(Error::NonFinite(_))
        ));
    }
}
