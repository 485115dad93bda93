//! A small dense-network kit: fully connected layers, flattened parameters,
//! Adam, and exact reverse-mode gradients for batch losses.
//!
//! Parameter flattening order is all layer weight matrices (row-major,
//! `outputs x inputs`, first layer first) followed by all bias vectors in the
//! same layer order.

use crate::error::{Error, Result};
use crate::la::{EmbeddingVector, Matrix};
use crate::rng::{gaussian, Rng};
use crate::wire::{put_f64, put_u16, put_u32, put_u64, ByteReader};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const CHECKPOINT_VERSION: u16 = 1;

/// Activation applied after every hidden layer. The output layer is affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            t => Err(Error::Corrupt(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Flattened network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    hidden_activation: Activation,
}

/// Activations recorded by [`DenseNet::forward_batch`]; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    values: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.values[0]
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid(
            "a network needs at least input and output sizes",
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}

impl DenseNet {
    fn build(
        sizes: &[usize],
        hidden_activation: Activation,
        mut weight: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let mut weights = Vec::with_capacity(inputs * outputs);
                for o in 0..outputs {
                    for i in 0..inputs {
                        weights.push(weight(l, o, i));
                    }
                }
                Layer {
                    inputs,
                    outputs,
                    weights,
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
        })
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        Self::build(sizes, hidden_activation, |_, _, _| 0.0)
    }

    /// Each layer starts as a (possibly rectangular) identity plus
    /// `N(0, noise_sigma^2)` perturbations.
    pub fn identity(
        sizes: &[usize],
        hidden_activation: Activation,
        noise_sigma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::build(sizes, hidden_activation, |_, o, i| {
            let base = if o == i { 1.0 } else { 0.0 };
            if noise_sigma > 0.0 {
                base + noise_sigma * gaussian(rng)
            } else {
                base
            }
        })
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(sizes: &[usize], hidden_activation: Activation, rng: &mut Rng) -> Result<Self> {
        validate_sizes(sizes)?;
        let fan_in: Vec<f64> = sizes.iter().map(|&s| (s as f64).sqrt()).collect();
        Self::build(sizes, hidden_activation, |l, _, _| {
            gaussian(rng) / fan_in[l]
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Sets the bias of the last layer.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let last = self.layers.last_mut().expect("at least one layer");
        check_len(last.outputs, bias.len())?;
        last.bias.copy_from_slice(bias);
        Ok(())
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
        }
        for l in &self.layers {
            out.extend_from_slice(&l.bias);
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(self.param_count(), params.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&params.0[at..at + n]);
            at += n;
        }
        for l in &mut self.layers {
            let n = l.bias.len();
            l.bias.copy_from_slice(&params.0[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len()
    }

    fn apply_layer(&self, layer: usize, input: &[f64], out: &mut [f64]) {
        let l = &self.layers[layer];
        let tanh = self.is_hidden(layer) && self.hidden_activation == Activation::Tanh;
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
            let v = crate::la::dot(row, input) + l.bias[o];
            *slot = if tanh { v.tanh() } else { v };
        }
    }

    pub fn forward(&self, input: &EmbeddingVector) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.forward_slice(input.as_slice())?)
    }

    pub fn forward_slice(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), input.len())?;
        let mut current = input.to_vec();
        for layer in 0..self.layers.len() {
            let mut next = vec![0.0; self.layers[layer].outputs];
            self.apply_layer(layer, &current, &mut next);
            current = next;
        }
        Ok(current)
    }

    /// Runs a batch (one sample per row) and keeps every layer's activations.
    pub fn forward_batch(&self, input: &Matrix) -> Result<ForwardCache> {
        check_len(self.input_dim(), input.cols())?;
        let mut values = vec![input.clone()];
        for layer in 0..self.layers.len() {
            let prev = values.last().expect("non-empty");
            let mut next = Matrix::zeros(prev.rows(), self.layers[layer].outputs);
            for b in 0..prev.rows() {
                self.apply_layer(layer, prev.row(b), next.row_mut(b));
            }
            values.push(next);
        }
        Ok(ForwardCache { values })
    }

    /// Gradient of a scalar batch loss w.r.t. all parameters, given
    /// `grad_out[b][o] = dLoss / d output[b][o]`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<ParamVector> {
        Ok(self.backward_full(cache, grad_out, false)?.0)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient with
    /// respect to the batch input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
    ) -> Result<(ParamVector, Matrix)> {
        let (p, g) = self.backward_full(cache, grad_out, true)?;
        Ok((p, g.expect("input gradient requested")))
    }

    fn backward_full(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
        want_input: bool,
    ) -> Result<(ParamVector, Option<Matrix>)> {
        if cache.values.len() != self.layers.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len() + 1,
                found: cache.values.len(),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            check_len(layer.inputs, cache.values[l].cols())?;
        }
        let out = cache.output();
        check_len(self.output_dim(), out.cols())?;
        check_len(out.cols(), grad_out.cols())?;
        check_len(out.rows(), grad_out.rows())?;

        let batch = grad_out.rows();
        let mut w_grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut b_grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        let mut input_grad = None;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let post = &cache.values[l + 1];
            if self.is_hidden(l) && self.hidden_activation == Activation::Tanh {
                for (d, a) in delta.as_mut_slice().iter_mut().zip(post.as_slice()) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &cache.values[l];
            let mut wg = vec![0.0; layer.weights.len()];
            let mut bg = vec![0.0; layer.outputs];
            for b in 0..batch {
                let x = input.row(b);
                let d = delta.row(b);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    bg[o] += dv;
                    let row = &mut wg[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += dv * xi;
                    }
                }
            }
            w_grads.push(wg);
            b_grads.push(bg);
            if l > 0 || want_input {
                let mut prev = Matrix::zeros(batch, layer.inputs);
                for b in 0..batch {
                    let d = delta.row(b);
                    let p = prev.row_mut(b);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (pi, &w) in p.iter_mut().zip(row) {
                            *pi += dv * w;
                        }
                    }
                }
                if l == 0 {
                    input_grad = Some(prev);
                } else {
                    delta = prev;
                }
            }
        }
        w_grads.reverse();
        b_grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &w_grads {
            flat.extend_from_slice(g);
        }
        for g in &b_grads {
            flat.extend_from_slice(g);
        }
        Ok((ParamVector(flat), input_grad))
    }

    pub fn write_checkpoint(&self, magic: &[u8; 4], out: &mut Vec<u8>) {
        out.extend_from_slice(magic);
        put_u16(out, CHECKPOINT_VERSION);
        out.push(self.hidden_activation.tag());
        let sizes = self.layer_sizes();
        put_u32(out, sizes.len() as u32);
        for s in sizes {
            put_u32(out, s as u32);
        }
        let params = self.params();
        put_u64(out, params.len() as u64);
        for &p in params.as_slice() {
            put_f64(out, p);
        }
    }

    pub(crate) fn read_checkpoint_from(r: &mut ByteReader<'_>, magic: &[u8; 4]) -> Result<Self> {
        r.expect_magic(magic, "network checkpoint")?;
        r.expect_version(CHECKPOINT_VERSION, "network checkpoint")?;
        let activation = Activation::from_tag(r.u8()?)?;
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(Error::Corrupt(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(r.u32()? as usize);
        }
        let mut net = Self::zeros(&sizes, activation)?;
        let count = r.u64()? as usize;
        check_len(net.param_count(), count)?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(r.f64()?);
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        net.set_params(&ParamVector(params))?;
        Ok(net)
    }

    pub fn read_checkpoint(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let net = Self::read_checkpoint_from(&mut r, magic)?;
        r.finish("network checkpoint")?;
        Ok(net)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.len())?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads.0[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.0[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng;

    fn seeded(seed: u64) -> Rng {
        rng::rng(seed, "nn-test", &[])
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::identity(&[5, 5], Activation::Identity, 0.0, &mut seeded(0)).unwrap();
        let x = EmbeddingVector::new(vec![1.0, -2.0, 3.5, 0.0, 7.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = DenseNet::zeros(&[3, 2], Activation::Identity).unwrap();
        net.set_output_bias(&[0.25, -4.0]).unwrap();
        let out = net.forward_slice(&[9.0, 8.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.25, -4.0]);
    }

    #[test]
    fn forward_matches_scalar_matmul() {
        let mut r = seeded(1);
        let mut net = DenseNet::random(&[8, 4], Activation::Identity, &mut r).unwrap();
        let bias: Vec<f64> = (0..4).map(|_| gaussian(&mut r)).collect();
        net.set_output_bias(&bias).unwrap();
        let x: Vec<f64> = (0..8).map(|_| gaussian(&mut r)).collect();
        let p = net.params();
        let out = net.forward_slice(&x).unwrap();
        for o in 0..4 {
            let mut acc = p.0[32 + o];
            for i in 0..8 {
                acc += p.0[o * 8 + i] * x[i];
            }
            assert!((out[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_dimension_error() {
        let net = DenseNet::zeros(&[3, 2], Activation::Identity).unwrap();
        assert!(matches!(
            net.forward_slice(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn sum_loss_gradient_closed_form() {
        let net = DenseNet::random(&[3, 2], Activation::Identity, &mut seeded(2)).unwrap();
        let batch = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let cache = net.forward_batch(&batch).unwrap();
        let ones = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let g = net.backward(&cache, &ones).unwrap();
        let col_sums = [0.0, 2.5, 7.0];
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.0[o * 3 + i], col_sums[i]);
            }
        }
        assert_eq!(&g.0[6..], &[2.0, 2.0]);
        let zero = net.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(zero.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_mismatch() {
        let net = DenseNet::zeros(&[3, 2], Activation::Identity).unwrap();
        let other = DenseNet::zeros(&[4, 2], Activation::Identity).unwrap();
        let cache = other.forward_batch(&Matrix::zeros(1, 4)).unwrap();
        assert!(net.backward(&cache, &Matrix::zeros(1, 2)).is_err());
    }

    /// Central finite differences of `loss(outputs) = sum w[b][o] * out^2 / 2`.
    #[test]
    fn gradient_check_tanh_net() {
        let mut r = seeded(3);
        let net = DenseNet::random(&[5, 7, 3], Activation::Tanh, &mut r).unwrap();
        let batch = Matrix::from_vec(4, 5, (0..20).map(|_| gaussian(&mut r)).collect()).unwrap();
        let weights: Vec<f64> = (0..12).map(|_| gaussian(&mut r)).collect();
        let loss = |n: &DenseNet| -> f64 {
            let c = n.forward_batch(&batch).unwrap();
            c.output()
                .as_slice()
                .iter()
                .zip(&weights)
                .map(|(o, w)| 0.5 * w * o * o)
                .sum()
        };
        let cache = net.forward_batch(&batch).unwrap();
        let upstream: Vec<f64> = cache
            .output()
            .as_slice()
            .iter()
            .zip(&weights)
            .map(|(o, w)| w * o)
            .collect();
        let (g, gx) = net
            .backward_with_input(&cache, &Matrix::from_vec(4, 3, upstream).unwrap())
            .unwrap();
        let base = net.params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut plus = net.clone();
            let mut p = base.clone();
            p.0[i] += h;
            plus.set_params(&p).unwrap();
            let mut minus = net.clone();
            p.0[i] -= 2.0 * h;
            minus.set_params(&p).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (fd - g.0[i]).abs() / fd.abs().max(g.0[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "param {i}: fd {fd} analytic {}", g.0[i]);
        }
        // Input gradient against finite differences too.
        for k in 0..batch.as_slice().len() {
            let mut bp = batch.clone();
            bp.as_mut_slice()[k] += h;
            let lp: f64 = net
                .forward_batch(&bp)
                .unwrap()
                .output()
                .as_slice()
                .iter()
                .zip(&weights)
                .map(|(o, w)| 0.5 * w * o * o)
                .sum();
            bp.as_mut_slice()[k] -= 2.0 * h;
            let lm: f64 = net
                .forward_batch(&bp)
                .unwrap()
                .output()
                .as_slice()
                .iter()
                .zip(&weights)
                .map(|(o, w)| 0.5 * w * o * o)
                .sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gx.as_slice()[k]).abs() <= 1e-4 * fd.abs().max(1e-4));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = ParamVector(vec![1.0, -2.0]);
        let mut s = AdamState::new(2);
        adam_step(&mut p, &ParamVector::zeros(2), &mut s, 0.1).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = ParamVector(vec![0.0, 0.0, 0.0]);
        let mut s = AdamState::new(3);
        adam_step(&mut p, &ParamVector(vec![3.0, -0.01, 250.0]), &mut s, 1e-3).unwrap();
        for (v, sign) in p.0.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * 1e-3).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = ParamVector(vec![1.0]);
        let mut s = AdamState::new(1);
        let mut last = 1.0f64;
        for _ in 0..10 {
            let g = ParamVector(vec![2.0 * p.0[0]]);
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
            assert!(p.0[0].abs() < last);
            last = p.0[0].abs();
        }
    }

    #[test]
    fn adam_length_mismatch() {
        let mut p = ParamVector(vec![1.0]);
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &ParamVector::zeros(2), &mut s, 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::random(&[4, 6, 2], Activation::Tanh, &mut seeded(4)).unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(b"SSRN", &mut bytes);
        assert_eq!(DenseNet::read_checkpoint(&bytes, b"SSRN").unwrap(), net);
        assert!(DenseNet::read_checkpoint(&bytes, b"SSRA").is_err());
        assert!(matches!(
            DenseNet::read_checkpoint(&bytes[..bytes.len() - 3], b"SSRN"),
            Err(Error::Truncated { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn flatten_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 3 * 4 + 4 * 2 + 4 + 2)) {
            let mut net = DenseNet::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
            let p = ParamVector(values);
            net.set_params(&p).unwrap();
            let back = net.params();
            proptest::prop_assert_eq!(
                back.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                p.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
