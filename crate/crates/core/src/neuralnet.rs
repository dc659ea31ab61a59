//! Dense feedforward networks with hand-written backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Linear => T::one(),
        }
    }
}

/// One affine map; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, &b)| {
            row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi)
        }));
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

pub struct DenseNetwork<T> {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    layers: Vec<Layer<T>>,
    // changes whenever parameters change; ties caches to a parameter set
    stamp: u64,
}

impl<T: Clone> Clone for DenseNetwork<T> {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            hidden: self.hidden,
            output: self.output,
            layers: self.layers.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl<T: PartialEq> PartialEq for DenseNetwork<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.hidden == other.hidden && self.output == other.output && self.layers == other.layers
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for DenseNetwork<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseNetwork")
            .field("dims", &self.dims)
            .field("hidden", &self.hidden)
            .field("output", &self.output)
            .finish_non_exhaustive()
    }
}

/// Layer activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    stamp: u64,
    /// `activations[0]` is the input, `activations[k + 1]` the output of layer `k`.
    activations: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNetwork<T>) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in self.values_mut() {
            *v = *v * k;
        }
    }

    pub fn norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).all(|v| *v == T::zero())
    }
}

impl<T: Scalar> DenseNetwork<T> {
    /// Uniform `+-1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("layer dims must be >= 2 positive entries, got {dims:?}")));
        }
        if hidden == Activation::Linear {
            return Err(Error::Shape("hidden activation must be relu or tanh".into()));
        }
        if output == Activation::Relu {
            return Err(Error::Shape("output activation must be linear or tanh".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            hidden,
            output,
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            stamp: fresh_stamp(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims are non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    fn activation_of(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            let act = self.activation_of(k);
            next.iter_mut().for_each(|z| *z = act.apply(*z));
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, input: &[T]) -> Result<ForwardCache<T>> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(activations.last().expect("input pushed"), &mut z);
            let act = self.activation_of(k);
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            activations.push(z);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            activations,
        })
    }

    /// Reverse-mode pass. Adds the parameter gradient of `output_grad . f(x)`
    /// into `grads` and returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache<T>, output_grad: &[T], grads: &mut Gradients<T>) -> Result<Vec<T>> {
        self.reverse(cache, output_grad, Some(grads))
    }

    /// Gradient of `output_grad . f(x)` with respect to the input only.
    pub fn input_gradient(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<Vec<T>> {
        self.reverse(cache, output_grad, None)
    }

    fn reverse(&self, cache: &ForwardCache<T>, output_grad: &[T], mut grads: Option<&mut Gradients<T>>) -> Result<Vec<T>> {
        if cache.stamp != self.stamp || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Usage("forward cache does not belong to this network state".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has length {}, network emits {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if let Some(g) = grads.as_deref() {
            if g.layers.len() != self.layers.len()
                || g.layers.iter().zip(&self.layers).any(|(g, l)| g.inputs != l.inputs || g.outputs != l.outputs)
            {
                return Err(Error::Shape("gradient buffer does not match network".into()));
            }
        }
        let mut delta: Vec<T> = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = self.activation_of(k);
            let out = &cache.activations[k + 1];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d = *d * act.derivative_from_output(a);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let x = &cache.activations[k];
                let g = &mut grads.layers[k];
                for (o, &d) in delta.iter().enumerate() {
                    g.bias[o] = g.bias[o] + d;
                    if d != T::zero() {
                        let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (gw, &xi) in row.iter_mut().zip(x) {
                            *gw = *gw + d * xi;
                        }
                    }
                }
            }
            let mut prev = vec![T::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != T::zero() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p = *p + d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    fn same_architecture(&self, other: &Self) -> bool {
        self.dims == other.dims && self.hidden == other.hidden && self.output == other.output
    }

    /// `target <- tau * source + (1 - tau) * target`, elementwise.
    pub fn soft_update(&mut self, source: &Self, tau: T) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Shape("soft update between different architectures".into()));
        }
        if !(tau >= T::zero() && tau <= T::one()) {
            return Err(Error::Parameter(format!("tau must lie in [0, 1], got {tau}")));
        }
        if tau == T::zero() {
            return Ok(());
        }
        let keep = T::one() - tau;
        for (t, s) in self.layers_mut().iter_mut().zip(&source.layers) {
            for (tw, &sw) in t.weights.iter_mut().zip(&s.weights).chain(t.bias.iter_mut().zip(&s.bias)) {
                *tw = tau * sw + keep * *tw;
            }
        }
        Ok(())
    }

    pub fn copy_from(&mut self, source: &Self) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Shape("copy between different architectures".into()));
        }
        self.layers_mut().clone_from_slice(&source.layers);
        Ok(())
    }

    pub const FORMAT_TAG: &'static str = "NNV1";

    /// Line-oriented text: a header line, then one line per tensor.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}", Self::FORMAT_TAG, self.layers.len());
        for d in &self.dims {
            out.push_str(&format!(" {d}"));
        }
        out.push_str(&format!(" {} {}\n", self.hidden.name(), self.output.name()));
        for (k, l) in self.layers.iter().enumerate() {
            out.push_str(&format!("W{k} {} {}", l.outputs, l.inputs));
            for w in &l.weights {
                out.push_str(&format!(" {w:.16e}"));
            }
            out.push_str(&format!("\nb{k} {}", l.outputs));
            for b in &l.bias {
                out.push_str(&format!(" {b:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty weight file".into()))?;
        let mut tok = header.split_whitespace();
        let tag = tok.next().unwrap_or("");
        if tag != Self::FORMAT_TAG {
            return Err(if tag.starts_with("NNV") {
                Error::UnsupportedVersion(format!("weight file tag `{tag}`, expected {}", Self::FORMAT_TAG))
            } else {
                Error::Parse(format!("not a weight file (tag `{tag}`)"))
            });
        }
        let rest: Vec<&str> = tok.collect();
        let num_layers: usize = rest
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("bad layer count in header".into()))?;
        if rest.len() != num_layers + 4 {
            return Err(Error::Parse(format!(
                "header lists {} fields, expected {} for {num_layers} layers",
                rest.len(),
                num_layers + 4
            )));
        }
        let dims: Vec<usize> = rest[1..num_layers + 2]
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad layer width `{s}`"))))
            .collect::<Result<_>>()?;
        let hidden = Activation::parse(rest[num_layers + 2])?;
        let output = Activation::parse(rest[num_layers + 3])?;
        let mut net = Self::zeros(&dims, hidden, output)?;
        for k in 0..num_layers {
            let (rows, cols) = (dims[k + 1], dims[k]);
            let w = read_tensor(lines.next(), &format!("W{k}"), &[rows, cols])?;
            let b = read_tensor(lines.next(), &format!("b{k}"), &[rows])?;
            net.layers[k].weights = w;
            net.layers[k].bias = b;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Parse("trailing data after last tensor".into()));
        }
        Ok(net)
    }
}

fn read_tensor<T: Scalar>(line: Option<&str>, tag: &str, shape: &[usize]) -> Result<Vec<T>> {
    let line = line.ok_or_else(|| Error::Parse(format!("weight file truncated before tensor {tag}")))?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some(tag) {
        return Err(Error::Parse(format!("expected tensor {tag}")));
    }
    for &d in shape {
        let got: Option<usize> = tok.next().and_then(|s| s.parse().ok());
        if got != Some(d) {
            return Err(Error::Parse(format!("tensor {tag} has inconsistent shape")));
        }
    }
    let values: Vec<T> = tok
        .map(|s| {
            s.parse::<T>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("tensor {tag}: bad or non-finite value `{s}`")))
        })
        .collect::<Result<_>>()?;
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(Error::Parse(format!(
            "tensor {tag} has {} values, expected {expected}",
            values.len()
        )));
    }
    Ok(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdaterKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl UpdaterKind {
    pub fn adam() -> Self {
        UpdaterKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First-order parameter updater. Adam moments are allocated lazily.
#[derive(Clone, Debug)]
pub struct GradientUpdater<T> {
    pub learning_rate: T,
    pub kind: UpdaterKind,
    moments: Option<(Gradients<T>, Gradients<T>)>,
    steps: u64,
}

impl<T: Scalar> GradientUpdater<T> {
    pub fn new(learning_rate: T, kind: UpdaterKind) -> Result<Self> {
        if !(learning_rate > T::zero() && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self {
            learning_rate,
            kind,
            moments: None,
            steps: 0,
        })
    }

    pub fn sgd(learning_rate: T) -> Result<Self> {
        Self::new(learning_rate, UpdaterKind::Sgd)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Moves the parameters against `grads`.
    pub fn apply(&mut self, net: &mut DenseNetwork<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads.layers.iter().zip(&net.layers).any(|(g, l)| g.inputs != l.inputs || g.outputs != l.outputs)
        {
            return Err(Error::Shape("gradient shapes do not match the network".into()));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            UpdaterKind::Sgd => {
                for (l, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    for (p, &d) in l.weights.iter_mut().zip(&g.weights).chain(l.bias.iter_mut().zip(&g.bias)) {
                        *p = *p - lr * d;
                    }
                }
            }
            UpdaterKind::Adam { beta1, beta2, epsilon } => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (Gradients::zeros_like(net), Gradients::zeros_like(net)));
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let params = net.layers_mut().iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
                let gs = grads.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias));
                for (((p, &g), mi), vi) in params.zip(gs).zip(m.values_mut()).zip(v.values_mut()) {
                    *mi = b1 * *mi + (T::one() - b1) * g;
                    *vi = b2 * *vi + (T::one() - b2) * g * g;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer() {
        let mut net = DenseNetwork::<f64>::zeros(&[3, 3], Activation::Relu, Activation::Linear).unwrap();
        let l = &mut net.layers_mut()[0];
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn scalar_tanh_layer() {
        let mut net = DenseNetwork::<f64>::zeros(&[1, 1], Activation::Relu, Activation::Tanh).unwrap();
        net.layers_mut()[0].weights[0] = 2.0;
        net.layers_mut()[0].bias[0] = 1.0;
        let y = net.forward(&[0.0]).unwrap()[0];
        assert!((y - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn dead_relu_passes_only_bias() {
        let mut net = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Linear, &mut rng(1)).unwrap();
        {
            let layers = net.layers_mut();
            layers[0].weights.iter_mut().for_each(|w| *w = 1.0);
            layers[0].bias.iter_mut().for_each(|b| *b = -10.0);
            layers[1].bias[0] = 0.25;
        }
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn shape_errors() {
        let net = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut rng(1)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(DenseNetwork::<f64>::zeros(&[2], Activation::Tanh, Activation::Linear).is_err());
        assert!(DenseNetwork::<f64>::zeros(&[2, 0, 1], Activation::Tanh, Activation::Linear).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut rng(1)).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2]).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Usage(_))));
        let other = net.clone();
        let cache = net.forward_cached(&[0.1, 0.2]).unwrap();
        assert!(other.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn zero_output_gradient() {
        let net = DenseNetwork::<f64>::new(&[3, 5, 2], Activation::Tanh, Activation::Tanh, &mut rng(2)).unwrap();
        let cache = net.forward_cached(&[0.1, -0.3, 0.7]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let net = DenseNetwork::<f64>::new(&[3, 2], Activation::Tanh, Activation::Linear, &mut rng(3)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let gy = [0.3, -0.7];
        let cache = net.forward_cached(&x).unwrap();
        let (g, _) = net.backward(&cache, &gy).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], gy[o] * x[i]);
            }
            assert_eq!(g.layers[0].bias[o], gy[o]);
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = DenseNetwork::<f64>::zeros(&[1, 1], Activation::Relu, Activation::Linear).unwrap();
        net.layers_mut()[0].weights[0] = 1.0;
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[0] = 0.5;
        let mut upd = GradientUpdater::sgd(0.1).unwrap();
        upd.apply(&mut net, &g).unwrap();
        assert!((net.layers()[0].weights[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        for kind in [UpdaterKind::Sgd, UpdaterKind::adam()] {
            let mut net = DenseNetwork::<f64>::new(&[2, 4, 1], Activation::Relu, Activation::Linear, &mut rng(4)).unwrap();
            let before = net.clone();
            let mut upd = GradientUpdater::new(1e-3, kind).unwrap();
            let g = Gradients::zeros_like(&net);
            for _ in 0..3 {
                upd.apply(&mut net, &g).unwrap();
            }
            assert_eq!(net, before);
        }
    }

    #[test]
    fn updater_rejects_bad_lr() {
        assert!(GradientUpdater::<f64>::sgd(0.0).is_err());
        assert!(GradientUpdater::<f64>::sgd(f64::NAN).is_err());
    }

    #[test]
    fn soft_update_cases() {
        let mut target = DenseNetwork::<f64>::zeros(&[1, 1], Activation::Relu, Activation::Linear).unwrap();
        let mut source = target.clone();
        source.layers_mut()[0].weights[0] = 2.0;
        let mut t = target.clone();
        t.soft_update(&source, 0.0).unwrap();
        assert_eq!(t, target);
        t.soft_update(&source, 0.5).unwrap();
        assert_eq!(t.layers()[0].weights[0], 1.0);
        target.soft_update(&source, 1.0).unwrap();
        assert_eq!(target, source);
        let other = DenseNetwork::<f64>::zeros(&[1, 2], Activation::Relu, Activation::Linear).unwrap();
        assert!(target.soft_update(&other, 0.5).is_err());
    }

    #[test]
    fn text_round_trip() {
        let net = DenseNetwork::<f64>::new(&[4, 8, 8, 1], Activation::Relu, Activation::Tanh, &mut rng(5)).unwrap();
        let back = DenseNetwork::<f64>::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
        let mut r = rng(6);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        }
        assert!(net.to_text().starts_with("NNV1 3 4 8 8 1 relu tanh\n"));
    }

    #[test]
    fn malformed_weight_files() {
        let net = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Tanh, &mut rng(5)).unwrap();
        let text = net.to_text();
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(DenseNetwork::<f64>::from_text(&truncated), Err(Error::Parse(_))));
        let v2 = text.replacen("NNV1", "NNV2", 1);
        assert!(matches!(DenseNetwork::<f64>::from_text(&v2), Err(Error::UnsupportedVersion(_))));
        let wrong_dims = text.replacen("NNV1 2 2 3 1", "NNV1 2 2 4 1", 1);
        assert!(DenseNetwork::<f64>::from_text(&wrong_dims).is_err());
        let nan = text.replacen("W0 3 2 ", "W0 3 2 NaN ", 1);
        assert!(DenseNetwork::<f64>::from_text(&nan).is_err());
        assert!(DenseNetwork::<f64>::from_text("").is_err());
    }

    #[test]
    fn single_precision_network() {
        let net = DenseNetwork::<f32>::new(&[2, 4, 1], Activation::Tanh, Activation::Linear, &mut rng(9)).unwrap();
        let back = DenseNetwork::<f32>::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
    }

    fn fd_check(seed: u64) -> f64 {
        let mut r = rng(seed);
        let depth = r.random_range(1..=3usize);
        let mut dims = vec![r.random_range(1..=8usize)];
        for _ in 0..depth {
            dims.push(r.random_range(1..=8usize));
        }
        let hidden = if r.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
        let output = if r.random_bool(0.5) { Activation::Tanh } else { Activation::Linear };
        let net = DenseNetwork::<f64>::new(&dims, hidden, output, &mut r).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect();
        let gy: Vec<f64> = (0..*dims.last().unwrap()).map(|_| r.random_range(-1.0..1.0)).collect();
        crate::neuralnet::gradcheck::max_relative_error(&net, &x, &gy, 1e-5)
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..60 {
            let err = fd_check(seed);
            assert!(err <= 1e-5, "seed {seed}: relative error {err}");
        }
    }

    proptest! {
        #[test]
        fn soft_update_contracts(tau in 0.0..=1.0f64, seed in 0u64..1000) {
            let mut r = rng(seed);
            let src = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut r).unwrap();
            let mut tgt = DenseNetwork::<f64>::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut r).unwrap();
            let before: Vec<f64> = tgt.params().copied().collect();
            tgt.soft_update(&src, tau).unwrap();
            for ((&b, &a), &s) in before.iter().zip(tgt.params()).zip(src.params()) {
                prop_assert!(((a - s).abs() - (1.0 - tau) * (b - s).abs()).abs() <= 1e-12);
            }
        }
    }
}

/// Central-difference gradient checking, shared by unit and acceptance tests.
pub mod gradcheck {
    use super::*;

    fn param_mut(n: &mut DenseNetwork<f64>, k: usize, i: usize) -> &mut f64 {
        let l = &mut n.layers_mut()[k];
        let nw = l.weights.len();
        if i < nw {
            &mut l.weights[i]
        } else {
            &mut l.bias[i - nw]
        }
    }

    /// Relative difference with magnitudes floored at `1e-6`.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients of `gy . f(x)` over all parameters and inputs.
    pub fn max_relative_error(net: &DenseNetwork<f64>, x: &[f64], gy: &[f64], h: f64) -> f64 {
        let cache = net.forward_cached(x).expect("input matches");
        let (grads, dx) = net.backward(&cache, gy).expect("cache is fresh");
        let objective = |n: &DenseNetwork<f64>, x: &[f64]| -> f64 {
            n.forward(x).expect("input matches").iter().zip(gy).map(|(a, b)| a * b).sum()
        };
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for k in 0..net.layers.len() {
            let nw = net.layers[k].weights.len();
            for i in 0..nw + net.layers[k].bias.len() {
                let orig = *param_mut(&mut probe, k, i);
                *param_mut(&mut probe, k, i) = orig + h;
                let up = objective(&probe, x);
                *param_mut(&mut probe, k, i) = orig - h;
                let down = objective(&probe, x);
                *param_mut(&mut probe, k, i) = orig;
                let analytic = if i < nw {
                    grads.layers[k].weights[i]
                } else {
                    grads.layers[k].bias[i - nw]
                };
                worst = worst.max(relative_error(analytic, (up - down) / (2.0 * h)));
            }
        }
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = objective(net, &xp);
            xp[i] = x[i] - h;
            let down = objective(net, &xp);
            xp[i] = x[i];
            worst = worst.max(relative_error(dx[i], (up - down) / (2.0 * h)));
        }
        worst
    }
}
