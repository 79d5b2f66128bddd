//! Dense ReLU network with a linear head, Huber loss and Adam.
//!
//! Weights are stored per layer as an `outputs x inputs` row-major matrix
//! followed by a bias vector. Dot products accumulate in eight fixed lanes
//! that are summed in a fixed order, so results are bitwise reproducible.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs;
use std::path::Path;

use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::{Error, Result};

pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>, relu: bool) {
        out.clear();
        out.resize(self.outputs, T::zero());
        match sparse_support(x) {
            Some(idx) => {
                for (o, z) in out.iter_mut().enumerate() {
                    let row = self.row(o);
                    *z = idx.iter().fold(T::zero(), |acc, &i| acc + row[i] * x[i]);
                }
            }
            None => {
                for (o, z) in out.iter_mut().enumerate() {
                    *z = dot(self.row(o), x);
                }
            }
        }
        for (z, b) in out.iter_mut().zip(&self.bias) {
            *z = *z + *b;
            if relu {
                *z = z.max(T::zero());
            }
        }
    }
}

fn reduce_lanes<T: Scalar>(lanes: &[T; 8], tail: T) -> T {
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn lanes8<T>(c: &[T]) -> &[T; 8] {
    c.try_into().expect("chunk of eight")
}

/// Dot product over eight fixed accumulator lanes.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (ca, cb) in ca.zip(cb) {
        let (ca, cb) = (lanes8(ca), lanes8(cb));
        for j in 0..8 {
            lanes[j] = lanes[j] + ca[j] * cb[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ta.iter().zip(tb) {
        tail = tail + *x * *y;
    }
    reduce_lanes(&lanes, tail)
}

/// Indices of the non-zero entries when at most a quarter of `x` is
/// non-zero.
fn sparse_support<T: Scalar>(x: &[T]) -> Option<Vec<usize>> {
    let limit = x.len() / 4;
    let mut idx = Vec::new();
    for (i, v) in x.iter().enumerate() {
        if *v != T::zero() {
            if idx.len() == limit {
                return None;
            }
            idx.push(i);
        }
    }
    Some(idx)
}

/// `y += alpha * x`
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// Multilayer perceptron: ReLU on every hidden layer, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T = f32> {
    sizes: Vec<usize>,
    layers: Vec<Dense<T>>,
}

/// Activations recorded by [`Mlp::forward_trace`]; `acts[0]` is the input and
/// `acts[l + 1]` the output of layer `l`.
#[derive(Clone, Debug, Default)]
pub struct Trace<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-style uniform initialisation: weights in `±sqrt(6 / fan_in)`, zero
    /// biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn copy_from(&mut self, other: &Mlp<T>) {
        debug_assert_eq!(self.sizes, other.sizes);
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next, l != last);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every layer's activations for [`Mlp::backward`].
    pub fn forward_trace(&self, x: &[T], trace: &mut Trace<T>) -> Result<()> {
        self.check_input(x)?;
        trace.acts.resize_with(self.layers.len() + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.acts.split_at_mut(l + 1);
            layer.affine(&done[l], &mut rest[0], l != last);
        }
        Ok(())
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to output unit `action` is `dloss_dq`; other outputs carry no
    /// gradient.
    pub fn backward(&self, trace: &Trace<T>, action: usize, dloss_dq: T, grads: &mut Gradients<T>) -> Result<()> {
        self.backward_batch(std::slice::from_ref(trace), &[action], &[dloss_dq], grads)
    }

    /// [`Mlp::backward`] summed over several samples. Each gradient row is
    /// updated once for the whole batch.
    pub fn backward_batch(&self, traces: &[Trace<T>], actions: &[usize], dloss: &[T], grads: &mut Gradients<T>) -> Result<()> {
        let n = traces.len();
        if actions.len() != n || dloss.len() != n {
            return Err(Error::invalid("backward batch slices differ in length"));
        }
        for (trace, &action) in traces.iter().zip(actions) {
            if action >= self.output_dim() {
                return Err(Error::Shape {
                    expected: self.output_dim(),
                    got: action,
                });
            }
            if trace.acts.len() != self.layers.len() + 1 {
                return Err(Error::invalid("trace does not match network depth"));
            }
        }
        let mut deltas: Vec<Vec<T>> = actions
            .iter()
            .zip(dloss)
            .map(|(&a, &d)| {
                let mut v = vec![T::zero(); self.output_dim()];
                v[a] = d;
                v
            })
            .collect();
        let mut below: Vec<Vec<T>> = vec![Vec::new(); n];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let inputs: Vec<&[T]> = traces.iter().map(|t| t.acts[l].as_slice()).collect();
            let supports: Vec<Option<Vec<usize>>> = inputs.iter().map(|x| sparse_support(x)).collect();
            let (gw, gb) = &mut grads.layers[l];
            let mut dense: Vec<(T, &[T])> = Vec::with_capacity(n);
            for o in 0..layer.outputs {
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                dense.clear();
                for b in 0..n {
                    let d = deltas[b][o];
                    if d == T::zero() {
                        continue;
                    }
                    gb[o] = gb[o] + d;
                    match &supports[b] {
                        Some(idx) => idx.iter().for_each(|&i| grow[i] = grow[i] + d * inputs[b][i]),
                        None => dense.push((d, inputs[b])),
                    }
                }
                accumulate_rows(&dense, grow);
            }
            if l == 0 {
                break;
            }
            for (b, v) in below.iter_mut().enumerate() {
                v.clear();
                v.resize(layer.inputs, T::zero());
                for (o, &d) in deltas[b].iter().enumerate() {
                    if d != T::zero() {
                        axpy(d, layer.row(o), v);
                    }
                }
                // ReLU derivative from the stored post-activation.
                for (g, a) in v.iter_mut().zip(inputs[b]) {
                    if *a <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            std::mem::swap(&mut deltas, &mut below);
        }
        Ok(())
    }
}

/// `y += sum_k alpha_k * x_k`, four terms per pass over `y`.
fn accumulate_rows<T: Scalar>(terms: &[(T, &[T])], y: &mut [T]) {
    let mut groups = terms.chunks_exact(4);
    for g in &mut groups {
        let [(a0, x0), (a1, x1), (a2, x2), (a3, x3)] = [g[0], g[1], g[2], g[3]];
        for i in 0..y.len() {
            y[i] = y[i] + ((a0 * x0[i] + a1 * x1[i]) + (a2 * x2[i] + a3 * x3[i]));
        }
    }
    for &(a, x) in groups.remainder() {
        axpy(a, x, y);
    }
}

/// Gradient buffers shaped like an [`Mlp`]: `(weights, bias)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(T::zero());
            b.fill(T::zero());
        }
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            axpy(T::one(), ow, w);
            axpy(T::one(), ob, b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.values_mut() {
            *v = *v * s;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers.iter_mut().flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

/// Huber loss with threshold 1 and its derivative with respect to `pred`.
pub fn huber<T: Scalar>(pred: T, target: T) -> (T, T) {
    let e = pred - target;
    let half = lit::<T>(0.5);
    if e.abs() <= T::one() {
        (half * e * e, e)
    } else {
        (e.abs() - half, e.signum())
    }
}

/// Moments below the normal range are set to zero; subnormal arithmetic is
/// orders of magnitude slower and the values are negligible.
fn flush<T: Scalar>(x: T) -> T {
    if x.abs() < T::min_positive_value() {
        T::zero()
    } else {
        x
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub steps: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    /// lr 2.5e-4, betas 0.9 / 0.999, eps 1e-8.
    pub fn new(net: &Mlp<T>) -> Self {
        Self::with_lr(net, lit(2.5e-4))
    }

    pub fn with_lr(net: &Mlp<T>, lr: T) -> Self {
        Self {
            lr,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            steps: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let one = T::one();
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m.layers[l];
            let (vw, vb) = &mut self.v.layers[l];
            for (p, g, m, v) in [
                (&mut layer.weights, gw, mw, vw),
                (&mut layer.bias, gb, mb, vb),
            ] {
                for i in 0..p.len() {
                    m[i] = flush(b1 * m[i] + (one - b1) * g[i]);
                    v[i] = flush(b2 * v[i] + (one - b2) * g[i] * g[i]);
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &str = "foglb-checkpoint 1";

/// Text header plus little-endian f32 parameters of one or more networks of
/// identical shape. For every network, layer by layer: the weight matrix in
/// row-major `outputs x inputs` order, then the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub layers: Vec<usize>,
    /// Free-form `key value` metadata, written in key order.
    pub meta: BTreeMap<String, String>,
    pub nets: Vec<Mlp<f32>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        let sizes: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        out.push_str(&format!("layers {}\n", sizes.join(" ")));
        out.push_str(&format!("nets {}\n", self.nets.len()));
        for (k, v) in &self.meta {
            out.push_str(&format!("{k} {v}\n"));
        }
        out.push_str("end\n");
        let mut bytes = out.into_bytes();
        for net in &self.nets {
            for p in net.params() {
                bytes.extend_from_slice(&p.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("header not terminated"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not utf-8"))?;
            pos += end + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut layers = None;
        let mut count = None;
        let mut meta = BTreeMap::new();
        for line in &lines[1..] {
            let (key, value) = line.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
            match key {
                "layers" => {
                    let sizes: std::result::Result<Vec<usize>, _> = value.split(' ').map(str::parse).collect();
                    layers = Some(sizes.map_err(|_| bad("bad layer sizes"))?);
                }
                "nets" => count = Some(value.parse::<usize>().map_err(|_| bad("bad net count"))?),
                _ => {
                    meta.insert(key.to_string(), value.to_string());
                }
            }
        }
        let layers = layers.ok_or_else(|| bad("missing layers"))?;
        let count = count.ok_or_else(|| bad("missing nets"))?;
        let mut nets = Vec::with_capacity(count);
        let mut body = bytes[pos..].chunks_exact(4);
        for _ in 0..count {
            let mut net = Mlp::<f32>::zeros(&layers)?;
            for p in net.params_mut() {
                let chunk = body.next().ok_or_else(|| bad("truncated parameters"))?;
                *p = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            nets.push(net);
        }
        if body.next().is_some() || !body.remainder().is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { layers, meta, nets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f32>::zeros(&[5, 8, 4, 3]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { expected: 5, got: 1 })));
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 (ReLU) -> 1
        let mut net = Mlp::<f64>::zeros(&[2, 2, 1]).unwrap();
        net.layers[0].weights = vec![1.0, 2.0, -1.0, 1.0];
        net.layers[0].bias = vec![0.5, -3.0];
        net.layers[1].weights = vec![2.0, -1.0];
        net.layers[1].bias = vec![0.25];
        // hidden: [1*1 + 2*2 + 0.5, relu(-1 + 2 - 3)] = [5.5, 0]
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![2.0 * 5.5 + 0.25]);
        // hidden: [relu(-3 + 0.5), relu(3 - 3)] = [0, 0]
        assert_eq!(net.forward(&[3.0, -3.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f32>::new(&[17, 256, 128, 64, 9], &mut rng).unwrap();
        let x: Vec<f32> = (0..17).map(|i| i as f32 * 0.1 - 0.8).collect();
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let mut trace = Trace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        assert_eq!(trace.output(), net.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.0f64, 0.0), (0.0, 0.0));
        assert_eq!(huber(1.5f64, 1.0), (0.125, 0.5));
        assert_eq!(huber(3.0f64, 1.0), (1.5, 1.0));
        assert_eq!(huber(-1.0f64, 1.0), (1.5, -1.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f32>::new(&[4, 6, 3], &mut rng).unwrap();
        let mut trace = Trace::default();
        net.forward_trace(&[0.1, 0.2, 0.3, 0.4], &mut trace).unwrap();
        let mut g = Gradients::zeros_like(&net);
        net.backward(&trace, 1, 0.0, &mut g).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        let mut g2 = Gradients::zeros_like(&net);
        net.backward(&trace, 1, 0.7, &mut g).unwrap();
        net.backward(&trace, 1, 0.7, &mut g2).unwrap();
        assert_eq!(g, g2);
        assert!(net.backward(&trace, 3, 1.0, &mut g).is_err());
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::<f32>::new(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net);
        adam.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        for g in [1e-3f64, 0.5, -2.0, 1e4] {
            let mut net = Mlp::<f64>::zeros(&[1, 1]).unwrap();
            let mut grads = Gradients::zeros_like(&net);
            grads.layers[0].0[0] = g;
            let mut adam = Adam::new(&net);
            adam.step(&mut net, &grads).unwrap();
            let moved = net.layers[0].weights[0];
            // |m_hat / (sqrt(v_hat) + eps)| = |g| / (|g| + eps)
            let want = -2.5e-4 * g / (g.abs() + 1e-8);
            assert!((moved - want).abs() < 1e-15, "{moved} vs {want}");
            assert!((moved.abs() - 2.5e-4).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut net = Mlp::<f64>::zeros(&[1, 1]).unwrap();
        net.layers[0].weights[0] = 1.0;
        let mut adam = Adam::with_lr(&net, 0.01);
        let mut last = 1.0f64;
        for _ in 0..200 {
            let theta = net.layers[0].weights[0];
            let mut grads = Gradients::zeros_like(&net);
            grads.layers[0].0[0] = 2.0 * theta;
            adam.step(&mut net, &grads).unwrap();
            let now = net.layers[0].weights[0].abs();
            assert!(now < last, "{now} !< {last}");
            last = now;
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::<f32>::zeros(&[1, 1]).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].0[0] = f32::NAN;
        let mut adam = Adam::new(&net);
        assert!(matches!(adam.step(&mut net, &grads), Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sizes = [7, 256, 128, 64, 5];
        let a = Mlp::<f32>::new(&sizes, &mut rng).unwrap();
        let b = Mlp::<f32>::new(&sizes, &mut rng).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "4".to_string());
        let ckpt = Checkpoint { layers: sizes.to_vec(), meta, nets: vec![a.clone(), b] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let x = [0.3f32, -1.0, 0.0, 2.0, 0.5, 0.25, -0.75];
        let (y0, y1) = (a.forward(&x).unwrap(), back.nets[0].forward(&x).unwrap());
        assert!(y0.iter().zip(&y1).all(|(p, q)| p.to_bits() == q.to_bits()));

        let bytes = ckpt.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage\nend\n").is_err());
    }
}
