use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Output head of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Linear,
}

/// `head(W3·relu(W2·relu(W1·x + b1) + b2) + b3)`.
///
/// Parameters live in one flat buffer laid out `W1 b1 W2 b2 W3 b3`, with
/// each matrix row-major `[out × in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct Mlp3 {
    dims: [usize; 4],
    head: Head,
    params: Vec<f64>,
}

/// Parameter-shaped gradient, same flat layout as [`Mlp3`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dims: [usize; 4],
    pub values: Vec<f64>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    pub input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    pub output: Vec<f64>,
}

fn n_params(d: [usize; 4]) -> usize {
    (0..3).map(|l| d[l + 1] * d[l] + d[l + 1]).sum()
}

/// (weight offset, bias offset) of layer `l`.
fn offsets(d: [usize; 4], l: usize) -> (usize, usize) {
    let mut off = 0;
    for i in 0..l {
        off += d[i + 1] * d[i] + d[i + 1];
    }
    (off, off + d[l + 1] * d[l])
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Mlp3 {
    pub fn zeros(input: usize, hidden1: usize, hidden2: usize, output: usize, head: Head) -> Self {
        let dims = [input, hidden1, hidden2, output];
        Mlp3 {
            dims,
            head,
            params: vec![0.0; n_params(dims)],
        }
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng>(input: usize, hidden1: usize, hidden2: usize, output: usize, head: Head, rng: &mut R) -> Self {
        let mut net = Mlp3::zeros(input, hidden1, hidden2, output, head);
        for l in 0..3 {
            let bound = 1.0 / (net.dims[l] as f64).sqrt();
            let (w, _) = offsets(net.dims, l);
            let len = net.dims[l + 1] * net.dims[l] + net.dims[l + 1];
            for p in &mut net.params[w..w + len] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// `(W, b)` of layer `l` in 0..3.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = offsets(self.dims, l);
        (&self.params[w..b], &self.params[b..b + self.dims[l + 1]])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = offsets(self.dims, l);
        let out = self.dims[l + 1];
        let (head, tail) = self.params[w..b + out].split_at_mut(b - w);
        (head, tail)
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let n_in = self.dims[l];
        b.iter()
            .enumerate()
            .map(|(j, bj)| bj + w[j * n_in..(j + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache> {
        if x.len() != self.dims[0] {
            return Err(Error::dim(format!("input of length {}, network expects {}", x.len(), self.dims[0])));
        }
        let mut a1 = self.affine(0, x);
        relu(&mut a1);
        let mut a2 = self.affine(1, &a1);
        relu(&mut a2);
        let z3 = self.affine(2, &a2);
        let output = match self.head {
            Head::Softmax => softmax(&z3),
            Head::Linear => z3,
        };
        Ok(Cache {
            input: x.to_vec(),
            a1,
            a2,
            output,
        })
    }

    /// Accumulate into `grad` the parameter gradient for upstream
    /// `d_output = ∂L/∂output`, returning `∂L/∂input`.
    pub fn backprop(&self, cache: &Cache, d_output: &[f64], grad: &mut Gradient) -> Vec<f64> {
        debug_assert_eq!(grad.dims, self.dims);
        let delta3: Vec<f64> = match self.head {
            Head::Linear => d_output.to_vec(),
            Head::Softmax => {
                let y = &cache.output;
                let dot: f64 = y.iter().zip(d_output).map(|(a, b)| a * b).sum();
                y.iter().zip(d_output).map(|(yi, gi)| yi * (gi - dot)).collect()
            }
        };
        let mut d_a2 = self.layer_backward(2, &cache.a2, &delta3, grad);
        for (d, a) in d_a2.iter_mut().zip(&cache.a2) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let mut d_a1 = self.layer_backward(1, &cache.a1, &d_a2, grad);
        for (d, a) in d_a1.iter_mut().zip(&cache.a1) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        self.layer_backward(0, &cache.input, &d_a1, grad)
    }

    fn layer_backward(&self, l: usize, input: &[f64], delta: &[f64], grad: &mut Gradient) -> Vec<f64> {
        let n_in = self.dims[l];
        let (wo, bo) = offsets(self.dims, l);
        let (w, _) = self.layer(l);
        let mut d_in = vec![0.0; n_in];
        for (j, &dj) in delta.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            grad.values[bo + j] += dj;
            let row = &mut grad.values[wo + j * n_in..wo + (j + 1) * n_in];
            for (g, x) in row.iter_mut().zip(input) {
                *g += dj * x;
            }
            for (d, wij) in d_in.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                *d += dj * wij;
            }
        }
        d_in
    }

    pub fn zero_grad(&self) -> Gradient {
        Gradient {
            dims: self.dims,
            values: vec![0.0; self.params.len()],
        }
    }

    /// Mean squared error over a batch and its exact gradient.
    pub fn backward(&self, batch: &TrainBatch) -> Result<(f64, Gradient)> {
        let b = batch.len() as f64;
        let mut grad = self.zero_grad();
        let mut loss = 0.0;
        for (x, t) in batch.inputs.iter().zip(&batch.targets) {
            let cache = self.forward_cached(x)?;
            if t.len() != cache.output.len() {
                return Err(Error::dim("target width differs from network output"));
            }
            let diff: Vec<f64> = cache.output.iter().zip(t).map(|(p, q)| p - q).collect();
            loss += diff.iter().map(|d| d * d).sum::<f64>();
            let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * d / b).collect();
            self.backprop(&cache, &d_out, &mut grad);
        }
        Ok((loss / b, grad))
    }

    /// Polyak average towards `source`: `θ ← (1−τ)θ + τθ_src`.
    pub fn soft_update(&mut self, source: &Mlp3, tau: f64) {
        for (p, s) in self.params.iter_mut().zip(&source.params) {
            *p = (1.0 - tau) * *p + tau * s;
        }
    }

    /// Hex SHA-256 of shapes, head and parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims {
            h.update((d as u64).to_le_bytes());
        }
        h.update([self.head as u8]);
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.values {
            *g *= k;
        }
    }

    /// Rescale so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }
}

pub fn mse_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::dim(format!("row width {} vs {}", p.len(), t.len())));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Inputs with simplex targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainBatch {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::dim(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
        }
        for (i, t) in targets.iter().enumerate() {
            let s: f64 = t.iter().sum();
            if t.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("target row {i} is not on the simplex")));
            }
        }
        Ok(TrainBatch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form: shapes plus row-major parameter arrays.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    head: Head,
    input_dim: usize,
    hidden1: usize,
    hidden2: usize,
    output_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl From<Mlp3> for Checkpoint {
    fn from(net: Mlp3) -> Self {
        let [d, h1, h2, k] = net.dims;
        let part = |l: usize| {
            let (w, b) = net.layer(l);
            (w.to_vec(), b.to_vec())
        };
        let ((w1, b1), (w2, b2), (w3, b3)) = (part(0), part(1), part(2));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            head: net.head,
            input_dim: d,
            hidden1: h1,
            hidden2: h2,
            output_dim: k,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }
}

impl TryFrom<Checkpoint> for Mlp3 {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!("unsupported network checkpoint version {}", c.version)));
        }
        let dims = [c.input_dim, c.hidden1, c.hidden2, c.output_dim];
        let parts = [c.w1, c.b1, c.w2, c.b2, c.w3, c.b3];
        let expected = [
            dims[1] * dims[0],
            dims[1],
            dims[2] * dims[1],
            dims[2],
            dims[3] * dims[2],
            dims[3],
        ];
        for (i, (p, e)) in parts.iter().zip(expected).enumerate() {
            if p.len() != e {
                return Err(Error::Schema(format!("checkpoint array {i} has {} values, expected {e}", p.len())));
            }
        }
        let params: Vec<f64> = parts.into_iter().flatten().collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(Mlp3 {
            dims,
            head: c.head,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Straight-line recomputation with explicit loops and a naive softmax.
    fn oracle_forward(net: &Mlp3, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..3 {
            let (w, b) = net.layer(l);
            let (n_in, n_out) = (net.dims()[l], net.dims()[l + 1]);
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                z[j] = b[j];
                for i in 0..n_in {
                    z[j] += w[j * n_in + i] * h[i];
                }
            }
            h = if l < 2 { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let e: Vec<f64> = h.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn zero_net_is_uniform() {
        let net = Mlp3::zeros(5, 4, 3, 4, Head::Softmax);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.25; 4]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn bias_shift_invariance() {
        let mut r = rng(1);
        let mut net = Mlp3::init(6, 8, 8, 3, Head::Softmax, &mut r);
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let before = net.forward(&x).unwrap();
        for b in net.layer_mut(2).1 {
            *b += 3.7;
        }
        let after = net.forward(&x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_oracle() {
        let mut r = rng(2);
        for _ in 0..20 {
            let net = Mlp3::init(7, 9, 5, 4, Head::Softmax, &mut r);
            let x: Vec<f64> = (0..7).map(|_| r.random_range(-2.0..2.0)).collect();
            for (a, b) in net.forward(&x).unwrap().iter().zip(oracle_forward(&net, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_examples() {
        let p = vec![vec![0.2, 0.8], vec![0.5, 0.5]];
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        let t = vec![vec![1.2, 0.8], vec![0.5, 1.5]];
        assert!((mse_loss(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(mse_loss(&p, &t[..1]).is_err());
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let net = Mlp3::zeros(3, 4, 4, 2, Head::Softmax);
        let batch = TrainBatch::new(vec![vec![1.0, 2.0, 3.0]; 4], vec![vec![0.5, 0.5]; 4]).unwrap();
        let (loss, g) = net.backward(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let mut r = rng(3);
        let net = Mlp3::init(4, 6, 6, 3, Head::Softmax, &mut r);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ts: Vec<Vec<f64>> = (0..5).map(|i| {
            let mut t = vec![0.0; 3];
            t[i % 3] = 1.0;
            t
        }).collect();
        let (_, g1) = net.backward(&TrainBatch::new(xs.clone(), ts.clone()).unwrap()).unwrap();
        let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
        let ts2: Vec<_> = ts.iter().chain(&ts).cloned().collect();
        let (_, g2) = net.backward(&TrainBatch::new(xs2, ts2).unwrap()).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_must_be_simplex() {
        assert!(TrainBatch::new(vec![vec![0.0]], vec![vec![0.7, 0.7]]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut r = rng(4);
        let net = Mlp3::init(5, 7, 3, 2, Head::Linear, &mut r);
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp3 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.checksum(), net.checksum());
        let bad = json.replace("\"version\":1", "\"version\":9");
        assert!(serde_json::from_str::<Mlp3>(&bad).is_err());
    }
}
