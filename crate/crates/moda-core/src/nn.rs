//! Multilayer perceptrons, parameter storage, optimizers, and the binary
//! checkpoint format.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Tensor,
}

/// Owns all trainable tensors of a model. Registration order is stable and
/// defines the checkpoint layout.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.entries[id.0].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                details: format!(
                    "parameter {} has shape {:?}, got {:?}",
                    self.entries[id.0].name,
                    self.entries[id.0].value.shape(),
                    value.shape()
                ),
            });
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------
//
// Flat binary, little-endian:
//   magic "MODACKPT" | version u32 | param count u32
//   per parameter (registration order):
//     name len u32 | name bytes | ndim u32 | dims u64.. | values f64..

const CHECKPOINT_MAGIC: &[u8; 8] = b"MODACKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.entries.len() as u32).to_le_bytes());
    for entry in &store.entries {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(entry.value.rank() as u32).to_le_bytes());
        for &d in entry.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in entry.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint as (name, tensor) pairs in stored order.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Load a checkpoint into an already-built store. Names and shapes must
/// match registration order exactly.
pub fn load_checkpoint(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let params = read_checkpoint(path)?;
    if params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, store has {}",
            params.len(),
            store.len()
        )));
    }
    for (id, (name, tensor)) in store.ids().collect::<Vec<_>>().into_iter().zip(params) {
        if store.name(id) != name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: expected {}, found {}",
                store.name(id),
                name
            )));
        }
        store.set_value(id, tensor)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully-connected layer `y = act(x W^T + b)` with weight stored out x in.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Glorot-uniform initialization in +-sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(fan_out, fan_in, data).unwrap()
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, rng));
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        DenseLayer { weight, bias, activation, in_dim, out_dim }
    }

    /// Forward through the graph. `x` is batch x in_dim.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let z = g.matmul_tb(x, w)?;
        let z = g.add(z, b)?;
        Ok(match self.activation {
            Activation::Relu => g.relu(z),
            Activation::Identity => z,
        })
    }

    /// Plain value-level forward (no graph, no dropout).
    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        if x.rank() != 2 || x.cols() != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "dense_forward",
                details: format!("input {:?} vs in_dim {}", x.shape(), self.in_dim),
            });
        }
        let (batch, out_dim) = (x.rows(), self.out_dim);
        let mut data = vec![0.0; batch * out_dim];
        for r in 0..batch {
            let xr = x.row(r);
            for o in 0..out_dim {
                let wrow = w.row(o);
                let mut s = b.data()[o];
                for (xi, wi) in xr.iter().zip(wrow) {
                    s += xi * wi;
                }
                data[r * out_dim + o] = match self.activation {
                    Activation::Relu => s.max(0.0),
                    Activation::Identity => s,
                };
            }
        }
        Tensor::matrix(batch, out_dim, data)
    }
}

/// A stack of dense layers with an optional dropout site at the input of
/// each layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    /// Dropout probability applied to the input of each layer (default 0).
    pub dropout_sites: Vec<f64>,
}

impl Mlp {
    /// Build from a dimension chain `[in, hidden.., out]`. Hidden layers use
    /// relu, the last layer emits raw logits.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::new_with_output(store, name, dims, false, rng)
    }

    /// Like [`Mlp::new`] but with a relu on the last layer too when
    /// `relu_output` is set (feature extractors).
    pub fn new_with_output(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        relu_output: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "mlp {name} needs at least input and output dims, got {dims:?}"
            )));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let last = i + 2 == dims.len();
            let act = if last && !relu_output { Activation::Identity } else { Activation::Relu };
            layers.push(DenseLayer::new(
                store,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                act,
                rng,
            ));
        }
        let sites = vec![0.0; layers.len()];
        Ok(Mlp { layers, dropout_sites: sites })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Forward through the graph, applying inverted dropout with fresh masks
    /// at each site. `dropout_override`, when given, replaces the configured
    /// per-site rates (one entry per layer).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        dropout_override: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if let Some(rates) = dropout_override {
            if rates.len() != self.layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "dropout override has {} rates for {} layers",
                    rates.len(),
                    self.layers.len()
                )));
            }
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let rate = dropout_override.map(|r| r[i]).unwrap_or(self.dropout_sites[i]);
            if rate > 0.0 {
                let mask = sample_dropout_mask(g.value(h).shape().to_vec(), rate, rng);
                h = g.dropout_mask(h, mask)?;
            }
            h = layer.forward(g, store, h)?;
        }
        Ok(h)
    }

    /// Deterministic inference: plain values, no dropout.
    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_values(store, &h)?;
        }
        Ok(h)
    }
}

/// Inverted-dropout mask: each element is 0 with probability `rate`, else
/// 1/(1-rate), so the expected value of `x * mask` equals `x`.
pub fn sample_dropout_mask(shape: Vec<usize>, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let n: usize = shape.iter().product();
    let data: Vec<f64> =
        (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale }).collect();
    Tensor::new(shape, data).unwrap()
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdaDelta,
}

#[derive(Debug, Clone)]
struct AdaDeltaState {
    /// Running average of squared gradients.
    sq_grad: Vec<f64>,
    /// Running average of squared updates.
    sq_update: Vec<f64>,
}

/// SGD or AdaDelta. AdaDelta keeps per-parameter running averages of squared
/// gradients and squared updates:
///   v <- rho v + (1-rho) g^2
///   dx = sqrt(u + eps) / sqrt(v + eps) * g
///   u <- rho u + (1-rho) dx^2
///   theta <- theta - lr dx
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    state: HashMap<ParamId, AdaDeltaState>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            rho: 0.9,
            eps: 1e-6,
            state: HashMap::new(),
        }
    }

    pub fn adadelta(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::AdaDelta,
            learning_rate,
            rho: 0.9,
            eps: 1e-6,
            state: HashMap::new(),
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::sgd(learning_rate),
            OptimizerKind::AdaDelta => Optimizer::adadelta(learning_rate),
        }
    }

    /// Apply one update to every parameter present in `grads`. The whole
    /// step is validated first: any non-finite gradient aborts before any
    /// parameter is touched, and the error names the parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &HashMap<ParamId, Tensor>,
    ) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(&id) {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
                }
            }
        }
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(&id) else { continue };
            let current = store.value(id).clone();
            let updated = match self.kind {
                OptimizerKind::Sgd => {
                    let data: Vec<f64> = current
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(p, gv)| p - self.learning_rate * gv)
                        .collect();
                    Tensor::new(current.shape().to_vec(), data).unwrap()
                }
                OptimizerKind::AdaDelta => {
                    let n = current.len();
                    let st = self.state.entry(id).or_insert_with(|| AdaDeltaState {
                        sq_grad: vec![0.0; n],
                        sq_update: vec![0.0; n],
                    });
                    let mut data = Vec::with_capacity(n);
                    for (k, (p, gv)) in current.data().iter().zip(g.data()).enumerate() {
                        st.sq_grad[k] = self.rho * st.sq_grad[k] + (1.0 - self.rho) * gv * gv;
                        let dx = (st.sq_update[k] + self.eps).sqrt()
                            / (st.sq_grad[k] + self.eps).sqrt()
                            * gv;
                        st.sq_update[k] =
                            self.rho * st.sq_update[k] + (1.0 - self.rho) * dx * dx;
                        data.push(p - self.learning_rate * dx);
                    }
                    Tensor::new(current.shape().to_vec(), data).unwrap()
                }
            };
            store.set_value(id, updated)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(1, 0, 0);
        let layer = DenseLayer::new(&mut store, "l", 2, 2, Activation::Identity, &mut rng);
        store
            .set_value(layer.weight, Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let x = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let y = layer.forward_values(&store, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dense_rejects_dimension_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(1, 0, 0);
        let layer = DenseLayer::new(&mut store, "l", 3, 2, Activation::Identity, &mut rng);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(layer.forward_values(&store, &x).is_err());
    }

    #[test]
    fn zero_dropout_matches_plain_forward_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(2, 0, 0);
        let net = Mlp::new(&mut store, "net", &[3, 8, 2], &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();

        let plain = net.forward_values(&store, &x).unwrap();

        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let mut fwd_rng = stream_rng(3, 0, 0);
        let out = net.forward(&mut g, &store, xn, Some(&[0.0, 0.0]), &mut fwd_rng).unwrap();
        let with_zero_rate = g.value(out);
        let a: Vec<u64> = plain.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = with_zero_rate.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);

        // a mask of all keeps at rate 0 is exactly the identity
        let mask = sample_dropout_mask(vec![4, 3], 0.0, &mut stream_rng(4, 0, 0));
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // mean over 1e5 masks of rate p on all-ones input stays within 1% of 1
        let p = 0.3;
        let mut rng = stream_rng(5, 0, 0);
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let mask = sample_dropout_mask(vec![4], p, &mut rng);
            acc += mask.data().iter().sum::<f64>() / 4.0;
        }
        let mean = acc / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sgd_step_matches_hand_value() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::scalar(1.0));
        let mut opt = Optimizer::sgd(0.1);
        let grads = HashMap::from([(p, Tensor::scalar(2.0))]);
        opt.step(&mut store, &grads).unwrap();
        assert_abs_diff_eq!(store.value(p).item(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn adadelta_first_step_matches_hand_recurrence() {
        // v = (1-rho) g^2; dx = sqrt(eps)/sqrt(v+eps) g; theta -= lr dx
        // with g=2, rho=0.9, eps=1e-6, lr=1: dx = 0.0031622737073287157
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::scalar(1.0));
        let mut opt = Optimizer::adadelta(1.0);
        let grads = HashMap::from([(p, Tensor::scalar(2.0))]);
        opt.step(&mut store, &grads).unwrap();
        assert_abs_diff_eq!(store.value(p).item(), 0.9968377262926713, epsilon = 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        for mut opt in [Optimizer::sgd(0.5), Optimizer::adadelta(1.0)] {
            let mut store = ParamStore::new();
            let p = store.register("p", Tensor::scalar(3.5));
            let grads = HashMap::from([(p, Tensor::scalar(0.0))]);
            opt.step(&mut store, &grads).unwrap();
            assert_eq!(store.value(p).item(), 3.5);
        }
    }

    #[test]
    fn nan_gradient_aborts_step_naming_parameter() {
        let mut store = ParamStore::new();
        let a = store.register("net.weight", Tensor::scalar(1.0));
        let b = store.register("net.bias", Tensor::scalar(2.0));
        let mut opt = Optimizer::sgd(0.1);
        let grads =
            HashMap::from([(a, Tensor::scalar(1.0)), (b, Tensor::scalar(f64::NAN))]);
        let err = opt.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("net.bias"), "{err}");
        // atomic: nothing was applied
        assert_eq!(store.value(a).item(), 1.0);
        assert_eq!(store.value(b).item(), 2.0);
    }

    #[test]
    fn checkpoint_round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        let mut rng = stream_rng(6, 0, 0);
        let _net = Mlp::new(&mut store, "net", &[2, 4, 2], &mut rng).unwrap();

        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        save_checkpoint(&store, &p1).unwrap();
        save_checkpoint(&store, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let mut restored = ParamStore::new();
        let mut rng2 = stream_rng(7, 0, 0);
        let _net2 = Mlp::new(&mut restored, "net", &[2, 4, 2], &mut rng2).unwrap();
        load_checkpoint(&mut restored, &p1).unwrap();
        for (a, b) in store.ids().zip(restored.ids()) {
            assert_eq!(store.value(a).data(), restored.value(b).data());
        }

        // wrong architecture is rejected
        let mut other = ParamStore::new();
        let _ = Mlp::new(&mut other, "net", &[2, 3, 2], &mut stream_rng(8, 0, 0)).unwrap();
        assert!(load_checkpoint(&mut other, &p1).is_err());
    }

    /// Train a 2-layer MLP on a linearly separable 2-class toy set and
    /// require perfect training accuracy within 500 epochs.
    fn separable_toy_reaches_full_accuracy(kind: OptimizerKind) {
        let mut data_rng = stream_rng(9, 0, 0);
        let n = 40;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            feats.push(center + 0.5 * rand::Rng::gen_range(&mut data_rng, -1.0..1.0));
            feats.push(center + 0.5 * rand::Rng::gen_range(&mut data_rng, -1.0..1.0));
            labels.push(class);
        }
        let x = Tensor::matrix(n, 2, feats).unwrap();

        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "net", &[2, 8, 2], &mut stream_rng(10, 0, 0)).unwrap();
        let mut opt = Optimizer::new(kind, if kind == OptimizerKind::Sgd { 0.1 } else { 1.0 });

        let mut perfect_at = None;
        for epoch in 0..500 {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let logits = net.forward(&mut g, &store, xn, None, &mut stream_rng(11, 0, 0)).unwrap();
            let lsm = g.log_softmax(logits).unwrap();
            let mut mask = vec![0.0; n * 2];
            for (r, &l) in labels.iter().enumerate() {
                mask[r * 2 + l] = 1.0;
            }
            let mn = g.constant(Tensor::matrix(n, 2, mask).unwrap());
            let picked = g.mul(lsm, mn).unwrap();
            let s = g.sum(picked);
            let loss = g.scale(s, -1.0 / n as f64);
            g.backward(loss).unwrap();
            opt.step(&mut store, &g.param_grads()).unwrap();

            let out = net.forward_values(&store, &x).unwrap();
            let correct = (0..n)
                .filter(|&r| {
                    let row = out.row(r);
                    let pred = if row[1] > row[0] { 1 } else { 0 };
                    pred == labels[r]
                })
                .count();
            if correct == n {
                perfect_at = Some(epoch);
                break;
            }
        }
        assert!(perfect_at.is_some(), "never reached 100% training accuracy");
    }

    #[test]
    fn separable_toy_sgd() {
        separable_toy_reaches_full_accuracy(OptimizerKind::Sgd);
    }

    #[test]
    fn separable_toy_adadelta() {
        separable_toy_reaches_full_accuracy(OptimizerKind::AdaDelta);
    }
}
