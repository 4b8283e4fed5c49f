//! Implicit distributions as MLPs of `(input, noise)`.
//!
//! An encoder `ẑ = f(x, ε)`, a decoder `x̂ = g(ẑ, n)` and every
//! discriminator are plain affine/activation stacks. Noise, when present,
//! is concatenated to the input at the first layer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Linear,
}

impl Activation {
    fn apply_graph(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softmax => g.softmax_rows(x),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub noise_dim: usize,
    /// Output width of each layer; the last entry is the network output.
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// `hidden` relu layers followed by an `output_dim` layer with `head`.
    pub fn new(input_dim: usize, noise_dim: usize, hidden: &[usize], output_dim: usize, head: Activation) -> Self {
        let mut layer_sizes = hidden.to_vec();
        layer_sizes.push(output_dim);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(head);
        Self { input_dim, noise_dim, layer_sizes, activations }
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes.last().copied().unwrap_or(0)
    }

    pub fn head(&self) -> Activation {
        self.activations.last().copied().unwrap_or(Activation::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        if self.layer_sizes.len() != self.activations.len() {
            return Err(Error::Config(format!(
                "{} layer sizes but {} activations",
                self.layer_sizes.len(),
                self.activations.len()
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.input_dim + self.noise_dim == 0 {
            return Err(Error::Config("mlp has no inputs".into()));
        }
        let last = self.activations.len() - 1;
        if self.activations[..last].contains(&Activation::Softmax) {
            return Err(Error::Config("softmax is only allowed as the final activation".into()));
        }
        Ok(())
    }

    fn fan_ins(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.input_dim + self.noise_dim).chain(self.layer_sizes.iter().copied())
    }
}

/// Learnable weights and biases of one [`MlpSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub step: u64,
}

impl ParamStore {
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, &width) in spec.fan_ins().zip(&spec.layer_sizes) {
            weights.push(Tensor::zeros(fan_in, width));
            biases.push(Tensor::zeros(1, width));
        }
        Self { weights, biases, step: 0 }
    }

    /// Tensors in storage order `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b])
    }

    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.weights.len()).flat_map(|i| [format!("w{i}"), format!("b{i}")]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().map(Tensor::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let expect = Self::zeros_like(spec);
        self.weights.len() == expect.weights.len()
            && self.tensors().zip(expect.tensors()).all(|(a, b)| a.shape() == b.shape())
    }
}

/// Weights ~ N(0, 1/fan_in), biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = Stream::new(seed);
    let mut store = ParamStore::zeros_like(spec);
    for w in &mut store.weights {
        let scale = 1.0 / (w.rows() as f64).sqrt();
        for v in w.data_mut() {
            *v = rng.normal() * scale;
        }
    }
    Ok(store)
}

/// Nodes produced by inserting an MLP into a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct MlpNodes {
    pub output: NodeId,
    /// Pre-activation of the final layer (logits for a softmax head).
    pub logits: NodeId,
}

/// Parameter nodes of an [`Mlp`] inside a particular [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundMlp {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    activations: Vec<Activation>,
    noise_dim: usize,
}

impl BoundMlp {
    pub fn apply(&self, g: &mut Graph, input: NodeId, noise: Option<NodeId>) -> MlpNodes {
        let mut h = match noise {
            Some(n) if self.noise_dim > 0 => g.concat_cols(&[input, n]),
            _ => input,
        };
        let mut logits = h;
        for ((&w, &b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let xw = g.matmul(h, w);
            logits = g.add_bias(xw, b);
            h = act.apply_graph(g, logits);
        }
        MlpNodes { output: h, logits }
    }
}

/// An [`MlpSpec`] together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: MlpSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        if !params.matches(&spec) {
            return Err(Error::Shape("parameter shapes do not match the mlp spec".into()));
        }
        Ok(Self { spec, params })
    }

    /// Graph leaf name of tensor `name` (e.g. `w0`) under `prefix`.
    pub fn leaf_name(prefix: &str, name: &str) -> String {
        format!("{prefix}.{name}")
    }

    /// Inserts this network's parameters into `g`. With `trainable`, they
    /// become named leaves `{prefix}.w{i}` / `{prefix}.b{i}`; otherwise
    /// constants. The bound network can be applied to several inputs, and
    /// gradients from every application accumulate on the same leaves.
    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> BoundMlp {
        let mut weights = Vec::with_capacity(self.params.weights.len());
        let mut biases = Vec::with_capacity(self.params.biases.len());
        for (i, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            if trainable {
                weights.push(g.param(&Self::leaf_name(prefix, &format!("w{i}")), w.clone()));
                biases.push(g.param(&Self::leaf_name(prefix, &format!("b{i}")), b.clone()));
            } else {
                weights.push(g.constant(w.clone()));
                biases.push(g.constant(b.clone()));
            }
        }
        BoundMlp { weights, biases, activations: self.spec.activations.clone(), noise_dim: self.spec.noise_dim }
    }

    /// [`Mlp::bind`] followed by a single [`BoundMlp::apply`].
    pub fn build(&self, g: &mut Graph, prefix: &str, input: NodeId, noise: Option<NodeId>, trainable: bool) -> MlpNodes {
        self.bind(g, prefix, trainable).apply(g, input, noise)
    }

    fn check_inputs(&self, input: &Tensor, noise: Option<&Tensor>) -> Result<()> {
        if input.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!("input has {} columns, expected {}", input.cols(), self.spec.input_dim)));
        }
        let noise_cols = noise.map_or(0, Tensor::cols);
        if noise_cols != self.spec.noise_dim {
            return Err(Error::Shape(format!("noise has {} columns, expected {}", noise_cols, self.spec.noise_dim)));
        }
        if let Some(n) = noise {
            if n.rows() != input.rows() && self.spec.noise_dim > 0 {
                return Err(Error::Shape("noise and input batch sizes differ".into()));
            }
        }
        Ok(())
    }

    /// Evaluates the network, returning `(output, final-layer logits)`.
    pub fn forward_with_logits(&self, input: &Tensor, noise: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        self.check_inputs(input, noise)?;
        let mut g = Graph::new();
        let x = g.input("x");
        let n = (self.spec.noise_dim > 0).then(|| g.input("n"));
        let nodes = self.build(&mut g, "net", x, n, false);
        match noise {
            Some(nt) if self.spec.noise_dim > 0 => g.forward(&[("x", input), ("n", nt)])?,
            _ => g.forward(&[("x", input)])?,
        }
        Ok((g.value(nodes.output).cloned().unwrap(), g.value(nodes.logits).cloned().unwrap()))
    }

    pub fn forward(&self, input: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_logits(input, noise)?.0)
    }
}

/// Result of [`implicit_forward`]: the output and the graph that produced it.
pub struct ImplicitPass {
    pub output: Tensor,
    pub graph: Graph,
    pub nodes: MlpNodes,
}

/// Samples `f(input, noise)` and returns the recording graph with trainable
/// parameter leaves named `net.w{i}` / `net.b{i}`.
pub fn implicit_forward(spec: &MlpSpec, params: &ParamStore, input: &Tensor, noise: &Tensor) -> Result<ImplicitPass> {
    let net = Mlp::from_parts(spec.clone(), params.clone())?;
    let noise = (spec.noise_dim > 0).then_some(noise);
    net.check_inputs(input, noise)?;
    let mut graph = Graph::new();
    let x = graph.input("x");
    let n = noise.map(|_| graph.input("n"));
    let nodes = net.build(&mut graph, "net", x, n, true);
    match noise {
        Some(nt) => graph.forward(&[("x", input), ("n", nt)])?,
        None => graph.forward(&[("x", input)])?,
    }
    let output = graph.value(nodes.output).cloned().unwrap();
    Ok(ImplicitPass { output, graph, nodes })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: MlpSpec,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Serializes to: little-endian u64 header length, JSON header, then every
/// tensor's entries as little-endian f64 in storage order.
pub fn encode_checkpoint(spec: &MlpSpec, params: &ParamStore) -> Result<Vec<u8>> {
    if !params.matches(spec) {
        return Err(Error::Checkpoint("parameters do not match spec".into()));
    }
    let header = CheckpointHeader {
        spec: spec.clone(),
        step: params.step,
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorEntry { name, rows: t.rows(), cols: t.cols() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + params.num_params() * 8);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlpSpec, ParamStore)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("file too short for header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..).ok_or_else(|| bad("missing header"))?;
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    header.spec.validate()?;
    let mut params = ParamStore::zeros_like(&header.spec);
    params.step = header.step;
    let names = params.tensor_names();
    if header.tensors.len() != names.len() {
        return Err(bad("tensor count does not match spec"));
    }
    let mut payload = &body[hlen..];
    for ((entry, name), t) in header.tensors.iter().zip(&names).zip(params.tensors_mut()) {
        if &entry.name != name || (entry.rows, entry.cols) != t.shape() {
            return Err(Error::Checkpoint(format!("tensor `{}` does not match spec", entry.name)));
        }
        let need = t.len() * 8;
        if payload.len() < need {
            return Err(bad("truncated payload"));
        }
        for (v, chunk) in t.data_mut().iter_mut().zip(payload[..need].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        payload = &payload[need..];
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((header.spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &ParamStore) -> Result<()> {
    let bytes = encode_checkpoint(spec, params)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: usize, head: Activation) -> MlpSpec {
        MlpSpec::new(3, noise, &[16, 8], 4, head)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(2, Activation::Linear);
        let a = init_params(&s, 9).unwrap();
        let b = init_params(&s, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.biases.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
        assert_ne!(a, init_params(&s, 10).unwrap());
    }

    #[test]
    fn init_std_scales_with_fan_in() {
        let s = MlpSpec::new(100, 0, &[], 200, Activation::Linear);
        let p = init_params(&s, 3).unwrap();
        let w = &p.weights[0];
        let mean = w.mean();
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.02, "std {std}");
    }

    #[test]
    fn validation_rules() {
        let mut s = spec(0, Activation::Linear);
        s.activations[0] = Activation::Softmax;
        assert!(s.validate().is_err());
        let empty = MlpSpec { input_dim: 2, noise_dim: 0, layer_sizes: vec![], activations: vec![] };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn deterministic_without_noise() {
        let net = Mlp::new(spec(0, Activation::Tanh), 1).unwrap();
        let x = Tensor::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(net.forward(&x, None).unwrap(), net.forward(&x, None).unwrap());
        // An ignored dummy noise argument of width zero changes nothing.
        let dummy = Tensor::zeros(5, 0);
        assert_eq!(net.forward(&x, Some(&dummy)).unwrap(), net.forward(&x, None).unwrap());
    }

    #[test]
    fn softmax_head_on_simplex() {
        let net = Mlp::new(spec(0, Activation::Softmax), 4).unwrap();
        let x = Tensor::from_fn(6, 3, |i, j| (i * j) as f64 - 2.0);
        let y = net.forward(&x, None).unwrap();
        for r in 0..y.rows() {
            let row = y.row_slice(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn noise_changes_output() {
        let s = MlpSpec::new(3, 100, &[32], 2, Activation::Linear);
        let p = init_params(&s, 7).unwrap();
        let x = Tensor::from_fn(1, 3, |_, j| j as f64);
        let n1 = Stream::new(1).normal_tensor(1, 100);
        let n2 = Stream::new(2).normal_tensor(1, 100);
        let a = implicit_forward(&s, &p, &x, &n1).unwrap().output;
        let b = implicit_forward(&s, &p, &x, &n2).unwrap().output;
        assert_ne!(a, b);
    }

    #[test]
    fn implicit_forward_rejects_bad_shapes() {
        let s = spec(2, Activation::Linear);
        let p = init_params(&s, 1).unwrap();
        let x = Tensor::zeros(4, 2);
        let n = Tensor::zeros(4, 2);
        assert!(matches!(implicit_forward(&s, &p, &x, &n), Err(Error::Shape(_))));
    }

    #[test]
    fn graph_and_direct_paths_agree_bitwise() {
        let s = spec(2, Activation::Sigmoid);
        let p = init_params(&s, 5).unwrap();
        let x = Stream::new(3).normal_tensor(7, 3);
        let n = Stream::new(4).normal_tensor(7, 2);
        let net = Mlp::from_parts(s.clone(), p.clone()).unwrap();
        assert_eq!(implicit_forward(&s, &p, &x, &n).unwrap().output, net.forward(&x, Some(&n)).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = spec(2, Activation::Linear);
        let mut p = init_params(&s, 12).unwrap();
        p.step = 41;
        p.weights[0].data_mut()[0] = f64::MIN_POSITIVE;
        let bytes = encode_checkpoint(&s, &p).unwrap();
        let (s2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(s, s2);
        assert_eq!(p.step, p2.step);
        for (a, b) in p.tensors().zip(p2.tensors()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
