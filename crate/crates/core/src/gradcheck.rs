//! Finite-difference verification of every primitive op and of composed
//! network graphs.

use serde::Serialize;

use crate::autodiff::{finite_diff_check, Graph, NodeId};
use crate::error::Result;
use crate::nets::{Activation, Mlp, MlpSpec};
use crate::objectives::{autoencoder_generator_graph, AeNoise, IaeStepConfig, Nets, Prior};
use crate::rng::Stream;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub leaf: String,
    pub error: f64,
}

impl GradcheckRow {
    pub fn pass(&self) -> bool {
        self.error < TOLERANCE
    }
}

/// Entries uniform in `±[lo, hi]`, keeping clear of kinks at 0.
fn away_from_zero(rng: &mut Stream, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let m = lo + (hi - lo) * rng.uniform();
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

fn positive(rng: &mut Stream, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| 0.2 + 1.8 * rng.uniform())
}

type Builder = fn(&mut Graph, NodeId, NodeId) -> NodeId;

/// Unary and binary primitive ops, each reduced to a scalar through a
/// random weighting so that every output entry matters.
fn primitive_cases(rng: &mut Stream) -> Vec<(&'static str, Tensor, Tensor, Builder)> {
    let (r, c) = (3, 4);
    let gen = |rng: &mut Stream| away_from_zero(rng, r, c, 0.1, 1.5);
    let mut cases: Vec<(&'static str, Tensor, Tensor, Builder)> = Vec::new();
    macro_rules! case {
        ($name:expr, $a:expr, $b:expr, $f:expr) => {
            cases.push(($name, $a, $b, $f));
        };
    }
    case!("matmul", gen(rng), away_from_zero(rng, c, 2, 0.1, 1.5), |g, a, b| g.matmul(a, b));
    case!("add_bias", gen(rng), away_from_zero(rng, 1, c, 0.1, 1.5), |g, a, b| g.add_bias(a, b));
    case!("add", gen(rng), gen(rng), |g, a, b| g.add(a, b));
    case!("sub", gen(rng), gen(rng), |g, a, b| g.sub(a, b));
    case!("mul", gen(rng), gen(rng), |g, a, b| g.mul(a, b));
    case!("div", gen(rng), away_from_zero(rng, r, c, 0.5, 1.5), |g, a, b| g.div(a, b));
    case!("scale", gen(rng), gen(rng), |g, a, _| g.scale(a, -1.7));
    case!("relu", gen(rng), gen(rng), |g, a, _| g.relu(a));
    case!("tanh", gen(rng), gen(rng), |g, a, _| g.tanh(a));
    case!("sigmoid", gen(rng), gen(rng), |g, a, _| g.sigmoid(a));
    case!("log_sigmoid", gen(rng).scale(4.0), gen(rng), |g, a, _| g.log_sigmoid(a));
    case!("softmax_rows", gen(rng), gen(rng), |g, a, _| g.softmax_rows(a));
    case!("log", positive(rng, r, c), gen(rng), |g, a, _| g.log(a));
    case!("exp", gen(rng), gen(rng), |g, a, _| g.exp(a));
    case!("abs", gen(rng), gen(rng), |g, a, _| g.abs(a));
    case!("concat_cols", gen(rng), away_from_zero(rng, r, 2, 0.1, 1.5), |g, a, b| g.concat_cols(&[a, b]));
    case!("sum", gen(rng), gen(rng), |g, a, _| g.sum(a));
    case!("mean", gen(rng), gen(rng), |g, a, _| g.mean(a));
    case!("softmax_cross_entropy", gen(rng), positive(rng, r, c), |g, a, b| g.softmax_cross_entropy(a, b));
    case!("stop_grad_passthrough", gen(rng), gen(rng), |g, a, b| {
        // d/da of a·b + stop_grad(a)·0 only sees the live branch.
        let s = g.stop_grad(a);
        let zero = g.scale(s, 0.0);
        let p = g.mul(a, b);
        g.add(p, zero)
    });
    cases
}

fn weighted_scalar(g: &mut Graph, y: NodeId, w: Tensor) -> NodeId {
    let wn = g.constant(w);
    let p = g.mul(y, wn);
    g.sum(p)
}

fn check_primitives(rng: &mut Stream, rows: &mut Vec<GradcheckRow>) -> Result<()> {
    for (name, a, b, f) in primitive_cases(rng) {
        let mut g = Graph::new();
        let an = g.input("a");
        let bn = g.input("b");
        let y = f(&mut g, an, bn);
        g.forward(&[("a", &a), ("b", &b)])?;
        let shape = g.value(y).expect("evaluated").shape();
        let out = weighted_scalar(&mut g, y, away_from_zero(rng, shape.0, shape.1, 0.2, 1.0));
        for leaf in ["a", "b"] {
            let err = finite_diff_check(&mut g, &[("a", &a), ("b", &b)], out, leaf, FD_STEP)?;
            rows.push(GradcheckRow { name: name.to_string(), leaf: leaf.to_string(), error: err });
        }
    }
    Ok(())
}

fn tanh_spec(input: usize, hidden: &[usize], output: usize, head: Activation) -> MlpSpec {
    let mut s = MlpSpec::new(input, 0, hidden, output, head);
    for a in s.activations.iter_mut().take(hidden.len()) {
        *a = Activation::Tanh;
    }
    s
}

fn check_param_leaves(g: &mut Graph, inputs: &[(&str, &Tensor)], out: NodeId, name: &str, leaves: &[String], rows: &mut Vec<GradcheckRow>) -> Result<()> {
    for leaf in leaves {
        let err = finite_diff_check(g, inputs, out, leaf, FD_STEP)?;
        rows.push(GradcheckRow { name: name.to_string(), leaf: leaf.clone(), error: err });
    }
    Ok(())
}

/// Regression MLP with MSE, softmax classifier with cross-entropy, and the
/// IAE generator objective through encoder, decoder and two frozen
/// discriminators.
fn check_composed(seed: u64, rng: &mut Stream, rows: &mut Vec<GradcheckRow>) -> Result<()> {
    // 1. Regression.
    let net = Mlp::new(tanh_spec(3, &[5, 4], 2, Activation::Linear), seed)?;
    let x = rng.normal_tensor(6, 3);
    let y = rng.normal_tensor(6, 2);
    let mut g = Graph::new();
    let xn = g.input("x");
    let yn = g.constant(y);
    let out = net.build(&mut g, "mlp", xn, None, true).output;
    let d = g.sub(out, yn);
    let sq = g.mul(d, d);
    let loss = g.mean(sq);
    g.forward(&[("x", &x)])?;
    let leaves: Vec<String> = (0..3).flat_map(|i| [format!("mlp.w{i}"), format!("mlp.b{i}")]).chain(["x".to_string()]).collect();
    check_param_leaves(&mut g, &[("x", &x)], loss, "mlp_regression", &leaves, rows)?;

    // 2. Classifier.
    let net = Mlp::new(tanh_spec(4, &[6], 3, Activation::Softmax), seed ^ 1)?;
    let x = rng.normal_tensor(5, 4);
    let labels = rng.one_hot_tensor(5, 3);
    let mut g = Graph::new();
    let xn = g.input("x");
    let t = g.constant(labels);
    let logits = net.build(&mut g, "clf", xn, None, true).logits;
    let ce = g.softmax_cross_entropy(logits, t);
    g.forward(&[("x", &x)])?;
    let leaves: Vec<String> = (0..2).flat_map(|i| [format!("clf.w{i}"), format!("clf.b{i}")]).collect();
    check_param_leaves(&mut g, &[("x", &x)], ce, "mlp_classifier", &leaves, rows)?;

    // 3. IAE generator objective with stochastic encoder and decoder.
    let mut cfg = IaeStepConfig::new(4, 2, 2, 3, Prior::Gaussian { dim: 2 });
    cfg.encoder_hidden = vec![6];
    cfg.decoder_hidden = vec![6];
    cfg.disc_hidden = vec![5];
    let nets = Nets::autoencoder(&cfg, 2, seed ^ 2)?;
    let x = rng.normal_tensor(4, 2);
    let noise = AeNoise::sample(rng, 4, &cfg);
    let mut gen = autoencoder_generator_graph(&nets, &x, &noise, &cfg)?;
    let inputs = [("x", &x), ("eps", &noise.eps), ("n", &noise.n)];
    let leaves: Vec<String> = ["enc", "dec"].iter().flat_map(|p| (0..2).flat_map(move |i| [format!("{p}.w{i}"), format!("{p}.b{i}")])).collect();
    let total = gen.total;
    check_param_leaves(&mut gen.graph, &inputs, total, "iae_generator", &leaves, rows)?;
    Ok(())
}

/// Runs the whole suite; every row should satisfy [`GradcheckRow::pass`].
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = Stream::new(seed);
    let mut rows = Vec::new();
    check_primitives(&mut rng, &mut rows)?;
    check_composed(seed, &mut rng, &mut rows)?;
    Ok(rows)
}
