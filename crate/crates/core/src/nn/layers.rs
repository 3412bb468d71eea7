//! Differentiable layers built on the tape.

use std::rc::Rc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Segments, Tape, Var};
use crate::cayley::Adjacency;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// `y = xW + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), in_dim, out_dim, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden_act: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers, hidden_act }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = self.hidden_act.apply(tape, x);
            }
            x = l.forward(tape, store, x);
        }
        x
    }
}

/// GRU cell with gate blocks ordered `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x W_r + b_r + h U_r + c_r)
/// z  = σ(x W_z + b_z + h U_z + c_z)
/// h̃ = tanh(x W_n + b_n + r ⊙ (h U_n + c_n))
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_x: store.glorot(format!("{name}.w_x"), input_dim, 3 * hidden, rng),
            w_h: store.glorot(format!("{name}.w_h"), hidden, 3 * hidden, rng),
            b_x: store.zeros(format!("{name}.b_x"), 1, 3 * hidden),
            b_h: store.zeros(format!("{name}.b_h"), 1, 3 * hidden),
            input_dim,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Var {
        let m = self.hidden;
        let (wx, wh, bx, bh) = (
            tape.param(store, self.w_x),
            tape.param(store, self.w_h),
            tape.param(store, self.b_x),
            tape.param(store, self.b_h),
        );
        let gx = tape.matmul(x, wx);
        let gx = tape.add_row(gx, bx);
        let gh = tape.matmul(h, wh);
        let gh = tape.add_row(gh, bh);
        let xr = tape.slice_cols(gx, 0, m);
        let hr = tape.slice_cols(gh, 0, m);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let xz = tape.slice_cols(gx, m, 2 * m);
        let hz = tape.slice_cols(gh, m, 2 * m);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let xn = tape.slice_cols(gx, 2 * m, 3 * m);
        let hn = tape.slice_cols(gh, 2 * m, 3 * m);
        let rn = tape.mul(r, hn);
        let n = tape.add(xn, rn);
        let n = tape.tanh(n);
        let keep = tape.affine(z, -1.0, 1.0);
        let a = tape.mul(keep, h);
        let b = tape.mul(z, n);
        tape.add(a, b)
    }

    /// Forward pass without gradients.
    pub fn step(&self, store: &ParamStore, h: &Tensor, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, store, hv, xv);
        tape.value(out).clone()
    }
}

/// Harmonic time encoding `cos(ω Δt + φ)`.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub omega: ParamId,
    pub phase: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    /// Frequencies are log-uniform in `[1e-3, 1]`, phases zero.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let lo = 1e-3f64.ln();
        let omega: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..=0.0).exp()).collect();
        Self {
            omega: store.add(format!("{name}.omega"), Tensor::row_vector(omega)),
            phase: store.zeros(format!("{name}.phase"), 1, dim),
            dim,
        }
    }

    /// `dt` is a column of elapsed times.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, dt: Var) -> Var {
        let w = tape.param(store, self.omega);
        let p = tape.param(store, self.phase);
        let x = tape.matmul(dt, w);
        let x = tape.add_row(x, p);
        tape.cos(x)
    }

    pub fn encode(&self, store: &ParamStore, dt: f64) -> Tensor {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::filled(1, 1, dt));
        let out = self.forward(&mut tape, store, d);
        tape.value(out).clone()
    }
}

/// Per-target neighbourhoods for one round of message passing.
///
/// Rows refer to an input matrix: target `i` reads its own features from
/// row `self_rows[i]` and aggregates over `sources` in segment `i`, each
/// edge weighted by `coeff`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageGraph {
    pub seg: Rc<Segments>,
    pub sources: Rc<Vec<usize>>,
    pub edge_targets: Rc<Vec<usize>>,
    pub self_rows: Vec<usize>,
    pub coeff: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeWeighting {
    /// All ones.
    Unit,
    /// `1 / √(d̂_i d̂_j)` with `d̂ = degree + 1` (self-loops included).
    SymmetricNorm,
    /// `1 + ε` on the self edge, one elsewhere.
    SelfBoost(f64),
}

impl MessageGraph {
    /// Message graph over all vertices of `adj`, reading row `v` for vertex `v`.
    pub fn full(adj: &Adjacency, self_loops: bool, weighting: EdgeWeighting) -> Result<Self> {
        let targets: Vec<usize> = (0..adj.num_vertices()).collect();
        Self::for_targets(adj, &targets, |v| v, self_loops, weighting)
    }

    /// Message graph for a subset of target vertices; `row_of` maps vertex
    /// ids to rows of the input matrix. Self-loops come first in each segment,
    /// then neighbours ascending, so any subset reproduces the full pass.
    pub fn for_targets(
        adj: &Adjacency,
        targets: &[usize],
        row_of: impl Fn(usize) -> usize,
        self_loops: bool,
        weighting: EdgeWeighting,
    ) -> Result<Self> {
        let mut lengths = Vec::with_capacity(targets.len());
        let mut sources = Vec::new();
        let mut edge_targets = Vec::new();
        let mut coeff = Vec::new();
        let deg = |v: usize| (adj.degree(v) + usize::from(self_loops)) as f64;
        for &t in targets {
            let ns = adj.neighbours(t);
            if ns.is_empty() && !self_loops {
                return Err(Error::EmptyNeighbourhood { node: t });
            }
            let mut len = 0;
            let mut push = |v: usize, is_self: bool| {
                sources.push(row_of(v));
                edge_targets.push(row_of(t));
                coeff.push(match weighting {
                    EdgeWeighting::Unit => 1.0,
                    EdgeWeighting::SymmetricNorm => 1.0 / (deg(t) * deg(v)).sqrt(),
                    EdgeWeighting::SelfBoost(eps) => {
                        if is_self {
                            1.0 + eps
                        } else {
                            1.0
                        }
                    }
                });
                len += 1;
            };
            if self_loops {
                push(t, true);
            }
            for &v in ns {
                push(v, false);
            }
            lengths.push(len);
        }
        Ok(Self {
            seg: Rc::new(Segments::from_lengths(lengths)),
            sources: Rc::new(sources),
            edge_targets: Rc::new(edge_targets),
            self_rows: targets.iter().map(|&t| row_of(t)).collect(),
            coeff,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.seg.len()
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }
}

/// Multi-head graph attention: `h_i = ∥_k σ(Σ_{j ∈ N(i)} α^k_ij W^k x_j)`
/// with `α^k_ij = softmax_j LeakyReLU(a^k_dst · W^k x_i + a^k_src · W^k x_j)`.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub w: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub negative_slope: f64,
    pub dropout: f64,
    pub act: Activation,
}

impl GatLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        let width = heads * head_dim;
        Self {
            w: store.glorot(format!("{name}.w"), in_dim, width, rng),
            att_src: store.glorot(format!("{name}.att_src"), 1, width, rng),
            att_dst: store.glorot(format!("{name}.att_dst"), 1, width, rng),
            heads,
            head_dim,
            negative_slope: 0.2,
            dropout: 0.0,
            act: Activation::Relu,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Attention coefficients `[E × heads]` for every edge of `graph`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, x: Var, graph: &MessageGraph) -> (Var, Var) {
        let w = tape.param(store, self.w);
        let wx = tape.matmul(x, w);
        let a_src = tape.param(store, self.att_src);
        let a_dst = tape.param(store, self.att_dst);
        let es = tape.head_dot(wx, a_src, self.heads);
        let ed = tape.head_dot(wx, a_dst, self.heads);
        let es = tape.gather_rows(es, Rc::clone(&graph.sources));
        let ed = tape.gather_rows(ed, Rc::clone(&graph.edge_targets));
        let logits = tape.add(ed, es);
        let logits = tape.leaky_relu(logits, self.negative_slope);
        (tape.segment_softmax(logits, Rc::clone(&graph.seg)), wx)
    }

    /// `dropout` holds a Bernoulli keep-mask sampler for training, `None` at
    /// evaluation time.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        graph: &MessageGraph,
        dropout: Option<&mut R>,
    ) -> Var {
        let (mut alpha, wx) = self.attention(tape, store, x, graph);
        if let (Some(rng), true) = (dropout, self.dropout > 0.0) {
            let keep = 1.0 - self.dropout;
            let (r, c) = tape.shape(alpha);
            let mask: Vec<f64> = (0..r * c)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            alpha = tape.mul_const(alpha, Tensor::from_vec(r, c, mask).unwrap());
        }
        let msgs = tape.gather_rows(wx, Rc::clone(&graph.sources));
        let out = tape.segment_weighted_sum(msgs, alpha, Rc::clone(&graph.seg), self.heads);
        self.act.apply(tape, out)
    }
}

/// `H = σ(Â X W + b)` with the symmetric-normalised, self-looped adjacency.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub lin: Linear,
    pub act: Activation,
}

impl GcnLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            lin: Linear::new(store, name, in_dim, out_dim, true, rng),
            act: Activation::Relu,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, graph: &MessageGraph) -> Var {
        let agg = weighted_aggregate(tape, x, graph);
        let y = self.lin.forward(tape, store, agg);
        self.act.apply(tape, y)
    }
}

/// `H = σ(MLP((1 + ε) x_i + Σ_{j ∈ N(i)} x_j))`.
#[derive(Clone, Debug)]
pub struct GinLayer {
    pub mlp: Mlp,
    pub eps: f64,
    pub act: Activation,
}

impl GinLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(store, name, &[in_dim, out_dim, out_dim], Activation::Relu, rng),
            eps: 0.0,
            act: Activation::Relu,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, graph: &MessageGraph) -> Var {
        let agg = weighted_aggregate(tape, x, graph);
        let y = self.mlp.forward(tape, store, agg);
        self.act.apply(tape, y)
    }
}

fn weighted_aggregate(tape: &mut Tape, x: Var, graph: &MessageGraph) -> Var {
    let msgs = tape.gather_rows(x, Rc::clone(&graph.sources));
    let w = tape.constant(Tensor::column(graph.coeff.clone()));
    tape.segment_weighted_sum(msgs, w, Rc::clone(&graph.seg), 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LayerKind {
    #[default]
    Gat,
    Gcn,
    Gin,
}

impl std::str::FromStr for LayerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(Self::Gat),
            "gcn" => Ok(Self::Gcn),
            "gin" => Ok(Self::Gin),
            other => Err(Error::Config(format!("unknown layer `{other}`"))),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gat => "gat",
            Self::Gcn => "gcn",
            Self::Gin => "gin",
        })
    }
}

/// One graph layer of a selectable kind.
#[derive(Clone, Debug)]
pub enum GraphLayer {
    Gat(GatLayer),
    Gcn(GcnLayer),
    Gin(GinLayer),
}

impl GraphLayer {
    pub fn new<R: Rng>(
        kind: LayerKind,
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            LayerKind::Gat => {
                if heads == 0 || !out_dim.is_multiple_of(heads) {
                    return Err(Error::Config(format!(
                        "GAT output width {out_dim} is not divisible by {heads} heads"
                    )));
                }
                GraphLayer::Gat(GatLayer::new(store, name, in_dim, heads, out_dim / heads, rng))
            }
            LayerKind::Gcn => GraphLayer::Gcn(GcnLayer::new(store, name, in_dim, out_dim, rng)),
            LayerKind::Gin => GraphLayer::Gin(GinLayer::new(store, name, in_dim, out_dim, rng)),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            GraphLayer::Gat(_) => LayerKind::Gat,
            GraphLayer::Gcn(_) => LayerKind::Gcn,
            GraphLayer::Gin(_) => LayerKind::Gin,
        }
    }

    pub fn edge_weighting(&self) -> EdgeWeighting {
        match self {
            GraphLayer::Gat(_) => EdgeWeighting::Unit,
            GraphLayer::Gcn(_) => EdgeWeighting::SymmetricNorm,
            GraphLayer::Gin(l) => EdgeWeighting::SelfBoost(l.eps),
        }
    }

    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        graph: &MessageGraph,
        dropout: Option<&mut R>,
    ) -> Var {
        match self {
            GraphLayer::Gat(l) => l.forward(tape, store, x, graph, dropout),
            GraphLayer::Gcn(l) => l.forward(tape, store, x, graph),
            GraphLayer::Gin(l) => l.forward(tape, store, x, graph),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut s = ParamStore::new();
        let l = Linear::new(&mut s, "l", 3, 3, true, &mut rng());
        *s.value_mut(l.w) = Tensor::identity(3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![1.0, 2.0, 3.0]));
        let y = l.forward(&mut t, &s, x);
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);

        *s.value_mut(l.b.unwrap()) = Tensor::row_vector(vec![4.0, 5.0, 6.0]);
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(2, 3));
        let y = l.forward(&mut t, &s, z);
        assert_eq!(t.value(y).data(), &[4.0, 5.0, 6.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn gru_zero_and_saturated() {
        let mut s = ParamStore::new();
        let g = GruCell::new(&mut s, "g", 2, 3, &mut rng());
        s.zero_all();
        let h = g.step(&s, &Tensor::zeros(1, 3), &Tensor::zeros(1, 2));
        assert_eq!(h.data(), &[0.0; 3]);

        let mut s = ParamStore::new();
        let g = GruCell::new(&mut s, "g", 2, 3, &mut rng());
        for c in 3..6 {
            s.value_mut(g.b_x).set(0, c, -50.0);
        }
        let prev = Tensor::row_vector(vec![0.3, -0.7, 0.9]);
        let h = g.step(&s, &prev, &Tensor::row_vector(vec![0.5, -0.5]));
        for (a, b) in h.data().iter().zip(prev.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn time_encoder_trivia() {
        let mut s = ParamStore::new();
        let te = TimeEncoder::new(&mut s, "t", 5, &mut rng());
        for &w in s.value(te.omega).data() {
            assert!((1e-3..=1.0).contains(&w));
        }
        assert_eq!(te.encode(&s, 0.0).data(), &[1.0; 5]);
        s.value_mut(te.omega).fill(0.0);
        *s.value_mut(te.phase) = Tensor::row_vector(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let e = te.encode(&s, 123.0);
        for i in 0..5 {
            assert_eq!(e.get(0, i), (i as f64).cos());
        }
    }

    fn ring(n: usize) -> Adjacency {
        Adjacency::from_edges(n, &(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>())
    }

    #[test]
    fn gat_singleton_is_identity() {
        let mut s = ParamStore::new();
        let mut l = GatLayer::new(&mut s, "g", 3, 1, 3, &mut rng());
        l.act = Activation::Identity;
        *s.value_mut(l.w) = Tensor::identity(3);
        let adj = Adjacency::from_edges(1, &[]);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::Unit).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![0.1, -2.0, 3.5]));
        let h = l.forward::<ChaCha8Rng>(&mut t, &s, x, &g, None);
        assert_eq!(t.value(h).data(), &[0.1, -2.0, 3.5]);
    }

    #[test]
    fn empty_neighbourhood_without_self_loops_errors() {
        let adj = Adjacency::from_edges(2, &[]);
        assert!(matches!(
            MessageGraph::full(&adj, false, EdgeWeighting::Unit),
            Err(Error::EmptyNeighbourhood { node: 0 })
        ));
    }

    #[test]
    fn gat_attention_rows_sum_to_one() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let l = GatLayer::new(&mut s, "g", 4, 3, 2, &mut r);
        let adj = Adjacency::from_edges(5, &[(0, 1), (1, 2), (2, 3), (0, 3), (4, 2)]);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::Unit).unwrap();
        let mut t = Tape::new();
        let x = t.constant(random(5, 4, &mut r));
        let (alpha, _) = l.attention(&mut t, &s, x, &g);
        let a = t.value(alpha);
        for i in 0..g.num_targets() {
            for h in 0..3 {
                let sum: f64 = g.seg.range(i).map(|e| a.get(e, h)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disconnected_nodes_are_independent() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let l = GatLayer::new(&mut s, "g", 2, 2, 2, &mut r);
        let adj = Adjacency::from_edges(2, &[]);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::Unit).unwrap();
        let run = |x: Tensor| {
            let mut t = Tape::new();
            let x = t.constant(x);
            let h = l.forward::<ChaCha8Rng>(&mut t, &s, x, &g, None);
            t.value(h).row(0).to_vec()
        };
        let a = run(Tensor::from_rows(&[vec![0.5, 0.1], vec![1.0, 2.0]]).unwrap());
        let b = run(Tensor::from_rows(&[vec![0.5, 0.1], vec![-9.0, 4.0]]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn gcn_and_gin_singletons() {
        let mut s = ParamStore::new();
        let mut gcn = GcnLayer::new(&mut s, "c", 2, 2, &mut rng());
        gcn.act = Activation::Identity;
        *s.value_mut(gcn.lin.w) = Tensor::identity(2);
        let adj = Adjacency::from_edges(1, &[]);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::SymmetricNorm).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![3.0, -1.0]));
        let h = gcn.forward(&mut t, &s, x, &g);
        assert_eq!(t.value(h).data(), &[3.0, -1.0]);

        let mut s = ParamStore::new();
        let mut gin = GinLayer::new(&mut s, "n", 2, 2, &mut rng());
        gin.mlp = Mlp::new(&mut s, "id", &[2, 2], Activation::Identity, &mut rng());
        gin.act = Activation::Identity;
        *s.value_mut(gin.mlp.layers[0].w) = Tensor::identity(2);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::SelfBoost(0.0)).unwrap();
        let h = gin.forward(&mut t, &s, x, &g);
        assert_eq!(t.value(h).data(), &[3.0, -1.0]);
    }

    #[test]
    fn gcn_matches_dense_normalisation() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let mut gcn = GcnLayer::new(&mut s, "c", 3, 2, &mut r);
        gcn.act = Activation::Identity;
        let n = 6;
        let adj = ring(n);
        let xs = random(n, 3, &mut r);
        let g = MessageGraph::full(&adj, true, EdgeWeighting::SymmetricNorm).unwrap();
        let mut t = Tape::new();
        let x = t.constant(xs.clone());
        let h = gcn.forward(&mut t, &s, x, &g);

        let mut a_hat = Tensor::identity(n);
        for (u, v) in adj.edges() {
            a_hat.set(u, v, 1.0);
            a_hat.set(v, u, 1.0);
        }
        let d: Vec<f64> = (0..n).map(|i| a_hat.row(i).iter().sum()).collect();
        let norm = Tensor::from_vec(
            n,
            n,
            (0..n * n).map(|k| a_hat.get(k / n, k % n) / (d[k / n] * d[k % n]).sqrt()).collect(),
        )
        .unwrap();
        let mut want = norm.matmul(&xs).unwrap().matmul(s.value(gcn.lin.w)).unwrap();
        for i in 0..n {
            for c in 0..2 {
                want.set(i, c, want.get(i, c) + s.value(gcn.lin.b.unwrap()).get(0, c));
            }
        }
        for (a, b) in t.value(h).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_layers_are_permutation_equivariant() {
        let mut r = rng();
        let n = 7;
        let adj = Adjacency::from_edges(n, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (0, 4), (2, 6)]);
        let perm = [3, 6, 0, 5, 1, 4, 2];
        let padj = Adjacency::from_edges(n, &adj.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect::<Vec<_>>());
        let xs = random(n, 4, &mut r);
        let mut pxs = Tensor::zeros(n, 4);
        for i in 0..n {
            pxs.set_row(perm[i], xs.row(i));
        }
        for kind in [LayerKind::Gat, LayerKind::Gcn, LayerKind::Gin] {
            let mut s = ParamStore::new();
            let layer = GraphLayer::new(kind, &mut s, "l", 4, 4, 2, &mut r).unwrap();
            let run = |a: &Adjacency, x: &Tensor| {
                let g = MessageGraph::full(a, true, layer.edge_weighting()).unwrap();
                let mut t = Tape::new();
                let x = t.constant(x.clone());
                let h = layer.forward::<ChaCha8Rng>(&mut t, &s, x, &g, None);
                t.value(h).clone()
            };
            let h = run(&adj, &xs);
            let ph = run(&padj, &pxs);
            for i in 0..n {
                for (a, b) in h.row(i).iter().zip(ph.row(perm[i])) {
                    assert!((a - b).abs() < 1e-10, "{kind}");
                }
            }
        }
    }

    #[test]
    fn subset_graph_matches_full_rows() {
        let adj = ring(9);
        let full = MessageGraph::full(&adj, true, EdgeWeighting::SymmetricNorm).unwrap();
        let sub = MessageGraph::for_targets(&adj, &[4, 7], |v| v, true, EdgeWeighting::SymmetricNorm).unwrap();
        for (k, &t) in [4usize, 7].iter().enumerate() {
            let a: Vec<_> = full.seg.range(t).map(|e| (full.sources[e], full.coeff[e])).collect();
            let b: Vec<_> = sub.seg.range(k).map(|e| (sub.sources[e], sub.coeff[e])).collect();
            assert_eq!(a, b);
        }
    }
}
