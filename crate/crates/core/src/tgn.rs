//! Memory-based temporal graph network.
//!
//! Each node keeps a memory row updated by GRU cells whenever it takes part
//! in an event. Embeddings attend over the most recent temporal neighbours
//! and a small MLP scores candidate links.
//!
//! Training follows a predict-then-update order per batch: scores use the
//! memory and neighbourhoods left by earlier batches, the optimizer steps,
//! and only then are the batch's events written into memory. Memory rows
//! written by the previous batch are replayed on the tape from their stored
//! GRU inputs, which is exact because parameters have not moved since, and
//! lets the loss reach the update cells.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctdg::{Event, EventStream};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, GruCell, Linear, Mlp, ParamStore, Segments, Tape, TimeEncoder, Var};
use crate::tensor::Tensor;

/// Neighbour aggregation used by the embedding module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregator {
    #[default]
    Attention,
    Sum,
    Mean,
    Max,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" => Ok(Self::Attention),
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Attention => "attention",
            Self::Sum => "sum",
            Self::Mean => "mean",
            Self::Max => "max",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgnConfig {
    pub memory_dim: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub num_neighbors: usize,
    pub heads: usize,
    pub aggregator: Aggregator,
    pub dropout: f64,
    /// Feed an encoding of the neighbour's age into the message MLP.
    pub psi_time: bool,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TgnConfig {
    fn default() -> Self {
        Self {
            memory_dim: 100,
            embed_dim: 100,
            time_dim: 100,
            num_neighbors: 10,
            heads: 2,
            aggregator: Aggregator::Attention,
            dropout: 0.1,
            psi_time: true,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl TgnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_dim == 0 || self.embed_dim == 0 || self.time_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Learnable pieces of the model.
#[derive(Clone, Debug)]
pub struct TgnParams {
    pub chi: Linear,
    pub phi_src: GruCell,
    pub phi_dst: GruCell,
    pub time: TimeEncoder,
    pub psi: Mlp,
    pub att_query: Linear,
    pub att_key: Linear,
    pub out: Linear,
    pub kappa: Mlp,
}

impl TgnParams {
    pub fn new(
        config: &TgnConfig,
        node_feat_width: usize,
        edge_feat_width: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (m, l, k, d) = (config.memory_dim, config.embed_dim, node_feat_width, config.time_dim);
        let msg_width = m + d + edge_feat_width;
        let psi_in = 2 * m + 2 * k + if config.psi_time { d } else { 0 } + edge_feat_width;
        Self {
            chi: Linear::new(store, "chi", k, m, true, rng),
            phi_src: GruCell::new(store, "phi_src", msg_width, m, rng),
            phi_dst: GruCell::new(store, "phi_dst", msg_width, m, rng),
            time: TimeEncoder::new(store, "time", d, rng),
            psi: Mlp::new(store, "psi", &[psi_in, l, l], Activation::Relu, rng),
            att_query: Linear::new(store, "att_query", m + k, l, true, rng),
            att_key: Linear::new(store, "att_key", l, l, false, rng),
            out: Linear::new(store, "out", l + m + k, l, true, rng),
            kappa: Mlp::new(store, "kappa", &[2 * l, l, 1], Activation::Relu, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Source,
    Destination,
}

/// Inputs of the most recent GRU application to a memory row.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateTrace {
    pub role: Role,
    pub h_prev: Vec<f64>,
    pub other: Vec<f64>,
    pub dt: f64,
    pub feat: Vec<f64>,
    /// Optimizer step count when the update was committed.
    pub step: u64,
}

/// Per-node memory `S(τ)` with last-update times.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalMemory {
    pub states: Tensor,
    pub last_update: Vec<f64>,
    trace: Vec<Option<UpdateTrace>>,
    init_step: u64,
}

impl TemporalMemory {
    pub fn num_nodes(&self) -> usize {
        self.states.rows()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        self.states.row(u)
    }

    pub fn trace(&self, u: usize) -> Option<&UpdateTrace> {
        self.trace[u].as_ref()
    }

    /// Memory restored from saved rows. Restored rows are constants: no
    /// gradient flows into the pass that produced them.
    pub fn restored(states: Tensor, last_update: Vec<f64>) -> Result<Self> {
        if states.rows() != last_update.len() {
            return Err(Error::Shape {
                op: "TemporalMemory::restored",
                lhs: states.shape(),
                rhs: (last_update.len(), 1),
            });
        }
        let n = states.rows();
        Ok(Self {
            states,
            last_update,
            trace: vec![None; n],
            init_step: u64::MAX,
        })
    }
}

/// `s_u(0) = χ(x_u)` for every node, last update 0.
pub fn memory_init(node_feats: &Tensor, params: &TgnParams, store: &ParamStore, step: u64) -> TemporalMemory {
    let mut tape = Tape::new();
    let x = tape.constant(node_feats.clone());
    let s = params.chi.forward(&mut tape, store, x);
    let n = node_feats.rows();
    TemporalMemory {
        states: tape.value(s).clone(),
        last_update: vec![0.0; n],
        trace: vec![None; n],
        init_step: step,
    }
}

/// One GRU application on the tape: `φ(h, [other ∥ time(dt) ∥ feat])`.
fn gru_apply(
    tape: &mut Tape,
    store: &ParamStore,
    params: &TgnParams,
    role: Role,
    h_prev: Var,
    other: Var,
    dt: Var,
    feat: Option<Var>,
) -> Var {
    let enc = params.time.forward(tape, store, dt);
    let msg = match feat {
        Some(f) => tape.concat_cols(&[other, enc, f]),
        None => tape.concat_cols(&[other, enc]),
    };
    let cell = match role {
        Role::Source => &params.phi_src,
        Role::Destination => &params.phi_dst,
    };
    cell.forward(tape, store, h_prev, msg)
}

/// Applies the events in order; each event reads pre-event states of both
/// endpoints. A self-loop only runs the source cell.
pub fn memory_update(
    memory: &mut TemporalMemory,
    events: &[Event],
    params: &TgnParams,
    store: &ParamStore,
    step: u64,
) {
    for e in events {
        let mut roles = vec![(e.src, e.dst, Role::Source)];
        if e.src != e.dst {
            roles.push((e.dst, e.src, Role::Destination));
        }
        let mut updates = Vec::with_capacity(roles.len());
        for &(u, v, role) in &roles {
            let trace = UpdateTrace {
                role,
                h_prev: memory.row(u).to_vec(),
                other: memory.row(v).to_vec(),
                dt: e.t - memory.last_update[u],
                feat: e.feat.clone(),
                step,
            };
            let mut tape = Tape::new();
            let h = replay(&mut tape, store, params, std::slice::from_ref(&trace));
            updates.push((u, tape.value(h).row(0).to_vec(), trace));
        }
        for (u, row, trace) in updates {
            memory.states.set_row(u, &row);
            memory.last_update[u] = e.t;
            memory.trace[u] = Some(trace);
        }
    }
}

/// Re-runs recorded GRU applications (all of one role) as a batch.
fn replay(tape: &mut Tape, store: &ParamStore, params: &TgnParams, traces: &[UpdateTrace]) -> Var {
    let rows = |f: &dyn Fn(&UpdateTrace) -> &[f64]| {
        let data: Vec<Vec<f64>> = traces.iter().map(|t| f(t).to_vec()).collect();
        Tensor::from_rows(&data).unwrap()
    };
    let h = tape.constant(rows(&|t| &t.h_prev));
    let other = tape.constant(rows(&|t| &t.other));
    let dt = tape.constant(Tensor::column(traces.iter().map(|t| t.dt).collect()));
    let feat = (!traces[0].feat.is_empty()).then(|| tape.constant(rows(&|t| &t.feat)));
    gru_apply(tape, store, params, traces[0].role, h, other, dt, feat)
}

/// Past events per node, oldest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighbourIndex {
    lists: Vec<Vec<(usize, f64, usize)>>,
    feats: Vec<Vec<f64>>,
}

impl NeighbourIndex {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            lists: vec![Vec::new(); num_nodes],
            feats: Vec::new(),
        }
    }

    pub fn insert(&mut self, events: &[Event]) {
        for e in events {
            let id = self.feats.len();
            self.feats.push(e.feat.clone());
            self.lists[e.src].push((e.dst, e.t, id));
            if e.dst != e.src {
                self.lists[e.dst].push((e.src, e.t, id));
            }
        }
    }

    /// Up to `k` most recent `(neighbour, t, event id)`, newest first.
    pub fn recent(&self, u: usize, k: usize) -> impl Iterator<Item = &(usize, f64, usize)> {
        self.lists[u].iter().rev().take(k)
    }

    pub fn feat(&self, id: usize) -> &[f64] {
        &self.feats[id]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.lists[u].len()
    }
}

/// Supplies the input rows `X` the embedding module reads in place of raw
/// memory.
pub trait FeatureSource {
    /// Rows for `nodes` in order. `is_target[i]` marks nodes that are being
    /// embedded (as opposed to only appearing as neighbours).
    fn input_rows(&self, tape: &mut Tape, tgn: &TgnState, nodes: &[usize], is_target: &[bool], grad: bool) -> Var;
}

/// Plain memory rows, `X = S`.
pub struct MemoryFeatures;

impl FeatureSource for MemoryFeatures {
    fn input_rows(&self, tape: &mut Tape, tgn: &TgnState, nodes: &[usize], _: &[bool], grad: bool) -> Var {
        tgn.memory_rows(tape, nodes, grad)
    }
}

/// Scores of one evaluation batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    /// Per query: positive logit followed by negative logits.
    pub scores: Vec<Vec<f64>>,
    pub loss: f64,
}

/// A model that consumes an event stream batch by batch.
pub trait StreamModel: Clone {
    /// Forgets all stream state (memory, neighbours), keeping parameters.
    fn reset_state(&mut self);
    /// Scores the batch, takes one optimizer step and then ingests it.
    fn train_batch(&mut self, events: &[Event], negatives: &[usize]) -> Result<f64>;
    /// Scores each query against `candidates[i]` (true destination first),
    /// then ingests the batch without learning.
    fn eval_batch(&mut self, events: &[Event], candidates: &[Vec<usize>]) -> Result<EvalBatch>;
    fn num_nodes(&self) -> usize;
}

/// Full training state of the base model.
#[derive(Clone, Debug)]
pub struct TgnState {
    pub config: TgnConfig,
    pub store: ParamStore,
    pub params: TgnParams,
    pub adam: Adam,
    pub memory: TemporalMemory,
    pub neighbours: NeighbourIndex,
    pub node_feats: Tensor,
    pub edge_feat_width: usize,
    dropout_rng: ChaCha8Rng,
    last_time: f64,
}

const DROPOUT_STREAM: u64 = 0x6472_6f70;

impl TgnState {
    pub fn new(config: TgnConfig, stream: &EventStream) -> Result<Self> {
        config.validate()?;
        let node_feats = stream.node_features();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let params = TgnParams::new(&config, node_feats.cols(), stream.edge_feat_width(), &mut store, &mut rng);
        let memory = memory_init(&node_feats, &params, &store, 0);
        Ok(Self {
            adam: Adam::new(config.lr),
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM),
            neighbours: NeighbourIndex::new(stream.num_nodes()),
            edge_feat_width: stream.edge_feat_width(),
            config,
            store,
            params,
            memory,
            node_feats,
            last_time: f64::NEG_INFINITY,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_feats.rows()
    }

    /// Re-initialises memory from `χ` with the current parameters and clears
    /// the neighbour index.
    pub fn reset(&mut self) {
        self.memory = memory_init(&self.node_feats, &self.params, &self.store, self.adam.steps());
        self.neighbours = NeighbourIndex::new(self.num_nodes());
        self.last_time = f64::NEG_INFINITY;
    }

    /// Installs restored memory and rebuilds the neighbour index from the
    /// events already consumed.
    pub fn restore_stream(&mut self, memory: TemporalMemory, consumed: &[Event]) -> Result<()> {
        if memory.num_nodes() != self.num_nodes() || memory.dim() != self.config.memory_dim {
            return Err(Error::Shape {
                op: "restore_stream",
                lhs: (self.num_nodes(), self.config.memory_dim),
                rhs: memory.states.shape(),
            });
        }
        self.memory = memory;
        self.neighbours = NeighbourIndex::new(self.num_nodes());
        self.neighbours.insert(consumed);
        self.last_time = consumed.last().map_or(f64::NEG_INFINITY, |e| e.t);
        Ok(())
    }

    /// Memory rows of `nodes`. With `grad`, rows whose producing pass ran
    /// under the current parameters are rebuilt on the tape.
    pub fn memory_rows(&self, tape: &mut Tape, nodes: &[usize], grad: bool) -> Var {
        if !grad {
            return tape.constant(self.memory.states.gather_rows(nodes));
        }
        let step = self.adam.steps();
        let mut chi = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut fixed = Vec::new();
        for (pos, &u) in nodes.iter().enumerate() {
            match self.memory.trace(u) {
                Some(t) if t.step == step => match t.role {
                    Role::Source => src.push(pos),
                    Role::Destination => dst.push(pos),
                },
                None if self.memory.init_step == step => chi.push(pos),
                _ => fixed.push(pos),
            }
        }
        if chi.is_empty() && src.is_empty() && dst.is_empty() {
            return tape.constant(self.memory.states.gather_rows(nodes));
        }
        let mut parts = Vec::new();
        let mut order: Vec<usize> = Vec::new();
        if !chi.is_empty() {
            let ids: Vec<usize> = chi.iter().map(|&p| nodes[p]).collect();
            let x = tape.constant(self.node_feats.gather_rows(&ids));
            parts.push(self.params.chi.forward(tape, &self.store, x));
            order.extend(&chi);
        }
        for group in [&src, &dst] {
            if group.is_empty() {
                continue;
            }
            let traces: Vec<UpdateTrace> = group
                .iter()
                .map(|&p| self.memory.trace(nodes[p]).unwrap().clone())
                .collect();
            parts.push(replay(tape, &self.store, &self.params, &traces));
            order.extend(group.iter());
        }
        if !fixed.is_empty() {
            let ids: Vec<usize> = fixed.iter().map(|&p| nodes[p]).collect();
            parts.push(tape.constant(self.memory.states.gather_rows(&ids)));
            order.extend(&fixed);
        }
        let stacked = tape.concat_rows(&parts);
        debug_assert_eq!(
            tape.value(stacked).data(),
            self.memory.states.gather_rows(&order.iter().map(|&p| nodes[p]).collect::<Vec<_>>()).data(),
            "replayed memory differs from committed memory"
        );
        let mut inverse = vec![0; nodes.len()];
        for (row, &pos) in order.iter().enumerate() {
            inverse[pos] = row;
        }
        tape.gather_rows(stacked, Rc::new(inverse))
    }

    /// Embeddings `z` for `(node, query time)` targets.
    pub fn compute_embeddings(
        &self,
        tape: &mut Tape,
        features: &dyn FeatureSource,
        targets: &[(usize, f64)],
        grad: bool,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let cfg = &self.config;
        let mut row_of: HashMap<usize, usize> = HashMap::new();
        let mut unique = Vec::new();
        let mut is_target = Vec::new();
        for &(u, _) in targets {
            row_of.entry(u).or_insert_with(|| {
                unique.push(u);
                is_target.push(true);
                unique.len() - 1
            });
        }
        let mut lengths = Vec::with_capacity(targets.len());
        let mut e_target = Vec::new();
        let mut e_u = Vec::new();
        let mut e_v = Vec::new();
        let mut e_dt = Vec::new();
        let mut e_feat = Vec::new();
        for (i, &(u, t)) in targets.iter().enumerate() {
            let mut len = 0;
            for &(v, te, id) in self.neighbours.recent(u, cfg.num_neighbors) {
                let r = *row_of.entry(v).or_insert_with(|| {
                    unique.push(v);
                    is_target.push(false);
                    unique.len() - 1
                });
                e_target.push(i);
                e_u.push(u);
                e_v.push(r);
                e_dt.push(t - te);
                e_feat.extend_from_slice(self.neighbours.feat(id));
                len += 1;
            }
            lengths.push(len);
        }
        let x = features.input_rows(tape, self, &unique, &is_target, grad);
        let t_rows: Vec<usize> = targets.iter().map(|(u, _)| row_of[u]).collect();
        let t_ids: Vec<usize> = targets.iter().map(|&(u, _)| u).collect();
        let num_edges = e_v.len();
        let seg = Rc::new(Segments::from_lengths(lengths));

        let xs = tape.gather_rows(x, Rc::new(e_u.iter().map(|u| row_of[u]).collect()));
        let xn = tape.gather_rows(x, Rc::new(e_v.clone()));
        let fu = tape.constant(self.node_feats.gather_rows(&e_u));
        let e_v_ids: Vec<usize> = e_v.iter().map(|&r| unique[r]).collect();
        let fv = tape.constant(self.node_feats.gather_rows(&e_v_ids));
        let mut parts = vec![xs, xn, fu, fv];
        if cfg.psi_time {
            let dt = tape.constant(Tensor::column(e_dt));
            parts.push(self.params.time.forward(tape, &self.store, dt));
        }
        if self.edge_feat_width > 0 {
            parts.push(tape.constant(Tensor::from_vec(num_edges, self.edge_feat_width, e_feat).unwrap()));
        }
        let psi_in = tape.concat_cols(&parts);
        let msgs = self.params.psi.forward(tape, &self.store, psi_in);

        let xt = tape.gather_rows(x, Rc::new(t_rows));
        let ft = tape.constant(self.node_feats.gather_rows(&t_ids));
        let agg = match cfg.aggregator {
            Aggregator::Attention => {
                let q_in = tape.concat_cols(&[xt, ft]);
                let q = self.params.att_query.forward(tape, &self.store, q_in);
                let k = self.params.att_key.forward(tape, &self.store, msgs);
                let qe = tape.gather_rows(q, Rc::new(e_target));
                let logits = tape.head_dot(k, qe, cfg.heads);
                let scale = 1.0 / ((cfg.embed_dim / cfg.heads) as f64).sqrt();
                let logits = tape.affine(logits, scale, 0.0);
                let mut alpha = tape.segment_softmax(logits, Rc::clone(&seg));
                if let (Some(rng), true) = (dropout, cfg.dropout > 0.0) {
                    alpha = apply_dropout(tape, alpha, cfg.dropout, rng);
                }
                tape.segment_weighted_sum(msgs, alpha, seg, cfg.heads)
            }
            Aggregator::Sum | Aggregator::Mean => {
                let w: Vec<f64> = (0..seg.len())
                    .flat_map(|s| {
                        let n = seg.range(s).len();
                        let w = if cfg.aggregator == Aggregator::Mean { 1.0 / n as f64 } else { 1.0 };
                        std::iter::repeat_n(w, n)
                    })
                    .collect();
                let w = tape.constant(Tensor::column(w));
                tape.segment_weighted_sum(msgs, w, seg, 1)
            }
            Aggregator::Max => tape.segment_max(msgs, &seg),
        };
        let z_in = tape.concat_cols(&[agg, xt, ft]);
        self.params.out.forward(tape, &self.store, z_in)
    }

    /// Link logits `κ([z_u ∥ z_v])`, one per row pair.
    pub fn link_logits(&self, tape: &mut Tape, z_u: Var, z_v: Var) -> Var {
        let pair = tape.concat_cols(&[z_u, z_v]);
        self.params.kappa.forward(tape, &self.store, pair)
    }

    pub(crate) fn check_batch(&self, events: &[Event]) -> Result<()> {
        for e in events {
            for u in [e.src, e.dst] {
                if u >= self.num_nodes() {
                    return Err(Error::NodeOutOfRange {
                        node: u,
                        num_nodes: self.num_nodes(),
                    });
                }
            }
        }
        if let Some(first) = events.first() {
            if first.t < self.last_time {
                return Err(Error::OutOfOrderBatch {
                    start: first.t,
                    last: self.last_time,
                });
            }
        }
        Ok(())
    }

    /// Writes the batch into memory and the neighbour index.
    pub fn commit(&mut self, events: &[Event]) {
        memory_update(&mut self.memory, events, &self.params, &self.store, self.adam.steps());
        self.neighbours.insert(events);
        if let Some(e) = events.last() {
            self.last_time = e.t;
        }
    }

    /// Predict, step, commit. Returns the mean BCE over positives and
    /// negatives (one negative per entry of `negatives`, paired with the
    /// positive at the same index).
    pub fn train_step(&mut self, features: &dyn FeatureSource, events: &[Event], negatives: &[usize]) -> Result<f64> {
        self.check_batch(events)?;
        if negatives.len() > events.len() {
            return Err(Error::Shape {
                op: "train_step",
                lhs: (events.len(), 1),
                rhs: (negatives.len(), 1),
            });
        }
        if let Some(&n) = negatives.iter().find(|&&n| n >= self.num_nodes()) {
            return Err(Error::NodeOutOfRange {
                node: n,
                num_nodes: self.num_nodes(),
            });
        }
        if events.is_empty() {
            return Ok(0.0);
        }
        let b = events.len();
        let nn = negatives.len();
        let mut targets: Vec<(usize, f64)> = events.iter().map(|e| (e.src, e.t)).collect();
        targets.extend(events.iter().map(|e| (e.dst, e.t)));
        targets.extend(negatives.iter().zip(events).map(|(&n, e)| (n, e.t)));

        let mut rng = self.dropout_rng.clone();
        let mut tape = Tape::new();
        let z = self.compute_embeddings(&mut tape, features, &targets, true, Some(&mut rng));
        let zs = tape.gather_rows(z, Rc::new((0..b).collect()));
        let zd = tape.gather_rows(z, Rc::new((b..2 * b).collect()));
        let pos = self.link_logits(&mut tape, zs, zd);
        let logits = if nn > 0 {
            let zs_n = tape.gather_rows(z, Rc::new((0..nn).collect()));
            let zn = tape.gather_rows(z, Rc::new((2 * b..2 * b + nn).collect()));
            let neg = self.link_logits(&mut tape, zs_n, zn);
            tape.concat_rows(&[pos, neg])
        } else {
            pos
        };
        let mut labels = vec![1.0; b];
        labels.extend(std::iter::repeat_n(0.0, nn));
        let loss = tape.bce_with_logits(logits, labels);
        let value = tape.value(loss).get(0, 0);
        tape.backward(loss, &mut self.store);
        self.adam.step(&mut self.store);
        self.dropout_rng = rng;
        self.commit(events);
        Ok(value)
    }

    /// Scores queries against their candidate lists without learning, then
    /// commits the batch.
    pub fn eval_step(&mut self, features: &dyn FeatureSource, events: &[Event], candidates: &[Vec<usize>]) -> Result<EvalBatch> {
        self.check_batch(events)?;
        if candidates.len() != events.len() {
            return Err(Error::Shape {
                op: "eval_step",
                lhs: (events.len(), 1),
                rhs: (candidates.len(), 1),
            });
        }
        let mut targets: Vec<(usize, f64)> = events.iter().map(|e| (e.src, e.t)).collect();
        let mut src_rows = Vec::new();
        for (i, (e, cands)) in events.iter().zip(candidates).enumerate() {
            for &c in cands {
                if c >= self.num_nodes() {
                    return Err(Error::NodeOutOfRange {
                        node: c,
                        num_nodes: self.num_nodes(),
                    });
                }
                targets.push((c, e.t));
                src_rows.push(i);
            }
        }
        let b = events.len();
        let mut tape = Tape::new();
        let z = self.compute_embeddings(&mut tape, features, &targets, false, None);
        let zs = tape.gather_rows(z, Rc::new(src_rows));
        let zc = tape.gather_rows(z, Rc::new((b..targets.len()).collect()));
        let logits = self.link_logits(&mut tape, zs, zc);
        let flat = tape.value(logits).data().to_vec();
        let mut scores = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(flat.len());
        let mut off = 0;
        for cands in candidates {
            scores.push(flat[off..off + cands.len()].to_vec());
            labels.extend((0..cands.len()).map(|j| if j == 0 { 1.0 } else { 0.0 }));
            off += cands.len();
        }
        let loss = if flat.is_empty() {
            0.0
        } else {
            let l = tape.bce_with_logits(logits, labels);
            tape.value(l).get(0, 0)
        };
        self.commit(events);
        Ok(EvalBatch { scores, loss })
    }

    /// Current dropout generator state, for callers that embed outside a
    /// training step.
    pub fn dropout_rng(&self) -> &ChaCha8Rng {
        &self.dropout_rng
    }
}

pub(crate) fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Var {
    use rand::Rng;
    let keep = 1.0 - rate;
    let (r, c) = tape.shape(x);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    tape.mul_const(x, Tensor::from_vec(r, c, mask).unwrap())
}

impl StreamModel for TgnState {
    fn reset_state(&mut self) {
        self.reset();
    }

    fn train_batch(&mut self, events: &[Event], negatives: &[usize]) -> Result<f64> {
        self.train_step(&MemoryFeatures, events, negatives)
    }

    fn eval_batch(&mut self, events: &[Event], candidates: &[Vec<usize>]) -> Result<EvalBatch> {
        self.eval_step(&MemoryFeatures, events, candidates)
    }

    fn num_nodes(&self) -> usize {
        TgnState::num_nodes(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::ingest_triples;

    fn small_config(seed: u64) -> TgnConfig {
        TgnConfig {
            memory_dim: 4,
            embed_dim: 4,
            time_dim: 3,
            num_neighbors: 3,
            heads: 2,
            dropout: 0.0,
            lr: 1e-2,
            seed,
            ..TgnConfig::default()
        }
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain-loop GRU over the raw weight tensors.
    fn gru_by_hand(cell: &GruCell, store: &ParamStore, h: &[f64], x: &[f64]) -> Vec<f64> {
        let m = cell.hidden;
        let (wx, wh) = (store.value(cell.w_x), store.value(cell.w_h));
        let (bx, bh) = (store.value(cell.b_x), store.value(cell.b_h));
        let gate = |c: usize| {
            let gx: f64 = bx.get(0, c) + x.iter().enumerate().map(|(i, v)| v * wx.get(i, c)).sum::<f64>();
            let gh: f64 = bh.get(0, c) + h.iter().enumerate().map(|(i, v)| v * wh.get(i, c)).sum::<f64>();
            (gx, gh)
        };
        (0..m)
            .map(|j| {
                let (xr, hr) = gate(j);
                let (xz, hz) = gate(m + j);
                let (xn, hn) = gate(2 * m + j);
                let r = sigmoid(xr + hr);
                let z = sigmoid(xz + hz);
                let n = (xn + r * hn).tanh();
                (1.0 - z) * h[j] + z * n
            })
            .collect()
    }

    fn time_by_hand(enc: &TimeEncoder, store: &ParamStore, dt: f64) -> Vec<f64> {
        let (w, p) = (store.value(enc.omega), store.value(enc.phase));
        (0..enc.dim).map(|i| (w.get(0, i) * dt + p.get(0, i)).cos()).collect()
    }

    #[test]
    fn memory_update_matches_hand_gru() {
        let stream = ingest_triples(&[(0, 1, 2.0)]).unwrap();
        let mut state = TgnState::new(small_config(3), &stream).unwrap();
        let s0 = state.memory.row(0).to_vec();
        let s1 = state.memory.row(1).to_vec();
        state.commit(stream.events());
        let p = &state.params;
        let mut msg = s1.clone();
        msg.extend(time_by_hand(&p.time, &state.store, 2.0));
        let want_src = gru_by_hand(&p.phi_src, &state.store, &s0, &msg);
        let mut msg = s0.clone();
        msg.extend(time_by_hand(&p.time, &state.store, 2.0));
        let want_dst = gru_by_hand(&p.phi_dst, &state.store, &s1, &msg);
        for (a, b) in state.memory.row(0).iter().zip(&want_src) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in state.memory.row(1).iter().zip(&want_dst) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(state.memory.last_update[..2], [2.0, 2.0]);
    }

    #[test]
    fn zero_parameters_give_chance_predictions() {
        let stream = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)]).unwrap();
        let mut state = TgnState::new(small_config(0), &stream).unwrap();
        state.store.zero_all();
        state.reset();
        let cands: Vec<Vec<usize>> = stream.events().iter().map(|e| vec![e.dst, 0]).collect();
        let out = state.eval_step(&MemoryFeatures, stream.events(), &cands).unwrap();
        assert!(out.scores.iter().flatten().all(|&s| s == 0.0));
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn absent_nodes_keep_their_memory() {
        let stream = ingest_triples(&[(0, 1, 1.0), (2, 3, 2.0), (4, 5, 3.0)]).unwrap();
        let mut state = TgnState::new(small_config(1), &stream).unwrap();
        let before = state.memory.clone();
        state.train_step(&MemoryFeatures, &stream.events()[..1], &[4]).unwrap();
        for u in 2..6 {
            assert_eq!(state.memory.row(u), before.row(u));
            assert_eq!(state.memory.last_update[u], 0.0);
        }
        assert_ne!(state.memory.row(0), before.row(0));
    }

    #[test]
    fn aggregation_ignores_neighbour_order() {
        let triples = [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (4, 0, 2.0)];
        let stream = ingest_triples(&triples).unwrap();
        for aggregator in [Aggregator::Attention, Aggregator::Sum, Aggregator::Mean, Aggregator::Max] {
            let cfg = TgnConfig { aggregator, ..small_config(2) };
            let mut state = TgnState::new(cfg, &stream).unwrap();
            let embed = |s: &TgnState| {
                let mut tape = Tape::new();
                let z = s.compute_embeddings(&mut tape, &MemoryFeatures, &[(0, 5.0)], false, None);
                tape.value(z).data().to_vec()
            };
            let events = stream.events();
            state.neighbours.insert(&events[..3]);
            let a = embed(&state);
            state.neighbours = NeighbourIndex::new(stream.num_nodes());
            state.neighbours.insert(&[events[2].clone(), events[0].clone(), events[1].clone()]);
            let b = embed(&state);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10, "{aggregator}");
            }
        }
    }

    #[test]
    fn isolated_node_embeds_from_own_row() {
        let stream = ingest_triples(&[(0, 1, 1.0), (2, 3, 2.0)]).unwrap();
        let state = TgnState::new(small_config(4), &stream).unwrap();
        let mut tape = Tape::new();
        let z = state.compute_embeddings(&mut tape, &MemoryFeatures, &[(2, 3.0)], false, None);
        let z = tape.value(z).row(0).to_vec();
        let mut input = vec![0.0; state.config.embed_dim];
        input.extend_from_slice(state.memory.row(2));
        input.extend_from_slice(state.node_feats.row(2));
        let (w, b) = (state.store.value(state.params.out.w), state.store.value(state.params.out.b.unwrap()));
        for j in 0..z.len() {
            let want = b.get(0, j) + input.iter().enumerate().map(|(i, v)| v * w.get(i, j)).sum::<f64>();
            assert!((z[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_do_not_see_their_own_batch() {
        let a = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0), (0, 3, 4.0)]).unwrap();
        let b = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0), (1, 0, 4.0)]).unwrap();
        let score = |s: &EventStream| {
            let mut state = TgnState::new(small_config(5), s).unwrap();
            state.train_step(&MemoryFeatures, &s.events()[..2], &[3, 0]).unwrap();
            let cands = vec![vec![1, 2, 3], vec![1, 2, 3]];
            state.eval_step(&MemoryFeatures, &s.events()[2..], &cands).unwrap().scores
        };
        // the streams differ only in the last event of the scored batch
        assert_eq!(score(&a)[0], score(&b)[0]);
    }

    #[test]
    fn seeds_fix_parameters() {
        let stream = ingest_triples(&[(0, 1, 1.0)]).unwrap();
        let a = TgnState::new(small_config(7), &stream).unwrap();
        let b = TgnState::new(small_config(7), &stream).unwrap();
        let c = TgnState::new(small_config(8), &stream).unwrap();
        let vals = |s: &TgnState| s.store.iter().flat_map(|(_, p)| p.value().data().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
    }

    #[test]
    fn positives_only_batch_uses_positive_loss() {
        let stream = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let mut state = TgnState::new(small_config(6), &stream).unwrap();
        let probe = state.clone();
        let loss = state.train_step(&MemoryFeatures, stream.events(), &[]).unwrap();
        let mut check = probe;
        let scores = check
            .eval_step(&MemoryFeatures, stream.events(), &[vec![1], vec![2]])
            .unwrap()
            .scores;
        let want = scores.iter().map(|s| (1.0 + (-s[0]).exp()).ln()).sum::<f64>() / 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn loss_falls_on_a_separable_toy() {
        // nodes 0..4 only ever link to 4..8, negatives come from 0..4
        let mut triples = Vec::new();
        for i in 0..400 {
            triples.push((i % 4, 4 + (i * 3) % 4, 1.0 + i as f64));
        }
        let stream = ingest_triples(&triples).unwrap();
        let steps = 30;
        let mut curve = vec![0.0; steps];
        for seed in 0..5 {
            let mut state = TgnState::new(small_config(seed), &stream).unwrap();
            for (k, batch) in stream.events().chunks(10).take(steps).enumerate() {
                let negs: Vec<usize> = batch.iter().map(|e| (e.src + 1) % 4).collect();
                curve[k] += state.train_step(&MemoryFeatures, batch, &negs).unwrap() / 5.0;
            }
        }
        let head: f64 = curve[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = curve[steps - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{curve:?}");
    }

    #[test]
    fn rejects_bad_batches() {
        let stream = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let mut state = TgnState::new(small_config(0), &stream).unwrap();
        state.commit(&stream.events()[1..]);
        assert!(matches!(
            state.train_step(&MemoryFeatures, &stream.events()[..1], &[]),
            Err(Error::OutOfOrderBatch { .. })
        ));
        assert!(matches!(
            state.train_step(&MemoryFeatures, &[Event::new(0, 9, 3.0)], &[]),
            Err(Error::NodeOutOfRange { .. })
        ));
    }
}
