//! Temporal graph rewiring: node memories are mixed over a Cayley expander
//! after every batch, and previously observed nodes read the mixed rows as
//! input features on the next batch.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cayley::{assign_vertices, build_cayley, smallest_n_for, AssignmentMode, CayleyGraph, ExpanderAssignment};
use crate::ctdg::{Event, EventStream, NodeBank};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, GraphLayer, LayerKind, MessageGraph, ParamStore, Tape, Var};
use crate::tensor::Tensor;
use crate::tgn::{EvalBatch, FeatureSource, MemoryFeatures, StreamModel, TemporalMemory, TgnConfig, TgnState};

/// Which nodes read expander rows instead of memory rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scope {
    /// Nodes being embedded this batch.
    #[default]
    Batch,
    /// Those plus their sampled temporal neighbours.
    BatchPlusHop,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Self::Batch),
            "batch+1hop" => Ok(Self::BatchPlusHop),
            other => Err(Error::Config(format!("unknown scope `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Batch => "batch",
            Self::BatchPlusHop => "batch+1hop",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixerConfig {
    pub layer: LayerKind,
    pub heads: usize,
    pub scope: Scope,
    pub assignment: AssignmentMode,
    pub dropout: f64,
    /// Fixed Cayley modulus; sized to the node count when `None`.
    pub modulus: Option<u32>,
    pub regrow: bool,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            layer: LayerKind::Gat,
            heads: 2,
            scope: Scope::Batch,
            assignment: AssignmentMode::Induced,
            dropout: 0.1,
            modulus: None,
            regrow: true,
        }
    }
}

/// Mixed rows `H` by node-bank index.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpanderMemory {
    pub embeddings: Tensor,
    pub valid: Vec<bool>,
}

impl ExpanderMemory {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn is_valid(&self, bank_index: usize) -> bool {
        self.valid.get(bank_index).copied().unwrap_or(false)
    }
}

/// One mixing pass `H′ = GNN(S′, A^Cay)` over every expander vertex. Rows
/// of `bank_rows` sit on vertices `0..bank_rows.rows()`, the remaining
/// vertices carry zeros. Returns one row per bank entry.
pub fn mix_memory(
    bank_rows: &Tensor,
    assignment: &ExpanderAssignment,
    layer: &GraphLayer,
    store: &ParamStore,
) -> Result<Tensor> {
    let n = bank_rows.rows();
    if n > assignment.num_vertices() {
        return Err(Error::ExpanderTooSmall {
            capacity: assignment.num_vertices(),
            needed: n,
        });
    }
    if n == 0 {
        return Ok(Tensor::zeros(0, bank_rows.cols()));
    }
    let mut x = Tensor::zeros(assignment.num_vertices(), bank_rows.cols());
    for i in 0..n {
        x.set_row(assignment.vertex_of(i), bank_rows.row(i));
    }
    let graph = MessageGraph::full(assignment.adjacency(), true, layer.edge_weighting())?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let h = layer.forward::<ChaCha8Rng>(&mut tape, store, xv, &graph, None);
    let rows: Vec<usize> = (0..n).map(|i| assignment.vertex_of(i)).collect();
    Ok(tape.value(h).gather_rows(&rows))
}

/// Assembles `X` for `new_ids ∪ seen_ids` in ascending node order: seen
/// nodes with a valid expander row read `H`, everything else reads `S`.
pub fn build_input_features(
    bank: &NodeBank,
    memory: &TemporalMemory,
    expander: &ExpanderMemory,
    new_ids: &BTreeSet<usize>,
    seen_ids: &BTreeSet<usize>,
) -> Result<(Vec<usize>, Tensor)> {
    let nodes: Vec<usize> = new_ids.union(seen_ids).copied().collect();
    let mut x = Tensor::zeros(nodes.len(), memory.dim());
    for (r, &u) in nodes.iter().enumerate() {
        if u >= memory.num_nodes() {
            return Err(Error::MissingFeatureRow(u));
        }
        let from_h = seen_ids.contains(&u)
            && bank.index_of(u).is_some_and(|i| expander.is_valid(i));
        if from_h {
            x.set_row(r, expander.embeddings.row(bank.index_of(u).unwrap()));
        } else {
            x.set_row(r, memory.row(u));
        }
    }
    Ok((nodes, x))
}

/// Rewiring state that rides along a base model.
#[derive(Clone, Debug)]
pub struct Rewiring {
    pub config: MixerConfig,
    pub layer: GraphLayer,
    pub cayley: CayleyGraph,
    pub assignment: ExpanderAssignment,
    pub bank: NodeBank,
    pub expander: ExpanderMemory,
    dropout_rng: ChaCha8Rng,
}

const MIXER_STREAM: u64 = 0x6d69_7865;

impl Rewiring {
    fn new(config: MixerConfig, tgn: &mut TgnState) -> Result<Self> {
        if config.layer == LayerKind::Gat && config.heads == 0 {
            return Err(Error::Config("GAT mixer needs at least one head".into()));
        }
        let num_nodes = tgn.num_nodes();
        let n = match config.modulus {
            Some(0) => return Err(Error::ZeroModulus),
            Some(n) => n,
            None => smallest_n_for(num_nodes.max(1)),
        };
        let cayley = build_cayley(n)?;
        if cayley.num_vertices() < num_nodes && !config.regrow {
            return Err(Error::Config(format!(
                "expander capacity {} is below the node count {num_nodes} and regrowth is disabled",
                cayley.num_vertices()
            )));
        }
        let d = tgn.config.memory_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(tgn.config.seed ^ MIXER_STREAM);
        let mut layer = GraphLayer::new(config.layer, &mut tgn.store, "mixer", d, d, config.heads, &mut rng)?;
        if let GraphLayer::Gat(g) = &mut layer {
            g.dropout = config.dropout;
        }
        let assignment = assign_vertices(0, &cayley, config.assignment)?;
        Ok(Self {
            dropout_rng: ChaCha8Rng::seed_from_u64(tgn.config.seed ^ MIXER_STREAM ^ 1),
            expander: ExpanderMemory {
                embeddings: Tensor::zeros(0, d),
                valid: Vec::new(),
            },
            config,
            layer,
            cayley,
            assignment,
            bank: NodeBank::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.cayley.num_vertices()
    }

    fn reset(&mut self) -> Result<()> {
        self.bank = NodeBank::new();
        self.assignment = assign_vertices(0, &self.cayley, self.config.assignment)?;
        let d = self.expander.embeddings.cols();
        self.expander = ExpanderMemory {
            embeddings: Tensor::zeros(0, d),
            valid: Vec::new(),
        };
        Ok(())
    }

    /// Rebuilds the expander at `smallest_n_for(needed)` when the bank has
    /// outgrown it. Bank entries keep their vertex indices.
    pub fn regrow_expander(&mut self, needed: usize) -> Result<bool> {
        if needed <= self.capacity() {
            return Ok(false);
        }
        if !self.config.regrow {
            return Err(Error::ExpanderTooSmall {
                capacity: self.capacity(),
                needed,
            });
        }
        self.cayley = build_cayley(smallest_n_for(needed))?;
        self.assignment = assign_vertices(self.assignment.bank_size, &self.cayley, self.config.assignment)?;
        Ok(true)
    }

    /// Mixes the whole bank and overwrites the expander memory.
    fn mix(&mut self, tgn: &TgnState) -> Result<()> {
        self.regrow_expander(self.bank.len())?;
        self.assignment = assign_vertices(self.bank.len(), &self.cayley, self.config.assignment)?;
        let rows = tgn.memory.states.gather_rows(self.bank.nodes());
        self.expander.embeddings = mix_memory(&rows, &self.assignment, &self.layer, &tgn.store)?;
        self.expander.valid = vec![true; self.bank.len()];
        Ok(())
    }

    fn uses_expander(&self, u: usize, is_target: bool) -> Option<usize> {
        if !is_target && self.config.scope == Scope::Batch {
            return None;
        }
        self.bank.index_of(u).filter(|&i| self.expander.is_valid(i))
    }

    /// Rebuilds `H` rows for the given bank indices on the tape from the
    /// memory rows of their expander neighbourhoods.
    fn local_mix(
        &self,
        tape: &mut Tape,
        tgn: &TgnState,
        bank_indices: &[usize],
        grad: bool,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let adj = self.assignment.adjacency();
        let mixed = self.assignment.bank_size;
        let targets: Vec<usize> = bank_indices.iter().map(|&i| self.assignment.vertex_of(i)).collect();
        let mut local = vec![usize::MAX; adj.num_vertices()];
        let mut real = Vec::new();
        let mut relays = Vec::new();
        for &t in &targets {
            for &w in std::iter::once(&t).chain(adj.neighbours(t)) {
                if local[w] == usize::MAX {
                    local[w] = 0;
                    if w < mixed {
                        real.push(w);
                    } else {
                        relays.push(w);
                    }
                }
            }
        }
        for (row, &w) in real.iter().chain(&relays).enumerate() {
            local[w] = row;
        }
        let ids: Vec<usize> = real.iter().map(|&w| self.bank.nodes()[w]).collect();
        let mut x = tgn.memory_rows(tape, &ids, grad);
        if !relays.is_empty() {
            let zeros = tape.constant(Tensor::zeros(relays.len(), tgn.memory.dim()));
            x = tape.concat_rows(&[x, zeros]);
        }
        let graph = MessageGraph::for_targets(adj, &targets, |w| local[w], true, self.layer.edge_weighting())?;
        Ok(self.layer.forward(tape, &tgn.store, x, &graph, dropout))
    }
}

struct ExpanderFeatures<'a> {
    rw: &'a Rewiring,
    rng: RefCell<ChaCha8Rng>,
    train: bool,
}

impl FeatureSource for ExpanderFeatures<'_> {
    fn input_rows(&self, tape: &mut Tape, tgn: &TgnState, nodes: &[usize], is_target: &[bool], grad: bool) -> Var {
        let mut h_pos = Vec::new();
        let mut h_idx = Vec::new();
        let mut s_pos = Vec::new();
        for (pos, (&u, &t)) in nodes.iter().zip(is_target).enumerate() {
            match self.rw.uses_expander(u, t) {
                Some(i) => {
                    h_pos.push(pos);
                    h_idx.push(i);
                }
                None => s_pos.push(pos),
            }
        }
        if h_pos.is_empty() {
            return tgn.memory_rows(tape, nodes, grad);
        }
        let h = if grad {
            let mut rng = self.rng.borrow_mut();
            let dropout = (self.train && self.rw.config.dropout > 0.0).then_some(&mut *rng);
            let h = self
                .rw
                .local_mix(tape, tgn, &h_idx, grad, dropout)
                .expect("expander neighbourhoods are consistent with the assignment");
            if !self.train || self.rw.config.dropout == 0.0 || self.rw.layer.kind() != LayerKind::Gat {
                debug_assert_eq!(
                    tape.value(h).data(),
                    self.rw.expander.embeddings.gather_rows(&h_idx).data(),
                    "replayed mixing differs from the stored expander rows"
                );
            }
            h
        } else {
            tape.constant(self.rw.expander.embeddings.gather_rows(&h_idx))
        };
        if s_pos.is_empty() {
            return h;
        }
        let s_nodes: Vec<usize> = s_pos.iter().map(|&p| nodes[p]).collect();
        let s = tgn.memory_rows(tape, &s_nodes, grad);
        let stacked = tape.concat_rows(&[h, s]);
        let mut inverse = vec![0; nodes.len()];
        for (row, &pos) in h_pos.iter().chain(&s_pos).enumerate() {
            inverse[pos] = row;
        }
        tape.gather_rows(stacked, Rc::new(inverse))
    }
}

/// Base model plus optional rewiring.
#[derive(Clone, Debug)]
pub struct TgrState {
    pub tgn: TgnState,
    pub rewire: Option<Rewiring>,
}

/// What to do with a batch in [`TgrState::process_batch`].
pub enum BatchMode<'a> {
    Train { negatives: &'a [usize] },
    Eval { candidates: &'a [Vec<usize>] },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchOutput {
    Loss(f64),
    Scores(EvalBatch),
}

impl TgrState {
    /// `mixer = None` gives the plain base model.
    pub fn new(config: TgnConfig, mixer: Option<MixerConfig>, stream: &EventStream) -> Result<Self> {
        let mut tgn = TgnState::new(config, stream)?;
        let rewire = match mixer {
            Some(m) => Some(Rewiring::new(m, &mut tgn)?),
            None => None,
        };
        Ok(Self { tgn, rewire })
    }

    pub fn is_rewired(&self) -> bool {
        self.rewire.is_some()
    }

    /// One batch in stream order: split the batch into new and seen nodes,
    /// assemble inputs, predict (and learn), update memory, then remix the
    /// whole bank into the expander memory.
    pub fn process_batch(&mut self, events: &[Event], mode: BatchMode<'_>) -> Result<BatchOutput> {
        let Some(rw) = self.rewire.as_mut() else {
            return match mode {
                BatchMode::Train { negatives } => self.tgn.train_step(&MemoryFeatures, events, negatives).map(BatchOutput::Loss),
                BatchMode::Eval { candidates } => self.tgn.eval_step(&MemoryFeatures, events, candidates).map(BatchOutput::Scores),
            };
        };
        self.tgn.check_batch(events)?;
        rw.bank.update(events);
        let train = matches!(mode, BatchMode::Train { .. });
        let features = ExpanderFeatures {
            rw,
            rng: RefCell::new(rw.dropout_rng.clone()),
            train,
        };
        let out = match mode {
            BatchMode::Train { negatives } => BatchOutput::Loss(self.tgn.train_step(&features, events, negatives)?),
            BatchMode::Eval { candidates } => BatchOutput::Scores(self.tgn.eval_step(&features, events, candidates)?),
        };
        let rng = features.rng.into_inner();
        rw.dropout_rng = rng;
        rw.mix(&self.tgn)?;
        Ok(out)
    }

    /// Recomputes the expander memory from the current temporal memory.
    pub fn remix(&mut self) -> Result<()> {
        match self.rewire.as_mut() {
            Some(rw) => rw.mix(&self.tgn),
            None => Ok(()),
        }
    }

    /// The input rows the next batch would see for `nodes`, treating all of
    /// them as batch nodes.
    pub fn input_features_for(&self, nodes: &[usize]) -> Tensor {
        let mut tape = Tape::new();
        let targets = vec![true; nodes.len()];
        let x = match &self.rewire {
            Some(rw) => {
                let f = ExpanderFeatures {
                    rw,
                    rng: RefCell::new(rw.dropout_rng.clone()),
                    train: false,
                };
                f.input_rows(&mut tape, &self.tgn, nodes, &targets, false)
            }
            None => MemoryFeatures.input_rows(&mut tape, &self.tgn, nodes, &targets, false),
        };
        tape.value(x).clone()
    }

    /// Expander-graph neighbours of `u` as node ids, if `u` is in the bank.
    pub fn expander_neighbours(&self, u: usize) -> Option<Vec<usize>> {
        let rw = self.rewire.as_ref()?;
        let i = rw.bank.index_of(u)?;
        let adj = rw.assignment.adjacency();
        if i >= rw.assignment.bank_size {
            return None;
        }
        Some(
            adj.neighbours(rw.assignment.vertex_of(i))
                .iter()
                .filter(|&&w| w < rw.assignment.bank_size)
                .map(|&w| rw.bank.nodes()[w])
                .collect(),
        )
    }
}

const CHECKPOINT_KIND: &str = "tgr-state";

fn column(values: impl IntoIterator<Item = f64>) -> Tensor {
    let v: Vec<f64> = values.into_iter().collect();
    Tensor::from_vec(v.len(), 1, v).expect("column length matches")
}

fn scalar(ck: &Checkpoint, name: &str) -> Result<f64> {
    let t = ck.require(name)?;
    if t.shape() != (1, 1) {
        return Err(Error::Checkpoint(format!("`{name}` is not a scalar")));
    }
    Ok(t.get(0, 0))
}

impl TgrState {
    /// Parameters, memory, node bank, expander memory and Cayley modulus
    /// after `consumed` events of the stream.
    pub fn checkpoint(&self, consumed: usize) -> Checkpoint {
        let mut ck = Checkpoint::new(format!(
            "kind={CHECKPOINT_KIND}\nrewire={}\n",
            if self.is_rewired() { "on" } else { "off" }
        ));
        for (_, p) in self.tgn.store.iter() {
            ck.push(format!("param/{}", p.name), p.value().clone());
        }
        ck.push("memory/states", self.tgn.memory.states.clone());
        ck.push("memory/last_update", column(self.tgn.memory.last_update.iter().copied()));
        ck.push("stream/consumed", column([consumed as f64]));
        if let Some(rw) = &self.rewire {
            ck.push("expander/modulus", column([rw.cayley.n as f64]));
            ck.push("bank/nodes", column(rw.bank.nodes().iter().map(|&u| u as f64)));
            ck.push("bank/last_activation", column(rw.bank.activations().map(|(_, t)| t)));
            ck.push("expander/embeddings", rw.expander.embeddings.clone());
            ck.push("expander/valid", column(rw.expander.valid.iter().map(|&v| if v { 1.0 } else { 0.0 })));
        }
        ck
    }

    /// Loads a checkpoint into a state built with the same configuration
    /// over `stream`. The neighbour index is rebuilt from the consumed
    /// prefix of the stream; optimizer moments start afresh.
    pub fn restore(&mut self, ck: &Checkpoint, stream: &EventStream) -> Result<()> {
        if !ck.header.lines().any(|l| l == format!("kind={CHECKPOINT_KIND}")) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let rewired = ck.header.lines().any(|l| l == "rewire=on");
        if rewired != self.is_rewired() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has rewire={} but the configuration has rewire={}",
                if rewired { "on" } else { "off" },
                if self.is_rewired() { "on" } else { "off" }
            )));
        }
        let ids: Vec<_> = self.tgn.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let t = ck.require(&format!("param/{name}"))?;
            if t.shape() != self.tgn.store.value(id).shape() {
                return Err(Error::Checkpoint(format!("parameter `{name}` has shape {:?}", t.shape())));
            }
            *self.tgn.store.value_mut(id) = t.clone();
        }
        let consumed = scalar(ck, "stream/consumed")? as usize;
        if consumed > stream.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint consumed {consumed} events but the stream has {}",
                stream.len()
            )));
        }
        let last_update = ck.require("memory/last_update")?.data().to_vec();
        let memory = TemporalMemory::restored(ck.require("memory/states")?.clone(), last_update)?;
        self.tgn.restore_stream(memory, &stream.events()[..consumed])?;
        if let Some(rw) = self.rewire.as_mut() {
            let n = scalar(ck, "expander/modulus")? as u32;
            if n != rw.cayley.n {
                rw.cayley = build_cayley(n)?;
            }
            let nodes: Vec<usize> = ck.require("bank/nodes")?.data().iter().map(|&x| x as usize).collect();
            let times = ck.require("bank/last_activation")?.data().to_vec();
            rw.bank = NodeBank::from_parts(nodes, times)?;
            rw.assignment = assign_vertices(rw.bank.len(), &rw.cayley, rw.config.assignment)?;
            let emb = ck.require("expander/embeddings")?.clone();
            let valid: Vec<bool> = ck.require("expander/valid")?.data().iter().map(|&x| x != 0.0).collect();
            if emb.rows() != valid.len() || emb.rows() > rw.bank.len() || emb.cols() != self.tgn.config.memory_dim {
                return Err(Error::Checkpoint("expander memory does not match the node bank".into()));
            }
            rw.expander = ExpanderMemory { embeddings: emb, valid };
        }
        Ok(())
    }
}

impl StreamModel for TgrState {
    fn reset_state(&mut self) {
        self.tgn.reset();
        if let Some(rw) = self.rewire.as_mut() {
            rw.reset().expect("an empty bank always fits");
        }
    }

    fn train_batch(&mut self, events: &[Event], negatives: &[usize]) -> Result<f64> {
        match self.process_batch(events, BatchMode::Train { negatives })? {
            BatchOutput::Loss(l) => Ok(l),
            BatchOutput::Scores(_) => unreachable!(),
        }
    }

    fn eval_batch(&mut self, events: &[Event], candidates: &[Vec<usize>]) -> Result<EvalBatch> {
        match self.process_batch(events, BatchMode::Eval { candidates })? {
            BatchOutput::Scores(s) => Ok(s),
            BatchOutput::Loss(_) => unreachable!(),
        }
    }

    fn num_nodes(&self) -> usize {
        self.tgn.num_nodes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::ingest_triples;

    fn config(seed: u64) -> TgnConfig {
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

    fn mixer(layer: LayerKind) -> MixerConfig {
        MixerConfig {
            layer,
            dropout: 0.0,
            ..MixerConfig::default()
        }
    }

    fn ring_stream() -> EventStream {
        let triples: Vec<_> = (0..24).map(|i| (i % 6, (i + 1) % 6, 1.0 + i as f64)).collect();
        ingest_triples(&triples).unwrap()
    }

    #[test]
    fn regrowth_moves_to_the_next_modulus() {
        let stream = ring_stream();
        let m = MixerConfig { modulus: Some(4), ..mixer(LayerKind::Gcn) };
        let mut s = TgrState::new(config(0), Some(m), &stream).unwrap();
        let rw = s.rewire.as_mut().unwrap();
        assert_eq!(rw.capacity(), 48);
        assert!(!rw.regrow_expander(48).unwrap());
        assert!(rw.regrow_expander(50).unwrap());
        assert_eq!((rw.cayley.n, rw.capacity()), (5, 120));

        let fixed = MixerConfig { modulus: Some(4), regrow: false, ..mixer(LayerKind::Gcn) };
        let mut s = TgrState::new(config(0), Some(fixed), &stream).unwrap();
        assert!(matches!(
            s.rewire.as_mut().unwrap().regrow_expander(50),
            Err(Error::ExpanderTooSmall { capacity: 48, needed: 50 })
        ));
    }

    #[test]
    fn input_rows_pick_expander_only_for_valid_seen_nodes() {
        let memory = TemporalMemory::restored(
            Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap(),
            vec![0.0; 4],
        )
        .unwrap();
        let bank = NodeBank::from_parts(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let expander = ExpanderMemory {
            embeddings: Tensor::from_rows(&[vec![10.0, 10.0], vec![20.0, 20.0]]).unwrap(),
            valid: vec![true, false],
        };
        let new: BTreeSet<usize> = [3, 0].into();
        let seen: BTreeSet<usize> = [2, 1].into();
        let (nodes, x) = build_input_features(&bank, &memory, &expander, &new, &seen).unwrap();
        assert_eq!(nodes, vec![0, 1, 2, 3]);
        let want = Tensor::from_rows(&[vec![0.0, 0.0], vec![10.0, 10.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(x, want);

        let empty = BTreeSet::new();
        let (nodes, x) = build_input_features(&bank, &memory, &expander, &new, &empty).unwrap();
        assert_eq!(nodes, vec![0, 3]);
        assert_eq!(x.row(1), &[3.0, 3.0]);
        let far: BTreeSet<usize> = [7].into();
        assert!(matches!(
            build_input_features(&bank, &memory, &expander, &far, &empty),
            Err(Error::MissingFeatureRow(7))
        ));
    }

    #[test]
    fn mixing_reaches_exactly_the_closed_neighbourhood() {
        let graph = build_cayley(3).unwrap();
        let n = graph.num_vertices();
        let assignment = assign_vertices(n, &graph, AssignmentMode::Induced).unwrap();
        let d = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect())
            .collect();
        let base = Tensor::from_rows(&rows).unwrap();
        for kind in [LayerKind::Gat, LayerKind::Gcn, LayerKind::Gin] {
            let mut store = ParamStore::new();
            let layer = GraphLayer::new(kind, &mut store, "mixer", d, d, 2, &mut rng).unwrap();
            let h = mix_memory(&base, &assignment, &layer, &store).unwrap();
            for w in [0, 5, 17] {
                let mut bumped = base.clone();
                for c in 0..d {
                    bumped.set(w, c, base.get(w, c) + 0.5);
                }
                let h2 = mix_memory(&bumped, &assignment, &layer, &store).unwrap();
                for u in 0..n {
                    let linked = u == w || assignment.adjacency().neighbours(u).contains(&w);
                    if linked {
                        assert_ne!(h.row(u), h2.row(u), "{kind} u={u} w={w}");
                    } else {
                        assert_eq!(h.row(u), h2.row(u), "{kind} u={u} w={w}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_inputs_and_single_rows() {
        let graph = build_cayley(2).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GraphLayer::new(LayerKind::Gcn, &mut store, "mixer", 3, 3, 1, &mut rng).unwrap();
        store.zero_all();
        let all = assign_vertices(6, &graph, AssignmentMode::Induced).unwrap();
        let h = mix_memory(&Tensor::zeros(6, 3), &all, &layer, &store).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));

        let mut store = ParamStore::new();
        let layer = GraphLayer::new(LayerKind::Gin, &mut store, "mixer", 3, 3, 1, &mut rng).unwrap();
        let one = assign_vertices(1, &graph, AssignmentMode::Induced).unwrap();
        let row = Tensor::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap();
        let h = mix_memory(&row, &one, &layer, &store).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(row.clone());
        let g = MessageGraph::full(one.adjacency(), true, layer.edge_weighting()).unwrap();
        let want = layer.forward::<ChaCha8Rng>(&mut tape, &store, x, &g, None);
        assert_eq!(h, *tape.value(want));
        assert_eq!(h.rows(), 1);
    }

    #[test]
    fn first_batch_reads_plain_memory() {
        let stream = ring_stream();
        let s = TgrState::new(config(1), Some(mixer(LayerKind::Gat)), &stream).unwrap();
        let nodes = [0, 3, 5];
        assert_eq!(s.input_features_for(&nodes), s.tgn.memory.states.gather_rows(&nodes));
    }

    #[test]
    fn every_bank_node_gets_a_valid_expander_row() {
        let stream = ring_stream();
        let mut s = TgrState::new(config(2), Some(mixer(LayerKind::Gin)), &stream).unwrap();
        for batch in stream.events().chunks(5) {
            let negs: Vec<usize> = batch.iter().map(|e| (e.dst + 2) % 6).collect();
            s.train_batch(batch, &negs).unwrap();
            let rw = s.rewire.as_ref().unwrap();
            assert_eq!(rw.expander.len(), rw.bank.len());
            assert!(rw.expander.valid.iter().all(|&v| v));
            assert!(rw.expander.embeddings.is_finite());
        }
    }

    #[test]
    fn expander_rows_follow_the_latest_memory() {
        let stream = ring_stream();
        let mut s = TgrState::new(config(3), Some(mixer(LayerKind::Gcn)), &stream).unwrap();
        s.train_batch(&stream.events()[..6], &[2, 3, 4, 5, 0, 1]).unwrap();
        let rw = s.rewire.as_ref().unwrap();
        let rows = s.tgn.memory.states.gather_rows(rw.bank.nodes());
        let want = mix_memory(&rows, &rw.assignment, &rw.layer, &s.tgn.store).unwrap();
        assert_eq!(rw.expander.embeddings, want);
    }

    #[test]
    fn dormant_node_sees_its_expander_neighbour_change() {
        // node 0 is active only in the first batch
        let stream = ingest_triples(&[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]).unwrap();
        let mut s = TgrState::new(config(4), Some(mixer(LayerKind::Gcn)), &stream).unwrap();
        let events = stream.events();
        s.eval_batch(&events[..1], &[vec![1]]).unwrap();
        s.eval_batch(&events[1..2], &[vec![2]]).unwrap();
        let nbrs = s.expander_neighbours(0).unwrap();
        let before = s.tgn.memory.row(0).to_vec();
        let base = s.input_features_for(&[0]);
        for w in [1, 2] {
            let mut p = s.clone();
            let row: Vec<f64> = p.tgn.memory.row(w).iter().map(|v| v + 1.0).collect();
            p.tgn.memory.states.set_row(w, &row);
            p.remix().unwrap();
            assert_eq!(p.tgn.memory.row(0), &before[..]);
            let moved = p.input_features_for(&[0]) != base;
            assert_eq!(moved, nbrs.contains(&w), "w={w} neighbours={nbrs:?}");
        }
        assert!(nbrs.contains(&1));
    }

    #[test]
    fn without_mixer_matches_base_model() {
        let stream = ring_stream();
        let mut a = TgrState::new(config(5), None, &stream).unwrap();
        let mut b = TgnState::new(config(5), &stream).unwrap();
        for batch in stream.events().chunks(4) {
            let negs: Vec<usize> = batch.iter().map(|e| (e.src + 3) % 6).collect();
            let la = a.train_batch(batch, &negs).unwrap();
            let lb = b.train_batch(batch, &negs).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
        assert_eq!(a.tgn.memory, b.memory);
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let stream = ring_stream();
        for rewire in [None, Some(mixer(LayerKind::Gat))] {
            let mut s = TgrState::new(config(6), rewire.clone(), &stream).unwrap();
            let events = stream.events();
            for batch in events[..12].chunks(4) {
                let negs: Vec<usize> = batch.iter().map(|e| (e.dst + 1) % 6).collect();
                s.train_batch(batch, &negs).unwrap();
            }
            let mut bytes = Vec::new();
            s.checkpoint(12).write_to(&mut bytes).unwrap();
            let ck = Checkpoint::read_from(bytes.as_slice()).unwrap();
            let mut r = TgrState::new(config(99), rewire, &stream).unwrap();
            r.restore(&ck, &stream).unwrap();
            let cands: Vec<Vec<usize>> = events[12..16].iter().map(|e| vec![e.dst, (e.dst + 2) % 6]).collect();
            let a = s.eval_batch(&events[12..16], &cands).unwrap();
            let b = r.eval_batch(&events[12..16], &cands).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn restore_rejects_mismatched_mode() {
        let stream = ring_stream();
        let plain = TgrState::new(config(0), None, &stream).unwrap();
        let mut rewired = TgrState::new(config(0), Some(mixer(LayerKind::Gcn)), &stream).unwrap();
        assert!(matches!(rewired.restore(&plain.checkpoint(0), &stream), Err(Error::Checkpoint(_))));
    }
}
