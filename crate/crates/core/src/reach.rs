//! Temporal under-reaching analysis.
//!
//! Information from a source node reaches node `v` through memory updates
//! only along walks whose events are strictly ordered in time (or in batch
//! id when events are processed in batches). A single chronological sweep
//! computes, for every node, the earliest key at which the source's input
//! features have been mixed into its memory.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ctdg::{EventStream, NodeBank, Snapshot};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ReachMode {
    /// Consecutive hops need strictly increasing timestamps.
    Strict,
    /// Consecutive hops need strictly increasing batch ids; `b[i]` is the
    /// batch of the `i`-th event of the stream.
    Batched(Vec<usize>),
    /// Like `Strict`, but the first hop must happen at or after the given
    /// update time.
    DynamicFrom(f64),
}

impl ReachMode {
    fn validate(&self, stream: &EventStream) -> Result<()> {
        if let ReachMode::Batched(b) = self {
            if b.len() < stream.len() {
                return Err(Error::BatchMap(format!(
                    "{} entries for {} events",
                    b.len(),
                    stream.len()
                )));
            }
            if b.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::BatchMap("batch ids must be nondecreasing".into()));
            }
        }
        Ok(())
    }
}

/// Earliest mixing key per node. The source maps to `−∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingFront {
    pub source: usize,
    pub earliest_mix: BTreeMap<usize, f64>,
}

impl MixingFront {
    pub fn contains(&self, v: usize) -> bool {
        self.earliest_mix.contains_key(&v)
    }

    pub fn get(&self, v: usize) -> Option<f64> {
        self.earliest_mix.get(&v).copied()
    }

    pub fn nodes(&self) -> BTreeSet<usize> {
        self.earliest_mix.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.earliest_mix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.earliest_mix.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hop {
    pub from: usize,
    pub to: usize,
    pub t: f64,
    /// Position of the event in the stream.
    pub event: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingPath {
    pub source: usize,
    pub target: usize,
    pub hops: Vec<Hop>,
}

impl MixingPath {
    /// Checks the walk shape and the ordering constraint of `mode`.
    pub fn is_valid(&self, stream: &EventStream, mode: &ReachMode) -> bool {
        let mut at = self.source;
        let mut prev_key = f64::NEG_INFINITY;
        for (i, hop) in self.hops.iter().enumerate() {
            let Some(e) = stream.events().get(hop.event) else {
                return false;
            };
            if hop.from != at || e.other(at) != Some(hop.to) || e.t != hop.t {
                return false;
            }
            let key = match mode {
                ReachMode::Batched(b) => b[hop.event] as f64,
                _ => hop.t,
            };
            if key <= prev_key {
                return false;
            }
            if let (0, ReachMode::DynamicFrom(t0)) = (i, mode) {
                if hop.t < *t0 {
                    return false;
                }
            }
            prev_key = key;
            at = hop.to;
        }
        at == self.target
    }
}

struct Sweep {
    front: MixingFront,
    /// For each reached node: the hop that first reached it.
    pred: BTreeMap<usize, Hop>,
}

fn sweep(stream: &EventStream, source: usize, tau: f64, mode: &ReachMode) -> Result<Sweep> {
    if source >= stream.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: source,
            num_nodes: stream.num_nodes(),
        });
    }
    mode.validate(stream)?;
    let mut key: Vec<Option<f64>> = vec![None; stream.num_nodes()];
    key[source] = Some(f64::NEG_INFINITY);
    let mut pred = BTreeMap::new();
    let open = crate::ctdg::snapshot(stream, tau, false);
    for (i, e) in open.events().iter().enumerate() {
        let k = match mode {
            ReachMode::Batched(b) => b[i] as f64,
            _ => e.t,
        };
        // the source sits at t0 - ε, so any event at or after t0 carries it
        let can_leave = |u: usize| -> bool {
            match (mode, key[u]) {
                (_, None) => false,
                (ReachMode::DynamicFrom(t0), Some(_)) if u == source => e.t >= *t0,
                (_, Some(ku)) => ku < k,
            }
        };
        let from_src = can_leave(e.src);
        let from_dst = can_leave(e.dst);
        for (from, to, ok) in [(e.src, e.dst, from_src), (e.dst, e.src, from_dst)] {
            if ok && key[to].is_none_or(|kt| k < kt) {
                key[to] = Some(k);
                pred.insert(
                    to,
                    Hop {
                        from,
                        to,
                        t: e.t,
                        event: i,
                    },
                );
            }
        }
    }
    let earliest_mix = key
        .into_iter()
        .enumerate()
        .filter_map(|(u, k)| k.map(|k| (u, k)))
        .collect();
    Ok(Sweep {
        front: MixingFront {
            source,
            earliest_mix,
        },
        pred,
    })
}

/// Nodes into whose memory `source`'s features are mixed by events `t < τ`.
pub fn temporal_mixing_set(
    stream: &EventStream,
    source: usize,
    tau: f64,
    mode: &ReachMode,
) -> Result<MixingFront> {
    Ok(sweep(stream, source, tau, mode)?.front)
}

pub fn under_reaches(
    stream: &EventStream,
    u: usize,
    v: usize,
    tau: f64,
    mode: &ReachMode,
) -> Result<bool> {
    Ok(!temporal_mixing_set(stream, u, tau, mode)?.contains(v))
}

/// A witness walk from `u` to `v`, if mixing holds. `u == v` yields an
/// empty walk.
pub fn find_mixing_path(
    stream: &EventStream,
    u: usize,
    v: usize,
    tau: f64,
    mode: &ReachMode,
) -> Result<Option<MixingPath>> {
    let s = sweep(stream, u, tau, mode)?;
    if !s.front.contains(v) {
        return Ok(None);
    }
    let mut hops = Vec::new();
    let mut at = v;
    while at != u {
        let hop = s.pred[&at].clone();
        at = hop.from;
        hops.push(hop);
    }
    hops.reverse();
    Ok(Some(MixingPath {
        source: u,
        target: v,
        hops,
    }))
}

/// Hop distances from `u` in the static multigraph of the snapshot.
pub fn static_distances(snap: &Snapshot<'_>, u: usize) -> BTreeMap<usize, usize> {
    let n = snap.stream.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for e in snap.events() {
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let mut dist = BTreeMap::from([(u, 0usize)]);
    let mut queue = VecDeque::from([u]);
    while let Some(a) = queue.pop_front() {
        let d = dist[&a];
        for &b in &adj[a] {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(b) {
                e.insert(d + 1);
                queue.push_back(b);
            }
        }
    }
    dist
}

/// True iff a `k`-layer static GNN over the snapshot cannot connect `u` and `v`.
pub fn static_under_reaches(snap: &Snapshot<'_>, u: usize, v: usize, k: usize) -> bool {
    static_distances(snap, u).get(&v).is_none_or(|&d| d > k)
}

/// Ordered pairs `(u, v)` where `u` mixes into `v` but not the reverse.
pub fn asymmetry_pairs(
    stream: &EventStream,
    tau: f64,
    mode: &ReachMode,
) -> Result<BTreeSet<(usize, usize)>> {
    let fronts = (0..stream.num_nodes())
        .map(|u| temporal_mixing_set(stream, u, tau, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = BTreeSet::new();
    for (u, fu) in fronts.iter().enumerate() {
        for &v in fu.earliest_mix.keys() {
            if v != u && !fronts[v].contains(u) {
                pairs.insert((u, v));
            }
        }
    }
    Ok(pairs)
}

/// `τ − t_u` for every observed node.
pub fn staleness_report(bank: &NodeBank, tau: f64) -> BTreeMap<usize, f64> {
    bank.activations().map(|(u, t)| (u, tau - t)).collect()
}

/// Widens a front by `hops` static hops over the snapshot, approximating an
/// embedding module with that many layers on top of memory mixing.
pub fn expand_front_static(
    front: &MixingFront,
    snap: &Snapshot<'_>,
    hops: usize,
) -> BTreeSet<usize> {
    let n = snap.stream.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for e in snap.events() {
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let mut reached = front.nodes();
    let mut layer: Vec<usize> = reached.iter().copied().collect();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &a in &layer {
            for &b in &adj[a] {
                if reached.insert(b) {
                    next.push(b);
                }
            }
        }
        layer = next;
    }
    reached
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::{ingest_triples, snapshot};

    const U: usize = 0;
    const W: usize = 1;
    const V: usize = 2;

    #[test]
    fn increasing_path_mixes() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 2.0)]).unwrap();
        let f = temporal_mixing_set(&s, U, 3.0, &ReachMode::Strict).unwrap();
        assert_eq!(f.get(U), Some(f64::NEG_INFINITY));
        assert_eq!(f.get(W), Some(1.0));
        assert_eq!(f.get(V), Some(2.0));
        assert!(!under_reaches(&s, U, V, 3.0, &ReachMode::Strict).unwrap());
    }

    #[test]
    fn decreasing_path_under_reaches() {
        let s = ingest_triples(&[(U, W, 2.0), (W, V, 1.0)]).unwrap();
        let f = temporal_mixing_set(&s, U, 3.0, &ReachMode::Strict).unwrap();
        assert_eq!(f.nodes(), BTreeSet::from([U, W]));
        assert!(under_reaches(&s, U, V, 3.0, &ReachMode::Strict).unwrap());
        assert!(find_mixing_path(&s, U, V, 3.0, &ReachMode::Strict).unwrap().is_none());
        assert!(!under_reaches(&s, U, U, 3.0, &ReachMode::Strict).unwrap());
    }

    #[test]
    fn same_batch_cannot_chain() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 2.0)]).unwrap();
        let f = temporal_mixing_set(&s, U, 3.0, &ReachMode::Batched(vec![0, 0])).unwrap();
        assert!(!f.contains(V));
        let f = temporal_mixing_set(&s, U, 3.0, &ReachMode::Batched(vec![0, 1])).unwrap();
        assert_eq!(f.get(V), Some(1.0));
        assert!(temporal_mixing_set(&s, U, 3.0, &ReachMode::Batched(vec![1, 0])).is_err());
    }

    #[test]
    fn simultaneous_events_never_chain() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 1.0)]).unwrap();
        assert!(under_reaches(&s, U, V, 2.0, &ReachMode::Strict).unwrap());
    }

    #[test]
    fn dynamic_from_skips_early_events() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 2.0), (U, W, 3.0), (W, V, 4.0)]).unwrap();
        let f = temporal_mixing_set(&s, U, 5.0, &ReachMode::DynamicFrom(2.5)).unwrap();
        assert_eq!(f.get(W), Some(3.0));
        assert_eq!(f.get(V), Some(4.0));
        let f = temporal_mixing_set(&s, U, 5.0, &ReachMode::DynamicFrom(3.5)).unwrap();
        assert_eq!(f.nodes(), BTreeSet::from([U]));
    }

    #[test]
    fn open_snapshot_excludes_tau() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 2.0)]).unwrap();
        assert!(under_reaches(&s, U, V, 2.0, &ReachMode::Strict).unwrap());
    }

    #[test]
    fn witness_paths() {
        let s = ingest_triples(&[(U, W, 1.0), (W, V, 2.0)]).unwrap();
        let p = find_mixing_path(&s, U, V, 3.0, &ReachMode::Strict).unwrap().unwrap();
        let hops: Vec<_> = p.hops.iter().map(|h| (h.from, h.to, h.t)).collect();
        assert_eq!(hops, vec![(U, W, 1.0), (W, V, 2.0)]);
        assert!(p.is_valid(&s, &ReachMode::Strict));

        let direct = ingest_triples(&[(U, V, 1.0)]).unwrap();
        let p = find_mixing_path(&direct, U, V, 3.0, &ReachMode::Strict).unwrap().unwrap();
        assert_eq!(p.hops.len(), 1);
    }

    #[test]
    fn static_reach_on_path() {
        let s = ingest_triples(&[(0, 1, 3.0), (1, 2, 2.0), (2, 3, 1.0)]).unwrap();
        let snap = snapshot(&s, 4.0, false);
        assert!(!static_under_reaches(&snap, 0, 3, 3));
        assert!(static_under_reaches(&snap, 0, 3, 2));
        let s = ingest_triples(&[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let snap = snapshot(&s, 4.0, false);
        assert!(static_under_reaches(&snap, 0, 3, 100));
    }

    #[test]
    fn asymmetry() {
        let s = ingest_triples(&[(U, W, 2.0), (W, V, 1.0)]).unwrap();
        let pairs = asymmetry_pairs(&s, 3.0, &ReachMode::Strict).unwrap();
        assert!(pairs.contains(&(V, U)));
        assert!(!pairs.contains(&(U, V)));

        let one = ingest_triples(&[(U, V, 1.0)]).unwrap();
        let pairs = asymmetry_pairs(&one, 3.0, &ReachMode::Strict).unwrap();
        assert!(pairs.is_empty());

        let empty = ingest_triples(&[]).unwrap();
        assert!(asymmetry_pairs(&empty, 3.0, &ReachMode::Strict).unwrap().is_empty());
    }

    #[test]
    fn staleness() {
        let mut bank = NodeBank::new();
        assert!(staleness_report(&bank, 5.0).is_empty());
        bank.update(&[crate::ctdg::Event::new(0, 1, 1.0), crate::ctdg::Event::new(1, 2, 5.0)]);
        let r = staleness_report(&bank, 5.0);
        assert_eq!(r[&0], 4.0);
        assert_eq!(r[&1], 0.0);
    }

    #[test]
    fn static_expansion_adds_hops() {
        let s = ingest_triples(&[(U, W, 2.0), (W, V, 1.0)]).unwrap();
        let f = temporal_mixing_set(&s, U, 3.0, &ReachMode::Strict).unwrap();
        let snap = snapshot(&s, 3.0, false);
        assert_eq!(expand_front_static(&f, &snap, 1), BTreeSet::from([U, W, V]));
        assert_eq!(expand_front_static(&f, &snap, 0), f.nodes());
    }
}
