//! Continuous-time dynamic graphs: event streams, snapshots, temporal
//! batches and the node bank.
//!
//! A stream is an insertion-only multigraph whose events are kept sorted by
//! timestamp. Node ids are dense integers; external string ids are mapped
//! through an [`IdDictionary`] at ingestion time.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    pub feat: Vec<f64>,
}

impl Event {
    pub fn new(src: usize, dst: usize, t: f64) -> Self {
        Self {
            src,
            dst,
            t,
            feat: Vec::new(),
        }
    }

    #[inline]
    pub fn touches(&self, u: usize) -> bool {
        self.src == u || self.dst == u
    }

    /// The endpoint opposite `u`, treating the event as undirected.
    #[inline]
    pub fn other(&self, u: usize) -> Option<usize> {
        if self.src == u {
            Some(self.dst)
        } else if self.dst == u {
            Some(self.src)
        } else {
            None
        }
    }
}

/// Chronologically sorted events over nodes `0..num_nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    feat_width: usize,
    node_feats: Option<Tensor>,
    simple_timing: bool,
}

impl EventStream {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edge_feat_width(&self) -> usize {
        self.feat_width
    }

    /// True iff timestamps are strictly increasing (no two events share a time).
    pub fn is_simple_timing(&self) -> bool {
        self.simple_timing
    }

    pub fn raw_node_features(&self) -> Option<&Tensor> {
        self.node_feats.as_ref()
    }

    /// Node features `X(0)`; all zeros of width 1 when the stream carries none.
    pub fn node_features(&self) -> Tensor {
        match &self.node_feats {
            Some(x) => x.clone(),
            None => Tensor::zeros(self.num_nodes, 1),
        }
    }

    pub fn node_feature_width(&self) -> usize {
        self.node_feats.as_ref().map_or(1, |x| x.cols())
    }

    pub fn with_node_features(mut self, feats: Tensor) -> Result<Self> {
        if feats.rows() != self.num_nodes {
            return Err(Error::NodeFeatureRows {
                rows: feats.rows(),
                num_nodes: self.num_nodes,
            });
        }
        self.node_feats = Some(feats);
        Ok(self)
    }

    /// Widens the node id range without adding events.
    pub fn with_num_nodes(mut self, num_nodes: usize) -> Self {
        self.num_nodes = self.num_nodes.max(num_nodes);
        self
    }

    /// A stream holding `events[range]` with the same node universe and features.
    pub fn slice(&self, range: std::ops::Range<usize>) -> EventStream {
        let events = self.events[range].to_vec();
        let simple_timing = strictly_increasing(&events);
        EventStream {
            events,
            num_nodes: self.num_nodes,
            feat_width: self.feat_width,
            node_feats: self.node_feats.clone(),
            simple_timing,
        }
    }

    /// Distinct destination ids, ascending.
    pub fn destinations(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.events.iter().map(|e| e.dst).collect();
        set.into_iter().collect()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }
}

fn strictly_increasing(events: &[Event]) -> bool {
    events.windows(2).all(|w| w[0].t < w[1].t)
}

/// Builds a stream from `(src, dst, t, feat)` records. Records are sorted
/// stably by time; `num_nodes` is one more than the largest id.
pub fn ingest_events<I>(records: I) -> Result<EventStream>
where
    I: IntoIterator<Item = (usize, usize, f64, Vec<f64>)>,
{
    let mut events = Vec::new();
    let mut width: Option<usize> = None;
    let mut max_id: Option<usize> = None;
    for (index, (src, dst, t, feat)) in records.into_iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::NonFiniteTimestamp { index });
        }
        if t < 0.0 {
            return Err(Error::NegativeTimestamp { index, t });
        }
        match width {
            None => width = Some(feat.len()),
            Some(w) if w != feat.len() => {
                return Err(Error::FeatureWidth {
                    index,
                    expected: w,
                    found: feat.len(),
                })
            }
            _ => {}
        }
        let m = src.max(dst);
        max_id = Some(max_id.map_or(m, |x: usize| x.max(m)));
        events.push(Event { src, dst, t, feat });
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let simple_timing = strictly_increasing(&events);
    Ok(EventStream {
        num_nodes: max_id.map_or(0, |m| m + 1),
        feat_width: width.unwrap_or(0),
        node_feats: None,
        simple_timing,
        events,
    })
}

/// Convenience wrapper for feature-less `(src, dst, t)` triples.
pub fn ingest_triples(triples: &[(usize, usize, f64)]) -> Result<EventStream> {
    ingest_events(triples.iter().map(|&(s, d, t)| (s, d, t, Vec::new())))
}

/// `G_{≤τ}` (inclusive) or `G_{<τ}` (open).
#[derive(Clone, Copy, Debug)]
pub struct Snapshot<'a> {
    pub stream: &'a EventStream,
    pub tau: f64,
    pub inclusive: bool,
}

pub fn snapshot(stream: &EventStream, tau: f64, inclusive: bool) -> Snapshot<'_> {
    Snapshot {
        stream,
        tau,
        inclusive,
    }
}

impl<'a> Snapshot<'a> {
    pub fn events(&self) -> &'a [Event] {
        let evs = self.stream.events();
        let end = if self.inclusive {
            evs.partition_point(|e| e.t <= self.tau)
        } else {
            evs.partition_point(|e| e.t < self.tau)
        };
        &evs[..end]
    }

    pub fn len(&self) -> usize {
        self.events().len()
    }

    pub fn is_empty(&self) -> bool {
        self.events().is_empty()
    }

    /// All interactions between `u` and `v` in either direction.
    pub fn interactions(&self, u: usize, v: usize) -> impl Iterator<Item = &'a Event> + '_ {
        self.events()
            .iter()
            .filter(move |e| (e.src == u && e.dst == v) || (e.src == v && e.dst == u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbour<'a> {
    pub node: usize,
    pub t: f64,
    pub feat: &'a [f64],
}

/// Undirected incident events of `u` in the snapshot, most recent first.
pub fn temporal_neighbourhood<'a>(
    snap: &Snapshot<'a>,
    u: usize,
    max_neighbors: usize,
) -> Vec<Neighbour<'a>> {
    snap.events()
        .iter()
        .rev()
        .filter_map(|e| {
            e.other(u).map(|v| Neighbour {
                node: v,
                t: e.t,
                feat: &e.feat,
            })
        })
        .take(max_neighbors)
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct TemporalBatch<'a> {
    pub batch_id: usize,
    /// Position of the first event of the batch in the stream.
    pub offset: usize,
    pub events: &'a [Event],
}

/// Consecutive fixed-size slices of the stream; the last one may be shorter.
pub fn batchify(stream: &EventStream, batch_size: usize) -> Result<Vec<TemporalBatch<'_>>> {
    if batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    Ok(stream
        .events()
        .chunks(batch_size)
        .enumerate()
        .map(|(batch_id, events)| TemporalBatch {
            batch_id,
            offset: batch_id * batch_size,
            events,
        })
        .collect())
}

/// `b(t)` for every event position: the id of the batch that processes it.
pub fn batch_map(stream: &EventStream, batch_size: usize) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    Ok((0..stream.len()).map(|i| i / batch_size).collect())
}

/// Nodes observed so far, in order of first observation, with their last
/// activation times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeBank {
    order: Vec<usize>,
    index: HashMap<usize, usize>,
    last_activation: Vec<f64>,
}

impl NodeBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a bank from nodes in bank order and their activation times.
    pub fn from_parts(nodes: Vec<usize>, last_activation: Vec<f64>) -> Result<Self> {
        if nodes.len() != last_activation.len() {
            return Err(Error::Parse(format!(
                "{} bank nodes but {} activation times",
                nodes.len(),
                last_activation.len()
            )));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, &u) in nodes.iter().enumerate() {
            if index.insert(u, i).is_some() {
                return Err(Error::Parse(format!("node {u} appears twice in the bank")));
            }
        }
        Ok(Self {
            order: nodes,
            index,
            last_activation,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, u: usize) -> bool {
        self.index.contains_key(&u)
    }

    /// Bank index of `u` (its rank in first-observation order).
    pub fn index_of(&self, u: usize) -> Option<usize> {
        self.index.get(&u).copied()
    }

    /// Node ids by bank index.
    pub fn nodes(&self) -> &[usize] {
        &self.order
    }

    pub fn observed(&self) -> BTreeSet<usize> {
        self.order.iter().copied().collect()
    }

    pub fn last_activation(&self, u: usize) -> Option<f64> {
        self.index_of(u).map(|i| self.last_activation[i])
    }

    /// `(node, t_u)` pairs in bank order.
    pub fn activations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.order
            .iter()
            .copied()
            .zip(self.last_activation.iter().copied())
    }

    /// Splits the batch's nodes into new and previously seen ones, grows the
    /// bank by the new ones and refreshes last activation times.
    pub fn update(&mut self, events: &[Event]) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let batch_nodes: BTreeSet<usize> = events.iter().flat_map(|e| [e.src, e.dst]).collect();
        let (seen, new): (BTreeSet<usize>, BTreeSet<usize>) =
            batch_nodes.into_iter().partition(|u| self.contains(*u));
        for &u in &new {
            self.index.insert(u, self.order.len());
            self.order.push(u);
            self.last_activation.push(f64::NEG_INFINITY);
        }
        for e in events {
            for u in [e.src, e.dst] {
                let i = self.index[&u];
                if e.t > self.last_activation[i] {
                    self.last_activation[i] = e.t;
                }
            }
        }
        (new, seen)
    }
}

pub fn node_bank_update(
    bank: &mut NodeBank,
    batch: &TemporalBatch<'_>,
) -> (BTreeSet<usize>, BTreeSet<usize>) {
    bank.update(batch.events)
}

/// Maps external string ids to dense integer ids in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdDictionary {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl IdDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "name"])?;
        for (i, n) in self.names.iter().enumerate() {
            w.write_record([i.to_string().as_str(), n.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut dict = Self::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let id: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad id on dictionary row {}", line + 1)))?;
            let name = rec.get(1).unwrap_or_default();
            if id != dict.len() || dict.intern(name) != id {
                return Err(Error::Parse(format!(
                    "dictionary ids must be dense and unique (row {})",
                    line + 1
                )));
            }
        }
        Ok(dict)
    }
}

/// Reads the CSV event format `src,dst,t[,f0,...,fk]`. Rows need not be
/// sorted. Ids that all parse as non-negative integers are used as-is;
/// otherwise every id is mapped through a dictionary, which is returned.
pub fn read_csv<R: Read>(reader: R) -> Result<(EventStream, Option<IdDictionary>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3
        || !headers[0].eq_ignore_ascii_case("src")
        || !headers[1].eq_ignore_ascii_case("dst")
        || !headers[2].eq_ignore_ascii_case("t")
    {
        return Err(Error::Parse("expected header `src,dst,t[,f0,...]`".into()));
    }
    let mut raw = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let t: f64 = rec[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad timestamp on row {row}")))?;
        let feat = (3..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad feature on row {row}")))
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push((rec[0].to_owned(), rec[1].to_owned(), t, feat));
    }
    let numeric = raw
        .iter()
        .all(|(s, d, _, _)| s.parse::<usize>().is_ok() && d.parse::<usize>().is_ok());
    if numeric {
        let stream = ingest_events(
            raw.into_iter()
                .map(|(s, d, t, f)| (s.parse().unwrap(), d.parse().unwrap(), t, f)),
        )?;
        Ok((stream, None))
    } else {
        let mut dict = IdDictionary::new();
        let records: Vec<_> = raw
            .into_iter()
            .map(|(s, d, t, f)| (dict.intern(&s), dict.intern(&d), t, f))
            .collect();
        let stream = ingest_events(records)?.with_num_nodes(dict.len());
        Ok((stream, Some(dict)))
    }
}

pub fn read_csv_file(path: &Path) -> Result<(EventStream, Option<IdDictionary>)> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes the CSV event format. Timestamps and features use Rust's
/// shortest round-trip float formatting, so reading back is bit-exact.
pub fn write_csv<W: Write>(stream: &EventStream, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["src".to_string(), "dst".to_string(), "t".to_string()];
    header.extend((0..stream.edge_feat_width()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for e in stream.events() {
        let mut rec = vec![e.src.to_string(), e.dst.to_string(), format!("{:?}", e.t)];
        rec.extend(e.feat.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(stream: &EventStream, path: &Path) -> Result<()> {
    write_csv(stream, std::fs::File::create(path)?)
}

/// Node features as CSV rows `node,x0,...,xk`; missing nodes stay zero.
pub fn read_node_features(path: &Path, num_nodes: usize) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let width = rdr.headers()?.len().saturating_sub(1);
    if width == 0 {
        return Err(Error::Parse("node feature file needs `node,x0,...`".into()));
    }
    let mut x = Tensor::zeros(num_nodes, width);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Parse(format!("bad node feature row {}", line + 2));
        let u: usize = rec[0].parse().map_err(|_| bad())?;
        if u >= num_nodes {
            return Err(Error::NodeOutOfRange { node: u, num_nodes });
        }
        for c in 0..width {
            let v: f64 = rec.get(c + 1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            x.set(u, c, v);
        }
    }
    Ok(x)
}

/// Writes node features as `node,x0,...,xk` rows, one per node.
pub fn write_node_features<W: Write>(x: &Tensor, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["node".to_string()];
    header.extend((0..x.cols()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for u in 0..x.rows() {
        let mut rec = vec![u.to_string()];
        rec.extend(x.row(u).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const CACHE_MAGIC: &[u8; 8] = b"TGREVTS\0";
const CACHE_VERSION: u32 = 1;

/// Binary cache: magic, version, counts, then packed little-endian events and
/// optional node features.
pub fn write_binary<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    for n in [stream.num_nodes, stream.len(), stream.feat_width] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for e in stream.events() {
        w.write_all(&(e.src as u64).to_le_bytes())?;
        w.write_all(&(e.dst as u64).to_le_bytes())?;
        w.write_all(&e.t.to_le_bytes())?;
        for x in &e.feat {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    match &stream.node_feats {
        None => w.write_all(&[0u8])?,
        Some(x) => {
            w.write_all(&[1u8])?;
            w.write_all(&(x.cols() as u64).to_le_bytes())?;
            for v in x.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<EventStream> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Parse("not an event cache (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CACHE_VERSION {
        return Err(Error::Parse(format!("unsupported cache version {version}")));
    }
    let mut b8 = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let num_nodes = read_u64(&mut r)? as usize;
    let len = read_u64(&mut r)? as usize;
    let width = read_u64(&mut r)? as usize;
    let mut events = Vec::with_capacity(len);
    for _ in 0..len {
        let src = read_u64(&mut r)? as usize;
        let dst = read_u64(&mut r)? as usize;
        let t = f64::from_bits(read_u64(&mut r)?);
        let feat = (0..width)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        events.push(Event { src, dst, t, feat });
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let node_feats = if flag[0] == 1 {
        let cols = read_u64(&mut r)? as usize;
        let data = (0..num_nodes * cols)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        Some(Tensor::from_vec(num_nodes, cols, data)?)
    } else {
        None
    };
    if !events.windows(2).all(|w| w[0].t <= w[1].t) {
        return Err(Error::Parse("cached events are not sorted".into()));
    }
    let simple_timing = strictly_increasing(&events);
    Ok(EventStream {
        events,
        num_nodes,
        feat_width: width,
        node_feats,
        simple_timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(triples: &[(usize, usize, f64)]) -> EventStream {
        ingest_triples(triples).unwrap()
    }

    #[test]
    fn ingest_sorted_input() {
        let s = stream(&[(0, 1, 1.0), (1, 2, 2.0)]);
        assert_eq!(s.num_nodes(), 3);
        assert!(s.is_simple_timing());
    }

    #[test]
    fn ingest_reorders_by_time() {
        let s = stream(&[(0, 1, 2.0), (1, 2, 1.0)]);
        let times: Vec<f64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(times, vec![1.0, 2.0]);
        assert_eq!(s.events()[0].src, 1);
    }

    #[test]
    fn duplicate_timestamps_are_not_simple() {
        let s = stream(&[(0, 1, 1.0), (2, 3, 1.0)]);
        assert!(!s.is_simple_timing());
        // stable sort keeps input order on ties
        assert_eq!(s.events()[0].src, 0);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(
            ingest_triples(&[(0, 1, -1.0)]),
            Err(Error::NegativeTimestamp { .. })
        ));
        let r = ingest_events(vec![(0, 1, 1.0, vec![1.0]), (1, 2, 2.0, vec![])]);
        assert!(matches!(r, Err(Error::FeatureWidth { .. })));
    }

    #[test]
    fn snapshot_open_and_closed() {
        let s = stream(&[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)]);
        assert_eq!(snapshot(&s, 2.0, true).len(), 2);
        assert_eq!(snapshot(&s, 2.0, false).len(), 1);
        assert_eq!(snapshot(&s, 0.0, false).len(), 0);
    }

    #[test]
    fn batchify_sizes() {
        let s = stream(&[(0, 1, 1.0), (0, 1, 2.0), (0, 1, 3.0), (0, 1, 4.0), (0, 1, 5.0)]);
        let b = batchify(&s, 2).unwrap();
        assert_eq!(b.iter().map(|b| b.events.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b.iter().map(|b| b.batch_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(batchify(&s.slice(0..3), 10).unwrap().len(), 1);
        assert!(batchify(&s.slice(0..0), 3).unwrap().is_empty());
        assert!(matches!(batchify(&s, 0), Err(Error::ZeroBatchSize)));
        assert_eq!(batch_map(&s, 2).unwrap(), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn node_bank_splits_new_and_seen() {
        let mut bank = NodeBank::new();
        bank.update(&[Event::new(1, 2, 0.5)]);
        let (new, seen) = bank.update(&[Event::new(2, 3, 1.0)]);
        assert_eq!(new, BTreeSet::from([3]));
        assert_eq!(seen, BTreeSet::from([2]));
        assert_eq!(bank.observed(), BTreeSet::from([1, 2, 3]));
        assert_eq!(bank.last_activation(2), Some(1.0));
        assert_eq!(bank.last_activation(1), Some(0.5));

        let mut empty = NodeBank::new();
        let (new, seen) = empty.update(&[Event::new(0, 1, 0.0)]);
        assert_eq!(new, BTreeSet::from([0, 1]));
        assert!(seen.is_empty());

        let mut one = NodeBank::new();
        one.update(&[Event::new(0, 0, 0.0)]);
        let (new, seen) = one.update(&[Event::new(0, 0, 1.0)]);
        assert!(new.is_empty());
        assert_eq!(seen, BTreeSet::from([0]));
    }

    #[test]
    fn neighbourhood_is_undirected_and_recent_first() {
        let (u, a, b) = (0, 1, 2);
        let s = stream(&[(u, a, 1.0), (b, u, 2.0)]);
        let snap = snapshot(&s, 3.0, true);
        let n = temporal_neighbourhood(&snap, u, 10);
        assert_eq!(n.iter().map(|n| (n.node, n.t)).collect::<Vec<_>>(), vec![(b, 2.0), (a, 1.0)]);
        assert_eq!(temporal_neighbourhood(&snap, u, 1).len(), 1);
        let s2 = s.clone().with_num_nodes(4);
        assert!(temporal_neighbourhood(&snapshot(&s2, 3.0, true), 3, 10).is_empty());
    }

    #[test]
    fn csv_with_string_ids_uses_dictionary() {
        let text = "src,dst,t\nalice,bob,2.0\nbob,carol,1.0\n";
        let (s, dict) = read_csv(text.as_bytes()).unwrap();
        let dict = dict.unwrap();
        assert_eq!(s.num_nodes(), 3);
        assert_eq!(dict.id("alice"), Some(0));
        assert_eq!(s.events()[0].src, dict.id("bob").unwrap());
    }

    #[test]
    fn binary_cache_round_trip() {
        let s = ingest_events(vec![(0, 1, 0.25, vec![1.5]), (2, 1, 0.1, vec![-3.0])])
            .unwrap()
            .with_node_features(Tensor::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        write_binary(&s, &mut buf).unwrap();
        assert_eq!(read_binary(buf.as_slice()).unwrap(), s);
        buf[0] = b'X';
        assert!(read_binary(buf.as_slice()).is_err());
    }
}
