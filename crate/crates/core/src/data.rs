//! Synthetic stream generators, dataset statistics, splits and negative
//! sampling.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ctdg::{ingest_events, ingest_triples, Event, EventStream};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Chronological split fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::BadSplit(format!("negative or non-finite fraction in {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::BadSplit(format!("fractions {parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Event counts `(train, val, test)` for a stream of `n` events: train
    /// and val are floored, test takes the rest.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let train = ((n as f64 * self.train + 1e-9).floor() as usize).min(n);
        let val = ((n as f64 * self.val + 1e-9).floor() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }

    /// Position ranges of the three splits.
    pub fn ranges(&self, n: usize) -> Result<[std::ops::Range<usize>; 3]> {
        let (a, b, _) = self.counts(n)?;
        Ok([0..a, a..a + b, a + b..n])
    }
}

/// Contiguous chronological train, val and test streams.
pub fn chronological_split(stream: &EventStream, spec: &SplitSpec) -> Result<(EventStream, EventStream, EventStream)> {
    let [a, b, c] = spec.ranges(stream.len())?;
    Ok((stream.slice(a), stream.slice(b), stream.slice(c)))
}

/// Fraction of distinct directed test pairs that never occur in `train`.
pub fn surprise_index(train: &[Event], test: &[Event]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let seen: HashSet<(usize, usize)> = train.iter().map(|e| (e.src, e.dst)).collect();
    let pairs: HashSet<(usize, usize)> = test.iter().map(|e| (e.src, e.dst)).collect();
    let unseen = pairs.iter().filter(|p| !seen.contains(p)).count();
    Ok(unseen as f64 / pairs.len() as f64)
}

/// `k` distinct negatives for query `(src, dst)`, drawn uniformly from
/// `candidates` minus both endpoints. The draw depends only on `seed` and
/// `query_index`.
pub fn negative_sampler(
    src: usize,
    dst: usize,
    query_index: u64,
    candidates: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let pool: Vec<usize> = candidates.iter().copied().filter(|&c| c != dst && c != src).collect();
    if k > pool.len() || k == 0 {
        return Err(Error::NotEnoughCandidates {
            requested: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query_index);
    Ok(sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

/// Path `u = 0 - 1 - … - n = v` whose `i`-th edge carries timestamp
/// `order[i]`. `order` must be a permutation of `1..=n_edges`.
pub fn gen_path_graph(n_edges: usize, order: &[usize]) -> Result<EventStream> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if order.len() != n_edges || sorted.iter().enumerate().any(|(i, &o)| o != i + 1) {
        return Err(Error::Config(format!("{order:?} is not a permutation of 1..={n_edges}")));
    }
    let triples: Vec<(usize, usize, f64)> = order.iter().enumerate().map(|(i, &t)| (i, i + 1, t as f64)).collect();
    Ok(ingest_triples(&triples)?.with_num_nodes(n_edges + 1))
}

/// Uniformly random pairs of distinct nodes at unit time steps.
pub fn gen_erdos_temporal(n_nodes: usize, n_events: usize, seed: u64) -> Result<EventStream> {
    if n_nodes < 2 {
        return Err(Error::Infeasible("need at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<(usize, usize, f64)> = (0..n_events)
        .map(|k| {
            let u = rng.gen_range(0..n_nodes);
            let mut v = rng.gen_range(0..n_nodes - 1);
            if v >= u {
                v += 1;
            }
            (u, v, (k + 1) as f64)
        })
        .collect();
    Ok(ingest_triples(&triples)?.with_num_nodes(n_nodes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_events: usize,
    pub n_clusters: usize,
    /// Target surprise index of the val and test periods against train.
    pub surprise_target: f64,
    /// Probability that an interaction stays inside the user's cluster.
    pub in_cluster: f64,
    /// Probability that a training-period interaction repeats a past item.
    pub repeat: f64,
    /// Standard deviation of the noise on the cluster one-hot features.
    pub feature_noise: f64,
    pub split: SplitSpec,
    pub seed: u64,
}

impl Default for BipartiteSpec {
    fn default() -> Self {
        Self {
            n_users: 600,
            n_items: 400,
            n_events: 20_000,
            n_clusters: 8,
            surprise_target: 0.8,
            in_cluster: 0.9,
            repeat: 0.5,
            feature_noise: 1.0,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

/// User→item stream with latent clusters. Users are `0..n_users`, items
/// follow. Users prefer items of their own cluster; the evaluation periods
/// are steered so that their distinct-pair surprise against the training
/// period tracks `surprise_target`. Node features are noisy cluster
/// one-hots with a leading user flag.
pub fn gen_bipartite(spec: &BipartiteSpec) -> Result<EventStream> {
    let BipartiteSpec {
        n_users,
        n_items,
        n_events,
        n_clusters,
        surprise_target,
        ..
    } = *spec;
    if !(0.0..=1.0).contains(&surprise_target) {
        return Err(Error::Infeasible(format!("surprise target {surprise_target} outside [0, 1]")));
    }
    if n_users == 0 || n_items == 0 || n_clusters == 0 || n_clusters > n_items.min(n_users) {
        return Err(Error::Infeasible(format!(
            "{n_users} users and {n_items} items cannot host {n_clusters} clusters"
        )));
    }
    let (n_train, n_val, _) = spec.split.counts(n_events)?;
    if n_train == 0 && surprise_target < 1.0 && n_events > n_train {
        return Err(Error::Infeasible("an empty training period cannot supply seen pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let user_cluster: Vec<usize> = (0..n_users).map(|u| u % n_clusters).collect();
    let item_cluster: Vec<usize> = (0..n_items).map(|i| i % n_clusters).collect();
    let mut items_of: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &c) in item_cluster.iter().enumerate() {
        items_of[c].push(i);
    }

    let pick_item = |rng: &mut ChaCha8Rng, u: usize| -> usize {
        let c = if rng.gen::<f64>() < spec.in_cluster {
            user_cluster[u]
        } else {
            rng.gen_range(0..n_clusters)
        };
        items_of[c][rng.gen_range(0..items_of[c].len())]
    };

    let mut history: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    let mut train_pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut events = Vec::with_capacity(n_events);
    for k in 0..n_train {
        let u = rng.gen_range(0..n_users);
        let i = if !history[u].is_empty() && rng.gen::<f64>() < spec.repeat {
            history[u][rng.gen_range(0..history[u].len())]
        } else {
            pick_item(&mut rng, u)
        };
        if train_pairs.insert((u, i)) {
            history[u].push(i);
        }
        events.push((u, n_users + i, (k + 1) as f64));
    }
    let with_history: Vec<usize> = (0..n_users).filter(|&u| !history[u].is_empty()).collect();
    let unseen_possible = (0..n_users).any(|u| history[u].len() < n_items);

    for period in [n_train..n_train + n_val, n_train + n_val..n_events] {
        let mut pairs: HashMap<(usize, usize), bool> = HashMap::new();
        let mut unseen = 0usize;
        for k in period {
            let frac = if pairs.is_empty() { None } else { Some(unseen as f64 / pairs.len() as f64) };
            let want_unseen = if surprise_target >= 1.0 {
                true
            } else if surprise_target <= 0.0 {
                false
            } else {
                match frac {
                    None => rng.gen::<f64>() < surprise_target,
                    Some(f) => f < surprise_target,
                }
            };
            let (u, i) = if want_unseen {
                if !unseen_possible {
                    return Err(Error::Infeasible("every user has already met every item".into()));
                }
                draw_unseen(&mut rng, n_users, &history, &train_pairs, &pick_item, n_items)
            } else {
                if with_history.is_empty() {
                    return Err(Error::Infeasible("no training pairs to repeat".into()));
                }
                let u = with_history[rng.gen_range(0..with_history.len())];
                (u, history[u][rng.gen_range(0..history[u].len())])
            };
            let is_unseen = !train_pairs.contains(&(u, i));
            if pairs.insert((u, i), is_unseen).is_none() && is_unseen {
                unseen += 1;
            }
            events.push((u, n_users + i, (k + 1) as f64));
        }
    }

    let width = 1 + n_clusters;
    let noise = Normal::new(0.0, spec.feature_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut feats = Tensor::zeros(n_users + n_items, width);
    for node in 0..n_users + n_items {
        let (flag, c) = if node < n_users {
            (1.0, user_cluster[node])
        } else {
            (0.0, item_cluster[node - n_users])
        };
        feats.set(node, 0, flag);
        for j in 0..n_clusters {
            let hot = if j == c { 1.0 } else { 0.0 };
            let eps = if spec.feature_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            feats.set(node, 1 + j, hot + eps);
        }
    }
    ingest_events(events.into_iter().map(|(u, v, t)| (u, v, t, Vec::new())))?
        .with_num_nodes(n_users + n_items)
        .with_node_features(feats)
}

fn draw_unseen(
    rng: &mut ChaCha8Rng,
    n_users: usize,
    history: &[Vec<usize>],
    train_pairs: &HashSet<(usize, usize)>,
    pick_item: &dyn Fn(&mut ChaCha8Rng, usize) -> usize,
    n_items: usize,
) -> (usize, usize) {
    loop {
        let u = rng.gen_range(0..n_users);
        if history[u].len() >= n_items {
            continue;
        }
        for _ in 0..64 {
            let i = pick_item(rng, u);
            if !train_pairs.contains(&(u, i)) {
                return (u, i);
            }
        }
        let i = rng.gen_range(0..n_items);
        if !train_pairs.contains(&(u, i)) {
            return (u, i);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaleSpec {
    pub n_nodes: usize,
    /// Time steps during which stale nodes receive no events.
    pub inactive_window: usize,
    pub n_clusters: usize,
    /// Number of designated stale nodes.
    pub n_stale: usize,
    pub events_per_step: usize,
    pub warmup_steps: usize,
    pub test_steps: usize,
    pub seed: u64,
}

impl Default for StaleSpec {
    fn default() -> Self {
        Self {
            n_nodes: 40,
            inactive_window: 10,
            n_clusters: 4,
            n_stale: 4,
            events_per_step: 4,
            warmup_steps: 10,
            test_steps: 5,
            seed: 0,
        }
    }
}

/// Output of [`gen_stale`].
#[derive(Clone, Debug)]
pub struct StaleStream {
    pub stream: EventStream,
    pub stale_nodes: Vec<usize>,
    /// Last activation time of every stale node.
    pub burst_time: f64,
    /// End of the inactive window; staleness of stale nodes here equals
    /// the window length.
    pub window_end: f64,
}

/// Clustered background traffic at unit time steps. Every stale node has
/// one event at `burst_time`, then none for `inactive_window` steps while
/// its cluster stays active; after the window each step contains links
/// between stale nodes and their cluster-mates.
pub fn gen_stale(spec: &StaleSpec) -> Result<StaleStream> {
    let StaleSpec {
        n_nodes,
        n_clusters,
        n_stale,
        ..
    } = *spec;
    if n_clusters == 0 || n_nodes < 2 * n_clusters || n_stale >= n_nodes - n_clusters {
        return Err(Error::Infeasible(format!(
            "{n_nodes} nodes cannot host {n_clusters} clusters with {n_stale} stale nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cluster: Vec<usize> = (0..n_nodes).map(|u| u % n_clusters).collect();
    let stale: Vec<usize> = (0..n_stale).map(|k| n_nodes - 1 - k).collect();
    let is_stale: Vec<bool> = (0..n_nodes).map(|u| stale.contains(&u)).collect();
    let members: Vec<Vec<usize>> = (0..n_clusters)
        .map(|c| (0..n_nodes).filter(|&u| cluster[u] == c && !is_stale[u]).collect())
        .collect();

    let mut events = Vec::new();
    let background = |rng: &mut ChaCha8Rng, t: f64, out: &mut Vec<(usize, usize, f64)>, allow_stale: bool| {
        for _ in 0..spec.events_per_step {
            let c = rng.gen_range(0..n_clusters);
            let pool: Vec<usize> = (0..n_nodes)
                .filter(|&u| cluster[u] == c && (allow_stale || !is_stale[u]))
                .collect();
            if pool.len() < 2 {
                continue;
            }
            let a = pool[rng.gen_range(0..pool.len())];
            let mut b = pool[rng.gen_range(0..pool.len() - 1)];
            if b == a {
                b = pool[pool.len() - 1];
            }
            out.push((a, b, t));
        }
    };
    let mut t = 1.0;
    for _ in 0..spec.warmup_steps {
        background(&mut rng, t, &mut events, true);
        t += 1.0;
    }
    let burst_time = t;
    for &s in &stale {
        let mates = &members[cluster[s]];
        events.push((s, mates[rng.gen_range(0..mates.len())], burst_time));
    }
    for _ in 0..spec.inactive_window {
        t += 1.0;
        background(&mut rng, t, &mut events, false);
    }
    let window_end = t;
    for _ in 0..spec.test_steps {
        t += 1.0;
        for &s in &stale {
            let mates = &members[cluster[s]];
            events.push((s, mates[rng.gen_range(0..mates.len())], t));
        }
        background(&mut rng, t, &mut events, false);
    }
    let mut feats = Tensor::zeros(n_nodes, n_clusters);
    for u in 0..n_nodes {
        feats.set(u, cluster[u], 1.0);
    }
    let stream = ingest_triples(&events)?.with_num_nodes(n_nodes).with_node_features(feats)?;
    Ok(StaleStream {
        stream,
        stale_nodes: stale,
        burst_time,
        window_end,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GeneratorKind {
    Path,
    #[default]
    Bipartite,
    Stale,
    ErdosTemporal,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(Self::Path),
            "bipartite" => Ok(Self::Bipartite),
            "stale" => Ok(Self::Stale),
            "erdos-temporal" | "erdos" => Ok(Self::ErdosTemporal),
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Path => "path",
            Self::Bipartite => "bipartite",
            Self::Stale => "stale",
            Self::ErdosTemporal => "erdos-temporal",
        })
    }
}

/// Everything needed to regenerate a synthetic stream.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub generator: GeneratorKind,
    pub seed: u64,
    pub bipartite: BipartiteSpec,
    pub stale: StaleSpec,
    pub n_nodes: usize,
    pub n_events: usize,
    pub path_order: Vec<usize>,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::Bipartite,
            seed: 0,
            bipartite: BipartiteSpec::default(),
            stale: StaleSpec::default(),
            n_nodes: 100,
            n_events: 2000,
            path_order: vec![1, 2, 3, 4],
        }
    }
}

impl GenSpec {
    pub fn generate(&self) -> Result<EventStream> {
        match self.generator {
            GeneratorKind::Path => gen_path_graph(self.path_order.len(), &self.path_order),
            GeneratorKind::Bipartite => gen_bipartite(&BipartiteSpec {
                seed: self.seed,
                ..self.bipartite.clone()
            }),
            GeneratorKind::Stale => gen_stale(&StaleSpec {
                seed: self.seed,
                ..self.stale.clone()
            })
            .map(|s| s.stream),
            GeneratorKind::ErdosTemporal => gen_erdos_temporal(self.n_nodes, self.n_events, self.seed),
        }
    }

    /// Sets one `key = value` field; keys mirror [`GenSpec::manifest`].
    /// Size keys apply to the generator selected at the time of the call.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let b = &mut self.bipartite;
        let s = &mut self.stale;
        match key {
            "generator" => self.generator = value.parse()?,
            "seed" => self.seed = p(key, value)?,
            "n_nodes" if self.generator == GeneratorKind::Stale => s.n_nodes = p(key, value)?,
            "n_nodes" => self.n_nodes = p(key, value)?,
            "n_events" if self.generator == GeneratorKind::Bipartite => b.n_events = p(key, value)?,
            "n_events" => self.n_events = p(key, value)?,
            "n_users" => b.n_users = p(key, value)?,
            "n_items" => b.n_items = p(key, value)?,
            "n_clusters" if self.generator == GeneratorKind::Stale => s.n_clusters = p(key, value)?,
            "n_clusters" => b.n_clusters = p(key, value)?,
            "surprise_target" => b.surprise_target = p(key, value)?,
            "in_cluster" => b.in_cluster = p(key, value)?,
            "repeat" => b.repeat = p(key, value)?,
            "feature_noise" => b.feature_noise = p(key, value)?,
            "split" => b.split = parse_split(value)?,
            "window" | "inactive_window" => s.inactive_window = p(key, value)?,
            "n_stale" => s.n_stale = p(key, value)?,
            "events_per_step" => s.events_per_step = p(key, value)?,
            "warmup_steps" => s.warmup_steps = p(key, value)?,
            "test_steps" => s.test_steps = p(key, value)?,
            "path_order" => {
                self.path_order = value
                    .split(',')
                    .map(|x| p(key, x))
                    .collect::<Result<Vec<usize>>>()?
            }
            other => return Err(Error::Config(format!("unknown generator key `{other}`"))),
        }
        Ok(())
    }

    /// The fields relevant to the selected generator as `key=value` lines.
    pub fn manifest(&self) -> String {
        let mut lines = vec![format!("generator={}", self.generator), format!("seed={}", self.seed)];
        match self.generator {
            GeneratorKind::Path => lines.push(format!(
                "path_order={}",
                self.path_order.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            )),
            GeneratorKind::Bipartite => {
                let b = &self.bipartite;
                lines.extend([
                    format!("n_users={}", b.n_users),
                    format!("n_items={}", b.n_items),
                    format!("n_events={}", b.n_events),
                    format!("n_clusters={}", b.n_clusters),
                    format!("surprise_target={}", b.surprise_target),
                    format!("in_cluster={}", b.in_cluster),
                    format!("repeat={}", b.repeat),
                    format!("feature_noise={}", b.feature_noise),
                    format!("split={},{},{}", b.split.train, b.split.val, b.split.test),
                ]);
            }
            GeneratorKind::Stale => {
                let s = &self.stale;
                lines.extend([
                    format!("n_nodes={}", s.n_nodes),
                    format!("window={}", s.inactive_window),
                    format!("n_clusters={}", s.n_clusters),
                    format!("n_stale={}", s.n_stale),
                    format!("events_per_step={}", s.events_per_step),
                    format!("warmup_steps={}", s.warmup_steps),
                    format!("test_steps={}", s.test_steps),
                ]);
            }
            GeneratorKind::ErdosTemporal => {
                lines.push(format!("n_nodes={}", self.n_nodes));
                lines.push(format!("n_events={}", self.n_events));
            }
        }
        lines.join("\n") + "\n"
    }
}

/// Parses `a,b,c` into a split.
pub fn parse_split(value: &str) -> Result<SplitSpec> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::BadSplit(value.to_string())))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => SplitSpec::new(a, b, c),
        _ => Err(Error::BadSplit(value.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::{snapshot, NodeBank};
    use crate::reach::{staleness_report, under_reaches, ReachMode};

    fn ev(pairs: &[(usize, usize)]) -> Vec<Event> {
        pairs.iter().enumerate().map(|(k, &(u, v))| Event::new(u, v, k as f64)).collect()
    }

    #[test]
    fn surprise_examples() {
        let train = ev(&[(0, 1)]);
        assert_eq!(surprise_index(&train, &ev(&[(0, 1), (2, 3)])).unwrap(), 0.5);
        assert_eq!(surprise_index(&train, &ev(&[(0, 1)])).unwrap(), 0.0);
        assert_eq!(surprise_index(&train, &ev(&[(5, 6)])).unwrap(), 1.0);
        assert!(matches!(surprise_index(&train, &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn sampler_examples() {
        assert_eq!(negative_sampler(0, 1, 0, &[0, 1, 2], 1, 9).unwrap(), vec![2]);
        let c: Vec<usize> = (0..50).collect();
        let a = negative_sampler(3, 7, 11, &c, 20, 5).unwrap();
        assert_eq!(a, negative_sampler(3, 7, 11, &c, 20, 5).unwrap());
        assert!(!a.contains(&7) && !a.contains(&3));
        let uniq: HashSet<usize> = a.iter().copied().collect();
        assert_eq!(uniq.len(), 20);
        assert_ne!(a, negative_sampler(3, 7, 12, &c, 20, 5).unwrap());
        assert!(matches!(
            negative_sampler(0, 1, 0, &[0, 1, 2], 2, 0),
            Err(Error::NotEnoughCandidates { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn split_examples() {
        let s = ingest_triples(&(0..10).map(|k| (0, 1, k as f64)).collect::<Vec<_>>()).unwrap();
        let (a, b, c) = chronological_split(&s, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        let (a, b, c) = chronological_split(&s, &SplitSpec::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (0, 0, 10));
        let all: Vec<Event> = [a.events(), b.events(), c.events()].concat();
        assert_eq!(all, s.events());
        assert!(SplitSpec::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitSpec::new(-0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn path_graph_orders() {
        let s = gen_path_graph(2, &[1, 2]).unwrap();
        assert!(under_reaches(&s, 0, 2, 10.0, &ReachMode::Strict).is_ok_and(|r| !r));
        let s = gen_path_graph(2, &[2, 1]).unwrap();
        assert!(under_reaches(&s, 0, 2, 10.0, &ReachMode::Strict).unwrap());
        assert!(!under_reaches(&s, 2, 0, 10.0, &ReachMode::Strict).unwrap());
        assert!(gen_path_graph(3, &[1, 1, 2]).is_err());
    }

    fn small_bipartite(target: f64, seed: u64) -> BipartiteSpec {
        BipartiteSpec {
            n_users: 60,
            n_items: 40,
            n_events: 2000,
            n_clusters: 4,
            surprise_target: target,
            seed,
            ..BipartiteSpec::default()
        }
    }

    #[test]
    fn bipartite_surprise_extremes_and_sides() {
        for target in [0.0, 0.3, 0.8, 1.0] {
            let spec = small_bipartite(target, 3);
            let s = gen_bipartite(&spec).unwrap();
            let (tr, _, te) = chronological_split(&s, &spec.split).unwrap();
            let si = surprise_index(tr.events(), te.events()).unwrap();
            assert!((si - target).abs() <= 0.05, "target {target}, got {si}");
            for e in s.events() {
                assert!(e.src < 60 && e.dst >= 60);
            }
        }
        assert!(gen_bipartite(&small_bipartite(1.5, 0)).is_err());
    }

    #[test]
    fn bipartite_is_seeded() {
        let a = gen_bipartite(&small_bipartite(0.8, 1)).unwrap();
        let b = gen_bipartite(&small_bipartite(0.8, 1)).unwrap();
        let c = gen_bipartite(&small_bipartite(0.8, 2)).unwrap();
        assert_eq!(a.events(), b.events());
        assert_eq!(a.raw_node_features(), b.raw_node_features());
        assert_ne!(a.events(), c.events());
    }

    #[test]
    fn stale_window_is_silent() {
        let spec = StaleSpec::default();
        let out = gen_stale(&spec).unwrap();
        assert_eq!(out.window_end - out.burst_time, spec.inactive_window as f64);
        for e in out.stream.events() {
            if e.t > out.burst_time && e.t <= out.window_end {
                for s in &out.stale_nodes {
                    assert!(!e.touches(*s));
                }
            }
        }
        let snap = snapshot(&out.stream, out.window_end, true);
        let mut bank = NodeBank::new();
        bank.update(snap.events());
        let report = staleness_report(&bank, out.window_end);
        for s in &out.stale_nodes {
            assert_eq!(report[s], spec.inactive_window as f64);
        }
        let tail: Vec<&Event> = out.stream.events().iter().filter(|e| e.t > out.window_end).collect();
        assert!(tail.iter().any(|e| out.stale_nodes.iter().any(|&s| e.touches(s))));
    }

    #[test]
    fn gen_spec_round_trip() {
        let mut g = GenSpec::default();
        for line in g.manifest().lines() {
            let (k, v) = line.split_once('=').unwrap();
            g.set(k, v).unwrap();
        }
        assert_eq!(g, GenSpec::default());
        for kind in ["stale", "path", "erdos-temporal"] {
            let mut g = GenSpec::default();
            g.set("generator", kind).unwrap();
            g.set("seed", "4").unwrap();
            let mut h = GenSpec::default();
            for line in g.manifest().lines() {
                let (k, v) = line.split_once('=').unwrap();
                h.set(k, v).unwrap();
            }
            assert_eq!(g, h);
        }
        assert!(g.set("bogus", "1").is_err());
    }
}
