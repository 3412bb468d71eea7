//! Cayley graphs of `SL(2, Z_n)` used as expander topologies.
//!
//! Vertices are the 2×2 matrices over `Z_n` with unit determinant. The graph
//! is explored breadth-first from the identity by right multiplication with
//! `A = [[1,1],[0,1]]`, `B = [[1,0],[1,1]]` and their inverses, so vertex 0 is
//! always the identity and vertex indices follow BFS discovery order.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default cap on the vertex count for the dense eigensolver.
pub const DEFAULT_EIGEN_CAP: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ZnMatrix {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
    pub n: u32,
}

impl ZnMatrix {
    pub fn new(a: i64, b: i64, c: i64, d: i64, n: u32) -> Self {
        let m = i64::from(n);
        let r = |x: i64| x.rem_euclid(m) as u32;
        Self {
            a: r(a),
            b: r(b),
            c: r(c),
            d: r(d),
            n,
        }
    }

    pub fn identity(n: u32) -> Self {
        Self::new(1, 0, 0, 1, n)
    }

    pub fn mul(&self, o: &ZnMatrix) -> ZnMatrix {
        debug_assert_eq!(self.n, o.n);
        let n = u64::from(self.n);
        let f = |x: u32, y: u32, z: u32, w: u32| {
            ((u64::from(x) * u64::from(y) + u64::from(z) * u64::from(w)) % n) as u32
        };
        ZnMatrix {
            a: f(self.a, o.a, self.b, o.c),
            b: f(self.a, o.b, self.b, o.d),
            c: f(self.c, o.a, self.d, o.c),
            d: f(self.c, o.b, self.d, o.d),
            n: self.n,
        }
    }

    pub fn det(&self) -> u32 {
        let n = u64::from(self.n);
        let ad = u64::from(self.a) * u64::from(self.d) % n;
        let bc = u64::from(self.b) * u64::from(self.c) % n;
        ((ad + n - bc) % n) as u32
    }

    /// Row-major residues, the canonical hashing key.
    pub fn key(&self) -> [u32; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

/// The generator set `{A, B, A⁻¹, B⁻¹}` modulo `n`.
pub fn generators(n: u32) -> [ZnMatrix; 4] {
    [
        ZnMatrix::new(1, 1, 0, 1, n),
        ZnMatrix::new(1, 0, 1, 1, n),
        ZnMatrix::new(1, -1, 0, 1, n),
        ZnMatrix::new(1, 0, -1, 1, n),
    ]
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// `|SL(2, Z_n)| = n³ ∏_{p | n} (1 − 1/p²)`.
pub fn sl2_order(n: u64) -> Result<u64> {
    if n == 0 {
        return Err(Error::ZeroModulus);
    }
    let mut order = u128::from(n).pow(3);
    for p in prime_factors(n) {
        let p = u128::from(p);
        order = order / (p * p) * (p * p - 1);
    }
    Ok(order as u64)
}

/// Smallest modulus whose group has at least `size` elements.
pub fn smallest_n_for(size: usize) -> u32 {
    let mut n = 1u32;
    loop {
        if sl2_order(u64::from(n)).expect("n >= 1") >= size as u64 {
            return n;
        }
        n += 1;
    }
}

/// Undirected simple graph as sorted neighbour lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    neighbours: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds a simple graph from an edge list; self-loops and parallel
    /// edges are dropped.
    pub fn from_edges(num_vertices: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbours = vec![Vec::new(); num_vertices];
        for &(u, v) in edges {
            if u != v {
                neighbours[u].push(v);
                neighbours[v].push(u);
            }
        }
        for n in &mut neighbours {
            n.sort_unstable();
            n.dedup();
        }
        Self { neighbours }
    }

    pub fn complete(m: usize) -> Self {
        let edges: Vec<_> = (0..m)
            .flat_map(|u| (u + 1..m).map(move |v| (u, v)))
            .collect();
        Self::from_edges(m, &edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.neighbours.len()
    }

    pub fn neighbours(&self, u: usize) -> &[usize] {
        &self.neighbours[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbours[u].len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges `(u, v)` with `u < v`, ordered by `u` then `v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbours
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbours
            .iter()
            .enumerate()
            .all(|(u, ns)| ns.iter().all(|&v| self.neighbours[v].binary_search(&u).is_ok()))
    }

    pub fn has_self_loops(&self) -> bool {
        self.neighbours
            .iter()
            .enumerate()
            .any(|(u, ns)| ns.contains(&u))
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_vertices();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbours[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    /// `degree -> vertex count`, ascending by degree.
    pub fn degree_histogram(&self) -> Vec<(usize, usize)> {
        let mut h = std::collections::BTreeMap::new();
        for ns in &self.neighbours {
            *h.entry(ns.len()).or_insert(0) += 1;
        }
        h.into_iter().collect()
    }

    /// Subgraph induced on vertices `0..k`.
    pub fn induced_prefix(&self, k: usize) -> Adjacency {
        Adjacency {
            neighbours: self.neighbours[..k]
                .iter()
                .map(|ns| ns.iter().copied().filter(|&v| v < k).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CayleyGraph {
    pub n: u32,
    adjacency: Adjacency,
    elements: Vec<ZnMatrix>,
    vertex_of: HashMap<[u32; 4], usize>,
}

impl CayleyGraph {
    pub fn num_vertices(&self) -> usize {
        self.elements.len()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn element(&self, v: usize) -> &ZnMatrix {
        &self.elements[v]
    }

    pub fn vertex_of(&self, m: &ZnMatrix) -> Option<usize> {
        self.vertex_of.get(&m.key()).copied()
    }
}

pub fn build_cayley(n: u32) -> Result<CayleyGraph> {
    if n == 0 {
        return Err(Error::ZeroModulus);
    }
    let gens = generators(n);
    let id = ZnMatrix::identity(n);
    let mut elements = vec![id];
    let mut vertex_of = HashMap::from([(id.key(), 0usize)]);
    let mut edges = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let m = elements[u];
        for g in &gens {
            let next = m.mul(g);
            let v = match vertex_of.get(&next.key()) {
                Some(&v) => v,
                None => {
                    let v = elements.len();
                    elements.push(next);
                    vertex_of.insert(next.key(), v);
                    queue.push_back(v);
                    v
                }
            };
            edges.push((u, v));
        }
    }
    let adjacency = Adjacency::from_edges(elements.len(), &edges);
    Ok(CayleyGraph {
        n,
        adjacency,
        elements,
        vertex_of,
    })
}

/// `λ₁` of the symmetric normalised Laplacian `I − D^{-1/2} A D^{-1/2}`.
pub fn spectral_gap(adj: &Adjacency, cap: usize) -> Result<f64> {
    let n = adj.num_vertices();
    if n > cap {
        return Err(Error::EigenCapExceeded { vertices: n, cap });
    }
    if n < 2 {
        return Err(Error::TooFewVertices);
    }
    if !adj.is_connected() {
        return Err(Error::Disconnected);
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|u| 1.0 / (adj.degree(u) as f64).sqrt()).collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for u in 0..n {
        for &v in adj.neighbours(u) {
            lap[(u, v)] -= inv_sqrt[u] * inv_sqrt[v];
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(lap).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let gap = eig[1];
    if gap <= 1e-10 {
        return Err(Error::Disconnected);
    }
    Ok(gap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AssignmentMode {
    /// Keep only the first `bank_size` BFS vertices and the edges among them.
    #[default]
    Induced,
    /// Keep the whole graph; vertices past the bank are feature-less relays.
    Relay,
}

impl std::str::FromStr for AssignmentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "induced" => Ok(Self::Induced),
            "relay" => Ok(Self::Relay),
            other => Err(Error::Config(format!("unknown assignment mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for AssignmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Induced => "induced",
            Self::Relay => "relay",
        })
    }
}

/// Placement of node-bank entries on expander vertices. Bank index `i` sits
/// on vertex `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpanderAssignment {
    pub bank_size: usize,
    pub mode: AssignmentMode,
    adjacency: Adjacency,
}

impl ExpanderAssignment {
    pub fn vertex_of(&self, bank_index: usize) -> usize {
        bank_index
    }

    /// Graph the mixing layer runs on.
    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.num_vertices()
    }

    pub fn num_relays(&self) -> usize {
        self.num_vertices() - self.bank_size
    }
}

pub fn assign_vertices(
    bank_size: usize,
    graph: &CayleyGraph,
    mode: AssignmentMode,
) -> Result<ExpanderAssignment> {
    if bank_size > graph.num_vertices() {
        return Err(Error::ExpanderTooSmall {
            capacity: graph.num_vertices(),
            needed: bank_size,
        });
    }
    let adjacency = match mode {
        AssignmentMode::Induced => graph.adjacency().induced_prefix(bank_size),
        AssignmentMode::Relay => graph.adjacency().clone(),
    };
    Ok(ExpanderAssignment {
        bank_size,
        mode,
        adjacency,
    })
}
