//! Undirected user/tweet graph and unsupervised inductive node embeddings.
//!
//! Adjacency is kept in compressed sparse row form built from an edge stream;
//! no dense `V × V` structure is ever allocated. Embeddings come from stacked
//! mean-aggregation layers `h ← tanh(W_self·h_v + W_neigh·mean(h_u))`,
//! trained with a skip-gram style objective over teleporting random walks.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Label, Tweet, UserProfile};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, seeded_rng, sigmoid, uniform_fan_in};
use crate::params::{visit_matrix, OptimizerKind, Optimizer, ParamSet};

pub const DEFAULT_TELEPORT: f64 = 0.3;
pub const DEFAULT_EMBED_DIM: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    User,
    Tweet,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::User => "user",
            NodeKind::Tweet => "tweet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeTag {
    Parent,
    Tweet,
    Retweet,
    User,
    Fake,
}

const ALL_TAGS: [TypeTag; 5] = [TypeTag::Parent, TypeTag::Tweet, TypeTag::Retweet, TypeTag::User, TypeTag::Fake];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TagSet(u8);

impl TagSet {
    fn bit(tag: TypeTag) -> u8 {
        1 << (ALL_TAGS.iter().position(|t| *t == tag).unwrap())
    }

    pub fn insert(&mut self, tag: TypeTag) {
        self.0 |= Self::bit(tag);
    }

    pub fn contains(self, tag: TypeTag) -> bool {
        self.0 & Self::bit(tag) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = TypeTag> {
        ALL_TAGS.into_iter().filter(move |t| self.contains(*t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Follow,
    Authorship,
    Retweet,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Follow => "follow",
            EdgeType::Authorship => "authorship",
            EdgeType::Retweet => "retweet",
        }
    }
}

impl std::str::FromStr for EdgeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "follow" => Ok(EdgeType::Follow),
            "authorship" => Ok(EdgeType::Authorship),
            "retweet" => Ok(EdgeType::Retweet),
            other => Err(Error::GraphBuild(format!("unknown edge type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Tag tweets labelled fake with [`TypeTag::Fake`]. Off by default: it
    /// leaks veracity labels into the node features.
    pub label_tags: bool,
}

#[derive(Debug, Clone)]
pub struct HeteroGraph {
    ids: Vec<String>,
    kinds: Vec<NodeKind>,
    tags: Vec<TagSet>,
    index: HashMap<(NodeKind, String), usize>,
    /// Each undirected edge once, with `a < b`.
    edges: Vec<(u32, u32, EdgeType)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, kind: NodeKind, id: &str) -> Option<usize> {
        self.index.get(&(kind, id.to_string())).copied()
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn kind(&self, v: usize) -> NodeKind {
        self.kinds[v]
    }

    pub fn tags(&self, v: usize) -> TagSet {
        self.tags[v]
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn edges(&self) -> &[(u32, u32, EdgeType)] {
        &self.edges
    }

    /// Heap bytes held by the adjacency structure; linear in nodes + edges.
    pub fn adjacency_bytes(&self) -> usize {
        self.offsets.capacity() * std::mem::size_of::<usize>()
            + self.neighbors.capacity() * std::mem::size_of::<u32>()
            + self.edges.capacity() * std::mem::size_of::<(u32, u32, EdgeType)>()
    }

    /// Writes `src \t dst \t type` per edge, endpoints as plain ids.
    pub fn write_edges_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for &(a, b, ty) in &self.edges {
            let (a, b) = (a as usize, b as usize);
            // Authorship rows are written user first.
            let (src, dst) = if ty == EdgeType::Authorship && self.kinds[a] == NodeKind::Tweet {
                (b, a)
            } else {
                (a, b)
            };
            writeln!(w, "{}\t{}\t{}", self.ids[src], self.ids[dst], ty.as_str()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads follow pairs from `edges.tsv` (`src \t dst [\t type]`). Rows typed
/// other than `follow` are derived from tweets at build time and skipped.
pub fn read_follow_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
            });
        }
        let ty = match cols.get(2) {
            Some(t) => t.parse::<EdgeType>().map_err(|e| Error::Ingest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
            None => EdgeType::Follow,
        };
        if ty == EdgeType::Follow {
            out.push((cols[0].to_string(), cols[1].to_string()));
        }
    }
    Ok(out)
}

/// Builds the graph: users first (input order), then tweets.
pub fn build_graph(
    tweets: &[Tweet],
    users: &[UserProfile],
    follow_edges: &[(String, String)],
    options: GraphOptions,
) -> Result<HeteroGraph> {
    let mut ids = Vec::with_capacity(users.len() + tweets.len());
    let mut kinds = Vec::with_capacity(ids.capacity());
    let mut tags = Vec::with_capacity(ids.capacity());
    let mut index = HashMap::with_capacity(ids.capacity());
    let mut add = |kind: NodeKind, id: &str, tag: TypeTag| -> Result<()> {
        if index.insert((kind, id.to_string()), ids.len()).is_some() {
            return Err(Error::GraphBuild(format!("duplicate {} id {id}", kind.as_str())));
        }
        ids.push(id.to_string());
        kinds.push(kind);
        let mut t = TagSet::default();
        t.insert(tag);
        tags.push(t);
        Ok(())
    };
    for u in users {
        add(NodeKind::User, &u.id, TypeTag::User)?;
    }
    for t in tweets {
        add(NodeKind::Tweet, &t.id, TypeTag::Tweet)?;
    }

    let lookup = |kind: NodeKind, id: &str, context: &str| -> Result<u32> {
        index
            .get(&(kind, id.to_string()))
            .map(|&v| v as u32)
            .ok_or_else(|| Error::GraphBuild(format!("{context} references unknown {} {id}", kind.as_str())))
    };

    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut edges = Vec::new();
    let mut push = |a: u32, b: u32, ty: EdgeType| {
        if a == b {
            return;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push((key.0, key.1, ty));
        }
    };
    for t in tweets {
        let tv = lookup(NodeKind::Tweet, &t.id, "tweet")?;
        let uv = lookup(NodeKind::User, &t.user_id, &format!("tweet {}", t.id))?;
        push(uv, tv, EdgeType::Authorship);
        if let Some(parent) = &t.retweet_of {
            let pv = lookup(NodeKind::Tweet, parent, &format!("retweet {}", t.id))?;
            push(pv, tv, EdgeType::Retweet);
            tags[tv as usize].insert(TypeTag::Retweet);
            tags[pv as usize].insert(TypeTag::Parent);
        }
        if options.label_tags && t.label == Label::Fake {
            tags[tv as usize].insert(TypeTag::Fake);
        }
    }
    for (a, b) in follow_edges {
        let av = lookup(NodeKind::User, a, "follow edge")?;
        let bv = lookup(NodeKind::User, b, "follow edge")?;
        push(av, bv, EdgeType::Follow);
    }
    edges.sort_unstable();

    let n = ids.len();
    let mut degree = vec![0usize; n];
    for &(a, b, _) in &edges {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
    }
    let mut offsets = vec![0usize; n + 1];
    for v in 0..n {
        offsets[v + 1] = offsets[v] + degree[v];
    }
    let mut fill = offsets[..n].to_vec();
    let mut neighbors = vec![0u32; offsets[n]];
    for &(a, b, _) in &edges {
        neighbors[fill[a as usize]] = b;
        fill[a as usize] += 1;
        neighbors[fill[b as usize]] = a;
        fill[b as usize] += 1;
    }
    for v in 0..n {
        neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
    }
    Ok(HeteroGraph {
        ids,
        kinds,
        tags,
        index,
        edges,
        offsets,
        neighbors,
    })
}

pub const NODE_FEATURE_DIM: usize = 2 + ALL_TAGS.len() + 1;

/// Per-node `one-hot(kind) ⊕ tag indicators ⊕ ln(1 + degree)`.
pub fn node_features(g: &HeteroGraph) -> Array2<f64> {
    let mut f = Array2::zeros((g.num_nodes(), NODE_FEATURE_DIM));
    for v in 0..g.num_nodes() {
        let kind_col = match g.kind(v) {
            NodeKind::User => 0,
            NodeKind::Tweet => 1,
        };
        f[[v, kind_col]] = 1.0;
        for (j, tag) in ALL_TAGS.iter().enumerate() {
            if g.tags(v).contains(*tag) {
                f[[v, 2 + j]] = 1.0;
            }
        }
        f[[v, NODE_FEATURE_DIM - 1]] = (g.degree(v) as f64).ln_1p();
    }
    f
}

/// Walk of `length` steps from `start` (the result holds `length + 1` nodes).
/// Each step teleports to a uniform node with probability `teleport`, else
/// moves to a uniform neighbour; isolated nodes always teleport.
pub fn sample_walk<R: Rng>(g: &HeteroGraph, start: usize, length: usize, teleport: f64, rng: &mut R) -> Result<Vec<usize>> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::Precondition("cannot walk an empty graph".into()));
    }
    if !(0.0..=1.0).contains(&teleport) {
        return Err(Error::Precondition(format!("teleport must lie in [0, 1], got {teleport}")));
    }
    if start >= n {
        return Err(Error::Precondition(format!("start node {start} out of range")));
    }
    let mut walk = Vec::with_capacity(length + 1);
    let mut v = start;
    walk.push(v);
    for _ in 0..length {
        let nbrs = g.neighbors(v);
        v = if nbrs.is_empty() || rng.random::<f64>() < teleport {
            rng.random_range(0..n)
        } else {
            *nbrs.choose(rng).expect("non-empty") as usize
        };
        walk.push(v);
    }
    Ok(walk)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub layers: Vec<SageLayer>,
}

impl SageParams {
    /// `dims = [input, hidden..., output]`.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Dimension(format!("SAGE layer dims {dims:?} must have ≥2 positive entries")));
        }
        let layers = dims
            .windows(2)
            .map(|w| SageLayer {
                w_self: uniform_fan_in(w[1], w[0], w[0], rng),
                w_neigh: uniform_fan_in(w[1], w[0], w[0], rng),
            })
            .collect();
        Ok(SageParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w_self.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w_self.nrows()
    }

    fn check(&self, feats: &Array2<f64>) -> Result<()> {
        if feats.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "node features have {} columns, first SAGE layer expects {}",
                feats.ncols(),
                self.input_dim()
            )));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].w_self.nrows() != w[1].w_self.ncols() {
                return Err(Error::Dimension(format!("SAGE layers {i} and {} do not chain", i + 1)));
            }
        }
        Ok(())
    }
}

impl ParamSet for SageParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("sage.{i}.");
            visit_matrix(&p, "w_self", &l.w_self, f);
            visit_matrix(&p, "w_neigh", &l.w_neigh, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("sage.{i}.w_self"), l.w_self.as_slice_mut().unwrap());
            f(&format!("sage.{i}.w_neigh"), l.w_neigh.as_slice_mut().unwrap());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Neighborhood {
    Full,
    /// At most `fanout` neighbours drawn without replacement per node and layer.
    Sampled { fanout: usize },
}

/// Activations of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SageTrace {
    /// `h[0]` is the input features; `h[l]` the output of layer `l`.
    pub h: Vec<Array2<f64>>,
    means: Vec<Array2<f64>>,
    /// Aggregation neighbourhoods per layer (`None` = full adjacency).
    sampled: Vec<Option<Vec<Vec<u32>>>>,
    active: Vec<Vec<bool>>,
}

impl SageTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.h.last().expect("non-empty")
    }
}

fn neighborhood<'a>(g: &'a HeteroGraph, sampled: &'a Option<Vec<Vec<u32>>>, v: usize) -> &'a [u32] {
    match sampled {
        Some(lists) => &lists[v],
        None => g.neighbors(v),
    }
}

/// Forward pass restricted to the receptive field of `targets` (all nodes when `None`).
pub fn sage_forward<R: Rng>(
    g: &HeteroGraph,
    feats: &Array2<f64>,
    params: &SageParams,
    targets: Option<&[usize]>,
    mode: Neighborhood,
    rng: &mut R,
) -> Result<SageTrace> {
    params.check(feats)?;
    if feats.nrows() != g.num_nodes() {
        return Err(Error::Dimension(format!(
            "feature matrix has {} rows for {} nodes",
            feats.nrows(),
            g.num_nodes()
        )));
    }
    let n = g.num_nodes();
    let n_layers = params.layers.len();

    let sampled: Vec<Option<Vec<Vec<u32>>>> = (0..n_layers)
        .map(|_| match mode {
            Neighborhood::Full => None,
            Neighborhood::Sampled { fanout } => Some(
                (0..n)
                    .map(|v| {
                        let nb = g.neighbors(v);
                        if nb.len() <= fanout {
                            nb.to_vec()
                        } else {
                            nb.choose_multiple(rng, fanout).cloned().collect()
                        }
                    })
                    .collect(),
            ),
        })
        .collect();

    // active[l]: nodes whose layer-l representation is needed.
    let mut active = vec![vec![false; n]; n_layers + 1];
    match targets {
        Some(t) => {
            for &v in t {
                if v >= n {
                    return Err(Error::Precondition(format!("node index {v} out of range")));
                }
                active[n_layers][v] = true;
            }
        }
        None => active[n_layers].iter_mut().for_each(|a| *a = true),
    }
    for l in (0..n_layers).rev() {
        let (lower, upper) = active.split_at_mut(l + 1);
        let (cur, next) = (&mut lower[l], &upper[0]);
        for v in 0..n {
            if next[v] {
                cur[v] = true;
                for &u in neighborhood(g, &sampled[l], v) {
                    cur[u as usize] = true;
                }
            }
        }
    }

    let mut h = vec![feats.clone()];
    let mut means = Vec::with_capacity(n_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let prev = &h[l];
        let mut mean = Array2::zeros(prev.raw_dim());
        for v in (0..n).filter(|&v| active[l + 1][v]) {
            let nb = neighborhood(g, &sampled[l], v);
            if nb.is_empty() {
                continue;
            }
            let mut row = mean.row_mut(v);
            for &u in nb {
                row += &prev.row(u as usize);
            }
            row /= nb.len() as f64;
        }
        let mut out = (prev.dot(&layer.w_self.t()) + mean.dot(&layer.w_neigh.t())).mapv(f64::tanh);
        for v in (0..n).filter(|&v| !active[l + 1][v]) {
            out.row_mut(v).fill(0.0);
        }
        means.push(mean);
        h.push(out);
    }
    Ok(SageTrace {
        h,
        means,
        sampled,
        active,
    })
}

/// Back-propagates `d_out` (gradient w.r.t. the final-layer rows) into `grads`.
pub fn sage_backward(g: &HeteroGraph, params: &SageParams, trace: &SageTrace, d_out: &Array2<f64>, grads: &mut SageParams) {
    let n = g.num_nodes();
    let mut d_h = d_out.clone();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let mut d_pre = &d_h * &trace.h[l + 1].mapv(|x| 1.0 - x * x);
        for v in (0..n).filter(|&v| !trace.active[l + 1][v]) {
            d_pre.row_mut(v).fill(0.0);
        }
        grads.layers[l].w_self += &d_pre.t().dot(&trace.h[l]);
        grads.layers[l].w_neigh += &d_pre.t().dot(&trace.means[l]);
        if l == 0 {
            break;
        }
        let mut d_prev = d_pre.dot(&layer.w_self);
        let d_mean = d_pre.dot(&layer.w_neigh);
        for v in (0..n).filter(|&v| trace.active[l + 1][v]) {
            let nb = neighborhood(g, &trace.sampled[l], v);
            if nb.is_empty() {
                continue;
            }
            let scale = 1.0 / nb.len() as f64;
            for &u in nb {
                d_prev.row_mut(u as usize).scaled_add(scale, &d_mean.row(v));
            }
        }
        d_h = d_prev;
    }
}

/// Final-layer embeddings of `nodes` (|nodes| × G), full neighbourhoods.
pub fn embed_nodes(g: &HeteroGraph, feats: &Array2<f64>, params: &SageParams, nodes: &[usize]) -> Result<Array2<f64>> {
    let mut unused = seeded_rng(&[0]);
    let trace = sage_forward(g, feats, params, Some(nodes), Neighborhood::Full, &mut unused)?;
    Ok(trace.output().select(Axis(0), nodes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SageTrainConfig {
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub teleport: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for SageTrainConfig {
    fn default() -> Self {
        SageTrainConfig {
            walk_length: 5,
            walks_per_node: 1,
            window: 2,
            negatives: 5,
            epochs: 10,
            lr: 0.01,
            batch_size: 512,
            teleport: DEFAULT_TELEPORT,
            optimizer: OptimizerKind::Adam,
            seed: 7,
        }
    }
}

/// A positive co-occurrence pair with its negative samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextPair {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Window co-occurrence pairs from one teleporting walk per start node and
/// repeat, each with `negatives` uniform negative nodes. Every walker has its
/// own rng stream, so the result does not depend on thread count.
pub fn collect_pairs(g: &HeteroGraph, cfg: &SageTrainConfig, epoch: usize) -> Result<Vec<ContextPair>> {
    let n = g.num_nodes();
    let per_node: Result<Vec<Vec<ContextPair>>> = (0..n * cfg.walks_per_node)
        .into_par_iter()
        .map(|w| {
            let start = w % n.max(1);
            let mut rng = seeded_rng(&[cfg.seed, epoch as u64, w as u64]);
            let walk = sample_walk(g, start, cfg.walk_length, cfg.teleport, &mut rng)?;
            let mut pairs = Vec::new();
            for i in 0..walk.len() {
                for j in i.saturating_sub(cfg.window)..(i + cfg.window + 1).min(walk.len()) {
                    if i == j || walk[i] == walk[j] {
                        continue;
                    }
                    let negatives = (0..cfg.negatives).map(|_| rng.random_range(0..n)).collect();
                    pairs.push(ContextPair {
                        anchor: walk[i],
                        positive: walk[j],
                        negatives,
                    });
                }
            }
            Ok(pairs)
        })
        .collect();
    Ok(per_node?.into_iter().flatten().collect())
}

/// Mean over `pairs` of `−log σ(z_u·z_v) − Σ_q log σ(−z_u·z_q)`, and its gradient.
pub fn unsupervised_loss(
    g: &HeteroGraph,
    feats: &Array2<f64>,
    params: &SageParams,
    pairs: &[ContextPair],
) -> Result<(f64, SageParams)> {
    let mut unused = seeded_rng(&[0]);
    let trace = sage_forward(g, feats, params, None, Neighborhood::Full, &mut unused)?;
    let z = trace.output();
    let mut d_z = Array2::<f64>::zeros(z.raw_dim());
    let mut loss = 0.0;
    let scale = 1.0 / pairs.len().max(1) as f64;
    for p in pairs {
        let (zu, zv) = (z.row(p.anchor), z.row(p.positive));
        let s = zu.dot(&zv);
        loss -= log_sigmoid(s);
        let coef = -(1.0 - sigmoid(s)) * scale;
        d_z.row_mut(p.anchor).scaled_add(coef, &zv);
        d_z.row_mut(p.positive).scaled_add(coef, &zu);
        for &q in &p.negatives {
            let zq = z.row(q);
            let sn = zu.dot(&zq);
            loss -= log_sigmoid(-sn);
            let coef = sigmoid(sn) * scale;
            d_z.row_mut(p.anchor).scaled_add(coef, &zq);
            d_z.row_mut(q).scaled_add(coef, &zu);
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::numeric(
            "unsupervised graph loss",
            format!("loss = {loss} over {} pairs", pairs.len()),
        ));
    }
    let mut grads = params.zeros_like();
    sage_backward(g, params, &trace, &d_z, &mut grads);
    Ok((loss, grads))
}

/// Trains `params` on walk co-occurrence; returns the updated params and the
/// mean loss of every epoch.
pub fn train_unsupervised(
    g: &HeteroGraph,
    feats: &Array2<f64>,
    params: &SageParams,
    cfg: &SageTrainConfig,
) -> Result<(SageParams, Vec<f64>)> {
    let mut params = params.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.num_params());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = collect_pairs(g, cfg, epoch)?;
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in pairs.chunks(cfg.batch_size.max(1)) {
            let (loss, grads) = unsupervised_loss(g, feats, &params, batch).map_err(|e| match e {
                Error::Numeric { component, detail } => Error::Numeric {
                    component,
                    detail: format!("{detail} (epoch {epoch}, batch {batches})"),
                },
                other => other,
            })?;
            opt.step(&mut params, &grads);
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("sage epoch {epoch}: loss {mean:.5} over {} pairs", pairs.len());
        history.push(mean);
    }
    Ok((params, history))
}

/// Node embeddings with an id index, as exported by `embed-graph`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbeddings {
    pub keys: Vec<(NodeKind, String)>,
    pub matrix: Array2<f64>,
    index: HashMap<(NodeKind, String), usize>,
}

const EMBEDDING_MAGIC: &[u8; 8] = b"GEMB\0\0\0\x01";

impl GraphEmbeddings {
    pub fn new(keys: Vec<(NodeKind, String)>, matrix: Array2<f64>) -> Result<Self> {
        if keys.len() != matrix.nrows() {
            return Err(Error::Dimension(format!(
                "{} ids for {} embedding rows",
                keys.len(),
                matrix.nrows()
            )));
        }
        let index = keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        Ok(GraphEmbeddings { keys, matrix, index })
    }

    pub fn from_graph(g: &HeteroGraph, matrix: Array2<f64>) -> Result<Self> {
        let keys = (0..g.num_nodes()).map(|v| (g.kind(v), g.id(v).to_string())).collect();
        Self::new(keys, matrix)
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Embedding row, or zeros for a node absent from the index.
    pub fn get(&self, kind: NodeKind, id: &str) -> Array1<f64> {
        match self.index.get(&(kind, id.to_string())) {
            Some(&i) => self.matrix.row(i).to_owned(),
            None => Array1::zeros(self.dim()),
        }
    }

    pub fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
        let base = prefix.to_string_lossy();
        (PathBuf::from(format!("{base}.bin")), PathBuf::from(format!("{base}.ids.tsv")))
    }

    /// `<prefix>.bin`: magic, rows and cols as u64 LE, then row-major f64 LE.
    /// `<prefix>.ids.tsv`: `kind \t id` per row.
    pub fn save(&self, prefix: &Path) -> Result<Vec<PathBuf>> {
        let (bin, ids) = Self::paths(prefix);
        let mut w = BufWriter::new(File::create(&bin).map_err(|e| Error::io(&bin, e))?);
        let mut bytes = Vec::with_capacity(24 + 8 * self.matrix.len());
        bytes.extend_from_slice(EMBEDDING_MAGIC);
        bytes.extend_from_slice(&(self.matrix.nrows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.matrix.ncols() as u64).to_le_bytes());
        for x in self.matrix.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(&bin, e))?;
        w.flush().map_err(|e| Error::io(&bin, e))?;

        let mut text = String::new();
        for (kind, id) in &self.keys {
            text.push_str(kind.as_str());
            text.push('\t');
            text.push_str(id);
            text.push('\n');
        }
        std::fs::write(&ids, text).map_err(|e| Error::io(&ids, e))?;
        Ok(vec![bin, ids])
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (bin, ids) = Self::paths(prefix);
        let mut bytes = Vec::new();
        File::open(&bin)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&bin, e))?;
        if bytes.len() < 24 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(Error::Checkpoint(format!("{} is not an embedding matrix", bin.display())));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if bytes.len() != 24 + 8 * rows * cols {
            return Err(Error::Checkpoint(format!("{} has a truncated payload", bin.display())));
        }
        let data = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let matrix = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        let text = std::fs::read_to_string(&ids).map_err(|e| Error::io(&ids, e))?;
        let mut keys = Vec::with_capacity(rows);
        for (i, line) in text.lines().enumerate() {
            let (kind, id) = line.split_once('\t').ok_or_else(|| Error::Ingest {
                path: ids.clone(),
                line: i + 1,
                message: "expected kind<TAB>id".into(),
            })?;
            let kind = match kind {
                "user" => NodeKind::User,
                "tweet" => NodeKind::Tweet,
                other => {
                    return Err(Error::Ingest {
                        path: ids.clone(),
                        line: i + 1,
                        message: format!("unknown node kind {other:?}"),
                    })
                }
            };
            keys.push((kind, id.to_string()));
        }
        Self::new(keys, matrix)
    }
}
