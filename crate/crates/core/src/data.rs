//! Temporal edge lists: ingestion, chronological splits, time-aware
//! neighbor lookup, negative sampling and a synthetic generator.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of one-hot degree buckets used when a file carries no features.
pub const DEGREE_BUCKETS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEvent {
    pub src: usize,
    pub dst: usize,
    /// Rescaled to `[0, 1]` over the graph's observation window.
    pub timestamp: f64,
    /// As read from the input.
    pub raw_timestamp: f64,
}

/// Where node features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Feature columns of the edge file, attributed to the row's source node.
    Columns,
    /// One-hot bucket of `floor(log2(degree + 1))`, capped at 7.
    Degree,
    /// One-hot node identity.
    Identity,
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columns" => Ok(Self::Columns),
            "degree" => Ok(Self::Degree),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown feature source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    n_nodes: usize,
    n_features: usize,
    features: Vec<f64>,
    feature_source: FeatureSource,
    events: Vec<EdgeEvent>,
    labels: Option<Vec<Option<usize>>>,
    n_classes: usize,
    /// Per node: `(timestamp, neighbor)` of incident events in time order.
    incidence: Vec<Vec<(f64, usize)>>,
}

impl TemporalGraph {
    /// Builds a graph from raw `(src, dst, timestamp)` triples. Events are
    /// stable-sorted by timestamp and timestamps rescaled to `[0, 1]`.
    pub fn from_raw(
        n_nodes: usize,
        raw: Vec<(usize, usize, f64)>,
        features: Option<(usize, Vec<f64>)>,
        feature_source: FeatureSource,
    ) -> Result<Self> {
        for (i, &(s, d, t)) in raw.iter().enumerate() {
            if s >= n_nodes || d >= n_nodes {
                return Err(Error::Input(format!("event {i}: node id out of range ({s}, {d})")));
            }
            if !t.is_finite() {
                return Err(Error::Input(format!("event {i}: non-finite timestamp")));
            }
        }
        let mut raw = raw;
        raw.sort_by(|a, b| a.2.total_cmp(&b.2));
        let (lo, hi) = match (raw.first(), raw.last()) {
            (Some(a), Some(b)) => (a.2, b.2),
            _ => (0.0, 0.0),
        };
        let span = hi - lo;
        let events: Vec<EdgeEvent> = raw
            .iter()
            .map(|&(src, dst, t)| EdgeEvent {
                src,
                dst,
                timestamp: if span > 0.0 { (t - lo) / span } else { 0.0 },
                raw_timestamp: t,
            })
            .collect();

        let mut incidence = vec![Vec::new(); n_nodes];
        for e in &events {
            incidence[e.src].push((e.timestamp, e.dst));
            if e.dst != e.src {
                incidence[e.dst].push((e.timestamp, e.src));
            }
        }

        let (n_features, features) = match (feature_source, features) {
            (FeatureSource::Columns, Some((f, data))) => {
                if data.len() != f * n_nodes {
                    return Err(Error::Dimension { expected: f * n_nodes, got: data.len() });
                }
                (f, data)
            }
            (FeatureSource::Columns, None) => {
                return Err(Error::Config("column features requested but none supplied".into()))
            }
            (FeatureSource::Degree, _) => (DEGREE_BUCKETS, degree_features(&incidence)),
            (FeatureSource::Identity, _) => {
                let mut data = vec![0.0; n_nodes * n_nodes];
                for i in 0..n_nodes {
                    data[i * n_nodes + i] = 1.0;
                }
                (n_nodes, data)
            }
        };

        Ok(Self {
            n_nodes,
            n_features,
            features,
            feature_source,
            events,
            labels: None,
            n_classes: 0,
            incidence,
        })
    }

    /// Attaches per-node labels; class ids are densified in sorted order.
    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(Error::Dimension { expected: self.n_nodes, got: labels.len() });
        }
        let mut classes: Vec<usize> = labels.iter().flatten().copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let index: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        self.labels = Some(labels.into_iter().map(|l| l.map(|c| index[&c])).collect());
        self.n_classes = classes.len();
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_source(&self) -> FeatureSource {
        self.feature_source
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node * self.n_features..(node + 1) * self.n_features]
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l[node])
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of incident events of `node` (undirected).
    pub fn degree(&self, node: usize) -> usize {
        self.incidence[node].len()
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.n_nodes {
            Ok(())
        } else {
            Err(Error::Input(format!("unknown node {node} (graph has {} nodes)", self.n_nodes)))
        }
    }

    /// Events incident to `node` strictly before `t`, most recent `max_n`,
    /// returned in chronological order.
    pub fn time_aware_neighbors(&self, node: usize, t: f64, max_n: usize) -> Result<TimeAwareNeighborhood> {
        self.check_node(node)?;
        if !t.is_finite() {
            return Err(Error::Input("query time must be finite".into()));
        }
        let inc = &self.incidence[node];
        let end = inc.partition_point(|(ts, _)| *ts < t);
        let start = end.saturating_sub(max_n);
        Ok(TimeAwareNeighborhood {
            target: node,
            query_time: t,
            neighbors: inc[start..end].iter().map(|&(ts, v)| (v, ts)).collect(),
        })
    }
}

fn degree_features(incidence: &[Vec<(f64, usize)>]) -> Vec<f64> {
    let mut data = vec![0.0; incidence.len() * DEGREE_BUCKETS];
    for (i, inc) in incidence.iter().enumerate() {
        let b = ((inc.len() as f64 + 1.0).log2().floor() as usize).min(DEGREE_BUCKETS - 1);
        data[i * DEGREE_BUCKETS + b] = 1.0;
    }
    data
}

/// Events incident to a target node strictly before a query time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAwareNeighborhood {
    pub target: usize,
    pub query_time: f64,
    /// `(neighbor node, event time)`.
    pub neighbors: Vec<(usize, f64)>,
}

impl TimeAwareNeighborhood {
    pub fn new(target: usize, query_time: f64, neighbors: Vec<(usize, f64)>) -> Result<Self> {
        if let Some((_, t)) = neighbors.iter().find(|(_, t)| !(*t < query_time)) {
            return Err(Error::Contract(format!("neighbor event at {t} is not before query time {query_time}")));
        }
        Ok(Self { target, query_time, neighbors })
    }
}

/// How to interpret an edge file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatConfig {
    /// `None` selects columns when present, degree buckets otherwise.
    pub features: Option<FeatureSource>,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self { features: None }
    }
}

/// Reads the canonical CSV `src,dst,timestamp[,f0,f1,...]`.
pub fn load_edge_list(path: &Path, cfg: FormatConfig) -> Result<TemporalGraph> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_edge_list(file, cfg)
}

pub fn parse_edge_list<R: Read>(reader: R, cfg: FormatConfig) -> Result<TemporalGraph> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if header.len() < 3 {
        return Err(Error::Parse { line: 1, msg: format!("expected at least 3 header columns, got {}", header.len()) });
    }
    let n_cols = header.len();
    let f = n_cols - 3;
    let mut raw = Vec::new();
    let mut row_features: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != n_cols {
            return Err(Error::Parse { line, msg: format!("expected {n_cols} columns, got {}", rec.len()) });
        }
        let id = |i: usize| -> Result<usize> {
            rec[i].trim().parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid node id '{}'", &rec[i]),
            })
        };
        let num = |i: usize| -> Result<f64> {
            let v = rec[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric value '{}' in column '{}'", &rec[i], &header[i]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line, msg: format!("non-finite value in column '{}'", &header[i]) })
            }
        };
        let (s, d, t) = (id(0)?, id(1)?, num(2)?);
        if f > 0 {
            row_features.push((s, (3..n_cols).map(num).collect::<Result<_>>()?));
        }
        raw.push((s, d, t));
    }
    let n_nodes = raw.iter().map(|&(s, d, _)| s.max(d) + 1).max().unwrap_or(0);
    let source = cfg.features.unwrap_or(if f > 0 { FeatureSource::Columns } else { FeatureSource::Degree });
    let features = if source == FeatureSource::Columns {
        if f == 0 {
            return Err(Error::Config("column features requested but the file has none".into()));
        }
        let mut data = vec![0.0; n_nodes * f];
        for (s, v) in row_features {
            data[s * f..(s + 1) * f].copy_from_slice(&v);
        }
        Some((f, data))
    } else {
        None
    };
    TemporalGraph::from_raw(n_nodes, raw, features, source)
}

/// Writes the canonical CSV. Feature columns are written only when the
/// graph's features came from columns; each row carries its source node's
/// features.
pub fn write_edge_list<W: Write>(g: &TemporalGraph, mut out: W) -> Result<()> {
    let with_features = g.feature_source == FeatureSource::Columns;
    let mut header = String::from("src,dst,timestamp");
    if with_features {
        for i in 0..g.n_features {
            header.push_str(&format!(",f{i}"));
        }
    }
    writeln!(out, "{header}")?;
    for e in &g.events {
        write!(out, "{},{},{}", e.src, e.dst, e.raw_timestamp)?;
        if with_features {
            for v in g.feature(e.src) {
                write!(out, ",{v}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_edge_list(g: &TemporalGraph, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_edge_list(g, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a `node,label` CSV into per-node labels for `n_nodes` nodes.
pub fn parse_labels<R: Read>(reader: R, n_nodes: usize) -> Result<Vec<Option<usize>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let mut labels = vec![None; n_nodes];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::Parse { line, msg: format!("expected 2 columns, got {}", rec.len()) });
        }
        let node: usize = rec[0].trim().parse().map_err(|_| Error::Parse { line, msg: "invalid node id".into() })?;
        let label: usize = rec[1].trim().parse().map_err(|_| Error::Parse { line, msg: "invalid label".into() })?;
        if node >= n_nodes {
            return Err(Error::Parse { line, msg: format!("node {node} not in graph") });
        }
        labels[node] = Some(label);
    }
    Ok(labels)
}

pub fn load_labels(path: &Path, n_nodes: usize) -> Result<Vec<Option<usize>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_labels(file, n_nodes)
}

pub fn write_labels<W: Write>(labels: &[Option<usize>], mut out: W) -> Result<()> {
    writeln!(out, "node,label")?;
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            writeln!(out, "{i},{l}")?;
        }
    }
    Ok(())
}

/// Contiguous chronological event ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
    /// Nodes that appear in the test range and nowhere before it.
    pub inductive: Vec<bool>,
}

impl Split {
    pub fn inductive_nodes(&self) -> Vec<usize> {
        self.inductive.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }
}

/// Splits events at `floor(f_train·m)` and `floor((f_train+f_val)·m)`.
pub fn chronological_split(g: &TemporalGraph, fractions: (f64, f64, f64)) -> Result<Split> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|v| !(*v >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {fractions:?}")));
    }
    let m = g.events.len();
    if m < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 events to split, got {m}")));
    }
    let b1 = ((a * m as f64) + 1e-9).floor() as usize;
    let b2 = (((a + b) * m as f64) + 1e-9).floor().min(m as f64) as usize;
    let mut seen = vec![false; g.n_nodes];
    for e in &g.events[..b2] {
        seen[e.src] = true;
        seen[e.dst] = true;
    }
    let mut inductive = vec![false; g.n_nodes];
    for e in &g.events[b2..] {
        for v in [e.src, e.dst] {
            if !seen[v] {
                inductive[v] = true;
            }
        }
    }
    Ok(Split { train: 0..b1, val: b1..b2, test: b2..m, inductive })
}

/// Uniform negative destinations with rejection against a positive pair set.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    positives: HashSet<(usize, usize)>,
    n_nodes: usize,
}

impl NegativeSampler {
    /// Positive pairs are those among `events[..upto]`, unordered.
    pub fn new(g: &TemporalGraph, upto: usize) -> Self {
        let positives = g.events[..upto.min(g.events.len())]
            .iter()
            .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
            .collect();
        Self { positives, n_nodes: g.n_nodes }
    }

    pub fn is_positive(&self, u: usize, v: usize) -> bool {
        self.positives.contains(&(u.min(v), u.max(v)))
    }

    /// A destination `v ≠ src` with `(src, v)` not a known positive; gives up
    /// on rejection after 100 tries (dense neighborhoods).
    pub fn sample<R: Rng + ?Sized>(&self, src: usize, rng: &mut R) -> usize {
        let mut last = src;
        for _ in 0..100 {
            let v = rng.random_range(0..self.n_nodes);
            if v == src {
                continue;
            }
            last = v;
            if !self.is_positive(src, v) {
                return v;
            }
        }
        if last == src {
            (src + 1) % self.n_nodes
        } else {
            last
        }
    }
}

/// Temporal stochastic block model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub communities: usize,
    pub nodes: usize,
    pub events: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    pub features: FeatureSource,
}

impl SyntheticConfig {
    pub fn new(communities: usize, nodes: usize, events: usize, p_in: f64, p_out: f64, seed: u64) -> Self {
        Self { communities, nodes, events, p_in, p_out, seed, features: FeatureSource::Identity }
    }
}

/// Node `i` belongs to community `i mod k`. Each event picks a uniform
/// source and a destination community with odds `p_in` (own) to `p_out`
/// (each other), then a uniform destination `≠ source` within it.
/// Timestamps are uniform on `[0, 1]`. Labels are community ids.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<TemporalGraph> {
    let k = cfg.communities;
    if k == 0 || cfg.nodes < 2 * k {
        return Err(Error::Config(format!(
            "need at least two nodes per community ({} nodes, {k} communities)",
            cfg.nodes
        )));
    }
    if !(cfg.p_in > cfg.p_out && cfg.p_out >= 0.0) {
        return Err(Error::Config(format!("need p_in > p_out >= 0, got {} and {}", cfg.p_in, cfg.p_out)));
    }
    if cfg.features == FeatureSource::Columns {
        return Err(Error::Config("synthetic graphs have no feature columns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let members: Vec<Vec<usize>> = (0..k).map(|c| (c..cfg.nodes).step_by(k).collect()).collect();
    let total = cfg.p_in + cfg.p_out * (k - 1) as f64;
    let mut raw = Vec::with_capacity(cfg.events);
    for _ in 0..cfg.events {
        let src = rng.random_range(0..cfg.nodes);
        let own = src % k;
        let mut u = rng.random::<f64>() * total;
        let mut community = own;
        if u >= cfg.p_in {
            u -= cfg.p_in;
            let j = ((u / cfg.p_out) as usize).min(k - 2);
            community = (own + 1 + j) % k;
        }
        let dst = loop {
            let v = *members[community].choose(&mut rng).expect("communities are non-empty");
            if v != src {
                break v;
            }
        };
        let t: f64 = rng.random();
        raw.push((src, dst, t));
    }
    let labels = (0..cfg.nodes).map(|i| Some(i % k)).collect();
    TemporalGraph::from_raw(cfg.nodes, raw, None, cfg.features)?.with_labels(labels)
}

/// Converts an interaction CSV with arbitrary string node keys (e.g. an
/// author/paper/year export) into canonical form. `columns` names the
/// source, destination and time columns. Node ids are assigned in order of
/// first appearance; the returned vector maps new id → original key.
pub fn convert_interactions<R: Read>(reader: R, columns: (&str, &str, &str)) -> Result<(TemporalGraph, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column '{name}'") })
    };
    let (cs, cd, ct) = (find(columns.0)?, find(columns.1)?, find(columns.2)?);
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut intern = |k: &str| -> usize {
        if let Some(&i) = ids.get(k) {
            return i;
        }
        let i = keys.len();
        keys.push(k.to_string());
        ids.insert(k.to_string(), i);
        i
    };
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let need = cs.max(cd).max(ct) + 1;
        if rec.len() < need {
            return Err(Error::Parse { line, msg: format!("expected at least {need} columns, got {}", rec.len()) });
        }
        let t: f64 = rec[ct]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("non-numeric time '{}'", &rec[ct]) })?;
        let s = intern(rec[cs].trim());
        let d = intern(rec[cd].trim());
        raw.push((s, d, t));
    }
    let n = keys.len();
    Ok((TemporalGraph::from_raw(n, raw, None, FeatureSource::Degree)?, keys))
}
