//! Partitioned origin/destination networks.
//!
//! A network is a sparse map from `(origin, dest)` zone pairs to integer
//! commuter counts. Origins live on the usual-residence side (SA1 or SA2),
//! destinations on the place-of-work side (DZN or SA2). Both fine levels nest
//! exactly into the coarse SA2 level through a [`PartitionHierarchy`].
//!
//! All maps are ordered by zone code so that every observable iteration order
//! is deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Commuter count carried by an edge.
pub type Weight = u64;

/// Level of a zone within the statistical-area hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    /// SA1, the fine usual-residence partition.
    FineOrigin,
    /// DZN, the fine place-of-work partition.
    FineDest,
    /// SA2, shared by both sides.
    Coarse,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::FineOrigin => "SA1",
            Level::FineDest => "DZN",
            Level::Coarse => "SA2",
        })
    }
}

/// Opaque zone identifier. Compared byte-wise; never parsed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneCode(String);

impl ZoneCode {
    pub fn new(code: impl Into<String>) -> Self {
        ZoneCode(code.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ZoneCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ZoneCode {
    fn from(s: &str) -> Self {
        ZoneCode(s.to_owned())
    }
}

impl From<String> for ZoneCode {
    fn from(s: String) -> Self {
        ZoneCode(s)
    }
}

/// An `(origin, dest)` pair identifying an edge.
pub type Pair = (ZoneCode, ZoneCode);

/// Child→parent correspondences for both fine levels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartitionHierarchy {
    sa1_to_sa2: BTreeMap<ZoneCode, ZoneCode>,
    dzn_to_sa2: BTreeMap<ZoneCode, ZoneCode>,
}

impl PartitionHierarchy {
    pub fn new(
        sa1_to_sa2: BTreeMap<ZoneCode, ZoneCode>,
        dzn_to_sa2: BTreeMap<ZoneCode, ZoneCode>,
    ) -> Self {
        PartitionHierarchy {
            sa1_to_sa2,
            dzn_to_sa2,
        }
    }

    pub fn sa1_to_sa2(&self) -> &BTreeMap<ZoneCode, ZoneCode> {
        &self.sa1_to_sa2
    }

    pub fn dzn_to_sa2(&self) -> &BTreeMap<ZoneCode, ZoneCode> {
        &self.dzn_to_sa2
    }

    /// Parent SA2 of `code`. Coarse codes are their own parent.
    pub fn parent<'a>(&'a self, level: Level, code: &'a ZoneCode) -> Option<&'a ZoneCode> {
        match level {
            Level::FineOrigin => self.sa1_to_sa2.get(code),
            Level::FineDest => self.dzn_to_sa2.get(code),
            Level::Coarse => Some(code),
        }
    }

    pub fn require_parent<'a>(&'a self, level: Level, code: &'a ZoneCode) -> Result<&'a ZoneCode> {
        self.parent(level, code).ok_or_else(|| Error::UnmappedZone {
            code: code.to_string(),
            level,
        })
    }

    /// Inverse map for one fine level: SA2 → sorted children.
    pub fn children(&self, level: Level) -> BTreeMap<ZoneCode, Vec<ZoneCode>> {
        let map = match level {
            Level::FineOrigin => &self.sa1_to_sa2,
            Level::FineDest => &self.dzn_to_sa2,
            Level::Coarse => return BTreeMap::new(),
        };
        let mut out: BTreeMap<ZoneCode, Vec<ZoneCode>> = BTreeMap::new();
        for (child, parent) in map {
            out.entry(parent.clone()).or_default().push(child.clone());
        }
        out
    }

    /// All SA2 codes that have at least one child on either side.
    pub fn coarse_codes(&self) -> BTreeSet<ZoneCode> {
        self.sa1_to_sa2
            .values()
            .chain(self.dzn_to_sa2.values())
            .cloned()
            .collect()
    }
}

/// Set of `(origin, dest)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSet {
    pairs: BTreeSet<Pair>,
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pair: Pair) -> bool {
        self.pairs.insert(pair)
    }

    pub fn contains(&self, origin: &ZoneCode, dest: &ZoneCode) -> bool {
        // BTreeSet<(A, B)> cannot be probed with borrowed halves, so clone.
        self.pairs.contains(&(origin.clone(), dest.clone()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter()
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            pairs: self.pairs.union(&other.pairs).cloned().collect(),
        }
    }
}

impl FromIterator<Pair> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = Pair>>(iter: I) -> Self {
        EdgeSet {
            pairs: iter.into_iter().collect(),
        }
    }
}

/// Directed weighted bipartite network between two partition levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ODNetwork {
    origin_level: Level,
    dest_level: Level,
    edges: BTreeMap<Pair, Weight>,
}

impl ODNetwork {
    pub fn new(origin_level: Level, dest_level: Level) -> Self {
        ODNetwork {
            origin_level,
            dest_level,
            edges: BTreeMap::new(),
        }
    }

    /// Builds a network from `(origin, dest, weight)` triples. Zero weights
    /// and repeated pairs are rejected.
    pub fn from_edges<I, O, D>(origin_level: Level, dest_level: Level, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (O, D, Weight)>,
        O: Into<ZoneCode>,
        D: Into<ZoneCode>,
    {
        let mut net = ODNetwork::new(origin_level, dest_level);
        for (o, d, w) in edges {
            let (o, d) = (o.into(), d.into());
            if w == 0 {
                return Err(Error::ZeroWeight {
                    origin: o.to_string(),
                    dest: d.to_string(),
                });
            }
            if net.edges.insert((o.clone(), d.clone()), w).is_some() {
                return Err(Error::DuplicateEdge {
                    path: "<memory>".into(),
                    line: 0,
                    origin: o.to_string(),
                    dest: d.to_string(),
                });
            }
        }
        Ok(net)
    }

    pub fn origin_level(&self) -> Level {
        self.origin_level
    }

    pub fn dest_level(&self) -> Level {
        self.dest_level
    }

    /// Adds `weight` to the pair, creating the edge if absent. Zero is a no-op.
    pub fn add_weight(&mut self, origin: ZoneCode, dest: ZoneCode, weight: Weight) {
        if weight == 0 {
            return;
        }
        *self.edges.entry((origin, dest)).or_insert(0) += weight;
    }

    /// Sets the pair's weight; a weight of zero removes the edge.
    pub fn set_weight(&mut self, origin: ZoneCode, dest: ZoneCode, weight: Weight) {
        if weight == 0 {
            self.edges.remove(&(origin, dest));
        } else {
            self.edges.insert((origin, dest), weight);
        }
    }

    pub fn weight(&self, origin: &ZoneCode, dest: &ZoneCode) -> Option<Weight> {
        self.edges.get(&(origin.clone(), dest.clone())).copied()
    }

    pub fn weight_of(&self, pair: &Pair) -> Option<Weight> {
        self.edges.get(pair).copied()
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.edges.contains_key(pair)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ZoneCode, &ZoneCode, Weight)> {
        self.edges.iter().map(|((o, d), w)| (o, d, *w))
    }

    pub fn edge_map(&self) -> &BTreeMap<Pair, Weight> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_commuters(&self) -> Weight {
        self.edges.values().sum()
    }

    pub fn key_set(&self) -> EdgeSet {
        self.edges.keys().cloned().collect()
    }

    pub fn origins(&self) -> BTreeSet<&ZoneCode> {
        self.edges.keys().map(|(o, _)| o).collect()
    }

    pub fn dests(&self) -> BTreeSet<&ZoneCode> {
        self.edges.keys().map(|(_, d)| d).collect()
    }

    /// Keeps only edges whose pair is in `set`.
    pub fn restrict(&self, set: &EdgeSet) -> ODNetwork {
        ODNetwork {
            origin_level: self.origin_level,
            dest_level: self.dest_level,
            edges: self
                .edges
                .iter()
                .filter(|(k, _)| set.pairs.contains(*k))
                .map(|(k, w)| (k.clone(), *w))
                .collect(),
        }
    }

    /// Keeps only edges for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&ZoneCode, &ZoneCode, Weight) -> bool) -> ODNetwork {
        ODNetwork {
            origin_level: self.origin_level,
            dest_level: self.dest_level,
            edges: self
                .edges
                .iter()
                .filter(|((o, d), w)| keep(o, d, **w))
                .map(|(k, w)| (k.clone(), *w))
                .collect(),
        }
    }

    fn check_levels(&self, other: &ODNetwork) -> Result<()> {
        if self.origin_level != other.origin_level || self.dest_level != other.dest_level {
            return Err(Error::LevelMismatch {
                left: format!("{}->{}", self.origin_level, self.dest_level),
                right: format!("{}->{}", other.origin_level, other.dest_level),
            });
        }
        Ok(())
    }
}

fn coarsen(
    net: &ODNetwork,
    hierarchy: &PartitionHierarchy,
    origins: bool,
    dests: bool,
) -> Result<ODNetwork> {
    let origin_level = if origins { Level::Coarse } else { net.origin_level };
    let dest_level = if dests { Level::Coarse } else { net.dest_level };
    let mut out = ODNetwork::new(origin_level, dest_level);
    for (o, d, w) in net.edges() {
        let o = if origins {
            hierarchy.require_parent(net.origin_level, o)?
        } else {
            o
        };
        let d = if dests {
            hierarchy.require_parent(net.dest_level, d)?
        } else {
            d
        };
        out.add_weight(o.clone(), d.clone(), w);
    }
    Ok(out)
}

/// Amalgamates both sides of `net` into SA2 partitions.
pub fn aggregate(net: &ODNetwork, hierarchy: &PartitionHierarchy) -> Result<ODNetwork> {
    coarsen(net, hierarchy, true, true)
}

/// Amalgamates only the origin side, e.g. SA1→DZN into SA2→DZN.
pub fn aggregate_origins(net: &ODNetwork, hierarchy: &PartitionHierarchy) -> Result<ODNetwork> {
    coarsen(net, hierarchy, true, false)
}

/// Pairs present in both networks.
pub fn edge_intersection(a: &ODNetwork, b: &ODNetwork) -> Result<EdgeSet> {
    a.check_levels(b)?;
    let (small, large) = if a.edges.len() <= b.edges.len() {
        (a, b)
    } else {
        (b, a)
    };
    Ok(small
        .edges
        .keys()
        .filter(|k| large.edges.contains_key(*k))
        .cloned()
        .collect())
}

/// Pairs of `b` that are absent from `a`.
pub fn edge_complement(b: &ODNetwork, a: &ODNetwork) -> Result<EdgeSet> {
    b.check_levels(a)?;
    Ok(b.edges
        .keys()
        .filter(|k| !a.edges.contains_key(*k))
        .cloned()
        .collect())
}

/// Weights of `net` on each pair of `set`, in set order.
pub fn weights_on(set: &EdgeSet, net: &ODNetwork) -> Result<Vec<Weight>> {
    set.iter()
        .map(|pair| {
            net.weight_of(pair).ok_or_else(|| Error::MissingPair {
                origin: pair.0.to_string(),
                dest: pair.1.to_string(),
            })
        })
        .collect()
}

/// Element-wise `w(set, b) - w(set, a)`.
pub fn weight_discrepancies(set: &EdgeSet, b: &ODNetwork, a: &ODNetwork) -> Result<Vec<i64>> {
    let wb = weights_on(set, b)?;
    let wa = weights_on(set, a)?;
    Ok(wb
        .into_iter()
        .zip(wa)
        .map(|(x, y)| x as i64 - y as i64)
        .collect())
}

pub fn out_strengths(net: &ODNetwork) -> BTreeMap<ZoneCode, Weight> {
    let mut out = BTreeMap::new();
    for (o, _, w) in net.edges() {
        *out.entry(o.clone()).or_insert(0) += w;
    }
    out
}

pub fn in_strengths(net: &ODNetwork) -> BTreeMap<ZoneCode, Weight> {
    let mut out = BTreeMap::new();
    for (_, d, w) in net.edges() {
        *out.entry(d.clone()).or_insert(0) += w;
    }
    out
}
