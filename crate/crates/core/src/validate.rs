//! Comparison metrics between coarse networks and the validation report.
//!
//! Coarse SA2→SA2 networks are read as graphs over SA2 nodes, with the
//! residence and workplace copies of a code identified.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::error::{Error, Result};
use crate::network::{
    aggregate, edge_complement, edge_intersection, in_strengths, out_strengths, EdgeSet, Level,
    ODNetwork, PartitionHierarchy, Weight, ZoneCode,
};

/// Row and column node sets of the conceptual dense adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Universe {
    rows: BTreeSet<ZoneCode>,
    cols: BTreeSet<ZoneCode>,
}

impl Universe {
    /// Union of the nodes of `nets`. When every network is SA2→SA2 the
    /// matrix is square over all codes seen on either side.
    pub fn from_networks(nets: &[&ODNetwork]) -> Self {
        let square = nets
            .iter()
            .all(|n| n.origin_level() == n.dest_level());
        let mut rows = BTreeSet::new();
        let mut cols = BTreeSet::new();
        for n in nets {
            for (o, d, _) in n.edges() {
                rows.insert(o.clone());
                cols.insert(d.clone());
            }
        }
        if square {
            rows.extend(cols.iter().cloned());
            cols = rows.clone();
        }
        Universe { rows, cols }
    }

    pub fn cell_count(&self) -> u128 {
        self.rows.len() as u128 * self.cols.len() as u128
    }

    pub fn rows(&self) -> &BTreeSet<ZoneCode> {
        &self.rows
    }

    pub fn cols(&self) -> &BTreeSet<ZoneCode> {
        &self.cols
    }
}

/// Pearson correlation between the dense adjacency matrices of `a` and `b`
/// over `universe`, computed from the non-zero cells only. Sums are exact
/// integers; only the final ratio is floating point.
pub fn corr2d_in(a: &ODNetwork, b: &ODNetwork, universe: &Universe) -> Result<f64> {
    if a.origin_level() != b.origin_level() || a.dest_level() != b.dest_level() {
        return Err(Error::LevelMismatch {
            left: format!("{}->{}", a.origin_level(), a.dest_level()),
            right: format!("{}->{}", b.origin_level(), b.dest_level()),
        });
    }
    let n = universe.cell_count() as i128;
    let sum = |net: &ODNetwork| net.edges().map(|(_, _, w)| w as i128).sum::<i128>();
    let sum_sq = |net: &ODNetwork| net.edges().map(|(_, _, w)| (w as i128) * (w as i128)).sum::<i128>();
    let (sa, sb) = (sum(a), sum(b));
    let (saa, sbb) = (sum_sq(a), sum_sq(b));
    let sab: i128 = a
        .edges()
        .filter_map(|(o, d, wa)| b.weight(o, d).map(|wb| wa as i128 * wb as i128))
        .sum();
    let var_a = n * saa - sa * sa;
    let var_b = n * sbb - sb * sb;
    if var_a <= 0 || var_b <= 0 {
        return Err(Error::UndefinedCorrelation("constant adjacency matrix"));
    }
    let cov = n * sab - sa * sb;
    Ok(cov as f64 / ((var_a as f64).sqrt() * (var_b as f64).sqrt()))
}

/// [`corr2d_in`] over the union of the two networks' nodes.
pub fn corr2d(a: &ODNetwork, b: &ODNetwork) -> Result<f64> {
    corr2d_in(a, b, &Universe::from_networks(&[a, b]))
}

/// Mean squared weight difference over `set`.
pub fn mse_overlap(set: &EdgeSet, b: &ODNetwork, other: &ODNetwork) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("overlap edge set"));
    }
    let wb = crate::network::weights_on(set, b)?;
    let wo = crate::network::weights_on(set, other)?;
    let total: u128 = wb
        .iter()
        .zip(&wo)
        .map(|(x, y)| {
            let d = x.abs_diff(*y) as u128;
            d * d
        })
        .sum();
    Ok(total as f64 / set.len() as f64)
}

/// How direction is handled when looking for triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusteringMode {
    /// Undirected graph with `w(u,v) = max(w(u→v), w(v→u))`.
    #[default]
    SymmetrizeMax,
    /// Directed generalization counting every oriented triangle, normalized
    /// by the total and reciprocal degrees.
    Directed,
}

/// Node codes on either side, self-loop-free neighbour maps in both
/// directions, and the maximum edge weight of the network.
struct NodeGraph {
    nodes: Vec<ZoneCode>,
    out: Vec<BTreeMap<usize, f64>>,
    max_weight: Weight,
}

impl NodeGraph {
    fn new(net: &ODNetwork) -> Self {
        let codes: BTreeSet<&ZoneCode> = net.edges().flat_map(|(o, d, _)| [o, d]).collect();
        let nodes: Vec<ZoneCode> = codes.into_iter().cloned().collect();
        let index: BTreeMap<&ZoneCode, usize> = nodes.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let mut out = vec![BTreeMap::new(); nodes.len()];
        let mut max_weight = 0;
        for (o, d, w) in net.edges() {
            max_weight = max_weight.max(w);
            let (i, j) = (index[o], index[d]);
            if i != j {
                out[i].insert(j, w as f64);
            }
        }
        NodeGraph {
            nodes,
            out,
            max_weight,
        }
    }
}

/// Average weighted clustering coefficient; weights are scaled by the
/// network's largest weight and nodes of degree below two count as zero.
pub fn weighted_clustering(net: &ODNetwork, mode: ClusteringMode) -> Result<f64> {
    if net.is_empty() {
        return Err(Error::Empty("network"));
    }
    let g = NodeGraph::new(net);
    let n = g.nodes.len();
    let max = g.max_weight as f64;
    let mut total = 0.0;
    match mode {
        ClusteringMode::SymmetrizeMax => {
            let mut und: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
            for (i, row) in g.out.iter().enumerate() {
                for (&j, &w) in row {
                    let hat = w / max;
                    for (a, b) in [(i, j), (j, i)] {
                        let e = und[a].entry(b).or_insert(0.0);
                        *e = e.max(hat);
                    }
                }
            }
            for nbrs in &und {
                let k = nbrs.len();
                if k < 2 {
                    continue;
                }
                let list: Vec<(usize, f64)> = nbrs.iter().map(|(j, w)| (*j, *w)).collect();
                let mut sum = 0.0;
                for (p, &(j, wij)) in list.iter().enumerate() {
                    for &(kk, wki) in &list[p + 1..] {
                        if let Some(&wjk) = und[j].get(&kk) {
                            sum += (wij * wjk * wki).cbrt();
                        }
                    }
                }
                total += 2.0 * sum / (k * (k - 1)) as f64;
            }
        }
        ClusteringMode::Directed => {
            // s_ij = w_ij^(1/3) + w_ji^(1/3), symmetric.
            let mut sym: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
            let mut in_deg = vec![0usize; n];
            for (i, row) in g.out.iter().enumerate() {
                for (&j, &w) in row {
                    let c = (w / max).cbrt();
                    *sym[i].entry(j).or_insert(0.0) += c;
                    *sym[j].entry(i).or_insert(0.0) += c;
                    in_deg[j] += 1;
                }
            }
            for i in 0..n {
                let d_tot = g.out[i].len() + in_deg[i];
                let d_recip = g.out[i].keys().filter(|j| g.out[**j].contains_key(&i)).count();
                let denom = 2 * (d_tot * d_tot.saturating_sub(1)) as i64 - 4 * d_recip as i64;
                if denom <= 0 {
                    continue;
                }
                let list: Vec<(usize, f64)> = sym[i].iter().map(|(j, s)| (*j, *s)).collect();
                let mut sum = 0.0;
                for (p, &(j, sij)) in list.iter().enumerate() {
                    for &(k, ski) in &list[p + 1..] {
                        if let Some(&sjk) = sym[j].get(&k) {
                            sum += sij * sjk * ski;
                        }
                    }
                }
                total += 2.0 * sum / denom as f64;
            }
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    /// Mean shortest-path length over reachable ordered pairs.
    pub mean: f64,
    pub reachable_pairs: u64,
    /// All ordered pairs of distinct nodes.
    pub ordered_pairs: u64,
}

impl PathStats {
    pub fn reachable_fraction(&self) -> f64 {
        if self.ordered_pairs == 0 {
            0.0
        } else {
            self.reachable_pairs as f64 / self.ordered_pairs as f64
        }
    }
}

/// Mean directed shortest-path length with edge length `1 / w`. Unreachable
/// pairs are left out of the mean and reported through the pair counts.
pub fn avg_shortest_path(net: &ODNetwork) -> Result<PathStats> {
    if net.is_empty() {
        return Err(Error::Empty("network"));
    }
    let g = NodeGraph::new(net);
    let n = g.nodes.len();
    let mut graph: DiGraph<(), f64> = DiGraph::with_capacity(n, net.edge_count());
    let ids: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, row) in g.out.iter().enumerate() {
        for (&j, &w) in row {
            graph.add_edge(ids[i], ids[j], 1.0 / w);
        }
    }
    let mut sum = 0.0;
    let mut reachable = 0u64;
    let mut dist = vec![f64::NAN; n];
    for &src in &ids {
        dist.iter_mut().for_each(|d| *d = f64::NAN);
        for (node, d) in dijkstra(&graph, src, None, |e| *e.weight()) {
            dist[node.index()] = d;
        }
        // Sum in node order so the result does not depend on hash order.
        for (j, d) in dist.iter().enumerate() {
            if j != src.index() && !d.is_nan() {
                sum += d;
                reachable += 1;
            }
        }
    }
    let ordered_pairs = (n * n.saturating_sub(1)) as u64;
    Ok(PathStats {
        mean: if reachable == 0 { 0.0 } else { sum / reachable as f64 },
        reachable_pairs: reachable,
        ordered_pairs,
    })
}

/// Edge counts per weight bin `[k*width, (k+1)*width)`, keyed by bin start.
pub fn weight_histogram(net: &ODNetwork, bin_width: u64) -> BTreeMap<u64, u64> {
    let bw = bin_width.max(1);
    let mut h = BTreeMap::new();
    for (_, _, w) in net.edges() {
        *h.entry(w / bw * bw).or_insert(0) += 1;
    }
    h
}

/// Commuters carried by edges of weight at most `w`, at each distinct `w`.
pub fn cumulative_population(net: &ODNetwork) -> Vec<(Weight, u64)> {
    let mut by_weight: BTreeMap<Weight, u64> = BTreeMap::new();
    for (_, _, w) in net.edges() {
        *by_weight.entry(w).or_insert(0) += w;
    }
    let mut acc = 0;
    by_weight
        .into_iter()
        .map(|(w, mass)| {
            acc += mass;
            (w, acc)
        })
        .collect()
}

/// Per node: (out-strength, in-strength). On coarse networks the two sides
/// share codes, so the total is the node's full incident weight.
pub fn node_strengths(net: &ODNetwork) -> BTreeMap<ZoneCode, (u64, u64)> {
    let mut out: BTreeMap<ZoneCode, (u64, u64)> = BTreeMap::new();
    for (z, s) in out_strengths(net) {
        out.entry(z).or_default().0 = s;
    }
    for (z, s) in in_strengths(net) {
        out.entry(z).or_default().1 = s;
    }
    out
}

/// Weight histogram of the edges of `b` missing from `a`.
pub fn missing_edge_histogram(b: &ODNetwork, a: &ODNetwork, bin_width: u64) -> Result<BTreeMap<u64, u64>> {
    let missing = edge_complement(b, a)?;
    Ok(weight_histogram(&b.restrict(&missing), bin_width))
}

fn push_histogram(out: &mut String, name: &str, bin_width: u64, h: &BTreeMap<u64, u64>) {
    let _ = writeln!(out, "[{name}]");
    out.push_str("bin_lo,bin_hi,count\n");
    for (lo, c) in h {
        let _ = writeln!(out, "{lo},{},{c}", lo + bin_width.max(1));
    }
    out.push('\n');
}

/// Plot-ready CSV sections: weight histograms, cumulative population curves
/// and node strengths for each named network.
pub fn distribution_reports(nets: &[(&str, &ODNetwork)], bin_width: u64) -> String {
    let mut out = String::new();
    for (name, net) in nets {
        push_histogram(&mut out, &format!("weights:{name}"), bin_width, &weight_histogram(net, bin_width));
        let _ = writeln!(out, "[cumulative:{name}]");
        out.push_str("weight,cumulative_commuters\n");
        for (w, c) in cumulative_population(net) {
            let _ = writeln!(out, "{w},{c}");
        }
        out.push('\n');
        let _ = writeln!(out, "[strengths:{name}]");
        out.push_str("zone,out_strength,in_strength\n");
        for (z, (o, i)) in node_strengths(net) {
            let _ = writeln!(out, "{z},{o},{i}");
        }
        out.push('\n');
    }
    out
}

/// The coarse networks compared during validation.
#[derive(Debug, Clone)]
pub struct CoarseViews {
    /// Aggregate of the released fine network.
    pub a: ODNetwork,
    /// Released coarse network.
    pub b: ODNetwork,
    /// Aggregate of the surrogate.
    pub c: ODNetwork,
    /// Pairs of `b` that also appear in `a`.
    pub overlap: EdgeSet,
    pub universe: Universe,
}

impl CoarseViews {
    pub fn new(r: &ODNetwork, s: &ODNetwork, b: &ODNetwork, hierarchy: &PartitionHierarchy) -> Result<Self> {
        let a = aggregate(r, hierarchy)?;
        let c = aggregate(s, hierarchy)?;
        let b = b.clone();
        if b.origin_level() != Level::Coarse || b.dest_level() != Level::Coarse {
            return Err(Error::LevelMismatch {
                left: "SA2->SA2".into(),
                right: format!("{}->{}", b.origin_level(), b.dest_level()),
            });
        }
        let overlap = edge_intersection(&b, &a)?;
        let universe = Universe::from_networks(&[&a, &b, &c]);
        Ok(CoarseViews {
            a,
            b,
            c,
            overlap,
            universe,
        })
    }

    pub fn get(&self, name: &str) -> Option<&ODNetwork> {
        match name {
            "A" => Some(&self.a),
            "B" => Some(&self.b),
            "C" => Some(&self.c),
            _ => None,
        }
    }

    /// Correlation and overlap MSE for a named pair, e.g. `("B", "C")`.
    pub fn pair_metrics(&self, left: &str, right: &str) -> Result<(f64, f64)> {
        let unknown = |n: &str| Error::Config(format!("unknown network {n:?}; expected A, B or C"));
        let l = self.get(left).ok_or_else(|| unknown(left))?;
        let r = self.get(right).ok_or_else(|| unknown(right))?;
        Ok((
            corr2d_in(l, r, &self.universe)?,
            mse_overlap(&self.overlap, l, r)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStats {
    pub path: PathStats,
    pub clustering: f64,
}

pub fn network_stats(net: &ODNetwork, mode: ClusteringMode) -> Result<NetworkStats> {
    Ok(NetworkStats {
        path: avg_shortest_path(net)?,
        clustering: weighted_clustering(net, mode)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `(left, right, corr2d, mse)` for B/A, B/C and A/C.
    pub pairs: Vec<(String, String, f64, f64)>,
    /// Stats for A*, C*, B* (restricted to the overlap) and the full B.
    pub stats: Vec<(String, NetworkStats)>,
    pub totals: Vec<(String, usize, u64)>,
    pub distributions: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOptions {
    pub clustering: ClusteringMode,
    pub coarse_bin_width: u64,
    pub fine_bin_width: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            clustering: ClusteringMode::SymmetrizeMax,
            coarse_bin_width: 10,
            fine_bin_width: 1,
        }
    }
}

pub fn build_report(
    r: &ODNetwork,
    s: &ODNetwork,
    b: &ODNetwork,
    hierarchy: &PartitionHierarchy,
    opts: ValidationOptions,
) -> Result<ValidationReport> {
    let v = CoarseViews::new(r, s, b, hierarchy)?;
    let mut pairs = Vec::new();
    for (l, rr) in [("B", "A"), ("B", "C"), ("A", "C")] {
        let (c, m) = v.pair_metrics(l, rr)?;
        pairs.push((l.to_string(), rr.to_string(), c, m));
    }
    let mut stats = Vec::new();
    for (name, net) in [
        ("A*", v.a.restrict(&v.overlap)),
        ("C*", v.c.restrict(&v.overlap)),
        ("B*", v.b.restrict(&v.overlap)),
        ("B", v.b.clone()),
    ] {
        stats.push((name.to_string(), network_stats(&net, opts.clustering)?));
    }
    let totals = vec![
        ("R".to_string(), r.edge_count(), r.total_commuters()),
        ("S".to_string(), s.edge_count(), s.total_commuters()),
        ("A".to_string(), v.a.edge_count(), v.a.total_commuters()),
        ("B".to_string(), v.b.edge_count(), v.b.total_commuters()),
        ("C".to_string(), v.c.edge_count(), v.c.total_commuters()),
    ];
    let mut distributions = distribution_reports(&[("R", r), ("S", s)], opts.fine_bin_width);
    distributions.push_str(&distribution_reports(
        &[("A", &v.a), ("B", &v.b), ("C", &v.c)],
        opts.coarse_bin_width,
    ));
    push_histogram(
        &mut distributions,
        "missing:B\\A",
        opts.coarse_bin_width,
        &missing_edge_histogram(&v.b, &v.a, opts.coarse_bin_width)?,
    );
    Ok(ValidationReport {
        pairs,
        stats,
        totals,
        distributions,
    })
}

impl ValidationReport {
    /// Flat key/value summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (name, edges, total) in &self.totals {
            let _ = writeln!(out, "edges.{name}={edges}");
            let _ = writeln!(out, "commuters.{name}={total}");
        }
        for (l, r, c, m) in &self.pairs {
            let _ = writeln!(out, "corr2d.{l},{r}={c}");
            let _ = writeln!(out, "mse.{l},{r}={m}");
        }
        for (name, s) in &self.stats {
            let _ = writeln!(out, "shortest_path.{name}={}", s.path.mean);
            let _ = writeln!(out, "reachable_fraction.{name}={}", s.path.reachable_fraction());
            let _ = writeln!(out, "clustering.{name}={}", s.clustering);
        }
        out
    }

    /// Summary followed by the distribution sections.
    pub fn render(&self) -> String {
        let mut out = String::from("[summary]\n");
        out.push_str(&self.summary());
        out.push('\n');
        out.push_str(&self.distributions);
        out
    }
}

/// Pairwise agreement between surrogates from different seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    /// `(i, j, corr2d, mse)` for every `i < j`.
    pub pairs: Vec<(usize, usize, f64, f64)>,
    /// Stats of each aggregated surrogate restricted to the overlap with B.
    pub stats: Vec<NetworkStats>,
}

pub fn compare_instantiations(
    surrogates: &[ODNetwork],
    b: &ODNetwork,
    hierarchy: &PartitionHierarchy,
    mode: ClusteringMode,
) -> Result<ConsistencyTable> {
    if surrogates.len() < 2 {
        return Err(Error::Config("need at least two surrogates to compare".into()));
    }
    let coarse = surrogates
        .iter()
        .map(|s| aggregate(s, hierarchy))
        .collect::<Result<Vec<_>>>()?;
    let mut refs: Vec<&ODNetwork> = coarse.iter().collect();
    refs.push(b);
    let universe = Universe::from_networks(&refs);
    let mut pairs = Vec::new();
    for i in 0..coarse.len() {
        for j in i + 1..coarse.len() {
            let b_i = b.restrict(&edge_intersection(b, &coarse[i])?);
            let overlap = edge_intersection(&b_i, &coarse[j])?;
            pairs.push((
                i,
                j,
                corr2d_in(&coarse[i], &coarse[j], &universe)?,
                mse_overlap(&overlap, &coarse[i], &coarse[j])?,
            ));
        }
    }
    let stats = coarse
        .iter()
        .map(|c| {
            let overlap = edge_intersection(b, c)?;
            network_stats(&c.restrict(&overlap), mode)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyTable { pairs, stats })
}
