//! Destination assignment: attaching candidate edges to destination zones
//! under the coarse topology and the coarse-pair / destination budgets.
//!
//! The surrogate starts as a copy of the released fine network. Each pass
//! visits every destination zone in a freshly shuffled order, draws one
//! candidate uniformly from the pool of candidates whose origin SA2 may reach
//! that destination, and keeps it if both budgets can absorb its weight.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::candidates::CandidateEdge;
use crate::error::{Error, Result};
use crate::ingest::PopulationTable;
use crate::network::{
    aggregate, in_strengths, out_strengths, EdgeSet, Level, ODNetwork, Pair, PartitionHierarchy,
    ZoneCode,
};
use crate::streams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentConfig {
    pub seed: u64,
    pub max_passes: usize,
    pub wall_clock_budget: Duration,
    /// Stop after this many consecutive passes without a single accepted
    /// candidate.
    pub stall_passes: usize,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            seed: 0,
            max_passes: 1_000_000,
            wall_clock_budget: Duration::from_secs(100 * 3600),
            stall_passes: 3,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        if self.stall_passes == 0 {
            return Err(Error::Config("stall_passes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Remaining capacity for additions. Values start at the known total minus
/// what the surrogate already carries and may be negative where the fine
/// network over-reports; such entries never accept anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetLedger {
    pub sa2_pair_budget: BTreeMap<Pair, i64>,
    pub dzn_budget: BTreeMap<ZoneCode, i64>,
}

impl BudgetLedger {
    /// Budgets for a surrogate currently equal to `surrogate`: coarse pairs
    /// of `overlap` are bounded by `b`, destinations by `n_y`.
    pub fn initialise(
        surrogate: &ODNetwork,
        b: &ODNetwork,
        overlap: &EdgeSet,
        n_y: &PopulationTable,
        hierarchy: &PartitionHierarchy,
    ) -> Result<Self> {
        let agg = aggregate(surrogate, hierarchy)?;
        let mut sa2_pair_budget = BTreeMap::new();
        for pair in overlap.iter() {
            let known = b.weight_of(pair).ok_or_else(|| Error::MissingPair {
                origin: pair.0.to_string(),
                dest: pair.1.to_string(),
            })?;
            let carried = agg.weight_of(pair).unwrap_or(0);
            sa2_pair_budget.insert(pair.clone(), known as i64 - carried as i64);
        }
        let carried_in = in_strengths(surrogate);
        let mut dzn_budget = BTreeMap::new();
        for y in n_y.counts().keys().chain(carried_in.keys()) {
            let cap = n_y.get(y).unwrap_or(0) as i64;
            let used = carried_in.get(y).copied().unwrap_or(0) as i64;
            dzn_budget.insert(y.clone(), cap - used);
        }
        Ok(BudgetLedger {
            sa2_pair_budget,
            dzn_budget,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// The coarse pair the edge would aggregate into is not in the overlap.
    PairNotInOverlap,
    /// Not enough room left on the coarse pair.
    CoarseBudget,
    /// Not enough room left at the destination zone.
    DestBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accepted,
    Rejected(Rejection),
}

/// Tries to attach `candidate` to destination `dest`. On acceptance both
/// budgets are decremented and the weight is merged into `surrogate`.
pub fn try_assign(
    candidate: &CandidateEdge,
    dest: &ZoneCode,
    ledger: &mut BudgetLedger,
    hierarchy: &PartitionHierarchy,
    surrogate: &mut ODNetwork,
) -> Result<Decision> {
    let x_b = hierarchy.require_parent(Level::FineOrigin, &candidate.origin)?;
    let y_b = hierarchy.require_parent(Level::FineDest, dest)?;
    let w = candidate.weight as i64;
    let pair = (x_b.clone(), y_b.clone());
    let Some(pair_room) = ledger.sa2_pair_budget.get(&pair).copied() else {
        return Ok(Decision::Rejected(Rejection::PairNotInOverlap));
    };
    if pair_room < w {
        return Ok(Decision::Rejected(Rejection::CoarseBudget));
    }
    let dest_room = ledger.dzn_budget.get(dest).copied().unwrap_or(0);
    if dest_room < w {
        return Ok(Decision::Rejected(Rejection::DestBudget));
    }
    *ledger.sa2_pair_budget.get_mut(&pair).unwrap() -= w;
    *ledger.dzn_budget.entry(dest.clone()).or_insert(0) -= w;
    surrogate.add_weight(candidate.origin.clone(), dest.clone(), candidate.weight);
    Ok(Decision::Accepted)
}

/// SA2 origins allowed to send commuters to `dest`: those with a coarse→DZN
/// edge into `dest` in `gamma` whose coarse pair to `dest`'s SA2 is in
/// `overlap`.
pub fn allowed_origin_sa2s(
    dest: &ZoneCode,
    gamma: &ODNetwork,
    overlap: &EdgeSet,
    hierarchy: &PartitionHierarchy,
) -> Result<BTreeSet<ZoneCode>> {
    let y_b = hierarchy.require_parent(Level::FineDest, dest)?;
    Ok(gamma
        .edges()
        .filter(|(x, y, _)| *y == dest && overlap.contains(x, y_b))
        .map(|(x, _, _)| x.clone())
        .collect())
}

/// Candidates that could be attached to `dest` without breaking the coarse
/// topology.
pub fn allowed_candidate_pool(
    dest: &ZoneCode,
    gamma: &ODNetwork,
    overlap: &EdgeSet,
    hierarchy: &PartitionHierarchy,
    candidates: &[CandidateEdge],
) -> Result<Vec<CandidateEdge>> {
    let phi = allowed_origin_sa2s(dest, gamma, overlap, hierarchy)?;
    let mut out = Vec::new();
    for m in candidates {
        let parent = hierarchy.require_parent(Level::FineOrigin, &m.origin)?;
        if phi.contains(parent) {
            out.push(m.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exhausted,
    Stalled,
    MaxPasses,
    WallClock,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Exhausted => "exhausted",
            Termination::Stalled => "stalled",
            Termination::MaxPasses => "max-passes",
            Termination::WallClock => "wall-clock",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub pass: usize,
    pub elapsed_seconds: f64,
    pub unassigned_commuters: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentReport {
    /// Pairs present in the surrogate but not in the released network.
    pub edges_added: u64,
    pub candidates_accepted: u64,
    pub commuters_added: u64,
    pub unassigned_edges: u64,
    pub unassigned_commuters: u64,
    pub passes: usize,
    pub termination: Termination,
    pub trace: Vec<TracePoint>,
}

impl AssignmentReport {
    /// Key/value summary without timing information.
    pub fn summary(&self) -> String {
        format!(
            "edges_added={}\ncandidates_accepted={}\ncommuters_added={}\nunassigned_edges={}\nunassigned_commuters={}\npasses={}\ntermination={}\n",
            self.edges_added,
            self.candidates_accepted,
            self.commuters_added,
            self.unassigned_edges,
            self.unassigned_commuters,
            self.passes,
            self.termination.as_str()
        )
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("pass,elapsed_seconds,unassigned_commuters\n");
        for p in &self.trace {
            s.push_str(&format!(
                "{},{:.6},{}\n",
                p.pass, p.elapsed_seconds, p.unassigned_commuters
            ));
        }
        s
    }
}

/// Inputs for [`build_surrogate`].
#[derive(Debug, Clone, Copy)]
pub struct AssignmentInputs<'a> {
    /// Released fine network.
    pub r: &'a ODNetwork,
    /// Released coarse network, the quantitative reference.
    pub b: &'a ODNetwork,
    /// Released SA2→DZN network, the topological reference.
    pub gamma: &'a ODNetwork,
    /// Coarse pairs present in both `b` and the aggregate of `r`.
    pub overlap: &'a EdgeSet,
    pub n_y: &'a PopulationTable,
    pub hierarchy: &'a PartitionHierarchy,
}

#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    pub surrogate: ODNetwork,
    pub report: AssignmentReport,
    pub ledger: BudgetLedger,
    pub initial_ledger: BudgetLedger,
}

/// Candidate ids grouped by origin SA2 with O(1) removal.
struct Pools {
    members: Vec<Vec<usize>>,
    slot: Vec<(usize, usize)>,
}

impl Pools {
    fn new(n_groups: usize, groups: &[usize]) -> Self {
        let mut members = vec![Vec::new(); n_groups];
        let mut slot = Vec::with_capacity(groups.len());
        for (id, g) in groups.iter().enumerate() {
            slot.push((*g, members[*g].len()));
            members[*g].push(id);
        }
        Pools { members, slot }
    }

    fn remove(&mut self, id: usize) {
        let (g, pos) = self.slot[id];
        let pool = &mut self.members[g];
        pool.swap_remove(pos);
        if let Some(&moved) = pool.get(pos) {
            self.slot[moved].1 = pos;
        }
    }

    /// Uniform draw over the union of the given groups.
    fn draw<R: Rng>(&self, groups: &[usize], rng: &mut R) -> Option<usize> {
        let total: usize = groups.iter().map(|g| self.members[*g].len()).sum();
        if total == 0 {
            return None;
        }
        let mut k = rng.random_range(0..total);
        for g in groups {
            let pool = &self.members[*g];
            if k < pool.len() {
                return Some(pool[k]);
            }
            k -= pool.len();
        }
        unreachable!("draw index within total")
    }
}

fn check_consistency(inputs: &AssignmentInputs<'_>, candidates: &[CandidateEdge]) -> Result<()> {
    let h = inputs.hierarchy;
    for (o, d, _) in inputs.r.edges() {
        h.require_parent(Level::FineOrigin, o)?;
        h.require_parent(Level::FineDest, d)?;
    }
    for m in candidates {
        h.require_parent(Level::FineOrigin, &m.origin)?;
    }
    for y in inputs.n_y.counts().keys() {
        h.require_parent(Level::FineDest, y)?;
    }
    for (_, y, _) in inputs.gamma.edges() {
        h.require_parent(Level::FineDest, y)?;
    }
    if inputs.r.origin_level() != Level::FineOrigin || inputs.r.dest_level() != Level::FineDest {
        return Err(Error::LevelMismatch {
            left: "SA1->DZN".into(),
            right: format!("{}->{}", inputs.r.origin_level(), inputs.r.dest_level()),
        });
    }
    Ok(())
}

/// Builds the surrogate fine network by assigning `candidates` to
/// destination zones.
pub fn build_surrogate(
    inputs: AssignmentInputs<'_>,
    candidates: &[CandidateEdge],
    cfg: &AssignmentConfig,
) -> Result<SurrogateOutcome> {
    cfg.validate()?;
    check_consistency(&inputs, candidates)?;
    let h = inputs.hierarchy;
    let started = Instant::now();

    let mut surrogate = inputs.r.clone();
    let mut ledger = BudgetLedger::initialise(&surrogate, inputs.b, inputs.overlap, inputs.n_y, h)?;
    let initial_ledger = ledger.clone();

    // Index origin SA2s that appear in gamma or among the candidates.
    let mut sa2_index: HashMap<&ZoneCode, usize> = HashMap::new();
    let mut intern = |code| {
        let next = sa2_index.len();
        *sa2_index.entry(code).or_insert(next)
    };
    let groups: Vec<usize> = candidates
        .iter()
        .map(|m| intern(h.parent(Level::FineOrigin, &m.origin).unwrap()))
        .collect();

    let destinations: Vec<&ZoneCode> = {
        let mut set: BTreeSet<&ZoneCode> = inputs.n_y.counts().keys().collect();
        set.extend(inputs.r.dests());
        set.into_iter().collect()
    };
    let mut phi: BTreeMap<&ZoneCode, Vec<usize>> = BTreeMap::new();
    for (x, y, _) in inputs.gamma.edges() {
        let y_b = h.parent(Level::FineDest, y).unwrap();
        if inputs.overlap.contains(x, y_b) {
            phi.entry(y).or_default().push(intern(x));
        }
    }
    let n_groups = sa2_index.len();
    let mut pools = Pools::new(n_groups, &groups);
    let empty: Vec<usize> = Vec::new();

    let total_commuters: u64 = candidates.iter().map(|m| m.weight).sum();
    let mut unassigned_commuters = total_commuters;
    let mut unassigned_edges = candidates.len() as u64;
    let mut trace = vec![TracePoint {
        pass: 0,
        elapsed_seconds: 0.0,
        unassigned_commuters,
    }];

    let mut rng = streams::rng(cfg.seed);
    let mut order = destinations.clone();
    let mut passes = 0;
    let mut idle = 0;
    let termination = loop {
        if unassigned_edges == 0 {
            break Termination::Exhausted;
        }
        if passes >= cfg.max_passes {
            break Termination::MaxPasses;
        }
        if started.elapsed() >= cfg.wall_clock_budget {
            break Termination::WallClock;
        }
        passes += 1;
        order.shuffle(&mut rng);
        let mut accepted = 0u64;
        for y in &order {
            let allowed = phi.get(*y).unwrap_or(&empty);
            let Some(id) = pools.draw(allowed, &mut rng) else {
                continue;
            };
            let m = &candidates[id];
            if try_assign(m, y, &mut ledger, h, &mut surrogate)? == Decision::Accepted {
                pools.remove(id);
                accepted += 1;
                unassigned_edges -= 1;
                unassigned_commuters -= m.weight;
            }
        }
        trace.push(TracePoint {
            pass: passes,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            unassigned_commuters,
        });
        if accepted == 0 {
            idle += 1;
            if idle >= cfg.stall_passes {
                break Termination::Stalled;
            }
        } else {
            idle = 0;
        }
    };

    let edges_added = surrogate
        .edges()
        .filter(|(o, d, _)| inputs.r.weight(o, d).is_none())
        .count() as u64;
    let report = AssignmentReport {
        edges_added,
        candidates_accepted: candidates.len() as u64 - unassigned_edges,
        commuters_added: total_commuters - unassigned_commuters,
        unassigned_edges,
        unassigned_commuters,
        passes,
        termination,
        trace,
    };
    Ok(SurrogateOutcome {
        surrogate,
        report,
        ledger,
        initial_ledger,
    })
}

/// Ledger audit as CSV: one row per budget with its initial and final value.
pub fn ledger_audit_csv(initial: &BudgetLedger, last: &BudgetLedger) -> String {
    let mut s = String::from("kind,zone_a,zone_b,initial,remaining\n");
    for (pair, start) in &initial.sa2_pair_budget {
        let end = last.sa2_pair_budget.get(pair).copied().unwrap_or(*start);
        s.push_str(&format!("sa2_pair,{},{},{start},{end}\n", pair.0, pair.1));
    }
    for (y, start) in &initial.dzn_budget {
        let end = last.dzn_budget.get(y).copied().unwrap_or(*start);
        s.push_str(&format!("dzn,{y},,{start},{end}\n"));
    }
    s
}

/// Independent post-hoc check of every constraint the surrogate must meet,
/// recomputed from the networks themselves rather than from any ledger.
/// Returns a human-readable line per violation; empty means clean.
pub struct ConstraintCheck<'a> {
    pub r: &'a ODNetwork,
    pub s: &'a ODNetwork,
    pub b: &'a ODNetwork,
    pub gamma: &'a ODNetwork,
    pub overlap: &'a EdgeSet,
    pub n_x: &'a PopulationTable,
    pub n_y: &'a PopulationTable,
    pub hierarchy: &'a PartitionHierarchy,
}

impl ConstraintCheck<'_> {
    pub fn violations(&self) -> Result<Vec<String>> {
        let h = self.hierarchy;
        let mut out = Vec::new();
        for (o, d, w) in self.r.edges() {
            match self.s.weight(o, d) {
                None => out.push(format!("released edge ({o}, {d}) missing from surrogate")),
                Some(ws) if ws < w => out.push(format!("released edge ({o}, {d}) shrank {w} -> {ws}")),
                _ => {}
            }
        }
        for (o, d, ws) in self.s.edges() {
            let added = ws - self.r.weight(o, d).unwrap_or(0);
            if added == 0 {
                continue;
            }
            let x_b = h.require_parent(Level::FineOrigin, o)?;
            let y_b = h.require_parent(Level::FineDest, d)?;
            if !self.overlap.contains(x_b, y_b) {
                out.push(format!("added edge ({o}, {d}) aggregates outside the overlap"));
            }
            if self.gamma.weight(x_b, d).is_none() {
                out.push(format!("added edge ({o}, {d}) has no ({x_b}, {d}) coarse-to-dzn edge"));
            }
        }
        let agg_s = aggregate(self.s, h)?;
        let agg_r = aggregate(self.r, h)?;
        for pair in self.overlap.iter() {
            let b = self.b.weight_of(pair).unwrap_or(0);
            let s = agg_s.weight_of(pair).unwrap_or(0);
            let r = agg_r.weight_of(pair).unwrap_or(0);
            // Pairs the released network already over-fills may not grow.
            if s > b.max(r) {
                out.push(format!("coarse pair {:?} carries {s} > known {b}", pair));
            }
        }
        let in_s = in_strengths(self.s);
        let in_r = in_strengths(self.r);
        for (y, ws) in &in_s {
            let cap = self.n_y.get(y).unwrap_or(0);
            let wr = in_r.get(y).copied().unwrap_or(0);
            if *ws > cap.max(wr) {
                out.push(format!("destination {y} receives {ws} > population {cap}"));
            }
        }
        let out_s = out_strengths(self.s);
        let out_r = out_strengths(self.r);
        for (x, ws) in &out_s {
            let cap = self.n_x.get(x).unwrap_or(0);
            let wr = out_r.get(x).copied().unwrap_or(0);
            if *ws > cap.max(wr) {
                out.push(format!("origin {x} sends {ws} > population {cap}"));
            }
        }
        Ok(out)
    }
}
