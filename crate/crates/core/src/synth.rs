//! Synthetic census worlds and a stylized disclosure-control perturbation.
//!
//! A world is a random layout of SA2 zones in the unit square, each holding a
//! handful of SA1 and DZN zones scattered around its centre. Destination
//! zones get a log-normal attractiveness so that a few hubs employ a large
//! share of workers. Each SA1's workers are spread over destinations with a
//! gravity kernel `A_y / (d + d0)^gamma` and sampled as a multinomial.
//!
//! The perturbation is not the real (undisclosed) agency algorithm. It adds
//! bounded integer noise to every cell, removes cells that fall below the
//! minimum cell size and optionally suppresses small cells, which reproduces
//! the loss of small fine-resolution edges. With `additivity` on, a repair
//! pass makes each coarse aggregate match the unperturbed total again.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::{self, PopulationTable};
use crate::network::{aggregate, aggregate_origins, in_strengths, Level, ODNetwork, Pair, PartitionHierarchy, Weight, ZoneCode};
use crate::streams::{self, StreamRng};

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub lo: u64,
    pub hi: u64,
}

impl IntRange {
    pub const fn new(lo: u64, hi: u64) -> Self {
        IntRange { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.random_range(self.lo..=self.hi)
    }

    fn is_valid(&self) -> bool {
        self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sa2: usize,
    pub sa1_per_sa2: IntRange,
    pub dzn_per_sa2: IntRange,
    /// Residents per SA1 before applying `employment_fraction`.
    pub sa1_population: IntRange,
    pub employment_fraction: f64,
    /// Standard deviation of log attractiveness of destination zones.
    pub employment_hub_skew: f64,
    pub gravity_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sa2: 200,
            sa1_per_sa2: IntRange::new(7, 13),
            dzn_per_sa2: IntRange::new(1, 4),
            sa1_population: IntRange::new(200, 800),
            employment_fraction: 0.5,
            employment_hub_skew: 2.0,
            gravity_exponent: 4.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sa2 < 2 {
            return Err(Error::Config("n_sa2 must be at least 2".into()));
        }
        for (name, r) in [
            ("sa1_per_sa2", self.sa1_per_sa2),
            ("dzn_per_sa2", self.dzn_per_sa2),
            ("sa1_population", self.sa1_population),
        ] {
            if !r.is_valid() {
                return Err(Error::Config(format!("{name} range is empty")));
            }
        }
        if self.sa1_per_sa2.hi == 0 {
            return Err(Error::Infeasible("no SA1 zones can be generated".into()));
        }
        if self.dzn_per_sa2.hi == 0 {
            return Err(Error::Infeasible("no destination zones can be generated".into()));
        }
        if !(self.employment_fraction > 0.0 && self.employment_fraction <= 1.0) {
            return Err(Error::Config("employment_fraction must be in (0, 1]".into()));
        }
        if !(self.employment_hub_skew > 0.0 && self.gravity_exponent > 0.0) {
            return Err(Error::Config("hub skew and gravity exponent must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub min_cell: Weight,
    /// Cells whose true weight is below this are removed with `p_suppress`.
    pub suppress_below: Weight,
    pub p_suppress: f64,
    /// Cells that end up in `[min_cell, small_threshold]` are removed with
    /// `p_suppress_small`.
    pub small_threshold: Weight,
    pub p_suppress_small: f64,
    /// Noise is drawn uniformly from `-noise_magnitude..=noise_magnitude`.
    pub noise_magnitude: Weight,
    pub additivity: bool,
}

impl PerturbConfig {
    /// Fine-resolution release without the additivity step.
    pub fn fine_default() -> Self {
        PerturbConfig {
            min_cell: 3,
            suppress_below: 3,
            p_suppress: 0.5,
            small_threshold: 35,
            p_suppress_small: 0.8,
            noise_magnitude: 2,
            additivity: false,
        }
    }

    /// Coarse release: larger cells, lighter treatment.
    pub fn coarse_default() -> Self {
        PerturbConfig {
            min_cell: 3,
            suppress_below: 0,
            p_suppress: 0.0,
            small_threshold: 0,
            p_suppress_small: 0.0,
            noise_magnitude: 2,
            additivity: false,
        }
    }

    /// SA2→DZN release, between the two.
    pub fn mixed_default() -> Self {
        PerturbConfig {
            min_cell: 3,
            suppress_below: 3,
            p_suppress: 0.3,
            small_threshold: 0,
            p_suppress_small: 0.0,
            noise_magnitude: 2,
            additivity: false,
        }
    }

    /// Previous-census fine release, with additivity.
    pub fn previous_default() -> Self {
        PerturbConfig {
            min_cell: 3,
            suppress_below: 0,
            p_suppress: 0.0,
            small_threshold: 0,
            p_suppress_small: 0.0,
            noise_magnitude: 2,
            additivity: true,
        }
    }

    /// No noise and no suppression beyond `min_cell`.
    pub fn identity() -> Self {
        PerturbConfig {
            min_cell: 1,
            suppress_below: 0,
            p_suppress: 0.0,
            small_threshold: 0,
            p_suppress_small: 0.0,
            noise_magnitude: 0,
            additivity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cell < 1 {
            return Err(Error::Config("min_cell must be at least 1".into()));
        }
        for p in [self.p_suppress, self.p_suppress_small] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A ground-truth census: fine flows plus the exact worker totals.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub hierarchy: PartitionHierarchy,
    pub fine: ODNetwork,
    pub n_x: PopulationTable,
    pub n_y: PopulationTable,
}

struct Layout {
    hierarchy: PartitionHierarchy,
    sa1: Vec<(ZoneCode, [f64; 2])>,
    dzn: Vec<(ZoneCode, [f64; 2], f64)>,
}

const ZONE_SPREAD: f64 = 0.02;
const DISTANCE_OFFSET: f64 = 0.02;

fn jitter<R: Rng>(centre: [f64; 2], rng: &mut R) -> [f64; 2] {
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    [centre[0] + ZONE_SPREAD * dx, centre[1] + ZONE_SPREAD * dy]
}

impl Layout {
    fn new(cfg: &SynthConfig, rng: &mut StreamRng) -> Self {
        let mut sa1_to_sa2 = BTreeMap::new();
        let mut dzn_to_sa2 = BTreeMap::new();
        let mut sa1 = Vec::new();
        let mut dzn = Vec::new();
        for i in 0..cfg.n_sa2 {
            let sa2 = ZoneCode::new(format!("2{i:05}"));
            let centre = [rng.random::<f64>(), rng.random::<f64>()];
            let n_sa1 = cfg.sa1_per_sa2.sample(rng).max(1);
            for _ in 0..n_sa1 {
                let code = ZoneCode::new(format!("1{:07}", sa1.len()));
                sa1_to_sa2.insert(code.clone(), sa2.clone());
                sa1.push((code, jitter(centre, rng)));
            }
            let n_dzn = cfg.dzn_per_sa2.sample(rng).max(1);
            for _ in 0..n_dzn {
                let code = ZoneCode::new(format!("3{:06}", dzn.len()));
                dzn_to_sa2.insert(code.clone(), sa2.clone());
                let g: f64 = rng.sample(StandardNormal);
                let attractiveness = (cfg.employment_hub_skew * g).exp();
                dzn.push((code, jitter(centre, rng), attractiveness));
            }
        }
        Layout {
            hierarchy: PartitionHierarchy::new(sa1_to_sa2, dzn_to_sa2),
            sa1,
            dzn,
        }
    }

    /// One census: worker counts per SA1 and their multinomial allocation.
    fn census(&self, cfg: &SynthConfig, rng: &mut StreamRng) -> GroundTruth {
        let mut fine = ODNetwork::new(Level::FineOrigin, Level::FineDest);
        let mut n_x = PopulationTable::new(Level::FineOrigin);
        let mut kernel = vec![0.0; self.dzn.len()];
        for (code, pos) in &self.sa1 {
            let residents = cfg.sa1_population.sample(rng);
            let workers = (residents as f64 * cfg.employment_fraction).round() as u64;
            n_x.insert(code.clone(), workers);
            for (k, (_, dpos, attr)) in kernel.iter_mut().zip(&self.dzn) {
                let d = ((pos[0] - dpos[0]).powi(2) + (pos[1] - dpos[1]).powi(2)).sqrt();
                *k = attr / (d + DISTANCE_OFFSET).powf(cfg.gravity_exponent);
            }
            let mut mass: f64 = kernel.iter().sum();
            let mut left = workers;
            for (k, (dcode, _, _)) in kernel.iter().zip(&self.dzn) {
                if left == 0 {
                    break;
                }
                let p = if mass > 0.0 { (k / mass).clamp(0.0, 1.0) } else { 1.0 };
                let n = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(left);
                fine.add_weight(code.clone(), dcode.clone(), n);
                left -= n;
                mass -= k;
            }
            if left > 0 {
                // Floating-point leftovers go to the last destination.
                let last = &self.dzn[self.dzn.len() - 1].0;
                fine.add_weight(code.clone(), last.clone(), left);
            }
        }
        let mut n_y = PopulationTable::new(Level::FineDest);
        let ins = in_strengths(&fine);
        for (code, _, _) in &self.dzn {
            n_y.insert(code.clone(), ins.get(code).copied().unwrap_or(0));
        }
        GroundTruth {
            hierarchy: self.hierarchy.clone(),
            fine,
            n_x,
            n_y,
        }
    }
}

pub fn generate_ground_truth(cfg: &SynthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut layout_rng = streams::stream(cfg.seed, "synth:layout");
    let layout = Layout::new(cfg, &mut layout_rng);
    let mut census_rng = streams::stream(cfg.seed, "synth:census");
    Ok(layout.census(cfg, &mut census_rng))
}

/// Perturbs every cell of `net` independently. `hierarchy` is only used by
/// the additivity repair, which restores each coarse aggregate to within
/// `min_cell - 1` of its unperturbed total.
pub fn perturb(net: &ODNetwork, cfg: &PerturbConfig, hierarchy: &PartitionHierarchy, seed: u64) -> Result<ODNetwork> {
    cfg.validate()?;
    let mut rng = streams::rng(seed);
    let noise = cfg.noise_magnitude as i64;
    let mut out = ODNetwork::new(net.origin_level(), net.dest_level());
    for (o, d, w) in net.edges() {
        // Draw every variate for every cell so that one cell's fate does not
        // shift the stream of the next.
        let suppress_draw: f64 = rng.random();
        let delta = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
        let small_draw: f64 = rng.random();
        if w < cfg.suppress_below && suppress_draw < cfg.p_suppress {
            continue;
        }
        let noisy = w as i64 + delta;
        if noisy < cfg.min_cell as i64 {
            continue;
        }
        let noisy = noisy as u64;
        if noisy <= cfg.small_threshold && small_draw < cfg.p_suppress_small {
            continue;
        }
        out.set_weight(o.clone(), d.clone(), noisy);
    }
    if cfg.additivity {
        restore_additivity(net, &mut out, cfg, hierarchy, &mut rng)?;
    }
    Ok(out)
}

fn restore_additivity(
    truth: &ODNetwork,
    out: &mut ODNetwork,
    cfg: &PerturbConfig,
    hierarchy: &PartitionHierarchy,
    rng: &mut StreamRng,
) -> Result<()> {
    let mut groups: BTreeMap<Pair, Vec<(Pair, Weight)>> = BTreeMap::new();
    for (o, d, w) in truth.edges() {
        let x = hierarchy.require_parent(truth.origin_level(), o)?.clone();
        let y = hierarchy.require_parent(truth.dest_level(), d)?.clone();
        groups.entry((x, y)).or_default().push(((o.clone(), d.clone()), w));
    }
    for cells in groups.values() {
        let target: i64 = cells.iter().map(|(_, w)| *w as i64).sum();
        let mut kept: Vec<(Pair, Weight)> = cells
            .iter()
            .filter_map(|(p, _)| out.weight_of(p).map(|w| (p.clone(), w)))
            .collect();
        let mut diff = target - kept.iter().map(|(_, w)| *w as i64).sum::<i64>();

        if diff > 0 {
            let mut dropped: Vec<&(Pair, Weight)> = cells.iter().filter(|(p, _)| !out.contains(p)).collect();
            dropped.shuffle(rng);
            for (p, w) in dropped {
                if diff < cfg.min_cell as i64 {
                    break;
                }
                let w = (*w).max(cfg.min_cell).min(diff as u64);
                kept.push((p.clone(), w));
                diff -= w as i64;
            }
        }
        while diff < 0 && !kept.is_empty() {
            let reducible: Vec<usize> = (0..kept.len()).filter(|i| kept[*i].1 > cfg.min_cell).collect();
            if let Some(&i) = reducible.choose(rng) {
                let room = (kept[i].1 - cfg.min_cell) as i64;
                let step = room.min(-diff).min(1.max(-diff / reducible.len() as i64));
                kept[i].1 -= step as u64;
                diff += step;
            } else {
                let i = rng.random_range(0..kept.len());
                diff += kept.swap_remove(i).1 as i64;
            }
        }
        if diff > 0 && !kept.is_empty() {
            for _ in 0..diff {
                let i = rng.random_range(0..kept.len());
                kept[i].1 += 1;
            }
        }
        for (p, _) in cells {
            out.set_weight(p.0.clone(), p.1.clone(), 0);
        }
        for ((o, d), w) in kept {
            out.set_weight(o, d, w);
        }
    }
    Ok(())
}

/// Perturbation settings for each released table.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePerturbation {
    pub fine: PerturbConfig,
    pub coarse: PerturbConfig,
    pub mixed: PerturbConfig,
    pub previous: PerturbConfig,
}

impl Default for BundlePerturbation {
    fn default() -> Self {
        BundlePerturbation {
            fine: PerturbConfig::fine_default(),
            coarse: PerturbConfig::coarse_default(),
            mixed: PerturbConfig::mixed_default(),
            previous: PerturbConfig::previous_default(),
        }
    }
}

/// Everything a reconstruction run consumes, plus the truth it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyBundle {
    pub truth: GroundTruth,
    /// Released fine network.
    pub r: ODNetwork,
    /// Released coarse network.
    pub b: ODNetwork,
    /// Released SA2→DZN network.
    pub gamma: ODNetwork,
    /// Previous-census fine release.
    pub h: ODNetwork,
    /// Worker counts of the previous census, used to condition `h`.
    pub h_population: PopulationTable,
}

impl SurveyBundle {
    pub fn hierarchy(&self) -> &PartitionHierarchy {
        &self.truth.hierarchy
    }

    pub fn n_x(&self) -> &PopulationTable {
        &self.truth.n_x
    }

    pub fn n_y(&self) -> &PopulationTable {
        &self.truth.n_y
    }
}

pub fn make_survey_bundle(cfg: &SynthConfig, perturbation: &BundlePerturbation) -> Result<SurveyBundle> {
    cfg.validate()?;
    let mut layout_rng = streams::stream(cfg.seed, "synth:layout");
    let layout = Layout::new(cfg, &mut layout_rng);
    let truth = layout.census(cfg, &mut streams::stream(cfg.seed, "synth:census"));
    let previous = layout.census(cfg, &mut streams::stream(cfg.seed, "synth:previous-census"));
    let h = &truth.hierarchy;
    let seed = |name: &str| streams::derive_seed(cfg.seed, name);

    let r = perturb(&truth.fine, &perturbation.fine, h, seed("perturb:fine"))?;
    let b = perturb(&aggregate(&truth.fine, h)?, &perturbation.coarse, h, seed("perturb:coarse"))?;
    let gamma = perturb(
        &aggregate_origins(&truth.fine, h)?,
        &perturbation.mixed,
        h,
        seed("perturb:mixed"),
    )?;
    let h_net = perturb(&previous.fine, &perturbation.previous, h, seed("perturb:previous"))?;
    Ok(SurveyBundle {
        r,
        b,
        gamma,
        h: h_net,
        h_population: previous.n_x,
        truth,
    })
}

/// File names used when a bundle is written to disk.
pub mod files {
    pub const R: &str = "r.csv";
    pub const H: &str = "h.csv";
    pub const B: &str = "b.csv";
    pub const GAMMA: &str = "gamma.csv";
    pub const N_X: &str = "n_x.csv";
    pub const N_Y: &str = "n_y.csv";
    pub const H_POPULATION: &str = "h_population.csv";
    pub const SA1_TO_SA2: &str = "sa1_to_sa2.csv";
    pub const DZN_TO_SA2: &str = "dzn_to_sa2.csv";
    pub const TRUTH: &str = "truth.csv";
}

pub fn write_bundle(bundle: &SurveyBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ingest::write_network(dir.join(files::R), &bundle.r)?;
    ingest::write_network(dir.join(files::H), &bundle.h)?;
    ingest::write_network(dir.join(files::B), &bundle.b)?;
    ingest::write_network(dir.join(files::GAMMA), &bundle.gamma)?;
    ingest::write_network(dir.join(files::TRUTH), &bundle.truth.fine)?;
    ingest::write_population(dir.join(files::N_X), bundle.n_x())?;
    ingest::write_population(dir.join(files::N_Y), bundle.n_y())?;
    ingest::write_population(dir.join(files::H_POPULATION), &bundle.h_population)?;
    ingest::write_correspondence(dir.join(files::SA1_TO_SA2), bundle.hierarchy().sa1_to_sa2())?;
    ingest::write_correspondence(dir.join(files::DZN_TO_SA2), bundle.hierarchy().dzn_to_sa2())?;
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SurveyBundle> {
    let dir = dir.as_ref();
    let hierarchy = ingest::load_hierarchy(dir.join(files::SA1_TO_SA2), dir.join(files::DZN_TO_SA2))?;
    let fine = |name| ingest::load_network(dir.join(name), Level::FineOrigin, Level::FineDest);
    Ok(SurveyBundle {
        truth: GroundTruth {
            hierarchy,
            fine: fine(files::TRUTH)?,
            n_x: ingest::load_population(dir.join(files::N_X), Level::FineOrigin)?,
            n_y: ingest::load_population(dir.join(files::N_Y), Level::FineDest)?,
        },
        r: fine(files::R)?,
        h: fine(files::H)?,
        b: ingest::load_network(dir.join(files::B), Level::Coarse, Level::Coarse)?,
        gamma: ingest::load_network(dir.join(files::GAMMA), Level::Coarse, Level::FineDest)?,
        h_population: ingest::load_population(dir.join(files::H_POPULATION), Level::FineOrigin)?,
    })
}

/// Share of all workers employed by the top tenth of destination zones.
pub fn top_decile_share(n_y: &PopulationTable) -> f64 {
    let mut counts: Vec<u64> = n_y.counts().values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let top = counts.len().div_ceil(10);
    counts[..top].iter().sum::<u64>() as f64 / total as f64
}
