//! End-to-end reconstruction run driven by a flat key/value config file.
//!
//! Artifacts are first written to `<output_dir>/quarantine` and only moved
//! into `output_dir` once every stage has succeeded, so a failed run leaves
//! its partial outputs in the quarantine directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::assign::{self, AssignmentConfig, AssignmentInputs, ConstraintCheck, SurrogateOutcome};
use crate::candidates::{self, CandidateEdge};
use crate::dist::{self, ConditionalWeightDistribution};
use crate::error::{Error, Result};
use crate::ingest::{self, PopulationTable};
use crate::network::{aggregate, edge_intersection, Level, ODNetwork, PartitionHierarchy, ZoneCode};
use crate::streams;
use crate::synth;
use crate::validate::{self, ClusteringMode, ValidationOptions, ValidationReport};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SURROGATE_OUTPUT_DIR";

pub const QUARANTINE_DIR: &str = "quarantine";

/// Artifact file names, in the order they are listed in the manifest.
pub mod artifacts {
    pub const SURROGATE: &str = "surrogate.csv";
    pub const CANDIDATES: &str = "candidates.csv";
    pub const DISTRIBUTION: &str = "distribution.csv";
    pub const LEDGER_AUDIT: &str = "ledger_audit.csv";
    pub const VALIDATION: &str = "validation.txt";
    pub const ASSIGNMENT: &str = "assignment.txt";
    pub const TRACE: &str = "trace.csv";
    pub const MANIFEST: &str = "manifest.txt";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub r: PathBuf,
    pub h: PathBuf,
    pub h_population: PathBuf,
    pub b: PathBuf,
    pub gamma: PathBuf,
    pub n_x: PathBuf,
    pub n_y: PathBuf,
    pub sa1_to_sa2: PathBuf,
    pub dzn_to_sa2: PathBuf,
}

impl InputPaths {
    /// Paths of a bundle written by [`synth::write_bundle`].
    pub fn bundle(dir: &Path) -> Self {
        use synth::files;
        InputPaths {
            r: dir.join(files::R),
            h: dir.join(files::H),
            h_population: dir.join(files::H_POPULATION),
            b: dir.join(files::B),
            gamma: dir.join(files::GAMMA),
            n_x: dir.join(files::N_X),
            n_y: dir.join(files::N_Y),
            sa1_to_sa2: dir.join(files::SA1_TO_SA2),
            dzn_to_sa2: dir.join(files::DZN_TO_SA2),
        }
    }

    pub fn named(&self) -> [(&'static str, &Path); 9] {
        [
            ("r", &self.r),
            ("h", &self.h),
            ("h_population", &self.h_population),
            ("b", &self.b),
            ("gamma", &self.gamma),
            ("n_x", &self.n_x),
            ("n_y", &self.n_y),
            ("sa1_to_sa2", &self.sa1_to_sa2),
            ("dzn_to_sa2", &self.dzn_to_sa2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub seed: u64,
    pub bin_width: u64,
    /// Non-geographic destination or origin codes removed before anything else.
    pub blocklist: BTreeSet<ZoneCode>,
    pub max_passes: usize,
    pub stall_passes: usize,
    pub wall_clock: Duration,
    pub clustering: ClusteringMode,
    pub output_dir: PathBuf,
}

const KEYS: [&str; 17] = [
    "r",
    "h",
    "h_population",
    "b",
    "gamma",
    "n_x",
    "n_y",
    "sa1_to_sa2",
    "dzn_to_sa2",
    "seed",
    "bin_width",
    "blocklist",
    "max_passes",
    "stall_passes",
    "wall_clock_seconds",
    "clustering",
    "output_dir",
];

fn clustering_name(mode: ClusteringMode) -> &'static str {
    match mode {
        ClusteringMode::SymmetrizeMax => "symmetrize-max",
        ClusteringMode::Directed => "directed",
    }
}

pub fn parse_clustering(s: &str) -> Result<ClusteringMode> {
    match s {
        "symmetrize-max" => Ok(ClusteringMode::SymmetrizeMax),
        "directed" => Ok(ClusteringMode::Directed),
        other => Err(Error::Config(format!(
            "unknown clustering mode {other:?} (expected symmetrize-max or directed)"
        ))),
    }
}

impl PipelineConfig {
    /// Config for a synthetic bundle directory with default settings.
    pub fn for_bundle(dir: &Path, seed: u64, output_dir: PathBuf) -> Self {
        let defaults = AssignmentConfig::default();
        PipelineConfig {
            inputs: InputPaths::bundle(dir),
            seed,
            bin_width: dist::DEFAULT_BIN_WIDTH,
            blocklist: BTreeSet::new(),
            max_passes: defaults.max_passes,
            stall_passes: defaults.stall_passes,
            wall_clock: defaults.wall_clock_budget,
            clustering: ClusteringMode::default(),
            output_dir,
        }
    }

    /// Parses the key/value text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        let path = |key: &str| -> Result<PathBuf> {
            match table.get(key) {
                Some(toml::Value::String(s)) => Ok(base.join(s)),
                Some(_) => Err(Error::Config(format!("{key} must be a string"))),
                None => Err(Error::Config(format!("missing config key {key}"))),
            }
        };
        let int = |key: &str, default: u64| -> Result<u64> {
            match table.get(key) {
                Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
                Some(_) => Err(Error::Config(format!("{key} must be a non-negative integer"))),
                None => Ok(default),
            }
        };
        let defaults = AssignmentConfig::default();
        let blocklist = match table.get("blocklist") {
            None => BTreeSet::new(),
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(ZoneCode::from)
                        .ok_or_else(|| Error::Config("blocklist entries must be strings".into()))
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(Error::Config("blocklist must be an array of strings".into())),
        };
        let clustering = match table.get("clustering") {
            None => ClusteringMode::default(),
            Some(toml::Value::String(s)) => parse_clustering(s)?,
            Some(_) => return Err(Error::Config("clustering must be a string".into())),
        };
        let cfg = PipelineConfig {
            inputs: InputPaths {
                r: path("r")?,
                h: path("h")?,
                h_population: path("h_population")?,
                b: path("b")?,
                gamma: path("gamma")?,
                n_x: path("n_x")?,
                n_y: path("n_y")?,
                sa1_to_sa2: path("sa1_to_sa2")?,
                dzn_to_sa2: path("dzn_to_sa2")?,
            },
            seed: int("seed", 0)?,
            bin_width: int("bin_width", dist::DEFAULT_BIN_WIDTH)?,
            blocklist,
            max_passes: int("max_passes", defaults.max_passes as u64)? as usize,
            stall_passes: int("stall_passes", defaults.stall_passes as u64)? as usize,
            wall_clock: Duration::from_secs(int("wall_clock_seconds", defaults.wall_clock_budget.as_secs())?),
            clustering,
            output_dir: path("output_dir")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, base)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width == 0 {
            return Err(Error::Config("bin_width must be positive".into()));
        }
        self.assignment().validate()
    }

    pub fn assignment(&self) -> AssignmentConfig {
        AssignmentConfig {
            seed: streams::derive_seed(self.seed, "assignment"),
            max_passes: self.max_passes,
            wall_clock_budget: self.wall_clock,
            stall_passes: self.stall_passes,
        }
    }

    pub fn candidate_seed(&self) -> u64 {
        streams::derive_seed(self.seed, "candidates")
    }

    /// Key/value text with paths written as given.
    pub fn render(&self) -> String {
        let mut t = toml::Table::new();
        for (k, p) in self.inputs.named() {
            t.insert(k.into(), p.display().to_string().into());
        }
        t.insert("output_dir".into(), self.output_dir.display().to_string().into());
        t.extend(self.settings());
        t.to_string()
    }

    /// Everything except paths; hashed into the manifest so that runs on the
    /// same data from different directories agree.
    fn settings(&self) -> toml::Table {
        let mut t = toml::Table::new();
        t.insert("seed".into(), (self.seed as i64).into());
        t.insert("bin_width".into(), (self.bin_width as i64).into());
        t.insert(
            "blocklist".into(),
            toml::Value::Array(self.blocklist.iter().map(|z| z.as_str().into()).collect()),
        );
        t.insert("max_passes".into(), (self.max_passes as i64).into());
        t.insert("stall_passes".into(), (self.stall_passes as i64).into());
        t.insert("wall_clock_seconds".into(), (self.wall_clock.as_secs() as i64).into());
        t.insert("clustering".into(), clustering_name(self.clustering).into());
        t
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.settings().to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// All reconstruction inputs, loaded and cleaned.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub r: ODNetwork,
    pub h: ODNetwork,
    pub h_population: PopulationTable,
    pub b: ODNetwork,
    pub gamma: ODNetwork,
    pub n_x: PopulationTable,
    pub n_y: PopulationTable,
    pub hierarchy: PartitionHierarchy,
}

/// Fails with an I/O error naming the first missing input.
pub fn check_inputs_exist(paths: &InputPaths) -> Result<()> {
    for (_, p) in paths.named() {
        if !p.is_file() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
    }
    Ok(())
}

pub fn load_inputs(paths: &InputPaths, blocklist: &BTreeSet<ZoneCode>) -> Result<LoadedInputs> {
    let fine = |p: &Path| ingest::load_network(p, Level::FineOrigin, Level::FineDest);
    let strip = |net: ODNetwork| ingest::strip_non_geographic(&net, blocklist).0;
    let loaded = LoadedInputs {
        r: strip(fine(&paths.r)?),
        h: strip(fine(&paths.h)?),
        h_population: ingest::load_population(&paths.h_population, Level::FineOrigin)?,
        b: strip(ingest::load_network(&paths.b, Level::Coarse, Level::Coarse)?),
        gamma: strip(ingest::load_network(&paths.gamma, Level::Coarse, Level::FineDest)?),
        n_x: ingest::load_population(&paths.n_x, Level::FineOrigin)?,
        n_y: ingest::load_population(&paths.n_y, Level::FineDest)?,
        hierarchy: ingest::load_hierarchy(&paths.sa1_to_sa2, &paths.dzn_to_sa2)?,
    };
    for net in [&loaded.r, &loaded.gamma] {
        if let Some((level, code)) = ingest::unmapped_zones(net, &loaded.hierarchy).into_iter().next() {
            return Err(Error::UnmappedZone { code: code.to_string(), level });
        }
    }
    Ok(loaded)
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub distribution: ConditionalWeightDistribution,
    pub candidates: Vec<CandidateEdge>,
    pub assignment: SurrogateOutcome,
    pub validation: ValidationReport,
    pub violations: Vec<String>,
}

/// Runs every stage on loaded inputs without touching the filesystem.
pub fn reconstruct(cfg: &PipelineConfig, inputs: &LoadedInputs) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let h = &inputs.hierarchy;
    let distribution = dist::build_conditional(&inputs.h, &inputs.h_population, cfg.bin_width)?;
    let deficits = candidates::compute_deficits(&inputs.r, &inputs.n_x)?;
    let cands = candidates::generate_candidates(&deficits, &distribution, &inputs.n_x, cfg.candidate_seed())?;
    let overlap = edge_intersection(&inputs.b, &aggregate(&inputs.r, h)?)?;
    let assignment = assign::build_surrogate(
        AssignmentInputs {
            r: &inputs.r,
            b: &inputs.b,
            gamma: &inputs.gamma,
            overlap: &overlap,
            n_y: &inputs.n_y,
            hierarchy: h,
        },
        &cands,
        &cfg.assignment(),
    )?;
    let violations = ConstraintCheck {
        r: &inputs.r,
        s: &assignment.surrogate,
        b: &inputs.b,
        gamma: &inputs.gamma,
        overlap: &overlap,
        n_x: &inputs.n_x,
        n_y: &inputs.n_y,
        hierarchy: h,
    }
    .violations()?;
    let validation = validate::build_report(
        &inputs.r,
        &assignment.surrogate,
        &inputs.b,
        h,
        ValidationOptions {
            clustering: cfg.clustering,
            ..ValidationOptions::default()
        },
    )?;
    Ok(PipelineOutcome {
        distribution,
        candidates: cands,
        assignment,
        validation,
        violations,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the pipeline and writes all artifacts into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    check_inputs_exist(&cfg.inputs)?;
    let out = &cfg.output_dir;
    let staging = out.join(QUARANTINE_DIR);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let inputs = load_inputs(&cfg.inputs, &cfg.blocklist)?;
    let outcome = reconstruct(cfg, &inputs)?;
    if !outcome.violations.is_empty() {
        write_text(&staging.join("violations.txt"), &outcome.violations.join("\n"))?;
        return Err(Error::Infeasible(format!(
            "surrogate violates {} constraint(s), first: {}",
            outcome.violations.len(),
            outcome.violations[0]
        )));
    }

    use artifacts::*;
    ingest::write_network(staging.join(SURROGATE), &outcome.assignment.surrogate)?;
    candidates::write_candidates(staging.join(CANDIDATES), &outcome.candidates)?;
    outcome.distribution.write_csv(staging.join(DISTRIBUTION))?;
    write_text(
        &staging.join(LEDGER_AUDIT),
        &assign::ledger_audit_csv(&outcome.assignment.initial_ledger, &outcome.assignment.ledger),
    )?;
    write_text(&staging.join(VALIDATION), &outcome.validation.render())?;
    write_text(&staging.join(ASSIGNMENT), &outcome.assignment.report.summary())?;
    write_text(&staging.join(TRACE), &outcome.assignment.report.trace_csv())?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "seed={}", cfg.seed);
    let _ = writeln!(manifest, "config_sha256={}", cfg.config_hash());
    for (name, p) in cfg.inputs.named() {
        let _ = writeln!(manifest, "input.{name}.sha256={}", file_sha256(p)?);
    }
    for name in [SURROGATE, CANDIDATES, DISTRIBUTION, LEDGER_AUDIT, VALIDATION, ASSIGNMENT] {
        let _ = writeln!(manifest, "artifact.{name}.sha256={}", file_sha256(&staging.join(name))?);
    }
    // The trace carries wall-clock timings, so it is listed without a checksum.
    let _ = writeln!(manifest, "artifact.{TRACE}.sha256=-");
    write_text(&staging.join(MANIFEST), &manifest)?;

    for name in [SURROGATE, CANDIDATES, DISTRIBUTION, LEDGER_AUDIT, VALIDATION, ASSIGNMENT, TRACE, MANIFEST] {
        let dest = out.join(name);
        std::fs::rename(staging.join(name), &dest).map_err(|e| Error::io(&dest, e))?;
    }
    std::fs::remove_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    Ok(outcome)
}

/// Writes a bundle, its manifest and a ready-to-run `pipeline.conf`.
pub fn write_synthetic_bundle(
    bundle: &synth::SurveyBundle,
    synth_cfg: &synth::SynthConfig,
    master_seed: u64,
    dir: &Path,
) -> Result<()> {
    synth::write_bundle(bundle, dir)?;
    let conf = PipelineConfig::for_bundle(Path::new(""), master_seed, PathBuf::from("out"));
    write_text(&dir.join("pipeline.conf"), &conf.render())?;
    let mut m = String::new();
    let _ = writeln!(m, "seed={master_seed}");
    let _ = writeln!(m, "synth.seed={}", synth_cfg.seed);
    let _ = writeln!(m, "synth.n_sa2={}", synth_cfg.n_sa2);
    for (k, r) in [
        ("sa1_per_sa2", synth_cfg.sa1_per_sa2),
        ("dzn_per_sa2", synth_cfg.dzn_per_sa2),
        ("sa1_population", synth_cfg.sa1_population),
    ] {
        let _ = writeln!(m, "synth.{k}={}..={}", r.lo, r.hi);
    }
    let _ = writeln!(m, "synth.employment_fraction={}", synth_cfg.employment_fraction);
    let _ = writeln!(m, "synth.employment_hub_skew={}", synth_cfg.employment_hub_skew);
    let _ = writeln!(m, "synth.gravity_exponent={}", synth_cfg.gravity_exponent);
    let totals = [
        ("truth", &bundle.truth.fine),
        ("r", &bundle.r),
        ("b", &bundle.b),
        ("gamma", &bundle.gamma),
        ("h", &bundle.h),
    ];
    for (k, net) in totals {
        let _ = writeln!(m, "commuters.{k}={}", net.total_commuters());
    }
    write_text(&dir.join("manifest.txt"), &m)
}
