use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use surrogate_core::assign::{self, AssignmentConfig, AssignmentInputs, ConstraintCheck};
use surrogate_core::candidates;
use surrogate_core::dist::{self, ConditionalWeightDistribution};
use surrogate_core::ingest;
use surrogate_core::network::{aggregate, edge_intersection};
use surrogate_core::pipeline::{self, PipelineConfig};
use surrogate_core::streams;
use surrogate_core::synth::{self, IntRange, SynthConfig};
use surrogate_core::validate::{self, CoarseViews, ValidationOptions};
use surrogate_core::{Error, ErrorKind, Level, PartitionHierarchy};

/// Reconstruct a fine-resolution commuter network from perturbed census tables.
///
/// Exit codes: 0 success, 2 configuration error, 3 data validation error,
/// 4 constraint infeasibility.
#[derive(Parser)]
#[command(name = "surrogate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic census bundle with a ready-to-run pipeline.conf.
    Synth(SynthArgs),
    /// Check input formats and correspondence coverage without computing anything.
    IngestCheck {
        /// Pipeline config listing the inputs.
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the population-conditioned weight distribution from a previous census.
    BuildDist {
        /// Previous-census fine network (origin,dest,weight).
        #[arg(long)]
        h: PathBuf,
        /// Worker counts of the previous census (zone,count).
        #[arg(long)]
        population: PathBuf,
        #[arg(long, default_value_t = dist::DEFAULT_BIN_WIDTH)]
        bin_width: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample candidate edges covering each origin's missing workers.
    GenCandidates {
        /// Released fine network.
        #[arg(long)]
        r: PathBuf,
        /// Current worker counts per SA1.
        #[arg(long)]
        n_x: PathBuf,
        /// Distribution CSV written by build-dist.
        #[arg(long)]
        dist: PathBuf,
        /// Master seed; the candidate stream is derived from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign candidates to destination zones under the coarse budgets.
    Assign(AssignArgs),
    /// Compare the coarse views of the fine network, the surrogate and the coarse reference.
    Validate(ValidateArgs),
    /// Run every stage from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config and the environment.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_sa2)]
    n_sa2: usize,
    /// SA1 zones per SA2, as MIN,MAX.
    #[arg(long, value_parser = parse_range)]
    sa1_per_sa2: Option<IntRange>,
    /// Destination zones per SA2, as MIN,MAX.
    #[arg(long, value_parser = parse_range)]
    dzn_per_sa2: Option<IntRange>,
    #[arg(long, default_value_t = SynthConfig::default().gravity_exponent)]
    gravity_exponent: f64,
    #[arg(long, default_value_t = SynthConfig::default().employment_hub_skew)]
    hub_skew: f64,
}

#[derive(Args)]
struct Hierarchy {
    #[arg(long)]
    sa1_to_sa2: PathBuf,
    #[arg(long)]
    dzn_to_sa2: PathBuf,
}

impl Hierarchy {
    fn load(&self) -> surrogate_core::Result<PartitionHierarchy> {
        ingest::load_hierarchy(&self.sa1_to_sa2, &self.dzn_to_sa2)
    }
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    r: PathBuf,
    /// Coarse SA2→SA2 network.
    #[arg(long)]
    b: PathBuf,
    /// SA2→DZN network.
    #[arg(long)]
    gamma: PathBuf,
    /// Worker counts per SA1, used only for the post-hoc constraint check.
    #[arg(long)]
    n_x: PathBuf,
    /// Worker counts per DZN.
    #[arg(long)]
    n_y: PathBuf,
    #[command(flatten)]
    hierarchy: Hierarchy,
    /// Candidate CSV written by gen-candidates.
    #[arg(long)]
    candidates: PathBuf,
    /// Master seed; the assignment stream is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = AssignmentConfig::default().stall_passes)]
    stall_passes: usize,
    #[arg(long, default_value_t = AssignmentConfig::default().max_passes)]
    max_passes: usize,
    #[arg(long, default_value_t = AssignmentConfig::default().wall_clock_budget.as_secs())]
    wall_clock_seconds: u64,
    /// Surrogate edge CSV.
    #[arg(long)]
    out: PathBuf,
    /// Convergence trace CSV (pass,elapsed_seconds,unassigned_commuters).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Key/value assignment summary.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Initial and remaining budgets per coarse pair and destination zone.
    #[arg(long)]
    ledger_audit: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    r: PathBuf,
    /// Surrogate network.
    #[arg(long)]
    s: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    hierarchy: Hierarchy,
    /// Restrict output to these pairs, e.g. B,A. May be repeated.
    #[arg(long = "pair", value_parser = parse_pair)]
    pairs: Vec<(String, String)>,
    /// symmetrize-max or directed.
    #[arg(long, default_value = "symmetrize-max")]
    clustering: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<IntRange, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo = lo.trim().parse().map_err(|_| format!("bad integer {lo:?}"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad integer {hi:?}"))?;
    Ok(IntRange::new(lo, hi))
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (l, r) = s.split_once(',').ok_or("expected LEFT,RIGHT")?;
    for n in [l, r] {
        if !matches!(n, "A" | "B" | "C") {
            return Err(format!("unknown network {n:?}; expected A, B or C"));
        }
    }
    Ok((l.to_string(), r.to_string()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_synth(a: SynthArgs) -> anyhow::Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_sa2: a.n_sa2,
        sa1_per_sa2: a.sa1_per_sa2.unwrap_or(defaults.sa1_per_sa2),
        dzn_per_sa2: a.dzn_per_sa2.unwrap_or(defaults.dzn_per_sa2),
        gravity_exponent: a.gravity_exponent,
        employment_hub_skew: a.hub_skew,
        seed: streams::derive_seed(a.seed, "synth"),
        ..defaults
    };
    let bundle = synth::make_survey_bundle(&cfg, &Default::default())?;
    pipeline::write_synthetic_bundle(&bundle, &cfg, a.seed, &a.out)?;
    println!(
        "wrote bundle to {} ({} SA1, {} DZN, {} workers)",
        a.out.display(),
        bundle.n_x().len(),
        bundle.n_y().len(),
        bundle.n_x().total()
    );
    Ok(())
}

fn run_ingest_check(config: &Path) -> anyhow::Result<()> {
    let cfg = PipelineConfig::load(config)?;
    pipeline::check_inputs_exist(&cfg.inputs)?;
    let inputs = pipeline::load_inputs(&cfg.inputs, &cfg.blocklist)?;
    let unmapped_h = ingest::unmapped_zones(&inputs.h, &inputs.hierarchy).len();
    for (name, net) in [("r", &inputs.r), ("h", &inputs.h), ("b", &inputs.b), ("gamma", &inputs.gamma)] {
        println!(
            "{name}: {} edges, {} commuters, {} below min cell",
            net.edge_count(),
            net.total_commuters(),
            ingest::small_edges(net, candidates::MIN_CELL).len()
        );
    }
    println!("unmapped zones in h: {unmapped_h}");
    println!("ok");
    Ok(())
}

fn run_assign(a: AssignArgs) -> anyhow::Result<()> {
    let h = a.hierarchy.load()?;
    let r = ingest::load_network(&a.r, Level::FineOrigin, Level::FineDest)?;
    let b = ingest::load_network(&a.b, Level::Coarse, Level::Coarse)?;
    let gamma = ingest::load_network(&a.gamma, Level::Coarse, Level::FineDest)?;
    let n_x = ingest::load_population(&a.n_x, Level::FineOrigin)?;
    let n_y = ingest::load_population(&a.n_y, Level::FineDest)?;
    let cands = candidates::load_candidates(&a.candidates)?;
    let overlap = edge_intersection(&b, &aggregate(&r, &h)?)?;
    let cfg = AssignmentConfig {
        seed: streams::derive_seed(a.seed, "assignment"),
        max_passes: a.max_passes,
        wall_clock_budget: Duration::from_secs(a.wall_clock_seconds),
        stall_passes: a.stall_passes,
    };
    let inputs = AssignmentInputs {
        r: &r,
        b: &b,
        gamma: &gamma,
        overlap: &overlap,
        n_y: &n_y,
        hierarchy: &h,
    };
    let out = assign::build_surrogate(inputs, &cands, &cfg)?;
    let violations = ConstraintCheck {
        r: &r,
        s: &out.surrogate,
        b: &b,
        gamma: &gamma,
        overlap: &overlap,
        n_x: &n_x,
        n_y: &n_y,
        hierarchy: &h,
    }
    .violations()?;
    if let Some(v) = violations.first() {
        return Err(Error::Infeasible(format!("{} constraint violation(s), first: {v}", violations.len())).into());
    }
    ingest::write_network(&a.out, &out.surrogate)?;
    if let Some(p) = &a.trace {
        write_file(p, &out.report.trace_csv())?;
    }
    if let Some(p) = &a.ledger_audit {
        write_file(p, &assign::ledger_audit_csv(&out.initial_ledger, &out.ledger))?;
    }
    match &a.report {
        Some(p) => write_file(p, &out.report.summary())?,
        None => print!("{}", out.report.summary()),
    }
    Ok(())
}

fn run_validate(a: ValidateArgs) -> anyhow::Result<()> {
    let h = a.hierarchy.load()?;
    let r = ingest::load_network(&a.r, Level::FineOrigin, Level::FineDest)?;
    let s = ingest::load_network(&a.s, Level::FineOrigin, Level::FineDest)?;
    let b = ingest::load_network(&a.b, Level::Coarse, Level::Coarse)?;
    let clustering = pipeline::parse_clustering(&a.clustering)?;
    let text = if a.pairs.is_empty() {
        let opts = ValidationOptions {
            clustering,
            ..ValidationOptions::default()
        };
        validate::build_report(&r, &s, &b, &h, opts)?.render()
    } else {
        let views = CoarseViews::new(&r, &s, &b, &h)?;
        let mut t = String::from("pair,corr2d,mse\n");
        for (l, rr) in &a.pairs {
            let (c, m) = views.pair_metrics(l, rr)?;
            t.push_str(&format!("{l}-{rr},{c},{m}\n"));
        }
        t
    };
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::IngestCheck { config } => run_ingest_check(&config),
        Command::BuildDist {
            h,
            population,
            bin_width,
            out,
        } => {
            let net = ingest::load_network(&h, Level::FineOrigin, Level::FineDest)?;
            let pop = ingest::load_population(&population, Level::FineOrigin)?;
            dist::build_conditional(&net, &pop, bin_width)?.write_csv(&out)?;
            Ok(())
        }
        Command::GenCandidates {
            r,
            n_x,
            dist,
            seed,
            out,
        } => {
            let r = ingest::load_network(&r, Level::FineOrigin, Level::FineDest)?;
            let n_x = ingest::load_population(&n_x, Level::FineOrigin)?;
            let dist = ConditionalWeightDistribution::load_csv(&dist)?;
            let deficits = candidates::compute_deficits(&r, &n_x)?;
            let cands = candidates::generate_candidates(&deficits, &dist, &n_x, streams::derive_seed(seed, "candidates"))?;
            candidates::write_candidates(&out, &cands)?;
            println!(
                "{} candidates carrying {} workers",
                cands.len(),
                cands.iter().map(|c| c.weight).sum::<u64>()
            );
            Ok(())
        }
        Command::Assign(a) => run_assign(a),
        Command::Validate(a) => run_validate(a),
        Command::Pipeline {
            config,
            seed,
            output_dir,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let out = pipeline::run_pipeline(&cfg)?;
            print!("{}", out.assignment.report.summary());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Infeasible) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::MissingPopulation("x".into())), 3);
        assert_eq!(code(Error::Infeasible("x".into())), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 3);
    }

    #[test]
    fn pair_and_range_parsing() {
        assert_eq!(parse_pair("B,A").unwrap(), ("B".into(), "A".into()));
        assert!(parse_pair("B,Z").is_err());
        assert_eq!(parse_range("2,5").unwrap(), IntRange::new(2, 5));
        assert!(parse_range("2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
