//! Candidate edges: `(origin, weight)` pairs that account for workers the
//! perturbed fine network lost from each origin.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::dist::ConditionalWeightDistribution;
use crate::error::{Error, Result};
use crate::ingest::PopulationTable;
use crate::network::{out_strengths, ODNetwork, Weight, ZoneCode};
use crate::streams;

/// Smallest edge weight that can appear in a released table.
pub const MIN_CELL: Weight = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateEdge {
    pub origin: ZoneCode,
    pub weight: Weight,
}

/// Missing workers per origin, `N_x - out_strength(x)`. Negative when the
/// perturbed network over-reports an origin.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeficitTable {
    pub deficits: BTreeMap<ZoneCode, i64>,
}

impl DeficitTable {
    /// Sum of positive deficits.
    pub fn missing_commuters(&self) -> u64 {
        self.deficits.values().filter(|d| **d > 0).map(|d| *d as u64).sum()
    }
}

pub fn compute_deficits(r: &ODNetwork, populations: &PopulationTable) -> Result<DeficitTable> {
    let out = out_strengths(r);
    if let Some(orphan) = out.keys().find(|x| populations.get(x).is_none()) {
        return Err(Error::MissingPopulation(orphan.to_string()));
    }
    let deficits = populations
        .counts()
        .iter()
        .map(|(x, n)| {
            let assigned = out.get(x).copied().unwrap_or(0);
            (x.clone(), *n as i64 - assigned as i64)
        })
        .collect();
    Ok(DeficitTable { deficits })
}

/// Draws candidates for one origin until less than [`MIN_CELL`] workers
/// remain unaccounted for.
fn candidates_for_origin(
    origin: &ZoneCode,
    deficit: i64,
    population: u64,
    dist: &ConditionalWeightDistribution,
    master_seed: u64,
    out: &mut Vec<CandidateEdge>,
) -> Result<()> {
    if deficit < MIN_CELL as i64 {
        return Ok(());
    }
    let mut rng = streams::stream(master_seed, origin.as_str());
    let mut remaining = deficit as u64;
    while remaining >= MIN_CELL {
        let w = dist.sample_weight(population, remaining, &mut rng)?;
        debug_assert!(w >= 1 && w <= remaining);
        remaining -= w;
        out.push(CandidateEdge {
            origin: origin.clone(),
            weight: w,
        });
    }
    Ok(())
}

/// Generates the candidate multiset, sorted by origin then weight. Each
/// origin draws from its own stream keyed by its code, so its candidates do
/// not depend on which other origins are present.
pub fn generate_candidates(
    deficits: &DeficitTable,
    dist: &ConditionalWeightDistribution,
    populations: &PopulationTable,
    seed: u64,
) -> Result<Vec<CandidateEdge>> {
    if !dist.is_usable() {
        return Err(Error::EmptyDistribution);
    }
    let mut out = Vec::new();
    for (origin, deficit) in &deficits.deficits {
        let pop = populations
            .get(origin)
            .ok_or_else(|| Error::MissingPopulation(origin.to_string()))?;
        candidates_for_origin(origin, *deficit, pop, dist, seed, &mut out)?;
    }
    out.sort();
    Ok(out)
}

pub fn write_candidates_to<W: Write>(out: W, candidates: &[CandidateEdge]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin", "weight"])?;
    for c in candidates {
        w.write_record([c.origin.as_str(), &c.weight.to_string()])?;
    }
    w.flush()
}

pub fn write_candidates(path: impl AsRef<Path>, candidates: &[CandidateEdge]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_candidates_to(std::io::BufWriter::new(file), candidates).map_err(|e| Error::io(path, e))
}

pub fn read_candidates<R: Read>(input: R, path: &Path) -> Result<Vec<CandidateEdge>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["origin", "weight"] {
        return Err(err(1, "expected header origin,weight".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(err(line, "expected origin,weight".into()));
        }
        let weight: Weight = rec[1]
            .parse()
            .map_err(|_| err(line, format!("{:?} is not an integer", &rec[1])))?;
        if weight == 0 {
            return Err(err(line, "candidate weight must be positive".into()));
        }
        out.push(CandidateEdge {
            origin: ZoneCode::new(&rec[0]),
            weight,
        });
    }
    Ok(out)
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateEdge>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_candidates(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::build_conditional;
    use crate::network::Level;

    fn z(s: &str) -> ZoneCode {
        ZoneCode::from(s)
    }

    fn table(entries: &[(&str, u64)]) -> PopulationTable {
        PopulationTable::from_counts(
            Level::FineOrigin,
            entries.iter().map(|(k, v)| (z(k), *v)).collect(),
        )
    }

    fn three_four_dist() -> ConditionalWeightDistribution {
        let h = ODNetwork::from_edges(
            Level::FineOrigin,
            Level::FineDest,
            [("h", "x", 3), ("h", "y", 4), ("h", "z", 9)],
        )
        .unwrap();
        build_conditional(&h, &table(&[("h", 20)]), 25).unwrap()
    }

    #[test]
    fn deficit_hand_case() {
        let r = ODNetwork::from_edges(Level::FineOrigin, Level::FineDest, [("a", "x", 3), ("a", "y", 4)])
            .unwrap();
        let d = compute_deficits(&r, &table(&[("a", 20), ("b", 6)])).unwrap();
        assert_eq!(d.deficits[&z("a")], 13);
        assert_eq!(d.deficits[&z("b")], 6);
        assert_eq!(d.missing_commuters(), 19);
    }

    #[test]
    fn origin_without_population_is_error() {
        let r = ODNetwork::from_edges(Level::FineOrigin, Level::FineDest, [("a", "x", 3)]).unwrap();
        assert!(matches!(
            compute_deficits(&r, &table(&[])),
            Err(Error::MissingPopulation(_))
        ));
    }

    #[test]
    fn small_deficits_generate_nothing() {
        let deficits = DeficitTable {
            deficits: [(z("a"), 2), (z("b"), -5)].into_iter().collect(),
        };
        let c = generate_candidates(&deficits, &three_four_dist(), &table(&[("a", 20), ("b", 20)]), 1)
            .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn deficit_of_three_yields_one_candidate() {
        let deficits = DeficitTable {
            deficits: [(z("a"), 3)].into_iter().collect(),
        };
        for seed in 0..20 {
            let c = generate_candidates(&deficits, &three_four_dist(), &table(&[("a", 20)]), seed)
                .unwrap();
            assert_eq!(
                c,
                vec![CandidateEdge {
                    origin: z("a"),
                    weight: 3
                }]
            );
        }
    }

    #[test]
    fn accounting_identity() {
        let deficits = DeficitTable {
            deficits: (0..50).map(|i| (z(&format!("o{i:02}")), i as i64 * 7 - 20)).collect(),
        };
        let pops = table(
            &(0..50)
                .map(|i| (format!("o{i:02}"), 20u64))
                .collect::<Vec<_>>()
                .iter()
                .map(|(k, v)| (k.as_str(), *v))
                .collect::<Vec<_>>(),
        );
        let c = generate_candidates(&deficits, &three_four_dist(), &pops, 11).unwrap();
        for (x, d) in &deficits.deficits {
            let s: u64 = c.iter().filter(|m| &m.origin == x).map(|m| m.weight).sum();
            if *d >= 3 {
                let slack = *d - s as i64;
                assert!((0..3).contains(&slack), "{x}: deficit {d}, assigned {s}");
            } else {
                assert_eq!(s, 0);
            }
        }
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn per_origin_streams_ignore_other_origins() {
        let dist = three_four_dist();
        let pops = table(&[("a", 20), ("b", 20)]);
        let both = DeficitTable {
            deficits: [(z("a"), 40), (z("b"), 40)].into_iter().collect(),
        };
        let only_b = DeficitTable {
            deficits: [(z("b"), 40)].into_iter().collect(),
        };
        let c_both = generate_candidates(&both, &dist, &pops, 5).unwrap();
        let c_b = generate_candidates(&only_b, &dist, &pops, 5).unwrap();
        let b_from_both: Vec<_> = c_both.into_iter().filter(|c| c.origin == z("b")).collect();
        assert_eq!(b_from_both, c_b);
    }

    #[test]
    fn csv_round_trip() {
        let c = vec![
            CandidateEdge {
                origin: z("a"),
                weight: 3,
            },
            CandidateEdge {
                origin: z("b"),
                weight: 12,
            },
        ];
        let mut buf = Vec::new();
        write_candidates_to(&mut buf, &c).unwrap();
        assert_eq!(read_candidates(buf.as_slice(), Path::new("m.csv")).unwrap(), c);
    }
}
