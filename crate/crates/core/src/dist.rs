//! Edge-weight distributions conditioned on origin population.
//!
//! Origins are grouped into equal-width population bins; each bin holds the
//! normalized histogram of the out-edge weights of its origins. Sampling is
//! truncated: only weights up to a caller-supplied ceiling are eligible, and
//! the surviving probabilities are renormalized.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::PopulationTable;
use crate::network::{ODNetwork, Weight};

pub const DEFAULT_BIN_WIDTH: u64 = 25;

/// One population bin `[lo, hi)` with its weight histogram, sorted by weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBin {
    pub lo: u64,
    pub hi: u64,
    pub support: Vec<(Weight, f64)>,
}

impl WeightBin {
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn probability(&self, weight: Weight) -> f64 {
        self.support
            .binary_search_by_key(&weight, |(w, _)| *w)
            .map_or(0.0, |i| self.support[i].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalWeightDistribution {
    bin_width: u64,
    /// Contiguous bins; the first and last are non-empty.
    bins: Vec<WeightBin>,
}

impl ConditionalWeightDistribution {
    pub fn bin_width(&self) -> u64 {
        self.bin_width
    }

    pub fn bins(&self) -> &[WeightBin] {
        &self.bins
    }

    pub fn support_max(&self) -> Option<Weight> {
        self.bins
            .iter()
            .filter_map(|b| b.support.last().map(|(w, _)| *w))
            .max()
    }

    pub fn support_min(&self) -> Option<Weight> {
        self.bins
            .iter()
            .filter_map(|b| b.support.first().map(|(w, _)| *w))
            .min()
    }

    pub fn is_usable(&self) -> bool {
        self.bins.iter().any(|b| !b.is_empty())
    }

    fn from_counts(bin_width: u64, counts: BTreeMap<u64, BTreeMap<Weight, u64>>) -> Self {
        let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
            return ConditionalWeightDistribution {
                bin_width,
                bins: Vec::new(),
            };
        };
        let bins = (first..=last)
            .map(|idx| {
                let support = counts.get(&idx).map_or_else(Vec::new, |hist| {
                    let total: u64 = hist.values().sum();
                    hist.iter()
                        .map(|(w, c)| (*w, *c as f64 / total as f64))
                        .collect()
                });
                WeightBin {
                    lo: idx * bin_width,
                    hi: (idx + 1) * bin_width,
                    support,
                }
            })
            .collect();
        ConditionalWeightDistribution { bin_width, bins }
    }

    /// The bin used for an origin of population `n_x`: its own bin if
    /// non-empty, otherwise the nearest non-empty bin by center distance,
    /// preferring the lower one on ties. Out-of-range populations clamp.
    pub fn bin_for(&self, n_x: u64) -> Result<&WeightBin> {
        if self.bins.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let first = self.bins[0].lo / self.bin_width;
        let last = first + self.bins.len() as u64 - 1;
        let home = (n_x / self.bin_width).clamp(first, last) - first;
        let home = home as usize;
        for d in 0..self.bins.len() {
            if let Some(b) = home.checked_sub(d).map(|i| &self.bins[i]) {
                if !b.is_empty() {
                    return Ok(b);
                }
            }
            if let Some(b) = self.bins.get(home + d) {
                if !b.is_empty() {
                    return Ok(b);
                }
            }
        }
        Err(Error::EmptyDistribution)
    }

    /// Draws a weight for an origin of population `n_x`, never exceeding
    /// `max_weight`. If no supported weight fits, `max_weight` is returned.
    pub fn sample_weight<R: Rng + ?Sized>(&self, n_x: u64, max_weight: Weight, rng: &mut R) -> Result<Weight> {
        let bin = self.bin_for(n_x)?;
        let eligible = bin.support.partition_point(|(w, _)| *w <= max_weight);
        if eligible == 0 {
            return Ok(max_weight);
        }
        let support = &bin.support[..eligible];
        let mass: f64 = support.iter().map(|(_, p)| p).sum();
        let target = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        for (w, p) in support {
            acc += p;
            if target < acc {
                return Ok(*w);
            }
        }
        Ok(support[eligible - 1].0)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "weight", "probability"])?;
        for bin in &self.bins {
            for (wt, p) in &bin.support {
                w.write_record([
                    bin.lo.to_string(),
                    bin.hi.to_string(),
                    wt.to_string(),
                    p.to_string(),
                ])?;
            }
        }
        w.flush()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a dump produced by [`write_csv_to`](Self::write_csv_to).
    /// Probabilities are stored in shortest round-trip form, so the result
    /// is identical to the distribution that was written.
    pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["bin_lo", "bin_hi", "weight", "probability"] {
            return Err(err(1, "expected header bin_lo,bin_hi,weight,probability".into()));
        }
        let mut width = None;
        let mut bins: BTreeMap<u64, Vec<(Weight, f64)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 4 {
                return Err(err(line, format!("expected 4 columns, found {}", rec.len())));
            }
            let int = |i: usize| -> Result<u64> {
                rec[i]
                    .parse()
                    .map_err(|_| err(line, format!("{:?} is not an integer", &rec[i])))
            };
            let (lo, hi, wt) = (int(0)?, int(1)?, int(2)?);
            let p: f64 = rec[3]
                .parse()
                .map_err(|_| err(line, format!("{:?} is not a probability", &rec[3])))?;
            if hi <= lo || !(0.0..=1.0).contains(&p) {
                return Err(err(line, "invalid bin or probability".into()));
            }
            match width {
                None => width = Some(hi - lo),
                Some(bw) if bw != hi - lo || lo % bw != 0 => {
                    return Err(err(line, "inconsistent bin width".into()))
                }
                _ => {}
            }
            bins.entry(lo).or_default().push((wt, p));
        }
        let Some(bin_width) = width else {
            return Ok(ConditionalWeightDistribution {
                bin_width: DEFAULT_BIN_WIDTH,
                bins: Vec::new(),
            });
        };
        let first = *bins.keys().next().unwrap() / bin_width;
        let last = *bins.keys().next_back().unwrap() / bin_width;
        let out = (first..=last)
            .map(|idx| {
                let mut support = bins.remove(&(idx * bin_width)).unwrap_or_default();
                support.sort_by_key(|(w, _)| *w);
                WeightBin {
                    lo: idx * bin_width,
                    hi: (idx + 1) * bin_width,
                    support,
                }
            })
            .collect();
        Ok(ConditionalWeightDistribution {
            bin_width,
            bins: out,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

/// Builds `P(w | N_x)` from the out-edges of `reference`, binning origins by
/// their entry in `populations`.
pub fn build_conditional(
    reference: &ODNetwork,
    populations: &PopulationTable,
    bin_width: u64,
) -> Result<ConditionalWeightDistribution> {
    if bin_width == 0 {
        return Err(Error::Config("bin width must be at least 1".into()));
    }
    let mut counts: BTreeMap<u64, BTreeMap<Weight, u64>> = BTreeMap::new();
    for (origin, _, w) in reference.edges() {
        let pop = populations
            .get(origin)
            .ok_or_else(|| Error::MissingPopulation(origin.to_string()))?;
        *counts
            .entry(pop / bin_width)
            .or_default()
            .entry(w)
            .or_insert(0) += 1;
    }
    Ok(ConditionalWeightDistribution::from_counts(bin_width, counts))
}
