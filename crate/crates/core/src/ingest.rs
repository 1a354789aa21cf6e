//! Edge-list, correspondence and population table I/O, plus the
//! non-geographic zone filter applied before any processing.
//!
//! All files are headered CSV:
//!
//! * edge lists: `origin,dest,weight`
//! * correspondences: `child,parent`
//! * populations: `zone,count`

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Level, ODNetwork, Pair, PartitionHierarchy, Weight, ZoneCode};

/// Field delimiter for the CSV files. TableBuilder exports are sometimes
/// tab- or semicolon-separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvFormat {
    pub delimiter: u8,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat { delimiter: b',' }
    }
}

/// Worker (or resident) counts for the zones of one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationTable {
    level: Level,
    counts: BTreeMap<ZoneCode, u64>,
}

impl PopulationTable {
    pub fn new(level: Level) -> Self {
        PopulationTable {
            level,
            counts: BTreeMap::new(),
        }
    }

    pub fn from_counts(level: Level, counts: BTreeMap<ZoneCode, u64>) -> Self {
        PopulationTable { level, counts }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn get(&self, zone: &ZoneCode) -> Option<u64> {
        self.counts.get(zone).copied()
    }

    pub fn insert(&mut self, zone: ZoneCode, count: u64) {
        self.counts.insert(zone, count);
    }

    pub fn counts(&self) -> &BTreeMap<ZoneCode, u64> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// What [`strip_non_geographic`] removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    pub edges_removed: u64,
    pub commuters_removed: u64,
    pub categories_matched: Vec<String>,
}

fn reader_for<R: Read>(input: R, fmt: CsvFormat) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(fmt.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Iterates data rows, yielding `(line, fields)` with the column count
/// already checked.
fn rows<R: Read>(
    rdr: &mut csv::Reader<R>,
    path: &Path,
    columns: usize,
    mut f: impl FnMut(u64, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !more {
            return Ok(());
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != columns {
            return Err(parse_err(
                path,
                line,
                format!("expected {columns} columns, found {}", record.len()),
            ));
        }
        f(line, &record)?;
    }
}

fn parse_code(path: &Path, line: u64, field: &str, what: &str) -> Result<ZoneCode> {
    if field.is_empty() {
        return Err(parse_err(path, line, format!("empty {what} code")));
    }
    Ok(ZoneCode::new(field))
}

/// Reads an edge list from any reader; `path` is only used in messages.
pub fn read_network<R: Read>(
    input: R,
    path: &Path,
    origin_level: Level,
    dest_level: Level,
    fmt: CsvFormat,
) -> Result<ODNetwork> {
    let mut rdr = reader_for(input, fmt);
    check_header(&mut rdr, path, &["origin", "dest", "weight"])?;
    let mut net = ODNetwork::new(origin_level, dest_level);
    rows(&mut rdr, path, 3, |line, rec| {
        let o = parse_code(path, line, &rec[0], "origin")?;
        let d = parse_code(path, line, &rec[1], "dest")?;
        let w: Weight = rec[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("weight {:?} is not an integer", &rec[2])))?;
        if w < 1 {
            return Err(parse_err(path, line, "weight must be at least 1"));
        }
        if net.weight(&o, &d).is_some() {
            return Err(Error::DuplicateEdge {
                path: path.to_path_buf(),
                line,
                origin: o.to_string(),
                dest: d.to_string(),
            });
        }
        net.set_weight(o, d, w);
        Ok(())
    })?;
    Ok(net)
}

pub fn load_network(path: impl AsRef<Path>, origin_level: Level, dest_level: Level) -> Result<ODNetwork> {
    load_network_with(path, origin_level, dest_level, CsvFormat::default())
}

pub fn load_network_with(
    path: impl AsRef<Path>,
    origin_level: Level,
    dest_level: Level,
    fmt: CsvFormat,
) -> Result<ODNetwork> {
    let path = path.as_ref();
    read_network(open(path)?, path, origin_level, dest_level, fmt)
}

pub fn write_network_to<W: Write>(out: W, net: &ODNetwork) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin", "dest", "weight"])?;
    for (o, d, wt) in net.edges() {
        w.write_record([o.as_str(), d.as_str(), &wt.to_string()])?;
    }
    w.flush()
}

pub fn write_network(path: impl AsRef<Path>, net: &ODNetwork) -> Result<()> {
    let path = path.as_ref();
    write_network_to(create(path)?, net).map_err(|e| Error::io(path, e))
}

fn read_correspondence<R: Read>(
    input: R,
    path: &Path,
    fmt: CsvFormat,
) -> Result<BTreeMap<ZoneCode, ZoneCode>> {
    let mut rdr = reader_for(input, fmt);
    check_header(&mut rdr, path, &["child", "parent"])?;
    let mut map: BTreeMap<ZoneCode, ZoneCode> = BTreeMap::new();
    rows(&mut rdr, path, 2, |line, rec| {
        let child = parse_code(path, line, &rec[0], "child")?;
        let parent = parse_code(path, line, &rec[1], "parent")?;
        match map.get(&child) {
            Some(existing) if *existing != parent => Err(Error::ConflictingParent {
                child: child.to_string(),
                first: existing.to_string(),
                second: parent.to_string(),
            }),
            _ => {
                map.insert(child, parent);
                Ok(())
            }
        }
    })?;
    Ok(map)
}

pub fn load_hierarchy(sa1_path: impl AsRef<Path>, dzn_path: impl AsRef<Path>) -> Result<PartitionHierarchy> {
    let (sa1_path, dzn_path) = (sa1_path.as_ref(), dzn_path.as_ref());
    let fmt = CsvFormat::default();
    let sa1 = read_correspondence(open(sa1_path)?, sa1_path, fmt)?;
    let dzn = read_correspondence(open(dzn_path)?, dzn_path, fmt)?;
    Ok(PartitionHierarchy::new(sa1, dzn))
}

pub fn write_correspondence(path: impl AsRef<Path>, map: &BTreeMap<ZoneCode, ZoneCode>) -> Result<()> {
    let path = path.as_ref();
    let io = || -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(create(path).map_err(std::io::Error::other)?);
        w.write_record(["child", "parent"])?;
        for (c, p) in map {
            w.write_record([c.as_str(), p.as_str()])?;
        }
        w.flush()
    };
    io().map_err(|e| Error::io(path, e))
}

pub fn read_population<R: Read>(input: R, path: &Path, level: Level, fmt: CsvFormat) -> Result<PopulationTable> {
    let mut rdr = reader_for(input, fmt);
    check_header(&mut rdr, path, &["zone", "count"])?;
    let mut table = PopulationTable::new(level);
    rows(&mut rdr, path, 2, |line, rec| {
        let zone = parse_code(path, line, &rec[0], "zone")?;
        let count: u64 = rec[1].parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("count {:?} is not a non-negative integer", &rec[1]),
            )
        })?;
        if table.get(&zone).is_some() {
            return Err(parse_err(path, line, format!("zone {zone} listed twice")));
        }
        table.insert(zone, count);
        Ok(())
    })?;
    Ok(table)
}

pub fn load_population(path: impl AsRef<Path>, level: Level) -> Result<PopulationTable> {
    let path = path.as_ref();
    read_population(open(path)?, path, level, CsvFormat::default())
}

pub fn write_population(path: impl AsRef<Path>, table: &PopulationTable) -> Result<()> {
    let path = path.as_ref();
    let io = || -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(create(path).map_err(std::io::Error::other)?);
        w.write_record(["zone", "count"])?;
        for (z, c) in table.counts() {
            w.write_record([z.as_str(), &c.to_string()])?;
        }
        w.flush()
    };
    io().map_err(|e| Error::io(path, e))
}

/// Removes every edge touching a blocklisted code on either side.
pub fn strip_non_geographic(net: &ODNetwork, blocklist: &BTreeSet<ZoneCode>) -> (ODNetwork, PreprocessReport) {
    let mut report = PreprocessReport::default();
    if blocklist.is_empty() {
        return (net.clone(), report);
    }
    let mut matched = BTreeSet::new();
    let kept = net.filter(|o, d, w| {
        let hit_o = blocklist.contains(o);
        let hit_d = blocklist.contains(d);
        if hit_o {
            matched.insert(o.to_string());
        }
        if hit_d {
            matched.insert(d.to_string());
        }
        if hit_o || hit_d {
            report.edges_removed += 1;
            report.commuters_removed += w;
            false
        } else {
            true
        }
    });
    report.categories_matched = matched.into_iter().collect();
    (kept, report)
}

/// Edges lighter than `min_cell`. Sources that claim ABS provenance should
/// never contain any.
pub fn small_edges(net: &ODNetwork, min_cell: Weight) -> Vec<Pair> {
    net.edges()
        .filter(|(_, _, w)| *w < min_cell)
        .map(|(o, d, _)| (o.clone(), d.clone()))
        .collect()
}

/// Zones of `net` on the given side that the hierarchy cannot place.
pub fn unmapped_zones(net: &ODNetwork, hierarchy: &PartitionHierarchy) -> Vec<(Level, ZoneCode)> {
    let mut out = BTreeSet::new();
    for (o, d, _) in net.edges() {
        if hierarchy.parent(net.origin_level(), o).is_none() {
            out.insert((net.origin_level(), o.clone()));
        }
        if hierarchy.parent(net.dest_level(), d).is_none() {
            out.insert((net.dest_level(), d.clone()));
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    fn net(text: &str) -> Result<ODNetwork> {
        read_network(text.as_bytes(), p(), Level::FineOrigin, Level::FineDest, CsvFormat::default())
    }

    #[test]
    fn reads_valid_edge_list() {
        let n = net("origin,dest,weight\na,x,3\na,y,4\nb,x,5\n").unwrap();
        assert_eq!(n.edge_count(), 3);
        assert_eq!(n.total_commuters(), 12);
    }

    #[test]
    fn zero_weight_reports_line() {
        match net("origin,dest,weight\na,x,3\nb,x,0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(
            net("origin,dest,weight\na,x,three\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            net("origin,dest,weight\na,x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            net("origin,dest,weight\na,x,-4\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(net("from,to,w\na,x,3\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_edge_rejected() {
        assert!(matches!(
            net("origin,dest,weight\na,x,3\na,x,4\n"),
            Err(Error::DuplicateEdge { line: 3, .. })
        ));
    }

    #[test]
    fn alternate_delimiter() {
        let n = read_network(
            "origin\tdest\tweight\na\tx\t7\n".as_bytes(),
            p(),
            Level::FineOrigin,
            Level::FineDest,
            CsvFormat { delimiter: b'\t' },
        )
        .unwrap();
        assert_eq!(n.total_commuters(), 7);
    }

    #[test]
    fn write_then_read_is_byte_stable() {
        let text = "origin,dest,weight\na,x,3\na,y,4\nb,x,5\n";
        let n = net(text).unwrap();
        let mut buf = Vec::new();
        write_network_to(&mut buf, &n).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn correspondence_conflict() {
        let ok = read_correspondence("child,parent\na,X\nb,X\n".as_bytes(), p(), CsvFormat::default())
            .unwrap();
        assert_eq!(ok.len(), 2);
        assert!(matches!(
            read_correspondence("child,parent\na,X\na,Y\n".as_bytes(), p(), CsvFormat::default()),
            Err(Error::ConflictingParent { .. })
        ));
    }

    #[test]
    fn population_tables() {
        let t = read_population("zone,count\n".as_bytes(), p(), Level::FineOrigin, CsvFormat::default())
            .unwrap();
        assert!(t.is_empty());
        assert_eq!(t.total(), 0);
        let t = read_population(
            "zone,count\na,10\nb,0\n".as_bytes(),
            p(),
            Level::FineOrigin,
            CsvFormat::default(),
        )
        .unwrap();
        assert_eq!(t.total(), 10);
        assert_eq!(t.len(), 2);
        for bad in ["zone,count\na,-1\n", "zone,count\na,1.5\n"] {
            assert!(matches!(
                read_population(bad.as_bytes(), p(), Level::FineOrigin, CsvFormat::default()),
                Err(Error::Parse { line: 2, .. })
            ));
        }
    }

    #[test]
    fn strip_blocklist() {
        let n = net("origin,dest,weight\na,x,3\na,nua,5\nb,x,4\n").unwrap();
        let (same, r) = strip_non_geographic(&n, &BTreeSet::new());
        assert_eq!(same, n);
        assert_eq!(r, PreprocessReport::default());

        let block: BTreeSet<ZoneCode> = [ZoneCode::from("nua")].into_iter().collect();
        let (kept, r) = strip_non_geographic(&n, &block);
        assert_eq!(r.edges_removed, 1);
        assert_eq!(r.commuters_removed, 5);
        assert_eq!(r.categories_matched, vec!["nua".to_string()]);
        assert_eq!(kept.total_commuters() + r.commuters_removed, n.total_commuters());
    }

    #[test]
    fn flags_small_edges() {
        let n = net("origin,dest,weight\na,x,1\na,y,2\nb,x,3\n").unwrap();
        assert_eq!(small_edges(&n, 3).len(), 2);
    }
}
