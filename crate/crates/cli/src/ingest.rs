//! CSV input and output of functional data sets.
//!
//! Subjects file: `id,y,z1,...,zq`, one row per subject.
//! Functional file (long format): `id,channel,s,value`, channels numbered
//! from 1, every `(id, channel)` pair sampled on the same grid in `[0, 1]`.
//! Lines starting with `#` are comments; a `# channels: d` comment in the
//! functional file is checked against the largest channel index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hdfp::FunctionalDataset;
use nalgebra::{DMatrix, DVector};

use crate::error::{usage, CliError, CliResult};

/// A data set together with the subject ids in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub ids: Vec<String>,
    pub dataset: FunctionalDataset,
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| usage!("cannot open {}: {e}", path.display()))
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn number(field: &str, what: &str, path: &Path, line: u64) -> CliResult<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| usage!("{}:{line}: {what} '{field}' is not a number", path.display()))?;
    if !v.is_finite() {
        return Err(usage!("{}:{line}: {what} '{field}' is not finite", path.display()));
    }
    Ok(v)
}

fn record(r: Result<csv::StringRecord, csv::Error>, path: &Path) -> CliResult<csv::StringRecord> {
    r.map_err(|e| {
        let line = e.position().map_or(0, |p| p.line());
        usage!("{}:{line}: {e}", path.display())
    })
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> CliResult<usize> {
    let header = rdr.headers().map_err(|e| usage!("{}: cannot read header: {e}", path.display()))?;
    let found: Vec<&str> = header.iter().collect();
    if found.len() < expected.len() || found[..expected.len()] != *expected {
        return Err(usage!(
            "{}:1: header must start with {}, found {}",
            path.display(),
            expected.join(","),
            found.join(",")
        ));
    }
    Ok(found.len())
}

/// Subject ids sort numerically when they are all integers, otherwise as text.
fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().expect("checked"));
    } else {
        ids.sort();
    }
}

fn declared_channels(path: &Path) -> CliResult<Option<usize>> {
    let file = BufReader::new(open(path)?);
    for (i, line) in file.lines().enumerate() {
        let line = line.map_err(|e| usage!("cannot read {}: {e}", path.display()))?;
        let Some(rest) = line.trim().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = rest.split_once([':', '=']) {
            if key.trim() == "channels" {
                let d = value
                    .trim()
                    .parse()
                    .map_err(|_| usage!("{}:{}: channel count '{}' is not an integer", path.display(), i + 1, value.trim()))?;
                return Ok(Some(d));
            }
        }
    }
    Ok(None)
}

pub fn ingest_csv(subjects: &Path, functional: &Path) -> CliResult<Ingested> {
    let mut rdr = reader(subjects)?;
    let width = check_header(&mut rdr, subjects, &["id", "y"])?;
    let q = width - 2;
    let mut rows: BTreeMap<String, (f64, Vec<f64>, u64)> = BTreeMap::new();
    for r in rdr.records() {
        let rec = record(r, subjects)?;
        let line = line_of(&rec);
        if rec.len() != width {
            return Err(usage!("{}:{line}: expected {width} fields, found {}", subjects.display(), rec.len()));
        }
        let id = rec[0].to_string();
        let y = number(&rec[1], "outcome", subjects, line)?;
        let z = (0..q)
            .map(|k| number(&rec[2 + k], "covariate", subjects, line))
            .collect::<CliResult<Vec<_>>>()?;
        if let Some((_, _, first)) = rows.insert(id.clone(), (y, z, line)) {
            return Err(usage!("{}:{line}: subject '{id}' already defined on line {first}", subjects.display()));
        }
    }
    if rows.is_empty() {
        return Err(usage!("{}: no subjects", subjects.display()));
    }

    // id -> channel -> [(s, value, line)]
    let mut curves: BTreeMap<String, BTreeMap<usize, Vec<(f64, f64, u64)>>> = BTreeMap::new();
    let mut rdr = reader(functional)?;
    check_header(&mut rdr, functional, &["id", "channel", "s", "value"])?;
    for r in rdr.records() {
        let rec = record(r, functional)?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(usage!("{}:{line}: expected 4 fields, found {}", functional.display(), rec.len()));
        }
        let id = rec[0].to_string();
        if !rows.contains_key(&id) {
            return Err(usage!("{}:{line}: subject '{id}' is not in {}", functional.display(), subjects.display()));
        }
        let channel: usize = rec[1]
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| usage!("{}:{line}: channel '{}' is not a positive integer", functional.display(), &rec[1]))?;
        let s = number(&rec[2], "grid point", functional, line)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(usage!("{}:{line}: grid point {s} outside [0, 1]", functional.display()));
        }
        let value = number(&rec[3], "value", functional, line)?;
        curves.entry(id).or_default().entry(channel).or_default().push((s, value, line));
    }

    let d = curves.values().flat_map(|m| m.keys().copied()).max().unwrap_or(0);
    if d == 0 {
        return Err(usage!("{}: no functional observations", functional.display()));
    }
    if let Some(declared) = declared_channels(functional)? {
        if declared != d {
            return Err(usage!(
                "{}: header declares {declared} channels but the largest channel index is {d}",
                functional.display()
            ));
        }
    }

    let mut ids: Vec<String> = rows.keys().cloned().collect();
    sort_ids(&mut ids);
    let mut grid: Option<(Vec<f64>, String, usize)> = None;
    let mut x = Vec::with_capacity(ids.len());
    for id in &ids {
        let chans = curves
            .get_mut(id)
            .ok_or_else(|| usage!("{}: subject '{id}' has no functional observations", functional.display()))?;
        let mut xi: Option<DMatrix<f64>> = None;
        for c in 1..=d {
            let series = chans
                .get_mut(&c)
                .ok_or_else(|| usage!("{}: subject '{id}' has no observations for channel {c}", functional.display()))?;
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = series.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(usage!(
                    "{}:{}: duplicate grid point s = {} for subject '{id}', channel {c} (first on line {})",
                    functional.display(),
                    w[0].2.max(w[1].2),
                    w[0].0,
                    w[0].2.min(w[1].2)
                ));
            }
            let s: Vec<f64> = series.iter().map(|p| p.0).collect();
            match &grid {
                None => grid = Some((s.clone(), id.clone(), c)),
                Some((g, gid, gc)) if *g != s => {
                    return Err(usage!(
                        "{}:{}: subject '{id}', channel {c} is sampled on a different grid than subject '{gid}', channel {gc}",
                        functional.display(),
                        series[0].2
                    ));
                }
                _ => {}
            }
            let m = xi.get_or_insert_with(|| DMatrix::zeros(d, s.len()));
            for (g, p) in series.iter().enumerate() {
                m[(c - 1, g)] = p.1;
            }
        }
        x.push(xi.expect("d >= 1"));
    }

    let y = DVector::from_iterator(ids.len(), ids.iter().map(|id| rows[id].0));
    let z = DMatrix::from_fn(ids.len(), q, |i, k| rows[&ids[i]].1[k]);
    let grid = grid.expect("at least one series").0;
    let dataset = FunctionalDataset::new(y, z, grid, x)
        .map_err(|e| usage!("{} / {}: {e}", subjects.display(), functional.display()))?;
    Ok(Ingested { ids, dataset })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| usage!("cannot write {}: {e}", path.display())
}

/// Writes a data set in the two-file layout read by [`ingest_csv`].
pub fn write_csv_dataset(data: &Ingested, subjects: &Path, functional: &Path) -> CliResult<()> {
    let ds = &data.dataset;
    let mut f = std::io::BufWriter::new(File::create(subjects).map_err(io_err(subjects))?);
    let mut header = String::from("id,y");
    for k in 1..=ds.q() {
        header.push_str(&format!(",z{k}"));
    }
    writeln!(f, "{header}").map_err(io_err(subjects))?;
    for (i, id) in data.ids.iter().enumerate() {
        let mut line = format!("{id},{}", ds.y()[i]);
        for k in 0..ds.q() {
            line.push_str(&format!(",{}", ds.z()[(i, k)]));
        }
        writeln!(f, "{line}").map_err(io_err(subjects))?;
    }
    f.flush().map_err(io_err(subjects))?;

    let mut f = std::io::BufWriter::new(File::create(functional).map_err(io_err(functional))?);
    writeln!(f, "# channels: {}", ds.d()).map_err(io_err(functional))?;
    writeln!(f, "id,channel,s,value").map_err(io_err(functional))?;
    for (i, id) in data.ids.iter().enumerate() {
        for c in 0..ds.d() {
            for (g, s) in ds.grid().iter().enumerate() {
                writeln!(f, "{id},{},{s},{}", c + 1, ds.x()[i][(c, g)]).map_err(io_err(functional))?;
            }
        }
    }
    f.flush().map_err(io_err(functional))
}
