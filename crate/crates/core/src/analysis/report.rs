use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::surprise::{SurpriseComparison, SurpriseReport};
use crate::error::{Error, Result};

pub const POSITION_BITS_HEADER: &str = "position,bits";
pub const SURPRISE_HEADER: &str = "offset,mean_bits";
pub const SWEEP_HEADER: &str = "arch,hidden,params,valid_bits,test_bits";

fn writer<W: Write>(out: W, header: &str) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header.split(','))?;
    Ok(w)
}

fn reader<R: Read>(input: R, header: &str) -> Result<csv::Reader<R>> {
    let mut r = csv::Reader::from_reader(input);
    let got = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != header {
        return Err(Error::Config(format!("CSV header {got:?}, expected {header:?}")));
    }
    Ok(r)
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(f))
}

/// Per-position losses; `bits[i]` is written as position `i + 1`.
pub fn write_position_bits<W: Write>(out: W, bits: &[f64]) -> Result<()> {
    let mut w = writer(out, POSITION_BITS_HEADER)?;
    for (i, b) in bits.iter().enumerate() {
        w.serialize((i + 1, b))?;
    }
    flush(w)
}

/// Inverse of [`write_position_bits`]; positions must run 1, 2, 3, ...
pub fn read_position_bits<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut r = reader(input, POSITION_BITS_HEADER)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (pos, bits): (usize, f64) = row?;
        if pos != out.len() + 1 {
            return Err(Error::Config(format!(
                "position {pos} where {} was expected",
                out.len() + 1
            )));
        }
        out.push(bits);
    }
    Ok(out)
}

pub fn save_position_bits(path: impl AsRef<Path>, bits: &[f64]) -> Result<()> {
    write_position_bits(create(path.as_ref())?, bits)
}

pub fn load_position_bits(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_position_bits(open(path.as_ref())?)
}

/// `offset,mean_bits` rows for offsets 1.. ; absent offsets leave the field empty.
pub fn write_surprise_curve<W: Write>(out: W, report: &SurpriseReport) -> Result<()> {
    let mut w = writer(out, SURPRISE_HEADER)?;
    for (k, m) in report.offset_means.iter().enumerate() {
        w.serialize((k + 1, m))?;
    }
    flush(w)
}

pub fn read_surprise_curve<R: Read>(input: R) -> Result<Vec<Option<f64>>> {
    let mut r = reader(input, SURPRISE_HEADER)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (_, m): (usize, Option<f64>) = row?;
        out.push(m);
    }
    Ok(out)
}

pub fn save_surprise_curve(path: impl AsRef<Path>, report: &SurpriseReport) -> Result<()> {
    write_surprise_curve(create(path.as_ref())?, report)
}

/// Two-model table: `field,a,b,gap` for the overall, surprise-set and offset rows.
pub fn write_comparison<W: Write>(
    out: W,
    a: &SurpriseReport,
    b: &SurpriseReport,
    cmp: &SurpriseComparison,
) -> Result<()> {
    let mut w = writer(out, "field,a,b,gap")?;
    w.serialize(("overall", a.overall_mean, b.overall_mean, cmp.overall_gap))?;
    w.serialize(("surprise_set", a.surprise_mean, b.surprise_mean, cmp.surprise_gap))?;
    for (k, g) in cmp.offset_gaps.iter().enumerate() {
        w.serialize((format!("offset_{}", k + 1), a.offset_means[k], b.offset_means[k], g))?;
    }
    flush(w)
}

/// One trained model of a size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: String,
    pub hidden: usize,
    pub params: u64,
    pub valid_bits: f64,
    pub test_bits: f64,
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(out, SWEEP_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    flush(w)
}

pub fn read_sweep<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = reader(input, SWEEP_HEADER)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
