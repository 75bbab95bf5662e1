use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "step,chars_seen,schedule,train_bits,valid_bits,wall_s";

/// One evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Training targets consumed so far.
    pub chars_seen: u64,
    /// Learning rate or update length for the next update.
    pub schedule: f64,
    /// Mean training bits/char since the previous evaluation.
    pub train_bits: f64,
    pub valid_bits: f64,
    pub wall_s: f64,
}

/// Append-only record of the evaluations of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step < last.step {
                return Err(Error::Parameter(format!(
                    "log step {} precedes the last recorded step {}",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// Row with the lowest validation bits (the first one on ties).
    pub fn best(&self) -> Option<&LogRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&LogRow>, r| match best {
                Some(b) if b.valid_bits <= r.valid_bits => Some(b),
                _ => Some(r),
            })
    }

    /// Bitwise equality of everything except wall time.
    pub fn same_trace(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.step == b.step
                    && a.chars_seen == b.chars_seen
                    && a.schedule.to_bits() == b.schedule.to_bits()
                    && a.train_bits.to_bits() == b.train_bits.to_bits()
                    && a.valid_bits.to_bits() == b.valid_bits.to_bits()
            })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(TRAIN_LOG_HEADER.split(','))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != TRAIN_LOG_HEADER {
            return Err(Error::Config(format!(
                "train log header {:?}, expected {TRAIN_LOG_HEADER:?}",
                header.join(",")
            )));
        }
        let mut log = TrainLog::default();
        for row in r.deserialize() {
            log.push(row?)?;
        }
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(step: u64, valid: f64) -> LogRow {
        LogRow {
            step,
            chars_seen: step * 100,
            schedule: 1e-3 / (step + 1) as f64,
            train_bits: 1.0 / 3.0,
            valid_bits: valid,
            wall_s: 0.25,
        }
    }

    #[test]
    fn header_is_first_line() {
        let mut log = TrainLog::default();
        log.push(row(1, 2.0)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRAIN_LOG_HEADER);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn steps_must_not_go_back() {
        let mut log = TrainLog::default();
        log.push(row(5, 2.0)).unwrap();
        assert!(log.push(row(4, 2.0)).is_err());
    }

    #[test]
    fn best_prefers_earliest_minimum() {
        let mut log = TrainLog::default();
        for (s, v) in [(1, 3.0), (2, 2.0), (3, 2.0), (4, 2.5)] {
            log.push(row(s, v)).unwrap();
        }
        assert_eq!(log.best().unwrap().step, 2);
    }

    #[test]
    fn same_trace_ignores_wall_time() {
        let mut a = TrainLog::default();
        a.push(row(1, 2.0)).unwrap();
        let mut b = a.clone();
        b.rows[0].wall_s = 99.0;
        assert!(a.same_trace(&b));
        b.rows[0].valid_bits = f64::from_bits(2.0f64.to_bits() + 1);
        assert!(!a.same_trace(&b));
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(vals in proptest::collection::vec((0.0f64..10.0, 1e-9f64..1.0), 1..20)) {
            let mut log = TrainLog::default();
            for (i, (v, s)) in vals.iter().enumerate() {
                log.push(LogRow { step: i as u64, chars_seen: 7 * i as u64, schedule: *s, train_bits: v / 3.0, valid_bits: *v, wall_s: v * 1.5 }).unwrap();
            }
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            let back = TrainLog::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
