//! CSV serialization for metric logs.
//!
//! One row per record under a fixed header. Optional diagnostics serialize
//! as empty fields so every row has the full column set regardless of which
//! metrics a run produced. Floats print in Rust's shortest round-trip form,
//! so save followed by load is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{MetricLog, MetricRecord};

pub const HEADER: &str = "method,seed,env_step,return,train_td,valid_td,q_gap,mc_bias";

pub fn save_csv(log: &MetricLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(log, &mut w)
}

pub fn write_csv<W: Write>(log: &MetricLog, w: &mut W) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in log.records() {
        if r.method.contains(',') || r.method.contains('\n') || r.method.contains('\r') {
            return Err(Error::InvalidConfig(format!(
                "method name {:?} cannot be written unescaped to csv",
                r.method
            )));
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.seed,
            r.env_step,
            r.eval_return,
            opt(r.train_td),
            opt(r.valid_td),
            opt(r.q_gap),
            opt(r.mc_bias),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Strict load: the header must match exactly, every row must have all
/// eight fields, and rows must arrive in increasing env_step order within
/// each (method, seed) series, exactly as the writer emits them.
pub fn load_csv(path: &Path) -> Result<MetricLog> {
    read_csv(BufReader::new(File::open(path)?))
}

pub fn read_csv<R: BufRead>(r: R) -> Result<MetricLog> {
    let mut log = MetricLog::new();
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(Error::CsvFormat {
                line: 1,
                message: "empty file, expected header".into(),
            })
        }
    };
    if header != HEADER {
        return Err(Error::CsvFormat {
            line: 1,
            message: format!("bad header {header:?}, expected {HEADER:?}"),
        });
    }
    for (i, line) in lines.enumerate() {
        let line_no = i as u64 + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::CsvFormat {
                line: line_no,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let record = MetricRecord {
            method: fields[0].to_string(),
            seed: parse_req(fields[1], "seed", line_no)?,
            env_step: parse_req(fields[2], "env_step", line_no)?,
            eval_return: parse_req(fields[3], "return", line_no)?,
            train_td: parse_opt(fields[4], "train_td", line_no)?,
            valid_td: parse_opt(fields[5], "valid_td", line_no)?,
            q_gap: parse_opt(fields[6], "q_gap", line_no)?,
            mc_bias: parse_opt(fields[7], "mc_bias", line_no)?,
        };
        log.push(record).map_err(|e| Error::CsvFormat {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(log)
}

fn parse_req<T: std::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T> {
    s.parse().map_err(|_| Error::CsvFormat {
        line,
        message: format!("cannot parse {name} from {s:?}"),
    })
}

fn parse_opt(s: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    parse_req(s, name, line).map(Some)
}
