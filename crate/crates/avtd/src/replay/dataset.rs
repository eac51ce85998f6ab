//! Flat binary persistence for logged transition datasets.
//!
//! Layout, all little-endian:
//!   magic "AVTD" | version u16 | obs_dim u32 | act_dim u32 | count u64
//! followed by `count` records of
//!   obs f64*obs_dim | action f64*act_dim | reward f64 | next_obs f64*obs_dim
//!   | terminated u8 | truncated u8
//!
//! Loading is strict: anything malformed reports the byte offset where the
//! problem sits.

use super::Transition;
use crate::error::{Error, Result};
use ndarray::Array1;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"AVTD";
pub const VERSION: u16 = 1;

pub fn dataset_save(transitions: &[Transition], path: &Path) -> Result<()> {
    let (obs_dim, act_dim) = match transitions.first() {
        Some(t) => (t.obs.len(), t.action.len()),
        None => (0, 0),
    };
    for (i, t) in transitions.iter().enumerate() {
        if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.action.len() != act_dim {
            return Err(Error::InvalidConfig(format!(
                "transition {i} has dims obs {}/{} act {}, dataset is obs {obs_dim} act {act_dim}",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len()
            )));
        }
        if t.terminated && t.truncated {
            return Err(Error::InvalidConfig(format!(
                "transition {i} sets both terminated and truncated"
            )));
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(obs_dim as u32).to_le_bytes())?;
    w.write_all(&(act_dim as u32).to_le_bytes())?;
    w.write_all(&(transitions.len() as u64).to_le_bytes())?;
    for t in transitions {
        for &x in t.obs.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in t.action.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&t.reward.to_le_bytes())?;
        for &x in t.next_obs.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[t.terminated as u8, t.truncated as u8])?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::DatasetFormat {
                offset: at,
                message: format!("file truncated while reading {what}"),
            }),
            Err(e) => Err(Error::Io(e)),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(n);
        for i in 0..n {
            out[i] = self.f64(what)?;
        }
        Ok(out)
    }
}

pub fn dataset_load(path: &Path) -> Result<Vec<Transition>> {
    let mut c = Cursor {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    c.take(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::DatasetFormat {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version_at = c.offset;
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::DatasetFormat {
            offset: version_at,
            message: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let obs_dim = c.u32("obs_dim")? as usize;
    let act_dim = c.u32("act_dim")? as usize;
    let count = c.u64("count")? as usize;

    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let obs = c.f64_vec(obs_dim, "obs")?;
        let action = c.f64_vec(act_dim, "action")?;
        let reward = c.f64("reward")?;
        let next_obs = c.f64_vec(obs_dim, "next_obs")?;
        let flag_at = c.offset;
        let term = c.u8("terminated flag")?;
        let trunc = c.u8("truncated flag")?;
        if term > 1 || trunc > 1 || (term == 1 && trunc == 1) {
            return Err(Error::DatasetFormat {
                offset: flag_at,
                message: format!(
                    "transition {i} has invalid flag bytes ({term}, {trunc})"
                ),
            });
        }
        out.push(Transition {
            obs,
            action,
            reward,
            next_obs,
            terminated: term == 1,
            truncated: trunc == 1,
        });
    }

    let mut probe = [0u8; 1];
    match c.inner.read_exact(&mut probe) {
        Ok(()) => Err(Error::DatasetFormat {
            offset: c.offset,
            message: "trailing bytes after final transition".to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(out),
        Err(e) => Err(Error::Io(e)),
    }
}
