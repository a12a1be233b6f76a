//! Columnar text output and binary checkpoints.

use super::observables::ObservableRecord;
use crate::eom::WaveFunction;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MCTDHFC1";

pub fn write_observable_header<W: Write>(mut w: W, dim: usize) -> io::Result<()> {
    write!(w, "# step  t[au]  norm_C  norm_total  E_re[hartree]  E_im[hartree]")?;
    for axis in ["x", "y", "z"].iter().take(dim) {
        write!(w, "  dip_{axis}[bohr]")?;
    }
    for axis in ["x", "y", "z"].iter().take(dim) {
        write!(w, "  vel_{axis}[au]")?;
    }
    writeln!(w, "  survival")?;
    Ok(())
}

pub fn write_observable_row<W: Write>(
    mut w: W,
    rec: &ObservableRecord,
    dim: usize,
) -> io::Result<()> {
    write!(
        w,
        "{} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e}",
        rec.step, rec.t, rec.norm_c, rec.norm_total, rec.energy.re, rec.energy.im
    )?;
    for axis in 0..dim {
        write!(w, " {:.12e}", rec.dipole[axis])?;
    }
    for axis in 0..dim {
        write!(w, " {:.12e}", rec.velocity[axis])?;
    }
    writeln!(w, " {:.12e}", rec.survival)?;
    Ok(())
}

/// Parse an observables file back into (t, column) pairs. Column indices
/// count data columns (0 = step), matching the header layout.
pub fn read_observable_column(text: &str, column: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() <= column {
            continue;
        }
        let t: f64 = match fields[1].parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        if let Ok(v) = fields[column].parse::<f64>() {
            out.push((t, v));
        }
    }
    out
}

fn write_wavefunction<W: Write>(mut w: W, wf: &WaveFunction) -> io::Result<()> {
    w.write_u64::<LittleEndian>(wf.orbitals.len() as u64)?;
    w.write_u64::<LittleEndian>(wf.orbitals[0].len() as u64)?;
    w.write_u64::<LittleEndian>(wf.ci.len() as u64)?;
    for orb in &wf.orbitals {
        for v in orb {
            w.write_f64::<LittleEndian>(v.re)?;
            w.write_f64::<LittleEndian>(v.im)?;
        }
    }
    for v in &wf.ci {
        w.write_f64::<LittleEndian>(v.re)?;
        w.write_f64::<LittleEndian>(v.im)?;
    }
    Ok(())
}

fn read_wavefunction<R: Read>(mut r: R) -> io::Result<WaveFunction> {
    let m = r.read_u64::<LittleEndian>()? as usize;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let dim = r.read_u64::<LittleEndian>()? as usize;
    if m == 0 || n == 0 || dim == 0 || m > 1 << 20 || n > 1 << 32 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "implausible checkpoint sizes"));
    }
    let mut orbitals = Vec::with_capacity(m);
    for _ in 0..m {
        let mut orb = Vec::with_capacity(n);
        for _ in 0..n {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            orb.push(Complex64::new(re, im));
        }
        orbitals.push(orb);
    }
    let mut ci = Vec::with_capacity(dim);
    for _ in 0..dim {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        ci.push(Complex64::new(re, im));
    }
    Ok(WaveFunction { orbitals, ci })
}

/// Self-contained checkpoint: the config text (hash-guarded), the step index,
/// the current wave function, and the run's initial wave function (reference
/// for survival/overlap columns after resume).
pub fn write_checkpoint<W: Write>(
    mut w: W,
    config_text: &str,
    step: usize,
    wf: &WaveFunction,
    initial: &WaveFunction,
) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let cfg = config_text.as_bytes();
    w.write_u64::<LittleEndian>(cfg.len() as u64)?;
    w.write_all(cfg)?;
    let hash = Sha256::digest(cfg);
    w.write_all(&hash)?;
    w.write_u64::<LittleEndian>(step as u64)?;
    write_wavefunction(&mut w, wf)?;
    write_wavefunction(&mut w, initial)?;
    Ok(())
}

pub struct CheckpointData {
    pub config_text: String,
    pub step: usize,
    pub wf: WaveFunction,
    pub initial: WaveFunction,
}

pub fn read_checkpoint<R: Read>(mut r: R) -> io::Result<CheckpointData> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a checkpoint file"));
    }
    let cfg_len = r.read_u64::<LittleEndian>()? as usize;
    if cfg_len > 1 << 24 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "implausible config size"));
    }
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)?;
    let mut stored_hash = [0u8; 32];
    r.read_exact(&mut stored_hash)?;
    let hash = Sha256::digest(&cfg);
    if hash[..] != stored_hash[..] {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "checkpoint config hash mismatch",
        ));
    }
    let step = r.read_u64::<LittleEndian>()? as usize;
    let wf = read_wavefunction(&mut r)?;
    let initial = read_wavefunction(&mut r)?;
    let config_text = String::from_utf8(cfg)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "config text not UTF-8"))?;
    Ok(CheckpointData { config_text, step, wf, initial })
}
