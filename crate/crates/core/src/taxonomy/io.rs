//! Dataset containers.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "DYML1"            5 bytes
//! d_in               u32
//! M                  u32
//! C^1 .. C^M         u32 each, finest first
//! sample count       u64
//! per sample:        d_in x f32 features, then M x u32 labels (finest first)
//! ```
//!
//! Parent maps are not stored; they are recovered from the label chains, so
//! every class must own at least one sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Sample, Split, Taxonomy};
use crate::error::{DymlError, Result};
use crate::io::{expect_eof, read_f32, read_magic, read_u32, read_u64, write_f32, write_magic, write_u32, write_u64};

pub const DATASET_MAGIC: &[u8; 5] = b"DYML1";

pub fn write_dataset<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    let t = ds.taxonomy();
    write_magic(w, DATASET_MAGIC)?;
    write_u32(w, ds.d_in())?;
    write_u32(w, t.num_scales())?;
    for &c in t.classes_per_scale() {
        write_u32(w, c)?;
    }
    write_u64(w, ds.len() as u64)?;
    for s in ds.samples() {
        for &x in &s.features {
            write_f32(w, x)?;
        }
        for &l in &s.label_chain {
            write_u32(w, l)?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R, split: Split) -> Result<Dataset> {
    read_magic(r, DATASET_MAGIC)?;
    let d_in = read_u32(r)?;
    let m = read_u32(r)?;
    if m == 0 {
        return Err(DymlError::Format("dataset declares zero scales".into()));
    }
    let counts = (0..m).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let n = read_u64(r)? as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let features = (0..d_in).map(|_| read_f32(r)).collect::<Result<Vec<_>>>()?;
        let label_chain = (0..m).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        samples.push(Sample { features, label_chain });
    }
    expect_eof(r)?;
    let taxonomy = Taxonomy::from_label_chains(counts, samples.iter().map(|s| s.label_chain.as_slice()))?;
    Dataset::new(taxonomy, split, samples)
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_dataset(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        read_dataset(&mut r, split)
    }
}

/// One row per sample: `d_in` features, then `M` labels finest first. The
/// header row names the columns `f0.. l0..`.
pub fn write_csv<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    let header: Vec<String> = (0..ds.d_in())
        .map(|j| format!("f{j}"))
        .chain((0..ds.taxonomy().num_scales()).map(|i| format!("l{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for s in ds.samples() {
        let row: Vec<String> = s
            .features
            .iter()
            .map(|&x| format!("{}", x as f32))
            .chain(s.label_chain.iter().map(|l| l.to_string()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R, split: Split) -> Result<Dataset> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| DymlError::Format("empty csv".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d_in = cols.iter().filter(|c| c.starts_with('f')).count();
    let m = cols.iter().filter(|c| c.starts_with('l')).count();
    if m == 0 || d_in + m != cols.len() {
        return Err(DymlError::Format(format!("unrecognized csv header: {header}")));
    }
    let mut samples = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d_in + m {
            return Err(DymlError::Format(format!("row {row}: {} fields", fields.len())));
        }
        let bad = |e: String| DymlError::Format(format!("row {row}: {e}"));
        let features = fields[..d_in]
            .iter()
            .map(|f| f.parse::<f32>().map(f64::from).map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let label_chain = fields[d_in..]
            .iter()
            .map(|f| f.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample { features, label_chain });
    }
    let counts: Vec<usize> = (0..m).map(|i| samples.iter().map(|s| s.label_chain[i] + 1).max().unwrap_or(0)).collect();
    let taxonomy = Taxonomy::from_label_chains(counts, samples.iter().map(|s| s.label_chain.as_slice()))?;
    Dataset::new(taxonomy, split, samples)
}
