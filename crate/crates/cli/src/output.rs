use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use gridgauss::io::{write_csv, write_gmap, write_pgm, DType, GridStack};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Gmap,
    Csv,
    Pgm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `out.pgm` -> `out.<tag>.pgm`.
pub fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

/// Writes a stack in the chosen format and returns the files written.
/// PGM output maps `[min, max]` of the whole stack onto `[0, 255]` and
/// writes one image per channel, tagged with its index when there are
/// several.
pub fn write_stack(path: &Path, stack: &GridStack, format: Format, precision: Precision) -> Result<Vec<PathBuf>> {
    match format {
        Format::Gmap => {
            write_gmap(create(path)?, stack, precision.dtype())?;
            Ok(vec![path.to_path_buf()])
        }
        Format::Csv => {
            write_csv(create(path)?, stack)?;
            Ok(vec![path.to_path_buf()])
        }
        Format::Pgm => {
            let lo = stack.values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = stack.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                hi = lo + 1.0;
            }
            let mut written = Vec::with_capacity(stack.channels);
            for c in 0..stack.channels {
                let p = if stack.channels == 1 { path.to_path_buf() } else { tagged(path, &c.to_string()) };
                write_pgm(create(&p)?, stack.shape, stack.channel(c), lo, hi)?;
                written.push(p);
            }
            Ok(written)
        }
    }
}

/// Pretty JSON to `path`, or to stdout without one.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => serde_json::to_writer_pretty(create(p)?, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}
