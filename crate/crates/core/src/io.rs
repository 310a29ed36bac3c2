//! On-disk formats.
//!
//! # GMAP
//!
//! Little-endian throughout:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `GMAP`                            |
//! | 2     | format version, `u16`, currently 1      |
//! | 2     | dtype tag, `u16`: f32 = 1, f64 = 2, u8 = 3 |
//! | 4     | height, `u32`                           |
//! | 4     | width, `u32`                            |
//! | 4     | channel count, `u32`                    |
//! | ...   | payload, channel-major then row-major   |
//!
//! f32 payloads are widened to f64 on read.
//!
//! # CSV
//!
//! One line per grid row, comma separated; channels follow each other
//! separated by one blank line. Only for grids of at most 4096 pixels.
//!
//! # Models
//!
//! A model stored under `PREFIX` is three files: `PREFIX.mean.gmap` (one
//! channel), `PREFIX.chol.gmap` (the log-diagonal map followed by one map
//! per pattern offset) and `PREFIX.json` (shape, radius, scaling scalars).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distribution::StructuredGaussian;
use crate::error::{invalid, Error, Result};
use crate::grid::{CholeskyMaps, GridShape, Parameterization, SampleBundle, SparsityPattern};

pub const GMAP_MAGIC: &[u8; 4] = b"GMAP";
pub const GMAP_VERSION: u16 = 1;
pub const CSV_MAX_PIXELS: usize = 4096;
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn tag(self) -> u16 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_tag(tag: u16) -> Result<Self> {
        match tag {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::U8),
            t => Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
    }
}

/// A stack of same-shaped channels, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub shape: GridShape,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl GridStack {
    pub fn new(shape: GridShape, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() * channels {
            return Err(invalid(format!(
                "{} values do not fill {channels} channels of {shape}",
                values.len()
            )));
        }
        Ok(Self { shape, channels, values })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn into_bundle(self) -> Result<SampleBundle> {
        SampleBundle::new(self.shape, self.channels, self.values)
    }
}

impl From<&SampleBundle> for GridStack {
    fn from(b: &SampleBundle) -> Self {
        Self { shape: b.shape(), channels: b.count(), values: b.values().to_vec() }
    }
}

pub fn write_gmap<W: Write>(mut w: W, stack: &GridStack, dtype: DType) -> Result<()> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| invalid("dimension exceeds u32"));
    w.write_all(GMAP_MAGIC)?;
    w.write_all(&GMAP_VERSION.to_le_bytes())?;
    w.write_all(&dtype.tag().to_le_bytes())?;
    w.write_all(&dim(stack.shape.height())?.to_le_bytes())?;
    w.write_all(&dim(stack.shape.width())?.to_le_bytes())?;
    w.write_all(&dim(stack.channels)?.to_le_bytes())?;
    match dtype {
        DType::F64 => {
            for v in &stack.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in &stack.values {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        DType::U8 => {
            let mut bytes = Vec::with_capacity(stack.values.len());
            for &v in &stack.values {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(invalid(format!("value {v} does not fit a u8 channel")));
                }
                bytes.push(v as u8);
            }
            w.write_all(&bytes)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_gmap<R: Read>(mut r: R) -> Result<(GridStack, DType)> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated GMAP header".into()))?;
    if &header[..4] != GMAP_MAGIC {
        return Err(Error::Format("missing GMAP magic".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != GMAP_VERSION {
        return Err(Error::Format(format!("unsupported GMAP version {version}")));
    }
    let dtype = DType::from_tag(u16_at(6))?;
    let shape = GridShape::new(u32_at(8), u32_at(12)).map_err(|e| Error::Format(e.to_string()))?;
    let channels = u32_at(16);
    let count = shape.len() * channels;
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
        DType::U8 => 1,
    };
    let mut payload = vec![0u8; count * width];
    r.read_exact(&mut payload).map_err(|_| Error::Format("truncated GMAP payload".into()))?;
    let values: Vec<f64> = match dtype {
        DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        DType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    Ok((GridStack { shape, channels, values }, dtype))
}

pub fn write_csv<W: Write>(mut w: W, stack: &GridStack) -> Result<()> {
    check_csv_size(stack.shape)?;
    for c in 0..stack.channels {
        if c > 0 {
            writeln!(w)?;
        }
        for row in stack.channel(c).chunks(stack.shape.width()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(mut r: R) -> Result<GridStack> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        blocks.last_mut().unwrap().push(row);
    }
    if blocks.last().is_some_and(|b| b.is_empty()) {
        blocks.pop();
    }
    let first = blocks.first().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let shape = GridShape::new(first.len(), first[0].len()).map_err(|e| Error::Format(e.to_string()))?;
    check_csv_size(shape)?;
    let mut values = Vec::with_capacity(shape.len() * blocks.len());
    for b in &blocks {
        if b.len() != shape.height() || b.iter().any(|r| r.len() != shape.width()) {
            return Err(Error::Format("CSV channels are not all the same rectangular shape".into()));
        }
        b.iter().for_each(|r| values.extend_from_slice(r));
    }
    GridStack::new(shape, blocks.len(), values)
}

fn check_csv_size(shape: GridShape) -> Result<()> {
    if shape.len() > CSV_MAX_PIXELS {
        return Err(invalid(format!("CSV maps are limited to {CSV_MAX_PIXELS} pixels, got {}", shape.len())));
    }
    Ok(())
}

/// Binary PGM (P5, maxval 255); `lo` maps to 0 and `hi` to 255, linearly,
/// with rounding to nearest and clamping outside the range.
pub fn write_pgm<W: Write>(mut w: W, shape: GridShape, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    shape.check_len(values.len(), "image")?;
    if !(lo < hi) {
        return Err(invalid("PGM range needs lo < hi"));
    }
    write!(w, "P5\n{} {}\n255\n", shape.width(), shape.height())?;
    let bytes: Vec<u8> = values.iter().map(|&v| pgm_level(v, lo, hi)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn pgm_level(v: f64, lo: f64, hi: f64) -> u8 {
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reads a P5 image back as levels in `[0, 255]`.
pub fn read_pgm<R: Read>(mut r: R) -> Result<(GridShape, Vec<u8>)> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("expected a P5 image with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM dimension {s}")));
    let shape = GridShape::new(parse(&fields[2])?, parse(&fields[1])?)?;
    let pixels = data.get(pos..pos + shape.len()).ok_or_else(|| Error::Format("truncated PGM data".into()))?;
    Ok((shape, pixels.to_vec()))
}

/// Serialised form of everything about a model that is not a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub radius: usize,
    pub parameterization: Parameterization,
}

pub struct ModelPaths {
    pub mean: PathBuf,
    pub chol: PathBuf,
    pub sidecar: PathBuf,
}

impl ModelPaths {
    pub fn new(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().as_os_str().to_owned();
        let with = |suffix: &str| {
            let mut s = p.clone();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self { mean: with(".mean.gmap"), chol: with(".chol.gmap"), sidecar: with(".json") }
    }
}

pub fn save_model(prefix: impl AsRef<Path>, g: &StructuredGaussian, dtype: DType) -> Result<()> {
    let paths = ModelPaths::new(prefix);
    let shape = g.shape();
    let maps = g.chol();
    write_gmap(BufWriter::new(File::create(&paths.mean)?), &GridStack::new(shape, 1, g.mean().to_vec())?, dtype)?;
    let mut chol = maps.log_diag().to_vec();
    chol.extend_from_slice(maps.off_diag());
    write_gmap(
        BufWriter::new(File::create(&paths.chol)?),
        &GridStack::new(shape, 1 + maps.pattern().len(), chol)?,
        dtype,
    )?;
    let sidecar = ModelSidecar {
        schema_version: MODEL_SCHEMA_VERSION,
        height: shape.height(),
        width: shape.width(),
        radius: maps.pattern().radius(),
        parameterization: maps.parameterization().clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&paths.sidecar)?), &sidecar)?;
    Ok(())
}

pub fn load_model(prefix: impl AsRef<Path>) -> Result<StructuredGaussian> {
    let paths = ModelPaths::new(prefix);
    let sidecar: ModelSidecar = serde_json::from_reader(BufReader::new(File::open(&paths.sidecar)?))?;
    let shape = GridShape::new(sidecar.height, sidecar.width)?;
    let pattern = SparsityPattern::canonical(sidecar.radius)?;
    let (mean, _) = read_gmap(BufReader::new(File::open(&paths.mean)?))?;
    let (chol, _) = read_gmap(BufReader::new(File::open(&paths.chol)?))?;
    if mean.shape != shape || chol.shape != shape || mean.channels != 1 || chol.channels != 1 + pattern.len() {
        return Err(Error::Format("model files disagree with the sidecar".into()));
    }
    let n = shape.len();
    let maps = CholeskyMaps::new(
        shape,
        pattern,
        chol.values[..n].to_vec(),
        chol.values[n..].to_vec(),
        sidecar.parameterization,
    )?;
    StructuredGaussian::new(mean.values, maps)
}

/// Reads a stack from `path`, choosing CSV for a `.csv` extension and GMAP otherwise.
pub fn read_stack(path: impl AsRef<Path>) -> Result<GridStack> {
    let path = path.as_ref();
    let f = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(f)
    } else {
        read_gmap(f).map(|(s, _)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> GridStack {
        let shape = GridShape::new(2, 3).unwrap();
        GridStack::new(shape, 2, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap()
    }

    #[test]
    fn gmap_header_layout() {
        let mut buf = Vec::new();
        write_gmap(&mut buf, &stack(), DType::F64).unwrap();
        assert_eq!(&buf[..4], b"GMAP");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..8], &[2, 0]);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[3, 0, 0, 0]);
        assert_eq!(&buf[16..20], &[2, 0, 0, 0]);
        assert_eq!(buf.len(), 20 + 12 * 8);
        assert_eq!(&buf[20..28], &(-1.0f64).to_le_bytes());
    }

    #[test]
    fn gmap_round_trips() {
        for dtype in [DType::F64, DType::F32] {
            let mut buf = Vec::new();
            write_gmap(&mut buf, &stack(), dtype).unwrap();
            let (back, dt) = read_gmap(buf.as_slice()).unwrap();
            assert_eq!(dt, dtype);
            assert_eq!(back, stack());
        }
    }

    #[test]
    fn u8_masks() {
        let shape = GridShape::new(1, 3).unwrap();
        let s = GridStack::new(shape, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_gmap(&mut buf, &s, DType::U8).unwrap();
        assert_eq!(&buf[20..], &[0, 1, 1]);
        assert_eq!(read_gmap(buf.as_slice()).unwrap().0, s);
        let bad = GridStack::new(shape, 1, vec![0.5, 1.0, 1.0]).unwrap();
        assert!(write_gmap(Vec::new(), &bad, DType::U8).is_err());
    }

    #[test]
    fn gmap_rejects_garbage() {
        assert!(read_gmap(&b"GMAQ\x01\x00"[..]).is_err());
        let mut buf = Vec::new();
        write_gmap(&mut buf, &stack(), DType::F64).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_gmap(buf.as_slice()).is_err());
        buf[6] = 9;
        assert!(read_gmap(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &stack()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "-1.0,-0.75,-0.5");
        assert_eq!(read_csv(buf.as_slice()).unwrap(), stack());
        assert!(read_csv(&b"1,2\n3\n"[..]).is_err());
    }

    #[test]
    fn csv_size_limit() {
        let shape = GridShape::new(65, 64).unwrap();
        let s = GridStack::new(shape, 1, vec![0.0; shape.len()]).unwrap();
        assert!(write_csv(Vec::new(), &s).is_err());
    }

    #[test]
    fn pgm_layout() {
        let shape = GridShape::new(1, 3).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, shape, &[-0.05, 0.0, 0.07], -0.05, 0.05).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 1\n255\n");
        assert_eq!(&buf[11..], &[0, 128, 255]);
        let (s, px) = read_pgm(buf.as_slice()).unwrap();
        assert_eq!(s, shape);
        assert_eq!(px, vec![0, 128, 255]);
    }
}
