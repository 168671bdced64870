//! Field file formats.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! b"RTF1"
//! u32 dim
//! u32 counts[dim]
//! f64 spacing
//! f64 origin[dim]
//! f64 values[prod(counts)]   // flat order of GridSpec::flat_index
//! ```
//!
//! The CSV importer reads `i,j,k,value` rows (header required, `k` ignored
//! for 2D grids) and needs every node exactly once.

use super::{FieldError, FieldKind, GridSpec, ScalarField};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RTF1";

pub fn write_field<W: Write>(mut w: W, field: &ScalarField) -> Result<(), FieldError> {
    let spec = field.spec();
    let dim = spec.dim();
    w.write_all(MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for &c in &spec.counts()[..dim] {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&spec.spacing().to_le_bytes())?;
    for a in 0..dim {
        w.write_all(&spec.origin()[a].to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FieldError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, FieldError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// The file does not record the physical meaning of the samples, so the caller supplies `kind`.
pub fn read_field<R: Read>(mut r: R, kind: FieldKind) -> Result<ScalarField, FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FieldError::Format(format!("bad magic {magic:?}")));
    }
    let dim = read_u32(&mut r)? as usize;
    if dim != 2 && dim != 3 {
        return Err(FieldError::Format(format!("unsupported dimension {dim}")));
    }
    let counts = (0..dim).map(|_| read_u32(&mut r).map(|c| c as usize)).collect::<Result<Vec<_>, _>>()?;
    let spacing = read_f64(&mut r)?;
    let origin = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let spec = GridSpec::new(dim, &origin, spacing, &counts)?;
    let mut bytes = vec![0u8; spec.len() * 8];
    r.read_exact(&mut bytes).map_err(|e| FieldError::Format(format!("truncated values: {e}")))?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FieldError::Format(format!("{} trailing bytes", rest.len())));
    }
    ScalarField::new(spec, values, kind)
}

pub fn save_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<(), FieldError> {
    let f = std::fs::File::create(path)?;
    write_field(std::io::BufWriter::new(f), field)
}

pub fn load_field(path: impl AsRef<Path>, kind: FieldKind) -> Result<ScalarField, FieldError> {
    let f = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(f), kind)
}

/// Import `i,j,k,value` rows onto `spec`.
pub fn read_field_csv<R: Read>(r: R, spec: GridSpec, kind: FieldKind) -> Result<ScalarField, FieldError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut values = vec![f64::NAN; spec.len()];
    let mut seen = vec![false; spec.len()];
    let n = spec.counts();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| FieldError::Format(e.to_string()))?;
        if rec.len() != 4 {
            return Err(FieldError::Format(format!("row {}: expected 4 columns, got {}", line + 1, rec.len())));
        }
        let parse_idx = |c: usize| {
            rec[c].parse::<usize>().map_err(|e| FieldError::Format(format!("row {}: {e}", line + 1)))
        };
        let mut idx = [parse_idx(0)?, parse_idx(1)?, parse_idx(2)?];
        if spec.dim() == 2 {
            idx[2] = 0;
        }
        if (0..3).any(|a| idx[a] >= n[a]) {
            return Err(FieldError::Format(format!("row {}: index {idx:?} outside grid", line + 1)));
        }
        let v = rec[3].parse::<f64>().map_err(|e| FieldError::Format(format!("row {}: {e}", line + 1)))?;
        let flat = spec.flat_index(idx);
        if seen[flat] {
            return Err(FieldError::Format(format!("row {}: node {idx:?} given twice", line + 1)));
        }
        seen[flat] = true;
        values[flat] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(FieldError::Format(format!("node {:?} missing", spec.multi_index(missing))));
    }
    ScalarField::new(spec, values, kind)
}
