use anyhow::{Context, Result};
use bentray::Point;
use std::fs::File;
use std::path::Path;

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn coords(p: &Point, dim: usize) -> impl Iterator<Item = String> + '_ {
    p.iter().take(dim).map(|v| num(*v))
}

pub fn axis_names(prefix: &str, dim: usize) -> Vec<String> {
    ["x", "y", "z"].iter().take(dim).map(|a| format!("{prefix}{a}")).collect()
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Indices `0, k, 2k, ...` plus the last one.
pub fn thinned(len: usize, k: usize) -> Vec<usize> {
    let k = k.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(k).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}
