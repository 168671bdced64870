use super::{FieldError, GridSpec, InterpSample, ScalarField};
use crate::{Hessian, Point};

/// Uniform cubic B-spline basis on `t in [0, 1]` for the stencil `i-1 ..= i+2`.
#[inline]
fn basis(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

#[inline]
fn basis_d1(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [-0.5 * s * s, (3.0 * t * t - 4.0 * t) / 2.0, (-3.0 * t * t + 2.0 * t + 1.0) / 2.0, 0.5 * t * t]
}

#[inline]
fn basis_d2(t: f64) -> [f64; 4] {
    [1.0 - t, 3.0 * t - 2.0, 1.0 - 3.0 * t, t]
}

/// Thomas factors for the interpolation system `(c[k-1] + 4 c[k] + c[k+1]) / 6 = v[k]`
/// with replicated end coefficients `c[-1] = c[0]`, `c[n] = c[n-1]`.
struct Prefilter {
    cprime: Vec<f64>,
    denom: Vec<f64>,
}

impl Prefilter {
    fn new(n: usize) -> Self {
        let mut cprime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for i in 0..n {
            let diag = if i == 0 || i == n - 1 { 5.0 } else { 4.0 };
            denom[i] = if i == 0 { diag } else { diag - cprime[i - 1] };
            cprime[i] = 1.0 / denom[i];
        }
        Self { cprime, denom }
    }

    fn solve(&self, line: &mut [f64]) {
        let n = line.len();
        line[0] = 6.0 * line[0] / self.denom[0];
        for i in 1..n {
            line[i] = (6.0 * line[i] - line[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            line[i] -= self.cprime[i] * line[i + 1];
        }
    }
}

/// Interpolating cubic B-spline: C2 continuous, exact at the nodes.
#[derive(Debug, Clone)]
pub struct BSpline {
    field: ScalarField,
    /// Control coefficients padded by one replicated layer on every active axis.
    coef: Vec<f64>,
    padded: [usize; 3],
    uniform: bool,
}

impl BSpline {
    pub fn new(field: ScalarField) -> Self {
        let spec = field.spec();
        let dim = spec.dim();
        let n = spec.counts();
        let pad = |a: usize| usize::from(a < dim);
        let padded = [n[0] + 2 * pad(0), n[1] + 2 * pad(1), n[2] + 2 * pad(2)];
        let pidx = |i: usize, j: usize, k: usize| (k * padded[1] + j) * padded[0] + i;

        let mut coef = vec![0.0; padded.iter().product()];
        for (flat, &v) in field.values().iter().enumerate() {
            let [i, j, k] = spec.multi_index(flat);
            coef[pidx(i + pad(0), j + pad(1), k + pad(2))] = v;
        }

        let mut line = Vec::new();
        for a in 0..dim {
            let filter = Prefilter::new(n[a]);
            let stride = [1, padded[0], padded[0] * padded[1]][a];
            // iterate over the interior nodes of the other axes
            let others: Vec<usize> = (0..3).filter(|&b| b != a).collect();
            for q in 0..n[others[1]] {
                for p in 0..n[others[0]] {
                    let mut start = [0usize; 3];
                    start[a] = pad(a);
                    start[others[0]] = p + pad(others[0]);
                    start[others[1]] = q + pad(others[1]);
                    let base = pidx(start[0], start[1], start[2]);
                    line.clear();
                    line.extend((0..n[a]).map(|m| coef[base + m * stride]));
                    filter.solve(&mut line);
                    for (m, &c) in line.iter().enumerate() {
                        coef[base + m * stride] = c;
                    }
                }
            }
        }

        // replicate padding, axis by axis so corners pick up the edge values
        for a in 0..dim {
            let stride = [1, padded[0], padded[0] * padded[1]][a];
            for flat in 0..coef.len() {
                let idx = [flat % padded[0], (flat / padded[0]) % padded[1], flat / (padded[0] * padded[1])];
                if idx[a] == 0 {
                    coef[flat] = coef[flat + stride];
                } else if idx[a] == padded[a] - 1 {
                    coef[flat] = coef[flat - stride];
                }
            }
        }

        let uniform = field.is_uniform();
        Self { field, coef, padded, uniform }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Control coefficient at node `idx`, after prefiltering.
    pub fn coefficient(&self, idx: [usize; 3]) -> f64 {
        let dim = self.field.spec().dim();
        let o = |a: usize| idx[a] + usize::from(a < dim);
        self.coef[(o(2) * self.padded[1] + o(1)) * self.padded[0] + o(0)]
    }

    pub fn sample(&self, x: &Point) -> Result<InterpSample, FieldError> {
        let spec = self.field.spec();
        let dim = spec.dim();
        let (cell, t) = spec.locate(x)?;
        let mut w = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        let mut ddw = [[0.0; 4]; 3];
        for a in 0..dim {
            w[a] = basis(t[a]);
            dw[a] = basis_d1(t[a]);
            ddw[a] = basis_d2(t[a]);
        }
        let kz = if dim == 3 { 4 } else { 1 };
        if dim == 2 {
            w[2][0] = 1.0;
        }

        let (px, py) = (self.padded[0], self.padded[1]);
        let mut v = 0.0;
        let mut g = [0.0; 3];
        let mut hs = [0.0; 6]; // xx yy zz xy xz yz
        for c in 0..kz {
            let (wz, dwz, ddwz) = (w[2][c], dw[2][c], ddw[2][c]);
            for b in 0..4 {
                let (wy, dwy, ddwy) = (w[1][b], dw[1][b], ddw[1][b]);
                let row = ((cell[2] + c) * py + cell[1] + b) * px + cell[0];
                for a in 0..4 {
                    let coef = self.coef[row + a];
                    let (wx, dwx, ddwx) = (w[0][a], dw[0][a], ddw[0][a]);
                    let wyz = wy * wz;
                    v += wx * wyz * coef;
                    g[0] += dwx * wyz * coef;
                    g[1] += wx * dwy * wz * coef;
                    hs[0] += ddwx * wyz * coef;
                    hs[1] += wx * ddwy * wz * coef;
                    hs[3] += dwx * dwy * wz * coef;
                    if dim == 3 {
                        g[2] += wx * wy * dwz * coef;
                        hs[2] += wx * wy * ddwz * coef;
                        hs[4] += dwx * wy * dwz * coef;
                        hs[5] += wx * dwy * dwz * coef;
                    }
                }
            }
        }
        let h = spec.spacing();
        let h2 = h * h;
        let gradient = Point::new(g[0] / h, g[1] / h, g[2] / h);
        let hessian = Hessian::new(
            hs[0] / h2,
            hs[3] / h2,
            hs[4] / h2,
            hs[3] / h2,
            hs[1] / h2,
            hs[5] / h2,
            hs[4] / h2,
            hs[5] / h2,
            hs[2] / h2,
        );
        Ok(InterpSample { value: v, gradient, hessian: Some(hessian) })
    }

    pub fn value(&self, x: &Point) -> Result<f64, FieldError> {
        let spec = self.field.spec();
        let dim = spec.dim();
        let (cell, t) = spec.locate(x)?;
        let mut w = [[0.0; 4]; 3];
        for a in 0..dim {
            w[a] = basis(t[a]);
        }
        let kz = if dim == 3 { 4 } else { 1 };
        if dim == 2 {
            w[2][0] = 1.0;
        }
        let (px, py) = (self.padded[0], self.padded[1]);
        let mut v = 0.0;
        for c in 0..kz {
            for b in 0..4 {
                let row = ((cell[2] + c) * py + cell[1] + b) * px + cell[0];
                let wyz = w[1][b] * w[2][c];
                for a in 0..4 {
                    v += w[0][a] * wyz * self.coef[row + a];
                }
            }
        }
        Ok(v)
    }
}

pub(super) fn weights(spec: &GridSpec, x: &Point) -> Result<Vec<(usize, f64)>, FieldError> {
    let dim = spec.dim();
    let n = spec.counts();
    let (cell, t) = spec.locate(x)?;
    let mut axis_w = [[0.0; 4]; 3];
    let mut axis_i = [[0usize; 4]; 3];
    let mut len = [1usize; 3];
    axis_w[2][0] = 1.0;
    for a in 0..dim {
        axis_w[a] = basis(t[a]);
        for s in 0..4 {
            // stencil node cell-1+s, replicated into range
            axis_i[a][s] = (cell[a] + s).saturating_sub(1).min(n[a] - 1);
        }
        len[a] = 4;
    }
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(len.iter().product());
    for c in 0..len[2] {
        for b in 0..len[1] {
            for a in 0..len[0] {
                let w = axis_w[0][a] * axis_w[1][b] * axis_w[2][c];
                if w != 0.0 {
                    out.push((spec.flat_index([axis_i[0][a], axis_i[1][b], axis_i[2][c]]), w));
                }
            }
        }
    }
    out.sort_unstable_by_key(|p| p.0);
    out.dedup_by(|later, earlier| {
        if later.0 == earlier.0 {
            earlier.1 += later.1;
            true
        } else {
            false
        }
    });
    Ok(out)
}
