use super::{FieldError, GridSpec, InterpSample, ScalarField};
use crate::Point;

/// Nodal gradient by central differences, one-sided on the boundary layer.
pub fn grid_gradient(field: &ScalarField) -> Vec<Point> {
    let spec = field.spec();
    let v = field.values();
    let n = spec.counts();
    let h = spec.spacing();
    let mut out = vec![Point::zeros(); spec.len()];
    for (flat, g) in out.iter_mut().enumerate() {
        let idx = spec.multi_index(flat);
        for a in 0..spec.dim() {
            let i = idx[a];
            let at = |k: usize| {
                let mut j = idx;
                j[a] = k;
                v[spec.flat_index(j)]
            };
            g[a] = if i == 0 {
                (at(1) - at(0)) / h
            } else if i == n[a] - 1 {
                (at(i) - at(i - 1)) / h
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * h)
            };
        }
    }
    out
}

/// Multilinear interpolant over the enclosing cell.
#[derive(Debug, Clone)]
pub struct Bilinear {
    field: ScalarField,
    gradients: Vec<Point>,
    uniform: bool,
}

impl Bilinear {
    pub fn new(field: ScalarField) -> Self {
        let gradients = grid_gradient(&field);
        let uniform = field.is_uniform();
        Self { field, gradients, uniform }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn node_gradients(&self) -> &[Point] {
        &self.gradients
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn sample(&self, x: &Point) -> Result<InterpSample, FieldError> {
        let mut value = 0.0;
        let mut gradient = Point::zeros();
        let values = self.field.values();
        for_each_vertex(self.field.spec(), x, |node, w| {
            value += w * values[node];
            gradient += w * self.gradients[node];
        })?;
        Ok(InterpSample { value, gradient, hessian: None })
    }

    pub fn value(&self, x: &Point) -> Result<f64, FieldError> {
        let mut value = 0.0;
        let values = self.field.values();
        for_each_vertex(self.field.spec(), x, |node, w| value += w * values[node])?;
        Ok(value)
    }
}

fn for_each_vertex(spec: &GridSpec, x: &Point, mut f: impl FnMut(usize, f64)) -> Result<(), FieldError> {
    let (cell, t) = spec.locate(x)?;
    let corners = 1usize << spec.dim();
    for c in 0..corners {
        let mut idx = cell;
        let mut w = 1.0;
        for a in 0..spec.dim() {
            if c >> a & 1 == 1 {
                idx[a] += 1;
                w *= t[a];
            } else {
                w *= 1.0 - t[a];
            }
        }
        f(spec.flat_index(idx), w);
    }
    Ok(())
}

pub(super) fn weights(spec: &GridSpec, x: &Point) -> Result<Vec<(usize, f64)>, FieldError> {
    let mut out = Vec::with_capacity(1 << spec.dim());
    for_each_vertex(spec, x, |node, w| {
        if w != 0.0 {
            out.push((node, w));
        }
    })?;
    Ok(out)
}
