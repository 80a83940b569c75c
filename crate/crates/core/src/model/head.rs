use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear classifier `scores = W f + b`, fitted in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub lambda: f64,
}

impl LinearHead {
    pub fn scores(&self, features: &[f32]) -> Vec<f32> {
        debug_assert_eq!(features.len(), self.dim);
        (0..self.classes)
            .map(|k| {
                let row = &self.weight[k * self.dim..(k + 1) * self.dim];
                let dot: f64 = row.iter().zip(features).map(|(w, f)| *w as f64 * *f as f64).sum();
                (dot + self.bias[k] as f64) as f32
            })
            .collect()
    }
}

/// Ridge fit on one-hot targets. A constant column is appended to the design
/// so the bias is solved jointly (and regularized with the same `lambda`).
pub fn train_linear_head(features: &[Vec<f32>], labels: &[usize], classes: usize, lambda: f64) -> Result<LinearHead> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", features.len()),
            actual: format!("{}", labels.len()),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::config("model.lambda", "must be positive"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Dims("feature rows differ in length".into()));
    }
    let mut seen = vec![false; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} outside {classes} classes")));
        }
        seen[l] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!("class {k} has no training samples")));
    }

    let n = features.len();
    let p = dim + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j < dim { features[i][j] as f64 } else { 1.0 });
    let targets = DMatrix::from_fn(n, classes, |i, k| if labels[i] == k { 1.0 } else { 0.0 });
    let gram = design.transpose() * &design + DMatrix::identity(p, p) * lambda;
    let rhs = design.transpose() * targets;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge normal equations are not positive definite".into()))?;
    let solution = chol.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ridge solution is not finite".into()));
    }

    let mut weight = Vec::with_capacity(classes * dim);
    let mut bias = Vec::with_capacity(classes);
    for k in 0..classes {
        let col: DVector<f64> = solution.column(k).into_owned();
        weight.extend(col.iter().take(dim).map(|&v| v as f32));
        bias.push(col[dim] as f32);
    }
    Ok(LinearHead {
        classes,
        dim,
        weight,
        bias,
        lambda,
    })
}
