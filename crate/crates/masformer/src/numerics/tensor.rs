//! Row-major 2-D f32 tensor and matrix multiplication.

use crate::error::{Error, Result};

/// Dense row-major matrix of f32. Storage length is always `rows * cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_values",
                detail: format!("{} values for a {rows}x{cols} tensor", values.len()),
            });
        }
        Ok(Tensor2D { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.values[i * self.cols + j] = v;
    }

    pub fn transposed(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape {
                op: "add_assign",
                detail: format!(
                    "{}x{} += {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

/// `a (n×k) * b (k×m) -> n×m`.
///
/// Each output element accumulates in f64, adding terms in ascending k order,
/// so the result is bitwise equal to the naive triple loop.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        for v in &mut acc {
            *v = 0.0;
        }
        let arow = a.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let aik = aik as f64;
            let brow = b.row(k);
            // j lanes are independent accumulators; vectorizing them keeps
            // every sum in ascending-k order.
            for (v, &bkj) in acc.iter_mut().zip(brow) {
                *v += aik * bkj as f64;
            }
        }
        let orow = out.row_mut(i);
        for (o, &v) in orow.iter_mut().zip(&acc) {
            *o = v as f32;
        }
    }
    Ok(out)
}

/// Gradients of `c = a * b` given `d_c`: returns `(d_a, d_b)` where
/// `d_a = d_c * b^T` and `d_b = a^T * d_c`.
pub fn matmul_backward(a: &Tensor2D, b: &Tensor2D, d_c: &Tensor2D) -> Result<(Tensor2D, Tensor2D)> {
    if d_c.rows != a.rows || d_c.cols != b.cols || a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul_backward",
            detail: format!(
                "a {}x{}, b {}x{}, d_c {}x{}",
                a.rows, a.cols, b.rows, b.cols, d_c.rows, d_c.cols
            ),
        });
    }
    let d_a = matmul(d_c, &b.transposed())?;
    let d_b = matmul(&a.transposed(), d_c)?;
    Ok((d_a, d_b))
}
