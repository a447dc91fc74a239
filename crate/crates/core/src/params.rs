//! Flat parameter storage shared by the model, the optimizers and the server.

use crate::error::{Error, Result};

/// Shape of one dense layer: `rows` outputs by `cols` inputs, plus `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model parameters as one contiguous `f64` buffer.
///
/// Layers are stored back to back; each layer is its row-major weight
/// matrix followed by its bias vector. Optimizer moments reuse the same
/// type so every elementwise operation can check shapes once.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn zeros(shapes: &[LayerShape]) -> Self {
        let len = shapes.iter().map(LayerShape::len).sum();
        ParamVector {
            values: vec![0.0; len],
            shapes: shapes.to_vec(),
        }
    }

    pub fn from_values(shapes: &[LayerShape], values: Vec<f64>) -> Result<Self> {
        let len: usize = shapes.iter().map(LayerShape::len).sum();
        if values.len() != len {
            return Err(Error::Dimension(format!(
                "expected {len} parameter values, got {}",
                values.len()
            )));
        }
        Ok(ParamVector {
            values,
            shapes: shapes.to_vec(),
        })
    }

    /// A vector without layer metadata, for optimizer-only use.
    pub fn flat(values: Vec<f64>) -> Self {
        ParamVector {
            values,
            shapes: Vec::new(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            shapes: self.shapes.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// Weight matrix and bias vector of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.shapes[..i].iter().map(LayerShape::len).sum();
        let shape = self.shapes[i];
        let (w, rest) = self.values[offset..offset + shape.len()].split_at(shape.weight_len());
        (w, rest)
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let offset: usize = self.shapes[..i].iter().map(LayerShape::len).sum();
        let shape = self.shapes[i];
        self.values[offset..offset + shape.len()].split_at_mut(shape.weight_len())
    }

    pub fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.values.len() != other.values.len() || self.shapes != other.shapes {
            return Err(Error::Dimension(format!(
                "parameter vectors differ in shape ({} vs {} values)",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector {
            values,
            shapes: self.shapes.clone(),
        })
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        self.check_same_shape(x)?;
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.values.fill(value);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Elementwise mean of equally shaped vectors, summed left to right.
    pub fn mean(items: &[&ParamVector]) -> Result<ParamVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument("mean of zero parameter vectors".into()))?;
        let mut acc = first.zeros_like();
        for item in items {
            acc.axpy(1.0, item)?;
        }
        let n = items.len() as f64;
        for v in &mut acc.values {
            *v /= n;
        }
        Ok(acc)
    }
}
