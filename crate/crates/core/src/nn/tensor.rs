//! Dense row-major f64 tensors. Small by design: the engine runs at desk
//! scale and favours verifiability over throughput tricks.

use super::NnError;

/// N-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape {
                layer: "<tensor>".into(),
                message: format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    n,
                    data.len()
                ),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// One-dimensional tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stack per-example tensors of identical shape into one batch tensor
    /// with a leading batch axis.
    pub fn stack(examples: &[&Tensor]) -> Result<Self, NnError> {
        let first = examples.first().ok_or_else(|| NnError::Shape {
            layer: "<stack>".into(),
            message: "cannot stack zero tensors".into(),
        })?;
        let per = first.shape.clone();
        let mut shape = Vec::with_capacity(per.len() + 1);
        shape.push(examples.len());
        shape.extend_from_slice(&per);
        let stride = first.numel();
        let mut data = Vec::with_capacity(stride * examples.len());
        for (i, t) in examples.iter().enumerate() {
            if t.shape != per {
                return Err(NnError::Shape {
                    layer: "<stack>".into(),
                    message: format!(
                        "example {} has shape {:?}, expected {:?}",
                        i, t.shape, per
                    ),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }
}
