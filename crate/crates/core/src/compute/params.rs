use crate::compute::Tensor;
use crate::error::{Error, Result};

/// Handle to one array inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays in declaration order.
///
/// The order is significant: checkpoints, optimizer state and gradient
/// bundles are all aligned to it.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    arrays: Vec<Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.arrays.push(value);
        ParamId(self.arrays.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.arrays[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.arrays)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn arrays(&self) -> &[Tensor] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Tensor] {
        &mut self.arrays
    }

    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(Tensor::len).sum()
    }

    /// Sum of squared Frobenius norms over every array.
    pub fn squared_norm(&self) -> f64 {
        self.arrays.iter().map(Tensor::squared_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Tensor::is_finite)
    }

    /// Copy with every value rounded through `f32`.
    pub fn rounded_to_f32(&self) -> ParameterSet {
        ParameterSet {
            names: self.names.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|t| t.map(|v| v as f32 as f64))
                .collect(),
        }
    }

    /// Zero-filled gradient bundle congruent with this set.
    pub fn zeros_like(&self) -> GradientBundle {
        GradientBundle {
            arrays: self
                .arrays
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }
}

/// One gradient array per parameter array, same order and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    arrays: Vec<Tensor>,
}

impl GradientBundle {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.arrays[id.0]
    }

    pub fn arrays(&self) -> &[Tensor] {
        &self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Tensor::is_finite)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &GradientBundle) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.axpy(alpha, b);
        }
    }

    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        self.arrays
            .iter()
            .zip(&other.arrays)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn check_congruent(&self, params: &ParameterSet) -> Result<()> {
        if self.arrays.len() != params.len() {
            return Err(Error::Shape {
                op: "gradient bundle",
                detail: format!("{} arrays for {} parameters", self.arrays.len(), params.len()),
            });
        }
        for (id, name, p) in params.iter() {
            let g = &self.arrays[id.0];
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "gradient bundle",
                    detail: format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
        }
        Ok(())
    }
}
