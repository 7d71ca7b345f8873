use ndarray::Array2;

use crate::error::ensure;
use crate::Result;

/// Dense displacement field in pixels: `u` along width, `v` along height.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
    pub valid_mask: Option<Array2<bool>>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        ensure!(u.dim() == v.dim(), "flow components differ in shape: {:?} vs {:?}", u.dim(), v.dim());
        Ok(Self { u, v, valid_mask: None })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { u: Array2::zeros((h, w)), v: Array2::zeros((h, w)), valid_mask: None }
    }

    pub fn constant(h: usize, w: usize, u: f32, v: f32) -> Self {
        Self { u: Array2::from_elem((h, w), u), v: Array2::from_elem((h, w), v), valid_mask: None }
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Result<Self> {
        ensure!(mask.dim() == self.u.dim(), "mask shape {:?} does not match flow {:?}", mask.dim(), self.u.dim());
        self.valid_mask = Some(mask);
        Ok(self)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid_mask.as_ref().is_none_or(|m| m[(y, x)])
    }

    pub fn max_magnitude(&self) -> f32 {
        self.u.iter().zip(self.v.iter()).map(|(u, v)| u.hypot(*v)).fold(0., f32::max)
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self { u: &self.u * factor, v: &self.v * factor, valid_mask: self.valid_mask.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}
