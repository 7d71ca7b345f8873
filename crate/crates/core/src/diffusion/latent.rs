use candle_core::{DType, Device, Tensor};

use crate::data::FeatureRecord;
use crate::error::ensure;
use crate::{Error, Result};

/// Number of header floats in front of the flattened latents of a stored record:
/// `T, C_z, h, w, scale`.
pub const LATENT_HEADER: usize = 5;

/// Encoded clip `[T, C_z, h, w]`, already multiplied by `scale`.
#[derive(Clone, Debug)]
pub struct LatentVideo {
    pub id: String,
    pub z: Tensor,
    /// Factor applied to VAE posterior means to reach unit variance; decode divides by it.
    pub scale: f32,
}

impl LatentVideo {
    pub fn frames(&self) -> usize {
        self.z.dim(0).unwrap_or(0)
    }

    pub fn to_record(&self) -> Result<FeatureRecord> {
        let (t, c, h, w) = self.z.dims4()?;
        let mut values = vec![t as f32, c as f32, h as f32, w as f32, self.scale];
        values.extend(self.z.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
        Ok(FeatureRecord::new(self.id.clone(), values))
    }

    pub fn from_record(r: &FeatureRecord, dtype: DType) -> Result<Self> {
        ensure!(r.values.len() >= LATENT_HEADER, "latent record {} too short", r.id);
        let dims: Vec<usize> = r.values[..4].iter().map(|&v| v as usize).collect();
        let n: usize = dims.iter().product();
        if n + LATENT_HEADER != r.values.len() || n == 0 {
            return Err(Error::Shape(format!("latent record {}: header {:?} does not match {} values", r.id, dims, r.values.len())));
        }
        let z = Tensor::from_slice(&r.values[LATENT_HEADER..], (dims[0], dims[1], dims[2], dims[3]), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self { id: r.id.clone(), z, scale: r.values[4] })
    }
}

/// Reciprocal of the standard deviation of all latent values.
pub fn latent_scale<'a>(latents: impl IntoIterator<Item = &'a Tensor>) -> Result<f32> {
    let (mut s, mut s2, mut n) = (0f64, 0f64, 0usize);
    for z in latents {
        for v in z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()? {
            s += v;
            s2 += v * v;
            n += 1;
        }
    }
    ensure!(n > 1, "need latents to estimate their scale");
    let mean = s / n as f64;
    let std = (s2 / n as f64 - mean * mean).max(0.).sqrt();
    ensure!(std > 1e-8, "latents are constant; cannot normalise");
    Ok((1. / std) as f32)
}
