//! Neural-network building blocks on top of candle tensors.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod resize;
pub mod warp;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta};
pub use conv::conv2d;
pub use gradcheck::gradient_check;
pub use layers::{Conv2d, GroupNorm, Init, Linear};
pub use optim::{AdamW, AdamWConfig, LrSchedule, ScheduleKind};
pub use params::ParamStore;
pub use resize::resize_bilinear;
pub use warp::warp;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};

/// `[H, W]` array to a `[1, 1, H, W]` tensor.
pub fn frame_tensor(frame: &Array2<f32>, dtype: DType) -> candle_core::Result<Tensor> {
    let (h, w) = frame.dim();
    Tensor::from_iter(frame.iter().copied(), &Device::Cpu)?.reshape((1, 1, h, w))?.to_dtype(dtype)
}

/// Stacks frames into a `[N, 1, H, W]` tensor.
pub fn frames_tensor<'a>(frames: impl IntoIterator<Item = &'a Array2<f32>>, dtype: DType) -> candle_core::Result<Tensor> {
    let ts = frames
        .into_iter()
        .map(|f| frame_tensor(f, dtype))
        .collect::<candle_core::Result<Vec<_>>>()?;
    Tensor::cat(&ts, 0)
}

/// Trailing two dims of a tensor holding exactly `H*W` elements per plane, as an array.
pub fn tensor_to_frame(t: &Tensor) -> candle_core::Result<Array2<f32>> {
    let dims = t.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Array2::from_shape_vec((h, w), v[..h * w].to_vec()).map_err(|e| candle_core::Error::Msg(e.to_string()))
}

/// `[T, H, W]` tensor (any leading singleton dims squeezed) to an array.
pub fn tensor_to_clip(t: &Tensor) -> candle_core::Result<Array3<f32>> {
    let dims = t.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let n = v.len() / (h * w);
    Array3::from_shape_vec((n, h, w), v).map_err(|e| candle_core::Error::Msg(e.to_string()))
}

pub fn scalar(t: &Tensor) -> candle_core::Result<f64> {
    t.to_dtype(DType::F64)?.to_scalar::<f64>()
}
