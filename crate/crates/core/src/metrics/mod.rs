//! Image, video and flow quality metrics.

mod embed;
mod flow;
mod frechet;
mod image;
mod inception;
mod report;

pub use embed::{fid, fvd, window_starts, ClipEmbedder, RandomConvEmbedder};
pub use flow::endpoint_error;
pub use frechet::{frechet_distance, GaussianStats};
pub use image::{gaussian_taps, psnr, ssim, SsimConfig};
pub use inception::{inception_score, SoftmaxClassifier};
pub use report::{comparison_table, MetricReport, MetricValue};
