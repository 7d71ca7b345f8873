//! Synthetic beating-chamber clips with analytic motion.
//!
//! A dark elliptical chamber surrounded by a bright wall sits inside an ultrasound-like
//! sector. The chamber radius follows
//! `r(t) = R * (1 + A * sin(2π (t / period + phase)))`, and a seeded speckle texture
//! multiplies the image. Profile and speckle both scale about the chamber centre while
//! the sector stays fixed, so the displacement between frames `t0` and `t1` is
//! `(r(t1)/r(t0) - 1) * (p - c)` inside the sector. The flow mask marks the band around
//! the wall, where that motion is observable.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FlowField, VideoClip};
use crate::error::ensure;
use crate::Result;

const ASPECT: f64 = 1.1;
const WALL_OUTER: f64 = 1.3;
const BAND: (f64, f64) = (0.7, 1.55);
const CHAMBER: f64 = 0.12;
const WALL: f64 = 0.85;
const TISSUE: f64 = 0.45;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Mean chamber radius in pixels.
    pub base_radius: f64,
    /// Relative radius oscillation, in `[0, 1)`.
    pub pulse_amplitude: f64,
    /// Cycle length in frames.
    pub period: f64,
    /// Standard deviation of the multiplicative speckle.
    pub speckle_sigma: f64,
    /// Full opening angle of the imaging sector, degrees.
    pub cone_angle: f64,
    pub seed: u64,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    /// Cycle phase at frame 0, in cycles.
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "default_fps")]
    pub fps: f32,
}

fn default_size() -> usize {
    32
}

fn default_fps() -> f32 {
    50.
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            base_radius: 8.,
            pulse_amplitude: 0.2,
            period: 16.,
            speckle_sigma: 0.15,
            cone_angle: 75.,
            seed: 0,
            height: default_size(),
            width: default_size(),
            phase: 0.,
            fps: default_fps(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.period >= 4., "phantom period must be at least 4 frames, got {}", self.period);
        ensure!(
            (0.0..1.0).contains(&self.pulse_amplitude),
            "pulse amplitude must lie in [0, 1), got {}",
            self.pulse_amplitude
        );
        ensure!(self.base_radius > 0., "base radius must be positive");
        ensure!(self.speckle_sigma >= 0., "speckle sigma must be non-negative");
        ensure!(self.cone_angle > 0. && self.cone_angle <= 180., "cone angle must lie in (0, 180]");
        ensure!(self.height >= 8 && self.width >= 8, "phantom frames must be at least 8x8");
        Ok(())
    }

    pub fn radius(&self, t: f64) -> f64 {
        let arg = 2. * std::f64::consts::PI * (t / self.period + self.phase);
        self.base_radius * (1. + self.pulse_amplitude * arg.sin())
    }

    fn centre(&self) -> (f64, f64) {
        ((self.width as f64 - 1.) / 2., 0.55 * (self.height as f64 - 1.))
    }

    /// Ellipse-normalised radius of pixel `(x, y)` for chamber radius `r`.
    fn normalised_radius(&self, x: f64, y: f64, r: f64) -> f64 {
        let (cx, cy) = self.centre();
        ((x - cx) / r).hypot((y - cy) / (ASPECT * r))
    }

    fn sector(&self, x: f64, y: f64) -> f64 {
        let apex = (self.width as f64 - 1.) / 2.;
        let apex_y = -0.15 * self.height as f64;
        let (dx, dy) = (x - apex, y - apex_y);
        let half = self.cone_angle.to_radians() / 2.;
        let angle = dx.atan2(dy).abs();
        let dist = dx.hypot(dy);
        let reach = 1.12 * self.height as f64;
        sigmoid((half - angle) * dist / 0.7) * sigmoid((reach - dist) / 0.7)
    }
}

fn sigmoid(x: f64) -> f64 {
    1. / (1. + (-x).exp())
}

/// Speckle on a grid twice the frame size, centred on the frame.
fn speckle_field(spec: &PhantomSpec) -> Array2<f64> {
    let (h, w) = (2 * spec.height, 2 * spec.width);
    if spec.speckle_sigma == 0. {
        return Array2::zeros((h, w));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Array2::from_shape_fn((h, w), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    // light separable blur gives speckle a grain of a couple of pixels
    let k = [0.25, 0.5, 0.25];
    let blur = |src: &Array2<f64>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            (-1i64..=1)
                .map(|d| {
                    let (yy, xx) = if horizontal {
                        (y as i64, (x as i64 + d).clamp(0, w as i64 - 1))
                    } else {
                        ((y as i64 + d).clamp(0, h as i64 - 1), x as i64)
                    };
                    k[(d + 1) as usize] * src[(yy as usize, xx as usize)]
                })
                .sum()
        })
    };
    let smooth = blur(&blur(&noise, true), false);
    let std = (smooth.iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64).sqrt().max(1e-12);
    smooth.mapv(|v| spec.speckle_sigma * v / std)
}

fn bilinear(a: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = a.dim();
    let x = x.clamp(0., (w - 1) as f64);
    let y = y.clamp(0., (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (1. - fy) * ((1. - fx) * a[(y0, x0)] + fx * a[(y0, x1)]) + fy * ((1. - fx) * a[(y1, x0)] + fx * a[(y1, x1)])
}

fn render(spec: &PhantomSpec, r: f64, speckle: &Array2<f64>) -> Array2<f32> {
    let soft = 0.6 / r;
    let (cx, cy) = spec.centre();
    let shrink = spec.base_radius / r;
    let (ox, oy) = (spec.width as f64 / 2., spec.height as f64 / 2.);
    Array2::from_shape_fn((spec.height, spec.width), |(y, x)| {
        let (xf, yf) = (x as f64, y as f64);
        let rho = spec.normalised_radius(xf, yf, r);
        let profile = CHAMBER
            + (WALL - CHAMBER) * sigmoid((rho - 1.) / soft)
            + (TISSUE - WALL) * sigmoid((rho - WALL_OUTER) / soft);
        let grain = bilinear(speckle, cx + (xf - cx) * shrink + ox, cy + (yf - cy) * shrink + oy);
        let v = profile * spec.sector(xf, yf) * (1. + grain);
        v.clamp(0., 1.) as f32
    })
}

/// Analytic displacement from frame `t0` to frame `t1` (pixels, forward direction).
pub fn analytic_flow(spec: &PhantomSpec, t0: f64, t1: f64) -> FlowField {
    let (r0, r1) = (spec.radius(t0), spec.radius(t1));
    let s = r1 / r0 - 1.;
    let (cx, cy) = spec.centre();
    let mut flow = FlowField::zeros(spec.height, spec.width);
    let mut mask = Array2::from_elem((spec.height, spec.width), false);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (xf, yf) = (x as f64, y as f64);
            if spec.sector(xf, yf) <= 0.5 {
                continue;
            }
            flow.u[(y, x)] = (s * (xf - cx)) as f32;
            flow.v[(y, x)] = (s * (yf - cy)) as f32;
            let rho = spec.normalised_radius(xf, yf, r0);
            mask[(y, x)] = (BAND.0..=BAND.1).contains(&rho);
        }
    }
    flow.valid_mask = Some(mask);
    flow
}

/// Renders `num_frames` frames and the `num_frames - 1` analytic inter-frame flows.
pub fn generate_phantom(id: impl Into<String>, spec: &PhantomSpec, num_frames: usize) -> Result<(VideoClip, Vec<FlowField>)> {
    spec.validate()?;
    ensure!(
        num_frames as f64 >= spec.period && num_frames >= 3,
        "need at least one period ({}) of frames, got {num_frames}",
        spec.period
    );
    let speckle = speckle_field(spec);
    let mut frames = Array3::zeros((num_frames, spec.height, spec.width));
    for t in 0..num_frames {
        frames
            .index_axis_mut(ndarray::Axis(0), t)
            .assign(&render(spec, spec.radius(t as f64), &speckle));
    }
    let flows = (0..num_frames - 1).map(|t| analytic_flow(spec, t as f64, t as f64 + 1.)).collect();
    Ok((VideoClip::new(id, frames, spec.fps)?, flows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_phantom_has_identical_frames_and_zero_flow() -> Result<()> {
        let spec = PhantomSpec { pulse_amplitude: 0., speckle_sigma: 0., ..Default::default() };
        let (clip, flows) = generate_phantom("s", &spec, 20)?;
        for t in 1..clip.len() {
            assert_eq!(clip.frame(t), clip.frame(0));
        }
        assert!(flows.iter().all(|f| f.max_magnitude() == 0.));
        Ok(())
    }

    #[test]
    fn analytic_flow_explains_frame_motion() -> Result<()> {
        // warping frame t+1 back by the analytic flow should beat the identity on the band
        let spec = PhantomSpec { pulse_amplitude: 0.15, ..Default::default() };
        let (clip, flows) = generate_phantom("m", &spec, 16)?;
        let (mut warped_err, mut still_err) = (0., 0.);
        for t in 0..15 {
            let (f0, f1) = (clip.frame(t), clip.frame(t + 1));
            let flow = &flows[t];
            let up = Array2::from_shape_fn(f1.dim(), |(y, x)| f1[(y, x)] as f64);
            for ((y, x), &ok) in flow.valid_mask.as_ref().unwrap().indexed_iter() {
                if ok {
                    let s = bilinear(&up, x as f64 + flow.u[(y, x)] as f64, y as f64 + flow.v[(y, x)] as f64);
                    warped_err += (s - f0[(y, x)] as f64).abs();
                    still_err += (f1[(y, x)] - f0[(y, x)]).abs() as f64;
                }
            }
        }
        assert!(warped_err < 0.5 * still_err, "warped {warped_err} still {still_err}");
        Ok(())
    }

    #[test]
    fn seeded_generation_is_deterministic() -> Result<()> {
        let spec = PhantomSpec { seed: 42, ..Default::default() };
        let a = generate_phantom("a", &spec, 16)?;
        let b = generate_phantom("a", &spec, 16)?;
        assert_eq!(a, b);
        let c = generate_phantom("a", &PhantomSpec { seed: 43, ..spec }, 16)?;
        assert_ne!(a.0.frames, c.0.frames);
        Ok(())
    }

    #[test]
    fn flow_magnitude_respects_radius_rate_bound() -> Result<()> {
        // r changes by at most 2πAR/period per frame and the band reaches 1.55·1.1·r
        for period in [8., 12., 16., 24.] {
            let spec = PhantomSpec { pulse_amplitude: 0.2, base_radius: 10., period, ..Default::default() };
            let (_, flows) = generate_phantom("b", &spec, 32)?;
            let dr = 2. * 0.2 * 10. * std::f64::consts::PI / period;
            let bound = dr * BAND.1 * ASPECT / (1. - 0.2);
            let max = flows
                .iter()
                .flat_map(|f| {
                    let m = f.valid_mask.clone().unwrap();
                    f.u.iter().zip(f.v.iter()).zip(m).filter(|(_, ok)| *ok).map(|((u, v), _)| u.hypot(*v)).collect::<Vec<_>>()
                })
                .fold(0., f32::max) as f64;
            assert!(max > 0. && max <= bound, "period {period}: max {max} bound {bound}");
        }
        Ok(())
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_period = PhantomSpec { period: 3., ..Default::default() };
        assert!(generate_phantom("x", &bad_period, 16).is_err());
        let bad_amp = PhantomSpec { pulse_amplitude: 1., ..Default::default() };
        assert!(generate_phantom("x", &bad_amp, 16).is_err());
        assert!(generate_phantom("x", &PhantomSpec::default(), 8).is_err());
    }

    #[test]
    fn intensities_stay_in_unit_range() -> Result<()> {
        let spec = PhantomSpec { speckle_sigma: 0.8, ..Default::default() };
        let (clip, _) = generate_phantom("c", &spec, 16)?;
        assert!(clip.frames.iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    }
}
