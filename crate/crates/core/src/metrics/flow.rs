use ndarray::Zip;

use crate::data::FlowField;
use crate::error::ensure;
use crate::Result;

/// Mean Euclidean distance between flow vectors over pixels valid in both fields.
pub fn endpoint_error(f: &FlowField, g: &FlowField) -> Result<f64> {
    ensure!(f.dim() == g.dim(), "flow shapes differ: {:?} vs {:?}", f.dim(), g.dim());
    let (mut sum, mut count) = (0f64, 0usize);
    Zip::indexed(&f.u).and(&f.v).and(&g.u).and(&g.v).for_each(|(y, x), uf, vf, ug, vg| {
        if f.is_valid(y, x) && g.is_valid(y, x) {
            sum += ((uf - ug) as f64).hypot((vf - vg) as f64);
            count += 1;
        }
    });
    if count == 0 {
        log::warn!("endpoint error: mask excludes every pixel; reporting 0");
        return Ok(0.);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn examples() -> Result<()> {
        let f = FlowField::constant(4, 5, 3., 4.);
        assert_eq!(endpoint_error(&f, &f)?, 0.);
        assert!((endpoint_error(&f, &FlowField::zeros(4, 5))? - 5.).abs() < 1e-12);
        let masked = f.clone().with_mask(Array2::from_elem((4, 5), false))?;
        assert_eq!(endpoint_error(&masked, &FlowField::zeros(4, 5))?, 0.);
        assert!(endpoint_error(&f, &FlowField::zeros(4, 4)).is_err());
        Ok(())
    }

    #[test]
    fn only_valid_pixels_count() -> Result<()> {
        let mut u = Array2::zeros((2, 2));
        u[(0, 0)] = 10.;
        let f = FlowField::new(u, Array2::zeros((2, 2)))?.with_mask(Array2::from_shape_fn((2, 2), |(y, x)| (y, x) != (0, 0)))?;
        assert_eq!(endpoint_error(&f, &FlowField::zeros(2, 2))?, 0.);
        Ok(())
    }
}
