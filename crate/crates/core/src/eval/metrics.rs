use crate::error::{Error, Result};
use crate::sim::{BinaryMask, EnvKind, EnvState};

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `sum_i |a_i - b_i|` over index-matched particles, without the rope
/// reversal.
pub fn matched_distance(a: &EnvState, b: &EnvState) -> Result<f64> {
    if a.kind != b.kind || a.positions.len() != b.positions.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot compare a {} state of {} particles with a {} state of {}",
            a.kind,
            a.positions.len(),
            b.kind,
            b.positions.len()
        )));
    }
    Ok(a.positions.iter().zip(&b.positions).map(|(p, q)| dist(p, q)).sum())
}

/// Sum of distances between corresponding particles. A rope is also compared
/// end-reversed and the smaller sum is returned.
pub fn paired_geom_distance(a: &EnvState, b: &EnvState) -> Result<f64> {
    let forward = matched_distance(a, b)?;
    if a.kind != EnvKind::Rope {
        return Ok(forward);
    }
    let reversed: f64 = a.positions.iter().zip(b.positions.iter().rev()).map(|(p, q)| dist(p, q)).sum();
    Ok(forward.min(reversed))
}

/// Pixels that are foreground in both masks.
pub fn pixel_intersection(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!("{0}x{0} mask vs {1}x{1} mask", a.size(), b.size())));
    }
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> EnvState {
        EnvState::rope_line([0.5, 0.5], [1.0, 0.0], 0.025)
    }

    #[test]
    fn translation_and_reversal() {
        let a = line();
        let mut b = a.clone();
        for p in &mut b.positions {
            p[0] += 0.3;
            p[1] += 0.4;
        }
        assert!((paired_geom_distance(&a, &b).unwrap() - 12.5).abs() < 1e-12);
        let mut r = a.clone();
        r.positions.reverse();
        assert_eq!(paired_geom_distance(&a, &r).unwrap(), 0.0);
        assert!(matched_distance(&a, &r).unwrap() > 0.0);
        assert_eq!(paired_geom_distance(&a, &a).unwrap(), 0.0);
        assert!(paired_geom_distance(&a, &EnvState::pointmass([0.5, 0.5])).is_err());
    }

    #[test]
    fn intersection_cases() {
        let m = |f: fn(usize) -> bool| BinaryMask::from_bits(4, (0..16).map(f).collect()).unwrap();
        let a = m(|i| i < 6);
        let b = m(|i| i >= 6);
        let full = m(|_| true);
        assert_eq!(pixel_intersection(&a, &a).unwrap(), 6);
        assert_eq!(pixel_intersection(&a, &b).unwrap(), 0);
        assert_eq!(pixel_intersection(&a, &full).unwrap(), 6);
        let other = BinaryMask::from_bits(2, vec![true; 4]).unwrap();
        assert!(pixel_intersection(&a, &other).is_err());
    }
}
