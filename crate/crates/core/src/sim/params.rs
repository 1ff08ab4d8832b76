use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::SEGMENT_THRESHOLD;
use super::EnvKind;
use crate::error::{Error, Result};

/// Appearance and physics parameters of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub background: [u8; 3],
    pub object: [u8; 3],
    /// Particle (and rope capsule) radius in pixels of the rendered image.
    pub radius_px: f64,
    pub brightness: f64,
    /// Standard deviation of the bounded additive pixel noise.
    pub noise_std: f64,
    pub noise_seed: u64,
    pub stiffness: f64,
    pub damping: f64,
    pub mass: f64,
    pub friction: f64,
}

pub const CANONICAL_BACKGROUND: [u8; 3] = [40, 40, 40];

fn canonical_object(kind: EnvKind) -> [u8; 3] {
    match kind {
        EnvKind::Pointmass => [230, 60, 60],
        EnvKind::Rope => [230, 200, 60],
        EnvKind::Cloth => [60, 110, 230],
    }
}

/// Radius at a 32 px image; scaled linearly with image size.
fn canonical_radius_32(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::Pointmass => 3.0,
        EnvKind::Rope | EnvKind::Cloth => 1.25,
    }
}

impl RenderParams {
    pub fn canonical(kind: EnvKind, image_size: usize) -> Self {
        RenderParams {
            background: CANONICAL_BACKGROUND,
            object: canonical_object(kind),
            radius_px: canonical_radius_32(kind) * image_size as f64 / 32.0,
            brightness: 1.0,
            noise_std: 0.0,
            noise_seed: 0,
            stiffness: 1.0,
            damping: 1.0,
            mass: 1.0,
            friction: 1.0,
        }
    }

    fn apply_gain(c: [u8; 3], gain: f64) -> [u8; 3] {
        c.map(|v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8)
    }

    /// Background color after the brightness gain; what segmentation compares
    /// against.
    pub fn effective_background(&self) -> [u8; 3] {
        Self::apply_gain(self.background, self.brightness)
    }

    pub fn effective_object(&self) -> [u8; 3] {
        Self::apply_gain(self.object, self.brightness)
    }
}

pub fn rgb_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Closed sampling ranges for domain randomization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterConfig {
    pub background: (f64, f64),
    pub object: (f64, f64),
    pub radius_scale: (f64, f64),
    pub brightness: (f64, f64),
    pub noise_std: (f64, f64),
    pub stiffness: (f64, f64),
    pub damping: (f64, f64),
    pub mass: (f64, f64),
    pub friction: (f64, f64),
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            background: (20.0, 70.0),
            object: (0.0, 255.0),
            radius_scale: (0.8, 1.25),
            brightness: (0.8, 1.2),
            noise_std: (0.0, 8.0),
            stiffness: (0.8, 1.2),
            damping: (0.8, 1.2),
            mass: (0.8, 1.2),
            friction: (0.8, 1.2),
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("background", self.background, 0.0, 255.0),
            ("object", self.object, 0.0, 255.0),
            ("radius_scale", self.radius_scale, 1e-3, 10.0),
            ("brightness", self.brightness, 1e-3, 10.0),
            ("noise_std", self.noise_std, 0.0, SEGMENT_THRESHOLD / 4.0),
            ("stiffness", self.stiffness, 0.5, 1.5),
            ("damping", self.damping, 0.5, 1.5),
            ("mass", self.mass, 0.5, 1.5),
            ("friction", self.friction, 0.5, 1.5),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(Error::InvalidArgument(format!(
                    "jitter range {name} = ({lo}, {hi}) must be ordered and within [{min}, {max}]"
                )));
            }
        }
        Ok(())
    }
}

/// Draws are rounded to `f32` so that the stored parameters reproduce the
/// episode exactly.
fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let v = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    v as f32 as f64
}

/// Canonical parameters when `randomize` is false; otherwise every field is
/// drawn uniformly from its range. The object color is redrawn until its
/// effective color is at least twice the segmentation threshold away from the
/// effective background.
pub fn sample_render_params<R: Rng + ?Sized>(
    rng: &mut R,
    kind: EnvKind,
    image_size: usize,
    randomize: bool,
    jitter: &JitterConfig,
) -> Result<RenderParams> {
    jitter.validate()?;
    let canonical = RenderParams::canonical(kind, image_size);
    if !randomize {
        return Ok(canonical);
    }
    let channel = |rng: &mut R, range| uniform(rng, range).round().clamp(0.0, 255.0) as u8;
    let mut p = canonical;
    p.background = [channel(rng, jitter.background), channel(rng, jitter.background), channel(rng, jitter.background)];
    p.brightness = uniform(rng, jitter.brightness);
    p.radius_px = (canonical.radius_px * uniform(rng, jitter.radius_scale)).max(1.0) as f32 as f64;
    p.noise_std = uniform(rng, jitter.noise_std);
    p.noise_seed = rng.gen();
    p.stiffness = uniform(rng, jitter.stiffness);
    p.damping = uniform(rng, jitter.damping);
    p.mass = uniform(rng, jitter.mass);
    p.friction = uniform(rng, jitter.friction);
    let mut tries = 0;
    loop {
        p.object = [channel(rng, jitter.object), channel(rng, jitter.object), channel(rng, jitter.object)];
        if rgb_distance(p.effective_object(), p.effective_background()) >= 2.0 * SEGMENT_THRESHOLD {
            break;
        }
        tries += 1;
        if tries > 10_000 {
            return Err(Error::InvalidArgument(
                "object color range cannot reach the required contrast".into(),
            ));
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = JitterConfig::default();
        let a = sample_render_params(&mut rng, EnvKind::Rope, 32, false, &j).unwrap();
        let b = sample_render_params(&mut rng, EnvKind::Rope, 32, false, &j).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, RenderParams::canonical(EnvKind::Rope, 32));
        for kind in EnvKind::ALL {
            let c = RenderParams::canonical(kind, 32);
            assert!(rgb_distance(c.object, c.background) >= 2.0 * SEGMENT_THRESHOLD);
        }
    }

    #[test]
    fn randomized_fields_cover_their_ranges() {
        let j = JitterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<RenderParams> = (0..1000)
            .map(|_| sample_render_params(&mut rng, EnvKind::Rope, 32, true, &j).unwrap())
            .collect();
        let canon = RenderParams::canonical(EnvKind::Rope, 32);
        let fields: Vec<(&str, Box<dyn Fn(&RenderParams) -> f64>, (f64, f64))> = vec![
            ("bg.r", Box::new(|p| p.background[0] as f64), j.background),
            ("bg.g", Box::new(|p| p.background[1] as f64), j.background),
            ("bg.b", Box::new(|p| p.background[2] as f64), j.background),
            ("obj.r", Box::new(|p| p.object[0] as f64), j.object),
            ("obj.g", Box::new(|p| p.object[1] as f64), j.object),
            ("obj.b", Box::new(|p| p.object[2] as f64), j.object),
            (
                "radius",
                Box::new(|p| p.radius_px),
                (canon.radius_px * j.radius_scale.0, canon.radius_px * j.radius_scale.1),
            ),
            ("brightness", Box::new(|p| p.brightness), j.brightness),
            ("noise", Box::new(|p| p.noise_std), j.noise_std),
            ("stiffness", Box::new(|p| p.stiffness), j.stiffness),
            ("damping", Box::new(|p| p.damping), j.damping),
            ("mass", Box::new(|p| p.mass), j.mass),
            ("friction", Box::new(|p| p.friction), j.friction),
        ];
        for (name, get, (lo, hi)) in fields {
            let (mn, mx) = draws
                .iter()
                .map(&get)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            assert!(mn >= lo - 1e-6 && mx <= hi + 1e-6, "{name} escaped its range");
            assert!((mx - mn) >= 0.9 * (hi - lo), "{name} spans {mn}..{mx} of {lo}..{hi}");
        }
        for p in &draws {
            assert!(rgb_distance(p.effective_object(), p.effective_background()) >= 2.0 * SEGMENT_THRESHOLD);
            assert!(p.radius_px >= 1.0);
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let j = JitterConfig {
            noise_std: (0.0, 40.0),
            ..Default::default()
        };
        assert!(j.validate().is_err());
        let j = JitterConfig {
            mass: (1.2, 0.8),
            ..Default::default()
        };
        assert!(j.validate().is_err());
    }
}
