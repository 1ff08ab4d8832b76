//! `CFMD` binary layout, little-endian throughout:
//!
//! ```text
//! magic "CFMD" | u32 version | u8 env_kind | u16 H | u16 W | u8 action_dim
//! | u32 n_traj | u32 traj_len | u8 randomize
//! per trajectory:
//!   u64 reset_seed
//!   f32 x13 render params (background rgb, object rgb, radius, brightness,
//!       noise std, stiffness, damping, mass, friction) | u64 noise_seed
//!   (traj_len + 1) x H x W x 3 u8 images
//!   traj_len x action_dim f32 actions
//!   (traj_len + 1) x particles x 6 f32 states (position xyz, velocity xyz)
//! ```

use std::path::Path;

use super::{Dataset, Trajectory};
use crate::error::{Error, FormatError, Result};
use crate::sim::{EnvKind, EnvState, ImageObs, PickPlaceAction, RenderParams};

pub const DATASET_MAGIC: [u8; 4] = *b"CFMD";
pub const DATASET_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(FormatError::Truncated { offset: self.pos, needed: n - rest });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found = self.array::<4>()?;
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<(), FormatError> {
        let found = self.u32()?;
        if found != supported {
            return Err(FormatError::VersionMismatch { found, supported });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Corrupt(format!(
                "{} trailing bytes after offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn write_params(out: &mut Vec<u8>, p: &RenderParams) {
    for c in p.background.iter().chain(&p.object) {
        put_f32(out, *c as f64);
    }
    for v in [p.radius_px, p.brightness, p.noise_std, p.stiffness, p.damping, p.mass, p.friction] {
        put_f32(out, v);
    }
    out.extend_from_slice(&p.noise_seed.to_le_bytes());
}

fn read_params(r: &mut Reader<'_>) -> Result<RenderParams, FormatError> {
    let mut color = [0u8; 6];
    for c in color.iter_mut() {
        let v = r.f32()?;
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(FormatError::Corrupt(format!("color channel {v}")));
        }
        *c = v as u8;
    }
    let mut f = [0f64; 7];
    for v in f.iter_mut() {
        *v = r.f32()? as f64;
    }
    Ok(RenderParams {
        background: [color[0], color[1], color[2]],
        object: [color[3], color[4], color[5]],
        radius_px: f[0],
        brightness: f[1],
        noise_std: f[2],
        stiffness: f[3],
        damping: f[4],
        mass: f[5],
        friction: f[6],
        noise_seed: r.u64()?,
    })
}

pub fn save(d: &Dataset) -> Vec<u8> {
    let kind = d.kind();
    let size = d.image_size();
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.push(kind.code());
    out.extend_from_slice(&(size as u16).to_le_bytes());
    out.extend_from_slice(&(size as u16).to_le_bytes());
    out.push(kind.action_dim() as u8);
    out.extend_from_slice(&(d.trajectories().len() as u32).to_le_bytes());
    out.extend_from_slice(&(d.traj_len() as u32).to_le_bytes());
    out.push(d.randomize() as u8);
    for t in d.trajectories() {
        out.extend_from_slice(&t.reset_seed.to_le_bytes());
        write_params(&mut out, &t.params);
        for im in &t.images {
            out.extend_from_slice(im.pixels());
        }
        for a in &t.actions {
            for v in a.to_vec() {
                put_f32(&mut out, v);
            }
        }
        for s in &t.states {
            for (p, v) in s.positions.iter().zip(&s.velocities) {
                for x in p.iter().chain(v) {
                    put_f32(&mut out, *x);
                }
            }
        }
    }
    out
}

pub fn load(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let code = r.u8()?;
    let kind = EnvKind::from_code(code).ok_or_else(|| FormatError::Corrupt(format!("env kind code {code}")))?;
    let (h, w) = (r.u16()? as usize, r.u16()? as usize);
    if h != w {
        return Err(FormatError::Corrupt(format!("non-square images {h}x{w}")).into());
    }
    let action_dim = r.u8()? as usize;
    if action_dim != kind.action_dim() {
        return Err(FormatError::Corrupt(format!("{kind} actions have {} dims, header says {action_dim}", kind.action_dim())).into());
    }
    let n_traj = r.u32()? as usize;
    let traj_len = r.u32()? as usize;
    let randomize = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(FormatError::Corrupt(format!("randomize flag {v}")).into()),
    };
    let particles = kind.particle_count();
    let mut trajectories = Vec::with_capacity(n_traj.min(1 << 16));
    for _ in 0..n_traj {
        let reset_seed = r.u64()?;
        let params = read_params(&mut r)?;
        let mut images = Vec::with_capacity(traj_len + 1);
        for _ in 0..=traj_len {
            let px = r.take(h * w * 3)?.to_vec();
            images.push(ImageObs::new(h, px).map_err(|e| FormatError::Corrupt(e.to_string()))?);
        }
        let mut actions = Vec::with_capacity(traj_len);
        for _ in 0..traj_len {
            let v = (0..action_dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>, _>>()?;
            actions.push(PickPlaceAction::from_slice(kind, &v).map_err(|e| FormatError::Corrupt(e.to_string()))?);
        }
        let mut states = Vec::with_capacity(traj_len + 1);
        for _ in 0..=traj_len {
            let mut positions = Vec::with_capacity(particles);
            let mut velocities = Vec::with_capacity(particles);
            for _ in 0..particles {
                let mut v = [0f64; 6];
                for x in v.iter_mut() {
                    *x = r.f32()? as f64;
                }
                positions.push([v[0], v[1], v[2]]);
                velocities.push([v[3], v[4], v[5]]);
            }
            states.push(EnvState { kind, positions, velocities });
        }
        trajectories.push(Trajectory { reset_seed, params, images, actions, states });
    }
    r.finish()?;
    Dataset::new(kind, h, randomize, trajectories).map_err(|e| match e {
        Error::Format(f) => Error::Format(f),
        other => Error::Format(FormatError::Corrupt(other.to_string())),
    })
}

pub fn write_file(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, save(d))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Dataset> {
    load(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect_random;
    use crate::sim::Env;

    fn sample() -> Dataset {
        collect_random(&Env::new(EnvKind::Cloth, 16).unwrap(), 2, 3, 5, true).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let bytes = save(&d);
        let back = load(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(save(&back), bytes);
    }

    #[test]
    fn corruptions_map_to_distinct_errors() {
        let bytes = save(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(load(&bad), Err(Error::Format(FormatError::VersionMismatch { found: 9, .. }))));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load(&bytes[..cut]), Err(Error::Format(FormatError::Truncated { .. }))));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(load(&long), Err(Error::Format(FormatError::Corrupt(_)))));
    }
}
