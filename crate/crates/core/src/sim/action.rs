use super::EnvKind;
use crate::error::{Error, Result};

/// A pick location in normalized image coordinates plus a displacement
/// direction. Pointmass actions carry no pick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PickPlaceAction {
    kind: EnvKind,
    pick: [f64; 2],
    delta: [f64; 3],
}

fn check_range(v: f64, lo: f64, hi: f64, what: &str) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::InvalidArgument(format!("{what} component {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl PickPlaceAction {
    pub fn new(kind: EnvKind, pick: Option<[f64; 2]>, delta: &[f64]) -> Result<Self> {
        if delta.len() != kind.delta_dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind} delta needs {} components, got {}",
                kind.delta_dim(),
                delta.len()
            )));
        }
        let pick = match (kind.has_pick(), pick) {
            (true, Some(p)) => p,
            (false, None) => [0.0; 2],
            (true, None) => return Err(Error::InvalidArgument(format!("{kind} action needs a pick point"))),
            (false, Some(_)) => return Err(Error::InvalidArgument("pointmass actions have no pick point".into())),
        };
        for &p in &pick {
            check_range(p, 0.0, 1.0, "pick")?;
        }
        let mut d = [0.0; 3];
        for (slot, &v) in d.iter_mut().zip(delta) {
            check_range(v, -1.0, 1.0, "delta")?;
            *slot = v;
        }
        Ok(PickPlaceAction { kind, pick, delta: d })
    }

    /// Inverse of [`to_vec`](Self::to_vec).
    pub fn from_slice(kind: EnvKind, v: &[f64]) -> Result<Self> {
        if v.len() != kind.action_dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind} action has {} dims, got {}",
                kind.action_dim(),
                v.len()
            )));
        }
        if kind.has_pick() {
            Self::new(kind, Some([v[0], v[1]]), &v[2..])
        } else {
            Self::new(kind, None, v)
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn pick(&self) -> Option<[f64; 2]> {
        self.kind.has_pick().then_some(self.pick)
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta[..self.kind.delta_dim()]
    }

    /// Flat action vector `[u, v, dx, dy(, dz)]`, or `[dx, dy]` for pointmass.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kind.action_dim());
        if self.kind.has_pick() {
            out.extend_from_slice(&self.pick);
        }
        out.extend_from_slice(self.delta());
        out
    }

    /// The model's action input: [`to_vec`](Self::to_vec) with the pick
    /// mapped from `[0, 1]` to `[-1, 1]`.
    pub fn features(&self) -> Vec<f32> {
        let mut out = self.to_vec();
        if self.kind.has_pick() {
            out[0] = 2.0 * out[0] - 1.0;
            out[1] = 2.0 * out[1] - 1.0;
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}
