use super::{EnvKind, CLOTH_SIDE};

/// Particle positions and velocities of one object in workspace units.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub kind: EnvKind,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
}

impl EnvState {
    pub fn at_rest(kind: EnvKind, positions: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(positions.len(), kind.particle_count());
        let velocities = vec![[0.0; 3]; positions.len()];
        EnvState { kind, positions, velocities }
    }

    /// Straight rope along `dir` centered on `center` with `spacing` gaps.
    pub fn rope_line(center: [f64; 2], dir: [f64; 2], spacing: f64) -> Self {
        let n = EnvKind::Rope.particle_count();
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        let u = [dir[0] / norm, dir[1] / norm];
        let half = (n - 1) as f64 / 2.0;
        let positions = (0..n)
            .map(|i| {
                let s = (i as f64 - half) * spacing;
                [center[0] + s * u[0], center[1] + s * u[1], 0.0]
            })
            .collect();
        Self::at_rest(EnvKind::Rope, positions)
    }

    /// Flat square cloth grid centered on `center`; particle `(r, c)` is at
    /// index `r * 9 + c`.
    pub fn cloth_flat(center: [f64; 2], spacing: f64) -> Self {
        let half = (CLOTH_SIDE - 1) as f64 / 2.0;
        let mut positions = Vec::with_capacity(CLOTH_SIDE * CLOTH_SIDE);
        for r in 0..CLOTH_SIDE {
            for c in 0..CLOTH_SIDE {
                positions.push([
                    center[0] + (c as f64 - half) * spacing,
                    center[1] + (r as f64 - half) * spacing,
                    0.0,
                ]);
            }
        }
        Self::at_rest(EnvKind::Cloth, positions)
    }

    pub fn pointmass(pos: [f64; 2]) -> Self {
        Self::at_rest(EnvKind::Pointmass, vec![[pos[0], pos[1], 0.0]])
    }

    /// Index of the particle closest to `p` on the table plane.
    pub fn nearest_particle(&self, p: [f64; 2]) -> (usize, f64) {
        self.positions
            .iter()
            .enumerate()
            .map(|(i, q)| (i, ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.positions.len() as f64;
        let (sx, sy) = self.positions.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    }
}
