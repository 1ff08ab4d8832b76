use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sim::{normalize_into, EnvKind};

/// `B` transitions with images normalized to `[-1, 1]`, channel-major.
/// Row `i` of `next_obs` is the positive for row `i` of `obs`; every other
/// row serves as a negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Tensor<f32>,
    pub actions: Tensor<f32>,
    pub next_obs: Tensor<f32>,
    /// Transition index of every row.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Read-only access to `(o_t, a_t, o_{t+1})` tuples. Transition `i` is step
/// `i % traj_len` of trajectory `i / traj_len`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionView<'a> {
    data: &'a Dataset,
}

impl<'a> TransitionView<'a> {
    pub(super) fn new(data: &'a Dataset) -> Self {
        TransitionView { data }
    }

    pub fn len(&self) -> usize {
        self.data.transition_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> EnvKind {
        self.data.kind()
    }

    pub fn image_size(&self) -> usize {
        self.data.image_size()
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let l = self.data.traj_len();
        (i / l, i % l)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.len() < 2 {
            return Err(Error::InvalidArgument("a batch needs at least 2 rows to supply negatives".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("transition {bad} out of range ({})", self.len())));
        }
        let s = self.image_size();
        let dim = self.kind().action_dim();
        let b = indices.len();
        let mut obs = Vec::with_capacity(b * 3 * s * s);
        let mut next = Vec::with_capacity(b * 3 * s * s);
        let mut act = Vec::with_capacity(b * dim);
        for &i in indices {
            let (t, k) = self.locate(i);
            let traj = &self.data.trajectories()[t];
            normalize_into(traj.images[k].pixels(), s, &mut obs);
            normalize_into(traj.images[k + 1].pixels(), s, &mut next);
            act.extend(traj.actions[k].features());
        }
        Ok(Batch {
            obs: Tensor::new(vec![b, 3, s, s], obs)?,
            actions: Tensor::new(vec![b, dim], act)?,
            next_obs: Tensor::new(vec![b, 3, s, s], next)?,
            indices: indices.to_vec(),
        })
    }

    /// One shuffled pass in batches of `batch_size`; the remainder that does
    /// not fill a batch is dropped.
    pub fn epoch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        self.check_size(batch_size)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
    }

    /// `batch_size` distinct transitions drawn uniformly.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        self.check_size(batch_size)?;
        let idx = index::sample(rng, self.len(), batch_size).into_vec();
        self.batch(&idx)
    }

    fn check_size(&self, batch_size: usize) -> Result<()> {
        if batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if batch_size > self.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} exceeds the {} available transitions",
                self.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect_random;
    use crate::sim::Env;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epoch_covers_everything_but_the_remainder() {
        let d = collect_random(&Env::new(EnvKind::Pointmass, 16).unwrap(), 5, 7, 2, false).unwrap();
        let view = d.transitions();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = view.epoch(8, &mut rng).unwrap();
        assert_eq!(batches.len(), 35 / 8);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 32);
        assert!(view.epoch(36, &mut rng).is_err());
        assert!(view.epoch(1, &mut rng).is_err());
    }

    #[test]
    fn batch_rows_are_consecutive_frames() {
        let d = collect_random(&Env::new(EnvKind::Rope, 16).unwrap(), 2, 4, 3, true).unwrap();
        let view = d.transitions();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = view.sample_batch(6, &mut rng).unwrap();
        assert_eq!(b.obs.shape(), &[6, 3, 16, 16]);
        assert_eq!(b.actions.shape(), &[6, 4]);
        let per = 3 * 16 * 16;
        for (row, &i) in b.indices.iter().enumerate() {
            let (t, k) = (i / 4, i % 4);
            let img = &d.trajectories()[t].images[k + 1];
            assert_eq!(&b.next_obs.data()[row * per..(row + 1) * per], img.to_normalized().as_slice());
            let a = d.trajectories()[t].actions[k].features();
            assert_eq!(&b.actions.data()[row * 4..(row + 1) * 4], a.as_slice());
        }
        assert!(b.obs.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(b.actions.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
