//! Bounded FIFO experience store with uniform minibatch sampling.

use std::collections::VecDeque;

use rand::Rng;

/// Fixed-capacity replay buffer. Pushing past capacity evicts the oldest
/// entry; batches are sampled uniformly without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample of `batch_size` distinct experiences. Returns `None`
    /// until the buffer holds at least `batch_size` entries.
    pub fn sample<'a, R: Rng + ?Sized>(
        &'a self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<&'a T>> {
        if self.items.len() < batch_size || batch_size == 0 {
            return None;
        }
        let picks = rand::seq::index::sample(rng, self.items.len(), batch_size);
        Some(picks.iter().map(|i| &self.items[i]).collect())
    }

    /// Oldest-to-newest iteration, mostly for tests.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..8 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 5);
        let contents: Vec<_> = buf.iter().copied().collect();
        assert_eq!(contents, vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn sampling_gates_on_size_and_avoids_duplicates() {
        let mut buf = ReplayBuffer::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(1, &mut rng).is_none());
        for i in 0..10 {
            buf.push(i);
        }
        assert!(buf.sample(11, &mut rng).is_none());
        for _ in 0..50 {
            let batch = buf.sample(10, &mut rng).unwrap();
            let mut vals: Vec<i32> = batch.into_iter().copied().collect();
            vals.sort_unstable();
            vals.dedup();
            assert_eq!(vals.len(), 10, "sample drew a duplicate");
        }
    }

    #[test]
    fn sampling_is_deterministic_given_rng() {
        let mut buf = ReplayBuffer::new(64);
        for i in 0..64 {
            buf.push(i);
        }
        let a: Vec<i32> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .into_iter()
            .copied()
            .collect();
        let b: Vec<i32> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .into_iter()
            .copied()
            .collect();
        assert_eq!(a, b);
    }
}
