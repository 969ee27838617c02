//! Fixed-capacity experience replay with provenance tags.

use std::collections::VecDeque;

use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

/// A transition plus where it came from.
#[derive(Debug, Clone)]
pub struct Tagged {
    pub transition: Transition,
    pub actor_id: usize,
    /// Per-actor sequence number.
    pub actor_seq: u64,
    /// Buffer-wide insertion number.
    pub seq: u64,
    /// Parameter snapshot version the actor acted with.
    pub version: u64,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Tagged>,
    pushed: u64,
    evicted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay_capacity", "must be positive"));
        }
        Ok(ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity), pushed: 0, evicted: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Inserts, evicting the oldest entry when full. Overwrites `seq`.
    pub fn push(&mut self, mut item: Tagged) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.evicted += 1;
        }
        item.seq = self.pushed;
        self.pushed += 1;
        self.items.push_back(item);
    }

    pub fn push_transition(&mut self, t: Transition) {
        self.push(Tagged { transition: t, actor_id: 0, actor_seq: self.pushed, seq: 0, version: 0 });
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tagged> {
        self.items.iter()
    }

    /// `m` distinct entries, uniformly at random.
    pub fn sample<R: Rng>(&self, m: usize, rng: &mut R) -> Result<Vec<&Tagged>> {
        if m == 0 || m > self.items.len() {
            return Err(Error::invalid("batch_size", format!("cannot sample {m} from {} transitions", self.items.len())));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), m).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::WeightVector;
    use crate::data::{FeatureBlock, State};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn tr(r: f64) -> Transition {
        let s = Arc::new(State::new(Arc::new(FeatureBlock::zeros(2, 1)), WeightVector::equal(2), 0).unwrap());
        Transition { state: s.clone(), action: WeightVector::equal(2), reward: r, next_state: s, terminal: false }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push_transition(tr(i as f64));
        }
        let seqs: Vec<u64> = b.iter().map(|t| t.seq).collect();
        assert_eq!(seqs, vec![2, 3, 4]);
        assert_eq!((b.len(), b.pushed(), b.evicted()), (3, 5, 2));
    }

    #[test]
    fn sampling_is_without_replacement_and_from_contents() {
        let mut b = ReplayBuffer::new(50).unwrap();
        for i in 0..80 {
            b.push_transition(tr(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let batch = b.sample(32, &mut rng).unwrap();
            let seqs: HashSet<u64> = batch.iter().map(|t| t.seq).collect();
            assert_eq!(seqs.len(), 32);
            assert!(seqs.iter().all(|s| (30..80).contains(s)));
            assert!(batch.iter().all(|t| t.transition.reward == t.seq as f64));
        }
        assert!(b.sample(51, &mut rng).is_err());
    }
}
