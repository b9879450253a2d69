use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::Episode;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<[f64]>,
    pub accept: bool,
    pub forced: bool,
    pub reward: f64,
    /// Zeros when `done`.
    pub next_state: Arc<[f64]>,
    /// The fallback rule fixes the action in the next state.
    pub next_forced: bool,
    pub done: bool,
}

impl Transition {
    pub fn action_index(&self) -> usize {
        usize::from(self.accept)
    }
}

/// Splits an episode into transitions; consecutive transitions share their
/// feature buffers.
pub fn episode_transitions(ep: &Episode) -> Vec<Transition> {
    let states: Vec<Arc<[f64]>> = ep.steps.iter().map(|s| Arc::from(s.features.as_slice())).collect();
    let dim = states.first().map_or(0, |s| s.len());
    let zeros: Arc<[f64]> = Arc::from(vec![0.0; dim]);
    let n = ep.steps.len();
    ep.steps
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let done = j + 1 == n;
            Transition {
                state: Arc::clone(&states[j]),
                accept: s.action.accept,
                forced: s.action.forced,
                reward: s.reward,
                next_state: if done {
                    Arc::clone(&zeros)
                } else {
                    Arc::clone(&states[j + 1])
                },
                next_forced: !done && ep.steps[j + 1].action.forced,
                done,
            }
        })
        .collect()
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            pushed: 0,
        }
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

    /// Transitions ever pushed, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform draws with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::BufferEmpty);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn item(r: f64) -> Transition {
        Transition {
            state: Arc::from(vec![r]),
            accept: true,
            forced: false,
            reward: r,
            next_state: Arc::from(vec![0.0]),
            next_forced: false,
            done: true,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 1..=4 {
            b.push(item(f64::from(i)));
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.total_pushed(), 4);
    }

    #[test]
    fn single_item_sampling() {
        let mut b = ReplayBuffer::new(10);
        b.push(item(7.0));
        let s = b.sample(5, &mut stream(0, Stream::BufferSampling)).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|t| t.reward == 7.0));
    }

    #[test]
    fn empty_sampling_fails() {
        let b = ReplayBuffer::new(4);
        assert!(matches!(
            b.sample(1, &mut stream(0, Stream::BufferSampling)),
            Err(Error::BufferEmpty)
        ));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(item(f64::from(i)));
        }
        let n = 100_000;
        let mut counts = [0u32; 100];
        for i in b.sample_indices(n, &mut stream(42, Stream::BufferSampling)).unwrap() {
            counts[i] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");
    }
}
