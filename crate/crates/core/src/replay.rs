//! Fixed-capacity FIFO experience storage with uniform sampling.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::LabRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Terminal transition: the target does not bootstrap from `s_next`.
    pub done: bool,
    /// Mixture component (1 or 2) that produced `a`.
    pub component_id: usize,
}

impl Transition {
    fn is_finite(&self) -> bool {
        self.r.is_finite()
            && self.s.iter().chain(&self.a).chain(&self.s_next).all(|v| v.is_finite())
    }
}

/// Minibatch in column-stacked form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
    pub components: Vec<usize>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        Ok(Self {
            states: Tensor::from_rows(&ts.iter().map(|t| &t.s[..]).collect::<Vec<_>>())?,
            actions: Tensor::from_rows(&ts.iter().map(|t| &t.a[..]).collect::<Vec<_>>())?,
            rewards: ts.iter().map(|t| t.r).collect(),
            next_states: Tensor::from_rows(&ts.iter().map(|t| &t.s_next[..]).collect::<Vec<_>>())?,
            dones: ts.iter().map(|t| t.done).collect(),
            components: ts.iter().map(|t| t.component_id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
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

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut LabRng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_transitions(&self, batch_size: usize, rng: &mut LabRng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut LabRng) -> Result<Batch> {
        Batch::from_transitions(&self.sample_transitions(batch_size, rng)?)
    }
}

/// One shared buffer, or one buffer per mixture component.
#[derive(Debug, Clone)]
pub enum ReplaySet {
    Shared(ReplayBuffer),
    Separate([ReplayBuffer; 2]),
}

impl ReplaySet {
    pub fn new(capacity: usize, separate: bool) -> Result<Self> {
        Ok(if separate {
            ReplaySet::Separate([ReplayBuffer::new(capacity)?, ReplayBuffer::new(capacity)?])
        } else {
            ReplaySet::Shared(ReplayBuffer::new(capacity)?)
        })
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        match self {
            ReplaySet::Shared(b) => b.push(t),
            ReplaySet::Separate(bs) => match t.component_id {
                1 | 2 => bs[t.component_id - 1].push(t),
                c => Err(Error::invalid(format!("component id {c} not in {{1, 2}}"))),
            },
        }
    }

    /// The buffer that component `component` learns from.
    pub fn buffer_for(&self, component: usize) -> &ReplayBuffer {
        match self {
            ReplaySet::Shared(b) => b,
            ReplaySet::Separate(bs) => &bs[component - 1],
        }
    }

    /// Size of the smallest buffer.
    pub fn min_len(&self) -> usize {
        match self {
            ReplaySet::Shared(b) => b.len(),
            ReplaySet::Separate(bs) => bs[0].len().min(bs[1].len()),
        }
    }

    pub fn is_separate(&self) -> bool {
        matches!(self, ReplaySet::Separate(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t(r: f64) -> Transition {
        Transition {
            s: vec![r],
            a: vec![0.0],
            r,
            s_next: vec![r + 1.0],
            done: false,
            component_id: 1,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for r in [1.0, 2.0, 3.0] {
            b.push(t(r)).unwrap();
        }
        let kept: Vec<f64> = b.iter_fifo().map(|t| t.r).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn size_tracks_pushes_until_capacity() {
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..8 {
            b.push(t(i as f64)).unwrap();
            assert_eq!(b.len(), (i + 1).min(5));
        }
    }

    #[test]
    fn single_item_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(t(7.0)).unwrap();
        let batch = b.sample(3, &mut seeded(0)).unwrap();
        assert_eq!(batch.rewards, vec![7.0; 3]);
        assert_eq!(batch.next_states.data(), &[8.0; 3]);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        let mut b = ReplayBuffer::new(4).unwrap();
        assert_eq!(b.sample(1, &mut seeded(0)).unwrap_err(), Error::EmptyBuffer);
        assert!(b.push(t(f64::NAN)).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.push(t(i as f64)).unwrap();
        }
        let x = b.sample_indices(32, &mut seeded(5)).unwrap();
        let y = b.sample_indices(32, &mut seeded(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sampling_is_uniform() {
        // Binomial(n, 1/10) per item; 3 sigma band.
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.push(t(i as f64)).unwrap();
        }
        let n = 100_000;
        let mut counts = [0usize; 10];
        for i in b.sample_indices(n, &mut seeded(9)).unwrap() {
            counts[i] += 1;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.1).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn separate_buffers_route_by_component() {
        let mut set = ReplaySet::new(8, true).unwrap();
        let mut a = t(1.0);
        a.component_id = 2;
        set.push(a).unwrap();
        set.push(t(2.0)).unwrap();
        assert_eq!(set.buffer_for(2).iter_fifo().next().unwrap().r, 1.0);
        assert_eq!(set.buffer_for(1).iter_fifo().next().unwrap().r, 2.0);
        let mut bad = t(0.0);
        bad.component_id = 3;
        assert!(set.push(bad).is_err());
    }
}
