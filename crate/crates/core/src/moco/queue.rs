use super::Embedding;
use crate::dataspec::GroupId;
use crate::{Error, Result};

/// Fixed-capacity FIFO of unit-norm keys, each tagged with the location group
/// that produced it.
///
/// Slots are written circularly from `write_pointer`; before the first wrap
/// the filled slots are exactly `0..fill_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    keys: Vec<f64>,
    group_ids: Vec<GroupId>,
    write_pointer: usize,
    fill_count: usize,
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Contract("queue capacity and dimension must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            keys: vec![0.0; capacity * dim],
            group_ids: vec![GroupId(u32::MAX); capacity],
            write_pointer: 0,
            fill_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn write_pointer(&self) -> usize {
        self.write_pointer
    }

    pub fn fill_count(&self) -> usize {
        self.fill_count
    }

    pub fn is_empty(&self) -> bool {
        self.fill_count == 0
    }

    pub fn key(&self, slot: usize) -> &[f64] {
        &self.keys[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn group_id(&self, slot: usize) -> GroupId {
        self.group_ids[slot]
    }

    /// Filled slots in slot order.
    pub fn filled(&self) -> impl Iterator<Item = (&[f64], GroupId)> + '_ {
        (0..self.fill_count).map(move |s| (self.key(s), self.group_ids[s]))
    }

    /// Filled slot indices from oldest to newest.
    pub fn slots_oldest_first(&self) -> Vec<usize> {
        let start = if self.fill_count < self.capacity { 0 } else { self.write_pointer };
        (0..self.fill_count).map(|i| (start + i) % self.capacity).collect()
    }

    /// Writes the batch at the write pointer (wrapping), evicting the oldest
    /// entries once the queue is full.
    pub fn enqueue(&mut self, keys: &[Embedding], group_ids: &[GroupId]) -> Result<()> {
        if keys.len() != group_ids.len() {
            return Err(Error::Contract(format!(
                "{} keys but {} group ids",
                keys.len(),
                group_ids.len()
            )));
        }
        if keys.len() > self.capacity {
            return Err(Error::Contract(format!(
                "batch of {} exceeds queue capacity {}",
                keys.len(),
                self.capacity
            )));
        }
        if let Some(k) = keys.iter().find(|k| k.dim() != self.dim) {
            return Err(Error::Contract(format!(
                "key of dimension {} for a queue of dimension {}",
                k.dim(),
                self.dim
            )));
        }
        for (k, g) in keys.iter().zip(group_ids) {
            let slot = self.write_pointer;
            self.keys[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(k.as_slice());
            self.group_ids[slot] = *g;
            self.write_pointer = (self.write_pointer + 1) % self.capacity;
        }
        self.fill_count = (self.fill_count + keys.len()).min(self.capacity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize, tag: usize) -> (Vec<Embedding>, Vec<GroupId>) {
        let ks = (0..n)
            .map(|i| Embedding::normalized(vec![1.0, (tag * 100 + i) as f64]).unwrap())
            .collect();
        let gs = (0..n).map(|i| GroupId((tag * 100 + i) as u32)).collect();
        (ks, gs)
    }

    #[test]
    fn first_enqueue() {
        let mut q = MemoryQueue::new(8, 2).unwrap();
        let (k, g) = keys(3, 0);
        q.enqueue(&k, &g).unwrap();
        assert_eq!((q.fill_count(), q.write_pointer()), (3, 3));
    }

    #[test]
    fn third_batch_evicts_the_first() {
        let mut q = MemoryQueue::new(8, 2).unwrap();
        for tag in 0..3 {
            let (k, g) = keys(4, tag);
            q.enqueue(&k, &g).unwrap();
        }
        let groups: Vec<u32> = q.slots_oldest_first().iter().map(|&s| q.group_id(s).0).collect();
        assert_eq!(groups, vec![100, 101, 102, 103, 200, 201, 202, 203]);
        assert_eq!(q.write_pointer(), 4);
    }

    #[test]
    fn full_wrap_replaces_everything() {
        let mut q = MemoryQueue::new(8, 2).unwrap();
        let (k, g) = keys(3, 0);
        q.enqueue(&k, &g).unwrap();
        let (k, g) = keys(8, 1);
        q.enqueue(&k, &g).unwrap();
        let ptr = q.write_pointer();
        let (k, g) = keys(8, 2);
        q.enqueue(&k, &g).unwrap();
        assert_eq!(q.write_pointer(), ptr);
        assert!(q.filled().all(|(_, g)| g.0 / 100 == 2));
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let mut q = MemoryQueue::new(4, 2).unwrap();
        let (k, g) = keys(5, 0);
        assert!(matches!(q.enqueue(&k, &g), Err(Error::Contract(_))));
        assert_eq!(q.fill_count(), 0);
    }
}
