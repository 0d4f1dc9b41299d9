use rand::Rng;

/// Fixed-capacity ring with FIFO eviction.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    /// Slot the next push overwrites once full.
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
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

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform draw with replacement.
    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R, n: usize) -> Vec<&'a T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}
