//! Proportional prioritized replay backed by a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Pixel-space experience. Imagined experience has no pixel form, so this
/// type carries no "imagined" flag at all.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Total reward (extrinsic plus intrinsic).
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTransition {
    pub latent: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_latent: Vec<f64>,
    pub terminal: bool,
    pub imagined: bool,
}

/// Binary tree whose internal nodes hold the sum of their children.
/// Leaves live at `tree[base + i]`.
#[derive(Clone, Debug)]
pub struct SumTree {
    base: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let base = capacity.max(1).next_power_of_two();
        Self {
            base,
            tree: vec![0.0; 2 * base],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    pub fn leaf(&self, i: usize) -> f64 {
        self.tree[self.base + i]
    }

    /// Sets a leaf and recomputes its ancestors from their children.
    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.base + i;
        self.tree[node] = value;
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`. Never lands on a
    /// zero-valued leaf when the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut node = 1;
        while node < self.base {
            let left = self.tree[2 * node];
            let right = self.tree[2 * node + 1];
            if (mass < left && left > 0.0) || right <= 0.0 {
                node *= 2;
            } else {
                mass = (mass - left).max(0.0);
                node = 2 * node + 1;
            }
        }
        node - self.base
    }

    /// Largest relative gap between an internal node and the sum of its
    /// children.
    pub fn consistency_error(&self) -> f64 {
        (1..self.base)
            .map(|n| {
                let sum = self.tree[2 * n] + self.tree[2 * n + 1];
                (self.tree[n] - sum).abs() / sum.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

/// Identifies a stored item at sampling time so later priority updates can
/// detect that the slot has since been overwritten.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleHandle {
    pub slot: usize,
    pub serial: u64,
}

#[derive(Debug)]
pub struct Sample<'a, T> {
    pub items: Vec<&'a T>,
    pub handles: Vec<SampleHandle>,
    /// Importance weights normalized by the batch maximum.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PrioritizedBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    serials: Vec<u64>,
    priorities: Vec<f64>,
    tree: SumTree,
    next_slot: usize,
    inserted: u64,
    alpha: f64,
    beta0: f64,
    beta: f64,
    priority_floor: f64,
    max_priority: f64,
    stale_updates: u64,
}

impl<T> PrioritizedBuffer<T> {
    pub fn new(capacity: usize, alpha: f64, beta0: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) || !(0.0..=1.0).contains(&beta0) {
            return Err(Error::Config(format!(
                "invalid PER exponents alpha={alpha} beta0={beta0}"
            )));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            serials: Vec::new(),
            priorities: Vec::new(),
            tree: SumTree::new(capacity),
            next_slot: 0,
            inserted: 0,
            alpha,
            beta0,
            beta: beta0,
            priority_floor: 1e-5,
            max_priority: 1.0,
            stale_updates: 0,
        })
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

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Anneals β linearly from β₀ (progress 0) to 1 (progress ≥ 1).
    pub fn set_progress(&mut self, progress: f64) {
        let p = progress.clamp(0.0, 1.0);
        self.beta = self.beta0 + (1.0 - self.beta0) * p;
    }

    /// Raw priority of a resident slot.
    pub fn priority(&self, slot: usize) -> Option<f64> {
        self.priorities.get(slot).copied()
    }

    /// `p^α` as stored in the tree.
    pub fn leaf_mass(&self, slot: usize) -> f64 {
        self.tree.leaf(slot)
    }

    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.items.iter()
    }

    /// Handle for the item currently in `slot`, for direct priority updates.
    pub fn handle(&self, slot: usize) -> Option<SampleHandle> {
        self.serials.get(slot).map(|&serial| SampleHandle { slot, serial })
    }

    /// Inserts at the running maximum priority, overwriting the oldest item
    /// once full. Returns the slot used.
    pub fn store(&mut self, item: T) -> usize {
        let slot = self.next_slot;
        self.inserted += 1;
        if slot < self.items.len() {
            self.items[slot] = item;
            self.serials[slot] = self.inserted;
            self.priorities[slot] = self.max_priority;
        } else {
            self.items.push(item);
            self.serials.push(self.inserted);
            self.priorities.push(self.max_priority);
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next_slot = (slot + 1) % self.capacity;
        slot
    }

    /// Stratified proportional sampling of `k` items.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Sample<'_, T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let total = self.tree.total();
        let segment = total / k.max(1) as f64;
        let n = self.items.len() as f64;
        let mut items = Vec::with_capacity(k);
        let mut handles = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for i in 0..k {
            let mass = (i as f64 + rng.gen::<f64>()) * segment;
            let slot = self.tree.find(mass).min(self.items.len() - 1);
            let p = self.tree.leaf(slot) / total;
            items.push(&self.items[slot]);
            handles.push(SampleHandle {
                slot,
                serial: self.serials[slot],
            });
            weights.push((n * p).powf(-self.beta));
        }
        let max_w = weights.iter().copied().fold(0.0, f64::max);
        if max_w > 0.0 && max_w.is_finite() {
            weights.iter_mut().for_each(|w| *w /= max_w);
        }
        Ok(Sample {
            items,
            handles,
            weights,
        })
    }

    /// Sets `p ← |δ| + ε_p` for each still-resident handle. Overwritten
    /// slots are skipped and counted.
    pub fn update_priorities(&mut self, handles: &[SampleHandle], td_abs: &[f64]) {
        for (h, &d) in handles.iter().zip(td_abs) {
            if h.slot >= self.items.len() || self.serials[h.slot] != h.serial {
                self.stale_updates += 1;
                continue;
            }
            let p = d.abs() + self.priority_floor;
            if !p.is_finite() {
                continue;
            }
            self.priorities[h.slot] = p;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(h.slot, p.powf(self.alpha));
        }
    }
}
