//! Bucketed cuckoo hash table, the match-engine memory of the emulated NIC.
//!
//! Two seeded hash functions pick two candidate slots per key; each slot holds
//! a small fixed number of entries. Inserts displace residents along a random
//! walk bounded by `max_kicks`; a failed walk is unwound completely, so a
//! `Full` result leaves every previously inserted key findable.

use crate::flow::FlowKey;
use crate::util::{hash_bytes, DetRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// No room within the displacement budget. The table is unchanged.
    Full,
}

#[derive(Debug)]
pub struct CuckooTable<V> {
    cells: Vec<Option<(FlowKey, V)>>,
    n_slots: usize,
    width: usize,
    max_kicks: usize,
    seed_a: u64,
    seed_b: u64,
    walk_rng: DetRng,
    occupancy: usize,
}

impl<V> CuckooTable<V> {
    /// `capacity` is the total entry count and must be a multiple of `width`
    /// (entries per slot).
    pub fn new(capacity: usize, width: usize, max_kicks: usize, seed_a: u64, seed_b: u64) -> Self {
        assert!(width > 0 && capacity > 0, "capacity and width must be nonzero");
        assert!(
            capacity % width == 0,
            "capacity {capacity} must be a multiple of the slot width {width}"
        );
        let n_slots = capacity / width;
        let mut cells = Vec::new();
        cells.resize_with(capacity, || None);
        CuckooTable {
            cells,
            n_slots,
            width,
            max_kicks,
            seed_a,
            seed_b,
            walk_rng: DetRng::new(seed_a ^ seed_b.rotate_left(17)),
            occupancy: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.n_slots * self.width
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn load_factor(&self) -> f64 {
        self.occupancy as f64 / self.capacity() as f64
    }

    fn slot_pair(&self, key: &FlowKey) -> (usize, usize) {
        let bytes = key.to_bytes();
        let s1 = (hash_bytes(&bytes, self.seed_a) % self.n_slots as u64) as usize;
        let mut s2 = (hash_bytes(&bytes, self.seed_b) % self.n_slots as u64) as usize;
        if s2 == s1 {
            // Keep two candidate slots even when the hashes collide.
            s2 = (s1 + 1) % self.n_slots;
        }
        (s1, s2)
    }

    fn cell_range(&self, slot: usize) -> std::ops::Range<usize> {
        slot * self.width..(slot + 1) * self.width
    }

    fn find_in_slot(&self, slot: usize, key: &FlowKey) -> Option<usize> {
        self.cell_range(slot)
            .find(|&i| matches!(&self.cells[i], Some((k, _)) if k == key))
    }

    fn free_cell(&self, slot: usize) -> Option<usize> {
        self.cell_range(slot).find(|&i| self.cells[i].is_none())
    }

    /// Looks at the key's two candidate slots only.
    pub fn get(&self, key: &FlowKey) -> Option<&V> {
        let (s1, s2) = self.slot_pair(key);
        self.find_in_slot(s1, key)
            .or_else(|| self.find_in_slot(s2, key))
            .map(|i| &self.cells[i].as_ref().unwrap().1)
    }

    pub fn get_mut(&mut self, key: &FlowKey) -> Option<&mut V> {
        let (s1, s2) = self.slot_pair(key);
        let idx = self.find_in_slot(s1, key).or_else(|| self.find_in_slot(s2, key))?;
        Some(&mut self.cells[idx].as_mut().unwrap().1)
    }

    pub fn contains(&self, key: &FlowKey) -> bool {
        self.get(key).is_some()
    }

    /// Inserts a key the caller has verified to be absent. On `Full` the
    /// displacement chain has been rolled back and nothing was lost.
    pub fn insert(&mut self, key: FlowKey, value: V) -> InsertOutcome {
        debug_assert!(!self.contains(&key), "caller must deduplicate inserts");
        let (s1, s2) = self.slot_pair(&key);
        for slot in [s1, s2] {
            if let Some(i) = self.free_cell(slot) {
                self.cells[i] = Some((key, value));
                self.occupancy += 1;
                return InsertOutcome::Inserted;
            }
        }

        // Both candidate slots are full: walk displacements.
        let mut slot = if self.walk_rng.next_bool() { s1 } else { s2 };
        let mut cur = (key, value);
        let mut trail: Vec<usize> = Vec::with_capacity(self.max_kicks);
        for _ in 0..self.max_kicks {
            let way = self.walk_rng.next_range(self.width as u64) as usize;
            let cell = slot * self.width + way;
            std::mem::swap(&mut cur, self.cells[cell].as_mut().expect("slot was full"));
            trail.push(cell);

            let (a, b) = self.slot_pair(&cur.0);
            slot = if a == slot { b } else { a };
            if let Some(i) = self.free_cell(slot) {
                self.cells[i] = Some(cur);
                self.occupancy += 1;
                return InsertOutcome::Inserted;
            }
        }

        // Out of kicks: put every displaced entry back where it came from.
        for cell in trail.into_iter().rev() {
            std::mem::swap(&mut cur, self.cells[cell].as_mut().expect("trail cell occupied"));
        }
        InsertOutcome::Full
    }

    pub fn remove(&mut self, key: &FlowKey) -> Option<V> {
        let (s1, s2) = self.slot_pair(key);
        let idx = self.find_in_slot(s1, key).or_else(|| self.find_in_slot(s2, key))?;
        self.occupancy -= 1;
        self.cells[idx].take().map(|(_, v)| v)
    }

    /// Removes and returns all entries matching the predicate, in slot order.
    pub fn drain_where<F: FnMut(&FlowKey, &V) -> bool>(&mut self, mut pred: F) -> Vec<(FlowKey, V)> {
        let mut out = Vec::new();
        for cell in self.cells.iter_mut() {
            if matches!(cell, Some((k, v)) if pred(k, v)) {
                out.push(cell.take().unwrap());
                self.occupancy -= 1;
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowKey, &V)> {
        self.cells.iter().filter_map(|c| c.as_ref().map(|(k, v)| (k, v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PROTO_UDP;
    use crate::util::DetRng;
    use std::collections::HashMap;
    use std::net::Ipv4Addr;

    fn key(n: u64) -> FlowKey {
        FlowKey::new(
            PROTO_UDP,
            Ipv4Addr::from(0x0a00_0000u32 | (n as u32 & 0xffff)),
            Ipv4Addr::from(0x0b00_0000u32 | ((n >> 16) as u32 & 0xffff)),
            (n % 60_000) as u16,
            53,
            None,
        )
    }

    #[test]
    fn insert_then_get_round_trips() {
        let mut t: CuckooTable<u64> = CuckooTable::new(64, 4, 32, 1, 2);
        for n in 0..32u64 {
            assert_eq!(t.insert(key(n), n * 10), InsertOutcome::Inserted);
        }
        for n in 0..32u64 {
            assert_eq!(t.get(&key(n)), Some(&(n * 10)));
        }
        assert_eq!(t.get(&key(999)), None);
        assert_eq!(t.occupancy(), 32);
    }

    #[test]
    fn remove_frees_the_cell() {
        let mut t: CuckooTable<u64> = CuckooTable::new(16, 4, 32, 1, 2);
        t.insert(key(1), 11);
        t.insert(key(2), 22);
        assert_eq!(t.remove(&key(1)), Some(11));
        assert_eq!(t.remove(&key(1)), None);
        assert_eq!(t.occupancy(), 1);
        assert_eq!(t.get(&key(2)), Some(&22));
    }

    #[test]
    fn full_table_stays_lookup_consistent() {
        // Tiny two-slot table: drive it to Full and verify that every key
        // inserted before the failure is still reachable afterwards.
        let mut t: CuckooTable<u64> = CuckooTable::new(8, 4, 8, 7, 9);
        let mut stored: Vec<u64> = Vec::new();
        let mut full_seen = false;
        for n in 0..64u64 {
            match t.insert(key(n), n) {
                InsertOutcome::Inserted => stored.push(n),
                InsertOutcome::Full => {
                    full_seen = true;
                    for s in &stored {
                        assert_eq!(t.get(&key(*s)), Some(s), "lost key {s} after Full");
                    }
                }
            }
        }
        assert!(full_seen, "a 8-entry table must fill within 64 inserts");
        assert!(t.occupancy() <= 8);
    }

    #[test]
    fn matches_reference_map_under_random_ops() {
        // Smaller cousin of the acceptance check: random insert/remove/get
        // against a HashMap oracle.
        let mut t: CuckooTable<u64> = CuckooTable::new(256, 4, 32, 3, 5);
        let mut oracle: HashMap<FlowKey, u64> = HashMap::new();
        let mut rng = DetRng::new(0xcc);
        for op in 0..20_000u64 {
            let k = key(rng.next_range(400));
            match rng.next_range(3) {
                0 => {
                    if !oracle.contains_key(&k) {
                        match t.insert(k, op) {
                            InsertOutcome::Inserted => {
                                oracle.insert(k, op);
                            }
                            InsertOutcome::Full => {}
                        }
                    }
                }
                1 => {
                    assert_eq!(t.remove(&k), oracle.remove(&k));
                }
                _ => {
                    assert_eq!(t.get(&k), oracle.get(&k));
                }
            }
            assert_eq!(t.occupancy(), oracle.len());
        }
    }

    #[test]
    fn reaches_high_load_factor_before_first_full() {
        let mut t: CuckooTable<u64> = CuckooTable::new(4096, 4, 32, 11, 13);
        let mut n = 0u64;
        loop {
            if t.insert(key(n), n) == InsertOutcome::Full {
                break;
            }
            n += 1;
        }
        assert!(
            t.load_factor() >= 0.9,
            "first Full at load factor {:.3}",
            t.load_factor()
        );
    }

    #[test]
    fn drain_where_removes_matching_entries_in_slot_order() {
        let mut t: CuckooTable<u64> = CuckooTable::new(64, 4, 32, 1, 2);
        for n in 0..20u64 {
            t.insert(key(n), n);
        }
        let drained = t.drain_where(|_, v| *v % 2 == 0);
        assert_eq!(drained.len(), 10);
        assert_eq!(t.occupancy(), 10);
        for (_, v) in drained {
            assert!(v % 2 == 0);
            assert_eq!(t.get(&key(v)), None);
        }
    }
}
