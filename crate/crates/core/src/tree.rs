//! Complete binary sum tree over fixed-width rows of non-negative weights.
//!
//! Every leaf holds `width` weights (one per column). Internal nodes hold
//! the column-wise sums of their children and are always recomputed from
//! the children, never patched with deltas, so stored sums never drift.

#[derive(Clone, Debug)]
pub(crate) struct SumTree {
    width: usize,
    capacity: usize,
    // node k occupies nodes[k * width .. (k + 1) * width]; root is node 1,
    // leaves are nodes capacity .. 2 * capacity
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(width: usize, capacity: usize) -> Self {
        let capacity = capacity.max(1).next_power_of_two();
        SumTree {
            width,
            capacity,
            nodes: vec![0.0; 2 * capacity * width],
        }
    }

    #[inline]
    pub fn total(&self, col: usize) -> f64 {
        self.nodes[self.width + col]
    }

    #[inline]
    pub fn leaf(&self, index: usize) -> &[f64] {
        let k = (self.capacity + index) * self.width;
        &self.nodes[k..k + self.width]
    }

    pub fn set(&mut self, index: usize, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        if index >= self.capacity {
            self.grow(index + 1);
        }
        let w = self.width;
        let mut k = self.capacity + index;
        self.nodes[k * w..(k + 1) * w].copy_from_slice(row);
        while k > 1 {
            k /= 2;
            let (l, r) = (2 * k * w, (2 * k + 1) * w);
            for c in 0..w {
                self.nodes[k * w + c] = self.nodes[l + c] + self.nodes[r + c];
            }
        }
    }

    pub fn clear(&mut self, index: usize) {
        let zeros = vec![0.0; self.width];
        self.set(index, &zeros);
    }

    /// Copies leaf `from` onto leaf `to` and zeroes `from`.
    pub fn move_leaf(&mut self, from: usize, to: usize) {
        let row = self.leaf(from).to_vec();
        self.set(to, &row);
        self.clear(from);
    }

    fn grow(&mut self, min_capacity: usize) {
        let mut bigger = SumTree::new(self.width, min_capacity.max(2 * self.capacity));
        for i in 0..self.capacity {
            let row = self.leaf(i);
            if row.iter().any(|&v| v != 0.0) {
                let k = (bigger.capacity + i) * self.width;
                bigger.nodes[k..k + self.width].copy_from_slice(row);
            }
        }
        bigger.rebuild();
        *self = bigger;
    }

    /// Recomputes every internal node from the leaves.
    pub fn rebuild(&mut self) {
        let w = self.width;
        for k in (1..self.capacity).rev() {
            let (l, r) = (2 * k * w, (2 * k + 1) * w);
            for c in 0..w {
                self.nodes[k * w + c] = self.nodes[l + c] + self.nodes[r + c];
            }
        }
    }

    /// Finds the leaf whose cumulative range in column `col` contains
    /// `u · total(col)`, for `u ∈ [0, 1)`. Never returns a zero-weight leaf
    /// while the column total is positive.
    pub fn sample(&self, col: usize, u: f64) -> usize {
        let w = self.width;
        let mut target = u * self.total(col);
        let mut k = 1;
        while k < self.capacity {
            let left = self.nodes[2 * k * w + col];
            let right = self.nodes[(2 * k + 1) * w + col];
            if (target < left && left > 0.0) || right <= 0.0 {
                k *= 2;
            } else {
                target = (target - left).max(0.0);
                k = 2 * k + 1;
            }
        }
        k - self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_sampling() {
        let mut t = SumTree::new(2, 3);
        assert_eq!(t.capacity, 4);
        for i in 0..4 {
            t.set(i, &[i as f64, 1.0]);
        }
        assert_eq!(t.total(0), 6.0);
        assert_eq!(t.total(1), 4.0);
        // column 0 cumulative: [0,0) [0,1) [1,3) [3,6)
        assert_eq!(t.sample(0, 0.0), 1);
        assert_eq!(t.sample(0, 0.5 / 6.0), 1);
        assert_eq!(t.sample(0, 2.0 / 6.0), 2);
        assert_eq!(t.sample(0, 0.999), 3);
        assert_eq!(t.sample(1, 0.3), 1);
    }

    #[test]
    fn grows_on_demand() {
        let mut t = SumTree::new(1, 1);
        for i in 0..37 {
            t.set(i, &[1.0]);
        }
        assert_eq!(t.total(0), 37.0);
        assert!(t.capacity >= 37);
        t.move_leaf(36, 0);
        assert_eq!(t.total(0), 36.0);
        assert_eq!(t.leaf(36), &[0.0]);
    }

    #[test]
    fn skips_zero_leaves_at_boundaries() {
        let mut t = SumTree::new(1, 8);
        t.set(5, &[2.0]);
        for u in [0.0, 0.25, 0.5, 0.999_999] {
            assert_eq!(t.sample(0, u), 5);
        }
        // u = 1 is outside the contract but must still land on a live leaf
        assert_eq!(t.sample(0, 1.0), 5);
    }
}
