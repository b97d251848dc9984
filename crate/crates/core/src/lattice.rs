//! Finite integer boxes `[0, u_1] x ... x [0, u_M]` and iteration over them.
//!
//! Both the truncated count lattices (density sums) and the exponent boxes of
//! the singularity function are boxes of this kind.

/// An axis-aligned box of nonnegative integer vectors with inclusive upper
/// bounds per coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    upper: Vec<u64>,
}

impl LatticeBox {
    /// Box with the given inclusive upper bounds (one per coordinate).
    pub fn new(upper: Vec<u64>) -> Self {
        assert!(!upper.is_empty(), "lattice box needs at least one coordinate");
        Self { upper }
    }

    /// Cube `[0, upper]^dim`.
    pub fn cube(dim: usize, upper: u64) -> Self {
        Self::new(vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn upper(&self) -> &[u64] {
        &self.upper
    }

    /// Number of lattice points in the box.
    pub fn point_count(&self) -> u128 {
        self.upper.iter().map(|&u| u as u128 + 1).product()
    }

    /// Visits every point in odometer order (first coordinate fastest).
    pub fn for_each(&self, mut f: impl FnMut(&[u64])) {
        let mut x = vec![0u64; self.upper.len()];
        loop {
            f(&x);
            let mut m = 0;
            loop {
                if m == x.len() {
                    return;
                }
                if x[m] < self.upper[m] {
                    x[m] += 1;
                    break;
                }
                x[m] = 0;
                m += 1;
            }
        }
    }
}
