//! Integer lattice boxes `{k ∈ ℤ^d : |k|∞ ≤ K}` in lexicographic order.

/// Multi-index with unused trailing components set to zero when `d = 1`.
pub type Index = [i32; 2];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    dim: usize,
    cutoff: i32,
}

impl LatticeBox {
    pub fn new(dim: usize, cutoff: usize) -> Self {
        assert!(dim == 1 || dim == 2, "dimension must be 1 or 2");
        Self { dim, cutoff: cutoff as i32 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff as usize
    }

    pub fn side(&self) -> usize {
        (2 * self.cutoff + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: Index) -> bool {
        let c = self.cutoff;
        k[0].abs() <= c && (self.dim == 1 && k[1] == 0 || self.dim == 2 && k[1].abs() <= c)
    }

    /// Position of `k` in lexicographic order, or `None` outside the box.
    pub fn position(&self, k: Index) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let s = self.side() as i32;
        let c = self.cutoff;
        Some(match self.dim {
            1 => (k[0] + c) as usize,
            _ => ((k[0] + c) * s + (k[1] + c)) as usize,
        })
    }

    pub fn index(&self, pos: usize) -> Index {
        let s = self.side();
        let c = self.cutoff;
        match self.dim {
            1 => [pos as i32 - c, 0],
            _ => [(pos / s) as i32 - c, (pos % s) as i32 - c],
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = Index> + '_ {
        (0..self.len()).map(move |p| self.index(p))
    }
}

pub fn neg(k: Index) -> Index {
    [-k[0], -k[1]]
}

pub fn sub(a: Index, b: Index) -> Index {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Index, b: Index) -> Index {
    [a[0] + b[0], a[1] + b[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_positions() {
        for dim in 1..=2 {
            let b = LatticeBox::new(dim, 3);
            for p in 0..b.len() {
                assert_eq!(b.position(b.index(p)), Some(p));
            }
        }
    }

    #[test]
    fn lexicographic_order() {
        let b = LatticeBox::new(2, 1);
        let v: Vec<_> = b.indices().collect();
        assert_eq!(v[0], [-1, -1]);
        assert_eq!(v[1], [-1, 0]);
        assert_eq!(v[4], [0, 0]);
        assert_eq!(v[8], [1, 1]);
        assert_eq!(b.position([2, 0]), None);
        assert_eq!(LatticeBox::new(1, 2).position([0, 1]), None);
    }
}
