use core::fmt;

/// Multi-index with at most two components. For d = 1 the second slot is 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(pub [u32; 2]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0, 0]);

    pub fn new(a: u32, b: u32) -> Self {
        MultiIndex([a, b])
    }

    pub fn scalar(a: u32) -> Self {
        MultiIndex([a, 0])
    }

    pub fn unit(i: usize) -> Self {
        let mut m = [0, 0];
        m[i] = 1;
        MultiIndex(m)
    }

    pub fn order(&self) -> u32 {
        self.0[0] + self.0[1]
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0, 0]
    }

    pub fn add(&self, o: &MultiIndex) -> MultiIndex {
        MultiIndex([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }

    /// Componentwise `self - o` if `o <= self`.
    pub fn checked_sub(&self, o: &MultiIndex) -> Option<MultiIndex> {
        Some(MultiIndex([
            self.0[0].checked_sub(o.0[0])?,
            self.0[1].checked_sub(o.0[1])?,
        ]))
    }

    pub fn factorial(&self) -> u64 {
        fact(self.0[0]) * fact(self.0[1])
    }

    /// Product of binomials C(self_i, o_i).
    pub fn binomial(&self, o: &MultiIndex) -> u64 {
        binom(self.0[0], o.0[0]) * binom(self.0[1], o.0[1])
    }

    /// All multi-indices of total order `< bound` in dimension `d`, ordered by
    /// order and then lexicographically.
    pub fn all_below(d: usize, bound: u32) -> alloc::vec::Vec<MultiIndex> {
        let mut out = alloc::vec::Vec::new();
        for o in 0..bound {
            if d == 1 {
                out.push(MultiIndex([o, 0]));
            } else {
                for a in (0..=o).rev() {
                    out.push(MultiIndex([a, o - a]));
                }
            }
        }
        out
    }

    /// All `l <= self` componentwise.
    pub fn lower_set(&self) -> alloc::vec::Vec<MultiIndex> {
        let mut out = alloc::vec::Vec::new();
        for a in 0..=self.0[0] {
            for b in 0..=self.0[1] {
                out.push(MultiIndex([a, b]));
            }
        }
        out
    }

    /// `x^self` for a point with up to two coordinates.
    pub fn pow(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (i, &e) in self.0.iter().enumerate() {
            if e > 0 {
                v *= powi(x[i], e);
            }
        }
        v
    }
}

pub(crate) fn powi(x: f64, e: u32) -> f64 {
    let mut v = 1.0;
    for _ in 0..e {
        v *= x;
    }
    v
}

fn fact(n: u32) -> u64 {
    (1..=n as u64).product()
}

fn binom(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let mut v: u64 = 1;
    for i in 0..k as u64 {
        v = v * (n as u64 - i) / (i + 1);
    }
    v
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0[0], self.0[1])
    }
}
