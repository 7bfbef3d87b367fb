//! Bit-packed linear algebra over GF(2).
//!
//! Matrices are stored row-major with every row padded to a whole number of
//! 64-bit words, so adding one row into another is a word-wise XOR loop.
//! Bit `j` of a row lives in word `j / 64` at position `j % 64`.

use std::fmt;

use thiserror::Error;

const WORD_BITS: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("linear system has no solution")]
    NoSolution,
}

/// A fixed-length vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, ones: I) -> Self {
        let mut v = Self::zeros(len);
        for i in ones {
            v.flip(i);
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Builds a vector from little-endian packed bytes (bit 0 = LSB of byte 0).
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            if bytes.get(i / 8).is_some_and(|b| (b >> (i % 8)) & 1 == 1) {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    /// In-place XOR. Panics when lengths differ.
    pub fn xor_assign(&mut self, other: &BitVector) {
        assert_eq!(self.len, other.len, "xor of vectors with different lengths");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Parity of the overlap, i.e. the GF(2) inner product.
    pub fn dot(&self, other: &BitVector) -> bool {
        assert_eq!(self.len, other.len, "dot of vectors with different lengths");
        self.words
            .iter()
            .zip(&other.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1
            == 1
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let tz = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(wi * WORD_BITS + tz)
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Little-endian packed bytes: bit 0 is the LSB of the first byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.iter_ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector[")?;
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        write!(f, "]")
    }
}

/// A dense matrix over GF(2) with contiguous packed rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

/// Result of a Gauss-Jordan reduction under a chosen column order.
#[derive(Debug, Clone)]
pub struct RowReduction {
    /// Reduced matrix; row `i` holds the pivot for `pivots[i]`, remaining rows are zero.
    pub reduced: BitMatrix,
    /// Pivot columns in the order they were found.
    pub pivots: Vec<usize>,
}

impl RowReduction {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Stacks vectors as rows. All vectors must have length `cols`.
    pub fn from_rows(cols: usize, rows: &[BitVector]) -> Self {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "row {i} has the wrong length");
            m.row_words_mut(i).copy_from_slice(r.words());
        }
        m
    }

    /// Builds a matrix from a list of row supports.
    pub fn from_supports(rows: usize, cols: usize, supports: &[Vec<usize>]) -> Self {
        assert_eq!(supports.len(), rows);
        let mut m = Self::zeros(rows, cols);
        for (i, s) in supports.iter().enumerate() {
            for &j in s {
                m.flip(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        (self.data[r * self.stride + c / WORD_BITS] >> (c % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        let w = &mut self.data[r * self.stride + c / WORD_BITS];
        let mask = 1u64 << (c % WORD_BITS);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, r: usize, c: usize) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.stride + c / WORD_BITS] ^= 1u64 << (c % WORD_BITS);
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector {
            len: self.cols,
            words: self.row_words(r).to_vec(),
        }
    }

    pub fn row_support(&self, r: usize) -> Vec<usize> {
        self.row(r).iter_ones().collect()
    }

    pub fn row_weight(&self, r: usize) -> usize {
        self.row_words(r).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    /// `row[dst] ^= row[src]`.
    #[inline]
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            self.row_words_mut(dst).iter_mut().for_each(|w| *w = 0);
            return;
        }
        let stride = self.stride;
        let (s, d) = (src * stride, dst * stride);
        if s < d {
            let (head, tail) = self.data.split_at_mut(d);
            for (a, b) in tail[..stride].iter_mut().zip(&head[s..s + stride]) {
                *a ^= b;
            }
        } else {
            let (head, tail) = self.data.split_at_mut(s);
            for (a, b) in head[d..d + stride].iter_mut().zip(&tail[..stride]) {
                *a ^= b;
            }
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.data.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in self.row(r).iter_ones() {
                t.set(c, r, true);
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &BitVector) -> BitVector {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        let mut out = BitVector::zeros(self.rows);
        for r in 0..self.rows {
            let parity = self
                .row_words(r)
                .iter()
                .zip(v.words())
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
            if parity & 1 == 1 {
                out.set(r, true);
            }
        }
        out
    }

    pub fn mul(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = BitMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in self.row(r).iter_ones() {
                let src = other.row_words(k).to_vec();
                for (a, b) in out.row_words_mut(r).iter_mut().zip(&src) {
                    *a ^= b;
                }
            }
        }
        out
    }

    pub fn hstack(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.rows, other.rows, "hstack needs equal row counts");
        let mut out = BitMatrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            for c in self.row(r).iter_ones() {
                out.set(r, c, true);
            }
            for c in other.row(r).iter_ones() {
                out.set(r, self.cols + c, true);
            }
        }
        out
    }

    pub fn vstack(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.cols, "vstack needs equal column counts");
        let mut out = BitMatrix::zeros(self.rows + other.rows, self.cols);
        out.data[..self.data.len()].copy_from_slice(&self.data);
        out.data[self.data.len()..].copy_from_slice(&other.data);
        out
    }

    /// Gauss-Jordan elimination visiting columns in `order`. Optionally applies
    /// the same row operations to `companion` (one bit per row).
    fn eliminate(&mut self, order: &[usize], mut companion: Option<&mut BitVector>) -> Vec<usize> {
        let mut pivots = Vec::new();
        for &c in order {
            let next = pivots.len();
            if next == self.rows {
                break;
            }
            let Some(p) = (next..self.rows).find(|&r| self.get(r, c)) else {
                continue;
            };
            self.swap_rows(p, next);
            if let Some(v) = companion.as_deref_mut() {
                let (a, b) = (v.get(p), v.get(next));
                v.set(p, b);
                v.set(next, a);
            }
            for r in 0..self.rows {
                if r != next && self.get(r, c) {
                    self.xor_row_into(next, r);
                    if let Some(v) = companion.as_deref_mut() {
                        if v.get(next) {
                            v.flip(r);
                        }
                    }
                }
            }
            pivots.push(c);
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        let order: Vec<usize> = (0..self.cols).collect();
        self.clone().eliminate(&order, None).len()
    }

    /// Reduced row-echelon form with pivots searched in `pivot_order`.
    pub fn row_reduce(&self, pivot_order: &[usize]) -> RowReduction {
        debug_assert!(is_permutation(pivot_order, self.cols));
        let mut reduced = self.clone();
        let pivots = reduced.eliminate(pivot_order, None);
        RowReduction { reduced, pivots }
    }

    /// Finds `x` with `self * x = b`.
    pub fn solve(&self, b: &BitVector) -> Result<BitVector, LinalgError> {
        if b.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: b.len(),
            });
        }
        let mut m = self.clone();
        let mut rhs = b.clone();
        let order: Vec<usize> = (0..self.cols).collect();
        let pivots = m.eliminate(&order, Some(&mut rhs));
        if (pivots.len()..self.rows).any(|r| rhs.get(r)) {
            return Err(LinalgError::NoSolution);
        }
        let mut x = BitVector::zeros(self.cols);
        for (r, &c) in pivots.iter().enumerate() {
            if rhs.get(r) {
                x.set(c, true);
            }
        }
        Ok(x)
    }

    /// Basis of `{ v : self * v = 0 }`, one vector per free column.
    pub fn kernel_basis(&self) -> Vec<BitVector> {
        let order: Vec<usize> = (0..self.cols).collect();
        let red = self.row_reduce(&order);
        let mut is_pivot = vec![false; self.cols];
        for &p in &red.pivots {
            is_pivot[p] = true;
        }
        (0..self.cols)
            .filter(|&f| !is_pivot[f])
            .map(|f| {
                let mut v = BitVector::zeros(self.cols);
                v.set(f, true);
                for (r, &p) in red.pivots.iter().enumerate() {
                    if red.reduced.get(r, f) {
                        v.set(p, true);
                    }
                }
                v
            })
            .collect()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                write!(f, "{}", u8::from(self.get(r, c)))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    order.iter().all(|&c| c < n && !std::mem::replace(&mut seen[c], true))
}

/// Expresses vectors as combinations of a fixed set of generators.
///
/// Generators are the rows of the matrix given at construction; queries return
/// the selection of rows whose sum equals the target.
#[derive(Debug, Clone)]
pub struct RowSpaceSolver {
    generators: usize,
    cols: usize,
    // Rows of the reduced [G | I] system, one per pivot.
    basis: Vec<BitVector>,
    pivots: Vec<usize>,
}

impl RowSpaceSolver {
    pub fn new(generators: &BitMatrix) -> Self {
        let (r, n) = (generators.rows(), generators.cols());
        let aug = generators.hstack(&BitMatrix::identity(r));
        let order: Vec<usize> = (0..n + r).collect();
        let red = aug.row_reduce(&order);
        let mut basis = Vec::new();
        let mut pivots = Vec::new();
        for (i, &p) in red.pivots.iter().enumerate() {
            if p >= n {
                break;
            }
            basis.push(red.reduced.row(i));
            pivots.push(p);
        }
        Self {
            generators: r,
            cols: n,
            basis,
            pivots,
        }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Returns the generator selection summing to `target`, if any.
    pub fn express(&self, target: &BitVector) -> Option<BitVector> {
        assert_eq!(target.len(), self.cols);
        let mut work = BitVector::zeros(self.cols + self.generators);
        for i in target.iter_ones() {
            work.set(i, true);
        }
        for (row, &p) in self.basis.iter().zip(&self.pivots) {
            if work.get(p) {
                work.xor_assign(row);
            }
        }
        if (0..self.cols).any(|i| work.get(i)) {
            return None;
        }
        Some(BitVector::from_indices(
            self.generators,
            work.iter_ones().map(|i| i - self.cols),
        ))
    }

    pub fn contains(&self, target: &BitVector) -> bool {
        assert_eq!(target.len(), self.cols);
        let mut work = target.clone();
        for (row, &p) in self.basis.iter().zip(&self.pivots) {
            if work.get(p) {
                for (a, b) in work.words_mut().iter_mut().zip(row.words()) {
                    *a ^= b;
                }
                // The generator-tracking tail beyond `cols` is masked off below.
            }
        }
        let full_words = self.cols / WORD_BITS;
        let rem = self.cols % WORD_BITS;
        work.words()[..full_words].iter().all(|&w| w == 0)
            && (rem == 0 || work.words()[full_words] & ((1u64 << rem) - 1) == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain Vec<Vec<u8>> elimination, independent of the packed code path.
    fn dense_rank(mut m: Vec<Vec<u8>>) -> usize {
        let rows = m.len();
        let cols = m.first().map_or(0, Vec::len);
        let mut rank = 0;
        for c in 0..cols {
            let Some(p) = (rank..rows).find(|&r| m[r][c] == 1) else {
                continue;
            };
            m.swap(p, rank);
            for r in 0..rows {
                if r != rank && m[r][c] == 1 {
                    for k in 0..cols {
                        m[r][k] ^= m[rank][k];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> BitMatrix {
        let mut m = BitMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, rng.gen_bool(0.5));
            }
        }
        m
    }

    fn to_dense(m: &BitMatrix) -> Vec<Vec<u8>> {
        (0..m.rows())
            .map(|r| (0..m.cols()).map(|c| u8::from(m.get(r, c))).collect())
            .collect()
    }

    #[test]
    fn rank_of_trivial_matrices() {
        assert_eq!(BitMatrix::identity(3).rank(), 3);
        assert_eq!(BitMatrix::zeros(4, 7).rank(), 0);
    }

    #[test]
    fn row_reduce_identity_and_repeated_rows() {
        let red = BitMatrix::identity(3).row_reduce(&[0, 1, 2]);
        assert_eq!(red.reduced, BitMatrix::identity(3));
        assert_eq!(red.pivots, vec![0, 1, 2]);

        let ones = BitMatrix::from_supports(2, 2, &[vec![0, 1], vec![0, 1]]);
        let red = ones.row_reduce(&[0, 1]);
        assert_eq!(red.rank(), 1);
        assert_eq!(red.pivots, vec![0]);
    }

    #[test]
    fn row_reduce_matches_dense_oracle_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 10, 20);
            let mut order: Vec<usize> = (0..20).collect();
            for i in (1..20).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let red = m.row_reduce(&order);
            assert_eq!(red.rank(), dense_rank(to_dense(&m)));
            // Each pivot column is a unit column in the reduced form.
            for (i, &p) in red.pivots.iter().enumerate() {
                for r in 0..m.rows() {
                    assert_eq!(red.reduced.get(r, p), r == i);
                }
            }
        }
    }

    #[test]
    fn solve_trivial_cases() {
        let b = BitVector::from_indices(4, [1, 3]);
        assert_eq!(BitMatrix::identity(4).solve(&b).unwrap(), b);
        assert_eq!(BitMatrix::zeros(4, 4).solve(&b), Err(LinalgError::NoSolution));
        assert!(matches!(
            BitMatrix::identity(3).solve(&b),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_random_consistent_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 12, 18);
            let x0 = BitVector::from_bools(&(0..18).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
            let b = m.mul_vec(&x0);
            let x = m.solve(&b).expect("consistent by construction");
            assert_eq!(m.mul_vec(&x), b);
        }
    }

    #[test]
    fn kernel_small_cases() {
        assert!(BitMatrix::identity(5).kernel_basis().is_empty());
        let m = BitMatrix::from_supports(1, 2, &[vec![0, 1]]);
        assert_eq!(m.kernel_basis(), vec![BitVector::from_indices(2, [0, 1])]);
    }

    #[test]
    fn row_space_solver_recovers_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_matrix(&mut rng, 8, 30);
        let solver = RowSpaceSolver::new(&g);
        for _ in 0..20 {
            let pick = BitVector::from_bools(&(0..8).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
            let mut target = BitVector::zeros(30);
            for i in pick.iter_ones() {
                target.xor_assign(&g.row(i));
            }
            let sel = solver.express(&target).unwrap();
            let mut back = BitVector::zeros(30);
            for i in sel.iter_ones() {
                back.xor_assign(&g.row(i));
            }
            assert_eq!(back, target);
            assert!(solver.contains(&target));
        }
        let mut outside = BitVector::zeros(30);
        outside.set(0, true);
        if solver.express(&outside).is_none() {
            assert!(!solver.contains(&outside));
        }
    }

    #[test]
    fn bytes_are_lsb_first() {
        let v = BitVector::from_indices(10, [0, 9]);
        assert_eq!(v.to_bytes(), vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(BitVector::from_bytes(10, &v.to_bytes()), v);
    }

    fn arb_matrix() -> impl Strategy<Value = BitMatrix> {
        (1usize..12, 1usize..70).prop_flat_map(|(r, c)| {
            proptest::collection::vec(any::<bool>(), r * c).prop_map(move |bits| {
                let mut m = BitMatrix::zeros(r, c);
                for (i, b) in bits.into_iter().enumerate() {
                    m.set(i / c, i % c, b);
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn rank_is_transpose_invariant(m in arb_matrix()) {
            prop_assert_eq!(m.rank(), m.transpose().rank());
        }

        #[test]
        fn kernel_vectors_are_independent_null_vectors(m in arb_matrix()) {
            let basis = m.kernel_basis();
            prop_assert_eq!(basis.len(), m.cols() - m.rank());
            for v in &basis {
                prop_assert!(m.mul_vec(v).is_zero());
            }
            if !basis.is_empty() {
                prop_assert_eq!(BitMatrix::from_rows(m.cols(), &basis).rank(), basis.len());
            }
        }

        #[test]
        fn solve_reproduces_rhs(m in arb_matrix(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BitVector::from_bools(&(0..m.rows()).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
            if let Ok(x) = m.solve(&b) {
                prop_assert_eq!(m.mul_vec(&x), b);
            }
        }
    }
}
