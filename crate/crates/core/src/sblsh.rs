//! Super-bit locality-sensitive hashing.
//!
//! A feature is hashed to the index of the largest coordinate of its
//! projection onto `b` orthonormal random directions. Features are then
//! stably sorted by bucket id and sliced into fixed-size chunks so every
//! attention group has exactly `l` members; each chunk attends over itself
//! and its two neighbours (a `3l` context window).

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Matrix;

const MAX_ROW_RETRIES: usize = 100;
const DEPENDENT_ROW_NORM: f64 = 1e-12;

/// `b × c` matrix with orthonormal rows.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoBasis {
    buckets: usize,
    dim: usize,
    m: Matrix,
    seed: u64,
}

impl OrthoBasis {
    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a `b × c` standard-normal matrix row by row from
/// [`SeededRng::new(seed)`](SeededRng) and orthonormalises it with
/// Gram–Schmidt (two projection passes per row). A row whose residual norm
/// falls below `1e-12` is redrawn from the continuing stream.
pub fn orthonormal_basis(b: usize, c: usize, seed: u64) -> Result<OrthoBasis> {
    if b == 0 || c == 0 {
        return Err(invalid(format!("basis needs b >= 1 and c >= 1, got b={b}, c={c}")));
    }
    if b > c {
        return Err(invalid(format!(
            "cannot build {b} orthonormal rows in dimension {c}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(b);
    for r in 0..b {
        let mut accepted = None;
        for _ in 0..=MAX_ROW_RETRIES {
            let mut v = rng.normal_vec(c, 1.0);
            for _pass in 0..2 {
                for u in &rows {
                    let p = dot(&v, u);
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm >= DEPENDENT_ROW_NORM {
                v.iter_mut().for_each(|x| *x /= norm);
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => rows.push(v),
            None => {
                return Err(invalid(format!(
                    "row {r} stayed linearly dependent after {MAX_ROW_RETRIES} redraws"
                )))
            }
        }
    }
    let m = Matrix::new(b, c, rows.concat())?;
    Ok(OrthoBasis {
        buckets: b,
        dim: c,
        m,
        seed,
    })
}

/// One basis per hashing round for GLA block `block`, seeded from
/// `(master_seed, block, round)`.
pub fn round_bases(
    b: usize,
    c: usize,
    master_seed: u64,
    block: usize,
    rounds: usize,
) -> Result<Vec<OrthoBasis>> {
    (0..rounds)
        .map(|r| orthonormal_basis(b, c, derive_seed(master_seed, &[block as u64, r as u64])))
        .collect()
}

/// Bucket id of every column of `q` (`c × n`): the argmax of `M·q_i`, ties
/// going to the lowest row.
pub fn assign_buckets(q: &Matrix, basis: &OrthoBasis) -> Result<Vec<usize>> {
    if q.rows() != basis.dim {
        return Err(invalid(format!(
            "features have dimension {}, basis expects {}",
            q.rows(),
            basis.dim
        )));
    }
    let n = q.cols();
    let mut proj = vec![0.0; basis.buckets * n];
    // M·Q accumulated row-wise so the inner loop runs over contiguous columns.
    for r in 0..basis.buckets {
        let dst = &mut proj[r * n..(r + 1) * n];
        for k in 0..basis.dim {
            let mrk = basis.m.get(r, k);
            for (d, qv) in dst.iter_mut().zip(q.row(k)) {
                *d += mrk * qv;
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut best = 0;
            for r in 1..basis.buckets {
                if proj[r * n + i] > proj[best * n + i] {
                    best = r;
                }
            }
            best
        })
        .collect())
}

/// Sort/chunk plan of one hashing round.
///
/// Slot positions `0..n` hold real features in sorted order; positions
/// `n..padded_len` are synthetic padding slots. Chunk entries are feature
/// indices, where an index `>= n` denotes a padding slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundPlan {
    round_index: usize,
    bucket_size: usize,
    bucket_ids: Vec<usize>,
    permutation: Vec<usize>,
    inverse_permutation: Vec<usize>,
    chunks: Vec<Vec<usize>>,
    pad_mask: Vec<bool>,
}

impl RoundPlan {
    pub fn round_index(&self) -> usize {
        self.round_index
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    /// Number of real features.
    pub fn len(&self) -> usize {
        self.bucket_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bucket_ids.is_empty()
    }

    pub fn padded_len(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn padding(&self) -> usize {
        self.padded_len() - self.len()
    }

    pub fn bucket_ids(&self) -> &[usize] {
        &self.bucket_ids
    }

    /// `ξ`: original index → sorted position.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// `ξ⁻¹`: sorted position → original index.
    pub fn inverse_permutation(&self) -> &[usize] {
        &self.inverse_permutation
    }

    pub fn chunks(&self) -> &[Vec<usize>] {
        &self.chunks
    }

    /// Indexed by slot position (sorted order, padding last).
    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn is_pad(&self, index: usize) -> bool {
        index >= self.len()
    }

    /// Chunk indices making up the context of chunk `k`: `(k-1, k, k+1)`
    /// clamped to the valid range, without wrap-around.
    pub fn context_chunks(&self, k: usize) -> [usize; 3] {
        let last = self.chunks.len() - 1;
        [k.saturating_sub(1), k, (k + 1).min(last)]
    }

    /// The `3l` feature indices (padding `>= n`) chunk `k` attends over.
    pub fn context_window(&self, k: usize) -> Vec<usize> {
        self.context_chunks(k)
            .iter()
            .flat_map(|&c| self.chunks[c].iter().copied())
            .collect()
    }
}

/// Builds the sorted, padded, chunked layout for one round.
pub fn plan_chunks(bucket_ids: &[usize], l: usize, round_index: usize) -> Result<RoundPlan> {
    if l < 1 {
        return Err(invalid("bucket size must be at least 1"));
    }
    if bucket_ids.is_empty() {
        return Err(invalid("cannot plan chunks for zero features"));
    }
    let n = bucket_ids.len();
    let mut inverse: Vec<usize> = (0..n).collect();
    inverse.sort_by_key(|&i| bucket_ids[i]);
    let mut permutation = vec![0; n];
    for (pos, &i) in inverse.iter().enumerate() {
        permutation[i] = pos;
    }
    let padded = n.div_ceil(l) * l;
    let slots: Vec<usize> = inverse.iter().copied().chain(n..padded).collect();
    let chunks = slots.chunks(l).map(<[usize]>::to_vec).collect();
    let pad_mask = (0..padded).map(|p| p >= n).collect();
    Ok(RoundPlan {
        round_index,
        bucket_size: l,
        bucket_ids: bucket_ids.to_vec(),
        permutation,
        inverse_permutation: inverse,
        chunks,
        pad_mask,
    })
}

/// All hashing rounds for one set of features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashPlan {
    rounds: Vec<RoundPlan>,
}

impl HashPlan {
    pub fn new(rounds: Vec<RoundPlan>) -> Result<Self> {
        let first = rounds
            .first()
            .ok_or_else(|| invalid("hash plan needs at least one round"))?;
        if rounds
            .iter()
            .any(|r| r.len() != first.len() || r.bucket_size != first.bucket_size)
        {
            return Err(invalid("all rounds must cover the same features with the same bucket size"));
        }
        Ok(Self { rounds })
    }

    /// Hashes the columns of `q` once per basis and chunks each round.
    pub fn build(q: &Matrix, bases: &[OrthoBasis], l: usize) -> Result<Self> {
        let rounds = bases
            .iter()
            .enumerate()
            .map(|(r, basis)| plan_chunks(&assign_buckets(q, basis)?, l, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rounds)
    }

    /// A single round holding every feature in one chunk, in original
    /// order: plain dense attention.
    pub fn dense(n: usize) -> Result<Self> {
        Self::new(vec![plan_chunks(&vec![0; n], n, 0)?])
    }

    pub fn rounds(&self) -> &[RoundPlan] {
        &self.rounds
    }

    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn feature_count(&self) -> usize {
        self.rounds[0].len()
    }

    pub fn bucket_size(&self) -> usize {
        self.rounds[0].bucket_size
    }
}

impl From<RoundPlan> for HashPlan {
    fn from(r: RoundPlan) -> Self {
        Self { rounds: vec![r] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;
    use proptest::prelude::*;

    fn gram_error(m: &Matrix) -> f64 {
        let g = matmul(m, &m.transpose()).unwrap();
        g.max_abs_diff(&Matrix::identity(m.rows()))
    }

    fn det(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut d = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            if p != c {
                a.swap(p, c);
                d = -d;
            }
            d *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        d
    }

    #[test]
    fn single_row_is_unit() {
        let b = orthonormal_basis(1, 5, 3).unwrap();
        let r = b.matrix().row(0);
        assert!((dot(r, r) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_basis_is_orthogonal() {
        let b = orthonormal_basis(8, 8, 17).unwrap();
        assert!(gram_error(b.matrix()) < 1e-10);
        let rows = (0..8).map(|r| b.matrix().row(r).to_vec()).collect();
        assert!((det(rows).abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn matches_classical_gram_schmidt_oracle() {
        // Classical GS on the same draws: row-major b×c normals from the seed.
        let seed = 2024;
        let mut rng = SeededRng::new(seed);
        let h: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let n0 = dot(&h[0], &h[0]).sqrt();
        let e0: Vec<f64> = h[0].iter().map(|v| v / n0).collect();
        let p = dot(&h[1], &e0);
        let r1: Vec<f64> = h[1].iter().zip(&e0).map(|(v, e)| v - p * e).collect();
        let n1 = dot(&r1, &r1).sqrt();
        let e1: Vec<f64> = r1.iter().map(|v| v / n1).collect();

        let b = orthonormal_basis(2, 3, seed).unwrap();
        for k in 0..3 {
            assert!((b.matrix().get(0, k) - e0[k]).abs() < 1e-12);
            assert!((b.matrix().get(1, k) - e1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_too_many_buckets() {
        assert!(orthonormal_basis(5, 4, 0).is_err());
        assert!(orthonormal_basis(0, 4, 0).is_err());
    }

    #[test]
    fn basis_row_hashes_to_its_bucket() {
        let b = orthonormal_basis(4, 6, 9).unwrap();
        for j in 0..4 {
            let q = Matrix::new(6, 1, b.matrix().row(j).to_vec()).unwrap();
            assert_eq!(assign_buckets(&q, &b).unwrap(), vec![j]);
        }
    }

    #[test]
    fn buckets_match_brute_force() {
        let b = orthonormal_basis(2, 4, 31).unwrap();
        let mut rng = SeededRng::new(32);
        let q = Matrix::new(4, 4, rng.normal_vec(16, 1.0)).unwrap();
        let got = assign_buckets(&q, &b).unwrap();
        for i in 0..4 {
            let scores: Vec<f64> = (0..2)
                .map(|r| (0..4).map(|k| b.matrix().get(r, k) * q.get(k, i)).sum())
                .collect();
            let want = if scores[1] > scores[0] { 1 } else { 0 };
            assert_eq!(got[i], want);
        }
    }

    #[test]
    fn ties_go_to_lowest_bucket() {
        let b = orthonormal_basis(3, 3, 4).unwrap();
        let q = Matrix::zeros(3, 2);
        assert_eq!(assign_buckets(&q, &b).unwrap(), vec![0, 0]);
    }

    #[test]
    fn bucket_dim_mismatch() {
        let b = orthonormal_basis(2, 4, 1).unwrap();
        assert!(assign_buckets(&Matrix::zeros(3, 5), &b).is_err());
    }

    #[test]
    fn single_chunk_when_n_equals_l() {
        let p = plan_chunks(&[2, 0, 1, 0], 4, 0).unwrap();
        assert_eq!(p.chunks(), &[vec![1, 3, 2, 0]]);
        assert_eq!(p.context_window(0), vec![1, 3, 2, 0, 1, 3, 2, 0, 1, 3, 2, 0]);
    }

    #[test]
    fn stable_sort_layout() {
        let p = plan_chunks(&[1, 0, 1, 0], 2, 0).unwrap();
        assert_eq!(p.inverse_permutation(), &[1, 3, 0, 2]);
        assert_eq!(p.permutation(), &[2, 0, 3, 1]);
        assert_eq!(p.chunks(), &[vec![1, 3], vec![0, 2]]);
        assert_eq!(p.context_chunks(0), [0, 0, 1]);
        assert_eq!(p.context_chunks(1), [0, 1, 1]);
    }

    #[test]
    fn padding_layout() {
        let p = plan_chunks(&[0, 0, 0, 0, 0], 2, 0).unwrap();
        assert_eq!(p.chunks().len(), 3);
        assert_eq!(p.padding(), 1);
        assert_eq!(p.pad_mask(), &[false, false, false, false, false, true]);
        assert_eq!(p.chunks()[2], vec![4, 5]);
        assert!(p.is_pad(5));
    }

    #[test]
    fn rejects_zero_bucket_size() {
        assert!(plan_chunks(&[0, 1], 0, 0).is_err());
    }

    #[test]
    fn plan_is_deterministic() {
        let ids = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        assert_eq!(plan_chunks(&ids, 3, 1).unwrap(), plan_chunks(&ids, 3, 1).unwrap());
    }

    proptest! {
        #[test]
        fn partition_and_monotonicity(
            ids in proptest::collection::vec(0usize..8, 1..200),
            l in 1usize..40,
        ) {
            let p = plan_chunks(&ids, l, 0).unwrap();
            let n = ids.len();
            let mut seen = vec![0usize; n];
            for chunk in p.chunks() {
                prop_assert_eq!(chunk.len(), l);
                for &i in chunk {
                    if i < n {
                        seen[i] += 1;
                    }
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(p.padding(), (l - n % l) % l);
            let sorted: Vec<usize> = p.inverse_permutation().iter().map(|&i| ids[i]).collect();
            prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..n {
                prop_assert_eq!(p.inverse_permutation()[p.permutation()[i]], i);
            }
            let flat: Vec<usize> = p.chunks().concat();
            let expected: Vec<usize> = p.inverse_permutation().iter().copied().chain(n..p.padded_len()).collect();
            prop_assert_eq!(flat, expected);
        }

        #[test]
        fn bucket_scale_invariance(seed in any::<u64>(), alpha in 1e-3f64..1e3) {
            let b = orthonormal_basis(4, 8, seed).unwrap();
            let mut rng = SeededRng::new(seed ^ 1);
            let q = Matrix::new(8, 16, rng.normal_vec(128, 1.0)).unwrap();
            let mut scaled = q.clone();
            scaled.data_mut().iter_mut().for_each(|v| *v *= alpha);
            prop_assert_eq!(assign_buckets(&q, &b).unwrap(), assign_buckets(&scaled, &b).unwrap());
        }
    }
}
