//! History stack of recorded regressor pairs, maintained by minimum-eigenvalue
//! maximization.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{min_eigenvalue_symmetric, Mat};
use crate::window::Regressor;

/// A replacement must raise `λ_min` by more than this to be accepted.
pub const MIN_IMPROVEMENT: f64 = 1e-12;

/// Accepted mutations between drift checks of the cached Gram matrix.
const RESYNC_INTERVAL: usize = 64;
const RESYNC_TOLERANCE: f64 = 1e-10;

const RECORD_MAGIC: &[u8; 4] = b"HSTK";
const RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StackEntry {
    pub t: f64,
    pub f_cal: Vec<f64>,
    pub g_cal: Mat,
    /// `𝒢ᵢᵀ𝒢ᵢ`
    outer: Mat,
    /// `𝒢ᵢᵀℱᵢ`
    cross: Vec<f64>,
}

impl StackEntry {
    fn new(t: f64, f_cal: Vec<f64>, g_cal: Mat) -> Self {
        let outer = g_cal.gram();
        let cross = g_cal.tr_mul_vec(&f_cal);
        StackEntry {
            t,
            f_cal,
            g_cal,
            outer,
            cross,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HistoryStack {
    n: usize,
    width: usize,
    slots: Vec<Option<StackEntry>>,
    gram: Mat,
    cross: Vec<f64>,
    lambda_min: f64,
    rank_threshold: Option<f64>,
    rank_time: Option<f64>,
    mutations: usize,
}

impl HistoryStack {
    /// An all-empty stack of `slots` pairs, each `ℱᵢ ∈ ℝⁿ`, `𝒢ᵢ ∈ ℝⁿˣʷⁱᵈᵗʰ`.
    pub fn new(slots: usize, n: usize, width: usize) -> Result<Self> {
        if slots == 0 || n == 0 || width == 0 {
            return Err(Error::Config("history stack dimensions must be positive".into()));
        }
        Ok(HistoryStack {
            n,
            width,
            slots: vec![None; slots],
            gram: Mat::zeros(width, width),
            cross: vec![0.0; width],
            lambda_min: 0.0,
            rank_threshold: None,
            rank_time: None,
            mutations: 0,
        })
    }

    /// Records `rank_time` the first time `λ_min` exceeds `c_lower`.
    pub fn with_rank_threshold(mut self, c_lower: f64) -> Self {
        self.rank_threshold = Some(c_lower);
        self
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn filled(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn entries(&self) -> impl Iterator<Item = &StackEntry> {
        self.slots.iter().flatten()
    }

    pub fn slot(&self, i: usize) -> Option<&StackEntry> {
        self.slots.get(i).and_then(Option::as_ref)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn rank_time(&self) -> Option<f64> {
        self.rank_time
    }

    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn cross(&self) -> &[f64] {
        &self.cross
    }

    /// `(Σ𝒢ᵢᵀ𝒢ᵢ, Σ𝒢ᵢᵀℱᵢ)`
    pub fn gram_and_cross(&self) -> (&Mat, &[f64]) {
        (&self.gram, &self.cross)
    }

    /// Full-rank test `λ_min{Σ𝒢ᵢᵀ𝒢ᵢ} > c̲`.
    pub fn is_full_rank(&self, c_lower: f64) -> bool {
        self.lambda_min > c_lower
    }

    /// Sums recomputed directly from the stored pairs.
    pub fn recompute(&self) -> (Mat, Vec<f64>) {
        let mut gram = Mat::zeros(self.width, self.width);
        let mut cross = vec![0.0; self.width];
        for e in self.entries() {
            gram.add_scaled(1.0, &e.g_cal.gram());
            for (c, x) in cross.iter_mut().zip(e.g_cal.tr_mul_vec(&e.f_cal)) {
                *c += x;
            }
        }
        (gram, cross)
    }

    fn check(&self, candidate: &Regressor) -> Result<()> {
        if candidate.f_cal.len() != self.n {
            return Err(Error::dim("history stack candidate F", self.n, candidate.f_cal.len()));
        }
        if candidate.g_cal.shape() != (self.n, self.width) {
            return Err(Error::dim(
                "history stack candidate G",
                format!("{}x{}", self.n, self.width),
                format!("{:?}", candidate.g_cal.shape()),
            ));
        }
        if !(candidate.g_cal.is_finite() && candidate.f_cal.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("history stack candidate"));
        }
        Ok(())
    }

    /// `λ_min` of the Gram matrix with slot `j` replaced by `outer`.
    fn replaced_gram(&self, j: usize, outer: &Mat) -> Mat {
        let mut g = self.gram.clone();
        if let Some(old) = &self.slots[j] {
            g.add_scaled(-1.0, &old.outer);
        }
        g.add_scaled(1.0, outer);
        g
    }

    /// Offers a regressor to the stack. Empty slots are filled first; once
    /// full, the slot whose replacement maximizes `λ_min` is swapped out,
    /// but only if that strictly improves on the current `λ_min`.
    pub fn try_record(&mut self, candidate: &Regressor) -> Result<bool> {
        self.check(candidate)?;
        if candidate.is_zero() {
            return Ok(false);
        }
        let entry = StackEntry::new(candidate.t, candidate.f_cal.clone(), candidate.g_cal.clone());

        if let Some(j) = self.slots.iter().position(Option::is_none) {
            let gram = self.replaced_gram(j, &entry.outer);
            // Adding a PSD term cannot lower λ_min; keep the cache monotone
            // against eigen-solver rounding near zero.
            let lambda = min_eigenvalue_symmetric(&gram)?.max(self.lambda_min);
            self.commit(j, entry, gram, lambda, candidate.t);
            return Ok(true);
        }

        let mut best: Option<(usize, f64, Mat)> = None;
        for j in 0..self.slots.len() {
            let gram = self.replaced_gram(j, &entry.outer);
            let lambda = min_eigenvalue_symmetric(&gram)?;
            if best.as_ref().map_or(true, |(_, b, _)| lambda > *b) {
                best = Some((j, lambda, gram));
            }
        }
        match best {
            Some((j, lambda, gram)) if lambda > self.lambda_min + MIN_IMPROVEMENT => {
                self.commit(j, entry, gram, lambda, candidate.t);
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    fn commit(&mut self, j: usize, entry: StackEntry, gram: Mat, lambda: f64, t: f64) {
        if let Some(old) = &self.slots[j] {
            for (c, x) in self.cross.iter_mut().zip(&old.cross) {
                *c -= x;
            }
        }
        for (c, x) in self.cross.iter_mut().zip(&entry.cross) {
            *c += x;
        }
        self.slots[j] = Some(entry);
        self.gram = gram;
        self.lambda_min = lambda;
        self.mutations += 1;
        if self.mutations % RESYNC_INTERVAL == 0 {
            self.resync();
        }
        if self.rank_time.is_none() {
            if let Some(c) = self.rank_threshold {
                if self.is_full_rank(c) {
                    self.rank_time = Some(t);
                }
            }
        }
    }

    /// Replaces the incrementally updated sums if they drifted from the pairs.
    fn resync(&mut self) {
        let (gram, cross) = self.recompute();
        let scale = gram.max_abs().max(1.0);
        let drift = self.gram.max_abs_diff(&gram) / scale;
        if drift > RESYNC_TOLERANCE {
            log::debug!("history stack Gram drift {drift:.3e}; recomputing");
        }
        self.gram = gram;
        self.cross = cross;
    }

    /// Writes the filled slots as a binary record file: a header
    /// (`HSTK`, version, n, width, slots, count as little-endian `u32`) then,
    /// per pair, `t`, the `n` entries of `ℱᵢ` and the `n·width` entries of
    /// `𝒢ᵢ` in row-major order, all little-endian `f64`.
    pub fn write_records(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(RECORD_MAGIC)?;
        let count = self.filled() as u32;
        for v in [RECORD_VERSION, self.n as u32, self.width as u32, self.slots.len() as u32, count] {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in self.entries() {
            w.write_all(&e.t.to_le_bytes())?;
            for x in &e.f_cal {
                w.write_all(&x.to_le_bytes())?;
            }
            for i in 0..self.n {
                for j in 0..self.width {
                    w.write_all(&e.g_cal[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_records(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a record file. Pairs are restored into slots in file order and
    /// `λ_min` is recomputed.
    pub fn read_records(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != RECORD_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, n, width, slots, count] = header.map(|x| x as usize);
        if version != RECORD_VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if count > slots {
            return Err(Error::Format(format!("{count} records for {slots} slots")));
        }
        let mut stack = HistoryStack::new(slots, n, width)?;
        let mut next = || -> Result<f64> {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        for j in 0..count {
            let t = next()?;
            let f_cal = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
            let mut g_cal = Mat::zeros(n, width);
            for i in 0..n {
                for k in 0..width {
                    g_cal[(i, k)] = next()?;
                }
            }
            stack.slots[j] = Some(StackEntry::new(t, f_cal, g_cal));
        }
        let (gram, cross) = stack.recompute();
        stack.lambda_min = min_eigenvalue_symmetric(&gram)?.max(0.0);
        stack.gram = gram;
        stack.cross = cross;
        Ok(stack)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        HistoryStack::read_records(std::io::BufReader::new(file))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated record file: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{kron_row_blocks, symmetric_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regressor(f: &[f64], g: &[f64], u: &[f64], f_cal: Vec<f64>, t: f64) -> Regressor {
        Regressor {
            f_cal,
            g_cal: kron_row_blocks(&[f, g, u], f.len()),
            t,
        }
    }

    fn random_regressor(rng: &mut impl Rng, n: usize, m: usize, t: f64) -> Regressor {
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f_cal = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        regressor(&f, &g, &u, f_cal, t)
    }

    #[test]
    fn single_block_stays_rank_deficient() {
        let mut stack = HistoryStack::new(50, 2, 12).unwrap();
        let r = regressor(&[1.0, 2.0], &[0.5, -1.0], &[3.0, 1.0], vec![1.0, 1.0], 1.0);
        assert!(stack.try_record(&r).unwrap());
        assert_eq!(stack.filled(), 1);
        assert!(stack.slot(0).is_some());
        assert!(stack.lambda_min().abs() < 1e-12);
        assert!(!stack.is_full_rank(1e-6));
    }

    #[test]
    fn zero_candidates_are_ignored() {
        let mut stack = HistoryStack::new(3, 1, 3).unwrap();
        assert!(!stack.try_record(&Regressor::zero(1, 1, 0.0)).unwrap());
        assert_eq!(stack.filled(), 0);
    }

    #[test]
    fn duplicate_of_existing_entry_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut stack = HistoryStack::new(4, 1, 3).unwrap();
        let entries: Vec<_> = (0..4).map(|k| random_regressor(&mut rng, 1, 1, k as f64)).collect();
        for e in &entries {
            assert!(stack.try_record(e).unwrap());
        }
        let before = stack.lambda_min();
        assert!(!stack.try_record(&entries[2]).unwrap());
        assert_eq!(stack.lambda_min(), before);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut stack = HistoryStack::new(4, 2, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(stack.try_record(&random_regressor(&mut rng, 1, 1, 0.0)).is_err());
    }

    #[test]
    fn full_rank_examples() {
        let empty = HistoryStack::new(5, 1, 3).unwrap();
        assert!(!empty.is_full_rank(1e-6));

        // Three pairs whose blocks are scaled basis vectors give gram = 4·I.
        let mut stack = HistoryStack::new(3, 1, 3).unwrap();
        stack.try_record(&regressor(&[2.0], &[0.0], &[0.0], vec![0.0], 0.0)).unwrap();
        stack.try_record(&regressor(&[0.0], &[2.0], &[0.0], vec![0.0], 1.0)).unwrap();
        stack.try_record(&regressor(&[0.0], &[0.0], &[2.0], vec![0.0], 2.0)).unwrap();
        assert!(stack.gram().max_abs_diff(&Mat::identity(3).scale(4.0)) < 1e-15);
        assert!(stack.is_full_rank(3.9));
        assert!(!stack.is_full_rank(4.1));
    }

    #[test]
    fn rank_time_latches() {
        let mut stack = HistoryStack::new(3, 1, 3).unwrap().with_rank_threshold(1.0);
        stack.try_record(&regressor(&[2.0], &[0.0], &[0.0], vec![0.0], 0.5)).unwrap();
        stack.try_record(&regressor(&[0.0], &[2.0], &[0.0], vec![0.0], 1.0)).unwrap();
        assert_eq!(stack.rank_time(), None);
        stack.try_record(&regressor(&[0.0], &[0.0], &[2.0], vec![0.0], 1.5)).unwrap();
        assert_eq!(stack.rank_time(), Some(1.5));
        stack.try_record(&regressor(&[3.0], &[3.0], &[3.0], vec![0.0], 2.0)).unwrap();
        assert_eq!(stack.rank_time(), Some(1.5));
    }

    #[test]
    fn gram_and_cross_examples() {
        let stack = HistoryStack::new(4, 2, 12).unwrap();
        let (g, c) = stack.gram_and_cross();
        assert_eq!(g.max_abs(), 0.0);
        assert!(c.iter().all(|x| *x == 0.0));

        let theta: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let mut r = regressor(&[1.0, 2.0], &[0.5, -1.0], &[3.0, 1.0], vec![0.0, 0.0], 0.0);
        r.f_cal = r.g_cal.mul_vec(&theta);
        let mut stack = HistoryStack::new(4, 2, 12).unwrap();
        stack.try_record(&r).unwrap();
        let (g, c) = stack.gram_and_cross();
        let g_theta = g.mul_vec(&theta);
        assert!(c.iter().zip(&g_theta).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gram_and_cross_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stack = HistoryStack::new(6, 2, 12).unwrap();
        for k in 0..40 {
            stack.try_record(&random_regressor(&mut rng, 2, 2, k as f64)).unwrap();
        }
        let mut gram = Mat::zeros(12, 12);
        let mut cross = vec![0.0; 12];
        for e in stack.entries() {
            for a in 0..12 {
                for b in 0..12 {
                    for i in 0..2 {
                        gram[(a, b)] += e.g_cal[(i, a)] * e.g_cal[(i, b)];
                    }
                }
                for i in 0..2 {
                    cross[a] += e.g_cal[(i, a)] * e.f_cal[i];
                }
            }
        }
        assert!(stack.gram().max_abs_diff(&gram) < 1e-12);
        assert!(stack.cross().iter().zip(&cross).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    /// Independent oracle: closed-form eigenvalues of a symmetric 3x3 matrix.
    fn min_eig_3x3(m: &Mat) -> f64 {
        let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        let q = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
        let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return q;
        }
        let b = Mat::from_fn(3, 3, |i, j| (m[(i, j)] - if i == j { q } else { 0.0 }) / p);
        let det_b = b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)])
            - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
            + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)]);
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
    }

    #[test]
    fn replacement_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut stack = HistoryStack::new(4, 1, 3).unwrap();
        // Shadow copy of the pairs, maintained by the oracle alone.
        let mut shadow: Vec<Option<Mat>> = vec![None; 4];
        let mut replacements = 0;
        for k in 0..200 {
            let cand = random_regressor(&mut rng, 1, 1, k as f64);
            let outer = cand.g_cal.gram();
            let sum = |slots: &[Option<Mat>]| {
                slots.iter().flatten().fold(Mat::zeros(3, 3), |acc, o| acc.add(o))
            };
            let expected_slot = if let Some(j) = shadow.iter().position(Option::is_none) {
                Some(j)
            } else {
                let current = min_eig_3x3(&sum(&shadow));
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for j in 0..4 {
                    let mut trial = shadow.clone();
                    trial[j] = Some(outer.clone());
                    let l = min_eig_3x3(&sum(&trial));
                    if l > best.1 + 1e-9 {
                        best = (j, l);
                    }
                }
                (best.1 > current + 1e-9).then_some(best.0)
            };
            let accepted = stack.try_record(&cand).unwrap();
            assert_eq!(accepted, expected_slot.is_some(), "candidate {k}");
            if let Some(j) = expected_slot {
                shadow[j] = Some(outer);
                assert_eq!(stack.slot(j).unwrap().t, k as f64, "candidate {k} went to the wrong slot");
                if k >= 4 {
                    replacements += 1;
                }
            }
        }
        assert!(replacements > 5, "only {replacements} replacements exercised");
    }

    #[test]
    fn cache_survives_many_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut stack = HistoryStack::new(8, 2, 12).unwrap();
        let mut last = stack.lambda_min();
        for k in 0..1000 {
            stack.try_record(&random_regressor(&mut rng, 2, 2, k as f64)).unwrap();
            assert!(stack.lambda_min() >= last, "λ_min decreased at {k}");
            last = stack.lambda_min();
        }
        let (gram, cross) = stack.recompute();
        assert!(stack.gram().max_abs_diff(&gram) <= 1e-8);
        assert!(stack.cross().iter().zip(&cross).all(|(a, b)| (a - b).abs() <= 1e-8));
        let fresh = symmetric_eigenvalues(&gram).unwrap()[0];
        assert!((fresh - stack.lambda_min()).abs() <= 1e-10);
    }

    #[test]
    fn record_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut stack = HistoryStack::new(5, 2, 12).unwrap();
        for k in 0..3 {
            stack.try_record(&random_regressor(&mut rng, 2, 2, k as f64 * 0.05)).unwrap();
        }
        let mut bytes = Vec::new();
        stack.write_records(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 5 * 4 + 3 * 8 * (1 + 2 + 24));
        let back = HistoryStack::read_records(bytes.as_slice()).unwrap();
        assert_eq!(back.capacity(), 5);
        assert_eq!(back.filled(), 3);
        for (a, b) in stack.entries().zip(back.entries()) {
            assert_eq!(a, b);
        }
        assert!(HistoryStack::read_records(&bytes[..30]).is_err());
        assert!(HistoryStack::read_records(&b"NOPE"[..]).is_err());
    }
}
