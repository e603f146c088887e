//! Multi-indices over `I_N` (strictly increasing p-tuples of sites), their
//! colexicographic ranking, and Gaussian disorder keyed by rank.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, PspinError, Result};
use crate::rng;

/// Largest system size; a configuration must fit one `u64` bitmask.
pub const MAX_SITES: usize = 64;

const DISORDER_MAGIC: &[u8; 5] = b"PSPN1";

/// Exact binomial coefficient, `None` on `u128` overflow. Zero when `k > n`.
pub fn binomial_checked(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// Exact binomial coefficient. Panics on overflow, which cannot happen for `n <= 130`.
pub fn binomial(n: u64, k: u64) -> u128 {
    binomial_checked(n, k).expect("binomial coefficient overflows u128")
}

/// Pascal triangle up to `MAX_SITES`, for hot-loop ranking.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    rows: Vec<[u64; MAX_SITES + 1]>,
}

impl BinomialTable {
    pub fn new() -> Self {
        let mut rows = vec![[0u64; MAX_SITES + 1]; MAX_SITES + 1];
        for n in 0..=MAX_SITES {
            rows[n][0] = 1;
            for k in 1..=n {
                rows[n][k] = rows[n - 1][k - 1].saturating_add(if k < n { rows[n - 1][k] } else { 0 });
            }
        }
        Self { rows }
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.rows[n][k]
        }
    }

    /// Colex rank of the set whose members are the bits of `mask` (bit i = site i+1).
    #[inline]
    pub fn rank_of_mask(&self, mut mask: u64) -> u64 {
        let mut rank = 0;
        let mut j = 1;
        while mask != 0 {
            let bit = mask.trailing_zeros() as usize;
            rank += self.get(bit, j);
            j += 1;
            mask &= mask - 1;
        }
        rank
    }
}

impl Default for BinomialTable {
    fn default() -> Self {
        Self::new()
    }
}

/// System size, interaction order and inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub p: usize,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(n: usize, p: usize, beta: f64) -> Result<Self> {
        if p < 2 {
            return Err(invalid(format!("interaction order p={p} must be at least 2")));
        }
        if n < p || n > MAX_SITES {
            return Err(invalid(format!("system size N={n} must satisfy p <= N <= {MAX_SITES} (p={p})")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid(format!("inverse temperature beta={beta} must be finite and >= 0")));
        }
        Ok(Self { n, p, beta })
    }

    /// |I_N| = binom(N, p).
    pub fn num_couplings(&self) -> u128 {
        binomial(self.n as u64, self.p as u64)
    }

    /// a_N = sqrt(N / binom(N, p)).
    pub fn a_n(&self) -> f64 {
        (self.n as f64 / self.num_couplings() as f64).sqrt()
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

/// A strictly increasing p-tuple of 1-based site labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    indices: Vec<usize>,
}

impl MultiIndex {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("empty multi-index"));
        }
        if indices[0] < 1 || *indices.last().unwrap() > n {
            return Err(invalid(format!("multi-index {indices:?} has entries outside [1, {n}]")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("multi-index {indices:?} is not strictly increasing")));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Bitmask with bit `i - 1` set for every member `i`.
    pub fn mask(&self) -> u64 {
        self.indices.iter().fold(0u64, |m, &i| m | (1u64 << (i - 1)))
    }

    pub fn from_mask(mask: u64) -> Self {
        let mut indices = Vec::with_capacity(mask.count_ones() as usize);
        let mut m = mask;
        while m != 0 {
            indices.push(m.trailing_zeros() as usize + 1);
            m &= m - 1;
        }
        Self { indices }
    }
}

fn check_shape(n: usize, p: usize) -> Result<()> {
    if p < 1 || p > n {
        return Err(invalid(format!("need 1 <= p <= N, got N={n}, p={p}")));
    }
    if n > MAX_SITES {
        return Err(invalid(format!("N={n} exceeds the bitmask bound {MAX_SITES}")));
    }
    Ok(())
}

/// All of `I_N` in colexicographic order.
pub fn enumerate_multi_indices(n: usize, p: usize) -> Result<Vec<MultiIndex>> {
    check_shape(n, p)?;
    let count = binomial(n as u64, p as u64);
    let count = usize::try_from(count).map_err(|_| PspinError::ResourceLimit(format!("binom({n},{p}) too large")))?;
    let mut out = Vec::with_capacity(count);
    let mut current: Vec<usize> = (1..=p).collect();
    loop {
        out.push(MultiIndex { indices: current.clone() });
        // colex successor: bump the lowest position that can move
        let mut j = 0;
        while j < p && current[j] + 1 == if j + 1 < p { current[j + 1] } else { n + 1 } {
            j += 1;
        }
        if j == p {
            break;
        }
        current[j] += 1;
        for (i, slot) in current.iter_mut().enumerate().take(j) {
            *slot = i + 1;
        }
    }
    Ok(out)
}

/// Colex rank: sum over positions j of binom(a_j - 1, j).
pub fn rank(a: &MultiIndex, n: usize, p: usize) -> Result<u128> {
    check_shape(n, p)?;
    if a.len() != p || *a.indices.last().unwrap() > n {
        return Err(invalid(format!("multi-index {:?} is not in I_N for N={n}, p={p}", a.indices)));
    }
    Ok(a.indices
        .iter()
        .enumerate()
        .map(|(j, &ai)| binomial(ai as u64 - 1, j as u64 + 1))
        .sum())
}

pub fn unrank(r: u128, n: usize, p: usize) -> Result<MultiIndex> {
    check_shape(n, p)?;
    let total = binomial(n as u64, p as u64);
    if r >= total {
        return Err(invalid(format!("rank {r} out of range [0, {total})")));
    }
    let mut rest = r;
    let mut indices = vec![0; p];
    let mut c = n as u64;
    for j in (1..=p as u64).rev() {
        // largest c with binom(c, j) <= rest
        c -= 1;
        while binomial(c, j) > rest {
            c -= 1;
        }
        indices[j as usize - 1] = c as usize + 1;
        rest -= binomial(c, j);
    }
    Ok(MultiIndex { indices })
}

/// Standard normal couplings J_A in colex-rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Disorder {
    pub params: ModelParams,
    pub seed: u64,
    pub couplings: Vec<f64>,
}

/// Draws the coupling vector for `(params, seed)`; entry `r` depends only on `(seed, r)`.
pub fn sample_disorder(params: ModelParams, seed: u64) -> Disorder {
    let len = params.num_couplings() as usize;
    let couplings = if len >= 1 << 14 {
        (0..len as u64).into_par_iter().map(|r| rng::normal_at(seed, r)).collect()
    } else {
        (0..len as u64).map(|r| rng::normal_at(seed, r)).collect()
    };
    Disorder { params, seed, couplings }
}

impl Disorder {
    /// Disorder with explicit couplings; the length must equal binom(N, p).
    pub fn from_couplings(params: ModelParams, couplings: Vec<f64>) -> Result<Self> {
        let expected = params.num_couplings();
        if couplings.len() as u128 != expected {
            return Err(invalid(format!("expected {expected} couplings, got {}", couplings.len())));
        }
        Ok(Self { params, seed: 0, couplings })
    }

    /// Regenerates the coupling at `rank` without touching any other entry.
    pub fn coupling_at(params: &ModelParams, seed: u64, rank: u64) -> f64 {
        debug_assert!((rank as u128) < params.num_couplings());
        rng::normal_at(seed, rank)
    }

    pub fn square_sum(&self) -> f64 {
        self.couplings.iter().map(|j| j * j).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DISORDER_MAGIC)?;
        w.write_all(&(self.params.n as u64).to_le_bytes())?;
        w.write_all(&(self.params.p as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for j in &self.couplings {
            w.write_all(&j.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a disorder file; `beta` is attached to the returned params.
    pub fn read_from<R: Read>(mut r: R, beta: f64) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != DISORDER_MAGIC {
            return Err(PspinError::Data("bad disorder file magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut r)? as usize;
        let p = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let params = ModelParams::new(n, p, beta)?;
        let len = params.num_couplings() as usize;
        let mut couplings = Vec::with_capacity(len);
        for _ in 0..len {
            couplings.push(f64::from_le_bytes(next_u64(&mut r)?.to_le_bytes()));
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(PspinError::Data("trailing bytes after coupling block".into()));
        }
        Ok(Self { params, seed, couplings })
    }
}
