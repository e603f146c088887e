//! Quenched moments of the Hamiltonian, the cubic and quartic coupling
//! representations, the Taylor proxy `T_N`, closed-form disorder averages and
//! the pair-statistic moment identities.

use serde::Serialize;

use crate::covariance::{coupling_count, krawtchouk_numerator};
use crate::error::{invalid, PspinError, Result};
use crate::model::{sweep_statistics, CouplingLayout, SweepStatistics, ENUMERATION_BUDGET};
use crate::multiindex::{binomial_checked, BinomialTable, Disorder};
use crate::numeric::CompensatedSum;

/// Budget for the ordered-pair loop of [`h3_representation`].
pub const PAIR_LOOP_BUDGET: u128 = 1 << 32;
/// Budget for the ordered-triple loop of [`h4_direct`].
pub const TRIPLE_LOOP_BUDGET: u128 = 1 << 28;
/// Largest N for the brute-force pair-moment path.
pub const PAIR_ENUMERATION_MAX_N: usize = 14;

/// `E_sigma[H^k]` for k = 2, 3, 4 with the derived quartic statistic and proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuenchedMoments {
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub h4: f64,
    pub j4_sum: f64,
    pub t_value: f64,
}

/// `T = 1 - beta^4 m2^2/8 - beta^3 m3/6 + beta^4 m4/24`.
pub fn taylor_proxy(beta: f64, m2: f64, m3: f64, m4: f64) -> f64 {
    let b3 = beta * beta * beta;
    let b4 = b3 * beta;
    1.0 - b4 * m2 * m2 / 8.0 - b3 * m3 / 6.0 + b4 * m4 / 24.0
}

fn quartic_sum(disorder: &Disorder) -> f64 {
    disorder.couplings.iter().map(|j| (j * j) * (j * j)).collect::<CompensatedSum>().value()
}

/// Assembles [`QuenchedMoments`] from precomputed sweep averages.
pub fn quenched_moments_from(stats: &SweepStatistics, disorder: &Disorder, beta: f64) -> QuenchedMoments {
    let [_, m2, m3, m4] = stats.h_moments;
    let j4_sum = quartic_sum(disorder);
    let a4 = disorder.params.a_n().powi(4);
    QuenchedMoments {
        m2,
        m3,
        m4,
        h4: -m2 * m2 / 8.0 + m4 / 24.0 + a4 / 12.0 * j4_sum,
        j4_sum,
        t_value: taylor_proxy(beta, m2, m3, m4),
    }
}

/// Quenched moments by one Gray sweep of the hypercube.
pub fn quenched_moments(disorder: &Disorder, beta: f64) -> Result<QuenchedMoments> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta={beta} must be finite and >= 0")));
    }
    let n = disorder.params.n;
    if n > ENUMERATION_BUDGET {
        return Err(PspinError::ResourceLimit(format!("N={n} exceeds enumeration budget {ENUMERATION_BUDGET}")));
    }
    let layout = CouplingLayout::new(n, disorder.params.p)?;
    let stats = sweep_statistics(&layout, disorder, &[])?;
    Ok(quenched_moments_from(&stats, disorder, beta))
}

/// `sum_A |J_A|^k`, the natural scale of the k-th moment identities.
pub fn coupling_scale(disorder: &Disorder, k: i32) -> f64 {
    disorder.couplings.iter().map(|j| j.abs().powi(k)).sum()
}

fn masks_of(disorder: &Disorder) -> Result<Vec<u64>> {
    Ok(CouplingLayout::new(disorder.params.n, disorder.params.p)?.masks().to_vec())
}

/// `E_sigma(-H^3) = a_N^3 sum over distinct ordered (A,B,C) of J_A J_B J_C [A xor B xor C = 0]`,
/// looping over ordered pairs and looking up `C = A xor B` by rank.
pub fn h3_representation(disorder: &Disorder) -> Result<f64> {
    let params = &disorder.params;
    let count = params.num_couplings();
    if count * count > PAIR_LOOP_BUDGET {
        return Err(PspinError::ResourceLimit(format!("{count}^2 ordered pairs exceed the pair-loop budget")));
    }
    let masks = masks_of(disorder)?;
    let table = BinomialTable::new();
    let p = params.p as u32;
    let j = &disorder.couplings;
    let mut total = CompensatedSum::new();
    for (a, &ma) in masks.iter().enumerate() {
        let mut row = 0.0;
        for (b, &mb) in masks.iter().enumerate() {
            let mc = ma ^ mb;
            if a == b || mc.count_ones() != p {
                continue;
            }
            row += j[b] * j[table.rank_of_mask(mc) as usize];
        }
        total.add(j[a] * row);
    }
    Ok(params.a_n().powi(3) * total.value())
}

/// `H_4` through `-m2^2/8 + m4/24 + (a_N^4/12) sum_A J_A^4`.
pub fn h4_statistic(disorder: &Disorder) -> Result<f64> {
    Ok(quenched_moments(disorder, 0.0)?.h4)
}

/// `H_4 = (a_N^4/4!) sum over distinct ordered (A,B,C,D) of J_A J_B J_C J_D [A xor B xor C xor D = 0]`
/// by the direct triple loop; an oracle for small N.
pub fn h4_direct(disorder: &Disorder) -> Result<f64> {
    let params = &disorder.params;
    let count = params.num_couplings();
    if count * count * count > TRIPLE_LOOP_BUDGET {
        return Err(PspinError::ResourceLimit(format!("{count}^3 ordered triples exceed the triple-loop budget")));
    }
    let masks = masks_of(disorder)?;
    let table = BinomialTable::new();
    let p = params.p as u32;
    let j = &disorder.couplings;
    let mut total = CompensatedSum::new();
    for (a, &ma) in masks.iter().enumerate() {
        for (b, &mb) in masks.iter().enumerate() {
            if b == a {
                continue;
            }
            let mab = ma ^ mb;
            let mut row = 0.0;
            for (c, &mc) in masks.iter().enumerate() {
                let md = mab ^ mc;
                if c == a || c == b || md.count_ones() != p || md == ma || md == mb || md == mc {
                    continue;
                }
                row += j[c] * j[table.rank_of_mask(md) as usize];
            }
            total.add(j[a] * j[b] * row);
        }
    }
    Ok(params.a_n().powi(4) / 24.0 * total.value())
}

fn a_squared(n: usize, p: usize) -> Result<(f64, f64)> {
    if p == 0 || n == 0 {
        return Err(invalid("need N >= 1 and p >= 1"));
    }
    let b = coupling_count(n, p)? as f64;
    Ok((b, n as f64 / b))
}

/// `ln E[Z_N e^{-N J_N}] = binom(N,p) (x/(2(1+x)) - ln(1+x)/2)`, `x = beta^2 a_N^2`.
pub fn log_first_moment(n: usize, p: usize, beta: f64) -> Result<f64> {
    let (b, a2) = a_squared(n, p)?;
    let x = beta * beta * a2;
    Ok(b * (x / (2.0 * (1.0 + x)) - x.ln_1p() / 2.0))
}

/// `E[Z_N e^{-N J_N}]` in closed form.
pub fn exact_first_moment(n: usize, p: usize, beta: f64) -> Result<f64> {
    Ok(log_first_moment(n, p, beta)?.exp())
}

/// Two-term expansion `1 - beta^4 N a_N^2/4 + beta^8 N^2 a_N^4/32` of the first moment.
pub fn first_moment_expansion(n: usize, p: usize, beta: f64) -> Result<f64> {
    let (_, a2) = a_squared(n, p)?;
    let t = beta.powi(4) * n as f64 * a2;
    Ok(1.0 - t / 4.0 + t * t / 32.0)
}

/// `ln E[e^{-q N J_N}] = -(binom(N,p)/2) ln(1 + q beta^2 a_N^2)`.
pub fn log_j_mgf(n: usize, p: usize, beta: f64, q: f64) -> Result<f64> {
    let (b, a2) = a_squared(n, p)?;
    let x = q * beta * beta * a2;
    if !(x > -1.0) {
        return Err(invalid(format!("q beta^2 a_N^2 = {x} must exceed -1")));
    }
    Ok(-b / 2.0 * x.ln_1p())
}

/// `E[e^{-q N J_N}]` in closed form.
pub fn j_mgf(n: usize, p: usize, beta: f64, q: f64) -> Result<f64> {
    Ok(log_j_mgf(n, p, beta, q)?.exp())
}

/// Numerators of `E_{sigma,sigma'}[(sum_A sigma_A sigma'_A)^k]` over `2^N` by two routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairMomentPaths {
    /// `sum_j C(N,j) K_j^k` with Krawtchouk numerators `K_j`
    pub overlap_sum: i128,
    /// `sum_tau (sum_A tau_A)^k` over all `2^N` products `tau = sigma sigma'`
    pub enumeration: i128,
    pub log2_denominator: u32,
}

fn check_pair_args(n: usize, p: usize, k: u32) -> Result<()> {
    if !(1..=4).contains(&k) {
        return Err(invalid(format!("pair moment order {k} outside 1..=4")));
    }
    if p == 0 || p > n {
        return Err(invalid(format!("need 1 <= p <= N, got N={n} p={p}")));
    }
    Ok(())
}

fn overflow() -> PspinError {
    PspinError::ResourceLimit("pair moment numerator exceeds 128 bits".into())
}

fn checked_pow(x: i128, k: u32) -> Result<i128> {
    x.checked_pow(k).ok_or_else(overflow)
}

/// Overlap-grid route: `sum over m of (binom f_{p,N}(m))^k p_N(m)` in integers.
pub fn pair_moment_overlap_sum(n: usize, p: usize, k: u32) -> Result<i128> {
    check_pair_args(n, p, k)?;
    let mut total: i128 = 0;
    for disagree in 0..=n {
        let weight = binomial_checked(n as u64, disagree as u64).ok_or_else(overflow)?;
        let weight = i128::try_from(weight).map_err(|_| overflow())?;
        let term = checked_pow(krawtchouk_numerator(n, p, disagree)?, k)?.checked_mul(weight).ok_or_else(overflow)?;
        total = total.checked_add(term).ok_or_else(overflow)?;
    }
    Ok(total)
}

/// Brute-force route over every `tau = sigma sigma'` and every multi-index.
pub fn pair_moment_enumeration(n: usize, p: usize, k: u32) -> Result<i128> {
    check_pair_args(n, p, k)?;
    if n > PAIR_ENUMERATION_MAX_N {
        return Err(PspinError::ResourceLimit(format!("pair enumeration needs N <= {PAIR_ENUMERATION_MAX_N}, got {n}")));
    }
    let layout = CouplingLayout::new(n, p)?;
    let mut total: i128 = 0;
    for tau in 0..(1u64 << n) {
        let s: i128 = layout.masks().iter().map(|&a| if (a & tau).count_ones() % 2 == 0 { 1 } else { -1 }).sum();
        total = total.checked_add(checked_pow(s, k)?).ok_or_else(overflow)?;
    }
    Ok(total)
}

/// Both integer routes for `E_{sigma,sigma'}[(sum_A sigma_A sigma'_A)^k]`.
pub fn pair_moment_paths(n: usize, p: usize, k: u32) -> Result<PairMomentPaths> {
    Ok(PairMomentPaths {
        overlap_sum: pair_moment_overlap_sum(n, p, k)?,
        enumeration: pair_moment_enumeration(n, p, k)?,
        log2_denominator: n as u32,
    })
}

/// `E_{sigma,sigma'}[(sum_A sigma_A sigma'_A)^k]`; errors if the two routes differ.
pub fn pair_statistic_moment(n: usize, p: usize, k: u32) -> Result<f64> {
    let paths = pair_moment_paths(n, p, k)?;
    if paths.overlap_sum != paths.enumeration {
        return Err(PspinError::Numerical(format!(
            "pair moment routes differ: {} vs {}",
            paths.overlap_sum, paths.enumeration
        )));
    }
    Ok(paths.overlap_sum as f64 / (n as f64).exp2())
}
