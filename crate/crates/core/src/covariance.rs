//! Covariance of the Gaussian field as a function of the overlap, its Hermite
//! expansion, and the overlap distribution on the grid `{-1 + 2j/N}`.

use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, PspinError, Result};
use crate::multiindex::binomial_checked;

/// Degree cap for [`MomentPolynomial`].
pub const MAX_DEGREE: usize = 64;

/// Polynomial in one variable; `coefficients[j]` multiplies `x^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPolynomial {
    coefficients: Vec<f64>,
}

impl MomentPolynomial {
    pub fn new(mut coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(invalid("polynomial coefficients must be finite"));
        }
        while coefficients.last() == Some(&0.0) {
            coefficients.pop();
        }
        if coefficients.len() > MAX_DEGREE + 1 {
            return Err(invalid(format!("degree {} exceeds {MAX_DEGREE}", coefficients.len() - 1)));
        }
        Ok(MomentPolynomial { coefficients })
    }

    pub fn zero() -> Self {
        MomentPolynomial { coefficients: Vec::new() }
    }

    pub fn monomial(degree: usize) -> Result<Self> {
        let mut c = vec![0.0; degree + 1];
        c[degree] = 1.0;
        Self::new(c)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.is_zero() || other.is_zero() {
            return Ok(Self::zero());
        }
        let degree = self.degree() + other.degree();
        if degree > MAX_DEGREE {
            return Err(invalid(format!("product degree {degree} exceeds {MAX_DEGREE}")));
        }
        let mut out = vec![0.0; degree + 1];
        for (i, &a) in self.coefficients.iter().enumerate() {
            for (j, &b) in other.coefficients.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn pow(&self, r: u32) -> Result<Self> {
        let mut acc = MomentPolynomial { coefficients: vec![1.0] };
        for _ in 0..r {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }
}

/// `p! / (2^k k! (p-2k)!)` as an exact integer when it fits.
fn hermite_magnitude(p: u64, k: u64) -> f64 {
    // p!/((p-2k)! (2k)!) * (2k)!/(2^k k!) = C(p,2k) * (2k-1)!!
    let odd_factorial = (1..=k).try_fold(1u128, |acc, i| acc.checked_mul(2 * i as u128 - 1));
    match (binomial_checked(p, 2 * k), odd_factorial) {
        (Some(b), Some(f)) => match b.checked_mul(f) {
            Some(v) => v as f64,
            None => b as f64 * f as f64,
        },
        _ => {
            let ln = statrs::function::factorial::ln_factorial(p)
                - k as f64 * std::f64::consts::LN_2
                - statrs::function::factorial::ln_factorial(k)
                - statrs::function::factorial::ln_factorial(p - 2 * k);
            ln.exp()
        }
    }
}

/// Coefficient `d_{p-2k} = (-1)^k p! / (2^k k! (p-2k)!)` of `x^{p-2k}` in `He_p`.
pub fn d_coefficient(p: usize, k: usize) -> Result<f64> {
    if 2 * k > p {
        return Err(invalid(format!("k={k} out of range for p={p}")));
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * hermite_magnitude(p as u64, k as u64))
}

/// Probabilists' Hermite polynomial by the three-term recurrence.
pub fn hermite(p: usize) -> Result<MomentPolynomial> {
    if p > MAX_DEGREE {
        return Err(invalid(format!("degree {p} exceeds {MAX_DEGREE}")));
    }
    let mut prev = vec![1.0];
    if p == 0 {
        return MomentPolynomial::new(prev);
    }
    let mut cur = vec![0.0, 1.0];
    for n in 1..p {
        let mut next = vec![0.0; n + 2];
        for (j, &c) in cur.iter().enumerate() {
            next[j + 1] += c;
        }
        for (j, &c) in prev.iter().enumerate() {
            next[j] -= n as f64 * c;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    MomentPolynomial::new(cur)
}

/// Hermite polynomial assembled from [`d_coefficient`] instead of the recurrence.
pub fn hermite_from_coefficients(p: usize) -> Result<MomentPolynomial> {
    if p > MAX_DEGREE {
        return Err(invalid(format!("degree {p} exceeds {MAX_DEGREE}")));
    }
    let mut c = vec![0.0; p + 1];
    for k in 0..=p / 2 {
        c[p - 2 * k] = d_coefficient(p, k)?;
    }
    MomentPolynomial::new(c)
}

fn overflow(what: &str) -> PspinError {
    PspinError::ResourceLimit(format!("{what} does not fit 128-bit integers"))
}

/// `sum_j (-1)^j C(k,j) C(N-k,p-j)`: the integer `sum_A sigma_A sigma'_A` for
/// configurations disagreeing on `k` sites.
pub fn krawtchouk_numerator(n: usize, p: usize, k: usize) -> Result<i128> {
    if k > n || p > n {
        return Err(invalid(format!("need p <= N and k <= N, got N={n} p={p} k={k}")));
    }
    let (mut plus, mut minus) = (0u128, 0u128);
    for j in 0..=p.min(k) {
        let term = binomial_checked(k as u64, j as u64)
            .and_then(|a| binomial_checked((n - k) as u64, (p - j) as u64).and_then(|b| a.checked_mul(b)))
            .ok_or_else(|| overflow("Krawtchouk term"))?;
        // even and odd j summed apart, one subtraction at the end
        let slot = if j % 2 == 0 { &mut plus } else { &mut minus };
        *slot = slot.checked_add(term).ok_or_else(|| overflow("Krawtchouk sum"))?;
    }
    let plus = i128::try_from(plus).map_err(|_| overflow("Krawtchouk sum"))?;
    let minus = i128::try_from(minus).map_err(|_| overflow("Krawtchouk sum"))?;
    Ok(plus - minus)
}

/// `binom(N,p)` as an exact integer.
pub fn coupling_count(n: usize, p: usize) -> Result<u128> {
    if p > n {
        return Err(invalid(format!("p={p} exceeds N={n}")));
    }
    binomial_checked(n as u64, p as u64).ok_or_else(|| overflow("binom(N,p)"))
}

/// Exact `f_{p,N}(1 - 2k/N) = Cov(X_sigma, X_sigma')` for `k` disagreeing sites.
pub fn exact_covariance(n: usize, p: usize, k_disagree: usize) -> Result<f64> {
    if p == 0 {
        return Err(invalid("p must be >= 1"));
    }
    let num = krawtchouk_numerator(n, p, k_disagree)?;
    Ok(num as f64 / coupling_count(n, p)? as f64)
}

/// Generalised binomial `x (x-1) ... (x-j+1) / j!` for real `x`.
fn real_binomial(x: f64, j: usize) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (x - i as f64) / (i + 1) as f64)
}

/// `f_{p,N}` at a real overlap `m`, through the Krawtchouk polynomial in the
/// (real) disagreement count `N(1-m)/2`. Agrees with [`exact_covariance`] on the grid.
pub fn covariance_at_overlap(n: usize, p: usize, m: f64) -> Result<f64> {
    if p == 0 || p > n {
        return Err(invalid(format!("need 1 <= p <= N, got N={n} p={p}")));
    }
    if !(-1.0..=1.0).contains(&m) {
        return Err(PspinError::Domain(format!("overlap {m} outside [-1, 1]")));
    }
    let k = n as f64 * (1.0 - m) / 2.0;
    let mut sum = 0.0;
    for j in 0..=p {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * real_binomial(k, j) * real_binomial(n as f64 - k, p - j);
    }
    Ok(sum / coupling_count(n, p)? as f64)
}

/// Truncated expansion `sum_k d_{p-2k} N^{-k} m^{p-2k}`.
pub fn expansion_approx(n: usize, p: usize, m: f64) -> f64 {
    let inv_n = 1.0 / n as f64;
    (0..=p / 2)
        .map(|k| {
            let d = d_coefficient(p, k).expect("k within range");
            d * inv_n.powi(k as i32) * m.powi((p - 2 * k) as i32)
        })
        .sum()
}

/// Max over the grid of `|exact - expansion| / max(|exact|, N^{-p/2})`.
pub fn expansion_max_deviation(n: usize, p: usize) -> Result<f64> {
    let floor = (n as f64).powf(-(p as f64) / 2.0);
    let grid = OverlapGrid::new(n)?;
    let mut worst = 0.0f64;
    for (j, &m) in grid.values().iter().enumerate() {
        let exact = exact_covariance(n, p, n - j)?;
        let dev = (exact - expansion_approx(n, p, m)).abs() / exact.abs().max(floor);
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// The overlap grid `m_j = -1 + 2j/N`, `j = 0..N`.
#[derive(Debug, Clone)]
pub struct OverlapGrid {
    n: usize,
    values: Vec<f64>,
}

impl OverlapGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("grid needs N >= 1"));
        }
        let values = (0..=n).map(|j| -1.0 + 2.0 * j as f64 / n as f64).collect();
        Ok(OverlapGrid { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index `j` with `m = -1 + 2j/N`; errors when `m` is off the grid.
    pub fn index_of(&self, m: f64) -> Result<usize> {
        grid_index(self.n, m)
    }
}

fn grid_index(n: usize, m: f64) -> Result<usize> {
    let j = n as f64 * (1.0 + m) / 2.0;
    let r = j.round();
    if !m.is_finite() || (j - r).abs() > 1e-9 * (1.0 + n as f64) || r < 0.0 || r > n as f64 {
        return Err(invalid(format!("overlap {m} is not on the N={n} grid")));
    }
    Ok(r as usize)
}

/// `P(R_N = m) = C(N, N(1+m)/2) 2^{-N}` for `m` on the grid.
pub fn overlap_pmf(n: usize, m: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("N must be >= 1"));
    }
    let j = grid_index(n, m)?;
    let j = j.min(n - j);
    Ok((ln_binomial(n as u64, j as u64) - n as f64 * std::f64::consts::LN_2).exp())
}

/// Local-CLT approximation `2/sqrt(2 pi N) exp(-N m^2 / 2)` of the overlap pmf.
pub fn overlap_pmf_gaussian(n: usize, m: f64) -> f64 {
    let nf = n as f64;
    2.0 / (2.0 * std::f64::consts::PI * nf).sqrt() * (-nf * m * m / 2.0).exp()
}

/// Max relative error of [`overlap_pmf_gaussian`] over grid points with `|m| <= N^{-1/3}`.
pub fn gaussian_pmf_max_relative_error(n: usize) -> Result<f64> {
    let radius = (n as f64).powf(-1.0 / 3.0);
    let grid = OverlapGrid::new(n)?;
    let mut worst = 0.0f64;
    for &m in grid.values().iter().filter(|m| m.abs() <= radius) {
        let exact = overlap_pmf(n, m)?;
        worst = worst.max((overlap_pmf_gaussian(n, m) / exact - 1.0).abs());
    }
    Ok(worst)
}

/// One row of the covariance table.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceRow {
    pub n: usize,
    pub p: usize,
    pub m: f64,
    pub exact: f64,
    pub expansion: f64,
    pub gaussian_pmf: f64,
}

/// Exact covariance, expansion and Gaussian pmf at every grid point.
pub fn tabulate_covariance(n: usize, p: usize) -> Result<Vec<CovarianceRow>> {
    let grid = OverlapGrid::new(n)?;
    grid.values()
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            Ok(CovarianceRow {
                n,
                p,
                m,
                exact: exact_covariance(n, p, n - j)?,
                expansion: expansion_approx(n, p, m),
                gaussian_pmf: overlap_pmf_gaussian(n, m),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::enumerate_multi_indices;

    #[test]
    fn d_coefficient_examples() {
        for p in 0..12 {
            assert_eq!(d_coefficient(p, 0).unwrap(), 1.0);
        }
        assert_eq!(d_coefficient(3, 1).unwrap(), -3.0);
        assert_eq!(d_coefficient(4, 1).unwrap(), -6.0);
        assert_eq!(d_coefficient(4, 2).unwrap(), 3.0);
        assert!(d_coefficient(3, 2).is_err());
    }

    #[test]
    fn hermite_examples_and_recurrence() {
        assert_eq!(hermite(1).unwrap().coefficients(), &[0.0, 1.0]);
        assert_eq!(hermite(3).unwrap().eval(2.0), 2.0);
        for p in 0..=12 {
            let h = hermite(p).unwrap();
            assert_eq!(h, hermite_from_coefficients(p).unwrap());
            assert_eq!(h.coefficients()[p], 1.0);
            for x in -3..=3 {
                let x = x as f64;
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(h.eval(-x), sign * h.eval(x));
                if p >= 1 {
                    let next = hermite(p + 1).unwrap().eval(x);
                    let prev = hermite(p - 1).unwrap().eval(x);
                    let resid = next - (x * h.eval(x) - p as f64 * prev);
                    assert!(resid.abs() < 1e-12 * (1.0 + next.abs()), "p={p} x={x}");
                }
            }
        }
    }

    #[test]
    fn polynomial_trims_and_limits_degree() {
        let p = MomentPolynomial::new(vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.degree(), 1);
        assert!(MomentPolynomial::new(vec![1.0; 66]).is_err());
        assert!(hermite(40).unwrap().mul(&hermite(30).unwrap()).is_err());
        assert_eq!(p.pow(2).unwrap().coefficients(), &[1.0, 4.0, 4.0]);
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(exact_covariance(6, 3, 0).unwrap(), 1.0);
        assert_eq!(exact_covariance(6, 3, 6).unwrap(), -1.0);
        assert_eq!(exact_covariance(6, 4, 6).unwrap(), 1.0);
        assert_eq!(exact_covariance(6, 3, 3).unwrap(), 0.0);
        assert!(exact_covariance(6, 3, 7).is_err());
    }

    #[test]
    fn covariance_matches_pair_enumeration() {
        for n in 2..=12usize {
            for p in 2..=5usize.min(n) {
                let masks: Vec<u64> = enumerate_multi_indices(n, p).unwrap().iter().map(|a| a.mask()).collect();
                for k in 0..=n {
                    // sigma all up, sigma' flipped on the first k sites
                    let flipped = (1u64 << k) - 1;
                    let brute: i128 = masks
                        .iter()
                        .map(|&a| if (a & flipped).count_ones() % 2 == 0 { 1 } else { -1 })
                        .sum();
                    assert_eq!(krawtchouk_numerator(n, p, k).unwrap(), brute, "N={n} p={p} k={k}");
                }
            }
        }
    }

    #[test]
    fn real_overlap_extension_agrees_on_grid() {
        for &(n, p) in &[(20usize, 3usize), (40, 4), (80, 3)] {
            for k in 0..=n {
                let m = 1.0 - 2.0 * k as f64 / n as f64;
                let a = exact_covariance(n, p, k).unwrap();
                let b = covariance_at_overlap(n, p, m).unwrap();
                assert!((a - b).abs() < 1e-12, "N={n} p={p} k={k}");
            }
        }
    }

    #[test]
    fn expansion_odd_p_vanishes_at_zero() {
        assert_eq!(expansion_approx(20, 3, 0.0), 0.0);
        let devs: Vec<f64> = [20, 40, 80].iter().map(|&n| inner_deviation(n, 3)).collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        let sup: Vec<f64> = [20usize, 80, 320]
            .iter()
            .map(|&n| (0..=n).map(|k| (exact_covariance(n, 3, k).unwrap() - (1.0 - 2.0 * k as f64 / n as f64).powi(3)).abs()).fold(0.0, f64::max))
            .collect();
        assert!(sup[0] > sup[1] && sup[1] > sup[2], "{sup:?}");
    }

    fn inner_deviation(n: usize, p: usize) -> f64 {
        let floor = (n as f64).powf(-(p as f64) / 2.0);
        (0..=n)
            .map(|k| 1.0 - 2.0 * k as f64 / n as f64)
            .filter(|m| m.abs() <= 0.5)
            .map(|m| {
                let k = ((1.0 - m) * n as f64 / 2.0).round() as usize;
                let exact = exact_covariance(n, p, k).unwrap();
                (exact - expansion_approx(n, p, m)).abs() / exact.abs().max(floor)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn expansion_diagnostic_is_finite() {
        let d = expansion_max_deviation(30, 3).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn pmf_normalises_and_is_symmetric() {
        for n in 1..=40usize {
            let grid = OverlapGrid::new(n).unwrap();
            let total: f64 = grid.values().iter().map(|&m| overlap_pmf(n, m).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "N={n}");
            for &m in grid.values() {
                let a = overlap_pmf(n, m).unwrap();
                let b = overlap_pmf(n, -m).unwrap();
                assert!((a - b).abs() <= 1e-15 * a);
            }
        }
        assert!((overlap_pmf(2, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((overlap_pmf(2, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(overlap_pmf(3, 0.0).is_err());
        assert!(OverlapGrid::new(4).unwrap().index_of(0.3).is_err());
        assert_eq!(OverlapGrid::new(4).unwrap().index_of(0.5).unwrap(), 3);
    }

    #[test]
    fn gaussian_pmf_approximation() {
        let exact = overlap_pmf(100, 0.0).unwrap();
        assert!((overlap_pmf_gaussian(100, 0.0) / exact - 1.0).abs() < 0.02);
        let n = 200;
        let total: f64 = OverlapGrid::new(n).unwrap().values().iter().map(|&m| overlap_pmf_gaussian(n, m)).sum();
        assert!((total - 1.0).abs() < 1.0 / n as f64);
        // fixed m sqrt(N) = 1
        let errs: Vec<f64> = [50usize, 100, 200]
            .iter()
            .map(|&n| {
                let j = ((n as f64 + (n as f64).sqrt()) / 2.0).round() as usize;
                let m = -1.0 + 2.0 * j as f64 / n as f64;
                (overlap_pmf_gaussian(n, m) / overlap_pmf(n, m).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(errs[0] > errs[2], "{errs:?}");
        assert!(gaussian_pmf_max_relative_error(100).unwrap() < 0.1);
    }

    #[test]
    fn tabulation_rows() {
        let rows = tabulate_covariance(6, 3).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0].exact, -1.0);
        assert_eq!(rows[3].exact, 0.0);
    }
}
