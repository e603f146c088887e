//! Limiting constants: the REM-type bound `beta_p`, the CLT variances and the
//! second-order constants `mu`, `sigma^2` obtained from Gaussian moments of
//! Hermite polynomials.

use num_bigint::BigInt;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::Serialize;

use crate::covariance::{hermite, MomentPolynomial, MAX_DEGREE};
use crate::error::{invalid, PspinError, Result};
use crate::numeric::CompensatedSum;

const LN_2: f64 = std::f64::consts::LN_2;

/// `sqrt(2 ln 2)`, the REM critical temperature.
pub fn rem_beta() -> f64 {
    (2.0 * LN_2).sqrt()
}

/// `phi(m) = (1-m)/2 ln(1-m) + (1+m)/2 ln(1+m)`, continuous at `m = +-1`.
pub fn phi(m: f64) -> Result<f64> {
    if !(m.abs() <= 1.0) {
        return Err(PspinError::Domain(format!("phi needs |m| <= 1, got {m}")));
    }
    let half = |t: f64, l: f64| if t == 0.0 { 0.0 } else { t / 2.0 * l };
    Ok(half(1.0 - m, (-m).ln_1p()) + half(1.0 + m, m.ln_1p()))
}

/// `g(m) = (1 + m^-p) phi(m)` on `(0, 1]`.
pub fn g_objective(p: usize, m: f64) -> Result<f64> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(PspinError::Domain(format!("g needs 0 < m <= 1, got {m}")));
    }
    let ph = phi(m)?;
    if ph == 0.0 {
        return Ok(0.0);
    }
    Ok(ph + (ph.ln() - p as f64 * m.ln()).exp())
}

/// `2 ln 2 - g(1 - eps)` evaluated without cancellation near `eps = 0`.
/// `-inf` where `m^-p` overflows.
fn deficit(p: usize, eps: f64) -> f64 {
    let h = eps / 2.0;
    // ln 2 - phi(1 - eps)
    let psi = -h * h.ln() - (1.0 - h) * (-h).ln_1p();
    // m^-p - 1
    let w = (-(p as f64) * (-eps).ln_1p()).exp_m1();
    if !w.is_finite() {
        return f64::NEG_INFINITY;
    }
    psi * (2.0 + w) - w * LN_2
}

/// Minimiser of `g` for one `p`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BetaPSolution {
    pub p: usize,
    pub beta: f64,
    /// `1 - m*`; `m*` itself rounds to 1 for large `p`.
    pub one_minus_m: f64,
    /// `2 ln 2 - g(m*)`
    pub deficit: f64,
}

impl BetaPSolution {
    pub fn m_star(&self) -> f64 {
        1.0 - self.one_minus_m
    }
}

const GRID_POINTS: usize = 10_000;
// search over u = ln(1 - m)
const U_LO: f64 = -690.0;
const U_HI: f64 = -1e-6;

/// `beta_p = sqrt(inf_{0<m<1} g(m))`; `beta_2 = 1` by convention.
pub fn beta_p(p: usize, tol: f64) -> Result<f64> {
    Ok(beta_p_solution(p, tol)?.beta)
}

/// Full search result. The minimum is bracketed by a 10^4-point scan in
/// `u = ln(1 - m)`, refined by golden section to `|du| < tol`, and then
/// certified against the scan and against `tol`-spaced neighbours in `m`.
pub fn beta_p_solution(p: usize, tol: f64) -> Result<BetaPSolution> {
    if p < 2 {
        return Err(invalid(format!("beta_p needs p >= 2, got {p}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(invalid(format!("tol must be positive, got {tol}")));
    }
    if p == 2 {
        return Ok(BetaPSolution { p, beta: 1.0, one_minus_m: f64::NAN, deficit: 2.0 * LN_2 - 1.0 });
    }
    // maximise the deficit = minimise g
    let f = |u: f64| deficit(p, u.exp());
    let step = (U_HI - U_LO) / (GRID_POINTS - 1) as f64;
    let grid_u = |i: usize| U_LO + step * i as f64;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..GRID_POINTS {
        let v = f(grid_u(i));
        // strict comparison keeps the first (smallest u, largest m) on ties
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best_i == 0 || best_i == GRID_POINTS - 1 || best <= 0.0 {
        return Err(PspinError::Numerical(format!("no interior minimum of g bracketed for p={p}")));
    }
    let (mut a, mut b) = (grid_u(best_i - 1), grid_u(best_i + 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let width = tol.min(1e-9);
    while b - a > width * (1.0 + a.abs().min(1.0)) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (u_star, dl) = if fc >= fd { (c, fc) } else { (d, fd) };
    if dl < best {
        return Err(PspinError::Numerical(format!("refinement lost to the grid scan for p={p}")));
    }
    let eps = u_star.exp();
    // local-minimum certificate on a tol-spaced grid in m; g(1) = 2 ln 2 sits at deficit 0
    let left = deficit(p, eps + tol);
    let right = if eps > tol { deficit(p, eps - tol) } else { 0.0 };
    let slack = 1e-15;
    if left > dl + slack || right > dl + slack {
        return Err(PspinError::Numerical(format!("local-minimum certificate failed for p={p}")));
    }
    let s = rem_beta();
    let beta = s - dl / (s + (s * s - dl).sqrt());
    Ok(BetaPSolution { p, beta, one_minus_m: eps, deficit: dl })
}

/// `n!` exactly for `n <= 20`.
pub fn factorial_exact(n: usize) -> Result<u64> {
    if n > 20 {
        return Err(invalid(format!("{n}! exceeds 64-bit exact range")));
    }
    Ok((1..=n as u64).product())
}

fn factorial_f64(n: usize) -> f64 {
    match factorial_exact(n) {
        Ok(v) => v as f64,
        Err(_) => statrs::function::factorial::factorial(n as u64),
    }
}

/// `beta^4 p! / 2`.
pub fn clt_variance(beta: f64, p: usize) -> f64 {
    beta.powi(4) * factorial_f64(p) / 2.0
}

/// Exact finite-N variance `beta^4 N^p / (2 binom(N,p))` of `N^{p/2}(J_N - beta^2/2)`.
pub fn finite_n_j_variance(beta: f64, n: usize, p: usize) -> Result<f64> {
    let b = crate::covariance::coupling_count(n, p)? as f64;
    Ok(beta.powi(4) * (n as f64).powi(p as i32) / (2.0 * b))
}

fn check_moment_order(poly: &MomentPolynomial, r: u32) -> Result<()> {
    if !(1..=4).contains(&r) {
        return Err(invalid(format!("moment order {r} outside 1..=4")));
    }
    if poly.degree() * r as usize > MAX_DEGREE {
        return Err(invalid(format!("degree {} x {r} exceeds {MAX_DEGREE}", poly.degree())));
    }
    Ok(())
}

/// `E[poly(X)^r]` for standard normal `X` from `E[X^{2m}] = (2m-1)!!`.
/// Integer polynomials are expanded in big-integer arithmetic, so the result is
/// the correctly rounded exact moment.
pub fn gaussian_moment(poly: &MomentPolynomial, r: u32) -> Result<f64> {
    check_moment_order(poly, r)?;
    let integral = poly.coefficients().iter().all(|c| c.fract() == 0.0);
    if integral {
        let coeffs: Vec<BigInt> = poly.coefficients().iter().map(|&c| BigInt::from_f64(c).expect("finite")).collect();
        let mut acc = vec![BigInt::from(1)];
        for _ in 0..r {
            let mut next = vec![BigInt::zero(); acc.len() + coeffs.len() - 1];
            for (i, a) in acc.iter().enumerate() {
                for (j, c) in coeffs.iter().enumerate() {
                    next[i + j] += a * c;
                }
            }
            acc = next;
        }
        let mut total = BigInt::zero();
        let mut dfact = BigInt::from(1);
        for (j, c) in acc.iter().enumerate().step_by(2) {
            if j >= 2 {
                dfact *= j - 1;
            }
            total += c * &dfact;
        }
        return Ok(total.to_f64().expect("finite"));
    }
    let powered = poly.pow(r)?;
    let mut sum = CompensatedSum::new();
    let mut dfact = 1.0;
    for (j, &c) in powered.coefficients().iter().enumerate().step_by(2) {
        if j >= 2 {
            dfact *= (j - 1) as f64;
        }
        sum.add(c * dfact);
    }
    Ok(sum.value())
}

/// Gauss-Hermite rule for the standard normal weight: `(nodes, weights)`,
/// weights summing to 1, exact for polynomials of degree `2n - 1`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature needs at least one node"));
    }
    // roots of the physicists' H_n with orthonormal recurrence, then x = sqrt(2) z
    let mut z_nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * z_nodes[0],
            3 => 1.91 * z - 0.91 * z_nodes[1],
            _ => 2.0 * z - z_nodes[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * (1.0 + z.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PspinError::Numerical(format!("Hermite root {i} of {n} did not converge")));
        }
        z_nodes[i] = z;
        z_nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    let norm = std::f64::consts::PI.sqrt();
    let nodes = z_nodes.iter().map(|z| z * std::f64::consts::SQRT_2).collect();
    Ok((nodes, weights.iter().map(|w| w / norm).collect()))
}

/// Quadrature node count used for `r <= 4` powers of a degree-`degree` polynomial.
pub fn quadrature_nodes(degree: usize) -> usize {
    (4 * degree + 1).div_ceil(2).max(1)
}

/// `E[poly(X)^r]` by Gauss-Hermite quadrature.
pub fn gaussian_moment_quadrature(poly: &MomentPolynomial, r: u32) -> Result<f64> {
    check_moment_order(poly, r)?;
    let (nodes, weights) = gauss_hermite(quadrature_nodes(poly.degree()))?;
    let mut sum = CompensatedSum::new();
    for (&x, &w) in nodes.iter().zip(&weights) {
        sum.add(w * poly.eval(x).powi(r as i32));
    }
    Ok(sum.value())
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Constants of the second-order fluctuation theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstants {
    pub clt_variance: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub a_exponent: f64,
    pub alpha_exponent: f64,
}

/// Agreement demanded between the symbolic and quadrature moment paths.
pub const MOMENT_PATH_TOLERANCE: f64 = 1e-9;
/// Agreement demanded between the moment and integral forms of odd-p `sigma^2`.
pub const INTEGRAL_FORM_TOLERANCE: f64 = 1e-8;

/// `beta`-free part of `sigma^2`: `E[He_p^3]/3` (even p) or `E[He_p^4]/12 - p!^2/8` (odd p).
pub fn sigma2_unit(p: usize) -> Result<f64> {
    let h = hermite(p)?;
    let r = if p % 2 == 0 { 3 } else { 4 };
    let symbolic = gaussian_moment(&h, r)?;
    let quad = gaussian_moment_quadrature(&h, r)?;
    if relative_gap(symbolic, quad) > MOMENT_PATH_TOLERANCE {
        return Err(PspinError::Numerical(format!(
            "moment paths disagree for p={p}: symbolic {symbolic}, quadrature {quad}"
        )));
    }
    Ok(if p % 2 == 0 {
        symbolic / 3.0
    } else {
        let f = factorial_f64(p);
        symbolic / 12.0 - f * f / 8.0
    })
}

/// Odd-p `sigma^2` from the integral `(1/(12 sqrt(2 pi))) int He_p^4 e^{-m^2/2} dm - p!^2/8`,
/// by the trapezoid rule (spectrally accurate for Gaussian-decaying integrands).
pub fn sigma2_integral_form(beta: f64, p: usize) -> Result<f64> {
    if p % 2 == 0 || p < 3 {
        return Err(invalid(format!("integral form is for odd p >= 3, got {p}")));
    }
    let h = hermite(p)?;
    let half_width = 12.0 + 2.0 * (4.0 * p as f64).sqrt();
    let steps = 8192usize;
    let dx = 2.0 * half_width / steps as f64;
    let mut sum = CompensatedSum::new();
    for i in 0..=steps {
        let x = -half_width + dx * i as f64;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        sum.add(w * h.eval(x).powi(4) * (-x * x / 2.0).exp());
    }
    let integral = sum.value() * dx / (2.0 * std::f64::consts::PI).sqrt();
    let f = factorial_f64(p);
    Ok(beta.powi(8) * (integral / 12.0 - f * f / 8.0))
}

/// `mu`, `sigma^2` and the scaling exponents, with both moment paths cross-checked
/// and, for odd `p`, the integral form as a third route.
pub fn limit_constants(beta: f64, p: usize) -> Result<LimitConstants> {
    if p < 3 {
        return Err(invalid(format!("limit constants need p >= 3, got {p}")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta={beta} must be finite and >= 0")));
    }
    let unit = sigma2_unit(p)?;
    let even = p % 2 == 0;
    let (sigma2, mu, a_exponent) = if even {
        (beta.powi(6) * unit, 0.0, 3.0 * p as f64 / 4.0 - 0.5)
    } else {
        let sigma2 = beta.powi(8) * unit;
        let integral = sigma2_integral_form(beta, p)?;
        if relative_gap(sigma2, integral) > INTEGRAL_FORM_TOLERANCE {
            return Err(PspinError::Numerical(format!(
                "odd-p sigma^2 forms disagree for p={p}: {sigma2} vs {integral}"
            )));
        }
        (sigma2, -beta.powi(4) * factorial_f64(p) / 4.0, p as f64 - 1.0)
    };
    Ok(LimitConstants {
        clt_variance: clt_variance(beta, p),
        mu,
        sigma2,
        a_exponent,
        alpha_exponent: a_exponent - 1.0,
    })
}
