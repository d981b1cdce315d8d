//! Closed-form Gaussian machinery behind the reduced-complexity trainer.
//!
//! A transition probability between quantizer cells is a double integral of
//! a separable two-dimensional Gaussian over a rectangle: with `alpha` the
//! predictor value and `out` the next sample,
//!
//! ```text
//! f(alpha, out) = f_G(alpha, predictor_std) * f_G(out - alpha, noise_std)
//! ```
//!
//! integrated over `[alpha_lo, alpha_hi] x [out_lo, out_hi]`.  This module
//! provides the one-point midpoint approximation `Psi` of that integral, a
//! rigorous bound on its error that shrinks cubically with the cell widths,
//! a high-resolution composite-midpoint oracle used as the reference value
//! throughout the test suite, and the constant `kappa` relating a target
//! cell's entry to a standard cell's entry.

use crate::error::{Error, Result};

/// Gaussian density `f_G(x, sigma) = exp(-x^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)`.
pub fn gauss_pdf(x: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let z = x / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// The separable Gaussian kernel `f(alpha, w) = f_G(alpha, predictor_std) * f_G(w, noise_std)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussKernelSpec {
    pub predictor_std: f64,
    pub noise_std: f64,
}

impl GaussKernelSpec {
    pub fn new(predictor_std: f64, noise_std: f64) -> Result<Self> {
        if !(predictor_std > 0.0 && noise_std > 0.0) {
            return Err(Error::InvalidModel(format!(
                "kernel stds must be strictly positive (got {predictor_std}, {noise_std})"
            )));
        }
        Ok(Self { predictor_std, noise_std })
    }

    /// Joint density as a function of `(alpha, out)` after substituting
    /// `w = out - alpha`.
    pub fn density(&self, alpha: f64, out: f64) -> f64 {
        gauss_pdf(alpha, self.predictor_std) * gauss_pdf(out - alpha, self.noise_std)
    }

    /// `d^2 f / d out^2` at `(alpha, out)`.
    fn d2_out(&self, alpha: f64, out: f64) -> f64 {
        gauss_pdf(alpha, self.predictor_std) * gauss_d2(out - alpha, self.noise_std)
    }

    /// `d^2 f / d alpha^2` at `(alpha, out)` (holding `out` fixed).
    fn d2_alpha(&self, alpha: f64, out: f64) -> f64 {
        let w = out - alpha;
        let (s1, s2) = (self.predictor_std, self.noise_std);
        gauss_d2(alpha, s1) * gauss_pdf(w, s2) - 2.0 * gauss_d1(alpha, s1) * gauss_d1(w, s2)
            + gauss_pdf(alpha, s1) * gauss_d2(w, s2)
    }
}

fn gauss_d1(x: f64, sigma: f64) -> f64 {
    -x / (sigma * sigma) * gauss_pdf(x, sigma)
}

fn gauss_d2(x: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (x * x / (s2 * s2) - 1.0 / s2) * gauss_pdf(x, sigma)
}

/// An axis-aligned rectangle `[alpha_lo, alpha_hi] x [out_lo, out_hi]`.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub out_lo: f64,
    pub out_hi: f64,
}

impl Rect {
    pub fn new(alpha_lo: f64, alpha_hi: f64, out_lo: f64, out_hi: f64) -> Result<Self> {
        let ok = alpha_lo.is_finite()
            && alpha_hi.is_finite()
            && out_lo.is_finite()
            && out_hi.is_finite()
            && alpha_lo < alpha_hi
            && out_lo < out_hi;
        if !ok {
            return Err(Error::InvalidModel(format!(
                "invalid rectangle [{alpha_lo}, {alpha_hi}] x [{out_lo}, {out_hi}]"
            )));
        }
        Ok(Self { alpha_lo, alpha_hi, out_lo, out_hi })
    }

    pub fn alpha_mid(&self) -> f64 {
        0.5 * (self.alpha_lo + self.alpha_hi)
    }

    pub fn out_mid(&self) -> f64 {
        0.5 * (self.out_lo + self.out_hi)
    }

    pub fn alpha_width(&self) -> f64 {
        self.alpha_hi - self.alpha_lo
    }

    pub fn out_width(&self) -> f64 {
        self.out_hi - self.out_lo
    }

    pub fn area(&self) -> f64 {
        self.alpha_width() * self.out_width()
    }
}

/// One-point midpoint rule for an arbitrary integrand on a rectangle:
/// `area * f(mid_alpha, mid_out)`.
pub fn midpoint_rule<F: Fn(f64, f64) -> f64>(f: F, rect: &Rect) -> f64 {
    rect.area() * f(rect.alpha_mid(), rect.out_mid())
}

/// Midpoint approximation `Psi` of the Gaussian cell integral.
pub fn midpoint_psi(kernel: &GaussKernelSpec, rect: &Rect) -> f64 {
    midpoint_rule(|a, o| kernel.density(a, o), rect)
}

/// Midpoint error bound from user-supplied second-derivative maxima:
///
/// `(dA^3 dO / 24) * max|d2f/dalpha2| + (dA dO^3 / 24) * max|d2f/dout2|`.
pub fn midpoint_error_bound_from_maxima(rect: &Rect, max_d2_alpha: f64, max_d2_out: f64) -> f64 {
    let da = rect.alpha_width();
    let do_ = rect.out_width();
    da.powi(3) * do_ / 24.0 * max_d2_alpha + da * do_.powi(3) / 24.0 * max_d2_out
}

/// Rigorous midpoint error bound for the Gaussian kernel on `rect`.
///
/// The second-derivative maxima are taken over a 64x64 sample lattice
/// augmented with the analytic critical lines of the Gaussian second
/// derivative (`x = 0` and `|x| = sqrt(3) sigma`, projected into the
/// rectangle along both the `alpha` and `w = out - alpha` coordinates).
pub fn midpoint_error_bound(kernel: &GaussKernelSpec, rect: &Rect) -> f64 {
    const GRID: usize = 64;
    let mut alphas = Vec::with_capacity(GRID + 4);
    for i in 0..=GRID {
        alphas.push(rect.alpha_lo + rect.alpha_width() * i as f64 / GRID as f64);
    }
    let s3 = 3.0f64.sqrt();
    for c in [0.0, s3 * kernel.predictor_std, -s3 * kernel.predictor_std] {
        if c > rect.alpha_lo && c < rect.alpha_hi {
            alphas.push(c);
        }
    }
    let w_crit = [0.0, s3 * kernel.noise_std, -s3 * kernel.noise_std];
    let mut max_a = 0.0f64;
    let mut max_o = 0.0f64;
    for &a in &alphas {
        for i in 0..=GRID {
            let o = rect.out_lo + rect.out_width() * i as f64 / GRID as f64;
            max_a = max_a.max(kernel.d2_alpha(a, o).abs());
            max_o = max_o.max(kernel.d2_out(a, o).abs());
        }
        for &wc in &w_crit {
            let o = a + wc;
            if o > rect.out_lo && o < rect.out_hi {
                max_a = max_a.max(kernel.d2_alpha(a, o).abs());
                max_o = max_o.max(kernel.d2_out(a, o).abs());
            }
        }
    }
    midpoint_error_bound_from_maxima(rect, max_a, max_o)
}

/// High-resolution composite midpoint rule on a `subdivisions x subdivisions`
/// grid: the reference ("oracle") value for every derived quantity in the
/// test suite.
///
/// The inner dimension walks the Gaussian with the multiplicative recurrence
/// `exp(-(w+d)^2/2q^2) = exp(-w^2/2q^2) * r`, `r` itself geometric, starting
/// from the sample nearest `w = 0` so no step underflows before the peak.
/// This keeps the cost at two multiplies per cell instead of one `exp`.
pub fn oracle_integral(kernel: &GaussKernelSpec, rect: &Rect, subdivisions: usize) -> f64 {
    assert!(subdivisions >= 256, "oracle_integral needs at least 256 subdivisions");
    let s = subdivisions;
    let da = rect.alpha_width() / s as f64;
    let do_ = rect.out_width() / s as f64;
    let q = kernel.noise_std;
    let inv2q2 = 1.0 / (2.0 * q * q);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * q);
    let mut total = 0.0;
    for i in 0..s {
        let alpha = rect.alpha_lo + (i as f64 + 0.5) * da;
        let g1 = gauss_pdf(alpha, kernel.predictor_std);
        if g1 == 0.0 {
            continue;
        }
        // index of the w-sample closest to zero, clamped into range
        let j_star_f = ((alpha - rect.out_lo) / do_ - 0.5).round();
        let j_star = j_star_f.clamp(0.0, (s - 1) as f64) as usize;
        let w_star = rect.out_lo + (j_star as f64 + 0.5) * do_ - alpha;
        let e_star = (-w_star * w_star * inv2q2).exp();

        let mut row = e_star;
        // upward sweep: w increasing by do_
        let mut e = e_star;
        let mut r = (-(2.0 * w_star * do_ + do_ * do_) * inv2q2).exp();
        let r_mult = (-(do_ * do_) * 2.0 * inv2q2).exp();
        for _ in j_star + 1..s {
            e *= r;
            r *= r_mult;
            row += e;
        }
        // downward sweep: w decreasing by do_
        let mut e = e_star;
        let mut r = (-(-2.0 * w_star * do_ + do_ * do_) * inv2q2).exp();
        let mut j = j_star;
        while j > 0 {
            e *= r;
            r *= r_mult;
            row += e;
            j -= 1;
        }
        total += g1 * row;
    }
    total * norm * da * do_
}

/// Constant ratio between a target and a standard cell entry:
/// `(area_t * f_G(mu_t, predictor_std)) / (area_s * f_G(mu_s, predictor_std))`
/// with `mu` the alpha-midpoint of each rectangle.
pub fn kappa(kernel: &GaussKernelSpec, target: &Rect, standard: &Rect) -> f64 {
    let num = target.area() * gauss_pdf(target.alpha_mid(), kernel.predictor_std);
    let den = standard.area() * gauss_pdf(standard.alpha_mid(), kernel.predictor_std);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn kernel(s1: f64, s2: f64) -> GaussKernelSpec {
        GaussKernelSpec::new(s1, s2).unwrap()
    }

    fn random_rect(stream: &mut GaussianStream, k: &GaussKernelSpec) -> Rect {
        let sp = k.predictor_std;
        let c_a = 2.0 * sp * (stream.next_uniform() - 0.5) * 2.0;
        let c_o = 2.0 * sp * (stream.next_uniform() - 0.5) * 2.0;
        let wa = 0.05 * sp + 1.5 * sp * stream.next_uniform();
        let wo = 0.05 * sp + 1.5 * sp * stream.next_uniform();
        Rect::new(c_a - wa / 2.0, c_a + wa / 2.0, c_o - wo / 2.0, c_o + wo / 2.0).unwrap()
    }

    #[test]
    fn gauss_pdf_values() {
        assert!((gauss_pdf(0.0, 1.0) - 0.3989422804014327).abs() < 1e-16);
        for sigma in [0.3, 1.0, 2.5] {
            let want = gauss_pdf(0.0, sigma) * (-0.5f64).exp();
            assert!((gauss_pdf(sigma, sigma) - want).abs() < 1e-16);
        }
        let mut s = GaussianStream::new(1);
        for _ in 0..50 {
            let x = 3.0 * s.next_gaussian();
            assert_eq!(gauss_pdf(x, 1.3), gauss_pdf(-x, 1.3));
        }
    }

    #[test]
    fn psi_product_at_origin() {
        // unit-std kernel on [-0.5, 0.5]^2: Psi = f(0, 0) = 1 / (2 pi)
        let k = kernel(1.0, 1.0);
        let r = Rect::new(-0.5, 0.5, -0.5, 0.5).unwrap();
        let want = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((midpoint_psi(&k, &r) - want).abs() < 1e-15);
    }

    #[test]
    fn psi_centered_rect_hits_noise_peak() {
        // out_mid == alpha_mid makes the noise factor f_G(0, q)
        let k = kernel(0.7, 0.2);
        let r = Rect::new(0.2, 0.6, 0.1, 0.7).unwrap();
        let want = r.area() * gauss_pdf(0.4, 0.7) * gauss_pdf(0.0, 0.2);
        assert!((midpoint_psi(&k, &r) - want).abs() < 1e-15);
    }

    #[test]
    fn polynomial_case_attains_lemma_bound() {
        // f(x, y) = x^2 on [0,1]^2: integral 1/3, Psi 1/4, bound (1/24)*2 = 1/12
        let rect = Rect::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let psi = midpoint_rule(|x, _| x * x, &rect);
        assert!((psi - 0.25).abs() < 1e-15);
        let bound = midpoint_error_bound_from_maxima(&rect, 2.0, 0.0);
        assert!((bound - 1.0 / 12.0).abs() < 1e-15);
        let exact = 1.0 / 3.0;
        assert!(((exact - psi).abs() - bound).abs() < 1e-15, "bound attained exactly");
    }

    #[test]
    fn bound_shrinks_cubically() {
        let k = kernel(1.0, 0.5);
        let mut prev = f64::INFINITY;
        for halvings in 0..5 {
            let w = 0.4 / 2f64.powi(halvings);
            let r = Rect::new(0.3, 0.3 + w, -0.1, -0.1 + w).unwrap();
            let b = midpoint_error_bound(&k, &r);
            assert!(b < prev);
            prev = b;
        }
        // total shrink across 4 halvings of both sides ~ (1/16)^4
        let w = 0.4 / 16.0;
        let r_small = Rect::new(0.3, 0.3 + w, -0.1, -0.1 + w).unwrap();
        let r_big = Rect::new(0.3, 0.7, -0.1, 0.3).unwrap();
        let ratio = midpoint_error_bound(&k, &r_small) / midpoint_error_bound(&k, &r_big);
        assert!(ratio < 1.0 / 16f64.powi(3), "ratio {ratio}");
    }

    #[test]
    fn oracle_whole_plane_normalizes() {
        let k = kernel(1.0, 0.5);
        let reach = 8.0 * (1.0 + 0.5);
        let r = Rect::new(-reach, reach, -reach, reach).unwrap();
        let v = oracle_integral(&k, &r, 2048);
        assert!((v - 1.0).abs() < 1e-6, "total probability {v}");
    }

    #[test]
    fn oracle_subdivision_plateau() {
        let k = kernel(1.0, 1.0);
        let r = Rect::new(0.1, 0.3, -0.15, 0.05).unwrap();
        let a = oracle_integral(&k, &r, 2048);
        let b = oracle_integral(&k, &r, 4096);
        assert!((a - b).abs() < 1e-10, "plateau gap {}", (a - b).abs());
    }

    #[test]
    fn oracle_matches_one_dimensional_cdf_convolution() {
        // P(alpha in [a,b], alpha + w in [c,d]) via a fine 1-D quadrature of
        // f_G(alpha) * (Phi((d - alpha)/q) - Phi((c - alpha)/q))
        let k = kernel(0.9, 0.35);
        let r = Rect::new(-0.4, 0.7, -0.2, 0.5).unwrap();
        let steps = 200_000;
        let da = r.alpha_width() / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let a = r.alpha_lo + (i as f64 + 0.5) * da;
            let tail = normal_cdf((r.out_hi - a) / k.noise_std)
                - normal_cdf((r.out_lo - a) / k.noise_std);
            acc += gauss_pdf(a, k.predictor_std) * tail;
        }
        acc *= da;
        let oracle = oracle_integral(&k, &r, 4096);
        assert!((acc - oracle).abs() < 1e-8, "cdf {acc} vs oracle {oracle}");
    }

    #[test]
    fn oracle_is_additive_over_partitions() {
        let k = kernel(1.1, 0.4);
        let whole = Rect::new(-0.8, 0.8, -0.5, 0.9).unwrap();
        let mid_a = 0.1;
        let mid_o = 0.3;
        let parts = [
            Rect::new(-0.8, mid_a, -0.5, mid_o).unwrap(),
            Rect::new(-0.8, mid_a, mid_o, 0.9).unwrap(),
            Rect::new(mid_a, 0.8, -0.5, mid_o).unwrap(),
            Rect::new(mid_a, 0.8, mid_o, 0.9).unwrap(),
        ];
        let sum: f64 = parts.iter().map(|p| oracle_integral(&k, p, 1024)).sum();
        let whole_v = oracle_integral(&k, &whole, 2048);
        assert!((sum - whole_v).abs() < 1e-9, "additivity gap {}", (sum - whole_v).abs());
    }

    #[test]
    fn psi_within_bound_on_random_rectangles() {
        let mut stream = GaussianStream::new(202);
        for _ in 0..100 {
            let k = kernel(0.4 + 2.0 * stream.next_uniform(), 0.15 + stream.next_uniform());
            let r = random_rect(&mut stream, &k);
            let psi = midpoint_psi(&k, &r);
            let oracle = oracle_integral(&k, &r, 1024);
            let bound = midpoint_error_bound(&k, &r);
            assert!(
                (psi - oracle).abs() <= bound,
                "psi {psi} oracle {oracle} bound {bound} rect {r:?}"
            );
        }
    }

    #[test]
    fn kappa_identities() {
        let k = kernel(1.0, 0.3);
        let s = Rect::new(0.1, 0.4, -0.3, 0.2).unwrap();
        assert_eq!(kappa(&k, &s, &s), 1.0);
        // equal-area rect with mirrored alpha midpoint: Gaussian symmetry
        let t_mirror = Rect::new(-0.4, -0.1, -0.3, 0.2).unwrap();
        assert!((kappa(&k, &t_mirror, &s) - 1.0).abs() < 1e-12);
        // reciprocal property
        let u = Rect::new(0.5, 1.2, 0.0, 0.4).unwrap();
        let prod = kappa(&k, &u, &s) * kappa(&k, &s, &u);
        assert!((prod - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_shift_identity_refines_with_h() {
        // Target column displaced by a fixed, h-incommensurate offset: the
        // residual of  psi_target(row i) = kappa * psi_standard(row i - g)
        // drops monotonically toward zero as the cell width shrinks.
        // (offset mod h = 0.175, 0.075, 0.025 across the three widths)
        let k = kernel(1.0, 0.4);
        let offset = 0.175;
        let row_lo = 0.31;
        let mut prev = f64::INFINITY;
        for &h in &[0.2, 0.1, 0.05] {
            let s = Rect::new(0.0, h, row_lo, row_lo + h).unwrap();
            let t = Rect::new(offset, offset + h, row_lo, row_lo + h).unwrap();
            let g = ((t.alpha_mid() - s.alpha_mid()) / h).floor();
            let shifted_row = Rect::new(0.0, h, row_lo - g * h, row_lo - g * h + h).unwrap();
            let lhs = midpoint_psi(&k, &t);
            let rhs = kappa(&k, &t, &s) * midpoint_psi(&k, &shifted_row);
            let resid = (lhs - rhs).abs() / lhs.max(1e-300);
            assert!(resid < prev, "residual {resid} not below {prev} at h={h}");
            prev = resid;
        }
    }
}
