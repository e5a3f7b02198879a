//! Univariate distribution core: the generalised Pareto (GP) distribution,
//! the Beta-CDF blending weight, continuity matching between a bulk model
//! and its GP tail, and the blended GP distribution built from them.
//!
//! The blended GP has CDF `H(y) = F(y)` below the matched threshold and
//! `H(y) = F(y)^{1-p(y)} * F_GP(y)^{p(y)}` above it, where `p` is a Beta
//! CDF ramp over the blending interval `[a, b]` spanned by the bulk's
//! `p_a`- and `p_b`-quantiles. The GP threshold and scale are solved so
//! that `F_GP(a) = p_a` and `F_GP(b) = p_b`, which makes `H` continuous,
//! equal to the bulk below `a` and exactly GP above `b`.

use crate::error::{Error, Result};
use crate::special::{beta_pdf, beta_pdf_deriv, reg_inc_beta};

/// Shape values inside `(-XI_EPS, XI_EPS)` take the exponential (`xi = 0`)
/// branch of every GP expression; avoids cancellation in `(1-p)^{-xi}`
/// differences.
pub const XI_EPS: f64 = 1e-7;

/// Default grid cells used when scanning for negative blended density.
pub const PENALTY_GRID: usize = 128;

/// Evaluators a bulk distribution must expose for blending: CDF, density,
/// and quantile on the `[0, 1]`-scaled response support.
pub trait BulkDist {
    fn cdf(&self, y: f64) -> f64;
    fn pdf(&self, y: f64) -> f64;
    fn quantile(&self, tau: f64) -> Result<f64>;
}

/// Generalised Pareto parameters: threshold, scale, shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GpParams {
    pub fn new(threshold: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::invalid(format!(
                "GP scale must be positive, got {scale}"
            )));
        }
        Ok(GpParams {
            threshold,
            scale,
            shape,
        })
    }

    /// Finite upper endpoint `u - sigma/xi` when the shape is negative.
    pub fn upper_endpoint(&self) -> Option<f64> {
        if self.shape < -XI_EPS {
            Some(self.threshold - self.scale / self.shape)
        } else {
            None
        }
    }

    /// Distribution function; 0 below the threshold, 1 above a finite
    /// upper endpoint.
    pub fn cdf(&self, y: f64) -> f64 {
        let z = (y - self.threshold) / self.scale;
        if z <= 0.0 {
            return 0.0;
        }
        if self.shape.abs() < XI_EPS {
            1.0 - (-z).exp()
        } else {
            let arg = 1.0 + self.shape * z;
            if arg <= 0.0 {
                return 1.0; // beyond the upper endpoint (shape < 0)
            }
            1.0 - (-arg.ln() / self.shape).exp()
        }
    }

    /// Density; zero outside the support.
    pub fn pdf(&self, y: f64) -> f64 {
        let z = (y - self.threshold) / self.scale;
        if z < 0.0 {
            return 0.0;
        }
        if self.shape.abs() < XI_EPS {
            (-z).exp() / self.scale
        } else {
            let arg = 1.0 + self.shape * z;
            if arg <= 0.0 {
                return 0.0;
            }
            (-(1.0 + 1.0 / self.shape) * arg.ln()).exp() / self.scale
        }
    }

    /// Log-density; `-inf` outside the support.
    pub fn log_pdf(&self, y: f64) -> f64 {
        let z = (y - self.threshold) / self.scale;
        if z < 0.0 {
            return f64::NEG_INFINITY;
        }
        if self.shape.abs() < XI_EPS {
            -z - self.scale.ln()
        } else {
            let arg = 1.0 + self.shape * z;
            if arg <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -(1.0 + 1.0 / self.shape) * arg.ln() - self.scale.ln()
        }
    }

    /// Quantile function on `[0, 1)`; `tau = 1` is only defined for a
    /// negative shape (finite endpoint).
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau = {tau} outside [0,1]")));
        }
        if tau == 1.0 {
            return self.upper_endpoint().ok_or_else(|| {
                Error::invalid("tau = 1 with non-negative shape has no finite quantile")
            });
        }
        if tau == 0.0 {
            return Ok(self.threshold);
        }
        let s = 1.0 - tau;
        if self.shape.abs() < XI_EPS {
            Ok(self.threshold - self.scale * s.ln())
        } else {
            Ok(self.threshold + self.scale * ((-self.shape * s.ln()).exp() - 1.0) / self.shape)
        }
    }
}

/// Blending hyper-parameters, fixed before training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlendSpec {
    pub p_a: f64,
    pub p_b: f64,
    pub c1: f64,
    pub c2: f64,
}

impl BlendSpec {
    pub fn new(p_a: f64, p_b: f64, c1: f64, c2: f64) -> Result<Self> {
        let spec = BlendSpec { p_a, p_b, c1, c2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_a > 0.0 && self.p_a < self.p_b && self.p_b < 1.0) {
            return Err(Error::invalid(format!(
                "blend levels must satisfy 0 < p_a < p_b < 1, got ({}, {})",
                self.p_a, self.p_b
            )));
        }
        if !(self.c1 > 3.0 && self.c2 > 3.0) {
            return Err(Error::invalid(format!(
                "weight shapes must exceed 3 for a smooth log-density, got ({}, {})",
                self.c1, self.c2
            )));
        }
        if self.c1 < self.c2 {
            log::warn!(
                "c1 ({}) < c2 ({}): more blending weight on the GP than the bulk",
                self.c1,
                self.c2
            );
        }
        Ok(())
    }
}

/// The solved blending geometry: interval ends and the matched GP
/// threshold/scale, all in response units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendGeometry {
    pub a: f64,
    pub b: f64,
    pub u_tilde: f64,
    pub sigma_tilde: f64,
}

impl BlendGeometry {
    /// Beta-CDF blending weight: 0 at or below `a`, 1 at or above `b`.
    pub fn weight(&self, y: f64, spec: &BlendSpec) -> f64 {
        debug_assert!(self.b > self.a);
        let z = (y - self.a) / (self.b - self.a);
        if z <= 0.0 {
            0.0
        } else if z >= 1.0 {
            1.0
        } else {
            reg_inc_beta(z, spec.c1, spec.c2)
        }
    }

    /// Derivative of the blending weight; zero outside `[a, b]`.
    pub fn weight_deriv(&self, y: f64, spec: &BlendSpec) -> f64 {
        debug_assert!(self.b > self.a);
        let z = (y - self.a) / (self.b - self.a);
        beta_pdf(z, spec.c1, spec.c2) / (self.b - self.a)
    }

    /// d/dy of `weight_deriv`; used by gradient code.
    pub(crate) fn weight_deriv2(&self, y: f64, spec: &BlendSpec) -> f64 {
        let w = self.b - self.a;
        let z = (y - self.a) / w;
        beta_pdf_deriv(z, spec.c1, spec.c2) / (w * w)
    }

    /// The matched GP tail.
    pub fn gp(&self, shape: f64) -> GpParams {
        GpParams {
            threshold: self.u_tilde,
            scale: self.sigma_tilde,
            shape,
        }
    }
}

/// Solve the GP scale and threshold so that the GP distribution function
/// passes through `(a, p_a)` and `(b, p_b)`.
pub fn gp_match(a: f64, b: f64, spec: &BlendSpec, xi: f64) -> Result<BlendGeometry> {
    if !(b > a) {
        return Err(Error::invalid(format!(
            "blend interval is degenerate: a = {a}, b = {b}"
        )));
    }
    let la = (1.0 - spec.p_a).ln();
    let lb = (1.0 - spec.p_b).ln();
    let (sigma_tilde, u_tilde) = if xi.abs() < XI_EPS {
        // exponential branch, the xi -> 0 limit of the general case:
        // a - u = -sigma*la and b - u = -sigma*lb
        let denom = lb - la;
        let sigma = (a - b) / denom;
        let u = a - (a - b) * (-la) / denom;
        (sigma, u)
    } else {
        let pow_a = (-xi * la).exp(); // (1 - p_a)^{-xi}
        let pow_b = (-xi * lb).exp();
        let denom = pow_a - pow_b;
        let sigma = xi * (a - b) / denom;
        let u = a - (a - b) * (pow_a - 1.0) / denom;
        (sigma, u)
    };
    debug_assert!(sigma_tilde > 0.0);
    debug_assert!(u_tilde < a);
    Ok(BlendGeometry {
        a,
        b,
        u_tilde,
        sigma_tilde,
    })
}

/// A blended GP distribution over a borrowed bulk model.
#[derive(Debug, Clone)]
pub struct Bgp<'a, B: BulkDist> {
    bulk: &'a B,
    xi: f64,
    spec: BlendSpec,
    geom: BlendGeometry,
}

impl<'a, B: BulkDist> Bgp<'a, B> {
    /// Build the blend for a given bulk and shape: locates `a` and `b` as
    /// bulk quantiles and solves the GP continuity match.
    pub fn new(bulk: &'a B, xi: f64, spec: BlendSpec) -> Result<Self> {
        spec.validate()?;
        let a = bulk.quantile(spec.p_a)?;
        let mut b = bulk.quantile(spec.p_b)?;
        if b <= a {
            // quantile solves that collapsed numerically (p_a ~ p_b)
            b = a + 1e-12 * a.abs().max(1.0);
        }
        let geom = gp_match(a, b, &spec, xi)?;
        Ok(Bgp {
            bulk,
            xi,
            spec,
            geom,
        })
    }

    /// Build from an already solved blending interval.
    pub fn with_interval(bulk: &'a B, xi: f64, spec: BlendSpec, a: f64, b: f64) -> Result<Self> {
        let geom = gp_match(a, b, &spec, xi)?;
        Ok(Bgp {
            bulk,
            xi,
            spec,
            geom,
        })
    }

    pub fn geometry(&self) -> &BlendGeometry {
        &self.geom
    }

    pub fn shape(&self) -> f64 {
        self.xi
    }

    pub fn spec(&self) -> &BlendSpec {
        &self.spec
    }

    fn gp(&self) -> GpParams {
        self.geom.gp(self.xi)
    }

    /// Blended distribution function.
    pub fn cdf(&self, y: f64) -> f64 {
        // p(y) = 0 for y <= a, so the bulk branch covers y <= u_tilde too
        if y <= self.geom.a {
            return self.bulk.cdf(y);
        }
        if y >= self.geom.b {
            return self.gp().cdf(y);
        }
        let p = self.geom.weight(y, &self.spec);
        let f = self.bulk.cdf(y);
        let fgp = self.gp().cdf(y);
        ((1.0 - p) * f.ln() + p * fgp.ln()).exp()
    }

    /// Blended density. Inside the blending interval this is the
    /// closed-form product of `H` and the mixing bracket; it can be
    /// negative there for pathological parameterizations, which callers
    /// detect via [`Bgp::validity_penalty`].
    pub fn pdf(&self, y: f64) -> f64 {
        if y <= self.geom.a {
            return self.bulk.pdf(y);
        }
        if y >= self.geom.b {
            return self.gp().pdf(y);
        }
        let (ln_h, bracket) = self.blend_parts_log(y);
        ln_h.exp() * bracket
    }

    /// Log of the blended density, computed in log space; NaN when the
    /// density is negative, `-inf` when it is zero.
    pub fn log_pdf(&self, y: f64) -> f64 {
        if y <= self.geom.a {
            return self.bulk.pdf(y).ln();
        }
        if y >= self.geom.b {
            return self.gp().log_pdf(y);
        }
        let (ln_h, bracket) = self.blend_parts_log(y);
        ln_h + bracket.ln()
    }

    fn blend_parts_log(&self, y: f64) -> (f64, f64) {
        let gp = self.gp();
        let f = self.bulk.cdf(y);
        let fd = self.bulk.pdf(y);
        let fgp = gp.cdf(y);
        let fgpd = gp.pdf(y);
        let p = self.geom.weight(y, &self.spec);
        let pd = self.geom.weight_deriv(y, &self.spec);
        let ln_f = f.ln();
        let ln_fgp = fgp.ln();
        let ln_h = (1.0 - p) * ln_f + p * ln_fgp;
        let bracket = pd * (ln_fgp - ln_f) + p * fgpd / fgp + (1.0 - p) * fd / f;
        (ln_h, bracket)
    }

    /// Quantile function: bulk quantile below `p_a`, closed-form GP
    /// quantile above `p_b`, bisection on the blended CDF in between.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if tau == 1.0 {
            return self.gp().quantile(1.0);
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau = {tau} outside [0,1]")));
        }
        if tau <= self.spec.p_a {
            return self.bulk.quantile(tau);
        }
        if tau >= self.spec.p_b {
            return self.gp().quantile(tau);
        }
        const TOL: f64 = 1e-10;
        let mut lo = self.geom.a;
        let mut hi = self.geom.b;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let h = self.cdf(mid);
            if (h - tau).abs() <= TOL {
                return Ok(mid);
            }
            if h < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // continuous monotone H reaches the tolerance long before the
        // iteration cap; hitting it signals an invalid (non-monotone) blend
        let mid = 0.5 * (lo + hi);
        if (self.cdf(mid) - tau).abs() <= 1e-8 {
            Ok(mid)
        } else {
            Err(Error::Numerical(format!(
                "blended quantile bisection did not converge at tau = {tau}"
            )))
        }
    }

    /// Approximate integral of the negative part of the blended density
    /// over the blending interval, on a fixed even grid of `grid_size`
    /// cells spanning `[0, 1]` restricted to `[a - cell, b + cell]`.
    /// Zero exactly when the density is non-negative on the grid.
    pub fn validity_penalty(&self, grid_size: usize) -> f64 {
        assert!(grid_size >= 16, "penalty grid must have at least 16 cells");
        let dy = 1.0 / grid_size as f64;
        let lo = self.geom.a - dy;
        let hi = self.geom.b + dy;
        let mut acc = 0.0;
        for j in 0..grid_size {
            let y = (j as f64 + 0.5) * dy;
            if y < lo || y > hi {
                continue;
            }
            let h = self.pdf(y);
            if h < 0.0 {
                acc -= h;
            }
        }
        acc * dy
    }
}
