//! Parametric model space.
//!
//! The coefficient functions (growth `g`, diffusion `sigma2`, jump rate `p`,
//! reservoir rate `lambda`, lysis rate `r`), the jump-size laws (parasite
//! jumps and the two reinfection dose laws) and the fragmentation law at
//! division are drawn from closed sets of parametric families. This keeps the
//! structural existence/uniqueness conditions checkable by construction and
//! gives closed-form moments wherever the downstream functionals need them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::quad::{self, QuadError};
use crate::rng::DriverStream;

/// Which coefficient a [`FunctionSpec`] plays in the model. Each role carries
/// its own structural constraints, enforced by [`validate_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    GrowthG,
    DiffusionSigma2,
    JumpRateP,
    ReservoirRateLambda,
    LysisRateR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionFamily {
    /// `f(x) = c`; params `[c]`.
    Constant,
    /// `f(x) = c x`; params `[c]`.
    Linear,
    /// `f(x) = c0 + c1 x`; params `[c0, c1]`.
    Affine,
    /// `f(x) = a x (1 - x/K)`; params `[a, K]`.
    Logistic,
    /// `f(x) = c x^gamma`; params `[c, gamma]`, `gamma > 0`.
    Power,
    /// `f(x) = r0 x / (h + x)`; params `[r0, h]`, `h > 0`.
    SaturatingHill,
    /// Piecewise-linear interpolation through knots; params
    /// `[x0, y0, x1, y1, ...]` with strictly increasing `x_i`; constant
    /// continuation outside the knot range.
    PiecewiseLinear,
    /// `f(x) = c x (1 + ln(1 + x))^gamma`; params `[c, gamma]`. Superlinear
    /// growth with finite-time blow-up of the deterministic flow for
    /// `gamma > 1`.
    LogGrowth,
}

/// A coefficient function: family, coefficients and the role it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub family: FunctionFamily,
    pub params: Vec<f64>,
    pub role: Role,
}

impl FunctionSpec {
    pub fn constant(role: Role, c: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::Constant,
            params: alloc::vec![c],
            role,
        }
    }

    pub fn linear(role: Role, c: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::Linear,
            params: alloc::vec![c],
            role,
        }
    }

    pub fn affine(role: Role, c0: f64, c1: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::Affine,
            params: alloc::vec![c0, c1],
            role,
        }
    }

    pub fn logistic(role: Role, a: f64, carrying: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::Logistic,
            params: alloc::vec![a, carrying],
            role,
        }
    }

    pub fn power(role: Role, c: f64, gamma: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::Power,
            params: alloc::vec![c, gamma],
            role,
        }
    }

    pub fn saturating_hill(role: Role, r0: f64, h: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::SaturatingHill,
            params: alloc::vec![r0, h],
            role,
        }
    }

    pub fn piecewise_linear(role: Role, knots: &[(f64, f64)]) -> Self {
        let mut params = Vec::with_capacity(knots.len() * 2);
        for &(x, y) in knots {
            params.push(x);
            params.push(y);
        }
        FunctionSpec {
            family: FunctionFamily::PiecewiseLinear,
            params,
            role,
        }
    }

    pub fn log_growth(role: Role, c: f64, gamma: f64) -> Self {
        FunctionSpec {
            family: FunctionFamily::LogGrowth,
            params: alloc::vec![c, gamma],
            role,
        }
    }

    fn check_params(&self) -> Result<(), String> {
        let n = self.params.len();
        let need = |k: usize| -> Result<(), String> {
            if n == k {
                Ok(())
            } else {
                Err(format!("{:?} needs {k} params, got {n}", self.family))
            }
        };
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(format!("{:?} has non-finite params", self.family));
        }
        match self.family {
            FunctionFamily::Constant | FunctionFamily::Linear => need(1),
            FunctionFamily::Affine | FunctionFamily::LogGrowth => need(2),
            FunctionFamily::Logistic => {
                need(2)?;
                if self.params[1] <= 0.0 {
                    return Err("logistic carrying capacity must be > 0".into());
                }
                Ok(())
            }
            FunctionFamily::Power => {
                need(2)?;
                if self.params[1] <= 0.0 {
                    return Err("power exponent must be > 0".into());
                }
                Ok(())
            }
            FunctionFamily::SaturatingHill => {
                need(2)?;
                if self.params[1] <= 0.0 {
                    return Err("saturating-hill half-saturation must be > 0".into());
                }
                Ok(())
            }
            FunctionFamily::PiecewiseLinear => {
                if n < 4 || n % 2 != 0 {
                    return Err("piecewise-linear needs an even number (>= 4) of params".into());
                }
                for w in self.params.chunks(2).collect::<Vec<_>>().windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err("piecewise-linear knots must have increasing x".into());
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluate the family formula at `x`. `x` may be the explosion sentinel
    /// `+inf`, in which case the family's limit value is returned.
    pub fn eval(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return self.limit_at_infinity();
        }
        let p = &self.params;
        match self.family {
            FunctionFamily::Constant => p[0],
            FunctionFamily::Linear => p[0] * x,
            FunctionFamily::Affine => p[0] + p[1] * x,
            FunctionFamily::Logistic => p[0] * x * (1.0 - x / p[1]),
            FunctionFamily::Power => {
                if p[0] == 0.0 {
                    0.0
                } else {
                    p[0] * libm::pow(x, p[1])
                }
            }
            FunctionFamily::SaturatingHill => p[0] * x / (p[1] + x),
            FunctionFamily::PiecewiseLinear => {
                let knots = p.chunks(2);
                let first = &p[0..2];
                if x <= first[0] {
                    return first[1];
                }
                let mut prev = (first[0], first[1]);
                for k in knots.skip(1) {
                    let (kx, ky) = (k[0], k[1]);
                    if x <= kx {
                        let t = (x - prev.0) / (kx - prev.0);
                        return prev.1 + t * (ky - prev.1);
                    }
                    prev = (kx, ky);
                }
                prev.1
            }
            FunctionFamily::LogGrowth => {
                if p[0] == 0.0 {
                    0.0
                } else {
                    p[0] * x * libm::pow(1.0 + libm::log1p(x), p[1])
                }
            }
        }
    }

    /// Limit of the family as the load tends to `+inf` (finite or infinite).
    pub fn limit_at_infinity(&self) -> f64 {
        let p = &self.params;
        let signed_inf = |c: f64| {
            if c == 0.0 {
                0.0
            } else if c > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        };
        match self.family {
            FunctionFamily::Constant => p[0],
            FunctionFamily::Linear => signed_inf(p[0]),
            FunctionFamily::Affine => {
                if p[1] == 0.0 {
                    p[0]
                } else {
                    signed_inf(p[1])
                }
            }
            FunctionFamily::Logistic => signed_inf(-p[0]),
            FunctionFamily::Power | FunctionFamily::LogGrowth => signed_inf(p[0]),
            FunctionFamily::SaturatingHill => p[0],
            FunctionFamily::PiecewiseLinear => p[p.len() - 1],
        }
    }

    /// Upper bound of the function on `[lo, hi]` (`hi` may be `+inf`).
    ///
    /// Exact for the built-in families: the candidates are the endpoint
    /// values, interior knots and the logistic vertex.
    pub fn bound_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval(lo).max(self.eval(hi));
        match self.family {
            FunctionFamily::Logistic => {
                let vertex = 0.5 * self.params[1];
                if vertex > lo && vertex < hi {
                    best = best.max(self.eval(vertex));
                }
            }
            FunctionFamily::PiecewiseLinear => {
                for k in self.params.chunks(2) {
                    if k[0] > lo && k[0] < hi {
                        best = best.max(k[1]);
                    }
                }
            }
            _ => {}
        }
        best
    }

    /// Structural monotonicity: true when the family parameters make the
    /// function non-decreasing on all of `[0, inf)`.
    pub fn is_non_decreasing(&self) -> bool {
        let p = &self.params;
        match self.family {
            FunctionFamily::Constant => true,
            FunctionFamily::Linear => p[0] >= 0.0,
            FunctionFamily::Affine => p[1] >= 0.0,
            FunctionFamily::Logistic => p[0] == 0.0,
            FunctionFamily::Power => p[0] >= 0.0,
            FunctionFamily::SaturatingHill => p[0] >= 0.0,
            FunctionFamily::PiecewiseLinear => {
                p.chunks(2).collect::<Vec<_>>().windows(2).all(|w| w[1][1] >= w[0][1])
            }
            FunctionFamily::LogGrowth => p[0] >= 0.0,
        }
    }

    /// Structural nonnegativity on `[0, inf)`.
    pub fn is_nonnegative(&self) -> bool {
        let p = &self.params;
        match self.family {
            FunctionFamily::Constant => p[0] >= 0.0,
            FunctionFamily::Linear | FunctionFamily::Power | FunctionFamily::LogGrowth => {
                p[0] >= 0.0
            }
            FunctionFamily::Affine => p[0] >= 0.0 && p[1] >= 0.0,
            FunctionFamily::Logistic => p[0] == 0.0,
            FunctionFamily::SaturatingHill => p[0] >= 0.0,
            FunctionFamily::PiecewiseLinear => self.params.chunks(2).all(|k| k[1] >= 0.0),
        }
    }

    /// Structural boundedness on `[0, inf)`.
    pub fn is_bounded(&self) -> bool {
        let p = &self.params;
        match self.family {
            FunctionFamily::Constant
            | FunctionFamily::SaturatingHill
            | FunctionFamily::PiecewiseLinear => true,
            FunctionFamily::Linear => p[0] == 0.0,
            FunctionFamily::Affine => p[1] == 0.0,
            FunctionFamily::Power | FunctionFamily::LogGrowth => p[0] == 0.0,
            FunctionFamily::Logistic => p[0] == 0.0,
        }
    }
}

/// Which jump-size law a [`JumpSizeLaw`] plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoseRole {
    /// The parasite jump measure driving the within-cell SDE.
    ParasiteJumpPi,
    /// Dose received on contact with the reservoir.
    ReservoirDose,
    /// Dose received from parasites released at cell lysis.
    LysisDose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpFamily {
    /// All mass at `z0`; params `[z0]`, `z0 > 0`.
    PointMass,
    /// Exponential with the given mean; params `[mean]`.
    Exponential,
    /// Uniform on `[lo, hi]`; params `[lo, hi]`, `0 < lo < hi`.
    UniformInterval,
    /// Pareto with tail index `alpha`, truncated to `[lo, hi]`;
    /// params `[alpha, lo, hi]`.
    TruncatedPareto,
}

fn default_mass() -> f64 {
    1.0
}

/// A positive jump-size law with finite mass and finite mean.
///
/// The law is normalized (a probability law on `(0, inf)`); `mass` scales the
/// total mass of the measure and matters only for the parasite jump measure,
/// where jumps arrive at rate `p(x) * mass` with sizes from the normalized
/// law and the compensator contributes the drift `-p(x) * mass * mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSizeLaw {
    pub family: JumpFamily,
    pub params: Vec<f64>,
    pub role: DoseRole,
    #[serde(default = "default_mass")]
    pub mass: f64,
}

impl JumpSizeLaw {
    pub fn point_mass(role: DoseRole, z0: f64) -> Self {
        JumpSizeLaw {
            family: JumpFamily::PointMass,
            params: alloc::vec![z0],
            role,
            mass: 1.0,
        }
    }

    pub fn exponential(role: DoseRole, mean: f64) -> Self {
        JumpSizeLaw {
            family: JumpFamily::Exponential,
            params: alloc::vec![mean],
            role,
            mass: 1.0,
        }
    }

    pub fn uniform_interval(role: DoseRole, lo: f64, hi: f64) -> Self {
        JumpSizeLaw {
            family: JumpFamily::UniformInterval,
            params: alloc::vec![lo, hi],
            role,
            mass: 1.0,
        }
    }

    pub fn truncated_pareto(role: DoseRole, alpha: f64, lo: f64, hi: f64) -> Self {
        JumpSizeLaw {
            family: JumpFamily::TruncatedPareto,
            params: alloc::vec![alpha, lo, hi],
            role,
            mass: 1.0,
        }
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    fn check_params(&self) -> Result<(), String> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(format!("{:?} has non-finite params", self.family));
        }
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err("jump-law mass must be finite and >= 0".into());
        }
        match self.family {
            JumpFamily::PointMass => {
                if self.params.len() != 1 || self.params[0] <= 0.0 {
                    return Err("point-mass needs one param z0 > 0".into());
                }
            }
            JumpFamily::Exponential => {
                if self.params.len() != 1 || self.params[0] <= 0.0 {
                    return Err("exponential needs one param mean > 0".into());
                }
            }
            JumpFamily::UniformInterval => {
                if self.params.len() != 2 || self.params[0] <= 0.0 || self.params[1] <= self.params[0]
                {
                    return Err("uniform-interval needs 0 < lo < hi".into());
                }
            }
            JumpFamily::TruncatedPareto => {
                if self.params.len() != 3
                    || self.params[0] <= 0.0
                    || self.params[1] <= 0.0
                    || self.params[2] <= self.params[1]
                {
                    return Err("truncated-pareto needs alpha > 0 and 0 < lo < hi".into());
                }
            }
        }
        Ok(())
    }

    /// Total mass of the measure.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Mean of the normalized law, in closed form.
    pub fn mean(&self) -> f64 {
        let p = &self.params;
        match self.family {
            JumpFamily::PointMass => p[0],
            JumpFamily::Exponential => p[0],
            JumpFamily::UniformInterval => 0.5 * (p[0] + p[1]),
            JumpFamily::TruncatedPareto => {
                let (alpha, lo, hi) = (p[0], p[1], p[2]);
                let norm = 1.0 - libm::pow(lo / hi, alpha);
                if (alpha - 1.0).abs() < 1e-12 {
                    lo * libm::log(hi / lo) / norm
                } else {
                    alpha * libm::pow(lo, alpha)
                        * (libm::pow(lo, 1.0 - alpha) - libm::pow(hi, 1.0 - alpha))
                        / ((alpha - 1.0) * norm)
                }
            }
        }
    }

    /// One draw from the normalized law.
    pub fn sample(&self, stream: &mut DriverStream) -> f64 {
        let p = &self.params;
        match self.family {
            JumpFamily::PointMass => p[0],
            JumpFamily::Exponential => stream.exponential(p[0]),
            JumpFamily::UniformInterval => p[0] + (p[1] - p[0]) * stream.uniform(),
            JumpFamily::TruncatedPareto => {
                let (alpha, lo, hi) = (p[0], p[1], p[2]);
                let u = stream.uniform();
                lo * libm::pow(1.0 - u * (1.0 - libm::pow(lo / hi, alpha)), -1.0 / alpha)
            }
        }
    }

    /// `E[f(Z)]` under the normalized law, closed form for point mass and by
    /// adaptive quadrature against the density otherwise.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, tol: f64) -> Result<f64, QuadError> {
        let p = &self.params;
        match self.family {
            JumpFamily::PointMass => Ok(f(p[0])),
            JumpFamily::Exponential => {
                let m = p[0];
                // truncation at 50 means: relative tail mass ~ 2e-22
                quad::integrate(|z| f(z) * libm::exp(-z / m) / m, 0.0, 50.0 * m, tol)
            }
            JumpFamily::UniformInterval => {
                let (lo, hi) = (p[0], p[1]);
                Ok(quad::integrate(&f, lo, hi, tol * (hi - lo))? / (hi - lo))
            }
            JumpFamily::TruncatedPareto => {
                let (alpha, lo, hi) = (p[0], p[1], p[2]);
                let norm = 1.0 - libm::pow(lo / hi, alpha);
                let c = alpha * libm::pow(lo, alpha) / norm;
                quad::integrate(|z| f(z) * c * libm::pow(z, -alpha - 1.0), lo, hi, tol)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FragFamily {
    /// Beta(beta, beta); params `[beta]`.
    BetaSymmetric,
    /// Uniform on `(0, 1)`; no params.
    Uniform01,
    /// Deterministic one-half split; no params.
    PointMassHalf,
}

/// Law of the fraction of parasites inherited by one daughter at division.
/// Symmetric about 1/2 by construction for every family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentationLaw {
    pub family: FragFamily,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl FragmentationLaw {
    pub fn beta_symmetric(beta: f64) -> Self {
        FragmentationLaw {
            family: FragFamily::BetaSymmetric,
            params: alloc::vec![beta],
        }
    }

    pub fn uniform01() -> Self {
        FragmentationLaw {
            family: FragFamily::Uniform01,
            params: Vec::new(),
        }
    }

    pub fn point_mass_half() -> Self {
        FragmentationLaw {
            family: FragFamily::PointMassHalf,
            params: Vec::new(),
        }
    }

    fn check_params(&self) -> Result<(), String> {
        match self.family {
            FragFamily::BetaSymmetric => {
                if self.params.len() != 1 || !(self.params[0] > 0.0) {
                    return Err("beta-symmetric needs one param beta > 0".into());
                }
            }
            FragFamily::Uniform01 | FragFamily::PointMassHalf => {
                if !self.params.is_empty() {
                    return Err(format!("{:?} takes no params", self.family));
                }
            }
        }
        Ok(())
    }

    /// Closed-form `E[Theta^q]`, `+inf` when the moment diverges
    /// (`q <= -beta` for the symmetric beta family, `q <= -1` for uniform).
    pub fn theta_moment(&self, q: f64) -> f64 {
        match self.family {
            FragFamily::Uniform01 => {
                if q > -1.0 {
                    1.0 / (1.0 + q)
                } else {
                    f64::INFINITY
                }
            }
            FragFamily::PointMassHalf => libm::pow(2.0, -q),
            FragFamily::BetaSymmetric => {
                let beta = self.params[0];
                if q <= -beta {
                    f64::INFINITY
                } else {
                    // E[Theta^q] = Gamma(beta+q) Gamma(2 beta) / (Gamma(beta) Gamma(2 beta + q))
                    libm::exp(
                        libm::lgamma(beta + q) + libm::lgamma(2.0 * beta)
                            - libm::lgamma(beta)
                            - libm::lgamma(2.0 * beta + q),
                    )
                }
            }
        }
    }

    /// Closed-form `E[ln(1/Theta)]`; finite for every admissible family.
    pub fn mean_log_inverse(&self) -> f64 {
        match self.family {
            FragFamily::Uniform01 => 1.0,
            FragFamily::PointMassHalf => libm::log(2.0),
            FragFamily::BetaSymmetric => {
                let beta = self.params[0];
                digamma(2.0 * beta) - digamma(beta)
            }
        }
    }

    /// One draw of the daughter fraction.
    pub fn sample(&self, stream: &mut DriverStream) -> f64 {
        match self.family {
            FragFamily::Uniform01 => {
                // open interval: reject the (measure-zero) endpoints
                loop {
                    let u = stream.uniform();
                    if u > 0.0 {
                        return u;
                    }
                }
            }
            FragFamily::PointMassHalf => 0.5,
            FragFamily::BetaSymmetric => {
                let beta = self.params[0];
                let dist = rand_distr::Beta::new(beta, beta).expect("validated params");
                loop {
                    let theta: f64 = dist.sample(stream.rng());
                    if theta > 0.0 && theta < 1.0 {
                        return theta;
                    }
                }
            }
        }
    }
}

/// Digamma by upward recurrence into the asymptotic regime.
fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + libm::log(x) - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0))
}

/// The full parameter bundle of the cell-population model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelSpec {
    /// Parasite growth rate inside a cell.
    pub g: FunctionSpec,
    /// Diffusion coefficient (variance rate) of the within-cell load.
    pub sigma2: FunctionSpec,
    /// Rate multiplier of positive parasite jumps.
    pub p: FunctionSpec,
    /// Load-dependent reservoir infection rate.
    pub lambda: FunctionSpec,
    /// Lysis reinfection rate, evaluated at the mean load per cell.
    pub r: FunctionSpec,
    /// Parasite jump-size measure.
    pub pi: JumpSizeLaw,
    /// Dose law for reservoir infections.
    pub dose_reservoir: JumpSizeLaw,
    /// Dose law for lysis infections.
    pub dose_lysis: JumpSizeLaw,
    /// Fragmentation law at division.
    pub kappa: FragmentationLaw,
    /// Cell division rate (> 0).
    pub b: f64,
    /// Cell death rate (>= 0).
    pub d: f64,
    /// Initial parasite load of the root cell.
    pub x0: f64,
}

/// Discretization, explosion-sentinel and Monte Carlo controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NumericsSpec {
    /// Base time step; engines sub-step adaptively below it.
    pub dt: f64,
    /// Simulation horizon.
    pub horizon: f64,
    /// Explosion sentinel: loads at or above this threshold are absorbed to
    /// `+inf`.
    #[serde(default = "default_x_explode")]
    pub x_explode: f64,
    /// Abort-with-flag population cap.
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    /// Monte Carlo replicates.
    pub replicates: u32,
    pub master_seed: u64,
    /// Sup-norm tolerance of the mean-field fixed point.
    #[serde(default = "default_tol_fp")]
    pub tol_fp: f64,
    /// Maximum Picard iterations.
    #[serde(default = "default_k_max_fp")]
    pub k_max_fp: u32,
    /// Quadrature tolerance for generator and criteria integrals.
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_x_explode() -> f64 {
    1e12
}
fn default_max_cells() -> usize {
    100_000
}
fn default_tol_fp() -> f64 {
    1e-3
}
fn default_k_max_fp() -> u32 {
    20
}
fn default_quad_tol() -> f64 {
    1e-9
}

impl NumericsSpec {
    pub fn check(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err("dt must be positive and finite".into());
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err("horizon must be nonnegative and finite".into());
        }
        if !(self.x_explode > 0.0) {
            return Err("x_explode must be positive".into());
        }
        if !(self.tol_fp > 0.0 && self.quad_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        Ok(())
    }
}

/// One structural clause of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    /// Clause tag, e.g. `EU(i)`.
    pub clause: String,
    pub passed: bool,
    /// The violated constraint, empty when passed.
    pub detail: String,
}

/// Outcome of [`validate_model`]: per-clause pass/fail with the violated
/// constraint spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ClauseCheck> {
        self.clauses.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, clause: &str, result: Result<(), String>) {
        match result {
            Ok(()) => self.clauses.push(ClauseCheck {
                clause: clause.into(),
                passed: true,
                detail: String::new(),
            }),
            Err(detail) => self.clauses.push(ClauseCheck {
                clause: clause.into(),
                passed: false,
                detail,
            }),
        }
    }
}

/// Structural existence/uniqueness validation.
///
/// Checks, clause by clause: (i) jump rate `p` non-decreasing with
/// `p(0) = 0` and growth `g` with `g(0) = 0`; (ii) diffusion nonnegative
/// with `sigma2(0) = 0`; (iii) the jump measure has finite mass and finite
/// mean; (iv) `r` non-decreasing, bounded, `r(0) = 0`, `lambda`
/// nonnegative, finite dose means and finite `E[ln(1/Theta)]`. Malformed
/// parameters are reported, never panicked on.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport {
        clauses: Vec::new(),
    };

    // parameter well-formedness before any structural checks
    let params_ok = [
        ("g", spec.g.check_params()),
        ("sigma2", spec.sigma2.check_params()),
        ("p", spec.p.check_params()),
        ("lambda", spec.lambda.check_params()),
        ("r", spec.r.check_params()),
        ("pi", spec.pi.check_params()),
        ("dose_reservoir", spec.dose_reservoir.check_params()),
        ("dose_lysis", spec.dose_lysis.check_params()),
        ("kappa", spec.kappa.check_params()),
    ];
    let mut any_param_bad = false;
    for (name, res) in params_ok {
        if let Err(e) = res {
            any_param_bad = true;
            report.push("params", Err(format!("{name}: {e}")));
        }
    }
    report.push(
        "roles",
        {
            let mut errs = Vec::new();
            for (name, f, want) in [
                ("g", &spec.g, Role::GrowthG),
                ("sigma2", &spec.sigma2, Role::DiffusionSigma2),
                ("p", &spec.p, Role::JumpRateP),
                ("lambda", &spec.lambda, Role::ReservoirRateLambda),
                ("r", &spec.r, Role::LysisRateR),
            ] {
                if f.role != want {
                    errs.push(format!("{name} carries role {:?}, expected {:?}", f.role, want));
                }
            }
            for (name, l, want) in [
                ("pi", &spec.pi, DoseRole::ParasiteJumpPi),
                ("dose_reservoir", &spec.dose_reservoir, DoseRole::ReservoirDose),
                ("dose_lysis", &spec.dose_lysis, DoseRole::LysisDose),
            ] {
                if l.role != want {
                    errs.push(format!("{name} carries role {:?}, expected {:?}", l.role, want));
                }
            }
            if errs.is_empty() {
                Ok(())
            } else {
                Err(errs.join("; "))
            }
        },
    );
    report.push("rates", {
        if !(spec.b > 0.0 && spec.b.is_finite()) {
            Err(format!("division rate b must be > 0, got {}", spec.b))
        } else if !(spec.d >= 0.0 && spec.d.is_finite()) {
            Err(format!("death rate d must be >= 0, got {}", spec.d))
        } else if !(spec.x0 >= 0.0) {
            Err(format!("initial load x0 must be >= 0, got {}", spec.x0))
        } else {
            Ok(())
        }
    });
    if any_param_bad {
        // structural checks below would evaluate malformed families
        return report;
    }

    // EU(i): p locally Lipschitz (all families), non-decreasing, p(0)=0;
    // g continuous (all families) with g(0)=0.
    report.push("EU(i)", {
        let mut errs = Vec::new();
        if spec.p.eval(0.0) != 0.0 {
            errs.push(format!("p(0)=0 violated: p(0)={}", spec.p.eval(0.0)));
        }
        if !spec.p.is_non_decreasing() {
            errs.push("p must be non-decreasing".into());
        }
        if !spec.p.is_nonnegative() {
            errs.push("p must be nonnegative".into());
        }
        if spec.g.eval(0.0) != 0.0 {
            errs.push(format!("g(0)=0 violated: g(0)={}", spec.g.eval(0.0)));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    });

    // EU(ii): sigma^2 nonnegative with sigma^2(0)=0; Hoelder-1/2 regularity of
    // sigma holds per family by construction.
    report.push("EU(ii)", {
        let mut errs = Vec::new();
        if !spec.sigma2.is_nonnegative() {
            errs.push("sigma2 must be nonnegative".into());
        }
        if spec.sigma2.eval(0.0) != 0.0 {
            errs.push(format!("sigma2(0)=0 violated: sigma2(0)={}", spec.sigma2.eval(0.0)));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    });

    // EU(iii): finite mass and finite mean of the jump measure (positive
    // support is enforced at the parameter level).
    report.push("EU(iii)", {
        let mean = spec.pi.mean();
        if !(mean.is_finite() && mean > 0.0) {
            Err(format!("jump measure mean must be finite and positive, got {mean}"))
        } else if !spec.pi.mass().is_finite() {
            Err("jump measure mass must be finite".into())
        } else {
            Ok(())
        }
    });

    // EU(iv): r and lambda continuous (per family), r non-decreasing,
    // bounded, r(0)=0; finite dose means; finite E[ln(1/Theta)].
    report.push("EU(iv)", {
        let mut errs = Vec::new();
        if spec.r.eval(0.0) != 0.0 {
            errs.push(format!("r(0)=0 violated: r(0)={}", spec.r.eval(0.0)));
        }
        if !spec.r.is_non_decreasing() {
            errs.push("r must be non-decreasing".into());
        }
        if !spec.r.is_bounded() {
            errs.push("r must be bounded".into());
        }
        if !spec.r.is_nonnegative() {
            errs.push("r must be nonnegative".into());
        }
        if !spec.lambda.is_nonnegative() {
            errs.push("lambda must be nonnegative".into());
        }
        let mi = spec.dose_reservoir.mean();
        let mp = spec.dose_lysis.mean();
        if !mi.is_finite() || !mp.is_finite() {
            errs.push(format!("dose means must be finite: reservoir {mi}, lysis {mp}"));
        }
        if !spec.kappa.mean_log_inverse().is_finite() {
            errs.push("E[ln(1/Theta)] must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    });

    report
}
