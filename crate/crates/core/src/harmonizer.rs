//! Conflict detection and harmonization of two task gradients.
//!
//! `g1` is the alignment-task gradient and `g2` the classification-task
//! gradient. The pair is in conflict when `g1 . g2 < 0`. Every operator is a
//! no-op on non-conflicting pairs.
//!
//! * GH projects each gradient onto the hyperplane orthogonal to the other,
//!   which turns an obtuse angle `theta` into `pi - theta`.
//! * GH++ (weighted) rescales each gradient by a positive weight driven by
//!   `lambda` and `theta`. Pure rescaling leaves the angle unchanged.
//! * GH++ (rotate) rotates both gradients inside their common plane until they
//!   are orthogonal, splitting the rotation `theta - pi/2` by `lambda`.
//!
//! Each operator also has an equivalent loss-weight form `(tau1, tau2)` with
//! `tau1 * g1 + tau2 * g2` equal to the harmonized aggregate.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vecmath::{angle, dot, norm_sq, ParamVector};

pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Squared norms below this are treated as vanishing gradients.
pub const NORM_SQ_FLOOR: f64 = 1e-30;

/// Relative size below which a GH projection counts as collapsed.
const DEGENERATE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPair {
    g1: ParamVector,
    g2: ParamVector,
}

impl GradientPair {
    pub fn new(g1: ParamVector, g2: ParamVector) -> Result<Self> {
        if g1.len() != g2.len() {
            return Err(Error::DimensionMismatch { left: g1.len(), right: g2.len() });
        }
        Ok(Self { g1, g2 })
    }

    pub fn from_slices(g1: &[f64], g2: &[f64]) -> Result<Self> {
        Self::new(ParamVector::new(g1.to_vec())?, ParamVector::new(g2.to_vec())?)
    }

    pub fn g1(&self) -> &ParamVector {
        &self.g1
    }

    pub fn g2(&self) -> &ParamVector {
        &self.g2
    }

    pub fn len(&self) -> usize {
        self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn inner_product(&self) -> f64 {
        dot(&self.g1, &self.g2).expect("pair lengths checked at construction")
    }

    pub fn into_parts(self) -> (ParamVector, ParamVector) {
        (self.g1, self.g2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    None,
    Gh,
    GhppWeighted,
    GhppRotate,
    FlipG1,
    FlipG2,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::None,
        MethodKind::Gh,
        MethodKind::GhppWeighted,
        MethodKind::GhppRotate,
        MethodKind::FlipG1,
        MethodKind::FlipG2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::None => "none",
            MethodKind::Gh => "gh",
            MethodKind::GhppWeighted => "ghpp-weighted",
            MethodKind::GhppRotate => "ghpp-rotate",
            MethodKind::FlipG1 => "flip-g1",
            MethodKind::FlipG2 => "flip-g2",
        }
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, MethodKind::GhppWeighted | MethodKind::GhppRotate)
    }

    pub fn is_sign_flip(self) -> bool {
        matches!(self, MethodKind::FlipG1 | MethodKind::FlipG2)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        MethodKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = MethodKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown method `{s}`, expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMethod")]
pub struct HarmonizeMethod {
    pub kind: MethodKind,
    pub lambda: f64,
}

#[derive(Deserialize)]
struct RawMethod {
    kind: MethodKind,
    #[serde(default = "default_lambda")]
    lambda: f64,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl TryFrom<RawMethod> for HarmonizeMethod {
    type Error = Error;

    fn try_from(raw: RawMethod) -> Result<Self> {
        HarmonizeMethod::new(raw.kind, raw.lambda)
    }
}

impl HarmonizeMethod {
    pub fn new(kind: MethodKind, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { kind, lambda })
    }

    pub fn of(kind: MethodKind) -> Self {
        Self { kind, lambda: DEFAULT_LAMBDA }
    }

    pub fn none() -> Self {
        Self::of(MethodKind::None)
    }

    pub fn gh() -> Self {
        Self::of(MethodKind::Gh)
    }

    pub fn ghpp_weighted(lambda: f64) -> Result<Self> {
        Self::new(MethodKind::GhppWeighted, lambda)
    }

    pub fn ghpp_rotate(lambda: f64) -> Result<Self> {
        Self::new(MethodKind::GhppRotate, lambda)
    }
}

impl Default for HarmonizeMethod {
    fn default() -> Self {
        Self::gh()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    G1,
    G2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizeResult {
    pub method: MethodKind,
    pub tilde_g1: ParamVector,
    pub tilde_g2: ParamVector,
    pub aggregate: ParamVector,
    pub tau1: f64,
    pub tau2: f64,
    pub inner_product: f64,
    pub conflict: bool,
    /// A harmonized gradient collapsed to (numerically) zero.
    pub degenerate: bool,
    pub angle_before: Option<f64>,
    pub angle_after: Option<f64>,
    pub deviation_sum: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub angle_before: f64,
    /// `None` when a harmonized gradient is zero.
    pub angle_after: Option<f64>,
    pub deviation_sum: Option<f64>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    Ok(())
}

/// Conflict indicator `delta(g1 . g2 < 0)`, with vanishing gradients never
/// in conflict.
pub fn detect_conflict(p: &GradientPair) -> bool {
    conflict_from(p.inner_product(), norm_sq(&p.g1), norm_sq(&p.g2))
}

fn conflict_from(ip: f64, n1: f64, n2: f64) -> bool {
    ip < 0.0 && n1 >= NORM_SQ_FLOOR && n2 >= NORM_SQ_FLOOR
}

/// Projection coefficients `(g1.g2 / |g2|^2, g1.g2 / |g1|^2)` if in conflict.
fn projection_coeffs(p: &GradientPair) -> Option<(f64, f64)> {
    let ip = p.inner_product();
    let (n1, n2) = (norm_sq(&p.g1), norm_sq(&p.g2));
    conflict_from(ip, n1, n2).then(|| (ip / n2, ip / n1))
}

pub fn gh_pair(p: &GradientPair) -> (ParamVector, ParamVector) {
    match projection_coeffs(p) {
        None => (p.g1.clone(), p.g2.clone()),
        Some((c2, c1)) => {
            let t1 = p.g1.axpy(-c2, &p.g2).expect("same length");
            let t2 = p.g2.axpy(-c1, &p.g1).expect("same length");
            (t1, t2)
        }
    }
}

/// Overall harmonized gradient `g1 + g2 - delta*c2*g2 - delta*c1*g1`,
/// evaluated as the sum of the two projected gradients.
pub fn gh_aggregate(p: &GradientPair) -> ParamVector {
    let (t1, t2) = gh_pair(p);
    t1.add(&t2).expect("same length")
}

pub fn gh_weights(p: &GradientPair) -> (f64, f64) {
    match projection_coeffs(p) {
        None => (1.0, 1.0),
        Some((c2, c1)) => (1.0 - c1, 1.0 - c2),
    }
}

/// Loss weights of the rescaling form of GH++.
///
/// With `phi = theta - pi/2`: `tau1 = 1 + 2 sin(lambda*phi/2)` and
/// `tau2 = 1 + 2 sin((lambda-1)*phi/2)`.
pub fn ghpp_weights(p: &GradientPair, lambda: f64) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    if !detect_conflict(p) {
        return Ok((1.0, 1.0));
    }
    let phi = angle(&p.g1, &p.g2)? - FRAC_PI_2;
    let tau1 = 1.0 + 2.0 * (lambda * phi / 2.0).sin();
    let tau2 = 1.0 + 2.0 * ((lambda - 1.0) * phi / 2.0).sin();
    Ok((tau1, tau2))
}

pub fn ghpp_aggregate(p: &GradientPair, lambda: f64) -> Result<ParamVector> {
    let (tau1, tau2) = ghpp_weights(p, lambda)?;
    p.g1.lincomb(tau1, tau2, &p.g2)
}

/// Orthonormal basis `(u, v)` of span{g1, g2} with `g1 = |g1| u` and
/// `g2 = |g2| (cos(theta) u + sin(theta) v)`.
struct Plane {
    u: Vec<f64>,
    v: Vec<f64>,
    norm1: f64,
    norm2: f64,
    theta: f64,
}

impl Plane {
    fn new(g1: &ParamVector, g2: &ParamVector) -> Result<Self> {
        let norm1 = g1.norm();
        let norm2 = g2.norm();
        if norm1 * norm1 < NORM_SQ_FLOOR || norm2 * norm2 < NORM_SQ_FLOOR {
            return Err(Error::DegenerateRotation);
        }
        let u: Vec<f64> = g1.iter().map(|x| x / norm1).collect();
        let mut v: Vec<f64> = g2.as_slice().to_vec();
        let mut along = 0.0;
        // two Gram-Schmidt passes
        for _ in 0..2 {
            let c = crate::vecmath::dot_slices(&v, &u);
            along += c;
            v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi -= c * ui);
        }
        let across = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if across <= DEGENERATE_REL * norm2 {
            return Err(Error::DegenerateRotation);
        }
        v.iter_mut().for_each(|x| *x /= across);
        Ok(Self { u, v, norm1, norm2, theta: across.atan2(along) })
    }

    /// Vector of length `radius` at angle `phi` from `u` towards `v`.
    fn at(&self, radius: f64, phi: f64) -> ParamVector {
        let (s, c) = phi.sin_cos();
        ParamVector::from_vec_unchecked(
            self.u.iter().zip(&self.v).map(|(a, b)| radius * (c * a + s * b)).collect(),
        )
    }
}

struct Rotation {
    tilde_g1: ParamVector,
    tilde_g2: ParamVector,
    tau1: f64,
    tau2: f64,
}

fn rotate(p: &GradientPair, lambda: f64) -> Result<Option<Rotation>> {
    check_lambda(lambda)?;
    if !detect_conflict(p) {
        return Ok(None);
    }
    let plane = Plane::new(&p.g1, &p.g2)?;
    let theta = plane.theta;
    let excess = theta - FRAC_PI_2;
    let beta = lambda * excess;
    let gamma = excess - beta;

    let tilde_g1 = if beta == 0.0 { p.g1.clone() } else { plane.at(plane.norm1, beta) };
    let tilde_g2 =
        if gamma == 0.0 { p.g2.clone() } else { plane.at(plane.norm2, theta - gamma) };

    // tilde_g1 + tilde_g2 expressed in the (g1, g2) basis
    let s = theta.sin();
    let ratio = plane.norm2 / plane.norm1;
    let tau1 = ((theta - beta).sin() + ratio * gamma.sin()) / s;
    let tau2 = ((theta - gamma).sin() + beta.sin() / ratio) / s;
    Ok(Some(Rotation { tilde_g1, tilde_g2, tau1, tau2 }))
}

/// Rotates the conflicting pair inside its own plane until orthogonal: `g1`
/// by `lambda*(theta - pi/2)` towards `g2`, `g2` by the remainder towards
/// `g1`. Norms are preserved.
pub fn ghpp_rotate(p: &GradientPair, lambda: f64) -> Result<(ParamVector, ParamVector)> {
    Ok(match rotate(p, lambda)? {
        None => (p.g1.clone(), p.g2.clone()),
        Some(r) => (r.tilde_g1, r.tilde_g2),
    })
}

pub fn sign_flip(p: &GradientPair, which: Task) -> (ParamVector, ParamVector) {
    match which {
        Task::G1 => (p.g1.neg(), p.g2.clone()),
        Task::G2 => (p.g1.clone(), p.g2.neg()),
    }
}

fn harmonized_pair(p: &GradientPair, method: HarmonizeMethod) -> Result<(ParamVector, ParamVector)> {
    Ok(match method.kind {
        MethodKind::None => (p.g1.clone(), p.g2.clone()),
        MethodKind::Gh => gh_pair(p),
        MethodKind::GhppWeighted => {
            let (tau1, tau2) = ghpp_weights(p, method.lambda)?;
            if detect_conflict(p) {
                (p.g1.scale(tau1), p.g2.scale(tau2))
            } else {
                (p.g1.clone(), p.g2.clone())
            }
        }
        MethodKind::GhppRotate => ghpp_rotate(p, method.lambda)?,
        MethodKind::FlipG1 => sign_flip(p, Task::G1),
        MethodKind::FlipG2 => sign_flip(p, Task::G2),
    })
}

fn angle_or_none(a: &ParamVector, b: &ParamVector) -> Option<f64> {
    angle(a, b).ok()
}

fn deviation_of(orig: &ParamVector, harmonized: &ParamVector) -> Option<f64> {
    if orig == harmonized {
        return Some(0.0);
    }
    angle_or_none(orig, harmonized)
}

fn report_for(p: &GradientPair, t1: &ParamVector, t2: &ParamVector) -> (Option<f64>, Option<f64>, Option<f64>) {
    let before = angle_or_none(&p.g1, &p.g2);
    let after = angle_or_none(t1, t2);
    let deviation = match (deviation_of(&p.g1, t1), deviation_of(&p.g2, t2)) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    (before, after, deviation)
}

/// Angles before and after harmonization, plus the summed deviation of each
/// harmonized gradient from its original.
pub fn deviation_report(p: &GradientPair, method: HarmonizeMethod) -> Result<DeviationReport> {
    let angle_before = angle(&p.g1, &p.g2)?;
    let (t1, t2) = harmonized_pair(p, method)?;
    let (_, angle_after, deviation_sum) = report_for(p, &t1, &t2);
    Ok(DeviationReport { angle_before, angle_after, deviation_sum })
}

/// Runs `method` on `p` and fills in every [`HarmonizeResult`] field.
pub fn harmonize(method: HarmonizeMethod, p: &GradientPair) -> Result<HarmonizeResult> {
    check_lambda(method.lambda)?;
    let inner_product = p.inner_product();
    let conflict = detect_conflict(p);

    let (tilde_g1, tilde_g2, tau1, tau2) = match method.kind {
        MethodKind::None => (p.g1.clone(), p.g2.clone(), 1.0, 1.0),
        MethodKind::Gh => {
            let (t1, t2) = gh_pair(p);
            let (tau1, tau2) = gh_weights(p);
            (t1, t2, tau1, tau2)
        }
        MethodKind::GhppWeighted => {
            let (t1, t2) = harmonized_pair(p, method)?;
            let (tau1, tau2) = ghpp_weights(p, method.lambda)?;
            (t1, t2, tau1, tau2)
        }
        MethodKind::GhppRotate => match rotate(p, method.lambda)? {
            None => (p.g1.clone(), p.g2.clone(), 1.0, 1.0),
            Some(r) => (r.tilde_g1, r.tilde_g2, r.tau1, r.tau2),
        },
        MethodKind::FlipG1 => {
            let (t1, t2) = sign_flip(p, Task::G1);
            (t1, t2, -1.0, 1.0)
        }
        MethodKind::FlipG2 => {
            let (t1, t2) = sign_flip(p, Task::G2);
            (t1, t2, 1.0, -1.0)
        }
    };

    let aggregate = tilde_g1.add(&tilde_g2)?;
    let degenerate = conflict
        && (tilde_g1.norm() <= DEGENERATE_REL * p.g1.norm()
            || tilde_g2.norm() <= DEGENERATE_REL * p.g2.norm());
    let (angle_before, angle_after, deviation_sum) = report_for(p, &tilde_g1, &tilde_g2);

    Ok(HarmonizeResult {
        method: method.kind,
        tilde_g1,
        tilde_g2,
        aggregate,
        tau1,
        tau2,
        inner_product,
        conflict,
        degenerate,
        angle_before,
        angle_after,
        deviation_sum,
    })
}

/// Numerical witness that the GH projection of `g1` solves
/// `min 1/2 |x - g1|^2  s.t.  x.g1 >= 0, x.g2 >= 0`.
///
/// Checks the KKT conditions of the closed form, then draws `samples`
/// feasible points around it (both in general position and along the active
/// constraint `x.g2 = 0`). Returns false if any sampled point is closer to
/// `g1` by more than `1e-9 * |g1|`.
pub fn verify_lemma1_qp(g1: &ParamVector, g2: &ParamVector, samples: usize, seed: u64) -> Result<bool> {
    const TOL: f64 = 1e-9;
    let p = GradientPair::new(g1.clone(), g2.clone())?;
    if !detect_conflict(&p) {
        return Err(Error::NoConflict(p.inner_product()));
    }
    let (closed, _) = gh_pair(&p);
    let scale = g1.norm();
    let n2 = norm_sq(g2);

    // KKT: stationarity x - g1 - mu*g2 = 0 with mu >= 0, primal feasibility,
    // complementary slackness mu * x.g2 = 0.
    let mu = -p.inner_product() / n2;
    let stationarity = closed.sub(g1)?.axpy(-mu, g2)?.norm();
    let slack2 = dot(&closed, g2)?;
    let slack1 = dot(&closed, g1)?;
    let tol_ip = TOL * scale * g2.norm();
    if mu < 0.0 || stationarity > TOL * scale || slack2.abs() > tol_ip || slack1 < -tol_ip {
        return Ok(false);
    }

    qp_sample_check(&closed, g1, g2, samples, seed)
}

/// True when none of `samples` feasible points drawn around `candidate` is
/// closer to `g1` than `candidate` by more than `1e-9 * |g1|`.
pub(crate) fn qp_sample_check(
    candidate: &ParamVector,
    g1: &ParamVector,
    g2: &ParamVector,
    samples: usize,
    seed: u64,
) -> Result<bool> {
    const TOL: f64 = 1e-9;
    let scale = g1.norm();
    let n2 = norm_sq(g2);
    let best = candidate.sub(g1)?.norm();
    let unit2: Vec<f64> = g2.iter().map(|x| x / n2.sqrt()).collect();
    let mut rng = rng::stream(seed, "qp-samples");
    let dim = g1.len();
    for k in 0..samples {
        let radius = scale * 10f64.powf(rng.random_range(-6.0..0.0));
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if k % 2 == 1 {
            // stay on the active face, drift inwards by a non-negative amount
            let c = crate::vecmath::dot_slices(&dir, &unit2);
            dir.iter_mut().zip(&unit2).for_each(|(d, u)| *d -= c * u);
        }
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        let inward = if k % 2 == 1 { rng.random_range(0.0..1.0) * radius } else { 0.0 };
        let x: Vec<f64> = candidate
            .iter()
            .zip(&dir)
            .zip(&unit2)
            .map(|((c, d), u)| c + radius * d / len + inward * u)
            .collect();
        let x = ParamVector::from_vec_unchecked(x);
        if dot(&x, g1)? < 0.0 || dot(&x, g2)? < 0.0 {
            continue;
        }
        if x.sub(g1)?.norm() < best - TOL * scale {
            return Ok(false);
        }
    }
    Ok(true)
}
