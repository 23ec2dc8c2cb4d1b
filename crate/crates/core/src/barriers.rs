//! Closed-form barrier families, pointwise verification of their defining
//! inequalities, and bisection for the under-determined constants.
//!
//! A *sub-barrier* `Z` must satisfy `(1/V) Delta Z >= -1`; shifted by its
//! supremum (`Zbar = Z - H - 1`) it becomes a nonnegative-residual
//! supersolution driver for comparison arguments. A *super-barrier* `h > 0`
//! must satisfy `(1/V) Delta h <= -1` far enough out; verification scans
//! outward and reports the smallest inner cutoff `R0` from which the
//! inequality holds on the rest of the ball.
//!
//! A pointwise pass on a finite ball certifies the inequality on that ball
//! only; reports carry the verified radius.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BallFamily, Branching, GraphBall, Vertex};
use crate::operators::{laplacian_apply, Field, Metric, OperatorError, Potential};

/// Default absolute tolerance on normalized margins.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Default bisection window `(0, 10]` and iteration count.
pub const DEFAULT_WINDOW: (f64, f64) = (0.0, 10.0);
pub const DEFAULT_ITERATIONS: u32 = 60;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("family {family} requires parameter `{name}`")]
    MissingParameter { family: BarrierFamily, name: &'static str },
    #[error("parameter domain violation: {0}")]
    ParamDomain(String),
    #[error("family {family} cannot be evaluated on this ball")]
    FamilyMismatch { family: BarrierFamily },
    #[error("shift level H = {h} is below sup Z = {sup}")]
    ShiftBelowSup { h: f64, sup: f64 },
    #[error("no parameter in the window ({lo}, {hi}] passes verification")]
    InfeasibleWindow { lo: f64, hi: f64 },
    #[error("family {0} has no searchable parameter")]
    NotSearchable(BarrierFamily),
    #[error("radial verification requires a combinatorial-metric potential")]
    PotentialMetric,
    #[error("unknown barrier family `{0}`")]
    UnknownFamily(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierFamily {
    TreePower,
    TreeLog,
    GrowthGauge,
    LatticePower,
    LatticeLog,
    LatticeInverse,
    TreeInverse,
}

impl fmt::Display for BarrierFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BarrierFamily::TreePower => "tree_power",
            BarrierFamily::TreeLog => "tree_log",
            BarrierFamily::GrowthGauge => "growth_gauge",
            BarrierFamily::LatticePower => "lattice_power",
            BarrierFamily::LatticeLog => "lattice_log",
            BarrierFamily::LatticeInverse => "lattice_inverse",
            BarrierFamily::TreeInverse => "tree_inverse",
        };
        f.write_str(s)
    }
}

impl FromStr for BarrierFamily {
    type Err = BarrierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree_power" => Ok(BarrierFamily::TreePower),
            "tree_log" => Ok(BarrierFamily::TreeLog),
            "growth_gauge" => Ok(BarrierFamily::GrowthGauge),
            "lattice_power" => Ok(BarrierFamily::LatticePower),
            "lattice_log" => Ok(BarrierFamily::LatticeLog),
            "lattice_inverse" => Ok(BarrierFamily::LatticeInverse),
            "tree_inverse" => Ok(BarrierFamily::TreeInverse),
            _ => Err(BarrierError::UnknownFamily(s.to_string())),
        }
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum Direction {
    /// wants `(1/V) Delta Z >= -1`
    Sub,
    /// wants `(1/V) Delta h <= -1`
    Super,
}

/// One of the closed-form barrier families with its free parameters.
///
/// * `tree_power`     `Z(r) = -M r^(1-alpha) - 1`
/// * `tree_log`       `Z(r) = -M log(2 + r)`
/// * `growth_gauge`   `-r^(1-alpha)` / `-log r` (combinatorial), or
///   `-|x|^(2-alpha)` / `-log |x|` (Euclidean), extended by a constant
///   inside its natural range
/// * `lattice_power`  `Z(x) = -K |x|^(2 beta) - 1`
/// * `lattice_log`    `Z(x) = -K log(|x|^2 + 2)`
/// * `lattice_inverse` `h(x) = sigma / (K + |x|^2)^gamma`
/// * `tree_inverse`   `h(x) = (1 + r)^(-beta)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub family: BarrierFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// When set, parameter ranges outside each lemma's validity window are
    /// rejected instead of evaluated.
    #[serde(default = "default_strict")]
    pub strict: bool,
}

fn default_strict() -> bool {
    true
}

/// Context needed by the strict parameter checks: lattice dimension and the
/// exponent of a power branching function, when known.
#[derive(Debug, Default, Copy, Clone)]
pub struct DomainInfo {
    pub n: Option<usize>,
    pub tree_power_exponent: Option<u32>,
}

impl DomainInfo {
    fn from_ball(ball: &GraphBall) -> DomainInfo {
        match ball.family() {
            BallFamily::Tree(spec) => DomainInfo {
                n: None,
                tree_power_exponent: spec.branching.power_exponent(),
            },
            BallFamily::Lattice(spec) => DomainInfo { n: Some(spec.n), tree_power_exponent: None },
            BallFamily::Custom => DomainInfo::default(),
        }
    }
}

impl BarrierSpec {
    pub fn new(family: BarrierFamily) -> BarrierSpec {
        BarrierSpec {
            family,
            m: None,
            k: None,
            beta: None,
            gamma: None,
            sigma: None,
            alpha: None,
            strict: true,
        }
    }

    pub fn with(mut self, set: impl FnOnce(&mut BarrierSpec)) -> BarrierSpec {
        set(&mut self);
        self
    }

    pub fn direction(&self) -> Direction {
        match self.family {
            BarrierFamily::TreePower
            | BarrierFamily::TreeLog
            | BarrierFamily::GrowthGauge
            | BarrierFamily::LatticePower
            | BarrierFamily::LatticeLog => Direction::Sub,
            BarrierFamily::LatticeInverse | BarrierFamily::TreeInverse => Direction::Super,
        }
    }

    /// The family's multiplicative constant (`M`, `K` or `sigma`), when one
    /// exists.
    pub fn primary_parameter(&self) -> Option<f64> {
        match self.family {
            BarrierFamily::TreePower | BarrierFamily::TreeLog => self.m,
            BarrierFamily::LatticePower | BarrierFamily::LatticeLog => self.k,
            BarrierFamily::LatticeInverse => self.sigma,
            BarrierFamily::GrowthGauge | BarrierFamily::TreeInverse => None,
        }
    }

    fn is_tree_family(&self) -> bool {
        matches!(
            self.family,
            BarrierFamily::TreePower | BarrierFamily::TreeLog | BarrierFamily::TreeInverse
        )
    }

    fn is_lattice_family(&self) -> bool {
        matches!(
            self.family,
            BarrierFamily::LatticePower | BarrierFamily::LatticeLog | BarrierFamily::LatticeInverse
        )
    }

    fn require(&self, value: Option<f64>, name: &'static str) -> Result<f64, BarrierError> {
        value.ok_or(BarrierError::MissingParameter { family: self.family, name })
    }

    /// Validates parameter presence, and in strict mode the validity window
    /// of each family.
    pub fn check_params(&self, ctx: &DomainInfo) -> Result<(), BarrierError> {
        let fail = |msg: String| Err(BarrierError::ParamDomain(msg));
        match self.family {
            BarrierFamily::TreePower => {
                let m = self.require(self.m, "M")?;
                let alpha = self.require(self.alpha, "alpha")?;
                if self.strict {
                    if !(m > 0.0) {
                        return fail(format!("tree_power needs M > 0, got {m}"));
                    }
                    if !(0.0..1.0).contains(&alpha) {
                        return fail(format!("tree_power needs alpha in [0, 1), got {alpha}"));
                    }
                }
            }
            BarrierFamily::TreeLog => {
                let m = self.require(self.m, "M")?;
                if self.strict && !(m > 0.0) {
                    return fail(format!("tree_log needs M > 0, got {m}"));
                }
            }
            BarrierFamily::GrowthGauge => {
                let alpha = self.require(self.alpha, "alpha")?;
                if self.strict && !(alpha >= 0.0) {
                    return fail(format!("growth_gauge needs alpha >= 0, got {alpha}"));
                }
            }
            BarrierFamily::LatticePower => {
                let k = self.require(self.k, "K")?;
                let beta = self.require(self.beta, "beta")?;
                if self.strict {
                    let alpha = self.require(self.alpha, "alpha")?;
                    if !(k > 0.0) {
                        return fail(format!("lattice_power needs K > 0, got {k}"));
                    }
                    if !(0.0..2.0).contains(&alpha) {
                        return fail(format!("lattice_power needs alpha in [0, 2), got {alpha}"));
                    }
                    let top = (2.0 - alpha) / 2.0;
                    if !(beta > 0.0 && beta < top) {
                        return fail(format!(
                            "lattice_power needs 0 < beta < (2 - alpha)/2 = {top}, got {beta}"
                        ));
                    }
                }
            }
            BarrierFamily::LatticeLog => {
                let k = self.require(self.k, "K")?;
                if self.strict && !(k > 0.0) {
                    return fail(format!("lattice_log needs K > 0, got {k}"));
                }
            }
            BarrierFamily::LatticeInverse => {
                let sigma = self.require(self.sigma, "sigma")?;
                let k = self.require(self.k, "K")?;
                let gamma = self.require(self.gamma, "gamma")?;
                if self.strict {
                    let alpha = self.require(self.alpha, "alpha")?;
                    if !(sigma > 0.0) {
                        return fail(format!("lattice_inverse needs sigma > 0, got {sigma}"));
                    }
                    if let Some(n) = ctx.n {
                        if n < 3 {
                            return fail(format!("lattice_inverse needs dimension n >= 3, got {n}"));
                        }
                        let top = (n as f64 - 2.0) / 2.0;
                        if !(gamma > 0.0 && gamma < top) {
                            return fail(format!(
                                "lattice_inverse needs 0 < gamma < (n - 2)/2 = {top}, got {gamma}"
                            ));
                        }
                    } else if !(gamma > 0.0) {
                        return fail(format!("lattice_inverse needs gamma > 0, got {gamma}"));
                    }
                    if !(gamma <= (alpha - 2.0) / 2.0) {
                        return fail(format!(
                            "lattice_inverse needs gamma <= (alpha - 2)/2 = {}, got {gamma}",
                            (alpha - 2.0) / 2.0
                        ));
                    }
                    if !(k > (gamma + 1.0) / 2.0) {
                        return fail(format!(
                            "lattice_inverse needs K > (gamma + 1)/2 = {}, got {k}",
                            (gamma + 1.0) / 2.0
                        ));
                    }
                }
            }
            BarrierFamily::TreeInverse => {
                let beta = self.require(self.beta, "beta")?;
                if self.strict {
                    if !(beta > 0.0) {
                        return fail(format!("tree_inverse needs beta > 0, got {beta}"));
                    }
                    if let (Some(p), Some(alpha)) = (ctx.tree_power_exponent, self.alpha) {
                        let top = alpha + p as f64 - 1.0;
                        if !(beta < top) {
                            return fail(format!(
                                "tree_inverse needs beta < alpha + p - 1 = {top}, got {beta}"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Barrier value as a function of the combinatorial layer (tree-metric
    /// families and the combinatorial gauge).
    pub fn tree_value(&self, r: f64) -> Result<f64, BarrierError> {
        match self.family {
            BarrierFamily::TreePower => {
                let m = self.require(self.m, "M")?;
                let alpha = self.require(self.alpha, "alpha")?;
                Ok(-m * r.powf(1.0 - alpha) - 1.0)
            }
            BarrierFamily::TreeLog => {
                let m = self.require(self.m, "M")?;
                Ok(-m * (2.0 + r).ln())
            }
            BarrierFamily::TreeInverse => {
                let beta = self.require(self.beta, "beta")?;
                Ok((1.0 + r).powf(-beta))
            }
            BarrierFamily::GrowthGauge => {
                let alpha = self.require(self.alpha, "alpha")?;
                let anchored = if r > 1.0 { r } else { 2.0 };
                if alpha < 1.0 {
                    Ok(-anchored.powf(1.0 - alpha))
                } else {
                    Ok(-anchored.ln())
                }
            }
            _ => Err(BarrierError::FamilyMismatch { family: self.family }),
        }
    }

    /// Barrier value as a function of the squared Euclidean norm `t = |x|^2`
    /// (lattice families and the Euclidean gauge). `n` fixes the constant
    /// extension anchor of the gauge.
    pub fn lattice_value(&self, t: f64, n: usize) -> Result<f64, BarrierError> {
        match self.family {
            BarrierFamily::LatticePower => {
                let k = self.require(self.k, "K")?;
                let beta = self.require(self.beta, "beta")?;
                Ok(-k * t.powf(beta) - 1.0)
            }
            BarrierFamily::LatticeLog => {
                let k = self.require(self.k, "K")?;
                Ok(-k * (t + 2.0).ln())
            }
            BarrierFamily::LatticeInverse => {
                let sigma = self.require(self.sigma, "sigma")?;
                let k = self.require(self.k, "K")?;
                let gamma = self.require(self.gamma, "gamma")?;
                Ok(sigma / (k + t).powf(gamma))
            }
            BarrierFamily::GrowthGauge => {
                let alpha = self.require(self.alpha, "alpha")?;
                // smallest |x| > 2 realized on Z^n: |x|^2 = 5 for n >= 2, 9 for n = 1
                let anchor = if n >= 2 { 5.0 } else { 9.0 };
                let t = if t > 4.0 { t } else { anchor };
                let norm = t.sqrt();
                if alpha < 2.0 {
                    Ok(-norm.powf(2.0 - alpha))
                } else {
                    Ok(-norm.ln())
                }
            }
            _ => Err(BarrierError::FamilyMismatch { family: self.family }),
        }
    }

    /// Tabulates the barrier on every vertex (interior and halo) of the ball.
    pub fn evaluate(&self, ball: &GraphBall) -> Result<Field, BarrierError> {
        self.check_params(&DomainInfo::from_ball(ball))?;
        let use_tree_metric = match ball.family() {
            BallFamily::Tree(_) | BallFamily::Custom => {
                if self.is_lattice_family() && !ball.has_euclidean_metric() {
                    return Err(BarrierError::FamilyMismatch { family: self.family });
                }
                !self.is_lattice_family()
            }
            BallFamily::Lattice(_) => {
                if self.is_tree_family() {
                    return Err(BarrierError::FamilyMismatch { family: self.family });
                }
                false
            }
        };
        let n = match ball.family() {
            BallFamily::Lattice(spec) => spec.n,
            _ => 0,
        };
        let mut values = Vec::with_capacity(ball.vertex_count());
        for v in 0..ball.vertex_count() as Vertex {
            let z = if use_tree_metric {
                self.tree_value(ball.rho(v) as f64)?
            } else {
                let t = ball
                    .euclid_norm2(v)
                    .ok_or(BarrierError::FamilyMismatch { family: self.family })?;
                self.lattice_value(t as f64, n)?
            };
            values.push(z);
        }
        Field::from_values(ball, values).map_err(BarrierError::from)
    }

    /// Tabulates a tree-metric barrier on layers `0..=radius+1`.
    pub fn evaluate_radial(&self, radius: u32) -> Result<Vec<f64>, BarrierError> {
        if self.is_lattice_family() {
            return Err(BarrierError::FamilyMismatch { family: self.family });
        }
        (0..=radius + 1).map(|r| self.tree_value(r as f64)).collect()
    }
}

/// `Zbar = Z - H - 1` for `H >= sup Z`; the result is `<= -1` everywhere and
/// inherits `Delta Zbar - V Zbar >= 0` wherever `Delta Z >= -V` held.
pub fn shift(z: &Field, h: f64) -> Result<Field, BarrierError> {
    let sup = z.max();
    if h < sup {
        return Err(BarrierError::ShiftBelowSup { h, sup });
    }
    Ok(z.map(|v| v - h - 1.0))
}

/// Verification outcome; serialized as
/// `{pass, margin, worst_vertex, R0, parameter}`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub margin: f64,
    pub worst_vertex: String,
    #[serde(rename = "R0")]
    pub r0: Option<f64>,
    pub parameter: Option<f64>,
    /// Radius actually verified; a pass certifies the ball, not the graph.
    pub verified_radius: f64,
}

/// Where a barrier is verified: a concrete ball, or the radial reduction of
/// a spherically symmetric tree (exact by the one-dimensional Laplacian
/// formula, and far cheaper for large radii).
#[derive(Copy, Clone)]
pub enum Domain<'a> {
    Ball(&'a GraphBall),
    TreeRadial { branching: &'a Branching, radius: u32 },
}

impl<'a> Domain<'a> {
    fn info(&self) -> DomainInfo {
        match self {
            Domain::Ball(ball) => DomainInfo::from_ball(ball),
            Domain::TreeRadial { branching, .. } => DomainInfo {
                n: None,
                tree_power_exponent: branching.power_exponent(),
            },
        }
    }

    fn verified_radius(&self) -> f64 {
        match self {
            Domain::Ball(ball) => match ball.family() {
                BallFamily::Lattice(spec) => spec.radius,
                _ => ball.max_interior_rho() as f64,
            },
            Domain::TreeRadial { radius, .. } => *radius as f64,
        }
    }
}

/// Normalized margin `(1/V) Delta z + 1` at one location.
struct MarginSample {
    /// layer index (tree metric) or squared norm (Euclidean metric)
    key: u64,
    label: String,
    margin: f64,
}

/// Lattice families (and the gauge on lattice balls) shell by `|x|^2`;
/// everything else layers by the combinatorial distance.
fn uses_euclid_key(spec: &BarrierSpec, ball: &GraphBall) -> bool {
    spec.is_lattice_family()
        || (spec.family == BarrierFamily::GrowthGauge
            && matches!(ball.family(), BallFamily::Lattice(_)))
}

fn ball_margins(
    spec: &BarrierSpec,
    ball: &GraphBall,
    potential: &Potential,
) -> Result<Vec<MarginSample>, BarrierError> {
    let z = spec.evaluate(ball)?;
    let v_values = potential.evaluate(ball)?;
    let euclid_key = uses_euclid_key(spec, ball);
    let mut out = Vec::with_capacity(ball.interior().len());
    for &x in ball.interior() {
        let lap = laplacian_apply(ball, &z, x)?;
        let margin = lap / v_values[x as usize] + 1.0;
        let key = if euclid_key {
            ball.euclid_norm2(x).ok_or(BarrierError::FamilyMismatch { family: spec.family })?
        } else {
            ball.rho(x) as u64
        };
        out.push(MarginSample { key, label: ball.vertex_id(x), margin });
    }
    Ok(out)
}

fn radial_margins(
    spec: &BarrierSpec,
    branching: &Branching,
    radius: u32,
    potential: &Potential,
) -> Result<Vec<MarginSample>, BarrierError> {
    if potential.metric() != Metric::Combinatorial {
        return Err(BarrierError::PotentialMetric);
    }
    let z = spec.evaluate_radial(radius)?;
    let mut out = Vec::with_capacity(radius as usize + 1);
    for r in 0..=radius as usize {
        let lap = if r == 0 {
            branching.value_f64(0) * (z[1] - z[0])
        } else {
            branching.value_f64(r as u32) * (z[r + 1] - z[r]) + (z[r - 1] - z[r])
        };
        let v = potential.value_at_dist(r as f64);
        out.push(MarginSample {
            key: r as u64,
            label: format!("{r}:0"),
            margin: lap / v + 1.0,
        });
    }
    Ok(out)
}

fn margins_for(
    spec: &BarrierSpec,
    domain: &Domain<'_>,
    potential: &Potential,
) -> Result<Vec<MarginSample>, BarrierError> {
    spec.check_params(&domain.info())?;
    match domain {
        Domain::Ball(ball) => ball_margins(spec, ball, potential),
        Domain::TreeRadial { branching, radius } => {
            radial_margins(spec, branching, *radius, potential)
        }
    }
}

fn key_to_dist(spec: &BarrierSpec, domain: &Domain<'_>, key: u64) -> f64 {
    let euclid = match domain {
        Domain::Ball(ball) => uses_euclid_key(spec, ball),
        Domain::TreeRadial { .. } => false,
    };
    if euclid {
        (key as f64).sqrt()
    } else {
        key as f64
    }
}

fn sub_report(samples: &[MarginSample], tolerance: f64) -> (bool, f64, String) {
    let mut margin = f64::INFINITY;
    let mut worst = String::new();
    for s in samples {
        if s.margin < margin {
            margin = s.margin;
            worst = s.label.clone();
        }
    }
    (margin >= -tolerance, margin, worst)
}

/// Super-direction scan: smallest key `>= 1` from which the suffix maximum
/// of the margins stays `<= tolerance`.
fn super_scan(samples: &[MarginSample], tolerance: f64) -> (Option<u64>, f64, String) {
    let mut shells: BTreeMap<u64, f64> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.key >= 1) {
        let cur = shells.entry(s.key).or_insert(f64::NEG_INFINITY);
        *cur = cur.max(s.margin);
    }
    if shells.is_empty() {
        return (None, f64::NEG_INFINITY, String::new());
    }
    let keys: Vec<u64> = shells.keys().copied().collect();
    let mut cutoff = None;
    let mut running = f64::NEG_INFINITY;
    for &k in keys.iter().rev() {
        running = running.max(shells[&k]);
        if running <= tolerance {
            cutoff = Some(k);
        } else {
            break;
        }
    }
    let from = cutoff.unwrap_or(keys[0]);
    let mut margin = f64::NEG_INFINITY;
    let mut worst = String::new();
    for s in samples.iter().filter(|s| s.key >= from) {
        if s.margin > margin {
            margin = s.margin;
            worst = s.label.clone();
        }
    }
    (cutoff, margin, worst)
}

fn report_from_samples(
    spec: &BarrierSpec,
    domain: &Domain<'_>,
    samples: &[MarginSample],
    tolerance: f64,
) -> VerifyReport {
    match spec.direction() {
        Direction::Sub => {
            let (pass, margin, worst) = sub_report(samples, tolerance);
            VerifyReport {
                pass,
                margin,
                worst_vertex: worst,
                r0: None,
                parameter: spec.primary_parameter(),
                verified_radius: domain.verified_radius(),
            }
        }
        Direction::Super => {
            let (cutoff, margin, worst) = super_scan(samples, tolerance);
            VerifyReport {
                pass: cutoff.is_some(),
                margin,
                worst_vertex: worst,
                r0: cutoff.map(|k| key_to_dist(spec, domain, k)),
                parameter: spec.primary_parameter(),
                verified_radius: domain.verified_radius(),
            }
        }
    }
}

/// Pointwise verification of the barrier inequality over a ball's interior
/// (sub direction: minimum of `(1/V) Delta Z + 1` over all interior
/// vertices; super direction: outward scan for the smallest cutoff).
pub fn verify(
    spec: &BarrierSpec,
    ball: &GraphBall,
    potential: &Potential,
    tolerance: f64,
) -> Result<VerifyReport, BarrierError> {
    verify_on(spec, &Domain::Ball(ball), potential, tolerance)
}

/// Radial verification on a spherically symmetric tree, exact for
/// spherically symmetric barriers and O(radius).
pub fn verify_radial(
    spec: &BarrierSpec,
    branching: &Branching,
    radius: u32,
    potential: &Potential,
    tolerance: f64,
) -> Result<VerifyReport, BarrierError> {
    verify_on(spec, &Domain::TreeRadial { branching, radius }, potential, tolerance)
}

pub fn verify_on(
    spec: &BarrierSpec,
    domain: &Domain<'_>,
    potential: &Potential,
    tolerance: f64,
) -> Result<VerifyReport, BarrierError> {
    let samples = margins_for(spec, domain, potential)?;
    Ok(report_from_samples(spec, domain, &samples, tolerance))
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum SearchParam {
    M,
    K,
    Sigma,
}

impl SearchParam {
    pub fn infer(family: BarrierFamily) -> Result<SearchParam, BarrierError> {
        match family {
            BarrierFamily::TreePower | BarrierFamily::TreeLog => Ok(SearchParam::M),
            BarrierFamily::LatticePower | BarrierFamily::LatticeLog => Ok(SearchParam::K),
            BarrierFamily::LatticeInverse => Ok(SearchParam::Sigma),
            f => Err(BarrierError::NotSearchable(f)),
        }
    }
}

impl FromStr for SearchParam {
    type Err = BarrierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" | "m" => Ok(SearchParam::M),
            "K" | "k" => Ok(SearchParam::K),
            "sigma" | "Sigma" => Ok(SearchParam::Sigma),
            _ => Err(BarrierError::UnknownFamily(format!("search parameter `{s}`"))),
        }
    }
}

/// Search result; serializes as the verification report of the found
/// parameter (whose `parameter` field carries the found value).
#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    #[serde(skip)]
    pub parameter: f64,
    #[serde(flatten)]
    pub report: VerifyReport,
}

fn with_parameter(template: &BarrierSpec, which: SearchParam, value: f64) -> BarrierSpec {
    let mut spec = template.clone();
    match which {
        SearchParam::M => spec.m = Some(value),
        SearchParam::K => spec.k = Some(value),
        SearchParam::Sigma => spec.sigma = Some(value),
    }
    spec
}

/// Bisection for the under-determined multiplicative constant.
///
/// The margins of every searchable family are affine in the constant with
/// value 1 at zero, so the pass predicate is monotone: the feasible set is
/// an interval touching 0 (sub families, largest passing `M`/`K` wanted) or
/// extending to infinity (super family, smallest passing `sigma` wanted).
/// The predicate evaluates the ordinary verification path, so the returned
/// candidate's report is the one the bisection actually saw.
pub fn search_parameter(
    template: &BarrierSpec,
    domain: &Domain<'_>,
    potential: &Potential,
    which: SearchParam,
    window: (f64, f64),
    iterations: u32,
    tolerance: f64,
) -> Result<SearchOutcome, BarrierError> {
    match (which, SearchParam::infer(template.family)?) {
        (a, b) if a == b => {}
        (a, b) => {
            return Err(BarrierError::ParamDomain(format!(
                "family {} searches {:?}, not {:?}",
                template.family, b, a
            )))
        }
    }
    let (lo_win, hi_win) = window;
    if !(hi_win > lo_win && lo_win >= 0.0) {
        return Err(BarrierError::ParamDomain(format!("bad search window ({lo_win}, {hi_win}]")));
    }

    // validate the template once at an arbitrary admissible value
    margins_for(&with_parameter(template, which, 1.0), domain, potential)?;

    // a super-direction candidate must cover the whole claimed range: the
    // inequality has to hold from the first shell out, not merely on some
    // outer suffix
    let innermost: Option<u64> = match domain {
        Domain::Ball(ball) => {
            let euclid = uses_euclid_key(template, ball);
            ball.interior()
                .iter()
                .map(|&v| {
                    if euclid {
                        ball.euclid_norm2(v).unwrap_or(0)
                    } else {
                        ball.rho(v) as u64
                    }
                })
                .filter(|&k| k >= 1)
                .min()
        }
        Domain::TreeRadial { .. } => Some(1),
    };

    let passes = |c: f64| -> Result<bool, BarrierError> {
        let spec = with_parameter(template, which, c);
        let report = verify_on(&spec, domain, potential, tolerance)?;
        match spec.direction() {
            Direction::Sub => Ok(report.pass),
            Direction::Super => {
                let needed = innermost.map(|k| key_to_dist(&spec, domain, k));
                Ok(report.pass && report.r0 == needed)
            }
        }
    };

    let found = match template.direction() {
        Direction::Sub => {
            // feasible set is (0, c*]; return the largest passing value
            if passes(hi_win)? {
                hi_win
            } else {
                let mut lo = lo_win;
                let mut hi = hi_win;
                if lo > 0.0 && !passes(lo)? {
                    return Err(BarrierError::InfeasibleWindow { lo: lo_win, hi: hi_win });
                }
                for _ in 0..iterations {
                    let mid = 0.5 * (lo + hi);
                    if passes(mid)? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo <= lo_win {
                    return Err(BarrierError::InfeasibleWindow { lo: lo_win, hi: hi_win });
                }
                lo
            }
        }
        Direction::Super => {
            // feasible set is [c*, inf); return the smallest passing value
            if !passes(hi_win)? {
                return Err(BarrierError::InfeasibleWindow { lo: lo_win, hi: hi_win });
            }
            let mut lo = lo_win;
            let mut hi = hi_win;
            for _ in 0..iterations {
                let mid = 0.5 * (lo + hi);
                if passes(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };

    let spec = with_parameter(template, which, found);
    let report = verify_on(&spec, domain, potential, tolerance)?;
    if !report.pass {
        return Err(BarrierError::Internal(format!(
            "bisection result {found} failed re-verification (margin {})",
            report.margin
        )));
    }
    Ok(SearchOutcome { parameter: found, report })
}

/// Closed-form margin scan over lattice shells `r_lo <= |x| <= r_hi`,
/// without building a ball: each margin only involves the barrier values at
/// a point and its 2n neighbors, all available in closed form. Returns the
/// per-shell worst margin (minimum for sub families, maximum for super),
/// keyed by the squared norm.
pub fn lattice_margin_by_shell(
    spec: &BarrierSpec,
    potential: &Potential,
    n: usize,
    r_lo: f64,
    r_hi: f64,
) -> Result<BTreeMap<u64, f64>, BarrierError> {
    if spec.is_tree_family() {
        return Err(BarrierError::FamilyMismatch { family: spec.family });
    }
    if potential.metric() != Metric::Euclidean {
        return Err(BarrierError::PotentialMetric);
    }
    spec.check_params(&DomainInfo { n: Some(n), tree_power_exponent: None })?;
    if n == 0 || !(r_hi >= r_lo && r_lo >= 0.0) {
        return Err(BarrierError::ParamDomain(format!("bad shell range [{r_lo}, {r_hi}]")));
    }

    let t_lo = r_lo * r_lo;
    let t_hi = r_hi * r_hi;
    let is_sub = spec.direction() == Direction::Sub;
    let m = r_hi.ceil() as i64;
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();

    let mut coords = vec![-m; n];
    'sweep: loop {
        let t = crate::graph::norm2(&coords);
        let tf = t as f64;
        if tf >= t_lo - 1e-12 && tf <= t_hi + 1e-12 {
            let z_here = spec.lattice_value(tf, n)?;
            let mut acc = 0.0;
            for &c in &coords {
                let up = tf + 2.0 * c as f64 + 1.0;
                let down = tf - 2.0 * c as f64 + 1.0;
                acc += spec.lattice_value(up, n)? + spec.lattice_value(down, n)? - 2.0 * z_here;
            }
            let lap = acc / (2.0 * n as f64);
            let margin = lap / potential.value_at_dist(tf.sqrt()) + 1.0;
            out.entry(t)
                .and_modify(|cur| {
                    *cur = if is_sub { cur.min(margin) } else { cur.max(margin) };
                })
                .or_insert(margin);
        }
        for k in (0..n).rev() {
            coords[k] += 1;
            if coords[k] <= m {
                continue 'sweep;
            }
            coords[k] = -m;
        }
        break;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice_ball, build_tree_ball, LatticeSpec, TreeSpec};
    use crate::operators::{classify, schrodinger_residual, SolutionClass};

    fn tree_ball(b0: u64, radius: u32) -> GraphBall {
        build_tree_ball(&TreeSpec { branching: Branching::Constant { b0 }, radius }).unwrap()
    }

    fn tree_power_spec(m: f64, alpha: f64) -> BarrierSpec {
        BarrierSpec::new(BarrierFamily::TreePower).with(|s| {
            s.m = Some(m);
            s.alpha = Some(alpha);
        })
    }

    #[test]
    fn evaluate_hand_values() {
        let spec = tree_power_spec(1.0, 0.0);
        assert_eq!(spec.tree_value(3.0).unwrap(), -4.0);

        let log_spec = BarrierSpec::new(BarrierFamily::LatticeLog).with(|s| s.k = Some(1.0));
        assert!((log_spec.lattice_value(0.0, 3).unwrap() + 2.0f64.ln()).abs() < 1e-15);

        let inv = BarrierSpec::new(BarrierFamily::LatticeInverse).with(|s| {
            s.sigma = Some(1.0);
            s.k = Some(1.0);
            s.gamma = Some(0.5);
            s.alpha = Some(3.0);
        });
        assert!((inv.lattice_value(3.0, 3).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_examples_and_law() {
        let ball = tree_ball(2, 3);
        let zero = Field::zeros(&ball);
        let shifted = shift(&zero, 0.0).unwrap();
        assert!(shifted.values().iter().all(|&v| v == -1.0));
        assert!(shift(&zero, -0.5).is_err());

        // tree_power with M > 0 has sup Z = Z(0) = -1; H = -1 leaves Z unchanged
        let spec = tree_power_spec(0.5, 0.0);
        let z = spec.evaluate(&ball).unwrap();
        assert_eq!(z.max(), -1.0);
        let zbar = shift(&z, -1.0).unwrap();
        for v in 0..ball.vertex_count() as u32 {
            assert_eq!(zbar.value(v), z.value(v));
        }

        // shift law: a verified sub-barrier turns into a nonnegative-residual field
        let v = Potential::power(1.0, 0.0, Metric::Combinatorial);
        let report = verify(&spec, &ball, &v, DEFAULT_TOLERANCE).unwrap();
        assert!(report.pass);
        let zbar = shift(&z, z.max()).unwrap();
        assert!(zbar.max() <= -1.0);
        let res = schrodinger_residual(&ball, &v, &zbar, &Field::zeros(&ball)).unwrap();
        assert!(res.iter().all(|&r| r >= -1e-9));
        assert!(matches!(
            classify(&res, 1e-9),
            SolutionClass::Subsolution | SolutionClass::Solution
        ));
    }

    #[test]
    fn verify_tree_power_hand_computation() {
        let ball = tree_ball(2, 6);
        let v = Potential::power(1.0, 0.0, Metric::Combinatorial);
        // Delta Z(o) = -2M and Delta Z(r) = -M for r >= 1; M = 0.5 is exactly critical
        let pass = verify(&tree_power_spec(0.5, 0.0), &ball, &v, 1e-12).unwrap();
        assert!(pass.pass, "margin {}", pass.margin);
        assert!((pass.margin - 0.0).abs() < 1e-12);
        assert_eq!(pass.worst_vertex, "0:0");

        let fail = verify(&tree_power_spec(3.0, 0.0), &ball, &v, 1e-9).unwrap();
        assert!(!fail.pass);
        assert!((fail.margin + 5.0).abs() < 1e-12);
    }

    #[test]
    fn radial_and_full_verification_agree() {
        let branching = Branching::Constant { b0: 2 };
        let ball = tree_ball(2, 6);
        let v = Potential::power(1.0, 0.5, Metric::Combinatorial);
        let spec = tree_power_spec(0.3, 0.5);
        let full = verify(&spec, &ball, &v, DEFAULT_TOLERANCE).unwrap();
        let radial = verify_radial(&spec, &branching, 6, &v, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(full.pass, radial.pass);
        assert!((full.margin - radial.margin).abs() < 1e-12);
    }

    #[test]
    fn constant_function_fails_as_super_barrier() {
        // beta = 0 gives h == 1; (1/V) Delta h = 0, margin 1 > tol at every layer
        let mut spec = BarrierSpec::new(BarrierFamily::TreeInverse).with(|s| s.beta = Some(0.0));
        spec.strict = false;
        let report =
            verify_radial(&spec, &Branching::Power { p: 2 }, 50, &Potential::power(1.0, 1.0, Metric::Combinatorial), 1e-9)
                .unwrap();
        assert!(!report.pass);
        assert_eq!(report.r0, None);
        assert!((report.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tree_inverse_super_barrier_cutoff() {
        // p = 2, alpha = 1, beta = 1: (1/V) Delta h <= -1 from layer 2 onward
        let spec = BarrierSpec::new(BarrierFamily::TreeInverse).with(|s| {
            s.beta = Some(1.0);
            s.alpha = Some(1.0);
        });
        let v = Potential::power(1.0, 1.0, Metric::Combinatorial);
        let report = verify_radial(&spec, &Branching::Power { p: 2 }, 1000, &v, 1e-9).unwrap();
        assert!(report.pass);
        assert_eq!(report.r0, Some(2.0));
    }

    #[test]
    fn search_finds_critical_m_on_tree() {
        let v = Potential::power(1.0, 0.0, Metric::Combinatorial);
        let template = BarrierSpec::new(BarrierFamily::TreePower).with(|s| s.alpha = Some(0.0));
        let outcome = search_parameter(
            &template,
            &Domain::TreeRadial { branching: &Branching::Constant { b0: 2 }, radius: 200 },
            &v,
            SearchParam::M,
            DEFAULT_WINDOW,
            DEFAULT_ITERATIONS,
            0.0,
        )
        .unwrap();
        assert!((outcome.parameter - 0.5).abs() < 1e-9, "M* = {}", outcome.parameter);
        assert!(outcome.report.pass);
    }

    #[test]
    fn search_monotone_margin_bound() {
        // the feasible boundary produced by bisection is within 2^-iters * window
        let v = Potential::power(1.0, 0.0, Metric::Combinatorial);
        let template = BarrierSpec::new(BarrierFamily::TreePower).with(|s| s.alpha = Some(0.0));
        let domain = Domain::TreeRadial { branching: &Branching::Constant { b0: 2 }, radius: 50 };
        let coarse =
            search_parameter(&template, &domain, &v, SearchParam::M, (0.0, 10.0), 20, 0.0).unwrap();
        assert!((coarse.parameter - 0.5).abs() <= 10.0 / (1 << 20) as f64 + 1e-12);
        // a slightly larger parameter must fail
        let beyond = with_parameter(&template, SearchParam::M, 0.5 + 1e-6);
        let report = verify_on(&beyond, &domain, &v, 0.0).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn strict_mode_rejects_bad_lattice_beta() {
        let ball = build_lattice_ball(&LatticeSpec { n: 3, radius: 3.0 }).unwrap();
        let v = Potential::power(1.0, 1.0, Metric::Euclidean);
        let spec = BarrierSpec::new(BarrierFamily::LatticePower).with(|s| {
            s.k = Some(0.1);
            s.beta = Some(0.9);
            s.alpha = Some(1.0);
        });
        assert!(matches!(
            verify(&spec, &ball, &v, 1e-9),
            Err(BarrierError::ParamDomain(_))
        ));
    }

    #[test]
    fn lattice_inverse_needs_three_dimensions() {
        let spec = BarrierSpec::new(BarrierFamily::LatticeInverse).with(|s| {
            s.sigma = Some(1.0);
            s.k = Some(2.0);
            s.gamma = Some(0.45);
            s.alpha = Some(3.0);
        });
        let ctx2 = DomainInfo { n: Some(2), tree_power_exponent: None };
        assert!(spec.check_params(&ctx2).is_err());
        let ctx3 = DomainInfo { n: Some(3), tree_power_exponent: None };
        assert!(spec.check_params(&ctx3).is_ok());
    }

    #[test]
    fn gauge_diverges_along_layers() {
        for alpha in [0.0, 0.5, 1.0] {
            let gauge = BarrierSpec::new(BarrierFamily::GrowthGauge).with(|s| s.alpha = Some(alpha));
            let mut prev = gauge.tree_value(2.0).unwrap();
            for r in [10.0, 100.0, 1000.0, 10000.0] {
                let z = gauge.tree_value(r).unwrap();
                assert!(z < prev);
                prev = z;
            }
            assert!(prev < -5.0);
        }
    }

    #[test]
    fn shell_scan_matches_ball_verification() {
        let spec = BarrierSpec::new(BarrierFamily::LatticePower).with(|s| {
            s.k = Some(0.2);
            s.beta = Some(0.4);
            s.alpha = Some(1.0);
        });
        let v = Potential::power(1.0, 1.0, Metric::Euclidean);
        let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 8.0 }).unwrap();
        let scan = lattice_margin_by_shell(&spec, &v, 2, 0.0, 6.0).unwrap();

        // group the ball margins by shell and compare on shells fully inside
        let samples = ball_margins(&spec, &ball, &v).unwrap();
        let mut by_shell: BTreeMap<u64, f64> = BTreeMap::new();
        for s in samples {
            let cur = by_shell.entry(s.key).or_insert(f64::INFINITY);
            *cur = cur.min(s.margin);
        }
        for (t, margin) in &scan {
            if (*t as f64) <= 36.0 {
                let ball_margin = by_shell[t];
                assert!(
                    (margin - ball_margin).abs() < 1e-12,
                    "shell {t}: scan {margin}, ball {ball_margin}"
                );
            }
        }
    }

    #[test]
    fn missing_parameter_is_reported() {
        let spec = BarrierSpec::new(BarrierFamily::TreePower);
        assert!(matches!(
            spec.tree_value(1.0),
            Err(BarrierError::MissingParameter { name: "M", .. })
        ));
    }
}
