//! The weighted Laplacian, the Schrodinger operator `L = Delta - V`, and
//! sub/supersolution classification.
//!
//! `Delta f(x) = (1/mu(x)) * sum_y [f(y) - f(x)] omega(x,y)`, evaluated only
//! at interior vertices (halo vertices have incomplete neighborhoods in a
//! truncation, so the sum would be wrong there).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphBall, Vertex};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("operator evaluation at `{0}` rejected: not an interior vertex")]
    NotInterior(String),
    #[error("field has {got} values but the ball has {expected} vertices")]
    SizeMismatch { got: usize, expected: usize },
    #[error("field contains a non-finite value at `{0}`")]
    NonFinite(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("euclidean metric requested on a ball without Euclidean structure")]
    MetricMismatch,
}

/// Real-valued function on the vertex set of a ball, stored densely in
/// vertex-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn constant(ball: &GraphBall, c: f64) -> Field {
        Field { values: vec![c; ball.vertex_count()] }
    }

    pub fn zeros(ball: &GraphBall) -> Field {
        Field::constant(ball, 0.0)
    }

    pub fn from_fn(ball: &GraphBall, mut f: impl FnMut(Vertex) -> f64) -> Field {
        Field {
            values: (0..ball.vertex_count() as Vertex).map(|v| f(v)).collect(),
        }
    }

    pub fn from_values(ball: &GraphBall, values: Vec<f64>) -> Result<Field, OperatorError> {
        if values.len() != ball.vertex_count() {
            return Err(OperatorError::SizeMismatch {
                got: values.len(),
                expected: ball.vertex_count(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(OperatorError::NonFinite(ball.vertex_id(pos as Vertex)));
        }
        Ok(Field { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Vertex) -> f64 {
        self.values[v as usize]
    }

    pub fn set(&mut self, v: Vertex, x: f64) {
        self.values[v as usize] = x;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise transform, preserving the vertex alignment.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, vertices: &[Vertex]) -> f64 {
        vertices
            .iter()
            .map(|&v| self.value(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_on(&self, vertices: &[Vertex]) -> f64 {
        vertices.iter().map(|&v| self.value(v)).fold(f64::INFINITY, f64::min)
    }

    /// Writes the field as CSV with columns `vertex_id,value`.
    pub fn write_csv<W: Write>(&self, ball: &GraphBall, mut w: W) -> io::Result<()> {
        writeln!(w, "vertex_id,value")?;
        for v in 0..ball.vertex_count() as Vertex {
            writeln!(w, "{},{}", ball.vertex_id(v), self.value(v))?;
        }
        Ok(())
    }
}

/// Distance used when tabulating a potential or barrier on a ball.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Combinatorial,
    Euclidean,
}

/// Power-law potential `V(x) = c0 (1 + dist(x, center))^(-alpha)`, with the
/// distance taken in the combinatorial or the Euclidean metric. `floor`, when
/// set, clamps the tabulated values from below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    Power {
        c0: f64,
        alpha: f64,
        metric: Metric,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
    },
}

impl Potential {
    pub fn power(c0: f64, alpha: f64, metric: Metric) -> Potential {
        Potential::Power { c0, alpha, metric, floor: None }
    }

    pub fn from_json(s: &str) -> Result<Self, OperatorError> {
        let p: Potential =
            serde_json::from_str(s).map_err(|e| OperatorError::InvalidPotential(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), OperatorError> {
        let Potential::Power { c0, alpha, floor, .. } = self;
        if !(*c0 > 0.0) {
            return Err(OperatorError::InvalidPotential(format!("c0 must be positive, got {c0}")));
        }
        if !(*alpha >= 0.0) {
            return Err(OperatorError::InvalidPotential(format!(
                "alpha must be nonnegative, got {alpha}"
            )));
        }
        if let Some(fl) = floor {
            if !(*fl > 0.0) {
                return Err(OperatorError::InvalidPotential(format!(
                    "floor must be strictly positive, got {fl}"
                )));
            }
        }
        Ok(())
    }

    pub fn metric(&self) -> Metric {
        match self {
            Potential::Power { metric, .. } => *metric,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Potential::Power { alpha, .. } => *alpha,
        }
    }

    pub fn c0(&self) -> f64 {
        match self {
            Potential::Power { c0, .. } => *c0,
        }
    }

    /// Value at distance `d >= 0` from the center set.
    pub fn value_at_dist(&self, d: f64) -> f64 {
        let Potential::Power { c0, alpha, floor, .. } = self;
        let v = c0 * (1.0 + d).powf(-alpha);
        match floor {
            Some(fl) => v.max(*fl),
            None => v,
        }
    }

    pub fn value(&self, ball: &GraphBall, v: Vertex) -> Result<f64, OperatorError> {
        let d = match self.metric() {
            Metric::Combinatorial => ball.rho(v) as f64,
            Metric::Euclidean => {
                let t = ball.euclid_norm2(v).ok_or(OperatorError::MetricMismatch)?;
                (t as f64).sqrt()
            }
        };
        Ok(self.value_at_dist(d))
    }

    /// Tabulates the potential on every vertex of the ball.
    pub fn evaluate(&self, ball: &GraphBall) -> Result<Vec<f64>, OperatorError> {
        self.check()?;
        if self.metric() == Metric::Euclidean && !ball.has_euclidean_metric() {
            return Err(OperatorError::MetricMismatch);
        }
        (0..ball.vertex_count() as Vertex).map(|v| self.value(ball, v)).collect()
    }
}

/// Weighted Laplacian at an interior vertex.
pub fn laplacian_apply(ball: &GraphBall, f: &Field, x: Vertex) -> Result<f64, OperatorError> {
    if !ball.is_interior(x) {
        return Err(OperatorError::NotInterior(ball.vertex_id(x)));
    }
    let fx = f.value(x);
    let mut acc = 0.0;
    for (y, w) in ball.neighbors(x) {
        acc += (f.value(y) - fx) * w;
    }
    Ok(acc / ball.mu(x))
}

/// Residual `r(x) = Delta u(x) - V(x) u(x) - f(x)` of `L u = f` at every
/// interior vertex, aligned with `ball.interior()`.
pub fn schrodinger_residual(
    ball: &GraphBall,
    potential: &Potential,
    u: &Field,
    f: &Field,
) -> Result<Vec<f64>, OperatorError> {
    let v_values = potential.evaluate(ball)?;
    schrodinger_residual_with(ball, &v_values, u, f)
}

/// Residual against a tabulated potential (one value per ball vertex).
pub fn schrodinger_residual_with(
    ball: &GraphBall,
    v_values: &[f64],
    u: &Field,
    f: &Field,
) -> Result<Vec<f64>, OperatorError> {
    if v_values.len() != ball.vertex_count() {
        return Err(OperatorError::SizeMismatch {
            got: v_values.len(),
            expected: ball.vertex_count(),
        });
    }
    ball.interior()
        .iter()
        .map(|&x| {
            let lap = laplacian_apply(ball, u, x)?;
            Ok(lap - v_values[x as usize] * u.value(x) - f.value(x))
        })
        .collect()
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionClass {
    Subsolution,
    Supersolution,
    Solution,
    Neither,
}

/// Classifies a residual vector: a subsolution has `L u >= f`, i.e. residual
/// bounded below by `-tolerance`; a supersolution is bounded above by
/// `tolerance`; a solution is both.
pub fn classify(residual: &[f64], tolerance: f64) -> SolutionClass {
    assert!(tolerance >= 0.0, "tolerance must be nonnegative");
    let min = residual.iter().copied().fold(f64::INFINITY, f64::min);
    let max = residual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sub = residual.is_empty() || min >= -tolerance;
    let sup = residual.is_empty() || max <= tolerance;
    match (sub, sup) {
        (true, true) => SolutionClass::Solution,
        (true, false) => SolutionClass::Subsolution,
        (false, true) => SolutionClass::Supersolution,
        (false, false) => SolutionClass::Neither,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        build_lattice_ball, build_tree_ball, Branching, LatticeSpec, TreeSpec,
    };
    use proptest::prelude::*;

    fn tree(b0: u64, radius: u32) -> GraphBall {
        build_tree_ball(&TreeSpec { branching: Branching::Constant { b0 }, radius }).unwrap()
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let ball = tree(2, 3);
        let f = Field::constant(&ball, 4.25);
        for &v in ball.interior() {
            assert_eq!(laplacian_apply(&ball, &f, v).unwrap(), 0.0);
        }
    }

    #[test]
    fn laplacian_of_square_on_line() {
        let ball = build_lattice_ball(&LatticeSpec { n: 1, radius: 3.5 }).unwrap();
        let f = Field::from_fn(&ball, |v| {
            let id: i64 = ball.vertex_id(v).parse().unwrap();
            (id * id) as f64
        });
        let origin = ball.vertex_by_id("0").unwrap();
        assert_eq!(laplacian_apply(&ball, &f, origin).unwrap(), 1.0);
    }

    #[test]
    fn laplacian_of_layer_function_at_root() {
        let ball = tree(2, 2);
        let f = Field::from_fn(&ball, |v| ball.rho(v) as f64);
        let root = ball.center()[0];
        assert_eq!(laplacian_apply(&ball, &f, root).unwrap(), 2.0);
    }

    #[test]
    fn laplacian_rejects_halo() {
        let ball = tree(2, 2);
        let f = Field::zeros(&ball);
        let halo = ball.halo()[0];
        assert!(matches!(
            laplacian_apply(&ball, &f, halo),
            Err(OperatorError::NotInterior(_))
        ));
    }

    #[test]
    fn residual_of_zero_solution() {
        let ball = tree(2, 3);
        let v = Potential::power(1.0, 1.0, Metric::Combinatorial);
        let res =
            schrodinger_residual(&ball, &v, &Field::zeros(&ball), &Field::zeros(&ball)).unwrap();
        assert!(res.iter().all(|&r| r == 0.0));
        assert_eq!(classify(&res, 1e-9), SolutionClass::Solution);
    }

    #[test]
    fn constant_one_is_a_supersolution() {
        let ball = tree(2, 3);
        let v = Potential::power(1.0, 0.0, Metric::Combinatorial);
        let res = schrodinger_residual(&ball, &v, &Field::constant(&ball, 1.0), &Field::zeros(&ball))
            .unwrap();
        assert!(res.iter().all(|&r| (r + 1.0).abs() < 1e-15));
        assert_eq!(classify(&res, 1e-9), SolutionClass::Supersolution);
    }

    #[test]
    fn classify_mixed_signs_is_neither() {
        assert_eq!(classify(&[-1.0, 1.0], 1e-9), SolutionClass::Neither);
        assert_eq!(classify(&[0.5, 1.0], 1e-9), SolutionClass::Subsolution);
    }

    #[test]
    fn potential_positivity_and_floor() {
        let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 5.0 }).unwrap();
        let v = Potential::power(2.0, 1.5, Metric::Euclidean);
        let values = v.evaluate(&ball).unwrap();
        assert!(values.iter().all(|&x| x > 0.0));
        let floored = Potential::Power {
            c0: 2.0,
            alpha: 1.5,
            metric: Metric::Euclidean,
            floor: Some(0.5),
        };
        assert!(floored.evaluate(&ball).unwrap().iter().all(|&x| x >= 0.5));
    }

    #[test]
    fn euclidean_metric_rejected_on_trees() {
        let ball = tree(2, 2);
        let v = Potential::power(1.0, 1.0, Metric::Euclidean);
        assert!(matches!(v.evaluate(&ball), Err(OperatorError::MetricMismatch)));
    }

    #[test]
    fn potential_json_round_trip() {
        let v = Potential::from_json(
            r#"{"kind":"power","c0":1.0,"alpha":1.0,"metric":"combinatorial"}"#,
        )
        .unwrap();
        assert_eq!(v, Potential::power(1.0, 1.0, Metric::Combinatorial));
        assert!(Potential::from_json(r#"{"kind":"power","c0":-1.0,"alpha":1.0,"metric":"euclidean"}"#).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let ball = tree(2, 3);
            let v = Potential::power(1.0, 1.0, Metric::Combinatorial);
            // cheap deterministic pseudo-random fields from the seed
            let mix = |v: Vertex, salt: u64| {
                let h = (v as u64).wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(seed ^ salt);
                ((h >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            };
            let u1 = Field::from_fn(&ball, |x| mix(x, 1));
            let u2 = Field::from_fn(&ball, |x| mix(x, 2));
            let f1 = Field::from_fn(&ball, |x| mix(x, 3));
            let f2 = Field::from_fn(&ball, |x| mix(x, 4));
            let combo_u = Field::from_fn(&ball, |x| a * u1.value(x) + b * u2.value(x));
            let combo_f = Field::from_fn(&ball, |x| a * f1.value(x) + b * f2.value(x));

            let r1 = schrodinger_residual(&ball, &v, &u1, &f1).unwrap();
            let r2 = schrodinger_residual(&ball, &v, &u2, &f2).unwrap();
            let rc = schrodinger_residual(&ball, &v, &combo_u, &combo_f).unwrap();
            for i in 0..rc.len() {
                let expect = a * r1[i] + b * r2[i];
                let scale = expect.abs().max(1.0);
                prop_assert!((rc[i] - expect).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn discrete_green_identity(seed in 0u64..1000) {
            let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 5.0 }).unwrap();
            // fields supported strictly inside: zero on the layer adjacent to
            // the halo and on the halo itself
            let deep = |x: Vertex| {
                ball.is_interior(x)
                    && ball
                        .neighbors(x)
                        .all(|(y, _)| ball.is_interior(y))
            };
            let mix = |v: Vertex, salt: u64| {
                let h = (v as u64).wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(seed ^ salt);
                ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let phi = Field::from_fn(&ball, |x| if deep(x) { mix(x, 10) } else { 0.0 });
            let psi = Field::from_fn(&ball, |x| if deep(x) { mix(x, 20) } else { 0.0 });

            let mut lhs = 0.0;
            for &x in ball.interior() {
                lhs += ball.mu(x) * laplacian_apply(&ball, &phi, x).unwrap() * psi.value(x);
            }
            let mut rhs = 0.0;
            for x in 0..ball.vertex_count() as Vertex {
                for (y, w) in ball.neighbors(x) {
                    rhs += w * (phi.value(y) - phi.value(x)) * (psi.value(y) - psi.value(x));
                }
            }
            rhs *= -0.5;
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }
}
