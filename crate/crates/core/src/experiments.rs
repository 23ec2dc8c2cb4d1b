//! Exhaustion experiments: solve the homogeneous problem with constant
//! boundary data `gamma` on a growing sequence of balls and watch the probe
//! values. A probe sequence stabilizing at a positive limit is numerical
//! evidence for the nonuniqueness regime (bounded solutions tending to
//! `gamma` exist); decay toward zero is evidence for the uniqueness regime.
//! Evidence, not proof: every report is tied to the radii actually solved.

use std::io::{self, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{BarrierError, BarrierFamily, BarrierSpec};
use crate::dirichlet::{solve_problem, DirichletProblem, SolveError};
use crate::graph::{BallFamily, Branching, GraphBall, GraphError, GraphSpec};
use crate::operators::{Field, Metric, OperatorError, Potential};
use crate::radial::{radial_dirichlet_solve, RadialError, RadialProfile};

/// Successive probe deltas below this stop the exhaustion ("converged to L").
pub const CONVERGENCE_DELTA: f64 = 1e-6;

/// Slack allowed on the monotonicity of probe values across radii.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

/// Classification threshold of the tree phase sweep: a probe limit above
/// this at the largest radius counts as nonuniqueness evidence.
pub const PHASE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("probe `{probe}` increased by {delta:e} between radii {from} and {to}; exhaustion must be monotone")]
    MonotonicityViolation { probe: String, delta: f64, from: f64, to: f64 },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// JSON configuration of an exhaustion run:
/// `{graph, potential, gamma, radii, probes, out}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustionConfig {
    pub graph: GraphSpec,
    pub potential: Potential,
    pub gamma: f64,
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExhaustionConfig {
    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.radii.is_empty() {
            return Err(ExperimentError::InvalidConfig("radii must be nonempty".into()));
        }
        if self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::InvalidConfig("radii must be strictly increasing".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustionRow {
    pub radius: f64,
    pub probe_id: String,
    pub u_probe: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub delta_prev: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustionTable {
    pub rows: Vec<ExhaustionRow>,
    /// Per probe: the stabilized value, when the last delta fell below
    /// [`CONVERGENCE_DELTA`].
    pub limits: Vec<(String, Option<f64>)>,
}

impl ExhaustionTable {
    /// Probe value at the largest solved radius.
    pub fn final_probe_value(&self, probe: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.probe_id == probe).map(|r| r.u_probe)
    }

    pub fn probe_values(&self, probe: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.probe_id == probe)
            .map(|r| r.u_probe)
            .collect()
    }

    /// CSV schema: `R,probe_id,u_probe,min_u,max_u,delta_prev`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "R,probe_id,u_probe,min_u,max_u,delta_prev")?;
        for row in &self.rows {
            let delta = row.delta_prev.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.radius, row.probe_id, row.u_probe, row.min_u, row.max_u, delta
            )?;
        }
        Ok(())
    }
}

/// Runs the nested-ball scheme: for each radius solve `L u = 0` in the
/// interior with `u = gamma` on the halo, and track the probe values.
/// Probe sequences must be nonincreasing (comparison principle); a violation
/// beyond the slack flags a solver bug and aborts the run.
pub fn exhaustion_run(cfg: &ExhaustionConfig) -> Result<ExhaustionTable, ExperimentError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut previous: Vec<Option<f64>> = Vec::new();
    let mut probe_ids: Vec<String> = Vec::new();
    let mut prev_radius = f64::NAN;

    for (step, &radius) in cfg.radii.iter().enumerate() {
        let ball = cfg.graph.with_radius(radius)?.build()?;
        let problem = DirichletProblem::constant_data(
            &ball,
            cfg.potential.clone(),
            0.0,
            cfg.gamma,
        )?;
        let report = solve_problem(&problem)?;

        if step == 0 {
            probe_ids = match &cfg.probes {
                Some(ids) => ids.clone(),
                None => vec![ball.vertex_id(ball.center()[0])],
            };
            previous = vec![None; probe_ids.len()];
        }

        for (k, probe) in probe_ids.iter().enumerate() {
            let v = ball.vertex_by_id(probe)?;
            if !ball.is_interior(v) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "probe `{probe}` is not interior at radius {radius}"
                )));
            }
            let u_probe = report.u.value(v);
            let delta_prev = previous[k].map(|prev| u_probe - prev);
            if let Some(delta) = delta_prev {
                let slack = MONOTONICITY_SLACK * cfg.gamma.abs().max(1.0);
                if delta > slack {
                    return Err(ExperimentError::MonotonicityViolation {
                        probe: probe.clone(),
                        delta,
                        from: prev_radius,
                        to: radius,
                    });
                }
            }
            rows.push(ExhaustionRow {
                radius,
                probe_id: probe.clone(),
                u_probe,
                min_u: report.min_u,
                max_u: report.max_u,
                delta_prev,
            });
            previous[k] = Some(u_probe);
        }
        prev_radius = radius;
    }

    let limits = probe_ids
        .iter()
        .map(|probe| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| &r.probe_id == probe)
                .map(|r| r.u_probe)
                .collect();
            let converged = vals.len() >= 2
                && (vals[vals.len() - 1] - vals[vals.len() - 2]).abs() < CONVERGENCE_DELTA;
            (probe.clone(), converged.then(|| vals[vals.len() - 1]))
        })
        .collect();

    Ok(ExhaustionTable { rows, limits })
}

/// Radial exhaustion on a spherically symmetric tree: probe value `u(0)` of
/// the homogeneous problem with boundary `gamma` at depth `radius`.
pub fn radial_exhaustion_probe(
    branching: &Branching,
    radius: u32,
    potential: &Potential,
    gamma: f64,
) -> Result<f64, ExperimentError> {
    if potential.metric() != Metric::Combinatorial {
        return Err(ExperimentError::InvalidConfig(
            "radial exhaustion needs a combinatorial-metric potential".into(),
        ));
    }
    let geometry =
        RadialProfile::from_tree(branching, radius, vec![0.0; radius as usize + 2])?;
    let v: Vec<f64> = (0..=radius).map(|r| potential.value_at_dist(r as f64)).collect();
    let f = vec![0.0; radius as usize + 1];
    let solved = radial_dirichlet_solve(&geometry, &v, &f, gamma)?;
    Ok(solved.value(0))
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "unique regime evidence")]
    UniqueEvidence,
    #[serde(rename = "nonunique regime evidence")]
    NonuniqueEvidence,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::UniqueEvidence => "unique regime evidence",
            Regime::NonuniqueEvidence => "nonunique regime evidence",
        }
    }
}

/// JSON configuration of a tree phase sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSweepConfig {
    pub branchings: Vec<Branching>,
    pub alphas: Vec<f64>,
    pub gamma: f64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_sweep_radii")]
    pub radii: Vec<u32>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_c0() -> f64 {
    1.0
}

fn default_sweep_radii() -> Vec<u32> {
    vec![100, 1000, 10_000]
}

fn default_threshold() -> f64 {
    PHASE_THRESHOLD
}

impl PhaseSweepConfig {
    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub branching: String,
    pub alpha: f64,
    pub r_max: u32,
    /// Probe value at the largest radius.
    pub u_probe: f64,
    /// Probe value at the previous radius in the schedule.
    pub u_prev: f64,
    pub delta: f64,
    pub threshold: f64,
    pub classification: Regime,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTable {
    pub radii: Vec<u32>,
    pub cells: Vec<PhaseCell>,
}

impl PhaseTable {
    pub fn cell(&self, branching: &Branching, alpha: f64) -> Option<&PhaseCell> {
        let key = branching.to_string();
        self.cells.iter().find(|c| c.branching == key && c.alpha == alpha)
    }

    /// CSV schema:
    /// `branching,alpha,radii,r_max,u_probe,u_prev,delta,threshold,classification`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "branching,alpha,radii,r_max,u_probe,u_prev,delta,threshold,classification")?;
        let schedule: Vec<String> = self.radii.iter().map(|r| r.to_string()).collect();
        let schedule = schedule.join("|");
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.branching,
                c.alpha,
                schedule,
                c.r_max,
                c.u_probe,
                c.u_prev,
                c.delta,
                c.threshold,
                c.classification.as_str()
            )?;
        }
        Ok(())
    }
}

/// Runs the radial exhaustion for every (branching, alpha) cell and
/// classifies it: probe limit above the threshold at the largest radius is
/// nonuniqueness evidence, otherwise uniqueness evidence. The schedule and
/// threshold travel with the output.
pub fn tree_phase_sweep(cfg: &PhaseSweepConfig) -> Result<PhaseTable, ExperimentError> {
    if cfg.radii.len() < 2 || cfg.radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::InvalidConfig(
            "phase sweep needs at least two strictly increasing radii".into(),
        ));
    }
    if !(cfg.gamma > 0.0) {
        return Err(ExperimentError::InvalidConfig("phase sweep needs gamma > 0".into()));
    }
    let mut cells = Vec::new();
    for branching in &cfg.branchings {
        for &alpha in &cfg.alphas {
            let potential = Potential::power(cfg.c0, alpha, Metric::Combinatorial);
            let mut values = Vec::with_capacity(cfg.radii.len());
            for (i, &radius) in cfg.radii.iter().enumerate() {
                let u0 = radial_exhaustion_probe(branching, radius, &potential, cfg.gamma)?;
                if let Some(prev) = values.last() {
                    let delta: f64 = u0 - prev;
                    if delta > MONOTONICITY_SLACK * cfg.gamma.max(1.0) {
                        return Err(ExperimentError::MonotonicityViolation {
                            probe: "0:0".into(),
                            delta,
                            from: cfg.radii[i - 1] as f64,
                            to: radius as f64,
                        });
                    }
                }
                values.push(u0);
            }
            let last = values[values.len() - 1];
            let prev = values[values.len() - 2];
            let classification = if last > cfg.threshold {
                Regime::NonuniqueEvidence
            } else {
                Regime::UniqueEvidence
            };
            cells.push(PhaseCell {
                branching: branching.to_string(),
                alpha,
                r_max: *cfg.radii.last().unwrap(),
                u_probe: last,
                u_prev: prev,
                delta: last - prev,
                threshold: cfg.threshold,
                classification,
            });
        }
    }
    Ok(PhaseTable { radii: cfg.radii.clone(), cells })
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerRatio {
    /// Layer label: combinatorial layer index, or Euclidean norm on lattices.
    pub layer: f64,
    pub ratio: f64,
}

/// Per-layer growth ratios `max_x u(x) / |gauge(x)|`, for empirical
/// inspection of the growth condition behind the comparison scheme.
pub fn growth_ratio_profile(
    ball: &GraphBall,
    u: &Field,
    gauge: &BarrierSpec,
) -> Result<Vec<LayerRatio>, ExperimentError> {
    if gauge.family != BarrierFamily::GrowthGauge {
        return Err(ExperimentError::InvalidConfig(format!(
            "growth ratios need a growth_gauge barrier, got {}",
            gauge.family
        )));
    }
    let z = gauge.evaluate(ball)?;
    let euclid = matches!(ball.family(), BallFamily::Lattice(_));
    let mut by_layer: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for v in 0..ball.vertex_count() as u32 {
        let key = if euclid {
            ball.euclid_norm2(v).unwrap()
        } else {
            ball.rho(v) as u64
        };
        let ratio = u.value(v) / z.value(v).abs();
        let cur = by_layer.entry(key).or_insert(f64::NEG_INFINITY);
        *cur = cur.max(ratio);
    }
    Ok(by_layer
        .into_iter()
        .map(|(key, ratio)| LayerRatio {
            layer: if euclid { (key as f64).sqrt() } else { key as f64 },
            ratio,
        })
        .collect())
}

pub fn write_ratios_csv<W: Write>(ratios: &[LayerRatio], mut w: W) -> io::Result<()> {
    writeln!(w, "layer,ratio")?;
    for r in ratios {
        writeln!(w, "{},{}", r.layer, r.ratio)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_tree_ball, LatticeSpec, TreeSpec};

    fn lattice_cfg(alpha: f64, gamma: f64, radii: Vec<f64>) -> ExhaustionConfig {
        ExhaustionConfig {
            graph: GraphSpec::Lattice(LatticeSpec { n: 2, radius: radii[0] }),
            potential: Potential::power(1.0, alpha, Metric::Euclidean),
            gamma,
            radii,
            probes: None,
            out: None,
        }
    }

    #[test]
    fn zero_boundary_gives_zero_solutions() {
        let table = exhaustion_run(&lattice_cfg(1.0, 0.0, vec![3.0, 5.0])).unwrap();
        assert!(table.rows.iter().all(|r| r.u_probe == 0.0 && r.min_u == 0.0 && r.max_u == 0.0));
    }

    #[test]
    fn probe_sequence_is_monotone_and_bounded() {
        let table = exhaustion_run(&lattice_cfg(1.0, 1.0, vec![3.0, 5.0, 7.0])).unwrap();
        let values = table.probe_values("0:0");
        assert_eq!(values.len(), 3);
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(values.iter().all(|&v| v >= -1e-9 && v <= 1.0 + 1e-9));
    }

    #[test]
    fn limits_scale_linearly_in_gamma() {
        let t1 = exhaustion_run(&lattice_cfg(3.0, 1.0, vec![3.0, 5.0])).unwrap();
        let t2 = exhaustion_run(&lattice_cfg(3.0, 2.0, vec![3.0, 5.0])).unwrap();
        let u1 = t1.final_probe_value("0:0").unwrap();
        let u2 = t2.final_probe_value("0:0").unwrap();
        assert!((u2 - 2.0 * u1).abs() <= 1e-9 * u2.abs().max(1.0));
    }

    #[test]
    fn tree_exhaustion_through_full_solver() {
        let cfg = ExhaustionConfig {
            graph: GraphSpec::Tree(TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 3 }),
            potential: Potential::power(1.0, 1.0, Metric::Combinatorial),
            gamma: 1.0,
            radii: vec![3.0, 5.0],
            probes: Some(vec!["0:0".into(), "1:0".into()]),
            out: None,
        };
        let table = exhaustion_run(&cfg).unwrap();
        assert_eq!(table.rows.len(), 4);
        // radial route agrees with the full-ball route
        let radial = radial_exhaustion_probe(
            &Branching::Constant { b0: 2 },
            5,
            &Potential::power(1.0, 1.0, Metric::Combinatorial),
            1.0,
        )
        .unwrap();
        let full = table.final_probe_value("0:0").unwrap();
        assert!((radial - full).abs() <= 1e-9, "radial {radial} vs full {full}");
    }

    #[test]
    fn rejects_bad_radii() {
        let cfg = lattice_cfg(1.0, 1.0, vec![5.0, 3.0]);
        assert!(matches!(
            exhaustion_run(&cfg),
            Err(ExperimentError::InvalidConfig(_))
        ));
    }

    #[test]
    fn phase_sweep_smoke() {
        let cfg = PhaseSweepConfig {
            branchings: vec![Branching::Constant { b0: 2 }, Branching::Power { p: 2 }],
            alphas: vec![1.0],
            gamma: 1.0,
            c0: 1.0,
            radii: vec![100, 400],
            threshold: PHASE_THRESHOLD,
            out: None,
        };
        let table = tree_phase_sweep(&cfg).unwrap();
        assert_eq!(table.cells.len(), 2);
        let power = table.cell(&Branching::Power { p: 2 }, 1.0).unwrap();
        assert_eq!(power.classification, Regime::NonuniqueEvidence);
    }

    #[test]
    fn growth_ratios_of_zero_and_gauge_itself() {
        let ball = build_tree_ball(&TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 4 })
            .unwrap();
        let gauge = BarrierSpec::new(BarrierFamily::GrowthGauge).with(|s| s.alpha = Some(1.0));
        let zero = Field::zeros(&ball);
        let ratios = growth_ratio_profile(&ball, &zero, &gauge).unwrap();
        assert!(ratios.iter().all(|r| r.ratio == 0.0));

        let z = gauge.evaluate(&ball).unwrap();
        let neg = z.map(|v| -v);
        let ratios = growth_ratio_profile(&ball, &neg, &gauge).unwrap();
        assert!(ratios.iter().all(|r| (r.ratio - 1.0).abs() < 1e-12));
    }

    #[test]
    fn exhaustion_csv_schema_and_determinism() {
        let cfg = lattice_cfg(1.0, 1.0, vec![3.0, 5.0]);
        let table = exhaustion_run(&cfg).unwrap();
        let mut one = Vec::new();
        table.write_csv(&mut one).unwrap();
        let text = String::from_utf8(one.clone()).unwrap();
        assert!(text.starts_with("R,probe_id,u_probe,min_u,max_u,delta_prev\n"));
        let first_row = text.lines().nth(1).unwrap();
        assert!(first_row.starts_with("3,0:0,"));
        assert!(first_row.ends_with(",")); // no delta on the first radius

        let table2 = exhaustion_run(&cfg).unwrap();
        let mut two = Vec::new();
        table2.write_csv(&mut two).unwrap();
        assert_eq!(one, two);
    }
}
