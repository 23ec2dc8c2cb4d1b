//! Assembly and solution of the finite `L`-Dirichlet problem
//! `Delta u - V u = f` in the interior, `u = g` on the halo, plus the
//! comparison machinery built on the weak maximum principle.
//!
//! The assembled matrix has row `(deg(x) + mu(x) V(x)) u(x) - sum omega u(y)`
//! over interior unknowns; it is symmetric, and positive definite for
//! `V >= 0` on a connected interior with a nonempty halo. Systems below
//! [`DIRECT_SOLVE_CAP`] unknowns are solved by dense Cholesky (authoritative
//! at that scale); larger ones by diagonally preconditioned conjugate
//! gradients with fixed-order reductions.

use serde::Serialize;
use thiserror::Error;

use crate::barriers::{self, BarrierError, BarrierSpec, Direction, VerifyReport};
use crate::graph::{BallFamily, GraphBall, Vertex};
use crate::operators::{
    classify, schrodinger_residual, Field, OperatorError, Potential,
    SolutionClass,
};

/// Systems with fewer unknowns than this are solved directly.
pub const DIRECT_SOLVE_CAP: usize = 500;

/// Relative residual target of the iterative solver.
pub const SOLVER_TOLERANCE: f64 = 1e-12;

/// Absolute comparison tolerance, scaled by the data magnitude.
pub const COMPARISON_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("interior vertex `{0}` has an incomplete stored neighborhood")]
    LeakyNeighborhood(String),
    #[error("interior is empty, nothing to solve")]
    EmptyInterior,
    #[error("conjugate gradient did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("direct solve unavailable: {0}")]
    DirectUnavailable(String),
    #[error("Cholesky factorization failed at pivot {0}: matrix not positive definite")]
    NotPositiveDefinite(usize),
    #[error("solution failed the independent operator-residual check: {residual:e} > {bound:e}")]
    ResidualCheck { residual: f64, bound: f64 },
    #[error("`{0}` is not a subsolution of the problem (worst residual {1:e})")]
    NotSubsolution(String, f64),
    #[error("`{0}` is not a supersolution of the problem (worst residual {1:e})")]
    NotSupersolution(String, f64),
    #[error("halo ordering violated: u_sub exceeds u_super by {0:e} at `{1}`")]
    HaloOrder(f64, String),
    #[error("barrier failed verification before certification (margin {0:e})")]
    BarrierNotVerified(f64),
    #[error("alpha schedule must be strictly decreasing and positive")]
    BadSchedule,
}

/// The Dirichlet problem `L u = f` in the interior with `u = g` on the halo.
/// `f` is read on interior vertices only, `g` on halo vertices only.
pub struct DirichletProblem<'a> {
    pub ball: &'a GraphBall,
    pub potential: Potential,
    pub f: Field,
    pub g: Field,
}

impl<'a> DirichletProblem<'a> {
    pub fn new(
        ball: &'a GraphBall,
        potential: Potential,
        f: Field,
        g: Field,
    ) -> Result<Self, SolveError> {
        potential.check()?;
        if ball.interior().is_empty() {
            return Err(SolveError::EmptyInterior);
        }
        Ok(DirichletProblem { ball, potential, f, g })
    }

    pub fn constant_data(
        ball: &'a GraphBall,
        potential: Potential,
        f: f64,
        g: f64,
    ) -> Result<Self, SolveError> {
        DirichletProblem::new(ball, potential, Field::constant(ball, f), Field::constant(ball, g))
    }
}

/// Symmetric positive definite system over the interior unknowns, stored as
/// a diagonal plus an off-diagonal CSR block.
pub struct LinearSystem {
    /// Interior vertex ids, ascending; row `i` belongs to `unknowns[i]`.
    pub unknowns: Vec<Vertex>,
    pub diag: Vec<f64>,
    pub off_ptr: Vec<usize>,
    /// Local column indices into `unknowns`.
    pub off_col: Vec<u32>,
    pub off_val: Vec<f64>,
    pub rhs: Vec<f64>,
    /// mu per unknown, kept to translate linear residuals into operator form.
    pub mu: Vec<f64>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.unknowns.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.dim() {
            let mut acc = self.diag[i] * x[i];
            for k in self.off_ptr[i]..self.off_ptr[i + 1] {
                acc += self.off_val[k] * x[self.off_col[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// `||b - Ax||_2 / ||b||_2`, with the convention 0/0 = 0.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim()];
        self.matvec(x, &mut ax);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.dim() {
            let r = self.rhs[i] - ax[i];
            num += r * r;
            den += self.rhs[i] * self.rhs[i];
        }
        if den == 0.0 {
            if num == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).sqrt()
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.diag[i];
            for k in self.off_ptr[i]..self.off_ptr[i + 1] {
                a[i * n + self.off_col[k] as usize] = self.off_val[k];
            }
        }
        a
    }
}

/// Assembles the symmetric system of the Dirichlet problem.
pub fn assemble(p: &DirichletProblem<'_>) -> Result<LinearSystem, SolveError> {
    let ball = p.ball;
    let v_values = p.potential.evaluate(ball)?;
    let unknowns: Vec<Vertex> = ball.interior().to_vec();
    let mut local = vec![u32::MAX; ball.vertex_count()];
    for (i, &v) in unknowns.iter().enumerate() {
        local[v as usize] = i as u32;
    }

    // family-fixed degrees let us detect interiors whose stored neighborhood leaks
    let expected_degree = |v: Vertex| -> Option<f64> {
        match ball.family() {
            BallFamily::Tree(spec) => {
                let r = ball.rho(v);
                Some(if r == 0 {
                    spec.branching.value_f64(0)
                } else {
                    spec.branching.value_f64(r) + 1.0
                })
            }
            BallFamily::Lattice(spec) => Some(2.0 * spec.n as f64),
            BallFamily::Custom => None,
        }
    };

    let n = unknowns.len();
    let mut diag = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut off_ptr = Vec::with_capacity(n + 1);
    let mut off_col = Vec::new();
    let mut off_val = Vec::new();
    off_ptr.push(0);

    for (i, &x) in unknowns.iter().enumerate() {
        let mu_x = ball.mu(x);
        let mut deg = 0.0;
        let mut b = -mu_x * p.f.value(x);
        let mut stored = 0usize;
        for (y, w) in ball.neighbors(x) {
            if w > 0.0 {
                stored += 1;
            }
            deg += w;
            if ball.is_interior(y) {
                off_col.push(local[y as usize]);
                off_val.push(-w);
            } else {
                b += w * p.g.value(y);
            }
        }
        if let Some(expected) = expected_degree(x) {
            if stored as f64 != expected {
                return Err(SolveError::LeakyNeighborhood(ball.vertex_id(x)));
            }
        }
        diag.push(deg + mu_x * v_values[x as usize]);
        rhs.push(b);
        mu.push(mu_x);
        off_ptr.push(off_col.len());
        let _ = i;
    }

    Ok(LinearSystem { unknowns, diag, off_ptr, off_col, off_val, rhs, mu })
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub method: SolveMethod,
}

/// Diagonally preconditioned conjugate gradients with fixed-order
/// reductions; deterministic for a given system.
pub fn cg_solve(system: &LinearSystem, tolerance: f64, max_iterations: usize) -> SystemSolution {
    let n = system.dim();
    let b_norm: f64 = system.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return SystemSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            method: SolveMethod::ConjugateGradient,
        };
    }
    let inv_diag: Vec<f64> = system.diag.iter().map(|&d| 1.0 / d).collect();
    let mut r = system.rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    while iterations < max_iterations {
        let r_norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tolerance * b_norm {
            return SystemSolution {
                x,
                iterations,
                relative_residual: r_norm / b_norm,
                converged: true,
                method: SolveMethod::ConjugateGradient,
            };
        }
        system.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
        iterations += 1;
    }

    let rel = system.relative_residual(&x);
    SystemSolution {
        x,
        iterations,
        relative_residual: rel,
        converged: rel <= tolerance,
        method: SolveMethod::ConjugateGradient,
    }
}

/// Dense Cholesky solve, the authoritative method below [`DIRECT_SOLVE_CAP`].
pub fn direct_solve(system: &LinearSystem) -> Result<SystemSolution, SolveError> {
    let n = system.dim();
    let mut a = system.to_dense();
    // in-place lower Cholesky
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(SolveError::NotPositiveDefinite(j));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = system.rhs.clone();
    for i in 0..n {
        for k in 0..i {
            let t = a[i * n + k] * y[k];
            y[i] -= t;
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = a[k * n + i] * y[k];
            y[i] -= t;
        }
        y[i] /= a[i * n + i];
    }
    let rel = system.relative_residual(&y);
    Ok(SystemSolution {
        x: y,
        iterations: 0,
        relative_residual: rel,
        converged: true,
        method: SolveMethod::Direct,
    })
}

/// Solves an assembled system: direct below the cap, conjugate gradients
/// above. Non-convergence is an error, never a silently returned vector.
pub fn solve(system: &LinearSystem) -> Result<SystemSolution, SolveError> {
    if system.dim() < DIRECT_SOLVE_CAP {
        direct_solve(system)
    } else {
        let sol = cg_solve(system, SOLVER_TOLERANCE, 10 * system.dim());
        if !sol.converged {
            return Err(SolveError::NonConvergence {
                iterations: sol.iterations,
                residual: sol.relative_residual,
            });
        }
        Ok(sol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub u: Field,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub min_u: f64,
    pub max_u: f64,
    pub method: SolveMethod,
}

/// Assembles, solves, and expands the solution over interior plus halo
/// (halo values are the boundary data). The result is independently checked
/// through the Schrodinger residual.
pub fn solve_problem(p: &DirichletProblem<'_>) -> Result<SolveReport, SolveError> {
    let system = assemble(p)?;
    let sol = solve(&system)?;

    let mut u = p.g.clone();
    for (i, &v) in system.unknowns.iter().enumerate() {
        u.set(v, sol.x[i]);
    }

    // independent check: operator residual of the expanded field
    let res = schrodinger_residual(p.ball, &p.potential, &u, &p.f)?;
    let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let rhs_norm: f64 = system.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let min_mu = system.mu.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = 10.0 * SOLVER_TOLERANCE * rhs_norm.max(1.0) / min_mu.min(1.0);
    if worst > bound {
        return Err(SolveError::ResidualCheck { residual: worst, bound });
    }

    Ok(SolveReport {
        min_u: u.min(),
        max_u: u.max(),
        u,
        iterations: sol.iterations,
        relative_residual: sol.relative_residual,
        converged: sol.converged,
        method: sol.method,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub pass: bool,
    pub worst_gap: f64,
    pub worst_vertex: String,
}

/// Checks `u_sub <= u_super + tolerance` on the interior after verifying the
/// classification preconditions (`u_sub` a subsolution, `u_super` a
/// supersolution, ordered on the halo). For valid inputs a pass is
/// guaranteed by the weak maximum principle; failure flags a bug.
pub fn comparison_check(
    p: &DirichletProblem<'_>,
    u_sub: &Field,
    u_super: &Field,
    tolerance: f64,
) -> Result<ComparisonReport, SolveError> {
    let res_sub = schrodinger_residual(p.ball, &p.potential, u_sub, &p.f)?;
    match classify(&res_sub, tolerance) {
        SolutionClass::Subsolution | SolutionClass::Solution => {}
        _ => {
            let worst = res_sub.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(SolveError::NotSubsolution("u_sub".into(), worst));
        }
    }
    let res_super = schrodinger_residual(p.ball, &p.potential, u_super, &p.f)?;
    match classify(&res_super, tolerance) {
        SolutionClass::Supersolution | SolutionClass::Solution => {}
        _ => {
            let worst = res_super.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Err(SolveError::NotSupersolution("u_super".into(), worst));
        }
    }
    for &v in p.ball.halo() {
        let gap = u_sub.value(v) - u_super.value(v);
        if gap > tolerance {
            return Err(SolveError::HaloOrder(gap, p.ball.vertex_id(v)));
        }
    }

    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_vertex = String::new();
    for &v in p.ball.interior() {
        let gap = u_sub.value(v) - u_super.value(v);
        if gap > worst_gap {
            worst_gap = gap;
            worst_vertex = p.ball.vertex_id(v);
        }
    }
    Ok(ComparisonReport { pass: worst_gap <= tolerance, worst_gap, worst_vertex })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaCheck {
    pub alpha: f64,
    /// `u < Z_alpha` held on the halo at this radius.
    pub halo_hypothesis: bool,
    pub comparison_pass: bool,
}

/// Outcome of the comparison scheme run at one finite radius: a verified
/// sub-barrier is shifted to `Zbar <= -1`, and for each `alpha` in the
/// schedule the bound `u <= -alpha Zbar` is established whenever the halo
/// hypothesis holds there. A pass certifies the bound on this ball only.
#[derive(Debug, Clone, Serialize)]
pub struct PlCertificate {
    pub verified_radius: f64,
    pub barrier: VerifyReport,
    pub alphas: Vec<AlphaCheck>,
    pub smallest_passing_alpha: Option<f64>,
    /// Max over the interior of the tightest envelope `alpha_min * |Zbar|`.
    pub envelope_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip)]
    pub envelope: Option<Field>,
}

pub fn pl_certificate(
    ball: &GraphBall,
    potential: &Potential,
    u: &Field,
    barrier: &BarrierSpec,
    alpha_schedule: &[f64],
    tolerance: f64,
) -> Result<PlCertificate, SolveError> {
    if alpha_schedule.is_empty()
        || alpha_schedule.iter().any(|&a| !(a > 0.0))
        || alpha_schedule.windows(2).any(|w| w[0] <= w[1])
    {
        return Err(SolveError::BadSchedule);
    }
    if barrier.direction() != Direction::Sub {
        return Err(SolveError::Barrier(BarrierError::ParamDomain(
            "certification needs a sub-direction barrier".into(),
        )));
    }
    let barrier_report = barriers::verify(barrier, ball, potential, tolerance)?;
    if !barrier_report.pass {
        return Err(SolveError::BarrierNotVerified(barrier_report.margin));
    }

    let z = barrier.evaluate(ball)?;
    let zbar = barriers::shift(&z, z.max())?;

    // halo hypothesis u < Z_alpha = -alpha * Zbar, checked for every alpha
    let halo_ok: Vec<bool> = alpha_schedule
        .iter()
        .map(|&alpha| {
            ball.halo()
                .iter()
                .all(|&v| u.value(v) < -alpha * zbar.value(v))
        })
        .collect();

    let mut alphas = Vec::with_capacity(alpha_schedule.len());
    let mut smallest_passing = None;
    if halo_ok.iter().any(|&ok| ok) {
        // comparison is only sound for subsolutions; demand it now
        let res = schrodinger_residual(ball, potential, u, &Field::zeros(ball))?;
        match classify(&res, tolerance) {
            SolutionClass::Subsolution | SolutionClass::Solution => {}
            _ => {
                let worst = res.iter().copied().fold(f64::INFINITY, f64::min);
                return Err(SolveError::NotSubsolution("u".into(), worst));
            }
        }
    }
    for (&alpha, &halo) in alpha_schedule.iter().zip(&halo_ok) {
        let comparison_pass = if halo {
            let z_alpha = zbar.map(|v| -alpha * v);
            let problem = DirichletProblem::new(
                ball,
                potential.clone(),
                Field::zeros(ball),
                z_alpha.clone(),
            )?;
            let report = comparison_check(&problem, u, &z_alpha, tolerance)?;
            if report.pass {
                smallest_passing = Some(alpha);
            }
            report.pass
        } else {
            false
        };
        alphas.push(AlphaCheck { alpha, halo_hypothesis: halo, comparison_pass });
    }

    let (envelope, envelope_max, note) = match smallest_passing {
        Some(alpha) => {
            let env = zbar.map(|v| -alpha * v);
            let max = env.max_on(ball.interior());
            (Some(env), Some(max), None)
        }
        None => (
            None,
            None,
            Some(
                "halo hypothesis failed for every alpha: the growth condition is not met \
                 at this radius (scope statement, not a refutation)"
                    .into(),
            ),
        ),
    };

    Ok(PlCertificate {
        verified_radius: barrier_report.verified_radius,
        barrier: barrier_report,
        alphas,
        smallest_passing_alpha: smallest_passing,
        envelope_max,
        note,
        envelope,
    })
}
