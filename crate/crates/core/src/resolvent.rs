//! Nonlinear resolvent `y + eps (nu - L)(Psi_lambda + lambda I)(y) = x`.
//!
//! The solve substitutes `w = (Psi_lambda + lambda I)(y)` and drives the
//! strictly monotone system
//! `G(w) = (Psi_lambda + lambda I)^{-1}(w) + eps (nu - L) w - x = 0`
//! by semismooth Newton with the diagonal generalized derivative of the
//! scalar inverse, line-searched on `|G|_2`, with a damped Picard fallback.

use crate::dirichlet::{DirichletOperator, SpaceError};
use crate::monotone::{GraphError, YosidaView};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no convergence after {newton} Newton + {picard} Picard iterations (best residual {residual:.3e}, tol {tol:.3e})")]
    NoConvergence {
        newton: usize,
        picard: usize,
        residual: f64,
        tol: f64,
    },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// One resolvent instance `y = J_eps(x)`.
pub struct ResolventProblem<'a> {
    pub operator: &'a DirichletOperator,
    pub graph: YosidaView<'a>,
    pub eps: f64,
    pub nu: f64,
    pub x: &'a [f64],
    pub tol: Option<f64>,
    pub max_newton: usize,
    pub max_picard: usize,
}

impl<'a> ResolventProblem<'a> {
    pub fn new(
        operator: &'a DirichletOperator,
        graph: YosidaView<'a>,
        eps: f64,
        nu: f64,
        x: &'a [f64],
    ) -> Self {
        ResolventProblem {
            operator,
            graph,
            eps,
            nu,
            x,
            tol: None,
            max_newton: 200,
            max_picard: 2000,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.eps > 0.0) {
            return Err(SolverError::InvalidParameters("eps must be > 0".into()));
        }
        if !(self.graph.lambda > 0.0) {
            return Err(SolverError::InvalidParameters("lambda must be > 0".into()));
        }
        if self.nu < 0.0 {
            return Err(SolverError::InvalidParameters("nu must be >= 0".into()));
        }
        if self.nu == 0.0 && !self.operator.is_transient() {
            return Err(SolverError::InvalidParameters(
                "nu = 0 requires a transient operator".into(),
            ));
        }
        if self.x.len() != self.operator.len() {
            return Err(SolverError::InvalidParameters("state dimension mismatch".into()));
        }
        Ok(())
    }

    fn tolerance(&self) -> f64 {
        let w = self.operator.space().weights();
        let x_l2 = self
            .x
            .iter()
            .zip(w)
            .map(|(a, b)| a * a * b)
            .sum::<f64>()
            .sqrt();
        self.tol.unwrap_or(1e-10 * (1.0 + x_l2))
    }
}

/// Solution pair: `y = J_eps(x)` and `w = (Psi_lambda + lambda I)(y)` with
/// `|y + eps (nu - L) w - x|_2 <= tol`.
pub struct ResolventSolution {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub residual: f64,
    pub newton_iters: usize,
    pub picard_iters: usize,
}

pub fn solve_resolvent(p: &ResolventProblem) -> Result<ResolventSolution, SolverError> {
    p.validate()?;
    let n = p.x.len();
    let op = p.operator;
    let view = p.graph;
    let mu = op.space().weights();
    let tol = p.tolerance();

    let l2 = |v: &[f64]| -> f64 {
        v.iter()
            .zip(mu)
            .map(|(a, b)| a * a * b)
            .sum::<f64>()
            .sqrt()
    };

    // G(w) = drift^{-1}(w) + eps (nu - L) w - x; residual equals the defect
    // of the original equation because y := drift^{-1}(w) exactly.
    let eval_g = |w: &[f64]| -> Result<(Vec<f64>, Vec<f64>), SolverError> {
        let y = view.drift_inverse_vec(w)?;
        let shifted = op.apply_shifted(p.nu, w);
        let g = (0..n)
            .map(|i| y[i] + p.eps * shifted[i] - p.x[i])
            .collect::<Vec<f64>>();
        Ok((g, y))
    };

    // Start from w = drift(x): exact when eps (nu - L) vanishes.
    let mut w = view.drift_vec(p.x)?;
    let (mut g, mut y) = eval_g(&w)?;
    let mut res = l2(&g);
    let mut newton_iters = 0;
    let mut best = res;

    let sqrt_mu: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    while res > tol && newton_iters < p.max_newton {
        newton_iters += 1;
        // Symmetrized Jacobian: diag(d) + eps (nu I + A~), SPD.
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let a = -sqrt_mu[i] * op.matrix()[(i, j)] / sqrt_mu[j];
                jac[(i, j)] = p.eps * a;
            }
            jac[(i, i)] += view.drift_inverse_slope(w[i])? + p.eps * p.nu;
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| -g[i] * sqrt_mu[i]));
        let chol = match jac.cholesky() {
            Some(c) => c,
            None => break, // fall through to Picard
        };
        let delta_sym = chol.solve(&rhs);
        let delta: Vec<f64> = (0..n).map(|i| delta_sym[i] / sqrt_mu[i]).collect();
        // Backtracking line search on |G|_2.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| w[i] + step * delta[i]).collect();
            let (gt, yt) = eval_g(&trial)?;
            let rt = l2(&gt);
            if rt < res * (1.0 - 1e-4 * step) {
                w = trial;
                g = gt;
                y = yt;
                res = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        best = best.min(res);
    }

    // Damped Picard fallback: w <- w - theta M^{-1} G(w) with M the Lipschitz
    // scale of G (1/lambda from the scalar inverse plus eps ||nu - L||).
    let mut picard_iters = 0;
    if res > tol {
        let spec_max = p.nu + p.operator.spectrum().kappas.last().copied().unwrap_or(0.0);
        let lip = 1.0 / view.lambda + view.lambda + p.eps * spec_max;
        let theta = 0.9 / lip;
        while res > tol && picard_iters < p.max_picard {
            picard_iters += 1;
            for i in 0..n {
                w[i] -= theta * g[i];
            }
            let (gn, yn) = eval_g(&w)?;
            g = gn;
            y = yn;
            res = l2(&g);
        }
    }

    if res > tol {
        return Err(SolverError::NoConvergence {
            newton: newton_iters,
            picard: picard_iters,
            residual: res,
            tol,
        });
    }
    Ok(ResolventSolution {
        y,
        w,
        residual: res,
        newton_iters,
        picard_iters,
    })
}

/// Yosida operator `A^{nu,eps}_lambda(x) = (x - J_eps(x)) / eps`.
pub fn apply_yosida_operator(p: &ResolventProblem) -> Result<Vec<f64>, SolverError> {
    let sol = solve_resolvent(p)?;
    Ok(p.x
        .iter()
        .zip(&sol.y)
        .map(|(x, y)| (x - y) / p.eps)
        .collect())
}

/// Certification report for the three contraction properties of `J_eps`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ContractionReport {
    pub trials: usize,
    /// max over trials of `||Jx - Jx~||_{F*_nu} - ||x - x~||_{F*_nu}`
    pub max_violation_dual: f64,
    /// max of `|Jx - Jx~|_2 - (nu eps lambda)^{-1/2} |x - x~|_2`;
    /// absent at nu = 0 where the bound is void
    pub max_violation_l2: Option<f64>,
    /// per-p max of `|Jx|_p - |x|_p`
    pub max_violation_lp: Vec<(f64, f64)>,
    pub slack: f64,
    pub pass: bool,
}

/// Draws `trials` pairs `(x, x~)` with iid uniform(-1, 1) entries and checks
/// the dual-norm nonexpansiveness, the `(nu eps lambda)^{-1/2}` Lipschitz
/// bound in `L^2`, and the `L^p` contraction for each requested `p`.
pub fn certify_contractions(
    operator: &DirichletOperator,
    graph: YosidaView,
    eps: f64,
    nu: f64,
    ps: &[f64],
    trials: usize,
    slack: f64,
    rng: &mut impl rand::Rng,
) -> Result<ContractionReport, SolverError> {
    let n = operator.len();
    let mut max_dual = f64::NEG_INFINITY;
    let mut max_l2 = f64::NEG_INFINITY;
    let mut max_lp = vec![f64::NEG_INFINITY; ps.len()];
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol_x = solve_resolvent(&ResolventProblem::new(operator, graph, eps, nu, &x))?;
        let sol_xt = solve_resolvent(&ResolventProblem::new(operator, graph, eps, nu, &xt))?;
        let dy: Vec<f64> = sol_x.y.iter().zip(&sol_xt.y).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(&xt).map(|(a, b)| a - b).collect();
        max_dual = max_dual.max(operator.dual_norm(&dy, nu)? - operator.dual_norm(&dx, nu)?);
        if nu > 0.0 {
            let factor = 1.0 / (nu * eps * graph.lambda).sqrt();
            max_l2 = max_l2.max(
                operator.space().l2_norm(&dy) - factor * operator.space().l2_norm(&dx),
            );
        }
        for (k, &p) in ps.iter().enumerate() {
            max_lp[k] = max_lp[k].max(
                operator.space().lp_norm(&sol_x.y, p) - operator.space().lp_norm(&x, p),
            );
        }
    }
    let max_l2 = (nu > 0.0).then_some(max_l2);
    let pass = max_dual <= slack
        && max_l2.map_or(true, |v| v <= slack)
        && max_lp.iter().all(|&v| v <= slack);
    Ok(ContractionReport {
        trials,
        max_violation_dual: max_dual,
        max_violation_l2: max_l2,
        max_violation_lp: ps.iter().copied().zip(max_lp).collect(),
        slack,
        pass,
    })
}
