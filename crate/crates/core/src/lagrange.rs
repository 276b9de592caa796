//! Lagrangian baseline: `L_lambda(pi) = J_0(pi) + sum_n lambda_n (J_n(pi) - b_n)`
//! minimized by projected policy gradient with dual ascent on the multipliers,
//! plus the policy- and occupancy-averaging variants.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::epigraph::{project_policy, InitialPolicy};
use crate::error::{Error, Result};
use crate::eval::PolicyEvaluation;
use crate::mdp::{Instance, Policy};
use crate::robust::{robust_eval_all, robust_values, EvalResult};

/// Occupancy mass below which a state's row is extracted as uniform.
pub const ZERO_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    #[serde(default = "default_alpha_lambda")]
    pub alpha_lambda: f64,
    pub alpha_pi: f64,
    /// Starting multipliers; empty means all zeros.
    #[serde(default)]
    pub initial_lambda: Vec<f64>,
    #[serde(default)]
    pub initial_policy: InitialPolicy,
}

fn default_alpha_lambda() -> f64 {
    0.01
}

impl LagrangeConfig {
    pub fn new(outer_iterations: usize, inner_iterations: usize, alpha_pi: f64) -> Self {
        LagrangeConfig {
            outer_iterations,
            inner_iterations,
            alpha_lambda: default_alpha_lambda(),
            alpha_pi,
            initial_lambda: Vec::new(),
            initial_policy: InitialPolicy::Uniform,
        }
    }

    fn validate(&self, num_constraints: usize) -> Result<Vec<f64>> {
        if self.outer_iterations == 0 || self.inner_iterations == 0 {
            return Err(Error::InvalidArgument(
                "Lagrangian solver needs K >= 1 and T >= 1".into(),
            ));
        }
        if !(self.alpha_lambda > 0.0) || !(self.alpha_pi > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        let lambda = if self.initial_lambda.is_empty() {
            vec![0.0; num_constraints]
        } else {
            self.initial_lambda.clone()
        };
        check_lambda(&lambda, num_constraints)?;
        Ok(lambda)
    }
}

fn check_lambda(lambda: &[f64], num_constraints: usize) -> Result<()> {
    if lambda.len() != num_constraints {
        return Err(Error::InvalidArgument(format!(
            "expected {num_constraints} multipliers, got {}",
            lambda.len()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidArgument(format!("multiplier {l} must be non-negative")));
    }
    Ok(())
}

fn value_from(inst: &Instance, returns: &[f64], lambda: &[f64]) -> f64 {
    returns[0]
        + lambda
            .iter()
            .enumerate()
            .map(|(i, l)| l * (returns[i + 1] - inst.thresholds[i]))
            .sum::<f64>()
}

fn subgradient_from(evals: &[EvalResult], lambda: &[f64]) -> Array2<f64> {
    let mut g = evals[0].gradient.clone();
    for (i, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            g.scaled_add(l, &evals[i + 1].gradient);
        }
    }
    g
}

pub fn lagrangian_value(inst: &Instance, pi: &Policy, lambda: &[f64]) -> Result<f64> {
    check_lambda(lambda, inst.num_constraints())?;
    Ok(value_from(inst, &robust_values(inst, pi)?, lambda))
}

/// Sum of per-term worst-kernel gradients, `g_0 + sum_n lambda_n g_n`.
pub fn lagrangian_subgradient(inst: &Instance, pi: &Policy, lambda: &[f64]) -> Result<Array2<f64>> {
    check_lambda(lambda, inst.num_constraints())?;
    Ok(subgradient_from(&robust_eval_all(inst, pi)?, lambda))
}

/// Per-round record of the Lagrangian solver.
#[derive(Debug, Clone)]
pub struct LfRecord {
    pub k: usize,
    /// Multipliers used for this round's inner minimization.
    pub lambda: Vec<f64>,
    /// Policy chosen by this round (the next outer iterate).
    pub policy: Policy,
    pub returns: Vec<f64>,
    pub lagrangian: f64,
    pub violation: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LfOutput {
    pub policy: Policy,
    /// `lambda(0), ..., lambda(K)`.
    pub lambdas: Vec<Vec<f64>>,
    pub trace: Vec<LfRecord>,
}

impl LfOutput {
    /// Outer iterates `pi(1), ..., pi(K)`.
    pub fn policies(&self) -> Vec<Policy> {
        self.trace.iter().map(|r| r.policy.clone()).collect()
    }
}

/// Largest constraint violation `max_n J_n - b_n` over `n >= 1`; `-inf` without constraints.
pub fn max_violation(inst: &Instance, returns: &[f64]) -> f64 {
    inst.thresholds
        .iter()
        .enumerate()
        .map(|(i, b)| returns[i + 1] - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn lf_solve(inst: &Instance, cfg: &LagrangeConfig) -> Result<LfOutput> {
    inst.ensure_valid()?;
    let mut lambda = cfg.validate(inst.num_constraints())?;
    let mut pi = cfg
        .initial_policy
        .resolve(inst.num_states, inst.num_actions)?;
    let mut lambdas = vec![lambda.clone()];
    let mut trace = Vec::with_capacity(cfg.outer_iterations);
    for k in 0..cfg.outer_iterations {
        let started = Instant::now();
        let mut inner = pi.clone();
        let mut best: Option<(f64, Policy, Vec<f64>)> = None;
        for t in 0..=cfg.inner_iterations {
            let evals = robust_eval_all(inst, &inner)?;
            let returns: Vec<f64> = evals.iter().map(|e| e.value).collect();
            let l = value_from(inst, &returns, &lambda);
            if best.as_ref().is_none_or(|(bl, _, _)| l < *bl) {
                best = Some((l, inner.clone(), returns));
            }
            if t == cfg.inner_iterations {
                break;
            }
            let g = subgradient_from(&evals, &lambda);
            inner = project_policy(&(inner.probs() - &(g * cfg.alpha_pi)))?;
        }
        let (l, chosen, returns) = best.expect("at least one inner iterate");
        let violation = max_violation(inst, &returns);
        trace.push(LfRecord {
            k,
            lambda: lambda.clone(),
            policy: chosen.clone(),
            returns: returns.clone(),
            lagrangian: l,
            violation,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        lambda = dual_update(&lambda, &returns[1..], &inst.thresholds, cfg.alpha_lambda);
        lambdas.push(lambda.clone());
        pi = chosen;
    }
    Ok(LfOutput {
        policy: pi,
        lambdas,
        trace,
    })
}

/// Projected dual ascent `lambda_n <- max(lambda_n + step (J_n - b_n), 0)`.
pub fn dual_update(lambda: &[f64], constraint_returns: &[f64], thresholds: &[f64], step: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(constraint_returns.iter().zip(thresholds))
        .map(|(l, (j, b))| (l + step * (j - b)).max(0.0))
        .collect()
}

pub fn average_policies(policies: &[Policy]) -> Result<Policy> {
    let first = policies
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty policy list".into()))?;
    let mut sum = Array2::<f64>::zeros(first.probs().dim());
    for p in policies {
        if p.probs().dim() != sum.dim() {
            return Err(Error::InvalidArgument("policies differ in shape".into()));
        }
        sum += p.probs();
    }
    sum /= policies.len() as f64;
    Policy::new(sum)
}

/// Averages the state-action occupancies `d_j(s) pi_j(s,a)` under the single
/// kernel of a CMDP and extracts the policy that induces the average.
pub fn average_occupancy_policy(inst: &Instance, policies: &[Policy]) -> Result<Policy> {
    let kernel = inst.singleton_kernel()?;
    if policies.is_empty() {
        return Err(Error::InvalidArgument("cannot average an empty policy list".into()));
    }
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut q = Array2::<f64>::zeros((ns, na));
    for p in policies {
        let d = PolicyEvaluation::new(p, kernel, inst.gamma)?.occupancy(inst.mu.view())?;
        for s in 0..ns {
            for a in 0..na {
                q[[s, a]] += d.values[s] * p.get(s, a);
            }
        }
    }
    q /= policies.len() as f64;
    policy_from_occupancy(&q)
}

/// `pi(s,a) = q(s,a) / sum_a q(s,a)`, uniform where the state has no mass.
pub fn policy_from_occupancy(q: &Array2<f64>) -> Result<Policy> {
    let (ns, na) = q.dim();
    let mut probs = Array2::zeros((ns, na));
    for s in 0..ns {
        let mass: f64 = q.row(s).iter().map(|v| v.max(0.0)).sum();
        for a in 0..na {
            probs[[s, a]] = if mass < ZERO_MASS {
                1.0 / na as f64
            } else {
                q[[s, a]].max(0.0) / mass
            };
        }
    }
    Policy::new(probs)
}
