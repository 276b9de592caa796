//! Self-checks run by the `validate` subcommand: counterexample closed forms,
//! LP cross-checks and analytic-versus-numerical gradients.

use serde::Serialize;

use crate::envgen::{
    counterexample_instance, counterexample_policies, counterexample_returns, random_instance, GenSpec,
    Setting,
};
use crate::error::Result;
use crate::eval::{finite_diff_gradient, paired_directional, policy_gradient, return_value, PolicyEvaluation};
use crate::lagrange::lagrangian_value;
use crate::lp::solve_cmdp_lp;
use crate::mdp::{CostFunction, Instance, Policy, UncertaintySet};
use crate::robust::robust_values;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed error.
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: error <= tolerance,
            error,
            tolerance,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: error {:.3e} (tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance
        )
    }
}

pub const GAMMA_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.9];

/// Largest error of the eight closed-form returns and of the Lagrangian gap
/// `L(pi2) - L(pi1) = H gamma / 4 - 3 H delta / 4` (`lambda = 1`).
pub fn counterexample_errors(gamma: f64, delta: f64) -> Result<(f64, f64)> {
    let inst = counterexample_instance(gamma, delta)?;
    let (p1, p2) = counterexample_policies();
    let UncertaintySet::Finite(ks) = &inst.uncertainty else {
        unreachable!("counterexample uses a finite set")
    };
    let expected = counterexample_returns(gamma, delta);
    let mut ret_err: f64 = 0.0;
    for (i, pi) in [&p1, &p2].into_iter().enumerate() {
        for (j, (c, k)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let v = return_value(pi, &ks[k], &inst.costs[c], gamma, inst.mu.view())?;
            ret_err = ret_err.max((v - expected[i][j]).abs());
        }
    }
    let h = inst.horizon();
    let gap = lagrangian_value(&inst, &p2, &[1.0])? - lagrangian_value(&inst, &p1, &[1.0])?;
    let gap_err = (gap - (h * gamma / 4.0 - 3.0 * h * delta / 4.0)).abs();
    Ok((ret_err, gap_err))
}

pub fn check_counterexample() -> Result<Vec<Check>> {
    let mut ret: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for gamma in GAMMA_GRID {
        for delta in [0.0, gamma / 8.0, gamma / 4.0] {
            let (r, g) = counterexample_errors(gamma, delta)?;
            ret = ret.max(r);
            gap = gap.max(g);
        }
    }
    Ok(vec![
        Check::new("counterexample closed-form returns", ret, 1e-9),
        Check::new("counterexample Lagrangian gap", gap, 1e-9),
    ])
}

/// Exhaustive minimum of the objective over deterministic policies (`|U| = 1`).
pub fn deterministic_minimum(inst: &Instance) -> Result<f64> {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let kernel = inst.singleton_kernel()?;
    let total = (na as u64).pow(ns as u32);
    let mut best = f64::INFINITY;
    let mut actions = vec![0usize; ns];
    for code in 0..total {
        let mut c = code;
        for a in actions.iter_mut() {
            *a = (c % na as u64) as usize;
            c /= na as u64;
        }
        let pi = Policy::deterministic(&actions, na)?;
        best = best.min(return_value(&pi, kernel, &inst.costs[0], inst.gamma, inst.mu.view())?);
    }
    Ok(best)
}

/// Largest deviation between the LP value and the extracted policy's return,
/// and largest constraint excess of that policy.
pub fn lp_consistency(inst: &Instance) -> Result<(f64, f64)> {
    let sol = solve_cmdp_lp(inst)?;
    let j = robust_values(inst, &sol.policy)?;
    let excess = inst
        .thresholds
        .iter()
        .enumerate()
        .map(|(n, b)| j[n + 1] - b)
        .fold(0.0, f64::max);
    Ok(((j[0] - sol.value).abs(), excess))
}

pub fn check_lp(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let mut value_err: f64 = 0.0;
    let mut excess: f64 = 0.0;
    let mut enum_err: f64 = 0.0;
    for seed in seeds {
        let spec = GenSpec {
            num_states: 5,
            num_actions: 3,
            gamma: 0.9,
            num_constraints: 2,
            ..GenSpec::defaults(Setting::Cmdp)
        }
        .with_seed(seed);
        let (v, e) = lp_consistency(&random_instance(&spec)?)?;
        value_err = value_err.max(v);
        excess = excess.max(e);

        let spec = GenSpec {
            num_states: 3,
            num_actions: 3,
            gamma: 0.9,
            num_constraints: 0,
            ..GenSpec::defaults(Setting::Cmdp)
        }
        .with_seed(seed);
        let inst = random_instance(&spec)?;
        let lp = solve_cmdp_lp(&inst)?.value;
        enum_err = enum_err.max((lp - deterministic_minimum(&inst)?).abs());
    }
    Ok(vec![
        Check::new("LP value reproduced by extracted policy", value_err, 1e-7),
        Check::new("LP policy constraint excess", excess, 1e-7),
        Check::new("LP equals deterministic enumeration (N = 0)", enum_err, 1e-8),
    ])
}

/// `||fd - analytic|| / max(||analytic||, 1e-12)` for the paired directional derivatives.
pub fn gradient_relative_error(
    inst: &Instance,
    pi: &Policy,
    cost: &CostFunction,
    step: f64,
) -> Result<f64> {
    let kernel = match &inst.uncertainty {
        UncertaintySet::Finite(ks) => &ks[0],
        UncertaintySet::KlRectangular { nominal, .. } => nominal,
    };
    let g = policy_gradient(pi, kernel, cost, inst.gamma, inst.mu.view())?;
    let fd = finite_diff_gradient(pi, kernel, cost, inst.gamma, inst.mu.view(), step)?;
    let an = paired_directional(&g);
    let diff = (&fd - &an).mapv(|v| v * v).sum().sqrt();
    let norm = an.mapv(|v| v * v).sum().sqrt();
    Ok(diff / norm.max(1e-12))
}

/// Random interior policy with every entry at least `floor`.
pub fn interior_policy<R: rand::Rng>(rng: &mut R, ns: usize, na: usize, floor: f64) -> Result<Policy> {
    let raw = ndarray::Array2::from_shape_fn((ns, na), |_| floor + rng.random::<f64>());
    let sums = raw.sum_axis(ndarray::Axis(1));
    let probs = ndarray::Array2::from_shape_fn((ns, na), |(s, a)| raw[[s, a]] / sums[s]);
    Policy::new(probs)
}

pub fn check_gradients(count: u64) -> Result<Vec<Check>> {
    use rand::{Rng, SeedableRng};
    let mut worst: f64 = 0.0;
    let mut occ_err: f64 = 0.0;
    for seed in 0..count {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = GenSpec {
            num_states: rng.random_range(1..=6),
            num_actions: rng.random_range(1..=4),
            gamma: rng.random_range(0.5..0.95),
            num_constraints: 0,
            ..GenSpec::defaults(Setting::Cmdp)
        }
        .with_seed(seed);
        let inst = random_instance(&spec)?;
        let pi = interior_policy(&mut rng, inst.num_states, inst.num_actions, 0.05)?;
        // Dense costs: generated {0,1} costs are often constant, with a zero gradient.
        let cost = CostFunction::new(ndarray::Array2::from_shape_fn(
            (inst.num_states, inst.num_actions),
            |_| rng.random::<f64>(),
        ))?;
        worst = worst.max(gradient_relative_error(&inst, &pi, &cost, 1e-5)?);
        let d = PolicyEvaluation::new(&pi, inst.singleton_kernel()?, inst.gamma)?.occupancy(inst.mu.view())?;
        occ_err = occ_err.max((d.values.sum() - 1.0).abs());
    }
    Ok(vec![
        Check::new("policy gradient vs finite differences", worst, 1e-4),
        Check::new("occupancy normalization", occ_err, 1e-10),
    ])
}

/// All checks of the `validate` subcommand.
pub fn run_all() -> Result<Vec<Check>> {
    let mut checks = check_counterexample()?;
    checks.extend(check_lp(0..10)?);
    checks.extend(check_gradients(100)?);
    Ok(checks)
}
