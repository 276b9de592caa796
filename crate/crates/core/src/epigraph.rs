//! Epigraph-form solver: simplex projection, the projected policy-gradient
//! subroutine minimizing `Delta_b0(pi) = max_n J_n(pi) - b_n`, and the outer
//! bisection over the objective threshold `b0`.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Instance, Policy};
use crate::robust::{robust_eval_all, robust_values};

/// Euclidean projection of one row onto the probability simplex
/// (sort descending, find the largest `k` with `u_k > (sum_{j<=k} u_j - 1) / k`).
///
/// Rows already on the simplex up to rounding (`|sum - 1| <= 4 eps * len`) are
/// returned unchanged, which makes the projection exactly idempotent.
pub fn project_simplex(raw: &[f64]) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    if raw.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * raw.len() as f64
    {
        return raw.to_vec();
    }
    let mut u = raw.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    raw.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Row-wise simplex projection onto the policy class.
pub fn project_policy(raw: &Array2<f64>) -> Result<Policy> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "projection input contains NaN or infinity".into(),
        ));
    }
    if raw.nrows() == 0 || raw.ncols() == 0 {
        return Err(Error::InvalidArgument("empty projection input".into()));
    }
    let mut out = Array2::zeros(raw.dim());
    for (s, row) in raw.outer_iter().enumerate() {
        for (a, v) in project_simplex(&row.to_vec()).into_iter().enumerate() {
            out[[s, a]] = v;
        }
    }
    Ok(Policy::from_simplex_rows(out))
}

/// Estimated `Delta_b0` of a policy and the maximizing cost index.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaHat {
    pub value: f64,
    pub index: usize,
    pub returns: Vec<f64>,
}

/// `max_n (returns[n] - b_n)` with `b0` as the objective threshold; ties to the lowest `n`.
pub fn delta_from_returns(returns: &[f64], thresholds: &[f64], b0: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (n, &j) in returns.iter().enumerate() {
        let b = if n == 0 { b0 } else { thresholds[n - 1] };
        let d = j - b;
        if d > best.0 {
            best = (d, n);
        }
    }
    best
}

pub fn delta_hat(inst: &Instance, pi: &Policy, b0: f64) -> Result<DeltaHat> {
    if !b0.is_finite() {
        return Err(Error::InvalidArgument(format!("b0 = {b0} must be finite")));
    }
    let returns = robust_values(inst, pi)?;
    let (value, index) = delta_from_returns(&returns, &inst.thresholds, b0);
    Ok(DeltaHat {
        value,
        index,
        returns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialPolicy {
    #[default]
    Uniform,
    #[serde(skip)]
    Given(Policy),
}

impl InitialPolicy {
    pub fn resolve(&self, num_states: usize, num_actions: usize) -> Result<Policy> {
        match self {
            InitialPolicy::Uniform => Policy::uniform(num_states, num_actions),
            InitialPolicy::Given(p) => {
                if p.num_states() != num_states || p.num_actions() != num_actions {
                    return Err(Error::InvalidArgument("initial policy shape mismatch".into()));
                }
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubroutineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub initial_policy: InitialPolicy,
}

impl SubroutineConfig {
    pub fn new(iterations: usize, learning_rate: f64) -> Self {
        SubroutineConfig {
            iterations,
            learning_rate,
            initial_policy: InitialPolicy::Uniform,
        }
    }

    /// Step counts used in the finite and CMDP experiments.
    pub fn finite_default() -> Self {
        Self::new(10_000, 5e-5)
    }

    /// Step counts used in the KL experiment.
    pub fn kl_default() -> Self {
        Self::new(1_000, 5e-4)
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("subroutine needs T >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    pub outer_iterations: usize,
    pub subroutine: SubroutineConfig,
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

fn default_true() -> bool {
    true
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 || self.outer_iterations > MAX_OUTER_ITERATIONS {
            return Err(Error::InvalidArgument(format!(
                "outer iterations must lie in 1..={MAX_OUTER_ITERATIONS}, got {}",
                self.outer_iterations
            )));
        }
        self.subroutine.validate()
    }
}

/// One step of the policy-gradient subroutine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub t: usize,
    pub selected: usize,
    pub delta_hat: f64,
}

#[derive(Debug, Clone)]
pub struct SubroutineOutput {
    pub policy: Policy,
    pub best_delta: f64,
    pub best_iteration: usize,
    pub trace: Vec<InnerRecord>,
}

/// Projected subgradient descent on `Delta_b0` from the configured initial policy.
///
/// Each step follows the subgradient of the most violated cost only. Returns the
/// iterate with the smallest estimated `Delta_b0` among `pi(0), ..., pi(T)`.
pub fn pgs_subroutine(inst: &Instance, b0: f64, cfg: &SubroutineConfig) -> Result<SubroutineOutput> {
    cfg.validate()?;
    if !b0.is_finite() {
        return Err(Error::InvalidArgument(format!("b0 = {b0} must be finite")));
    }
    let mut pi = cfg
        .initial_policy
        .resolve(inst.num_states, inst.num_actions)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, usize, Policy)> = None;
    for t in 0..=cfg.iterations {
        let evals = robust_eval_all(inst, &pi)?;
        let returns: Vec<f64> = evals.iter().map(|e| e.value).collect();
        let (delta, n) = delta_from_returns(&returns, &inst.thresholds, b0);
        trace.push(InnerRecord {
            t,
            selected: n,
            delta_hat: delta,
        });
        if best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
            best = Some((delta, t, pi.clone()));
        }
        if t == cfg.iterations {
            break;
        }
        let step = pi.probs() - &(&evals[n].gradient * cfg.learning_rate);
        pi = project_policy(&step)?;
    }
    let (best_delta, best_iteration, policy) = best.expect("at least one iterate");
    Ok(SubroutineOutput {
        policy,
        best_delta,
        best_iteration,
        trace,
    })
}

/// What the bisection needs from a `min_pi Delta_b0(pi)` solver.
pub trait EpigraphOracle {
    /// Approximately minimizes `Delta_b0`, starting from `init` when given.
    fn minimize(&mut self, b0: f64, init: Option<&Policy>) -> Result<SubroutineOutput>;

    /// Estimated `Delta_b0` of a policy.
    fn delta_hat(&mut self, pi: &Policy, b0: f64) -> Result<DeltaHat>;
}

/// The projected policy-gradient subroutine on a concrete instance.
pub struct PgsOracle<'a> {
    pub inst: &'a Instance,
    pub cfg: SubroutineConfig,
}

impl EpigraphOracle for PgsOracle<'_> {
    fn minimize(&mut self, b0: f64, init: Option<&Policy>) -> Result<SubroutineOutput> {
        let mut cfg = self.cfg.clone();
        if let Some(p) = init {
            cfg.initial_policy = InitialPolicy::Given(p.clone());
        }
        pgs_subroutine(self.inst, b0, &cfg)
    }

    fn delta_hat(&mut self, pi: &Policy, b0: f64) -> Result<DeltaHat> {
        delta_hat(self.inst, pi, b0)
    }
}

/// One outer bisection step; the last record of a trace (`k = K`) is the returned policy at `j(K)`.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
    /// `upper - lower`, held exactly as `H * 2^-k`.
    pub width: f64,
    pub b0: f64,
    pub delta_hat: f64,
    pub returns: Vec<f64>,
    pub wall_ms: f64,
    pub policy: Policy,
    pub inner: Vec<InnerRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    pub outer: Vec<OuterRecord>,
}

impl SolveTrace {
    pub fn last(&self) -> Option<&OuterRecord> {
        self.outer.last()
    }
}

/// Dyadic search interval `[H lo / 2^k, H hi / 2^k]`.
#[derive(Debug, Clone, Copy)]
struct Interval {
    lo: u64,
    hi: u64,
    level: i32,
}

impl Interval {
    fn at(self, h: f64, m: u64) -> f64 {
        h * m as f64 * 2f64.powi(-self.level)
    }

    fn midpoint_num(self) -> u64 {
        self.lo + self.hi
    }
}

/// Largest supported number of outer iterations (interval numerators stay exact in `u64`).
pub const MAX_OUTER_ITERATIONS: usize = 60;

/// Bisection over `b0 in [0, H]`: raise the lower end when the estimated
/// `Delta` at the midpoint is positive, otherwise lower the upper end. The
/// returned policy is the oracle's answer at the final upper end.
pub fn bisection_search<O: EpigraphOracle>(
    oracle: &mut O,
    horizon: f64,
    outer_iterations: usize,
    warm_start: bool,
) -> Result<(Policy, SolveTrace)> {
    if outer_iterations == 0 || outer_iterations > MAX_OUTER_ITERATIONS {
        return Err(Error::InvalidArgument(format!(
            "outer iterations must lie in 1..={MAX_OUTER_ITERATIONS}, got {outer_iterations}"
        )));
    }
    let mut iv = Interval {
        lo: 0,
        hi: 1,
        level: 0,
    };
    let mut trace = SolveTrace::default();
    let mut prev: Option<Policy> = None;
    for k in 0..outer_iterations {
        let started = Instant::now();
        let mid = iv.midpoint_num();
        let child = Interval {
            lo: 2 * iv.lo,
            hi: 2 * iv.hi,
            level: iv.level + 1,
        };
        let b0 = child.at(horizon, mid);
        let init = if warm_start { prev.as_ref() } else { None };
        let out = oracle.minimize(b0, init)?;
        let dh = oracle.delta_hat(&out.policy, b0)?;
        log::debug!("bisection k={k} b0={b0:.6} delta_hat={:.6e}", dh.value);
        trace.outer.push(OuterRecord {
            k,
            lower: iv.at(horizon, iv.lo),
            upper: iv.at(horizon, iv.hi),
            width: iv.at(horizon, iv.hi - iv.lo),
            b0,
            delta_hat: dh.value,
            returns: dh.returns,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            policy: out.policy.clone(),
            inner: out.trace,
        });
        iv = if dh.value > 0.0 {
            Interval { lo: mid, ..child }
        } else {
            Interval { hi: mid, ..child }
        };
        prev = Some(out.policy);
    }
    let started = Instant::now();
    let b0 = iv.at(horizon, iv.hi);
    let init = if warm_start { prev.as_ref() } else { None };
    let out = oracle.minimize(b0, init)?;
    let dh = oracle.delta_hat(&out.policy, b0)?;
    trace.outer.push(OuterRecord {
        k: outer_iterations,
        lower: iv.at(horizon, iv.lo),
        upper: b0,
        width: iv.at(horizon, iv.hi - iv.lo),
        b0,
        delta_hat: dh.value,
        returns: dh.returns,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        policy: out.policy.clone(),
        inner: out.trace,
    });
    Ok((out.policy, trace))
}

/// Bisection with the projected policy-gradient subroutine on `inst`.
pub fn bisection_solve(inst: &Instance, cfg: &BisectionConfig) -> Result<(Policy, SolveTrace)> {
    inst.ensure_valid()?;
    cfg.validate()?;
    let mut oracle = PgsOracle {
        inst,
        cfg: cfg.subroutine.clone(),
    };
    bisection_search(&mut oracle, inst.horizon(), cfg.outer_iterations, cfg.warm_start)
}

/// Closed-form step size, iteration counts and constants of the convergence theory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalParams {
    pub lipschitz: f64,
    pub weak_convexity: f64,
    pub c: f64,
    pub c_grad: f64,
    pub c_eval: f64,
    pub c_alpha: f64,
    pub c_t: f64,
    /// Required subgradient accuracy `C_grad * eps^2`.
    pub grad_error: f64,
    /// Required evaluation accuracy `C_eval * eps^2`.
    pub eval_error: f64,
    /// Subroutine step size `C_alpha * eps^2 / 4`.
    pub alpha: f64,
    /// Subroutine length `16 C_T eps^-4` (kept as a float; it overflows integers quickly).
    pub t: f64,
    /// Outer iterations `floor(log2(2H / eps))`.
    pub k: u32,
}

/// Evaluates the convergence constants for `(S, A, gamma)`, the coverage
/// constant `d_coverage` and target accuracy `epsilon`.
///
/// `C = 1/(2 gamma H sqrt(A)) + 2 D H sqrt(S)`, `l_pi = H^2 sqrt(A)`,
/// `l_grad = 2 gamma A H^3`.
pub fn theoretical_params(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    d_coverage: f64,
    epsilon: f64,
) -> Result<TheoreticalParams> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument("S and A must be positive".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must lie in (0,1)")));
    }
    if !(d_coverage > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage constant D = {d_coverage} must be positive"
        )));
    }
    let h = 1.0 / (1.0 - gamma);
    if !(epsilon > 0.0 && epsilon < h) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must lie in (0, H = {h})"
        )));
    }
    let (s, a) = (num_states as f64, num_actions as f64);
    let lipschitz = h * h * a.sqrt();
    let weak_convexity = 2.0 * gamma * a * h.powi(3);
    let c = 1.0 / (2.0 * gamma * h * a.sqrt()) + 2.0 * d_coverage * h * s.sqrt();
    let c_grad = 1.0 / (1024.0 * c * c * weak_convexity * s.sqrt());
    let c_eval = 1.0 / (1024.0 * c * c * weak_convexity);
    let grad_error = c_grad * epsilon * epsilon;
    let eval_error = c_eval * epsilon * epsilon;
    let c_alpha = 1.0 / (64.0 * c * c * weak_convexity * (lipschitz * lipschitz + grad_error));
    let c_t = 4096.0
        * c.powi(4)
        * weak_convexity * weak_convexity
        * s
        * (lipschitz * lipschitz + grad_error * grad_error);
    let k = (2.0 * h / epsilon).log2().floor() as u32;
    Ok(TheoreticalParams {
        lipschitz,
        weak_convexity,
        c,
        c_grad,
        c_eval,
        c_alpha,
        c_t,
        grad_error,
        eval_error,
        alpha: c_alpha * epsilon * epsilon / 4.0,
        t: 16.0 * c_t / epsilon.powi(4),
        k,
    })
}
