//! Robust return and subgradient evaluators for finite and `(s,a)`-rectangular
//! KL uncertainty sets.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::eval::{gradient_from, OccupancyMeasure, PolicyEvaluation, QFunction};
use crate::mdp::{Instance, Policy, TransitionKernel, UncertaintySet};

/// Sup-norm stopping tolerance of the KL fixed-point iteration.
pub const KL_TOL: f64 = 1e-10;

/// Worst-case return of one cost together with a subgradient at the worst kernel.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub value: f64,
    pub worst_kernel: TransitionKernel,
    /// Index of the worst kernel in a finite set.
    pub kernel_index: Option<usize>,
    pub q: QFunction,
    pub occupancy: OccupancyMeasure,
    pub gradient: Array2<f64>,
}

fn check_index(inst: &Instance, n: usize) -> Result<()> {
    if n >= inst.costs.len() {
        return Err(Error::CostIndexOutOfRange {
            index: n,
            count: inst.costs.len(),
        });
    }
    Ok(())
}

fn finite_kernels(inst: &Instance) -> Result<&[TransitionKernel]> {
    match &inst.uncertainty {
        UncertaintySet::Finite(ks) if !ks.is_empty() => Ok(ks),
        UncertaintySet::Finite(_) => Err(Error::UnsupportedUncertainty(
            "finite uncertainty set is empty".into(),
        )),
        UncertaintySet::KlRectangular { .. } => Err(Error::UnsupportedUncertainty(
            "finite evaluator called on a KL set".into(),
        )),
    }
}

fn kl_params(inst: &Instance) -> Result<(&TransitionKernel, f64)> {
    match &inst.uncertainty {
        UncertaintySet::KlRectangular { nominal, reg } => Ok((nominal, *reg)),
        UncertaintySet::Finite(_) => Err(Error::UnsupportedUncertainty(
            "KL evaluator called on a finite set".into(),
        )),
    }
}

fn finite_result(
    inst: &Instance,
    evals: &[PolicyEvaluation<'_>],
    kernels: &[TransitionKernel],
    n: usize,
) -> Result<EvalResult> {
    let cost = &inst.costs[n];
    let mut best: Option<(usize, f64, QFunction)> = None;
    for (m, ev) in evals.iter().enumerate() {
        let q = ev.q_function(cost)?;
        let j = inst.mu.dot(&q.state_values);
        if best.as_ref().is_none_or(|(_, bj, _)| j > *bj) {
            best = Some((m, j, q));
        }
    }
    let (m, value, q) = best.expect("non-empty kernel list");
    let occupancy = evals[m].occupancy(inst.mu.view())?;
    let gradient = gradient_from(&q, &occupancy, inst.horizon());
    Ok(EvalResult {
        value,
        worst_kernel: kernels[m].clone(),
        kernel_index: Some(m),
        q,
        occupancy,
        gradient,
    })
}

/// Evaluates every kernel of a finite set and keeps the one with the largest
/// return (ties to the lowest index).
pub fn eval_finite(inst: &Instance, n: usize, pi: &Policy) -> Result<EvalResult> {
    check_index(inst, n)?;
    let kernels = finite_kernels(inst)?;
    let evals = kernels
        .iter()
        .map(|k| PolicyEvaluation::new(pi, k, inst.gamma))
        .collect::<Result<Vec<_>>>()?;
    finite_result(inst, &evals, kernels, n)
}

/// Converged regularized robust Q-function and the worst kernel it induces.
#[derive(Debug, Clone)]
pub struct KlFixedPoint {
    pub q: QFunction,
    pub worst_kernel: TransitionKernel,
    pub iterations: usize,
    /// `||Q(t+1) - Q(t)||_inf` for every iteration performed.
    pub residuals: Vec<f64>,
}

/// Iteration cap `ceil(ln(H / tol) / ln(1 / gamma)) + 100`.
pub fn kl_iteration_cap(gamma: f64) -> usize {
    let h = 1.0 / (1.0 - gamma);
    ((h / KL_TOL).ln() / (1.0 / gamma).ln()).ceil() as usize + 100
}

fn state_values(pi: &Policy, q: &Array2<f64>) -> Vec<f64> {
    q.outer_iter()
        .enumerate()
        .map(|(s, row)| row.iter().enumerate().map(|(a, v)| pi.get(s, a) * v).sum())
        .collect()
}

/// Exponential tilt weights `exp((V(s') - max V) / reg)`.
fn tilt_weights(v: &[f64], reg: f64) -> Vec<f64> {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| ((x - vmax) / reg).exp()).collect()
}

/// Iterates the KL-regularized robust Bellman update from `Q = 0`.
///
/// Each step computes, for every `(s,a)`,
/// `Q(s,a) = c(s,a) + gamma * max_p { <p, V> - reg * KL(p || P(.|s,a)) }`,
/// whose maximizer is `p ∝ P(.|s,a) exp(V / reg)` and whose value is
/// `reg * ln sum_s' P(s'|s,a) exp(V(s') / reg)`.
pub fn kl_regularized_fixed_point(inst: &Instance, n: usize, pi: &Policy) -> Result<KlFixedPoint> {
    check_index(inst, n)?;
    let (nominal, reg) = kl_params(inst)?;
    if !(reg > 0.0) {
        return Err(Error::InvalidArgument(format!("KL regularization {reg} must be positive")));
    }
    let (ns, na) = (inst.num_states, inst.num_actions);
    let cost = &inst.costs[n];
    let gamma = inst.gamma;
    let probs = nominal.probs();
    let cap = kl_iteration_cap(gamma);

    // Flat row-major buffers; the loop runs thousands of times per evaluation.
    let p = probs.as_standard_layout();
    let p = p.as_slice().expect("standard layout");
    let c: Vec<f64> = (0..ns * na).map(|i| cost.get(i / na, i % na)).collect();
    let w_pi: Vec<f64> = (0..ns * na).map(|i| pi.get(i / na, i % na)).collect();
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    let mut w = vec![0.0; ns];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cap {
        let mut vmax = f64::NEG_INFINITY;
        for s in 0..ns {
            let row = s * na..(s + 1) * na;
            v[s] = q[row.clone()].iter().zip(&w_pi[row]).map(|(x, y)| x * y).sum();
            vmax = vmax.max(v[s]);
        }
        // ln sum p exp(u) as ln_1p(sum p expm1(u)): for large reg, u is tiny
        // and the plain form cancels catastrophically.
        for (wt, vt) in w.iter_mut().zip(&v) {
            *wt = ((vt - vmax) / reg).exp_m1();
        }
        let mut r: f64 = 0.0;
        for (i, qi) in q.iter_mut().enumerate() {
            let z: f64 = p[i * ns..(i + 1) * ns].iter().zip(&w).map(|(x, y)| x * y).sum();
            let next = c[i] + gamma * (vmax + reg * z.ln_1p());
            r = r.max((next - *qi).abs());
            *qi = next;
        }
        residuals.push(r);
        if r <= KL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: cap,
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        });
    }

    let q = Array2::from_shape_vec((ns, na), q).expect("shape");
    let v = state_values(pi, &q);
    let w = tilt_weights(&v, reg);
    let mut worst = Array3::zeros((ns, na, ns));
    for s in 0..ns {
        for a in 0..na {
            let z: f64 = (0..ns).map(|t| probs[[s, a, t]] * w[t]).sum();
            for t in 0..ns {
                worst[[s, a, t]] = probs[[s, a, t]] * w[t] / z;
            }
        }
    }
    Ok(KlFixedPoint {
        q: QFunction {
            values: q,
            state_values: v.into(),
        },
        worst_kernel: TransitionKernel::new(worst)?,
        iterations: residuals.len(),
        residuals,
    })
}

/// Runs the regularized fixed point, then evaluates the policy exactly under
/// the assembled worst kernel.
pub fn eval_kl(inst: &Instance, n: usize, pi: &Policy) -> Result<EvalResult> {
    let fp = kl_regularized_fixed_point(inst, n, pi)?;
    let ev = PolicyEvaluation::new(pi, &fp.worst_kernel, inst.gamma)?;
    let (q, occupancy, gradient) = ev.gradient_parts(&inst.costs[n], inst.mu.view())?;
    let value = inst.mu.dot(&q.state_values);
    Ok(EvalResult {
        value,
        worst_kernel: fp.worst_kernel,
        kernel_index: None,
        q,
        occupancy,
        gradient,
    })
}

pub fn robust_eval(inst: &Instance, n: usize, pi: &Policy) -> Result<EvalResult> {
    match inst.uncertainty {
        UncertaintySet::Finite(_) => eval_finite(inst, n, pi),
        UncertaintySet::KlRectangular { .. } => eval_kl(inst, n, pi),
    }
}

/// Robust evaluations of every cost `0..=N`, sharing kernel factorizations.
pub fn robust_eval_all(inst: &Instance, pi: &Policy) -> Result<Vec<EvalResult>> {
    match &inst.uncertainty {
        UncertaintySet::Finite(_) => {
            let kernels = finite_kernels(inst)?;
            let evals = kernels
                .iter()
                .map(|k| PolicyEvaluation::new(pi, k, inst.gamma))
                .collect::<Result<Vec<_>>>()?;
            (0..inst.costs.len())
                .map(|n| finite_result(inst, &evals, kernels, n))
                .collect()
        }
        UncertaintySet::KlRectangular { .. } => {
            (0..inst.costs.len()).map(|n| eval_kl(inst, n, pi)).collect()
        }
    }
}

/// Robust returns of every cost `0..=N`.
pub fn robust_values(inst: &Instance, pi: &Policy) -> Result<Vec<f64>> {
    match &inst.uncertainty {
        UncertaintySet::Finite(_) => {
            let kernels = finite_kernels(inst)?;
            let evals = kernels
                .iter()
                .map(|k| PolicyEvaluation::new(pi, k, inst.gamma))
                .collect::<Result<Vec<_>>>()?;
            let mut out = vec![f64::NEG_INFINITY; inst.costs.len()];
            for ev in &evals {
                for (n, cost) in inst.costs.iter().enumerate() {
                    let j = ev.return_value(cost, inst.mu.view())?;
                    if j > out[n] {
                        out[n] = j;
                    }
                }
            }
            Ok(out)
        }
        UncertaintySet::KlRectangular { .. } => Ok(robust_eval_all(inst, pi)?
            .into_iter()
            .map(|r| r.value)
            .collect()),
    }
}

/// `KL(p || q)` in nats; infinite when `p` puts mass where `q` has none.
pub fn kl_divergence(p: ndarray::ArrayView1<f64>, q: ndarray::ArrayView1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}
