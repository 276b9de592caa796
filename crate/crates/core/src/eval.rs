//! Exact policy evaluation under a fixed kernel: Q-functions, returns,
//! normalized occupancy measures and the direct-parameterization policy
//! gradient `H * d(s) * Q(s,a)`.
//!
//! All quantities come from one LU factorization of `I - gamma * P_pi`, the
//! state-level form of `(I - gamma * P * Pi)^{-1}`: `V = (I - gamma P_pi)^{-1} c_pi`
//! and `Q = c + gamma * P V`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::mdp::{CostFunction, Policy, TransitionKernel};

/// Action values of a policy under a kernel, with the state values `V(s) = sum_a pi(s,a) Q(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub values: Array2<f64>,
    pub state_values: Array1<f64>,
}

impl QFunction {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[[s, a]]
    }

    /// Sup-norm residual of the Bellman equation `Q = c + gamma P Pi Q`.
    pub fn bellman_residual(
        &self,
        pi: &Policy,
        kernel: &TransitionKernel,
        cost: &CostFunction,
        gamma: f64,
    ) -> f64 {
        let (ns, na) = self.values.dim();
        let v: Array1<f64> = (0..ns)
            .map(|s| (0..na).map(|a| pi.get(s, a) * self.values[[s, a]]).sum())
            .collect();
        let mut worst: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let backup = cost.get(s, a) + gamma * kernel.row(s, a).dot(&v);
                worst = worst.max((self.values[[s, a]] - backup).abs());
            }
        }
        worst
    }
}

/// Normalized discounted state occupancy `d(s) = (1-gamma) mu^T (I - gamma P_pi)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub values: Array1<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma {gamma} must lie in (0,1)")))
    }
}

fn check_shapes(pi: &Policy, kernel: &TransitionKernel) -> Result<()> {
    if pi.num_states() != kernel.num_states() || pi.num_actions() != kernel.num_actions() {
        return Err(Error::InvalidArgument(format!(
            "policy is {}x{} but kernel is {}x{}",
            pi.num_states(),
            pi.num_actions(),
            kernel.num_states(),
            kernel.num_actions()
        )));
    }
    Ok(())
}

/// A policy paired with a kernel, factorized once for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation<'a> {
    pi: &'a Policy,
    kernel: &'a TransitionKernel,
    gamma: f64,
    lu: Lu,
}

impl<'a> PolicyEvaluation<'a> {
    pub fn new(pi: &'a Policy, kernel: &'a TransitionKernel, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        check_shapes(pi, kernel)?;
        let mut m = kernel.under_policy(pi);
        m.mapv_inplace(|v| -gamma * v);
        for s in 0..m.nrows() {
            m[[s, s]] += 1.0;
        }
        Ok(PolicyEvaluation {
            pi,
            kernel,
            gamma,
            lu: Lu::factorize(m)?,
        })
    }

    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn q_function(&self, cost: &CostFunction) -> Result<QFunction> {
        let (ns, na) = (self.pi.num_states(), self.pi.num_actions());
        if cost.shape() != (ns, na) {
            return Err(Error::InvalidArgument("cost shape mismatch".into()));
        }
        let c_pi: Array1<f64> = (0..ns)
            .map(|s| (0..na).map(|a| self.pi.get(s, a) * cost.get(s, a)).sum())
            .collect();
        let v = self.lu.solve(&c_pi);
        let mut q = Array2::zeros((ns, na));
        for s in 0..ns {
            for a in 0..na {
                q[[s, a]] = cost.get(s, a) + self.gamma * self.kernel.row(s, a).dot(&v);
            }
        }
        Ok(QFunction {
            values: q,
            state_values: v,
        })
    }

    pub fn occupancy(&self, mu: ArrayView1<f64>) -> Result<OccupancyMeasure> {
        if mu.len() != self.pi.num_states() {
            return Err(Error::InvalidArgument("mu length mismatch".into()));
        }
        let x = self.lu.solve_transpose(&mu.to_owned());
        Ok(OccupancyMeasure {
            values: x * (1.0 - self.gamma),
        })
    }

    pub fn return_value(&self, cost: &CostFunction, mu: ArrayView1<f64>) -> Result<f64> {
        Ok(mu.dot(&self.q_function(cost)?.state_values))
    }

    /// Policy gradient together with the ingredients it was built from.
    pub fn gradient_parts(
        &self,
        cost: &CostFunction,
        mu: ArrayView1<f64>,
    ) -> Result<(QFunction, OccupancyMeasure, Array2<f64>)> {
        let q = self.q_function(cost)?;
        let d = self.occupancy(mu)?;
        let grad = gradient_from(&q, &d, self.horizon());
        Ok((q, d, grad))
    }
}

/// `grad(s,a) = H * d(s) * Q(s,a)`.
pub fn gradient_from(q: &QFunction, d: &OccupancyMeasure, horizon: f64) -> Array2<f64> {
    let mut g = q.values.clone();
    for (s, mut row) in g.outer_iter_mut().enumerate() {
        let w = horizon * d.values[s];
        row.mapv_inplace(|v| w * v);
    }
    g
}

pub fn q_function(
    pi: &Policy,
    kernel: &TransitionKernel,
    cost: &CostFunction,
    gamma: f64,
) -> Result<QFunction> {
    PolicyEvaluation::new(pi, kernel, gamma)?.q_function(cost)
}

pub fn return_value(
    pi: &Policy,
    kernel: &TransitionKernel,
    cost: &CostFunction,
    gamma: f64,
    mu: ArrayView1<f64>,
) -> Result<f64> {
    PolicyEvaluation::new(pi, kernel, gamma)?.return_value(cost, mu)
}

pub fn occupancy(
    pi: &Policy,
    kernel: &TransitionKernel,
    gamma: f64,
    mu: ArrayView1<f64>,
) -> Result<OccupancyMeasure> {
    PolicyEvaluation::new(pi, kernel, gamma)?.occupancy(mu)
}

pub fn policy_gradient(
    pi: &Policy,
    kernel: &TransitionKernel,
    cost: &CostFunction,
    gamma: f64,
    mu: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    Ok(PolicyEvaluation::new(pi, kernel, gamma)?
        .gradient_parts(cost, mu)?
        .2)
}

/// Central differences of the return along `e(s,a) - e(s,a+1 mod A)`.
///
/// Entry `(s,a)` approximates `grad(s,a) - grad(s,(a+1) % A)`; it is zero when
/// `A = 1`. Used as an oracle for [`policy_gradient`].
pub fn finite_diff_gradient(
    pi: &Policy,
    kernel: &TransitionKernel,
    cost: &CostFunction,
    gamma: f64,
    mu: ArrayView1<f64>,
    step: f64,
) -> Result<Array2<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    if pi.probs().iter().any(|&p| p < step) {
        return Err(Error::InvalidArgument(
            "finite differences need a policy with every entry >= step".into(),
        ));
    }
    let (ns, na) = (pi.num_states(), pi.num_actions());
    let mut out = Array2::zeros((ns, na));
    if na == 1 {
        return Ok(out);
    }
    let eval = |probs: Array2<f64>| -> Result<f64> {
        let p = Policy::from_simplex_rows(probs);
        return_value(&p, kernel, cost, gamma, mu)
    };
    for s in 0..ns {
        for a in 0..na {
            let b = (a + 1) % na;
            let mut plus = pi.probs().clone();
            plus[[s, a]] += step;
            plus[[s, b]] -= step;
            let mut minus = pi.probs().clone();
            minus[[s, a]] -= step;
            minus[[s, b]] += step;
            out[[s, a]] = (eval(plus)? - eval(minus)?) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Directional derivatives of an analytic gradient along the pairs used by
/// [`finite_diff_gradient`].
pub fn paired_directional(grad: &Array2<f64>) -> Array2<f64> {
    let (ns, na) = grad.dim();
    Array2::from_shape_fn((ns, na), |(s, a)| {
        if na == 1 {
            0.0
        } else {
            grad[[s, a]] - grad[[s, (a + 1) % na]]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single() -> (Policy, TransitionKernel, CostFunction) {
        (
            Policy::uniform(1, 1).unwrap(),
            TransitionKernel::deterministic(&[vec![0]]).unwrap(),
            CostFunction::new(array![[1.0]]).unwrap(),
        )
    }

    #[test]
    fn geometric_series_single_state() {
        let (pi, k, c) = single();
        let mu = array![1.0];
        let q = q_function(&pi, &k, &c, 0.9).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-12);
        assert!((return_value(&pi, &k, &c, 0.9, mu.view()).unwrap() - 10.0).abs() < 1e-12);
        let g = policy_gradient(&pi, &k, &c, 0.9, mu.view()).unwrap();
        assert!((g[[0, 0]] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_cost_gives_zero_q() {
        let pi = Policy::uniform(3, 2).unwrap();
        let k = TransitionKernel::deterministic(&[vec![1, 2], vec![0, 0], vec![2, 1]]).unwrap();
        let q = q_function(&pi, &k, &CostFunction::zeros(3, 2), 0.7).unwrap();
        assert!(q.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn occupancy_sums_to_one_and_tends_to_mu() {
        let pi = Policy::new(array![[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]).unwrap();
        let k = TransitionKernel::deterministic(&[vec![1, 2], vec![0, 0], vec![2, 1]]).unwrap();
        let mu = array![0.2, 0.3, 0.5];
        let d = occupancy(&pi, &k, 0.8, mu.view()).unwrap();
        assert!((d.values.sum() - 1.0).abs() < 1e-12);
        let d0 = occupancy(&pi, &k, 1e-9, mu.view()).unwrap();
        assert!((&d0.values - &mu).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn symmetric_actions_have_equal_gradient() {
        let pi = Policy::new(array![[0.3, 0.7]]).unwrap();
        let k = TransitionKernel::deterministic(&[vec![0, 0]]).unwrap();
        let c = CostFunction::new(array![[0.4, 0.4]]).unwrap();
        let g = policy_gradient(&pi, &k, &c, 0.5, array![1.0].view()).unwrap();
        assert!((g[[0, 0]] - g[[0, 1]]).abs() < 1e-12);
    }

    #[test]
    fn invalid_gamma_rejected() {
        let (pi, k, c) = single();
        assert!(q_function(&pi, &k, &c, 1.0).is_err());
        assert!(q_function(&pi, &k, &c, 0.0).is_err());
    }

    #[test]
    fn finite_differences_reject_boundary_policy() {
        let pi = Policy::deterministic(&[0], 2).unwrap();
        let k = TransitionKernel::deterministic(&[vec![0, 0]]).unwrap();
        let c = CostFunction::zeros(1, 2);
        assert!(finite_diff_gradient(&pi, &k, &c, 0.5, array![1.0].view(), 1e-6).is_err());
        let pi = Policy::uniform(1, 2).unwrap();
        let fd = finite_diff_gradient(&pi, &k, &c, 0.5, array![1.0].view(), 1e-6).unwrap();
        assert!(fd.iter().all(|&v| v == 0.0));
    }
}
