//! Seeded random RCMDP environments and the two-kernel gradient-conflict
//! counterexample.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CostFunction, GeneratorInfo, Instance, Policy, TransitionKernel, UncertaintySet, THRESHOLD_SLACK};
use crate::robust::robust_values;

/// Name recorded in generated files.
pub const RNG_NAME: &str = "chacha8-seed_from_u64";

const KERNEL_CONCENTRATION: f64 = 0.1;
const MU_CONCENTRATION: f64 = 0.5;
const ZERO_COST_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Finite,
    Kl,
    Cmdp,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Finite => "finite",
            Setting::Kl => "kl",
            Setting::Cmdp => "cmdp",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite" => Ok(Setting::Finite),
            "kl" => Ok(Setting::Kl),
            "cmdp" => Ok(Setting::Cmdp),
            other => Err(Error::InvalidArgument(format!(
                "unknown setting {other:?} (expected finite, kl or cmdp)"
            ))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub setting: Setting,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Kernels in the finite setting (ignored otherwise).
    #[serde(default = "default_kernels")]
    pub num_kernels: usize,
    /// KL regularization weight (kl setting only).
    #[serde(default = "default_reg")]
    pub kl_reg: f64,
    #[serde(default = "default_constraints")]
    pub num_constraints: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kernels() -> usize {
    5
}

fn default_reg() -> f64 {
    2.0
}

fn default_constraints() -> usize {
    5
}

impl GenSpec {
    /// Sizes used for each experimental setting.
    pub fn defaults(setting: Setting) -> Self {
        let (num_states, num_actions, gamma) = match setting {
            Setting::Finite => (7, 4, 0.995),
            Setting::Kl => (5, 3, 0.99),
            Setting::Cmdp => (7, 4, 0.99),
        };
        GenSpec {
            setting,
            num_states,
            num_actions,
            gamma,
            num_kernels: default_kernels(),
            kl_reg: default_reg(),
            num_constraints: default_constraints(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidArgument("S and A must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} must lie in (0,1)",
                self.gamma
            )));
        }
        if self.setting == Setting::Finite && self.num_kernels == 0 {
            return Err(Error::InvalidArgument("finite setting needs at least one kernel".into()));
        }
        if self.setting == Setting::Kl && !(self.kl_reg > 0.0 && self.kl_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kl_reg {} must be positive",
                self.kl_reg
            )));
        }
        Ok(())
    }
}

/// Normalized Gamma(alpha) variates. `None` if every draw underflowed to zero.
fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, len: usize) -> Option<Vec<f64>> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..len).map(|_| g.sample(rng)).collect();
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    Some(v)
}

/// Rows are redrawn when they underflow, and also when they contain an exact
/// zero if `positive` is set (the KL evaluator needs a full-support nominal).
fn random_kernel<R: Rng>(rng: &mut R, ns: usize, na: usize, positive: bool) -> Result<TransitionKernel> {
    let mut p = Array3::zeros((ns, na, ns));
    for s in 0..ns {
        for a in 0..na {
            let row = loop {
                match dirichlet(rng, KERNEL_CONCENTRATION, ns) {
                    Some(r) if !positive || r.iter().all(|&x| x > 0.0) => break r,
                    _ => continue,
                }
            };
            for (sp, v) in row.into_iter().enumerate() {
                p[[s, a, sp]] = v;
            }
        }
    }
    TransitionKernel::new(p)
}

fn random_cost<R: Rng>(rng: &mut R, ns: usize, na: usize) -> Result<CostFunction> {
    let c = Array2::from_shape_fn((ns, na), |_| {
        if rng.random::<f64>() < ZERO_COST_PROB {
            0.0
        } else {
            1.0
        }
    });
    CostFunction::new(c)
}

/// Samples an instance: kernels first, then the `N + 1` costs, then `mu`.
/// Thresholds come from [`feasible_thresholds`].
pub fn random_instance(spec: &GenSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ns, na) = (spec.num_states, spec.num_actions);
    let uncertainty = match spec.setting {
        Setting::Finite => UncertaintySet::Finite(
            (0..spec.num_kernels)
                .map(|_| random_kernel(&mut rng, ns, na, false))
                .collect::<Result<_>>()?,
        ),
        Setting::Cmdp => UncertaintySet::Finite(vec![random_kernel(&mut rng, ns, na, false)?]),
        Setting::Kl => UncertaintySet::KlRectangular {
            nominal: random_kernel(&mut rng, ns, na, true)?,
            reg: spec.kl_reg,
        },
    };
    let costs = (0..=spec.num_constraints)
        .map(|_| random_cost(&mut rng, ns, na))
        .collect::<Result<Vec<_>>>()?;
    let mu = loop {
        if let Some(m) = dirichlet(&mut rng, MU_CONCENTRATION, ns) {
            break Array1::from(m);
        }
    };
    let mut inst = Instance {
        num_states: ns,
        num_actions: na,
        gamma: spec.gamma,
        mu,
        costs,
        thresholds: vec![0.0; spec.num_constraints],
        uncertainty,
        generator: Some(GeneratorInfo {
            rng: RNG_NAME.into(),
            seed: spec.seed,
            setting: spec.setting.name().into(),
        }),
    };
    inst.thresholds = feasible_thresholds(&inst)?;
    inst.ensure_valid()?;
    Ok(inst)
}

/// `b_n = J_n(uniform)` clipped to `[0, H]`, so the uniform policy is feasible.
///
/// Returns outside `[0, H]` by no more than linear-solve round-off are kept
/// as they are: clipping those would make the uniform policy infeasible by a
/// few ulps.
pub fn feasible_thresholds(inst: &Instance) -> Result<Vec<f64>> {
    let uniform = Policy::uniform(inst.num_states, inst.num_actions)?;
    let h = inst.horizon();
    let slack = THRESHOLD_SLACK * h;
    Ok(robust_values(inst, &uniform)?
        .into_iter()
        .skip(1)
        .map(|j| if j < -slack || j > h + slack { j.clamp(0.0, h) } else { j })
        .collect())
}

/// Four-state, two-action, two-kernel RCMDP whose Lagrangian has a stationary
/// point at the suboptimal policy "always a2" when `delta = 0`.
///
/// `b1 = 0`; see [`counterexample_with_threshold`] to change it.
pub fn counterexample_instance(gamma: f64, delta: f64) -> Result<Instance> {
    counterexample_with_threshold(gamma, delta, 0.0)
}

pub fn counterexample_with_threshold(gamma: f64, delta: f64, b1: f64) -> Result<Instance> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must lie in (0,1)")));
    }
    if !(delta >= 0.0 && delta <= gamma) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} must lie in [0, gamma] to keep costs in [0,1]"
        )));
    }
    // next[s][a]: s1 and s2 self-loop under a2; s3 and s4 ignore the action.
    let p1 = TransitionKernel::deterministic(&[vec![1, 0], vec![0, 1], vec![3, 3], vec![3, 3]])?;
    let p2 = TransitionKernel::deterministic(&[vec![1, 0], vec![1, 1], vec![2, 2], vec![2, 2]])?;
    let c0 = ndarray::array![[delta, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]];
    let c1 = ndarray::array![[1.0, gamma - delta], [1.0, 1.0 - delta], [1.0, 1.0], [0.0, 0.0]];
    let inst = Instance {
        num_states: 4,
        num_actions: 2,
        gamma,
        mu: Array1::from_elem(4, 0.25),
        costs: vec![CostFunction::new(c0)?, CostFunction::new(c1)?],
        thresholds: vec![b1],
        uncertainty: UncertaintySet::Finite(vec![p1, p2]),
        generator: None,
    };
    inst.ensure_valid()?;
    Ok(inst)
}

/// `(pi1, pi2)`: always `a1`, always `a2`.
pub fn counterexample_policies() -> (Policy, Policy) {
    (
        Policy::deterministic(&[0; 4], 2).expect("valid"),
        Policy::deterministic(&[1; 4], 2).expect("valid"),
    )
}

/// Closed-form returns `[J_{c0,P1}, J_{c0,P2}, J_{c1,P1}, J_{c1,P2}]` of `pi1` then `pi2`.
pub fn counterexample_returns(gamma: f64, delta: f64) -> [[f64; 4]; 2] {
    let h = 1.0 / (1.0 - gamma);
    [
        [
            h / 2.0 + h * (gamma + delta) / 4.0,
            h / 2.0 + delta / 4.0,
            h * (3.0 - gamma) / 4.0,
            h * (3.0 + gamma) / 4.0,
        ],
        [
            h * (3.0 + gamma) / 4.0,
            h * (3.0 - gamma) / 4.0,
            h / 2.0 - h * delta / 2.0,
            h / 2.0 + h * gamma / 2.0 - h * delta / 2.0,
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::return_value;
    use crate::mdp::validate_instance;

    #[test]
    fn same_seed_same_bytes() {
        for setting in [Setting::Finite, Setting::Kl, Setting::Cmdp] {
            let spec = GenSpec::defaults(setting).with_seed(42);
            let a = random_instance(&spec).unwrap().to_json().unwrap();
            let b = random_instance(&spec).unwrap().to_json().unwrap();
            assert_eq!(a, b);
            let c = random_instance(&spec.clone().with_seed(43)).unwrap().to_json().unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn finite_defaults_validate() {
        let inst = random_instance(&GenSpec::defaults(Setting::Finite).with_seed(1)).unwrap();
        assert!(validate_instance(&inst).is_empty());
        assert_eq!(inst.num_constraints(), 5);
        match &inst.uncertainty {
            UncertaintySet::Finite(k) => assert_eq!(k.len(), 5),
            _ => panic!(),
        }
    }

    #[test]
    fn uniform_policy_is_feasible() {
        let inst = random_instance(&GenSpec::defaults(Setting::Kl).with_seed(3)).unwrap();
        let u = Policy::uniform(inst.num_states, inst.num_actions).unwrap();
        let j = robust_values(&inst, &u).unwrap();
        for (n, b) in inst.thresholds.iter().enumerate() {
            assert!(j[n + 1] - b <= 1e-12);
            assert!(*b >= 0.0 && *b <= inst.horizon());
        }
    }

    #[test]
    fn zero_constraint_costs_give_zero_thresholds() {
        let mut inst = random_instance(&GenSpec::defaults(Setting::Cmdp).with_seed(5)).unwrap();
        for c in inst.costs.iter_mut().skip(1) {
            *c = CostFunction::zeros(inst.num_states, inst.num_actions);
        }
        assert!(feasible_thresholds(&inst).unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn cost_zero_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut zeros = 0;
        for _ in 0..100 {
            let c = random_cost(&mut rng, 10, 10).unwrap();
            zeros += c.values().iter().filter(|&&v| v == 0.0).count();
        }
        let f = zeros as f64 / 1e4;
        assert!((0.08..=0.12).contains(&f), "{f}");
    }

    #[test]
    fn counterexample_rejects_bad_delta() {
        assert!(counterexample_instance(0.4, -0.01).is_err());
        assert!(counterexample_instance(0.4, 0.5).is_err());
        assert!(counterexample_instance(1.0, 0.0).is_err());
        assert!(counterexample_with_threshold(0.1, 0.0, 2.0 / 3.0).is_ok());
    }

    #[test]
    fn counterexample_matches_closed_forms() {
        let (gamma, delta) = (0.4, 0.09);
        let inst = counterexample_instance(gamma, delta).unwrap();
        let (p1, p2) = counterexample_policies();
        let expected = counterexample_returns(gamma, delta);
        let UncertaintySet::Finite(ks) = &inst.uncertainty else {
            panic!()
        };
        for (i, pi) in [p1, p2].iter().enumerate() {
            for (j, (c, k)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let v = return_value(pi, &ks[k], &inst.costs[c], gamma, inst.mu.view()).unwrap();
                assert!((v - expected[i][j]).abs() < 1e-9, "pi{} case {j}: {v}", i + 1);
            }
        }
    }
}
