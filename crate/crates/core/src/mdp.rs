//! Core domain types: transition kernels, costs, policies, uncertainty sets
//! and the robust constrained MDP instance, with validation and JSON I/O.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of kernels, policies and the initial distribution.
pub const STOCHASTIC_TOL: f64 = 1e-12;

fn check_distribution(row: ArrayView1<f64>) -> std::result::Result<f64, String> {
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite entry {v}"));
    }
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("entry {v} outside [0,1]"));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("row sums to {sum}"));
    }
    Ok(sum)
}

/// Relative allowance (times `H`) for thresholds just outside `[0, H]`:
/// returns computed by linear solves can exceed `H` by a few ulps.
pub const THRESHOLD_SLACK: f64 = 1e-12;

/// Rows summing to 1 up to summation round-off are kept bit-for-bit, so that
/// saving and reloading does not perturb them.
fn at_round_off(sum: f64, len: usize) -> bool {
    (sum - 1.0).abs() <= 2.0 * len as f64 * f64::EPSILON
}

/// Transition probabilities indexed `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    probs: Array3<f64>,
}

impl TransitionKernel {
    /// Checks row-stochasticity and renormalizes rows off by more than round-off.
    pub fn new(mut probs: Array3<f64>) -> Result<Self> {
        let (s, a, s2) = probs.dim();
        if s == 0 || a == 0 || s != s2 {
            return Err(Error::InvalidArgument(format!(
                "kernel shape must be S x A x S, got {s} x {a} x {s2}"
            )));
        }
        for i in 0..s {
            for j in 0..a {
                let mut row = probs.slice_mut(ndarray::s![i, j, ..]);
                let sum = check_distribution(row.view()).map_err(|m| {
                    Error::InvalidArgument(format!("kernel row ({i},{j}): {m}"))
                })?;
                if !at_round_off(sum, s2) {
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
        Ok(TransitionKernel { probs })
    }

    /// Deterministic kernel from a successor table `next[s][a]`.
    pub fn deterministic(next: &[Vec<usize>]) -> Result<Self> {
        let s = next.len();
        let a = next.first().map_or(0, Vec::len);
        let mut probs = Array3::zeros((s, a, s));
        for (i, row) in next.iter().enumerate() {
            if row.len() != a {
                return Err(Error::InvalidArgument("ragged successor table".into()));
            }
            for (j, &t) in row.iter().enumerate() {
                if t >= s {
                    return Err(Error::InvalidArgument(format!(
                        "successor {t} of ({i},{j}) out of range"
                    )));
                }
                probs[[i, j, t]] = 1.0;
            }
        }
        Self::new(probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.dim().0
    }

    pub fn num_actions(&self) -> usize {
        self.probs.dim().1
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn get(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[[s, a, next]]
    }

    pub fn row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(ndarray::s![s, a, ..])
    }

    /// State-to-state matrix `P_pi(s, s') = sum_a pi(s,a) P(s'|s,a)`.
    pub fn under_policy(&self, pi: &Policy) -> Array2<f64> {
        let (ns, na, _) = self.probs.dim();
        let mut m = Array2::zeros((ns, ns));
        for s in 0..ns {
            for a in 0..na {
                let w = pi.get(s, a);
                if w == 0.0 {
                    continue;
                }
                for t in 0..ns {
                    m[[s, t]] += w * self.probs[[s, a, t]];
                }
            }
        }
        m
    }

    fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.probs
            .outer_iter()
            .map(|sa| sa.outer_iter().map(|r| r.to_vec()).collect())
            .collect()
    }
}

/// Per-step cost `c(s,a)` in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    values: Array2<f64>,
}

impl CostFunction {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((s, a), v)) = values
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "cost ({s},{a}) = {v} outside [0,1]"
            )));
        }
        Ok(CostFunction { values })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        CostFunction {
            values: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[[s, a]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Stationary Markov policy in the direct parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    /// Checks each row is a distribution (within [`STOCHASTIC_TOL`]) and renormalizes\n    /// rows off by more than round-off.
    pub fn new(mut probs: Array2<f64>) -> Result<Self> {
        let (s, a) = probs.dim();
        if s == 0 || a == 0 {
            return Err(Error::InvalidArgument(format!(
                "policy shape {s} x {a} must be non-empty"
            )));
        }
        for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let sum = check_distribution(row.view())
                .map_err(|m| Error::InvalidArgument(format!("policy row {i}: {m}")))?;
            if !at_round_off(sum, a) {
                row.mapv_inplace(|v| v / sum);
            }
        }
        Ok(Policy { probs })
    }

    /// Wraps rows already known to lie on the simplex (e.g. projection output).
    pub(crate) fn from_simplex_rows(probs: Array2<f64>) -> Self {
        Policy { probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument(format!(
                "uniform policy needs S >= 1 and A >= 1, got S={num_states}, A={num_actions}"
            )));
        }
        Ok(Policy {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        })
    }

    pub fn deterministic(action_per_state: &[usize], num_actions: usize) -> Result<Self> {
        if action_per_state.is_empty() || num_actions == 0 {
            return Err(Error::InvalidArgument(
                "deterministic policy needs S >= 1 and A >= 1".into(),
            ));
        }
        let mut probs = Array2::zeros((action_per_state.len(), num_actions));
        for (s, &a) in action_per_state.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidArgument(format!(
                    "action {a} for state {s} out of range (A = {num_actions})"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Policy { probs })
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }

    /// Row-wise argmax, ties to the lowest action.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (a, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Euclidean distance to another policy of the same shape.
    pub fn distance(&self, other: &Policy) -> f64 {
        (&self.probs - &other.probs)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(nested2(rows, "policy")?)
    }
}

/// Set of transition kernels the adversary chooses from.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintySet {
    Finite(Vec<TransitionKernel>),
    /// `(s,a)`-rectangular KL set in its regularized form with strength `reg`.
    KlRectangular { nominal: TransitionKernel, reg: f64 },
}

impl UncertaintySet {
    pub fn kind(&self) -> &'static str {
        match self {
            UncertaintySet::Finite(_) => "finite",
            UncertaintySet::KlRectangular { .. } => "kl",
        }
    }
}

/// One violated invariant found by [`validate_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub index: Vec<usize>,
    pub observed: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        if !self.index.is_empty() {
            write!(f, "{:?}", self.index)?;
        }
        write!(f, " = {}: {}", self.observed, self.message)
    }
}

/// A robust constrained MDP. Cost index 0 is the objective; thresholds cover costs `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub mu: Array1<f64>,
    pub costs: Vec<CostFunction>,
    pub thresholds: Vec<f64>,
    pub uncertainty: UncertaintySet,
    /// Provenance of generated instances (generator name and seed).
    pub generator: Option<GeneratorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub rng: String,
    pub seed: u64,
    pub setting: String,
}

impl Instance {
    /// Effective horizon `1 / (1 - gamma)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn num_constraints(&self) -> usize {
        self.costs.len().saturating_sub(1)
    }

    /// Threshold of cost `n`, with `b0` standing in for the objective.
    pub fn threshold(&self, n: usize, b0: f64) -> f64 {
        if n == 0 {
            b0
        } else {
            self.thresholds[n - 1]
        }
    }

    /// Returns `Err` carrying every violation when the instance is malformed.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate_instance(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(v.iter().map(|v| v.to_string()).collect()))
        }
    }

    /// The single kernel of a CMDP (`|U| = 1`).
    pub fn singleton_kernel(&self) -> Result<&TransitionKernel> {
        match &self.uncertainty {
            UncertaintySet::Finite(k) if k.len() == 1 => Ok(&k[0]),
            UncertaintySet::Finite(k) => Err(Error::UnsupportedUncertainty(format!(
                "needs exactly one kernel, got {}",
                k.len()
            ))),
            UncertaintySet::KlRectangular { .. } => Err(Error::UnsupportedUncertainty(
                "needs a singleton finite set, got a KL set".into(),
            )),
        }
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            mu: self.mu.to_vec(),
            costs: self
                .costs
                .iter()
                .map(|c| c.values.outer_iter().map(|r| r.to_vec()).collect())
                .collect(),
            thresholds: self.thresholds.clone(),
            uncertainty: match &self.uncertainty {
                UncertaintySet::Finite(ks) => UncertaintyFile::Finite {
                    kernels: ks.iter().map(TransitionKernel::to_nested).collect(),
                },
                UncertaintySet::KlRectangular { nominal, reg } => UncertaintyFile::Kl {
                    nominal: nominal.to_nested(),
                    reg: Some(*reg),
                    radius: None,
                },
            },
            generator: self.generator.clone(),
        }
    }

    pub fn from_file(file: InstanceFile) -> Result<Self> {
        let mut problems = Vec::new();
        let costs: Vec<CostFunction> = file
            .costs
            .iter()
            .enumerate()
            .filter_map(|(n, c)| {
                match nested2(c, "cost").and_then(CostFunction::new) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        problems.push(format!("costs[{n}]: {e}"));
                        None
                    }
                }
            })
            .collect();
        let kernel = |name: String, k: &Vec<Vec<Vec<f64>>>, problems: &mut Vec<String>| match nested3(k)
            .and_then(TransitionKernel::new)
        {
            Ok(k) => Some(k),
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                None
            }
        };
        let uncertainty = match &file.uncertainty {
            UncertaintyFile::Finite { kernels } => {
                let ks: Vec<_> = kernels
                    .iter()
                    .enumerate()
                    .filter_map(|(m, k)| kernel(format!("uncertainty.kernels[{m}]"), k, &mut problems))
                    .collect();
                Some(UncertaintySet::Finite(ks))
            }
            UncertaintyFile::Kl {
                nominal,
                reg,
                radius,
            } => {
                if radius.is_some() {
                    problems.push(
                        "uncertainty.radius: KL sets are specified by the regularization \
                         strength `reg`, not by a divergence radius"
                            .to_string(),
                    );
                }
                let nominal = kernel("uncertainty.nominal".to_string(), nominal, &mut problems);
                match (nominal, reg) {
                    (Some(nominal), Some(reg)) => Some(UncertaintySet::KlRectangular {
                        nominal,
                        reg: *reg,
                    }),
                    (_, None) => {
                        problems.push("uncertainty.reg: missing".to_string());
                        None
                    }
                    _ => None,
                }
            }
        };
        if !problems.is_empty() {
            return Err(Error::InvalidInstance(problems));
        }
        let inst = Instance {
            num_states: file.num_states,
            num_actions: file.num_actions,
            gamma: file.gamma,
            mu: Array1::from(file.mu),
            costs,
            thresholds: file.thresholds,
            uncertainty: uncertainty.expect("uncertainty parsed"),
            generator: file.generator,
        };
        inst.ensure_valid()?;
        Ok(inst.normalized())
    }

    /// Renormalizes `mu` by its sum unless it is off only by round-off.
    fn normalized(mut self) -> Self {
        let sum = self.mu.sum();
        if !at_round_off(sum, self.mu.len()) {
            self.mu.mapv_inplace(|v| v / sum);
        }
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn nested2(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidArgument(format!("ragged {what} array")));
    }
    Array2::from_shape_vec((r, c), rows.concat())
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn nested3(k: &[Vec<Vec<f64>>]) -> Result<Array3<f64>> {
    let s = k.len();
    let a = k.first().map_or(0, Vec::len);
    let t = k.first().and_then(|x| x.first()).map_or(0, Vec::len);
    if k.iter().any(|x| x.len() != a || x.iter().any(|r| r.len() != t)) {
        return Err(Error::InvalidArgument("ragged kernel array".into()));
    }
    let flat: Vec<f64> = k.iter().flat_map(|x| x.iter().flatten().copied()).collect();
    Array3::from_shape_vec((s, a, t), flat).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// On-disk JSON form of an [`Instance`]. Arrays are indexed `[s][a][s']`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub mu: Vec<f64>,
    pub costs: Vec<Vec<Vec<f64>>>,
    pub thresholds: Vec<f64>,
    pub uncertainty: UncertaintyFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UncertaintyFile {
    Finite {
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
    },
    Kl {
        nominal: Vec<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reg: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
}

/// Lists every violated instance invariant; empty iff the instance is well formed.
pub fn validate_instance(inst: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, index: Vec<usize>, observed: f64, message: &str| {
        out.push(Violation {
            field: field.to_string(),
            index,
            observed,
            message: message.to_string(),
        })
    };
    let (ns, na) = (inst.num_states, inst.num_actions);
    if ns == 0 {
        push("num_states", vec![], 0.0, "must be positive");
    }
    if na == 0 {
        push("num_actions", vec![], 0.0, "must be positive");
    }
    if !(inst.gamma > 0.0 && inst.gamma < 1.0) {
        push("gamma", vec![], inst.gamma, "must lie in (0,1)");
    }

    if inst.mu.len() != ns {
        push("mu", vec![], inst.mu.len() as f64, "length must equal num_states");
    }
    for (s, &m) in inst.mu.iter().enumerate() {
        if !(m >= 0.0) || !m.is_finite() {
            push("mu", vec![s], m, "entries must be non-negative");
        }
    }
    let mu_sum = inst.mu.sum();
    if (mu_sum - 1.0).abs() > STOCHASTIC_TOL {
        push("mu", vec![], mu_sum, "must sum to 1 (normalization)");
    }

    if inst.costs.is_empty() {
        push("costs", vec![], 0.0, "at least the objective cost is required");
    }
    for (n, c) in inst.costs.iter().enumerate() {
        if c.shape() != (ns, na) {
            push("costs", vec![n], c.shape().0 as f64, "shape must be S x A");
        }
        for ((s, a), &v) in c.values.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                push("costs", vec![n, s, a], v, "entries must lie in [0,1]");
            }
        }
    }

    let expected = inst.costs.len().saturating_sub(1);
    if inst.thresholds.len() != expected {
        push(
            "thresholds",
            vec![],
            inst.thresholds.len() as f64,
            "length must be number of costs minus one",
        );
    }
    if inst.gamma > 0.0 && inst.gamma < 1.0 {
        let h = inst.horizon();
        let slack = THRESHOLD_SLACK * h;
        for (i, &b) in inst.thresholds.iter().enumerate() {
            if !(-slack..=h + slack).contains(&b) {
                push("thresholds", vec![i], b, "must lie in [0, H] (threshold range)");
            }
        }
    }

    let bad_shape = |k: &TransitionKernel| k.num_states() != ns || k.num_actions() != na;
    const SHAPE_MSG: &str = "kernel shape must be S x A x S";
    match &inst.uncertainty {
        UncertaintySet::Finite(ks) => {
            if ks.is_empty() {
                push("uncertainty.kernels", vec![], 0.0, "finite set must be non-empty");
            }
            for (m, k) in ks.iter().enumerate() {
                if bad_shape(k) {
                    push("uncertainty.kernels", vec![m], k.num_states() as f64, SHAPE_MSG);
                }
            }
        }
        UncertaintySet::KlRectangular { nominal, reg } => {
            if bad_shape(nominal) {
                push("uncertainty.nominal", vec![], nominal.num_states() as f64, SHAPE_MSG);
            }
            if !(*reg > 0.0) || !reg.is_finite() {
                push("uncertainty.reg", vec![], *reg, "must be positive");
            }
            for ((s, a, t), &p) in nominal.probs.indexed_iter() {
                if !(p > 0.0) {
                    push(
                        "uncertainty.nominal",
                        vec![s, a, t],
                        p,
                        "KL nominal kernel must be strictly positive",
                    );
                }
            }
        }
    }
    out
}

pub fn uniform_policy(num_states: usize, num_actions: usize) -> Result<Policy> {
    Policy::uniform(num_states, num_actions)
}

pub fn deterministic_policy(action_per_state: &[usize], num_actions: usize) -> Result<Policy> {
    Policy::deterministic(action_per_state, num_actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn two_by_two() -> Instance {
        let k = TransitionKernel::deterministic(&[vec![0, 1], vec![1, 0]]).unwrap();
        Instance {
            num_states: 2,
            num_actions: 2,
            gamma: 0.9,
            mu: array![0.5, 0.5],
            costs: vec![
                CostFunction::new(array![[0.0, 1.0], [1.0, 0.5]]).unwrap(),
                CostFunction::new(array![[1.0, 0.0], [0.0, 0.5]]).unwrap(),
            ],
            thresholds: vec![5.0],
            uncertainty: UncertaintySet::Finite(vec![k]),
            generator: None,
        }
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate_instance(&two_by_two()).is_empty());
    }

    #[test]
    fn unnormalized_mu_is_reported() {
        let mut inst = two_by_two();
        inst.mu = array![0.6, 0.6];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "mu");
        assert!(v[0].message.contains("normalization"));
        assert!((v[0].observed - 1.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_above_horizon_is_reported() {
        let mut inst = two_by_two();
        inst.thresholds = vec![inst.horizon() + 1.0];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "thresholds");
        assert_eq!(v[0].index, vec![0]);
        assert!(v[0].message.contains("threshold range"));
    }

    #[test]
    fn uniform_policies() {
        for (s, a, p) in [(2, 2, 0.5), (1, 4, 0.25), (3, 1, 1.0)] {
            let pi = uniform_policy(s, a).unwrap();
            assert_eq!(pi.probs().dim(), (s, a));
            assert!(pi.probs().iter().all(|&v| v == p));
        }
        assert!(uniform_policy(0, 2).is_err());
        assert!(uniform_policy(2, 0).is_err());
    }

    #[test]
    fn deterministic_policies() {
        let p1 = deterministic_policy(&[0, 0, 0, 0], 2).unwrap();
        assert!(p1.probs().outer_iter().all(|r| r[0] == 1.0 && r[1] == 0.0));
        let p2 = deterministic_policy(&[1, 1, 1, 1], 2).unwrap();
        assert!(p2.probs().outer_iter().all(|r| r[0] == 0.0 && r[1] == 1.0));
        let p = deterministic_policy(&[0, 1], 3).unwrap();
        assert_eq!(p.probs(), &array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(deterministic_policy(&[0, 3], 3).is_err());
    }

    #[test]
    fn rows_within_tolerance_are_renormalized() {
        let pi = Policy::new(array![[0.5 + 4e-13, 0.5]]).unwrap();
        assert!((pi.probs().row(0).sum() - 1.0).abs() <= f64::EPSILON);
        assert!(Policy::new(array![[0.5 + 1e-9, 0.5]]).is_err());
        assert!(Policy::new(array![[1.1, -0.1]]).is_err());
    }

    #[test]
    fn kl_requires_positive_nominal_and_reg() {
        let mut inst = two_by_two();
        let nominal = TransitionKernel::deterministic(&[vec![0, 1], vec![1, 0]]).unwrap();
        inst.uncertainty = UncertaintySet::KlRectangular { nominal, reg: 0.0 };
        let v = validate_instance(&inst);
        assert!(v.iter().any(|v| v.field == "uncertainty.reg"));
        assert!(v.iter().any(|v| v.field == "uncertainty.nominal"));
    }

    #[test]
    fn json_round_trip_preserves_instance() {
        let inst = two_by_two();
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"num_states\""));
        assert!(text.contains("\"type\": \"finite\""));
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn kl_radius_input_is_rejected() {
        let text = r#"{"num_states":1,"num_actions":1,"gamma":0.5,"mu":[1.0],
            "costs":[[[1.0]]],"thresholds":[],
            "uncertainty":{"type":"kl","nominal":[[[1.0]]],"radius":0.1}}"#;
        let err = Instance::from_json(text).unwrap_err().to_string();
        assert!(err.contains("regularization"), "{err}");
    }

    #[test]
    fn greedy_recovers_deterministic_actions() {
        let acts = vec![2, 0, 1, 1];
        let pi = deterministic_policy(&acts, 3).unwrap();
        assert_eq!(pi.greedy_actions(), acts);
    }
}
