//! Experiment harness: seed grids of generated instances, solver runs,
//! per-iteration metrics, marked-policy selection and CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{random_instance, GenSpec, Setting};
use crate::epigraph::{bisection_solve, BisectionConfig, SubroutineConfig};
use crate::error::{Error, Result};
use crate::lagrange::{average_occupancy_policy, average_policies, lf_solve, max_violation, LagrangeConfig};
use crate::lp::solve_cmdp_lp;
use crate::mdp::{Instance, Policy};
use crate::robust::robust_values;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Epirc,
    Lf,
    LfPiAvg,
    LfOccAvg,
    LpOracle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Epirc => "epirc",
            Algorithm::Lf => "lf",
            Algorithm::LfPiAvg => "lf-pi-avg",
            Algorithm::LfOccAvg => "lf-occ-avg",
            Algorithm::LpOracle => "lp-oracle",
        }
    }

    /// Whether the algorithm needs `|U| = 1`.
    pub fn cmdp_only(self) -> bool {
        matches!(self, Algorithm::LfOccAvg | Algorithm::LpOracle)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: Setting,
    /// Generator parameters; the seed field is replaced by each entry of `seeds`.
    #[serde(default)]
    pub generator: Option<GenSpec>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub epirc: Option<BisectionConfig>,
    #[serde(default)]
    pub lf: Option<LagrangeConfig>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Outer iterations of the bisection when the config leaves them out.
pub const DEFAULT_OUTER_ITERATIONS: usize = 12;

impl ExperimentConfig {
    pub fn for_setting(setting: Setting, seeds: Vec<u64>, output_dir: impl Into<PathBuf>) -> Self {
        let mut algorithms = vec![Algorithm::Epirc, Algorithm::Lf, Algorithm::LfPiAvg];
        if setting == Setting::Cmdp {
            algorithms.extend([Algorithm::LfOccAvg, Algorithm::LpOracle]);
        }
        ExperimentConfig {
            setting,
            generator: None,
            algorithms,
            epirc: None,
            lf: None,
            seeds,
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn generator_spec(&self) -> GenSpec {
        self.generator
            .clone()
            .unwrap_or_else(|| GenSpec::defaults(self.setting))
    }

    pub fn epirc_config(&self) -> BisectionConfig {
        self.epirc.clone().unwrap_or_else(|| BisectionConfig {
            outer_iterations: DEFAULT_OUTER_ITERATIONS,
            subroutine: match self.setting {
                Setting::Kl => SubroutineConfig::kl_default(),
                _ => SubroutineConfig::finite_default(),
            },
            warm_start: true,
        })
    }

    /// Defaults to the subroutine's step size and length with one more outer
    /// iteration than the bisection, which evaluates `K + 1` thresholds.
    pub fn lf_config(&self) -> LagrangeConfig {
        self.lf.clone().unwrap_or_else(|| {
            let e = self.epirc_config();
            LagrangeConfig::new(
                e.outer_iterations + 1,
                e.subroutine.iterations,
                e.subroutine.learning_rate,
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no algorithms selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("no seeds given".into()));
        }
        if self.setting != Setting::Cmdp {
            if let Some(a) = self.algorithms.iter().find(|a| a.cmdp_only()) {
                return Err(Error::InvalidArgument(format!(
                    "{a} is only defined for the cmdp setting"
                )));
            }
        }
        let spec = self.generator_spec();
        if spec.setting != self.setting {
            return Err(Error::InvalidArgument(format!(
                "generator setting {} differs from experiment setting {}",
                spec.setting, self.setting
            )));
        }
        spec.validate()
    }
}

/// One outer iteration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub k: usize,
    /// `max_n J_n - b_n` over the constraints (0 without constraints).
    pub violation: f64,
    /// `J_0(pi) - J_0(uniform)`.
    pub relative_return: f64,
    pub b0_low: Option<f64>,
    pub b0_high: Option<f64>,
    pub wall_ms: f64,
}

/// Feasible row with the smallest return, else the row with the smallest violation; ties to the earliest.
pub fn select_marked_policy(rows: &[MetricRow]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to mark".into()));
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.violation <= 0.0
            && best.is_none_or(|b| r.relative_return < rows[b].relative_return)
        {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }
    let mut b = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.violation < rows[b].violation {
            b = i;
        }
    }
    Ok(b)
}

pub fn write_rows(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    rows_from_csv(&fs::read_to_string(path)?)
}

/// Returns of `pi` turned into `(violation, relative_return)`.
pub fn metrics_from_returns(inst: &Instance, returns: &[f64], uniform_objective: f64) -> (f64, f64) {
    let v = if inst.num_constraints() == 0 {
        0.0
    } else {
        max_violation(inst, returns)
    };
    (v, returns[0] - uniform_objective)
}

pub fn uniform_objective(inst: &Instance) -> Result<f64> {
    let u = Policy::uniform(inst.num_states, inst.num_actions)?;
    Ok(robust_values(inst, &u)?[0])
}

/// Per-iteration output of a single algorithm on a single instance.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricRow>,
    pub policies: Vec<Policy>,
    /// Objective return of each stored policy.
    pub objectives: Vec<f64>,
    pub marked: usize,
}

impl RunOutput {
    pub fn marked_row(&self) -> &MetricRow {
        &self.rows[self.marked]
    }

    pub fn marked_policy(&self) -> &Policy {
        &self.policies[self.marked]
    }
}

fn rows_for_policies(
    inst: &Instance,
    seed: u64,
    algorithm: Algorithm,
    policies: &[Policy],
    wall_ms: &[f64],
) -> Result<(Vec<MetricRow>, Vec<f64>)> {
    let base = uniform_objective(inst)?;
    let mut rows = Vec::with_capacity(policies.len());
    let mut objectives = Vec::with_capacity(policies.len());
    for (k, pi) in policies.iter().enumerate() {
        let returns = robust_values(inst, pi)?;
        let (violation, relative_return) = metrics_from_returns(inst, &returns, base);
        objectives.push(returns[0]);
        rows.push(MetricRow {
            seed,
            algorithm,
            k,
            violation,
            relative_return,
            b0_low: None,
            b0_high: None,
            wall_ms: wall_ms[k],
        });
    }
    Ok((rows, objectives))
}

fn finish(rows: Vec<MetricRow>, policies: Vec<Policy>, objectives: Vec<f64>) -> Result<RunOutput> {
    let marked = select_marked_policy(&rows)?;
    Ok(RunOutput {
        rows,
        policies,
        objectives,
        marked,
    })
}

/// Runs one algorithm on `inst`. Use [`run_lf_family`] to get several LF
/// variants out of a single solve.
pub fn run_algorithm(
    inst: &Instance,
    seed: u64,
    algorithm: Algorithm,
    cfg: &ExperimentConfig,
) -> Result<RunOutput> {
    match algorithm {
        Algorithm::Epirc => run_epirc(inst, seed, &cfg.epirc_config()),
        Algorithm::LpOracle => run_lp(inst, seed),
        lf => {
            let mut all = run_lf_family(inst, seed, &cfg.lf_config(), &[lf])?;
            Ok(all.remove(0))
        }
    }
}

pub fn run_epirc(inst: &Instance, seed: u64, cfg: &BisectionConfig) -> Result<RunOutput> {
    let (_, trace) = bisection_solve(inst, cfg)?;
    let base = uniform_objective(inst)?;
    let mut rows = Vec::new();
    let mut policies = Vec::new();
    let mut objectives = Vec::new();
    for rec in &trace.outer {
        let (violation, relative_return) = metrics_from_returns(inst, &rec.returns, base);
        rows.push(MetricRow {
            seed,
            algorithm: Algorithm::Epirc,
            k: rec.k,
            violation,
            relative_return,
            b0_low: Some(rec.lower),
            b0_high: Some(rec.upper),
            wall_ms: rec.wall_ms,
        });
        policies.push(rec.policy.clone());
        objectives.push(rec.returns[0]);
    }
    finish(rows, policies, objectives)
}

/// One LF solve, post-processed into each requested variant
/// (`lf`: the iterates; `lf-pi-avg`: running policy averages;
/// `lf-occ-avg`: running occupancy averages).
pub fn run_lf_family(
    inst: &Instance,
    seed: u64,
    cfg: &LagrangeConfig,
    variants: &[Algorithm],
) -> Result<Vec<RunOutput>> {
    let out = lf_solve(inst, cfg)?;
    let iterates = out.policies();
    let mut cumulative = 0.0;
    let wall: Vec<f64> = out
        .trace
        .iter()
        .map(|r| {
            cumulative += r.wall_ms;
            cumulative
        })
        .collect();
    let mut results = Vec::new();
    for &v in variants {
        let started = Instant::now();
        let policies: Vec<Policy> = match v {
            Algorithm::Lf => iterates.clone(),
            Algorithm::LfPiAvg => (1..=iterates.len())
                .map(|k| average_policies(&iterates[..k]))
                .collect::<Result<_>>()?,
            Algorithm::LfOccAvg => (1..=iterates.len())
                .map(|k| average_occupancy_policy(inst, &iterates[..k]))
                .collect::<Result<_>>()?,
            other => {
                return Err(Error::InvalidArgument(format!("{other} is not an LF variant")));
            }
        };
        let extra = started.elapsed().as_secs_f64() * 1e3;
        let wall_ms: Vec<f64> = wall.iter().map(|w| w + extra).collect();
        let (rows, objectives) = rows_for_policies(inst, seed, v, &policies, &wall_ms)?;
        results.push(finish(rows, policies, objectives)?);
    }
    Ok(results)
}

pub fn run_lp(inst: &Instance, seed: u64) -> Result<RunOutput> {
    let started = Instant::now();
    let sol = solve_cmdp_lp(inst)?;
    let wall = started.elapsed().as_secs_f64() * 1e3;
    let (rows, objectives) =
        rows_for_policies(inst, seed, Algorithm::LpOracle, &[sol.policy.clone()], &[wall])?;
    finish(rows, vec![sol.policy], objectives)
}

/// Mean and standard error of one metric over runs sharing `(algorithm, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub k: usize,
    pub runs: usize,
    pub violation_mean: f64,
    pub violation_stderr: f64,
    pub relative_return_mean: f64,
    pub relative_return_stderr: f64,
}

/// Sample mean and `std / sqrt(n)` (0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut groups: std::collections::BTreeMap<(Algorithm, usize), Vec<&MetricRow>> =
        Default::default();
    for r in rows {
        groups.entry((r.algorithm, r.k)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, k), rs)| {
            let v: Vec<f64> = rs.iter().map(|r| r.violation).collect();
            let rr: Vec<f64> = rs.iter().map(|r| r.relative_return).collect();
            let (violation_mean, violation_stderr) = mean_stderr(&v);
            let (relative_return_mean, relative_return_stderr) = mean_stderr(&rr);
            AggregateRow {
                algorithm,
                k,
                runs: rs.len(),
                violation_mean,
                violation_stderr,
                relative_return_mean,
                relative_return_stderr,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub marked_k: Option<usize>,
    pub marked_violation: Option<f64>,
    pub marked_relative_return: Option<f64>,
    pub marked_objective: Option<f64>,
    /// LP optimum `J*` of the instance (cmdp setting with `lp-oracle`).
    pub lp_value: Option<f64>,
    /// `J_0(marked) - J*`.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setting: Setting,
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: usize,
}

fn run_file_stem(run: usize, algorithm: Algorithm, seed: u64) -> String {
    format!("run{run:03}_{algorithm}_seed{seed}")
}

fn write_policies(path: &Path, policies: &[Policy]) -> Result<()> {
    let rows: Vec<Vec<Vec<f64>>> = policies.iter().map(Policy::to_rows).collect();
    fs::write(path, serde_json::to_string(&rows)?)?;
    Ok(())
}

pub fn read_policies(path: impl AsRef<Path>) -> Result<Vec<Policy>> {
    let rows: Vec<Vec<Vec<f64>>> = serde_json::from_str(&fs::read_to_string(path)?)?;
    rows.iter().map(|r| Policy::from_rows(r)).collect()
}

struct SeedOutcome {
    summaries: Vec<RunSummary>,
    rows: Vec<MetricRow>,
}

fn run_seed(cfg: &ExperimentConfig, run: usize, seed: u64, runs_dir: &Path) -> SeedOutcome {
    let spec = cfg.generator_spec().with_seed(seed);
    let fail_all = |msg: String| SeedOutcome {
        summaries: cfg
            .algorithms
            .iter()
            .map(|&algorithm| failed(run, seed, algorithm, msg.clone()))
            .collect(),
        rows: Vec::new(),
    };
    let inst = match random_instance(&spec) {
        Ok(i) => i,
        Err(e) => return fail_all(format!("instance generation: {e}")),
    };
    if let Err(e) = inst.save(runs_dir.join(format!("run{run:03}_instance_seed{seed}.json"))) {
        return fail_all(format!("writing instance: {e}"));
    }
    let lp_value = if cfg.algorithms.contains(&Algorithm::LpOracle) {
        solve_cmdp_lp(&inst).ok().map(|s| s.value)
    } else {
        None
    };

    // The LF variants share a single solve.
    let lf_variants: Vec<Algorithm> = cfg
        .algorithms
        .iter()
        .copied()
        .filter(|a| matches!(a, Algorithm::Lf | Algorithm::LfPiAvg | Algorithm::LfOccAvg))
        .collect();
    let mut lf_results = if lf_variants.is_empty() {
        None
    } else {
        Some(run_lf_family(&inst, seed, &cfg.lf_config(), &lf_variants).map_err(|e| e.to_string()))
    };

    let mut out = SeedOutcome {
        summaries: Vec::new(),
        rows: Vec::new(),
    };
    for &algorithm in &cfg.algorithms {
        let result: std::result::Result<RunOutput, String> = match algorithm {
            Algorithm::Epirc => run_epirc(&inst, seed, &cfg.epirc_config()).map_err(|e| e.to_string()),
            Algorithm::LpOracle => run_lp(&inst, seed).map_err(|e| e.to_string()),
            lf => {
                let pos = lf_variants.iter().position(|&a| a == lf).expect("collected above");
                match lf_results.as_mut().expect("LF solved") {
                    Ok(v) => Ok(v[pos].clone()),
                    Err(e) => Err(e.clone()),
                }
            }
        };
        let stem = run_file_stem(run, algorithm, seed);
        let result = result.and_then(|o| {
            write_rows(runs_dir.join(format!("{stem}.csv")), &o.rows).map_err(|e| e.to_string())?;
            write_policies(&runs_dir.join(format!("{stem}_policies.json")), &o.policies)
                .map_err(|e| e.to_string())?;
            Ok(o)
        });
        match result {
            Ok(o) => {
                let m = o.marked_row();
                let objective = o.objectives[o.marked];
                out.summaries.push(RunSummary {
                    run,
                    seed,
                    algorithm,
                    ok: true,
                    error: None,
                    marked_k: Some(m.k),
                    marked_violation: Some(m.violation),
                    marked_relative_return: Some(m.relative_return),
                    marked_objective: Some(objective),
                    lp_value,
                    gap: lp_value.map(|j| objective - j),
                });
                out.rows.extend(o.rows);
            }
            Err(e) => {
                log::warn!("run {run} ({algorithm}, seed {seed}) failed: {e}");
                out.summaries.push(failed(run, seed, algorithm, e));
            }
        }
    }
    out
}

fn failed(run: usize, seed: u64, algorithm: Algorithm, error: String) -> RunSummary {
    RunSummary {
        run,
        seed,
        algorithm,
        ok: false,
        error: Some(error),
        marked_k: None,
        marked_violation: None,
        marked_relative_return: None,
        marked_objective: None,
        lp_value: None,
        gap: None,
    }
}

/// Runs every seed (in parallel) and writes
/// `runs/run###_<alg>_seed<seed>.csv` with its `_policies.json`,
/// `metrics.csv` (all rows), `aggregate.csv` and `summary.json` under the output directory.
///
/// Failed runs are recorded in the report; only configuration and output
/// directory problems return `Err`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let runs_dir = cfg.output_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .enumerate()
        .map(|(run, &seed)| run_seed(cfg, run, seed, &runs_dir))
        .collect();

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for o in outcomes {
        runs.extend(o.summaries);
        rows.extend(o.rows);
    }
    let agg = aggregate(&rows);
    write_rows(cfg.output_dir.join("metrics.csv"), &rows)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("aggregate.csv"))?;
    for a in &agg {
        w.serialize(a)?;
    }
    w.flush()?;
    let report = ExperimentReport {
        setting: cfg.setting,
        failures: runs.iter().filter(|r| !r.ok).count(),
        runs,
        aggregate: agg,
    };
    fs::write(
        cfg.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
