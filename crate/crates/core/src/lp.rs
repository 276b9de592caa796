//! Dense two-phase primal simplex (Bland's rule) and the occupancy-measure
//! linear program giving the optimal return of a CMDP.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::lagrange::policy_from_occupancy;
use crate::linalg::Lu;
use crate::mdp::{Instance, Policy};

/// Phase-1 objective above which the program is declared infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

/// `min c^T x` subject to `A_eq x = b_eq`, `A_le x <= b_le`, `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Array1<f64>,
    pub eq_matrix: Array2<f64>,
    pub eq_rhs: Array1<f64>,
    pub le_matrix: Array2<f64>,
    pub le_rhs: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Array1<f64>,
    pub objective: f64,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Array2<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[[row, col]];
        self.t.row_mut(row).mapv_inplace(|v| v / p);
        let pivot_row = self.t.row(row).to_owned();
        for i in 0..self.t.nrows() {
            if i != row {
                let f = self.t[[i, col]];
                if f != 0.0 {
                    self.t.row_mut(i).scaled_add(-f, &pivot_row);
                    self.t[[i, col]] = 0.0;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations over columns `< allowed` with Bland's rule.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        let obj = self.rows();
        let rhs = self.rhs_col();
        let max_iter = 50_000;
        for _ in 0..max_iter {
            let Some(col) = (0..allowed).find(|&j| self.t[[obj, j]] < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..obj {
                let a = self.t[[i, col]];
                if a > PIVOT_TOL {
                    let ratio = self.t[[i, rhs]] / a;
                    let better = match leave {
                        None => true,
                        Some((r, best)) => {
                            ratio < best - 1e-14
                                || (ratio <= best + 1e-14 && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => {
                    return Err(Error::InvalidArgument("linear program is unbounded".into()));
                }
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: f64::NAN,
        })
    }
}

impl LinearProgram {
    fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Solves by the two-phase method; the basic solution is re-solved from
    /// the original constraint matrix for accuracy.
    pub fn solve(&self) -> Result<LpSolution> {
        let nx = self.num_vars();
        let me = self.eq_rhs.len();
        let ml = self.le_rhs.len();
        let m = me + ml;
        let ns = nx + ml; // structural + slack columns
        let ncols = ns + m + 1;

        // Standard form: [A_eq 0; A_le I] [x; s] = b.
        let mut a = Array2::<f64>::zeros((m, ns));
        let mut b = Array1::<f64>::zeros(m);
        for i in 0..me {
            for j in 0..nx {
                a[[i, j]] = self.eq_matrix[[i, j]];
            }
            b[i] = self.eq_rhs[i];
        }
        for i in 0..ml {
            for j in 0..nx {
                a[[me + i, j]] = self.le_matrix[[i, j]];
            }
            a[[me + i, nx + i]] = 1.0;
            b[me + i] = self.le_rhs[i];
        }

        let mut t = Array2::<f64>::zeros((m + 1, ncols));
        for i in 0..m {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..ns {
                t[[i, j]] = sign * a[[i, j]];
            }
            t[[i, ns + i]] = 1.0;
            t[[i, ncols - 1]] = sign * b[i];
        }
        // Phase-1 objective: sum of artificials, priced out against the initial basis.
        for i in 0..m {
            for j in 0..ns {
                t[[m, j]] -= t[[i, j]];
            }
            t[[m, ncols - 1]] -= t[[i, ncols - 1]];
        }
        let mut tab = Tableau {
            t,
            basis: (ns..ns + m).collect(),
        };
        tab.optimize(ns)?;
        let phase1 = -tab.t[[m, ncols - 1]];
        if phase1 > FEASIBILITY_TOL {
            return Err(Error::Infeasible(phase1));
        }

        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut redundant = Vec::new();
        for i in 0..m {
            if tab.basis[i] >= ns {
                match (0..ns).find(|&j| tab.t[[i, j]].abs() > 1e-9) {
                    Some(j) => tab.pivot(i, j),
                    None => redundant.push(i),
                }
            }
        }

        // Phase 2 objective row.
        for j in 0..ncols {
            tab.t[[m, j]] = 0.0;
        }
        for j in 0..nx {
            tab.t[[m, j]] = self.objective[j];
        }
        for i in 0..m {
            let col = tab.basis[i];
            if col < ns {
                let f = tab.t[[m, col]];
                if f != 0.0 {
                    let row = tab.t.row(i).to_owned();
                    tab.t.row_mut(m).scaled_add(-f, &row);
                }
            }
        }
        for &i in &redundant {
            // Keep redundant rows inert: zero them so they never pivot.
            tab.t.row_mut(i).fill(0.0);
        }
        tab.optimize(ns)?;

        // Recover the basic solution from the original system.
        let rows: Vec<usize> = (0..m).filter(|i| !redundant.contains(i)).collect();
        let cols: Vec<usize> = rows.iter().map(|&i| tab.basis[i]).collect();
        let mut full = Array1::<f64>::zeros(ns);
        let bm = Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| a[[rows[r], cols[c]]]);
        let rhs: Array1<f64> = rows.iter().map(|&i| b[i]).collect();
        match Lu::factorize(bm) {
            Ok(lu) => {
                let xb = lu.solve(&rhs);
                for (c, &col) in cols.iter().enumerate() {
                    full[col] = xb[c];
                }
            }
            Err(_) => {
                for (r, &i) in rows.iter().enumerate() {
                    full[cols[r]] = tab.t[[i, ncols - 1]];
                }
            }
        }
        let x = full.slice(ndarray::s![..nx]).to_owned();
        let objective = self.objective.dot(&x);
        Ok(LpSolution { x, objective })
    }
}

/// Optimal CMDP return with its unnormalized occupancy `q(s,a)` (summing to `H`).
#[derive(Debug, Clone)]
pub struct CmdpLpSolution {
    pub value: f64,
    pub occupancy: Array2<f64>,
    pub policy: Policy,
}

/// Builds the occupancy LP: minimize `<c_0, q>` subject to flow balance,
/// `q >= 0` and `<c_n, q> <= b_n`.
pub fn occupancy_lp(inst: &Instance) -> Result<LinearProgram> {
    let kernel = inst.singleton_kernel()?;
    let (ns, na) = (inst.num_states, inst.num_actions);
    let nv = ns * na;
    let idx = |s: usize, a: usize| s * na + a;
    let objective = Array1::from_shape_fn(nv, |j| inst.costs[0].get(j / na, j % na));
    let mut eq = Array2::<f64>::zeros((ns, nv));
    for s in 0..ns {
        for a in 0..na {
            eq[[s, idx(s, a)]] += 1.0;
        }
        for sp in 0..ns {
            for ap in 0..na {
                eq[[s, idx(sp, ap)]] -= inst.gamma * kernel.get(sp, ap, s);
            }
        }
    }
    let nc = inst.num_constraints();
    let le = Array2::from_shape_fn((nc, nv), |(n, j)| inst.costs[n + 1].get(j / na, j % na));
    Ok(LinearProgram {
        objective,
        eq_matrix: eq,
        eq_rhs: inst.mu.clone(),
        le_matrix: le,
        le_rhs: Array1::from(inst.thresholds.clone()),
    })
}

pub fn solve_cmdp_lp(inst: &Instance) -> Result<CmdpLpSolution> {
    inst.ensure_valid()?;
    let lp = occupancy_lp(inst)?;
    let sol = lp.solve()?;
    let occupancy = Array2::from_shape_vec((inst.num_states, inst.num_actions), sol.x.to_vec())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let policy = policy_from_occupancy(&occupancy)?;
    Ok(CmdpLpSolution {
        value: sol.objective,
        occupancy,
        policy,
    })
}
