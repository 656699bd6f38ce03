//! Self-contained two-phase simplex with Bland's rule.
//!
//! The polytope routines need only a handful of LP shapes (feasibility,
//! directional maxima over `{V y >= b}`, and L1 projection), so the solver
//! works on the dense standard form `min c.x s.t. A x = b, x >= 0` and the
//! wrappers below do the reformulation. Bland's rule guarantees termination;
//! an iteration cap converts pathological cycling into `LpFailure`.

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

/// Pivot tolerance for entering/leaving selection.
const TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    m: usize,
    n: usize,
    /// (m + 1) x (n + 1): constraint rows then cost row, rhs in last column.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.n + 1) + j]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.t[i * (self.n + 1) + j]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.n + 1;
        let p = self.at(row, col);
        let r0 = row * w;
        for j in 0..w {
            self.t[r0 + j] /= p;
        }
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.at(i, col);
            if f == 0.0 {
                continue;
            }
            let ri = i * w;
            for j in 0..w {
                self.t[ri + j] -= f * self.t[r0 + j];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule iteration loop over the allowed columns. Returns false on
    /// an unbounded ray.
    fn run(&mut self, allowed: &[bool], max_iter: usize) -> Result<bool> {
        for _ in 0..max_iter {
            let mut entering = None;
            for j in 0..self.n {
                if allowed[j] && self.at(self.m, j) < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > TOL {
                    let ratio = self.at(i, self.n) / a;
                    let better = match leaving {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - TOL || (ratio < lr + TOL && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Ok(false);
            };
            self.pivot(row, col);
        }
        Err(Error::LpFailure(format!(
            "simplex exceeded {max_iter} iterations"
        )))
    }

    fn solution(&self, n_original: usize) -> Vec<f64> {
        let mut x = vec![0.0; n_original];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n_original {
                x[b] = self.at(i, self.n);
            }
        }
        x
    }
}

/// Solve `min c.x  s.t.  A x = b, x >= 0`.
pub fn solve_standard(c: &[f64], a: &Mat, b: &[f64]) -> Result<LpOutcome> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n);
    assert_eq!(b.len(), m);
    let n_total = n + m; // original + artificial
    let w = n_total + 1;
    let mut t = vec![0.0; (m + 1) * w];

    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * w + j] = flip * a[(i, j)];
        }
        t[i * w + n + i] = 1.0;
        t[i * w + n_total] = flip * b[i];
    }
    // Phase-1 cost: sum of artificials, expressed in reduced form.
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..m {
            s += t[i * w + j];
        }
        t[m * w + j] = -s;
    }
    let rhs_sum: f64 = (0..m).map(|i| t[i * w + n_total]).sum();
    t[m * w + n_total] = -rhs_sum;

    let mut tab = Tableau {
        m,
        n: n_total,
        t,
        basis: (n..n_total).collect(),
    };
    let max_iter = 20_000 + 100 * (m + n);
    let allowed = vec![true; n_total];
    if !tab.run(&allowed, max_iter)? {
        return Err(Error::LpFailure("phase 1 reported unbounded".into()));
    }
    let phase1 = -tab.at(m, n_total);
    if phase1 > 1e-7 {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive any artificial still in the basis out of it (degenerate rows).
    for i in 0..m {
        if tab.basis[i] >= n {
            let mut swapped = false;
            for j in 0..n {
                if tab.at(i, j).abs() > TOL {
                    tab.pivot(i, j);
                    swapped = true;
                    break;
                }
            }
            if !swapped {
                // Redundant equality row; the artificial stays at zero and is
                // blocked from re-entering below.
                continue;
            }
        }
    }

    // Phase 2: rebuild the cost row for the original objective.
    for j in 0..=n_total {
        *tab.at_mut(m, j) = 0.0;
    }
    for j in 0..n {
        *tab.at_mut(m, j) = c[j];
    }
    for i in 0..m {
        let bj = tab.basis[i];
        if bj < n && c[bj] != 0.0 {
            let f = c[bj];
            for j in 0..=n_total {
                let v = tab.at(i, j);
                *tab.at_mut(m, j) -= f * v;
            }
        }
    }
    let mut allowed = vec![true; n_total];
    for a in allowed.iter_mut().skip(n) {
        *a = false;
    }
    if !tab.run(&allowed, max_iter)? {
        return Ok(LpOutcome::Unbounded);
    }
    let x = tab.solution(n);
    Ok(LpOutcome::Optimal {
        objective: dot(c, &x),
        x,
    })
}

/// Maximize `obj . y` over `{y : V y >= b}` with `y` free.
///
/// Free variables are split as `y = y+ - y-` and surplus variables close the
/// inequalities.
pub fn maximize(obj: &[f64], v: &Mat, b: &[f64]) -> Result<LpOutcome> {
    let m = v.nrows();
    let d = v.ncols();
    assert_eq!(obj.len(), d);
    let n = 2 * d + m;
    let mut a = Mat::zeros(m, n);
    for i in 0..m {
        for j in 0..d {
            a[(i, j)] = v[(i, j)];
            a[(i, d + j)] = -v[(i, j)];
        }
        a[(i, 2 * d + i)] = -1.0;
    }
    let mut c = vec![0.0; n];
    for j in 0..d {
        c[j] = -obj[j];
        c[d + j] = obj[j];
    }
    match solve_standard(&c, &a, b)? {
        LpOutcome::Optimal { x, objective } => {
            let y: Vec<f64> = (0..d).map(|j| x[j] - x[d + j]).collect();
            Ok(LpOutcome::Optimal {
                x: y,
                objective: -objective,
            })
        }
        other => Ok(other),
    }
}

/// A feasible point of `{V y >= b}`, or `None` when the system is empty.
pub fn feasible_point(v: &Mat, b: &[f64]) -> Result<Option<Vec<f64>>> {
    match maximize(&vec![0.0; v.ncols()], v, b)? {
        LpOutcome::Optimal { x, .. } => Ok(Some(x)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::LpFailure(
            "feasibility phase reported unbounded".into(),
        )),
    }
}

/// L1 projection onto `{V x >= b}` moving only coordinates `>= free_from`.
///
/// Minimizes `sum_i |x_i - x0_i|` over feasible `x` with the leading
/// `free_from` coordinates pinned to `x0`. Returns `None` if no feasible
/// completion exists.
pub fn repair_l1(x0: &[f64], v: &Mat, b: &[f64], free_from: usize) -> Result<Option<Vec<f64>>> {
    let m = v.nrows();
    let d = v.ncols();
    assert_eq!(x0.len(), d);
    assert!(free_from <= d);
    let nf = d - free_from;
    let n = 2 * nf + m;
    let mut a = Mat::zeros(m, n);
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        for (jj, j) in (free_from..d).enumerate() {
            a[(i, jj)] = v[(i, j)];
            a[(i, nf + jj)] = -v[(i, j)];
        }
        a[(i, 2 * nf + i)] = -1.0;
        rhs[i] = b[i] - dot(v.row(i), x0);
    }
    let mut c = vec![0.0; n];
    for j in 0..2 * nf {
        c[j] = 1.0;
    }
    match solve_standard(&c, &a, &rhs)? {
        LpOutcome::Optimal { x, .. } => {
            let mut out = x0.to_vec();
            for (jj, j) in (free_from..d).enumerate() {
                out[j] += x[jj] - x[nf + jj];
            }
            Ok(Some(out))
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::LpFailure("L1 repair reported unbounded".into())),
    }
}
