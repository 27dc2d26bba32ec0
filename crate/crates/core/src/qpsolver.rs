//! Exact solver for `min ‖v‖²  s.t.  a_i·v ≤ b_i` with a handful of rows.
//!
//! The optimum of this strictly convex problem is the projection of the
//! origin onto the feasible polyhedron. For a candidate active set `S` with
//! linearly independent normals,
//!
//! ```text
//! v = A_Sᵀ w,   (A_S A_Sᵀ) w = b_S,   λ_S = −2 w
//! ```
//!
//! and `S` is optimal iff `v` is primal feasible and `λ_S ≥ 0`. Subsets are
//! tried by increasing cardinality in lexicographic order, so the first hit
//! is the answer and the choice among degenerate active sets is fixed.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::barrier::{ConstraintRow, DEGENERATE_SLACK};
use crate::error::{Error, Result};

pub const MAX_ROWS: usize = 8;
pub const MAX_DIM: usize = 8;

const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    dim: usize,
    rows: Vec<ConstraintRow>,
}

impl QpProblem {
    pub fn new(dim: usize, rows: Vec<ConstraintRow>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid("qp dimension", format!("{dim} not in 1..={MAX_DIM}")));
        }
        if rows.len() > MAX_ROWS {
            return Err(Error::invalid("qp rows", format!("{} > {MAX_ROWS}", rows.len())));
        }
        for row in &rows {
            if row.a.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "constraint row",
                    expected: dim,
                    got: row.a.len(),
                });
            }
            if !row.b.is_finite() || !row.a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("constraint row"));
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    /// Zero when infeasible.
    pub v_star: DVector<f64>,
    /// Indices into the problem's rows, ascending.
    pub active_set: Vec<usize>,
    /// One non-negative dual per entry of `active_set`.
    pub multipliers: Vec<f64>,
    /// For infeasible problems: a smallest subset of rows with no common solution.
    pub certificate: Vec<usize>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    fn infeasible(dim: usize, certificate: Vec<usize>) -> Self {
        Self {
            status: QpStatus::Infeasible,
            v_star: DVector::zeros(dim),
            active_set: Vec::new(),
            multipliers: Vec::new(),
            certificate,
        }
    }
}

struct Candidate {
    v: DVector<f64>,
    active: Vec<usize>,
    multipliers: Vec<f64>,
}

pub fn solve_min_norm(problem: &QpProblem) -> QpSolution {
    let mut live = Vec::with_capacity(problem.rows.len());
    for (i, row) in problem.rows.iter().enumerate() {
        if row.is_degenerate() {
            if row.b < -DEGENERATE_SLACK {
                return QpSolution::infeasible(problem.dim, vec![i]);
            }
        } else {
            live.push(i);
        }
    }

    match optimum(problem, &live) {
        Some(c) => QpSolution {
            status: QpStatus::Optimal,
            v_star: c.v,
            active_set: c.active,
            multipliers: c.multipliers,
            certificate: Vec::new(),
        },
        None => {
            let certificate = (1..=live.len())
                .flat_map(|k| live.iter().copied().combinations(k))
                .find(|subset| optimum(problem, subset).is_none())
                .unwrap_or_else(|| live.clone());
            QpSolution::infeasible(problem.dim, certificate)
        }
    }
}

fn optimum(problem: &QpProblem, live: &[usize]) -> Option<Candidate> {
    let max_k = live.len().min(problem.dim);
    (0..=max_k)
        .flat_map(|k| live.iter().copied().combinations(k))
        .find_map(|subset| try_active_set(problem, live, subset))
}

fn try_active_set(problem: &QpProblem, live: &[usize], subset: Vec<usize>) -> Option<Candidate> {
    let k = subset.len();
    let (v, w) = if k == 0 {
        (DVector::zeros(problem.dim), DVector::zeros(0))
    } else {
        let a = DMatrix::from_fn(k, problem.dim, |r, c| problem.rows[subset[r]].a[c]);
        let b = DVector::from_fn(k, |r, _| problem.rows[subset[r]].b);
        let gram = &a * a.transpose();
        let chol = gram.clone().cholesky()?;
        let scale = gram.diagonal().amax();
        let l = chol.l_dirty();
        if (0..k).any(|i| l[(i, i)] * l[(i, i)] <= RANK_TOL * scale) {
            return None;
        }
        let w = chol.solve(&b);
        (a.transpose() * &w, w)
    };

    let multipliers: Vec<f64> = w.iter().map(|wi| -2.0 * wi).collect();
    let lam_scale = 1.0 + multipliers.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if multipliers.iter().any(|&l| l < -DUAL_TOL * lam_scale) {
        return None;
    }
    let vnorm = v.norm();
    let feasible = live.iter().all(|&i| {
        let row = &problem.rows[i];
        let tol = FEAS_TOL * (1.0_f64).max(row.b.abs()).max(row.a.norm() * vnorm);
        row.residual(&v) >= -tol
    });
    feasible.then(|| Candidate {
        v,
        active: subset,
        multipliers: multipliers.into_iter().map(|l| l.max(0.0)).collect(),
    })
}

/// Solve with row `relax` loosened by the smallest slack `s ≥ 0` that makes
/// the problem feasible. Returns the solution and `s`.
pub fn solve_with_slack(problem: &QpProblem, relax: usize) -> Result<(QpSolution, f64)> {
    if relax >= problem.rows.len() {
        return Err(Error::invalid("relax", "row index out of range"));
    }
    let first = solve_min_norm(problem);
    if first.is_optimal() {
        return Ok((first, 0.0));
    }
    let with_slack = |s: f64| {
        let mut p = problem.clone();
        p.rows[relax].b += s;
        solve_min_norm(&p)
    };
    let mut hi = 1.0_f64.max(problem.rows[relax].b.abs());
    while !with_slack(hi).is_optimal() {
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e15 {
            return Ok((first, 0.0));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if with_slack(mid).is_optimal() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((with_slack(hi), hi))
}

/// Measured KKT quantities of a solution, each scaled by the size of the
/// terms it balances so that badly conditioned instances are judged fairly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖2v* + Σ λ_i a_i‖ / (1 + 2‖v*‖ + Σ λ_i‖a_i‖)`.
    pub stationarity: f64,
    /// Smallest scaled row residual `(b_i − a_i·v*) / s_i` over all
    /// non-degenerate rows, `s_i = max(1, |b_i|, ‖a_i‖‖v*‖)`.
    pub min_residual: f64,
    pub min_multiplier: f64,
    /// Largest scaled `|b_i − a_i·v*|` over the active set.
    pub complementarity: f64,
}

impl KktReport {
    pub fn certifies(&self) -> bool {
        self.stationarity <= 1e-9
            && self.min_residual >= -1e-9
            && self.min_multiplier >= -1e-9
            && self.complementarity <= 1e-9
    }
}

pub fn kkt_report(problem: &QpProblem, sol: &QpSolution) -> KktReport {
    let v = &sol.v_star;
    let vnorm = v.norm();
    let scale = |r: &ConstraintRow| 1.0f64.max(r.b.abs()).max(r.a.norm() * vnorm);
    let mut grad = v * 2.0;
    let mut magnitude = 1.0 + 2.0 * vnorm;
    for (&i, &l) in sol.active_set.iter().zip(&sol.multipliers) {
        grad += &problem.rows[i].a * l;
        magnitude += l.abs() * problem.rows[i].a.norm();
    }
    let min_residual = problem
        .rows
        .iter()
        .filter(|r| !r.is_degenerate())
        .map(|r| r.residual(v) / scale(r))
        .fold(f64::INFINITY, f64::min);
    let min_multiplier = sol.multipliers.iter().copied().fold(f64::INFINITY, f64::min);
    let complementarity = sol
        .active_set
        .iter()
        .map(|&i| problem.rows[i].residual(v).abs() / scale(&problem.rows[i]))
        .fold(0.0, f64::max);
    KktReport {
        stationarity: grad.norm() / magnitude,
        min_residual,
        min_multiplier,
        complementarity,
    }
}

/// Exhaustive grid minimizer of `‖v‖²` over feasible points of a 2-D
/// problem. Independent of the active-set path; used to check it.
pub fn brute_force_oracle(problem: &QpProblem, halfwidth: f64, points: usize) -> Result<Option<DVector<f64>>> {
    if problem.dim != 2 {
        return Err(Error::invalid("oracle", "only 2-D problems are supported"));
    }
    if points < 2 || !(halfwidth > 0.0) {
        return Err(Error::invalid("oracle grid", "need ≥ 2 points and positive half-width"));
    }
    let step = 2.0 * halfwidth / (points - 1) as f64;
    let coord = |i: usize| -halfwidth + i as f64 * step;
    let mut best: Option<(f64, [f64; 2])> = None;
    for i in 0..points {
        for j in 0..points {
            let v = [coord(i), coord(j)];
            let ok = problem.rows.iter().all(|r| r.b - (r.a[0] * v[0] + r.a[1] * v[1]) >= -1e-12);
            if !ok {
                continue;
            }
            let n = v[0] * v[0] + v[1] * v[1];
            if best.is_none_or(|(bn, _)| n < bn) {
                best = Some((n, v));
            }
        }
    }
    Ok(best.map(|(_, v)| DVector::from_column_slice(&v)))
}
