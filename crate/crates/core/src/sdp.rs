//! Block-structured LMI problems and an embedded primal-dual interior-point
//! solver.
//!
//! Every constraint block is an affine symmetric map `F(x) = F0 + sum x_k F_k`
//! required to satisfy `F(x) <= -shift * I`, where the default shift is
//! `eps_strict * (1 + max|F0|)`. Matrix-valued decision variables are
//! scalarized into `x` honoring symmetry and zero masks; affine matrix
//! expressions over `x` are built with [`MatExpr`].

use std::collections::BTreeMap;

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matkit::{max_abs, max_eig, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Symmetric,
    Rectangular,
}

/// Handle to a registered matrix variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarHandle(usize);

#[derive(Clone, Debug)]
struct MatVar {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major map from entry to scalar index; `None` for masked entries.
    index: Vec<Option<usize>>,
}

/// Affine matrix-valued expression `constant + sum_k x_k terms[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl MatExpr {
    pub fn constant(m: Mat) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    /// Coefficient matrices keyed by scalar variable index.
    pub fn terms(&self) -> &BTreeMap<usize, Mat> {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    fn map(&self, rows: usize, cols: usize, f: impl Fn(&Mat) -> Mat) -> Self {
        let mut terms = BTreeMap::new();
        for (&k, m) in &self.terms {
            let t = f(m);
            if t.iter().any(|v| *v != 0.0) {
                terms.insert(k, t);
            }
        }
        Self { rows, cols, constant: f(&self.constant), terms }
    }

    pub fn add(&self, other: &MatExpr) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err!("cannot add {:?} and {:?} expressions", self.shape(), other.shape()));
        }
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&k, m) in &other.terms {
            match out.terms.get_mut(&k) {
                Some(t) => *t += m,
                None => {
                    out.terms.insert(k, m.clone());
                }
            }
        }
        out.terms.retain(|_, t| t.iter().any(|v| *v != 0.0));
        Ok(out)
    }

    pub fn sub(&self, other: &MatExpr) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn add_const(&self, m: &Mat) -> Result<Self> {
        self.add(&MatExpr::constant(m.clone()))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(self.rows, self.cols, |m| m * alpha)
    }

    /// `m * self`.
    pub fn lmul(&self, m: &Mat) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(dim_err!("lmul: {}x{} times {:?}", m.nrows(), m.ncols(), self.shape()));
        }
        Ok(self.map(m.nrows(), self.cols, |t| m * t))
    }

    /// `self * m`.
    pub fn rmul(&self, m: &Mat) -> Result<Self> {
        if m.nrows() != self.cols {
            return Err(dim_err!("rmul: {:?} times {}x{}", self.shape(), m.nrows(), m.ncols()));
        }
        Ok(self.map(self.rows, m.ncols(), |t| t * m))
    }

    pub fn transpose(&self) -> Self {
        self.map(self.cols, self.rows, |t| t.transpose())
    }

    /// `self + self^T`.
    pub fn he(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(dim_err!("He() of non-square expression {:?}", self.shape()));
        }
        self.add(&self.transpose())
    }

    pub fn trace(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(dim_err!("trace of non-square expression"));
        }
        Ok(self.map(1, 1, |t| Mat::from_element(1, 1, t.trace())))
    }

    /// Sub-block starting at `(r0, c0)` of size `(r, c)`.
    pub fn block(&self, r0: usize, c0: usize, r: usize, c: usize) -> Self {
        self.map(r, c, |t| t.view((r0, c0), (r, c)).into_owned())
    }

    /// Assembles a block expression from a grid of expressions.
    pub fn grid(grid: &[Vec<MatExpr>]) -> Result<Self> {
        if grid.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let heights: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.cols).collect();
        for (i, row) in grid.iter().enumerate() {
            if row.len() != widths.len() {
                return Err(dim_err!("ragged expression grid"));
            }
            for (j, b) in row.iter().enumerate() {
                if b.rows != heights[i] || b.cols != widths[j] {
                    return Err(dim_err!(
                        "expression block ({i},{j}) is {:?}, expected {}x{}",
                        b.shape(),
                        heights[i],
                        widths[j]
                    ));
                }
            }
        }
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c = 0;
            for (j, b) in row.iter().enumerate() {
                out.constant.view_mut((r, c), b.constant.shape()).copy_from(&b.constant);
                for (&k, t) in &b.terms {
                    let entry = out.terms.entry(k).or_insert_with(|| Mat::zeros(rows, cols));
                    entry.view_mut((r, c), t.shape()).copy_from(t);
                }
                c += widths[j];
            }
            r += heights[i];
        }
        Ok(out)
    }

    pub fn hcat(parts: &[MatExpr]) -> Result<Self> {
        Self::grid(&[parts.to_vec()])
    }

    pub fn vcat(parts: &[MatExpr]) -> Result<Self> {
        let g: Vec<Vec<MatExpr>> = parts.iter().map(|p| vec![p.clone()]).collect();
        Self::grid(&g)
    }

    /// Block-diagonal assembly.
    pub fn blockdiag(parts: &[MatExpr]) -> Result<Self> {
        let g: Vec<Vec<MatExpr>> = (0..parts.len())
            .map(|i| {
                (0..parts.len())
                    .map(|j| if i == j { parts[i].clone() } else { MatExpr::zeros(parts[i].rows, parts[j].cols) })
                    .collect()
            })
            .collect();
        Self::grid(&g)
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, t) in &self.terms {
            out += t * x[k];
        }
        out
    }
}

/// Replaces `Phi + C^T Z^{-1} C < 0` (with `Z > 0`) by the affine block
/// `[[Phi, C^T], [C, -Z]] < 0`.
pub fn schur_linearize(phi: &MatExpr, c: &MatExpr, z: &MatExpr) -> Result<MatExpr> {
    if phi.rows != phi.cols || z.rows != z.cols || c.cols != phi.rows || c.rows != z.rows {
        return Err(dim_err!(
            "Schur blocks do not fit: Phi {:?}, C {:?}, Z {:?}",
            phi.shape(),
            c.shape(),
            z.shape()
        ));
    }
    MatExpr::grid(&[vec![phi.clone(), c.transpose()], vec![c.clone(), z.scale(-1.0)]])
}

#[derive(Clone, Debug)]
struct LmiBlock {
    name: String,
    expr: MatExpr,
    shift: f64,
}

/// Decision variables, linear objective and negative semidefinite blocks.
#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    vars: Vec<MatVar>,
    scalar_names: Vec<String>,
    objective: BTreeMap<usize, f64>,
    blocks: Vec<LmiBlock>,
    eps_strict: f64,
}

impl LmiProblem {
    pub fn new(eps_strict: f64) -> Self {
        Self { eps_strict, ..Default::default() }
    }

    pub fn eps_strict(&self) -> f64 {
        self.eps_strict
    }

    /// Registers a matrix variable. `mask` (row-major, `true` = forced zero)
    /// must be symmetric for symmetric variables.
    pub fn add_matrix_variable(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        kind: VarKind,
        mask: Option<&[bool]>,
    ) -> Result<VarHandle> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(Error::Invalid(format!("variable name '{name}' already used")));
        }
        if kind == VarKind::Symmetric && rows != cols {
            return Err(dim_err!("symmetric variable '{name}' must be square"));
        }
        if let Some(m) = mask {
            if m.len() != rows * cols {
                return Err(dim_err!("mask of '{name}' has {} entries, expected {}", m.len(), rows * cols));
            }
            if kind == VarKind::Symmetric {
                for i in 0..rows {
                    for j in 0..cols {
                        if m[i * cols + j] != m[j * cols + i] {
                            return Err(Error::Invalid(format!("mask of symmetric '{name}' is not symmetric")));
                        }
                    }
                }
            }
        }
        let masked = |i: usize, j: usize| mask.map(|m| m[i * cols + j]).unwrap_or(false);
        let mut index = vec![None; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                if masked(i, j) {
                    continue;
                }
                match kind {
                    VarKind::Rectangular => {
                        index[i * cols + j] = Some(self.push_scalar(format!("{name}[{i},{j}]")));
                    }
                    VarKind::Symmetric if j >= i => {
                        let k = self.push_scalar(format!("{name}[{i},{j}]"));
                        index[i * cols + j] = Some(k);
                        index[j * cols + i] = Some(k);
                    }
                    VarKind::Symmetric => {}
                }
            }
        }
        self.vars.push(MatVar { name: name.to_string(), rows, cols, index });
        Ok(VarHandle(self.vars.len() - 1))
    }

    pub fn add_scalar_variable(&mut self, name: &str) -> Result<VarHandle> {
        self.add_matrix_variable(name, 1, 1, VarKind::Rectangular, None)
    }

    fn push_scalar(&mut self, name: String) -> usize {
        self.scalar_names.push(name);
        self.scalar_names.len() - 1
    }

    pub fn num_scalars(&self) -> usize {
        self.scalar_names.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.expr.rows).collect()
    }

    pub fn block_shift(&self, i: usize) -> f64 {
        self.blocks[i].shift
    }

    pub fn variable_name(&self, h: VarHandle) -> &str {
        &self.vars[h.0].name
    }

    /// Number of free scalars of one matrix variable.
    pub fn variable_scalars(&self, h: VarHandle) -> usize {
        let v = &self.vars[h.0];
        let mut seen: Vec<usize> = v.index.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// The variable as an affine expression.
    pub fn expr(&self, h: VarHandle) -> MatExpr {
        let v = &self.vars[h.0];
        let mut e = MatExpr::zeros(v.rows, v.cols);
        for i in 0..v.rows {
            for j in 0..v.cols {
                if let Some(k) = v.index[i * v.cols + j] {
                    e.terms.entry(k).or_insert_with(|| Mat::zeros(v.rows, v.cols))[(i, j)] = 1.0;
                }
            }
        }
        e
    }

    /// Value of a matrix variable at the scalar point `x`.
    pub fn value(&self, h: VarHandle, x: &[f64]) -> Mat {
        let v = &self.vars[h.0];
        Mat::from_fn(v.rows, v.cols, |i, j| v.index[i * v.cols + j].map(|k| x[k]).unwrap_or(0.0))
    }

    /// Adds `coef * trace(weight^T var)`-style linear terms through a 1x1 expression.
    pub fn add_objective(&mut self, e: &MatExpr) -> Result<()> {
        if e.shape() != (1, 1) {
            return Err(dim_err!("objective must be a 1x1 expression"));
        }
        for (&k, t) in &e.terms {
            *self.objective.entry(k).or_insert(0.0) += t[(0, 0)];
        }
        Ok(())
    }

    pub fn objective_vector(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.num_scalars()];
        for (&k, &v) in &self.objective {
            c[k] = v;
        }
        c
    }

    /// Adds the constraint `e <= -shift I` with the default shift.
    pub fn add_lmi(&mut self, name: &str, e: MatExpr) -> Result<usize> {
        let shift = self.eps_strict * (1.0 + max_abs(&e.constant));
        self.add_lmi_with_shift(name, e, shift)
    }

    pub fn add_lmi_with_shift(&mut self, name: &str, e: MatExpr, shift: f64) -> Result<usize> {
        if e.rows != e.cols {
            return Err(dim_err!("constraint '{name}' is not square: {:?}", e.shape()));
        }
        let asym = |m: &Mat| max_abs(&(m - m.transpose()));
        let scale = 1.0 + max_abs(&e.constant);
        if asym(&e.constant) > 1e-9 * scale || e.terms.values().any(|t| asym(t) > 1e-9 * (1.0 + max_abs(t))) {
            return Err(Error::Invalid(format!("constraint '{name}' is not symmetric")));
        }
        let sym = |m: &Mat| (m + m.transpose()) * 0.5;
        let expr = MatExpr {
            rows: e.rows,
            cols: e.cols,
            constant: sym(&e.constant),
            terms: e.terms.iter().map(|(&k, t)| (k, sym(t))).collect(),
        };
        self.blocks.push(LmiBlock { name: name.to_string(), expr, shift });
        Ok(self.blocks.len() - 1)
    }

    /// `F_i(x)` for every block.
    pub fn evaluate_blocks(&self, x: &[f64]) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.expr.eval(x)).collect()
    }

    /// `-max_eig(F_i(x))` for every block.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate_blocks(x).iter().map(|f| -max_eig(f)).collect()
    }

    /// Dense JSON dump for external cross-checking.
    pub fn to_json(&self) -> Result<String> {
        let dump = ProblemDump {
            scalars: self.scalar_names.clone(),
            objective: self.objective_vector(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDump {
                    name: b.name.clone(),
                    dim: b.expr.rows,
                    shift: b.shift,
                    f0: crate::cli::JsonMat::from(&b.expr.constant),
                    terms: b
                        .expr
                        .terms
                        .iter()
                        .map(|(&k, t)| TermDump { scalar: k, f: crate::cli::JsonMat::from(t) })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

#[derive(Serialize)]
struct ProblemDump {
    scalars: Vec<String>,
    objective: Vec<f64>,
    blocks: Vec<BlockDump>,
}

#[derive(Serialize)]
struct BlockDump {
    name: String,
    dim: usize,
    shift: f64,
    f0: crate::cli::JsonMat,
    terms: Vec<TermDump>,
}

#[derive(Serialize)]
struct TermDump {
    scalar: usize,
    f: crate::cli::JsonMat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Threshold on `||A^*(W)|| / -<C, W>` for declaring infeasibility.
    pub infeas_tol: f64,
    /// Dual residual accepted once the primal is feasible and the gap has closed.
    pub loose_dual_tol: f64,
    /// Relative gap accepted for the best primal-feasible iterate when the
    /// method cannot reach `gap_tol`.
    pub loose_gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-7, feas_tol: 1e-8, max_iter: 200, infeas_tol: 1e-8, loose_dual_tol: 1e-5, loose_gap_tol: 1e-5 }
    }
}

/// Normalized dual ray weight on each constraint block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockWeight {
    pub block: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// `-max_eig(F_i(x))` per block; `>= shift_i - tol` at an optimum.
    pub margins: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// Present for infeasible results: trace share of the normalized dual ray per block.
    pub certificate: Option<Vec<BlockWeight>>,
    pub message: String,
}

struct Prepared {
    dims: Vec<usize>,
    cmat: Vec<Mat>,
    /// Per block: scalar index, coefficient, sparse entries.
    terms: Vec<Vec<(usize, Mat, Vec<(usize, usize, f64)>)>>,
    c: Vec<f64>,
    m: usize,
    /// Positive factor applied to each block.
    row_scale: Vec<f64>,
    /// Original scalar = `col_scale * solver scalar`.
    col_scale: Vec<f64>,
}

impl Prepared {
    /// Equilibrated copy of the problem: each block is divided by its largest
    /// coefficient norm, then each scalar by its coefficient column norm.
    fn new(p: &LmiProblem) -> Self {
        let m = p.num_scalars();
        let row_scale: Vec<f64> = p
            .blocks
            .iter()
            .map(|b| {
                let big = b.expr.terms.values().map(|t| t.norm()).fold(0.0, f64::max);
                if big > 0.0 { 1.0 / big } else { 1.0 }
            })
            .collect();
        let mut col = vec![0.0f64; m];
        for (b, d) in p.blocks.iter().zip(&row_scale) {
            for (&k, t) in &b.expr.terms {
                col[k] += (d * t.norm()).powi(2);
            }
        }
        let col_scale: Vec<f64> = col.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        let mut cmat = Vec::new();
        let mut terms = Vec::new();
        let mut dims = Vec::new();
        for (b, &d) in p.blocks.iter().zip(&row_scale) {
            let n = b.expr.rows;
            dims.push(n);
            cmat.push((-&b.expr.constant - Mat::identity(n, n) * b.shift) * d);
            terms.push(
                b.expr
                    .terms
                    .iter()
                    .map(|(&k, t)| {
                        let t = t * (d * col_scale[k]);
                        let mut nz = Vec::new();
                        for j in 0..n {
                            for i in 0..n {
                                if t[(i, j)] != 0.0 {
                                    nz.push((i, j, t[(i, j)]));
                                }
                            }
                        }
                        (k, t.clone(), nz)
                    })
                    .collect(),
            );
        }
        let c = p.objective_vector().iter().zip(&col_scale).map(|(a, e)| a * e).collect();
        Self { dims, cmat, terms, c, m, row_scale, col_scale }
    }

    fn unscale_dual(&self, w: &[Mat]) -> Vec<Mat> {
        w.iter().zip(&self.row_scale).map(|(m, d)| m * *d).collect()
    }

    fn apply(&self, j: usize, x: &[f64]) -> Mat {
        let n = self.dims[j];
        let mut out = Mat::zeros(n, n);
        for (k, a, _) in &self.terms[j] {
            if x[*k] != 0.0 {
                out += a * x[*k];
            }
        }
        out
    }

    fn adjoint(&self, w: &[Mat]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, ts) in self.terms.iter().enumerate() {
            for (k, _, nz) in ts {
                out[*k] += sparse_dot(nz, &w[j]);
            }
        }
        out
    }
}

fn sparse_dot(nz: &[(usize, usize, f64)], m: &Mat) -> f64 {
    nz.iter().map(|&(i, j, v)| v * m[(i, j)]).sum()
}

fn dot(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(b).sum()
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Largest `alpha` with `x + alpha dx` positive semidefinite (capped at `f64::MAX`).
fn max_step(x: &Mat, dx: &Mat) -> f64 {
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let t = sym(&(&linv * dx * linv.transpose()));
    let lmin = SymmetricEigen::new(t).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::MAX
    } else {
        -1.0 / lmin
    }
}

fn spd_inverse(m: &Mat) -> Option<Mat> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

/// Solves the problem with the embedded infeasible-start primal-dual method
/// (HKM search direction, Mehrotra predictor-corrector).
pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<SolveResult> {
    if problem.blocks.is_empty() {
        return Err(Error::Invalid("LMI problem has no constraints".into()));
    }
    let pr = Prepared::new(problem);
    let m = pr.m;
    let mut used = vec![false; m];
    for ts in &pr.terms {
        for (k, _, _) in ts {
            used[*k] = true;
        }
    }
    if used.iter().any(|u| !u) {
        return solve_without_unused(problem, &used, opts);
    }
    let nb = pr.dims.len();
    let ntot: usize = pr.dims.iter().sum();
    let c = &pr.c;
    let cnorm = norm2(c);
    let bigc = pr.cmat.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    let max_a = pr
        .terms
        .iter()
        .flat_map(|ts| ts.iter().map(|(_, a, _)| a.norm()))
        .fold(0.0, f64::max);
    let mut a_norm_k = vec![0.0f64; m];
    for ts in &pr.terms {
        for (k, a, _) in ts {
            a_norm_k[*k] += a.norm_squared();
        }
    }
    let s0 = 10f64.max((ntot as f64).sqrt()).max(max_a).max(bigc);
    let w0 = (0..m)
        .map(|k| (1.0 + c[k].abs()) / (1.0 + a_norm_k[k].sqrt()))
        .fold(10f64.max((ntot as f64).sqrt()), |acc, v| acc.max(ntot as f64 * v));

    let mut x = vec![0.0; m];
    let mut s: Vec<Mat> = pr.dims.iter().map(|&n| Mat::identity(n, n) * s0).collect();
    let mut w: Vec<Mat> = pr.dims.iter().map(|&n| Mat::identity(n, n) * w0).collect();

    let mut status = SolveStatus::NumericalFailure;
    let mut message = String::from("iteration limit reached");
    let mut iterations = 0;
    let mut rel_gap = f64::INFINITY;
    let mut pinf = f64::INFINITY;
    let mut dinf = f64::INFINITY;
    let mut certificate = None;
    let mut stalls = 0;
    let mut best_infeas_measure = f64::INFINITY;
    // (score, x, rel_gap, pinf, dinf) of the best primal-feasible iterate
    let mut best: Option<(f64, Vec<f64>, f64, f64, f64)> = None;

    for it in 0..=opts.max_iter {
        iterations = it;
        let ax: Vec<Mat> = (0..nb).map(|j| pr.apply(j, &x)).collect();
        let rp: Vec<Mat> = (0..nb).map(|j| &pr.cmat[j] - &ax[j] - &s[j]).collect();
        let aw = pr.adjoint(&w);
        let rd: Vec<f64> = (0..m).map(|k| -c[k] - aw[k]).collect();
        let pobj: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let cw: f64 = (0..nb).map(|j| dot(&pr.cmat[j], &w[j])).sum();
        let dobj = -cw;
        let gap: f64 = (0..nb).map(|j| dot(&s[j], &w[j])).sum();
        let mu = gap / ntot as f64;
        pinf = rp.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + bigc);
        dinf = norm2(&rd) / (1.0 + cnorm);
        rel_gap = gap / (1.0 + pobj.abs() + dobj.abs());
        log::trace!("it {it}: pobj {pobj:.6e} dobj {dobj:.6e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}");

        if pinf <= opts.feas_tol && dinf <= opts.feas_tol && rel_gap <= opts.gap_tol {
            status = SolveStatus::Optimal;
            message = "converged".into();
            break;
        }
        if pinf <= opts.feas_tol {
            let score = (rel_gap / opts.loose_gap_tol).max(dinf / opts.loose_dual_tol);
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, x.clone(), rel_gap, pinf, dinf));
            }
        }
        if pinf <= opts.feas_tol && dinf <= opts.loose_dual_tol && rel_gap <= opts.gap_tol {
            status = SolveStatus::Optimal;
            message = format!("converged with dual residual {dinf:.2e}");
            break;
        }
        if cw < 0.0 {
            let measure = norm2(&aw) / -cw;
            best_infeas_measure = best_infeas_measure.min(measure);
            if measure <= opts.infeas_tol && pinf > opts.feas_tol {
                status = SolveStatus::Infeasible;
                message = format!("dual improving ray found (residual ratio {measure:.2e})");
                certificate = Some(block_weights(problem, &pr.unscale_dual(&w)));
                break;
            }
        }
        if pobj < -1e12 * (1.0 + dobj.abs()) && pinf <= opts.feas_tol {
            message = "objective appears unbounded below".into();
            break;
        }
        if it == opts.max_iter {
            break;
        }

        let sinv: Vec<Mat> = match s.iter().map(spd_inverse).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => {
                message = "slack lost definiteness".into();
                break;
            }
        };

        // Schur complement matrix
        let mut mm = Mat::zeros(m, m);
        for j in 0..nb {
            let ts = &pr.terms[j];
            for (li, (l, al, _)) in ts.iter().enumerate() {
                let g = &w[j] * al * &sinv[j];
                for (k, _, nzk) in ts.iter().take(li + 1) {
                    let v = sparse_dot(nzk, &g.transpose());
                    mm[(*k, *l)] += v;
                    if k != l {
                        mm[(*l, *k)] += v;
                    }
                }
            }
        }
        let mm = sym(&mm);
        let factor = match factorize(&mm) {
            Some(f) => f,
            None => {
                message = "Schur complement matrix is singular".into();
                break;
            }
        };

        let direction = |rmat: &[Mat]| -> (Vec<f64>, Vec<Mat>, Vec<Mat>) {
            let ar = pr.adjoint(rmat);
            let rhs: Vec<f64> = (0..m).map(|k| rd[k] - ar[k]).collect();
            let mut dx = factor.solve(&rhs);
            // iterative refinement against the unregularized Schur matrix
            for _ in 0..3 {
                let md = &mm * nalgebra::DVector::from_column_slice(&dx);
                let res: Vec<f64> = (0..m).map(|k| rhs[k] - md[k]).collect();
                if norm2(&res) <= 1e-15 * (1.0 + norm2(&rhs)) {
                    break;
                }
                let corr = factor.solve(&res);
                for k in 0..m {
                    dx[k] += corr[k];
                }
            }
            let mut ds = Vec::with_capacity(nb);
            let mut dw = Vec::with_capacity(nb);
            for j in 0..nb {
                let adx = pr.apply(j, &dx);
                let dsj = &rp[j] - &adx;
                let dwj = &rmat[j] + sym(&(&w[j] * &adx * &sinv[j]));
                ds.push(dsj);
                dw.push(dwj);
            }
            (dx, ds, dw)
        };

        let wrps: Vec<Mat> = (0..nb).map(|j| &w[j] * &rp[j] * &sinv[j]).collect();
        // predictor
        let r_aff: Vec<Mat> = (0..nb).map(|j| sym(&(-&w[j] - &wrps[j]))).collect();
        let (_, ds_a, dw_a) = direction(&r_aff);
        let (ap, ad) = step_lengths(&s, &ds_a, &w, &dw_a, 1.0);
        let gap_aff: f64 = (0..nb)
            .map(|j| dot(&(&s[j] + &ds_a[j] * ap), &(&w[j] + &dw_a[j] * ad)))
            .sum();
        let mut sigma = ((gap_aff / gap).max(0.0)).powi(3).min(1.0);
        // keep the complementarity gap from outrunning the residuals
        let lag = pinf.max(dinf) / opts.feas_tol;
        if lag > 1.0 && rel_gap < opts.gap_tol * lag {
            sigma = sigma.max(0.5);
        }
        // corrector
        let r_cor: Vec<Mat> = (0..nb)
            .map(|j| {
                sym(&(&sinv[j] * (sigma * mu) - &w[j] - &wrps[j] - &dw_a[j] * &ds_a[j] * &sinv[j]))
            })
            .collect();
        let (dx, ds, dw) = direction(&r_cor);
        let tau = if rel_gap < 1e-5 { 0.99 } else { 0.95 };
        let (mut ap, mut ad) = step_lengths(&s, &ds, &w, &dw, tau);
        // shorten steps that round-off would push out of the cone
        let inside = |x: &[Mat], dx: &[Mat], a: f64| x.iter().zip(dx).all(|(m, d)| Cholesky::new(sym(&(m + d * a))).is_some());
        for _ in 0..30 {
            if inside(&s, &ds, ap) {
                break;
            }
            ap *= 0.5;
        }
        for _ in 0..30 {
            if inside(&w, &dw, ad) {
                break;
            }
            ad *= 0.5;
        }
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                message = "step lengths collapsed".into();
                break;
            }
        } else {
            stalls = 0;
        }
        for k in 0..m {
            x[k] += ap * dx[k];
        }
        for j in 0..nb {
            s[j] = sym(&(&s[j] + &ds[j] * ap));
            w[j] = sym(&(&w[j] + &dw[j] * ad));
        }
    }

    if status == SolveStatus::NumericalFailure && best_infeas_measure <= 1e-6 {
        let cw: f64 = (0..nb).map(|j| dot(&pr.cmat[j], &w[j])).sum();
        if cw < 0.0 && pinf > opts.feas_tol {
            status = SolveStatus::Infeasible;
            message = format!("{message}; weak dual improving ray (residual ratio {best_infeas_measure:.2e})");
            certificate = Some(block_weights(problem, &pr.unscale_dual(&w)));
        }
    }

    if status == SolveStatus::NumericalFailure {
        if let Some((score, bx, bg, bp, bd)) = best {
            if score <= 1.0 {
                status = SolveStatus::Optimal;
                message = format!("{message}; returning best iterate (gap {bg:.2e}, dual residual {bd:.2e})");
                x = bx;
                rel_gap = bg;
                pinf = bp;
                dinf = bd;
            }
        }
    }
    let x: Vec<f64> = x.iter().zip(&pr.col_scale).map(|(a, e)| a * e).collect();
    let margins = problem.margins(&x);
    let objective = problem.objective_vector().iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(SolveResult {
        status,
        x,
        margins,
        objective,
        iterations,
        rel_gap,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        certificate,
        message,
    })
}

/// Scalars outside every constraint are fixed at zero when they carry no
/// cost; with a cost the problem is unbounded.
fn solve_without_unused(problem: &LmiProblem, used: &[bool], opts: &SolverOptions) -> Result<SolveResult> {
    for (k, &u) in used.iter().enumerate() {
        if !u && problem.objective.get(&k).is_some_and(|c| *c != 0.0) {
            return Err(Error::Invalid(format!(
                "scalar '{}' appears in no constraint but in the objective; the problem is unbounded",
                problem.scalar_names[k]
            )));
        }
    }
    let mut map = vec![None; used.len()];
    let mut names = Vec::new();
    for (k, &u) in used.iter().enumerate() {
        if u {
            map[k] = Some(names.len());
            names.push(problem.scalar_names[k].clone());
        }
    }
    let remap = |terms: &BTreeMap<usize, Mat>| terms.iter().filter_map(|(k, t)| map[*k].map(|j| (j, t.clone()))).collect();
    let reduced = LmiProblem {
        vars: Vec::new(),
        scalar_names: names,
        objective: problem.objective.iter().filter_map(|(k, c)| map[*k].map(|j| (j, *c))).collect(),
        blocks: problem
            .blocks
            .iter()
            .map(|b| LmiBlock { name: b.name.clone(), expr: MatExpr { terms: remap(&b.expr.terms), ..b.expr.clone() }, shift: b.shift })
            .collect(),
        eps_strict: problem.eps_strict,
    };
    let mut res = solve(&reduced, opts)?;
    res.x = map.iter().map(|j| j.map(|j| res.x[j]).unwrap_or(0.0)).collect();
    Ok(res)
}

fn block_weights(problem: &LmiProblem, w: &[Mat]) -> Vec<BlockWeight> {
    let total: f64 = w.iter().map(|m| m.trace()).sum();
    problem
        .blocks
        .iter()
        .zip(w)
        .map(|(b, m)| BlockWeight { block: b.name.clone(), weight: m.trace() / total })
        .collect()
}

fn step_lengths(s: &[Mat], ds: &[Mat], w: &[Mat], dw: &[Mat], tau: f64) -> (f64, f64) {
    let ap = s.iter().zip(ds).map(|(a, b)| max_step(a, b)).fold(f64::MAX, f64::min);
    let ad = w.iter().zip(dw).map(|(a, b)| max_step(a, b)).fold(f64::MAX, f64::min);
    ((tau * ap).min(1.0), (tau * ad).min(1.0))
}

enum Factor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        let sol = match self {
            Factor::Chol(c) => c.solve(&b),
            Factor::Lu(l) => l.solve(&b).unwrap_or_else(|| nalgebra::DVector::zeros(rhs.len())),
        };
        sol.iter().copied().collect()
    }
}

fn factorize(m: &Mat) -> Option<Factor> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(Factor::Chol(c));
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let reg = m + Mat::identity(m.nrows(), m.ncols()) * (1e-13 * scale);
    if let Some(c) = Cholesky::new(reg) {
        return Some(Factor::Chol(c));
    }
    let lu = m.clone().lu();
    if lu.is_invertible() {
        Some(Factor::Lu(lu))
    } else {
        None
    }
}
