//! Structured plant, controller and closed-loop linear fractional
//! representations, their interconnection, and frozen-parameter evaluation.
//!
//! The plant has columns `(x, w1, w2, w_p, u)` and rows `(x', z1, z2, z_p, y)`
//! where `w = (w1, w2)` is the scheduling input of size `u_hat = u1 + u2` and
//! `z = (z1, z2)` the scheduling output of size `v_hat = v1 + v2`; the
//! scheduling loop is closed by `w = V z` with `V` in the value set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matkit::{blockdiag, eye, inverse, max_abs, min_singular_value, BlockSpec, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantPartition {
    pub ns: usize,
    pub u1: usize,
    pub u2: usize,
    pub v1: usize,
    pub v2: usize,
    /// Performance input dimension.
    pub q: usize,
    /// Performance output dimension.
    pub p: usize,
    pub m: usize,
    pub k: usize,
}

impl PlantPartition {
    pub fn u_hat(&self) -> usize {
        self.u1 + self.u2
    }

    pub fn v_hat(&self) -> usize {
        self.v1 + self.v2
    }

    /// Size of the lifted scheduling channel.
    pub fn rs(&self) -> usize {
        self.u_hat() + self.v_hat()
    }

    fn row_spec(&self) -> BlockSpec {
        BlockSpec::new(&[self.ns, self.v1, self.v2, self.p, self.k])
    }

    fn col_spec(&self) -> BlockSpec {
        BlockSpec::new(&[self.ns, self.u1, self.u2, self.q, self.m])
    }
}

/// Generic blocks of a plant with scheduling, performance and control
/// channels. Used for both the original and the lifted plant.
#[derive(Clone, Debug)]
pub struct PlantBlocks {
    pub a11: Mat,
    pub a12: Mat,
    pub a21: Mat,
    pub a22: Mat,
    pub b1p: Mat,
    pub b2p: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1p: Mat,
    pub c2p: Mat,
    pub dp: Mat,
    pub d1: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d2: Mat,
    pub d3: Mat,
}

impl PlantBlocks {
    pub fn n(&self) -> usize {
        self.a11.nrows()
    }

    /// Scheduling input dimension.
    pub fn rw(&self) -> usize {
        self.a12.ncols()
    }

    /// Scheduling output dimension.
    pub fn rz(&self) -> usize {
        self.a21.nrows()
    }

    pub fn q(&self) -> usize {
        self.b1p.ncols()
    }

    pub fn p(&self) -> usize {
        self.c1p.nrows()
    }

    pub fn m(&self) -> usize {
        self.b1.ncols()
    }

    pub fn k(&self) -> usize {
        self.c1.nrows()
    }
}

/// The structured plant, stored as one system matrix partitioned by
/// [`PlantPartition`].
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredPlantLfr {
    part: PlantPartition,
    sys: Mat,
}

/// One violated zero block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub block: String,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dimensions_ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.dimensions_ok && self.violations.is_empty()
    }
}

/// Names of the plant block rows and columns, in storage order.
pub const PLANT_ROWS: [&str; 5] = ["x'", "z1", "z2", "z_p", "y"];
pub const PLANT_COLS: [&str; 5] = ["x", "w1", "w2", "w_p", "u"];
/// Blocks of the plant matrix that must vanish, as (row, col) block indices.
const PLANT_ZEROS: [(usize, usize); 5] = [(1, 2), (1, 3), (3, 2), (3, 3), (4, 4)];

impl StructuredPlantLfr {
    /// Wraps a full system matrix; only dimensions are checked here, see
    /// [`validate_plant`] for the zero pattern.
    pub fn new(part: PlantPartition, sys: Mat) -> Result<Self> {
        BlockSpec::check(&sys, &part.row_spec(), &part.col_spec())?;
        if sys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("plant matrix has non-finite entries".into()));
        }
        Ok(Self { part, sys })
    }

    pub fn zero(part: PlantPartition) -> Self {
        let r = part.row_spec().total();
        let c = part.col_spec().total();
        Self { part, sys: Mat::zeros(r, c) }
    }

    pub fn partition(&self) -> &PlantPartition {
        &self.part
    }

    pub fn system_matrix(&self) -> &Mat {
        &self.sys
    }

    /// Block `(row, col)` with rows `(x', z1, z2, z_p, y)` and columns `(x, w1, w2, w_p, u)`.
    pub fn block(&self, row: usize, col: usize) -> Mat {
        BlockSpec::block(&self.sys, &self.part.row_spec(), &self.part.col_spec(), row, col)
    }

    pub fn set_block(&mut self, row: usize, col: usize, m: &Mat) -> Result<()> {
        let rs = self.part.row_spec();
        let cs = self.part.col_spec();
        if m.shape() != (rs.size(row), cs.size(col)) {
            return Err(dim_err!(
                "block ({}, {}) must be {}x{}, got {}x{}",
                PLANT_ROWS[row],
                PLANT_COLS[col],
                rs.size(row),
                cs.size(col),
                m.nrows(),
                m.ncols()
            ));
        }
        self.sys.view_mut((rs.offset(row), cs.offset(col)), m.shape()).copy_from(m);
        Ok(())
    }

    fn rows(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Mat {
        let rs = self.part.row_spec();
        let cs = self.part.col_spec();
        let (ro, co) = (rs.offset(r0), cs.offset(c0));
        let (rn, cn) = (rs.offset(r1 + 1) - ro, cs.offset(c1 + 1) - co);
        self.sys.view((ro, co), (rn, cn)).into_owned()
    }

    /// Blocks in the merged (un-barred) partition.
    pub fn hat_blocks(&self) -> PlantBlocks {
        PlantBlocks {
            a11: self.rows(0, 0, 0, 0),
            a12: self.rows(0, 0, 1, 2),
            a21: self.rows(1, 2, 0, 0),
            a22: self.rows(1, 2, 1, 2),
            b1p: self.rows(0, 0, 3, 3),
            b2p: self.rows(1, 2, 3, 3),
            b1: self.rows(0, 0, 4, 4),
            b2: self.rows(1, 2, 4, 4),
            c1p: self.rows(3, 3, 0, 0),
            c2p: self.rows(3, 3, 1, 2),
            dp: self.rows(3, 3, 3, 3),
            d1: self.rows(3, 3, 4, 4),
            c1: self.rows(4, 4, 0, 0),
            c2: self.rows(4, 4, 1, 2),
            d2: self.rows(4, 4, 3, 3),
            d3: self.rows(4, 4, 4, 4),
        }
    }
}

/// Checks dimensions and the required zero blocks of the plant.
pub fn validate_plant(p: &StructuredPlantLfr) -> ValidationReport {
    let dimensions_ok = BlockSpec::check(&p.sys, &p.part.row_spec(), &p.part.col_spec()).is_ok();
    let mut violations = Vec::new();
    if dimensions_ok {
        for &(r, c) in &PLANT_ZEROS {
            let b = p.block(r, c);
            let m = max_abs(&b);
            if m != 0.0 {
                violations.push(Violation { block: format!("({},{})", PLANT_ROWS[r], PLANT_COLS[c]), max_abs: m });
            }
        }
    }
    ValidationReport { dimensions_ok, violations }
}

/// Convex hull of finitely many `u_hat x v_hat` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSet {
    u_hat: usize,
    v_hat: usize,
    vertices: Vec<Mat>,
}

impl ValueSet {
    /// Builds the set and checks that zero lies in the hull.
    pub fn new(u_hat: usize, v_hat: usize, vertices: Vec<Mat>) -> Result<Self> {
        let vs = Self::new_unchecked(u_hat, v_hat, vertices)?;
        if !vs.contains_zero()? {
            return Err(Error::Invalid("the zero matrix is not in the convex hull of the vertices".into()));
        }
        Ok(vs)
    }

    /// Builds the set checking only shapes.
    pub fn new_unchecked(u_hat: usize, v_hat: usize, vertices: Vec<Mat>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Invalid("value set needs at least one vertex".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if v.shape() != (u_hat, v_hat) {
                return Err(dim_err!("vertex {i} is {}x{}, expected {u_hat}x{v_hat}", v.nrows(), v.ncols()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("vertex {i} has non-finite entries")));
            }
        }
        Ok(Self { u_hat, v_hat, vertices })
    }

    /// Box `prod_i [-b_i, b_i]` on independent scalar entries, placed by `pattern`:
    /// each entry of `pattern` is `Some(i)` for parameter `i` or `None` for a fixed zero.
    pub fn parameter_box(u_hat: usize, v_hat: usize, bounds: &[f64], pattern: &[Option<usize>]) -> Result<Self> {
        if pattern.len() != u_hat * v_hat {
            return Err(dim_err!("pattern has {} entries, expected {}", pattern.len(), u_hat * v_hat));
        }
        let np = bounds.len();
        if np > 16 {
            return Err(Error::Invalid("too many box parameters".into()));
        }
        let mut vertices = Vec::with_capacity(1 << np);
        for corner in 0..(1usize << np) {
            let sign = |i: usize| if corner >> i & 1 == 1 { 1.0 } else { -1.0 };
            vertices.push(Mat::from_fn(u_hat, v_hat, |r, c| {
                pattern[r * v_hat + c].map(|i| sign(i) * bounds[i]).unwrap_or(0.0)
            }));
        }
        Self::new(u_hat, v_hat, vertices)
    }

    pub fn u_hat(&self) -> usize {
        self.u_hat
    }

    pub fn v_hat(&self) -> usize {
        self.v_hat
    }

    pub fn vertices(&self) -> &[Mat] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Every vertex multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { u_hat: self.u_hat, v_hat: self.v_hat, vertices: self.vertices.iter().map(|v| v * alpha).collect() }
    }

    /// Whether zero is a convex combination of the vertices, decided by a
    /// small linear program.
    pub fn contains_zero(&self) -> Result<bool> {
        Ok(hull_distance(&self.vertices)? <= 1e-7 * (1.0 + self.vertices.iter().map(max_abs).fold(0.0, f64::max)))
    }

    /// Checks that the upper-right `u1 x v2` block vanishes at every vertex, which
    /// is what keeps the frozen performance feedthrough at zero.
    pub fn is_triangular(&self, u1: usize, v1: usize) -> bool {
        self.vertices.iter().all(|v| {
            (0..u1.min(self.u_hat)).all(|i| (v1.min(self.v_hat)..self.v_hat).all(|j| v[(i, j)] == 0.0))
        })
    }

    /// Random convex combination with uniform (flat Dirichlet) weights.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Mat {
        let w: Vec<f64> = self.vertices.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        let mut out = Mat::zeros(self.u_hat, self.v_hat);
        for (wi, v) in w.iter().zip(&self.vertices) {
            out += v * (wi / total);
        }
        out
    }

    /// Vertices followed by `n` random hull points.
    pub fn vertices_and_samples<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Mat> {
        let mut pts = self.vertices.clone();
        for _ in 0..n {
            pts.push(self.sample(rng));
        }
        pts
    }
}

/// `min_t` such that some convex combination has all entries within `[-t, t]`.
fn hull_distance(vertices: &[Mat]) -> Result<f64> {
    use crate::sdp::{solve, LmiProblem, SolveStatus, SolverOptions};
    if vertices.iter().any(|v| max_abs(v) == 0.0) {
        return Ok(0.0);
    }
    let n = vertices.len();
    if n == 1 {
        return Ok(max_abs(&vertices[0]));
    }
    let last = &vertices[n - 1];
    let entries = last.len();
    let mut p = LmiProblem::new(0.0);
    let lam = p.add_matrix_variable("lambda", n - 1, 1, crate::sdp::VarKind::Rectangular, None)?;
    let t = p.add_scalar_variable("t")?;
    p.add_objective(&p.expr(t))?;
    let lam_e = p.expr(lam);
    // lambda_i >= 0 and sum <= 1
    for i in 0..n - 1 {
        p.add_lmi_with_shift(&format!("lambda{i}"), lam_e.block(i, 0, 1, 1).scale(-1.0), 0.0)?;
    }
    let sum = lam_e.transpose().rmul(&Mat::from_element(n - 1, 1, 1.0))?;
    p.add_lmi_with_shift("simplex", sum.add_const(&Mat::from_element(1, 1, -1.0))?, 0.0)?;
    // entry e of combination: last_e + sum_i lambda_i (v_i - last)_e
    let mut g = Mat::zeros(entries, n - 1);
    for (i, v) in vertices.iter().take(n - 1).enumerate() {
        let d = v - last;
        for e in 0..entries {
            g[(e, i)] = d[e];
        }
    }
    let comb = lam_e.lmul(&g)?.add_const(&Mat::from_column_slice(entries, 1, last.as_slice()))?;
    let te = p.expr(t);
    for e in 0..entries {
        let ce = comb.block(e, 0, 1, 1);
        p.add_lmi_with_shift(&format!("upper{e}"), ce.sub(&te)?, 0.0)?;
        p.add_lmi_with_shift(&format!("lower{e}"), ce.scale(-1.0).sub(&te)?, 0.0)?;
    }
    let r = solve(&p, &SolverOptions::default())?;
    match r.status {
        SolveStatus::Optimal => Ok(r.objective.max(0.0)),
        _ => Err(Error::Numerical(format!("hull membership LP failed: {}", r.message))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerPartition {
    pub nc: usize,
    pub rc1: usize,
    pub rc2: usize,
    pub k: usize,
    pub m: usize,
}

impl ControllerPartition {
    pub fn rc(&self) -> usize {
        self.rc1 + self.rc2
    }

    fn row_spec(&self) -> BlockSpec {
        BlockSpec::new(&[self.nc, self.rc1, self.rc2, self.m])
    }

    fn col_spec(&self) -> BlockSpec {
        BlockSpec::new(&[self.nc, self.rc1, self.rc2, self.k])
    }
}

/// Lower block-triangular scheduling function of the controller.
#[derive(Clone, Debug, PartialEq)]
pub enum SchedulingMap {
    /// `V -> -U2^{-T} [[Q2 L Qt1 + L^T, 0], [Q3 L Qt1 + L^T, Q3 L + L^T Q2]] V2^{-1}`
    /// with `L` the lifted block of `V`.
    Triangular(TriangularMap),
    /// `V -> D0 + sum_{ij} V_ij D_ij`, every coefficient lower block-triangular.
    Affine { d0: Mat, coeffs: Vec<Mat>, u_hat: usize, v_hat: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangularMap {
    pub u_hat: usize,
    pub v_hat: usize,
    pub q2: Mat,
    pub q3: Mat,
    pub qt1: Mat,
    pub u2: Mat,
    pub v2: Mat,
    u2_inv_t: Mat,
    v2_inv: Mat,
}

impl TriangularMap {
    pub fn new(u_hat: usize, v_hat: usize, q2: Mat, q3: Mat, qt1: Mat, u2: Mat, v2: Mat) -> Result<Self> {
        let rs = u_hat + v_hat;
        for (name, m, shape) in [
            ("Q2", &q2, (rs, rs)),
            ("Q3", &q3, (rs, rs)),
            ("Qt1", &qt1, (rs, rs)),
            ("U2", &u2, (2 * rs, 2 * rs)),
            ("V2", &v2, (2 * rs, 2 * rs)),
        ] {
            if m.shape() != shape {
                return Err(dim_err!("{name} is {}x{}, expected {}x{}", m.nrows(), m.ncols(), shape.0, shape.1));
            }
        }
        if max_abs(&u2.view((rs, 0), (rs, rs)).into_owned()) != 0.0 {
            return Err(Error::Structure("U2 is not upper block-triangular".into()));
        }
        if max_abs(&v2.view((0, rs), (rs, rs)).into_owned()) != 0.0 {
            return Err(Error::Structure("V2 is not lower block-triangular".into()));
        }
        let u2_inv_t = triangular_inverse(&u2.transpose(), rs)?;
        let v2_inv = triangular_inverse(&v2, rs)?;
        Ok(Self { u_hat, v_hat, q2, q3, qt1, u2, v2, u2_inv_t, v2_inv })
    }

    pub fn rs(&self) -> usize {
        self.u_hat + self.v_hat
    }

    pub fn eval(&self, v: &Mat) -> Result<Mat> {
        let rs = self.rs();
        let l = crate::lifting::delta_lift(v, self.u_hat, self.v_hat)?;
        let lt = l.transpose();
        let m11 = &self.q2 * &l * &self.qt1 + &lt;
        let m21 = &self.q3 * &l * &self.qt1 + &lt;
        let m22 = &self.q3 * &l + &lt * &self.q2;
        // lower-triangular product computed blockwise so the upper-right block is an exact zero
        let ui = &self.u2_inv_t;
        let vi = &self.v2_inv;
        let blk = |m: &Mat, i: usize, j: usize| m.view((i * rs, j * rs), (rs, rs)).into_owned();
        let (u11, u21, u22) = (blk(ui, 0, 0), blk(ui, 1, 0), blk(ui, 1, 1));
        let (w11, w21, w22) = (blk(vi, 0, 0), blk(vi, 1, 0), blk(vi, 1, 1));
        // inner = [[m11, 0], [m21, m22]]; left = U^{-T}, right = V^{-1}
        let t11 = &u11 * &m11;
        let t21 = &u21 * &m11 + &u22 * &m21;
        let t22 = &u22 * &m22;
        let d11 = -(&t11 * &w11);
        let d21 = -(&t21 * &w11 + &t22 * &w21);
        let d22 = -(&t22 * &w22);
        let mut out = Mat::zeros(2 * rs, 2 * rs);
        out.view_mut((0, 0), (rs, rs)).copy_from(&d11);
        out.view_mut((rs, 0), (rs, rs)).copy_from(&d21);
        out.view_mut((rs, rs), (rs, rs)).copy_from(&d22);
        Ok(out)
    }
}

/// Inverse of a 2x2 lower block-triangular matrix with equal block sizes,
/// keeping the upper-right block exactly zero.
fn triangular_inverse(m: &Mat, b: usize) -> Result<Mat> {
    let m11 = m.view((0, 0), (b, b)).into_owned();
    let m21 = m.view((b, 0), (b, b)).into_owned();
    let m22 = m.view((b, b), (b, b)).into_owned();
    let i11 = inverse(&m11, "triangular factor (1,1) block")?.inv;
    let i22 = inverse(&m22, "triangular factor (2,2) block")?.inv;
    let i21 = -(&i22 * &m21 * &i11);
    let mut out = Mat::zeros(2 * b, 2 * b);
    out.view_mut((0, 0), (b, b)).copy_from(&i11);
    out.view_mut((b, 0), (b, b)).copy_from(&i21);
    out.view_mut((b, b), (b, b)).copy_from(&i22);
    Ok(out)
}

impl SchedulingMap {
    /// Map with no scheduling channel.
    pub fn empty(u_hat: usize, v_hat: usize) -> Self {
        SchedulingMap::Affine { d0: Mat::zeros(0, 0), coeffs: vec![Mat::zeros(0, 0); u_hat * v_hat], u_hat, v_hat }
    }

    /// Affine map; checks lower block-triangularity of every coefficient for the split `rc1`.
    pub fn affine(d0: Mat, coeffs: Vec<Mat>, u_hat: usize, v_hat: usize, rc1: usize) -> Result<Self> {
        if coeffs.len() != u_hat * v_hat {
            return Err(dim_err!("affine scheduling map needs {} coefficients", u_hat * v_hat));
        }
        let rc = d0.nrows();
        for c in std::iter::once(&d0).chain(&coeffs) {
            if c.shape() != (rc, rc) {
                return Err(dim_err!("scheduling coefficients must be square and equal-sized"));
            }
            if rc1 < rc && max_abs(&c.view((0, rc1), (rc1, rc - rc1)).into_owned()) != 0.0 {
                return Err(Error::Structure("scheduling coefficient is not lower block-triangular".into()));
            }
        }
        Ok(SchedulingMap::Affine { d0, coeffs, u_hat, v_hat })
    }

    pub fn dim(&self) -> usize {
        match self {
            SchedulingMap::Triangular(t) => 2 * t.rs(),
            SchedulingMap::Affine { d0, .. } => d0.nrows(),
        }
    }

    pub fn eval(&self, v: &Mat) -> Result<Mat> {
        match self {
            SchedulingMap::Triangular(t) => t.eval(v),
            SchedulingMap::Affine { d0, coeffs, u_hat, v_hat } => {
                if v.shape() != (*u_hat, *v_hat) {
                    return Err(dim_err!("scheduling argument must be {u_hat}x{v_hat}"));
                }
                let mut out = d0.clone();
                for i in 0..*u_hat {
                    for j in 0..*v_hat {
                        if v[(i, j)] != 0.0 {
                            out += &coeffs[i * v_hat + j] * v[(i, j)];
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Structured gain-scheduled controller.
#[derive(Clone, Debug, PartialEq)]
pub struct GainScheduledController {
    part: ControllerPartition,
    sys: Mat,
    schedule: SchedulingMap,
}

const CTRL_ROWS: [&str; 4] = ["xc'", "zc1", "zc2", "u"];
const CTRL_COLS: [&str; 4] = ["xc", "wc1", "wc2", "y"];
const CTRL_ZEROS: [(usize, usize); 4] = [(1, 2), (1, 3), (3, 2), (3, 3)];

impl GainScheduledController {
    /// Wraps a system matrix with rows `(xc', zc1, zc2, u)` and columns `(xc, wc1, wc2, y)`.
    pub fn new(part: ControllerPartition, sys: Mat, schedule: SchedulingMap) -> Result<Self> {
        BlockSpec::check(&sys, &part.row_spec(), &part.col_spec())?;
        if schedule.dim() != part.rc() {
            return Err(dim_err!("scheduling map has size {}, channel has {}", schedule.dim(), part.rc()));
        }
        let c = Self { part, sys, schedule };
        let bad = c.pattern_violations();
        if !bad.is_empty() {
            return Err(Error::Structure(format!("controller zero pattern violated: {bad:?}")));
        }
        Ok(c)
    }

    /// Static zero controller without state and scheduling channel.
    pub fn zero(k: usize, m: usize, u_hat: usize, v_hat: usize) -> Self {
        let part = ControllerPartition { nc: 0, rc1: 0, rc2: 0, k, m };
        Self { part, sys: Mat::zeros(m, k), schedule: SchedulingMap::empty(u_hat, v_hat) }
    }

    pub fn pattern_violations(&self) -> Vec<Violation> {
        CTRL_ZEROS
            .iter()
            .filter_map(|&(r, c)| {
                let m = max_abs(&self.block(r, c));
                (m != 0.0).then(|| Violation { block: format!("({},{})", CTRL_ROWS[r], CTRL_COLS[c]), max_abs: m })
            })
            .collect()
    }

    pub fn partition(&self) -> &ControllerPartition {
        &self.part
    }

    pub fn system_matrix(&self) -> &Mat {
        &self.sys
    }

    pub fn schedule(&self) -> &SchedulingMap {
        &self.schedule
    }

    pub fn block(&self, row: usize, col: usize) -> Mat {
        BlockSpec::block(&self.sys, &self.part.row_spec(), &self.part.col_spec(), row, col)
    }

    fn merged(&self) -> ControllerBlocks {
        let n = self.part.nc;
        let r = self.part.rc();
        let s = &self.sys;
        let v = |r0: usize, c0: usize, rn: usize, cn: usize| s.view((r0, c0), (rn, cn)).into_owned();
        ControllerBlocks {
            a11: v(0, 0, n, n),
            a12: v(0, n, n, r),
            a21: v(n, 0, r, n),
            a22: v(n, n, r, r),
            b1: v(0, n + r, n, self.part.k),
            b2: v(n, n + r, r, self.part.k),
            c1: v(n + r, 0, self.part.m, n),
            c2: v(n + r, n, self.part.m, r),
            d: v(n + r, n + r, self.part.m, self.part.k),
        }
    }
}

struct ControllerBlocks {
    a11: Mat,
    a12: Mat,
    a21: Mat,
    a22: Mat,
    b1: Mat,
    b2: Mat,
    c1: Mat,
    c2: Mat,
    d: Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    /// Scheduled by `diag(V, Dc(V))`.
    Original,
    /// Scheduled by `diag(Dl(V), Dc(V))`.
    Lifted,
}

/// Closed loop with state `(x, xc)`, scheduling channel `(plant, controller)`
/// and the performance channel.
#[derive(Clone, Debug)]
pub struct ClosedLoopLfr {
    pub repr: Representation,
    pub ns: usize,
    pub nc: usize,
    pub u_hat: usize,
    pub v_hat: usize,
    pub a11: Mat,
    pub a12: Mat,
    pub a21: Mat,
    pub a22: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d: Mat,
    pub schedule: SchedulingMap,
}

/// Frozen LTI system `(A, B, C, D)`.
#[derive(Clone, Debug)]
pub struct FrozenSystem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl ClosedLoopLfr {
    pub fn n(&self) -> usize {
        self.a11.nrows()
    }

    /// Scheduling input / output dimensions.
    pub fn channel_dims(&self) -> (usize, usize) {
        (self.a12.ncols(), self.a21.nrows())
    }

    /// The full scheduling block at `V`.
    pub fn scheduling_block(&self, v: &Mat) -> Result<Mat> {
        if v.shape() != (self.u_hat, self.v_hat) {
            return Err(dim_err!("parameter must be {}x{}", self.u_hat, self.v_hat));
        }
        let plant = match self.repr {
            Representation::Original => v.clone(),
            Representation::Lifted => crate::lifting::delta_lift(v, self.u_hat, self.v_hat)?,
        };
        let ctrl = self.schedule.eval(v)?;
        Ok(blockdiag(&[&plant, &ctrl]))
    }

    /// Smallest singular value of `I - Delta(V) A22`.
    pub fn well_posedness_margin(&self, v: &Mat) -> Result<f64> {
        let delta = self.scheduling_block(v)?;
        let m = eye(delta.nrows()) - &delta * &self.a22;
        Ok(min_singular_value(&m))
    }

    /// Eliminates the scheduling channel at `V`.
    pub fn freeze(&self, v: &Mat) -> Result<FrozenSystem> {
        let delta = self.scheduling_block(v)?;
        let rz = self.a22.nrows();
        let m = eye(rz) - &self.a22 * &delta;
        let sv = min_singular_value(&m);
        if sv <= 1e-12 * (1.0 + max_abs(&self.a22) * max_abs(&delta)) {
            return Err(Error::IllPosed(format!("I - Delta A22 is singular (min singular value {sv:.3e})")));
        }
        let minv = m
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::IllPosed("I - Delta A22 is singular".into()))?;
        let g = &delta * minv;
        Ok(FrozenSystem {
            a: &self.a11 + &self.a12 * &g * &self.a21,
            b: &self.b1 + &self.a12 * &g * &self.b2,
            c: &self.c1 + &self.c2 * &g * &self.a21,
            d: &self.d + &self.c2 * &g * &self.b2,
        })
    }
}

/// Well-posedness over a list of parameter values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WellPosednessReport {
    pub min_singular_value: f64,
    pub worst_index: usize,
    pub samples: usize,
}

impl WellPosednessReport {
    pub fn is_well_posed(&self) -> bool {
        self.min_singular_value > 1e-9
    }
}

pub fn well_posed(cl: &ClosedLoopLfr, samples: &[Mat]) -> Result<WellPosednessReport> {
    let mut min = f64::INFINITY;
    let mut worst = 0;
    for (i, v) in samples.iter().enumerate() {
        let s = cl.well_posedness_margin(v)?;
        if s < min {
            min = s;
            worst = i;
        }
    }
    Ok(WellPosednessReport { min_singular_value: min, worst_index: worst, samples: samples.len() })
}

fn interconnect(
    pb: &PlantBlocks,
    k: &GainScheduledController,
    repr: Representation,
    u_hat: usize,
    v_hat: usize,
    ns: usize,
) -> Result<ClosedLoopLfr> {
    if k.part.k != pb.k() || k.part.m != pb.m() {
        return Err(dim_err!(
            "controller maps {} measurements to {} inputs, plant has k={}, m={}",
            k.part.k,
            k.part.m,
            pb.k(),
            pb.m()
        ));
    }
    if max_abs(&pb.d3) != 0.0 {
        return Err(Error::Structure("plant has direct feedthrough from u to y".into()));
    }
    let c = k.merged();
    let two = |p11: Mat, p12: Mat, p21: Mat, p22: Mat| -> Mat {
        let top = [p11, p12];
        let bot = [p21, p22];
        let rows = top[0].nrows() + bot[0].nrows();
        let cols = top[0].ncols() + top[1].ncols();
        let mut out = Mat::zeros(rows, cols);
        out.view_mut((0, 0), top[0].shape()).copy_from(&top[0]);
        out.view_mut((0, top[0].ncols()), top[1].shape()).copy_from(&top[1]);
        out.view_mut((top[0].nrows(), 0), bot[0].shape()).copy_from(&bot[0]);
        out.view_mut((top[0].nrows(), top[0].ncols()), bot[1].shape()).copy_from(&bot[1]);
        out
    };
    let vstack = |a: Mat, b: Mat| -> Mat {
        let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
        out.view_mut((0, 0), a.shape()).copy_from(&a);
        out.view_mut((a.nrows(), 0), b.shape()).copy_from(&b);
        out
    };
    let hstack = |a: Mat, b: Mat| -> Mat {
        let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
        out.view_mut((0, 0), a.shape()).copy_from(&a);
        out.view_mut((0, a.ncols()), b.shape()).copy_from(&b);
        out
    };
    let blk = |ap: &Mat, bi: &Mat, cj: &Mat, cc: &Mat, bc: &Mat, ac: &Mat| {
        two(ap + bi * &c.d * cj, bi * cc, bc * cj, ac.clone())
    };
    let a11 = blk(&pb.a11, &pb.b1, &pb.c1, &c.c1, &c.b1, &c.a11);
    let a12 = blk(&pb.a12, &pb.b1, &pb.c2, &c.c2, &c.b1, &c.a12);
    let a21 = blk(&pb.a21, &pb.b2, &pb.c1, &c.c1, &c.b2, &c.a21);
    let a22 = blk(&pb.a22, &pb.b2, &pb.c2, &c.c2, &c.b2, &c.a22);
    let b1 = vstack(&pb.b1p + &pb.b1 * &c.d * &pb.d2, &c.b1 * &pb.d2);
    let b2 = vstack(&pb.b2p + &pb.b2 * &c.d * &pb.d2, &c.b2 * &pb.d2);
    let c1 = hstack(&pb.c1p + &pb.d1 * &c.d * &pb.c1, &pb.d1 * &c.c1);
    let c2 = hstack(&pb.c2p + &pb.d1 * &c.d * &pb.c2, &pb.d1 * &c.c2);
    let d = &pb.dp + &pb.d1 * &c.d * &pb.d2;
    Ok(ClosedLoopLfr {
        repr,
        ns,
        nc: k.part.nc,
        u_hat,
        v_hat,
        a11,
        a12,
        a21,
        a22,
        b1,
        b2,
        c1,
        c2,
        d,
        schedule: k.schedule.clone(),
    })
}

/// Closed loop of the original plant and a controller, scheduled by `diag(V, Dc(V))`.
pub fn close_loop_original(p: &StructuredPlantLfr, k: &GainScheduledController) -> Result<ClosedLoopLfr> {
    let part = p.partition();
    interconnect(&p.hat_blocks(), k, Representation::Original, part.u_hat(), part.v_hat(), part.ns)
}

/// Closed loop of the lifted plant and a controller, scheduled by `diag(Dl(V), Dc(V))`.
pub fn close_loop_lifted(pl: &crate::lifting::LiftedPlantLfr, k: &GainScheduledController) -> Result<ClosedLoopLfr> {
    let part = pl.partition();
    interconnect(pl.blocks(), k, Representation::Lifted, part.u_hat(), part.v_hat(), part.ns)
}

/// Evaluates `D + C (sI - A)^{-1} B` at a complex frequency.
pub fn transfer_at(sys: &FrozenSystem, s: num_complex::Complex64) -> Result<nalgebra::DMatrix<num_complex::Complex64>> {
    use num_complex::Complex64;
    let n = sys.a.nrows();
    let to_c = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
    let mut si_a = -to_c(&sys.a);
    for i in 0..n {
        si_a[(i, i)] += s;
    }
    let b = to_c(&sys.b);
    let x = si_a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("sI - A is singular".into()))?;
    Ok(to_c(&sys.d) + to_c(&sys.c) * x)
}
