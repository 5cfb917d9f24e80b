//! Convex synthesis inequalities for the lifted plant and their solution.
//!
//! Decision variables: `X1, Y1` (state), `Q2, Q3` (primal scalings), `Qt1`
//! (dual scaling), the transformed controller blocks `K.., L.., M..`, the
//! output bound `Z` and the performance level `gamma`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::lfr::{GainScheduledController, PlantBlocks, PlantPartition, ValueSet};
use crate::lifting::LiftedPlantLfr;
use crate::matkit::{assemble, eye, inverse, max_abs, max_eig, Mat, SymMat};
use crate::scalings::{vertex_constraints_dual, vertex_constraints_primal, ScalingMask};
use crate::sdp::{schur_linearize, solve, LmiProblem, MatExpr, SolveStatus, SolverOptions, VarHandle, VarKind};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub eps_strict: f64,
    pub solver: SolverOptions,
    pub mask: Option<ScalingMask>,
    /// After minimizing gamma, re-solve with `gamma <= (1 + backoff) gamma_opt`
    /// while maximizing a common margin on every block. Zero skips the second stage.
    pub backoff: f64,
    /// After centering, trade half of the interior margin for smaller
    /// certificate norms. Large norms make the reconstructed certificate
    /// badly conditioned.
    pub condition: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { eps_strict: 1e-6, solver: SolverOptions::default(), mask: None, backoff: 1e-2, condition: true }
    }
}

/// Values of all synthesis variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisVariables {
    #[serde(with = "crate::cli::mat_serde")]
    pub x1: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub y1: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub q2: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub q3: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub qt1: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k11: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k12: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k13: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub l1: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k21: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k22: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k31: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k32: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub k33: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub l3: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub m1: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub m2: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub z: Mat,
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisSolution {
    pub vars: SynthesisVariables,
    /// Level carried by the returned certificate.
    pub gamma: f64,
    /// Minimum of the first stage.
    pub gamma_opt: f64,
    /// Whether the margin-maximizing stage succeeded.
    pub centered: bool,
    pub iterations: usize,
    pub rel_gap: f64,
    pub num_scalars: usize,
    /// `-max_eig` of every constraint block at the solution.
    pub lmi_margins: Vec<(String, f64)>,
    pub solve_seconds: f64,
}

impl SynthesisSolution {
    pub fn min_margin(&self) -> f64 {
        self.lmi_margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min)
    }
}

/// Number of free scalars for a partition without masks.
pub fn expected_scalar_count(part: &PlantPartition) -> usize {
    let (n, r, m, k, p) = (part.ns, part.rs(), part.m, part.k, part.p);
    n * (n + 1) + 3 * r * (r + 1) / 2 + n * n + 2 * n * r + n * k + 2 * r * n + 3 * r * r + r * k + m * n + m * r + p * (p + 1) / 2 + 1
}

struct Handles {
    x1: VarHandle,
    y1: VarHandle,
    q2: VarHandle,
    q3: VarHandle,
    qt1: VarHandle,
    k11: VarHandle,
    k12: VarHandle,
    k13: VarHandle,
    l1: VarHandle,
    k21: VarHandle,
    k22: VarHandle,
    k31: VarHandle,
    k32: VarHandle,
    k33: VarHandle,
    l3: VarHandle,
    m1: VarHandle,
    m2: VarHandle,
    z: VarHandle,
    gamma: VarHandle,
    t: Option<VarHandle>,
}

/// What the assembled problem optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stage {
    MinimizeGamma,
    /// Maximize `t` with every block shifted by `t I` and `gamma <= gamma_max`.
    Center { gamma_max: f64 },
    /// Minimize the sum of bounds on the norms of `X1, Y1, Q2, Q3, Qt1`
    /// with every block kept at least `t_min` inside and `gamma <= gamma_max`.
    Condition { gamma_max: f64, t_min: f64 },
}

/// The assembled problem together with variable handles.
pub struct SynthesisProblem {
    pub lmi: LmiProblem,
    h: Handles,
}

impl SynthesisProblem {
    pub fn variables(&self, x: &[f64]) -> SynthesisVariables {
        let v = |h: VarHandle| self.lmi.value(h, x);
        let h = &self.h;
        SynthesisVariables {
            x1: v(h.x1),
            y1: v(h.y1),
            q2: v(h.q2),
            q3: v(h.q3),
            qt1: v(h.qt1),
            k11: v(h.k11),
            k12: v(h.k12),
            k13: v(h.k13),
            l1: v(h.l1),
            k21: v(h.k21),
            k22: v(h.k22),
            k31: v(h.k31),
            k32: v(h.k32),
            k33: v(h.k33),
            l3: v(h.l3),
            m1: v(h.m1),
            m2: v(h.m2),
            z: v(h.z),
            gamma: v(h.gamma)[(0, 0)],
        }
    }
}

fn check_inputs(pl: &LiftedPlantLfr, vs: &ValueSet) -> Result<()> {
    let part = pl.partition();
    if vs.u_hat() != part.u_hat() || vs.v_hat() != part.v_hat() {
        return Err(dim_err!("value set is {}x{}, plant channel is {}x{}", vs.u_hat(), vs.v_hat(), part.u_hat(), part.v_hat()));
    }
    if !vs.is_triangular(part.u1, part.v1) {
        return Err(Error::Structure(
            "value set couples w1 to z2; the closed loop would have direct feedthrough".into(),
        ));
    }
    let b = pl.blocks();
    if max_abs(&b.dp) != 0.0 || max_abs(&b.d3) != 0.0 {
        return Err(Error::Structure("plant must have zero D_p and D_3 blocks".into()));
    }
    Ok(())
}

fn c(m: &Mat) -> MatExpr {
    MatExpr::constant(m.clone())
}

/// `[[A Y + B M, A], [K, X^T A + L C]]` in expression form.
fn transformed_a(a: &Mat, b: &Mat, cm: &Mat, y: &MatExpr, xt: &MatExpr, k: &MatExpr, mm: &MatExpr, l: &MatExpr) -> Result<MatExpr> {
    let tl = y.lmul(a)?.add(&mm.lmul(b)?)?;
    let br = xt.rmul(a)?.add(&l.rmul(cm)?)?;
    MatExpr::grid(&[vec![tl, c(a)], vec![k.clone(), br]])
}

/// `s I_n` for a 1x1 expression `s`.
fn times_identity(s: &MatExpr, n: usize) -> Result<MatExpr> {
    let mut out = MatExpr::zeros(n, n);
    for i in 0..n {
        let ei = Mat::from_fn(n, 1, |r, _| if r == i { 1.0 } else { 0.0 });
        out = out.add(&s.lmul(&ei)?.rmul(&ei.transpose())?)?;
    }
    Ok(out)
}

/// Builds the synthesis problem: `gamma` is minimized subject to the two
/// performance inequalities, class membership of the scalings on all
/// vertices, coupling, `Z > 0` and `tr Z < 1`.
pub fn assemble_problem(pl: &LiftedPlantLfr, vs: &ValueSet, opts: &SynthesisOptions) -> Result<SynthesisProblem> {
    assemble_stage(pl, vs, opts, Stage::MinimizeGamma)
}

/// Same constraints as [`assemble_problem`] for either stage.
pub fn assemble_stage(pl: &LiftedPlantLfr, vs: &ValueSet, opts: &SynthesisOptions, stage: Stage) -> Result<SynthesisProblem> {
    check_inputs(pl, vs)?;
    let part = pl.partition();
    let b = pl.blocks();
    let (n, r, m, k, p) = (part.ns, part.rs(), part.m, part.k, part.p);
    if let Some(mask) = &opts.mask {
        mask.validate()?;
        if mask.rs != r {
            return Err(dim_err!("mask is for channel size {}, plant has {r}", mask.rs));
        }
    }
    let mut lmi = LmiProblem::new(opts.eps_strict);
    let sym = VarKind::Symmetric;
    let rect = VarKind::Rectangular;
    let qmask = |f: fn(&ScalingMask) -> &Vec<bool>| opts.mask.as_ref().map(|mk| f(mk).clone());
    let (m_q2, m_q3, m_qt1) = (qmask(|m| &m.q2), qmask(|m| &m.q3), qmask(|m| &m.qt1));
    let h = Handles {
        x1: lmi.add_matrix_variable("X1", n, n, sym, None)?,
        y1: lmi.add_matrix_variable("Y1", n, n, sym, None)?,
        q2: lmi.add_matrix_variable("Q2", r, r, sym, m_q2.as_deref())?,
        q3: lmi.add_matrix_variable("Q3", r, r, sym, m_q3.as_deref())?,
        qt1: lmi.add_matrix_variable("Qt1", r, r, sym, m_qt1.as_deref())?,
        k11: lmi.add_matrix_variable("K11", n, n, rect, None)?,
        k12: lmi.add_matrix_variable("K12", n, r, rect, None)?,
        k13: lmi.add_matrix_variable("K13", n, r, rect, None)?,
        l1: lmi.add_matrix_variable("L1", n, k, rect, None)?,
        k21: lmi.add_matrix_variable("K21", r, n, rect, None)?,
        k22: lmi.add_matrix_variable("K22", r, r, rect, None)?,
        k31: lmi.add_matrix_variable("K31", r, n, rect, None)?,
        k32: lmi.add_matrix_variable("K32", r, r, rect, None)?,
        k33: lmi.add_matrix_variable("K33", r, r, rect, None)?,
        l3: lmi.add_matrix_variable("L3", r, k, rect, None)?,
        m1: lmi.add_matrix_variable("M1", m, n, rect, None)?,
        m2: lmi.add_matrix_variable("M2", m, r, rect, None)?,
        z: lmi.add_matrix_variable("Z", p, p, sym, None)?,
        gamma: lmi.add_scalar_variable("gamma")?,
        t: match stage {
            Stage::MinimizeGamma => None,
            Stage::Center { .. } => Some(lmi.add_scalar_variable("t")?),
            Stage::Condition { .. } => None,
        },
    };
    let e = |hd: VarHandle| lmi.expr(hd);
    let (x1, y1, q2, q3, qt1) = (e(h.x1), e(h.y1), e(h.q2), e(h.q3), e(h.qt1));
    let z = e(h.z);
    let gamma = e(h.gamma);
    let zr = MatExpr::zeros;

    let kk12 = MatExpr::hcat(&[e(h.k12), e(h.k13)])?;
    let kk21 = MatExpr::vcat(&[e(h.k21), e(h.k31)])?;
    let kk22 = MatExpr::grid(&[vec![e(h.k22), q2.rmul(&b.a22)?], vec![e(h.k32), e(h.k33)]])?;
    let ll2 = MatExpr::vcat(&[zr(r, k), e(h.l3)])?;
    let mm2 = MatExpr::hcat(&[e(h.m2), zr(m, r)])?;
    let x2t = MatExpr::vcat(&[q2.clone(), q3.clone()])?;
    let y2 = MatExpr::hcat(&[qt1.clone(), MatExpr::identity(r)])?;
    let (l1, m1, k11) = (e(h.l1), e(h.m1), e(h.k11));

    let a11 = transformed_a(&b.a11, &b.b1, &b.c1, &y1, &x1, &k11, &m1, &l1)?;
    let a12 = transformed_a(&b.a12, &b.b1, &b.c2, &y2, &x1, &kk12, &mm2, &l1)?;
    let a21 = transformed_a(&b.a21, &b.b2, &b.c1, &y1, &x2t, &kk21, &m1, &ll2)?;
    let a22 = transformed_a(&b.a22, &b.b2, &b.c2, &y2, &x2t, &kk22, &mm2, &ll2)?;
    let b1 = MatExpr::vcat(&[c(&b.b1p), x1.rmul(&b.b1p)?.add(&l1.rmul(&b.d2)?)?])?;
    let b2 = MatExpr::vcat(&[c(&b.b2p), x2t.rmul(&b.b2p)?.add(&ll2.rmul(&b.d2)?)?])?;
    let c1 = MatExpr::hcat(&[y1.lmul(&b.c1p)?.add(&m1.lmul(&b.d1)?)?, c(&b.c1p)])?;
    let c2 = MatExpr::hcat(&[y2.lmul(&b.c2p)?.add(&mm2.lmul(&b.d1)?)?, c(&b.c2p)])?;

    let xx = MatExpr::grid(&[vec![y1.clone(), MatExpr::identity(n)], vec![MatExpr::identity(n), x1.clone()]])?;
    let phi1 = MatExpr::grid(&[vec![xx.scale(-1.0), a21.transpose()], vec![a21.clone(), a22.he()?]])?;
    let cc = MatExpr::hcat(&[c1, c2])?;
    let te = h.t.map(|t| lmi.expr(t));
    let extra = match stage {
        Stage::Condition { t_min, .. } => t_min,
        _ => 0.0,
    };
    let add = |lmi: &mut LmiProblem, name: &str, e: MatExpr| -> Result<usize> {
        match (&te, stage) {
            (Some(t), Stage::Center { .. }) => {
                let n = e.shape().0;
                lmi.add_lmi(name, e.add(&times_identity(t, n)?)?)
            }
            _ => {
                let shift = opts.eps_strict * (1.0 + max_abs(e.constant_part())) + extra;
                lmi.add_lmi_with_shift(name, e, shift)
            }
        }
    };
    add(&mut lmi, "ineq1", schur_linearize(&phi1, &cc, &z)?)?;

    let q = part.q;
    let g33 = times_identity(&gamma, q)?.scale(-1.0);
    let ineq2 = MatExpr::grid(&[
        vec![a11.he()?, a12.add(&a21.transpose())?, b1.clone()],
        vec![a12.transpose().add(&a21)?, a22.he()?, b2.clone()],
        vec![b1.transpose(), b2.transpose(), g33],
    ])?;
    add(&mut lmi, "ineq2", ineq2)?;

    for (name, qe) in [("Q2", &q2), ("Q3", &q3)] {
        for (tag, ce) in vertex_constraints_primal(qe, vs)? {
            add(&mut lmi, &format!("{name} {tag}"), ce)?;
        }
    }
    for (tag, ce) in vertex_constraints_dual(&qt1, vs)? {
        add(&mut lmi, &format!("Qt1 {tag}"), ce)?;
    }
    add(&mut lmi, "coupling", xx.scale(-1.0))?;
    add(&mut lmi, "Z", z.scale(-1.0))?;
    add(&mut lmi, "trace", z.trace()?.add_const(&Mat::from_element(1, 1, -1.0))?)?;
    match (stage, &te) {
        (Stage::Center { gamma_max }, Some(t)) => {
            lmi.add_lmi_with_shift("gamma cap", gamma.add_const(&Mat::from_element(1, 1, -gamma_max))?, 0.0)?;
            lmi.add_lmi_with_shift("t cap", t.add_const(&Mat::from_element(1, 1, -1.0))?, 0.0)?;
            lmi.add_objective(&t.scale(-1.0))?;
        }
        (Stage::Condition { gamma_max, .. }, _) => {
            lmi.add_lmi_with_shift("gamma cap", gamma.add_const(&Mat::from_element(1, 1, -gamma_max))?, 0.0)?;
            for (name, v, dim) in [("X1", &x1, n), ("Y1", &y1, n), ("Q2", &q2, r), ("Q3", &q3, r), ("Qt1", &qt1, r)] {
                let nu = lmi.add_scalar_variable(&format!("nu {name}"))?;
                let nu = lmi.expr(nu);
                let nu_i = times_identity(&nu, dim)?;
                lmi.add_lmi_with_shift(&format!("{name} bound"), v.sub(&nu_i)?, 0.0)?;
                lmi.add_lmi_with_shift(&format!("{name} lower bound"), v.scale(-1.0).sub(&nu_i)?, 0.0)?;
                lmi.add_objective(&nu)?;
            }
        }
        _ => lmi.add_objective(&gamma)?,
    }
    Ok(SynthesisProblem { lmi, h })
}

fn certificate_norm(v: &SynthesisVariables) -> f64 {
    [&v.x1, &v.y1, &v.q2, &v.q3, &v.qt1].iter().map(|m| m.norm()).sum()
}

fn stage_gamma(stage: &Stage) -> f64 {
    match *stage {
        Stage::MinimizeGamma => f64::INFINITY,
        Stage::Center { gamma_max } | Stage::Condition { gamma_max, .. } => gamma_max,
    }
}

fn infeasible_error(res: &crate::sdp::SolveResult) -> Error {
    let mut w = res.certificate.clone().unwrap_or_default();
    w.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    let summary: Vec<String> =
        w.iter().filter(|bw| bw.weight > 1e-6).map(|bw| format!("{}: {:.3}", bw.block, bw.weight)).collect();
    Error::Infeasible(format!("dual certificate weights [{}]", summary.join(", ")))
}

/// Solves the synthesis problem for the lifted plant: minimize gamma, then
/// (unless `backoff` is zero) move into the interior at a slightly relaxed level.
pub fn synthesize(pl: &LiftedPlantLfr, vs: &ValueSet, opts: &SynthesisOptions) -> Result<SynthesisSolution> {
    let prob = assemble_problem(pl, vs, opts)?;
    let t0 = Instant::now();
    let res = solve(&prob.lmi, &opts.solver)?;
    match res.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(infeasible_error(&res)),
        SolveStatus::NumericalFailure => return Err(Error::Numerical(res.message)),
    }
    let mut vars = prob.variables(&res.x);
    let gamma_opt = vars.gamma;
    let mut iterations = res.iterations;
    let mut rel_gap = res.rel_gap;
    let mut centered = false;
    if opts.backoff > 0.0 {
        let stage = Stage::Center { gamma_max: gamma_opt * (1.0 + opts.backoff) };
        let cprob = assemble_stage(pl, vs, opts, stage)?;
        let cres = solve(&cprob.lmi, &opts.solver)?;
        iterations += cres.iterations;
        if cres.status == SolveStatus::Optimal {
            let cv = cprob.variables(&cres.x);
            let ok = lmi_margins(pl, vs, &cv)?.iter().all(|m| m.1 > 0.0);
            if ok {
                vars = cv;
                rel_gap = cres.rel_gap;
                centered = true;
                let t_star = cprob.lmi.value(cprob.h.t.expect("center stage has t"), &cres.x)[(0, 0)];
                if opts.condition && t_star > 0.0 {
                    let stage = Stage::Condition { gamma_max: stage_gamma(&stage), t_min: 0.5 * t_star };
                    let kprob = assemble_stage(pl, vs, opts, stage)?;
                    let kres = solve(&kprob.lmi, &opts.solver)?;
                    iterations += kres.iterations;
                    // A suboptimal bound is still useful as long as the point is strictly feasible.
                    if kres.status != SolveStatus::Infeasible && kres.x.iter().all(|v| v.is_finite()) {
                        let kv = kprob.variables(&kres.x);
                        let tight = lmi_margins(pl, vs, &kv)?.iter().all(|m| m.1 > 0.0);
                        if tight && kv.gamma <= stage_gamma(&stage) && certificate_norm(&kv) < certificate_norm(&vars) {
                            vars = kv;
                        }
                    }
                }
            }
        }
        if !centered {
            log::warn!("centering stage failed ({}); keeping the minimizer", cres.message);
        }
    }
    let solve_seconds = t0.elapsed().as_secs_f64();
    let lmi_margins = lmi_margins(pl, vs, &vars)?;
    Ok(SynthesisSolution {
        gamma: vars.gamma,
        gamma_opt,
        centered,
        vars,
        iterations,
        rel_gap,
        num_scalars: prob.lmi.num_scalars(),
        lmi_margins,
        solve_seconds,
    })
}

/// Dense composite matrices of the transformed closed loop.
struct Composites {
    xx: Mat,
    a11: Mat,
    a12: Mat,
    a21: Mat,
    a22: Mat,
    b1: Mat,
    b2: Mat,
    c1: Mat,
    c2: Mat,
}

fn composites(b: &PlantBlocks, v: &SynthesisVariables) -> Result<Composites> {
    let n = v.x1.nrows();
    let r = v.q2.nrows();
    let (m, k) = (b.m(), b.k());
    let kk12 = assemble(&[vec![&v.k12, &v.k13]])?;
    let kk21 = assemble(&[vec![&v.k21], vec![&v.k31]])?;
    let q2a = &v.q2 * &b.a22;
    let kk22 = assemble(&[vec![&v.k22, &q2a], vec![&v.k32, &v.k33]])?;
    let ll2 = assemble(&[vec![&Mat::zeros(r, k)], vec![&v.l3]])?;
    let mm2 = assemble(&[vec![&v.m2, &Mat::zeros(m, r)]])?;
    let x2t = assemble(&[vec![&v.q2], vec![&v.q3]])?;
    let y2 = assemble(&[vec![&v.qt1, &eye(r)]])?;
    let ta = |a: &Mat, bi: &Mat, cj: &Mat, y: &Mat, xt: &Mat, kk: &Mat, mm: &Mat, l: &Mat| {
        assemble(&[vec![&(a * y + bi * mm), a], vec![kk, &(xt * a + l * cj)]])
    };
    Ok(Composites {
        xx: assemble(&[vec![&v.y1, &eye(n)], vec![&eye(n), &v.x1]])?,
        a11: ta(&b.a11, &b.b1, &b.c1, &v.y1, &v.x1, &v.k11, &v.m1, &v.l1)?,
        a12: ta(&b.a12, &b.b1, &b.c2, &y2, &v.x1, &kk12, &mm2, &v.l1)?,
        a21: ta(&b.a21, &b.b2, &b.c1, &v.y1, &x2t, &kk21, &v.m1, &ll2)?,
        a22: ta(&b.a22, &b.b2, &b.c2, &y2, &x2t, &kk22, &mm2, &ll2)?,
        b1: assemble(&[vec![&b.b1p], vec![&(&v.x1 * &b.b1p + &v.l1 * &b.d2)]])?,
        b2: assemble(&[vec![&b.b2p], vec![&(&x2t * &b.b2p + &ll2 * &b.d2)]])?,
        c1: assemble(&[vec![&(&b.c1p * &v.y1 + &b.d1 * &v.m1), &b.c1p]])?,
        c2: assemble(&[vec![&(&b.c2p * &y2 + &b.d1 * &mm2), &b.c2p]])?,
    })
}

/// Independent dense evaluation of every constraint block, in the order used
/// by [`assemble_problem`]. Each returned matrix must be negative definite.
pub fn evaluate_lmis(pl: &LiftedPlantLfr, vs: &ValueSet, v: &SynthesisVariables) -> Result<Vec<(String, Mat)>> {
    check_inputs(pl, vs)?;
    let b = pl.blocks();
    let cm = composites(b, v)?;
    let he = |m: &Mat| m + m.transpose();
    let cc = assemble(&[vec![&cm.c1, &cm.c2]])?;
    let phi1 = assemble(&[vec![&(-&cm.xx), &cm.a21.transpose()], vec![&cm.a21, &he(&cm.a22)]])?;
    let ineq1 = assemble(&[vec![&phi1, &cc.transpose()], vec![&cc, &(-&v.z)]])?;
    let q = b.q();
    let g = -eye(q) * v.gamma;
    let ineq2 = assemble(&[
        vec![&he(&cm.a11), &(&cm.a12 + cm.a21.transpose()), &cm.b1],
        vec![&(cm.a12.transpose() + &cm.a21), &he(&cm.a22), &cm.b2],
        vec![&cm.b1.transpose(), &cm.b2.transpose(), &g],
    ])?;
    let mut out = vec![("ineq1".to_string(), ineq1), ("ineq2".to_string(), ineq2)];
    let (uh, vh) = (vs.u_hat(), vs.v_hat());
    let cong = |q: &Mat, t: &Mat| t.transpose() * q * t;
    for (name, qm) in [("Q2", &v.q2), ("Q3", &v.q3)] {
        out.push((format!("{name} uu"), qm.view((0, 0), (uh, uh)).into_owned()));
        for (i, vv) in vs.vertices().iter().enumerate() {
            let t = assemble(&[vec![vv], vec![&eye(vh)]])?;
            out.push((format!("{name} vertex {i}"), -cong(qm, &t)));
        }
    }
    out.push(("Qt1 vv".into(), -v.qt1.view((uh, uh), (vh, vh)).into_owned()));
    for (i, vv) in vs.vertices().iter().enumerate() {
        let t = assemble(&[vec![&eye(uh)], vec![&(-vv.transpose())]])?;
        out.push((format!("Qt1 vertex {i}"), cong(&v.qt1, &t)));
    }
    out.push(("coupling".into(), -&cm.xx));
    out.push(("Z".into(), -&v.z));
    out.push(("trace".into(), Mat::from_element(1, 1, v.z.trace() - 1.0)));
    Ok(out)
}

/// `-max_eig` of each block from [`evaluate_lmis`].
pub fn lmi_margins(pl: &LiftedPlantLfr, vs: &ValueSet, v: &SynthesisVariables) -> Result<Vec<(String, f64)>> {
    Ok(evaluate_lmis(pl, vs, v)?.into_iter().map(|(n, m)| (n, -max_eig(&m))).collect())
}

/// Recovers synthesis variables from a closed-loop certificate of the lifted
/// loop: `X1cal` on the state `(x, xc)`, `P` on the channel `(w, wc)`.
///
/// Requires `nc = ns` and `rc1 = rc2 = rs`. Near-singular factorization
/// blocks are perturbed by a small multiple of the identity; the number of
/// perturbations is returned.
pub fn certificate_to_variables(
    pl: &LiftedPlantLfr,
    ctrl: &GainScheduledController,
    x1cal: &SymMat,
    pcal: &SymMat,
    z: &SymMat,
    gamma: f64,
) -> Result<(SynthesisVariables, usize)> {
    let part = pl.partition();
    let kp = ctrl.partition();
    let (n, r) = (part.ns, part.rs());
    if kp.nc != n || kp.rc1 != r || kp.rc2 != r {
        return Err(dim_err!("certificate extraction needs nc = {n} and rc1 = rc2 = {r}"));
    }
    if x1cal.dim() != 2 * n || pcal.dim() != 3 * r || z.dim() != part.p {
        return Err(dim_err!("certificate blocks have wrong sizes"));
    }
    let b = pl.blocks();
    let mut perturbations = 0;

    // state factorization: X1cal [Y1; V1] = [I; 0], X1cal [I; 0] = [X1; U1]
    let xm = x1cal.as_mat();
    let x1 = xm.view((0, 0), (n, n)).into_owned();
    let mut u1 = xm.view((n, 0), (n, n)).into_owned();
    if crate::matkit::min_singular_value(&u1) < 1e-10 * (1.0 + max_abs(&u1)) {
        u1 += eye(n) * 1e-8 * (1.0 + max_abs(xm));
        perturbations += 1;
    }
    let mut xfix = xm.clone();
    xfix.view_mut((n, 0), (n, n)).copy_from(&u1);
    xfix.view_mut((0, n), (n, n)).copy_from(&u1.transpose());
    let xinv = inverse(&xfix, "state certificate")?.inv;
    let y1 = xinv.view((0, 0), (n, n)).into_owned();
    let v1 = xinv.view((n, 0), (n, n)).into_owned();

    // scaling factorization over the partition (rs, rc1, rc2)
    let pm = pcal.as_mat().clone();
    let blk = |m: &Mat, i: usize, j: usize| m.view((i * r, j * r), (r, r)).into_owned();
    let q3 = blk(&pm, 0, 0);
    let s13 = blk(&pm, 1, 0);
    let s23 = blk(&pm, 2, 0);
    let r21 = blk(&pm, 2, 1);
    let mut r22 = blk(&pm, 2, 2);
    if crate::matkit::min_singular_value(&r22) < 1e-10 * (1.0 + max_abs(&r22)) {
        r22 += eye(r) * 1e-8 * (1.0 + max_abs(&pm));
        perturbations += 1;
    }
    let mut pfix = pm.clone();
    pfix.view_mut((2 * r, 2 * r), (r, r)).copy_from(&r22);
    let r22i = inverse(&r22, "R22")?.inv;
    let q2 = &q3 - s23.transpose() * &r22i * &s23;
    let s12 = &s13 - r21.transpose() * &r22i * &s23;
    let pinv = inverse(&pfix, "channel certificate")?.inv;
    let qt1 = blk(&pinv, 0, 0);
    let st11 = blk(&pinv, 1, 0);
    let st21 = blk(&pinv, 2, 0);
    let st22 = -(&r22i * &s23);
    let zr = Mat::zeros(r, r);
    let u2 = assemble(&[vec![&s12, &s13], vec![&zr, &s23]])?;
    let v2 = assemble(&[vec![&st11, &zr], vec![&st21, &st22]])?;
    let x2t = assemble(&[vec![&q2], vec![&q3]])?;
    let y2 = assemble(&[vec![&qt1, &eye(r)]])?;

    // controller blocks over (xc, wc) = (n, 2r)
    let ks = ctrl.system_matrix();
    let kv = |r0: usize, c0: usize, rn: usize, cn: usize| ks.view((r0, c0), (rn, cn)).into_owned();
    let (m, k) = (part.m, part.k);
    let nc = n;
    let rc = 2 * r;
    let ac = [[kv(0, 0, nc, nc), kv(0, nc, nc, rc)], [kv(nc, 0, rc, nc), kv(nc, nc, rc, rc)]];
    let bc = [kv(0, nc + rc, nc, k), kv(nc, nc + rc, rc, k)];
    let cc = [kv(nc + rc, 0, m, nc), kv(nc + rc, nc, m, rc)];
    let dc = kv(nc + rc, nc + rc, m, k);

    let a = [[&b.a11, &b.a12], [&b.a21, &b.a22]];
    let bb = [&b.b1, &b.b2];
    let cpl = [&b.c1, &b.c2];
    let xt = [x1.clone(), x2t];
    let yy = [y1.clone(), y2];
    let uu = [u1, u2];
    let vv = [v1, v2];
    let mut kk = [[Mat::zeros(0, 0), Mat::zeros(0, 0)], [Mat::zeros(0, 0), Mat::zeros(0, 0)]];
    let mut ll = [Mat::zeros(0, 0), Mat::zeros(0, 0)];
    let mut mm = [Mat::zeros(0, 0), Mat::zeros(0, 0)];
    for i in 0..2 {
        let ut = uu[i].transpose();
        ll[i] = &ut * &bc[i] + &xt[i] * bb[i] * &dc;
        for j in 0..2 {
            kk[i][j] = &xt[i] * a[i][j] * &yy[j]
                + (&ut * &ac[i][j] + &xt[i] * bb[i] * &cc[j]) * &vv[j]
                + (&ut * &bc[i] + &xt[i] * bb[i] * &dc) * cpl[j] * &yy[j];
        }
    }
    for j in 0..2 {
        mm[j] = &cc[j] * &vv[j] + &dc * cpl[j] * &yy[j];
    }

    let scale = 1.0 + max_abs(&kk[1][1]) + max_abs(&ll[1]) + max_abs(&mm[1]);
    let k22 = &kk[1][1];
    let off = blk(k22, 0, 1) - &q2 * &b.a22;
    let l2top = ll[1].view((0, 0), (r, k)).into_owned();
    let m2right = mm[1].view((0, r), (m, r)).into_owned();
    let worst = max_abs(&off).max(max_abs(&l2top)).max(max_abs(&m2right));
    if worst > 1e-6 * scale {
        return Err(Error::Structure(format!("certificate does not have the triangular structure ({worst:.2e})")));
    }
    let vars = SynthesisVariables {
        x1,
        y1,
        q2: (&q2 + q2.transpose()) * 0.5,
        q3,
        qt1: (&qt1 + qt1.transpose()) * 0.5,
        k11: kk[0][0].clone(),
        k12: kk[0][1].view((0, 0), (n, r)).into_owned(),
        k13: kk[0][1].view((0, r), (n, r)).into_owned(),
        l1: ll[0].clone(),
        k21: kk[1][0].view((0, 0), (r, n)).into_owned(),
        k31: kk[1][0].view((r, 0), (r, n)).into_owned(),
        k22: blk(k22, 0, 0),
        k32: blk(k22, 1, 0),
        k33: blk(k22, 1, 1),
        l3: ll[1].view((r, 0), (r, k)).into_owned(),
        m1: mm[0].clone(),
        m2: mm[1].view((0, 0), (m, r)).into_owned(),
        z: z.as_mat().clone(),
        gamma,
    };
    Ok((vars, perturbations))
}
