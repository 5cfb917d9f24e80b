//! Scaling classes and their membership checks.
//!
//! Primal class: `Q_uu < 0` and `[V; I]^T Q [V; I] > 0` on the vertices.
//! Dual class: `Qt_vv > 0` and `[I; -V^T]^T Qt [I; -V^T] < 0` on the vertices.
//! Passive class: `He[P diag(Dl(V), Dc(V))] > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::lfr::{SchedulingMap, ValueSet};
use crate::lifting::delta_lift;
use crate::matkit::{assemble, blockdiag, eye, min_eig, Mat, SymMat};
use crate::sdp::MatExpr;

/// Smallest eigenvalue of each membership condition, signed so that
/// positive means satisfied.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MarginReport {
    pub conditions: Vec<(String, f64)>,
}

impl MarginReport {
    fn push(&mut self, name: impl Into<String>, margin: f64) {
        self.conditions.push((name.into(), margin));
    }

    pub fn min_margin(&self) -> f64 {
        self.conditions.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.conditions.iter().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn is_member(&self) -> bool {
        self.min_margin() > 0.0
    }

    pub fn merge(&mut self, other: MarginReport) {
        self.conditions.extend(other.conditions);
    }
}

fn check_shape(q: &SymMat, vs: &ValueSet) -> Result<()> {
    if q.dim() != vs.u_hat() + vs.v_hat() {
        return Err(dim_err!("scaling is {0}x{0}, value set needs {1}", q.dim(), vs.u_hat() + vs.v_hat()));
    }
    Ok(())
}

fn congruence(q: &Mat, t: &Mat) -> Mat {
    let m = t.transpose() * q * t;
    (&m + m.transpose()) * 0.5
}

/// Membership in the primal class.
pub fn check_primal(q: &SymMat, vs: &ValueSet) -> Result<MarginReport> {
    check_shape(q, vs)?;
    let (uh, vh) = (vs.u_hat(), vs.v_hat());
    let mut rep = MarginReport::default();
    rep.push("Q_uu < 0", -crate::matkit::max_eig(&q.as_mat().view((0, 0), (uh, uh)).into_owned()));
    for (i, v) in vs.vertices().iter().enumerate() {
        let t = assemble(&[vec![v], vec![&eye(vh)]])?;
        rep.push(format!("vertex {i}"), min_eig(&congruence(q.as_mat(), &t)));
    }
    Ok(rep)
}

/// Membership in the dual class.
pub fn check_dual(qt: &SymMat, vs: &ValueSet) -> Result<MarginReport> {
    check_shape(qt, vs)?;
    let (uh, vh) = (vs.u_hat(), vs.v_hat());
    let mut rep = MarginReport::default();
    rep.push("Qt_vv > 0", min_eig(&qt.as_mat().view((uh, uh), (vh, vh)).into_owned()));
    for (i, v) in vs.vertices().iter().enumerate() {
        let t = assemble(&[vec![&eye(uh)], vec![&(-v.transpose())]])?;
        rep.push(format!("vertex {i}"), -crate::matkit::max_eig(&congruence(qt.as_mat(), &t)));
    }
    Ok(rep)
}

/// `He[P diag(Dl(V), Dc(V))] > 0` on the vertices and on `samples`.
pub fn check_passive(p: &SymMat, sched: &SchedulingMap, vs: &ValueSet, samples: &[Mat]) -> Result<MarginReport> {
    let rs = vs.u_hat() + vs.v_hat();
    if p.dim() != rs + sched.dim() {
        return Err(dim_err!("passive scaling is {}x{}, channel needs {}", p.dim(), p.dim(), rs + sched.dim()));
    }
    let mut rep = MarginReport::default();
    let tagged = vs.vertices().iter().map(|v| ("vertex", v)).chain(samples.iter().map(|v| ("sample", v)));
    for (i, (tag, v)) in tagged.enumerate() {
        let d = blockdiag(&[&delta_lift(v, vs.u_hat(), vs.v_hat())?, &sched.eval(v)?]);
        let m = p.as_mat() * d;
        rep.push(format!("{tag} {i}"), min_eig(&(&m + m.transpose())));
    }
    Ok(rep)
}

/// Same condition with the controller block also lifted:
/// `He[P diag(Dl(V), Dl(Dc(V)))] > 0`. The controller channel must split into
/// equal input and output halves.
pub fn check_passive_lifted_controller(
    p: &SymMat,
    sched: &SchedulingMap,
    vs: &ValueSet,
    samples: &[Mat],
) -> Result<MarginReport> {
    let rs = vs.u_hat() + vs.v_hat();
    let rc = sched.dim();
    if p.dim() != rs + 2 * rc {
        return Err(dim_err!("scaling must be {}x{}", rs + 2 * rc, rs + 2 * rc));
    }
    let mut rep = MarginReport::default();
    for (i, v) in vs.vertices().iter().chain(samples).enumerate() {
        let dc = sched.eval(v)?;
        let d = blockdiag(&[&delta_lift(v, vs.u_hat(), vs.v_hat())?, &delta_lift(&dc, rc, rc)?]);
        let m = p.as_mat() * d;
        rep.push(format!("point {i}"), min_eig(&(&m + m.transpose())));
    }
    Ok(rep)
}

/// `[Dex; I]^T Ph [Dex; I] > 0` with `Dex = diag(V, Dc(V))`, `Ph` on `(w, wc, z, zc)`.
pub fn check_hat(ph: &SymMat, sched: &SchedulingMap, vs: &ValueSet, samples: &[Mat]) -> Result<MarginReport> {
    let (uh, vh, rc) = (vs.u_hat(), vs.v_hat(), sched.dim());
    if ph.dim() != uh + vh + 2 * rc {
        return Err(dim_err!("hat scaling must be {0}x{0}", uh + vh + 2 * rc));
    }
    let mut rep = MarginReport::default();
    let tagged = vs.vertices().iter().map(|v| ("vertex", v)).chain(samples.iter().map(|v| ("sample", v)));
    for (i, (tag, v)) in tagged.enumerate() {
        let dex = blockdiag(&[v, &sched.eval(v)?]);
        let t = assemble(&[vec![&dex], vec![&eye(vh + rc)]])?;
        rep.push(format!("{tag} {i}"), min_eig(&congruence(ph.as_mat(), &t)));
    }
    Ok(rep)
}

/// The two extra sign conditions of the classical full block class:
/// `[I; 0]^T Ph [I; 0] < 0` and `[0; I]^T Ph [0; I] > 0`.
pub fn check_hat_f(ph: &SymMat, sched: &SchedulingMap, vs: &ValueSet, samples: &[Mat]) -> Result<MarginReport> {
    let (uh, rc) = (vs.u_hat(), sched.dim());
    let nw = uh + rc;
    let nz = ph.dim() - nw;
    let mut rep = check_hat(ph, sched, vs, samples)?;
    let m = ph.as_mat();
    rep.push("input block < 0", -crate::matkit::max_eig(&m.view((0, 0), (nw, nw)).into_owned()));
    rep.push("output block > 0", min_eig(&m.view((nw, nw), (nz, nz)).into_owned()));
    Ok(rep)
}

/// Zero pattern for the scaling variables `Q2`, `Q3`, `Qt1` (row-major,
/// `true` forces the entry to zero). Masks restrict the scalings and can
/// only make synthesis more conservative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingMask {
    pub id: String,
    pub rs: usize,
    pub q2: Vec<bool>,
    pub q3: Vec<bool>,
    pub qt1: Vec<bool>,
}

impl ScalingMask {
    pub fn full(rs: usize) -> Self {
        let none = vec![false; rs * rs];
        Self { id: "full".into(), rs, q2: none.clone(), q3: none.clone(), qt1: none }
    }

    /// Drops the coupling between the scheduling input and output, leaving
    /// `diag(Q_uu, Q_vv)`.
    pub fn block_diagonal(u_hat: usize, v_hat: usize) -> Self {
        let rs = u_hat + v_hat;
        let m: Vec<bool> = (0..rs * rs).map(|k| (k / rs < u_hat) != (k % rs < u_hat)).collect();
        Self { id: "block-diagonal".into(), rs, q2: m.clone(), q3: m.clone(), qt1: m }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("Q2", &self.q2), ("Q3", &self.q3), ("Qt1", &self.qt1)] {
            if m.len() != self.rs * self.rs {
                return Err(dim_err!("mask of {name} has {} entries, expected {}", m.len(), self.rs * self.rs));
            }
            for i in 0..self.rs {
                for j in 0..self.rs {
                    if m[i * self.rs + j] != m[j * self.rs + i] {
                        return Err(Error::Invalid(format!("mask of {name} is not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Constraints `E <= 0` encoding primal-class membership of the expression `q`.
pub fn vertex_constraints_primal(q: &MatExpr, vs: &ValueSet) -> Result<Vec<(String, MatExpr)>> {
    let (uh, vh) = (vs.u_hat(), vs.v_hat());
    if q.shape() != (uh + vh, uh + vh) {
        return Err(dim_err!("primal scaling expression has wrong shape"));
    }
    let mut out = vec![("uu".to_string(), q.block(0, 0, uh, uh))];
    for (i, v) in vs.vertices().iter().enumerate() {
        let t = assemble(&[vec![v], vec![&eye(vh)]])?;
        out.push((format!("vertex {i}"), q.lmul(&t.transpose())?.rmul(&t)?.scale(-1.0)));
    }
    Ok(out)
}

/// Constraints `E <= 0` encoding dual-class membership of the expression `qt`.
pub fn vertex_constraints_dual(qt: &MatExpr, vs: &ValueSet) -> Result<Vec<(String, MatExpr)>> {
    let (uh, vh) = (vs.u_hat(), vs.v_hat());
    if qt.shape() != (uh + vh, uh + vh) {
        return Err(dim_err!("dual scaling expression has wrong shape"));
    }
    let mut out = vec![("vv".to_string(), qt.block(uh, uh, vh, vh).scale(-1.0))];
    for (i, v) in vs.vertices().iter().enumerate() {
        let t = assemble(&[vec![&eye(uh)], vec![&(-v.transpose())]])?;
        out.push((format!("vertex {i}"), qt.lmul(&t.transpose())?.rmul(&t)?));
    }
    Ok(out)
}
