//! Controller reconstruction from a feasible point of the synthesis
//! inequalities: factorizations, the triangular scheduling function and the
//! controller matrices, together with the closed-loop certificate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfr::{ControllerPartition, GainScheduledController, SchedulingMap, TriangularMap, ValueSet};
use crate::lifting::LiftedPlantLfr;
use crate::matkit::{assemble, eye, inverse, max_abs, min_singular_value, Mat, SymMat};
use crate::synthesis::SynthesisVariables;
use crate::scalings::check_passive;

/// `Xcal Ycal = Zcal` with `Ycal = [[Y, I], [V, 0]]`, `Zcal = [[I, X], [0, U]]`.
#[derive(Clone, Debug)]
pub struct Factorization {
    pub xcal: SymMat,
    pub x: Mat,
    pub y: Mat,
    pub u: Mat,
    pub v: Mat,
}

/// Everything produced by [`reconstruct`].
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub controller: GainScheduledController,
    /// Lyapunov certificate on `(x, xc)`.
    pub x1cal: SymMat,
    /// Passive scaling on the lifted channel `(w, wc)`.
    pub pcal: SymMat,
    pub z: SymMat,
    pub gamma: f64,
    /// Variables actually used, after any perturbation.
    pub vars: SynthesisVariables,
    pub notes: Vec<String>,
    /// Largest entry set to zero when enforcing the controller pattern.
    pub max_zeroed: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Relative threshold below which a block is treated as singular.
    pub singular_tol: f64,
    pub max_retries: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { singular_tol: 1e-9, max_retries: 8 }
    }
}

fn near_singular(m: &Mat, tol: f64) -> bool {
    m.nrows() > 0 && min_singular_value(m) <= tol * (1.0 + max_abs(m))
}

/// Adds `delta I` to `t` until it is safely invertible, doubling `delta`.
fn regularize(t: &Mat, name: &str, opts: &ReconstructOptions, notes: &mut Vec<String>) -> Result<Mat> {
    if !near_singular(t, opts.singular_tol) {
        return Ok(t.clone());
    }
    let n = t.nrows();
    let mut delta = 1e-8 * (1.0 + t.norm());
    for _ in 0..opts.max_retries {
        let tp = t + eye(n) * delta;
        if !near_singular(&tp, opts.singular_tol) {
            notes.push(format!("{name} perturbed by {delta:.3e} I"));
            return Ok(tp);
        }
        delta *= 2.0;
    }
    Err(Error::Numerical(format!("{name} stays singular after {} perturbations", opts.max_retries)))
}

/// State factorization with `U1 = D`, `V1 = -D Y1`, `D = (X1 - Y1^{-1})^{1/2}`,
/// so that `Xcal = [[X1, D], [D, I]]`.
pub fn state_factorization(x1: &Mat, y1: &Mat) -> Result<Factorization> {
    let n = x1.nrows();
    let y1_inv = inverse(y1, "Y1")?.inv;
    let gap = SymMat::symmetrize(x1 - &y1_inv);
    let eig = nalgebra::SymmetricEigen::new(gap.into_mat());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Numerical("X1 - Y1^{-1} is not positive definite".into()));
    }
    let sqrt = eig.eigenvalues.map(f64::sqrt);
    let d = &eig.eigenvectors * Mat::from_diagonal(&sqrt) * eig.eigenvectors.transpose();
    let d = SymMat::symmetrize(d).into_mat();
    let u = d.clone();
    let v = -(&d * y1);
    let xcal = SymMat::symmetrize(assemble(&[vec![x1, &d], vec![&d, &eye(n)]])?);
    if xcal.min_eig() <= 0.0 {
        return Err(Error::Numerical("state certificate is not positive definite".into()));
    }
    Ok(Factorization { xcal, x: x1.clone(), y: y1.clone(), u, v })
}

/// `T = S^T R^{-1} S` with `S = b |L|^{1/2} E^T`, `R = b^2 sign(L)` for `T = E L E^T`.
fn balanced_split(t: &Mat, b: f64) -> (Mat, Mat) {
    let eig = nalgebra::SymmetricEigen::new(SymMat::symmetrize(t.clone()).into_mat());
    let root = eig.eigenvalues.map(|l| b * l.abs().sqrt());
    let sign = eig.eigenvalues.map(|l| if l < 0.0 { -b * b } else { b * b });
    (Mat::from_diagonal(&root) * eig.eigenvectors.transpose(), Mat::from_diagonal(&sign))
}

/// Channel factorization data.
#[derive(Clone, Debug)]
pub struct ChannelFactorization {
    pub pcal: SymMat,
    pub q2: Mat,
    pub q3: Mat,
    pub qt1: Mat,
    pub u2: Mat,
    pub v2: Mat,
}

/// `P = [[Q3, S1^T, S2^T], [S1, R1, 0], [S2, 0, R2]]` with
/// `S1^T R1^{-1} S1 = T1 = Q2 - Qt1^{-1}` and `S2^T R2^{-1} S2 = T2 = Q3 - Q2`;
/// `U2 = [[S1, S1], [0, S2]]`, `V2 = [[-R1 S1 Qt1, 0], [-R2 S2 Qt1, -R2 S2]]`.
///
/// `scale` sets the size of the two controller channel halves: `Ri = +-scale.i^2`.
/// Singular `Qt1`, `T1` or `T2` are perturbed, which changes `Q2` and `Q3`
/// accordingly.
pub fn channel_factorization(
    q2: &Mat,
    q3: &Mat,
    qt1: &Mat,
    scale: (f64, f64),
    opts: &ReconstructOptions,
    notes: &mut Vec<String>,
) -> Result<ChannelFactorization> {
    let r = q2.nrows();
    let qt1 = regularize(qt1, "Qt1", opts, notes)?;
    let qt1_inv = inverse(&qt1, "Qt1")?.inv;
    let t1 = regularize(&(q2 - &qt1_inv), "T1", opts, notes)?;
    let q2 = SymMat::symmetrize(&qt1_inv + &t1).into_mat();
    let t2 = regularize(&(q3 - &q2), "T2", opts, notes)?;
    let q3 = SymMat::symmetrize(&q2 + &t2).into_mat();
    if [scale.0, scale.1].iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::Invalid("channel scale must be positive and finite".into()));
    }
    let (s1, r1) = balanced_split(&t1, scale.0);
    let (s2, r2) = balanced_split(&t2, scale.1);
    let z = Mat::zeros(r, r);
    let pcal = SymMat::symmetrize(assemble(&[
        vec![&q3, &s1.transpose(), &s2.transpose()],
        vec![&s1, &r1, &z],
        vec![&s2, &z, &r2],
    ])?);
    // R is diagonal with entries +-scale^2
    let ri1 = r1.map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
    let ri2 = r2.map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
    let u2 = assemble(&[vec![&s1, &s1], vec![&z, &s2]])?;
    let v2 = assemble(&[vec![&(-(&ri1 * &s1 * &qt1)), &z], vec![&(-(&ri2 * &s2 * &qt1)), &(-(&ri2 * &s2))]])?;
    Ok(ChannelFactorization { pcal, q2, q3, qt1, u2, v2 })
}

/// Triangular scheduling function built from the channel factorization.
pub fn scheduling_map(u_hat: usize, v_hat: usize, f2: &ChannelFactorization) -> Result<SchedulingMap> {
    Ok(SchedulingMap::Triangular(TriangularMap::new(
        u_hat,
        v_hat,
        f2.q2.clone(),
        f2.q3.clone(),
        f2.qt1.clone(),
        f2.u2.clone(),
        f2.v2.clone(),
    )?))
}

/// Controller system matrix with rows `(xc', zc1, zc2, u)` and columns
/// `(xc, wc1, wc2, y)`; returns it with the largest entry zeroed on the
/// structurally vanishing blocks.
pub fn controller_matrices(
    pl: &LiftedPlantLfr,
    v: &SynthesisVariables,
    f1: &Factorization,
    f2: &ChannelFactorization,
) -> Result<(Mat, f64)> {
    let b = pl.blocks();
    let part = pl.partition();
    let (n, r, m, k) = (part.ns, part.rs(), part.m, part.k);
    let z = Mat::zeros;
    let kk = [
        [v.k11.clone(), assemble(&[vec![&v.k12, &v.k13]])?],
        [
            assemble(&[vec![&v.k21], vec![&v.k31]])?,
            assemble(&[vec![&v.k22, &(&f2.q2 * &b.a22)], vec![&v.k32, &v.k33]])?,
        ],
    ];
    let ll = [v.l1.clone(), assemble(&[vec![&z(r, k)], vec![&v.l3]])?];
    let mm = [v.m1.clone(), assemble(&[vec![&v.m2, &z(m, r)]])?];
    let xt = [f1.x.clone(), assemble(&[vec![&f2.q2], vec![&f2.q3]])?];
    let yy = [f1.y.clone(), assemble(&[vec![&f2.qt1, &eye(r)]])?];
    let ut_inv = [
        inverse(&f1.u.transpose(), "U1")?.inv,
        inverse(&f2.u2.transpose(), "U2")?.inv,
    ];
    let v_inv = [inverse(&f1.v, "V1")?.inv, inverse(&f2.v2, "V2")?.inv];
    let a = [[&b.a11, &b.a12], [&b.a21, &b.a22]];
    let bb = [&b.b1, &b.b2];
    let cc = [&b.c1, &b.c2];
    let mut ac = [[z(0, 0), z(0, 0)], [z(0, 0), z(0, 0)]];
    for i in 0..2 {
        for j in 0..2 {
            let inner = &kk[i][j] - &xt[i] * a[i][j] * &yy[j] - &xt[i] * bb[i] * &mm[j] - &ll[i] * cc[j] * &yy[j];
            ac[i][j] = &ut_inv[i] * inner * &v_inv[j];
        }
    }
    let bc = [&ut_inv[0] * &ll[0], &ut_inv[1] * &ll[1]];
    let ccm = [&mm[0] * &v_inv[0], &mm[1] * &v_inv[1]];
    let mut sys = assemble(&[
        vec![&ac[0][0], &ac[0][1], &bc[0]],
        vec![&ac[1][0], &ac[1][1], &bc[1]],
        vec![&ccm[0], &ccm[1], &z(m, k)],
    ])?;
    // (zc1, wc2), (zc1, y), (u, wc2) vanish up to rounding
    let nc = n;
    let regions = [(nc, nc + r, r, r), (nc, nc + 2 * r, r, k), (nc + 2 * r, nc + r, m, r)];
    let scale = 1.0 + max_abs(&sys);
    let mut zeroed: f64 = 0.0;
    for &(r0, c0, rn, cn) in &regions {
        let blk = sys.view((r0, c0), (rn, cn)).into_owned();
        zeroed = zeroed.max(max_abs(&blk));
        sys.view_mut((r0, c0), (rn, cn)).fill(0.0);
    }
    if zeroed > 1e-6 * scale {
        return Err(Error::Structure(format!("controller zero pattern off by {zeroed:.3e}")));
    }
    Ok((sys, zeroed))
}

/// Builds the controller and the closed-loop certificate from a feasible
/// point of the synthesis inequalities.
pub fn reconstruct(pl: &LiftedPlantLfr, vars: &SynthesisVariables, vs: &ValueSet, opts: &ReconstructOptions) -> Result<Reconstruction> {
    let part = pl.partition();
    let (n, r) = (part.ns, part.rs());
    let notes: Vec<String> = Vec::new();
    let f1 = state_factorization(&vars.x1, &vars.y1)?;
    if near_singular(&f1.v, opts.singular_tol) {
        return Err(Error::Numerical("I - X1 Y1 is singular".into()));
    }
    let build = |scale: (f64, f64)| -> Result<Reconstruction> {
        let mut notes = notes.clone();
        let f2 = channel_factorization(&vars.q2, &vars.q3, &vars.qt1, scale, opts, &mut notes)?;
        let mut used = vars.clone();
        used.q2 = f2.q2.clone();
        used.q3 = f2.q3.clone();
        used.qt1 = f2.qt1.clone();
        let (sys, max_zeroed) = controller_matrices(pl, &used, &f1, &f2)?;
        let schedule = scheduling_map(part.u_hat(), part.v_hat(), &f2)?;
        let kpart = ControllerPartition { nc: n, rc1: r, rc2: r, k: part.k, m: part.m };
        let controller = GainScheduledController::new(kpart, sys, schedule)?;
        Ok(Reconstruction {
            controller,
            x1cal: f1.xcal.clone(),
            pcal: f2.pcal,
            z: SymMat::symmetrize(vars.z.clone()),
            gamma: vars.gamma,
            vars: used,
            notes,
            max_zeroed,
        })
    };
    let mut best = balance_state(pl, vs, build((1.0, 1.0))?)?;
    let mut best_score = score(pl, vs, &best)?;
    let mut best_scale = 1.0;
    for k in (-8..=8).filter(|&k| k != 0) {
        let b = 10f64.powf(0.25 * k as f64);
        let cand = balance_state(pl, vs, build((b, b))?)?;
        let s = score(pl, vs, &cand)?;
        if s > best_score * 1.01 {
            best = cand;
            best_score = s;
            best_scale = b;
        }
    }
    if best_scale != 1.0 {
        best.notes.push(format!("controller channel scaled by {best_scale:.3e}"));
    }
    Ok(best)
}

/// Smaller of the lifted performance margins and the vertex membership margin.
fn score(pl: &LiftedPlantLfr, vs: &ValueSet, r: &Reconstruction) -> Result<f64> {
    let cl = crate::lfr::close_loop_lifted(pl, &r.controller)?;
    let (a, b) = crate::verify::lifted_performance_margins(&cl, &r.x1cal, &r.pcal, &r.z, r.gamma)?;
    let memb = check_passive(&r.pcal, r.controller.schedule(), vs, &[])?.min_margin();
    Ok(a.min(b).min(memb))
}

/// Picks the controller state scaling from a half-decade grid in `[1e-4, 1]`.
fn balance_state(pl: &LiftedPlantLfr, vs: &ValueSet, rec: Reconstruction) -> Result<Reconstruction> {
    let mut best_score = score(pl, vs, &rec)?;
    let mut best_c = 1.0;
    for k in 1..=8 {
        let c = 10f64.powf(-0.5 * k as f64);
        let s = score(pl, vs, &scale_controller_state(&rec, c)?)?;
        if s > best_score * 1.01 {
            best_score = s;
            best_c = c;
        }
    }
    if best_c == 1.0 {
        return Ok(rec);
    }
    let mut out = scale_controller_state(&rec, best_c)?;
    out.notes.push(format!("controller state scaled by {best_c:.3e}"));
    Ok(out)
}

/// Same controller in the state coordinates `c xc`, with the certificate
/// transformed accordingly.
pub fn scale_controller_state(rec: &Reconstruction, c: f64) -> Result<Reconstruction> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Invalid("state scaling must be positive and finite".into()));
    }
    let k = &rec.controller;
    let nc = k.partition().nc;
    let mut sys = k.system_matrix().clone();
    sys.rows_mut(0, nc).scale_mut(c);
    sys.columns_mut(0, nc).scale_mut(1.0 / c);
    let controller = GainScheduledController::new(*k.partition(), sys, k.schedule().clone())?;
    let mut x = rec.x1cal.as_mat().clone();
    let ns = x.nrows() - nc;
    x.rows_mut(ns, nc).scale_mut(1.0 / c);
    x.columns_mut(ns, nc).scale_mut(1.0 / c);
    Ok(Reconstruction { controller, x1cal: SymMat::symmetrize(x), ..rec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rsym(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Mat {
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5 + eye(n) * shift
    }

    #[test]
    fn state_factorization_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x1 = rsym(&mut rng, 3, 4.0);
            let y1 = rsym(&mut rng, 3, 4.0);
            let f = state_factorization(&x1, &y1).unwrap();
            let ycal = assemble(&[vec![&y1, &eye(3)], vec![&f.v, &Mat::zeros(3, 3)]]).unwrap();
            let zcal = assemble(&[vec![&eye(3), &x1], vec![&Mat::zeros(3, 3), &f.u]]).unwrap();
            assert!(max_abs(&(f.xcal.as_mat() * &ycal - &zcal)) < 1e-9);
            // Ycal^T Zcal = [[Y1, I], [I, X1]]
            let xx = ycal.transpose() * zcal;
            let expect = assemble(&[vec![&y1, &eye(3)], vec![&eye(3), &x1]]).unwrap();
            assert!(max_abs(&(xx - expect)) < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn channel_factorization_identity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = 2;
            let q2 = rsym(&mut rng, r, 0.0);
            let q3 = rsym(&mut rng, r, 0.0);
            let qt1 = rsym(&mut rng, r, 3.0);
            let mut notes = Vec::new();
            let f = channel_factorization(&q2, &q3, &qt1, (1.0, 1.0), &ReconstructOptions::default(), &mut notes).unwrap();
            // Pcal Ycal2 = Zcal2 with Ycal2 = [[Qt1, I, I], [V2, 0]], Zcal2 = [[I, Q2, Q3], [0, U2]]
            let i = eye(r);
            let y2 = assemble(&[vec![&f.qt1, &i, &i]]).unwrap();
            let low = assemble(&[vec![&f.v2, &Mat::zeros(2 * r, r)]]).unwrap();
            let ycal = assemble(&[vec![&y2], vec![&low]]).unwrap();
            let top = assemble(&[vec![&i, &f.q2, &f.q3]]).unwrap();
            let bot = assemble(&[vec![&Mat::zeros(2 * r, r), &f.u2]]).unwrap();
            let zcal = assemble(&[vec![&top], vec![&bot]]).unwrap();
            let err = max_abs(&(f.pcal.as_mat() * &ycal - &zcal));
            prop_assert!(err < 1e-7 * (1.0 + max_abs(&zcal)), "residual {err:e}");
            // the (1,1) block of the inverse is Qt1
            let pinv = f.pcal.as_mat().clone().try_inverse().unwrap();
            let q11 = pinv.view((0, 0), (r, r)).into_owned();
            prop_assert!(max_abs(&(q11 - &f.qt1)) < 1e-6 * (1.0 + max_abs(&f.qt1)));
            prop_assert_eq!(max_abs(&f.u2.view((r, 0), (r, r)).into_owned()), 0.0);
            prop_assert_eq!(max_abs(&f.v2.view((0, r), (r, r)).into_owned()), 0.0);
        }
    }

    #[test]
    fn singular_difference_is_perturbed() {
        let r = 2;
        let q2 = Mat::from_row_slice(2, 2, &[-1.0, 0.2, 0.2, 2.0]);
        let mut notes = Vec::new();
        // Q3 = Q2 makes T2 singular
        let f = channel_factorization(&q2, &q2, &eye(r), (1.0, 1.0), &ReconstructOptions::default(), &mut notes).unwrap();
        assert!(notes.iter().any(|n| n.starts_with("T2")));
        assert!(max_abs(&(&f.q3 - &f.q2)) < 1e-6);
        assert!(min_singular_value(&(&f.q3 - &f.q2)) > 0.0);
    }
}
