//! Lifting of the scheduling channel and the associated scaling maps.
//!
//! The lifted plant replaces `w = V z` by `w_l = Dl(V) z_l` with
//! `Dl(V) = [[-I, 2V], [0, I]]`, a channel of size `u_hat + v_hat` whose
//! scheduling block satisfies `He[Dl(V)] = diag(-2I, 2I)`-type passivity bounds
//! after scaling.

use crate::error::{dim_err, Error, Result};
use crate::lfr::{PlantBlocks, PlantPartition, StructuredPlantLfr};
use crate::matkit::{assemble, eye, max_abs, Mat, SymMat};

/// `Dl(V) = [[-I_u, 2V], [0, I_v]]`.
pub fn delta_lift(v: &Mat, u_hat: usize, v_hat: usize) -> Result<Mat> {
    if v.shape() != (u_hat, v_hat) {
        return Err(dim_err!("parameter is {}x{}, expected {u_hat}x{v_hat}", v.nrows(), v.ncols()));
    }
    let r = u_hat + v_hat;
    let mut out = Mat::zeros(r, r);
    for i in 0..u_hat {
        out[(i, i)] = -1.0;
    }
    for i in u_hat..r {
        out[(i, i)] = 1.0;
    }
    out.view_mut((0, u_hat), (u_hat, v_hat)).copy_from(&(v * 2.0));
    Ok(out)
}

/// Plant whose scheduling channel has been lifted; channel size is `rs = u_hat + v_hat`.
#[derive(Clone, Debug)]
pub struct LiftedPlantLfr {
    part: PlantPartition,
    blocks: PlantBlocks,
}

impl LiftedPlantLfr {
    pub fn partition(&self) -> &PlantPartition {
        &self.part
    }

    pub fn blocks(&self) -> &PlantBlocks {
        &self.blocks
    }

    pub fn rs(&self) -> usize {
        self.part.rs()
    }
}

pub fn lift_plant(p: &StructuredPlantLfr) -> Result<LiftedPlantLfr> {
    let part = *p.partition();
    let h = p.hat_blocks();
    let (ns, uh, vh) = (part.ns, part.u_hat(), part.v_hat());
    let (q, m) = (part.q, part.m);
    let z = Mat::zeros;
    let a12 = assemble(&[vec![&h.a12, &z(ns, vh)]])?;
    let a21 = assemble(&[vec![&z(uh, ns)], vec![&(&h.a21 * 2.0)]])?;
    let a22 = assemble(&[vec![&eye(uh), &z(uh, vh)], vec![&(&h.a22 * 2.0), &(-eye(vh))]])?;
    let b2p = assemble(&[vec![&z(uh, q)], vec![&(&h.b2p * 2.0)]])?;
    let b2 = assemble(&[vec![&z(uh, m)], vec![&(&h.b2 * 2.0)]])?;
    let c2p = assemble(&[vec![&h.c2p, &z(part.p, vh)]])?;
    let c2 = assemble(&[vec![&h.c2, &z(part.k, vh)]])?;
    let blocks = PlantBlocks { a12, a21, a22, b2p, b2, c2p, c2, ..h };
    Ok(LiftedPlantLfr { part, blocks })
}

/// Builds the scaling on `(w, wc, z, zc)` of the original closed loop from a
/// lifted scaling `P` partitioned as `[[Q, S^T], [S, R]]`, with `Q` on the
/// lifted plant channel `(u_hat, v_hat)` and `R` on the controller channel.
///
/// Result: `[[2Q11, S1^T, 2Q12, S1^T], [S1, 0, S2, R], [2Q21, S2^T, 2Q22, S2^T], [S1, R, S2, 0]]`.
pub fn build_hat_scaling(p: &SymMat, u_hat: usize, v_hat: usize) -> Result<SymMat> {
    let rs = u_hat + v_hat;
    let n = p.dim();
    if n < rs {
        return Err(dim_err!("scaling of size {n} is smaller than the plant channel {rs}"));
    }
    let rc = n - rs;
    let blk = |r0: usize, c0: usize, r: usize, c: usize| p.as_mat().view((r0, c0), (r, c)).into_owned();
    let q11 = blk(0, 0, u_hat, u_hat) * 2.0;
    let q12 = blk(0, u_hat, u_hat, v_hat) * 2.0;
    let q21 = blk(u_hat, 0, v_hat, u_hat) * 2.0;
    let q22 = blk(u_hat, u_hat, v_hat, v_hat) * 2.0;
    let s1 = blk(rs, 0, rc, u_hat);
    let s2 = blk(rs, u_hat, rc, v_hat);
    let r = blk(rs, rs, rc, rc);
    let s1t = s1.transpose();
    let s2t = s2.transpose();
    let zr = Mat::zeros(rc, rc);
    let out = assemble(&[
        vec![&q11, &s1t, &q12, &s1t],
        vec![&s1, &zr, &s2, &r],
        vec![&q21, &s2t, &q22, &s2t],
        vec![&s1, &r, &s2, &zr],
    ])?;
    let asym = max_abs(&(&out - out.transpose()));
    if asym > 1e-12 * (1.0 + max_abs(&out)) {
        return Err(Error::Numerical(format!("assembled scaling is not symmetric ({asym:.2e})")));
    }
    Ok(SymMat::symmetrize(out))
}

/// Largest entry of the difference between
/// `He[[A; C]^T [[Q, S^T], [S, R]] [A; B]]` and
/// `[A; B; C]^T [[2Q, S^T, S^T], [S, 0, R], [S, R, 0]] [A; B; C]`.
pub fn he_congruence_identity_check(q: &Mat, s: &Mat, r: &Mat, a: &Mat, b: &Mat, c: &Mat) -> Result<f64> {
    let nq = q.nrows();
    let nr = r.nrows();
    if q.shape() != (nq, nq) || s.shape() != (nr, nq) || r.shape() != (nr, nr) {
        return Err(dim_err!("inconsistent scaling blocks"));
    }
    if a.nrows() != nq || b.nrows() != nr || c.nrows() != nr || b.ncols() != a.ncols() || c.ncols() != a.ncols() {
        return Err(dim_err!("inconsistent outer factors"));
    }
    let p = assemble(&[vec![q, &s.transpose()], vec![s, r]])?;
    let left = assemble(&[vec![a], vec![c]])?;
    let right = assemble(&[vec![a], vec![b]])?;
    let m = left.transpose() * p * right;
    let lhs = &m + m.transpose();
    let st = s.transpose();
    let zr = Mat::zeros(nr, nr);
    let big = assemble(&[vec![&(q * 2.0), &st, &st], vec![s, &zr, r], vec![s, r, &zr]])?;
    let outer = assemble(&[vec![a], vec![b], vec![c]])?;
    let rhs = outer.transpose() * big * outer;
    Ok(max_abs(&(lhs - rhs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_plant, InstanceDims};
    use crate::lfr::{close_loop_lifted, close_loop_original, transfer_at, GainScheduledController};
    use crate::matkit::{blockdiag, hcat, vcat};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn lifted_block_shape() {
        let v = Mat::from_row_slice(1, 2, &[0.5, -1.0]);
        let l = delta_lift(&v, 1, 2).unwrap();
        let expect = Mat::from_row_slice(3, 3, &[-1.0, 1.0, -2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(l, expect);
        assert!(delta_lift(&v, 2, 1).is_err());
    }

    #[test]
    fn lifting_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dims = InstanceDims::random(&mut rng);
            let (plant, vs) = random_plant(&mut rng, &dims);
            let lifted = lift_plant(&plant).unwrap();
            let k = GainScheduledController::zero(dims.k, dims.m, dims.u1 + dims.u2, dims.v1 + dims.v2);
            let co = close_loop_original(&plant, &k).unwrap();
            let cl = close_loop_lifted(&lifted, &k).unwrap();
            for _ in 0..3 {
                let v = vs.sample(&mut rng);
                let fo = co.freeze(&v).unwrap();
                let fl = cl.freeze(&v).unwrap();
                for _ in 0..4 {
                    let s = Complex64::new(rng.gen_range(0.0..1.0), rng.gen_range(-10.0..10.0));
                    let go = transfer_at(&fo, s).unwrap();
                    let gl = transfer_at(&fl, s).unwrap();
                    let err = (&go - &gl).norm() / (1.0 + go.norm());
                    assert!(err < 1e-9, "transfer mismatch {err:e}");
                }
            }
        }
    }

    #[test]
    fn lifted_plant_keeps_unlifted_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = InstanceDims { ns: 2, u1: 1, u2: 1, v1: 1, v2: 0, q: 2, p: 2, m: 1, k: 1 };
        let (plant, _) = random_plant(&mut rng, &dims);
        let h = plant.hat_blocks();
        let l = lift_plant(&plant).unwrap();
        let b = l.blocks();
        assert_eq!(b.a11, h.a11);
        assert_eq!(b.b1p, h.b1p);
        assert_eq!(b.c1p, h.c1p);
        assert_eq!(b.d1, h.d1);
        assert_eq!(b.d2, h.d2);
        assert_eq!(b.rw(), 3);
        assert_eq!(b.rz(), 3);
    }

    /// Hand expansion for scalar channels: the hat scaling evaluated on
    /// `[diag(V, Dc); I]` equals `He[P diag(Dl(V), Dc)]` after the
    /// substitution that maps the lifted channel onto the original one.
    #[test]
    fn hat_scaling_matches_lifted_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (uh, vh, rc) = (1, 1, 2);
            let n = uh + vh + rc;
            let p = SymMat::symmetrize(rmat(&mut rng, n, n));
            let v = rmat(&mut rng, uh, vh);
            let dc = rmat(&mut rng, rc, rc);
            let ph = build_hat_scaling(&p, uh, vh).unwrap();
            // coordinates (w, wc, z, zc) = [V 0; 0 Dc; I 0; 0 I] (z, zc)
            let outer = assemble(&[
                vec![&v, &Mat::zeros(uh, rc)],
                vec![&Mat::zeros(rc, vh), &dc],
                vec![&eye(vh), &Mat::zeros(vh, rc)],
                vec![&Mat::zeros(rc, vh), &eye(rc)],
            ])
            .unwrap();
            let lhs = outer.transpose() * ph.as_mat() * &outer;
            // lifted channel signals as functions of (z, zc): z_l = (V z, z), w_l = Dl(V) z_l
            let dl = delta_lift(&v, uh, vh).unwrap();
            let zl = assemble(&[vec![&v, &Mat::zeros(uh, rc)], vec![&eye(vh), &Mat::zeros(vh, rc)]]).unwrap();
            let zfull = vcat(&[&zl, &hcat(&[&Mat::zeros(rc, vh), &eye(rc)]).unwrap()]).unwrap();
            let dfull = blockdiag(&[&dl, &dc]);
            let m = zfull.transpose() * p.as_mat() * &dfull * &zfull;
            let rhs = &m + m.transpose();
            assert!(max_abs(&(lhs - rhs)) < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn he_congruence_identity(seed in 0u64..1000, nq in 1usize..4, nr in 1usize..4, nc in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = SymMat::symmetrize(rmat(&mut rng, nq, nq)).into_mat();
            let r = SymMat::symmetrize(rmat(&mut rng, nr, nr)).into_mat();
            let s = rmat(&mut rng, nr, nq);
            let a = rmat(&mut rng, nq, nc);
            let b = rmat(&mut rng, nr, nc);
            let c = rmat(&mut rng, nr, nc);
            let err = he_congruence_identity_check(&q, &s, &r, &a, &b, &c).unwrap();
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn hat_scaling_is_symmetric(seed in 0u64..1000, uh in 1usize..3, vh in 1usize..3, rc in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = uh + vh + rc;
            let p = SymMat::symmetrize(rmat(&mut rng, n, n));
            let ph = build_hat_scaling(&p, uh, vh).unwrap();
            prop_assert_eq!(ph.dim(), uh + vh + 2 * rc);
            prop_assert!(max_abs(&(ph.as_mat() - ph.as_mat().transpose())) == 0.0);
        }
    }
}
