//! Small reference plants and random instance generators used by tests,
//! examples and the command line tool.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lfr::{ControllerPartition, GainScheduledController, PlantPartition, SchedulingMap, StructuredPlantLfr, ValueSet};
use crate::matkit::{eye, Mat};
use crate::verify::PlantFamily;

/// Dimensions of a random instance, see [`PlantPartition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceDims {
    pub ns: usize,
    pub u1: usize,
    pub u2: usize,
    pub v1: usize,
    pub v2: usize,
    pub q: usize,
    pub p: usize,
    pub m: usize,
    pub k: usize,
}

impl InstanceDims {
    /// `ns <= 4`, `u_hat, v_hat <= 2`, other channels at most 2.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let u1 = rng.gen_range(1..=2);
        let v1 = rng.gen_range(1..=2);
        Self {
            ns: rng.gen_range(1..=4),
            u1,
            u2: rng.gen_range(0..=2 - u1),
            v1,
            v2: rng.gen_range(0..=2 - v1),
            q: rng.gen_range(1..=2),
            p: rng.gen_range(1..=2),
            m: rng.gen_range(1..=2),
            k: rng.gen_range(1..=2),
        }
    }

    pub fn partition(&self) -> PlantPartition {
        PlantPartition {
            ns: self.ns,
            u1: self.u1,
            u2: self.u2,
            v1: self.v1,
            v2: self.v2,
            q: self.q,
            p: self.p,
            m: self.m,
            k: self.k,
        }
    }
}

fn rmat<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.clone().svd(false, false).singular_values.max()
    }
}

fn with_norm(m: Mat, target: f64) -> Mat {
    let n = spectral_norm(&m);
    if n > 0.0 {
        m * (target / n)
    } else {
        m
    }
}

/// Random vertex with a zero `u1 x v2` upper-right block and spectral norm at most `radius`.
fn triangular_vertex<R: Rng>(rng: &mut R, d: &InstanceDims, radius: f64) -> Mat {
    let (uh, vh) = (d.u1 + d.u2, d.v1 + d.v2);
    let mut v = rmat(rng, uh, vh, 1.0);
    v.view_mut((0, d.v1), (d.u1, d.v2)).fill(0.0);
    with_norm(v, radius * rng.gen_range(0.5..1.0))
}

/// Symmetric vertex set `{+-V_1, +-V_2}`; zero is the midpoint.
fn symmetric_value_set<R: Rng>(rng: &mut R, d: &InstanceDims, radius: f64) -> ValueSet {
    let a = triangular_vertex(rng, d, radius);
    let b = triangular_vertex(rng, d, radius);
    ValueSet::new_unchecked(d.u1 + d.u2, d.v1 + d.v2, vec![a.clone(), -a, b.clone(), -b]).expect("shapes are consistent")
}

fn set(p: &mut StructuredPlantLfr, r: usize, c: usize, m: Mat) {
    p.set_block(r, c, &m).expect("generator uses matching block shapes");
}

/// Fully random structurally valid plant; the loop is well posed on the value set.
pub fn random_plant<R: Rng>(rng: &mut R, d: &InstanceDims) -> (StructuredPlantLfr, ValueSet) {
    let part = d.partition();
    let mut p = StructuredPlantLfr::zero(part);
    let (ns, u1, u2, v1, v2, q, pp, m, k) = (d.ns, d.u1, d.u2, d.v1, d.v2, d.q, d.p, d.m, d.k);
    set(&mut p, 0, 0, rmat(rng, ns, ns, 1.0) - eye(ns));
    set(&mut p, 0, 1, rmat(rng, ns, u1, 1.0));
    set(&mut p, 0, 2, rmat(rng, ns, u2, 1.0));
    set(&mut p, 0, 3, rmat(rng, ns, q, 1.0));
    set(&mut p, 0, 4, rmat(rng, ns, m, 1.0));
    set(&mut p, 1, 0, rmat(rng, v1, ns, 1.0));
    set(&mut p, 2, 0, rmat(rng, v2, ns, 1.0));
    // scheduling feedthrough kept small so that I - V A22 stays invertible
    let mut a22 = rmat(rng, v1 + v2, u1 + u2, 1.0);
    a22.view_mut((0, u1), (v1, u2)).fill(0.0);
    let a22 = with_norm(a22, 0.3);
    set(&mut p, 1, 1, a22.view((0, 0), (v1, u1)).into_owned());
    set(&mut p, 2, 1, a22.view((v1, 0), (v2, u1)).into_owned());
    set(&mut p, 2, 2, a22.view((v1, u1), (v2, u2)).into_owned());
    set(&mut p, 1, 4, rmat(rng, v1, m, 1.0));
    set(&mut p, 2, 3, rmat(rng, v2, q, 1.0));
    set(&mut p, 2, 4, rmat(rng, v2, m, 1.0));
    set(&mut p, 3, 0, rmat(rng, pp, ns, 1.0));
    set(&mut p, 3, 1, rmat(rng, pp, u1, 1.0));
    set(&mut p, 3, 4, rmat(rng, pp, m, 1.0));
    set(&mut p, 4, 0, rmat(rng, k, ns, 1.0));
    set(&mut p, 4, 1, rmat(rng, k, u1, 1.0));
    set(&mut p, 4, 2, rmat(rng, k, u2, 1.0));
    set(&mut p, 4, 3, rmat(rng, k, q, 1.0));
    let vs = symmetric_value_set(rng, d, 1.0);
    (p, vs)
}

/// Random structured controller with an affine lower block-triangular schedule.
pub fn random_controller<R: Rng>(rng: &mut R, d: &InstanceDims) -> GainScheduledController {
    let nc = rng.gen_range(1..=3);
    let (rc1, rc2) = (rng.gen_range(1..=2), rng.gen_range(0..=2));
    let part = ControllerPartition { nc, rc1, rc2, k: d.k, m: d.m };
    let rc = rc1 + rc2;
    let mut sys = rmat(rng, nc + rc + d.m, nc + rc + d.k, 1.0);
    // (zc1, wc2), (zc1, y), (u, wc2), (u, y)
    sys.view_mut((nc, nc + rc1), (rc1, rc2)).fill(0.0);
    sys.view_mut((nc, nc + rc), (rc1, d.k)).fill(0.0);
    sys.view_mut((nc + rc, nc + rc1), (d.m, rc2)).fill(0.0);
    sys.view_mut((nc + rc, nc + rc), (d.m, d.k)).fill(0.0);
    let a22 = with_norm(sys.view((nc, nc), (rc, rc)).into_owned(), 0.2);
    sys.view_mut((nc, nc), (rc, rc)).copy_from(&a22);
    let (uh, vh) = (d.u1 + d.u2, d.v1 + d.v2);
    let lower = |rng: &mut R| {
        let mut c = rmat(rng, rc, rc, 1.0);
        c.view_mut((0, rc1), (rc1, rc2)).fill(0.0);
        with_norm(c, 0.2)
    };
    let d0 = lower(rng);
    let coeffs = (0..uh * vh).map(|_| lower(rng)).collect();
    let schedule = SchedulingMap::affine(d0, coeffs, uh, vh, rc1).expect("coefficients are lower triangular");
    GainScheduledController::new(part, sys, schedule).expect("pattern is respected")
}

/// Two-state reference plant with scalar scheduling, control and measurement;
/// performance output `(x1 + 0.5 x2, 0.5 u)`, performance input `(process
/// noise, sensor noise)`. Value set `[-0.5, 0.5]`.
pub fn desk1() -> (StructuredPlantLfr, ValueSet) {
    let part = PlantPartition { ns: 2, u1: 1, u2: 0, v1: 1, v2: 0, q: 2, p: 2, m: 1, k: 1 };
    let mut p = StructuredPlantLfr::zero(part);
    let m = Mat::from_row_slice;
    set(&mut p, 0, 0, m(2, 2, &[0.0, 1.0, -1.0, -0.4]));
    set(&mut p, 0, 1, m(2, 1, &[0.0, 1.0]));
    set(&mut p, 0, 3, m(2, 2, &[0.0, 0.0, 1.0, 0.0]));
    set(&mut p, 0, 4, m(2, 1, &[0.0, 1.0]));
    set(&mut p, 1, 0, m(1, 2, &[1.0, 0.0]));
    set(&mut p, 1, 1, m(1, 1, &[0.1]));
    set(&mut p, 3, 0, m(2, 2, &[1.0, 0.5, 0.0, 0.0]));
    set(&mut p, 3, 4, m(2, 1, &[0.0, 0.5]));
    set(&mut p, 4, 0, m(1, 2, &[1.0, 0.0]));
    set(&mut p, 4, 3, m(1, 2, &[0.0, 0.3]));
    let v = |x: f64| Mat::from_element(1, 1, x);
    let vs = ValueSet::new_unchecked(1, 1, vec![v(-0.5), v(0.5)]).expect("scalar vertices");
    (p, vs)
}

/// Plant meant for synthesis: performance output `(C x, u)`, performance input
/// `(process noise, sensor noise)`, so the H2 problem is regular; uncertainty
/// gains are moderate so the robust problem is usually feasible.
pub fn random_desk_instance<R: Rng>(rng: &mut R) -> (StructuredPlantLfr, ValueSet) {
    let u1 = 1;
    let v1 = 1;
    let u2 = rng.gen_range(0..=1);
    let v2 = rng.gen_range(0..=1);
    let ns = rng.gen_range(2..=3);
    let (m, k) = (1, 1);
    let d = InstanceDims { ns, u1, u2, v1, v2, q: 1 + k, p: 1 + m, m, k };
    let mut p = StructuredPlantLfr::zero(d.partition());
    let mut a = rmat(rng, ns, ns, 1.0);
    let shift = crate::matkit::spectral_abscissa(&a) + rng.gen_range(-0.2..0.8);
    a -= eye(ns) * shift;
    set(&mut p, 0, 0, a);
    set(&mut p, 0, 1, rmat(rng, ns, u1, 0.5));
    set(&mut p, 0, 2, rmat(rng, ns, u2, 0.5));
    let mut bp = Mat::zeros(ns, d.q);
    bp.view_mut((0, 0), (ns, 1)).copy_from(&rmat(rng, ns, 1, 1.0));
    set(&mut p, 0, 3, bp);
    set(&mut p, 0, 4, rmat(rng, ns, m, 1.0));
    set(&mut p, 1, 0, rmat(rng, v1, ns, 0.5));
    set(&mut p, 2, 0, rmat(rng, v2, ns, 0.5));
    set(&mut p, 1, 1, rmat(rng, v1, u1, 0.1));
    set(&mut p, 2, 2, rmat(rng, v2, u2, 0.1));
    let mut cp = Mat::zeros(d.p, ns);
    cp.view_mut((0, 0), (1, ns)).copy_from(&rmat(rng, 1, ns, 1.0));
    set(&mut p, 3, 0, cp);
    let mut d1 = Mat::zeros(d.p, m);
    d1.view_mut((1, 0), (m, m)).copy_from(&eye(m));
    set(&mut p, 3, 4, d1);
    set(&mut p, 4, 0, rmat(rng, k, ns, 1.0));
    let mut d2 = Mat::zeros(k, d.q);
    d2.view_mut((0, 1), (k, k)).copy_from(&eye(k));
    set(&mut p, 4, 3, d2);
    // weight the performance output so that the nominal optimal cost is one
    if let Ok(g) = crate::verify::nominal_h2_optimum(&p) {
        if g.is_finite() && g > 0.0 {
            for col in 0..5 {
                let b = p.block(3, col) / g.sqrt();
                set(&mut p, 3, col, b);
            }
        }
    }
    let vs = symmetric_value_set(rng, &d, 0.5);
    (p, vs)
}

/// Plant with an unstable mode that neither the input nor the measurement reaches.
pub fn unstabilizable_plant() -> (StructuredPlantLfr, ValueSet) {
    let (mut p, vs) = desk1();
    let m = Mat::from_row_slice;
    set(&mut p, 0, 0, m(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    set(&mut p, 0, 1, m(2, 1, &[0.0, 1.0]));
    set(&mut p, 0, 4, m(2, 1, &[0.0, 1.0]));
    set(&mut p, 4, 0, m(1, 2, &[0.0, 1.0]));
    set(&mut p, 1, 0, m(1, 2, &[0.0, 1.0]));
    set(&mut p, 0, 3, m(2, 2, &[1.0, 0.0, 1.0, 0.0]));
    (p, vs)
}

/// Family on which diagonal scalings are strictly more conservative than full
/// block ones.
///
/// State `x1` obeys `x1' = -x1 + a w + wp1` with `w = d z`, `z = -x1` and
/// `d` in `[0, 1]`; it is neither controllable nor observable. A diagonal
/// scaling cannot tell `[0, 1]` from `[-1, 1]`, and for `d = -1`, `a >= 1`
/// the mode is not exponentially stable, so masked synthesis fails there. The
/// second state is unstable and controlled through `u`.
pub fn conservatism_family() -> PlantFamily {
    let part = PlantPartition { ns: 2, u1: 1, u2: 0, v1: 1, v2: 0, q: 2, p: 2, m: 1, k: 1 };
    let mut p0 = StructuredPlantLfr::zero(part);
    let m = Mat::from_row_slice;
    set(&mut p0, 0, 0, m(2, 2, &[-1.0, 0.0, 1.0, 0.5]));
    set(&mut p0, 0, 3, m(2, 2, &[1.0, 0.0, 1.0, 0.0]));
    set(&mut p0, 0, 4, m(2, 1, &[0.0, 1.0]));
    set(&mut p0, 1, 0, m(1, 2, &[-1.0, 0.0]));
    set(&mut p0, 3, 0, m(2, 2, &[1.0, 1.0, 0.0, 0.0]));
    set(&mut p0, 3, 4, m(2, 1, &[0.0, 1.0]));
    set(&mut p0, 4, 0, m(1, 2, &[0.0, 1.0]));
    set(&mut p0, 4, 3, m(1, 2, &[0.0, 1.0]));
    let mut p1 = StructuredPlantLfr::zero(part);
    set(&mut p1, 0, 1, m(2, 1, &[1.0, 0.0]));
    PlantFamily {
        part,
        sys0: p0.system_matrix().clone(),
        sys1: p1.system_matrix().clone(),
        vertices: vec![Mat::zeros(1, 1), Mat::from_element(1, 1, 1.0)],
    }
}

/// The uncertainty gain of [`desk1`] scaled by `a`.
pub fn desk1_family() -> PlantFamily {
    let (p, vs) = desk1();
    let part = *p.partition();
    let mut p0 = p.clone();
    set(&mut p0, 0, 1, Mat::zeros(2, 1));
    let mut p1 = StructuredPlantLfr::zero(part);
    set(&mut p1, 0, 1, p.block(0, 1));
    PlantFamily { part, sys0: p0.system_matrix().clone(), sys1: p1.system_matrix().clone(), vertices: vs.vertices().to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfr::validate_plant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_respect_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = InstanceDims::random(&mut rng);
            let (p, vs) = random_plant(&mut rng, &d);
            assert!(validate_plant(&p).is_valid());
            assert!(vs.contains_zero().unwrap());
            assert!(vs.is_triangular(d.u1, d.v1));
            let k = random_controller(&mut rng, &d);
            assert!(k.pattern_violations().is_empty());
            let (p, vs) = random_desk_instance(&mut rng);
            assert!(validate_plant(&p).is_valid());
            assert!(vs.is_triangular(p.partition().u1, p.partition().v1));
        }
        for (p, vs) in [desk1(), unstabilizable_plant()] {
            assert!(validate_plant(&p).is_valid());
            assert!(vs.contains_zero().unwrap());
        }
        for f in [conservatism_family(), desk1_family()] {
            for a in [0.0, 0.7, 2.0] {
                let (p, vs) = f.at(a).unwrap();
                assert!(validate_plant(&p).is_valid());
                assert!(vs.contains_zero().unwrap());
            }
        }
    }

    #[test]
    fn desk1_family_at_one_is_desk1() {
        let (p, _) = desk1();
        let (q, _) = desk1_family().at(1.0).unwrap();
        assert_eq!(p.system_matrix(), q.system_matrix());
    }
}
