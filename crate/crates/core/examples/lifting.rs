//! Lifts a random structured plant and checks that closing the lifted
//! channel gives the same transfer function as closing the original one.

use liftsyn::instances::{random_plant, InstanceDims};
use liftsyn::lfr::{PlantBlocks, ValueSet};
use liftsyn::lifting::{delta_lift, lift_plant};
use liftsyn::matkit::{assemble, eye, Mat};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Frozen `(A, B, C, D)` after closing the scheduling channel with `delta`.
fn closed(h: &PlantBlocks, delta: &Mat) -> (Mat, Mat, Mat, Mat) {
    let b = assemble(&[vec![&h.b1p, &h.b1]]).unwrap();
    let d22 = assemble(&[vec![&h.b2p, &h.b2]]).unwrap();
    let c = assemble(&[vec![&h.c1p], vec![&h.c1]]).unwrap();
    let c2 = assemble(&[vec![&h.c2p], vec![&h.c2]]).unwrap();
    let d = assemble(&[vec![&h.dp, &h.d1], vec![&h.d2, &h.d3]]).unwrap();
    let m = delta * (eye(delta.ncols()) - &h.a22 * delta).try_inverse().unwrap();
    (&h.a11 + &h.a12 * &m * &h.a21, &b + &h.a12 * &m * &d22, &c + &c2 * &m * &h.a21, &d + &c2 * &m * &d22)
}

fn response(sys: &(Mat, Mat, Mat, Mat), w: f64) -> Vec<Complex64> {
    let cx = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
    let n = sys.0.nrows();
    let si = nalgebra::DMatrix::<Complex64>::identity(n, n) * Complex64::new(0.0, w) - cx(&sys.0);
    let g = cx(&sys.2) * si.lu().solve(&cx(&sys.1)).unwrap() + cx(&sys.3);
    g.iter().cloned().collect()
}

fn main() -> liftsyn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = InstanceDims::random(&mut rng);
    let (plant, values): (_, ValueSet) = random_plant(&mut rng, &d);
    let lifted = lift_plant(&plant)?;
    println!("original channel {} -> lifted channel {}", d.u1 + d.u2, lifted.rs());
    let v = values.sample(&mut rng);
    let orig = closed(&plant.hat_blocks(), &v);
    let lift = closed(lifted.blocks(), &delta_lift(&v, values.u_hat(), values.v_hat())?);
    for w in [0.1, 1.0, 10.0] {
        let err = response(&orig, w).iter().zip(response(&lift, w)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        println!("omega = {w:5.1}: max |G - G_lifted| = {err:.2e}");
    }
    Ok(())
}
