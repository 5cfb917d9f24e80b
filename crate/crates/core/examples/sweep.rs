//! Compares full block and block-diagonal scalings along a plant family
//! where the diagonal ones eventually fail.

use liftsyn::instances::conservatism_family;
use liftsyn::scalings::ScalingMask;
use liftsyn::synthesis::SynthesisOptions;
use liftsyn::verify::conservatism_sweep;

fn main() {
    let family = conservatism_family();
    let grid: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
    let masks = vec![
        ("full".to_string(), None),
        ("block-diagonal".to_string(), Some(ScalingMask::block_diagonal(family.part.u_hat(), family.part.v_hat()))),
    ];
    let rows = conservatism_sweep(&family, &grid, &masks, &SynthesisOptions::default());
    println!("{:>5}  {:>15}  {:>12}  {:>10}", "a", "mask", "status", "gamma");
    for r in rows {
        let g = r.gamma.map(|g| format!("{g:.5}")).unwrap_or_else(|| "-".into());
        println!("{:>5.2}  {:>15}  {:>12}  {:>10}", r.a, r.mask_id, format!("{:?}", r.status), g);
    }
}
