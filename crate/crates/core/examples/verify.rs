//! Re-checks a synthesized controller: both analysis certificates, frozen
//! H2 costs across the value set and randomly switching simulations.

use liftsyn::instances::desk1;
use liftsyn::lfr::close_loop_original;
use liftsyn::synthesis::SynthesisOptions;
use liftsyn::verify::{frozen_h2, impulse_energy, run_pipeline};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> liftsyn::Result<()> {
    let (plant, values) = desk1();
    let res = run_pipeline(&plant, &values, &SynthesisOptions::default(), 50, 1)?;
    let gamma = res.reconstruction.gamma;
    println!("lifted analysis:   valid {} (min margin {:.3e})", res.lifted.is_valid(), res.lifted.min_margin());
    println!("original analysis: valid {} (min margin {:.3e})", res.original.is_valid(), res.original.min_margin());

    let cl = close_loop_original(&plant, &res.reconstruction.controller)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let worst = values
        .vertices_and_samples(50, &mut rng)
        .iter()
        .map(|v| frozen_h2(&cl, v))
        .collect::<liftsyn::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("worst frozen H2^2  {worst:.5}  (bound {gamma:.5})");
    for seed in 0..5 {
        let e = impulse_energy(&cl, &values, 30.0, 1.0, seed)?;
        println!("switching run {seed}: impulse energy {e:.5}");
    }
    Ok(())
}
