//! Simulates the certified closed loop under a randomly switching parameter
//! and prints a coarse trace of the state norm.

use liftsyn::instances::desk1;
use liftsyn::lfr::close_loop_original;
use liftsyn::synthesis::SynthesisOptions;
use liftsyn::verify::{run_pipeline, simulate, Excitation, ParamSchedule, SimOptions};

fn main() -> liftsyn::Result<()> {
    let (plant, values) = desk1();
    let res = run_pipeline(&plant, &values, &SynthesisOptions::default(), 0, 0)?;
    let cl = close_loop_original(&plant, &res.reconstruction.controller)?;
    let mut x0 = vec![0.0; cl.n()];
    x0[0] = 1.0;
    let opts = SimOptions {
        horizon: 20.0,
        schedule: ParamSchedule::RandomSwitching { period: 0.5 },
        excitation: Excitation::Initial(x0),
        seed: 3,
        rate_samples: 20,
    };
    let rep = simulate(&cl, &values, &opts)?;
    let tr = &rep.trajectory;
    let stride = (tr.t.len() / 10).max(1);
    for i in (0..tr.t.len()).step_by(stride) {
        let nx = tr.x[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("t = {:6.2}  |x| = {:.3e}  |z| = {:.3e}", tr.t[i], nx, tr.z_norm[i]);
    }
    println!("energy {:.5}, step {:.3e}", rep.energy, rep.step);
    if let (Some(a), Some(k)) = (rep.decay_rate, rep.envelope) {
        println!("decay |x(t)| <= {k:.2} |x(0)| exp(-{a:.3} t)");
    }
    Ok(())
}
