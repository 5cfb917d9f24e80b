//! Synthesizes a gain-scheduled controller for the two-state reference plant
//! and prints the cost bound together with the certificate margins.

use liftsyn::instances::desk1;
use liftsyn::synthesis::SynthesisOptions;
use liftsyn::verify::run_pipeline;

fn main() -> liftsyn::Result<()> {
    let (plant, values) = desk1();
    let res = run_pipeline(&plant, &values, &SynthesisOptions::default(), 20, 0)?;
    let syn = &res.synthesis;
    println!("gamma_opt        {:.6}", syn.gamma_opt);
    println!("certified gamma  {:.6}", res.reconstruction.gamma);
    println!("scalar variables {}", syn.num_scalars);
    println!("solve time       {:.2} s", syn.solve_seconds);
    println!("lifted margin    {:.3e}", res.lifted.min_margin());
    println!("original margin  {:.3e}", res.original.min_margin());
    for note in &res.reconstruction.notes {
        println!("note: {note}");
    }
    let k = &res.reconstruction.controller;
    println!("controller: {} states, scheduling channel {}", k.partition().nc, k.partition().rc());
    Ok(())
}
