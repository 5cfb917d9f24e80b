//! Solves a small LMI problem directly: the smallest `gamma` with
//! `A^T P + P A + C^T C < 0`, `P > 0` and `b^T P b < gamma`, which is the
//! squared H2 norm of `C (sI - A)^-1 b`.

use liftsyn::matkit::Mat;
use liftsyn::sdp::{schur_linearize, solve, LmiProblem, MatExpr, SolverOptions, VarKind};

fn main() -> liftsyn::Result<()> {
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -1.0]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);

    let mut lp = LmiProblem::new(1e-7);
    let ph = lp.add_matrix_variable("P", 2, 2, VarKind::Symmetric, None)?;
    let gh = lp.add_scalar_variable("gamma")?;
    let p = lp.expr(ph);
    let gamma = lp.expr(gh);
    let lyap = p.lmul(&a.transpose())?.he()?.add_const(&(c.transpose() * &c))?;
    lp.add_lmi("lyapunov", lyap)?;
    lp.add_lmi("P > 0", p.scale(-1.0))?;
    // b^T P b - gamma < 0 written as an affine block with a unit Schur factor
    let phi = p.lmul(&b.transpose())?.rmul(&b)?.sub(&gamma)?;
    let lin = schur_linearize(&phi, &MatExpr::zeros(1, 1), &MatExpr::identity(1))?;
    lp.add_lmi("cost", lin)?;
    lp.add_objective(&gamma)?;

    let res = solve(&lp, &SolverOptions::default())?;
    println!("status {:?} after {} iterations", res.status, res.iterations);
    println!("gamma = {:.6} (squared H2 norm of C (sI - A)^-1 B)", res.objective);
    println!("P =\n{}", lp.value(ph, &res.x));
    for (name, m) in lp.block_names().iter().zip(&res.margins) {
        println!("margin {name:>10}: {m:.3e}");
    }
    Ok(())
}
