//! Analysis checks for closed loops, frozen-parameter performance,
//! time-varying simulation and the conservatism sweep.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::lfr::{validate_plant, ClosedLoopLfr, FrozenSystem, PlantPartition, Representation, StructuredPlantLfr, ValueSet};
use crate::lifting::{build_hat_scaling, lift_plant};
use crate::matkit::{blockdiag, eye, l_form, l_sub_form, max_abs, max_eig, solve_lyapunov, spectral_abscissa, Mat, SymMat, SysBlocks};
use crate::reconstruct::{reconstruct, ReconstructOptions};
use crate::scalings::{check_hat, check_passive, MarginReport};
use crate::synthesis::{synthesize, SynthesisOptions};

/// Margins of one analysis certificate; positive means satisfied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub ineq1: f64,
    pub ineq2: f64,
    pub lyapunov_pd: f64,
    pub z_pd: f64,
    pub trace: f64,
    pub membership: MarginReport,
}

impl AnalysisReport {
    pub fn min_margin(&self) -> f64 {
        [self.ineq1, self.ineq2, self.lyapunov_pd, self.z_pd, self.trace, self.membership.min_margin()]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_valid(&self) -> bool {
        self.min_margin() > 0.0
    }
}

fn sys_blocks(cl: &ClosedLoopLfr) -> SysBlocks {
    SysBlocks {
        a11: cl.a11.clone(),
        a12: cl.a12.clone(),
        a21: cl.a21.clone(),
        a22: cl.a22.clone(),
        b1: cl.b1.clone(),
        b2: cl.b2.clone(),
        c1: cl.c1.clone(),
        c2: cl.c2.clone(),
        d: cl.d.clone(),
    }
}

/// The two performance inequalities with the channel multiplier `mid` on `(w, z)`.
fn performance_forms(cl: &ClosedLoopLfr, x1cal: &SymMat, mid: &Mat, z: &SymMat, gamma: f64) -> Result<(f64, f64, f64)> {
    let n = cl.n();
    let q = cl.b1.ncols();
    let p = cl.c1.nrows();
    if x1cal.dim() != n || z.dim() != p {
        return Err(dim_err!("certificate does not match the closed loop ({n} states, {p} outputs)"));
    }
    let (rw, rz) = cl.channel_dims();
    if mid.nrows() != rw + rz {
        return Err(dim_err!("channel multiplier is {}x{}, channel needs {}", mid.nrows(), mid.ncols(), rw + rz));
    }
    let sys = sys_blocks(cl);
    let zinv = crate::matkit::inverse(z.as_mat(), "Z")?.inv;
    let x = blockdiag(&[&(-x1cal.as_mat()), &Mat::zeros(n, n)]);
    let s = blockdiag(&[&Mat::zeros(q, q), &zinv]);
    let f1 = l_sub_form(&x, mid, &s, &sys)?;
    let xl = crate::matkit::assemble(&[vec![&Mat::zeros(n, n), x1cal.as_mat()], vec![x1cal.as_mat(), &Mat::zeros(n, n)]])?;
    let sg = blockdiag(&[&(-eye(q) * gamma), &Mat::zeros(p, p)]);
    let f2 = l_form(&xl, mid, &sg, &sys)?;
    Ok((-f1.max_eig(), -f2.max_eig(), 1.0 - z.as_mat().trace()))
}

/// `(ineq1, ineq2)` margins of the lifted performance inequalities only.
pub fn lifted_performance_margins(cl: &ClosedLoopLfr, x1cal: &SymMat, pcal: &SymMat, z: &SymMat, gamma: f64) -> Result<(f64, f64)> {
    let r = pcal.dim();
    let zr = Mat::zeros(r, r);
    let mid = crate::matkit::assemble(&[vec![&zr, pcal.as_mat()], vec![pcal.as_mat(), &zr]])?;
    let (a, b, _) = performance_forms(cl, x1cal, &mid, z, gamma)?;
    Ok((a, b))
}

/// Checks the lifted-loop certificate `(X1cal, P, Z, gamma)`: both performance
/// inequalities, `X1cal > 0`, `Z > 0`, `tr Z < 1` and passivity of `P` on the
/// vertices and `samples`.
pub fn check_lifted_analysis(
    cl: &ClosedLoopLfr,
    x1cal: &SymMat,
    pcal: &SymMat,
    z: &SymMat,
    gamma: f64,
    vs: &ValueSet,
    samples: &[Mat],
) -> Result<AnalysisReport> {
    if cl.repr != Representation::Lifted {
        return Err(Error::Invalid("lifted analysis needs the lifted closed loop".into()));
    }
    let (ineq1, ineq2) = lifted_performance_margins(cl, x1cal, pcal, z, gamma)?;
    Ok(AnalysisReport {
        ineq1,
        ineq2,
        lyapunov_pd: x1cal.min_eig(),
        z_pd: z.min_eig(),
        trace: 1.0 - z.as_mat().trace(),
        membership: check_passive(pcal, &cl.schedule, vs, samples)?,
    })
}

/// Checks the original-loop certificate with the scaling `Ph` on `(w, wc, z, zc)`.
pub fn check_original_analysis(
    cl: &ClosedLoopLfr,
    x1cal: &SymMat,
    ph: &SymMat,
    z: &SymMat,
    gamma: f64,
    vs: &ValueSet,
    samples: &[Mat],
) -> Result<AnalysisReport> {
    if cl.repr != Representation::Original {
        return Err(Error::Invalid("original analysis needs the original closed loop".into()));
    }
    let (ineq1, ineq2, trace) = performance_forms(cl, x1cal, ph.as_mat(), z, gamma)?;
    Ok(AnalysisReport {
        ineq1,
        ineq2,
        lyapunov_pd: x1cal.min_eig(),
        z_pd: z.min_eig(),
        trace,
        membership: check_hat(ph, &cl.schedule, vs, samples)?,
    })
}

/// Squared H2 norm of a frozen system; requires a Hurwitz `A` and `D = 0`.
pub fn h2_norm_sq(sys: &FrozenSystem) -> Result<f64> {
    let alpha = spectral_abscissa(&sys.a);
    if alpha >= 0.0 {
        return Err(Error::NotHurwitz(alpha));
    }
    if max_abs(&sys.d) > 1e-12 * (1.0 + max_abs(&sys.b) * max_abs(&sys.c)) {
        return Err(Error::Invalid("frozen system has direct feedthrough; H2 norm is infinite".into()));
    }
    let w = solve_lyapunov(&sys.a.transpose(), &(&sys.b * sys.b.transpose()))?;
    Ok((&sys.c * w.as_mat() * sys.c.transpose()).trace())
}

/// Squared H2 norm of the closed loop frozen at `V`.
pub fn frozen_h2(cl: &ClosedLoopLfr, v: &Mat) -> Result<f64> {
    h2_norm_sq(&cl.freeze(v)?)
}

/// Optimal squared H2 norm of the plant with the scheduling channel removed,
/// by the two Riccati equations of output-feedback H2 control. Needs
/// `D1^T D1 > 0` and `D2 D2^T > 0`.
pub fn nominal_h2_optimum(p: &StructuredPlantLfr) -> Result<f64> {
    let h = p.hat_blocks();
    let (a, b1, b2, c1, c2, d12, d21) = (&h.a11, &h.b1p, &h.b1, &h.c1p, &h.c1, &h.d1, &h.d2);
    let r1 = d12.transpose() * d12;
    let r2 = d21 * d21.transpose();
    let r1i = crate::matkit::inverse(&r1, "D1^T D1")?.inv;
    let r2i = crate::matkit::inverse(&r2, "D2 D2^T")?.inv;
    let nq = c1.nrows();
    let nw = b1.ncols();
    // control Riccati with cross term removed
    let ax = a - b2 * &r1i * d12.transpose() * c1;
    let gx = b2 * &r1i * b2.transpose();
    let qx = c1.transpose() * (eye(nq) - d12 * &r1i * d12.transpose()) * c1;
    let x = crate::matkit::solve_care(&ax, &gx, &qx)?;
    // filter Riccati
    let ay = a - b1 * d21.transpose() * &r2i * c2;
    let gy = c2.transpose() * &r2i * c2;
    let qy = b1 * (eye(nw) - d21.transpose() * &r2i * d21) * b1.transpose();
    let y = crate::matkit::solve_care(&ay.transpose(), &gy, &qy)?;
    let f = -(&r1i * (b2.transpose() * x.as_mat() + d12.transpose() * c1));
    let l = -((y.as_mat() * c2.transpose() + b1 * d21.transpose()) * &r2i);
    // closed loop with the observer-based controller
    let ak = a + b2 * &f + &l * c2;
    let acl = crate::matkit::assemble(&[vec![a, &(b2 * &f)], vec![&(-(&l * c2)), &ak]])?;
    let bcl = crate::matkit::assemble(&[vec![b1], vec![&(-(&l * d21))]])?;
    let ccl = crate::matkit::assemble(&[vec![c1, &(d12 * &f)]])?;
    h2_norm_sq(&FrozenSystem { a: acl, b: bcl, c: ccl, d: Mat::zeros(nq, nw) })
}

/// How the parameter evolves during a simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ParamSchedule {
    Constant(#[serde(with = "crate::cli::mat_serde")] Mat),
    /// Fresh random point of the value set every `period` seconds.
    RandomSwitching { period: f64 },
}

/// Input applied during a simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Excitation {
    /// Free response from the given closed-loop state.
    Initial(Vec<f64>),
    /// Impulse into input channel `j`, i.e. initial state `B(V(0)) e_j`.
    Impulse(usize),
    /// Unit-intensity white noise, piecewise constant over each step.
    Noise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub schedule: ParamSchedule,
    pub excitation: Excitation,
    pub seed: u64,
    /// Number of hull samples used to bound the fastest frozen eigenvalue.
    pub rate_samples: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z_norm: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimReport {
    pub step: f64,
    pub trajectory: Trajectory,
    /// `int |z|^2 dt` over the horizon.
    pub energy: f64,
    /// `energy / horizon`.
    pub mean_power: f64,
    /// Least-squares rate `alpha` in `|x(t)| ~ K exp(-alpha t)` on the trailing 80%.
    pub decay_rate: Option<f64>,
    /// Smallest `K` with `|x(t)| <= K |x(0)| exp(-alpha t)` on the whole horizon.
    pub envelope: Option<f64>,
}

/// One RK4 step of `x' = A x + b w` together with `int |C x + D w|^2`.
fn rk4_step(sys: &FrozenSystem, bw: &DVector<f64>, dw: &DVector<f64>, x: &DVector<f64>, h: f64) -> (DVector<f64>, f64) {
    let f = |x: &DVector<f64>| &sys.a * x + bw;
    let g = |x: &DVector<f64>| (&sys.c * x + dw).norm_squared();
    let x2 = x + f(x) * (h / 2.0);
    let x3 = x + f(&x2) * (h / 2.0);
    let x4 = x + f(&x3) * h;
    let k1 = f(x);
    let k2 = f(&x2);
    let k3 = f(&x3);
    let k4 = f(&x4);
    let e = (g(x) + 2.0 * g(&x2) + 2.0 * g(&x3) + g(&x4)) * (h / 6.0);
    (x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0), e)
}

/// Integrates the closed loop under a piecewise-constant parameter with a
/// fixed RK4 step at most `0.1 / |lambda|_max`.
pub fn simulate(cl: &ClosedLoopLfr, vs: &ValueSet, opts: &SimOptions) -> Result<SimReport> {
    if !(opts.horizon >= 0.0) || !opts.horizon.is_finite() {
        return Err(Error::Invalid("horizon must be finite and non-negative".into()));
    }
    let n = cl.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut lam: f64 = 0.0;
    let probes = match &opts.schedule {
        ParamSchedule::Constant(v) => vec![v.clone()],
        ParamSchedule::RandomSwitching { .. } => vs.vertices_and_samples(opts.rate_samples, &mut rng),
    };
    for v in &probes {
        let a = cl.freeze(v)?.a;
        let ev = a.complex_eigenvalues();
        lam = ev.iter().map(|c| c.norm()).fold(lam, f64::max);
    }
    let period = match &opts.schedule {
        ParamSchedule::Constant(_) => opts.horizon.max(1.0),
        ParamSchedule::RandomSwitching { period } => *period,
    };
    if !(period > 0.0) {
        return Err(Error::Invalid("switching period must be positive".into()));
    }
    let hmax = if lam > 0.0 { 0.1 / lam } else { period };
    let per_period = (period / hmax).ceil().max(1.0) as usize;
    let h = period / per_period as f64;
    let steps = (opts.horizon / h).round() as usize;

    let param_at = |k: usize, rng: &mut ChaCha8Rng| -> Mat {
        match &opts.schedule {
            ParamSchedule::Constant(v) => v.clone(),
            ParamSchedule::RandomSwitching { .. } => {
                let _ = k;
                vs.sample(rng)
            }
        }
    };
    let mut v = param_at(0, &mut rng);
    let mut sys = cl.freeze(&v).map_err(|e| Error::IllPosed(format!("at t = 0: {e}")))?;
    let q = sys.b.ncols();
    let mut x = match &opts.excitation {
        Excitation::Initial(x0) => {
            if x0.len() != n {
                return Err(dim_err!("initial state has {} entries, closed loop has {n}", x0.len()));
            }
            DVector::from_column_slice(x0)
        }
        Excitation::Impulse(j) => {
            if *j >= q {
                return Err(dim_err!("impulse channel {j} out of range ({q} inputs)"));
            }
            sys.b.column(*j).into_owned()
        }
        Excitation::Noise => DVector::zeros(n),
    };
    let noise = matches!(opts.excitation, Excitation::Noise);
    let mut traj = Trajectory::default();
    let mut energy = 0.0;
    let push = |traj: &mut Trajectory, t: f64, x: &DVector<f64>, zn: f64| {
        traj.t.push(t);
        traj.x.push(x.iter().copied().collect());
        traj.z_norm.push(zn);
    };
    let zval = |sys: &FrozenSystem, x: &DVector<f64>, w: &DVector<f64>| (&sys.c * x + &sys.d * w).norm();
    let wzero = DVector::zeros(q);
    if steps > 0 {
        push(&mut traj, 0.0, &x, zval(&sys, &x, &wzero));
    }
    for k in 0..steps {
        if k > 0 && k % per_period == 0 {
            v = param_at(k / per_period, &mut rng);
            let t = k as f64 * h;
            sys = cl.freeze(&v).map_err(|e| Error::IllPosed(format!("at t = {t:.6}: {e}")))?;
        }
        let w = if noise {
            let s = 1.0 / h.sqrt();
            DVector::from_fn(q, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * s
            })
        } else {
            wzero.clone()
        };
        let bw = &sys.b * &w;
        let dw = &sys.d * &w;
        let (xn, e) = rk4_step(&sys, &bw, &dw, &x, h);
        let z1 = (&sys.c * &xn + &dw).norm_squared();
        energy += e;
        x = xn;
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!("state diverged at t = {:.6}", (k + 1) as f64 * h)));
        }
        push(&mut traj, (k + 1) as f64 * h, &x, z1.sqrt());
    }
    let (decay_rate, envelope) = decay_fit(&traj);
    let horizon = steps as f64 * h;
    Ok(SimReport {
        step: h,
        trajectory: traj,
        energy,
        mean_power: if horizon > 0.0 { energy / horizon } else { 0.0 },
        decay_rate,
        envelope,
    })
}

/// Least squares on `log |x|` over the trailing 80% of the samples.
fn decay_fit(traj: &Trajectory) -> (Option<f64>, Option<f64>) {
    let norms: Vec<f64> = traj.x.iter().map(|x| x.iter().map(|c| c * c).sum::<f64>().sqrt()).collect();
    if norms.len() < 5 || norms[0] == 0.0 {
        return (None, None);
    }
    let start = norms.len() / 5;
    let pts: Vec<(f64, f64)> =
        (start..norms.len()).filter(|&i| norms[i] > 1e-250).map(|i| (traj.t[i], norms[i].ln())).collect();
    if pts.len() < 3 {
        return (None, None);
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if stt == 0.0 {
        return (None, None);
    }
    let alpha = -sty / stt;
    let env = traj
        .t
        .iter()
        .zip(&norms)
        .map(|(&t, &nx)| nx / (norms[0] * (-alpha * t).exp()))
        .fold(0.0, f64::max);
    (Some(alpha), Some(env))
}

/// Sum over input channels of the impulse-response energy under one random
/// switching trajectory per channel, seeded from `seed`.
pub fn impulse_energy(cl: &ClosedLoopLfr, vs: &ValueSet, horizon: f64, period: f64, seed: u64) -> Result<f64> {
    let q = cl.b1.ncols();
    let mut total = 0.0;
    for j in 0..q {
        let opts = SimOptions {
            horizon,
            schedule: ParamSchedule::RandomSwitching { period },
            excitation: Excitation::Impulse(j),
            seed,
            rate_samples: 20,
        };
        total += simulate(cl, vs, &opts)?.energy;
    }
    Ok(total)
}

/// Plant family `sys0 + a sys1` with a fixed value set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantFamily {
    pub part: PlantPartition,
    #[serde(with = "crate::cli::mat_serde")]
    pub sys0: Mat,
    #[serde(with = "crate::cli::mat_serde")]
    pub sys1: Mat,
    #[serde(with = "crate::cli::mat_vec_serde")]
    pub vertices: Vec<Mat>,
}

impl PlantFamily {
    pub fn at(&self, a: f64) -> Result<(StructuredPlantLfr, ValueSet)> {
        if self.sys0.shape() != self.sys1.shape() {
            return Err(dim_err!("family matrices differ in shape"));
        }
        let p = StructuredPlantLfr::new(self.part, &self.sys0 + &self.sys1 * a)?;
        let rep = validate_plant(&p);
        if !rep.is_valid() {
            return Err(Error::Structure(format!("family member at a = {a} violates the zero pattern: {:?}", rep.violations)));
        }
        let vs = ValueSet::new(self.part.u_hat(), self.part.v_hat(), self.vertices.clone())?;
        Ok((p, vs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
    Error,
}

/// One cell of a sweep table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub mask_id: String,
    pub status: CellStatus,
    pub gamma: Option<f64>,
    pub margin: Option<f64>,
    pub solve_time: f64,
}

/// Runs synthesis on every `(a, mask)` cell in parallel; rows are ordered by
/// grid point, then mask. `None` masks mean full block scalings.
pub fn conservatism_sweep(
    family: &PlantFamily,
    grid: &[f64],
    masks: &[(String, Option<crate::scalings::ScalingMask>)],
    opts: &SynthesisOptions,
) -> Vec<SweepRow> {
    let cells: Vec<(f64, usize)> = grid.iter().flat_map(|&a| (0..masks.len()).map(move |i| (a, i))).collect();
    cells
        .par_iter()
        .map(|&(a, i)| {
            let (id, mask) = &masks[i];
            let mut o = opts.clone();
            o.mask = mask.clone();
            let t0 = std::time::Instant::now();
            let res = family.at(a).and_then(|(p, vs)| {
                let pl = lift_plant(&p)?;
                synthesize(&pl, &vs, &o)
            });
            let solve_time = t0.elapsed().as_secs_f64();
            let (status, gamma, margin) = match res {
                Ok(sol) => (CellStatus::Optimal, Some(sol.gamma), Some(sol.min_margin())),
                Err(Error::Infeasible(_)) => (CellStatus::Infeasible, None, None),
                Err(Error::Numerical(_)) => (CellStatus::NumericalFailure, None, None),
                Err(_) => (CellStatus::Error, None, None),
            };
            SweepRow { a, mask_id: id.clone(), status, gamma, margin, solve_time }
        })
        .collect()
}

/// Result of the whole pipeline: synthesis, reconstruction and both analyses.
#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub synthesis: crate::synthesis::SynthesisSolution,
    pub reconstruction: crate::reconstruct::Reconstruction,
    pub lifted: AnalysisReport,
    pub original: AnalysisReport,
    pub hat_scaling: SymMat,
}

/// Lift, synthesize, reconstruct, then re-check the lifted and original
/// closed loops with `samples` random hull points in addition to the vertices.
pub fn run_pipeline(
    p: &StructuredPlantLfr,
    vs: &ValueSet,
    opts: &SynthesisOptions,
    samples: usize,
    seed: u64,
) -> Result<PipelineResult> {
    let rep = validate_plant(p);
    if !rep.is_valid() {
        return Err(Error::Structure(format!("plant violates the zero pattern: {:?}", rep.violations)));
    }
    let pl = lift_plant(p)?;
    let sol = synthesize(&pl, vs, opts)?;
    let rec = reconstruct(&pl, &sol.vars, vs, &ReconstructOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Mat> = (0..samples).map(|_| vs.sample(&mut rng)).collect();
    let cll = crate::lfr::close_loop_lifted(&pl, &rec.controller)?;
    let lifted = check_lifted_analysis(&cll, &rec.x1cal, &rec.pcal, &rec.z, rec.gamma, vs, &pts)?;
    let clo = crate::lfr::close_loop_original(p, &rec.controller)?;
    let ph = build_hat_scaling(&rec.pcal, vs.u_hat(), vs.v_hat())?;
    let original = check_original_analysis(&clo, &rec.x1cal, &ph, &rec.z, rec.gamma, vs, &pts)?;
    Ok(PipelineResult { synthesis: sol, reconstruction: rec, lifted, original, hat_scaling: ph })
}

/// Largest eigenvalue of a symmetric matrix, exposed for report printing.
pub fn max_eigenvalue(m: &Mat) -> f64 {
    max_eig(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::desk1;
    use crate::lfr::{close_loop_original, GainScheduledController};

    fn stable_loop() -> (ClosedLoopLfr, ValueSet) {
        let (p, vs) = desk1();
        let part = p.partition();
        let k = GainScheduledController::zero(part.k, part.m, part.u_hat(), part.v_hat());
        (close_loop_original(&p, &k).unwrap(), vs)
    }

    /// Impulse energy of a single stable mode `x' = -a x + w`, `z = c x` is `c^2 / (2a)`.
    #[test]
    fn h2_of_first_order_system() {
        let sys = FrozenSystem {
            a: Mat::from_element(1, 1, -2.0),
            b: Mat::from_element(1, 1, 1.0),
            c: Mat::from_element(1, 1, 3.0),
            d: Mat::zeros(1, 1),
        };
        assert!((h2_norm_sq(&sys).unwrap() - 9.0 / 4.0).abs() < 1e-12);
        let bad = FrozenSystem { a: Mat::from_element(1, 1, 0.5), ..sys.clone() };
        assert!(matches!(h2_norm_sq(&bad), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn zero_state_stays_zero() {
        let (cl, vs) = stable_loop();
        let opts = SimOptions {
            horizon: 5.0,
            schedule: ParamSchedule::RandomSwitching { period: 0.1 },
            excitation: Excitation::Initial(vec![0.0; cl.n()]),
            seed: 1,
            rate_samples: 10,
        };
        let rep = simulate(&cl, &vs, &opts).unwrap();
        assert!(rep.trajectory.x.iter().all(|x| x.iter().all(|&c| c == 0.0)));
        assert_eq!(rep.energy, 0.0);
        assert!(rep.decay_rate.is_none());
    }

    #[test]
    fn frozen_decay_matches_spectral_abscissa() {
        let (cl, vs) = stable_loop();
        let v = Mat::from_element(1, 1, 0.3);
        let alpha = -spectral_abscissa(&cl.freeze(&v).unwrap().a);
        let opts = SimOptions {
            horizon: 40.0 / alpha,
            schedule: ParamSchedule::Constant(v),
            excitation: Excitation::Initial(vec![1.0, 0.5]),
            seed: 0,
            rate_samples: 0,
        };
        let rep = simulate(&cl, &vs, &opts).unwrap();
        let fit = rep.decay_rate.unwrap();
        assert!((fit - alpha).abs() < 0.1 * alpha, "fit {fit} vs {alpha}");
    }

    #[test]
    fn impulse_energy_matches_h2_for_constant_parameter() {
        let (cl, vs) = stable_loop();
        let v = Mat::from_element(1, 1, -0.2);
        let h2 = frozen_h2(&cl, &v).unwrap();
        let opts = SimOptions {
            horizon: 60.0,
            schedule: ParamSchedule::Constant(v),
            excitation: Excitation::Impulse(0),
            seed: 0,
            rate_samples: 0,
        };
        let e = simulate(&cl, &vs, &opts).unwrap().energy;
        assert!((e - h2).abs() < 1e-4 * h2, "{e} vs {h2}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let (cl, vs) = stable_loop();
        let opts = SimOptions {
            horizon: 3.0,
            schedule: ParamSchedule::RandomSwitching { period: 0.1 },
            excitation: Excitation::Noise,
            seed: 9,
            rate_samples: 10,
        };
        let a = simulate(&cl, &vs, &opts).unwrap();
        let b = simulate(&cl, &vs, &opts).unwrap();
        assert_eq!(a.trajectory.x, b.trajectory.x);
        assert_eq!(a.energy, b.energy);
    }

    #[test]
    fn zero_horizon_gives_empty_trajectory() {
        let (cl, vs) = stable_loop();
        let opts = SimOptions {
            horizon: 0.0,
            schedule: ParamSchedule::RandomSwitching { period: 0.1 },
            excitation: Excitation::Impulse(0),
            seed: 0,
            rate_samples: 5,
        };
        let rep = simulate(&cl, &vs, &opts).unwrap();
        assert!(rep.trajectory.t.is_empty());
    }
}
