//! JSON schema types and the command implementations behind the `liftsyn` binary.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::lfr::{
    close_loop_lifted, close_loop_original, validate_plant, ControllerPartition, GainScheduledController, PlantPartition,
    SchedulingMap, StructuredPlantLfr, TriangularMap, ValueSet, PLANT_COLS, PLANT_ROWS,
};
use crate::lifting::{build_hat_scaling, lift_plant};
use crate::matkit::{max_abs, Mat, SymMat};
use crate::scalings::ScalingMask;
use crate::synthesis::SynthesisOptions;
use crate::verify::{
    check_lifted_analysis, check_original_analysis, conservatism_sweep, run_pipeline, simulate, AnalysisReport, CellStatus,
    Excitation, ParamSchedule, PlantFamily, SimOptions,
};

/// Dense matrix in row-major order with explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for JsonMat {
    fn from(m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl JsonMat {
    pub fn to_mat(&self) -> Result<Mat> {
        if self.data.len() != self.rows * self.cols {
            return Err(dim_err!(
                "matrix declares {}x{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix has non-finite entries".into()));
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// `#[serde(with = "mat_serde")]` adapter storing a [`Mat`] as a [`JsonMat`].
pub mod mat_serde {
    use super::{JsonMat, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        JsonMat::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let j = JsonMat::deserialize(d)?;
        j.to_mat().map_err(serde::de::Error::custom)
    }
}

/// Same as [`mat_serde`] for a list of matrices.
pub mod mat_vec_serde {
    use super::{JsonMat, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
        v.iter().map(JsonMat::from).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Mat>, D::Error> {
        let j = Vec::<JsonMat>::deserialize(d)?;
        j.iter().map(|m| m.to_mat().map_err(serde::de::Error::custom)).collect()
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NO_RESULT: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Numerical(_) | Error::NotHurwitz(_) | Error::IllPosed(_) => EXIT_NUMERICAL,
        Error::Dimension(_) | Error::Invalid(_) | Error::Structure(_) | Error::Io(_) | Error::Json(_) => EXIT_INPUT,
    }
}

/// Environment variable selecting the default tolerance profile.
pub const TOL_PROFILE_VAR: &str = "LIFTSYN_TOL_PROFILE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TolProfile {
    Default,
    Strict,
    Loose,
}

impl TolProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "default" => Ok(TolProfile::Default),
            "strict" => Ok(TolProfile::Strict),
            "loose" => Ok(TolProfile::Loose),
            other => Err(Error::Invalid(format!("unknown tolerance profile '{other}' (default, strict, loose)"))),
        }
    }

    /// Profile named by [`TOL_PROFILE_VAR`], or the default one.
    pub fn from_env() -> Result<Self> {
        match std::env::var(TOL_PROFILE_VAR) {
            Ok(s) => Self::parse(&s),
            Err(_) => Ok(TolProfile::Default),
        }
    }

    pub fn synthesis_options(self) -> SynthesisOptions {
        let mut o = SynthesisOptions::default();
        match self {
            TolProfile::Default => {}
            TolProfile::Strict => {
                o.solver.gap_tol = 1e-9;
                o.solver.feas_tol = 1e-10;
            }
            TolProfile::Loose => {
                o.solver.gap_tol = 1e-6;
                o.solver.feas_tol = 1e-7;
            }
        }
        o
    }
}

/// One nonzero plant block, addressed by row and column names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub row: String,
    pub col: String,
    pub value: JsonMat,
}

fn block_index(names: &[&str], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::Invalid(format!("unknown block {what} '{name}', expected one of {names:?}")))
}

/// Plant built from named blocks; blocks not listed are zero.
pub fn plant_from_blocks(part: PlantPartition, blocks: &[BlockEntry]) -> Result<StructuredPlantLfr> {
    let mut p = StructuredPlantLfr::zero(part);
    for b in blocks {
        let r = block_index(&PLANT_ROWS, &b.row, "row")?;
        let c = block_index(&PLANT_COLS, &b.col, "column")?;
        p.set_block(r, c, &b.value.to_mat()?)?;
    }
    Ok(p)
}

/// Nonzero blocks of a plant.
pub fn blocks_of(p: &StructuredPlantLfr) -> Vec<BlockEntry> {
    let mut out = Vec::new();
    for (r, rn) in PLANT_ROWS.iter().enumerate() {
        for (c, cn) in PLANT_COLS.iter().enumerate() {
            let b = p.block(r, c);
            if b.len() > 0 && max_abs(&b) != 0.0 {
                out.push(BlockEntry { row: rn.to_string(), col: cn.to_string(), value: JsonMat::from(&b) });
            }
        }
    }
    out
}

/// Scaling restriction requested in a problem file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSpec {
    Full,
    BlockDiagonal,
    Custom(ScalingMask),
}

impl MaskSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(MaskSpec::Full),
            "block-diagonal" => Ok(MaskSpec::BlockDiagonal),
            other => Err(Error::Invalid(format!("unknown mask '{other}' (full, block-diagonal)"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MaskSpec::Full => "full".into(),
            MaskSpec::BlockDiagonal => "block-diagonal".into(),
            MaskSpec::Custom(m) => m.id.clone(),
        }
    }

    /// `None` for unrestricted scalings.
    pub fn resolve(&self, part: &PlantPartition) -> Option<ScalingMask> {
        match self {
            MaskSpec::Full => None,
            MaskSpec::BlockDiagonal => Some(ScalingMask::block_diagonal(part.u_hat(), part.v_hat())),
            MaskSpec::Custom(m) => Some(m.clone()),
        }
    }
}

/// Optional settings of a problem or family file. Unset tolerances come from
/// the tolerance profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOptions {
    pub eps_strict: Option<f64>,
    pub gap_tol: Option<f64>,
    pub feas_tol: Option<f64>,
    pub backoff: Option<f64>,
    pub seed: Option<u64>,
    /// Random hull points checked in addition to the vertices.
    pub samples: Option<usize>,
    pub mask: Option<MaskSpec>,
    /// Sweep grid `a0:a1:steps`.
    pub grid: Option<String>,
    pub masks: Option<Vec<MaskSpec>>,
}

impl ProblemOptions {
    pub fn synthesis_options(&self, profile: TolProfile, part: &PlantPartition) -> Result<SynthesisOptions> {
        let mut o = profile.synthesis_options();
        let positive = |name: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Invalid(format!("option {name} must be positive, got {v}")))
            }
        };
        if let Some(v) = self.eps_strict {
            o.eps_strict = positive("eps_strict", v)?;
        }
        if let Some(v) = self.gap_tol {
            o.solver.gap_tol = positive("gap_tol", v)?;
        }
        if let Some(v) = self.feas_tol {
            o.solver.feas_tol = positive("feas_tol", v)?;
        }
        if let Some(v) = self.backoff {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("option backoff must be nonnegative, got {v}")));
            }
            o.backoff = v;
        }
        o.mask = self.mask.as_ref().and_then(|m| m.resolve(part));
        Ok(o)
    }
}

/// Plant, value set and options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub partition: PlantPartition,
    pub blocks: Vec<BlockEntry>,
    pub vertices: Vec<JsonMat>,
    #[serde(default)]
    pub options: ProblemOptions,
}

impl ProblemFile {
    pub fn new(p: &StructuredPlantLfr, vs: &ValueSet) -> Self {
        Self {
            partition: *p.partition(),
            blocks: blocks_of(p),
            vertices: vs.vertices().iter().map(JsonMat::from).collect(),
            options: ProblemOptions::default(),
        }
    }

    /// The plant (zero pattern checked) and the value set (zero in the hull checked).
    pub fn build(&self) -> Result<(StructuredPlantLfr, ValueSet)> {
        let p = plant_from_blocks(self.partition, &self.blocks)?;
        let rep = validate_plant(&p);
        if !rep.is_valid() {
            return Err(Error::Structure(format!("plant violates the zero pattern: {:?}", rep.violations)));
        }
        let vertices = self.vertices.iter().map(JsonMat::to_mat).collect::<Result<Vec<_>>>()?;
        let vs = ValueSet::new(self.partition.u_hat(), self.partition.v_hat(), vertices)?;
        Ok((p, vs))
    }
}

/// Plant family `base + a slope` for sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub partition: PlantPartition,
    pub base: Vec<BlockEntry>,
    pub slope: Vec<BlockEntry>,
    pub vertices: Vec<JsonMat>,
    #[serde(default)]
    pub options: ProblemOptions,
}

impl FamilyFile {
    pub fn new(f: &PlantFamily) -> Result<Self> {
        let p0 = StructuredPlantLfr::new(f.part, f.sys0.clone())?;
        let p1 = StructuredPlantLfr::new(f.part, f.sys1.clone())?;
        Ok(Self {
            partition: f.part,
            base: blocks_of(&p0),
            slope: blocks_of(&p1),
            vertices: f.vertices.iter().map(JsonMat::from).collect(),
            options: ProblemOptions::default(),
        })
    }

    pub fn build(&self) -> Result<PlantFamily> {
        let p0 = plant_from_blocks(self.partition, &self.base)?;
        let p1 = plant_from_blocks(self.partition, &self.slope)?;
        Ok(PlantFamily {
            part: self.partition,
            sys0: p0.system_matrix().clone(),
            sys1: p1.system_matrix().clone(),
            vertices: self.vertices.iter().map(JsonMat::to_mat).collect::<Result<Vec<_>>>()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleFile {
    Triangular { u_hat: usize, v_hat: usize, q2: JsonMat, q3: JsonMat, qt1: JsonMat, u2: JsonMat, v2: JsonMat },
    Affine { u_hat: usize, v_hat: usize, rc1: usize, d0: JsonMat, coeffs: Vec<JsonMat> },
}

/// Controller system matrix with rows `(xc', zc1, zc2, u)`, columns
/// `(xc, wc1, wc2, y)`, and its scheduling function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub partition: ControllerPartition,
    pub system: JsonMat,
    pub schedule: ScheduleFile,
}

impl ControllerFile {
    pub fn new(k: &GainScheduledController) -> Self {
        let schedule = match k.schedule() {
            SchedulingMap::Triangular(t) => ScheduleFile::Triangular {
                u_hat: t.u_hat,
                v_hat: t.v_hat,
                q2: (&t.q2).into(),
                q3: (&t.q3).into(),
                qt1: (&t.qt1).into(),
                u2: (&t.u2).into(),
                v2: (&t.v2).into(),
            },
            SchedulingMap::Affine { d0, coeffs, u_hat, v_hat } => ScheduleFile::Affine {
                u_hat: *u_hat,
                v_hat: *v_hat,
                rc1: k.partition().rc1,
                d0: d0.into(),
                coeffs: coeffs.iter().map(JsonMat::from).collect(),
            },
        };
        Self { partition: *k.partition(), system: k.system_matrix().into(), schedule }
    }

    pub fn build(&self) -> Result<GainScheduledController> {
        let schedule = match &self.schedule {
            ScheduleFile::Triangular { u_hat, v_hat, q2, q3, qt1, u2, v2 } => SchedulingMap::Triangular(TriangularMap::new(
                *u_hat,
                *v_hat,
                q2.to_mat()?,
                q3.to_mat()?,
                qt1.to_mat()?,
                u2.to_mat()?,
                v2.to_mat()?,
            )?),
            ScheduleFile::Affine { u_hat, v_hat, rc1, d0, coeffs } => SchedulingMap::affine(
                d0.to_mat()?,
                coeffs.iter().map(JsonMat::to_mat).collect::<Result<Vec<_>>>()?,
                *u_hat,
                *v_hat,
                *rc1,
            )?,
        };
        GainScheduledController::new(self.partition, self.system.to_mat()?, schedule)
    }
}

/// Analysis certificate and the margins found when it was written.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateFile {
    pub gamma: f64,
    pub gamma_opt: Option<f64>,
    /// Lyapunov matrix on `(x, xc)`.
    pub x1cal: JsonMat,
    /// Passive scaling on the lifted channel.
    pub pcal: JsonMat,
    pub z: JsonMat,
    pub lifted: Option<AnalysisReport>,
    pub original: Option<AnalysisReport>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CertificateFile {
    pub fn parts(&self) -> Result<(SymMat, SymMat, SymMat, f64)> {
        if !self.gamma.is_finite() {
            return Err(Error::Invalid("gamma must be finite".into()));
        }
        Ok((SymMat::new(self.x1cal.to_mat()?)?, SymMat::new(self.pcal.to_mat()?)?, SymMat::new(self.z.to_mat()?)?, self.gamma))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Invalid(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses `a0:a1:steps` into `steps` evenly spaced points.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Invalid(format!("grid '{s}' is not of the form a0:a1:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a0: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let a1: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !a0.is_finite() || !a1.is_finite() || steps == 0 {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![a0]);
    }
    Ok((0..steps).map(|i| a0 + (a1 - a0) * i as f64 / (steps - 1) as f64).collect())
}

/// Summary printed by `synthesize` and `verify`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub gamma: f64,
    pub lifted: AnalysisReport,
    pub original: AnalysisReport,
    pub valid: bool,
}

fn report_error(err: &mut dyn Write, e: &Error) -> i32 {
    let _ = writeln!(err, "error: {e}");
    exit_code(e)
}

/// Lift, synthesize, reconstruct and verify; writes the controller to `out`
/// and the certificate to `cert` (default: `out` with extension
/// `.certificate.json`).
pub fn cmd_synthesize(problem: &Path, out: &Path, cert: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut run = || -> Result<i32> {
        let file: ProblemFile = read_json(problem)?;
        let (p, vs) = file.build()?;
        let opts = file.options.synthesis_options(TolProfile::from_env()?, p.partition())?;
        let samples = file.options.samples.unwrap_or(20);
        let seed = file.options.seed.unwrap_or(0);
        let res = run_pipeline(&p, &vs, &opts, samples, seed)?;
        let rec = &res.reconstruction;
        write_json(out, &ControllerFile::new(&rec.controller))?;
        let cert_path = cert.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("certificate.json"));
        let certificate = CertificateFile {
            gamma: rec.gamma,
            gamma_opt: Some(res.synthesis.gamma_opt),
            x1cal: rec.x1cal.as_mat().into(),
            pcal: rec.pcal.as_mat().into(),
            z: rec.z.as_mat().into(),
            lifted: Some(res.lifted.clone()),
            original: Some(res.original.clone()),
            notes: rec.notes.clone(),
        };
        write_json(&cert_path, &certificate)?;
        let valid = res.lifted.is_valid() && res.original.is_valid();
        let report = VerifyReport { gamma: rec.gamma, lifted: res.lifted, original: res.original, valid };
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        if valid {
            Ok(EXIT_OK)
        } else {
            writeln!(stderr, "error: reconstructed controller failed verification")?;
            Ok(EXIT_NUMERICAL)
        }
    };
    let res = run();
    res.unwrap_or_else(|e| report_error(stderr, &e))
}

/// Re-runs both analyses from serialized data. Exit 2 if the certificate
/// does not hold.
pub fn cmd_verify(problem: &Path, controller: &Path, cert: &Path, samples: usize, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut run = || -> Result<i32> {
        let file: ProblemFile = read_json(problem)?;
        let (p, vs) = file.build()?;
        let k = read_json::<ControllerFile>(controller)?.build()?;
        let (x1cal, pcal, z, gamma) = read_json::<CertificateFile>(cert)?.parts()?;
        let mut rng = ChaCha8Rng::seed_from_u64(file.options.seed.unwrap_or(0));
        let pts: Vec<Mat> = (0..samples).map(|_| vs.sample(&mut rng)).collect();
        let pl = lift_plant(&p)?;
        let cll = close_loop_lifted(&pl, &k)?;
        let lifted = check_lifted_analysis(&cll, &x1cal, &pcal, &z, gamma, &vs, &pts)?;
        let clo = close_loop_original(&p, &k)?;
        let ph = build_hat_scaling(&pcal, vs.u_hat(), vs.v_hat())?;
        let original = check_original_analysis(&clo, &x1cal, &ph, &z, gamma, &vs, &pts)?;
        let valid = lifted.is_valid() && original.is_valid();
        let report = VerifyReport { gamma, lifted, original, valid };
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        Ok(if valid { EXIT_OK } else { EXIT_INFEASIBLE })
    };
    let res = run();
    res.unwrap_or_else(|e| report_error(stderr, &e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Runs the sweep and writes the cell table to `csv_out` and one row per grid
/// point with a gamma column per mask to `plot_out`. Exit 4 if no cell solved.
pub fn cmd_sweep(
    family: &Path,
    grid: Option<&str>,
    masks: Option<&[MaskSpec]>,
    csv_out: &Path,
    plot_out: Option<&Path>,
    stderr: &mut dyn Write,
) -> i32 {
    let run = || -> Result<i32> {
        let file: FamilyFile = read_json(family)?;
        let fam = file.build()?;
        let grid_spec = grid.map(str::to_string).or_else(|| file.options.grid.clone()).unwrap_or_else(|| "0:1:11".into());
        let grid = parse_grid(&grid_spec)?;
        let default_masks = vec![MaskSpec::Full, MaskSpec::BlockDiagonal];
        let masks: Vec<MaskSpec> = masks.map(<[MaskSpec]>::to_vec).or_else(|| file.options.masks.clone()).unwrap_or(default_masks);
        let resolved: Vec<(String, Option<ScalingMask>)> = masks.iter().map(|m| (m.id(), m.resolve(&fam.part))).collect();
        let opts = file.options.synthesis_options(TolProfile::from_env()?, &fam.part)?;
        let rows = conservatism_sweep(&fam, &grid, &resolved, &opts);
        let mut w = csv::Writer::from_path(csv_out).map_err(csv_err)?;
        w.write_record(["a", "mask-id", "status", "gamma", "margin", "solve-time"]).map_err(csv_err)?;
        for r in &rows {
            let status = serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string();
            w.write_record([format!("{}", r.a), r.mask_id.clone(), status, fmt_opt(r.gamma), fmt_opt(r.margin), format!("{:.6}", r.solve_time)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        if let Some(path) = plot_out {
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            let header: Vec<String> = std::iter::once("a".to_string()).chain(resolved.iter().map(|m| format!("gamma[{}]", m.0))).collect();
            w.write_record(&header).map_err(csv_err)?;
            for (gi, a) in grid.iter().enumerate() {
                let cells = &rows[gi * resolved.len()..(gi + 1) * resolved.len()];
                let rec: Vec<String> = std::iter::once(format!("{a}")).chain(cells.iter().map(|r| fmt_opt(r.gamma))).collect();
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(if rows.iter().any(|r| r.status == CellStatus::Optimal) { EXIT_OK } else { EXIT_NO_RESULT })
    };
    let res = run();
    res.unwrap_or_else(|e| report_error(stderr, &e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// How `simulate` excites the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcitationKind {
    /// Free response from the all-ones closed-loop state.
    Initial,
    /// Impulse into the first performance input.
    Impulse,
    Noise,
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub seed: u64,
    pub horizon: f64,
    /// Hold time of each random parameter value.
    pub period: f64,
    pub excitation: ExcitationKind,
}

/// Summary written next to the trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimSummary {
    pub seed: u64,
    pub horizon: f64,
    pub step: f64,
    pub samples: usize,
    pub energy: f64,
    pub mean_power: f64,
    pub decay_rate: Option<f64>,
    pub envelope: Option<f64>,
}

/// Simulates the closed loop under a random piecewise-constant parameter;
/// writes the trajectory as CSV (`t, x0.., z_norm`) and a JSON summary.
pub fn cmd_simulate(
    problem: &Path,
    controller: &Path,
    args: &SimulateArgs,
    traj_out: &Path,
    summary_out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let mut run = || -> Result<i32> {
        let file: ProblemFile = read_json(problem)?;
        let (p, vs) = file.build()?;
        let k = read_json::<ControllerFile>(controller)?.build()?;
        if !(args.horizon >= 0.0) || !args.horizon.is_finite() || !(args.period > 0.0) {
            return Err(Error::Invalid("horizon must be nonnegative and period positive".into()));
        }
        let cl = close_loop_original(&p, &k)?;
        let excitation = match args.excitation {
            ExcitationKind::Initial => Excitation::Initial(vec![1.0; cl.n()]),
            ExcitationKind::Impulse => Excitation::Impulse(0),
            ExcitationKind::Noise => Excitation::Noise,
        };
        let opts = SimOptions {
            horizon: args.horizon,
            schedule: ParamSchedule::RandomSwitching { period: args.period },
            excitation,
            seed: args.seed,
            rate_samples: 20,
        };
        let rep = simulate(&cl, &vs, &opts)?;
        let mut w = csv::Writer::from_path(traj_out).map_err(csv_err)?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..cl.n()).map(|i| format!("x{i}")))
            .chain(std::iter::once("z_norm".to_string()))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        let tr = &rep.trajectory;
        for i in 0..tr.t.len() {
            let rec: Vec<String> = std::iter::once(format!("{:e}", tr.t[i]))
                .chain(tr.x[i].iter().map(|v| format!("{v:e}")))
                .chain(std::iter::once(format!("{:e}", tr.z_norm[i])))
                .collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        let summary = SimSummary {
            seed: args.seed,
            horizon: args.horizon,
            step: rep.step,
            samples: tr.t.len(),
            energy: rep.energy,
            mean_power: rep.mean_power,
            decay_rate: rep.decay_rate,
            envelope: rep.envelope,
        };
        let text = serde_json::to_string_pretty(&summary)?;
        if let Some(path) = summary_out {
            std::fs::write(path, format!("{text}\n"))?;
        }
        writeln!(stdout, "{text}")?;
        Ok(EXIT_OK)
    };
    let res = run();
    res.unwrap_or_else(|e| report_error(stderr, &e))
}
