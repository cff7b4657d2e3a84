//! Command-line front end: every workflow behind one executable, driven by
//! TOML config files and flags, emitting provenance-stamped CSV and JSON.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::absorber::{self, AbsorberError};
use crate::asymptotics::{self, AsymptoticsError};
use crate::fem::{write_field, FemError};
use crate::geometry::{build_waveguide, GeometryError, GeometrySpec};
use crate::mesh::{write_mesh, MeshError};
use crate::modes::{lambda_j, ModeBasis, ModesError};
use crate::numerics::{frobenius, log_log_fit};
use crate::scattering::{self, ScatteringError, ScatteringResult, SolveControls};
use crate::slab1d::{self, SlabError, SlabSpec};

const TOOL: &str = concat!("wgscat ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    /// Process exit code: 1 config, 2 mesh, 3 solver, 4 failed postcondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Geometry(_) | CliError::Modes(_) | CliError::Io(_) => {
                1
            }
            CliError::Mesh(_) => 2,
            CliError::Fem(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl From<ScatteringError> for CliError {
    fn from(err: ScatteringError) -> Self {
        match err {
            ScatteringError::Mesh(e) => e.into(),
            ScatteringError::Fem(e) => e.into(),
            ScatteringError::Modes(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AsymptoticsError> for CliError {
    fn from(err: AsymptoticsError) -> Self {
        match err {
            AsymptoticsError::Scattering(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AbsorberError> for CliError {
    fn from(err: AbsorberError) -> Self {
        match err {
            AbsorberError::Geometry(e) => e.into(),
            AbsorberError::Mesh(e) => e.into(),
            AbsorberError::Fem(e) => e.into(),
            AbsorberError::Modes(e) => e.into(),
            AbsorberError::Scattering(e) => e.into(),
            AbsorberError::NotDissipative(_) => CliError::Validation(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SlabError> for CliError {
    fn from(err: SlabError) -> Self {
        CliError::Config(err.to_string())
    }
}

/// Acoustic waveguide scattering and absorber design.
#[derive(Debug, Parser)]
#[command(name = "wgscat", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the transverse mode table: cutoffs, axial wavenumbers, decay rates.
    Modes(ModesArgs),
    /// Solve one configuration; dump the result as JSON plus optional mesh/field files.
    Solve(SolveArgs),
    /// Solve one configuration and print its scattering matrix as CSV.
    Smatrix(SmatrixArgs),
    /// Solve one configuration over a grid of dissipation strengths.
    Sweep(SweepArgs),
    /// Weak-dissipation model: lossless limit, first-order predictor, defect rates.
    AsymSmall(AsymArgs),
    /// Strong-dissipation model: sound-soft limit, correction, defect rates.
    AsymLarge(AsymArgs),
    /// Closed-form reference solutions.
    Oracle(OracleArgs),
    /// Split the branch resonator into its two half problems.
    Halfguide(HalfguideArgs),
    /// Synthesize a reflection-cancelling resonator and sweep its height.
    Absorber(AbsorberArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration (geometry, lambda, eta, mesh controls).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spectral parameter; overrides the config file.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Dissipation strength; overrides the config file.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Background mesh edge length.
    #[arg(long)]
    pub h: Option<f64>,
    /// Elements per skin depth near the dissipative interface.
    #[arg(long)]
    pub layers_per_skin: Option<usize>,
    /// Floor for graded edge lengths.
    #[arg(long)]
    pub min_h: Option<f64>,
    /// Transverse modes retained by the radiation condition.
    #[arg(long)]
    pub n_terms: Option<usize>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Worker threads for independent grid solves; results keep grid order.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mesh dump path.
    #[arg(long)]
    pub mesh_out: Option<PathBuf>,
    /// Field dump path for the excitation picked by --row.
    #[arg(long)]
    pub field_out: Option<PathBuf>,
    /// Excitation row whose field is dumped.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
}

#[derive(Debug, Args)]
pub struct SmatrixArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dissipation grid, comma separated, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eta_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AsymArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Smallest grid dissipation (log-spaced grid).
    #[arg(long)]
    pub eta_min: Option<f64>,
    /// Largest grid dissipation.
    #[arg(long)]
    pub eta_max: Option<f64>,
    /// Grid size.
    #[arg(long, default_value_t = 5)]
    pub eta_points: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(subcommand)]
    pub command: OracleCommand,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Transfer-matrix solution for a full-width dissipative slab.
    Slab(SlabOracleArgs),
}

#[derive(Debug, Args)]
pub struct SlabOracleArgs {
    /// Spectral parameter.
    #[arg(long)]
    pub lambda: f64,
    /// Left slab face.
    #[arg(long)]
    pub z1: f64,
    /// Right slab face.
    #[arg(long)]
    pub z2: f64,
    /// Dissipation coefficient inside the slab.
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    /// Dissipation strength.
    #[arg(long)]
    pub eta: f64,
    /// Field samples across [0, z2 + 1].
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HalfguideArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Resonator outer heights, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub l: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AbsorberArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Resonator distance index; default picks the smallest with crosstalk < 1e-3.
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Extra half-periods folded into the resonator offset.
    #[arg(long, default_value_t = 0)]
    pub k_offset: usize,
    /// Smallest swept resonator height.
    #[arg(long)]
    pub l_min: Option<f64>,
    /// Largest swept resonator height.
    #[arg(long)]
    pub l_max: Option<f64>,
    /// Sweep grid size.
    #[arg(long)]
    pub l_points: Option<usize>,
    /// Sweep the thin-neck variant with this neck width instead of the wide
    /// resonator; reports the grid minimum without refinement.
    #[arg(long)]
    pub ligament: Option<f64>,
}

/// On-disk run configuration. Flags override file values field by field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub controls: ControlsConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsConfig {
    pub target_h: Option<f64>,
    pub layers_per_skin: Option<usize>,
    pub min_h: Option<f64>,
    pub n_terms: Option<usize>,
}

/// Fully resolved run parameters after merging config file and flags.
#[derive(Debug, Clone)]
struct Resolved {
    spec: GeometrySpec,
    lambda: f64,
    eta: Option<f64>,
    controls: SolveControls,
}

impl Resolved {
    fn require_eta(&self) -> Result<f64, CliError> {
        self.eta
            .ok_or_else(|| CliError::Config("eta is required (--eta or config file)".into()))
    }
}

fn resolve(common: &CommonArgs) -> Result<Resolved, CliError> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let lambda = common
        .lambda
        .or(file.lambda)
        .ok_or_else(|| CliError::Config("lambda is required (--lambda or config file)".into()))?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(CliError::Config(format!("lambda must be finite and positive, got {lambda}")));
    }
    let eta = common.eta.or(file.eta);
    if let Some(e) = eta {
        if !(e.is_finite() && e >= 0.0) {
            return Err(CliError::Config(format!("eta must be finite and nonnegative, got {e}")));
        }
    }
    let mut controls = SolveControls::default();
    if let Some(h) = file.controls.target_h {
        controls.target_h = h;
    }
    if let Some(l) = file.controls.layers_per_skin {
        controls.layers_per_skin = l;
    }
    if let Some(m) = file.controls.min_h {
        controls.min_h = Some(m);
    }
    if let Some(n) = file.controls.n_terms {
        controls.n_terms = n;
    }
    if let Some(h) = common.h {
        controls.target_h = h;
    }
    if let Some(l) = common.layers_per_skin {
        controls.layers_per_skin = l;
    }
    if let Some(m) = common.min_h {
        controls.min_h = Some(m);
    }
    if let Some(n) = common.n_terms {
        controls.n_terms = n;
    }
    if !(controls.target_h.is_finite() && controls.target_h > 0.0) {
        return Err(CliError::Config(format!("mesh size must be positive, got {}", controls.target_h)));
    }
    if let Some(m) = controls.min_h {
        if !(m.is_finite() && m > 0.0) {
            return Err(CliError::Config(format!("min_h must be positive, got {m}")));
        }
    }
    if controls.n_terms == 0 {
        return Err(CliError::Config("n_terms must be at least 1".into()));
    }
    Ok(Resolved { spec: file.geometry, lambda, eta, controls })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let ratio = b / a;
    (0..n).map(|i| a * ratio.powf(i as f64 / (n - 1) as f64)).collect()
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Run `f` over `items` on up to `workers` threads; results land in input
/// order regardless of scheduling.
fn parallel_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no panicking holder")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

fn render_csv(comments: &[String], header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for line in comments {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn emit(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Provenance lines stamped at the top of every CSV: tool version plus the
/// fully resolved run parameters.
fn provenance(echo: &Value) -> Vec<String> {
    vec![TOOL.to_string(), format!("run: {echo}")]
}

fn echo_value(subcommand: &str, resolved: Option<&Resolved>, extra: Value) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("subcommand".into(), json!(subcommand));
    if let Some(r) = resolved {
        map.insert("lambda".into(), json!(r.lambda));
        if let Some(eta) = r.eta {
            map.insert("eta".into(), json!(eta));
        }
        map.insert(
            "controls".into(),
            json!({
                "target_h": r.controls.target_h,
                "layers_per_skin": r.controls.layers_per_skin,
                "min_h": r.controls.min_h,
                "n_terms": r.controls.n_terms,
            }),
        );
        map.insert(
            "geometry".into(),
            serde_json::to_value(&r.spec).expect("geometry specs serialize"),
        );
    }
    if let Value::Object(entries) = extra {
        map.extend(entries);
    }
    Value::Object(map)
}

fn complex_json(c: Complex64) -> Value {
    json!([c.re, c.im])
}

fn matrix_json(m: &nalgebra::DMatrix<Complex64>) -> Value {
    let rows: Vec<Value> = (0..m.nrows())
        .map(|r| Value::Array((0..m.ncols()).map(|c| complex_json(m[(r, c)])).collect()))
        .collect();
    Value::Array(rows)
}

fn json_report(echo: &Value, body: Value) -> String {
    let mut map = serde_json::Map::new();
    map.insert("tool".into(), json!(TOOL));
    map.insert("run".into(), echo.clone());
    if let Value::Object(entries) = body {
        map.extend(entries);
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("reports serialize");
    text.push('\n');
    text
}

fn smatrix_header(n: usize, n_l2: usize) -> Vec<String> {
    let mut header = vec!["eta".to_string(), "lambda".to_string()];
    for r in 0..n {
        for c in 0..n {
            header.push(format!("re_s_{r}_{c}"));
        }
    }
    for r in 0..n {
        for c in 0..n {
            header.push(format!("im_s_{r}_{c}"));
        }
    }
    header.push("energy_residual".into());
    header.push("symmetry_defect".into());
    for r in 0..n_l2 {
        header.push(format!("l2_row_{r}"));
    }
    header
}

fn smatrix_row(result: &ScatteringResult) -> Vec<f64> {
    let n = result.s.nrows();
    let mut row = vec![result.eta, result.lambda];
    for r in 0..n {
        for c in 0..n {
            row.push(result.s[(r, c)].re);
        }
    }
    for r in 0..n {
        for c in 0..n {
            row.push(result.s[(r, c)].im);
        }
    }
    row.push(result.energy_residual);
    row.push(result.symmetry_defect);
    row.extend(result.l2_inclusion.iter().copied());
    row
}

fn result_json(result: &ScatteringResult) -> Value {
    json!({
        "lambda": result.lambda,
        "eta": result.eta,
        "j_prop": result.j_prop,
        "n_ports": result.n_ports,
        "s": matrix_json(&result.s),
        "dissipation_overlap": matrix_json(&result.b),
        "energy_residual": result.energy_residual,
        "symmetry_defect": result.symmetry_defect,
        "l2_inclusion": result.l2_inclusion,
        "eigenvalue_moduli": result.eigenvalue_moduli(),
        "n_dofs": result.system.dof_map.positions.len(),
    })
}

/// Dispatch a parsed invocation. A bare invocation prints help and succeeds.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let Some(command) = cli.command else {
        let mut spec = <Cli as clap::CommandFactory>::command();
        let _ = spec.print_long_help();
        return Ok(());
    };
    match command {
        Command::Modes(args) => run_modes(args),
        Command::Solve(args) => run_solve(args),
        Command::Smatrix(args) => run_smatrix(args),
        Command::Sweep(args) => run_sweep(args),
        Command::AsymSmall(args) => run_asym_small(args),
        Command::AsymLarge(args) => run_asym_large(args),
        Command::Oracle(args) => match args.command {
            OracleCommand::Slab(slab) => run_oracle_slab(slab),
        },
        Command::Halfguide(args) => run_halfguide(args),
        Command::Absorber(args) => run_absorber(args),
    }
}

fn run_modes(args: ModesArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let basis = ModeBasis::new(resolved.lambda, resolved.controls.n_terms)?;
    let echo = echo_value("modes", Some(&resolved), json!({}));
    let mut comments = provenance(&echo);
    comments.push(format!("J = {}", basis.j_prop()));
    let header: Vec<String> =
        ["j", "cutoff", "axial_wavenumber", "decay_rate", "propagating"]
            .map(String::from)
            .to_vec();
    let rows: Vec<Vec<f64>> = (0..basis.n_terms())
        .map(|j| {
            let prop = j < basis.j_prop();
            vec![
                j as f64,
                lambda_j(j),
                if prop { basis.alpha(j) } else { 0.0 },
                if prop { 0.0 } else { basis.evanescent_rate(j) },
                if prop { 1.0 } else { 0.0 },
            ]
        })
        .collect();
    emit(&args.common.out, &render_csv(&comments, &header, &rows))?;
    if let Some(path) = &args.common.json {
        let body = json!({ "j_prop": basis.j_prop(), "n_terms": basis.n_terms() });
        write_text(path, &json_report(&echo, body))?;
    }
    Ok(())
}

fn solve_one(resolved: &Resolved) -> Result<ScatteringResult, CliError> {
    let eta = resolved.require_eta()?;
    let geometry = build_waveguide(&resolved.spec, resolved.lambda)?;
    Ok(scattering::scattering_matrix(&geometry, eta, &resolved.controls)?)
}

fn run_solve(args: SolveArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let result = solve_one(&resolved)?;
    if args.row >= result.fields.len() {
        return Err(CliError::Config(format!(
            "--row {} out of range: {} excitations",
            args.row,
            result.fields.len()
        )));
    }
    let echo = echo_value("solve", Some(&resolved), json!({ "row": args.row }));
    if let Some(path) = &args.mesh_out {
        write_text(path, &write_mesh(&result.mesh))?;
    }
    if let Some(path) = &args.field_out {
        write_text(path, &write_field(&result.mesh, &result.fields[args.row]))?;
    }
    let report = json_report(&echo, result_json(&result));
    match &args.common.json {
        Some(path) => write_text(path, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn run_smatrix(args: SmatrixArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let result = solve_one(&resolved)?;
    let echo = echo_value("smatrix", Some(&resolved), json!({}));
    let header = smatrix_header(result.s.nrows(), result.l2_inclusion.len());
    let text = render_csv(&provenance(&echo), &header, &[smatrix_row(&result)]);
    emit(&args.common.out, &text)?;
    if let Some(path) = &args.common.json {
        write_text(path, &json_report(&echo, result_json(&result)))?;
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    if args.eta_grid.is_empty() {
        return Err(CliError::Config("eta grid must not be empty".into()));
    }
    if args.eta_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(CliError::Config("eta grid entries must be finite and nonnegative".into()));
    }
    if !strictly_increasing(&args.eta_grid) {
        return Err(CliError::Config("eta grid must be strictly increasing".into()));
    }
    let geometry = build_waveguide(&resolved.spec, resolved.lambda)?;
    let solved = parallel_map(args.common.workers, &args.eta_grid, |&eta| {
        scattering::scattering_matrix(&geometry, eta, &resolved.controls)
    });
    let mut rows = Vec::with_capacity(solved.len());
    let mut header = None;
    for result in solved {
        let result = result?;
        header.get_or_insert_with(|| {
            smatrix_header(result.s.nrows(), result.l2_inclusion.len())
        });
        rows.push(smatrix_row(&result));
    }
    let echo = echo_value(
        "sweep",
        Some(&resolved),
        json!({ "eta_grid": args.eta_grid, "workers": args.common.workers }),
    );
    let header = header.expect("at least one grid point");
    emit(&args.common.out, &render_csv(&provenance(&echo), &header, &rows))?;
    Ok(())
}

fn rate_header() -> Vec<String> {
    ["eta", "defect0", "defect1", "interior_l2"].map(String::from).to_vec()
}

fn asym_grid(args: &AsymArgs, default_min: f64, default_max: f64) -> Result<Vec<f64>, CliError> {
    let lo = args.eta_min.unwrap_or(default_min);
    let hi = args.eta_max.unwrap_or(default_max);
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(CliError::Config(format!(
            "dissipation grid needs 0 < eta_min < eta_max, got [{lo}, {hi}]"
        )));
    }
    if args.eta_points < 2 {
        return Err(CliError::Config("eta_points must be at least 2".into()));
    }
    Ok(logspace(lo, hi, args.eta_points))
}

fn run_asym_small(args: AsymArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let etas = asym_grid(&args, 1e-3, 1e-1)?;
    let geometry = build_waveguide(&resolved.spec, resolved.lambda)?;
    let model = asymptotics::small_eta_model(&geometry, &resolved.controls)?;
    let solved = parallel_map(args.common.workers, &etas, |&eta| {
        scattering::scattering_matrix(&geometry, eta, &resolved.controls)
    });
    let mut rows = Vec::with_capacity(etas.len());
    for (i, result) in solved.into_iter().enumerate() {
        let result = result?;
        let defect0 = frobenius(&(&result.s - model.s0()));
        let defect1 = frobenius(&(&result.s - model.predict(etas[i])));
        let interior = result.l2_inclusion.first().copied().unwrap_or(0.0);
        rows.push(vec![etas[i], defect0, defect1, interior]);
    }
    let slope0 = log_log_fit(&etas, &rows.iter().map(|r| r[1]).collect::<Vec<_>>()).0;
    let slope1 = log_log_fit(&etas, &rows.iter().map(|r| r[2]).collect::<Vec<_>>()).0;
    let echo = echo_value(
        "asym-small",
        Some(&resolved),
        json!({ "eta_grid": etas, "workers": args.common.workers }),
    );
    let mut comments = provenance(&echo);
    comments.push(format!("slope0 = {slope0}"));
    comments.push(format!("slope1 = {slope1}"));
    emit(&args.common.out, &render_csv(&comments, &rate_header(), &rows))?;
    if let Some(path) = &args.common.json {
        let body = json!({
            "s_limit": matrix_json(model.s0()),
            "dissipation_overlap": matrix_json(model.b0()),
            "slope0": slope0,
            "slope1": slope1,
        });
        write_text(path, &json_report(&echo, body))?;
    }
    Ok(())
}

fn run_asym_large(args: AsymArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let etas = asym_grid(&args, 1e3, 1e6)?;
    let geometry = build_waveguide(&resolved.spec, resolved.lambda)?;
    let model = asymptotics::large_eta_model(&geometry, &resolved.controls)?;
    let rates = asymptotics::large_eta_rates(&geometry, &model, &etas, &resolved.controls)?;
    let rows: Vec<Vec<f64>> = (0..etas.len())
        .map(|i| vec![etas[i], rates.defect0[i], rates.defect1[i], rates.interior_l2[i]])
        .collect();
    let identity_defect = asymptotics::correction_identity_defect(&model);
    let echo = echo_value(
        "asym-large",
        Some(&resolved),
        json!({ "eta_grid": etas, "workers": args.common.workers }),
    );
    let mut comments = provenance(&echo);
    comments.push(format!("slope0 = {}", rates.slope0));
    comments.push(format!("slope1 = {}", rates.slope1));
    comments.push(format!("slope_interior = {}", rates.slope_interior));
    comments.push(format!("correction_identity_defect = {identity_defect}"));
    emit(&args.common.out, &render_csv(&comments, &rate_header(), &rows))?;
    if let Some(path) = &args.common.json {
        let body = json!({
            "s_limit": matrix_json(model.s_inf()),
            "correction": matrix_json(&model.s_prime),
            "flux_overlap": matrix_json(&model.e),
            "slope0": rates.slope0,
            "slope1": rates.slope1,
            "slope_interior": rates.slope_interior,
            "correction_identity_defect": identity_defect,
        });
        write_text(path, &json_report(&echo, body))?;
    }
    Ok(())
}

fn run_oracle_slab(args: SlabOracleArgs) -> Result<(), CliError> {
    let spec = SlabSpec::new(args.lambda, args.z1, args.z2, args.b0)?;
    let r = slab1d::slab_reflection(spec, args.eta)?;
    let energy_defect = slab1d::energy_check(spec, args.eta)?;
    if energy_defect > 1e-10 {
        return Err(CliError::Validation(format!(
            "flux balance defect {energy_defect:e} exceeds 1e-10"
        )));
    }
    let field = slab1d::slab_field(spec, args.eta)?;
    let echo = json!({
        "subcommand": "oracle slab",
        "lambda": args.lambda,
        "z1": args.z1,
        "z2": args.z2,
        "b0": args.b0,
        "eta": args.eta,
        "samples": args.samples,
    });
    let mut comments = provenance(&echo);
    comments.push(format!("R = {} {}", r.re, r.im));
    comments.push(format!("energy_defect = {energy_defect}"));
    let header = ["z", "re_u", "im_u"].map(String::from).to_vec();
    let rows: Vec<Vec<f64>> = linspace(0.0, args.z2 + 1.0, args.samples.max(2))
        .into_iter()
        .map(|z| {
            let u = field.evaluate(z);
            vec![z, u.re, u.im]
        })
        .collect();
    emit(&args.out, &render_csv(&comments, &header, &rows))?;
    if let Some(path) = &args.json {
        let body = json!({
            "r": complex_json(r),
            "energy_defect": energy_defect,
            "interior_l2": field.interior_l2_sq().sqrt(),
        });
        write_text(path, &json_report(&echo, body))?;
    }
    Ok(())
}

fn run_halfguide(args: HalfguideArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    if args.l.is_empty() {
        return Err(CliError::Config("need at least one height".into()));
    }
    let solved = parallel_map(args.common.workers, &args.l, |&l| {
        absorber::half_guide_coefficients(l, resolved.lambda, &resolved.controls)
    });
    let mut rows = Vec::with_capacity(args.l.len());
    for (i, hg) in solved.into_iter().enumerate() {
        let hg = hg?;
        for (name, value) in [("even", hg.r_even), ("odd", hg.r_odd)] {
            let off = (value.norm() - 1.0).abs();
            if off > 1e-3 {
                return Err(CliError::Validation(format!(
                    "lossless half problem ({name} cut, L = {}) drifted off the unit circle by {off:e}",
                    args.l[i]
                )));
            }
        }
        rows.push(vec![
            args.l[i],
            hg.r_even.re,
            hg.r_even.im,
            hg.r_odd.re,
            hg.r_odd.im,
            hg.reflection().re,
            hg.reflection().im,
            hg.transmission().re,
            hg.transmission().im,
        ]);
    }
    let echo = echo_value(
        "halfguide",
        Some(&resolved),
        json!({ "l": args.l, "workers": args.common.workers }),
    );
    let header = [
        "l",
        "re_r_even",
        "im_r_even",
        "re_r_odd",
        "im_r_odd",
        "re_reflection",
        "im_reflection",
        "re_transmission",
        "im_transmission",
    ]
    .map(String::from)
    .to_vec();
    emit(&args.common.out, &render_csv(&provenance(&echo), &header, &rows))?;
    Ok(())
}

fn run_absorber(args: AbsorberArgs) -> Result<(), CliError> {
    let resolved = resolve(&args.common)?;
    let eta = resolved.require_eta()?;
    let mut design = absorber::design_absorber(
        &resolved.spec,
        resolved.lambda,
        eta,
        args.k_offset,
        args.kappa,
        &resolved.controls,
    )?;
    let phase_defect =
        absorber::sigma_phase_defect(design.base_reflection, resolved.lambda, design.sigma);
    if phase_defect > 1e-12 {
        return Err(CliError::Validation(format!(
            "offset synthesis left a phase defect of {phase_defect:e}"
        )));
    }
    let period = PI / resolved.lambda.sqrt();
    let grid = match (args.l_min, args.l_max) {
        (Some(lo), Some(hi)) => {
            if !(hi > lo) {
                return Err(CliError::Config("--l-max must exceed --l-min".into()));
            }
            linspace(lo, hi, args.l_points.unwrap_or(61))
        }
        (None, None) => match args.ligament {
            Some(_) => absorber::ligament_length_grid(
                resolved.lambda,
                0,
                args.l_points.unwrap_or(25),
            ),
            None => match args.l_points {
                Some(n) => linspace(1.05, 1.05 + 2.0 * period, n),
                None => absorber::default_length_grid(resolved.lambda),
            },
        },
        _ => return Err(CliError::Config("--l-min and --l-max go together".into())),
    };
    let variant = if args.ligament.is_some() { "ligament" } else { "resonator" };
    if let Some(width) = args.ligament {
        let solved = parallel_map(args.common.workers, &grid, |&length| -> Result<
            Complex64,
            CliError,
        > {
            let geometry = absorber::build_ligament_absorber(&design, width, length)?;
            Ok(scattering::scattering_matrix(&geometry, eta, &resolved.controls)?.s[(0, 0)])
        });
        let mut samples = Vec::with_capacity(grid.len());
        for (i, r) in solved.into_iter().enumerate() {
            samples.push((grid[i], r?));
        }
        design.best = samples
            .iter()
            .map(|&(l, r)| (l, r.norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        design.samples = samples;
    } else {
        absorber::l_sweep(&mut design, &grid, &resolved.controls)?;
    }
    let echo = echo_value(
        "absorber",
        Some(&resolved),
        json!({
            "k_offset": args.k_offset,
            "kappa": design.kappa,
            "ligament": args.ligament,
            "l_grid_len": grid.len(),
            "workers": args.common.workers,
        }),
    );
    let (best_l, best_mod) = design.best.expect("sweep fills the optimum");
    let mut comments = provenance(&echo);
    comments.push(format!("sigma = {}", design.sigma));
    comments.push(format!("kappa = {}", design.kappa));
    comments.push(format!("crosstalk = {}", design.crosstalk));
    comments.push(format!("best: L = {best_l}, |R| = {best_mod}"));
    let header = ["l", "re_r", "im_r", "neg_log_abs_r"].map(String::from).to_vec();
    let rows: Vec<Vec<f64>> = design
        .samples
        .iter()
        .map(|&(l, r)| vec![l, r.re, r.im, -r.norm().ln()])
        .collect();
    emit(&args.common.out, &render_csv(&comments, &header, &rows))?;
    if let Some(path) = &args.common.json {
        let body = json!({
            "variant": variant,
            "base_reflection": complex_json(design.base_reflection),
            "alpha": design.alpha,
            "beta": design.beta,
            "sigma": design.sigma,
            "k_offset": design.k_offset,
            "kappa": design.kappa,
            "crosstalk": design.crosstalk,
            "phase_defect": phase_defect,
            "best": { "l": best_l, "modulus": best_mod },
            "dip_width_at_half": absorber::dip_width(&design.samples, 0.5),
        });
        write_text(path, &json_report(&echo, body))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_schema_round_trips_every_section() {
        let text = r#"
lambda = 6.316546816697189
eta = 1.5

[controls]
target_h = 0.04
layers_per_skin = 3
min_h = 0.001
n_terms = 12

[geometry]
truncation_z = 3.0

[geometry.inclusion.shape]
kind = "disk"
center = { z = 1.5, y = 0.5 }
radius = 0.3

[geometry.inclusion.b]
kind = "constant"
value = 2.0

[geometry.branch]
attach_z0 = 2.0
depth = 0.8
"#;
        let parsed: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(parsed.lambda, Some(6.316546816697189));
        assert_eq!(parsed.eta, Some(1.5));
        assert_eq!(parsed.controls.target_h, Some(0.04));
        assert_eq!(parsed.controls.n_terms, Some(12));
        let inclusion = parsed.geometry.inclusion.expect("inclusion parsed");
        assert!(matches!(
            inclusion.shape,
            crate::geometry::Shape::Disk { radius, .. } if radius == 0.3
        ));
        let branch = parsed.geometry.branch.expect("branch parsed");
        assert_eq!(branch.width, None);
        assert_eq!(branch.depth, 0.8);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let err = toml::from_str::<FileConfig>("lambdaa = 2.0").unwrap_err();
        assert!(err.to_string().contains("lambdaa"));
    }

    #[test]
    fn flags_override_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "lambda = 2.0\neta = 1.0\n[controls]\ntarget_h = 0.1\n").unwrap();
        let common = CommonArgs {
            config: Some(path),
            lambda: Some(3.0),
            eta: None,
            h: Some(0.05),
            layers_per_skin: None,
            min_h: None,
            n_terms: None,
            out: None,
            json: None,
            workers: 1,
        };
        let resolved = resolve(&common).unwrap();
        assert_eq!(resolved.lambda, 3.0);
        assert_eq!(resolved.eta, Some(1.0));
        assert_eq!(resolved.controls.target_h, 0.05);
        assert_eq!(resolved.controls.n_terms, SolveControls::default().n_terms);
    }

    #[test]
    fn grids_are_ordered_and_inclusive() {
        let lin = linspace(1.0, 2.0, 5);
        assert_eq!(lin, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        let log = logspace(1e-3, 1e-1, 3);
        assert!((log[1] - 1e-2).abs() < 1e-16);
        assert!(strictly_increasing(&log));
        assert!(!strictly_increasing(&[1.0, 1.0]));
    }

    #[test]
    fn parallel_map_keeps_input_order() {
        let items: Vec<usize> = (0..37).collect();
        let doubled = parallel_map(4, &items, |&i| 2 * i);
        assert_eq!(doubled, items.iter().map(|i| 2 * i).collect::<Vec<_>>());
    }

    #[test]
    fn csv_renderer_is_plain_and_stable() {
        let text = render_csv(
            &["tool x".into()],
            &["a".into(), "b".into()],
            &[vec![0.1, 2.0], vec![0.30000000000000004, -1.5]],
        );
        assert_eq!(text, "# tool x\na,b\n0.1,2\n0.30000000000000004,-1.5\n");
    }
}
