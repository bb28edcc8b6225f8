//! The `oswi` command line: experiment drivers that tie calibration,
//! dynamics, propagation, and training together and emit plot-ready
//! CSV/JSON.
//!
//! Activation grammar (shared by every `--activation` flag):
//!
//! ```text
//! tanh | erf | arctan | arctann | gd
//! softsign:<k>                       e.g. softsign:2
//! scale:<alpha>:<spec>               e.g. scale:100:tanh      -> tanh(100 x)
//! sum:<c1>*<spec1>+<c2>*<spec2>+...  e.g. sum:1*tanh+1*softsign:1
//! ```
//!
//! Sums cannot be nested; terms may carry their own `scale:`.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 I/O or
//! external failure. Every subcommand takes `--seed` and is end-to-end
//! deterministic given it. `--json` prints a single machine-parseable
//! object; numbers in JSON carry 17 significant digits. Flag values win
//! over `--config <file>` entries, which win over built-in defaults.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::activations::ActivationSpec;
use crate::calibration::{self, CalibrationError};
use crate::data::{self, DataError, DatasetKind};
use crate::dynamics;
use crate::initializers::{InitKind, InitScheme};
use crate::network::{self, NetworkConfig, TrainConfig};
use crate::propagation::{self, X0Dist};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Failures routed to exit codes.
#[derive(Debug)]
enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// I/O, dataset, or network trouble (exit 3).
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) => m,
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::activations::ActivationError> for CliError {
    fn from(e: crate::activations::ActivationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<dynamics::DynamicsError> for CliError {
    fn from(e: dynamics::DynamicsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::propagation::PropagationError> for CliError {
    fn from(e: crate::propagation::PropagationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::TooLarge { .. } | DataError::InvalidFraction(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<network::NetworkError> for CliError {
    fn from(e: network::NetworkError) -> Self {
        match e {
            network::NetworkError::Data(d) => d.into(),
            network::NetworkError::WeightIo(w) => CliError::Io(w.to_string()),
            network::NetworkError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "oswi",
    version,
    about = "Activation-aware weight initialization for odd-sigmoid networks"
)]
struct Cli {
    /// Master seed; every subcommand is deterministic given it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Emit a single JSON object instead of the human-readable summary.
    #[arg(long, global = true)]
    json: bool,
    /// JSON config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute sigma* and the learning-rate band for a target negative rate.
    Calibrate(CalibrateArgs),
    /// Emit iteration traces and fixed points of x -> f(a x).
    Bifurcate(BifurcateArgs),
    /// Run the scalar and/or feedforward signal simulators.
    Propagate(PropagateArgs),
    /// Train one MLP configuration and write its report.
    Train(TrainArgs),
    /// Sweep a learning-rate grid across initializations and scales.
    SweepLr(SweepLrArgs),
    /// Download a dataset with SHA-256 manifest verification.
    Fetch(FetchArgs),
}

/// Values pulled from the optional `--config` JSON object.
struct FileConfig(serde_json::Value);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self(serde_json::Value::Null)),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                let value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Ok(Self(value))
            }
        }
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(|v| v.as_f64())
    }

    fn usize(&self, key: &str) -> Option<usize> {
        self.0.get(key).and_then(|v| v.as_u64()).map(|v| v as usize)
    }

    fn string(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(|v| v.as_str()).map(|s| s.to_string())
    }
}

/// Serializes with exactly 17 significant digits on every float.
struct SigDigits17;

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits17);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    String::from_utf8(out).expect("serde_json emits utf-8")
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("oswi: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args, &cfg),
        Command::Bifurcate(args) => cmd_bifurcate(args, &cfg, cli.seed, cli.json),
        Command::Propagate(args) => cmd_propagate(args, &cfg, cli.seed, cli.json),
        Command::Train(args) => cmd_train(args, &cfg, cli.seed, cli.json),
        Command::SweepLr(args) => cmd_sweep_lr(args, &cfg, cli.seed, cli.json),
        Command::Fetch(args) => cmd_fetch(args, &cfg, cli.json),
    }
}

fn parse_activation(s: &str) -> Result<ActivationSpec, CliError> {
    Ok(ActivationSpec::parse(s)?)
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("cannot parse `{t}` as a number")))
        })
        .collect()
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CalibrateArgs {
    /// Target negative rate in [0, 0.5).
    #[arg(long)]
    p: Option<f64>,
    /// Target depth L.
    #[arg(long)]
    depth: Option<usize>,
    /// Critical gain omega (alternative to --activation).
    #[arg(long)]
    omega: Option<f64>,
    /// Activation spec; its omega is used when --omega is absent.
    #[arg(long)]
    activation: Option<String>,
}

fn cmd_calibrate(args: CalibrateArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let p = args
        .p
        .or_else(|| cfg.f64("p"))
        .ok_or_else(|| CliError::Config("calibrate needs --p".into()))?;
    let depth = args.depth.or_else(|| cfg.usize("depth")).unwrap_or(20);
    let omega = match (args.omega.or_else(|| cfg.f64("omega")), &args.activation) {
        (Some(w), _) => w,
        (None, Some(spec)) => parse_activation(spec)?.omega(),
        (None, None) => match cfg.string("activation") {
            Some(spec) => parse_activation(&spec)?.omega(),
            None => return Err(CliError::Config(
                "calibrate needs --omega or --activation".into(),
            )),
        },
    };
    if !(0.0..0.5).contains(&p) {
        // Match the module error but fail before touching the math.
        return Err(CliError::Config(format!("p must be in [0, 0.5), got {p}")));
    }
    let result = calibration::calibrate(p, depth, omega)?;
    println!("{}", to_json_string(&result));
    Ok(())
}

// ---------------------------------------------------------------------------
// bifurcate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BifurcateArgs {
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Absolute gain values, comma separated.
    #[arg(long)]
    a_values: Option<String>,
    /// Gain offsets above omega (a = omega + eps), comma separated.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5")]
    eps_values: String,
    /// Initial value for single-start traces.
    #[arg(long, default_value_t = 0.1)]
    x0: f64,
    /// Number of symmetric starts in [-x0-range, x0-range]; 0 keeps the
    /// single --x0 start.
    #[arg(long, default_value_t = 0)]
    x0_count: usize,
    #[arg(long, default_value_t = 1.0)]
    x0_range: f64,
    /// Iteration steps per trace.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct BifurcateSummary {
    activation: String,
    omega: f64,
    gains: Vec<f64>,
    steps: usize,
    trace_csv: String,
    fixed_points_csv: String,
}

fn cmd_bifurcate(
    args: BifurcateArgs,
    cfg: &FileConfig,
    _seed: u64,
    json: bool,
) -> Result<(), CliError> {
    let spec_str = cfg
        .string("activation")
        .filter(|_| args.activation == "tanh")
        .unwrap_or(args.activation);
    let spec = parse_activation(&spec_str)?;
    let omega = spec.omega();
    let gains: Vec<f64> = match &args.a_values {
        Some(list) => parse_list(list)?,
        None => parse_list(&args.eps_values)?.iter().map(|e| omega + e).collect(),
    };
    if gains.iter().any(|&a| !(a > 0.0)) {
        return Err(CliError::Config("gains must be positive".into()));
    }
    let starts: Vec<f64> = if args.x0_count > 0 {
        (0..args.x0_count)
            .map(|i| {
                -args.x0_range
                    + 2.0 * args.x0_range * i as f64 / (args.x0_count.max(2) - 1) as f64
            })
            .collect()
    } else {
        vec![args.x0]
    };

    create_out_dir(&args.out_dir)?;
    let mut trace_csv = String::from("a,x0,n,x\n");
    let mut fp_csv = String::from("a,regime,xi,residual\n");
    for &a in &gains {
        let fp = dynamics::solve_xi(&spec, a)?;
        let regime = match fp.regime {
            dynamics::Regime::SubCritical => "subcritical",
            dynamics::Regime::SuperCritical => "supercritical",
        };
        let _ = writeln!(fp_csv, "{a},{regime},{},{}", fp.xi, fp.residual);
        for &x0 in &starts {
            let trace = dynamics::iterate(&spec, a, x0, args.n);
            for (step, value) in trace.values.iter().enumerate() {
                let _ = writeln!(trace_csv, "{a},{x0},{step},{value}");
            }
        }
    }
    let trace_path = args.out_dir.join("bifurcation.csv");
    let fp_path = args.out_dir.join("fixed_points.csv");
    write_file(&trace_path, &trace_csv)?;
    write_file(&fp_path, &fp_csv)?;

    let summary = BifurcateSummary {
        activation: spec.to_string(),
        omega,
        gains,
        steps: args.n,
        trace_csv: trace_path.display().to_string(),
        fixed_points_csv: fp_path.display().to_string(),
    };
    if json {
        println!("{}", to_json_string(&summary));
    } else {
        println!("activation       {}", summary.activation);
        println!("omega            {}", summary.omega);
        println!("gains            {:?}", summary.gains);
        println!("trace rows       -> {}", summary.trace_csv);
        println!("fixed points     -> {}", summary.fixed_points_csv);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// propagate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PropagationModel {
    Scalar,
    Ffnn,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeName {
    Proposed,
    Xavier,
    He,
    Orthogonal,
}

impl SchemeName {
    fn to_kind(self, sigma_star: f64, omega: f64) -> InitKind {
        match self {
            SchemeName::Proposed => InitKind::Proposed { sigma_star, omega },
            SchemeName::Xavier => InitKind::XavierUniform,
            SchemeName::He => InitKind::HeNormal,
            SchemeName::Orthogonal => InitKind::Orthogonal,
        }
    }

    fn label(self) -> &'static str {
        match self {
            SchemeName::Proposed => "proposed",
            SchemeName::Xavier => "xavier",
            SchemeName::He => "he",
            SchemeName::Orthogonal => "orthogonal",
        }
    }
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long, default_value = "tanh")]
    activation: String,
    #[arg(long, value_enum, default_value_t = PropagationModel::Both)]
    model: PropagationModel,
    /// Target negative rate used to calibrate sigma*.
    #[arg(long)]
    p: Option<f64>,
    /// Explicit noise scale; overrides the calibrated sigma*.
    #[arg(long)]
    sigma: Option<f64>,
    /// Initialization scheme for the feedforward chain.
    #[arg(long, value_enum, default_value_t = SchemeName::Proposed)]
    init: SchemeName,
    #[arg(long)]
    depth: Option<usize>,
    /// Feedforward layer width.
    #[arg(long)]
    width: Option<usize>,
    /// Number of scalar chains.
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    x0: f64,
    /// Symmetric-uniform input range; replaces the positive-constant x0.
    #[arg(long)]
    x0_uniform: Option<f64>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Also sweep spread over these comma-separated targets p.
    #[arg(long)]
    p_sweep: Option<String>,
    /// Paper-scale settings (depth 10000, width proxy 20000); slow.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct ModelSummary {
    model: String,
    depth: usize,
    width: usize,
    final_negative_rate: f64,
    spread: f64,
    max_abs_last_layer: f64,
}

#[derive(Serialize)]
struct PropagateSummary {
    activation: String,
    omega: f64,
    p_target: f64,
    sigma: f64,
    init: String,
    models: Vec<ModelSummary>,
    negrate_csv: String,
    lastlayer_csv: String,
    spread_sweep_csv: Option<String>,
}

fn cmd_propagate(
    args: PropagateArgs,
    cfg: &FileConfig,
    seed: u64,
    json: bool,
) -> Result<(), CliError> {
    let spec = parse_activation(&args.activation)?;
    let omega = spec.omega();
    let p = args.p.or_else(|| cfg.f64("p")).unwrap_or(0.3);
    let (mut depth, mut width, mut chains) = (
        args.depth.or_else(|| cfg.usize("depth")).unwrap_or(100),
        args.width.or_else(|| cfg.usize("width")).unwrap_or(2000),
        args.chains.or_else(|| cfg.usize("chains")).unwrap_or(20_000),
    );
    if args.paper_scale {
        eprintln!(
            "warning: --paper-scale runs depth 10000 with a 20000-wide proxy; expect a long wait"
        );
        depth = args.depth.unwrap_or(10_000);
        width = args.width.unwrap_or(20_000);
        chains = args.chains.unwrap_or(20_000);
    }
    if depth == 0 || width == 0 || chains == 0 {
        return Err(CliError::Config("depth, width, and chains must be positive".into()));
    }
    let sigma = match args.sigma {
        Some(s) if s >= 0.0 => s,
        Some(s) => return Err(CliError::Config(format!("sigma must be nonnegative, got {s}"))),
        None => calibration::sigma_star(p, depth, omega)?,
    };

    create_out_dir(&args.out_dir)?;
    let sup = spec.supremum_bound();
    let mut negrate_csv = String::from("model,depth,empirical,theory\n");
    let mut lastlayer_csv = String::from("model,bin_lo,bin_hi,count\n");
    let mut models = Vec::new();

    let mut record = |label: &str, trace: &propagation::PropagationTrace| {
        for (j, emp) in trace.negative_rate_per_depth.iter().enumerate() {
            let theory = calibration::negative_rate(sigma, j + 1, omega);
            let _ = writeln!(negrate_csv, "{label},{},{emp},{theory}", j + 1);
        }
        let counts =
            propagation::histogram_counts(&trace.last_layer_values, args.bins, -sup, sup);
        for (b, count) in counts.iter().enumerate() {
            let lo = -sup + 2.0 * sup * b as f64 / args.bins as f64;
            let hi = -sup + 2.0 * sup * (b + 1) as f64 / args.bins as f64;
            let _ = writeln!(lastlayer_csv, "{label},{lo},{hi},{count}");
        }
        models.push(ModelSummary {
            model: label.to_string(),
            depth: trace.depth,
            width: trace.width,
            final_negative_rate: trace.final_negative_rate(),
            spread: trace.spread,
            max_abs_last_layer: trace.max_abs_last_layer(),
        });
    };

    if matches!(args.model, PropagationModel::Scalar | PropagationModel::Both) {
        let trace = propagation::scalar_chain(&spec, sigma, depth, chains, args.x0, seed);
        record("scalar", &trace);
    }
    if matches!(args.model, PropagationModel::Ffnn | PropagationModel::Both) {
        let scheme = InitScheme::new(args.init.to_kind(sigma, omega), seed);
        let x0_dist = match args.x0_uniform {
            Some(range) => X0Dist::UniformSym(range),
            None => X0Dist::PositiveConstant(args.x0),
        };
        let trace = propagation::ffnn_chain(&spec, &scheme, width, depth, x0_dist, seed);
        record("ffnn", &trace);
    }

    let negrate_path = args.out_dir.join("negrate.csv");
    let lastlayer_path = args.out_dir.join("lastlayer.csv");
    write_file(&negrate_path, &negrate_csv)?;
    write_file(&lastlayer_path, &lastlayer_csv)?;

    let spread_sweep_csv = match &args.p_sweep {
        Some(grid) => {
            let ps = parse_list(grid)?;
            let rows =
                propagation::spread_vs_p_sweep(&spec, depth, width, &ps, args.bins, seed)?;
            let mut csv = String::from("p,sigma_star,spread\n");
            for row in rows {
                let _ = writeln!(csv, "{},{},{}", row.p, row.sigma_star, row.spread);
            }
            let path = args.out_dir.join("spread_vs_p.csv");
            write_file(&path, &csv)?;
            Some(path.display().to_string())
        }
        None => None,
    };

    let summary = PropagateSummary {
        activation: spec.to_string(),
        omega,
        p_target: p,
        sigma,
        init: args.init.label().to_string(),
        models,
        negrate_csv: negrate_path.display().to_string(),
        lastlayer_csv: lastlayer_path.display().to_string(),
        spread_sweep_csv,
    };
    let json_text = to_json_string(&summary);
    write_file(&args.out_dir.join("summary.json"), &json_text)?;
    if json {
        println!("{json_text}");
    } else {
        println!("activation   {}  (omega {})", summary.activation, summary.omega);
        println!("sigma        {}  (target p {})", summary.sigma, summary.p_target);
        for m in &summary.models {
            println!(
                "{:<7} depth {:>6} width {:>6}  final neg rate {:.4}  spread {:.4}  max|last| {:.4e}",
                m.model, m.depth, m.width, m.final_negative_rate, m.spread, m.max_abs_last_layer
            );
        }
        println!("wrote {}", summary.negrate_csv);
        println!("wrote {}", summary.lastlayer_csv);
        if let Some(p) = &summary.spread_sweep_csv {
            println!("wrote {p}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DatasetName {
    Mnist,
    Fmnist,
}

impl DatasetName {
    fn kind(self) -> DatasetKind {
        match self {
            DatasetName::Mnist => DatasetKind::Mnist,
            DatasetName::Fmnist => DatasetKind::Fmnist,
        }
    }
}

/// `--data-dir`, then `OSWI_DATA_DIR/<name>`, then `./data/<name>`.
fn resolve_data_dir(flag: Option<&Path>, kind: DatasetKind) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(root) = std::env::var("OSWI_DATA_DIR") {
        return PathBuf::from(root).join(kind.dir_name());
    }
    PathBuf::from("data").join(kind.dir_name())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "tanh")]
    activation: String,
    #[arg(long, value_enum, default_value_t = SchemeName::Proposed)]
    init: SchemeName,
    /// Target negative rate for the proposed scheme's sigma*.
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    /// Hidden layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    width: Option<usize>,
    /// Learning rate; defaults to 1e-4 * omega (the band midpoint).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Train on a deterministic class-stratified subset of this size.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
    /// Hold the validation split out of the full training corpus before
    /// subsetting, instead of splitting inside the subset.
    #[arg(long)]
    val_from_full: bool,
    #[arg(long, value_enum, default_value_t = DatasetName::Mnist)]
    dataset: DatasetName,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    batch_norm: bool,
    /// Paper-scale network (20 layers, width 512); slow on a laptop.
    #[arg(long)]
    paper_scale: bool,
    /// Also write the trained checkpoint (OSWI containers + manifest).
    #[arg(long)]
    dump_weights: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct TrainSummary {
    activation: String,
    omega: f64,
    init: String,
    sigma_star: f64,
    lr: f64,
    layers: usize,
    width: usize,
    epochs: usize,
    subset: Option<usize>,
    best_val_acc: f64,
    learned: bool,
    report_json: String,
    report_csv: String,
}

fn build_scheme(
    name: SchemeName,
    p: f64,
    depth: usize,
    omega: f64,
    seed: u64,
) -> Result<(InitScheme, f64), CliError> {
    let sigma_star = match name {
        SchemeName::Proposed => calibration::sigma_star(p, depth, omega)?,
        _ => 0.0,
    };
    Ok((InitScheme::new(name.to_kind(sigma_star, omega), seed), sigma_star))
}

fn load_train_dataset(
    dataset: DatasetName,
    data_dir: Option<&Path>,
) -> Result<data::Dataset, CliError> {
    let dir = resolve_data_dir(data_dir, dataset.kind());
    Ok(data::load_train(dataset.kind(), &dir)?)
}

/// Subsets (stratified) and splits per the configured policy.
fn prepare_splits(
    full: &data::Dataset,
    subset_size: Option<usize>,
    val_fraction: f64,
    val_from_full: bool,
    seed: u64,
) -> Result<(data::Dataset, data::Dataset), CliError> {
    if val_from_full {
        let (pool, val) = data::split_validation(full, val_fraction, seed)?;
        let train = match subset_size {
            Some(n) => data::subset(&pool, n, seed)?,
            None => pool,
        };
        Ok((train, val))
    } else {
        let working = match subset_size {
            Some(n) => data::subset(full, n, seed)?,
            None => full.clone(),
        };
        let (train, val) = data::split_validation(&working, val_fraction, seed)?;
        Ok((train, val))
    }
}

fn cmd_train(
    args: TrainArgs,
    cfg: &FileConfig,
    seed: u64,
    json: bool,
) -> Result<(), CliError> {
    let spec = parse_activation(&args.activation)?;
    let omega = spec.omega();
    let (default_layers, default_width) = if args.paper_scale { (20, 512) } else { (10, 128) };
    let layers = args.layers.or_else(|| cfg.usize("layers")).unwrap_or(default_layers);
    let width = args.width.or_else(|| cfg.usize("width")).unwrap_or(default_width);
    let epochs = args.epochs.or_else(|| cfg.usize("epochs")).unwrap_or(5);
    let lr = args.lr.or_else(|| cfg.f64("lr")).unwrap_or(1e-4 * omega);
    if layers == 0 || width == 0 || epochs == 0 {
        return Err(CliError::Config("layers, width, and epochs must be positive".into()));
    }
    if !(lr > 0.0) {
        return Err(CliError::Config(format!("learning rate must be positive, got {lr}")));
    }

    let full = load_train_dataset(args.dataset, args.data_dir.as_deref())?;
    let (train_set, val_set) =
        prepare_splits(&full, args.subset, args.val_fraction, args.val_from_full, seed)?;

    let (scheme, sigma_star) = build_scheme(args.init, args.p, layers, omega, seed)?;
    let mut layer_widths = vec![full.features()];
    layer_widths.extend(std::iter::repeat(width).take(layers));
    layer_widths.push(full.num_classes());
    let net_config = NetworkConfig {
        layer_widths,
        activation: spec.clone(),
        init: scheme,
        batch_norm: args.batch_norm,
        seed,
    };
    let train_config = TrainConfig {
        batch_size: args.batch_size,
        val_fraction: args.val_fraction,
        ..TrainConfig::new(lr, epochs)
    };

    create_out_dir(&args.out_dir)?;
    let (report, trained) =
        network::train_returning_network(&net_config, &train_config, &train_set, &val_set)?;

    let mut csv = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for (i, e) in report.epochs.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            i + 1,
            e.train_loss,
            e.train_acc,
            e.val_loss,
            e.val_acc
        );
    }
    let report_csv = args.out_dir.join("report.csv");
    let report_json = args.out_dir.join("report.json");
    write_file(&report_csv, &csv)?;
    write_file(&report_json, &to_json_string(&report))?;

    if args.dump_weights {
        trained.save_checkpoint(&args.out_dir.join("checkpoint"))?;
    }

    let summary = TrainSummary {
        activation: spec.to_string(),
        omega,
        init: args.init.label().to_string(),
        sigma_star,
        lr,
        layers,
        width,
        epochs,
        subset: args.subset,
        best_val_acc: report.best_val_acc,
        learned: report.learned,
        report_json: report_json.display().to_string(),
        report_csv: report_csv.display().to_string(),
    };
    if json {
        println!("{}", to_json_string(&summary));
    } else {
        println!(
            "{} / {} init, {} layers x {} wide, lr {}",
            summary.activation, summary.init, summary.layers, summary.width, summary.lr
        );
        for (i, e) in report.epochs.iter().enumerate() {
            println!(
                "epoch {:>3}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
                i + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc
            );
        }
        println!(
            "best val acc {:.4} -> learned = {}",
            summary.best_val_acc, summary.learned
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep-lr
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SweepLrArgs {
    /// Base activation; each alpha produces f(alpha x).
    #[arg(long, default_value = "tanh")]
    activation: String,
    #[arg(long, default_value = "0.01,1,100")]
    alphas: String,
    /// Comma-separated inits, or `all`.
    #[arg(long, default_value = "all")]
    inits: String,
    /// Comma-separated learning rates; default is the decade grid
    /// 1e-9..1e0.
    #[arg(long)]
    lr_grid: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 1000)]
    subset: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Hold validation out of the full corpus instead of the subset.
    #[arg(long)]
    val_from_full: bool,
    #[arg(long, value_enum, default_value_t = DatasetName::Mnist)]
    dataset: DatasetName,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Paper-scale network (20 layers, width 512).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize, Clone)]
struct SweepCell {
    activation: String,
    alpha: f64,
    omega: f64,
    init: String,
    lr: f64,
    best_val_acc: f64,
    learned: bool,
}

#[derive(Serialize)]
struct SweepWindow {
    alpha: f64,
    init: String,
    learnable_lrs: Vec<f64>,
}

#[derive(Serialize)]
struct SweepSummary {
    cells: usize,
    windows: Vec<SweepWindow>,
    sweep_csv: String,
}

fn parse_inits(s: &str) -> Result<Vec<SchemeName>, CliError> {
    if s == "all" {
        return Ok(vec![
            SchemeName::Proposed,
            SchemeName::Xavier,
            SchemeName::He,
            SchemeName::Orthogonal,
        ]);
    }
    s.split(',')
        .map(|name| match name.trim() {
            "proposed" => Ok(SchemeName::Proposed),
            "xavier" => Ok(SchemeName::Xavier),
            "he" => Ok(SchemeName::He),
            "orthogonal" => Ok(SchemeName::Orthogonal),
            other => Err(CliError::Config(format!("unknown init `{other}`"))),
        })
        .collect()
}

fn default_lr_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powi(k - 9)).collect()
}

fn cmd_sweep_lr(
    args: SweepLrArgs,
    cfg: &FileConfig,
    seed: u64,
    json: bool,
) -> Result<(), CliError> {
    use rayon::prelude::*;

    let base = parse_activation(&args.activation)?;
    let alphas = parse_list(&args.alphas)?;
    let inits = parse_inits(&args.inits)?;
    let lrs = match &args.lr_grid {
        Some(grid) => parse_list(grid)?,
        None => default_lr_grid(),
    };
    let (default_layers, default_width) = if args.paper_scale { (20, 512) } else { (10, 128) };
    let layers = args.layers.or_else(|| cfg.usize("layers")).unwrap_or(default_layers);
    let width = args.width.or_else(|| cfg.usize("width")).unwrap_or(default_width);

    let full = load_train_dataset(args.dataset, args.data_dir.as_deref())?;
    let (train_set, val_set) =
        prepare_splits(&full, Some(args.subset), 0.15, args.val_from_full, seed)?;

    // Every (alpha, init, lr) cell is independent; run them in parallel
    // and keep the output ordering fixed by indexing.
    let mut jobs = Vec::new();
    for &alpha in &alphas {
        for &init in &inits {
            for &lr in &lrs {
                jobs.push((alpha, init, lr));
            }
        }
    }
    let cells: Result<Vec<SweepCell>, CliError> = jobs
        .par_iter()
        .map(|&(alpha, init, lr)| {
            let spec = base.clone().scaled(alpha)?;
            let omega = spec.omega();
            let (scheme, _) = build_scheme(init, args.p, layers, omega, seed)?;
            let mut layer_widths = vec![train_set.features()];
            layer_widths.extend(std::iter::repeat(width).take(layers));
            layer_widths.push(train_set.num_classes());
            let net_config = NetworkConfig {
                layer_widths,
                activation: spec.clone(),
                init: scheme,
                batch_norm: false,
                seed,
            };
            let train_config = TrainConfig {
                batch_size: args.batch_size,
                ..TrainConfig::new(lr, args.epochs)
            };
            let report =
                network::train_on_split(&net_config, &train_config, &train_set, &val_set)?;
            Ok(SweepCell {
                activation: spec.to_string(),
                alpha,
                omega,
                init: init.label().to_string(),
                lr,
                best_val_acc: report.best_val_acc,
                learned: report.learned,
            })
        })
        .collect();
    let cells = cells?;

    create_out_dir(&args.out_dir)?;
    let mut csv = String::from("activation,alpha,omega,init,lr,best_val_acc,learned\n");
    for c in &cells {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            c.activation, c.alpha, c.omega, c.init, c.lr, c.best_val_acc, c.learned
        );
    }
    let sweep_path = args.out_dir.join("sweep.csv");
    write_file(&sweep_path, &csv)?;

    let mut windows = Vec::new();
    for &alpha in &alphas {
        for &init in &inits {
            let learnable: Vec<f64> = cells
                .iter()
                .filter(|c| c.alpha == alpha && c.init == init.label() && c.learned)
                .map(|c| c.lr)
                .collect();
            windows.push(SweepWindow {
                alpha,
                init: init.label().to_string(),
                learnable_lrs: learnable,
            });
        }
    }
    let summary = SweepSummary {
        cells: cells.len(),
        windows,
        sweep_csv: sweep_path.display().to_string(),
    };
    write_file(&args.out_dir.join("windows.json"), &to_json_string(&summary))?;
    if json {
        println!("{}", to_json_string(&summary));
    } else {
        for w in &summary.windows {
            let range = if w.learnable_lrs.is_empty() {
                "-".to_string()
            } else {
                format!(
                    "{:.0e} .. {:.0e}",
                    w.learnable_lrs.iter().cloned().fold(f64::INFINITY, f64::min),
                    w.learnable_lrs.iter().cloned().fold(0.0, f64::max)
                )
            };
            println!("alpha {:>8} {:<11} learnable: {range}", w.alpha, w.init);
        }
        println!("wrote {}", summary.sweep_csv);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FetchArgs {
    #[arg(long, value_enum, default_value_t = DatasetName::Mnist)]
    dataset: DatasetName,
    /// Target directory; defaults to OSWI_DATA_DIR/<name> or data/<name>.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Mirror base URL holding the four IDX .gz files.
    #[arg(long)]
    mirror: Option<String>,
}

#[derive(Serialize)]
struct FetchSummary {
    dataset: String,
    dir: String,
    files: Vec<String>,
}

fn cmd_fetch(args: FetchArgs, cfg: &FileConfig, json: bool) -> Result<(), CliError> {
    let kind = args.dataset.kind();
    let dir = args
        .dir
        .clone()
        .unwrap_or_else(|| resolve_data_dir(None, kind));
    let mirror = args.mirror.or_else(|| cfg.string("mirror"));
    let files = data::fetch(kind, &dir, mirror.as_deref())?;
    let summary = FetchSummary {
        dataset: kind.dir_name().to_string(),
        dir: dir.display().to_string(),
        files: files.iter().map(|p| p.display().to_string()).collect(),
    };
    if json {
        println!("{}", to_json_string(&summary));
    } else {
        for f in &summary.files {
            println!("verified {f}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_floats_carry_17_significant_digits() {
        #[derive(Serialize)]
        struct S {
            x: f64,
        }
        let text = to_json_string(&S { x: 0.5 });
        assert_eq!(text, "{\"x\":5.0000000000000000e-1}");
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["x"].as_f64(), Some(0.5));
    }

    #[test]
    fn lr_grid_is_decade_spaced() {
        let grid = default_lr_grid();
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 1e-9).abs() < 1e-24);
        assert!((grid[9] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_names_parse() {
        assert_eq!(parse_inits("all").unwrap().len(), 4);
        assert_eq!(
            parse_inits("proposed,he").unwrap(),
            vec![SchemeName::Proposed, SchemeName::He]
        );
        assert!(parse_inits("glorot").is_err());
    }
}
