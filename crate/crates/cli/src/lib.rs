//! `smssvd` command-line driver: decompose, synth, compare and aic.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! Exit codes: 0 ok, 2 input error, 3 numerical error, 4 empty result.

pub mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use smssvd_core::engine::{smssvd, Decomposition, EngineConfig};
use smssvd_core::evaluation::{aic_gmm, compare_methods, Method, SpcBound};
use smssvd_core::io::{self as tsv, read_data_matrix, read_ground_truth, read_spec, read_table};
use smssvd_core::selection::NullModel;
use smssvd_core::synthetic::{generate, BiplotMode, NoiseTarget, SyntheticSpec};
use smssvd_core::Rng;

use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

pub const DEFAULT_METHODS: &str = "svd,smssvd,spc:c=r0.04,spc:c=r0.12,spc:c=r0.36";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Empty(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Empty(_) => EXIT_EMPTY,
        }
    }
}

impl From<smssvd_core::Error> for CliError {
    fn from(e: smssvd_core::Error) -> Self {
        use smssvd_core::Error as E;
        let msg = e.to_string();
        match e {
            E::DimensionMismatch(_)
            | E::InvalidArgument(_)
            | E::NonFinite
            | E::InfeasibleSpec(_)
            | E::CapacityInfeasible { .. }
            | E::Parse { .. }
            | E::Io(_)
            | E::Json(_) => CliError::Input(msg),
            E::NotOrthonormal(_)
            | E::RankDeficient { .. }
            | E::ZeroMatrix
            | E::NoFeasibleSelection
            | E::Degenerate(_)
            | E::Numerical(_) => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smssvd", version, about = "Submatrix selection SVD and baselines")]
pub struct Cli {
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the per-block log on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a variables × samples TSV matrix.
    Decompose(DecomposeArgs),
    /// Generate a synthetic ground-truth directory.
    Synth(SynthArgs),
    /// Compare methods on a ground-truth directory.
    Compare(CompareArgs),
    /// AIC of a Gaussian mixture over the first m sample coordinates.
    Aic(AicArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NullModelArg {
    Gaussian,
    Permutation,
}

impl From<NullModelArg> for NullModel {
    fn from(m: NullModelArg) -> Self {
        match m {
            NullModelArg::Gaussian => NullModel::Gaussian,
            NullModelArg::Permutation => NullModel::Permutation,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, default_value_t = 20)]
    pub max_components: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub min_score: f64,
    #[arg(long, default_value_t = 20)]
    pub null_samples: usize,
    #[arg(long, value_enum, default_value_t = NullModelArg::Gaussian)]
    pub null_model: NullModelArg,
    /// Largest block dimension searched (default min(N − 1, 20)).
    #[arg(long)]
    pub d_max: Option<usize>,
    /// Comma-separated keep fractions in (0, 1] (default 1, 1/2, 1/4, ...).
    #[arg(long, value_delimiter = ',')]
    pub keep_fractions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-10)]
    pub rank_tol: f64,
    /// Use this dimension for every block instead of searching.
    #[arg(long)]
    pub fixed_dimension: Option<usize>,
}

impl EngineArgs {
    pub fn config(&self) -> CliResult<EngineConfig> {
        let cfg = EngineConfig {
            max_components: self.max_components,
            min_score: self.min_score,
            null_samples: self.null_samples,
            null_model: self.null_model.into(),
            d_max: self.d_max,
            keep_fraction_grid: self.keep_fractions.clone(),
            rank_tol: self.rank_tol,
            fixed_dimension: self.fixed_dimension,
            ..EngineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// TSV matrix: header row of sample IDs, first column variable IDs.
    pub input: PathBuf,
    /// Subtract each variable's mean before decomposing.
    #[arg(long)]
    pub center_rows: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    BiplotNoNoise,
    BiplotNoiseOffSupport,
    BiplotNoiseAll,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "from_spec")]
    pub preset: Option<Preset>,
    /// Regenerate from a previously written spec.json.
    #[arg(long)]
    pub from_spec: Option<PathBuf>,
    #[arg(long = "N", conflicts_with_all = ["preset", "from_spec"])]
    pub n: Option<usize>,
    #[arg(long = "P", conflicts_with_all = ["preset", "from_spec"])]
    pub p: Option<usize>,
    #[arg(long = "L", conflicts_with_all = ["preset", "from_spec"])]
    pub l: Option<usize>,
    #[arg(long = "K", conflicts_with_all = ["preset", "from_spec"])]
    pub k: Option<usize>,
    #[arg(long = "d", conflicts_with_all = ["preset", "from_spec"])]
    pub d: Option<usize>,
    #[arg(long, conflicts_with_all = ["preset", "from_spec"])]
    pub sigma: Option<f64>,
    /// Add noise only to variables outside every support.
    #[arg(long, conflicts_with_all = ["preset", "from_spec"])]
    pub noise_off_support: bool,
    /// Allow supports of different signals to overlap.
    #[arg(long, conflicts_with_all = ["preset", "from_spec"])]
    pub overlapping: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Ground-truth directory written by `synth`.
    pub truth: PathBuf,
    /// Comma-separated methods: svd, smssvd, spc:c=<c>, spc:c=r<ratio>
    /// (c = ratio·√P). `spc:c=2,8,32` expands to three SPC runs.
    #[arg(long, default_value = DEFAULT_METHODS)]
    pub methods: String,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct AicArgs {
    /// TSV of sample coordinates: rows are samples, columns dimensions.
    #[arg(long, conflicts_with = "decomposition", required_unless_present = "decomposition")]
    pub coords: Option<PathBuf>,
    /// Output directory of `decompose`; uses V scaled by σ.
    #[arg(long)]
    pub decomposition: Option<PathBuf>,
    /// Two tab-separated columns, sample ID and label, after a header line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Evaluate m = 1..=dims leading coordinates.
    #[arg(long)]
    pub dims: usize,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Input("--out is required".into()))?;
    let ctx = Ctx {
        out,
        seed: cli.seed,
        quiet: cli.quiet,
        argv,
    };
    match &cli.command {
        Command::Decompose(a) => cmd_decompose(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
        Command::Aic(a) => cmd_aic(&ctx, a),
    }
}

struct Ctx<'a> {
    out: &'a Path,
    seed: Option<u64>,
    quiet: bool,
    argv: &'a [String],
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn log(&self, line: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", line.as_ref());
        }
    }

    fn manifest(&self, command: &str, seed: u64, config: impl Serialize) -> CliResult<RunManifest> {
        let config = serde_json::to_value(config).map_err(smssvd_core::Error::from)?;
        Ok(RunManifest::new(command, self.argv, seed, config))
    }

    fn finish(&self, mut m: RunManifest) -> CliResult<()> {
        m.add_outputs_in(self.out)?;
        m.write(self.out)?;
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(smssvd_core::Error::from)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn component_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("comp{i}")).collect()
}

fn cmd_decompose(ctx: &Ctx, a: &DecomposeArgs) -> CliResult<()> {
    let cfg = a.engine.config()?;
    let mut x = read_data_matrix(&a.input)?;
    if a.center_rows {
        x.center_rows();
    }
    let seed = ctx.seed();
    let mut manifest = ctx.manifest(
        "decompose",
        seed,
        json!({ "engine": cfg, "center_rows": a.center_rows }),
    )?;
    manifest.add_input(&a.input)?;

    let dec = smssvd(&x, &cfg, &Rng::new(seed))?;
    for (k, b) in dec.blocks.iter().enumerate() {
        ctx.log(format!(
            "block {}: kept {} of {} variables, d = {}, score = {:.4}",
            k + 1,
            b.selection.len(),
            x.n_variables(),
            b.d(),
            b.score_record.score
        ));
    }
    ctx.log(format!("stopped: {}", dec.stop_reason.as_str()));

    fs::create_dir_all(ctx.out)?;
    write_decomposition(ctx.out, &x, &dec)?;
    ctx.finish(manifest)?;
    if dec.is_empty() {
        return Err(CliError::Empty(format!(
            "decomposition is empty (stopped: {})",
            dec.stop_reason.as_str()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct BlockSummary<'a> {
    block: usize,
    iteration: usize,
    d: usize,
    components: Vec<String>,
    sigma: Vec<f64>,
    n_kept: usize,
    kept_variables: Vec<&'a str>,
    score: &'a smssvd_core::ProjectionScoreRecord,
}

fn write_decomposition(dir: &Path, x: &smssvd_core::DataMatrix, dec: &Decomposition) -> CliResult<()> {
    let comps = component_ids(dec.total_d());
    tsv::write_table(&dir.join("U.tsv"), "id", x.variable_ids(), &comps, &dec.u())?;
    tsv::write_table(&dir.join("V.tsv"), "id", x.sample_ids(), &comps, &dec.v())?;

    let mut s = String::from("component\tblock\tsigma\n");
    for ((c, b), sigma) in comps.iter().zip(dec.component_blocks()).zip(dec.sigma().iter()) {
        let _ = writeln!(s, "{c}\t{}\t{sigma:?}", b + 1);
    }
    fs::write(dir.join("sigma.tsv"), s)?;

    let mut next = 0;
    let blocks: Vec<BlockSummary> = dec
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let components = comps[next..next + b.d()].to_vec();
            next += b.d();
            BlockSummary {
                block: k + 1,
                iteration: b.iteration_index,
                d: b.d(),
                components,
                sigma: b.sigma.iter().copied().collect(),
                n_kept: b.selection.len(),
                kept_variables: b
                    .selection
                    .kept_indices()
                    .iter()
                    .map(|&i| x.variable_ids()[i].as_str())
                    .collect(),
                score: &b.score_record,
            }
        })
        .collect();
    write_json(
        &dir.join("blocks.json"),
        &json!({
            "n_variables": x.n_variables(),
            "n_samples": x.n_samples(),
            "total_d": dec.total_d(),
            "stop_reason": dec.stop_reason.as_str(),
            "final_residual_norm": dec.final_residual_norm,
            "blocks": blocks,
        }),
    )
}

fn synth_spec(ctx: &Ctx, a: &SynthArgs) -> CliResult<SyntheticSpec> {
    let seed = ctx.seed();
    if let Some(p) = a.preset {
        let mode = match p {
            Preset::BiplotNoNoise => BiplotMode::NoNoise,
            Preset::BiplotNoiseOffSupport => BiplotMode::NoiseOffSupport,
            Preset::BiplotNoiseAll => BiplotMode::NoiseAll,
        };
        return Ok(SyntheticSpec::biplot(mode, seed));
    }
    if let Some(path) = &a.from_spec {
        let mut spec = read_spec(path)?;
        if let Some(s) = ctx.seed {
            spec.seed = s;
        }
        return Ok(spec);
    }
    let (Some(p), Some(l)) = (a.p, a.l) else {
        return Err(CliError::Input(
            "synth needs --preset, --from-spec, or at least --P and --L".into(),
        ));
    };
    let mut spec = SyntheticSpec::new(p, l, a.d.unwrap_or(2), a.sigma.unwrap_or(0.1), seed);
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(k) = a.k {
        spec.k = k;
    }
    spec.disjoint_supports = !a.overlapping;
    if a.noise_off_support {
        spec.noise_target = NoiseTarget::OffSupport;
    }
    Ok(spec)
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> CliResult<()> {
    let spec = synth_spec(ctx, a)?;
    spec.validate()?;
    let mut manifest = ctx.manifest("synth", spec.seed, &spec)?;
    if let Some(path) = &a.from_spec {
        manifest.add_input(path)?;
    }
    let truth = generate(&spec)?;
    ctx.log(format!(
        "generated {} x {} matrix with {} signals of rank {}",
        spec.p, spec.n, spec.k, spec.d
    ));
    tsv::write_ground_truth(ctx.out, &truth)?;
    ctx.finish(manifest)
}

/// Splits a method list on commas; bare numbers after an `spc:c=` entry are
/// further SPC bounds.
pub fn parse_methods(list: &str, engine: &EngineConfig) -> CliResult<Vec<Method>> {
    let mut out = Vec::new();
    // after an SPC entry a bare number is another bound of the same kind
    let mut spc_prefix: Option<&str> = None;
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let spelled = match spc_prefix {
            Some(pre) if !tok.contains(':') && tok != "svd" && tok != "smssvd" => {
                let bare = tok.strip_prefix('r').unwrap_or(tok);
                let pre = if tok.starts_with('r') { "r" } else { pre };
                format!("spc:c={pre}{bare}")
            }
            _ => tok.to_owned(),
        };
        let m: Method = spelled.parse()?;
        spc_prefix = match &m {
            Method::Spc(SpcBound::RelativeToSqrtP(_)) => Some("r"),
            Method::Spc(_) => Some(""),
            _ => None,
        };
        out.push(match m {
            Method::Smssvd(_) => Method::Smssvd(engine.clone()),
            other => other,
        });
    }
    if out.is_empty() {
        return Err(CliError::Input("no methods given".into()));
    }
    Ok(out)
}

fn cmd_compare(ctx: &Ctx, a: &CompareArgs) -> CliResult<()> {
    let cfg = a.engine.config()?;
    let methods = parse_methods(&a.methods, &cfg)?;
    let truth = read_ground_truth(&a.truth)?;
    let seed = ctx.seed();
    let mut manifest = ctx.manifest(
        "compare",
        seed,
        json!({
            "methods": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "engine": cfg,
            "truth_spec": truth.spec,
        }),
    )?;
    for name in ["spec.json", "X.tsv"] {
        manifest.add_input(&a.truth.join(name))?;
    }
    for k in 1..=truth.spec.k {
        manifest.add_input(&a.truth.join(format!("Y_{k}.tsv")))?;
        manifest.add_input(&a.truth.join(format!("support_{k}.txt")))?;
    }

    let outcomes = compare_methods(truth.x.values(), &truth.targets, &methods, &Rng::new(seed))?;
    let mut s = String::from("method\tsignal\terr\tstrength\tflagged\n");
    for o in &outcomes {
        for r in &o.rows {
            let _ = writeln!(s, "{}\t{}\t{:?}\t{:?}\t{}", o.method, r.signal, r.err, r.strength, r.flagged);
        }
        ctx.log(format!(
            "{}: {} components, relative errors {}",
            o.method,
            o.components_found,
            o.rows
                .iter()
                .map(|r| format!("{:.3e}", r.err / r.strength))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    fs::create_dir_all(ctx.out)?;
    fs::write(ctx.out.join("compare.tsv"), s)?;
    ctx.finish(manifest)
}

/// Reads `sample<TAB>label` lines after a header line.
pub fn read_labels(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let (Some(id), Some(label)) = (f.next(), f.next()) else {
            return Err(CliError::Input(format!(
                "{}: line {} needs a sample ID and a label",
                path.display(),
                i + 1
            )));
        };
        if labels.insert(id.to_owned(), label.trim().to_owned()).is_some() {
            return Err(CliError::Input(format!("duplicate sample ID {id:?} in labels")));
        }
    }
    Ok(labels)
}

fn decomposition_coords(dir: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let v = read_table(&dir.join("V.tsv"))?;
    let sigma = read_table(&dir.join("sigma.tsv"))?;
    let col = sigma
        .col_ids
        .iter()
        .position(|c| c == "sigma")
        .ok_or_else(|| CliError::Input("sigma.tsv has no sigma column".into()))?;
    if sigma.row_ids != v.col_ids {
        return Err(CliError::Input("sigma.tsv components do not match V.tsv".into()));
    }
    let mut coords = v.values;
    for (j, mut c) in coords.column_iter_mut().enumerate() {
        c *= sigma.values[(j, col)];
    }
    Ok((v.row_ids, coords))
}

fn cmd_aic(ctx: &Ctx, a: &AicArgs) -> CliResult<()> {
    let (source, (samples, coords)) = match (&a.coords, &a.decomposition) {
        (Some(p), _) => {
            let t = read_table(p)?;
            (p.clone(), (t.row_ids, t.values))
        }
        (None, Some(d)) => (d.join("V.tsv"), decomposition_coords(d)?),
        (None, None) => return Err(CliError::Input("give --coords or --decomposition".into())),
    };
    if a.dims == 0 || a.dims > coords.ncols() {
        return Err(CliError::Input(format!(
            "--dims {} out of range: the representation has {} columns",
            a.dims,
            coords.ncols()
        )));
    }
    let labels = read_labels(&a.labels)?;
    let index: HashMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if let Some(unknown) = labels.keys().find(|k| !index.contains_key(k.as_str())) {
        return Err(CliError::Input(format!("unknown sample ID {unknown:?} in labels")));
    }
    let ordered: Vec<&String> = samples
        .iter()
        .map(|s| {
            labels
                .get(s)
                .ok_or_else(|| CliError::Input(format!("sample {s:?} has no label")))
        })
        .collect::<CliResult<_>>()?;

    let mut manifest = ctx.manifest("aic", ctx.seed(), json!({ "dims": a.dims }))?;
    if let Some(d) = &a.decomposition {
        manifest.add_input(&d.join("sigma.tsv"))?;
    }
    manifest.add_input(&source)?;
    manifest.add_input(&a.labels)?;

    let mut s = String::from("m\tloglik\tjoint_loglik\tn_params\taic\tjoint_aic\tridge_applied\n");
    for m in 1..=a.dims {
        let r = aic_gmm(&coords.columns(0, m).into_owned(), &ordered)?;
        let _ = writeln!(
            s,
            "{m}\t{:?}\t{:?}\t{}\t{:?}\t{:?}\t{}",
            r.loglik, r.joint_loglik, r.n_params, r.aic, r.joint_aic, r.ridge_applied
        );
        ctx.log(format!("m = {m}: AIC {:.4}", r.aic));
    }
    fs::create_dir_all(ctx.out)?;
    fs::write(ctx.out.join("aic.tsv"), s)?;
    ctx.finish(manifest)
}
