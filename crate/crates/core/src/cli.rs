//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or model errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Factor, Observation, TransformKind};
use crate::design::build_design;
use crate::error::Error;
use crate::formula::parse_formula;
use crate::inference::{
    adjusted_means_within, back_transform, indirect_difference, lettered_means, mean_sed, parse_filter, sed_matrix,
    select_year_status, stratified_letters, IndirectComparison, LetteredMeans, MeansTable, SedMatrix, YearStatus,
    YearStatusRecommendation,
};
use crate::simulator::{bias_study, simulate_trial, BiasReport, SimConfig};
use crate::solver::{fit, Covariance, EffectRow, EffectStatus, FittedModel, Method, VarianceComponents};

#[derive(Parser, Debug)]
#[command(
    name = "trialadj",
    version,
    about = "Adjusted means and comparisons for long-term trials with changing treatments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and print the effect table and variance components.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Adjusted treatment means.
    #[command(args_override_self = true)]
    Means(MeansArgs),
    /// Standard errors of differences with pairwise t-tests.
    #[command(args_override_self = true)]
    Sed(CompareArgs),
    /// Adjusted means with a compact letter display.
    #[command(args_override_self = true)]
    Letters(LettersArgs),
    /// Indirect difference of two treatments through a reference set.
    #[command(args_override_self = true)]
    Indirect(IndirectArgs),
    /// Which treatment levels were observed in which environments.
    #[command(args_override_self = true)]
    Incidence(IncidenceArgs),
    /// Generate a synthetic trial or run a bias study.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Choose between fixed and random environment effects by mean SED.
    #[command(args_override_self = true)]
    SelectYear(SelectYearArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Decimals in text and CSV output.
    #[arg(long, default_value_t = 4)]
    precision: usize,
    /// File of `key = value` lines read as if given as `--key value`.
    /// Flags on the command line take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Comma-separated file with a header row, or `builtin:toy`.
    #[arg(long, value_name = "PATH")]
    data: String,
    #[arg(long, default_value = "value")]
    response: String,
    #[arg(long, default_value = "none")]
    transform: TransformKind,
    /// Make LEVEL the reference (last) level of FACTOR.
    #[arg(long, value_name = "FACTOR=LEVEL")]
    relevel: Vec<String>,
    /// Add a grouping factor, e.g. `G<-S:1=ended,4=ended,2=cont`.
    #[arg(long, value_name = "NEW<-SOURCE:L=G,...")]
    derive: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model formula, e.g. `S + Y` or `S : Y`.
    #[arg(long)]
    model: String,
    /// Write the X and Z matrices with column labels as CSV.
    #[arg(long, value_name = "PATH")]
    dump_design: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Treatment term (factor names joined by `.`).
    #[arg(long)]
    treatment: String,
    /// Term averaged over with equal weights.
    #[arg(long)]
    margin: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Keep only treatment levels with FACTOR=LEVEL.
    #[arg(long, value_name = "FACTOR=LEVEL")]
    within: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct MeansArgs {
    #[command(flatten)]
    cmp: CompareArgs,
    /// Report means on the original scale of a transformed response.
    #[arg(long)]
    back_transform: bool,
}

#[derive(Args, Debug, Clone)]
struct LettersArgs {
    #[command(flatten)]
    cmp: CompareArgs,
    /// Compute a separate display within each level of this factor.
    #[arg(long, value_name = "FACTOR", conflicts_with = "within")]
    by: Option<String>,
    #[arg(long)]
    back_transform: bool,
}

#[derive(Args, Debug, Clone)]
struct IndirectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Treatment factor; defaults to the only other factor when there are two.
    #[arg(long)]
    treatment: Option<String>,
    /// Environment factor.
    #[arg(long)]
    env: String,
    /// First treatment level(s), comma-separated.
    #[arg(long)]
    a: String,
    /// Second treatment level(s), comma-separated.
    #[arg(long)]
    b: String,
    /// Reference level(s) shared with both, comma-separated.
    #[arg(long = "ref")]
    reference: String,
}

#[derive(Args, Debug, Clone)]
struct IncidenceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    margin: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Study {
    Bias,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, default_value_t = 4)]
    old: usize,
    #[arg(long, default_value_t = 2)]
    new: usize,
    #[arg(long, default_value_t = 2)]
    bridge: usize,
    #[arg(long, default_value_t = 4)]
    pre: usize,
    #[arg(long, default_value_t = 1)]
    post: usize,
    #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
    grand_mean: f64,
    /// One effect per system, old systems first (default all zero).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    system_effects: Vec<f64>,
    /// One effect per year, pre-change years first (default all zero).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    year_effects: Vec<f64>,
    /// Added to every post-change year effect.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    post_shift: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_e: f64,
    #[arg(long)]
    sigma_year: Option<f64>,
    /// Observations per tested cell.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum)]
    study: Option<Study>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Worker threads for studies; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the generated dataset here instead of standard output.
    #[arg(long, value_name = "PATH", conflicts_with = "study")]
    out_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SelectYearArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long)]
    treatment: String,
    /// Environment factor.
    #[arg(long)]
    margin: String,
    /// Fixed-environment model (default `T + M`).
    #[arg(long)]
    model: Option<String>,
    /// Random-environment model (default `T : M`).
    #[arg(long)]
    random_model: Option<String>,
}

/// JSON form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub formula: String,
    pub method: Method,
    pub n: usize,
    pub rank: usize,
    pub df: usize,
    pub effects: Vec<EffectRow>,
    pub coefficients: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major covariance of `beta`.
    pub vcov: Vec<Vec<f64>>,
    pub aliased: Vec<String>,
    pub variance: VarianceComponents,
    pub covariance: Covariance,
    pub reml_loglik: Option<f64>,
    pub converged: bool,
    pub boundary: bool,
}

impl FitReport {
    pub fn new(fm: &FittedModel) -> Self {
        let v = &fm.vcov_beta;
        FitReport {
            formula: fm.spec.to_string(),
            method: fm.method,
            n: fm.design.n(),
            rank: fm.design.rank,
            df: fm.df,
            effects: fm.effects(),
            coefficients: fm.design.x_labels.clone(),
            beta: fm.beta.clone(),
            vcov: (0..v.nrows()).map(|i| v.row(i).iter().copied().collect()).collect(),
            aliased: fm.design.aliased.clone(),
            variance: fm.vc,
            covariance: fm.covariance,
            reml_loglik: fm.reml_loglik,
            converged: fm.converged,
            boundary: fm.boundary,
        }
    }
}

/// JSON form of `sed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedReport {
    pub sed: SedMatrix,
    pub mean_sed: f64,
}

/// JSON form of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub response_name: String,
    pub factors: Vec<Factor>,
    pub rows: Vec<Observation>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

type CliResult<T> = Result<T, Failure>;

/// Runs the command line `args` (program name first).
pub fn run<S: AsRef<str>>(args: &[S], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args: Vec<String> = args.iter().map(|a| a.as_ref().to_string()).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let mut buf = Vec::new();
    let result = dispatch(cli.command, &mut buf);
    match result {
        Ok(()) => match out.write_all(&buf).and_then(|_| out.flush()) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                2
            }
        },
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

/// Splices `key = value` lines from `--config` files in after the subcommand.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut rest = Vec::new();
    let mut files = Vec::new();
    let mut it = args.into_iter();
    let head: Vec<String> = it.by_ref().take(2).collect();
    while let Some(a) = it.next() {
        if a == "--config" {
            files.push(it.next().ok_or("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            files.push(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let mut from_files = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| format!("cannot read config '{f}': {e}"))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("{f}:{}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k == "config" {
                return Err(format!("{f}:{}: invalid key '{k}'", i + 1));
            }
            from_files.push(format!("--{k}"));
            if !v.is_empty() && v != "true" {
                from_files.push(v.to_string());
            }
        }
    }
    Ok(head.into_iter().chain(from_files).chain(rest).collect())
}

fn dispatch(cmd: Command, out: &mut Vec<u8>) -> CliResult<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Means(a) => cmd_means(a, out),
        Command::Sed(a) => cmd_sed(a, out),
        Command::Letters(a) => cmd_letters(a, out),
        Command::Indirect(a) => cmd_indirect(a, out),
        Command::Incidence(a) => cmd_incidence(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::SelectYear(a) => cmd_select_year(a, out),
    }
}

fn parse_derive(s: &str) -> CliResult<(String, String, BTreeMap<String, String>)> {
    let bad = || Failure::Usage(format!("expected NEW<-SOURCE:LEVEL=GROUP,..., got '{s}'"));
    let (name, rest) = s.split_once("<-").ok_or_else(bad)?;
    let (source, pairs) = rest.split_once(':').ok_or_else(bad)?;
    let mut map = BTreeMap::new();
    for p in pairs.split(',') {
        let (l, g) = p.split_once('=').ok_or_else(bad)?;
        if map.insert(l.trim().to_string(), g.trim().to_string()).is_some() {
            return usage(format!("level '{}' mapped twice in --derive", l.trim()));
        }
    }
    Ok((name.trim().to_string(), source.trim().to_string(), map))
}

fn filter(s: &str) -> CliResult<(String, String)> {
    parse_filter(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn load(d: &DataArgs) -> CliResult<Dataset> {
    let mut ds = if d.data == "builtin:toy" {
        if d.response != "value" {
            return usage(format!("builtin:toy has response 'value', not '{}'", d.response));
        }
        Dataset::builtin_toy()
    } else {
        let f = File::open(&d.data).map_err(|e| Error::Io(format!("{}: {e}", d.data)))?;
        Dataset::load_table(BufReader::new(f), &d.response)?.dataset
    };
    for spec in &d.derive {
        let (name, source, map) = parse_derive(spec)?;
        ds = ds.derive_factor(&name, &source, &map)?;
    }
    for r in &d.relevel {
        let (f, l) = filter(r)?;
        ds = ds.relevel(&f, &l)?;
    }
    Ok(ds.transform_response(d.transform)?)
}

fn fit_model(ds: &Dataset, m: &ModelArgs) -> CliResult<FittedModel> {
    let spec = parse_formula(&m.model, &ds.factor_names())?;
    if let Some(path) = &m.dump_design {
        let design = build_design(ds, &spec)?;
        let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        design.write_csv(f)?;
    }
    Ok(fit(ds, &spec)?)
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        usage(format!("--alpha must lie in (0, 1), got {alpha}"))
    }
}

fn num(x: f64, prec: usize) -> String {
    let s = format!("{x:.prec$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Aligned plain-text table: first column left, the rest right-aligned.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut w = vec![0usize; ncol];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.chars().count());
        }
    }
    let mut s = String::new();
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let mut line = String::new();
        for (i, c) in r.iter().enumerate() {
            if i == 0 {
                line.push_str(&format!("{c:<width$}", width = w[0]));
            } else {
                line.push_str(&format!("  {c:>width$}", width = w[i]));
            }
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s
}

fn csv_rows(header: &[&str], rows: &[Vec<String>], out: &mut Vec<u8>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Failure::Data(Error::Io(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn json<T: Serialize>(v: &T, out: &mut Vec<u8>) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| Error::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

fn h(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn cmd_fit(a: FitArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let ds = load(&a.data)?;
    let fm = fit_model(&ds, &a.model)?;
    let p = a.out.precision;
    let status = |s: EffectStatus| match s {
        EffectStatus::Estimated => "",
        EffectStatus::Reference => "reference",
        EffectStatus::Aliased => "aliased",
    };
    let mut vc = vec![("sigma2_residual", fm.vc.sigma2_residual)];
    if fm.method == Method::Reml {
        vc.push(("sigma2_random", fm.vc.sigma2_random));
        vc.push(("gamma", fm.vc.gamma));
    }
    match a.out.format {
        Format::Json => json(&FitReport::new(&fm), out),
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = fm
                .effects()
                .iter()
                .map(|e| vec![e.effect.clone(), num(e.estimate, p), status(e.status).to_string()])
                .collect();
            rows.extend(vc.iter().map(|(k, v)| vec![k.to_string(), num(*v, p), "variance".into()]));
            csv_rows(&["effect", "estimate", "status"], &rows, out)
        }
        Format::Text => {
            let method = match fm.method {
                Method::Ols => "least squares",
                Method::Reml => "REML",
            };
            let mut s = format!("Model: {}\nMethod: {method}\n", fm.spec);
            s.push_str(&format!(
                "Observations: {}  Rank: {}  Residual df: {}\n\n",
                fm.design.n(),
                fm.design.rank,
                fm.df
            ));
            let rows: Vec<Vec<String>> = fm
                .effects()
                .iter()
                .map(|e| vec![e.effect.clone(), num(e.estimate, p), status(e.status).to_string()])
                .collect();
            s.push_str(&table(&h(&["Effect", "Estimate", ""]), &rows));
            s.push_str("\nVariance components\n");
            let mut vrows = vec![vec!["Residual".to_string(), num(fm.vc.sigma2_residual, p)]];
            if let Some(r) = fm.design.fittable_random() {
                vrows.push(vec![r.term.to_string(), num(fm.vc.sigma2_random, p)]);
            }
            s.push_str(&table(&h(&["Component", "Variance"]), &vrows));
            if let Some(ll) = fm.reml_loglik {
                s.push_str(&format!("REML log-likelihood: {}\n", num(ll, p)));
                if fm.boundary {
                    s.push_str("Random variance estimated on the boundary (zero).\n");
                }
            }
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn prepare(c: &CompareArgs) -> CliResult<(FittedModel, Vec<(String, String)>)> {
    check_alpha(c.alpha)?;
    let within = c.within.iter().map(|w| filter(w)).collect::<CliResult<Vec<_>>>()?;
    let ds = load(&c.data)?;
    Ok((fit_model(&ds, &c.model)?, within))
}

fn maybe_back(mt: MeansTable, ds: &Dataset, back: bool) -> CliResult<MeansTable> {
    if !back {
        return Ok(mt);
    }
    if ds.scale() == TransformKind::None {
        return usage("--back-transform needs --transform");
    }
    Ok(back_transform(&mt, ds.scale())?)
}

fn means_title(mt: &MeansTable, fm: &FittedModel) -> String {
    let over = mt.margin_over.as_ref().map(|m| format!(" averaged over {m}")).unwrap_or_default();
    let scale = match mt.scale {
        crate::inference::Scale::Analysis(TransformKind::None) => String::new(),
        crate::inference::Scale::Analysis(k) => format!(", {k} scale"),
        crate::inference::Scale::BackTransformed(k) => format!(", back-transformed from {k} scale"),
    };
    format!("Adjusted means of {}{over} (model: {}{scale})\n", mt.treatment, fm.spec)
}

fn cmd_means(a: MeansArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let (fm, within) = prepare(&a.cmp)?;
    let mt = adjusted_means_within(&fm, &a.cmp.treatment, a.cmp.margin.as_deref(), &within)?;
    let mt = maybe_back(mt, &fm.dataset, a.back_transform)?;
    let p = a.cmp.out.precision;
    let se = |r: &crate::inference::MeanRow| r.se.map(|v| num(v, p)).unwrap_or_default();
    let rows: Vec<Vec<String>> = mt.rows.iter().map(|r| vec![r.level.clone(), num(r.estimate, p), se(r)]).collect();
    match a.cmp.out.format {
        Format::Json => json(&mt, out),
        Format::Csv => csv_rows(&[&mt.treatment, "mean", "se"], &rows, out),
        Format::Text => {
            let mut s = means_title(&mt, &fm);
            s.push_str(&table(&[mt.treatment.clone(), "Mean".into(), "SE".into()], &rows));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn cmd_sed(a: CompareArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let (fm, within) = prepare(&a)?;
    let sm = sed_matrix(&fm, &a.treatment, a.margin.as_deref(), a.alpha, &within)?;
    if sm.levels.len() < 2 {
        return Err(Error::Invalid("fewer than two treatment levels to compare".into()).into());
    }
    let msed = mean_sed(&sm, None)?;
    let p = a.out.precision;
    let rows: Vec<Vec<String>> = sm
        .pairs
        .iter()
        .map(|q| {
            vec![
                format!("{}-{}", q.a, q.b),
                num(q.diff, p),
                num(q.sed, p),
                num(q.t, p),
                num(q.p, p),
                if q.significant { "*".into() } else { String::new() },
            ]
        })
        .collect();
    match a.out.format {
        Format::Json => json(&SedReport { sed: sm, mean_sed: msed }, out),
        Format::Csv => {
            let rows: Vec<Vec<String>> = sm
                .pairs
                .iter()
                .zip(rows)
                .map(|(q, r)| {
                    let mut v = vec![q.a.clone(), q.b.clone()];
                    v.extend_from_slice(&r[1..5]);
                    v.push(q.significant.to_string());
                    v
                })
                .collect();
            csv_rows(&["a", "b", "difference", "sed", "t", "p", "significant"], &rows, out)
        }
        Format::Text => {
            let mut s = format!(
                "SEDs of {} means (model: {}), df = {}, alpha = {}, critical t = {}\n",
                sm.treatment,
                fm.spec,
                sm.df,
                sm.alpha,
                num(sm.t_critical, p)
            );
            s.push_str(&table(&h(&["Comparison", "Difference", "SED", "t", "p", ""]), &rows));
            s.push_str(&format!("Mean SED: {}\n", num(msed, p)));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn percent(alpha: f64) -> String {
    let s = format!("{:.6}", alpha * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn cmd_letters(a: LettersArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let c = &a.cmp;
    let (fm, within) = prepare(c)?;
    let mut blocks: Vec<LetteredMeans> = match &a.by {
        Some(g) => stratified_letters(&fm, &c.treatment, c.margin.as_deref(), c.alpha, g)?,
        None => vec![lettered_means(&fm, &c.treatment, c.margin.as_deref(), c.alpha, &within)?],
    };
    for b in &mut blocks {
        b.means = maybe_back(b.means.clone(), &fm.dataset, a.back_transform)?;
    }
    let p = c.out.precision;
    let rows = |b: &LetteredMeans| -> Vec<Vec<String>> {
        b.means
            .rows
            .iter()
            .map(|r| vec![r.level.clone(), num(r.estimate, p), r.letters.clone().unwrap_or_default()])
            .collect()
    };
    match c.out.format {
        Format::Json => json(&blocks, out),
        Format::Csv => {
            let mut all = Vec::new();
            for b in &blocks {
                for r in rows(b) {
                    let mut v = vec![b.stratum.clone().unwrap_or_default()];
                    v.extend(r);
                    v.push(num(b.mean_sed, p));
                    all.push(v);
                }
            }
            csv_rows(&["stratum", &c.treatment, "mean", "letters", "mean_sed"], &all, out)
        }
        Format::Text => {
            let mut s = String::new();
            for (i, b) in blocks.iter().enumerate() {
                if i == 0 {
                    s.push_str(&means_title(&b.means, &fm));
                } else {
                    s.push('\n');
                }
                if let Some(st) = &b.stratum {
                    s.push_str(&format!("[{st}]\n"));
                }
                s.push_str(&table(&[b.means.treatment.clone(), "Mean".into(), "Letters".into()], &rows(b)));
                s.push_str(&format!("Mean SED: {}\n", num(b.mean_sed, p)));
            }
            s.push_str(&format!(
                "\u{a7} Means followed by a common letter are not significantly different according to a t-test at the {}% level.\n",
                percent(c.alpha)
            ));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn cmd_indirect(a: IndirectArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let ds = load(&a.data)?;
    let treatment = match &a.treatment {
        Some(t) => t.clone(),
        None => {
            let others: Vec<String> = ds.factor_names().into_iter().filter(|f| *f != a.env).collect();
            if others.len() != 1 {
                return usage("--treatment is required when the data have more than two factors");
            }
            others[0].clone()
        }
    };
    let (sa, sb, sr) = (list(&a.a), list(&a.b), list(&a.reference));
    if sa.is_empty() || sb.is_empty() || sr.is_empty() {
        return usage("--a, --b and --ref need at least one level each");
    }
    let ic: IndirectComparison = indirect_difference(&ds, &treatment, &a.env, &sa, &sb, &sr)?;
    let p = a.out.precision;
    let (la, lb, lr) = (sa.join(" & "), sb.join(" & "), sr.join(" & "));
    match a.out.format {
        Format::Json => json(&ic, out),
        Format::Csv => {
            let rows = vec![
                vec![la.clone(), lr.clone(), ic.environments_a.join(";"), num(ic.direct_a, p)],
                vec![lb.clone(), lr.clone(), ic.environments_b.join(";"), num(ic.direct_b, p)],
                vec![la.clone(), lb.clone(), String::new(), num(ic.estimate, p)],
            ];
            csv_rows(&["treatment", "versus", "environments", "difference"], &rows, out)
        }
        Format::Text => {
            let mut s = format!("Indirect comparison of {la} and {lb} through {lr} ({} as environment)\n", a.env);
            let rows = vec![
                vec![format!("{la} - {lr}"), ic.environments_a.join(", "), num(ic.direct_a, p)],
                vec![format!("{lb} - {lr}"), ic.environments_b.join(", "), num(ic.direct_b, p)],
                vec![format!("{la} - {lb}"), "indirect".into(), num(ic.estimate, p)],
            ];
            s.push_str(&table(&h(&["Difference", "Within", "Estimate"]), &rows));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn cmd_incidence(a: IncidenceArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let ds = load(&a.data)?;
    let it = ds.incidence(&a.treatment, &a.margin)?;
    match a.out.format {
        Format::Json => json(&it, out),
        Format::Csv => {
            let mut header = vec![it.row_factor.as_str()];
            header.extend(it.col_levels.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = it
                .row_levels
                .iter()
                .zip(&it.counts)
                .map(|(l, r)| std::iter::once(l.clone()).chain(r.iter().map(|c| c.to_string())).collect())
                .collect();
            csv_rows(&header, &rows, out)
        }
        Format::Text => {
            out.extend_from_slice(it.render().as_bytes());
            Ok(())
        }
    }
}

fn sim_config(a: &SimulateArgs) -> CliResult<SimConfig> {
    let mut c = SimConfig::layout(a.old, a.new, a.bridge, a.pre, a.post);
    c.grand_mean = a.grand_mean;
    if !a.system_effects.is_empty() {
        c.true_system_effects = a.system_effects.clone();
    }
    if !a.year_effects.is_empty() {
        c.true_year_effects = a.year_effects.clone();
    }
    if c.true_year_effects.len() == a.pre + a.post {
        for e in &mut c.true_year_effects[a.pre..] {
            *e += a.post_shift;
        }
    }
    c.sigma_e = a.sigma_e;
    c.sigma_year = a.sigma_year;
    c.replicates = a.replicates;
    c.seed = a.seed;
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn cmd_simulate(a: SimulateArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let cfg = sim_config(&a)?;
    let p = a.out.precision;
    match a.study {
        Some(Study::Bias) => {
            if a.reps < 100 {
                return usage(format!("--reps must be at least 100, got {}", a.reps));
            }
            let rep = bias_study(&cfg, a.reps, a.threads)?;
            write_bias(&rep, a.out.format, p, out)
        }
        None => {
            let ds = simulate_trial(&cfg)?;
            if let Some(path) = &a.out_file {
                let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                return Ok(ds.write_csv(f)?);
            }
            match a.out.format {
                Format::Json => json(
                    &DatasetReport {
                        response_name: ds.response_name().to_string(),
                        factors: ds.factors().to_vec(),
                        rows: (0..ds.n_rows()).map(|r| ds.observation(r)).collect(),
                    },
                    out,
                ),
                _ => Ok(ds.write_csv(out)?),
            }
        }
    }
}

fn write_bias(rep: &BiasReport, format: Format, p: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let pair_row = |m: &str, q: &crate::simulator::PairBias| {
        vec![
            m.to_string(),
            q.a.clone(),
            q.b.clone(),
            num(q.mean_estimate, p),
            num(q.true_difference, p),
            num(q.bias, p),
            num(q.mc_se, p),
        ]
    };
    match format {
        Format::Json => json(rep, out),
        Format::Csv => {
            let mut rows = Vec::new();
            for m in &rep.models {
                rows.extend(m.old_vs_new.iter().map(|q| pair_row(m.model.name(), q)));
                rows.extend(m.pairs.iter().map(|q| pair_row(m.model.name(), q)));
            }
            csv_rows(&["model", "a", "b", "mean_estimate", "true_difference", "bias", "mc_se"], &rows, out)
        }
        Format::Text => {
            let mut s = format!("Bias study over {} replicates\n\n", rep.replicates);
            let summary: Vec<Vec<String>> = rep
                .models
                .iter()
                .map(|m| {
                    vec![
                        m.model.name().to_string(),
                        m.formula.clone(),
                        m.fitted.to_string(),
                        m.failures.to_string(),
                        m.mean_sed.map(|v| num(v, p)).unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            s.push_str(&table(&h(&["Model", "Formula", "Fitted", "Failures", "Mean SED"]), &summary));
            s.push_str("\nRetired versus new systems\n");
            let on: Vec<Vec<String>> =
                rep.models.iter().filter_map(|m| m.old_vs_new.as_ref().map(|q| pair_row(m.model.name(), q))).collect();
            let on: Vec<Vec<String>> = on
                .into_iter()
                .map(|mut r| {
                    r.drain(1..3);
                    r
                })
                .collect();
            s.push_str(&table(&h(&["Model", "Estimate", "Truth", "Bias", "MC SE"]), &on));
            s.push_str("\nAll system pairs\n");
            let mut rows = Vec::new();
            for m in &rep.models {
                for q in &m.pairs {
                    let mut r = pair_row(m.model.name(), q);
                    let pair = format!("{}-{}", r[1], r[2]);
                    r.splice(1..3, [pair]);
                    rows.push(r);
                }
            }
            s.push_str(&table(&h(&["Model", "Pair", "Estimate", "Truth", "Bias", "MC SE"]), &rows));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}

fn cmd_select_year(a: SelectYearArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let ds = load(&a.data)?;
    let names = ds.factor_names();
    let fixed = a.model.clone().unwrap_or_else(|| format!("{} + {}", a.treatment, a.margin));
    let random = a.random_model.clone().unwrap_or_else(|| format!("{} : {}", a.treatment, a.margin));
    let (sf, sr) = (parse_formula(&fixed, &names)?, parse_formula(&random, &names)?);
    let rec: YearStatusRecommendation = select_year_status(&ds, &sf, &sr, &a.treatment, Some(&a.margin))?;
    let p = a.out.precision;
    let choice = match rec.recommended {
        YearStatus::Fixed => "fixed",
        YearStatus::Random => "random",
    };
    match a.out.format {
        Format::Json => json(&rec, out),
        Format::Csv => csv_rows(
            &["mean_sed_fixed", "mean_sed_random", "gamma", "recommended"],
            &[vec![num(rec.mean_sed_fixed, p), num(rec.mean_sed_random, p), num(rec.gamma, p), choice.into()]],
            out,
        ),
        Format::Text => {
            let rows = vec![
                vec![format!("fixed {}", a.margin), sf.to_string(), num(rec.mean_sed_fixed, p)],
                vec![format!("random {}", a.margin), sr.to_string(), num(rec.mean_sed_random, p)],
            ];
            let mut s = table(&h(&["Status", "Model", "Mean SED"]), &rows);
            s.push_str(&format!("Variance ratio (random model): {}\n", num(rec.gamma, p)));
            s.push_str(&format!("Recommended: {choice} {} effects\n", a.margin));
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
    }
}
