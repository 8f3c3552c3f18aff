//! `dersens` command line: analyze, run, privatize and bench.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dersens::analyzer::{build_plan, AnalyzeError, AnalyzeOptions, SensitivityPlan};
use dersens::dp::{self, DpError, NoiseParams, Release};
use dersens::engine::{self, GroupValue};
use dersens::sql::{load_database, parse_query, parse_schema, validate, Context, Database, Schema};
use dersens::tpch;

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "dersens", version, about = "Derivative-sensitivity analysis and noisy release for SQL aggregates")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Print the modified query and the sensitivity query.
    Analyze(Common),
    /// Evaluate the original, modified and sensitivity queries on CSV data.
    Run(RunArgs),
    /// Release the modified query result with generalized Cauchy noise.
    Privatize(PrivatizeArgs),
    /// Run the b1_1 query on seeded synthetic lineitem data.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Query file, or the query text itself.
    #[arg(long)]
    pub query: String,
    /// Schema file.
    #[arg(long)]
    pub schema: PathBuf,
    /// Norm file with `<table> <norm>` lines overriding the schema norms.
    #[arg(long)]
    pub norm: Option<PathBuf>,
    /// Sigmoid and tauoid precision.
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    /// Smoothness of the sensitivity bound.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Lower OR as a plain sum (alternatives are mutually exclusive).
    #[arg(long)]
    pub xor: bool,
    /// Exact comparisons for data whose distinct values differ by at least 1/K.
    #[arg(long, value_name = "K")]
    pub precise: Option<f64>,
    /// Write modified.sql and sensitivity.sql into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_sql: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with `<table>.csv` and `<table>_sensRows.csv`.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PrivatizeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = dp::GAMMA)]
    pub gamma: f64,
    #[arg(long, env = "DERSENS_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 5000)]
    pub rows: usize,
    #[arg(long, env = "DERSENS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Also write the generated tables and schema here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn from_analyze(e: AnalyzeError, gamma: f64) -> CliError {
    match e {
        AnalyzeError::Infeasible { requested, min_beta } => CliError::Infeasible(format!(
            "β = {requested} is not achievable; the smallest achievable β is {min_beta}, \
             which needs ε > {} at γ = {gamma} (or lower --alpha)",
            (gamma + 1.0) * min_beta
        )),
        e => input(e),
    }
}

fn from_dp(e: DpError) -> CliError {
    match e {
        e @ DpError::Budget { .. } => CliError::Infeasible(e.to_string()),
        e => input(e),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn query_text(q: &str) -> Result<String, CliError> {
    if q.trim_start().get(..6).is_some_and(|w| w.eq_ignore_ascii_case("select")) {
        Ok(q.to_string())
    } else {
        read(Path::new(q))
    }
}

fn load_schema(c: &Common) -> Result<Schema, CliError> {
    let mut s = parse_schema(&read(&c.schema)?).map_err(|e| CliError::Input(format!("{}: {e}", c.schema.display())))?;
    if let Some(n) = &c.norm {
        s.apply_norm_file(&read(n)?).map_err(|e| CliError::Input(format!("{}: {e}", n.display())))?;
    }
    Ok(s)
}

fn options(c: &Common, beta: f64) -> AnalyzeOptions {
    AnalyzeOptions { alpha: c.alpha, beta, xor: c.xor, precise: c.precise }
}

fn analyze(c: &Common, beta: f64, gamma: f64) -> Result<(Schema, Context, SensitivityPlan), CliError> {
    let s = load_schema(c)?;
    let q = parse_query(&query_text(&c.query)?).map_err(input)?;
    let ctx = validate(&q, &s).map_err(input)?;
    let plan = build_plan(&ctx, &options(c, beta)).map_err(|e| from_analyze(e, gamma))?;
    if let Some(dir) = &c.emit_sql {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        for (name, text) in [("modified.sql", plan.modified_sql()), ("sensitivity.sql", plan.sensitivity_sql())] {
            let p = dir.join(name);
            std::fs::write(&p, text + "\n").map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        }
    }
    Ok((s, ctx, plan))
}

#[derive(Serialize)]
pub struct TableReport {
    pub table: String,
    pub alias: String,
    pub method: String,
    pub gamma: f64,
    pub factors: BTreeMap<String, f64>,
    pub beta: f64,
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub version: u32,
    pub modified_sql: String,
    pub sensitivity_sql: String,
    pub requested_beta: f64,
    pub beta: f64,
    pub tables: Vec<TableReport>,
    pub warnings: Vec<String>,
}

fn analyze_report(plan: &SensitivityPlan) -> AnalyzeReport {
    AnalyzeReport {
        version: REPORT_VERSION,
        modified_sql: plan.modified_sql(),
        sensitivity_sql: plan.sensitivity_sql(),
        requested_beta: plan.options.beta,
        beta: plan.beta,
        tables: plan
            .parts
            .iter()
            .map(|p| TableReport {
                table: p.table.clone(),
                alias: p.alias.clone(),
                method: format!("{:?}", p.witness.method).to_lowercase(),
                gamma: p.witness.gamma,
                factors: p.factors.clone(),
                beta: p.beta,
            })
            .collect(),
        warnings: plan.warnings.clone(),
    }
}

#[derive(Serialize)]
pub struct RunReport {
    pub version: u32,
    pub initial: f64,
    pub modified: f64,
    pub sensitivity: f64,
    /// `|modified + 10·sensitivity − initial| / |initial| · 100`; absent
    /// when the initial value is 0 and the numerator is not.
    pub rel_error: Option<f64>,
    pub beta: f64,
    pub argmax: Option<GroupValue>,
    pub warnings: Vec<String>,
}

pub fn rel_error(initial: f64, modified: f64, sensitivity: f64) -> Option<f64> {
    let num = (modified + 10.0 * sensitivity - initial).abs();
    if initial == 0.0 {
        return (num == 0.0).then_some(0.0);
    }
    Some(num / initial.abs() * 100.0)
}

fn evaluate(ctx: &Context, plan: &SensitivityPlan, db: &Database) -> Result<RunReport, CliError> {
    let initial = engine::run_initial(ctx, db).map_err(input)?;
    let modified = engine::run_modified(plan, db).map_err(input)?;
    let sens = engine::run_sensitivity(plan, db).map_err(input)?;
    let mut warnings = plan.warnings.clone();
    if sens.groups.is_empty() && !plan.parts.is_empty() {
        warnings.push("no sensitive row takes part in the query; sensitivity is 0".into());
    }
    Ok(RunReport {
        version: REPORT_VERSION,
        initial,
        modified,
        sensitivity: sens.value,
        rel_error: rel_error(initial, modified, sens.value),
        beta: plan.beta,
        argmax: sens.argmax,
        warnings,
    })
}

fn load_data(dir: &Path, s: &Schema) -> Result<Database, CliError> {
    load_database(dir, s).map_err(input)
}

#[derive(Serialize)]
pub struct PrivatizeReport {
    pub version: u32,
    pub release: Release,
    pub beta_achieved: f64,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct BenchReport {
    pub version: u32,
    pub rows: usize,
    pub seed: u64,
    pub initial: f64,
    pub modified: f64,
    pub sensitivity: f64,
    pub rel_error: Option<f64>,
    pub seconds: f64,
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport, CliError> {
    let t0 = Instant::now();
    let s = parse_schema(tpch::LINEITEM_SCHEMA).map_err(input)?;
    let mut db = Database::default();
    db.insert(tpch::lineitem(a.rows, (144.0, 227.0), a.seed));
    if let Some(dir) = &a.out {
        db.save(dir, &s).map_err(input)?;
        std::fs::write(dir.join("schema.txt"), tpch::LINEITEM_SCHEMA).map_err(input)?;
        std::fs::write(dir.join("b1_1.sql"), format!("{};\n", tpch::B1_1)).map_err(input)?;
    }
    let ctx = validate(&parse_query(tpch::B1_1).map_err(input)?, &s).map_err(input)?;
    let opts = AnalyzeOptions { alpha: a.alpha, beta: a.beta, ..Default::default() };
    let plan = build_plan(&ctx, &opts).map_err(|e| from_analyze(e, dp::GAMMA))?;
    let r = evaluate(&ctx, &plan, &db)?;
    Ok(BenchReport {
        version: REPORT_VERSION,
        rows: a.rows,
        seed: a.seed,
        initial: r.initial,
        modified: r.modified,
        sensitivity: r.sensitivity,
        rel_error: r.rel_error,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable report")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("undefined".into(), |v| format!("{v}"))
}

/// Runs one command, writing the result to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(input);
    match &cli.cmd {
        Cmd::Analyze(c) => {
            let (_, _, plan) = analyze(c, c.beta, dp::GAMMA)?;
            let r = analyze_report(&plan);
            if c.json {
                return w(out, json(&r));
            }
            let mut s = format!("-- modified query\n{}\n-- sensitivity query\n{}\n", r.modified_sql, r.sensitivity_sql);
            s += &format!("-- beta: {} (requested {})\n", r.beta, r.requested_beta);
            for t in &r.tables {
                s += &format!("-- {}: scaling {} γ = {} factors {:?}\n", t.alias, t.method, t.gamma, t.factors);
            }
            for m in &r.warnings {
                s += &format!("-- warning: {m}\n");
            }
            w(out, s.trim_end().to_string())
        }
        Cmd::Run(a) => {
            let (s, ctx, plan) = analyze(&a.common, a.common.beta, dp::GAMMA)?;
            let r = evaluate(&ctx, &plan, &load_data(&a.data, &s)?)?;
            if a.common.json {
                return w(out, json(&r));
            }
            let mut s = format!(
                "initial: {}\nmodified: {}\nsensitivity: {}\nrel_error: {}\nbeta: {}",
                r.initial,
                r.modified,
                r.sensitivity,
                fmt_opt(r.rel_error),
                r.beta
            );
            for m in &r.warnings {
                s += &format!("\nwarning: {m}");
            }
            w(out, s)
        }
        Cmd::Privatize(a) => {
            let c = &a.run.common;
            let params = NoiseParams::new(a.epsilon, c.beta, a.gamma).map_err(from_dp)?;
            let (s, _, plan) = analyze(c, params.beta, params.gamma)?;
            let db = load_data(&a.run.data, &s)?;
            let raw = engine::run_modified(&plan, &db).map_err(input)?;
            let sens = engine::run_sensitivity(&plan, &db).map_err(input)?;
            let release = dp::privatize(raw, sens.value, params, a.seed).map_err(from_dp)?;
            let r = PrivatizeReport { version: REPORT_VERSION, release, beta_achieved: plan.beta, warnings: plan.warnings };
            if c.json {
                return w(out, json(&r));
            }
            let p = r.release.params;
            w(
                out,
                format!(
                    "noised: {}\nepsilon: {} beta: {} gamma: {} b: {}\nsensitivity: {}\nseed: {}",
                    r.release.noised, p.epsilon, p.beta, p.gamma, p.b, r.release.sensitivity, r.release.seed
                ),
            )
        }
        Cmd::Bench(a) => {
            let r = bench(a)?;
            if a.json {
                return w(out, json(&r));
            }
            w(
                out,
                format!(
                    "rows: {}\ninitial: {}\nmodified: {}\nsensitivity: {}\nrel_error: {}%\nseconds: {:.3}",
                    r.rows,
                    r.initial,
                    r.modified,
                    r.sensitivity,
                    fmt_opt(r.rel_error),
                    r.seconds
                ),
            )
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_cases() {
        assert_eq!(rel_error(100.0, 95.0, 0.5), Some(0.0));
        assert_eq!(rel_error(-10.0, -10.0, 1.0), Some(100.0));
        assert_eq!(rel_error(0.0, 0.0, 0.0), Some(0.0));
        assert_eq!(rel_error(0.0, 1.0, 0.0), None);
    }

    #[test]
    fn select_prefix_means_inline_text() {
        assert_eq!(query_text("  SELECT 1").unwrap(), "  SELECT 1");
        assert!(matches!(query_text("/no/such/file.sql"), Err(CliError::Input(m)) if m.contains("/no/such/file.sql")));
    }
}
