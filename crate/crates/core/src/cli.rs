//! The `frbl` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::catalog::{self, Expected};
use crate::coupling::{maximize_coupling, CouplingOptions};
use crate::datum::Datum;
use crate::decompose::{decompose, verify_additivity};
use crate::error::{FrblError, Result};
use crate::finiteness::{check_finiteness, Budget, ProductSubspace};
use crate::geometric::{self, geometrize};
use crate::linalg::sig12;
use crate::operator::{matrix_from_json, SpdOperator};
use crate::solver::{certify, compute_dg, verify_duality, Extremizers, SolveOptions, Verdict};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "frbl", version, about = "Gaussian forward-reverse Brascamp-Lieb constants")]
struct Cli {
    /// Emit a machine-readable JSON report.
    #[arg(long, global = true)]
    json: bool,
    /// Leave timings out of the report, making it byte-for-byte reproducible.
    #[arg(long, global = true)]
    no_timings: bool,
    #[arg(long, global = true, env = "FRBL_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check shapes, the scaling condition and surjectivity.
    Validate { file: PathBuf },
    /// Compute D_g with an optimality certificate.
    Solve {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 5000)]
        max_outer: usize,
    },
    /// Check candidate extremizers.
    Certify {
        file: PathBuf,
        #[arg(long)]
        extremizers: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Print the dual datum, or compare both constants.
    Dual {
        file: PathBuf,
        #[arg(long)]
        solve_both: bool,
        /// Largest accepted gap with --solve-both.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Search for a dimension-condition witness.
    Finiteness {
        file: PathBuf,
        #[arg(long, default_value_t = 16)]
        max_enum_dim: usize,
        #[arg(long, default_value_t = 200)]
        random_trials: usize,
    },
    /// Split along a product-form subspace.
    Decompose {
        file: PathBuf,
        #[arg(long)]
        subspace: PathBuf,
        /// Also solve the three data and check additivity.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Recognize a geometric datum, or geometrize one.
    Geometric(GeometricArgs),
    /// Built-in instances.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Args, Debug)]
#[command(args_conflicts_with_subcommands = true)]
struct GeometricArgs {
    #[command(subcommand)]
    action: Option<GeometricAction>,
    file: Option<PathBuf>,
    /// File holding Σ as a matrix or as {"Sigma": matrix}.
    #[arg(long)]
    sigma: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Subcommand, Debug)]
enum GeometricAction {
    /// Map a datum with certified extremizers to an equivalent geometric datum.
    Geometrize {
        file: PathBuf,
        #[arg(long)]
        extremizers: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Subcommand, Debug)]
enum CatalogAction {
    /// List the constructors and their default parameters.
    List,
    /// Write an instance as datum JSON, e.g. `export reverse_young p=2/3 q=2/3 r=1/2 n=1`.
    Export {
        name: String,
        params: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the catalog checks.
    Selftest {
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

/// Outcome of one command: the payload plus whether the command counts as failed.
struct Outcome {
    fingerprint: Option<String>,
    result: Value,
    human: String,
    failed: bool,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| FrblError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| FrblError::Parse(format!("{}: {e}", path.display())))
}

fn read_datum(path: &Path) -> Result<Datum> {
    Datum::from_json_value(&read_json(path)?)
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

/// Rounds every float to 12 significant digits.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(sig12(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}


fn fmt12(x: f64) -> String {
    let r = sig12(x);
    if r != 0.0 && r.is_finite() && (r.abs() < 1e-4 || r.abs() >= 1e12) {
        format!("{r:e}")
    } else {
        r.to_string()
    }
}

fn solve_options(seed: u64) -> SolveOptions {
    SolveOptions { seed, ..SolveOptions::default() }
}

fn run_command(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Validate { file } => {
            let datum = read_datum(file)?;
            let rep = datum.validate();
            let human = format!(
                "k = {}, m = {}, N = {}\nscaling: {} (lhs {}, rhs {})\nsurjective: {:?}",
                rep.k,
                rep.m,
                rep.total_dim,
                if rep.scaling_holds { "holds" } else { "fails" },
                rep.scaling_lhs,
                rep.scaling_rhs,
                rep.surjective
            );
            Ok(Outcome { fingerprint: Some(datum.fingerprint()), result: serde_json::to_value(&rep)?, human, failed: false })
        }
        Command::Solve { file, tol, restarts, max_outer } => {
            let datum = read_datum(file)?;
            let opts = SolveOptions { tol: *tol, restarts: *restarts, max_outer: *max_outer, ..solve_options(cli.seed) };
            let rep = compute_dg(&datum, &opts)?;
            let human = match rep.dg_value.as_f64() {
                v if v.is_finite() => format!(
                    "D_g = {}\nverdict: {:?}\n{}",
                    fmt12(v),
                    rep.verdict().expect("finite reports carry a certificate"),
                    rep.dual_gap_note
                ),
                _ => format!("D_g = +inf\n{}", rep.dg_value.to_json_value()),
            };
            let failed = rep.verdict() == Some(Verdict::Infeasible);
            Ok(Outcome { fingerprint: Some(datum.fingerprint()), result: rep.to_json_value(), human, failed })
        }
        Command::Certify { file, extremizers, tol } => {
            let datum = read_datum(file)?;
            let ext = Extremizers::from_json_value(&read_json(extremizers)?, &datum)?;
            let cert = certify(&datum, &ext, *tol);
            let human = format!(
                "verdict: {:?}\nvalue: {}\ntheta_min_eig: {}\ncomplementarity: {}\nblock_residual: {}\nuj_residual: {}",
                cert.verdict,
                fmt12(cert.value),
                fmt12(cert.theta_min_eig),
                fmt12(cert.complementarity),
                fmt12(cert.block_residual),
                fmt12(cert.uj_residual)
            );
            let failed = cert.verdict == Verdict::Infeasible;
            Ok(Outcome { fingerprint: Some(datum.fingerprint()), result: serde_json::to_value(&cert)?, human, failed })
        }
        Command::Dual { file, solve_both, tol } => {
            let datum = read_datum(file)?;
            if *solve_both {
                let check = verify_duality(&datum, *tol, &solve_options(cli.seed))?;
                let human = format!(
                    "D_g = {}\nD_g(dual) = {}\ngap = {}{}",
                    fmt12(check.dg),
                    fmt12(check.dg_dual),
                    fmt12(check.gap),
                    if check.within_tol { "" } else { " (exceeds tolerance)" }
                );
                Ok(Outcome {
                    fingerprint: Some(datum.fingerprint()),
                    result: check.to_json_value(),
                    human,
                    failed: !check.within_tol,
                })
            } else {
                let dual = datum.dual();
                Ok(Outcome {
                    fingerprint: Some(datum.fingerprint()),
                    result: json!({"dual_datum": dual.to_json_value()}),
                    human: dual.to_json(),
                    failed: false,
                })
            }
        }
        Command::Finiteness { file, max_enum_dim, random_trials } => {
            let datum = read_datum(file)?;
            let budget = Budget { max_enum_dim: *max_enum_dim, random_trials: *random_trials, seed: cli.seed };
            let verdict = check_finiteness(&datum, &budget);
            let result = verdict.to_json_value();
            let human = format!(
                "verdict: {}\nsimplicity: {}\n{}",
                result["verdict"].as_str().unwrap_or_default(),
                result["simplicity"].as_str().unwrap_or_default(),
                verdict.search_log.join("\n")
            );
            Ok(Outcome { fingerprint: Some(datum.fingerprint()), result, human, failed: false })
        }
        Command::Decompose { file, subspace, verify, tol } => {
            let datum = read_datum(file)?;
            let t = ProductSubspace::from_json_value(&read_json(subspace)?, datum.input_dims())?;
            let dec = decompose(&datum, &t)?;
            let mut result = dec.to_json_value();
            let mut human = format!(
                "restricted: input dims {:?}, output dims {:?}\nquotient: input dims {:?}, output dims {:?}",
                dec.restricted.input_dims(),
                dec.restricted.output_dims(),
                dec.quotient.input_dims(),
                dec.quotient.output_dims()
            );
            let mut failed = false;
            if *verify {
                let add = verify_additivity(&datum, &t, *tol, &solve_options(cli.seed))?;
                human.push_str(&format!(
                    "\nD_g = {}, D_g(T) = {}, D_g(E_0/T) = {}\ngap = {} ({})",
                    fmt12(add.dg_full),
                    fmt12(add.dg_t),
                    fmt12(add.dg_quotient),
                    fmt12(add.gap),
                    if add.critical { "critical subspace, additivity" } else { "subadditivity" }
                ));
                failed = !add.holds;
                result["additivity"] = add.to_json_value();
            }
            Ok(Outcome { fingerprint: Some(datum.fingerprint()), result, human, failed })
        }
        Command::Geometric(args) => run_geometric(args),
        Command::Catalog { action } => run_catalog(action, cli.seed),
    }
}

fn run_geometric(args: &GeometricArgs) -> Result<Outcome> {
    if let Some(GeometricAction::Geometrize { file, extremizers, tol }) = &args.action {
        let datum = read_datum(file)?;
        let ext = Extremizers::from_json_value(&read_json(extremizers)?, &datum)?;
        let geo = geometrize(&datum, &ext, *tol)?;
        let human = format!(
            "geometric datum:\n{}\nshift D_g(original) - D_g(geometric) = {}",
            geo.datum.to_json(),
            fmt12(geo.shift)
        );
        return Ok(Outcome { fingerprint: Some(datum.fingerprint()), result: geo.to_json_value(), human, failed: false });
    }
    let file = args
        .file
        .as_ref()
        .ok_or_else(|| FrblError::InvalidArgument("geometric needs a datum file or the geometrize subcommand".into()))?;
    let datum = read_datum(file)?;
    let sigma = match &args.sigma {
        Some(p) => {
            let v = read_json(p)?;
            matrix_from_json(v.get("Sigma").unwrap_or(&v), "Sigma")?
        }
        None => {
            // The pushforwards of the coupling maximizer at K_i = id are unique,
            // so it satisfies Q_jΣQ_jᵀ = id whenever any Σ does.
            let ids: Vec<SpdOperator> = datum.input_dims().iter().map(|&n| SpdOperator::identity(n)).collect();
            maximize_coupling(&datum, &ids, &CouplingOptions::default())?.coupling.matrix().clone()
        }
    };
    let (result, human) = match geometric::is_geometric(&datum, &sigma, args.tol) {
        Ok(w) => {
            let mut r = w.to_json_value();
            r["geometric"] = json!(true);
            let h = format!(
                "geometric: yes\nqq_gram residual: {}\nlambda slack: {}",
                fmt12(w.qq_gram),
                fmt12(w.lambda_slack)
            );
            (r, h)
        }
        Err(refusal) => {
            let mut r = refusal.to_json_value();
            r["geometric"] = json!(false);
            (r, format!("geometric: no ({refusal})"))
        }
    };
    Ok(Outcome { fingerprint: Some(datum.fingerprint()), result, human, failed: false })
}

fn run_catalog(action: &CatalogAction, seed: u64) -> Result<Outcome> {
    match action {
        CatalogAction::List => {
            let families: Vec<Value> = catalog::FAMILIES
                .iter()
                .map(|f| json!({"name": f.name, "params": f.params, "summary": f.summary}))
                .collect();
            let human = catalog::FAMILIES
                .iter()
                .map(|f| format!("{:24} {:28} {}", f.name, f.params, f.summary))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Outcome { fingerprint: None, result: json!({"families": families}), human, failed: false })
        }
        CatalogAction::Export { name, params, output } => {
            let entry = catalog::build(name, params)?;
            let text = entry.datum.to_json();
            if let Some(path) = output {
                std::fs::write(path, &text).map_err(|e| FrblError::Io(format!("{}: {e}", path.display())))?;
            }
            let mut result = entry.to_json_value();
            result["datum"] = entry.datum.to_json_value();
            Ok(Outcome { fingerprint: Some(entry.datum.fingerprint()), result, human: text, failed: false })
        }
        CatalogAction::Selftest { tol } => {
            let opts = solve_options(seed);
            let mut lines = Vec::new();
            let mut checks = Vec::new();
            let mut failed = false;
            for entry in catalog::standard() {
                let mut record = |what: &str, ok: bool, detail: String| {
                    failed |= !ok;
                    lines.push(format!("{} {} {what}: {detail}", if ok { "PASS" } else { "FAIL" }, entry.name));
                    checks.push(json!({"entry": entry.name, "check": what, "pass": ok, "detail": detail}));
                };
                let fin = check_finiteness(&entry.datum, &Budget { seed, ..Budget::default() });
                let verdict = fin.to_json_value()["verdict"].as_str().unwrap_or_default().to_string();
                record("finiteness", !fin.is_infinite(), verdict);
                match verify_duality(&entry.datum, *tol, &opts) {
                    Ok(check) => {
                        if let Expected::Finite(v) = entry.expected_dg {
                            let err = (check.dg - v).abs();
                            record("value", err <= *tol, format!("D_g = {}, expected {}", fmt12(check.dg), fmt12(v)));
                        }
                        let verdict = check.primal.verdict().map_or("none".to_string(), |v| format!("{v:?}"));
                        record("certified", check.primal.is_certified(), verdict);
                        record("duality", check.within_tol, format!("gap {}", fmt12(check.gap)));
                    }
                    Err(e) => record("solve", false, e.to_string()),
                }
                if let Some(hint) = &entry.extremal_hint {
                    let cert = certify(&entry.datum, hint, 1e-6);
                    record("hint", cert.is_certified(), format!("{:?}", cert.verdict));
                }
            }
            let human = lines.join("\n");
            Ok(Outcome { fingerprint: None, result: json!({"checks": checks, "all_pass": !failed}), human, failed })
        }
    }
}

/// Runs the CLI on `args` (including the program name), writing to `out`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(out, "{}", e.render());
            return code;
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let start = Instant::now();
    let outcome = run_command(&cli);
    let elapsed = start.elapsed().as_secs_f64();
    let (code, mut report, human) = match outcome {
        Ok(o) => {
            let report = json!({
                "command": echo,
                "fingerprint": o.fingerprint,
                "result": o.result,
                "version": VERSION,
                "seed": cli.seed,
            });
            (if o.failed { 1 } else { 0 }, report, o.human)
        }
        Err(e) => {
            let code = if e.is_input_error() { 2 } else { 1 };
            let mut error = json!({"kind": e.kind(), "message": e.to_string()});
            if let FrblError::SolveConvergence(rep) = &e {
                error["best_so_far"] = rep.to_json_value();
            }
            let report = json!({"command": echo, "error": error, "version": VERSION, "seed": cli.seed});
            (code, report, format!("error: {e}"))
        }
    };
    if !cli.no_timings {
        report["timings"] = json!({"total_seconds": num(elapsed)});
    }
    round_floats(&mut report);
    let _ = if cli.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))
    } else {
        writeln!(out, "{human}")
    };
    code
}
