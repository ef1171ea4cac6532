//! Command-line front end: argument parsing, command dispatch and output
//! encoding for the `linesum` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use linesum_core::asymptotic::estimate_log_count;
use linesum_core::exact::{exact_count_bruteforce, exact_count_with, gale_ryser_feasible, CounterConfig};
use linesum_core::integral::{default_trapezoid_nodes, integrate_i, Method};
use linesum_core::moments::{big_z, integrate_f_direct, mw3_estimate, theta1, theta2, MomentCoefficients};
use linesum_core::saddle::{log_prefactor, log_prefactor_approx, log_prefactor_forms, solve_saddle};
use linesum_core::special::{exp_decimal, ln_biguint};
use linesum_core::{compute_stats, Error, MarginPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const CSV_HEADER: [&str; 7] = ["m", "n", "command", "value", "log_value", "error_estimate", "runtime_ms"];

#[derive(Debug, Parser)]
#[command(name = "linesum", version, about = "Count 0-1 matrices with prescribed row and column sums")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gale–Ryser feasibility test.
    Feasible(Common),
    /// Exact count by dynamic programming (or enumeration).
    CountExact {
        #[command(flatten)]
        common: Common,
        /// Enumerate all 2^(mn) matrices instead (mn <= 25).
        #[arg(long)]
        bruteforce: bool,
        #[arg(long, default_value_t = 100_000_000)]
        state_cap: u64,
    },
    /// Asymptotic estimate and its factors.
    Estimate(Common),
    /// Solve the saddle-point equations and report the prefactor.
    Saddle(Common),
    /// Check B = P·I with trapezoid or Monte Carlo integration.
    VerifyIntegral {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Trapezoid)]
        method: MethodArg,
        /// Nodes per angle (trapezoid) or samples (Monte Carlo).
        #[arg(long)]
        resolution: Option<u64>,
    },
    /// Compare the closed-form moment estimate with direct quadrature.
    Mw3Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 101)]
        nodes: usize,
    },
    /// Exact count next to the asymptotic estimate.
    Compare(Common),
    /// Run a family of instances.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Comma-separated sizes.
        #[arg(long = "n", value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Instances per size for the random family.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON instance `{"s": [...], "t": [...]}` (coefficients for mw3-check).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub s: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-13)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, env = "LINESUM_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Record wall-clock times (otherwise reported as 0).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Trapezoid,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Semiregular,
    Random,
}

/// One result. Big integers are decimal strings, logs are doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: Option<MarginPair>,
    pub command: String,
    pub outputs: BTreeMap<String, Value>,
    pub timing_ms: u64,
    pub version: String,
}

impl RunRecord {
    fn new(instance: Option<&MarginPair>, command: &str) -> Self {
        RunRecord {
            instance: instance.cloned(),
            command: command.to_string(),
            outputs: BTreeMap::new(),
            timing_ms: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.outputs.insert(key.to_string(), value.into());
    }

    /// Output keys feeding the CSV `value`, `log_value` and `error_estimate` columns.
    pub fn csv_keys(command: &str) -> [&'static str; 3] {
        match command {
            "feasible" => ["feasible", "", ""],
            "count-exact" => ["count", "log_count", ""],
            "estimate" => ["estimate", "log_value", ""],
            "saddle" => ["log_prefactor", "log_prefactor", "residual"],
            "verify-integral" => ["product", "log_product", "relative_error"],
            "mw3-check" => ["direct_re", "estimate_log_re", "relative_defect"],
            "compare" => ["exact", "log_estimate", "log_error"],
            "sweep" => ["exact", "log_estimate", "log_error"],
            _ => ["", "", ""],
        }
    }

    pub fn csv_row(&self) -> [String; 7] {
        let (m, n) = self.instance.as_ref().map_or((String::new(), String::new()), |mp| {
            (mp.m().to_string(), mp.n().to_string())
        });
        let field = |key: &str| match self.outputs.get(key) {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
        };
        let [v, l, e] = Self::csv_keys(&self.command);
        [m, n, self.command.clone(), field(v), field(l), field(e), self.timing_ms.to_string()]
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INVALID, message: message.into() }
}

fn load_instance(c: &Common) -> Result<MarginPair, Failure> {
    match (&c.input, &c.s, &c.t) {
        (Some(path), None, None) => {
            let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            Ok(MarginPair::from_json(&text)?)
        }
        (None, Some(s), Some(t)) => Ok(MarginPair::new(s.clone(), t.clone())?),
        _ => Err(invalid("give either --input FILE or both --s and --t")),
    }
}

fn ms(start: Instant, timing: bool) -> u64 {
    if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Log of a positive f64, or `null` for zero.
fn log_or_null(x: f64) -> Value {
    if x > 0.0 {
        json!(x.ln())
    } else {
        Value::Null
    }
}

fn cmd_feasible(mp: &MarginPair) -> (RunRecord, i32) {
    let mut rec = RunRecord::new(Some(mp), "feasible");
    let ok = gale_ryser_feasible(mp);
    rec.put("feasible", ok);
    (rec, if ok { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_count(mp: &MarginPair, bruteforce: bool, state_cap: u64) -> Result<(RunRecord, i32), Failure> {
    let mut rec = RunRecord::new(Some(mp), "count-exact");
    let count = if bruteforce {
        exact_count_bruteforce(mp)?
    } else {
        exact_count_with(mp, &CounterConfig { state_cap, ..CounterConfig::default() })?
    };
    let zero = count.value.bits() == 0;
    rec.put("count", count.value.to_string());
    rec.put("log_count", if zero { Value::Null } else { json!(ln_biguint(&count.value)) });
    rec.put("states_visited", count.states_visited);
    rec.put("method", if bruteforce { "bruteforce" } else { "dp" });
    Ok((rec, if zero { EXIT_INFEASIBLE } else { EXIT_OK }))
}

fn cmd_estimate(mp: &MarginPair) -> Result<RunRecord, Failure> {
    let mut rec = RunRecord::new(Some(mp), "estimate");
    let est = estimate_log_count(mp)?;
    rec.put("estimate", exp_decimal(est.log_value).map_or(Value::Null, Value::String));
    rec.put("log_value", est.log_value);
    rec.put("log_n", est.log_n);
    rec.put("log_p1", est.log_p1);
    rec.put("log_p2", est.log_p2);
    rec.put("log_e", est.log_e);
    rec.put("density_warning", est.density_warning);
    Ok(rec)
}

fn cmd_saddle(mp: &MarginPair, tol: f64) -> Result<RunRecord, Failure> {
    let mut rec = RunRecord::new(Some(mp), "saddle");
    let sol = solve_saddle(mp, tol, 200)?;
    let forms = log_prefactor_forms(&sol, mp);
    rec.put("log_prefactor", log_prefactor(&sol, mp)?);
    rec.put("log_prefactor_entropy", forms.entropy);
    rec.put("log_prefactor_product", forms.product);
    let stats = compute_stats(mp);
    rec.put("log_prefactor_approx", log_prefactor_approx(&stats, mp).ok());
    rec.put("a", sol.a.clone());
    rec.put("b", sol.b.clone());
    rec.put("lambda", sol.lambda);
    rec.put("r", sol.r);
    rec.put("iterations", sol.iterations);
    rec.put("residual", sol.residual);
    rec.put("gauge_defect", sol.gauge_defect);
    rec.put("damped", sol.damped);
    rec.put("newton", sol.newton);
    Ok(rec)
}

fn cmd_verify(mp: &MarginPair, tol: f64, method: MethodArg, resolution: Option<u64>, seed: u64) -> Result<RunRecord, Failure> {
    let mut rec = RunRecord::new(Some(mp), "verify-integral");
    let sol = solve_saddle(mp, tol, 200)?;
    let log_p = log_prefactor(&sol, mp)?;
    let (method, resolution) = match method {
        MethodArg::Trapezoid => (Method::Trapezoid, resolution.unwrap_or(default_trapezoid_nodes(mp.m() + mp.n()))),
        MethodArg::Mc => (Method::MonteCarlo, resolution.unwrap_or(1_000_000)),
    };
    let integral = integrate_i(mp, &sol, method, resolution, seed)?;
    let product = log_p.exp() * integral.value.re;
    rec.put("method", serde_json::to_value(integral.method).expect("method serializes"));
    rec.put("resolution", integral.points_or_samples);
    rec.put("log_prefactor", log_p);
    rec.put("integral_re", integral.value.re);
    rec.put("integral_im", integral.value.im);
    rec.put("integral_error", integral.error_estimate);
    rec.put("product", product);
    rec.put("log_product", log_or_null(product));
    if mp.m() + mp.n() <= 12 {
        let exact = exact_count_with(mp, &CounterConfig::default())?.value;
        let exact_f = ln_biguint(&exact).exp();
        rec.put("exact", exact.to_string());
        let rel = if exact.bits() == 0 { Value::Null } else { json!((product - exact_f).abs() / exact_f) };
        rec.put("relative_error", rel);
    }
    Ok(rec)
}

fn cmd_mw3(c: &Common, nodes: usize) -> Result<RunRecord, Failure> {
    let path = c.input.as_ref().ok_or_else(|| invalid("mw3-check needs --input COEFFS.json"))?;
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mc = MomentCoefficients::from_json(&text)?;
    let mut rec = RunRecord::new(None, "mw3-check");
    let est = mw3_estimate(&mc);
    let direct = integrate_f_direct(&mc, nodes)?;
    let est_value = est.exp();
    rec.put("N", mc.dim);
    rec.put("theta1", vec![theta1(&mc).re, theta1(&mc).im]);
    rec.put("theta2", vec![theta2(&mc).re, theta2(&mc).im]);
    rec.put("big_z", big_z(&mc));
    rec.put("estimate_log_re", est.re);
    rec.put("estimate_log_im", est.im);
    rec.put("direct_re", direct.re);
    rec.put("direct_im", direct.im);
    rec.put("relative_defect", (direct - est_value).norm() / est_value.norm());
    rec.put("box_corrected_defect", linesum_core::moments::box_corrected_defect(&mc, direct));
    Ok(rec)
}

fn compare_record(mp: &MarginPair, command: &str) -> Result<(RunRecord, i32), Failure> {
    let mut rec = RunRecord::new(Some(mp), command);
    let exact = exact_count_with(mp, &CounterConfig::default())?.value;
    rec.put("exact", exact.to_string());
    if exact.bits() == 0 {
        return Ok((rec, EXIT_INFEASIBLE));
    }
    let log_exact = ln_biguint(&exact);
    let est = estimate_log_count(mp)?;
    rec.put("log_exact", log_exact);
    rec.put("log_estimate", est.log_value);
    rec.put("estimate", exp_decimal(est.log_value).map_or(Value::Null, Value::String));
    rec.put("ratio", (est.log_value - log_exact).exp());
    rec.put("log_error", (est.log_value - log_exact).abs());
    rec.put("log_np1p2", est.log_n + est.log_p1 + est.log_p2);
    Ok((rec, EXIT_OK))
}

fn sweep_instances(family: Family, lambda: f64, sizes: &[usize], count: usize, seed: u64) -> Result<Vec<MarginPair>, Failure> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid(format!("--lambda must lie in (0, 1), got {lambda}")));
    }
    let mut out = Vec::new();
    match family {
        Family::Semiregular => {
            for &n in sizes {
                let d = lambda * n as f64;
                if (d - d.round()).abs() > 1e-9 || n == 0 {
                    return Err(invalid(format!("lambda * n = {d} is not a positive integer")));
                }
                out.push(MarginPair::semiregular(n, d.round() as u32, n, d.round() as u32)?);
            }
        }
        Family::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &n in sizes {
                for _ in 0..count {
                    // redraw the all-zero and all-one matrices, which have no estimate
                    let cells: Vec<bool> = loop {
                        let cells: Vec<bool> = (0..n * n).map(|_| rng.random_bool(lambda)).collect();
                        let ones = cells.iter().filter(|&&c| c).count();
                        if n == 1 || (ones > 0 && ones < n * n) {
                            break cells;
                        }
                    };
                    let s = (0..n).map(|j| (0..n).filter(|&k| cells[j * n + k]).count() as u32).collect();
                    let t = (0..n).map(|k| (0..n).filter(|&j| cells[j * n + k]).count() as u32).collect();
                    out.push(MarginPair::new(s, t)?);
                }
            }
        }
    }
    Ok(out)
}

fn execute(cli: &Cli) -> Result<(Vec<RunRecord>, i32), Failure> {
    let one = |r: RunRecord| Ok((vec![r], EXIT_OK));
    match &cli.command {
        Command::Feasible(c) => {
            let (r, code) = cmd_feasible(&load_instance(c)?);
            Ok((vec![r], code))
        }
        Command::CountExact { common, bruteforce, state_cap } => {
            let (r, code) = cmd_count(&load_instance(common)?, *bruteforce, *state_cap)?;
            Ok((vec![r], code))
        }
        Command::Estimate(c) => one(cmd_estimate(&load_instance(c)?)?),
        Command::Saddle(c) => one(cmd_saddle(&load_instance(c)?, c.tol)?),
        Command::VerifyIntegral { common, method, resolution } => {
            one(cmd_verify(&load_instance(common)?, common.tol, *method, *resolution, common.seed)?)
        }
        Command::Mw3Check { common, nodes } => one(cmd_mw3(common, *nodes)?),
        Command::Compare(c) => {
            let (r, code) = compare_record(&load_instance(c)?, "compare")?;
            Ok((vec![r], code))
        }
        Command::Sweep { common, family, lambda, sizes, count } => {
            let mut records = Vec::new();
            for mp in sweep_instances(*family, *lambda, sizes, *count, common.seed)? {
                let start = Instant::now();
                let (mut r, _) = compare_record(&mp, "sweep")?;
                r.timing_ms = ms(start, common.timing);
                records.push(r);
            }
            Ok((records, EXIT_OK))
        }
    }
}

fn common(cli: &Cli) -> &Common {
    match &cli.command {
        Command::Feasible(c) | Command::Estimate(c) | Command::Saddle(c) | Command::Compare(c) => c,
        Command::CountExact { common, .. }
        | Command::VerifyIntegral { common, .. }
        | Command::Mw3Check { common, .. }
        | Command::Sweep { common, .. } => common,
    }
}

/// Encode records in the requested format.
pub fn render(records: &[RunRecord], format: Format, sweep: bool) -> String {
    match format {
        Format::Json => {
            let mut text = if sweep {
                serde_json::to_string_pretty(records)
            } else {
                serde_json::to_string_pretty(&records[0])
            }
            .expect("records serialize");
            text.push('\n');
            text
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for r in records {
                w.write_record(r.csv_row()).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
    }
}

/// Run one invocation, writing results to `stdout` (or `--out`) and
/// diagnostics to `stderr`. Returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    let c = common(&cli).clone();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(c.threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: thread pool: {e}");
            return EXIT_NUMERICAL;
        }
    };
    let start = Instant::now();
    let result = pool.install(|| execute(&cli));
    let (mut records, code) = match result {
        Ok(x) => x,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            return f.code;
        }
    };
    let sweep = matches!(cli.command, Command::Sweep { .. });
    if !sweep {
        records[0].timing_ms = ms(start, c.timing);
    }
    let text = render(&records, c.format, sweep);
    let written = match &c.out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_INVALID;
    }
    code
}
