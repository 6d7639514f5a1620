use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use pirv::equiv::{self, CompareSet, EquivOptions, EquivReport, Side, Verdict};
use pirv::interp::{self, Config, Execution, Fault, VerifError, DEFAULT_STEP_BUDGET};
use pirv::lang::{self, CoreProgram, LangError, SourceProgram};
use pirv::schedfuzz::{self, Exploration};
use pirv::symval::SymPool;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_VERIF: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "pirv",
    version,
    about = "Race checking and equivalence for .pir programs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Interpret one program and report races, semaphore misuse or deadlock.
    Check {
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Print the final memory.
        #[arg(long)]
        dump_memory: bool,
        /// Write the happens-before graph as dot.
        #[arg(long, value_name = "FILE")]
        hb_dot: Option<PathBuf>,
    },
    /// Check two programs and compare their final memories.
    Equiv {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eq: EqArgs,
        /// Write the CDAG diff of the first mismatch as dot.
        #[arg(long, value_name = "FILE")]
        dot_out: Option<PathBuf>,
    },
    /// Explore schedules and report how many distinct outcomes they reach.
    Fuzz {
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
        mode: Mode,
        /// Distinct-state limit for exhaustive mode.
        #[arg(long, default_value_t = schedfuzz::DEFAULT_STATE_LIMIT)]
        limit: usize,
        /// Number of seeds for random mode.
        #[arg(long, default_value_t = schedfuzz::DEFAULT_SEEDS)]
        seeds: u64,
        /// Write a divergence report (with a shrunk reproducer) here.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Run with a deliberately broken wait rule (exercises the shrinker).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the CDAG diff of the first mismatched cell of two programs as dot.
    Dot {
        a: PathBuf,
        b: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eq: EqArgs,
    },
    /// Print per-program statistics (statements, tasks, sync ops, hb-rat, time).
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check every `.pir` file under a directory, recursively and in parallel.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Mode {
    Exhaustive,
    Random,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Maximum interpreter steps.
    #[arg(long, env = "PIRV_STEP_BUDGET", default_value_t = DEFAULT_STEP_BUDGET)]
    budget: u64,
    /// Keep one graph node per statement instance.
    #[arg(long)]
    no_merge: bool,
    /// Validate the whole graph declaratively after every step.
    #[arg(long)]
    paranoid: bool,
    /// Print semaphore events.
    #[arg(long)]
    trace_sem: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

impl RunArgs {
    fn config(&self) -> Config {
        Config {
            merge: !self.no_merge,
            budget: self.budget,
            paranoid: self.paranoid,
            trace_sem: self.trace_sem,
            fault: None,
        }
    }
}

#[derive(Args, Clone)]
struct EqArgs {
    /// Normalize associative-commutative operators before comparing.
    #[arg(long)]
    ac: bool,
    /// Enable the built-in rewrite rules (includes the unsound `/($x,$x) => 1`).
    #[arg(long)]
    builtin_rules: bool,
    /// User rewrite rules, one `pattern => replacement` per line.
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    /// Compare every task's variables, not just root-task ones.
    #[arg(long)]
    strict: bool,
}

/// Failure that ends a command with a given exit code.
struct Fail(u8, String);

type CmdResult = Result<u8, Fail>;

fn load(path: &Path) -> Result<CoreProgram, Fail> {
    let src = SourceProgram::from_file(path)
        .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    lang::compile(&src).map_err(|e: LangError| Fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn equiv_options(eq: &EqArgs) -> Result<EquivOptions, Fail> {
    let mut opts = EquivOptions {
        ac_normalize: eq.ac,
        builtin_rules: eq.builtin_rules,
        compare_set: if eq.strict {
            CompareSet::StrictAll
        } else {
            CompareSet::NonLocal
        },
        ..EquivOptions::default()
    };
    if let Some(p) = &eq.rules {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
        opts.user_rules = equiv::parse_rules(&text)
            .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
    }
    Ok(opts)
}

fn print_json(v: &Json) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("report serializes")
    );
}

fn error_json(e: &VerifError) -> Json {
    serde_json::to_value(e).expect("error serializes")
}

fn print_trace(ex: &Execution) {
    for e in &ex.machine.trace {
        println!(
            "  sem: task {} line {}: {}({}, {}) {}",
            e.task, e.line, e.op, e.sem, e.val, e.event
        );
    }
}

fn timed_run<'p>(prog: &'p CoreProgram, cfg: Config, pool: &mut SymPool) -> (Execution<'p>, f64) {
    let t0 = Instant::now();
    let ex = interp::execute(prog, cfg, pool);
    (ex, t0.elapsed().as_secs_f64())
}

fn cmd_check(file: &Path, run: &RunArgs, dump: bool, hb_dot: Option<&Path>) -> CmdResult {
    let prog = load(file)?;
    let mut pool = SymPool::new();
    let (ex, t_int) = timed_run(&prog, run.config(), &mut pool);
    if let Some(p) = hb_dot {
        let g = &ex.machine.graph;
        let dot = g.to_dot(&|n| format!("{} {}:{}", n.kind.name(), g.task(n.task).id, n.line));
        std::fs::write(p, dot).map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
    }
    let stats = ex.stats();
    let code = if ex.error.is_some() {
        EXIT_VERIF
    } else {
        EXIT_OK
    };
    match run.format {
        Format::Json => print_json(&json!({
            "file": file.display().to_string(),
            "verdict": if ex.error.is_some() { "error" } else { "ok" },
            "error": ex.error.as_ref().map(error_json),
            "stats": stats,
            "t_int": t_int,
            "trace": ex.machine.trace,
            "memory": dump.then(|| ex.machine.mem.serialize(&prog, &pool)),
        })),
        Format::Text => {
            match &ex.error {
                None => println!("ok: {}", file.display()),
                Some(e) => println!("error: {}: {e}", file.display()),
            }
            if run.trace_sem {
                print_trace(&ex);
            }
            println!(
                "nb-s {}  nb-conc {}  nb-sync {}  nodes {}  hb-rat {:.3}  t-int {:.3}s",
                stats.nb_s, stats.nb_conc, stats.nb_sync, stats.nodes, stats.hb_rat, t_int
            );
            if dump {
                print!("{}", ex.machine.mem.serialize(&prog, &pool));
            }
        }
    }
    Ok(code)
}

struct EquivRun {
    report: EquivReport,
    t_int: [f64; 2],
    t_eq: f64,
    dot: Option<String>,
}

/// Interprets both programs and compares them; a verification error in
/// either ends the command with that diagnosis.
fn run_equiv(
    a: &Path,
    b: &Path,
    run: &RunArgs,
    eq: &EqArgs,
    want_dot: bool,
) -> Result<EquivRun, Fail> {
    let opts = equiv_options(eq)?;
    let (pa, pb) = (load(a)?, load(b)?);
    let (mut pool_a, mut pool_b) = (SymPool::new(), SymPool::new());
    let (ea, ta) = timed_run(&pa, run.config(), &mut pool_a);
    let (eb, tb) = timed_run(&pb, run.config(), &mut pool_b);
    for (path, ex) in [(a, &ea), (b, &eb)] {
        if let Some(e) = &ex.error {
            let msg = match run.format {
                Format::Json => serde_json::to_string_pretty(&json!({
                    "file": path.display().to_string(),
                    "verdict": "error",
                    "error": error_json(e),
                }))
                .unwrap(),
                Format::Text => format!("error: {}: {e}", path.display()),
            };
            return Err(Fail(EXIT_VERIF, msg));
        }
    }
    let t0 = Instant::now();
    let report = equiv::check_equiv(
        Side {
            prog: &pa,
            mem: &ea.machine.mem,
            pool: &mut pool_a,
        },
        Side {
            prog: &pb,
            mem: &eb.machine.mem,
            pool: &mut pool_b,
        },
        &opts,
    )
    .map_err(|e| Fail(EXIT_INPUT, format!("rewriting: {e}")))?;
    let t_eq = t0.elapsed().as_secs_f64();
    let dot = match (&report.first, want_dot) {
        (Some(m), true) => Some(equiv::diff_dot(m, &pool_a, &pool_b)),
        _ => None,
    };
    Ok(EquivRun {
        report,
        t_int: [ta, tb],
        t_eq,
        dot,
    })
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Equivalent => EXIT_OK,
        Verdict::Mismatch => EXIT_MISMATCH,
    }
}

fn cmd_equiv(a: &Path, b: &Path, run: &RunArgs, eq: &EqArgs, dot_out: Option<&Path>) -> CmdResult {
    let r = run_equiv(a, b, run, eq, dot_out.is_some())?;
    if let (Some(p), Some(dot)) = (dot_out, &r.dot) {
        std::fs::write(p, dot).map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
    }
    match run.format {
        Format::Json => print_json(&json!({
            "a": a.display().to_string(),
            "b": b.display().to_string(),
            "report": r.report,
            "t_int": r.t_int,
            "t_eq": r.t_eq,
        })),
        Format::Text => {
            let rep = &r.report;
            match &rep.first {
                None => println!(
                    "equivalent: {} variable(s), {} cell(s) compared",
                    rep.variables, rep.cells
                ),
                Some(m) => {
                    println!(
                        "mismatch: {} of {} cell(s) differ; first at {}{} (task {})",
                        rep.mismatched_cells, rep.cells, m.var, m.index, m.task
                    );
                    let side = |v: &Option<String>, l: Option<u32>| match (v, l) {
                        (None, _) => "undefined".to_string(),
                        (Some(v), Some(l)) => format!("{v}  [line {l}]"),
                        (Some(v), None) => v.clone(),
                    };
                    println!("  a: {}", side(&m.left, m.left_line));
                    println!("  b: {}", side(&m.right, m.right_line));
                    if m.node_left != m.left || m.node_right != m.right {
                        println!(
                            "  first differing nodes: {} vs {}",
                            m.node_left.as_deref().unwrap_or("undefined"),
                            m.node_right.as_deref().unwrap_or("undefined")
                        );
                    }
                }
            }
            for (rule, n) in &rep.rules_fired {
                println!("  rule fired {n}x: {rule}");
            }
            println!(
                "t-int {:.3}s / {:.3}s  t-eq {:.3}s",
                r.t_int[0], r.t_int[1], r.t_eq
            );
        }
    }
    Ok(verdict_code(r.report.verdict))
}

fn cmd_dot(a: &Path, b: &Path, output: &Path, run: &RunArgs, eq: &EqArgs) -> CmdResult {
    let r = run_equiv(a, b, run, eq, true)?;
    match &r.dot {
        Some(dot) => {
            std::fs::write(output, dot)
                .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", output.display())))?;
            println!("wrote {}", output.display());
        }
        None => println!("equivalent: nothing to draw"),
    }
    Ok(verdict_code(r.report.verdict))
}

fn divergence_report(e: &Exploration) -> String {
    let mut out = String::new();
    for (k, (o, w)) in e.outcomes.iter().enumerate() {
        out.push_str(&format!(
            "outcome {}: {o}\n  schedule: {}\n",
            k + 1,
            w.trace
        ));
        for line in w.detail.lines() {
            out.push_str(&format!("  | {line}\n"));
        }
    }
    out
}

fn cmd_fuzz(
    file: &Path,
    run: &RunArgs,
    mode: Mode,
    limit: usize,
    seeds: u64,
    report: Option<&Path>,
    fault: bool,
) -> CmdResult {
    let prog = load(file)?;
    let mut cfg = run.config();
    if fault {
        cfg.fault = Some(Fault::SkipEdgeOnImmediateWait);
    }
    let e = match mode {
        Mode::Exhaustive => schedfuzz::explore_exhaustive(&prog, &cfg, limit),
        Mode::Random => schedfuzz::explore_random(&prog, &cfg, seeds),
    };
    let n = e.outcomes.len();
    let code = if n == 1 { EXIT_OK } else { EXIT_MISMATCH };
    let mut shrunk = None;
    if n > 1 {
        if let Some(p) = report {
            let src =
                SourceProgram::from_file(file).map_err(|e| Fail(EXIT_INPUT, e.to_string()))?;
            let ast = lang::parse(&src).map_err(|e| Fail(EXIT_INPUT, e.to_string()))?;
            let s = schedfuzz::shrink(&ast, &cfg, limit);
            let mut text = divergence_report(&e);
            text.push_str("\nreduced program:\n");
            text.push_str(&s.text);
            if let Some((t1, t2)) = &s.traces {
                text.push_str(&format!("schedule 1: {t1}\nschedule 2: {t2}\n"));
            }
            std::fs::write(p, &text)
                .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
            shrunk = Some(s.text);
        }
    }
    match run.format {
        Format::Json => print_json(&json!({
            "file": file.display().to_string(),
            "outcomes": n,
            "schedules": e.schedules,
            "states": e.states,
            "truncated": e.truncated,
            "shrunk": shrunk,
        })),
        Format::Text => {
            let plural = |k: u64| if k == 1 { "" } else { "s" };
            let mut line = format!(
                "{n} distinct outcome{} across {} schedule{}",
                plural(n as u64),
                e.schedules,
                plural(e.schedules)
            );
            if mode == Mode::Exhaustive {
                line.push_str(&format!(" ({} states)", e.states));
            }
            if e.truncated {
                line.push_str(" [state limit reached]");
            }
            println!("{line}");
            if n > 1 {
                print!("{}", divergence_report(&e));
            }
        }
    }
    Ok(code)
}

fn stats_record(file: &Path, run: &RunArgs) -> (u8, Json) {
    let prog = match load(file) {
        Ok(p) => p,
        Err(Fail(code, msg)) => {
            return (
                code,
                json!({"file": file.display().to_string(), "verdict": "input-error", "message": msg}),
            )
        }
    };
    let mut pool = SymPool::new();
    let (ex, t_int) = timed_run(&prog, run.config(), &mut pool);
    let s = ex.stats();
    let code = if ex.error.is_some() {
        EXIT_VERIF
    } else {
        EXIT_OK
    };
    (
        code,
        json!({
            "file": file.display().to_string(),
            "verdict": ex.error.as_ref().map_or("ok".to_string(), |e| e.category.to_string()),
            "nb_s": s.nb_s,
            "nb_conc": s.nb_conc,
            "nb_sync": s.nb_sync,
            "nodes": s.nodes,
            "edges": s.edges,
            "hb_rat": s.hb_rat,
            "t_int": t_int,
        }),
    )
}

/// Input errors outrank verification errors.
fn worst(codes: impl Iterator<Item = u8>) -> u8 {
    codes.fold(EXIT_OK, |acc, c| match (acc, c) {
        (EXIT_INPUT, _) | (_, EXIT_INPUT) => EXIT_INPUT,
        (EXIT_OK, c) => c,
        (a, _) => a,
    })
}

fn print_records(records: &[(u8, Json)], format: Format) {
    match format {
        Format::Json => print_json(&Json::Array(records.iter().map(|r| r.1.clone()).collect())),
        Format::Text => {
            println!(
                "{:<40} {:>22} {:>10} {:>8} {:>8} {:>8} {:>8} {:>9}",
                "file", "verdict", "nb-s", "nb-conc", "nb-sync", "nodes", "hb-rat", "t-int"
            );
            for (_, r) in records {
                if r["verdict"] == "input-error" {
                    println!(
                        "{:<40} {}",
                        r["file"].as_str().unwrap(),
                        r["message"].as_str().unwrap()
                    );
                    continue;
                }
                println!(
                    "{:<40} {:>22} {:>10} {:>8} {:>8} {:>8} {:>8.3} {:>8.3}s",
                    r["file"].as_str().unwrap(),
                    r["verdict"].as_str().unwrap(),
                    r["nb_s"].as_u64().unwrap(),
                    r["nb_conc"].as_u64().unwrap(),
                    r["nb_sync"].as_u64().unwrap(),
                    r["nodes"].as_u64().unwrap(),
                    r["hb_rat"].as_f64().unwrap(),
                    r["t_int"].as_f64().unwrap()
                );
            }
        }
    }
}

fn cmd_stats(files: &[PathBuf], run: &RunArgs) -> CmdResult {
    let records: Vec<(u8, Json)> = files.iter().map(|f| stats_record(f, run)).collect();
    print_records(&records, run.format);
    Ok(worst(records.iter().map(|r| r.0)))
}

fn collect_pir(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_pir(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "pir") {
            out.push(p);
        }
    }
    Ok(())
}

/// Checks every `.pir` file under `dir`, recursively.
fn cmd_batch(dir: &Path, run: &RunArgs) -> CmdResult {
    let mut files = Vec::new();
    collect_pir(dir, &mut files)
        .map_err(|e| Fail(EXIT_INPUT, format!("{}: {e}", dir.display())))?;
    files.sort();
    let records = pirv::par::map(files, |f| stats_record(&f, run));
    print_records(&records, run.format);
    Ok(worst(records.iter().map(|r| r.0)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let res = match &cli.cmd {
        Cmd::Check {
            file,
            run,
            dump_memory,
            hb_dot,
        } => cmd_check(file, run, *dump_memory, hb_dot.as_deref()),
        Cmd::Equiv {
            a,
            b,
            run,
            eq,
            dot_out,
        } => cmd_equiv(a, b, run, eq, dot_out.as_deref()),
        Cmd::Fuzz {
            file,
            run,
            mode,
            limit,
            seeds,
            report,
            inject_fault,
        } => cmd_fuzz(
            file,
            run,
            *mode,
            *limit,
            *seeds,
            report.as_deref(),
            *inject_fault,
        ),
        Cmd::Dot {
            a,
            b,
            output,
            run,
            eq,
        } => cmd_dot(a, b, output, run, eq),
        Cmd::Stats { files, run } => cmd_stats(files, run),
        Cmd::Batch { dir, run } => cmd_batch(dir, run),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            if code == EXIT_VERIF {
                println!("{msg}");
            } else {
                eprintln!("pirv: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
