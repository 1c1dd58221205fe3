//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain error (infeasible duty, failed run,
//! netlist diagnostics), 2 usage error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytics::{duty_feasibility, solve_duty, ConverterParams};
use crate::engine::Simulator;
use crate::harness::{compare_cases, run, shoot_steady, CaseId, Scenario, SteadyReport};
use crate::netlist::{network_inventory, parse};

#[derive(Debug, Parser)]
#[command(name = "zsource-lab", version, about = "Y-source converter analysis and simulation")]
pub struct Cli {
    /// Emit JSON instead of labeled text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Omit wall-clock metadata so identical invocations give identical output.
    #[arg(long, global = true)]
    pub repro: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form prediction for an operating point.
    Analyze(AnalyzeArgs),
    /// Shoot-through duty for a target boost.
    Design(DesignArgs),
    /// Parse and validate a netlist.
    Parse {
        file: PathBuf,
    },
    /// Run a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Directory for trace.csv, report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Periodic steady state of a scenario by shooting.
    Steady {
        scenario: PathBuf,
        /// Brute-force settling time before shooting, s.
        #[arg(long, default_value_t = 0.0)]
        settle: f64,
    },
    /// Reproduce a builtin case study.
    Case {
        case: CaseId,
        /// Output directory (default: ./<case>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every n-th trace sample in trace.csv.
        #[arg(long, default_value_t = 10)]
        decimate: usize,
    },
    /// Comparison table with measured metrics of the case studies.
    Compare {
        /// Cases to run, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = CaseId::ALL)]
        cases: Vec<CaseId>,
        /// Only the closed-form table.
        #[arg(long, conflicts_with = "cases")]
        analytic_only: bool,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub k: f64,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub d: f64,
    #[arg(long)]
    pub vdc: f64,
    /// Modulation index; adds the AC peak.
    #[arg(long)]
    pub m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub boost: f64,
    /// Turns n1:n2:n3.
    #[arg(long)]
    pub turns: String,
}

/// A failed command: message and exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

type Outcome = Result<Output, Failure>;

/// Text and JSON renderings of a command result.
pub struct Output {
    text: String,
    json: Value,
    /// Non-zero when the command ran but its checks failed.
    code: i32,
}

impl Output {
    fn ok(text: String, json: Value) -> Self {
        Self { text, json, code: 0 }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let started = Instant::now();
    match execute(&cli.command) {
        Ok(o) => {
            if cli.json {
                let mut v = o.json;
                if !cli.repro {
                    if let Value::Object(map) = &mut v {
                        map.insert(
                            "metadata".into(),
                            json!({
                                "version": env!("CARGO_PKG_VERSION"),
                                "elapsed_s": started.elapsed().as_secs_f64(),
                            }),
                        );
                    }
                }
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
            } else {
                let _ = out.write_all(o.text.as_bytes());
            }
            o.code
        }
        Err(f) => {
            if cli.json {
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&json!({ "error": f.message })).expect("json"));
            }
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cmd: &Command) -> Outcome {
    match cmd {
        Command::Analyze(a) => analyze(a),
        Command::Design(a) => design(a),
        Command::Parse { file } => parse_file(file),
        Command::Simulate { scenario, out } => {
            let s = Scenario::load(scenario).map_err(domain)?;
            simulate(&s, out.as_deref())
        }
        Command::Steady { scenario, settle } => steady(scenario, *settle),
        Command::Case { case, out, decimate } => {
            let mut s = case.scenario();
            s.sim.trace_decimate = (*decimate).max(1);
            let dir = out.clone().unwrap_or_else(|| PathBuf::from(case.name()));
            let mut o = simulate(&s, Some(&dir))?;
            let report: SteadyReport = serde_json::from_value(o.json["report"].clone()).expect("report round-trips");
            let (line, pass) = case_summary(*case, &report);
            o.text = format!("{line}\n");
            if let Value::Object(map) = &mut o.json {
                map.insert("summary".into(), json!(line));
                map.insert("pass".into(), json!(pass));
            }
            Ok(o)
        }
        Command::Compare { cases, analytic_only } => {
            let list: &[CaseId] = if *analytic_only { &[] } else { cases };
            let r = compare_cases(list).map_err(domain)?;
            Ok(Output::ok(r.render(), to_value(&r)))
        }
    }
}

fn analyze(a: &AnalyzeArgs) -> Outcome {
    let params = ConverterParams {
        n1: 1.0,
        n2: a.k,
        n3: a.p,
        d: a.d,
        m: a.m.unwrap_or(0.0),
        f_sw: 1.0,
        v_dc: a.vdc,
    };
    let pred = params.predict().map_err(domain)?;
    let mut text = String::new();
    let _ = writeln!(text, "B     = {:.6}", pred.b);
    let _ = writeln!(text, "V_C1  = {:.6} V", pred.v_c1);
    let _ = writeln!(text, "V_C2  = {:.6} V", pred.v_c2);
    let _ = writeln!(text, "V_pn  = {:.6} V", pred.v_pn);
    let _ = writeln!(text, "d_max = {:.6}", params.d_max());
    let mut j = json!({
        "k": a.k, "p": a.p, "d": a.d, "v_dc": a.vdc, "d_max": params.d_max(),
        "b": pred.b, "v_c1": pred.v_c1, "v_c2": pred.v_c2, "v_pn": pred.v_pn,
        "v_l1_nst": pred.v_l1_nst, "v_lr_nst": pred.v_lr_nst,
    });
    if let Some(m) = a.m {
        let _ = writeln!(text, "V_ac  = {:.6} V (M={m})", pred.v_ac_peak);
        j["m"] = json!(m);
        j["v_ac_peak"] = json!(pred.v_ac_peak);
    }
    Ok(Output::ok(text, j))
}

fn parse_turns(s: &str) -> Result<[f64; 3], Failure> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure {
            code: 2,
            message: format!("turns `{s}` must look like n1:n2:n3"),
        })?;
    <[f64; 3]>::try_from(parts).map_err(|_| Failure {
        code: 2,
        message: format!("turns `{s}` must have three entries"),
    })
}

fn design(a: &DesignArgs) -> Outcome {
    let t = parse_turns(&a.turns)?;
    if t.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(domain(format!("turns `{}` must be positive", a.turns)));
    }
    let (k, p) = (t[1] / t[0], t[2] / t[0]);
    let d = solve_duty(a.boost, k, p).map_err(domain)?;
    let d_max = duty_feasibility(k, p);
    let text = format!("d={d:.3}\nd_max={d_max:.3}\nmargin={:.3}\n", d_max - d);
    Ok(Output::ok(
        text,
        json!({ "boost": a.boost, "turns": t, "k": k, "p": p, "d": d, "d_max": d_max, "margin": d_max - d }),
    ))
}

fn parse_file(file: &Path) -> Outcome {
    let text = std::fs::read_to_string(file).map_err(|e| domain(format!("{}: {e}", file.display())))?;
    match parse(&text) {
        Ok(c) => {
            let inv = network_inventory(&c);
            let summary = format!(
                "{} elements, {} nodes; network: {} capacitors, {} inductors, {} coupled inductors, {} diodes\n",
                c.elements().len(),
                c.nodes().len(),
                inv.capacitors,
                inv.inductors,
                inv.coupled_inductors,
                inv.diodes
            );
            let canonical = c.serialize();
            Ok(Output::ok(
                format!("{summary}{canonical}"),
                json!({
                    "valid": true,
                    "elements": c.elements().len(),
                    "nodes": c.nodes(),
                    "network": {
                        "elements": inv.elements,
                        "capacitors": inv.capacitors,
                        "inductors": inv.inductors,
                        "coupled_inductors": inv.coupled_inductors,
                        "diodes": inv.diodes,
                    },
                    "canonical": canonical,
                }),
            ))
        }
        Err(diags) => {
            let name = file.display().to_string();
            let text: String = diags.iter().map(|d| format!("{}\n", d.render(&name))).collect();
            Ok(Output {
                text,
                json: json!({
                    "valid": false,
                    "diagnostics": diags.iter().map(|d| json!({
                        "line": d.line, "column": d.column, "code": d.code.as_str(), "message": d.message,
                    })).collect::<Vec<_>>(),
                }),
                code: 1,
            })
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &[u8]) -> Result<(), Failure> {
    std::fs::write(dir.join(name), content).map_err(|e| domain(format!("{}: {e}", dir.join(name).display())))
}

fn simulate(s: &Scenario, out: Option<&Path>) -> Outcome {
    let (trace, report) = run(s).map_err(domain)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| domain(format!("{}: {e}", dir.display())))?;
        write_file(dir, "trace.csv", trace.to_csv().as_bytes())?;
        write_file(dir, "report.json", report.to_json().as_bytes())?;
        write_file(dir, "report.txt", report.render().as_bytes())?;
    }
    Ok(Output::ok(report.render(), json!({ "report": to_value(&report) })))
}

fn steady(path: &Path, settle: f64) -> Outcome {
    let s = Scenario::load(path).map_err(domain)?;
    s.validate().map_err(domain)?;
    let c = s.circuit().map_err(domain)?;
    let mut sim = Simulator::new(&c, s.dt()).map_err(domain)?;
    let period = s.modulation.schedule_period();
    let periods = (settle / period).round() as u64;
    let per = (period / s.dt()).round() as u64;
    for _ in 0..periods * per {
        sim.advance(&s.modulation).map_err(domain)?;
    }
    let shot = shoot_steady(&s, &sim.state()).map_err(domain)?;
    let mut text = format!("converged in {} Newton iterations\n", shot.iterations);
    for (k, r) in shot.history.iter().enumerate() {
        let _ = writeln!(text, "  residual[{k}] = {r:.3e}");
    }
    for (name, v) in &shot.state.capacitors {
        let _ = writeln!(text, "v({name}) = {v:.6} V");
    }
    for (name, i) in &shot.state.inductors {
        let _ = writeln!(text, "i({name}) = {i:.6} A");
    }
    for (name, i) in &shot.state.windings {
        let _ = writeln!(text, "i({name}) = [{:.6}, {:.6}, {:.6}] A", i[0], i[1], i[2]);
    }
    Ok(Output::ok(
        text,
        json!({ "iterations": shot.iterations, "history": shot.history, "state": to_value(&shot.state) }),
    ))
}

/// One-line summary of a case run against its acceptance targets.
pub fn case_summary(case: CaseId, r: &SteadyReport) -> (String, bool) {
    let d = |k: &str| r.analytic_deltas.get(k).copied().unwrap_or(f64::NAN);
    let b = r.b_meas.unwrap_or(f64::NAN);
    let vpn = r.v_pn_nst.unwrap_or(f64::NAN);
    match case {
        CaseId::Case3Dcdc => {
            let pass = [d("v_out"), d("v_c1"), d("v_c2")].iter().all(|x| x.abs() <= 3.0);
            let line = format!(
                "{case}: B_meas≈{b:.2}, V_out≈{:.2} V ({:+.2}%), V_C1≈{:.2} V ({:+.2}%), V_C2≈{:.2} V ({:+.2}%), efficiency {} -> {}",
                r.signals.get("v(out)").map_or(f64::NAN, |s| s.mean),
                d("v_out"),
                r.signals.get("v(c1)").map_or(f64::NAN, |s| s.mean),
                d("v_c1"),
                r.signals.get("v(c2)").map_or(f64::NAN, |s| s.mean),
                d("v_c2"),
                r.efficiency.map_or("-".into(), |e| format!("{e:.4}")),
                if pass { "PASS" } else { "FAIL" }
            );
            (line, pass)
        }
        CaseId::Case1Motor => {
            let min_i = r.min_input_current.unwrap_or(f64::NAN);
            let pass = d("v_pn").abs() <= 5.0 && min_i >= 0.0;
            let line = format!(
                "{case}: NST V_pn≈{vpn:.1} V ({:+.2}%), B_meas≈{b:.2}, min input current {min_i:.2} A, torque {:.2} N m -> {}",
                d("v_pn"),
                r.signals.get("m1.torque").map_or(f64::NAN, |s| s.mean),
                if pass { "PASS" } else { "FAIL" }
            );
            (line, pass)
        }
        CaseId::Case2Generator => {
            let pass = r.source_power < 0.0;
            let line = format!(
                "{case}: average source power {:+.1} W ({}), NST V_pn≈{vpn:.1} V -> {}",
                r.source_power,
                if pass { "charging" } else { "discharging" },
                if pass { "PASS" } else { "FAIL" }
            );
            (line, pass)
        }
    }
}
