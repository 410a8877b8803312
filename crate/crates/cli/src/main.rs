mod io;
mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use semicontract::analysis::{analyze, Analysis, AnalysisOptions, AnalysisReport, DEFAULT_MARGIN};
use semicontract::bundled::{self, INITIAL_PAIR};
use semicontract::certificates::{DwellBounds, ModeBounds};
use semicontract::config::SystemConfig;
use semicontract::experiments::{reproduce, simulate_pair, PairOutcome, PairRequest, ReproduceOptions, DEFAULT_HORIZON, DEFAULT_STEP};
use semicontract::model::ModeId;
use semicontract::signals::{
    generate_periodic, generate_random, tightest_mdadt_tau, tightest_mdalt_tau, verify_mdadt, verify_mdalt, verify_per_activation, Dwell,
    RandomSignalOptions, SwitchingSignal,
};

/// Exit code for configuration, input and I/O errors.
const EXIT_CONFIG: u8 = 2;
const DEFAULT_SIGNAL_SEED: u64 = 7;

#[derive(Parser)]
#[command(name = "semicontract", version, about = "Contraction certificates for switched systems from subspace seminorms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a certificate and derive dwell/leave bounds.
    Analyze(AnalyzeArgs),
    /// Simulate a trajectory pair under a switching signal.
    Simulate(SimulateArgs),
    /// Generate or check switching signals.
    Signal {
        #[command(subcommand)]
        action: SignalCommand,
    },
    /// Run the bundled example end to end and check every reproduction target.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// System configuration (JSON); the bundled two-mode example when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random samples and random signals (signals default to 7).
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per axis for sampled conditions.
    #[arg(long)]
    grid: Option<usize>,
    /// Additional seeded random sample points.
    #[arg(long)]
    samples: Option<usize>,
    /// PSD and invariance tolerance.
    #[arg(long, default_value_t = semicontract::numerics::DEFAULT_PSD_TOL)]
    tol: f64,
    /// Multiplicative safety margin on extracted constants.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    /// Zero margin; bounds are reported as strict inequalities.
    #[arg(long)]
    strict: bool,
    /// Search scalar weights `p_q Π` instead of reading P matrices.
    #[arg(long)]
    search_weights: bool,
}

impl Common {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            grid: self.grid,
            random_samples: self.samples,
            seed: self.seed.unwrap_or(0),
            tol: self.tol,
            margin: if self.strict { 0.0 } else { self.margin },
            search_weights: self.search_weights,
        }
    }

    fn signal_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SIGNAL_SEED)
    }

    fn load(&self) -> Result<(SystemConfig, Vec<u8>), Failure> {
        match &self.config {
            None => Ok((bundled::two_mode_config(), bundled::TWO_MODE_JSON.as_bytes().to_vec())),
            Some(p) => {
                let raw = std::fs::read(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Config)?;
                let text = String::from_utf8(raw.clone()).map_err(|e| Failure::Config(anyhow!("{}: {e}", p.display())))?;
                let cfg = SystemConfig::from_json(&text).with_context(|| format!("parsing {}", p.display())).map_err(Failure::Config)?;
                Ok((cfg, raw))
            }
        }
    }

    fn analyze(&self) -> Result<Analysis, Failure> {
        let (cfg, raw) = self.load()?;
        analyze(&cfg, &raw, &self.options()).map_err(|e| Failure::Config(e.into()))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct SignalSource {
    /// Signal CSV (`time,mode` rows).
    #[arg(long, conflicts_with_all = ["periodic", "random"])]
    signal: Option<PathBuf>,
    /// Periodic signal with this dwell for every mode.
    #[arg(long, conflicts_with = "random")]
    periodic: Option<f64>,
    /// Seeded random signal compliant with the analysed bounds.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: SignalSource,
    /// RK4 step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// First initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xa: Option<Vec<f64>>,
    /// Second initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xb: Option<Vec<f64>>,
    /// Also write an SVG plot of the distance and projected norms.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum SignalCommand {
    /// Write a signal CSV to the output directory (stdout without --out).
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SignalSource,
    },
    /// Verify a signal against dwell/leave bounds.
    Check(CheckArgs),
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Signal CSV to check.
    #[arg(long)]
    signal: PathBuf,
    /// Horizon when the CSV has no `# horizon` line.
    #[arg(long)]
    horizon: Option<f64>,
    /// Bounds from a previous analysis report instead of analysing the config.
    #[arg(long, conflicts_with_all = ["tau_lower", "tau_upper"])]
    report: Option<PathBuf>,
    /// Inline dwell bound `MODE=TAU`, repeatable.
    #[arg(long = "tau-lower", value_parser = parse_mode_value)]
    tau_lower: Vec<(ModeId, f64)>,
    /// Inline leave bound `MODE=TAU`, repeatable.
    #[arg(long = "tau-upper", value_parser = parse_mode_value)]
    tau_upper: Vec<(ModeId, f64)>,
    /// Chatter bound for the average dwell check.
    #[arg(long, default_value_t = 1.0)]
    n_lower: f64,
    /// Chatter bound for the average leave check.
    #[arg(long, default_value_t = 0.0)]
    n_upper: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    #[value(alias = "paper")]
    TwoMode,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "two-mode")]
    example: Example,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
}

fn parse_mode_value(s: &str) -> Result<(ModeId, f64), String> {
    let (q, v) = s.split_once('=').ok_or_else(|| format!("expected MODE=VALUE, got '{s}'"))?;
    let q = q.trim().parse().map_err(|e| format!("mode '{q}': {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("value '{v}': {e}"))?;
    Ok((q, v))
}

enum Failure {
    /// Bad input; exit 2.
    Config(anyhow::Error),
    /// A verdict failed; exit 1.
    Verdict,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("unix:{secs}")
}

fn emit(report: &mut AnalysisReport, out: Option<&Path>, name: &str) -> Result<()> {
    report.timestamp = Some(timestamp());
    let json = report.to_json() + "\n";
    match out {
        Some(dir) => io::write_atomic(&dir.join(name), json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn report_failures(report: &AnalysisReport) {
    for v in report.failures() {
        eprintln!("FAIL {}: value {:.6e}, bound {:.6e}, margin {:.3e}", v.check, v.value, v.bound, v.margin);
    }
    for f in &report.flags {
        eprintln!("note: {f}");
    }
}

fn verdict_exit(pass: bool) -> Result<(), Failure> {
    if pass {
        Ok(())
    } else {
        Err(Failure::Verdict)
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let mut a = args.common.analyze()?;
    emit(&mut a.report, args.common.out.as_deref(), "report.json")?;
    report_failures(&a.report);
    verdict_exit(a.report.pass)
}

fn build_signal(src: &SignalSource, analysis: Option<&Analysis>, modes: &[ModeId], seed: u64) -> Result<(SwitchingSignal, String)> {
    if let Some(p) = &src.signal {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let sig = SwitchingSignal::from_csv(&text, Some(src.horizon))?;
        return Ok((sig, format!("file {}", p.display())));
    }
    if let Some(d) = src.periodic {
        return Ok((generate_periodic(modes, &Dwell::Uniform(d), 0.0, src.horizon)?, format!("periodic, dwell {d}")));
    }
    if src.random {
        let a = analysis.ok_or_else(|| anyhow!("--random needs analysed bounds"))?;
        let sig = generate_random(modes, &a.bounds, 0.0, src.horizon, seed, &RandomSignalOptions::default())?;
        return Ok((sig, format!("random compliant, seed {seed}")));
    }
    bail!("give one of --signal, --periodic or --random")
}

fn write_outcome(dir: &Path, o: &PairOutcome, plot: bool) -> Result<()> {
    io::write_atomic(&dir.join("signal.csv"), o.signal.to_csv().as_bytes())?;
    let Some(run) = &o.run else { return Ok(()) };
    let times = &run.a.times;
    io::write_atomic(&dir.join("trajectory_a.csv"), io::trajectory_csv(times, &run.a.states).as_bytes())?;
    io::write_atomic(&dir.join("trajectory_b.csv"), io::trajectory_csv(times, &run.b.states).as_bytes())?;
    io::write_atomic(&dir.join("distance.csv"), io::csv(&["time", "distance"], times, &[&run.distance]).as_bytes())?;
    let mut header = vec!["time".to_string(), "norm_full".to_string()];
    header.extend(o.projected.iter().map(|(n, _)| format!("norm_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut cols: Vec<&[f64]> = vec![&run.distance];
    cols.extend(o.projected.iter().map(|(_, v)| v.as_slice()));
    io::write_atomic(&dir.join("projected.csv"), io::csv(&header, times, &cols).as_bytes())?;
    if plot {
        let mut series = vec![plot::Series {
            label: "‖x_a − x_b‖".into(),
            values: &run.distance,
        }];
        series.extend(o.projected.iter().map(|(n, v)| plot::Series {
            label: format!("‖Π_{n}(x_a − x_b)‖"),
            values: v,
        }));
        let title = format!("{}: {}", o.summary.name, o.summary.signal);
        let svg = plot::line_chart(&title, times, &series, &o.signal.switch_times());
        io::write_atomic(&dir.join("distance.svg"), svg.as_bytes())?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut analysis = args.common.analyze()?;
    let modes = analysis.system.mode_ids();
    let (signal, label) = build_signal(&args.source, Some(&analysis), &modes, args.common.signal_seed())?;
    let n = analysis.system.n;
    let xa = args.xa.clone().unwrap_or_else(|| if n == 2 { INITIAL_PAIR[0].to_vec() } else { vec![1.0; n] });
    let xb = args.xb.clone().unwrap_or_else(|| if n == 2 { INITIAL_PAIR[1].to_vec() } else { vec![-1.0; n] });
    let req = PairRequest {
        name: "simulation".into(),
        signal_label: label,
        signal,
        xa,
        xb,
        step: args.step,
        fit_window: (2.0_f64.min(args.source.horizon / 5.0), args.source.horizon),
    };
    let outcome = simulate_pair(&analysis, &req).map_err(|e| Failure::Config(e.into()))?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("simulation"));
    write_outcome(&out, &outcome, args.plot)?;
    for note in &outcome.summary.notes {
        eprintln!("note: {note}");
    }
    analysis.report.simulation.push(outcome.summary.clone());
    analysis.report.refresh_pass();
    emit(&mut analysis.report, Some(&out), "report.json")?;
    eprintln!(
        "distance {:.6e} -> {:.6e} (ratio {:.3e}); outputs in {}",
        outcome.summary.initial_distance,
        outcome.summary.terminal_distance,
        outcome.summary.relative_terminal_distance,
        out.display()
    );
    report_failures(&analysis.report);
    verdict_exit(analysis.report.pass)
}

fn cmd_signal_gen(common: &Common, src: &SignalSource) -> Result<(), Failure> {
    let (cfg, _) = common.load()?;
    let modes: Vec<ModeId> = cfg.modes.iter().map(|m| m.id).collect();
    let analysis = if src.random { Some(common.analyze()?) } else { None };
    let (sig, label) = build_signal(src, analysis.as_ref(), &modes, common.signal_seed())?;
    let csv = sig.to_csv();
    match &common.out {
        Some(dir) => io::write_atomic(&dir.join("signal.csv"), csv.as_bytes())?,
        None => print!("{csv}"),
    }
    eprintln!("{label}: {} events, {} switches, horizon {}", sig.events().len(), sig.switch_times().len(), sig.horizon());
    Ok(())
}

fn report_bounds(path: &Path) -> Result<DwellBounds> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let family = &v["family"];
    let mut per_mode = BTreeMap::new();
    for b in family["bounds"].as_array().ok_or_else(|| anyhow!("{}: no family bounds", path.display()))? {
        let q = b["mode"].as_u64().ok_or_else(|| anyhow!("bound without mode"))? as ModeId;
        per_mode.insert(
            q,
            ModeBounds {
                lower: b["tau_lower"].as_f64(),
                upper: b["tau_upper"].as_f64(),
            },
        );
    }
    Ok(DwellBounds {
        per_mode,
        inclusive: family["inclusive"].as_bool().unwrap_or(true),
        provenance: format!("report {}", path.display()),
    })
}

fn cmd_signal_check(args: &CheckArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.signal).with_context(|| format!("reading {}", args.signal.display()))?;
    let sig = SwitchingSignal::from_csv(&text, args.horizon).map_err(|e| Failure::Config(e.into()))?;
    let bounds = if let Some(p) = &args.report {
        report_bounds(p)?
    } else if !args.tau_lower.is_empty() || !args.tau_upper.is_empty() {
        let mut per_mode: BTreeMap<ModeId, ModeBounds> = BTreeMap::new();
        for (q, t) in &args.tau_lower {
            per_mode.entry(*q).or_insert(ModeBounds { lower: None, upper: None }).lower = Some(*t);
        }
        for (q, t) in &args.tau_upper {
            per_mode.entry(*q).or_insert(ModeBounds { lower: None, upper: None }).upper = Some(*t);
        }
        for q in sig.modes() {
            per_mode.entry(q).or_insert(ModeBounds { lower: None, upper: None });
        }
        DwellBounds {
            per_mode,
            inclusive: !args.common.strict,
            provenance: "command line".into(),
        }
    } else {
        args.common.analyze()?.bounds
    };
    for (q, b) in &bounds.per_mode {
        if let (Some(lo), Some(hi)) = (b.lower, b.upper) {
            if lo >= hi {
                return Err(Failure::Config(anyhow!("infeasible bounds for mode {q}: dwell {lo} ≥ leave {hi}")));
            }
        }
    }

    let per_activation = verify_per_activation(&sig, &bounds).map_err(|e| Failure::Config(e.into()))?;
    let mut pass = per_activation.pass;
    let mut modes = Vec::new();
    for q in sig.modes() {
        let b = bounds.get(q).copied().unwrap_or(ModeBounds { lower: None, upper: None });
        let mut entry = json!({ "mode": q });
        if let Some(tau) = b.lower {
            let v = verify_mdadt(&sig, q, tau, args.n_lower);
            pass &= v.pass;
            entry["mdadt"] = json!({ "tau": tau, "n": args.n_lower, "pass": v.pass, "tightest_n": v.tightest_n, "worst": v.worst });
        }
        if let Some(tau) = b.upper {
            let v = verify_mdalt(&sig, q, tau, args.n_upper);
            pass &= v.pass;
            entry["mdalt"] = json!({ "tau": tau, "n": args.n_upper, "pass": v.pass, "tightest_n": v.tightest_n, "worst": v.worst });
        }
        entry["tightest"] = json!({
            "tau_lower": tightest_mdadt_tau(&sig, q, args.n_lower),
            "n_lower": args.n_lower,
            "tau_upper": tightest_mdalt_tau(&sig, q, args.n_upper),
            "n_upper": args.n_upper,
        });
        modes.push(entry);
    }
    let report = json!({
        "signal": { "events": sig.events().len(), "switches": sig.switch_times().len(), "horizon": sig.horizon() },
        "bounds": bounds,
        "per_activation": per_activation,
        "modes": modes,
        "pass": pass,
    });
    let text = serde_json::to_string_pretty(&report).expect("serializes") + "\n";
    match &args.common.out {
        Some(dir) => io::write_atomic(&dir.join("signal_check.json"), text.as_bytes())?,
        None => print!("{text}"),
    }
    if let Some(o) = per_activation.first_offense {
        eprintln!(
            "FAIL activation {} (mode {}, start {:.6}, length {:.6}) violates the {:?} bound {:.6}",
            o.activation, o.mode, o.start, o.length, o.violated, o.bound
        );
    }
    verdict_exit(pass)
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<(), Failure> {
    let (cfg, raw) = match (&args.common.config, args.example) {
        (Some(_), _) => args.common.load()?,
        (None, Example::TwoMode) => (bundled::two_mode_config(), bundled::TWO_MODE_JSON.as_bytes().to_vec()),
    };
    let opts = ReproduceOptions {
        analysis: args.common.options(),
        seed: args.common.signal_seed(),
        step: args.step,
        horizon: args.horizon,
    };
    let mut r = reproduce(&cfg, &raw, &opts).map_err(|e| Failure::Config(e.into()))?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("reproduce"));
    for o in [&r.periodic, &r.random, &r.negative] {
        write_outcome(&out.join(&o.summary.name), o, true)?;
    }
    emit(&mut r.analysis.report, Some(&out), "report.json")?;
    for v in &r.analysis.report.checks {
        println!("{} {}: value {:.6}, target {:.6}", if v.pass { "PASS" } else { "FAIL" }, v.check, v.value, v.bound);
    }
    report_failures(&r.analysis.report);
    eprintln!("outputs in {}", out.display());
    verdict_exit(r.analysis.report.pass)
}

fn init_threads() {
    if let Some(n) = std::env::var("SEMICONTRACT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Signal { action: SignalCommand::Gen { common, source } } => cmd_signal_gen(common, source),
        Command::Signal { action: SignalCommand::Check(a) } => cmd_signal_check(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
