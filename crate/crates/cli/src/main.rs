//! `qesim`: run, verify, sweep and sample separation experiments.

mod render;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qesim::circuit::Measured;
use qesim::edl::{self, StepSpec};
use qesim::elements::Handedness;
use qesim::events::{self, EventConfig, Subensemble, DEFAULT_WINDOW_NS};
use qesim::scenarios::{self, CheckResult};
use qesim::screen::{pattern_from_distribution, visibility};
use qesim::{Circuit, Conventions, Detector, OutcomeDistribution, Settings};

#[derive(Parser)]
#[command(name = "qesim", version, about = "Simulate quantum separation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in scenarios.
    List,
    /// Evaluate a scenario or .edl file and write its distributions.
    Run {
        target: String,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Screen bins (overrides the geometry of every screen detector).
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Run the expectation checks of one or all scenarios.
    Verify {
        scenario: Option<String>,
        #[arg(long, hide = true)]
        break_convention: bool,
    },
    /// Sweep a parameter and tabulate detector probabilities.
    Sweep {
        target: String,
        #[arg(long, default_value = "phi")]
        param: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = std::f64::consts::TAU, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sample timestamped detection events and coincidence histograms.
    Sample {
        target: String,
        #[command(flatten)]
        common: Common,
        #[arg(short = 'n', long, default_value_t = 100_000)]
        shots: u64,
        #[arg(long, env = "QESIM_SEED", default_value_t = 0)]
        seed: u64,
        /// Coincidence window in ns.
        #[arg(long, default_value_t = DEFAULT_WINDOW_NS)]
        window: u64,
        /// Detector delay override, DET=NS.
        #[arg(long = "delay", value_name = "DET=NS")]
        delays: Vec<String>,
        /// Histogram bins.
        #[arg(long, default_value_t = 32)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Print the canonical EDL of a scenario or .edl file.
    Export {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Choice or parameter value, k=v (parameters in radians).
    #[arg(long = "setting", value_name = "K=V")]
    settings: Vec<String>,
    #[arg(long, default_value = "qesim_out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Outcome {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::List => {
            for (name, description) in scenarios::list_scenarios() {
                println!("{name:<30} {description}");
            }
            Ok(Outcome::Ok)
        }
        Command::Run { target, common, format, bins } => run(&target, &common, format, bins),
        Command::Verify { scenario, break_convention } => verify(scenario.as_deref(), break_convention),
        Command::Sweep { target, param, from, to, steps, common } => sweep(&target, &param, from, to, steps, &common),
        Command::Sample { target, common, shots, seed, window, delays, bins, format } => {
            sample(&target, &common, shots, seed, window, &delays, bins, format)
        }
        Command::Export { target, out } => {
            let text = edl::format(&edl::export(&load_target(&target)?));
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(Outcome::Ok)
        }
    }
}

fn load_target(target: &str) -> anyhow::Result<Circuit> {
    let path = Path::new(target);
    if target.ends_with(".edl") || path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {target}"))?;
        return edl::load(&text).map_err(|e| anyhow!("{target}:\n{e}"));
    }
    Ok(scenarios::circuit(target)?)
}

fn parse_settings(circuit: &Circuit, raw: &[String]) -> anyhow::Result<Settings> {
    let mut s = Settings::new();
    let choices = circuit.choices();
    for kv in raw {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("setting '{kv}' is not k=v"))?;
        if choices.iter().any(|(id, _)| *id == k) {
            s = s.choose(k, v);
        } else if circuit.params().contains_key(k) {
            let value: f64 = v.parse().map_err(|_| anyhow!("parameter '{k}' needs a number, got '{v}'"))?;
            s = s.param(k, value);
        } else {
            let mut known: Vec<&str> = choices.iter().map(|(id, _)| *id).collect();
            known.extend(circuit.params().keys().map(String::as_str));
            bail!("unknown setting '{k}' (known: {})", known.join(", "));
        }
    }
    Ok(circuit.resolve_settings(&s)?)
}

fn with_screen_bins(circuit: &Circuit, bins: usize) -> anyhow::Result<Circuit> {
    let mut spec = edl::export(circuit);
    fn patch(steps: &mut [StepSpec], bins: usize) {
        for s in steps {
            match s {
                StepSpec::Detect(d) => {
                    if let Measured::Screen { geometry, .. } = &mut d.detector.measured {
                        geometry.bins = bins;
                    }
                }
                StepSpec::Choice(c) => c.alternatives.iter_mut().for_each(|a| patch(&mut a.steps, bins)),
                StepSpec::Stage(_) => {}
            }
        }
    }
    patch(&mut spec.steps, bins);
    Ok(edl::compile(&spec)?.with_conventions(*circuit.conventions()))
}

fn settings_json(s: &Settings) -> serde_json::Value {
    serde_json::json!({ "choices": s.choices, "params": s.params })
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn distribution_csv(d: &OutcomeDistribution) -> String {
    let mut out: String = d.columns().iter().map(|c| format!("{},", c.key)).collect();
    out.push_str("p\n");
    for (labels, p) in d.iter() {
        let _ = writeln!(out, "{},{p:.11e}", labels.join(","));
    }
    out
}

/// Detectors that appear in a distribution, in column order.
fn active<'a>(circuit: &'a Circuit, joint: &OutcomeDistribution) -> Vec<&'a Detector> {
    let mut out: Vec<&Detector> = Vec::new();
    for c in joint.columns() {
        if let Ok(d) = circuit.detector(&c.detector) {
            if !out.iter().any(|o| o.name == d.name) {
                out.push(d);
            }
        }
    }
    out
}

fn screens(circuit: &Circuit, joint: &OutcomeDistribution) -> Vec<(String, qesim::SlitGeometry)> {
    active(circuit, joint)
        .into_iter()
        .filter_map(|d| match &d.measured {
            Measured::Screen { geometry, .. } => Some((d.name.clone(), geometry.clone())),
            _ => None,
        })
        .collect()
}

fn run(target: &str, common: &Common, format: Format, bins: Option<usize>) -> anyhow::Result<Outcome> {
    let mut circuit = load_target(target)?;
    if let Some(b) = bins {
        circuit = with_screen_bins(&circuit, b)?;
    }
    let settings = parse_settings(&circuit, &common.settings)?;
    let joint = circuit.joint_distribution(&settings)?;
    let keys: Vec<&str> = joint.columns().iter().map(|c| c.key.as_str()).collect();
    let marginals = keys.iter().map(|k| joint.marginal(&[*k])).collect::<qesim::Result<Vec<_>>>()?;
    match format {
        Format::Json => {
            let doc = serde_json::json!({
                "target": circuit.name(),
                "settings": settings_json(&settings),
                "joint": joint.to_json(),
                "marginals": marginals.iter().map(|m| m.to_json()).collect::<Vec<_>>(),
            });
            write(&common.out, "distribution.json", &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
        }
        Format::Csv => {
            write(&common.out, "joint.csv", &distribution_csv(&joint))?;
            for (k, m) in keys.iter().zip(&marginals) {
                write(&common.out, &format!("marginal_{k}.csv"), &distribution_csv(m))?;
            }
        }
    }
    println!("{} [{}]", circuit.name(), describe_settings(&settings));
    println!("total mass {:.12}", joint.total_mass());
    for m in &marginals {
        for (labels, p) in m.iter() {
            if m.columns()[0].labels.len() <= 8 {
                println!("  P({}={}) = {p:.12}", m.columns()[0].key, labels[0]);
            }
        }
    }
    for (name, geometry) in screens(&circuit, &joint) {
        let pattern = pattern_from_distribution(&joint, &name, &geometry)?;
        write(&common.out, &format!("pattern_{name}.csv"), &pattern.to_csv())?;
        println!("{name}: visibility {:.6}", visibility(&pattern)?);
        print!("{}", render::pattern(&pattern, 64, 12));
    }
    Ok(Outcome::Ok)
}

fn describe_settings(s: &Settings) -> String {
    let mut parts: Vec<String> = s.choices.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.extend(s.params.iter().map(|(k, v)| format!("{k}={v}")));
    parts.join(" ")
}

fn verify(scenario: Option<&str>, break_convention: bool) -> anyhow::Result<Outcome> {
    let names: Vec<&str> = match scenario {
        Some(n) => vec![n],
        None => scenarios::list_scenarios().into_iter().map(|(n, _)| n).collect(),
    };
    let conventions = if break_convention {
        Conventions { handedness: Handedness::Mirrored, ..Conventions::default() }
    } else {
        Conventions::default()
    };
    let mut all = true;
    println!("{:<30} {:<55} {:>12} {:>9}  result", "scenario", "check", "value", "tol");
    for name in names {
        let sc = scenarios::build_with(name, conventions)?;
        for CheckResult { name: check, value, tolerance, passed, error } in sc.run_checks() {
            all &= passed;
            let verdict = if passed { "PASS" } else { "FAIL" };
            println!("{name:<30} {check:<55} {value:>12.3e} {tolerance:>9.1e}  {verdict}");
            if let Some(e) = error {
                println!("    {e}");
            }
        }
    }
    Ok(if all { Outcome::Ok } else { Outcome::ChecksFailed })
}

fn sweep(target: &str, param: &str, from: f64, to: f64, steps: usize, common: &Common) -> anyhow::Result<Outcome> {
    let circuit = load_target(target)?;
    if !circuit.params().contains_key(param) {
        let known: Vec<&str> = circuit.params().keys().map(String::as_str).collect();
        bail!("unknown parameter '{param}' (declared: {})", if known.is_empty() { "none".into() } else { known.join(", ") });
    }
    if steps == 0 {
        bail!("--steps must be at least 1");
    }
    if !from.is_finite() || !to.is_finite() {
        bail!("sweep bounds must be finite");
    }
    let base = parse_settings(&circuit, &common.settings)?;
    let mut header = vec![param.to_string()];
    let mut rows = Vec::new();
    for k in 0..=steps {
        let value = from + (to - from) * k as f64 / steps as f64;
        let settings = base.clone().param(param, value);
        let joint = circuit.joint_distribution(&settings)?;
        let screen_cols = screens(&circuit, &joint);
        let mut cells = vec![value];
        let mut names = Vec::new();
        for col in joint.columns() {
            if let Some((_, g)) = screen_cols.iter().find(|(n, _)| *n == col.key) {
                names.push(format!("V({})", col.key));
                cells.push(visibility(&pattern_from_distribution(&joint, &col.key, g)?)?);
            } else if col.labels.iter().any(|l| l == qesim::circuit::CLICK) {
                names.push(format!("P({})", col.key));
                cells.push(joint.probability_of(&col.key, qesim::circuit::CLICK)?);
            } else {
                for l in &col.labels {
                    names.push(format!("P({}={l})", col.key));
                    cells.push(joint.probability_of(&col.key, l)?);
                }
            }
        }
        if k == 0 {
            header.extend(names);
        } else if header.len() != cells.len() {
            bail!("detector layout changes during the sweep");
        }
        rows.push(cells);
    }
    let mut csv = header.join(",") + "\n";
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{:.11e}", v + 0.0)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    write(&common.out, &format!("sweep_{param}.csv"), &csv)?;
    print!("{csv}");
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn sample(
    target: &str,
    common: &Common,
    shots: u64,
    seed: u64,
    window: u64,
    delays: &[String],
    bins: usize,
    format: Format,
) -> anyhow::Result<Outcome> {
    let circuit = load_target(target)?;
    let settings = parse_settings(&circuit, &common.settings)?;
    let mut config = EventConfig::new(shots, seed);
    for kv in delays {
        let (det, ns) = kv.split_once('=').ok_or_else(|| anyhow!("delay '{kv}' is not DET=NS"))?;
        let ns: f64 = ns.parse().map_err(|_| anyhow!("delay for '{det}' needs a number of ns, got '{ns}'"))?;
        if !(ns >= 0.0 && ns.fract() == 0.0 && ns < u64::MAX as f64) {
            bail!("delay for '{det}' must be a non-negative whole number of ns");
        }
        config = config.delay(det, ns as u64);
    }
    let log = events::generate_events(&circuit, &settings, &config)?;
    match format {
        Format::Json => write(&common.out, "events.jsonl", &log.to_jsonl())?,
        Format::Csv => write(&common.out, "events.csv", &log.to_csv())?,
    }
    println!("{} [{}]: {} shots, seed {seed}, {} events", circuit.name(), describe_settings(&settings), shots, log.events.len());
    let joint = circuit.joint_distribution(&settings)?;
    let active = active(&circuit, &joint);
    for (screen, geometry) in screens(&circuit, &joint) {
        for partner in active.iter().filter(|d| d.name != screen && !matches!(d.measured, Measured::Screen { .. })) {
            let pairs = events::coincidences(&log, &screen, &partner.name, window)?;
            let mut outcomes: Vec<String> = pairs.iter().map(|p| p.second.outcome.join("|")).collect();
            outcomes.sort();
            outcomes.dedup();
            let mut selections: Vec<(String, Option<&str>)> = vec![("all".into(), None)];
            selections.extend(outcomes.iter().map(|o| (o.clone(), Some(o.as_str()))));
            let mut columns = Vec::new();
            println!("{screen} x {partner}: {} coincidences in {window} ns", pairs.len(), partner = partner.name);
            for (label, sel) in &selections {
                match events::conditioned_histogram(&pairs, *sel, &geometry, bins)? {
                    Subensemble::Pattern(p) => {
                        println!("  {label:<8} visibility {:.4}", visibility(&p)?);
                        columns.push((label.clone(), p));
                    }
                    Subensemble::Empty => println!("  {label:<8} empty"),
                }
            }
            if let Some((_, first)) = columns.first() {
                let mut csv = String::from("x");
                for (label, _) in &columns {
                    let _ = write!(csv, ",{label}");
                }
                csv.push('\n');
                for (i, x) in first.xs().iter().enumerate() {
                    let _ = write!(csv, "{x:.11e}");
                    for (_, p) in &columns {
                        let _ = write!(csv, ",{:.11e}", p.intensities()[i]);
                    }
                    csv.push('\n');
                }
                write(&common.out, &format!("coincidence_{screen}_{}.csv", partner.name), &csv)?;
            }
        }
    }
    Ok(Outcome::Ok)
}
