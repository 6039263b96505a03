//! Exit criteria. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::panic;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qesim::circuit::{Accounting, CLICK};
use qesim::edl;
use qesim::elements::{Angle, ElementKind};
use qesim::events::{self, EventConfig, Subensemble, DEFAULT_WINDOW_NS};
use qesim::measure::total_variation;
use qesim::qstate::phase_distance;
use qesim::scenarios;
use qesim::screen::{pattern_from_state, sum_patterns, visibility, SlitGeometry};
use qesim::{Circuit, Conventions, Dof, Element, Settings, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

struct Line {
    ok: bool,
    detail: String,
}

/// `value ≤ tol`, with NaN failing.
fn within(label: &str, value: f64, tol: f64) -> Line {
    Line { ok: value <= tol, detail: format!("{label} {value:.3e} (tol {tol:.0e})") }
}

fn above(label: &str, value: f64, bound: f64) -> Line {
    Line { ok: value > bound, detail: format!("{label} {value:.6} (> {bound})") }
}

fn below(label: &str, value: f64, bound: f64) -> Line {
    Line { ok: value < bound, detail: format!("{label} {value:.6} (< {bound})") }
}

fn faster(label: &str, took: Duration, limit: Duration) -> Line {
    Line { ok: took < limit, detail: format!("{label} {:.3}s (< {}s)", took.as_secs_f64(), limit.as_secs_f64()) }
}

fn sub(label: &str, r: qesim::Result<Vec<Line>>) -> Vec<Line> {
    r.unwrap_or_else(|e| vec![Line { ok: false, detail: format!("{label}: error {e}") }])
}

fn evolved(circ: &Circuit, s: &Settings) -> qesim::Result<StateVector> {
    circ.evolve(&circ.resolve_settings(s)?)?.into_state()
}

fn random_on(space: &[Dof], dof: &str, rng: &mut ChaCha8Rng) -> qesim::Result<StateVector> {
    let pos = space.iter().position(|d| d.name() == dof).unwrap();
    let local: Vec<C> = (0..space[pos].dim()).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = local.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let mut amps = vec![c(1.0, 0.0)];
    for (i, d) in space.iter().enumerate() {
        let v: Vec<C> = if i == pos {
            local.iter().map(|a| a / norm).collect()
        } else {
            (0..d.dim()).map(|k| if k == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect()
        };
        amps = amps.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    StateVector::from_amplitudes(space.to_vec(), amps, 1.0)
}

fn analyzer_loop_identity() -> Vec<Line> {
    sub("analyzer", (|| {
        let start = Instant::now();
        let circ = scenarios::circuit("analyzer_loop")?;
        let d45 = phase_distance(&evolved(&circ, &Settings::new())?, circ.source()).unwrap_or(f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let input = random_on(circ.space(), "pol", &mut rng)?;
            let out = evolved(&circ.with_source(input.clone())?, &Settings::new())?;
            worst = worst.max(phase_distance(&out, &input).unwrap_or(f64::INFINITY));
        }
        Ok(vec![
            within("|45°⟩", d45, 1e-10),
            within("100 random", worst, 1e-10),
            faster("runtime", start.elapsed(), Duration::from_millis(100)),
        ])
    })())
}

fn stern_gerlach_loop_identity() -> Vec<Line> {
    sub("sg", (|| {
        let circ = scenarios::circuit("sg_loop")?;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut fid, mut masked): (f64, f64) = (0.0, 0.0);
        for _ in 0..100 {
            let input = random_on(circ.space(), "spin", &mut rng)?;
            let with = circ.with_source(input.clone())?;
            fid = fid.max(1.0 - evolved(&with, &Settings::new())?.fidelity(&input)?);
            let out = evolved(&with, &Settings::new().choose("masks", "pass_plus"))?;
            let expect_w = input.amplitude(&["+S", "up"])?.norm_sqr();
            masked = masked.max((out.weight() - expect_w).abs());
            masked = masked.max((out.amplitude(&["+S", "up"])?.norm_sqr() - 1.0).abs());
        }
        Ok(vec![within("1 − fidelity", fid, 1e-10), within("masked eigenstate and weight", masked, 1e-12)])
    })())
}

fn mz_algebra() -> Vec<Line> {
    sub("mz", (|| {
        let grid: Vec<f64> = (0..64).map(|k| 2.0 * PI * k as f64 / 64.0).collect();
        let one = scenarios::circuit("mz_one_bs")?;
        let two = scenarios::circuit("mz_two_bs")?;
        let rec = scenarios::circuit("mz_recombine_single_detector")?;
        let (mut w1, mut w2): (f64, f64) = (0.0, 0.0);
        for &phi in &grid {
            let st = Settings::new().param("phi", phi);
            let d = one.joint_distribution(&st)?;
            w1 = w1.max((d.probability_of("D1", CLICK)? - 0.5).abs()).max((d.probability_of("D2", CLICK)? - 0.5).abs());
            let p2 = two.joint_distribution(&st)?.probability_of("D2", CLICK)?;
            w2 = w2.max((p2 - (phi / 2.0).cos().powi(2)).abs());
        }
        let pr = rec.joint_distribution(&Settings::new().param("phi", 0.0))?.probability_of("D", CLICK)?;
        Ok(vec![
            within("one-BS |P − ½|", w1, 1e-12),
            within("two-BS |P(D2) − cos²(φ/2)|", w2, 1e-10),
            within("recombiner |P(D) − 1|", (pr - 1.0).abs(), 1e-12),
        ])
    })())
}

fn regrouping_identity() -> Vec<Line> {
    sub("regroup", (|| {
        let two = scenarios::circuit("mz_two_bs")?;
        let t = c(FRAC_1_SQRT_2, 0.0);
        let r = c(0.0, FRAC_1_SQRT_2);
        let ports = ["T1", "R1"];
        let mut worst: f64 = 0.0;
        for k in 0..64 {
            let phi = 2.0 * PI * k as f64 / 64.0;
            let s = evolved(&two, &Settings::new().param("phi", phi))?;
            // four paths: first splitter to port a, phase on T1, second splitter to port b
            let mut grouped = [c(0.0, 0.0); 2];
            for a in 0..2 {
                for b in 0..2 {
                    let first = if a == 0 { t } else { r };
                    let phase = if a == 0 { C::from_polar(1.0, phi) } else { c(1.0, 0.0) };
                    let second = if b == a { t } else { r };
                    grouped[b] += first * phase * second;
                }
            }
            for (b, port) in ports.iter().enumerate() {
                worst = worst.max((s.amplitude(&[*port])? - grouped[b]).norm());
            }
        }
        Ok(vec![within("max |amplitude − path group|", worst, 1e-12)])
    })())
}

fn one_photon_eraser() -> Vec<Line> {
    sub("eraser", (|| {
        let circ = scenarios::circuit("one_photon_eraser")?;
        let g = SlitGeometry::default();
        let run = |alt: &str| -> qesim::Result<_> {
            let s = evolved(&circ, &Settings::new().choose("eraser", alt))?;
            Ok((pattern_from_state(&s, "slit", &g)?, s.weight()))
        };
        let (marked, wm) = run("none")?;
        let (plus, wp) = run("plus")?;
        let (minus, wn) = run("minus")?;
        let sum = sum_patterns(&plus, &minus, wp / wm, wn / wm)?;
        Ok(vec![
            within("marked visibility", visibility(&marked)?, 1e-9),
            above("+45° visibility", visibility(&plus)?, 1.0 - 1e-9),
            above("−45° visibility", visibility(&minus)?, 1.0 - 1e-9),
            within("fringe + antifringe − flat", sum.max_abs_diff(&marked)?, 1e-10),
        ])
    })())
}

/// Spatial-path × s-polarization × p-polarization product terms on the
/// walborn space, with |L⟩ = (x+iy)/√2 and |R⟩ = (x−iy)/√2.
fn display(space: &[Dof], terms: &[(C, usize, [C; 2], [C; 2])]) -> StateVector {
    let mut amps = vec![c(0.0, 0.0); 8];
    for (a, slit, spol, ppol) in terms {
        for (i, sp) in spol.iter().enumerate() {
            for (j, pp) in ppol.iter().enumerate() {
                amps[slit * 4 + i * 2 + j] += a * sp * pp;
            }
        }
    }
    StateVector::from_amplitudes(space.to_vec(), amps, 1.0).unwrap()
}

fn walborn_state() -> Vec<Line> {
    sub("walborn", (|| {
        let circ = scenarios::circuit("walborn")?;
        let names: Vec<&str> = circ.space().iter().map(|d| d.name()).collect();
        assert_eq!(names, ["spath", "spol", "ppol"]);
        let s = circ.state_after(&circ.default_settings(), "qwp2")?.into_state()?;
        let h = FRAC_1_SQRT_2;
        let (x, y) = ([c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]);
        let l = [c(h, 0.0), c(0.0, h)];
        let r = [c(h, 0.0), c(0.0, -h)];
        let (p, m) = ([c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]);
        let i = c(0.0, 1.0);
        let half = c(0.5, 0.0);
        let four_term = display(
            circ.space(),
            &[(half, 0, l, y), (half * i, 0, r, x), (half * i, 1, r, y), (-half * i, 1, l, x)],
        );
        let diagonal = display(
            circ.space(),
            &[(half, 0, p, p), (-half * i, 1, p, p), (half * i, 0, m, m), (-half, 1, m, m)],
        );
        let x_cond = display(circ.space(), &[(i, 0, r, x), (-i, 1, l, x)]);
        let (given_x, _) = s.project_onto("ppol", "x")?;
        let dist = |a: &StateVector, b: &StateVector| phase_distance(a, b).unwrap_or(f64::INFINITY);
        Ok(vec![
            within("four-term |Ψ⟩", dist(&s, &four_term), 1e-10),
            within("±45° rewrite", dist(&s, &diagonal), 1e-10),
            within("D_p = x reduction", dist(&given_x, &x_cond), 1e-10),
        ])
    })())
}

fn d_s_events(circ: &Circuit, delay: Option<u64>) -> qesim::Result<String> {
    let mut cfg = EventConfig::new(20_000, 5);
    if let Some(d) = delay {
        cfg = cfg.delay("D_p", d);
    }
    let log = events::generate_events(circ, &Settings::new(), &cfg)?;
    Ok(log.for_detector("D_s").map(|e| e.to_json_line() + "\n").collect())
}

fn no_retrocausality() -> Vec<Line> {
    sub("marginals", (|| {
        let wheeler = scenarios::circuit("wheeler")?.compare_marginals(&["pol"], "screen")?;
        let walborn = scenarios::circuit("walborn")?.compare_marginals(&["spath"], "p_pol")?;
        let delayed_circ = scenarios::circuit("walborn_delayed")?;
        let delayed = delayed_circ.compare_marginals(&["spath"], "p_pol")?;
        let base = d_s_events(&delayed_circ, None)?;
        let mut same = !base.is_empty();
        for d in [0, 1_000, 1_000_000_000] {
            same &= d_s_events(&delayed_circ, Some(d))? == base;
        }
        Ok(vec![
            within("wheeler TV", wheeler, 1e-10),
            within("walborn TV", walborn, 1e-10),
            within("walborn_delayed TV", delayed, 1e-10),
            Line { ok: same, detail: format!("D_s events identical across D_p delays: {same}") },
        ])
    })())
}

fn delayed_erasure_sampling() -> Vec<Line> {
    sub("sampling", (|| {
        let start = Instant::now();
        let circ = scenarios::circuit("walborn_delayed")?;
        let shots = 100_000;
        let log = events::generate_events(&circ, &Settings::new(), &EventConfig::new(shots, 42))?;
        let pairs = events::coincidences(&log, "D_s", "D_p", DEFAULT_WINDOW_NS)?;
        let g = SlitGeometry::default();
        let vis = |sel: Option<&str>| -> qesim::Result<f64> {
            match events::conditioned_histogram(&pairs, sel, &g, 32)? {
                Subensemble::Pattern(p) => visibility(&p),
                Subensemble::Empty => Ok(f64::NAN),
            }
        };
        let joint = circ.joint_distribution_with(&Settings::new(), Accounting::Complete)?;
        let draws = events::sample_shots(&joint, shots, 43)?;
        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        for d in draws {
            *counts.entry(d).or_default() += 1;
        }
        let n = shots as f64;
        let mut worst_z: f64 = 0.0;
        let mut seen = 0;
        for (labels, p) in joint.iter() {
            let key: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
            let k = counts.get(&key).copied().unwrap_or(0) as f64;
            seen += counts.contains_key(&key) as usize;
            let sigma = (n * p * (1.0 - p)).sqrt();
            let z = if sigma > 0.0 { (k - n * p).abs() / sigma } else if k == n * p { 0.0 } else { f64::INFINITY };
            worst_z = worst_z.max(z);
        }
        let stray = counts.len() - seen;
        Ok(vec![
            above("V(D_p=+)", vis(Some("+"))?, 0.9),
            above("V(D_p=−)", vis(Some("-"))?, 0.9),
            below("V(all)", vis(None)?, 0.1),
            within("max |z| joint frequencies", worst_z, 5.0),
            Line { ok: stray == 0, detail: format!("draws outside support {stray}") },
            faster("runtime", start.elapsed(), Duration::from_secs(10)),
        ])
    })())
}

fn golden_text(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.edl"));
    std::fs::read_to_string(path).unwrap_or_default()
}

fn unitary_defect(op: &qesim::ElementOp) -> f64 {
    let m = op.matrix();
    let n = m.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut acc = c(0.0, 0.0);
            for k in 0..n {
                acc += m[(k, i)].conj() * m[(k, j)];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - id).norm());
        }
    }
    worst
}

fn infrastructure() -> Vec<Line> {
    sub("infrastructure", (|| {
        // parser totality
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let alphabet = b"EXPERIMENT DOF SOURCE STAGE CHOICE DETECT |=<>{};:,#+-.0123456789abcxyz\n\t\xff\xc3";
        let mut crashes = 0;
        let mut bad_diag = 0;
        let hook = panic::take_hook();
        panic::set_hook(Box::new(|_| {}));
        for k in 0..100_000 {
            let len = rng.gen_range(0..96);
            let bytes: Vec<u8> = if k % 2 == 0 {
                (0..len).map(|_| rng.gen()).collect()
            } else {
                (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
            };
            let text = String::from_utf8_lossy(&bytes).into_owned();
            match panic::catch_unwind(|| edl::parse(&text)) {
                Err(_) => crashes += 1,
                Ok(Err(d)) if d.is_empty() || d.iter().any(|x| x.line == 0 || x.column == 0) => bad_diag += 1,
                Ok(_) => {}
            }
        }
        panic::set_hook(hook);
        // round trip over every shipped file
        let mut worst_tv: f64 = 0.0;
        let mut text_mismatch = 0;
        let names: Vec<&str> = scenarios::list_scenarios().into_iter().map(|(n, _)| n).collect();
        for name in &names {
            let text = golden_text(name);
            let spec = match edl::parse(&text) {
                Ok(s) => s,
                Err(_) => {
                    text_mismatch += 1;
                    continue;
                }
            };
            let again = edl::parse(&edl::format(&spec)).ok();
            if edl::format(&spec) != text || again.as_ref() != Some(&spec) {
                text_mismatch += 1;
            }
            let compiled = edl::compile(&spec)?;
            let reference = scenarios::circuit(name)?;
            for st in reference.settings_grid() {
                for acc in [Accounting::PostSelected, Accounting::Complete] {
                    let a = compiled.joint_distribution_with(&st, acc)?;
                    let b = reference.joint_distribution_with(&st, acc)?;
                    worst_tv = worst_tv.max(total_variation(&a, &b)?).max((a.total_mass() - b.total_mass()).abs());
                }
            }
        }
        // seeded reproducibility
        let circ = scenarios::circuit("walborn_delayed")?;
        let cfg = EventConfig::new(5_000, 7);
        let a = events::generate_events(&circ, &Settings::new(), &cfg)?.to_jsonl();
        let b = events::generate_events(&circ, &Settings::new(), &cfg)?.to_jsonl();
        let joint = circ.joint_distribution(&Settings::new())?;
        let same = a == b && joint.sample(10_000, 3)? == joint.sample(10_000, 3)?;
        // unitary elements
        let arm = vec![Dof::new("arm", &["T1", "R1"])?];
        let pol = vec![Dof::new("pol", &["h", "v"])?, Dof::new("chan", &["U", "L"])?];
        let spin = vec![Dof::new("spin", &["+S", "0S", "-S"])?, Dof::new("beam", &["up", "mid", "down"])?];
        let params = BTreeMap::new();
        let mut ops = Vec::new();
        for conv in Conventions::variants() {
            for deg in [-45.0, 0.0, 22.5, 45.0, 90.0, 137.0] {
                ops.push(Element::QuarterWavePlate { pol: "pol".into(), fast: Angle::Degrees(deg) }.build(&pol, &params, &conv)?);
            }
        }
        let conv = Conventions::default();
        for deg in [0.0, 90.0, -90.0, 33.3] {
            ops.push(Element::PhaseShifter { dof: "arm".into(), label: "T1".into(), phi: Angle::Degrees(deg) }.build(&arm, &params, &conv)?);
        }
        ops.push(Element::BeamSplitter { dof: "arm".into(), port_a: "T1".into(), port_b: "R1".into() }.build(&arm, &params, &conv)?);
        ops.push(Element::Recombiner { dof: "arm".into(), into: "R1".into() }.build(&arm, &params, &conv)?);
        ops.push(Element::Split { dof: "arm".into() }.build(&arm, &params, &conv)?);
        ops.push(Element::Analyzer { pol: "pol".into(), path: "chan".into() }.build(&pol, &params, &conv)?);
        ops.push(Element::InverseAnalyzer { pol: "pol".into(), path: "chan".into() }.build(&pol, &params, &conv)?);
        ops.push(Element::SternGerlach { spin: "spin".into(), path: "beam".into() }.build(&spin, &params, &conv)?);
        ops.push(Element::InverseSternGerlach { spin: "spin".into(), path: "beam".into() }.build(&spin, &params, &conv)?);
        let all_unitary = ops.iter().all(|o| o.kind() == ElementKind::Unitary);
        let defect = ops.iter().map(unitary_defect).fold(0.0, f64::max);
        Ok(vec![
            Line { ok: crashes == 0 && bad_diag == 0, detail: format!("fuzz 1e5: {crashes} crashes, {bad_diag} unpositioned rejections") },
            Line { ok: text_mismatch == 0, detail: format!("{} golden files, {text_mismatch} text mismatches", names.len()) },
            within("round-trip max TV", worst_tv, 1e-12),
            Line { ok: same, detail: format!("identical seed, identical bytes: {same}") },
            Line { ok: all_unitary, detail: format!("{} unitary elements", ops.len()) },
            within("max |M†M − I|", defect, 1e-12),
        ])
    })())
}

fn main() {
    let suite_start = Instant::now();
    let criteria: [(&str, fn() -> Vec<Line>); 9] = [
        ("analyzer loop identity", analyzer_loop_identity),
        ("Stern-Gerlach loop identity", stern_gerlach_loop_identity),
        ("Mach-Zehnder algebra", mz_algebra),
        ("regrouping by detector", regrouping_identity),
        ("one-photon eraser", one_photon_eraser),
        ("entangled-pair state reproduction", walborn_state),
        ("marginal invariance across choices", no_retrocausality),
        ("delayed-erasure sampling", delayed_erasure_sampling),
        ("infrastructure", infrastructure),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let lines = run();
        let ok = !lines.is_empty() && lines.iter().all(|l| l.ok);
        let details: Vec<String> = lines
            .iter()
            .map(|l| if l.ok { l.detail.clone() } else { format!("{} [FAIL]", l.detail) })
            .collect();
        println!("{} {name}: {}", if ok { "PASS" } else { "FAIL" }, details.join("; "));
        if !ok {
            failed.push(name);
        }
    }
    let total = suite_start.elapsed();
    let fast = total < Duration::from_secs(30);
    println!("{} suite runtime: {:.2}s (< 30s)", if fast { "PASS" } else { "FAIL" }, total.as_secs_f64());
    if !fast {
        failed.push("suite runtime");
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: {} failing: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
