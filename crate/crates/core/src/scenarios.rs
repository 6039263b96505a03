//! The named experiment catalog, each circuit paired with executable checks.
//!
//! A check returns a deviation (an error measure, or `1 − visibility` and the
//! like) and passes when it does not exceed its tolerance.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::circuit::{Accounting, Alternative, Circuit, CircuitBuilder, Detector, Settings, CLICK};
use crate::elements::{Angle, Condition, Conventions, Element};
use crate::error::{Error, Result};
use crate::measure::{rng_for, total_variation, Basis};
use crate::qstate::{phase_distance, Dof, StateVector};
use crate::screen::{pattern_from_state, sum_patterns, visibility, Pattern, SlitGeometry};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Catalog names with one-line descriptions, in catalog order.
pub const CATALOG: &[(&str, &str)] = &[
    ("two_slit", "two-slit screen with a far-field interference pattern"),
    ("wheeler", "two slits with a removable screen; counters behind each slit when it is out"),
    ("mz_one_bs", "interferometer with only the first beam splitter; counters on each arm"),
    ("mz_two_bs", "Mach-Zehnder interferometer with a phase shifter and an insertable second beam splitter"),
    ("mz_recombine_single_detector", "both arms recombined onto one detector instead of a second beam splitter"),
    ("analyzer_loop", "polarization analyzer followed by its inverse, with optional channel masks"),
    ("sg_loop", "spin-1 Stern-Gerlach separation and recombination, with optional beam masks"),
    ("one_photon_eraser", "h/v-marked slits with an optional ±45° eraser polarizer"),
    ("walborn", "entangled-pair eraser with quarter-wave plates over the slits and a choice of partner polarizer"),
    ("walborn_delayed", "the entangled-pair eraser with the screen detection before the partner's polarizer choice"),
];

pub fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    CATALOG.to_vec()
}

pub struct Scenario {
    pub name: String,
    pub description: String,
    pub circuit: Circuit,
    pub checks: Vec<Check>,
}

impl Scenario {
    /// Every combination of choice settings.
    pub fn settings(&self) -> Vec<Settings> {
        self.circuit.settings_grid()
    }

    pub fn run_checks(&self) -> Vec<CheckResult> {
        self.checks.iter().map(|k| k.evaluate(&self.circuit)).collect()
    }
}

type CheckFn = Box<dyn Fn(&Circuit) -> Result<f64> + Send + Sync>;

pub struct Check {
    pub name: String,
    pub tolerance: f64,
    run: CheckFn,
}

impl Check {
    pub fn new(name: &str, tolerance: f64, run: impl Fn(&Circuit) -> Result<f64> + Send + Sync + 'static) -> Self {
        Check { name: name.into(), tolerance, run: Box::new(run) }
    }

    pub fn evaluate(&self, circuit: &Circuit) -> CheckResult {
        let (value, error) = match (self.run)(circuit) {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        CheckResult {
            name: self.name.clone(),
            value,
            tolerance: self.tolerance,
            passed: value <= self.tolerance,
            error,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

pub fn build(name: &str) -> Result<Scenario> {
    build_with(name, Conventions::default())
}

pub fn build_with(name: &str, conventions: Conventions) -> Result<Scenario> {
    let description = CATALOG
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, d)| d.to_string())
        .ok_or_else(|| Error::UnknownScenario {
            name: name.into(),
            available: CATALOG.iter().map(|(n, _)| n.to_string()).collect(),
        })?;
    let circuit = circuit_with(name, conventions)?;
    Ok(Scenario { name: name.into(), description, circuit, checks: expected_properties(name)? })
}

pub fn circuit(name: &str) -> Result<Circuit> {
    circuit_with(name, Conventions::default())
}

fn circuit_with(name: &str, conventions: Conventions) -> Result<Circuit> {
    let b = match name {
        "two_slit" => two_slit(),
        "wheeler" => wheeler(),
        "mz_one_bs" => mz_one_bs(),
        "mz_two_bs" => mz_two_bs(),
        "mz_recombine_single_detector" => mz_recombine(),
        "analyzer_loop" => analyzer_loop(),
        "sg_loop" => sg_loop(),
        "one_photon_eraser" => one_photon_eraser(),
        "walborn" => walborn(false),
        "walborn_delayed" => walborn(true),
        _ => {
            return Err(Error::UnknownScenario {
                name: name.into(),
                available: CATALOG.iter().map(|(n, _)| n.to_string()).collect(),
            })
        }
    };
    b.conventions(conventions).build()
}

pub fn expected_properties(name: &str) -> Result<Vec<Check>> {
    Ok(match name {
        "two_slit" => two_slit_checks(),
        "wheeler" => wheeler_checks(),
        "mz_one_bs" => mz_one_bs_checks(),
        "mz_two_bs" => mz_two_bs_checks(),
        "mz_recombine_single_detector" => mz_recombine_checks(),
        "analyzer_loop" => analyzer_checks(),
        "sg_loop" => sg_checks(),
        "one_photon_eraser" => eraser_checks(),
        "walborn" => walborn_checks(false),
        "walborn_delayed" => walborn_checks(true),
        _ => {
            return Err(Error::UnknownScenario {
                name: name.into(),
                available: CATALOG.iter().map(|(n, _)| n.to_string()).collect(),
            })
        }
    })
}

fn split(dof: &str) -> Element {
    Element::Split { dof: dof.into() }
}

fn bs() -> Element {
    Element::BeamSplitter { dof: "arm".into(), port_a: "T1".into(), port_b: "R1".into() }
}

fn phase(dof: &str, label: &str, phi: Angle) -> Element {
    Element::PhaseShifter { dof: dof.into(), label: label.into(), phi }
}

fn polarizer(pol: &str, degrees: f64) -> Element {
    Element::Polarizer { pol: pol.into(), angle: Angle::Degrees(degrees) }
}

fn block(dof: &str, label: &str) -> Element {
    Element::Blocker { dof: dof.into(), label: label.into() }
}

fn phi() -> Angle {
    Angle::Param("phi".into())
}

fn two_slit() -> CircuitBuilder {
    CircuitBuilder::new("two_slit")
        .dof("slit", &["s1", "s2"])
        .source_term(ONE, &[("slit", "s1")])
        .stage("slits", split("slit"))
        .detect(Detector::screen("screen", "slit", SlitGeometry::default()))
}

fn wheeler() -> CircuitBuilder {
    CircuitBuilder::new("wheeler")
        .dof("slit", &["s1", "s2"])
        .dof("pol", &["h", "v"])
        .param("phi", 0.0)
        .source_term(ONE, &[("slit", "s1"), ("pol", "h")])
        .source_term(ONE, &[("slit", "s1"), ("pol", "v")])
        .stage("slits", split("slit"))
        .stage("ps", phase("slit", "s2", phi()))
        .choice(
            "screen",
            vec![
                Alternative::new("in").detect(Detector::screen("screen", "slit", SlitGeometry::default())),
                Alternative::new("out")
                    .detect(Detector::placement("D1", "slit", "s1"))
                    .detect(Detector::placement("D2", "slit", "s2")),
            ],
        )
        .detect(Detector::dofs("P", &[("pol", Basis::Native)]))
}

fn mz_base(name: &str) -> CircuitBuilder {
    CircuitBuilder::new(name)
        .dof("arm", &["T1", "R1"])
        .param("phi", 0.0)
        .source_term(ONE, &[("arm", "T1")])
        .stage("bs1", bs())
        .stage("ps", phase("arm", "T1", phi()))
}

fn mz_one_bs() -> CircuitBuilder {
    mz_base("mz_one_bs")
        .detect(Detector::placement("D1", "arm", "R1"))
        .detect(Detector::placement("D2", "arm", "T1"))
}

fn mz_two_bs() -> CircuitBuilder {
    mz_base("mz_two_bs")
        .choice(
            "bs2",
            vec![
                Alternative::new("in").stage(
                    "bs2",
                    Element::BeamSplitter { dof: "arm".into(), port_a: "T1".into(), port_b: "R1".into() },
                ),
                Alternative::new("out"),
            ],
        )
        .detect(Detector::placement("D1", "arm", "T1"))
        .detect(Detector::placement("D2", "arm", "R1"))
}

fn mz_recombine() -> CircuitBuilder {
    mz_base("mz_recombine_single_detector")
        // undoes the reflection phase so both arms arrive in step at φ = 0
        .stage("mirror", phase("arm", "R1", Angle::Degrees(-90.0)))
        .stage("lens", Element::Recombiner { dof: "arm".into(), into: "R1".into() })
        .detect(Detector::placement("D", "arm", "R1"))
}

fn analyzer_loop() -> CircuitBuilder {
    CircuitBuilder::new("analyzer_loop")
        .dof("pol", &["h", "v"])
        .dof("chan", &["U", "L"])
        .source_term(ONE, &[("pol", "h"), ("chan", "U")])
        .source_term(ONE, &[("pol", "v"), ("chan", "U")])
        .stage("analyzer", Element::Analyzer { pol: "pol".into(), path: "chan".into() })
        .choice(
            "mask",
            vec![
                Alternative::new("none"),
                Alternative::new("block_L").stage("mask_L", block("chan", "L")),
                Alternative::new("block_U").stage("mask_U", block("chan", "U")),
            ],
        )
        .stage("inverse", Element::InverseAnalyzer { pol: "pol".into(), path: "chan".into() })
        .detect(Detector::dofs("P", &[("pol", Basis::Diagonal)]))
        .detect(Detector::dofs("C", &[("chan", Basis::Native)]))
}

fn sg_loop() -> CircuitBuilder {
    CircuitBuilder::new("sg_loop")
        .dof("spin", &["+S", "0S", "-S"])
        .dof("beam", &["up", "mid", "down"])
        .source_term(ONE, &[("spin", "+S"), ("beam", "up")])
        .source_term(c(0.0, 1.0), &[("spin", "0S"), ("beam", "up")])
        .source_term(c(-1.0, 0.0), &[("spin", "-S"), ("beam", "up")])
        .stage("sg", Element::SternGerlach { spin: "spin".into(), path: "beam".into() })
        .choice(
            "masks",
            vec![
                Alternative::new("open"),
                Alternative::new("pass_plus")
                    .stage("mask_mid", block("beam", "mid"))
                    .stage("mask_down", block("beam", "down")),
            ],
        )
        .stage("sg_inv", Element::InverseSternGerlach { spin: "spin".into(), path: "beam".into() })
        .detect(Detector::dofs("S", &[("spin", Basis::Native)]))
        .detect(Detector::dofs("B", &[("beam", Basis::Native)]))
}

fn one_photon_eraser() -> CircuitBuilder {
    CircuitBuilder::new("one_photon_eraser")
        .dof("slit", &["s1", "s2"])
        .dof("pol", &["h", "v"])
        .particle("photon", &["slit", "pol"])
        .source_term(ONE, &[("slit", "s1"), ("pol", "h")])
        .source_term(ONE, &[("slit", "s1"), ("pol", "v")])
        .stage("slits", split("slit"))
        .stage_when("mark_h", polarizer("pol", 0.0), Condition::new("slit", "s1"))
        .stage_when("mark_v", polarizer("pol", 90.0), Condition::new("slit", "s2"))
        .choice(
            "eraser",
            vec![
                Alternative::new("none"),
                Alternative::new("plus").stage("erase_plus", polarizer("pol", 45.0)),
                Alternative::new("minus").stage("erase_minus", polarizer("pol", -45.0)),
            ],
        )
        .detect(Detector::screen("screen", "slit", SlitGeometry::default()))
}

fn walborn(delayed: bool) -> CircuitBuilder {
    let name = if delayed { "walborn_delayed" } else { "walborn" };
    let b = CircuitBuilder::new(name)
        .dof("spath", &["s1", "s2"])
        .dof("spol", &["x", "y"])
        .dof("ppol", &["x", "y"])
        .particle("s", &["spath", "spol"])
        .particle("p", &["ppol"])
        .source_term(ONE, &[("spath", "s1"), ("spol", "x"), ("ppol", "y")])
        .source_term(ONE, &[("spath", "s1"), ("spol", "y"), ("ppol", "x")])
        .stage("slits", split("spath"))
        .stage_when(
            "qwp1",
            Element::QuarterWavePlate { pol: "spol".into(), fast: Angle::Degrees(45.0) },
            Condition::new("spath", "s1"),
        )
        .stage_when(
            "qwp2",
            Element::QuarterWavePlate { pol: "spol".into(), fast: Angle::Degrees(-45.0) },
            Condition::new("spath", "s2"),
        );
    let choice = vec![
        Alternative::new("none"),
        Alternative::new("+45").stage("pp_plus", polarizer("ppol", 45.0)),
        Alternative::new("-45").stage("pp_minus", polarizer("ppol", -45.0)),
    ];
    let screen = Detector::screen("D_s", "spath", SlitGeometry::default());
    let dp = Detector::dofs("D_p", &[("ppol", Basis::Diagonal)]);
    if delayed {
        b.detect(screen).choice("p_pol", choice).detect(dp.at(100))
    } else {
        b.choice("p_pol", choice).detect(dp).detect(screen)
    }
}

/// Sum of tensor products of per-dof vectors.
pub fn product_state(space: &[Dof], terms: &[(Complex64, Vec<Vec<Complex64>>)]) -> Result<StateVector> {
    let dim: usize = space.iter().map(Dof::dim).product();
    let mut amps = vec![c(0.0, 0.0); dim];
    for (a, vecs) in terms {
        if vecs.len() != space.len() || vecs.iter().zip(space).any(|(v, d)| v.len() != d.dim()) {
            return Err(Error::Validation("product term does not match the space".into()));
        }
        let mut t = vec![*a];
        for v in vecs {
            t = t.iter().flat_map(|x| v.iter().map(move |y| x * y)).collect();
        }
        for (acc, x) in amps.iter_mut().zip(t) {
            *acc += x;
        }
    }
    StateVector::from_amplitudes(space.to_vec(), amps, 1.0)
}

fn basis_vec(dim: usize, k: usize) -> Vec<Complex64> {
    (0..dim).map(|i| if i == k { ONE } else { c(0.0, 0.0) }).collect()
}

fn diag_vectors() -> (Vec<Complex64>, Vec<Complex64>) {
    let s = FRAC_1_SQRT_2;
    (vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)])
}

/// The rewritten pair state in the ±45° basis:
/// `½[(|+⟩_s1 − i|+⟩_s2)|+⟩_p + i(|−⟩_s1 + i|−⟩_s2)|−⟩_p]`.
pub fn walborn_diagonal_display(space: &[Dof]) -> Result<StateVector> {
    let (p, m) = diag_vectors();
    let (s1, s2) = (basis_vec(2, 0), basis_vec(2, 1));
    let i = c(0.0, 1.0);
    product_state(
        space,
        &[
            (c(0.5, 0.0), vec![s1.clone(), p.clone(), p.clone()]),
            (-i * 0.5, vec![s2.clone(), p.clone(), p.clone()]),
            (i * 0.5, vec![s1, m.clone(), m.clone()]),
            (c(-0.5, 0.0), vec![s2, m.clone(), m]),
        ],
    )
}

/// `(i|R⟩_s1 − i|L⟩_s2) ⊗ |x⟩_p`, normalized.
pub fn walborn_x_conditioned_display(space: &[Dof], conventions: &Conventions) -> Result<StateVector> {
    let [l, r] = conventions.circular_vectors();
    let i = c(0.0, 1.0);
    let x = basis_vec(2, 0);
    product_state(
        space,
        &[(i, vec![basis_vec(2, 0), r, x.clone()]), (-i, vec![basis_vec(2, 1), l, x])],
    )
}

/// `(|+⟩_s1 − i|+⟩_s2)/√2 ⊗ |+45°⟩_p`.
pub fn walborn_plus_display(space: &[Dof]) -> Result<StateVector> {
    let (p, _) = diag_vectors();
    product_state(
        space,
        &[
            (ONE, vec![basis_vec(2, 0), p.clone(), p.clone()]),
            (c(0.0, -1.0), vec![basis_vec(2, 1), p.clone(), p]),
        ],
    )
}

/// Residual of the diagonal-basis display for every convention variant.
pub fn convention_search() -> Result<Vec<(Conventions, f64)>> {
    Conventions::variants()
        .into_iter()
        .map(|conv| {
            let circ = circuit_with("walborn", conv)?;
            let s = post_slit_state(&circ)?;
            let target = walborn_diagonal_display(circ.space())?;
            Ok((conv, phase_distance(&s, &target).unwrap_or(f64::INFINITY)))
        })
        .collect()
}

/// The pair state right after the quarter-wave plates.
pub fn post_slit_state(circ: &Circuit) -> Result<StateVector> {
    circ.state_after(&circ.default_settings(), "qwp2")?.into_state()
}

/// Projects `dof` in `basis` onto `label` and returns the normalized slice.
pub fn condition_state(
    s: &StateVector,
    dof: &str,
    basis: Basis,
    label: &str,
    conventions: &Conventions,
) -> Result<StateVector> {
    let d = s.dof(dof)?.clone();
    match basis.change(&d, conventions)? {
        Some(ch) => Ok(s.rebase(&ch)?.project_onto(dof, label)?.0.rebase(&ch.inverse())?),
        None => Ok(s.project_onto(dof, label)?.0),
    }
}

fn evolved(circ: &Circuit, settings: &Settings) -> Result<StateVector> {
    circ.evolve(&circ.resolve_settings(settings)?)?.into_state()
}

fn click(circ: &Circuit, settings: &Settings, det: &str) -> Result<f64> {
    circ.joint_distribution(settings)?.probability_of(det, CLICK)
}

fn phi_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| 2.0 * PI * k as f64 / n as f64)
}

fn two_slit_checks() -> Vec<Check> {
    vec![
        Check::new("pattern visibility 1", 1e-12, |circ| {
            let s = evolved(circ, &Settings::new())?;
            Ok(1.0 - visibility(&pattern_from_state(&s, "slit", &SlitGeometry::default())?)?)
        }),
        Check::new("intensity follows 1 + cos δ", 1e-12, |circ| {
            let g = SlitGeometry::default();
            let p = pattern_from_state(&evolved(circ, &Settings::new())?, "slit", &g)?;
            Ok(p.xs().iter().zip(p.intensities()).map(|(x, i)| (i - 1.0 - g.phase_at(*x).cos()).abs()).fold(0.0, f64::max))
        }),
    ]
}

fn wheeler_checks() -> Vec<Check> {
    vec![
        Check::new("screen in: interference visibility 1", 1e-12, |circ| {
            let s = evolved(circ, &Settings::new().choose("screen", "in"))?;
            Ok(1.0 - visibility(&pattern_from_state(&s, "slit", &SlitGeometry::default())?)?)
        }),
        Check::new("screen out: each counter fires half the time for every φ", 1e-12, |circ| {
            let mut worst: f64 = 0.0;
            for phi in phi_grid(16) {
                let st = Settings::new().choose("screen", "out").param("phi", phi);
                for det in ["D1", "D2"] {
                    worst = worst.max((click(circ, &st, det)? - 0.5).abs());
                }
            }
            Ok(worst)
        }),
        Check::new("polarization marginal invariant across the screen choice", 1e-10, |circ| {
            circ.compare_marginals(&["pol"], "screen")
        }),
    ]
}

fn mz_one_bs_checks() -> Vec<Check> {
    vec![Check::new("both detectors at 1/2 for 64 φ values", 1e-12, |circ| {
        let mut worst: f64 = 0.0;
        for phi in phi_grid(64) {
            let st = Settings::new().param("phi", phi);
            let d = circ.joint_distribution(&st)?;
            worst = worst.max((d.probability_of("D1", CLICK)? - 0.5).abs());
            worst = worst.max((d.probability_of("D2", CLICK)? - 0.5).abs());
        }
        Ok(worst)
    })]
}

/// Amplitudes at the two output ports summed over the four two-beam-splitter
/// paths, grouped by the port each path ends in.
fn mz_path_sum(phi: f64) -> (Complex64, Complex64) {
    let t = c(FRAC_1_SQRT_2, 0.0);
    let r = c(0.0, FRAC_1_SQRT_2);
    let e = Complex64::from_polar(1.0, phi);
    // T1 carries the phase shifter
    let (t1t2, t1r2, r1t2, r1r2) = (t * e * t, t * e * r, r * t, r * r);
    (t1t2 + r1r2, t1r2 + r1t2)
}

fn mz_two_bs_checks() -> Vec<Check> {
    vec![
        Check::new("φ = 0: a single detector fires", 1e-12, |circ| {
            Ok((click(circ, &Settings::new(), "D2")? - 1.0).abs())
        }),
        Check::new("P(D2) = cos²(φ/2) over 64 φ values", 1e-10, |circ| {
            let mut worst: f64 = 0.0;
            for phi in phi_grid(64) {
                let p = click(circ, &Settings::new().param("phi", phi), "D2")?;
                worst = worst.max((p - (phi / 2.0).cos().powi(2)).abs());
            }
            Ok(worst)
        }),
        Check::new("output amplitudes equal the regrouped path sums", 1e-12, |circ| {
            let mut worst: f64 = 0.0;
            for phi in phi_grid(16) {
                let s = evolved(circ, &Settings::new().param("phi", phi))?;
                let (at_t, at_r) = mz_path_sum(phi);
                worst = worst.max((s.amplitude(&["T1"])? - at_t).norm());
                worst = worst.max((s.amplitude(&["R1"])? - at_r).norm());
            }
            Ok(worst)
        }),
        Check::new("second beam splitter out: 1/2 at each detector", 1e-12, |circ| {
            let st = Settings::new().choose("bs2", "out").param("phi", 1.0);
            Ok((click(circ, &st, "D1")? - 0.5).abs().max((click(circ, &st, "D2")? - 0.5).abs()))
        }),
    ]
}

fn mz_recombine_checks() -> Vec<Check> {
    vec![
        Check::new("φ = 0: the single detector registers every photon", 1e-12, |circ| {
            Ok((click(circ, &Settings::new(), "D")? - 1.0).abs())
        }),
        Check::new("P(D) = cos²(φ/2) over 64 φ values", 1e-10, |circ| {
            let mut worst: f64 = 0.0;
            for phi in phi_grid(64) {
                let p = click(circ, &Settings::new().param("phi", phi), "D")?;
                worst = worst.max((p - (phi / 2.0).cos().powi(2)).abs());
            }
            Ok(worst)
        }),
    ]
}

fn random_state(space: &[Dof], rng: &mut impl Rng, dof: &str) -> Result<StateVector> {
    // random amplitudes on `dof`, every other dof on its first label
    let pos = crate::qstate::dof_position(space, dof)?;
    let dim = space[pos].dim();
    let amps: Vec<Complex64> = (0..dim).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let vecs: Vec<Vec<Complex64>> = space
        .iter()
        .enumerate()
        .map(|(i, d)| if i == pos { amps.clone() } else { basis_vec(d.dim(), 0) })
        .collect();
    product_state(space, &[(ONE, vecs)])
}

fn analyzer_checks() -> Vec<Check> {
    vec![
        Check::new("loop returns |45°⟩ with weight 1", 1e-10, |circ| {
            let s = evolved(circ, &Settings::new())?;
            let d = phase_distance(&s, circ.source()).unwrap_or(f64::INFINITY);
            Ok(d.max((s.weight() - 1.0).abs()))
        }),
        Check::new("tagged state splits 1/2, 1/2 between channels", 1e-12, |circ| {
            let s = circ.state_after(&Settings::new(), "analyzer")?.into_state()?;
            let d = crate::measure::born_distribution(&s, &[("chan", Basis::Native)], circ.conventions())?;
            Ok((d.probability(&["U"])? - 0.5).abs().max((d.probability(&["L"])? - 0.5).abs()))
        }),
        Check::new("loop restores 100 random polarizations", 1e-10, |circ| {
            let mut rng = rng_for(1, 0);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let input = random_state(circ.space(), &mut rng, "pol")?;
                let out = evolved(&circ.with_source(input.clone())?, &Settings::new())?;
                worst = worst.max(phase_distance(&out, &input).unwrap_or(f64::INFINITY));
            }
            Ok(worst)
        }),
        Check::new("masking the lower channel passes v with weight 1/2", 1e-12, |circ| {
            let s = evolved(circ, &Settings::new().choose("mask", "block_L"))?;
            Ok((s.amplitude(&["v", "U"])?.norm() - 1.0).abs().max((s.weight() - 0.5).abs()))
        }),
    ]
}

fn sg_checks() -> Vec<Check> {
    vec![
        Check::new("open loop: fidelity 1 for 100 random spin states", 1e-10, |circ| {
            let mut rng = rng_for(2, 0);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let input = random_state(circ.space(), &mut rng, "spin")?;
                let out = evolved(&circ.with_source(input.clone())?, &Settings::new())?;
                worst = worst.max(1.0 - out.fidelity(&input)?);
            }
            Ok(worst)
        }),
        Check::new("masked loop: surviving eigenstate with weight |c+|²", 1e-12, |circ| {
            let mut rng = rng_for(3, 0);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let input = random_state(circ.space(), &mut rng, "spin")?;
                let out = evolved(&circ.with_source(input.clone())?, &Settings::new().choose("masks", "pass_plus"))?;
                let cplus = input.amplitude(&["+S", "up"])?.norm_sqr();
                worst = worst.max((out.weight() - cplus).abs());
                worst = worst.max((out.amplitude(&["+S", "up"])?.norm() - 1.0).abs());
            }
            Ok(worst)
        }),
    ]
}

fn eraser_pattern(circ: &Circuit, alt: &str) -> Result<(Pattern, f64)> {
    let s = evolved(circ, &Settings::new().choose("eraser", alt))?;
    Ok((pattern_from_state(&s, "slit", &SlitGeometry::default())?, s.weight()))
}

fn eraser_checks() -> Vec<Check> {
    vec![
        Check::new("marked state weight 1/2", 1e-12, |circ| {
            Ok((eraser_pattern(circ, "none")?.1 - 0.5).abs())
        }),
        Check::new("marked pattern visibility 0", 1e-9, |circ| visibility(&eraser_pattern(circ, "none")?.0)),
        Check::new("+45° fringe visibility 1", 1e-9, |circ| Ok(1.0 - visibility(&eraser_pattern(circ, "plus")?.0)?)),
        Check::new("-45° antifringe visibility 1", 1e-9, |circ| {
            Ok(1.0 - visibility(&eraser_pattern(circ, "minus")?.0)?)
        }),
        Check::new("fringe + antifringe = flat", 1e-10, |circ| {
            let (marked, wm) = eraser_pattern(circ, "none")?;
            let (plus, wp) = eraser_pattern(circ, "plus")?;
            let (minus, wn) = eraser_pattern(circ, "minus")?;
            let sum = sum_patterns(&plus, &minus, wp / wm, wn / wm)?;
            sum.max_abs_diff(&marked)
        }),
        Check::new("marginal comparison refuses a choice on the same photon", 0.0, |circ| {
            match circ.compare_marginals(&["slit"], "eraser") {
                Err(Error::Contract(_)) => Ok(0.0),
                Err(e) => Err(e),
                Ok(_) => Ok(1.0),
            }
        }),
    ]
}

fn walborn_checks(delayed: bool) -> Vec<Check> {
    let mut checks = vec![
        Check::new("post-slit state matches the ±45° rewrite", 1e-10, |circ| {
            let s = post_slit_state(circ)?;
            Ok(phase_distance(&s, &walborn_diagonal_display(circ.space())?).unwrap_or(f64::INFINITY))
        }),
        Check::new("D_p = x leaves s in i|R⟩_s1 − i|L⟩_s2", 1e-10, |circ| {
            let s = post_slit_state(circ)?;
            let x = condition_state(&s, "ppol", Basis::Native, "x", circ.conventions())?;
            let target = walborn_x_conditioned_display(circ.space(), circ.conventions())?;
            Ok(phase_distance(&x, &target).unwrap_or(f64::INFINITY))
        }),
        Check::new("+45° partner polarizer selects (|+⟩_s1 − i|+⟩_s2)", 1e-10, |circ| {
            let s = post_slit_state(circ)?;
            let op = Element::Polarizer { pol: "ppol".into(), angle: Angle::Degrees(45.0) }.build(
                circ.space(),
                circ.params(),
                circ.conventions(),
            )?;
            let out = op.apply(&s)?.into_state()?;
            let d = phase_distance(&out, &walborn_plus_display(circ.space())?).unwrap_or(f64::INFINITY);
            Ok(d.max((out.weight() - 0.5).abs()))
        }),
        Check::new("conditioned on D_p = ±: visibility 1", 1e-9, |circ| {
            let s = post_slit_state(circ)?;
            let mut worst: f64 = 0.0;
            for label in ["+", "-"] {
                let cond = condition_state(&s, "ppol", Basis::Diagonal, label, circ.conventions())?;
                let v = visibility(&pattern_from_state(&cond, "spath", &SlitGeometry::default())?)?;
                worst = worst.max(1.0 - v);
            }
            Ok(worst)
        }),
        Check::new("unconditioned screen pattern visibility 0", 1e-9, |circ| {
            let s = post_slit_state(circ)?;
            visibility(&pattern_from_state(&s, "spath", &SlitGeometry::default())?)
        }),
        Check::new("P(+)·fringe + P(−)·antifringe = unconditioned pattern", 1e-10, |circ| {
            let g = SlitGeometry::default();
            let s = post_slit_state(circ)?;
            let mut parts = Vec::new();
            for label in ["+", "-"] {
                let cond = condition_state(&s, "ppol", Basis::Diagonal, label, circ.conventions())?;
                parts.push((pattern_from_state(&cond, "spath", &g)?, cond.weight() / s.weight()));
            }
            let sum = sum_patterns(&parts[0].0, &parts[1].0, parts[0].1, parts[1].1)?;
            sum.max_abs_diff(&pattern_from_state(&s, "spath", &g)?)
        }),
        Check::new("screen marginal invariant across the partner polarizer choice", 1e-10, |circ| {
            circ.compare_marginals(&["spath"], "p_pol")
        }),
        Check::new("polarizer before D_s selects the same conditioned patterns", 1e-10, |circ| {
            let g = SlitGeometry::default();
            let s = post_slit_state(circ)?;
            let mut worst: f64 = 0.0;
            for (label, angle) in [("+", 45.0), ("-", -45.0)] {
                let via_p = condition_state(&s, "ppol", Basis::Diagonal, label, circ.conventions())?;
                let op = Element::Polarizer { pol: "spol".into(), angle: Angle::Degrees(angle) }.build(
                    circ.space(),
                    circ.params(),
                    circ.conventions(),
                )?;
                let via_s = op.apply(&s)?.into_state()?;
                let a = pattern_from_state(&via_p, "spath", &g)?;
                let b = pattern_from_state(&via_s, "spath", &g)?;
                worst = worst.max(a.max_abs_diff(&b)?);
            }
            Ok(worst)
        }),
    ];
    if delayed {
        checks.push(Check::new("same joint distributions as the undelayed arrangement", 1e-12, |circ| {
            let prompt = circuit_with("walborn", *circ.conventions())?;
            let mut worst: f64 = 0.0;
            for st in circ.settings_grid() {
                for acc in [Accounting::PostSelected, Accounting::Complete] {
                    let a = circ.joint_distribution_with(&st, acc)?;
                    let b = prompt.joint_distribution_with(&st, acc)?;
                    worst = worst.max(total_variation(&a, &b)?).max((a.total_mass() - b.total_mass()).abs());
                }
            }
            Ok(worst)
        }));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_every_scenario_in_order() {
        let names: Vec<&str> = list_scenarios().iter().map(|(n, _)| *n).collect();
        assert_eq!(names.len(), 10);
        assert!(names.contains(&"walborn") && names.contains(&"sg_loop"));
        for n in names {
            assert_eq!(build(n).unwrap().name, n);
        }
    }

    #[test]
    fn unknown_scenario_lists_catalog() {
        match build("nosuch") {
            Err(Error::UnknownScenario { available, .. }) => assert_eq!(available.len(), 10),
            _ => panic!("expected catalog error"),
        }
    }

    #[test]
    fn every_scenario_passes_its_checks() {
        for (n, _) in CATALOG {
            for r in build(n).unwrap().run_checks() {
                assert!(r.passed, "{n}: {} = {} (tol {}) {:?}", r.name, r.value, r.tolerance, r.error);
            }
        }
    }

    #[test]
    fn default_conventions_win_the_search() {
        let results = convention_search().unwrap();
        assert_eq!(results.len(), 16);
        let default = results.iter().find(|(c, _)| *c == Conventions::default()).unwrap();
        assert!(default.1 < 1e-10);
    }

    #[test]
    fn mirrored_handedness_breaks_circular_checks() {
        let conv = Conventions { handedness: crate::elements::Handedness::Mirrored, ..Conventions::default() };
        let s = build_with("walborn", conv).unwrap();
        assert!(s.run_checks().iter().any(|r| !r.passed));
    }
}
