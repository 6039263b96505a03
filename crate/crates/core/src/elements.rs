//! Unitaries and filters that the experimental apparatuses are built from.
//!
//! Matrix conventions:
//! - beam splitter: transmission 1/√2 on the diagonal, reflection i/√2 off it;
//! - circular basis: |L⟩ = (|x⟩ + i|y⟩)/√2, |R⟩ = (|x⟩ − i|y⟩)/√2;
//! - quarter-wave plate at fast axis θ: `g · R(θ) · diag(1, −i) · R(−θ)` with
//!   `g = e^{iπ/4}`, R the counter-clockwise rotation.
//!
//! For two-dimensional polarization dofs the first label is the 0° axis and
//! the second the 90° axis, whatever they are called (`x y`, `h v`).

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qstate::{dof_position, Dof, StateVector, ALGEBRA_TOL, ZERO_PROBABILITY};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Sign of `i` in the circular basis vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Handedness {
    /// |L⟩ = (|0°⟩ + i|90°⟩)/√2.
    Standard,
    /// |L⟩ = (|0°⟩ − i|90°⟩)/√2.
    Mirrored,
}

/// Phase picked up by the slow axis of a quarter-wave plate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retardance {
    /// diag(1, −i) in the plate frame.
    Lagging,
    /// diag(1, +i) in the plate frame.
    Leading,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conventions {
    pub handedness: Handedness,
    pub retardance: Retardance,
    pub qwp_phase: Complex64,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            handedness: Handedness::Standard,
            retardance: Retardance::Lagging,
            qwp_phase: Complex64::from_polar(1.0, FRAC_PI_4),
        }
    }
}

impl Conventions {
    /// Circular basis vectors (|L⟩, |R⟩) over a two-label polarization dof.
    pub fn circular_vectors(&self) -> [Vec<Complex64>; 2] {
        let s = FRAC_1_SQRT_2;
        let sign = match self.handedness {
            Handedness::Standard => 1.0,
            Handedness::Mirrored => -1.0,
        };
        [vec![c(s, 0.), c(0., sign * s)], vec![c(s, 0.), c(0., -sign * s)]]
    }

    /// Every combination of handedness, retardance sign and a quarter-turn
    /// global phase.
    pub fn variants() -> Vec<Conventions> {
        let mut out = Vec::new();
        for handedness in [Handedness::Standard, Handedness::Mirrored] {
            for retardance in [Retardance::Lagging, Retardance::Leading] {
                for k in 0..4 {
                    out.push(Conventions {
                        handedness,
                        retardance,
                        qwp_phase: Complex64::from_polar(1.0, FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2),
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Unitary,
    Filter,
}

/// Restricts an element to the branch where `dof = label`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub dof: String,
    pub label: String,
}

impl Condition {
    pub fn new(dof: impl Into<String>, label: impl Into<String>) -> Self {
        Condition { dof: dof.into(), label: label.into() }
    }
}

/// Result of pushing a state through elements.
#[derive(Clone, Debug, PartialEq)]
pub enum Evolution {
    Survived(StateVector),
    /// Every branch was filtered out; carries weight 0.
    AllBlocked,
}

impl Evolution {
    pub fn weight(&self) -> f64 {
        match self {
            Evolution::Survived(s) => s.weight(),
            Evolution::AllBlocked => 0.0,
        }
    }

    pub fn state(&self) -> Option<&StateVector> {
        match self {
            Evolution::Survived(s) => Some(s),
            Evolution::AllBlocked => None,
        }
    }

    pub fn into_state(self) -> Result<StateVector> {
        match self {
            Evolution::Survived(s) => Ok(s),
            Evolution::AllBlocked => Err(Error::Validation("all branches were blocked".into())),
        }
    }
}

/// Outcome of a filter: normalized pass and reject branches (weights carry
/// their probabilities) and the pass probability.
#[derive(Clone, Debug)]
pub struct FilterSplit {
    pub passed: Option<StateVector>,
    pub rejected: Option<StateVector>,
    pub pass_probability: f64,
}

/// A concrete element action on named dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementOp {
    kind: ElementKind,
    targets: Vec<String>,
    matrix: Matrix,
    condition: Option<Condition>,
}

impl ElementOp {
    fn new(kind: ElementKind, targets: Vec<String>, matrix: Matrix) -> Result<Self> {
        let op = ElementOp { kind, targets, matrix, condition: None };
        match kind {
            ElementKind::Unitary if !op.matrix.is_unitary(ALGEBRA_TOL) => Err(Error::Validation(format!(
                "element on {:?} is not unitary",
                op.targets
            ))),
            ElementKind::Filter if op.matrix.projector_defect() >= ALGEBRA_TOL => Err(
                Error::Validation(format!("filter on {:?} is not a projector", op.targets)),
            ),
            _ => Ok(op),
        }
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn condition(&self) -> Option<&Condition> {
        self.condition.as_ref()
    }

    /// Restricts the element to one branch of another dof.
    pub fn when(mut self, space: &[Dof], condition: Condition) -> Result<Self> {
        let d = &space[dof_position(space, &condition.dof)?];
        d.label_index(&condition.label)?;
        if self.targets.contains(&condition.dof) {
            return Err(Error::Validation(format!(
                "element cannot be conditioned on its own target '{}'",
                condition.dof
            )));
        }
        self.condition = Some(condition);
        Ok(self)
    }

    pub fn adjoint(&self) -> ElementOp {
        ElementOp {
            kind: self.kind,
            targets: self.targets.clone(),
            matrix: self.matrix.adjoint(),
            condition: self.condition.clone(),
        }
    }

    fn locate(&self, s: &StateVector) -> Result<(Vec<usize>, Option<(usize, usize)>)> {
        let space = s.space();
        let targets = self
            .targets
            .iter()
            .map(|t| dof_position(space, t))
            .collect::<Result<Vec<_>>>()?;
        let dim: usize = targets.iter().map(|&t| space[t].dim()).product();
        if dim != self.matrix.dim() {
            return Err(Error::Validation(format!(
                "element on {:?} has a {}-dimensional matrix, targets span {dim}",
                self.targets,
                self.matrix.dim()
            )));
        }
        let cond = match &self.condition {
            Some(cnd) => {
                let p = dof_position(space, &cnd.dof)?;
                Some((p, space[p].label_index(&cnd.label)?))
            }
            None => None,
        };
        Ok((targets, cond))
    }

    fn unitary_apply(&self, s: &StateVector) -> Result<StateVector> {
        let (targets, cond) = self.locate(s)?;
        let amps = s.mapped(&targets, &self.matrix, cond);
        Ok(StateVector::from_raw(s.space().to_vec(), amps, s.weight()))
    }

    /// Splits a state at a filter. For unitaries everything passes.
    pub fn split(&self, s: &StateVector) -> Result<FilterSplit> {
        if self.kind == ElementKind::Unitary {
            return Ok(FilterSplit {
                passed: Some(self.unitary_apply(s)?),
                rejected: None,
                pass_probability: 1.0,
            });
        }
        let (targets, cond) = self.locate(s)?;
        let kept = s.mapped(&targets, &self.matrix, cond);
        let removed: Vec<Complex64> = s.amplitudes().iter().zip(&kept).map(|(a, k)| a - k).collect();
        let p: f64 = kept.iter().map(Complex64::norm_sqr).sum::<f64>().min(1.0);
        let q: f64 = removed.iter().map(Complex64::norm_sqr).sum::<f64>().min(1.0);
        let branch = |amps: Vec<Complex64>, prob: f64| {
            (prob >= ZERO_PROBABILITY).then(|| {
                let n = prob.sqrt();
                StateVector::from_raw(
                    s.space().to_vec(),
                    amps.into_iter().map(|a| a / n).collect(),
                    s.weight() * prob,
                )
            })
        };
        Ok(FilterSplit {
            passed: branch(kept, p),
            rejected: branch(removed, q),
            pass_probability: p,
        })
    }

    /// Applies the element; filters renormalize and fold the pass
    /// probability into the weight.
    pub fn apply(&self, s: &StateVector) -> Result<Evolution> {
        let split = self.split(s)?;
        Ok(match split.passed {
            Some(st) if st.weight() >= ZERO_PROBABILITY => Evolution::Survived(st),
            _ => Evolution::AllBlocked,
        })
    }
}

fn find<'a>(space: &'a [Dof], name: &str) -> Result<&'a Dof> {
    Ok(&space[dof_position(space, name)?])
}

fn two_dim<'a>(space: &'a [Dof], name: &str, what: &str) -> Result<&'a Dof> {
    let d = find(space, name)?;
    if d.dim() != 2 {
        return Err(Error::Validation(format!("{what} needs a two-label dof, '{name}' has {}", d.dim())));
    }
    Ok(d)
}

pub fn beam_splitter(space: &[Dof], dof: &str, port_a: &str, port_b: &str) -> Result<ElementOp> {
    let d = find(space, dof)?;
    let (a, b) = (d.label_index(port_a)?, d.label_index(port_b)?);
    if a == b {
        return Err(Error::Validation("beam splitter ports must differ".into()));
    }
    let s = FRAC_1_SQRT_2;
    let mut m = Matrix::identity(d.dim());
    m[(a, a)] = c(s, 0.);
    m[(b, b)] = c(s, 0.);
    m[(a, b)] = c(0., s);
    m[(b, a)] = c(0., s);
    ElementOp::new(ElementKind::Unitary, vec![dof.into()], m)
}

/// Multiplies the `label` amplitude by e^{iφ}.
pub fn phase_shifter(space: &[Dof], dof: &str, label: &str, phi: f64) -> Result<ElementOp> {
    let d = find(space, dof)?;
    let k = d.label_index(label)?;
    let mut m = Matrix::identity(d.dim());
    m[(k, k)] = Complex64::from_polar(1.0, phi);
    ElementOp::new(ElementKind::Unitary, vec![dof.into()], m)
}

fn analyzer_matrix(space: &[Dof], pol: &str, path: &str) -> Result<Matrix> {
    let p = find(space, pol)?;
    let ch = find(space, path)?;
    if p.dim() != 2 || ch.dim() != 2 {
        return Err(Error::Validation("analyzer needs two-label polarization and channel dofs".into()));
    }
    let (v, h) = (p.label_index("v")?, p.label_index("h")?);
    let (u, l) = (ch.label_index("U")?, ch.label_index("L")?);
    // v keeps its channel; h swaps U and L, so a photon entering in U leaves
    // tagged v→U, h→L
    let idx = |pi: usize, ci: usize| pi * 2 + ci;
    let mut m = Matrix::zeros(4);
    m[(idx(v, u), idx(v, u))] = c(1., 0.);
    m[(idx(v, l), idx(v, l))] = c(1., 0.);
    m[(idx(h, l), idx(h, u))] = c(1., 0.);
    m[(idx(h, u), idx(h, l))] = c(1., 0.);
    Ok(m)
}

/// Tags v with channel U and h with channel L for a photon entering in U.
pub fn analyzer(space: &[Dof], pol: &str, path: &str) -> Result<ElementOp> {
    ElementOp::new(
        ElementKind::Unitary,
        vec![pol.into(), path.into()],
        analyzer_matrix(space, pol, path)?,
    )
}

/// Removes the U/L tags again.
pub fn inverse_analyzer(space: &[Dof], pol: &str, path: &str) -> Result<ElementOp> {
    Ok(analyzer(space, pol, path)?.adjoint())
}

fn rotation(theta: f64) -> Matrix {
    let (s, co) = theta.sin_cos();
    Matrix::from_rows(&[vec![c(co, 0.), c(-s, 0.)], vec![c(s, 0.), c(co, 0.)]])
}

pub fn quarter_wave_plate_matrix(fast_axis: f64, conventions: &Conventions) -> Matrix {
    let slow = match conventions.retardance {
        Retardance::Lagging => c(0., -1.),
        Retardance::Leading => c(0., 1.),
    };
    let core = Matrix::diagonal(&[c(1., 0.), slow]);
    (&(&rotation(fast_axis) * &core) * &rotation(-fast_axis)).scale(conventions.qwp_phase)
}

pub fn quarter_wave_plate(
    space: &[Dof],
    pol: &str,
    fast_axis: f64,
    conventions: &Conventions,
) -> Result<ElementOp> {
    two_dim(space, pol, "quarter-wave plate")?;
    ElementOp::new(
        ElementKind::Unitary,
        vec![pol.into()],
        quarter_wave_plate_matrix(fast_axis, conventions),
    )
}

/// Filter passing linear polarization at `angle` from the first label's axis.
pub fn linear_polarizer(space: &[Dof], pol: &str, angle: f64) -> Result<ElementOp> {
    two_dim(space, pol, "polarizer")?;
    let (s, co) = angle.sin_cos();
    let v = [c(co, 0.), c(s, 0.)];
    ElementOp::new(ElementKind::Filter, vec![pol.into()], Matrix::outer(&v, &v))
}

/// Filter removing the `label` branch.
pub fn blocker(space: &[Dof], dof: &str, label: &str) -> Result<ElementOp> {
    let d = find(space, dof)?;
    let k = d.label_index(label)?;
    let mut m = Matrix::identity(d.dim());
    m[(k, k)] = c(0., 0.);
    ElementOp::new(ElementKind::Filter, vec![dof.into()], m)
}

/// Sends spin label k to path label k for a particle entering on path label 0
/// (cyclic shift of the path index by the spin index).
pub fn stern_gerlach(space: &[Dof], spin: &str, path: &str) -> Result<ElementOp> {
    let sd = find(space, spin)?;
    let pd = find(space, path)?;
    if sd.dim() != 3 || pd.dim() != 3 {
        return Err(Error::Validation(format!(
            "Stern-Gerlach needs three-label spin and path dofs, got {} and {}",
            sd.dim(),
            pd.dim()
        )));
    }
    let mut m = Matrix::zeros(9);
    for k in 0..3 {
        for j in 0..3 {
            m[(k * 3 + (j + k) % 3, k * 3 + j)] = c(1., 0.);
        }
    }
    ElementOp::new(ElementKind::Unitary, vec![spin.into(), path.into()], m)
}

pub fn inverse_stern_gerlach(space: &[Dof], spin: &str, path: &str) -> Result<ElementOp> {
    Ok(stern_gerlach(space, spin, path)?.adjoint())
}

/// Maps the symmetric combination of the two path labels onto `into`.
pub fn recombiner(space: &[Dof], dof: &str, into: &str) -> Result<ElementOp> {
    let d = two_dim(space, dof, "recombiner")?;
    let k = d.label_index(into)?;
    let s = FRAC_1_SQRT_2;
    let mut m = Matrix::zeros(2);
    m[(k, 0)] = c(s, 0.);
    m[(k, 1)] = c(s, 0.);
    m[(1 - k, 0)] = c(s, 0.);
    m[(1 - k, 1)] = c(-s, 0.);
    ElementOp::new(ElementKind::Unitary, vec![dof.into()], m)
}

/// Two-slit screen: the first label goes to the equal superposition of both.
pub fn split(space: &[Dof], dof: &str) -> Result<ElementOp> {
    let d = two_dim(space, dof, "split")?;
    recombiner(space, dof, &d.labels()[0].clone())
}

/// An angle written in an experiment: literal degrees or a named parameter
/// (radians).
#[derive(Clone, Debug, PartialEq)]
pub enum Angle {
    Degrees(f64),
    Param(String),
}

impl Angle {
    pub fn resolve(&self, params: &BTreeMap<String, f64>) -> Result<f64> {
        match self {
            Angle::Degrees(d) => Ok(d.to_radians()),
            Angle::Param(p) => params
                .get(p)
                .copied()
                .ok_or_else(|| Error::Validation(format!("unknown parameter '{p}'"))),
        }
    }
}

/// Description of an element as it appears in a circuit, before parameters
/// are bound. Each variant corresponds to one keyword of the description
/// language.
#[derive(Clone, Debug, PartialEq)]
pub enum Element {
    BeamSplitter { dof: String, port_a: String, port_b: String },
    PhaseShifter { dof: String, label: String, phi: Angle },
    Analyzer { pol: String, path: String },
    InverseAnalyzer { pol: String, path: String },
    QuarterWavePlate { pol: String, fast: Angle },
    Polarizer { pol: String, angle: Angle },
    Blocker { dof: String, label: String },
    SternGerlach { spin: String, path: String },
    InverseSternGerlach { spin: String, path: String },
    Recombiner { dof: String, into: String },
    Split { dof: String },
}

impl Element {
    pub fn keyword(&self) -> &'static str {
        match self {
            Element::BeamSplitter { .. } => "bs",
            Element::PhaseShifter { .. } => "phase",
            Element::Analyzer { .. } => "analyzer",
            Element::InverseAnalyzer { .. } => "analyzer_inv",
            Element::QuarterWavePlate { .. } => "qwp",
            Element::Polarizer { .. } => "pol",
            Element::Blocker { .. } => "block",
            Element::SternGerlach { .. } => "sg",
            Element::InverseSternGerlach { .. } => "sg_inv",
            Element::Recombiner { .. } => "recombine",
            Element::Split { .. } => "split",
        }
    }

    pub fn is_filter(&self) -> bool {
        matches!(self, Element::Polarizer { .. } | Element::Blocker { .. })
    }

    /// Dofs the element acts on.
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Element::BeamSplitter { dof, .. }
            | Element::PhaseShifter { dof, .. }
            | Element::Blocker { dof, .. }
            | Element::Recombiner { dof, .. }
            | Element::Split { dof } => vec![dof],
            Element::QuarterWavePlate { pol, .. } | Element::Polarizer { pol, .. } => vec![pol],
            Element::Analyzer { pol, path } | Element::InverseAnalyzer { pol, path } => vec![pol, path],
            Element::SternGerlach { spin, path } | Element::InverseSternGerlach { spin, path } => {
                vec![spin, path]
            }
        }
    }

    pub fn params_used(&self) -> Vec<&str> {
        match self {
            Element::PhaseShifter { phi: Angle::Param(p), .. }
            | Element::QuarterWavePlate { fast: Angle::Param(p), .. }
            | Element::Polarizer { angle: Angle::Param(p), .. } => vec![p],
            _ => vec![],
        }
    }

    pub fn build(
        &self,
        space: &[Dof],
        params: &BTreeMap<String, f64>,
        conventions: &Conventions,
    ) -> Result<ElementOp> {
        match self {
            Element::BeamSplitter { dof, port_a, port_b } => beam_splitter(space, dof, port_a, port_b),
            Element::PhaseShifter { dof, label, phi } => phase_shifter(space, dof, label, phi.resolve(params)?),
            Element::Analyzer { pol, path } => analyzer(space, pol, path),
            Element::InverseAnalyzer { pol, path } => inverse_analyzer(space, pol, path),
            Element::QuarterWavePlate { pol, fast } => {
                quarter_wave_plate(space, pol, fast.resolve(params)?, conventions)
            }
            Element::Polarizer { pol, angle } => linear_polarizer(space, pol, angle.resolve(params)?),
            Element::Blocker { dof, label } => blocker(space, dof, label),
            Element::SternGerlach { spin, path } => stern_gerlach(space, spin, path),
            Element::InverseSternGerlach { spin, path } => inverse_stern_gerlach(space, spin, path),
            Element::Recombiner { dof, into } => recombiner(space, dof, into),
            Element::Split { dof } => split(space, dof),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::global_phase_equivalent;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn dof(name: &str, labels: &[&str]) -> Dof {
        Dof::new(name, labels).unwrap()
    }

    fn state(space: &[Dof], terms: &[(Complex64, &[&str])]) -> StateVector {
        let terms: Vec<(Complex64, Vec<&str>)> = terms.iter().map(|(a, l)| (*a, l.to_vec())).collect();
        StateVector::from_terms(space.to_vec(), &terms).unwrap()
    }

    fn survived(e: &ElementOp, s: &StateVector) -> StateVector {
        e.apply(s).unwrap().into_state().unwrap()
    }

    #[test]
    fn beam_splitter_action() {
        let sp = [dof("arm", &["T1", "R1"])];
        let bs = beam_splitter(&sp, "arm", "T1", "R1").unwrap();
        let out = survived(&bs, &state(&sp, &[(c(1., 0.), &["T1"])]));
        let expect = state(&sp, &[(c(1., 0.), &["T1"]), (c(0., 1.), &["R1"])]);
        assert!((out.inner(&expect).unwrap() - c(1., 0.)).norm() < 1e-12);
        let twice = survived(&bs, &out);
        assert!((twice.amplitude(&["R1"]).unwrap() - c(0., 1.)).norm() < 1e-12);
        assert!(bs.matrix().unitarity_defect() < 1e-12);
        assert!(beam_splitter(&sp, "arm", "T1", "X").is_err());
    }

    #[test]
    fn phase_shifter_action() {
        let sp = [dof("arm", &["T1", "R1"])];
        assert!(phase_shifter(&sp, "arm", "T1", 0.0).unwrap().matrix().max_abs_diff(&Matrix::identity(2)) < 1e-15);
        let s = state(&sp, &[(c(1., 0.), &["T1"]), (c(1., 0.), &["R1"])]);
        let out = survived(&phase_shifter(&sp, "arm", "T1", PI).unwrap(), &s);
        let expect = state(&sp, &[(c(-1., 0.), &["T1"]), (c(1., 0.), &["R1"])]);
        assert!(global_phase_equivalent(&out, &expect, 1e-12));
    }

    #[test]
    fn mach_zehnder_closed_form() {
        let sp = [dof("arm", &["T1", "R1"])];
        let bs = beam_splitter(&sp, "arm", "T1", "R1").unwrap();
        for phi in [0.0, PI / 2.0, PI] {
            let ps = phase_shifter(&sp, "arm", "T1", phi).unwrap();
            let s = state(&sp, &[(c(1., 0.), &["T1"])]);
            let out = survived(&bs, &survived(&ps, &survived(&bs, &s)));
            let p_t = out.amplitude(&["T1"]).unwrap().norm_sqr();
            let p_r = out.amplitude(&["R1"]).unwrap().norm_sqr();
            assert!((p_t - (phi / 2.0).sin().powi(2)).abs() < 1e-12);
            assert!((p_r - (phi / 2.0).cos().powi(2)).abs() < 1e-12);
        }
    }

    fn analyzer_space() -> Vec<Dof> {
        vec![dof("pol", &["h", "v"]), dof("chan", &["U", "L"])]
    }

    #[test]
    fn analyzer_tags_polarization_with_channel() {
        let sp = analyzer_space();
        let input = state(&sp, &[(c(1., 0.), &["h", "U"]), (c(1., 0.), &["v", "U"])]);
        let tagged = survived(&analyzer(&sp, "pol", "chan").unwrap(), &input);
        let expect = state(&sp, &[(c(1., 0.), &["v", "U"]), (c(1., 0.), &["h", "L"])]);
        assert!(global_phase_equivalent(&tagged, &expect, 1e-12));
        let back = survived(&inverse_analyzer(&sp, "pol", "chan").unwrap(), &tagged);
        assert!(global_phase_equivalent(&back, &input, 1e-12));

        let v = state(&sp, &[(c(1., 0.), &["v", "U"])]);
        let out = survived(&analyzer(&sp, "pol", "chan").unwrap(), &v);
        assert!((out.amplitude(&["v", "U"]).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analyzer_requires_vh_and_ul() {
        let sp = vec![dof("pol", &["x", "y"]), dof("chan", &["U", "L"])];
        assert!(analyzer(&sp, "pol", "chan").is_err());
    }

    #[test]
    fn blocking_lower_channel_keeps_vertical() {
        let sp = analyzer_space();
        let input = state(&sp, &[(c(1., 0.), &["h", "U"]), (c(1., 0.), &["v", "U"])]);
        let tagged = survived(&analyzer(&sp, "pol", "chan").unwrap(), &input);
        let out = survived(&blocker(&sp, "chan", "L").unwrap(), &tagged);
        assert!((out.amplitude(&["v", "U"]).unwrap().norm() - 1.0).abs() < 1e-12);
        assert!((out.weight() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blocking_an_empty_branch_changes_nothing() {
        let sp = analyzer_space();
        let v = state(&sp, &[(c(1., 0.), &["v", "U"])]);
        let out = survived(&blocker(&sp, "chan", "L").unwrap(), &v);
        assert_eq!(out, v);
        let all = blocker(&sp, "chan", "U").unwrap();
        assert_eq!(all.apply(&v).unwrap(), Evolution::AllBlocked);
    }

    #[test]
    fn polarizer_examples() {
        let sp = [dof("pol", &["h", "v"])];
        let p45 = linear_polarizer(&sp, "pol", PI / 4.0).unwrap();
        let d45 = state(&sp, &[(c(1., 0.), &["h"]), (c(1., 0.), &["v"])]);
        let out = survived(&p45, &d45);
        assert!(global_phase_equivalent(&out, &d45, 1e-12));
        assert!((out.weight() - 1.0).abs() < 1e-12);
        let out = survived(&p45, &state(&sp, &[(c(1., 0.), &["h"])]));
        assert!(global_phase_equivalent(&out, &d45, 1e-12));
        assert!((out.weight() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn marked_state_through_diagonal_polarizer() {
        let sp = vec![dof("slit", &["s1", "s2"]), dof("pol", &["h", "v"])];
        let marked = state(&sp, &[(c(1., 0.), &["s1", "h"]), (c(1., 0.), &["s2", "v"])]);
        let out = survived(&linear_polarizer(&sp, "pol", PI / 4.0).unwrap(), &marked);
        let expect = state(
            &sp,
            &[
                (c(1., 0.), &["s1", "h"]),
                (c(1., 0.), &["s1", "v"]),
                (c(1., 0.), &["s2", "h"]),
                (c(1., 0.), &["s2", "v"]),
            ],
        );
        assert!(global_phase_equivalent(&out, &expect, 1e-12));
        assert!((out.weight() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qwp_fast_axis_eigenvector_and_double_application() {
        let conv = Conventions::default();
        let sp = [dof("pol", &["x", "y"])];
        let q = quarter_wave_plate(&sp, "pol", PI / 4.0, &conv).unwrap();
        let fast = state(&sp, &[(c(1., 0.), &["x"]), (c(1., 0.), &["y"])]);
        assert!(global_phase_equivalent(&survived(&q, &fast), &fast, 1e-12));

        // two plates at θ act as diag(1, −1) in the θ frame
        let theta = 0.3;
        let m = quarter_wave_plate_matrix(theta, &conv);
        let hwp = &(&rotation(theta) * &Matrix::diagonal(&[c(1., 0.), c(-1., 0.)])) * &rotation(-theta);
        let sq = &m * &m;
        let phase = sq[(0, 0)] / hwp[(0, 0)];
        assert!(sq.max_abs_diff(&hwp.scale(phase)) < 1e-12);
    }

    #[test]
    fn conditioned_element_leaves_other_branches() {
        let conv = Conventions::default();
        let sp = vec![dof("path", &["s1", "s2"]), dof("pol", &["x", "y"])];
        let q = quarter_wave_plate(&sp, "pol", PI / 4.0, &conv)
            .unwrap()
            .when(&sp, Condition::new("path", "s1"))
            .unwrap();
        let other = state(&sp, &[(c(1., 0.), &["s2", "x"])]);
        assert_eq!(survived(&q, &other), other);
        let hit = state(&sp, &[(c(1., 0.), &["s1", "x"])]);
        assert_ne!(survived(&q, &hit), hit);
        assert!(q.clone().when(&sp, Condition::new("pol", "x")).is_err());
    }

    fn spin_space() -> Vec<Dof> {
        vec![dof("spin", &["+S", "0S", "-S"]), dof("beam", &["up", "mid", "down"])]
    }

    #[test]
    fn stern_gerlach_tags_and_loop_restores() {
        let sp = spin_space();
        let sg = stern_gerlach(&sp, "spin", "beam").unwrap();
        let plus = state(&sp, &[(c(1., 0.), &["+S", "up"])]);
        assert_eq!(survived(&sg, &plus).amplitude(&["+S", "up"]).unwrap(), c(1., 0.));
        let minus = state(&sp, &[(c(1., 0.), &["-S", "up"])]);
        assert_eq!(survived(&sg, &minus).amplitude(&["-S", "down"]).unwrap(), c(1., 0.));
        let composed = &inverse_stern_gerlach(&sp, "spin", "beam").unwrap().matrix().clone() * sg.matrix();
        assert!(composed.max_abs_diff(&Matrix::identity(9)) < 1e-12);
        let bad = vec![dof("spin", &["a", "b"]), dof("beam", &["up", "mid", "down"])];
        assert!(stern_gerlach(&bad, "spin", "beam").is_err());
    }

    #[test]
    fn recombiner_routes_symmetric_combination() {
        let sp = [dof("arm", &["T1", "R1"])];
        let r = recombiner(&sp, "arm", "R1").unwrap();
        let sym = state(&sp, &[(c(1., 0.), &["T1"]), (c(1., 0.), &["R1"])]);
        assert!((survived(&r, &sym).amplitude(&["R1"]).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
        let anti = state(&sp, &[(c(1., 0.), &["T1"]), (c(-1., 0.), &["R1"])]);
        assert!(survived(&r, &anti).amplitude(&["R1"]).unwrap().norm_sqr() < 1e-12);
        assert!(r.matrix().unitarity_defect() < 1e-12);
    }

    #[test]
    fn every_unitary_element_is_unitary() {
        let conv = Conventions::default();
        let sp = vec![
            dof("arm", &["T1", "R1"]),
            dof("pol", &["h", "v"]),
            dof("chan", &["U", "L"]),
            dof("spin", &["+S", "0S", "-S"]),
            dof("beam", &["up", "mid", "down"]),
        ];
        let ops = [
            beam_splitter(&sp, "arm", "T1", "R1").unwrap(),
            phase_shifter(&sp, "arm", "R1", 1.234).unwrap(),
            analyzer(&sp, "pol", "chan").unwrap(),
            inverse_analyzer(&sp, "pol", "chan").unwrap(),
            quarter_wave_plate(&sp, "pol", PI / 4.0, &conv).unwrap(),
            quarter_wave_plate(&sp, "pol", -PI / 4.0, &conv).unwrap(),
            stern_gerlach(&sp, "spin", "beam").unwrap(),
            inverse_stern_gerlach(&sp, "spin", "beam").unwrap(),
            recombiner(&sp, "arm", "T1").unwrap(),
            split(&sp, "arm").unwrap(),
        ];
        for op in &ops {
            assert_eq!(op.kind(), ElementKind::Unitary);
            assert!(op.matrix().unitarity_defect() < 1e-12);
        }
        for f in [linear_polarizer(&sp, "pol", 0.7).unwrap(), blocker(&sp, "beam", "mid").unwrap()] {
            assert_eq!(f.kind(), ElementKind::Filter);
            assert!(f.matrix().projector_defect() < 1e-12);
        }
        let a = analyzer(&sp, "pol", "chan").unwrap();
        let ai = inverse_analyzer(&sp, "pol", "chan").unwrap();
        assert!((ai.matrix() * a.matrix()).max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    proptest! {
        #[test]
        fn analyzer_loop_restores_any_polarization(
            a in -1.0f64..1.0, b in -1.0f64..1.0, cc in -1.0f64..1.0, d in -1.0f64..1.0,
        ) {
            prop_assume!(a.abs() + b.abs() + cc.abs() + d.abs() > 1e-3);
            let sp = analyzer_space();
            let input = state(&sp, &[(c(a, b), &["h", "U"]), (c(cc, d), &["v", "U"])]);
            let tagged = survived(&analyzer(&sp, "pol", "chan").unwrap(), &input);
            let out = survived(&inverse_analyzer(&sp, "pol", "chan").unwrap(), &tagged);
            prop_assert!(global_phase_equivalent(&out, &input, 1e-10));
        }

        #[test]
        fn element_application_preserves_norm(theta in -3.2f64..3.2, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let sp = [dof("pol", &["x", "y"])];
            let s = state(&sp, &[(c(1., 0.), &["x"]), (c(re, im), &["y"])]);
            let q = quarter_wave_plate(&sp, "pol", theta, &Conventions::default()).unwrap();
            prop_assert!((survived(&q, &s).norm_sqr() - 1.0).abs() < 1e-12);
            if let Evolution::Survived(out) = linear_polarizer(&sp, "pol", theta).unwrap().apply(&s).unwrap() {
                prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
                prop_assert!(out.weight() <= 1.0 + 1e-12);
            }
        }
    }
}
