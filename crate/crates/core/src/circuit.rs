//! Experiments as ordered stages: elements, choice points and detectors over a
//! source state.
//!
//! Detection branches the state over outcomes, so detectors can sit anywhere
//! in the stage list and later stages act on each post-measurement branch.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::elements::{Condition, Conventions, Element, ElementKind, ElementOp, Evolution};
use crate::error::{Error, Result};
use crate::measure::{total_variation, Basis, Column, OutcomeDistribution};
use crate::qstate::{dof_position, Dof, StateVector, ZERO_PROBABILITY};
use crate::screen::{ScreenPovm, SlitGeometry};

/// Outcome label of a column whose particle was removed by a filter.
pub const ABSORBED: &str = "absorbed";
pub const CLICK: &str = "click";
pub const NO_CLICK: &str = "none";

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub id: String,
    pub element: Element,
    pub condition: Option<Condition>,
}

/// What a detector reads out.
#[derive(Clone, Debug, PartialEq)]
pub enum Measured {
    /// Each dof projectively, in its basis.
    Dofs(Vec<(String, Basis)>),
    /// A counter that can only receive the `label` branch of `dof`; outcomes
    /// `click` and `none`.
    Placement { dof: String, label: String },
    /// Binned far-field screen behind a two-label path dof.
    Screen { dof: String, geometry: SlitGeometry },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub name: String,
    pub measured: Measured,
    /// Delay of this detector's events relative to the shot epoch.
    pub time_offset_ns: u64,
}

impl Detector {
    pub fn dofs(name: &str, dofs: &[(&str, Basis)]) -> Self {
        Detector {
            name: name.into(),
            measured: Measured::Dofs(dofs.iter().map(|(d, b)| (d.to_string(), *b)).collect()),
            time_offset_ns: 0,
        }
    }

    pub fn placement(name: &str, dof: &str, label: &str) -> Self {
        Detector {
            name: name.into(),
            measured: Measured::Placement { dof: dof.into(), label: label.into() },
            time_offset_ns: 0,
        }
    }

    pub fn screen(name: &str, dof: &str, geometry: SlitGeometry) -> Self {
        Detector { name: name.into(), measured: Measured::Screen { dof: dof.into(), geometry }, time_offset_ns: 0 }
    }

    pub fn at(mut self, time_offset_ns: u64) -> Self {
        self.time_offset_ns = time_offset_ns;
        self
    }

    pub fn measured_dofs(&self) -> Vec<&str> {
        match &self.measured {
            Measured::Dofs(v) => v.iter().map(|(d, _)| d.as_str()).collect(),
            Measured::Placement { dof, .. } | Measured::Screen { dof, .. } => vec![dof],
        }
    }

    fn column_key(&self, dof: &str) -> String {
        match &self.measured {
            Measured::Dofs(v) if v.len() > 1 => format!("{}.{dof}", self.name),
            _ => self.name.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alternative {
    pub name: String,
    pub steps: Vec<Step>,
}

impl Alternative {
    pub fn new(name: &str) -> Self {
        Alternative { name: name.into(), steps: Vec::new() }
    }

    pub fn stage(mut self, id: &str, element: Element) -> Self {
        self.steps.push(Step::Stage(Stage { id: id.into(), element, condition: None }));
        self
    }

    pub fn stage_when(mut self, id: &str, element: Element, condition: Condition) -> Self {
        self.steps.push(Step::Stage(Stage { id: id.into(), element, condition: Some(condition) }));
        self
    }

    pub fn detect(mut self, detector: Detector) -> Self {
        self.steps.push(Step::Detect(detector));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Stage(Stage),
    Choice { id: String, alternatives: Vec<Alternative> },
    Detect(Detector),
}

/// A term of the source superposition, kept as written.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTerm {
    pub amplitude: Complex64,
    pub labels: Vec<(String, String)>,
}

/// Dofs carried by one physical particle. A filter that absorbs the
/// particle removes all of them from detection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Particle {
    pub name: String,
    pub dofs: Vec<String>,
}

/// Choice selections and parameter values (radians).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub choices: BTreeMap<String, String>,
    pub params: BTreeMap<String, f64>,
}

impl Settings {
    pub fn new() -> Self {
        Settings::default()
    }

    pub fn choose(mut self, choice: &str, alternative: &str) -> Self {
        self.choices.insert(choice.into(), alternative.into());
        self
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }
}

/// How filter rejections enter a joint distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Accounting {
    /// Rejected branches are dropped; total mass is the product of pass
    /// probabilities.
    #[default]
    PostSelected,
    /// Rejected branches are kept with the absorbed particle's columns
    /// reading `absorbed`; total mass is 1.
    Complete,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    name: String,
    space: Vec<Dof>,
    particles: Vec<Particle>,
    params: BTreeMap<String, f64>,
    source_terms: Vec<SourceTerm>,
    source: StateVector,
    steps: Vec<Step>,
    conventions: Conventions,
}

#[derive(Clone, Debug, Default)]
pub struct CircuitBuilder {
    name: String,
    dofs: Vec<(String, Vec<String>)>,
    particles: Vec<Particle>,
    params: Vec<(String, f64)>,
    source_terms: Vec<SourceTerm>,
    steps: Vec<Step>,
    conventions: Conventions,
}

impl CircuitBuilder {
    pub fn new(name: &str) -> Self {
        CircuitBuilder { name: name.into(), ..Default::default() }
    }

    pub fn dof(mut self, name: &str, labels: &[&str]) -> Self {
        self.dofs.push((name.into(), labels.iter().map(|l| l.to_string()).collect()));
        self
    }

    pub fn particle(mut self, name: &str, dofs: &[&str]) -> Self {
        self.particles.push(Particle { name: name.into(), dofs: dofs.iter().map(|d| d.to_string()).collect() });
        self
    }

    /// Declares a parameter with its default (radians).
    pub fn param(mut self, name: &str, default: f64) -> Self {
        self.params.push((name.into(), default));
        self
    }

    pub fn source_term(mut self, amplitude: Complex64, labels: &[(&str, &str)]) -> Self {
        self.source_terms.push(SourceTerm {
            amplitude,
            labels: labels.iter().map(|(d, l)| (d.to_string(), l.to_string())).collect(),
        });
        self
    }

    pub fn stage(mut self, id: &str, element: Element) -> Self {
        self.steps.push(Step::Stage(Stage { id: id.into(), element, condition: None }));
        self
    }

    pub fn stage_when(mut self, id: &str, element: Element, condition: Condition) -> Self {
        self.steps.push(Step::Stage(Stage { id: id.into(), element, condition: Some(condition) }));
        self
    }

    pub fn choice(mut self, id: &str, alternatives: Vec<Alternative>) -> Self {
        self.steps.push(Step::Choice { id: id.into(), alternatives });
        self
    }

    pub fn detect(mut self, detector: Detector) -> Self {
        self.steps.push(Step::Detect(detector));
        self
    }

    pub fn step(mut self, step: Step) -> Self {
        self.steps.push(step);
        self
    }

    pub fn conventions(mut self, conventions: Conventions) -> Self {
        self.conventions = conventions;
        self
    }

    pub fn build(self) -> Result<Circuit> {
        let space = self
            .dofs
            .iter()
            .map(|(n, l)| Dof::new(n.as_str(), l))
            .collect::<Result<Vec<_>>>()?;
        let mut names = BTreeSet::new();
        for d in &space {
            if !names.insert(d.name()) {
                return Err(Error::Validation(format!("dof '{}' declared twice", d.name())));
            }
        }
        let particles = resolve_particles(&space, self.particles)?;
        let mut params = BTreeMap::new();
        for (p, v) in self.params {
            if !v.is_finite() {
                return Err(Error::Validation(format!("parameter '{p}' is not finite")));
            }
            if params.insert(p.clone(), v).is_some() {
                return Err(Error::Validation(format!("parameter '{p}' declared twice")));
            }
        }
        let source = source_state(&space, &self.source_terms)?;
        let circuit = Circuit {
            name: self.name,
            space,
            particles,
            params,
            source_terms: self.source_terms,
            source,
            steps: self.steps,
            conventions: self.conventions,
        };
        circuit.validate_steps()?;
        Ok(circuit)
    }
}

fn resolve_particles(space: &[Dof], declared: Vec<Particle>) -> Result<Vec<Particle>> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut names = BTreeSet::new();
    for p in &declared {
        if !names.insert(p.name.as_str()) {
            return Err(Error::Validation(format!("particle '{}' declared twice", p.name)));
        }
        if p.dofs.is_empty() {
            return Err(Error::Validation(format!("particle '{}' carries no dofs", p.name)));
        }
        for d in &p.dofs {
            dof_position(space, d)?;
            if owner.insert(d, &p.name).is_some() {
                return Err(Error::Validation(format!("dof '{d}' belongs to two particles")));
            }
        }
    }
    let mut out = declared.clone();
    for d in space {
        if !owner.contains_key(d.name()) {
            if names.contains(d.name()) {
                return Err(Error::Validation(format!(
                    "particle '{}' clashes with the implicit particle of dof '{}'",
                    d.name(),
                    d.name()
                )));
            }
            out.push(Particle { name: d.name().into(), dofs: vec![d.name().into()] });
        }
    }
    Ok(out)
}

fn source_state(space: &[Dof], terms: &[SourceTerm]) -> Result<StateVector> {
    if terms.is_empty() {
        return Err(Error::Validation("source has no terms".into()));
    }
    let mut rows = Vec::new();
    for t in terms {
        let mut labels = vec![None; space.len()];
        for (d, l) in &t.labels {
            let p = dof_position(space, d)?;
            space[p].label_index(l)?;
            if labels[p].replace(l.as_str()).is_some() {
                return Err(Error::Validation(format!("source term sets dof '{d}' twice")));
            }
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Validation(format!("source term omits dof '{}'", space[i].name()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((t.amplitude, labels));
    }
    StateVector::from_terms(space.to_vec(), &rows)
}

/// One step of a circuit once choices are resolved.
enum Flat<'a> {
    Op { stage: &'a Stage, op: ElementOp },
    Detect(&'a Detector),
}

#[derive(Clone, Debug)]
struct Branch {
    state: StateVector,
    outcome: Vec<usize>,
    absorbed: BTreeSet<usize>,
}

impl Circuit {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &[Dof] {
        &self.space
    }

    pub fn source(&self) -> &StateVector {
        &self.source
    }

    pub fn source_terms(&self) -> &[SourceTerm] {
        &self.source_terms
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn conventions(&self) -> &Conventions {
        &self.conventions
    }

    pub fn with_conventions(&self, conventions: Conventions) -> Circuit {
        Circuit { conventions, ..self.clone() }
    }

    /// The same circuit with a different source state.
    pub fn with_source(&self, source: StateVector) -> Result<Circuit> {
        if source.space() != self.space.as_slice() {
            return Err(Error::Composition("source lives on a different space".into()));
        }
        let terms = source
            .iter()
            .filter(|(_, a)| a.norm() > 0.0)
            .map(|(labels, a)| SourceTerm {
                amplitude: a,
                labels: self.space.iter().zip(labels).map(|(d, l)| (d.name().into(), l.into())).collect(),
            })
            .collect();
        Ok(Circuit { source, source_terms: terms, ..self.clone() })
    }

    /// Particle declarations as written, without the implicit one-dof
    /// particles.
    pub fn declared_particles(&self) -> Vec<&Particle> {
        self.particles
            .iter()
            .filter(|p| !(p.dofs.len() == 1 && p.dofs[0] == p.name && self.has_dof(&p.name)))
            .collect()
    }

    fn has_dof(&self, name: &str) -> bool {
        self.space.iter().any(|d| d.name() == name)
    }

    fn particle_of(&self, dof: &str) -> usize {
        self.particles
            .iter()
            .position(|p| p.dofs.iter().any(|d| d == dof))
            .expect("every dof belongs to a particle")
    }

    /// Choice ids with their alternative names, in circuit order.
    pub fn choices(&self) -> Vec<(&str, Vec<&str>)> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Choice { id, alternatives } => {
                    Some((id.as_str(), alternatives.iter().map(|a| a.name.as_str()).collect()))
                }
                _ => None,
            })
            .collect()
    }

    /// Every detector in any alternative, in circuit order.
    pub fn detectors(&self) -> Vec<&Detector> {
        let mut out = Vec::new();
        visit(&self.steps, &mut |s| {
            if let Step::Detect(d) = s {
                out.push(d);
            }
        });
        out
    }

    pub fn detector(&self, name: &str) -> Result<&Detector> {
        self.detectors()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Validation(format!("no detector named '{name}'")))
    }

    fn stages(&self) -> Vec<&Stage> {
        let mut out = Vec::new();
        visit(&self.steps, &mut |s| {
            if let Step::Stage(st) = s {
                out.push(st);
            }
        });
        out
    }

    fn validate_steps(&self) -> Result<()> {
        let mut stage_ids = BTreeSet::new();
        let mut choice_ids = BTreeSet::new();
        let mut detector_names = BTreeSet::new();
        for step in &self.steps {
            if let Step::Choice { id, alternatives } = step {
                if !choice_ids.insert(id.as_str()) {
                    return Err(Error::Validation(format!("choice '{id}' declared twice")));
                }
                if alternatives.is_empty() {
                    return Err(Error::Validation(format!("choice '{id}' has no alternatives")));
                }
                let mut alt_names = BTreeSet::new();
                for a in alternatives {
                    if !alt_names.insert(a.name.as_str()) {
                        return Err(Error::Validation(format!("choice '{id}' repeats alternative '{}'", a.name)));
                    }
                    if a.steps.iter().any(|s| matches!(s, Step::Choice { .. })) {
                        return Err(Error::Validation(format!("choice '{id}' nests another choice")));
                    }
                }
            }
        }
        for st in self.stages() {
            if !stage_ids.insert(st.id.as_str()) {
                return Err(Error::Validation(format!("stage id '{}' used twice", st.id)));
            }
            for p in st.element.params_used() {
                if !self.params.contains_key(p) {
                    return Err(Error::Validation(format!("stage '{}' uses undeclared parameter '{p}'", st.id)));
                }
            }
            self.build_op(st, &self.params)
                .map_err(|e| Error::Validation(format!("stage '{}': {}", st.id, strip(e))))?;
        }
        for d in self.detectors() {
            if !detector_names.insert(d.name.as_str()) {
                return Err(Error::Validation(format!("detector '{}' declared twice", d.name)));
            }
            self.validate_detector(d)
                .map_err(|e| Error::Validation(format!("detector '{}': {}", d.name, strip(e))))?;
        }
        Ok(())
    }

    fn validate_detector(&self, d: &Detector) -> Result<()> {
        let dofs = d.measured_dofs();
        if dofs.is_empty() {
            return Err(Error::Validation("measures nothing".into()));
        }
        let unique: BTreeSet<&str> = dofs.iter().copied().collect();
        if unique.len() != dofs.len() {
            return Err(Error::Validation("measures a dof twice".into()));
        }
        match &d.measured {
            Measured::Dofs(v) => {
                for (dof, basis) in v {
                    let p = dof_position(&self.space, dof)?;
                    basis.change(&self.space[p], &self.conventions)?;
                }
            }
            Measured::Placement { dof, label } => {
                self.space[dof_position(&self.space, dof)?].label_index(label)?;
            }
            Measured::Screen { dof, geometry } => {
                geometry.validate()?;
                let p = dof_position(&self.space, dof)?;
                if self.space[p].dim() != 2 {
                    return Err(Error::Validation(format!("screen needs a two-label dof, '{dof}' has more")));
                }
            }
        }
        Ok(())
    }

    fn build_op(&self, stage: &Stage, params: &BTreeMap<String, f64>) -> Result<ElementOp> {
        let op = stage.element.build(&self.space, params, &self.conventions)?;
        match &stage.condition {
            Some(c) => op.when(&self.space, c.clone()),
            None => Ok(op),
        }
    }

    /// Fills unset choices with their first alternative and unset parameters
    /// with their defaults; rejects unknown keys.
    pub fn resolve_settings(&self, settings: &Settings) -> Result<Settings> {
        let choices = self.choices();
        for (k, v) in &settings.choices {
            let (_, alts) = choices
                .iter()
                .find(|(id, _)| id == k)
                .ok_or_else(|| Error::Validation(format!("circuit has no choice '{k}'")))?;
            if !alts.contains(&v.as_str()) {
                return Err(Error::Validation(format!(
                    "choice '{k}' has no alternative '{v}'; options: {}",
                    alts.join(", ")
                )));
            }
        }
        for (k, v) in &settings.params {
            if !self.params.contains_key(k) {
                return Err(Error::Validation(format!("circuit has no parameter '{k}'")));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("parameter '{k}' is not finite")));
            }
        }
        let mut out = self.default_settings();
        out.choices.extend(settings.choices.clone());
        out.params.extend(settings.params.clone());
        Ok(out)
    }

    pub fn default_settings(&self) -> Settings {
        Settings {
            choices: self.choices().into_iter().map(|(id, alts)| (id.to_string(), alts[0].to_string())).collect(),
            params: self.params.clone(),
        }
    }

    /// Every combination of choice alternatives, parameters at defaults.
    pub fn settings_grid(&self) -> Vec<Settings> {
        let mut grid = vec![self.default_settings()];
        for (id, alts) in self.choices() {
            grid = grid
                .into_iter()
                .flat_map(|s| alts.iter().map(move |a| s.clone().choose(id, a)))
                .collect();
        }
        grid
    }

    fn flatten(&self, settings: &Settings) -> Result<Vec<Flat<'_>>> {
        let settings = self.resolve_settings(settings)?;
        let mut out = Vec::new();
        for step in &self.steps {
            match step {
                Step::Stage(st) => out.push(Flat::Op { stage: st, op: self.build_op(st, &settings.params)? }),
                Step::Detect(d) => out.push(Flat::Detect(d)),
                Step::Choice { id, alternatives } => {
                    let chosen = &settings.choices[id];
                    let alt = alternatives.iter().find(|a| &a.name == chosen).expect("resolved settings");
                    for s in &alt.steps {
                        match s {
                            Step::Stage(st) => {
                                out.push(Flat::Op { stage: st, op: self.build_op(st, &settings.params)? })
                            }
                            Step::Detect(d) => out.push(Flat::Detect(d)),
                            Step::Choice { .. } => unreachable!("nested choices are rejected at build"),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Evolves the source up to the first detector (or the end).
    pub fn evolve(&self, settings: &Settings) -> Result<Evolution> {
        self.evolve_until(settings, None)
    }

    /// The state right after stage `stage_id`, with no detection before it.
    pub fn state_after(&self, settings: &Settings, stage_id: &str) -> Result<Evolution> {
        self.evolve_until(settings, Some(stage_id))
    }

    fn evolve_until(&self, settings: &Settings, stop: Option<&str>) -> Result<Evolution> {
        let mut state = self.source.clone();
        for f in self.flatten(settings)? {
            match f {
                Flat::Op { stage, op } => {
                    state = match op.apply(&state)? {
                        Evolution::Survived(s) => s,
                        Evolution::AllBlocked => return Ok(Evolution::AllBlocked),
                    };
                    if stop == Some(stage.id.as_str()) {
                        return Ok(Evolution::Survived(state));
                    }
                }
                Flat::Detect(d) => {
                    if let Some(id) = stop {
                        return Err(Error::Validation(format!(
                            "detector '{}' comes before stage '{id}'",
                            d.name
                        )));
                    }
                    break;
                }
            }
        }
        match stop {
            Some(id) => Err(Error::Validation(format!("stage '{id}' is not active under these settings"))),
            None => Ok(Evolution::Survived(state)),
        }
    }

    fn absorbable_particles(&self) -> BTreeSet<usize> {
        self.stages()
            .iter()
            .filter(|s| s.element.is_filter())
            .flat_map(|s| s.element.targets().into_iter().map(|t| self.particle_of(t)))
            .collect()
    }

    fn columns_for(&self, flat: &[Flat<'_>], accounting: Accounting) -> Vec<Column> {
        let absorbable = match accounting {
            Accounting::Complete => self.absorbable_particles(),
            Accounting::PostSelected => BTreeSet::new(),
        };
        let mut columns = Vec::new();
        for f in flat {
            let Flat::Detect(d) = f else { continue };
            let entries: Vec<(&str, Vec<String>)> = match &d.measured {
                Measured::Dofs(v) => v
                    .iter()
                    .map(|(dof, basis)| {
                        let dd = &self.space[dof_position(&self.space, dof).expect("validated")];
                        let labels = match basis.change(dd, &self.conventions).expect("validated") {
                            Some(ch) => ch.new_labels().to_vec(),
                            None => dd.labels().to_vec(),
                        };
                        (dof.as_str(), labels)
                    })
                    .collect(),
                Measured::Placement { dof, .. } => vec![(dof.as_str(), vec![CLICK.into(), NO_CLICK.into()])],
                Measured::Screen { dof, geometry } => vec![(dof.as_str(), ScreenPovm::labels(geometry))],
            };
            for (dof, mut labels) in entries {
                if absorbable.contains(&self.particle_of(dof)) {
                    labels.push(ABSORBED.into());
                }
                columns.push(Column::new(&d.column_key(dof), &d.name, dof, labels));
            }
        }
        columns
    }

    /// Born probabilities of all detector outcomes, rejected filter branches
    /// dropped.
    pub fn joint_distribution(&self, settings: &Settings) -> Result<OutcomeDistribution> {
        self.joint_distribution_with(settings, Accounting::PostSelected)
    }

    pub fn joint_distribution_with(&self, settings: &Settings, accounting: Accounting) -> Result<OutcomeDistribution> {
        let flat = self.flatten(settings)?;
        let columns = self.columns_for(&flat, accounting);
        if columns.is_empty() {
            return Err(Error::Validation(format!("circuit '{}' has no active detector", self.name)));
        }
        let mut branches = vec![Branch { state: self.source.clone(), outcome: Vec::new(), absorbed: BTreeSet::new() }];
        for f in &flat {
            branches = match f {
                Flat::Op { op, .. } => self.apply_op(branches, op, accounting)?,
                Flat::Detect(d) => self.detect(branches, d, &columns)?,
            };
        }
        let mut outcomes = BTreeMap::new();
        for b in branches {
            *outcomes.entry(b.outcome).or_insert(0.0) += b.state.weight();
        }
        OutcomeDistribution::new(columns, outcomes)
    }

    fn apply_op(&self, branches: Vec<Branch>, op: &ElementOp, accounting: Accounting) -> Result<Vec<Branch>> {
        let particles: BTreeSet<usize> = op.targets().iter().map(|t| self.particle_of(t)).collect();
        let mut out = Vec::with_capacity(branches.len());
        for b in branches {
            if op.kind() == ElementKind::Filter && particles.iter().any(|p| b.absorbed.contains(p)) {
                out.push(b);
                continue;
            }
            let split = op.split(&b.state)?;
            if let Some(s) = split.passed {
                if s.weight() >= ZERO_PROBABILITY {
                    out.push(Branch { state: s, outcome: b.outcome.clone(), absorbed: b.absorbed.clone() });
                }
            }
            if accounting == Accounting::Complete {
                if let Some(s) = split.rejected {
                    if s.weight() >= ZERO_PROBABILITY {
                        let mut absorbed = b.absorbed.clone();
                        absorbed.extend(particles.iter().copied());
                        out.push(Branch { state: s, outcome: b.outcome, absorbed });
                    }
                }
            }
        }
        Ok(out)
    }

    fn detect(&self, branches: Vec<Branch>, d: &Detector, columns: &[Column]) -> Result<Vec<Branch>> {
        let mut out = branches;
        for dof in d.measured_dofs() {
            let key = d.column_key(dof);
            let column = columns.iter().find(|c| c.key == key).expect("column exists");
            let particle = self.particle_of(dof);
            let mut next = Vec::new();
            for b in out {
                if b.absorbed.contains(&particle) {
                    let mut outcome = b.outcome;
                    outcome.push(column.label_index(ABSORBED)?);
                    next.push(Branch { outcome, ..b });
                    continue;
                }
                for (label, state) in self.read_out(&b.state, d, dof)? {
                    if state.weight() < ZERO_PROBABILITY {
                        continue;
                    }
                    let mut outcome = b.outcome.clone();
                    outcome.push(column.label_index(&label)?);
                    next.push(Branch { state, outcome, absorbed: b.absorbed.clone() });
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Post-measurement branches of one dof reading, with weights scaled by
    /// their probabilities.
    fn read_out(&self, s: &StateVector, d: &Detector, dof: &str) -> Result<Vec<(String, StateVector)>> {
        let pos = dof_position(s.space(), dof)?;
        let mut out = Vec::new();
        match &d.measured {
            Measured::Dofs(v) => {
                let basis = v.iter().find(|(n, _)| n == dof).map(|(_, b)| *b).expect("measured dof");
                let change = basis.change(&s.space()[pos], &self.conventions)?;
                let rebased = match &change {
                    Some(ch) => s.rebase(ch)?,
                    None => s.clone(),
                };
                for label in rebased.space()[pos].labels().to_vec() {
                    match rebased.project_onto(dof, &label) {
                        Ok((proj, _)) => {
                            let back = match &change {
                                Some(ch) => proj.rebase(&ch.inverse())?,
                                None => proj,
                            };
                            out.push((label, back));
                        }
                        Err(Error::NullCondition(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            Measured::Placement { label, .. } => {
                let split = crate::elements::blocker(s.space(), dof, label)?.split(s)?;
                if let Some(st) = split.rejected {
                    out.push((CLICK.to_string(), st));
                }
                if let Some(st) = split.passed {
                    out.push((NO_CLICK.to_string(), st));
                }
            }
            Measured::Screen { geometry, .. } => {
                let povm = ScreenPovm::new(geometry)?;
                let labels = ScreenPovm::labels(geometry);
                for (k, label) in povm.hits.iter().chain(povm.miss.iter()).zip(labels) {
                    let amps = s.mapped(&[pos], k, None);
                    let p: f64 = amps.iter().map(Complex64::norm_sqr).sum();
                    if p < ZERO_PROBABILITY {
                        continue;
                    }
                    let n = p.sqrt();
                    let st = StateVector::from_raw(
                        s.space().to_vec(),
                        amps.into_iter().map(|a| a / n).collect(),
                        s.weight() * p,
                    );
                    out.push((label, st));
                }
            }
        }
        Ok(out)
    }

    /// Dofs an alternative changes or reads.
    fn touched_by(&self, alt: &Alternative) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for s in &alt.steps {
            match s {
                Step::Stage(st) => {
                    out.extend(st.element.targets().into_iter().map(String::from));
                    if let Some(c) = &st.condition {
                        out.insert(c.dof.clone());
                    }
                }
                Step::Detect(d) => out.extend(d.measured_dofs().into_iter().map(String::from)),
                Step::Choice { .. } => {}
            }
        }
        out
    }

    /// The largest total-variation distance between marginals on `dofs`
    /// across the alternatives of `choice`, other settings at defaults.
    ///
    /// Filters are accounted completely, so absorbing a partner particle
    /// cannot post-select the marginal.
    pub fn compare_marginals(&self, dofs: &[&str], choice: &str) -> Result<f64> {
        self.compare_marginals_from(&self.default_settings(), dofs, choice)
    }

    pub fn compare_marginals_from(&self, base: &Settings, dofs: &[&str], choice: &str) -> Result<f64> {
        for d in dofs {
            dof_position(&self.space, d)?;
        }
        let alts = self
            .steps
            .iter()
            .find_map(|s| match s {
                Step::Choice { id, alternatives } if id == choice => Some(alternatives),
                _ => None,
            })
            .ok_or_else(|| Error::Validation(format!("circuit has no choice '{choice}'")))?;
        let subset_particles: BTreeSet<usize> = dofs.iter().map(|d| self.particle_of(d)).collect();
        for a in alts {
            let touched = self.touched_by(a);
            if let Some(d) = dofs.iter().find(|d| touched.contains(**d)) {
                return Err(Error::Contract(format!(
                    "alternative '{}' of choice '{choice}' acts on '{d}'",
                    a.name
                )));
            }
            for s in &a.steps {
                if let Step::Stage(st) = s {
                    if st.element.is_filter()
                        && st.element.targets().iter().any(|t| subset_particles.contains(&self.particle_of(t)))
                    {
                        return Err(Error::Contract(format!(
                            "alternative '{}' of choice '{choice}' filters the particle carrying {dofs:?}",
                            a.name
                        )));
                    }
                }
            }
        }
        let mut marginals = Vec::new();
        for a in alts {
            let settings = self.resolve_settings(&base.clone().choose(choice, &a.name))?;
            let joint = self.joint_distribution_with(&settings, Accounting::Complete)?;
            let keys: Vec<String> = joint
                .columns()
                .iter()
                .filter(|c| dofs.contains(&c.dof.as_str()))
                .map(|c| c.key.clone())
                .collect();
            marginals.push(joint.marginal(&keys)?);
        }
        let mut worst: f64 = 0.0;
        for i in 0..marginals.len() {
            for j in i + 1..marginals.len() {
                worst = worst.max(total_variation(&marginals[i], &marginals[j])?);
            }
        }
        Ok(worst)
    }
}

fn visit<'a>(steps: &'a [Step], f: &mut impl FnMut(&'a Step)) {
    for s in steps {
        f(s);
        if let Step::Choice { alternatives, .. } = s {
            for a in alternatives {
                visit(&a.steps, f);
            }
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Validation(m) | Error::Composition(m) => m,
        other => other.to_string(),
    }
}
