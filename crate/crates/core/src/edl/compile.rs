use std::collections::BTreeMap;

use super::ast::*;
use super::ParseDiagnostic;
use crate::circuit::{Alternative, Circuit, CircuitBuilder, Measured, Particle, Stage, Step};
use crate::elements::Conventions;
use crate::error::{Error, Result};
use crate::qstate::{dof_position, Dof};

fn strip(e: Error) -> String {
    match e {
        Error::Validation(m) | Error::Composition(m) | Error::Contract(m) => m,
        other => other.to_string(),
    }
}

fn check_stage(space: &[Dof], params: &BTreeMap<String, f64>, st: &StageSpec) -> Result<()> {
    let op = st.element.build(space, params, &Conventions::default())?;
    if let Some(c) = &st.condition {
        op.when(space, c.clone())?;
    }
    Ok(())
}

fn check_detector(space: &[Dof], d: &DetectSpec) -> Result<()> {
    if let Measured::Dofs(v) = &d.detector.measured {
        for (dof, basis) in v {
            let p = dof_position(space, dof)?;
            basis.change(&space[p], &Conventions::default())?;
        }
    }
    Ok(())
}

fn step(s: &StepSpec) -> Step {
    match s {
        StepSpec::Stage(st) => {
            Step::Stage(Stage { id: st.id.clone(), element: st.element.clone(), condition: st.condition.clone() })
        }
        StepSpec::Detect(d) => Step::Detect(d.detector.clone()),
        StepSpec::Choice(c) => Step::Choice {
            id: c.id.clone(),
            alternatives: c
                .alternatives
                .iter()
                .map(|a| Alternative { name: a.name.clone(), steps: a.steps.iter().map(step).collect() })
                .collect(),
        },
    }
}

/// Builds a circuit from a resolved spec. Element argument problems come
/// back as diagnostics at the offending statement.
pub fn compile(spec: &ExperimentSpec) -> Result<Circuit> {
    let diag = |loc: Loc, e: Error| Error::Edl(vec![ParseDiagnostic::error(loc, strip(e))]);
    let space = spec
        .dofs
        .iter()
        .map(|d| Dof::new(d.name.as_str(), &d.labels).map_err(|e| diag(d.loc, e)))
        .collect::<Result<Vec<_>>>()?;
    let params: BTreeMap<String, f64> = spec.params.iter().map(|p| (p.name.clone(), p.value)).collect();
    let mut diags = Vec::new();
    let mut visit = |s: &StepSpec| match s {
        StepSpec::Stage(st) => {
            if let Err(e) = check_stage(&space, &params, st) {
                diags.push(ParseDiagnostic::error(st.loc, format!("stage '{}': {}", st.id, strip(e))));
            }
        }
        StepSpec::Detect(d) => {
            if let Err(e) = check_detector(&space, d) {
                diags.push(ParseDiagnostic::error(d.loc, format!("detector '{}': {}", d.detector.name, strip(e))));
            }
        }
        StepSpec::Choice(_) => {}
    };
    for s in &spec.steps {
        visit(s);
        if let StepSpec::Choice(c) = s {
            c.alternatives.iter().flat_map(|a| &a.steps).for_each(&mut visit);
        }
    }
    if !diags.is_empty() {
        return Err(Error::Edl(diags));
    }
    let mut b = CircuitBuilder::new(&spec.name);
    for d in &spec.dofs {
        let labels: Vec<&str> = d.labels.iter().map(String::as_str).collect();
        b = b.dof(&d.name, &labels);
    }
    for p in &spec.particles {
        let dofs: Vec<&str> = p.dofs.iter().map(String::as_str).collect();
        b = b.particle(&p.name, &dofs);
    }
    for p in &spec.params {
        b = b.param(&p.name, p.value);
    }
    for s in &spec.source {
        let labels: Vec<(&str, &str)> = s.term.labels.iter().map(|(d, l)| (d.as_str(), l.as_str())).collect();
        b = b.source_term(s.term.amplitude, &labels);
    }
    for s in &spec.steps {
        b = b.step(step(s));
    }
    b.build().map_err(|e| match e {
        Error::Edl(d) => Error::Edl(d),
        other => diag(spec.loc, other),
    })
}

fn unstep(s: &Step) -> StepSpec {
    let loc = Loc::default();
    match s {
        Step::Stage(st) => StepSpec::Stage(StageSpec {
            id: st.id.clone(),
            element: st.element.clone(),
            condition: st.condition.clone(),
            loc,
        }),
        Step::Detect(d) => StepSpec::Detect(DetectSpec { detector: d.clone(), loc }),
        Step::Choice { id, alternatives } => StepSpec::Choice(ChoiceSpec {
            id: id.clone(),
            alternatives: alternatives
                .iter()
                .map(|a| AltSpec { name: a.name.clone(), steps: a.steps.iter().map(unstep).collect(), loc })
                .collect(),
            loc,
        }),
    }
}

/// An `ExperimentSpec` that compiles back to this circuit. Conventions
/// are not part of EDL and are dropped.
pub fn export(circuit: &Circuit) -> ExperimentSpec {
    let loc = Loc::default();
    ExperimentSpec {
        name: circuit.name().to_string(),
        dofs: circuit
            .space()
            .iter()
            .map(|d| DofDecl { name: d.name().to_string(), labels: d.labels().to_vec(), loc })
            .collect(),
        particles: circuit
            .declared_particles()
            .into_iter()
            .map(|Particle { name, dofs }| ParticleDecl { name: name.clone(), dofs: dofs.clone(), loc })
            .collect(),
        params: circuit.params().iter().map(|(n, v)| ParamDecl { name: n.clone(), value: *v, loc }).collect(),
        source: circuit.source_terms().iter().map(|t| SourceSpec { term: t.clone(), loc }).collect(),
        steps: circuit.steps().iter().map(unstep).collect(),
        loc,
    }
}
