use crate::circuit::{Detector, SourceTerm};
use crate::elements::{Condition, Element};

/// Source position. Positions never take part in equality, so specs that
/// differ only in layout compare equal.
#[derive(Clone, Copy, Debug, Default, Eq)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

impl Loc {
    pub fn new(line: usize, column: usize) -> Self {
        Loc { line, column }
    }
}

impl PartialEq for Loc {
    fn eq(&self, _: &Loc) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DofDecl {
    pub name: String,
    pub labels: Vec<String>,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleDecl {
    pub name: String,
    pub dofs: Vec<String>,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    /// Radians.
    pub value: f64,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub term: SourceTerm,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub id: String,
    pub element: Element,
    pub condition: Option<Condition>,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectSpec {
    pub detector: Detector,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AltSpec {
    pub name: String,
    pub steps: Vec<StepSpec>,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceSpec {
    pub id: String,
    pub alternatives: Vec<AltSpec>,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepSpec {
    Stage(StageSpec),
    Choice(ChoiceSpec),
    Detect(DetectSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub dofs: Vec<DofDecl>,
    pub particles: Vec<ParticleDecl>,
    pub params: Vec<ParamDecl>,
    pub source: Vec<SourceSpec>,
    pub steps: Vec<StepSpec>,
    pub loc: Loc,
}
