//! Experiment description language: a line-oriented text form of circuits.
//!
//! ```text
//! EXPERIMENT mz
//! DOF arm : T1 R1
//! PARAM phi = 0
//! SOURCE 1+0i |arm=T1>
//! STAGE bs1 : bs arm T1 R1
//! STAGE ps : phase arm T1 phi=phi
//! CHOICE bs2 : in { STAGE bs2 : bs arm T1 R1 } | out { }
//! DETECT D1 : arm=T1
//! DETECT D2 : arm=R1
//! ```
//!
//! Literal angles are degrees, parameters are radians. `#` starts a comment.

mod ast;
mod compile;
mod format;
mod lexer;
mod parser;

use std::fmt;

pub use ast::{AltSpec, ChoiceSpec, DetectSpec, DofDecl, ExperimentSpec, Loc, ParamDecl, ParticleDecl, SourceSpec, StageSpec, StepSpec};
pub use compile::{compile, export};
pub use format::{format, format_complex};
pub use parser::parse;

use crate::circuit::Circuit;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A positioned message about EDL source text. Lines and columns are 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub severity: Severity,
}

impl ParseDiagnostic {
    pub fn error(loc: Loc, message: impl Into<String>) -> Self {
        ParseDiagnostic { line: loc.line, column: loc.column, message: message.into(), severity: Severity::Error }
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

/// Parses and compiles in one step.
pub fn load(text: &str) -> Result<Circuit> {
    let spec = parse(text).map_err(Error::Edl)?;
    compile(&spec)
}
