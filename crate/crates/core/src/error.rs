use thiserror::Error;

use crate::edl::ParseDiagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two states or spaces cannot be combined (duplicate or mismatched dofs).
    #[error("composition error: {0}")]
    Composition(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A caller-side precondition of an analysis routine does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot condition on '{0}': outcome has zero probability")]
    NullCondition(String),

    #[error("cannot sample from an empty distribution")]
    EmptyDistribution,

    #[error("unknown scenario '{name}'; available: {}", available.join(", "))]
    UnknownScenario { name: String, available: Vec<String> },

    #[error("{}", format_diagnostics(.0))]
    Edl(Vec<ParseDiagnostic>),
}

fn format_diagnostics(diags: &[ParseDiagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}
