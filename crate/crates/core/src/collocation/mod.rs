mod lgl;
pub mod nlp;
mod oracle;
mod transcription;

pub use lgl::{lgl_rule, LglRule};
pub use nlp::{derivative_check, hessian_check, ConstraintEval, InnerMethod, Nlp, NlpResult, SolverSettings};
pub use oracle::{geometric_oracle, Detour, OraclePath};
pub use transcription::{
    solve, solve_ocp, transcribe, CollocationProblem, CollocationSettings, NlpSolution, OcpDefinition, Scaling,
    SolutionSummary, SpeedMode,
};
