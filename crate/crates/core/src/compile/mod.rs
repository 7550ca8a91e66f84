//! Simplification, lowering to kernel IR, and kernel execution.

mod artifact;
mod kernel;
mod lower;
mod partial;
mod passes;
mod simplify;

pub use artifact::{FORMAT_VERSION, MAGIC};
pub use kernel::{ExecError, Guard, Instr, KernelError, KernelProgram, Matrix};
pub use lower::{lower, lower_labeled, CompileOptions, Mode, Pass};
pub use partial::{partial_evaluate, Residual};
pub use simplify::{simplify, simplify_roots, simplify_with, RuleSet};
