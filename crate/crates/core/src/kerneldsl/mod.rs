//! Tile-level kernel language: parsing, checking and unrolling.
//!
//! ```
//! use stacksim::arch::ArchConfig;
//! use stacksim::kerneldsl::{expand, parse_kernel, typecheck, Bindings, MATMUL_KL};
//!
//! let prog = parse_kernel(MATMUL_KL).unwrap();
//! let b: Bindings = [("M", 4), ("K", 4), ("N", 4), ("tM", 2), ("tK", 2), ("tN", 2)]
//!     .into_iter()
//!     .map(|(k, v)| (k.to_string(), v))
//!     .collect();
//! let checked = typecheck(&prog, &ArchConfig::reference_chip(), &b).unwrap();
//! assert_eq!(expand(&checked).unwrap().matrix_flops(), 2 * 4 * 4 * 4);
//! ```

mod ast;
mod check;
mod expand;
mod parser;

pub use ast::*;
pub use check::{box_ranges, eval, typecheck, Bindings, Buffer, CheckedProgram, DirectiveValue, KernelError, Residence};
pub use expand::{expand, Event, OpTrace};
pub use parser::{parse_kernel, ParseError};

pub const MATMUL_KL: &str = include_str!("../../kernels/matmul.kl");
pub const MATMUL_A_RESIDENT_KL: &str = include_str!("../../kernels/matmul_a_resident.kl");
pub const FUSED_ATTENTION_KL: &str = include_str!("../../kernels/fused_attention.kl");
