//! Cycle-level model of the 3D-DRAM behind one core.
//!
//! Each channel holds a single logical bank. A logical row spans `C` physical
//! banks that are activated and precharged together, so the row buffer is
//! `C` times larger than one physical bank's row while all banks share the
//! channel's I/O bus.
//!
//! ```
//! use stacksim::arch::ArchConfig;
//! use stacksim::dramsim::{AccessKind, ByteRange, MemorySystem};
//!
//! let cfg = ArchConfig::reference_chip();
//! let mut mem = MemorySystem::new(&cfg);
//! let id = mem.issue(0, AccessKind::Read, &[ByteRange::new(0, 128)]).unwrap();
//! mem.drain();
//! // closed bank: tRCD + tBURST
//! assert_eq!(mem.completion(id), Some(18 + 4));
//! ```

mod address;
mod channel;
mod schedule;
mod system;
mod timing;
pub mod trace;

pub use address::{AddressError, AddressMap, DramCoord};
pub use channel::{AccessKind, Burst, Channel, ChannelStats, Command};
pub use schedule::schedule_tile;
pub use system::{ByteRange, DramStats, MemorySystem, RequestId, Scheduling};
pub use timing::DramTiming;
