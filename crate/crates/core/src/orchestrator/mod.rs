//! The task state machine and the tick loop that drives the whole stack.

pub mod fsm;
pub mod session;
pub mod trace;

pub use fsm::{Directive, Fsm, NavTarget, RobotEvent, RobotState};
pub use session::{Outcome, RunSummary, Session};
pub use trace::{TraceEvent, TraceRecord};
