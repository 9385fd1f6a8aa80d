//! Super point detection over IP-pair streams.
//!
//! A super point is a host that talks to at least `theta` distinct opposite
//! IPs within a window. Detection uses two mergeable bit sketches:
//!
//! * [`short_sketch::SeavSketch`]: a few thousand bytes of 8-bit short
//!   estimators from which candidate host IPs are rebuilt at window end.
//! * [`long_sketch::LdcaSketch`]: an array of linear distinct counters that
//!   estimates the cardinality of each candidate and filters the false ones.
//!
//! Both sketches only ever set bits during a window, so they can be built on
//! independent shards (threads, watch points) and OR-merged. The
//! [`window`] module runs them over discrete windows, [`sliding`] over
//! sliding windows, and [`distributed`] simulates watch points that ship
//! serialized frames to a global server.

pub mod distributed;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod long_sketch;
pub mod report;
pub mod short_sketch;
pub mod sliding;
pub mod trace;
pub mod window;

pub use error::{Error, ErrorClass, Result};
