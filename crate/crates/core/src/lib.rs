//! Countable MDPs with liminf payoff objectives, memory-bounded strategies and the gadget chains that
//! separate strategy classes.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod gadgets;
pub mod mdp;
pub mod monitor;
pub mod numeric;
pub mod schedule;
pub mod sim;
pub mod strategy;
pub mod transforms;
