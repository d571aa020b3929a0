//! Allocation-only building blocks for AI-assisted pull-request security review.
//!
//! Everything in this crate is pure: it parses, partitions, scores and
//! renders, but never touches the network or the filesystem. The `bugdar`
//! crate wires these pieces to GitHub, Slack, chat-completion providers and
//! on-disk stores.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod chunking;
pub mod diff;
pub mod evaluation;
pub mod gateway;
pub mod retrieval;
pub mod webhook;

mod digest;
