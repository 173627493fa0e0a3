//! Book chapters compiled as doctests.

#[doc = include_str!("../../../book/src/harness.md")]
mod harness {}
