//! Speculative execution semantics, transient-flow typing and min-cut repair
//! for a small While language with arrays and pointers.

pub mod corpus;
pub mod cut;
pub mod flow;
pub mod harness;
pub mod lang;
pub mod machine;
pub mod repair;
pub mod seq;
