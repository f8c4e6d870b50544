//! Chapters of the guide in `book/src`, included as documentation so that
//! `cargo test` compiles and runs every Rust snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data-and-bases.md")]
pub mod data_and_bases {}

#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}

#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}

#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
