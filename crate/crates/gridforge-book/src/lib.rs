//! Runs every code block of the mdbook guide as a doc-test: each
//! chapter is included as the documentation of an empty module, so
//! `cargo test --doc` compiles and executes the snippets against the
//! real `gridforge` API. One module per chapter keeps failures
//! attributable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/machine.md")]
pub mod machine {}

#[doc = include_str!("../../../book/src/converter.md")]
pub mod converter {}

#[doc = include_str!("../../../book/src/strategies.md")]
pub mod strategies {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
