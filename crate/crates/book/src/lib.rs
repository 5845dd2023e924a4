//! The guide lives in `book/src` as plain mdbook chapters. `mdbook test`
//! cannot link against workspace crates, so each chapter is pulled in here as
//! module docs and `cargo test --doc` runs its code blocks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/places.md")]
pub mod places {}

#[doc = include_str!("../../../book/src/diaries.md")]
pub mod diaries {}

#[doc = include_str!("../../../book/src/unification.md")]
pub mod unification {}

#[doc = include_str!("../../../book/src/enquiries.md")]
pub mod enquiries {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
