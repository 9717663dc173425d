//! Compiles the guide's snippets as doc-tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}
#[doc = include_str!("../../../book/src/memory.md")]
pub mod memory {}
#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}
#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
