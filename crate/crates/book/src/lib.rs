//! Guide snippets, compiled and run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/effective-dimension.md")]
pub mod effective_dimension {}

#[doc = include_str!("../../../book/src/mutual-information.md")]
pub mod mutual_information {}

#[doc = include_str!("../../../book/src/schedule.md")]
pub mod schedule {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/information-plane.md")]
pub mod information_plane {}

#[doc = include_str!("../../../book/src/representations.md")]
pub mod representations {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
