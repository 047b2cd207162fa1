pub mod agents;
pub mod diff;
pub mod error;
pub mod game;
pub mod meanings;
pub mod metrics;
pub mod runner;
pub mod stack;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/stack.md")]
    mod stack {}
    #[doc = include_str!("../../../book/src/meanings.md")]
    mod meanings {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
}
