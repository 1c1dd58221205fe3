//! Simulation and design toolkit for a coupled-inductor impedance-source converter.

pub mod analytics;
pub mod cli;
pub mod engine;
pub mod harness;
pub mod loads;
pub mod modulation;
pub mod netlist;
pub mod refmodel;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    pub mod analytics {}
    #[doc = include_str!("../../../book/src/netlist.md")]
    pub mod netlist {}
    #[doc = include_str!("../../../book/src/engine.md")]
    pub mod engine {}
    #[doc = include_str!("../../../book/src/refmodel.md")]
    pub mod refmodel {}
    #[doc = include_str!("../../../book/src/harness.md")]
    pub mod harness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
