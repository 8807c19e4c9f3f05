//! Anything that turns the month's observations into weights: base
//! policies, aggregator tiers and benchmarks.

use crate::env::PortfolioWeights;
use crate::error::Result;
use crate::market::MonthInputs;

pub trait Allocator: Send + Sync {
    fn id(&self) -> &str;

    /// Content hash identifying the allocator's parameters.
    fn checksum(&self) -> String;

    fn allocate(&self, inputs: &MonthInputs<'_>) -> Result<PortfolioWeights>;
}
