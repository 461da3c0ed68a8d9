use std::collections::BTreeMap;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use super::types::{TokenUsage, UsageLedger};

/// USD per million tokens for one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input: Decimal,
    pub output: Decimal,
    #[serde(default)]
    pub cache: Decimal,
}

/// User-supplied price table; models without an entry cost nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn with(mut self, model: &str, price: ModelPrice) -> Self {
        self.models.insert(model.to_string(), price);
        self
    }

    pub fn cost(&self, model: &str, usage: &TokenUsage) -> Decimal {
        let Some(p) = self.models.get(model) else {
            return Decimal::ZERO;
        };
        let raw = Decimal::from(usage.input_tokens) * p.input
            + Decimal::from(usage.output_tokens) * p.output
            + Decimal::from(usage.cache_tokens) * p.cache;
        (raw / Decimal::from(1_000_000u32))
            .round_dp_with_strategy(4, RoundingStrategy::MidpointNearestEven)
    }

    pub fn ledger(&self, model: &str, usage: &TokenUsage) -> UsageLedger {
        UsageLedger {
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            cache_tokens: usage.cache_tokens,
            cost_usd: self.cost(model, usage),
        }
    }
}
