//! Token, time and cost accounting.

use std::fmt;

use rust_decimal::prelude::*;
use rust_decimal::RoundingStrategy;
use serde::{Deserialize, Serialize};

use crate::model::ResponseRecord;

/// Prices per million tokens. Configuration, not ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_million: Decimal,
    pub completion_per_million: Decimal,
}

impl Pricing {
    pub fn new(prompt_per_million: Decimal, completion_per_million: Decimal) -> Self {
        Pricing {
            prompt_per_million,
            completion_per_million,
        }
    }

    pub fn free() -> Self {
        Pricing::new(Decimal::ZERO, Decimal::ZERO)
    }
}

impl Default for Pricing {
    /// $0.40 / 1M prompt tokens, $1.60 / 1M completion tokens.
    fn default() -> Self {
        Pricing::new(Decimal::new(40, 2), Decimal::new(160, 2))
    }
}

/// Aggregated usage of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub api_time_ms: u64,
    /// Exact cost; use [`UsageReport::cost_display`] for the rounded figure.
    pub cost: Decimal,
}

impl UsageReport {
    /// Sums usage over records; cache hits carry zero usage and so add nothing.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ResponseRecord>, pricing: &Pricing) -> Self {
        let mut report = UsageReport::default();
        for rec in records {
            report.prompt_tokens += rec.prompt_tokens;
            report.completion_tokens += rec.completion_tokens;
            report.api_time_ms += rec.api_time_ms;
        }
        report.total_tokens = report.prompt_tokens + report.completion_tokens;
        report.cost = cost_of(&report, pricing);
        report
    }

    pub fn api_time_secs(&self) -> f64 {
        self.api_time_ms as f64 / 1000.0
    }

    /// Cost rounded half-to-even to cents.
    pub fn cost_display(&self) -> Decimal {
        round_cents(self.cost)
    }

    pub fn is_zero(&self) -> bool {
        *self == UsageReport::default()
    }
}

impl fmt::Display for UsageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "prompt={} completion={} total={} api_time={:.1}s cost=${:.2}",
            self.prompt_tokens,
            self.completion_tokens,
            self.total_tokens,
            self.api_time_secs(),
            self.cost_display()
        )
    }
}

pub fn round_cents(amount: Decimal) -> Decimal {
    amount.round_dp_with_strategy(2, RoundingStrategy::MidpointNearestEven)
}

/// `prompt × prompt_price / 1M + completion × completion_price / 1M`, exact.
pub fn cost_of(usage: &UsageReport, pricing: &Pricing) -> Decimal {
    let million = Decimal::from(1_000_000u32);
    (Decimal::from(usage.prompt_tokens) * pricing.prompt_per_million
        + Decimal::from(usage.completion_tokens) * pricing.completion_per_million)
        / million
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(prompt: u64, completion: u64) -> UsageReport {
        UsageReport {
            prompt_tokens: prompt,
            completion_tokens: completion,
            total_tokens: prompt + completion,
            ..UsageReport::default()
        }
    }

    #[test]
    fn zero_tokens_cost_nothing() {
        let u = usage(0, 0);
        assert_eq!(round_cents(cost_of(&u, &Pricing::default())), Decimal::ZERO);
        assert_eq!(format!("{:.2}", round_cents(cost_of(&u, &Pricing::default()))), "0.00");
    }

    #[test]
    fn table_scale_example() {
        // 97,669 × 0.40 / 1M + 319,814 × 1.60 / 1M = 0.0390676 + 0.5117024 = 0.55077
        let exact = cost_of(&usage(97_669, 319_814), &Pricing::default());
        assert_eq!(exact, Decimal::from_str("0.55077").unwrap());
        assert_eq!(round_cents(exact), Decimal::from_str("0.55").unwrap());
    }

    #[test]
    fn cost_is_linear() {
        let p = Pricing::default();
        let one = cost_of(&usage(1234, 5678), &p);
        let two = cost_of(&usage(2468, 11356), &p);
        assert_eq!(two, one * Decimal::TWO);
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_cents(Decimal::from_str("0.125").unwrap()), Decimal::from_str("0.12").unwrap());
        assert_eq!(round_cents(Decimal::from_str("0.135").unwrap()), Decimal::from_str("0.14").unwrap());
    }
}
