//! Cost and time per labeled datum.

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payment {
    /// Fixed amount for each item.
    PerItem { amount: f64 },
    /// Fixed amount for the whole batch.
    PerBatch { amount: f64 },
    /// Paid by the hour of work.
    Hourly { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostInput {
    pub method: String,
    pub payment: Payment,
    pub items: u32,
    /// Total working time for `items` items.
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub method: String,
    pub cost_per_datum: f64,
    pub seconds_per_datum: f64,
    pub hourly_rate: f64,
}

impl CostInput {
    pub fn new(method: &str, payment: Payment, items: u32, duration_s: f64) -> Self {
        CostInput {
            method: method.to_string(),
            payment,
            items,
            duration_s,
        }
    }

    pub fn total_cost(&self) -> f64 {
        match self.payment {
            Payment::PerItem { amount } => amount * self.items as f64,
            Payment::PerBatch { amount } => amount,
            Payment::Hourly { rate } => rate * self.duration_s / 3600.0,
        }
    }

    pub fn analyze(&self) -> Result<CostRow> {
        let invalid = |reason: &str| MetricsError::InvalidCost {
            method: self.method.clone(),
            reason: reason.to_string(),
        };
        if self.items == 0 {
            return Err(invalid("zero items"));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        let amount = match self.payment {
            Payment::PerItem { amount } | Payment::PerBatch { amount } => amount,
            Payment::Hourly { rate } => rate,
        };
        if !(amount >= 0.0) {
            return Err(invalid("payment must be non-negative"));
        }
        let total = self.total_cost();
        let n = self.items as f64;
        Ok(CostRow {
            method: self.method.clone(),
            cost_per_datum: total / n,
            seconds_per_datum: self.duration_s / n,
            hourly_rate: total * 3600.0 / self.duration_s,
        })
    }
}

/// Author labeling at $0.08 per ten-second task, a crowd batch of 30 items
/// for $5 done in 9.1 minutes, and experts at $20/hour taking 17 minutes for
/// the same 30 items.
pub fn reference_inputs() -> Vec<CostInput> {
    vec![
        CostInput::new("author", Payment::PerItem { amount: 0.08 }, 1, 10.0),
        CostInput::new("mturk", Payment::PerBatch { amount: 5.0 }, 30, 9.1 * 60.0),
        CostInput::new("expert", Payment::Hourly { rate: 20.0 }, 30, 17.0 * 60.0),
    ]
}

pub fn cost_analysis(inputs: &[CostInput]) -> Result<Vec<CostRow>> {
    inputs.iter().map(CostInput::analyze).collect()
}
