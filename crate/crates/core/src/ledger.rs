//! Token accounting split into static prefix, dynamic payload and output.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::backend::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// 0-based call index within the episode.
    pub call: u32,
    /// Interpreter step the call belongs to.
    pub step: u64,
    pub purpose: Purpose,
    pub static_prefix_tokens: u64,
    pub dynamic_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub calls: u64,
    pub static_prefix: u64,
    pub dynamic: u64,
    pub output: u64,
}

impl TokenTotals {
    pub fn prompt(&self) -> u64 {
        self.static_prefix + self.dynamic
    }

    pub fn all(&self) -> u64 {
        self.prompt() + self.output
    }
}

impl From<&LedgerEntry> for TokenTotals {
    fn from(e: &LedgerEntry) -> Self {
        TokenTotals {
            calls: 1,
            static_prefix: e.static_prefix_tokens,
            dynamic: e.dynamic_tokens,
            output: e.output_tokens,
        }
    }
}

impl Add for TokenTotals {
    type Output = TokenTotals;

    fn add(self, o: TokenTotals) -> TokenTotals {
        TokenTotals {
            calls: self.calls + o.calls,
            static_prefix: self.static_prefix + o.static_prefix,
            dynamic: self.dynamic + o.dynamic,
            output: self.output + o.output,
        }
    }
}

impl AddAssign for TokenTotals {
    fn add_assign(&mut self, o: TokenTotals) {
        *self = *self + o;
    }
}

impl core::iter::Sum for TokenTotals {
    fn sum<I: Iterator<Item = TokenTotals>>(iter: I) -> Self {
        iter.fold(TokenTotals::default(), Add::add)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    entries: Vec<LedgerEntry>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, step: u64, purpose: Purpose, static_prefix: u64, dynamic: u64, output: u64) -> LedgerEntry {
        let e = LedgerEntry {
            call: self.entries.len() as u32,
            step,
            purpose,
            static_prefix_tokens: static_prefix,
            dynamic_tokens: dynamic,
            output_tokens: output,
        };
        self.entries.push(e);
        e
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn totals(&self) -> TokenTotals {
        self.entries.iter().map(TokenTotals::from).sum()
    }

    pub fn by_purpose(&self) -> BTreeMap<Purpose, TokenTotals> {
        let mut out: BTreeMap<Purpose, TokenTotals> = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.purpose).or_default() += TokenTotals::from(e);
        }
        out
    }

    pub fn by_step(&self) -> BTreeMap<u64, TokenTotals> {
        let mut out: BTreeMap<u64, TokenTotals> = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.step).or_default() += TokenTotals::from(e);
        }
        out
    }

    /// Dynamic tokens of each action-generation call, in order.
    pub fn action_dynamic_series(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| e.purpose == Purpose::GroundInstruction)
            .map(|e| e.dynamic_tokens)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation() {
        let mut l = TokenLedger::new();
        l.record(0, Purpose::GroundInstruction, 100, 40, 5);
        l.record(1, Purpose::UpdatePc, 80, 30, 3);
        l.record(2, Purpose::GroundInstruction, 100, 50, 6);
        let t = l.totals();
        assert_eq!(t, TokenTotals { calls: 3, static_prefix: 280, dynamic: 120, output: 14 });
        assert_eq!(l.by_step().values().copied().sum::<TokenTotals>(), t);
        assert_eq!(l.by_purpose().values().copied().sum::<TokenTotals>(), t);
        assert_eq!(l.action_dynamic_series(), [40, 50]);
    }
}
