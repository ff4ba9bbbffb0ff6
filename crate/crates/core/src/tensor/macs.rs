//! Multiply-accumulate instrumentation.
//!
//! Matrix products and convolutions recorded on a [`Tape`](super::Tape)
//! report their MAC counts here while counting is enabled on the current
//! thread. Counts are attributed to the innermost active scope path, e.g.
//! `stage1.block0.dwa`. One p×q·q×r product is p·q·r MACs; elementwise
//! work counts zero.

use std::cell::RefCell;

#[derive(Default)]
struct Counter {
    enabled: bool,
    scopes: Vec<String>,
    records: Vec<(String, u64)>,
}

thread_local! {
    static COUNTER: RefCell<Counter> = RefCell::new(Counter::default());
}

/// Per-scope MAC totals in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacLog {
    pub entries: Vec<(String, u64)>,
}

impl MacLog {
    pub fn get(&self, scope: &str) -> u64 {
        self.entries
            .iter()
            .find(|(s, _)| s == scope)
            .map_or(0, |(_, n)| *n)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|(_, n)| n).sum()
    }
}

/// Run `f` with counting enabled and return everything it recorded.
/// Nested calls are not supported.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, MacLog) {
    COUNTER.with(|c| {
        let mut c = c.borrow_mut();
        assert!(!c.enabled, "MAC counting is already active on this thread");
        c.enabled = true;
        c.records.clear();
    });
    let out = f();
    let entries = COUNTER.with(|c| {
        let mut c = c.borrow_mut();
        c.enabled = false;
        std::mem::take(&mut c.records)
    });
    (out, MacLog { entries })
}

pub struct ScopeGuard {
    _private: (),
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        COUNTER.with(|c| {
            c.borrow_mut().scopes.pop();
        });
    }
}

/// Push a named scope; it is popped when the guard drops.
#[must_use]
pub fn scope(name: impl Into<String>) -> ScopeGuard {
    COUNTER.with(|c| c.borrow_mut().scopes.push(name.into()));
    ScopeGuard { _private: () }
}

pub(crate) fn record(macs: u64) {
    COUNTER.with(|c| {
        let mut c = c.borrow_mut();
        if !c.enabled {
            return;
        }
        let path = if c.scopes.is_empty() {
            "unscoped".to_string()
        } else {
            c.scopes.join(".")
        };
        match c.records.iter_mut().find(|(p, _)| *p == path) {
            Some((_, n)) => *n += macs,
            None => c.records.push((path, macs)),
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scopes_nest_and_accumulate() {
        let ((), log) = count(|| {
            let _a = scope("stage1");
            record(5);
            {
                let _b = scope("dwa");
                record(7);
                record(3);
            }
            record(1);
        });
        assert_eq!(log.get("stage1"), 6);
        assert_eq!(log.get("stage1.dwa"), 10);
        assert_eq!(log.total(), 16);
    }

    #[test]
    fn disabled_counting_records_nothing() {
        record(100);
        let ((), log) = count(|| {});
        assert_eq!(log.total(), 0);
    }
}
