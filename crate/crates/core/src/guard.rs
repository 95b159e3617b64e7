//! Access guard for ground-truth labels.
//!
//! Label-free training runs hold a locked guard; every read of a sample's
//! hidden parameters goes through [`LabelGuard::check`], which fails and
//! counts the attempt when locked.

use std::cell::Cell;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct LabelGuard {
    locked: bool,
    violations: Cell<usize>,
}

impl LabelGuard {
    pub fn locked() -> Self {
        Self {
            locked: true,
            violations: Cell::new(0),
        }
    }

    pub fn open() -> Self {
        Self::default()
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn check(&self, what: &'static str) -> Result<()> {
        if self.locked {
            self.violations.set(self.violations.get() + 1);
            return Err(Error::LabelAccessViolation(what));
        }
        Ok(())
    }

    pub fn violations(&self) -> usize {
        self.violations.get()
    }
}
