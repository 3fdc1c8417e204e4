use crate::error::{Error, Result};

/// Cap on the number of 64-bit elements a single dense object may hold.
///
/// Applies to summary enumeration and to full reconstruction of a sketch.
/// The default (2^27 elements, i.e. 1 GiB of f64) keeps every in-scope
/// task buildable while rejecting monolithic summaries that should be
/// decomposed instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementBudget(pub u64);

impl ElementBudget {
    pub const DEFAULT: ElementBudget = ElementBudget(1 << 27);

    /// Reads the `CTS_ELEMENT_BUDGET` override, falling back to the default.
    pub fn from_env() -> ElementBudget {
        match std::env::var("CTS_ELEMENT_BUDGET") {
            Ok(s) => s.trim().parse::<u64>().map(ElementBudget).unwrap_or(Self::DEFAULT),
            Err(_) => Self::DEFAULT,
        }
    }

    /// Errors with a resource message when `elements` exceeds the budget.
    pub fn check(&self, elements: u64, what: &str) -> Result<()> {
        if elements > self.0 {
            Err(Error::Resource(format!(
                "{what} needs {elements} elements but the budget is {} (decompose the program, \
                 use SAMPLE mode, or raise CTS_ELEMENT_BUDGET)",
                self.0
            )))
        } else {
            Ok(())
        }
    }
}

impl Default for ElementBudget {
    fn default() -> Self {
        Self::DEFAULT
    }
}
