use std::collections::BTreeSet;

use super::{FleetError, PortRange};

/// Hands out host ports from a fixed range. Callers hold the fleet lock, so
/// claim is a single check-and-insert.
#[derive(Debug, Clone)]
pub struct PortAllocator {
    range: PortRange,
    used: BTreeSet<u16>,
    cursor: u16,
}

impl PortAllocator {
    pub fn new(range: PortRange) -> Self {
        PortAllocator { range, used: BTreeSet::new(), cursor: range.start }
    }

    pub fn claim(&mut self) -> Result<u16, FleetError> {
        let span = self.range.len();
        let offset = (self.cursor - self.range.start) as u32;
        for i in 0..span {
            let p = (self.range.start as u32 + (offset + i) % span) as u16;
            if self.used.insert(p) {
                self.cursor = if p == self.range.end { self.range.start } else { p + 1 };
                return Ok(p);
            }
        }
        Err(FleetError::PortExhausted)
    }

    /// Marks a port taken, e.g. when rebuilding from the runtime. False if it
    /// was already claimed.
    pub fn reserve(&mut self, port: u16) -> bool {
        self.used.insert(port)
    }

    pub fn release(&mut self, port: u16) {
        self.used.remove(&port);
    }

    pub fn in_use(&self) -> usize {
        self.used.len()
    }

    pub fn is_claimed(&self, port: u16) -> bool {
        self.used.contains(&port)
    }
}
