//! Listen-port leasing for the real backend.
//!
//! Ports are leased lowest-first. A released port sits out a cooldown
//! measured in completed tests before it can be leased again, giving the
//! kernel time to forget the previous listener.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// Inclusive port interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub const DEFAULT: PortRange = PortRange {
        lo: 20000,
        hi: 29999,
    };

    pub fn new(lo: u16, hi: u16) -> Self {
        Self { lo, hi }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || self.lo == 0
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.hi - self.lo) as usize + 1
        }
    }

    pub fn contains(&self, port: u16) -> bool {
        !self.is_empty() && (self.lo..=self.hi).contains(&port)
    }
}

impl Default for PortRange {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl FromStr for PortRange {
    type Err = String;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("port range `{s}` must look like lo:hi"))?;
        let parse = |p: &str| {
            p.trim()
                .parse::<u16>()
                .map_err(|e| format!("port `{p}`: {e}"))
        };
        let r = PortRange::new(parse(lo)?, parse(hi)?);
        if r.is_empty() {
            return Err(format!("port range `{s}` is empty"));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error(
    "port pool {range} exhausted ({leased} leased, {cooling} cooling down); \
     widen --port-range or lower the cooldown"
)]
pub struct PoolExhaustedError {
    pub range: PortRange,
    pub leased: usize,
    pub cooling: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReleaseError {
    #[error("port {0} is not leased")]
    NotLeased(u16),
}

#[derive(Debug, Clone)]
pub struct PortPool {
    range: PortRange,
    free: BTreeSet<u16>,
    leased: BTreeSet<u16>,
    /// Port → tick at which it becomes free again.
    cooldown: BTreeMap<u16, u64>,
    cooldown_ticks: u64,
    tick: u64,
}

impl PortPool {
    pub const DEFAULT_COOLDOWN: u64 = 2;

    pub fn new(range: PortRange) -> Self {
        Self::with_cooldown(range, Self::DEFAULT_COOLDOWN)
    }

    pub fn with_cooldown(range: PortRange, cooldown_ticks: u64) -> Self {
        let free = if range.is_empty() {
            BTreeSet::new()
        } else {
            (range.lo..=range.hi).collect()
        };
        Self {
            range,
            free,
            leased: BTreeSet::new(),
            cooldown: BTreeMap::new(),
            cooldown_ticks,
            tick: 0,
        }
    }

    pub fn range(&self) -> PortRange {
        self.range
    }

    /// Leases the lowest free port.
    pub fn acquire(&mut self) -> Result<u16, PoolExhaustedError> {
        self.expire();
        match self.free.pop_first() {
            Some(p) => {
                self.leased.insert(p);
                Ok(p)
            }
            None => Err(PoolExhaustedError {
                range: self.range,
                leased: self.leased.len(),
                cooling: self.cooldown.len(),
            }),
        }
    }

    /// Returns a port; it becomes leasable after the cooldown.
    pub fn release(&mut self, port: u16) -> Result<(), ReleaseError> {
        if !self.leased.remove(&port) {
            return Err(ReleaseError::NotLeased(port));
        }
        if self.cooldown_ticks == 0 {
            self.free.insert(port);
        } else {
            self.cooldown.insert(port, self.tick + self.cooldown_ticks);
        }
        Ok(())
    }

    /// Marks the end of a test.
    pub fn tick(&mut self) {
        self.tick += 1;
        self.expire();
    }

    fn expire(&mut self) {
        let tick = self.tick;
        let ready: Vec<u16> = self
            .cooldown
            .iter()
            .filter(|(_, &at)| at <= tick)
            .map(|(&p, _)| p)
            .collect();
        for p in ready {
            self.cooldown.remove(&p);
            self.free.insert(p);
        }
    }

    pub fn leased(&self) -> usize {
        self.leased.len()
    }

    pub fn free(&self) -> usize {
        self.free.len()
    }

    pub fn cooling(&self) -> usize {
        self.cooldown.len()
    }

    pub fn is_leased(&self, port: u16) -> bool {
        self.leased.contains(&port)
    }

    /// Checks the partition of the range into free, leased and cooling.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(p) = self.free.intersection(&self.leased).next() {
            return Err(format!("port {p} both free and leased"));
        }
        for p in self.cooldown.keys() {
            if self.free.contains(p) || self.leased.contains(p) {
                return Err(format!("cooling port {p} also free or leased"));
            }
        }
        let total = self.free.len() + self.leased.len() + self.cooldown.len();
        if total != self.range.len() {
            return Err(format!(
                "{total} ports accounted for, range has {}",
                self.range.len()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pigeonhole() {
        let mut pool = PortPool::new(PortRange::new(20000, 20003));
        let got: Vec<u16> = (0..4).map(|_| pool.acquire().unwrap()).collect();
        assert_eq!(got, [20000, 20001, 20002, 20003]);
        let err = pool.acquire().unwrap_err();
        assert_eq!(err.leased, 4);
        assert!(err.to_string().contains("--port-range"));
    }

    #[test]
    fn recycled_after_cooldown() {
        let mut pool = PortPool::new(PortRange::new(20000, 20000));
        let p = pool.acquire().unwrap();
        pool.release(p).unwrap();
        assert!(pool.acquire().is_err());
        pool.tick();
        assert!(pool.acquire().is_err());
        pool.tick();
        assert_eq!(pool.acquire().unwrap(), p);
        assert_eq!(pool.release(12), Err(ReleaseError::NotLeased(12)));
    }

    #[test]
    fn range_parsing() {
        assert_eq!("20000:20010".parse(), Ok(PortRange::new(20000, 20010)));
        assert!("20010:20000".parse::<PortRange>().is_err());
        assert!("0:10".parse::<PortRange>().is_err());
        assert!("20000".parse::<PortRange>().is_err());
        assert_eq!(PortRange::default().to_string(), "20000:29999");
    }

    proptest! {
        #[test]
        fn no_double_lease(ops in proptest::collection::vec(0u8..3, 1..300)) {
            let mut pool = PortPool::new(PortRange::new(30000, 30007));
            let mut held: Vec<u16> = Vec::new();
            for op in ops {
                match op {
                    0 => if let Ok(p) = pool.acquire() {
                        prop_assert!(!held.contains(&p));
                        held.push(p);
                    },
                    1 => if let Some(p) = held.pop() {
                        pool.release(p).unwrap();
                    },
                    _ => pool.tick(),
                }
                pool.check_invariants().map_err(TestCaseError::fail)?;
                prop_assert_eq!(pool.leased(), held.len());
            }
        }
    }
}
