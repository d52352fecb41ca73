//! Query access to functions on R^n with a shared, capped query ledger.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// A bounded real function on R^n. Boolean functions return values in {-1, 1}.
pub trait Function: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F: Function + ?Sized> Function for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
}

#[derive(Debug)]
struct LedgerInner {
    count: AtomicU64,
    cap: Option<u64>,
    frozen: AtomicBool,
    parent: Option<QueryLedger>,
}

/// Counts oracle queries. Child ledgers forward every charge to their parent,
/// so a per-stage ledger and the run total stay consistent.
#[derive(Clone, Debug)]
pub struct QueryLedger {
    inner: Arc<LedgerInner>,
}

impl Default for QueryLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::build(None, None)
    }

    pub fn with_cap(cap: u64) -> Self {
        Self::build(Some(cap), None)
    }

    fn build(cap: Option<u64>, parent: Option<QueryLedger>) -> Self {
        QueryLedger {
            inner: Arc::new(LedgerInner {
                count: AtomicU64::new(0),
                cap,
                frozen: AtomicBool::new(false),
                parent,
            }),
        }
    }

    /// A fresh sub-ledger whose charges also land on `self`.
    pub fn child(&self) -> Self {
        Self::build(None, Some(self.clone()))
    }

    pub fn child_with_cap(&self, cap: u64) -> Self {
        Self::build(Some(cap), Some(self.clone()))
    }

    pub fn total(&self) -> u64 {
        self.inner.count.load(Ordering::Relaxed)
    }

    pub fn cap(&self) -> Option<u64> {
        self.inner.cap
    }

    /// Queries still available before any cap along the chain is hit.
    pub fn remaining(&self) -> Option<u64> {
        let own = self.inner.cap.map(|c| c.saturating_sub(self.total()));
        let up = self.inner.parent.as_ref().and_then(|p| p.remaining());
        match (own, up) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn freeze(&self) {
        self.inner.frozen.store(true, Ordering::SeqCst);
    }

    pub fn unfreeze(&self) {
        self.inner.frozen.store(false, Ordering::SeqCst);
    }

    pub fn is_frozen(&self) -> bool {
        self.inner.frozen.load(Ordering::SeqCst)
            || self.inner.parent.as_ref().is_some_and(|p| p.is_frozen())
    }

    /// Records `n` queries, failing without side effects if any ledger on the
    /// chain is frozen or would exceed its cap.
    pub fn charge(&self, n: u64) -> Result<()> {
        if self.inner.frozen.load(Ordering::Relaxed) {
            return Err(Error::LedgerFrozen);
        }
        let cap = self.inner.cap;
        self.inner
            .count
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |c| match cap {
                Some(cap) if c + n > cap => None,
                _ => Some(c + n),
            })
            .map_err(|used| Error::BudgetExceeded {
                cap: cap.unwrap_or(u64::MAX),
                used,
                requested: n,
            })?;
        if let Some(parent) = &self.inner.parent {
            if let Err(e) = parent.charge(n) {
                self.inner.count.fetch_sub(n, Ordering::Relaxed);
                return Err(e);
            }
        }
        Ok(())
    }
}

/// A function together with the ledger that pays for its evaluations.
#[derive(Clone)]
pub struct Oracle {
    func: Arc<dyn Function>,
    ledger: QueryLedger,
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Oracle")
            .field("func", &self.func)
            .field("queries", &self.ledger.total())
            .finish()
    }
}

impl Oracle {
    pub fn new<F: Function + 'static>(func: F) -> Self {
        Self::from_arc(Arc::new(func), QueryLedger::new())
    }

    pub fn from_arc(func: Arc<dyn Function>, ledger: QueryLedger) -> Self {
        Oracle { func, ledger }
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn function(&self) -> &Arc<dyn Function> {
        &self.func
    }

    /// Same function, charged to a fresh child of the current ledger.
    pub fn stage(&self) -> Oracle {
        Oracle {
            func: self.func.clone(),
            ledger: self.ledger.child(),
        }
    }

    #[inline]
    pub fn query(&self, x: &[f64]) -> Result<f64> {
        debug_assert!(self.func.dim() == 0 || x.len() == self.func.dim());
        self.ledger.charge(1)?;
        Ok(self.func.eval(x))
    }
}

/// Wraps a function and keeps a copy of every point it is evaluated at.
#[derive(Debug)]
pub struct Recorder<F> {
    inner: F,
    points: Mutex<Vec<Vec<f64>>>,
}

impl<F: Function> Recorder<F> {
    pub fn new(inner: F) -> Self {
        Recorder {
            inner,
            points: Mutex::new(Vec::new()),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.points.lock().expect("recorder lock").clone()
    }
}

impl<F: Function> Function for Recorder<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.points.lock().expect("recorder lock").push(x.to_vec());
        self.inner.eval(x)
    }
}

/// A function given by a closure; mostly for tests and ad-hoc experiments.
pub struct FnFunction<G> {
    dim: usize,
    g: G,
}

impl<G> FnFunction<G>
where
    G: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, g: G) -> Self {
        FnFunction { dim, g }
    }
}

impl<G> fmt::Debug for FnFunction<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnFunction(dim={})", self.dim)
    }
}

impl<G> Function for FnFunction<G>
where
    G: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }
}
