//! Memoized fiber enumeration for one map.
//!
//! The detectors below sample the same parameter values repeatedly (invariant
//! comparison, matching, limit sets); a session caches snapshots and invariant
//! records keyed by the exact parameter bits and working region.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::DVector;

use crate::poly::PolynomialMap;
use crate::topology::{fiber_invariants, FiberTopology};
use crate::trace::{enumerate_fiber, FiberSnapshot, TraceConfig};

#[derive(Clone, PartialEq, Eq, Hash)]
struct Key {
    param: Vec<u64>,
    radius: u64,
    inner: Option<u64>,
}

fn key_for(param: &DVector<f64>, cfg: &TraceConfig) -> Key {
    Key {
        param: param.iter().map(|v| v.to_bits()).collect(),
        radius: cfg.radius.to_bits(),
        inner: cfg.inner_radius.map(f64::to_bits),
    }
}

/// Snapshot/invariant cache bound to one map and a base configuration.
pub struct Session<'a> {
    pub map: &'a PolynomialMap,
    pub cfg: TraceConfig,
    snapshots: RefCell<HashMap<Key, Rc<FiberSnapshot>>>,
    invariants: RefCell<HashMap<Key, (FiberTopology, Rc<FiberSnapshot>)>>,
}

impl<'a> Session<'a> {
    pub fn new(map: &'a PolynomialMap, cfg: TraceConfig) -> Self {
        Session {
            map,
            cfg,
            snapshots: RefCell::new(HashMap::new()),
            invariants: RefCell::new(HashMap::new()),
        }
    }

    /// Fiber snapshot at `t` under the session configuration.
    pub fn snapshot(&self, t: &DVector<f64>) -> Rc<FiberSnapshot> {
        self.snapshot_with(t, &self.cfg.clone())
    }

    /// Fiber snapshot at `t` under an explicit configuration (e.g. a larger
    /// radius).
    pub fn snapshot_with(&self, t: &DVector<f64>, cfg: &TraceConfig) -> Rc<FiberSnapshot> {
        let key = key_for(t, cfg);
        if let Some(s) = self.snapshots.borrow().get(&key) {
            return s.clone();
        }
        let snap = Rc::new(enumerate_fiber(self.map, t, cfg));
        self.snapshots.borrow_mut().insert(key, snap.clone());
        snap
    }

    /// Invariant record at `t`, including the cross-validated Euler routes;
    /// the returned snapshot is the one the census was finally computed on
    /// (it may live in a larger ball than the request after escalation).
    pub fn invariants(&self, t: &DVector<f64>) -> (FiberTopology, Rc<FiberSnapshot>) {
        let key = key_for(t, &self.cfg);
        if let Some(v) = self.invariants.borrow().get(&key) {
            return v.clone();
        }
        let snap = self.snapshot(t);
        let (topo, used) = fiber_invariants(self.map, &snap, &self.cfg);
        let used = Rc::new(used);
        self.invariants
            .borrow_mut()
            .insert(key, (topo.clone(), used.clone()));
        (topo, used)
    }
}
