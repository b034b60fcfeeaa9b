//! Variable store with set combinators and monotonic threshold triggers.
//!
//! Source variables are mutated locally or joined with remote states.
//! Derived variables are defined by a single combinator over other
//! variables and are recomputed from the full source states whenever one of
//! their inputs changes, before the mutating call returns.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crdt::{AWSet, CrdtError, Delta, Element, LatticeState, Mutation, Variant};
use crate::encoding::VarId;

pub type Predicate = Arc<dyn Fn(&Element) -> bool + Send + Sync>;
pub type MapFn = Arc<dyn Fn(&Element) -> Element + Send + Sync>;
pub type StatePredicate = Arc<dyn Fn(&LatticeState) -> bool + Send + Sync>;

#[derive(Debug, Error)]
pub enum DataflowError {
    #[error("variable {0} is already declared")]
    Duplicate(VarId),
    #[error("no variable named {0}")]
    Unknown(VarId),
    #[error("variable {0} is derived and cannot be mutated directly")]
    DerivedUpdate(VarId),
    #[error("variable {id} is a {variant}, combinators need an AWSet")]
    NotAnAWSet { id: VarId, variant: String },
    #[error("variable {0} already has a defining combinator")]
    AlreadyDefined(VarId),
    #[error("defining {0} would create a cycle")]
    Cycle(VarId),
    #[error("variable {id}: {source}")]
    Crdt {
        id: VarId,
        #[source]
        source: CrdtError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Source,
    Derived,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub id: VarId,
    pub state: LatticeState,
    pub kind: VariableKind,
}

#[derive(Clone)]
pub enum Combinator {
    Product { left: VarId, right: VarId },
    Filter { source: VarId, predicate: Predicate },
    Map { source: VarId, function: MapFn },
}

impl Combinator {
    pub fn sources(&self) -> Vec<&VarId> {
        match self {
            Combinator::Product { left, right } => vec![left, right],
            Combinator::Filter { source, .. } | Combinator::Map { source, .. } => vec![source],
        }
    }
}

impl fmt::Debug for Combinator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Combinator::Product { left, right } => write!(f, "Product({left}, {right})"),
            Combinator::Filter { source, .. } => write!(f, "Filter({source})"),
            Combinator::Map { source, .. } => write!(f, "Map({source})"),
        }
    }
}

/// A monotone condition over one variable's local state.
#[derive(Clone)]
pub enum Condition {
    /// Counter value at least the given amount. False for non-counters.
    AtLeast(u64),
    /// Set membership. False for non-sets.
    Contains(Element),
    /// Caller-supplied; must be monotone in the lattice order.
    Custom(StatePredicate),
}

impl Condition {
    pub fn holds(&self, state: &LatticeState) -> bool {
        match self {
            Condition::AtLeast(n) => state.as_gcounter().is_some_and(|c| c.value() >= *n),
            Condition::Contains(e) => state.as_awset().is_some_and(|s| s.contains(e)),
            Condition::Custom(f) => f(state),
        }
    }
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::AtLeast(n) => write!(f, "AtLeast({n})"),
            Condition::Contains(e) => write!(f, "Contains({e})"),
            Condition::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriggerId(pub u64);

/// A trigger whose condition became true.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Firing {
    pub trigger: TriggerId,
    pub variable: VarId,
}

#[derive(Clone)]
struct Trigger {
    id: TriggerId,
    variable: VarId,
    condition: Condition,
}

/// One node's replica of every variable plus the dataflow graph over them.
#[derive(Clone, Default)]
pub struct Store {
    variables: BTreeMap<VarId, Variable>,
    edges: BTreeMap<VarId, Combinator>,
    dependents: BTreeMap<VarId, BTreeSet<VarId>>,
    topo: Vec<VarId>,
    triggers: Vec<Trigger>,
    next_trigger: u64,
    fired: VecDeque<Firing>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(
        &mut self,
        id: impl Into<VarId>,
        variant: Variant,
    ) -> Result<&Variable, DataflowError> {
        let id = id.into();
        if self.variables.contains_key(&id) {
            return Err(DataflowError::Duplicate(id));
        }
        let var = Variable {
            id: id.clone(),
            state: variant.bottom(),
            kind: VariableKind::Source,
        };
        Ok(self.variables.entry(id).or_insert(var))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.variables.contains_key(&VarId::new(id))
    }

    pub fn variable(&self, id: &str) -> Option<&Variable> {
        self.variables.get(&VarId::new(id))
    }

    pub fn state(&self, id: &str) -> Option<&LatticeState> {
        self.variables.get(&VarId::new(id)).map(|v| &v.state)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Variable> {
        self.variables.values()
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &VarId> {
        self.variables
            .values()
            .filter(|v| v.kind == VariableKind::Source)
            .map(|v| &v.id)
    }

    /// Applies `mutation` to a source variable and returns the delta.
    pub fn update(&mut self, id: &str, mutation: &Mutation) -> Result<Delta, DataflowError> {
        let var = self.source_mut(id)?;
        let (next, delta) = var
            .state
            .apply(mutation)
            .map_err(|source| DataflowError::Crdt {
                id: var.id.clone(),
                source,
            })?;
        let changed = next != var.state;
        var.state = next;
        let id = var.id.clone();
        if changed {
            self.propagate(&id);
        }
        Ok(delta)
    }

    /// Joins a remote state or delta into a source variable, declaring it
    /// at bottom first if this replica has never seen it. Returns whether the
    /// local state changed.
    pub fn merge(&mut self, id: &VarId, remote: &LatticeState) -> Result<bool, DataflowError> {
        if !self.variables.contains_key(id) {
            self.declare(id.clone(), remote.variant())?;
        }
        let var = self.source_mut(id.as_str())?;
        let changed = var
            .state
            .join_assign(remote)
            .map_err(|source| DataflowError::Crdt {
                id: id.clone(),
                source,
            })?;
        if changed {
            self.propagate(id);
        }
        Ok(changed)
    }

    /// `dst` = every pair `(a, b)` with `a` in `left` and `b` in `right`.
    pub fn product(&mut self, left: &str, right: &str, dst: &str) -> Result<(), DataflowError> {
        let combinator = Combinator::Product {
            left: self.awset_id(left)?,
            right: self.awset_id(right)?,
        };
        self.define(dst, combinator)
    }

    pub fn filter(
        &mut self,
        source: &str,
        predicate: Predicate,
        dst: &str,
    ) -> Result<(), DataflowError> {
        let combinator = Combinator::Filter {
            source: self.awset_id(source)?,
            predicate,
        };
        self.define(dst, combinator)
    }

    pub fn map(&mut self, source: &str, function: MapFn, dst: &str) -> Result<(), DataflowError> {
        let combinator = Combinator::Map {
            source: self.awset_id(source)?,
            function,
        };
        self.define(dst, combinator)
    }

    /// Registers a one-shot trigger. If the condition already holds it fires
    /// immediately; otherwise it fires on the first change that makes it true.
    pub fn read_threshold(
        &mut self,
        id: &str,
        condition: Condition,
    ) -> Result<TriggerId, DataflowError> {
        let var = self
            .variables
            .get(&VarId::new(id))
            .ok_or_else(|| DataflowError::Unknown(VarId::new(id)))?;
        let trigger = Trigger {
            id: TriggerId(self.next_trigger),
            variable: var.id.clone(),
            condition,
        };
        self.next_trigger += 1;
        let tid = trigger.id;
        if trigger.condition.holds(&var.state) {
            self.fired.push_back(Firing {
                trigger: tid,
                variable: trigger.variable,
            });
        } else {
            self.triggers.push(trigger);
        }
        Ok(tid)
    }

    pub fn pending_triggers(&self) -> usize {
        self.triggers.len()
    }

    /// Drains triggers that fired since the last call, in firing order.
    pub fn take_fired(&mut self) -> Vec<Firing> {
        self.fired.drain(..).collect()
    }

    /// Recomputes every derived variable from scratch and compares with the
    /// maintained values.
    pub fn derived_consistent(&self) -> bool {
        let mut scratch = self.variables.clone();
        for id in &self.topo {
            let expected = self.evaluate(&scratch, &self.edges[id]);
            scratch.get_mut(id).expect("derived variable exists").state =
                LatticeState::AWSet(expected);
        }
        self.topo
            .iter()
            .all(|id| scratch[id].state == self.variables[id].state)
    }

    fn source_mut(&mut self, id: &str) -> Result<&mut Variable, DataflowError> {
        let var = self
            .variables
            .get_mut(&VarId::new(id))
            .ok_or_else(|| DataflowError::Unknown(VarId::new(id)))?;
        if var.kind == VariableKind::Derived {
            return Err(DataflowError::DerivedUpdate(var.id.clone()));
        }
        Ok(var)
    }

    fn awset_id(&self, id: &str) -> Result<VarId, DataflowError> {
        let var = self
            .variables
            .get(&VarId::new(id))
            .ok_or_else(|| DataflowError::Unknown(VarId::new(id)))?;
        match var.state {
            LatticeState::AWSet(_) => Ok(var.id.clone()),
            ref other => Err(DataflowError::NotAnAWSet {
                id: var.id.clone(),
                variant: other.variant().to_string(),
            }),
        }
    }

    fn define(&mut self, dst: &str, combinator: Combinator) -> Result<(), DataflowError> {
        let dst_id = match self.variables.get(&VarId::new(dst)) {
            None => VarId::new(dst),
            Some(var) => {
                if self.edges.contains_key(&var.id) {
                    return Err(DataflowError::AlreadyDefined(var.id.clone()));
                }
                if var.state.variant() != Variant::AWSet {
                    return Err(DataflowError::NotAnAWSet {
                        id: var.id.clone(),
                        variant: var.state.variant().to_string(),
                    });
                }
                var.id.clone()
            }
        };
        for source in combinator.sources() {
            if *source == dst_id || self.reaches(&dst_id, source) {
                return Err(DataflowError::Cycle(dst_id));
            }
        }

        let state = LatticeState::AWSet(self.evaluate(&self.variables, &combinator));
        for source in combinator.sources() {
            self.dependents
                .entry(source.clone())
                .or_default()
                .insert(dst_id.clone());
        }
        self.variables.insert(
            dst_id.clone(),
            Variable {
                id: dst_id.clone(),
                state,
                kind: VariableKind::Derived,
            },
        );
        self.edges.insert(dst_id.clone(), combinator);
        self.topo = self.topological_order();
        // Anything already downstream of a pre-declared destination must
        // reflect its new contents.
        self.propagate(&dst_id);
        Ok(())
    }

    /// Whether `to` is reachable from `from` along dependency edges.
    fn reaches(&self, from: &VarId, to: &VarId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id == to {
                return true;
            }
            if seen.insert(id) {
                if let Some(next) = self.dependents.get(id) {
                    stack.extend(next.iter());
                }
            }
        }
        false
    }

    fn topological_order(&self) -> Vec<VarId> {
        let mut indegree: BTreeMap<&VarId, usize> = BTreeMap::new();
        for (dst, comb) in &self.edges {
            let n = comb
                .sources()
                .iter()
                .filter(|s| self.edges.contains_key(**s))
                .count();
            indegree.insert(dst, n);
        }
        let mut ready: VecDeque<&VarId> = indegree
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.edges.len());
        while let Some(id) = ready.pop_front() {
            order.push(id.clone());
            for dep in self.dependents.get(id).into_iter().flatten() {
                let n = indegree.get_mut(dep).expect("dependents are derived");
                *n -= 1;
                if *n == 0 {
                    ready.push_back(dep);
                }
            }
        }
        order
    }

    fn evaluate(&self, vars: &BTreeMap<VarId, Variable>, combinator: &Combinator) -> AWSet {
        let set = |id: &VarId| {
            vars[id]
                .state
                .as_awset()
                .expect("combinator inputs are AWSets")
                .clone()
        };
        match combinator {
            Combinator::Product { left, right } => {
                let (l, r) = (set(left), set(right));
                AWSet::from_canonical(l.elements().flat_map(|a| {
                    r.elements()
                        .map(move |b| Element::tuple([a.clone(), b.clone()]))
                }))
            }
            Combinator::Filter { source, predicate } => {
                AWSet::from_canonical(set(source).elements().filter(|e| predicate(e)).cloned())
            }
            Combinator::Map { source, function } => {
                let image: BTreeSet<Element> =
                    set(source).elements().map(|e| function(e)).collect();
                AWSet::from_canonical(image)
            }
        }
    }

    /// Recomputes everything downstream of `changed`, then evaluates the
    /// triggers of every variable that changed.
    fn propagate(&mut self, changed: &VarId) {
        let mut dirty = BTreeSet::from([changed.clone()]);
        if self.dependents.contains_key(changed) {
            for id in self.topo.clone() {
                let comb = &self.edges[&id];
                if !comb.sources().iter().any(|s| dirty.contains(*s)) {
                    continue;
                }
                let next = LatticeState::AWSet(self.evaluate(&self.variables, comb));
                let var = self
                    .variables
                    .get_mut(&id)
                    .expect("derived variable exists");
                if var.state != next {
                    var.state = next;
                    dirty.insert(id);
                }
            }
        }
        if self.triggers.is_empty() {
            return;
        }
        let variables = &self.variables;
        let fired = &mut self.fired;
        self.triggers.retain(|t| {
            if dirty.contains(&t.variable) && t.condition.holds(&variables[&t.variable].state) {
                fired.push_back(Firing {
                    trigger: t.id,
                    variable: t.variable.clone(),
                });
                false
            } else {
                true
            }
        });
    }
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("variables", &self.variables)
            .field("edges", &self.edges)
            .field("pending_triggers", &self.triggers.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::ActorId;

    fn actor() -> ActorId {
        ActorId::new("a")
    }

    fn add(store: &mut Store, id: &str, e: impl Into<Element>) {
        store
            .update(
                id,
                &Mutation::Add {
                    actor: actor(),
                    element: e.into(),
                },
            )
            .unwrap();
    }

    fn members(store: &Store, id: &str) -> Vec<Element> {
        store
            .state(id)
            .unwrap()
            .as_awset()
            .unwrap()
            .elements()
            .cloned()
            .collect()
    }

    #[test]
    fn declare_and_duplicate() {
        let mut s = Store::new();
        s.declare("ads", Variant::AWSet).unwrap();
        assert!(matches!(
            s.declare("ads", Variant::AWSet),
            Err(DataflowError::Duplicate(_))
        ));
        s.declare("c1", Variant::GCounter).unwrap();
        assert_eq!(s.state("c1").unwrap().as_gcounter().unwrap().value(), 0);
    }

    #[test]
    fn update_counter_and_derived_rejection() {
        let mut s = Store::new();
        s.declare("c1", Variant::GCounter).unwrap();
        s.update(
            "c1",
            &Mutation::Increment {
                actor: actor(),
                amount: 1,
            },
        )
        .unwrap();
        assert_eq!(s.state("c1").unwrap().as_gcounter().unwrap().value(), 1);

        s.declare("x", Variant::AWSet).unwrap();
        s.map("x", Arc::new(|e: &Element| e.clone()), "y").unwrap();
        let err = s.update("y", &Mutation::Remove { element: 1.into() });
        assert!(matches!(err, Err(DataflowError::DerivedUpdate(_))));
        assert!(matches!(
            s.merge(&VarId::new("y"), &Variant::AWSet.bottom()),
            Err(DataflowError::DerivedUpdate(_))
        ));
    }

    #[test]
    fn product_filter_map() {
        let mut s = Store::new();
        s.declare("a", Variant::AWSet).unwrap();
        s.declare("b", Variant::AWSet).unwrap();
        s.product("a", "b", "ab").unwrap();
        assert!(members(&s, "ab").is_empty());
        add(&mut s, "a", "x");
        add(&mut s, "b", "p");
        add(&mut s, "b", "q");
        assert_eq!(
            members(&s, "ab"),
            vec![
                Element::tuple(["x".into(), "p".into()]),
                Element::tuple(["x".into(), "q".into()]),
            ]
        );

        s.declare("n", Variant::AWSet).unwrap();
        s.filter(
            "n",
            Arc::new(|e: &Element| e.as_int().is_some_and(|i| i % 2 == 0)),
            "even",
        )
        .unwrap();
        s.map(
            "n",
            Arc::new(|e: &Element| Element::Int(e.as_int().unwrap() % 2)),
            "parity",
        )
        .unwrap();
        for i in [1i64, 3] {
            add(&mut s, "n", i);
        }
        assert!(members(&s, "even").is_empty());
        assert_eq!(members(&s, "parity"), vec![Element::Int(1)]);
        for i in [2i64, 4] {
            add(&mut s, "n", i);
        }
        assert_eq!(members(&s, "even"), vec![Element::Int(2), Element::Int(4)]);
        assert!(s.derived_consistent());
    }

    #[test]
    fn combinator_errors() {
        let mut s = Store::new();
        s.declare("a", Variant::AWSet).unwrap();
        s.declare("c", Variant::GCounter).unwrap();
        assert!(matches!(
            s.product("a", "c", "d"),
            Err(DataflowError::NotAnAWSet { .. })
        ));
        assert!(matches!(
            s.product("a", "zz", "d"),
            Err(DataflowError::Unknown(_))
        ));
        let id = Arc::new(|e: &Element| e.clone());
        s.map("a", id.clone(), "b").unwrap();
        assert!(matches!(
            s.map("a", id.clone(), "b"),
            Err(DataflowError::AlreadyDefined(_))
        ));
        assert!(matches!(
            s.map("a", id.clone(), "a"),
            Err(DataflowError::Cycle(_))
        ));
        // A pre-declared destination upstream of its own source is a cycle.
        s.declare("z", Variant::AWSet).unwrap();
        s.map("z", id.clone(), "w").unwrap();
        assert!(matches!(s.map("w", id, "z"), Err(DataflowError::Cycle(_))));
    }

    #[test]
    fn predeclared_destination_feeds_later_edges() {
        let mut s = Store::new();
        let id = Arc::new(|e: &Element| e.clone());
        s.declare("mid", Variant::AWSet).unwrap();
        s.map("mid", id.clone(), "out").unwrap();
        s.declare("src", Variant::AWSet).unwrap();
        add(&mut s, "src", "k");
        s.map("src", id, "mid").unwrap();
        assert_eq!(members(&s, "out"), vec![Element::str("k")]);
        add(&mut s, "src", "m");
        assert_eq!(members(&s, "out").len(), 2);
        assert!(s.derived_consistent());
    }

    #[test]
    fn threshold_fires_once() {
        let mut s = Store::new();
        s.declare("c", Variant::GCounter).unwrap();
        let t = s.read_threshold("c", Condition::AtLeast(3)).unwrap();
        for _ in 0..2 {
            s.update(
                "c",
                &Mutation::Increment {
                    actor: actor(),
                    amount: 1,
                },
            )
            .unwrap();
        }
        assert!(s.take_fired().is_empty());
        s.update(
            "c",
            &Mutation::Increment {
                actor: actor(),
                amount: 1,
            },
        )
        .unwrap();
        let fired = s.take_fired();
        assert_eq!(
            fired,
            vec![Firing {
                trigger: t,
                variable: VarId::new("c")
            }]
        );
        s.update(
            "c",
            &Mutation::Increment {
                actor: actor(),
                amount: 1,
            },
        )
        .unwrap();
        assert!(s.take_fired().is_empty());
        assert_eq!(s.pending_triggers(), 0);
    }

    #[test]
    fn threshold_already_true_fires_immediately() {
        let mut s = Store::new();
        s.declare("set", Variant::AWSet).unwrap();
        add(&mut s, "set", "e");
        s.read_threshold("set", Condition::Contains("e".into()))
            .unwrap();
        assert_eq!(s.take_fired().len(), 1);
    }

    #[test]
    fn triggers_on_derived_variables() {
        let mut s = Store::new();
        s.declare("src", Variant::AWSet).unwrap();
        s.map("src", Arc::new(|e: &Element| e.clone()), "dst")
            .unwrap();
        s.read_threshold("dst", Condition::Contains("e".into()))
            .unwrap();
        add(&mut s, "src", "e");
        assert_eq!(s.take_fired()[0].variable, VarId::new("dst"));
    }

    #[test]
    fn merge_auto_declares() {
        let mut s = Store::new();
        let mut remote = Store::new();
        remote.declare("c", Variant::GCounter).unwrap();
        remote
            .update(
                "c",
                &Mutation::Increment {
                    actor: actor(),
                    amount: 2,
                },
            )
            .unwrap();
        let id = VarId::new("c");
        assert!(s.merge(&id, remote.state("c").unwrap()).unwrap());
        assert!(!s.merge(&id, remote.state("c").unwrap()).unwrap());
        assert_eq!(s.state("c"), remote.state("c"));
        assert!(matches!(
            s.merge(&id, &Variant::AWSet.bottom()),
            Err(DataflowError::Crdt { .. })
        ));
    }
}
