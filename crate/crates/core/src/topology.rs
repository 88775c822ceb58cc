//! Topology composition and validation. A topology is a set of components plus
//! a composition plan built from combinators: sequential stages, parallel
//! fan-out with barrier join, class- or probability-driven branches, tiered
//! search, and module labels that group stations for breakdown reporting.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::component::{ComponentError, ComponentSpec, YieldModel};

/// Absolute tolerance on branch weight sums; config files carry decimal
/// fractions.
pub const BRANCH_WEIGHT_TOLERANCE: f64 = 1e-9;

/// Span label reserved for the synthetic per-request root span.
pub const ROOT_SPAN_LABEL: &str = "root";

/// One tier of a tiered search: the station probed and the distribution of
/// results one probe returns.
#[derive(Clone, Debug, PartialEq)]
pub struct Tier {
    pub station: String,
    pub yields: YieldModel,
}

/// Composition plan. `Ref` names either a component or a named sub-plan and is
/// fully resolved away by validation.
#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    Station(String),
    Ref(String),
    Seq(Vec<Plan>),
    Par(Vec<Plan>),
    BranchClass { text: Box<Plan>, image: Box<Plan> },
    BranchWeighted(Vec<(f64, Plan)>),
    Tiered { quota: u64, tiers: Vec<Tier> },
    Module { label: String, inner: Box<Plan> },
}

/// Topology as parsed from config, before validation. Named sub-plans may
/// reference each other; validation inlines them and rejects cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTopology {
    pub components: Vec<ComponentSpec>,
    pub fragments: BTreeMap<String, Plan>,
    pub plan: Plan,
    pub entry: String,
}

/// A validated topology: components sorted by id, plan free of references,
/// all invariants checked.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    components: Vec<ComponentSpec>,
    plan: Plan,
    entry: String,
    module_labels: Vec<String>,
}

impl Topology {
    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn module_labels(&self) -> &[String] {
        &self.module_labels
    }

    pub fn component(&self, id: &str) -> Option<&ComponentSpec> {
        self.components
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.components[i])
    }

    pub fn component_index(&self, id: &str) -> Option<usize> {
        self.components
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
    }

    /// Reverses validation so the idempotence property can be stated as
    /// `validate(validate(t).into_raw()) == validate(t)`.
    pub fn into_raw(self) -> RawTopology {
        RawTopology {
            components: self.components,
            fragments: BTreeMap::new(),
            plan: self.plan,
            entry: self.entry,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology has no components or an empty plan")]
    EmptyTopology,
    #[error("duplicate name '{0}' among components, sub-plans, and module labels")]
    DuplicateName(String),
    #[error("'{ROOT_SPAN_LABEL}' is reserved and cannot name a component or module")]
    ReservedName,
    #[error("unknown node id '{0}'")]
    UnknownNodeId(String),
    #[error("cycle detected through sub-plan '{0}'")]
    CycleDetected(String),
    #[error("branch weights at {at} sum to {sum} (must be 1 within {BRANCH_WEIGHT_TOLERANCE})")]
    BranchWeightSumInvalid { at: String, sum: f64 },
    #[error("branch weight at {at} must be non-negative, got {weight}")]
    NegativeBranchWeight { at: String, weight: f64 },
    #[error("tiered quota at {at} must be >= 1")]
    QuotaInvalid { at: String },
    #[error("tiered node at {at} has no tiers")]
    NoTiers { at: String },
    #[error("combinator at {at} has no children")]
    EmptyCombinator { at: String },
    #[error("component '{id}': {source}")]
    Component { id: String, source: ComponentError },
}

/// Checks every topology invariant and canonicalizes node order.
///
/// Validation is idempotent: re-validating the raw form of a validated
/// topology yields an equal topology.
pub fn validate_topology(raw: RawTopology) -> Result<Topology, TopologyError> {
    let RawTopology {
        mut components,
        fragments,
        plan,
        entry,
    } = raw;

    if components.is_empty() {
        return Err(TopologyError::EmptyTopology);
    }
    for c in &components {
        c.validate().map_err(|source| TopologyError::Component {
            id: c.id.clone(),
            source,
        })?;
    }

    components.sort_by(|a, b| a.id.cmp(&b.id));
    let mut ids = BTreeSet::new();
    for c in &components {
        if c.id == ROOT_SPAN_LABEL {
            return Err(TopologyError::ReservedName);
        }
        if !ids.insert(c.id.clone()) {
            return Err(TopologyError::DuplicateName(c.id.clone()));
        }
    }
    for name in fragments.keys() {
        if ids.contains(name) {
            return Err(TopologyError::DuplicateName(name.clone()));
        }
    }

    let mut resolver = Resolver {
        ids: &ids,
        fragments: &fragments,
        in_progress: Vec::new(),
        module_labels: Vec::new(),
    };
    let plan = resolver.resolve(plan, "plan")?;
    let module_labels = resolver.module_labels;
    for label in &module_labels {
        if label == ROOT_SPAN_LABEL {
            return Err(TopologyError::ReservedName);
        }
        if ids.contains(label) || fragments.contains_key(label) {
            return Err(TopologyError::DuplicateName(label.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for label in &module_labels {
        if !seen.insert(label.clone()) {
            return Err(TopologyError::DuplicateName(label.clone()));
        }
    }

    if !ids.contains(&entry) {
        return Err(TopologyError::UnknownNodeId(entry));
    }

    Ok(Topology {
        components,
        plan,
        entry,
        module_labels,
    })
}

struct Resolver<'a> {
    ids: &'a BTreeSet<String>,
    fragments: &'a BTreeMap<String, Plan>,
    in_progress: Vec<String>,
    module_labels: Vec<String>,
}

impl Resolver<'_> {
    fn resolve(&mut self, plan: Plan, at: &str) -> Result<Plan, TopologyError> {
        match plan {
            Plan::Station(id) | Plan::Ref(id) => {
                if self.ids.contains(&id) {
                    Ok(Plan::Station(id))
                } else if self.fragments.contains_key(&id) {
                    if self.in_progress.iter().any(|n| n == &id) {
                        return Err(TopologyError::CycleDetected(id));
                    }
                    self.in_progress.push(id.clone());
                    let inner = self.fragments[&id].clone();
                    let resolved = self.resolve(inner, &format!("{at}>{id}"))?;
                    self.in_progress.pop();
                    Ok(resolved)
                } else {
                    Err(TopologyError::UnknownNodeId(id))
                }
            }
            Plan::Seq(children) => {
                if children.is_empty() {
                    return Err(TopologyError::EmptyCombinator {
                        at: format!("{at}>seq"),
                    });
                }
                let resolved = children
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| self.resolve(c, &format!("{at}>seq[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Plan::Seq(resolved))
            }
            Plan::Par(children) => {
                if children.is_empty() {
                    return Err(TopologyError::EmptyCombinator {
                        at: format!("{at}>par"),
                    });
                }
                let resolved = children
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| self.resolve(c, &format!("{at}>par[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Plan::Par(resolved))
            }
            Plan::BranchClass { text, image } => {
                let text = self.resolve(*text, &format!("{at}>branch.text"))?;
                let image = self.resolve(*image, &format!("{at}>branch.image"))?;
                Ok(Plan::BranchClass {
                    text: Box::new(text),
                    image: Box::new(image),
                })
            }
            Plan::BranchWeighted(arms) => {
                let at = format!("{at}>branch");
                if arms.is_empty() {
                    return Err(TopologyError::EmptyCombinator { at });
                }
                for (w, _) in &arms {
                    if *w < 0.0 || !w.is_finite() {
                        return Err(TopologyError::NegativeBranchWeight {
                            at: at.clone(),
                            weight: *w,
                        });
                    }
                }
                let sum: f64 = arms.iter().map(|(w, _)| w).sum();
                if (sum - 1.0).abs() > BRANCH_WEIGHT_TOLERANCE {
                    return Err(TopologyError::BranchWeightSumInvalid { at, sum });
                }
                let resolved = arms
                    .into_iter()
                    .enumerate()
                    .map(|(i, (w, c))| Ok((w, self.resolve(c, &format!("{at}[{i}]"))?)))
                    .collect::<Result<Vec<_>, TopologyError>>()?;
                Ok(Plan::BranchWeighted(resolved))
            }
            Plan::Tiered { quota, tiers } => {
                let at = format!("{at}>tiered");
                if quota == 0 {
                    return Err(TopologyError::QuotaInvalid { at });
                }
                if tiers.is_empty() {
                    return Err(TopologyError::NoTiers { at });
                }
                for tier in &tiers {
                    if !self.ids.contains(&tier.station) {
                        return Err(TopologyError::UnknownNodeId(tier.station.clone()));
                    }
                    tier.yields
                        .validate()
                        .map_err(|source| TopologyError::Component {
                            id: tier.station.clone(),
                            source,
                        })?;
                }
                Ok(Plan::Tiered { quota, tiers })
            }
            Plan::Module { label, inner } => {
                self.module_labels.push(label.clone());
                let inner = self.resolve(*inner, &format!("{at}>module({label})"))?;
                Ok(Plan::Module {
                    label,
                    inner: Box::new(inner),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::{ComponentKind, Discipline, ServiceTimeModel};
    use crate::time::NS_PER_MS;

    fn station(id: &str) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            kind: ComponentKind::NonAi,
            servers: 1,
            discipline: Discipline::Fifo,
            service: ServiceTimeModel::Deterministic {
                value_ns: 10 * NS_PER_MS,
            },
            quality: None,
        }
    }

    fn raw(components: Vec<ComponentSpec>, plan: Plan, entry: &str) -> RawTopology {
        RawTopology {
            components,
            fragments: BTreeMap::new(),
            plan,
            entry: entry.into(),
        }
    }

    #[test]
    fn single_node_seq_is_ok() {
        let t = validate_topology(raw(
            vec![station("a")],
            Plan::Seq(vec![Plan::Ref("a".into())]),
            "a",
        ))
        .unwrap();
        assert_eq!(t.plan(), &Plan::Seq(vec![Plan::Station("a".into())]));
    }

    #[test]
    fn unknown_reference_is_named() {
        let err = validate_topology(raw(
            vec![station("a")],
            Plan::Seq(vec![Plan::Ref("a".into()), Plan::Ref("b".into())]),
            "a",
        ))
        .unwrap_err();
        assert_eq!(err, TopologyError::UnknownNodeId("b".into()));
    }

    #[test]
    fn branch_weights_must_sum_to_one() {
        // Weights 0.9 + 0.2 sum to 1.1, checked by hand.
        let err = validate_topology(raw(
            vec![station("text_cls"), station("img_cls")],
            Plan::BranchWeighted(vec![
                (0.9, Plan::Ref("text_cls".into())),
                (0.2, Plan::Ref("img_cls".into())),
            ]),
            "text_cls",
        ))
        .unwrap_err();
        match err {
            TopologyError::BranchWeightSumInvalid { sum, .. } => {
                assert!((sum - 1.1).abs() < 1e-12)
            }
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn branch_weight_tolerance_accepts_decimal_fractions() {
        let t = validate_topology(raw(
            vec![station("a"), station("b")],
            Plan::BranchWeighted(vec![
                (0.1 + 0.2, Plan::Ref("a".into())), // 0.30000000000000004
                (0.7, Plan::Ref("b".into())),
            ]),
            "a",
        ));
        assert!(t.is_ok());
    }

    #[test]
    fn fragment_cycle_is_detected() {
        let mut fragments = BTreeMap::new();
        fragments.insert(
            "x".to_string(),
            Plan::Seq(vec![Plan::Ref("a".into()), Plan::Ref("y".into())]),
        );
        fragments.insert("y".to_string(), Plan::Ref("x".into()));
        let err = validate_topology(RawTopology {
            components: vec![station("a")],
            fragments,
            plan: Plan::Ref("x".into()),
            entry: "a".into(),
        })
        .unwrap_err();
        assert_eq!(err, TopologyError::CycleDetected("x".into()));
    }

    #[test]
    fn empty_topology_is_rejected() {
        let err = validate_topology(raw(vec![], Plan::Seq(vec![Plan::Ref("a".into())]), "a"))
            .unwrap_err();
        assert_eq!(err, TopologyError::EmptyTopology);
    }

    #[test]
    fn quota_zero_is_rejected_in_topologies() {
        let err = validate_topology(raw(
            vec![station("t1")],
            Plan::Tiered {
                quota: 0,
                tiers: vec![Tier {
                    station: "t1".into(),
                    yields: YieldModel::Deterministic(5),
                }],
            },
            "t1",
        ))
        .unwrap_err();
        assert!(matches!(err, TopologyError::QuotaInvalid { .. }));
    }

    #[test]
    fn entry_must_exist() {
        let err = validate_topology(raw(vec![station("a")], Plan::Ref("a".into()), "gateway"))
            .unwrap_err();
        assert_eq!(err, TopologyError::UnknownNodeId("gateway".into()));
    }

    #[test]
    fn module_label_cannot_shadow_component() {
        let err = validate_topology(raw(
            vec![station("a")],
            Plan::Module {
                label: "a".into(),
                inner: Box::new(Plan::Ref("a".into())),
            },
            "a",
        ))
        .unwrap_err();
        assert_eq!(err, TopologyError::DuplicateName("a".into()));
    }

    #[test]
    fn node_order_is_canonicalized() {
        let t = validate_topology(raw(
            vec![station("b"), station("a")],
            Plan::Seq(vec![Plan::Ref("a".into()), Plan::Ref("b".into())]),
            "a",
        ))
        .unwrap();
        let ids: Vec<_> = t.components().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(t.component_index("b"), Some(1));
    }

    #[test]
    fn validation_is_idempotent() {
        let t = validate_topology(raw(
            vec![station("b"), station("a")],
            Plan::Par(vec![Plan::Ref("a".into()), Plan::Ref("b".into())]),
            "a",
        ))
        .unwrap();
        let again = validate_topology(t.clone().into_raw()).unwrap();
        assert_eq!(t, again);
    }
}
