//! Anomaly detection by comparing replica reports.
//!
//! The learner keeps, per instance, the latest `[N, output, new state]`
//! tuple from each replica. Once every current member has reported (or the
//! instance deadline passes) it compares the tuples carrying the highest
//! proposal number: any disagreement on `(output, new_state)` is an anomaly.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::messages::{NodeId, ProposalNumber};
use crate::proposer::majority_threshold;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyPolicy {
    /// Any divergence is an anomaly and suppresses the client response.
    #[default]
    Strict,
    /// The largest agreeing group answers the client when it is a majority;
    /// the minority is still reported.
    Majority,
}

impl AnomalyPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyPolicy::Strict => "strict",
            AnomalyPolicy::Majority => "majority",
        }
    }
}

impl std::str::FromStr for AnomalyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(AnomalyPolicy::Strict),
            "majority" => Ok(AnomalyPolicy::Majority),
            other => Err(format!("unknown anomaly policy {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tuple {
    pub n: ProposalNumber,
    pub output: String,
    pub new_state: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub agreeing: BTreeSet<NodeId>,
    pub dissenting: BTreeSet<NodeId>,
    pub states_seen: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    Consensus { output: String, state: String },
    Anomaly(Divergence),
    Inconclusive { received: usize, needed: usize },
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Consensus { .. } => "Consensus",
            Verdict::Anomaly(_) => "Anomaly",
            Verdict::Inconclusive { .. } => "Inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recorded {
    New,
    Replaced,
    Duplicate,
    /// Lower than the number already held for that node.
    Outdated,
    /// The instance already has a verdict.
    AfterVerdict,
}

#[derive(Clone, Debug, Default)]
pub struct InstanceLedger {
    tuples: BTreeMap<NodeId, Tuple>,
    verdict: Option<Verdict>,
}

impl InstanceLedger {
    pub fn tuples(&self) -> &BTreeMap<NodeId, Tuple> {
        &self.tuples
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        self.verdict.as_ref()
    }

    pub fn on_accepted(&mut self, from: NodeId, tuple: Tuple) -> Recorded {
        if self.verdict.is_some() {
            return Recorded::AfterVerdict;
        }
        match self.tuples.get(&from) {
            None => {
                self.tuples.insert(from, tuple);
                Recorded::New
            }
            Some(held) if tuple.n > held.n => {
                self.tuples.insert(from, tuple);
                Recorded::Replaced
            }
            Some(held) if tuple.n == held.n => Recorded::Duplicate,
            Some(_) => Recorded::Outdated,
        }
    }

    /// Tuples carrying the highest proposal number present.
    pub fn current(&self) -> Vec<(NodeId, &Tuple)> {
        let Some(top) = self.tuples.values().map(|t| t.n).max() else {
            return Vec::new();
        };
        self.tuples
            .iter()
            .filter(|(_, t)| t.n == top)
            .map(|(id, t)| (*id, t))
            .collect()
    }
}

/// Groups replicas by the `(output, new_state)` pair they reported.
fn groups<'a>(tuples: &[(NodeId, &'a Tuple)]) -> BTreeMap<(&'a str, &'a str), BTreeSet<NodeId>> {
    let mut out: BTreeMap<(&str, &str), BTreeSet<NodeId>> = BTreeMap::new();
    for (id, t) in tuples {
        out.entry((t.output.as_str(), t.new_state.as_str()))
            .or_default()
            .insert(*id);
    }
    out
}

/// Largest agreeing group; ties go to the smallest state name, then output.
fn largest<'a, 'g>(
    groups: &'g BTreeMap<(&'a str, &'a str), BTreeSet<NodeId>>,
) -> Option<((&'a str, &'a str), &'g BTreeSet<NodeId>)> {
    groups
        .iter()
        .max_by(|(ka, a), (kb, b)| {
            a.len()
                .cmp(&b.len())
                .then_with(|| kb.1.cmp(ka.1))
                .then_with(|| kb.0.cmp(ka.0))
        })
        .map(|(k, v)| (*k, v))
}

fn divergence(tuples: &[(NodeId, &Tuple)]) -> Option<Divergence> {
    let groups = groups(tuples);
    if groups.len() < 2 {
        return None;
    }
    let (_, agreeing) = largest(&groups)?;
    let dissenting = tuples
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| !agreeing.contains(id))
        .collect();
    let mut states_seen = BTreeMap::new();
    for (_, t) in tuples {
        *states_seen.entry(t.new_state.clone()).or_insert(0) += 1;
    }
    Some(Divergence {
        agreeing: agreeing.clone(),
        dissenting,
        states_seen,
    })
}

/// Strict decision over one instance. Divergence is an anomaly whatever the
/// counts; agreement needs a majority of `membership_size`, and before the
/// deadline also needs every member to have reported.
pub fn decide(ledger: &InstanceLedger, membership_size: usize, deadline_reached: bool) -> Verdict {
    let needed = majority_threshold(membership_size).unwrap_or(1);
    let current = ledger.current();
    if current.is_empty() {
        return Verdict::Inconclusive { received: 0, needed };
    }
    if let Some(d) = divergence(&current) {
        return Verdict::Anomaly(d);
    }
    let received = current.len();
    if received >= needed && (deadline_reached || received >= membership_size) {
        let t = current[0].1;
        Verdict::Consensus {
            output: t.output.clone(),
            state: t.new_state.clone(),
        }
    } else {
        Verdict::Inconclusive { received, needed }
    }
}

/// One verdict together with what it causes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub instance: u64,
    pub verdict: Verdict,
    /// Set whenever replicas disagreed, including in majority mode where the
    /// verdict itself is a consensus.
    pub report: Option<Divergence>,
    /// `(request_id, output)` to return to the client.
    pub response: Option<(u64, String)>,
}

#[derive(Debug)]
pub struct Learner {
    policy: AnomalyPolicy,
    membership_size: usize,
    instances: BTreeMap<u64, InstanceLedger>,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct AcceptedOutcome {
    pub recorded: Option<Recorded>,
    /// First tuple for this instance: the caller arms its deadline.
    pub arm_deadline: bool,
    pub decision: Option<Decision>,
}

impl Learner {
    pub fn new(policy: AnomalyPolicy, membership_size: usize) -> Self {
        Self {
            policy,
            membership_size,
            instances: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> AnomalyPolicy {
        self.policy
    }

    pub fn ledger(&self, instance: u64) -> Option<&InstanceLedger> {
        self.instances.get(&instance)
    }

    pub fn verdict(&self, instance: u64) -> Option<&Verdict> {
        self.instances.get(&instance).and_then(|l| l.verdict())
    }

    pub fn on_accepted(&mut self, instance: u64, from: NodeId, tuple: Tuple) -> AcceptedOutcome {
        let arm_deadline = !self.instances.contains_key(&instance);
        let ledger = self.instances.entry(instance).or_default();
        let recorded = ledger.on_accepted(from, tuple);
        let decision = if matches!(recorded, Recorded::New | Recorded::Replaced) {
            self.try_decide(instance, false)
        } else {
            None
        };
        AcceptedOutcome {
            recorded: Some(recorded),
            arm_deadline,
            decision,
        }
    }

    pub fn on_deadline(&mut self, instance: u64) -> Option<Decision> {
        self.try_decide(instance, true)
    }

    pub fn on_membership(&mut self, size: usize) -> Vec<Decision> {
        self.membership_size = size;
        let open: Vec<u64> = self
            .instances
            .iter()
            .filter(|(_, l)| l.verdict.is_none())
            .map(|(i, _)| *i)
            .collect();
        open.into_iter()
            .filter_map(|i| self.try_decide(i, false))
            .collect()
    }

    /// Marks every listed instance that still has no verdict as inconclusive.
    pub fn finalize(&mut self, instances: impl IntoIterator<Item = u64>) -> Vec<Decision> {
        let mut out = Vec::new();
        for i in instances {
            let ledger = self.instances.entry(i).or_default();
            if ledger.verdict.is_some() {
                continue;
            }
            let verdict = Verdict::Inconclusive {
                received: ledger.current().len(),
                needed: majority_threshold(self.membership_size).unwrap_or(1),
            };
            out.push(self.commit(i, verdict));
        }
        out
    }

    fn try_decide(&mut self, instance: u64, deadline_reached: bool) -> Option<Decision> {
        let ledger = self.instances.get(&instance)?;
        if ledger.verdict.is_some() {
            return None;
        }
        let all_in = ledger.current().len() >= self.membership_size;
        if !deadline_reached && !all_in {
            return None;
        }
        let verdict = decide(ledger, self.membership_size, deadline_reached);
        Some(self.commit(instance, verdict))
    }

    fn commit(&mut self, instance: u64, strict: Verdict) -> Decision {
        let ledger = self.instances.get_mut(&instance).expect("ledger exists");
        let (verdict, report) = match (strict, self.policy) {
            (Verdict::Anomaly(d), AnomalyPolicy::Majority) => {
                let needed = majority_threshold(self.membership_size).unwrap_or(1);
                let current = ledger.current();
                match d.agreeing.iter().next().and_then(|id| ledger.tuples.get(id)) {
                    Some(t) if d.agreeing.len() >= needed && !current.is_empty() => (
                        Verdict::Consensus {
                            output: t.output.clone(),
                            state: t.new_state.clone(),
                        },
                        Some(d),
                    ),
                    _ => (Verdict::Anomaly(d.clone()), Some(d)),
                }
            }
            (Verdict::Anomaly(d), AnomalyPolicy::Strict) => (Verdict::Anomaly(d.clone()), Some(d)),
            (v, _) => (v, None),
        };
        let response = match &verdict {
            Verdict::Consensus { output, .. } => Some((instance, output.clone())),
            _ => None,
        };
        ledger.verdict = Some(verdict.clone());
        Decision {
            instance,
            verdict,
            report,
            response,
        }
    }
}
