//! Deterministic execution of send plans against scripted adversaries.
//!
//! A run sends every prescribed envelope (unless a faulty sender withholds
//! it), queues any injected envelopes, then delivers pending envelopes one at
//! a time in the order picked by the [`Schedule`] until nothing is pending.
//! Envelopes between non-faulty replicas are never lost.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::ProtocolChoice;
use crate::certs::{CertLedger, Certificate, IntegrityError, Signer, Value, DEFAULT_SIGNATURE_UNITS};
use crate::model::{validate_system, ClusterId, FailureModel, Placement, ReplicaId, SigningScheme, SystemSpec, Violation};
use crate::protocols::{self, Envelope, PlanError, Reaction, ReceiverState, SendPlan};

/// Order in which pending envelopes are delivered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Oldest pending envelope first.
    Fifo,
    /// Uniformly random among pending envelopes.
    Seeded(u64),
    /// These envelope ids first, in this order, whenever pending; then FIFO.
    Explicit(Vec<usize>),
}

/// Certificates attached to an injected envelope.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertSource {
    None,
    /// One replica certificate per listed signer.
    ReplicaSigned(Vec<ReplicaId>),
    /// The listed signers bundled as an emulated cluster certificate.
    EmulatedBundle(Vec<ReplicaId>),
    /// A replay of the sending cluster's certificate on the agreed value.
    AgreedCluster,
    /// A cluster certificate that was never produced by the signing scheme.
    ForgedCluster,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    /// Any faulty replica; faulty replicas may impersonate each other.
    pub from: ReplicaId,
    pub to: Vec<ReplicaId>,
    pub value: Value,
    #[serde(default = "yes")]
    pub carries_payload: bool,
    pub certs: CertSource,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    /// A `C1` replica performs only its first `after_steps` sends; a `C2`
    /// replica processes only its first `after_steps` deliveries.
    Crash { replica: ReplicaId, after_steps: usize },
    /// A faulty sender withholds prescribed envelope `envelope`.
    Drop { envelope: usize },
    /// A faulty `C2` replica ignores prescribed envelope `envelope`, or everything if absent.
    Ignore {
        replica: ReplicaId,
        #[serde(default)]
        envelope: Option<usize>,
    },
    Inject(Injection),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryTrace {
    pub placement: Placement,
    #[serde(default)]
    pub actions: Vec<AdversaryAction>,
}

impl AdversaryTrace {
    /// Faulty replicas as placed in `spec`, all behaving correctly.
    pub fn passive(spec: &SystemSpec) -> Self {
        AdversaryTrace { placement: spec.placement(), actions: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum TraceError {
    #[error("{replica} is not faulty but the trace scripts it")]
    NotFaulty { replica: ReplicaId },
    #[error("{action} is not a legal {model} behavior")]
    ModelForbids { action: &'static str, model: FailureModel },
    #[error("envelope {envelope} is not prescribed (plan has {available})")]
    UnknownEnvelope { envelope: usize, available: usize },
    #[error("envelope {envelope} is withheld under crash failures but its sender never crashes")]
    DropWithoutCrash { envelope: usize },
    #[error("{replica} is not a {expected} replica")]
    WrongCluster { replica: ReplicaId, expected: ClusterId },
    #[error("injection: {0}")]
    Injection(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("invalid system: {0:?}")]
    InvalidSystem(Vec<Violation>),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("illegal adversary trace: {0}")]
    IllegalTrace(#[from] TraceError),
    #[error("integrity violation: {0}")]
    Integrity(#[from] IntegrityError),
}

fn scripted(spec: &SystemSpec, replica: ReplicaId) -> Result<(), TraceError> {
    if replica.index >= spec.cluster(replica.cluster).n || !spec.is_faulty(replica) {
        return Err(TraceError::NotFaulty { replica });
    }
    Ok(())
}

fn check_trace(spec: &SystemSpec, plan: &SendPlan, trace: &AdversaryTrace, value: &Value) -> Result<(), TraceError> {
    let model = spec.failure_model;
    let crashing: BTreeSet<ReplicaId> = trace
        .actions
        .iter()
        .filter_map(|a| match a {
            AdversaryAction::Crash { replica, .. } => Some(*replica),
            _ => None,
        })
        .collect();
    for action in &trace.actions {
        match action {
            AdversaryAction::Crash { replica, .. } => scripted(spec, *replica)?,
            AdversaryAction::Drop { envelope } => {
                let send = plan
                    .sends
                    .get(*envelope)
                    .ok_or(TraceError::UnknownEnvelope { envelope: *envelope, available: plan.sends.len() })?;
                scripted(spec, send.sender)?;
                if model == FailureModel::Crash && !crashing.contains(&send.sender) {
                    return Err(TraceError::DropWithoutCrash { envelope: *envelope });
                }
            }
            AdversaryAction::Ignore { replica, envelope } => {
                if model == FailureModel::Crash {
                    return Err(TraceError::ModelForbids { action: "ignoring a delivery", model });
                }
                if replica.cluster != ClusterId::C2 {
                    return Err(TraceError::WrongCluster { replica: *replica, expected: ClusterId::C2 });
                }
                scripted(spec, *replica)?;
                if let Some(envelope) = envelope {
                    if *envelope >= plan.sends.len() {
                        return Err(TraceError::UnknownEnvelope { envelope: *envelope, available: plan.sends.len() });
                    }
                }
            }
            AdversaryAction::Inject(injection) => check_injection(spec, injection, value)?,
        }
    }
    Ok(())
}

fn check_injection(spec: &SystemSpec, injection: &Injection, agreed: &Value) -> Result<(), TraceError> {
    if spec.failure_model != FailureModel::Byzantine {
        return Err(TraceError::ModelForbids { action: "injecting an envelope", model: spec.failure_model });
    }
    scripted(spec, injection.from)?;
    for &target in &injection.to {
        if target.cluster != ClusterId::C2 || target.index >= spec.c2.n {
            return Err(TraceError::WrongCluster { replica: target, expected: ClusterId::C2 });
        }
    }
    let signing = spec.signing;
    let signers = match &injection.certs {
        CertSource::None | CertSource::ForgedCluster => return Ok(()),
        CertSource::AgreedCluster => {
            if !signing.has_cluster_certificates() {
                return Err(TraceError::Injection(format!("{signing} has no cluster certificates to replay")));
            }
            if &injection.value != agreed {
                return Err(TraceError::Injection("only the agreed value has a cluster certificate".into()));
            }
            return Ok(());
        }
        CertSource::ReplicaSigned(signers) | CertSource::EmulatedBundle(signers) => signers,
    };
    if !signing.has_replica_signing() {
        return Err(TraceError::Injection(format!("{signing} has no replica certificates")));
    }
    for &signer in signers {
        if signer.cluster != ClusterId::C1 || signer.index >= spec.c1.n {
            return Err(TraceError::WrongCluster { replica: signer, expected: ClusterId::C1 });
        }
        if &injection.value != agreed && !spec.is_faulty(signer) {
            return Err(TraceError::Injection(format!("{signer} is not faulty and cannot sign {}", injection.value)));
        }
    }
    Ok(())
}

/// Checks that `trace` is a legal adversary for `choice` on `spec` under
/// the trace's own placement.
pub fn check_legal(spec: &SystemSpec, choice: &ProtocolChoice, trace: &AdversaryTrace, value: &Value) -> Result<(), RunError> {
    let spec = spec.with_placement(&trace.placement);
    let violations = validate_system(&spec);
    if !violations.is_empty() {
        return Err(RunError::InvalidSystem(violations));
    }
    let plan = protocols::plan(&spec.view(), choice)?;
    check_trace(&spec, &plan, trace, value)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Handled by the receiver.
    Delivered,
    /// Handled, and the receiver newly considered the value received.
    Accepted,
    /// Withheld by a faulty sender.
    Withheld,
    /// Never sent: the sender crashed first.
    SenderCrashed,
    /// Arrived at a receiver that had crashed.
    ReceiverCrashed,
    /// Arrived at a faulty receiver that ignored it.
    Ignored,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub seq: usize,
    pub envelope: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiverReport {
    pub replica: ReplicaId,
    pub faulty: bool,
    pub received: BTreeSet<Value>,
    /// Distinct `C1` signers seen per value, under the replica-certificate rule.
    pub tallies: BTreeMap<Value, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderReport {
    pub replica: ReplicaId,
    pub faulty: bool,
    pub sent: usize,
    pub confirmed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// Prescribed inter-cluster envelopes, whether or not the adversary let them through.
    pub inter_cluster_msgs: usize,
    pub value_bytes_total: usize,
    pub replica_sigs_total: usize,
    pub cluster_sigs_total: usize,
    /// Largest prescribed envelope, in bytes plus one unit per signature.
    pub max_envelope_units: usize,
    pub local_msgs: usize,
    pub injected_msgs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Properties {
    pub receipt: bool,
    pub agreement: bool,
    pub confirmation: bool,
}

impl Properties {
    pub fn all(&self) -> bool {
        self.receipt && self.agreement && self.confirmation
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTranscript {
    pub protocol: String,
    pub choice: ProtocolChoice,
    pub value: Value,
    pub placement: Placement,
    pub envelopes: Vec<Envelope>,
    pub deliveries: Vec<DeliveryEvent>,
    pub receivers: Vec<ReceiverReport>,
    pub senders: Vec<SenderReport>,
    pub metrics: Metrics,
    pub properties: Properties,
}

impl RunTranscript {
    /// Whether every envelope between non-faulty replicas was handled.
    pub fn reliable(&self) -> bool {
        let faulty = |r: ReplicaId| self.placement.is_faulty(r);
        self.envelopes.iter().filter(|e| !faulty(e.sender) && !faulty(e.receiver)).all(|e| {
            self.deliveries
                .iter()
                .any(|d| d.envelope == e.id && matches!(d.outcome, Outcome::Delivered | Outcome::Accepted))
        })
    }
}

struct Picker {
    rng: Option<ChaCha8Rng>,
    explicit: VecDeque<usize>,
}

impl Picker {
    fn new(schedule: &Schedule) -> Self {
        match schedule {
            Schedule::Fifo => Picker { rng: None, explicit: VecDeque::new() },
            Schedule::Seeded(seed) => Picker { rng: Some(ChaCha8Rng::seed_from_u64(*seed)), explicit: VecDeque::new() },
            Schedule::Explicit(order) => Picker { rng: None, explicit: order.iter().copied().collect() },
        }
    }

    fn pick(&mut self, pending: &[usize]) -> usize {
        while let Some(next) = self.explicit.pop_front() {
            if let Some(pos) = pending.iter().position(|&id| id == next) {
                return pos;
            }
        }
        match &mut self.rng {
            Some(rng) => rng.random_range(0..pending.len()),
            None => 0,
        }
    }
}

/// Executes `choice` on `spec` with the faulty replicas and behavior of `trace`.
///
/// The trace's placement replaces whatever placement `spec` carries.
pub fn run(
    spec: &SystemSpec,
    choice: &ProtocolChoice,
    value: &Value,
    trace: &AdversaryTrace,
    schedule: &Schedule,
) -> Result<RunTranscript, RunError> {
    let spec = spec.with_placement(&trace.placement);
    let violations = validate_system(&spec);
    if !violations.is_empty() {
        return Err(RunError::InvalidSystem(violations));
    }
    let plan = protocols::plan(&spec.view(), choice)?;
    check_trace(&spec, &plan, trace, value)?;

    let mut crash_at: BTreeMap<ReplicaId, usize> = BTreeMap::new();
    let mut withheld: BTreeSet<usize> = BTreeSet::new();
    let mut ignore_all: BTreeSet<ReplicaId> = BTreeSet::new();
    let mut ignore: BTreeSet<(ReplicaId, usize)> = BTreeSet::new();
    let mut injections = Vec::new();
    for action in &trace.actions {
        match action {
            AdversaryAction::Crash { replica, after_steps } => {
                let at = crash_at.entry(*replica).or_insert(*after_steps);
                *at = (*at).min(*after_steps);
            }
            AdversaryAction::Drop { envelope } => {
                withheld.insert(*envelope);
            }
            AdversaryAction::Ignore { replica, envelope: None } => {
                ignore_all.insert(*replica);
            }
            AdversaryAction::Ignore { replica, envelope: Some(id) } => {
                ignore.insert((*replica, *id));
            }
            AdversaryAction::Inject(injection) => injections.push(injection),
        }
    }

    let mut ledger = CertLedger::new(&spec);
    ledger.agree(ClusterId::C1, value);

    let mut envelopes: Vec<Envelope> = Vec::with_capacity(plan.sends.len());
    let mut deliveries = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    let mut sent: BTreeMap<ReplicaId, usize> = BTreeMap::new();
    let mut seq = 0;
    let mut log = |deliveries: &mut Vec<DeliveryEvent>, envelope: usize, outcome: Outcome| {
        deliveries.push(DeliveryEvent { seq, envelope, outcome });
        seq += 1;
    };

    for (id, send) in plan.sends.iter().enumerate() {
        let certs = protocols::sender_certs(&mut ledger, plan.cert_form, send.sender, value)?;
        envelopes.push(Envelope::new(id, send.sender, send.receiver, value.clone(), send.carries_payload, certs));
        let steps = sent.entry(send.sender).or_insert(0);
        if crash_at.get(&send.sender).is_some_and(|&at| *steps >= at) {
            log(&mut deliveries, id, Outcome::SenderCrashed);
        } else if withheld.contains(&id) {
            *steps += 1;
            log(&mut deliveries, id, Outcome::Withheld);
        } else {
            *steps += 1;
            pending.push(id);
        }
    }
    let prescribed = envelopes.len();

    for injection in &injections {
        let certs = injected_certs(&mut ledger, injection)?;
        for &target in &injection.to {
            let id = envelopes.len();
            envelopes.push(Envelope::new(id, injection.from, target, injection.value.clone(), injection.carries_payload, certs.clone()));
            pending.push(id);
        }
    }
    let injected_msgs = envelopes.len() - prescribed;

    let n2 = spec.c2.n;
    let mut states = vec![ReceiverState::default(); n2];
    let mut processed = vec![0usize; n2];
    let mut picker = Picker::new(schedule);
    let rule = plan.receive_rule;

    while !pending.is_empty() {
        let pos = picker.pick(&pending);
        let id = pending.remove(pos);
        let receiver = envelopes[id].receiver;
        let r = receiver.index;
        if crash_at.get(&receiver).is_some_and(|&at| processed[r] >= at) {
            log(&mut deliveries, id, Outcome::ReceiverCrashed);
            continue;
        }
        if ignore_all.contains(&receiver) || ignore.contains(&(receiver, id)) {
            log(&mut deliveries, id, Outcome::Ignored);
            continue;
        }
        processed[r] += 1;
        let envelope = &envelopes[id];
        if envelope.sender.cluster == ClusterId::C1 {
            let reaction = states[r].on_remote(envelope, rule, &ledger);
            log(&mut deliveries, id, Outcome::Delivered);
            if let Reaction::Relay { value, carries_payload, certs } = reaction {
                for target in 0..n2 {
                    let local = envelopes.len();
                    envelopes.push(Envelope::new(local, receiver, ReplicaId::c2(target), value.clone(), carries_payload, certs.clone()));
                    pending.push(local);
                }
            }
        } else {
            let accepted = states[r].on_local(envelope, rule, &ledger);
            log(&mut deliveries, id, if accepted { Outcome::Accepted } else { Outcome::Delivered });
        }
    }

    let receivers: Vec<ReceiverReport> = states
        .into_iter()
        .enumerate()
        .map(|(i, state)| ReceiverReport {
            replica: ReplicaId::c2(i),
            faulty: spec.c2.is_faulty(i),
            tallies: state.tallies.iter().map(|(v, signers)| (v.clone(), signers.len())).collect(),
            received: state.received,
        })
        .collect();
    // Non-faulty senders confirm once their sends are out; the network is reliable.
    let senders: Vec<SenderReport> = (0..spec.c1.n)
        .map(|i| {
            let replica = ReplicaId::c1(i);
            let faulty = spec.c1.is_faulty(i);
            let sent = sent.get(&replica).copied().unwrap_or(0);
            SenderReport { replica, faulty, sent, confirmed: !faulty }
        })
        .collect();

    let honest = receivers.iter().filter(|r| !r.faulty);
    let receipt = honest.clone().all(|r| r.received.contains(value));
    let agreement = honest.clone().all(|r| r.received.iter().all(|w| w == value));
    let confirmation = receipt && senders.iter().filter(|s| !s.faulty).all(|s| s.confirmed);

    let own = &envelopes[..prescribed];
    let metrics = Metrics {
        inter_cluster_msgs: prescribed,
        value_bytes_total: own.iter().map(|e| e.size.value_bytes).sum(),
        replica_sigs_total: own.iter().map(|e| e.size.replica_sig_count).sum(),
        cluster_sigs_total: own.iter().map(|e| e.size.cluster_sig_count).sum(),
        max_envelope_units: own.iter().map(|e| e.size.total(DEFAULT_SIGNATURE_UNITS)).max().unwrap_or(0),
        local_msgs: envelopes.len() - prescribed - injected_msgs,
        injected_msgs,
    };

    Ok(RunTranscript {
        protocol: plan.choice.label(),
        choice: plan.choice,
        value: value.clone(),
        placement: trace.placement.clone(),
        envelopes,
        deliveries,
        receivers,
        senders,
        metrics,
        properties: Properties { receipt, agreement, confirmation },
    })
}

fn injected_certs(ledger: &mut CertLedger, injection: &Injection) -> Result<Vec<Certificate>, IntegrityError> {
    let value = &injection.value;
    Ok(match &injection.certs {
        CertSource::None => Vec::new(),
        CertSource::ReplicaSigned(signers) => {
            signers.iter().map(|&s| ledger.sign_replica(s, value)).collect::<Result<_, _>>()?
        }
        CertSource::EmulatedBundle(signers) => {
            for &s in signers {
                ledger.sign_replica(s, value)?;
            }
            vec![Certificate::unchecked(value.clone(), Signer::EmulatedCluster(signers.clone()))]
        }
        CertSource::AgreedCluster => vec![ledger.sign_cluster(ClusterId::C1, value)?],
        CertSource::ForgedCluster => vec![Certificate::unchecked(value.clone(), Signer::Cluster(ClusterId::C1))],
    })
}

/// Every placement with at most `f` faulty replicas per cluster, smaller
/// placements first, then in lexicographic order.
pub fn enumerate_placements(spec: &SystemSpec) -> Vec<Placement> {
    let side = |n: usize, f: usize| -> Vec<BTreeSet<usize>> {
        (0..=f.min(n))
            .flat_map(|k| itertools::Itertools::combinations(0..n, k))
            .map(|c| c.into_iter().collect())
            .collect()
    };
    let c1 = side(spec.c1.n, spec.c1.f);
    let c2 = side(spec.c2.n, spec.c2.f);
    itertools::iproduct!(c1, c2).map(|(c1, c2)| Placement { c1, c2 }).collect()
}

/// Caps adversary enumeration; larger spaces are sampled deterministically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryBudget {
    pub max_traces: usize,
    pub seed: u64,
}

impl Default for AdversaryBudget {
    fn default() -> Self {
        AdversaryBudget { max_traces: 256, seed: 0 }
    }
}

/// Crash points tried for each faulty receiver: never, before any delivery, after one.
const RECEIVER_CRASH_POINTS: [Option<usize>; 3] = [None, Some(0), Some(1)];

/// A finite, indexable family of adversary traces for one placement.
struct Basis {
    placement: Placement,
    model: FailureModel,
    /// Prescribed envelopes with a faulty endpoint, with the action that loses each.
    losable: Vec<AdversaryAction>,
    /// Faulty senders that withhold something under crash failures.
    sends_per_sender: BTreeMap<ReplicaId, usize>,
    faulty_receivers: Vec<ReplicaId>,
    injections: Vec<AdversaryAction>,
}

impl Basis {
    fn new(spec: &SystemSpec, placement: &Placement, plan: &SendPlan, value: &Value) -> Self {
        let model = spec.failure_model;
        let mut losable = Vec::new();
        for (id, send) in plan.sends.iter().enumerate() {
            if placement.is_faulty(send.sender) {
                losable.push(AdversaryAction::Drop { envelope: id });
            } else if model != FailureModel::Crash && placement.is_faulty(send.receiver) {
                losable.push(AdversaryAction::Ignore { replica: send.receiver, envelope: Some(id) });
            }
        }
        let sends_per_sender = plan
            .sends_by_sender()
            .into_iter()
            .filter(|(s, _)| placement.is_faulty(*s))
            .map(|(s, ids)| (s, ids.len()))
            .collect();
        let faulty_receivers = placement.c2.iter().map(|&i| ReplicaId::c2(i)).collect();
        let injections = if model == FailureModel::Byzantine {
            injection_basis(spec, placement, value)
        } else {
            Vec::new()
        };
        Basis { placement: placement.clone(), model, losable, sends_per_sender, faulty_receivers, injections }
    }

    fn network_size(&self) -> u128 {
        let mut size = 1u128.checked_shl(self.losable.len() as u32).unwrap_or(u128::MAX);
        if self.model == FailureModel::Crash {
            size = size.saturating_mul((RECEIVER_CRASH_POINTS.len() as u128).saturating_pow(self.faulty_receivers.len() as u32));
        }
        size
    }

    fn size(&self) -> u128 {
        self.network_size().saturating_add(2 * self.injections.len() as u128)
    }

    fn network(&self, index: u128) -> Vec<AdversaryAction> {
        let rest = index.checked_shr(self.losable.len() as u32).unwrap_or(0);
        self.network_with(|bit| bit < 128 && index >> bit & 1 == 1, rest)
    }

    fn network_with(&self, lost: impl Fn(usize) -> bool, mut rest: u128) -> Vec<AdversaryAction> {
        let mut actions: Vec<AdversaryAction> =
            self.losable.iter().enumerate().filter(|(bit, _)| lost(*bit)).map(|(_, a)| a.clone()).collect();
        if self.model == FailureModel::Crash {
            // Withheld envelopes belong to senders that crashed after their last send.
            for (&sender, &count) in &self.sends_per_sender {
                actions.push(AdversaryAction::Crash { replica: sender, after_steps: count });
            }
            let points = RECEIVER_CRASH_POINTS.len() as u128;
            for &receiver in &self.faulty_receivers {
                if let Some(after_steps) = RECEIVER_CRASH_POINTS[(rest % points) as usize] {
                    actions.push(AdversaryAction::Crash { replica: receiver, after_steps });
                }
                rest /= points;
            }
        }
        actions
    }

    fn all_lost(&self) -> Vec<AdversaryAction> {
        let mut actions = self.network_with(|_| true, 0);
        if self.model != FailureModel::Crash {
            actions.extend(self.faulty_receivers.iter().map(|&r| AdversaryAction::Ignore { replica: r, envelope: None }));
        }
        actions
    }

    fn all_lost_trace(&self) -> AdversaryTrace {
        AdversaryTrace { placement: self.placement.clone(), actions: self.all_lost() }
    }

    fn trace(&self, index: u128) -> AdversaryTrace {
        let network_size = self.network_size();
        let actions = if index < network_size {
            self.network(index)
        } else {
            let rest = index - network_size;
            let injection = self.injections[(rest / 2) as usize].clone();
            let mut actions = if rest.is_multiple_of(2) { Vec::new() } else { self.all_lost() };
            actions.push(injection);
            actions
        };
        AdversaryTrace { placement: self.placement.clone(), actions }
    }
}

/// Injection scripts with an alternative value: every subset of faulty
/// `C1` signers, every non-empty target set in `C2`, sent from a faulty
/// `C1` replica and from a faulty `C2` replica when those exist.
fn injection_basis(spec: &SystemSpec, placement: &Placement, value: &Value) -> Vec<AdversaryAction> {
    use itertools::Itertools;
    let alt = value.alternative();
    let faulty_c1: Vec<ReplicaId> = placement.c1.iter().map(|&i| ReplicaId::c1(i)).collect();
    let mut sources = Vec::new();
    if spec.signing.has_replica_signing() {
        for signers in faulty_c1.iter().copied().powerset() {
            sources.push(CertSource::ReplicaSigned(signers.clone()));
            if spec.signing == SigningScheme::EmulatedClusterSigning && !signers.is_empty() {
                sources.push(CertSource::EmulatedBundle(signers));
            }
        }
    }
    if spec.signing == SigningScheme::ClusterSigning {
        sources.push(CertSource::None);
        sources.push(CertSource::ForgedCluster);
    }
    let routes: Vec<ReplicaId> = placement
        .c1
        .first()
        .map(|&i| ReplicaId::c1(i))
        .into_iter()
        .chain(placement.c2.first().map(|&i| ReplicaId::c2(i)))
        .collect();
    let targets: Vec<Vec<ReplicaId>> = (0..spec.c2.n).map(ReplicaId::c2).powerset().filter(|t| !t.is_empty()).collect();
    let mut basis = Vec::new();
    for from in &routes {
        for certs in &sources {
            for to in &targets {
                basis.push(AdversaryAction::Inject(Injection {
                    from: *from,
                    to: to.clone(),
                    value: alt.clone(),
                    carries_payload: true,
                    certs: certs.clone(),
                }));
            }
        }
    }
    basis
}

/// Adversary traces for `placement`.
///
/// Crash: every subset of withheld envelopes from faulty senders, combined
/// with each faulty receiver crashing never, immediately, or after one
/// delivery. Omit: every subset of prescribed envelopes with a faulty
/// endpoint lost. Byzantine: the omission family plus alternative-value
/// injections (see the injection basis), each with nothing or everything
/// faulty lost. When the family exceeds `budget.max_traces`, the passive
/// trace, the all-lost trace, and the strongest injections are kept and the
/// rest is sampled with `budget.seed`.
pub fn enumerate_adversaries(
    spec: &SystemSpec,
    placement: &Placement,
    choice: &ProtocolChoice,
    value: &Value,
    budget: AdversaryBudget,
) -> Result<Vec<AdversaryTrace>, RunError> {
    let spec = spec.with_placement(placement);
    let plan = protocols::plan(&spec.view(), choice)?;
    let basis = Basis::new(&spec, placement, &plan, value);
    let total = basis.size();
    if total <= budget.max_traces as u128 {
        return Ok((0..total).map(|i| basis.trace(i)).collect());
    }
    let network_size = basis.network_size();
    let mut chosen: BTreeSet<u128> = BTreeSet::new();
    chosen.insert(0);
    chosen.insert(network_size - 1);
    if !basis.injections.is_empty() {
        // The injection with every faulty signer aimed at every receiver, both network variants.
        let strongest = strongest_injection(&basis.injections);
        chosen.insert(network_size + 2 * strongest as u128);
        chosen.insert(network_size + 2 * strongest as u128 + 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let target = budget.max_traces.max(chosen.len());
    let mut attempts = 0usize;
    while chosen.len() < target && attempts < 64 * target {
        chosen.insert(rng.random_range(0..total));
        attempts += 1;
    }
    Ok(chosen.into_iter().map(|i| basis.trace(i)).collect())
}

fn strongest_injection(injections: &[AdversaryAction]) -> usize {
    injections
        .iter()
        .enumerate()
        .max_by_key(|(i, action)| match action {
            AdversaryAction::Inject(injection) => {
                let signers = match &injection.certs {
                    CertSource::ReplicaSigned(s) | CertSource::EmulatedBundle(s) => s.len(),
                    _ => 0,
                };
                (signers, injection.to.len(), usize::MAX - i)
            }
            _ => (0, 0, 0),
        })
        .map_or(0, |(i, _)| i)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seeds: Vec<u64>,
    /// Seeds tried per trace, rotating through `seeds`; `None` tries all of them.
    pub seeds_per_trace: Option<usize>,
    pub budget: AdversaryBudget,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { seeds: (0..50).collect(), seeds_per_trace: None, budget: AdversaryBudget::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub protocol: String,
    pub trace: AdversaryTrace,
    pub schedule: Schedule,
    pub properties: Properties,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub runs: usize,
    pub placements: usize,
    pub traces: usize,
    pub seeds_used: BTreeSet<u64>,
    pub counterexample: Option<Counterexample>,
}

/// Runs every placement against its adversary family under the configured
/// seeds, stopping at the first run where a property fails.
pub fn verify(spec: &SystemSpec, choice: &ProtocolChoice, value: &Value, config: &CampaignConfig) -> Result<CampaignReport, RunError> {
    let mut report = CampaignReport::default();
    let seeds: Vec<Schedule> = if config.seeds.is_empty() {
        vec![Schedule::Fifo]
    } else {
        config.seeds.iter().map(|&s| Schedule::Seeded(s)).collect()
    };
    let per_trace = config.seeds_per_trace.unwrap_or(seeds.len()).clamp(1, seeds.len());
    let mut cursor = 0usize;
    for placement in enumerate_placements(spec) {
        report.placements += 1;
        for trace in enumerate_adversaries(spec, &placement, choice, value, config.budget)? {
            report.traces += 1;
            for _ in 0..per_trace {
                let schedule = &seeds[cursor % seeds.len()];
                cursor += 1;
                if let Schedule::Seeded(seed) = schedule {
                    report.seeds_used.insert(*seed);
                }
                let transcript = run(spec, choice, value, &trace, schedule)?;
                report.runs += 1;
                if !transcript.properties.all() {
                    report.counterexample = Some(Counterexample {
                        protocol: transcript.protocol,
                        trace,
                        schedule: schedule.clone(),
                        properties: transcript.properties,
                    });
                    return Ok(report);
                }
            }
            if per_trace == seeds.len() {
                cursor = 0;
            }
        }
    }
    Ok(report)
}

/// The harshest traces in the basis for `placement`: everything faulty
/// lost, plus (Byzantine) the strongest alternative-value injection on top.
pub fn worst_case_traces(
    spec: &SystemSpec,
    placement: &Placement,
    choice: &ProtocolChoice,
    value: &Value,
) -> Result<Vec<AdversaryTrace>, RunError> {
    let spec = spec.with_placement(placement);
    let plan = protocols::plan(&spec.view(), choice)?;
    let basis = Basis::new(&spec, placement, &plan, value);
    let network_size = basis.network_size();
    let mut traces = vec![basis.all_lost_trace()];
    if !basis.injections.is_empty() {
        traces.push(basis.trace(network_size + 2 * strongest_injection(&basis.injections) as u128 + 1));
    }
    Ok(traces)
}

/// At most `max` placements: all of them if they fit, otherwise the empty
/// placement, the lowest- and highest-indexed full placements, and a seeded sample.
pub fn sample_placements(spec: &SystemSpec, max: usize, seed: u64) -> Vec<Placement> {
    let all = enumerate_placements(spec);
    if all.len() <= max.max(1) {
        return all;
    }
    let full = |n: usize, f: usize, high: bool| -> BTreeSet<usize> {
        if high {
            (n - f..n).collect()
        } else {
            (0..f).collect()
        }
    };
    let mut chosen: BTreeSet<Placement> = BTreeSet::new();
    chosen.insert(Placement::default());
    for high in [false, true] {
        chosen.insert(Placement { c1: full(spec.c1.n, spec.c1.f, high), c2: full(spec.c2.n, spec.c2.f, high) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in rand::seq::index::sample(&mut rng, all.len(), max.min(all.len())) {
        if chosen.len() >= max {
            break;
        }
        chosen.insert(all[i].clone());
    }
    chosen.into_iter().collect()
}

/// A failure model paired with a signing scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemKind {
    pub failure_model: FailureModel,
    pub signing: SigningScheme,
}

/// Which `(f1, f2)` pairs a sweep visits for given cluster sizes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPolicy {
    /// Every pair for which the linear-cost protocols are robust:
    /// `n > 3f` on both sides, or `n > 4f` when replica certificates are used.
    #[default]
    Robust,
    /// Every pair giving a valid system.
    Valid,
    /// Every combination of the listed values that gives a valid system.
    Explicit { f1: Vec<usize>, f2: Vec<usize> },
}

fn default_value() -> Value {
    Value::new(*b"value")
}

fn default_max_placements() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    pub systems: Vec<SystemKind>,
    #[serde(default)]
    pub faults: FaultPolicy,
    #[serde(default = "default_value")]
    pub value: Value,
    #[serde(default = "default_max_placements")]
    pub max_placements: usize,
    #[serde(default)]
    pub compact_certs: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SweepGrid {
    fn fault_pairs(&self, n1: usize, n2: usize, kind: SystemKind) -> Vec<(usize, usize)> {
        let factor = match crate::bounds::preferred_flavor(kind.failure_model, kind.signing) {
            crate::bounds::Flavor::Bcs => 3,
            crate::bounds::Flavor::Brs => 4,
        };
        let (f1s, f2s): (Vec<usize>, Vec<usize>) = match &self.faults {
            FaultPolicy::Robust => ((0..n1).filter(|f| n1 > factor * f).collect(), (0..n2).filter(|f| n2 > factor * f).collect()),
            FaultPolicy::Valid => ((0..n1).collect(), (0..n2).collect()),
            FaultPolicy::Explicit { f1, f2 } => (f1.clone(), f2.clone()),
        };
        itertools::iproduct!(f1s, f2s)
            .filter(|&(f1, f2)| validate_system(&SystemSpec::sized(n1, f1, n2, f2, kind.failure_model, kind.signing)).is_empty())
            .collect()
    }

    /// Every system the sweep visits, in output order.
    pub fn cells(&self) -> Vec<SystemSpec> {
        let mut cells = Vec::new();
        for &kind in &self.systems {
            for &n1 in &self.n1 {
                for &n2 in &self.n2 {
                    for (f1, f2) in self.fault_pairs(n1, n2, kind) {
                        cells.push(SystemSpec::sized(n1, f1, n2, f2, kind.failure_model, kind.signing));
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n1: usize,
    pub f1: usize,
    pub n2: usize,
    pub f2: usize,
    pub model: FailureModel,
    pub signing: SigningScheme,
    pub protocol: String,
    pub alpha: Option<usize>,
    pub msgs: Option<usize>,
    pub value_bytes: Option<usize>,
    pub replica_sigs: Option<usize>,
    pub cluster_sigs: Option<usize>,
    pub receipt: bool,
    pub agreement: bool,
    pub confirmation: bool,
    pub max_size_units: Option<usize>,
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn sweep_cell(spec: &SystemSpec, grid: &SweepGrid) -> SweepRow {
    let mut row = SweepRow {
        n1: spec.c1.n,
        f1: spec.c1.f,
        n2: spec.c2.n,
        f2: spec.c2.f,
        model: spec.failure_model,
        signing: spec.signing,
        protocol: String::new(),
        alpha: None,
        msgs: None,
        value_bytes: None,
        replica_sigs: None,
        cluster_sigs: None,
        receipt: false,
        agreement: false,
        confirmation: false,
        max_size_units: None,
        runs: 0,
        error: None,
    };
    let outcome = (|| -> Result<(), String> {
        let mut choice = crate::bounds::select_protocol(spec).map_err(|e| e.to_string())?;
        if grid.compact_certs && choice.signing_flavor == crate::bounds::Flavor::Brs {
            choice.compact_certs = true;
        }
        let passive = run(spec, &choice, &grid.value, &AdversaryTrace::passive(spec), &Schedule::Fifo).map_err(|e| e.to_string())?;
        row.protocol = passive.protocol.clone();
        row.alpha = passive.choice.alpha;
        row.msgs = Some(passive.metrics.inter_cluster_msgs);
        row.value_bytes = Some(passive.metrics.value_bytes_total);
        row.replica_sigs = Some(passive.metrics.replica_sigs_total);
        row.cluster_sigs = Some(passive.metrics.cluster_sigs_total);
        row.max_size_units = Some(passive.metrics.max_envelope_units);
        let mut held = passive.properties;
        row.runs = 1;
        for (i, placement) in sample_placements(spec, grid.max_placements, grid.seed).iter().enumerate() {
            for trace in worst_case_traces(spec, placement, &choice, &grid.value).map_err(|e| e.to_string())? {
                let schedule = Schedule::Seeded(grid.seed.wrapping_add(i as u64));
                let t = run(spec, &choice, &grid.value, &trace, &schedule).map_err(|e| e.to_string())?;
                held.receipt &= t.properties.receipt;
                held.agreement &= t.properties.agreement;
                held.confirmation &= t.properties.confirmation;
                row.runs += 1;
            }
        }
        row.receipt = held.receipt;
        row.agreement = held.agreement;
        row.confirmation = held.confirmation;
        Ok(())
    })();
    if let Err(error) = outcome {
        row.error = Some(error);
    }
    row
}

/// Worker threads for sweeps: `CLUSTERSEND_THREADS` if set, else rayon's default.
pub fn sweep_threads() -> Option<usize> {
    std::env::var("CLUSTERSEND_THREADS").ok().and_then(|s| s.parse().ok()).filter(|&n| n > 0)
}

/// Runs the selected protocol for every cell of `grid`. A failing cell is
/// recorded in its row and the sweep continues.
pub fn sweep(grid: &SweepGrid) -> Vec<SweepRow> {
    use rayon::prelude::*;
    let cells = grid.cells();
    let work = || cells.par_iter().map(|spec| sweep_cell(spec, grid)).collect();
    match sweep_threads().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

/// CSV columns of a sweep, in order.
pub const SWEEP_COLUMNS: [&str; 15] = [
    "n1", "f1", "n2", "f2", "model", "signing", "protocol", "alpha", "msgs", "value_bytes", "replica_sigs", "cluster_sigs", "receipt",
    "agreement", "confirmation",
];

/// Writes `rows` as CSV with a header, even when `rows` is empty.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(SWEEP_COLUMNS)?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in rows {
        writer.write_record([
            row.n1.to_string(),
            row.f1.to_string(),
            row.n2.to_string(),
            row.f2.to_string(),
            row.model.to_string(),
            row.signing.to_string(),
            row.protocol.clone(),
            opt(row.alpha),
            opt(row.msgs),
            opt(row.value_bytes),
            opt(row.replica_sigs),
            opt(row.cluster_sigs),
            row.receipt.to_string(),
            row.agreement.to_string(),
            row.confirmation.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `rows` as JSON lines, one object per row.
pub fn write_sweep_jsonl<W: std::io::Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
