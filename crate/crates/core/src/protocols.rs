//! The six cluster-sending protocols as send plans plus receiver logic.
//!
//! A [`SendPlan`] is built from the redacted [`SystemView`] only: which
//! `C1` replica sends to which `C2` replica, what certificate each envelope
//! carries, and which rule receivers apply. Subsets are always the
//! lowest-indexed replicas and bijections pair in index order.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError, Flavor, Mutation, ProtocolChoice, ProtocolKind};
use crate::certs::{CertLedger, Certificate, SizeBreakdown, Signer, Value};
use crate::model::{ClusterId, ReplicaId, SigningScheme, SystemView};

/// One message, inter-cluster (`C1 -> C2`) or local (`C2 -> C2`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: usize,
    pub sender: ReplicaId,
    pub receiver: ReplicaId,
    pub value: Value,
    /// False for certificate-only envelopes of the compact variants.
    pub carries_payload: bool,
    pub certs: Vec<Certificate>,
    pub inter_cluster: bool,
    pub size: SizeBreakdown,
}

impl Envelope {
    pub fn new(
        id: usize,
        sender: ReplicaId,
        receiver: ReplicaId,
        value: Value,
        carries_payload: bool,
        certs: Vec<Certificate>,
    ) -> Self {
        // The certificate subject is the value itself, so it only costs
        // bytes when the payload travels along.
        let signatures: SizeBreakdown = certs.iter().map(|c| c.size).sum();
        let size = SizeBreakdown {
            value_bytes: if carries_payload { value.len() } else { 0 },
            replica_sig_count: signatures.replica_sig_count,
            cluster_sig_count: signatures.cluster_sig_count,
        };
        Envelope { id, sender, receiver, value, carries_payload, certs, inter_cluster: sender.cluster != receiver.cluster, size }
    }
}

/// A c-partition: `parts` of exactly `c` replicas each plus a smaller `remainder`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub parts: Vec<Vec<ReplicaId>>,
    pub remainder: Vec<ReplicaId>,
    pub c: usize,
}

/// Splits `replicas` into consecutive parts of size `c` in the given order.
///
/// # Panics
/// If `c == 0`.
pub fn c_partition(replicas: &[ReplicaId], c: usize) -> Partition {
    assert!(c > 0, "part size must be positive");
    let full = replicas.len() / c * c;
    Partition {
        parts: replicas[..full].chunks(c).map(<[ReplicaId]>::to_vec).collect(),
        remainder: replicas[full..].to_vec(),
        c,
    }
}

impl Partition {
    /// Full parts followed by the remainder, if non-empty.
    pub fn all_parts(&self) -> impl Iterator<Item = &[ReplicaId]> {
        self.parts
            .iter()
            .map(Vec::as_slice)
            .chain((!self.remainder.is_empty()).then_some(self.remainder.as_slice()))
    }
}

/// Pairs distinct sources with distinct targets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bijection {
    pub pairs: Vec<(ReplicaId, ReplicaId)>,
}

impl Bijection {
    /// Pairs `sources[i]` with `targets[i]`.
    ///
    /// # Panics
    /// If the lengths differ or either side repeats a replica.
    pub fn index_order(sources: &[ReplicaId], targets: &[ReplicaId]) -> Self {
        assert_eq!(sources.len(), targets.len(), "bijection sides differ in size");
        let distinct = |side: &[ReplicaId]| side.iter().collect::<HashSet<_>>().len() == side.len();
        assert!(distinct(sources) && distinct(targets), "bijection sides must be sets");
        Bijection { pairs: sources.iter().copied().zip(targets.iter().copied()).collect() }
    }
}

fn lowest(cluster: ClusterId, count: usize) -> Vec<ReplicaId> {
    (0..count).map(|i| ReplicaId::new(cluster, i)).collect()
}

/// What each sender attaches to its envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertForm {
    /// Crash and omission systems without signatures.
    None,
    /// A cluster certificate for `C1`, native or emulated.
    Cluster,
    /// The sender's own replica certificate.
    OwnReplica,
}

/// When a `C2` replica considers a value received.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiveRule {
    /// Any relayed payload (no certificates in the system).
    Payload,
    /// A relayed payload with a valid `C1` cluster certificate.
    ClusterCertificate,
    /// A relayed payload and replica certificates from this many distinct `C1` replicas.
    ReplicaThreshold(usize),
}

impl ReceiveRule {
    /// Whether certificates by `signer` count under this rule.
    pub fn admits(self, signer: &Signer) -> bool {
        match self {
            ReceiveRule::Payload => false,
            ReceiveRule::ClusterCertificate => matches!(signer, Signer::Cluster(_) | Signer::EmulatedCluster(_)),
            ReceiveRule::ReplicaThreshold(_) => matches!(signer, Signer::Replica(_)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSend {
    pub sender: ReplicaId,
    pub receiver: ReplicaId,
    pub carries_payload: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendPlan {
    pub choice: ProtocolChoice,
    pub sends: Vec<PlannedSend>,
    pub cert_form: CertForm,
    pub receive_rule: ReceiveRule,
}

impl SendPlan {
    /// Indices into `sends` grouped by sender, in send order.
    pub fn sends_by_sender(&self) -> BTreeMap<ReplicaId, Vec<usize>> {
        let mut by_sender: BTreeMap<ReplicaId, Vec<usize>> = BTreeMap::new();
        for (i, send) in self.sends.iter().enumerate() {
            by_sender.entry(send.sender).or_default().push(i);
        }
        by_sender
    }

    pub fn senders(&self) -> BTreeSet<ReplicaId> {
        self.sends.iter().map(|s| s.sender).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("{protocol} requires {condition}")]
    Precondition { protocol: String, condition: String },
    #[error("{protocol}: alpha = {alpha} exceeds the {cluster} size {n}")]
    AlphaTooLarge { protocol: String, alpha: usize, cluster: ClusterId, n: usize },
    #[error("{protocol}: alpha = {alpha} is below the bound {bound}")]
    AlphaBelowBound { protocol: String, alpha: usize, bound: usize },
    #[error("{protocol}: the {flavor} flavor cannot run with signing scheme {signing}")]
    UnsupportedSigning { protocol: String, flavor: Flavor, signing: SigningScheme },
    #[error("{protocol}: compact certificates only apply to the brs flavor")]
    CompactUnsupported { protocol: String },
    #[error("{protocol}: the {mutation:?} mutation does not apply")]
    MutationUnsupported { protocol: String, mutation: Mutation },
    #[error(transparent)]
    Bound(#[from] BoundError),
}

fn require(ok: bool, choice: &ProtocolChoice, condition: impl Into<String>) -> Result<(), PlanError> {
    if ok {
        Ok(())
    } else {
        Err(PlanError::Precondition { protocol: choice.label(), condition: condition.into() })
    }
}

/// Builds the send plan for `choice`. Partitioned protocols without an
/// explicit `alpha` use the matching bound.
pub fn plan(view: &SystemView, choice: &ProtocolChoice) -> Result<SendPlan, PlanError> {
    let mut choice = *choice;
    if let Some(fixed) = choice.protocol.fixed_flavor() {
        choice.signing_flavor = fixed;
    }
    let (n1, f1, n2, f2) = (view.c1.n, view.c1.f, view.c2.n, view.c2.f);
    let flavor = choice.signing_flavor;
    let label = choice.label();

    let (cert_form, receive_rule) = match flavor {
        Flavor::Bcs => match view.signing {
            SigningScheme::None => (CertForm::None, ReceiveRule::Payload),
            _ => (CertForm::Cluster, ReceiveRule::ClusterCertificate),
        },
        Flavor::Brs => {
            if !view.signing.has_replica_signing() {
                return Err(PlanError::UnsupportedSigning { protocol: label, flavor, signing: view.signing });
            }
            let threshold = if choice.mutation == Some(Mutation::WeakThreshold) { f1 } else { f1 + 1 };
            (CertForm::OwnReplica, ReceiveRule::ReplicaThreshold(threshold))
        }
    };
    if choice.compact_certs && flavor != Flavor::Brs {
        return Err(PlanError::CompactUnsupported { protocol: label });
    }
    match choice.mutation {
        Some(Mutation::WeakThreshold) if flavor != Flavor::Brs => {
            return Err(PlanError::MutationUnsupported { protocol: label, mutation: Mutation::WeakThreshold });
        }
        Some(Mutation::ShrinkBijection) if !matches!(choice.protocol, ProtocolKind::BsBcs | ProtocolKind::BsBrs) => {
            return Err(PlanError::MutationUnsupported { protocol: label, mutation: Mutation::ShrinkBijection });
        }
        _ => {}
    }

    require(n1 > 2 * f1, &choice, "n1 > 2 f1")?;
    // (pairs, payload-bearing prefix) where the prefix is the same shape's
    // crash-failure schedule, used by the compact variants.
    let (pairs, payload_prefix): (Vec<(ReplicaId, ReplicaId)>, usize) = match choice.protocol {
        ProtocolKind::RbBcs | ProtocolKind::RbBrs => {
            require(n2 > f2, &choice, "n2 > f2")?;
            let senders = if flavor == Flavor::Brs { 2 * f1 + 1 } else { f1 + 1 };
            let pairs = itertools::iproduct!(lowest(ClusterId::C1, senders), lowest(ClusterId::C2, f2 + 1)).collect();
            (pairs, (f1 + 1) * (f2 + 1))
        }
        ProtocolKind::BsBcs | ProtocolKind::BsBrs => {
            let faults = if flavor == Flavor::Brs { 2 * f1 + f2 } else { f1 + f2 };
            require(n1 > faults, &choice, format!("n1 > {faults}"))?;
            require(n2 > faults, &choice, format!("n2 > {faults}"))?;
            let mut size = faults + 1;
            if choice.mutation == Some(Mutation::ShrinkBijection) {
                size -= 1;
            }
            let bijection = Bijection::index_order(&lowest(ClusterId::C1, size), &lowest(ClusterId::C2, size));
            (bijection.pairs, f1 + f2 + 1)
        }
        ProtocolKind::Spbs => {
            let crash = bounds::sigma1(view.c1, view.c2)?;
            let bound = match flavor {
                Flavor::Bcs => crash.clone(),
                Flavor::Brs => bounds::tau1(view.c1, view.c2)?,
            };
            let alpha = choice.alpha.unwrap_or(bound.value);
            check_alpha(&choice, alpha, bound.value, ClusterId::C1, n1)?;
            choice.alpha = Some(alpha);
            // An n2-partition of the first alpha senders; every part is paired
            // with the lowest-indexed receivers of the same size.
            let partition = c_partition(&lowest(ClusterId::C1, alpha), n2);
            let pairs = partition
                .all_parts()
                .flat_map(|part| Bijection::index_order(part, &lowest(ClusterId::C2, part.len())).pairs)
                .collect();
            (pairs, crash.value)
        }
        ProtocolKind::Rpbs => {
            let crash = bounds::sigma2(view.c1, view.c2)?;
            let bound = match flavor {
                Flavor::Bcs => crash.clone(),
                Flavor::Brs => bounds::tau2(view.c1, view.c2)?,
            };
            let alpha = choice.alpha.unwrap_or(bound.value);
            check_alpha(&choice, alpha, bound.value, ClusterId::C2, n2)?;
            choice.alpha = Some(alpha);
            let partition = c_partition(&lowest(ClusterId::C2, alpha), n1);
            let pairs = partition
                .all_parts()
                .flat_map(|part| Bijection::index_order(&lowest(ClusterId::C1, part.len()), part).pairs)
                .collect();
            (pairs, crash.value)
        }
    };

    let sends = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (sender, receiver))| PlannedSend { sender, receiver, carries_payload: !choice.compact_certs || i < payload_prefix })
        .collect();
    Ok(SendPlan { choice, sends, cert_form, receive_rule })
}

fn check_alpha(choice: &ProtocolChoice, alpha: usize, bound: usize, cluster: ClusterId, n: usize) -> Result<(), PlanError> {
    if alpha > n {
        return Err(PlanError::AlphaTooLarge { protocol: choice.label(), alpha, cluster, n });
    }
    if alpha < bound {
        return Err(PlanError::AlphaBelowBound { protocol: choice.label(), alpha, bound });
    }
    Ok(())
}

/// Certificates a `C1` sender attaches under `form`.
pub fn sender_certs(
    ledger: &mut CertLedger,
    form: CertForm,
    sender: ReplicaId,
    value: &Value,
) -> Result<Vec<Certificate>, crate::certs::IntegrityError> {
    Ok(match form {
        CertForm::None => Vec::new(),
        CertForm::Cluster => vec![ledger.sign_cluster(ClusterId::C1, value)?],
        CertForm::OwnReplica => vec![ledger.sign_replica(sender, value)?],
    })
}

/// What a `C2` replica does after handling an envelope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reaction {
    /// Nothing to forward.
    Quiet,
    /// Relay this payload and these certificates to every `C2` replica, itself included.
    Relay { value: Value, carries_payload: bool, certs: Vec<Certificate> },
}

/// Per-replica state of a `C2` receiver.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiverState {
    pub received: BTreeSet<Value>,
    /// Distinct `C1` signers seen per value (replica-certificate rule).
    pub tallies: BTreeMap<Value, BTreeSet<ReplicaId>>,
    /// Values whose payload arrived through a local relay.
    pub payloads: BTreeSet<Value>,
    #[serde(skip)]
    relayed: HashSet<(Value, bool, Vec<Signer>)>,
}

impl ReceiverState {
    pub fn tally(&self, value: &Value) -> usize {
        self.tallies.get(value).map_or(0, BTreeSet::len)
    }

    fn valid_certs(certs: &[Certificate], value: &Value, rule: ReceiveRule, ledger: &CertLedger) -> Vec<Certificate> {
        certs
            .iter()
            .filter(|c| rule.admits(&c.signer) && ledger.verify(c, value, ClusterId::C1))
            .cloned()
            .collect()
    }

    /// Handles an envelope from `C1`: verify, then relay once per distinct content.
    pub fn on_remote(&mut self, envelope: &Envelope, rule: ReceiveRule, ledger: &CertLedger) -> Reaction {
        let value = &envelope.value;
        let certs = match rule {
            ReceiveRule::Payload => Vec::new(),
            ReceiveRule::ClusterCertificate | ReceiveRule::ReplicaThreshold(_) => {
                let certs = Self::valid_certs(&envelope.certs, value, rule, ledger);
                if certs.is_empty() {
                    return Reaction::Quiet;
                }
                certs
            }
        };
        let key = (value.clone(), envelope.carries_payload, certs.iter().map(|c| c.signer.clone()).collect());
        if !self.relayed.insert(key) {
            return Reaction::Quiet;
        }
        Reaction::Relay { value: value.clone(), carries_payload: envelope.carries_payload, certs }
    }

    /// Handles a local relay; returns true when `value` newly became received.
    pub fn on_local(&mut self, envelope: &Envelope, rule: ReceiveRule, ledger: &CertLedger) -> bool {
        let value = &envelope.value;
        match rule {
            ReceiveRule::Payload => envelope.carries_payload && self.received.insert(value.clone()),
            ReceiveRule::ClusterCertificate => {
                envelope.carries_payload
                    && !Self::valid_certs(&envelope.certs, value, rule, ledger).is_empty()
                    && self.received.insert(value.clone())
            }
            ReceiveRule::ReplicaThreshold(threshold) => {
                for cert in &envelope.certs {
                    if let Signer::Replica(signer) = cert.signer {
                        if ledger.verify(cert, value, ClusterId::C1) {
                            self.tallies.entry(value.clone()).or_default().insert(signer);
                        }
                    }
                }
                if envelope.carries_payload {
                    self.payloads.insert(value.clone());
                }
                self.payloads.contains(value)
                    && self.tally(value) >= threshold
                    && self.received.insert(value.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterSpec, FailureModel, SystemSpec};

    fn view(n1: usize, f1: usize, n2: usize, f2: usize, signing: SigningScheme) -> SystemView {
        SystemSpec::sized(n1, f1, n2, f2, FailureModel::Byzantine, signing).view()
    }

    fn count(view: &SystemView, choice: ProtocolChoice) -> usize {
        plan(view, &choice).unwrap().sends.len()
    }

    #[test]
    fn partition_examples() {
        let eleven = lowest(ClusterId::C1, 11);
        let p = c_partition(&eleven, 4);
        assert_eq!(p.parts, vec![eleven[0..4].to_vec(), eleven[4..8].to_vec()]);
        assert_eq!(p.remainder, eleven[8..].to_vec());

        let p = c_partition(&eleven, 11);
        assert_eq!(p.parts.len(), 1);
        assert!(p.remainder.is_empty());

        let p = c_partition(&lowest(ClusterId::C2, 7), 3);
        assert_eq!((p.parts.len(), p.remainder.len()), (2, 1));
        assert_eq!(p.all_parts().count(), 3);
    }

    #[test]
    #[should_panic(expected = "sets")]
    fn bijection_rejects_repeats() {
        let a = [ReplicaId::c1(0), ReplicaId::c1(0)];
        Bijection::index_order(&a, &lowest(ClusterId::C2, 2));
    }

    #[test]
    fn rb_counts() {
        let v = view(5, 2, 4, 1, SigningScheme::ClusterSigning);
        assert_eq!(count(&v, ProtocolChoice::fixed(ProtocolKind::RbBcs)), 6);
        let v = view(5, 2, 4, 1, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::fixed(ProtocolKind::RbBrs)), 10);
        let v = view(3, 0, 3, 0, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::fixed(ProtocolKind::RbBrs)), 1);
        let p = plan(&v, &ProtocolChoice::fixed(ProtocolKind::RbBrs)).unwrap();
        assert_eq!(p.receive_rule, ReceiveRule::ReplicaThreshold(1));
    }

    #[test]
    fn bs_counts() {
        let v = view(8, 3, 7, 2, SigningScheme::ClusterSigning);
        let p = plan(&v, &ProtocolChoice::fixed(ProtocolKind::BsBcs)).unwrap();
        assert_eq!(p.sends.len(), 6);
        assert!(p.sends.iter().enumerate().all(|(i, s)| s.sender.index == i && s.receiver.index == i));

        let v = view(5, 1, 5, 1, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::fixed(ProtocolKind::BsBrs)), 4);
        let v = view(1, 0, 1, 0, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::fixed(ProtocolKind::BsBrs)), 1);
    }

    #[test]
    fn compact_bs_brs_marks_payload_prefix() {
        let v = view(9, 2, 9, 2, SigningScheme::ReplicaSigning);
        let p = plan(&v, &ProtocolChoice::fixed(ProtocolKind::BsBrs).with_compact_certs(true)).unwrap();
        assert_eq!(p.sends.len(), 7);
        assert_eq!(p.sends.iter().filter(|s| s.carries_payload).count(), 5);
        let err = plan(&v, &ProtocolChoice::fixed(ProtocolKind::BsBcs).with_compact_certs(true));
        assert!(matches!(err, Err(PlanError::CompactUnsupported { .. })));
    }

    #[test]
    fn bs_preconditions() {
        let v = view(13, 4, 4, 1, SigningScheme::ClusterSigning);
        assert!(matches!(plan(&v, &ProtocolChoice::fixed(ProtocolKind::BsBcs)), Err(PlanError::Precondition { .. })));
        let v = view(5, 1, 5, 1, SigningScheme::ClusterSigning);
        assert!(matches!(
            plan(&v, &ProtocolChoice::fixed(ProtocolKind::BsBrs)),
            Err(PlanError::UnsupportedSigning { .. })
        ));
    }

    #[test]
    fn spbs_layout() {
        let v = view(13, 4, 4, 1, SigningScheme::ClusterSigning);
        let p = plan(&v, &ProtocolChoice::for_system(ProtocolKind::Spbs, Flavor::Bcs, &v).unwrap()).unwrap();
        assert_eq!(p.sends.len(), 7);
        for (k, s) in p.sends.iter().enumerate() {
            assert_eq!((s.sender.index, s.receiver.index), (k, k % 4));
        }

        let v = view(17, 4, 5, 1, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::for_system(ProtocolKind::Spbs, Flavor::Brs, &v).unwrap()), 12);
        let v = view(3, 0, 3, 0, SigningScheme::ClusterSigning);
        assert_eq!(count(&v, ProtocolChoice::for_system(ProtocolKind::Spbs, Flavor::Bcs, &v).unwrap()), 1);
    }

    #[test]
    fn rpbs_layout() {
        let v = view(4, 1, 13, 4, SigningScheme::ClusterSigning);
        let p = plan(&v, &ProtocolChoice::for_system(ProtocolKind::Rpbs, Flavor::Bcs, &v).unwrap()).unwrap();
        assert_eq!(p.sends.len(), 7);
        for (k, s) in p.sends.iter().enumerate() {
            assert_eq!((s.sender.index, s.receiver.index), (k % 4, k));
        }
        let v = view(5, 1, 9, 2, SigningScheme::ReplicaSigning);
        assert_eq!(count(&v, ProtocolChoice::for_system(ProtocolKind::Rpbs, Flavor::Brs, &v).unwrap()), 5);
    }

    #[test]
    fn alpha_checks() {
        let v = view(4, 1, 13, 4, SigningScheme::ClusterSigning);
        let too_big = ProtocolChoice::partitioned(ProtocolKind::Spbs, Flavor::Bcs, 5);
        assert!(matches!(plan(&v, &too_big), Err(PlanError::AlphaTooLarge { .. })));
        let v = view(13, 4, 4, 1, SigningScheme::ClusterSigning);
        let too_small = ProtocolChoice::partitioned(ProtocolKind::Spbs, Flavor::Bcs, 6);
        assert!(matches!(plan(&v, &too_small), Err(PlanError::AlphaBelowBound { .. })));
    }

    #[test]
    fn plan_ignores_fault_placement() {
        let a = SystemSpec::new(ClusterSpec::with_faulty(7, 2, [0, 1]), ClusterSpec::new(7, 2), FailureModel::Crash, SigningScheme::None);
        let b = SystemSpec::new(ClusterSpec::new(7, 2), ClusterSpec::with_faulty(7, 2, [5, 6]), FailureModel::Crash, SigningScheme::None);
        let choice = ProtocolChoice::fixed(ProtocolKind::BsBcs);
        assert_eq!(plan(&a.view(), &choice), plan(&b.view(), &choice));
    }

    fn brs_fixture() -> (CertLedger, Value) {
        let spec = SystemSpec::new(
            ClusterSpec::with_faulty(5, 2, [0, 1]),
            ClusterSpec::new(4, 1),
            FailureModel::Byzantine,
            SigningScheme::ReplicaSigning,
        );
        let mut ledger = CertLedger::new(&spec);
        let v = Value::new(*b"v");
        ledger.agree(ClusterId::C1, &v);
        (ledger, v)
    }

    #[test]
    fn replica_threshold_counts_distinct_signers() {
        let (mut ledger, v) = brs_fixture();
        let rule = ReceiveRule::ReplicaThreshold(3);
        let mut state = ReceiverState::default();
        let me = ReplicaId::c2(0);
        for i in 0..3 {
            let cert = ledger.sign_replica(ReplicaId::c1(i), &v).unwrap();
            let remote = Envelope::new(i, ReplicaId::c1(i), me, v.clone(), true, vec![cert.clone()]);
            assert!(matches!(state.on_remote(&remote, rule, &ledger), Reaction::Relay { .. }));
            // Same content again is not relayed twice.
            assert_eq!(state.on_remote(&remote, rule, &ledger), Reaction::Quiet);
            let local = Envelope::new(10 + i, me, me, v.clone(), true, vec![cert]);
            assert_eq!(state.on_local(&local, rule, &ledger), i == 2);
        }
        assert_eq!(state.tally(&v), 3);
    }

    #[test]
    fn forged_alternative_never_reaches_threshold() {
        let (mut ledger, v) = brs_fixture();
        let alt = v.alternative();
        let rule = ReceiveRule::ReplicaThreshold(3);
        let mut state = ReceiverState::default();
        let me = ReplicaId::c2(1);
        let mut certs: Vec<Certificate> = (0..2).map(|i| ledger.sign_replica(ReplicaId::c1(i), &alt).unwrap()).collect();
        // A certificate by a non-faulty replica that was never signed.
        certs.push(Certificate::unchecked(alt.clone(), Signer::Replica(ReplicaId::c1(4))));
        let local = Envelope::new(0, ReplicaId::c2(0), me, alt.clone(), true, certs);
        assert!(!state.on_local(&local, rule, &ledger));
        assert_eq!(state.tally(&alt), 2);
    }

    #[test]
    fn cluster_rule_rejects_single_replica_certificates() {
        let spec = SystemSpec::new(
            ClusterSpec::with_faulty(3, 1, [0]),
            ClusterSpec::new(1, 0),
            FailureModel::Byzantine,
            SigningScheme::EmulatedClusterSigning,
        );
        let mut ledger = CertLedger::new(&spec);
        let v = Value::new(*b"v");
        ledger.agree(ClusterId::C1, &v);
        let alt = v.alternative();
        let cert = ledger.sign_replica(ReplicaId::c1(0), &alt).unwrap();
        let me = ReplicaId::c2(0);
        let mut state = ReceiverState::default();
        let remote = Envelope::new(0, ReplicaId::c1(0), me, alt.clone(), true, vec![cert.clone()]);
        assert_eq!(state.on_remote(&remote, ReceiveRule::ClusterCertificate, &ledger), Reaction::Quiet);
        let local = Envelope::new(1, me, me, alt, true, vec![cert]);
        assert!(!state.on_local(&local, ReceiveRule::ClusterCertificate, &ledger));
    }

    #[test]
    fn envelope_size_counts_payload_and_signatures() {
        let (mut ledger, v) = brs_fixture();
        let cert = ledger.sign_replica(ReplicaId::c1(2), &v).unwrap();
        let full = Envelope::new(0, ReplicaId::c1(2), ReplicaId::c2(0), v.clone(), true, vec![cert.clone()]);
        assert!(full.inter_cluster);
        assert_eq!(full.size, SizeBreakdown { value_bytes: 1, replica_sig_count: 1, cluster_sig_count: 0 });
        let compact = Envelope::new(1, ReplicaId::c1(2), ReplicaId::c2(0), v, false, vec![cert]);
        assert_eq!(compact.size.total(1), 1);
    }
}
