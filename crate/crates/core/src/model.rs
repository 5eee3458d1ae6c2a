//! Replicas, clusters, fault assignments, and system-level validity checks.
//!
//! A [`SystemSpec`] always describes exactly two clusters: the sending
//! cluster `C1` and the receiving cluster `C2`. Each [`ClusterSpec`] carries
//! the replica count `n`, the tolerated fault bound `f`, and the concrete set
//! of faulty replicas for a run. Protocol code only ever sees the redacted
//! [`SystemView`], which exposes `n` and `f` but not which replicas are faulty.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the two clusters of a [`SystemSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ClusterId {
    /// The sending cluster.
    C1,
    /// The receiving cluster.
    C2,
}

impl ClusterId {
    pub fn other(self) -> ClusterId {
        match self {
            ClusterId::C1 => ClusterId::C2,
            ClusterId::C2 => ClusterId::C1,
        }
    }
}

impl From<ClusterId> for u8 {
    fn from(id: ClusterId) -> u8 {
        match id {
            ClusterId::C1 => 1,
            ClusterId::C2 => 2,
        }
    }
}

impl TryFrom<u8> for ClusterId {
    type Error = String;

    fn try_from(raw: u8) -> Result<Self, Self::Error> {
        match raw {
            1 => Ok(ClusterId::C1),
            2 => Ok(ClusterId::C2),
            other => Err(format!("cluster index must be 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", u8::from(*self))
    }
}

/// A replica, identified by its cluster and a dense ordinal `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReplicaId {
    pub cluster: ClusterId,
    pub index: usize,
}

impl ReplicaId {
    pub const fn new(cluster: ClusterId, index: usize) -> Self {
        ReplicaId { cluster, index }
    }

    pub const fn c1(index: usize) -> Self {
        ReplicaId::new(ClusterId::C1, index)
    }

    pub const fn c2(index: usize) -> Self {
        ReplicaId::new(ClusterId::C2, index)
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cluster, self.index)
    }
}

/// Failure models, ordered by adversary power: `Crash < Omit < Byzantine`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureModel {
    Crash,
    Omit,
    Byzantine,
}

impl FailureModel {
    pub const ALL: [FailureModel; 3] = [FailureModel::Crash, FailureModel::Omit, FailureModel::Byzantine];

    pub fn name(self) -> &'static str {
        match self {
            FailureModel::Crash => "crash",
            FailureModel::Omit => "omit",
            FailureModel::Byzantine => "byzantine",
        }
    }
}

impl fmt::Display for FailureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The certificate capability a system provides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigningScheme {
    /// No certificates. Only meaningful when faulty replicas never forge.
    None,
    ReplicaSigning,
    ClusterSigning,
    /// Cluster certificates built from `f + 1` replica certificates.
    EmulatedClusterSigning,
}

impl SigningScheme {
    pub const ALL: [SigningScheme; 4] = [
        SigningScheme::None,
        SigningScheme::ReplicaSigning,
        SigningScheme::ClusterSigning,
        SigningScheme::EmulatedClusterSigning,
    ];

    /// Whether individual replicas can produce replica certificates.
    pub fn has_replica_signing(self) -> bool {
        matches!(self, SigningScheme::ReplicaSigning | SigningScheme::EmulatedClusterSigning)
    }

    /// Whether cluster certificates are available, natively or emulated.
    pub fn has_cluster_certificates(self) -> bool {
        !matches!(self, SigningScheme::None)
    }

    /// Whether cluster certificates are assembled from replica certificates.
    pub fn emulates_cluster_signing(self) -> bool {
        matches!(self, SigningScheme::ReplicaSigning | SigningScheme::EmulatedClusterSigning)
    }

    pub fn name(self) -> &'static str {
        match self {
            SigningScheme::None => "none",
            SigningScheme::ReplicaSigning => "replica_signing",
            SigningScheme::ClusterSigning => "cluster_signing",
            SigningScheme::EmulatedClusterSigning => "emulated_cluster_signing",
        }
    }
}

impl fmt::Display for SigningScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Replica counts of an arbitrary replica set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Census {
    pub n: usize,
    pub f: usize,
    pub nf: usize,
}

/// One cluster: `n` replicas, a fault bound `f`, and the faulty replicas of this run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub faulty: BTreeSet<usize>,
}

impl ClusterSpec {
    /// A cluster with fault bound `f` and no faulty replicas assigned yet.
    pub fn new(n: usize, f: usize) -> Self {
        ClusterSpec { n, f, faulty: BTreeSet::new() }
    }

    pub fn with_faulty(n: usize, f: usize, faulty: impl IntoIterator<Item = usize>) -> Self {
        ClusterSpec { n, f, faulty: faulty.into_iter().collect() }
    }

    /// Guaranteed number of non-faulty replicas, `n - f`.
    pub fn nf(&self) -> usize {
        self.n.saturating_sub(self.f)
    }

    pub fn is_faulty(&self, index: usize) -> bool {
        self.faulty.contains(&index)
    }

    pub fn view(&self) -> ClusterView {
        ClusterView { n: self.n, f: self.f }
    }

    /// Counts of the given replica indices under this cluster's fault assignment.
    pub fn census(&self, subset: impl IntoIterator<Item = usize>) -> Census {
        let mut n = 0;
        let mut f = 0;
        for index in subset {
            n += 1;
            if self.is_faulty(index) {
                f += 1;
            }
        }
        Census { n, f, nf: n - f }
    }
}

/// What a protocol is allowed to know about a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterView {
    pub n: usize,
    pub f: usize,
}

impl ClusterView {
    pub fn nf(&self) -> usize {
        self.n.saturating_sub(self.f)
    }
}

/// A concrete choice of faulty replicas in both clusters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub c1: BTreeSet<usize>,
    pub c2: BTreeSet<usize>,
}

impl Placement {
    pub fn new(c1: impl IntoIterator<Item = usize>, c2: impl IntoIterator<Item = usize>) -> Self {
        Placement { c1: c1.into_iter().collect(), c2: c2.into_iter().collect() }
    }

    pub fn cluster(&self, id: ClusterId) -> &BTreeSet<usize> {
        match id {
            ClusterId::C1 => &self.c1,
            ClusterId::C2 => &self.c2,
        }
    }

    pub fn is_faulty(&self, replica: ReplicaId) -> bool {
        self.cluster(replica.cluster).contains(&replica.index)
    }

    pub fn faulty_replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.c1
            .iter()
            .map(|&i| ReplicaId::c1(i))
            .chain(self.c2.iter().map(|&i| ReplicaId::c2(i)))
    }
}

/// A two-cluster system: sender `c1`, receiver `c2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub c1: ClusterSpec,
    pub c2: ClusterSpec,
    pub failure_model: FailureModel,
    pub signing: SigningScheme,
}

impl SystemSpec {
    pub fn new(c1: ClusterSpec, c2: ClusterSpec, failure_model: FailureModel, signing: SigningScheme) -> Self {
        SystemSpec { c1, c2, failure_model, signing }
    }

    /// Shorthand for a fault-free placement with the given sizes and bounds.
    pub fn sized(n1: usize, f1: usize, n2: usize, f2: usize, failure_model: FailureModel, signing: SigningScheme) -> Self {
        SystemSpec::new(ClusterSpec::new(n1, f1), ClusterSpec::new(n2, f2), failure_model, signing)
    }

    pub fn cluster(&self, id: ClusterId) -> &ClusterSpec {
        match id {
            ClusterId::C1 => &self.c1,
            ClusterId::C2 => &self.c2,
        }
    }

    pub fn is_faulty(&self, replica: ReplicaId) -> bool {
        self.cluster(replica.cluster).is_faulty(replica.index)
    }

    pub fn replicas(&self, id: ClusterId) -> impl Iterator<Item = ReplicaId> {
        (0..self.cluster(id).n).map(move |i| ReplicaId::new(id, i))
    }

    pub fn placement(&self) -> Placement {
        Placement { c1: self.c1.faulty.clone(), c2: self.c2.faulty.clone() }
    }

    /// The same system with a different fault assignment.
    pub fn with_placement(&self, placement: &Placement) -> SystemSpec {
        let mut spec = self.clone();
        spec.c1.faulty = placement.c1.clone();
        spec.c2.faulty = placement.c2.clone();
        spec
    }

    /// The redacted view handed to protocol code.
    pub fn view(&self) -> SystemView {
        SystemView {
            c1: self.c1.view(),
            c2: self.c2.view(),
            failure_model: self.failure_model,
            signing: self.signing,
        }
    }
}

/// A [`SystemSpec`] with the fault assignment removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemView {
    pub c1: ClusterView,
    pub c2: ClusterView,
    pub failure_model: FailureModel,
    pub signing: SigningScheme,
}

impl SystemView {
    pub fn cluster(&self, id: ClusterId) -> ClusterView {
        match id {
            ClusterId::C1 => self.c1,
            ClusterId::C2 => self.c2,
        }
    }
}

/// A constraint a [`SystemSpec`] fails to satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    #[error("{cluster}: faulty index {index} is outside 0..{n}")]
    FaultyIndexOutOfRange { cluster: ClusterId, index: usize, n: usize },
    #[error("{cluster}: {assigned} faulty replicas assigned but the fault bound is {f}")]
    TooManyFaulty { cluster: ClusterId, assigned: usize, f: usize },
    #[error("{cluster}: needs at least one non-faulty replica (n = {n}, f = {f})")]
    NoNonFaulty { cluster: ClusterId, n: usize, f: usize },
    #[error("sending cluster cannot reach agreement: n1 = {n1} is not greater than 2 * f1 = {}", 2 * f1)]
    SenderAgreement { n1: usize, f1: usize },
    #[error("signing scheme `none` cannot be combined with Byzantine failures")]
    UnsignedByzantine,
}

/// Returns every constraint `spec` violates; an empty list means the system is valid.
pub fn validate_system(spec: &SystemSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    for id in [ClusterId::C1, ClusterId::C2] {
        let cluster = spec.cluster(id);
        for &index in &cluster.faulty {
            if index >= cluster.n {
                violations.push(Violation::FaultyIndexOutOfRange { cluster: id, index, n: cluster.n });
            }
        }
        if cluster.faulty.len() > cluster.f {
            violations.push(Violation::TooManyFaulty { cluster: id, assigned: cluster.faulty.len(), f: cluster.f });
        }
        if cluster.n <= cluster.f {
            violations.push(Violation::NoNonFaulty { cluster: id, n: cluster.n, f: cluster.f });
        }
    }
    if spec.c1.n <= 2 * spec.c1.f {
        violations.push(Violation::SenderAgreement { n1: spec.c1.n, f1: spec.c1.f });
    }
    if spec.signing == SigningScheme::None && spec.failure_model == FailureModel::Byzantine {
        violations.push(Violation::UnsignedByzantine);
    }
    violations
}

/// `i` if `j > 0`, else `0`: the sign-guarded term used by the bound formulas.
pub fn guarded_term(i: usize, j: usize) -> usize {
    if j > 0 {
        i
    } else {
        0
    }
}
