//! Simulated certificates.
//!
//! Certificates are entries in a per-run [`CertLedger`] rather than real
//! signatures. The ledger enforces non-forgeability structurally: a
//! certificate only verifies if the ledger recorded a legal signing step for
//! it, and the ledger refuses signing steps that the run's fault assignment
//! and failure model do not permit.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{ClusterId, FailureModel, Placement, ReplicaId, SigningScheme, SystemSpec};

/// Size of one signature, replica or cluster, in abstract units.
pub const DEFAULT_SIGNATURE_UNITS: usize = 1;

/// An opaque value. Its bytes double as its digest.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(Arc<[u8]>);

impl Value {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Value(bytes.into().into())
    }

    pub fn from_hex(text: &str) -> Result<Self, hex::FromHexError> {
        Ok(Value::new(hex::decode(text)?))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// A distinct value of the same length, used as the adversary's `v'`.
    pub fn alternative(&self) -> Value {
        let mut bytes = self.0.to_vec();
        match bytes.last_mut() {
            Some(last) => *last ^= 0xff,
            None => bytes.push(0xff),
        }
        Value::new(bytes)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({})", self.to_hex())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Value::from_hex(&text).map_err(serde::de::Error::custom)
    }
}

/// Size of a message as payload bytes plus signature counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeBreakdown {
    pub value_bytes: usize,
    pub replica_sig_count: usize,
    pub cluster_sig_count: usize,
}

impl SizeBreakdown {
    /// `value_bytes + unit * (replica_sig_count + cluster_sig_count)`.
    pub fn total(&self, unit: usize) -> usize {
        self.value_bytes + unit * (self.replica_sig_count + self.cluster_sig_count)
    }
}

impl std::ops::Add for SizeBreakdown {
    type Output = SizeBreakdown;

    fn add(self, rhs: SizeBreakdown) -> SizeBreakdown {
        SizeBreakdown {
            value_bytes: self.value_bytes + rhs.value_bytes,
            replica_sig_count: self.replica_sig_count + rhs.replica_sig_count,
            cluster_sig_count: self.cluster_sig_count + rhs.cluster_sig_count,
        }
    }
}

impl std::iter::Sum for SizeBreakdown {
    fn sum<I: Iterator<Item = SizeBreakdown>>(iter: I) -> Self {
        iter.fold(SizeBreakdown::default(), |acc, s| acc + s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signer {
    Replica(ReplicaId),
    Cluster(ClusterId),
    /// A bundle of replica certificates standing in for a cluster certificate.
    /// Kept as a list so that bundles with repeated signers can be expressed
    /// (and rejected by [`CertLedger::verify`]).
    EmulatedCluster(Vec<ReplicaId>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: Value,
    pub signer: Signer,
    pub size: SizeBreakdown,
}

impl Certificate {
    /// Builds a certificate without going through a ledger. Such a certificate
    /// only verifies if the ledger independently recorded the signing steps.
    pub fn unchecked(subject: Value, signer: Signer) -> Self {
        let replica_sig_count = match &signer {
            Signer::Replica(_) => 1,
            Signer::Cluster(_) => 0,
            Signer::EmulatedCluster(signers) => signers.len(),
        };
        let cluster_sig_count = usize::from(matches!(signer, Signer::Cluster(_)));
        let size = SizeBreakdown { value_bytes: subject.len(), replica_sig_count, cluster_sig_count };
        Certificate { subject, signer, size }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("non-faulty replica {replica} asked to sign {value}, which its cluster did not agree on")]
    UnauthorizedSigning { replica: ReplicaId, value: Value },
    #[error("faulty replica {replica} cannot sign non-agreed value {value} under {model} failures")]
    ForgeryOutsideModel { replica: ReplicaId, value: Value, model: FailureModel },
    #[error("{cluster} did not agree on {value}; a cluster certificate cannot be produced")]
    NoAgreement { cluster: ClusterId, value: Value },
    #[error("signing scheme {scheme} cannot produce {what}")]
    Unsupported { scheme: SigningScheme, what: &'static str },
    #[error("{cluster} has {available} non-faulty replicas, {needed} are needed to emulate a cluster certificate")]
    EmulationQuorum { cluster: ClusterId, available: usize, needed: usize },
}

/// All certificates produced in one run.
#[derive(Clone, Debug)]
pub struct CertLedger {
    model: FailureModel,
    scheme: SigningScheme,
    placement: Placement,
    n: [usize; 2],
    f: [usize; 2],
    agreed: [Option<Value>; 2],
    replica_sigs: HashSet<(ReplicaId, Value)>,
    cluster_sigs: HashSet<(ClusterId, Value)>,
}

fn slot(cluster: ClusterId) -> usize {
    match cluster {
        ClusterId::C1 => 0,
        ClusterId::C2 => 1,
    }
}

impl CertLedger {
    pub fn new(spec: &SystemSpec) -> Self {
        CertLedger {
            model: spec.failure_model,
            scheme: spec.signing,
            placement: spec.placement(),
            n: [spec.c1.n, spec.c2.n],
            f: [spec.c1.f, spec.c2.f],
            agreed: [None, None],
            replica_sigs: HashSet::new(),
            cluster_sigs: HashSet::new(),
        }
    }

    /// Records that every non-faulty replica of `cluster` agreed on `value`.
    pub fn agree(&mut self, cluster: ClusterId, value: &Value) {
        self.agreed[slot(cluster)] = Some(value.clone());
    }

    pub fn agreed(&self, cluster: ClusterId) -> Option<&Value> {
        self.agreed[slot(cluster)].as_ref()
    }

    pub fn scheme(&self) -> SigningScheme {
        self.scheme
    }

    fn is_agreed(&self, cluster: ClusterId, value: &Value) -> bool {
        self.agreed(cluster) == Some(value)
    }

    /// A replica signs `value`.
    ///
    /// Non-faulty replicas only sign the value their cluster agreed on. Faulty
    /// replicas may sign anything, but only under Byzantine failures.
    pub fn sign_replica(&mut self, replica: ReplicaId, value: &Value) -> Result<Certificate, IntegrityError> {
        if !self.scheme.has_replica_signing() {
            return Err(IntegrityError::Unsupported { scheme: self.scheme, what: "replica certificates" });
        }
        if !self.is_agreed(replica.cluster, value) {
            if !self.placement.is_faulty(replica) {
                return Err(IntegrityError::UnauthorizedSigning { replica, value: value.clone() });
            }
            if self.model != FailureModel::Byzantine {
                return Err(IntegrityError::ForgeryOutsideModel { replica, value: value.clone(), model: self.model });
            }
        }
        self.replica_sigs.insert((replica, value.clone()));
        Ok(Certificate::unchecked(value.clone(), Signer::Replica(replica)))
    }

    /// A cluster signs `value`. Requires that the cluster agreed on it.
    ///
    /// Under replica-signing schemes this emulates the cluster certificate with
    /// replica certificates from the `f + 1` lowest-indexed non-faulty replicas.
    pub fn sign_cluster(&mut self, cluster: ClusterId, value: &Value) -> Result<Certificate, IntegrityError> {
        if !self.scheme.has_cluster_certificates() {
            return Err(IntegrityError::Unsupported { scheme: self.scheme, what: "cluster certificates" });
        }
        if !self.is_agreed(cluster, value) {
            return Err(IntegrityError::NoAgreement { cluster, value: value.clone() });
        }
        if !self.scheme.emulates_cluster_signing() {
            self.cluster_sigs.insert((cluster, value.clone()));
            return Ok(Certificate::unchecked(value.clone(), Signer::Cluster(cluster)));
        }
        let needed = self.f[slot(cluster)] + 1;
        let signers: Vec<ReplicaId> = (0..self.n[slot(cluster)])
            .map(|i| ReplicaId::new(cluster, i))
            .filter(|r| !self.placement.is_faulty(*r))
            .take(needed)
            .collect();
        if signers.len() < needed {
            return Err(IntegrityError::EmulationQuorum { cluster, available: signers.len(), needed });
        }
        for &signer in &signers {
            self.replica_sigs.insert((signer, value.clone()));
        }
        Ok(Certificate::unchecked(value.clone(), Signer::EmulatedCluster(signers)))
    }

    fn has_replica_sig(&self, replica: ReplicaId, value: &Value) -> bool {
        self.replica_sigs.contains(&(replica, value.clone()))
    }

    /// Whether `cert` is a ledger-backed certificate for `value` from `expected`.
    pub fn verify(&self, cert: &Certificate, value: &Value, expected: ClusterId) -> bool {
        if &cert.subject != value {
            return false;
        }
        match &cert.signer {
            Signer::Replica(replica) => replica.cluster == expected && self.has_replica_sig(*replica, value),
            Signer::Cluster(cluster) => {
                *cluster == expected && self.cluster_sigs.contains(&(*cluster, value.clone()))
            }
            Signer::EmulatedCluster(signers) => {
                let distinct: HashSet<ReplicaId> = signers.iter().copied().collect();
                distinct.len() > self.f[slot(expected)]
                    && distinct
                        .iter()
                        .all(|r| r.cluster == expected && self.has_replica_sig(*r, value))
            }
        }
    }
}
