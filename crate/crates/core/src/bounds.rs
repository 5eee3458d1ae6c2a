//! Lower bounds on cluster-sending cost and protocol selection.
//!
//! `sigma` bounds the number of inter-cluster messages any protocol needs
//! under crash failures; `tau` bounds the number of replica certificates
//! needed under Byzantine failures with replica signing. Both are
//! `q * n + r + guard * sgn(r)` for a `(q, r)` division specific to the bound.
//!
//! [`killing_assignment`] and [`min_schedule_size`] check these bounds from
//! the other direction: they search for fault assignments that make every
//! message of a schedule useless.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{guarded_term, validate_system, ClusterView, FailureModel, SigningScheme, SystemSpec, SystemView, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `sigma_1`: crash bound when the sender is the larger cluster.
    SigmaSenderLarger,
    /// `sigma_2`: crash bound when the receiver is the larger cluster.
    SigmaReceiverLarger,
    Tau1,
    Tau2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub q: usize,
    pub r: usize,
    pub value: usize,
    pub applicable: bool,
    pub side_condition: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BoundError {
    #[error("{bound}: divisor {what} is zero")]
    DivisionByZero { bound: &'static str, what: &'static str },
}

/// `q * n + r + guard * sgn(r)` where `(q, r) = (numerator div divisor, numerator mod divisor)`.
fn partitioned(
    bound: &'static str,
    what: &'static str,
    numerator: usize,
    divisor: usize,
    n: usize,
    guard: usize,
) -> Result<(usize, usize, usize), BoundError> {
    if divisor == 0 {
        return Err(BoundError::DivisionByZero { bound, what });
    }
    let q = numerator / divisor;
    let r = numerator % divisor;
    Ok((q, r, q * n + r + guarded_term(guard, r)))
}

/// `sigma_1`, computed from `(f1 + 1)` over `nf2`.
pub fn sigma1(c1: ClusterView, c2: ClusterView) -> Result<BoundReport, BoundError> {
    let (q, r, value) = partitioned("sigma_1", "nf2", c1.f + 1, c2.nf(), c2.n, c2.f)?;
    Ok(BoundReport {
        kind: BoundKind::SigmaSenderLarger,
        q,
        r,
        value,
        applicable: true,
        side_condition: format!("lower bound on inter-cluster messages under crash failures; stated for n1 >= n2 ({} vs {})", c1.n, c2.n),
    })
}

/// `sigma_2`, computed from `(f2 + 1)` over `nf1`.
pub fn sigma2(c1: ClusterView, c2: ClusterView) -> Result<BoundReport, BoundError> {
    let (q, r, value) = partitioned("sigma_2", "nf1", c2.f + 1, c1.nf(), c1.n, c1.f)?;
    Ok(BoundReport {
        kind: BoundKind::SigmaReceiverLarger,
        q,
        r,
        value,
        applicable: true,
        side_condition: format!("lower bound on inter-cluster messages under crash failures; stated for n2 >= n1 ({} vs {})", c2.n, c1.n),
    })
}

/// `tau_1`, computed from `(2 f1 + 1)` over `nf2`.
pub fn tau1(c1: ClusterView, c2: ClusterView) -> Result<BoundReport, BoundError> {
    let (q, r, value) = partitioned("tau_1", "nf2", 2 * c1.f + 1, c2.nf(), c2.n, c2.f)?;
    Ok(BoundReport {
        kind: BoundKind::Tau1,
        q,
        r,
        value,
        applicable: true,
        side_condition: "lower bound on replica certificates under Byzantine failures; requires n1 >= n2".into(),
    })
}

/// `tau_2`, computed from `(f2 + 1)` over `nf1 - f1`.
pub fn tau2(c1: ClusterView, c2: ClusterView) -> Result<BoundReport, BoundError> {
    let divisor = c1.nf().saturating_sub(c1.f);
    let (q, r, value) = partitioned("tau_2", "nf1 - f1", c2.f + 1, divisor, c1.n, 2 * c1.f)?;
    Ok(BoundReport {
        kind: BoundKind::Tau2,
        q,
        r,
        value,
        applicable: true,
        side_condition: "lower bound on replica certificates under Byzantine failures; requires n2 >= n1".into(),
    })
}

/// The crash-failure message bound for the larger cluster (`sigma_1` on ties).
pub fn sigma(spec: &SystemSpec) -> Result<BoundReport, BoundError> {
    let view = spec.view();
    if view.c1.n >= view.c2.n {
        let mut report = sigma1(view.c1, view.c2)?;
        if view.c1.n == view.c2.n {
            if let Ok(alt) = sigma2(view.c1, view.c2) {
                report.side_condition = format!("n1 = n2; sigma_2 = {}", alt.value);
            }
        } else {
            report.side_condition = "n1 > n2".into();
        }
        Ok(report)
    } else {
        let mut report = sigma2(view.c1, view.c2)?;
        report.side_condition = "n2 > n1".into();
        Ok(report)
    }
}

/// The replica-certificate bound: `tau_1` when `n1 >= n2`, else `tau_2`.
///
/// `applicable` is false unless the system provides replica signing.
pub fn tau(spec: &SystemSpec) -> Result<BoundReport, BoundError> {
    let view = spec.view();
    let mut report = if view.c1.n >= view.c2.n {
        let mut report = tau1(view.c1, view.c2)?;
        report.side_condition = if view.c1.n == view.c2.n {
            match tau2(view.c1, view.c2) {
                Ok(alt) => format!("n1 = n2; tau_2 = {}", alt.value),
                Err(err) => format!("n1 = n2; tau_2 undefined: {err}"),
            }
        } else {
            "n1 > n2".into()
        };
        report
    } else {
        let mut report = tau2(view.c1, view.c2)?;
        report.side_condition = "n2 > n1".into();
        report
    };
    report.applicable = spec.signing.has_replica_signing();
    if !report.applicable {
        report.side_condition.push_str("; not applicable without replica signing");
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    RbBcs,
    RbBrs,
    BsBcs,
    BsBrs,
    Spbs,
    Rpbs,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 6] = [
        ProtocolKind::RbBcs,
        ProtocolKind::RbBrs,
        ProtocolKind::BsBcs,
        ProtocolKind::BsBrs,
        ProtocolKind::Spbs,
        ProtocolKind::Rpbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::RbBcs => "rb-bcs",
            ProtocolKind::RbBrs => "rb-brs",
            ProtocolKind::BsBcs => "bs-bcs",
            ProtocolKind::BsBrs => "bs-brs",
            ProtocolKind::Spbs => "spbs",
            ProtocolKind::Rpbs => "rpbs",
        }
    }

    /// The flavor fixed by the protocol, if any. SPBS and RPBS take either.
    pub fn fixed_flavor(self) -> Option<Flavor> {
        match self {
            ProtocolKind::RbBcs | ProtocolKind::BsBcs => Some(Flavor::Bcs),
            ProtocolKind::RbBrs | ProtocolKind::BsBrs => Some(Flavor::Brs),
            ProtocolKind::Spbs | ProtocolKind::Rpbs => None,
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.to_ascii_lowercase().replace('_', "-");
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == normalized)
            .ok_or_else(|| format!("unknown protocol `{s}`"))
    }
}

/// Certificate flavor: cluster certificates (`bcs`) or replica certificates (`brs`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Bcs,
    Brs,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Bcs => "bcs",
            Flavor::Brs => "brs",
        })
    }
}

/// Deliberate weakenings used to check that the campaigns can find failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Bijective sending with one pair fewer than required.
    ShrinkBijection,
    /// Replica-certificate receivers accept after `f1` distinct signers.
    WeakThreshold,
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "shrink-bijection" => Ok(Mutation::ShrinkBijection),
            "weak-threshold" => Ok(Mutation::WeakThreshold),
            _ => Err(format!("unknown mutation `{s}`")),
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mutation::ShrinkBijection => "shrink-bijection",
            Mutation::WeakThreshold => "weak-threshold",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolChoice {
    pub protocol: ProtocolKind,
    /// Number of senders (SPBS) or receivers (RPBS) taking part.
    #[serde(default)]
    pub alpha: Option<usize>,
    pub signing_flavor: Flavor,
    #[serde(default)]
    pub compact_certs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("invalid system: {}", .0.iter().map(ToString::to_string).join("; "))]
    InvalidSystem(Vec<Violation>),
    #[error("no cluster-sending protocol applies: {0}")]
    Unsatisfiable(String),
    #[error("{protocol} does not support the {flavor} flavor")]
    FlavorMismatch { protocol: ProtocolKind, flavor: Flavor },
    #[error(transparent)]
    Bound(#[from] BoundError),
}

impl ProtocolChoice {
    /// A choice for a protocol with a fixed flavor (RB and BS variants).
    pub fn fixed(protocol: ProtocolKind) -> Self {
        let signing_flavor = protocol.fixed_flavor().unwrap_or(Flavor::Bcs);
        ProtocolChoice { protocol, alpha: None, signing_flavor, compact_certs: false, mutation: None }
    }

    /// A partitioned protocol with an explicit `alpha`.
    pub fn partitioned(protocol: ProtocolKind, flavor: Flavor, alpha: usize) -> Self {
        ProtocolChoice { protocol, alpha: Some(alpha), signing_flavor: flavor, compact_certs: false, mutation: None }
    }

    /// Builds a choice for `protocol`, deriving `alpha` from the bounds for
    /// the partitioned protocols (`sigma` for `bcs`, `tau` for `brs`).
    pub fn for_system(protocol: ProtocolKind, flavor: Flavor, view: &SystemView) -> Result<Self, SelectError> {
        if let Some(fixed) = protocol.fixed_flavor() {
            if fixed != flavor {
                return Err(SelectError::FlavorMismatch { protocol, flavor });
            }
            return Ok(ProtocolChoice::fixed(protocol));
        }
        let bound = match (protocol, flavor) {
            (ProtocolKind::Spbs, Flavor::Bcs) => sigma1(view.c1, view.c2)?,
            (ProtocolKind::Spbs, Flavor::Brs) => tau1(view.c1, view.c2)?,
            (ProtocolKind::Rpbs, Flavor::Bcs) => sigma2(view.c1, view.c2)?,
            (ProtocolKind::Rpbs, Flavor::Brs) => tau2(view.c1, view.c2)?,
            _ => unreachable!("fixed-flavor protocols handled above"),
        };
        Ok(ProtocolChoice::partitioned(protocol, flavor, bound.value))
    }

    pub fn with_compact_certs(mut self, compact: bool) -> Self {
        self.compact_certs = compact;
        self
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    /// Label such as `bs-bcs` or `spbs-brs`.
    pub fn label(&self) -> String {
        match self.protocol {
            ProtocolKind::Spbs | ProtocolKind::Rpbs => format!("{}-{}", self.protocol, self.signing_flavor),
            _ => self.protocol.to_string(),
        }
    }
}

/// The flavor a system calls for: replica certificates only when the system
/// is Byzantine and offers nothing but replica signing.
pub fn preferred_flavor(model: FailureModel, signing: SigningScheme) -> Flavor {
    if model == FailureModel::Byzantine && signing == SigningScheme::ReplicaSigning {
        Flavor::Brs
    } else {
        Flavor::Bcs
    }
}

/// Picks the cheapest protocol whose preconditions hold for `spec`.
///
/// Bijective sending is preferred for comparable cluster sizes; the
/// partitioned variants handle an oversized sender or receiver; the
/// broadcast protocols are the fallback.
pub fn select_protocol(spec: &SystemSpec) -> Result<ProtocolChoice, SelectError> {
    let violations = validate_system(spec);
    if !violations.is_empty() {
        return Err(SelectError::InvalidSystem(violations));
    }
    let view = spec.view();
    let (n1, f1, n2, f2) = (view.c1.n, view.c1.f, view.c2.n, view.c2.f);
    let flavor = preferred_flavor(spec.failure_model, spec.signing);
    // Pairs needed by bijective sending: f1 + f2 + 1 (bcs) or 2 f1 + f2 + 1 (brs).
    let faults = match flavor {
        Flavor::Bcs => f1 + f2,
        Flavor::Brs => 2 * f1 + f2,
    };
    let (bijective, broadcast) = match flavor {
        Flavor::Bcs => (ProtocolKind::BsBcs, ProtocolKind::RbBcs),
        Flavor::Brs => (ProtocolKind::BsBrs, ProtocolKind::RbBrs),
    };
    if n1 > faults && n2 > faults {
        return Ok(ProtocolChoice::fixed(bijective));
    }
    if n2 <= faults {
        let choice = ProtocolChoice::for_system(ProtocolKind::Spbs, flavor, &view)?;
        if choice.alpha.is_some_and(|alpha| alpha <= n1) {
            return Ok(choice);
        }
    }
    if n1 <= faults {
        if let Ok(choice) = ProtocolChoice::for_system(ProtocolKind::Rpbs, flavor, &view) {
            if choice.alpha.is_some_and(|alpha| alpha <= n2) {
                return Ok(choice);
            }
        }
    }
    if n1 > 2 * f1 && n2 > f2 {
        return Ok(ProtocolChoice::fixed(broadcast));
    }
    Err(SelectError::Unsatisfiable(format!("n1={n1} f1={f1} n2={n2} f2={f2}")))
}

/// Faulty senders and receivers that together touch every message of a schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillingWitness {
    pub faulty_senders: BTreeSet<usize>,
    pub faulty_receivers: BTreeSet<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// Every receiver subset was tried; `None` means the schedule survives.
    Exact,
    /// Only the top-receivers construction was tried; `None` is inconclusive.
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillingSearch {
    pub witness: Option<KillingWitness>,
    pub method: SearchMethod,
}

/// Largest number of receiver subsets the exact search will try.
pub const EXACT_SEARCH_BUDGET: usize = 1 << 20;

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Tries to kill every message of `schedule` by crashing `faulty_receivers`
/// and at most `f1` senders.
fn cover_with(schedule: &[(usize, usize)], faulty_receivers: BTreeSet<usize>, f1: usize) -> Option<KillingWitness> {
    let faulty_senders: BTreeSet<usize> = schedule
        .iter()
        .filter(|(_, receiver)| !faulty_receivers.contains(receiver))
        .map(|&(sender, _)| sender)
        .collect();
    (faulty_senders.len() <= f1).then_some(KillingWitness { faulty_senders, faulty_receivers })
}

/// Searches for at most `f1` faulty senders and `f2` faulty receivers such
/// that every `(sender, receiver)` message in `schedule` has a faulty endpoint.
///
/// Indices are ordinals in `C1` (senders) and `C2` (receivers). The top-`f2`
/// receivers by message count are tried first; if that fails and the number
/// of receiver subsets is within [`EXACT_SEARCH_BUDGET`], all of them are tried.
pub fn killing_assignment(schedule: &[(usize, usize)], f1: usize, f2: usize) -> KillingSearch {
    let mut counts: Vec<(usize, usize)> = schedule
        .iter()
        .map(|&(_, receiver)| receiver)
        .counts()
        .into_iter()
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let take = f2.min(counts.len());

    let top: BTreeSet<usize> = counts.iter().take(take).map(|&(receiver, _)| receiver).collect();
    if let Some(witness) = cover_with(schedule, top, f1) {
        return KillingSearch { witness: Some(witness), method: SearchMethod::Exact };
    }

    if binomial(counts.len(), take) > EXACT_SEARCH_BUDGET {
        return KillingSearch { witness: None, method: SearchMethod::Heuristic };
    }
    let receivers: Vec<usize> = counts.iter().map(|&(receiver, _)| receiver).sorted().collect();
    let witness = receivers
        .into_iter()
        .combinations(take)
        .find_map(|subset| cover_with(schedule, subset.into_iter().collect(), f1));
    KillingSearch { witness, method: SearchMethod::Exact }
}

/// Largest cluster size [`min_schedule_size`] will enumerate.
pub const MAX_ORACLE_CLUSTER: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("cluster sizes {n1} x {n2} exceed the enumeration guard of {MAX_ORACLE_CLUSTER}")]
    TooLarge { n1: usize, n2: usize },
    #[error("both clusters need a non-faulty replica (n1={n1} f1={f1} n2={n2} f2={f2})")]
    NoNonFaulty { n1: usize, f1: usize, n2: usize, f2: usize },
    #[error("no schedule of at most {cap} messages survives every fault assignment")]
    Exceeded { cap: usize },
}

/// Smallest number of `C1 -> C2` messages such that some schedule of that
/// size keeps a non-faulty-to-non-faulty message under every assignment of
/// at most `f1` and `f2` crashed replicas.
///
/// Exhaustive and independent of the closed-form bounds. Repeating a message
/// on the same pair never helps (both copies share their endpoints), so
/// schedules are enumerated as bipartite edge sets. Sender rows are
/// interchangeable, so only non-decreasing sequences of row bitmasks are visited.
pub fn min_schedule_size(n1: usize, f1: usize, n2: usize, f2: usize, cap: usize) -> Result<usize, OracleError> {
    if n1 > MAX_ORACLE_CLUSTER || n2 > MAX_ORACLE_CLUSTER {
        return Err(OracleError::TooLarge { n1, n2 });
    }
    if n1 <= f1 || n2 <= f2 {
        return Err(OracleError::NoNonFaulty { n1, f1, n2, f2 });
    }
    let full: u32 = (1 << n2) - 1;
    // Crashing more receivers never hurts the adversary, so exactly f2.
    let receiver_sets: Vec<u32> = (0..n2)
        .combinations(f2)
        .map(|subset| subset.into_iter().fold(0u32, |mask, i| mask | (1 << i)))
        .collect();

    struct Search<'a> {
        n1: usize,
        f1: usize,
        full: u32,
        cap: usize,
        receiver_sets: &'a [u32],
        rows: Vec<u32>,
        best: Option<usize>,
    }

    impl Search<'_> {
        fn survives(&self) -> bool {
            self.receiver_sets.iter().all(|&crashed| {
                let live = self.full & !crashed;
                let senders_needed = self.rows.iter().filter(|&&row| row & live != 0).count();
                senders_needed > self.f1
            })
        }

        fn visit(&mut self, depth: usize, min_row: u32, edges: usize) {
            if edges > self.cap || self.best.is_some_and(|best| edges >= best) {
                return;
            }
            if depth == self.n1 {
                if edges > 0 && self.survives() {
                    self.best = Some(edges);
                }
                return;
            }
            for row in min_row..=self.full {
                self.rows[depth] = row;
                self.visit(depth + 1, row, edges + row.count_ones() as usize);
            }
        }
    }

    let mut search = Search { n1, f1, full, cap, receiver_sets: &receiver_sets, rows: vec![0; n1], best: None };
    search.visit(0, 0, 0);
    search.best.ok_or(OracleError::Exceeded { cap })
}
