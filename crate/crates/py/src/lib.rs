//! Python bindings for `clustersend`.
//!
//! Structured results (bound reports, choices, metrics, campaign reports) are
//! returned as plain dicts built from their JSON form.

use clustersend::bounds::{self, Flavor, Mutation, ProtocolChoice, ProtocolKind, SearchMethod};
use clustersend::certs::Value;
use clustersend::model::{validate_system, ClusterSpec, FailureModel, ReplicaId, SigningScheme, SystemSpec};
use clustersend::protocols;
use clustersend::sim::{self, AdversaryBudget, AdversaryTrace, CampaignConfig, RunTranscript, Schedule};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses a snake_case enum name such as `"byzantine"` or `"replica_signing"`.
fn parse_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_ascii_lowercase().replace('-', "_"))).map_err(value_error)
}

/// Two clusters, their fault bounds and placements, and the system's failure model and signing scheme.
#[pyclass(name = "System", module = "clustersend_py", from_py_object)]
#[derive(Clone)]
pub struct PySystem {
    pub spec: SystemSpec,
}

impl PySystem {
    fn choice(&self, protocol: Option<&str>, flavor: Option<&str>, compact_certs: bool, mutation: Option<&str>) -> PyResult<ProtocolChoice> {
        let view = self.spec.view();
        let mut choice = match protocol {
            None | Some("auto") => bounds::select_protocol(&self.spec).map_err(value_error)?,
            Some(name) => {
                let kind: ProtocolKind = name.parse().map_err(value_error)?;
                let flavor = match (kind.fixed_flavor(), flavor) {
                    (Some(fixed), _) => fixed,
                    (None, Some("bcs")) => Flavor::Bcs,
                    (None, Some("brs")) => Flavor::Brs,
                    (None, Some(other)) => return Err(value_error(format!("unknown flavor `{other}`"))),
                    (None, None) => bounds::preferred_flavor(self.spec.failure_model, self.spec.signing),
                };
                ProtocolChoice::for_system(kind, flavor, &view).map_err(value_error)?
            }
        };
        choice.compact_certs = compact_certs;
        choice.mutation = mutation.map(str::parse::<Mutation>).transpose().map_err(value_error)?;
        protocols::plan(&view, &choice).map_err(value_error)?;
        Ok(choice)
    }
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (n1, f1, n2, f2, failure_model = "crash", signing = "none", faulty1 = Vec::new(), faulty2 = Vec::new()))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n1: usize,
        f1: usize,
        n2: usize,
        f2: usize,
        failure_model: &str,
        signing: &str,
        faulty1: Vec<usize>,
        faulty2: Vec<usize>,
    ) -> PyResult<Self> {
        let model: FailureModel = parse_name(failure_model)?;
        let signing: SigningScheme = parse_name(signing)?;
        Ok(PySystem {
            spec: SystemSpec::new(ClusterSpec::with_faulty(n1, f1, faulty1), ClusterSpec::with_faulty(n2, f2, faulty2), model, signing),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySystem { spec: serde_json::from_str(text).map_err(value_error)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(value_error)
    }

    /// Messages describing every constraint the system violates; empty when valid.
    fn validate(&self) -> Vec<String> {
        validate_system(&self.spec).iter().map(ToString::to_string).collect()
    }

    fn sigma<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &bounds::sigma(&self.spec).map_err(value_error)?)
    }

    fn tau<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &bounds::tau(&self.spec).map_err(value_error)?)
    }

    fn select_protocol<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &bounds::select_protocol(&self.spec).map_err(value_error)?)
    }

    /// Runs one protocol execution. `trace` is an adversary trace in JSON; by
    /// default the placed faulty replicas behave correctly.
    #[pyo3(signature = (protocol = None, flavor = None, value = b"value".to_vec(), seed = None, trace = None, compact_certs = false))]
    fn run(
        &self,
        protocol: Option<&str>,
        flavor: Option<&str>,
        value: Vec<u8>,
        seed: Option<u64>,
        trace: Option<&str>,
        compact_certs: bool,
    ) -> PyResult<PyTranscript> {
        let choice = self.choice(protocol, flavor, compact_certs, None)?;
        let trace = match trace {
            Some(text) => serde_json::from_str(text).map_err(value_error)?,
            None => AdversaryTrace::passive(&self.spec),
        };
        let schedule = seed.map_or(Schedule::Fifo, Schedule::Seeded);
        let transcript = sim::run(&self.spec, &choice, &Value::new(value), &trace, &schedule).map_err(value_error)?;
        Ok(PyTranscript { inner: transcript })
    }

    /// Runs every placement against the adversary family and returns the campaign report.
    #[pyo3(signature = (protocol = None, flavor = None, seeds = 50, max_traces = 256, mutation = None))]
    fn verify<'py>(
        &self,
        py: Python<'py>,
        protocol: Option<&str>,
        flavor: Option<&str>,
        seeds: u64,
        max_traces: usize,
        mutation: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let choice = self.choice(protocol, flavor, false, mutation)?;
        let config = CampaignConfig {
            seeds: (0..seeds).collect(),
            seeds_per_trace: None,
            budget: AdversaryBudget { max_traces, ..AdversaryBudget::default() },
        };
        let report = py.detach(|| sim::verify(&self.spec, &choice, &Value::new(*b"value"), &config)).map_err(value_error)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        let s = &self.spec;
        format!(
            "System(n1={}, f1={}, n2={}, f2={}, failure_model='{}', signing='{}')",
            s.c1.n, s.c1.f, s.c2.n, s.c2.f, s.failure_model, s.signing
        )
    }
}

/// The record of one run.
#[pyclass(name = "Transcript", module = "clustersend_py", frozen)]
pub struct PyTranscript {
    pub inner: RunTranscript,
}

#[pymethods]
impl PyTranscript {
    #[getter]
    fn protocol(&self) -> String {
        self.inner.protocol.clone()
    }

    /// Prescribed inter-cluster envelopes.
    #[getter]
    fn msgs(&self) -> usize {
        self.inner.metrics.inter_cluster_msgs
    }

    #[getter]
    fn receipt(&self) -> bool {
        self.inner.properties.receipt
    }

    #[getter]
    fn agreement(&self) -> bool {
        self.inner.properties.agreement
    }

    #[getter]
    fn confirmation(&self) -> bool {
        self.inner.properties.confirmation
    }

    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metrics)
    }

    /// Hex-encoded values each non-faulty `C2` replica considers received, by replica index.
    fn received(&self) -> Vec<(usize, Vec<String>)> {
        self.inner
            .receivers
            .iter()
            .filter(|r| !r.faulty)
            .map(|r| (r.replica.index, r.received.iter().map(Value::to_hex).collect()))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        let p = self.inner.properties;
        let py_bool = |b: bool| if b { "True" } else { "False" };
        format!(
            "Transcript(protocol='{}', msgs={}, receipt={}, agreement={}, confirmation={})",
            self.inner.protocol,
            self.inner.metrics.inter_cluster_msgs,
            py_bool(p.receipt),
            py_bool(p.agreement),
            py_bool(p.confirmation)
        )
    }
}

/// Smallest schedule size that survives every crash assignment, by exhaustive search.
#[pyfunction]
#[pyo3(signature = (n1, f1, n2, f2, cap = None))]
fn min_schedule_size(n1: usize, f1: usize, n2: usize, f2: usize, cap: Option<usize>) -> PyResult<usize> {
    bounds::min_schedule_size(n1, f1, n2, f2, cap.unwrap_or(n1 * n2)).map_err(value_error)
}

/// Splits replica ordinals `0..n` into parts of size `c`; returns `(parts, remainder)`.
#[pyfunction]
fn c_partition(n: usize, c: usize) -> PyResult<(Vec<Vec<usize>>, Vec<usize>)> {
    if c == 0 {
        return Err(value_error("part size must be positive"));
    }
    let replicas: Vec<ReplicaId> = (0..n).map(ReplicaId::c1).collect();
    let p = protocols::c_partition(&replicas, c);
    let ordinals = |part: &[ReplicaId]| part.iter().map(|r| r.index).collect::<Vec<_>>();
    Ok((p.parts.iter().map(|part| ordinals(part)).collect(), ordinals(&p.remainder)))
}

/// `(faulty_senders, faulty_receivers)` covering every `(sender, receiver)`
/// pair, or `None` if the schedule survives. Raises if the search was
/// inconclusive.
#[pyfunction]
fn killing_assignment(schedule: Vec<(usize, usize)>, f1: usize, f2: usize) -> PyResult<Option<(Vec<usize>, Vec<usize>)>> {
    let search = bounds::killing_assignment(&schedule, f1, f2);
    match (search.witness, search.method) {
        (Some(w), _) => Ok(Some((w.faulty_senders.into_iter().collect(), w.faulty_receivers.into_iter().collect()))),
        (None, SearchMethod::Exact) => Ok(None),
        (None, SearchMethod::Heuristic) => Err(value_error("schedule too large for an exact search")),
    }
}

#[pymodule]
pub fn clustersend_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyTranscript>()?;
    m.add_function(wrap_pyfunction!(min_schedule_size, m)?)?;
    m.add_function(wrap_pyfunction!(c_partition, m)?)?;
    m.add_function(wrap_pyfunction!(killing_assignment, m)?)?;
    Ok(())
}
