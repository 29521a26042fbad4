//! C ABI over the `dcpf` library.
//!
//! Objects cross the boundary as opaque handles created by `dcpf_*_load`,
//! `dcpf_*_generate` and friends, and released with the matching `*_free`.
//! Every fallible call returns a [`DcpfStatus`]; on failure the message is
//! available from [`dcpf_last_error`] on the same thread. Numeric results
//! are written into caller-owned buffers whose length is passed alongside,
//! and a wrong length is reported as `DCPF_STATUS_DIMENSION`.
//!
//! Vectors follow the library layout: injections are indexed by non-reference
//! bus in case order, flows by in-service branch in case order, and parameter
//! vectors are stacked `[b; gamma; rho]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use dcpf::ac::{solve_ac, InjectionSpec, SolverOptions};
use dcpf::dc::{cold_start, hot_start, ColdVariant, DcModel, DcParameters, Provenance};
use dcpf::loss::Evaluator;
use dcpf::network::{build_admittances, AdmittanceModel, Network};
use dcpf::optim::{train, Method, OptimizerConfig};
use dcpf::scenario::{generate, ScenarioSet, Subset};
use dcpf::Error;

pub const DCPF_SUBSET_TRAIN: i32 = 0;
pub const DCPF_SUBSET_TEST: i32 = 1;

pub const DCPF_METHOD_LBFGS: i32 = 0;
pub const DCPF_METHOD_BFGS: i32 = 1;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Disconnected = 5,
    Islanding = 6,
    UnknownBranch = 7,
    Singular = 8,
    NotConverged = 9,
    Dimension = 10,
    ChecksumMismatch = 11,
    RejectionRate = 12,
    Io = 13,
    Format = 14,
    Panic = 99,
}

/// Training or test loss of one parameter set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcpfLoss {
    pub sq_two_norm: f64,
    pub inf_norm: f64,
    pub mean_sq_two_norm: f64,
    pub n_scenarios: usize,
}

/// A loaded case with its admittances and DC model.
pub struct DcpfNetwork {
    net: Network,
    adm: AdmittanceModel,
    model: Arc<DcModel>,
}

/// A set of DC parameters `(b, gamma, rho)` for one topology.
pub struct DcpfParams(DcParameters);

/// A scenario dataset.
pub struct DcpfDataset(ScenarioSet);

struct Failure(DcpfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => DcpfStatus::Parse,
            Error::Validation(_) => DcpfStatus::Validation,
            Error::Disconnected(_) => DcpfStatus::Disconnected,
            Error::Islanding { .. } => DcpfStatus::Islanding,
            Error::UnknownBranch(_) => DcpfStatus::UnknownBranch,
            Error::SingularJacobian { .. } | Error::SingularMatrix { .. } => DcpfStatus::Singular,
            Error::NotConverged { .. } => DcpfStatus::NotConverged,
            Error::Dimension(_) => DcpfStatus::Dimension,
            Error::ChecksumMismatch { .. } => DcpfStatus::ChecksumMismatch,
            Error::RejectionRate { .. } => DcpfStatus::RejectionRate,
            Error::InvalidArgument(_) => DcpfStatus::InvalidArgument,
            Error::Io(_) => DcpfStatus::Io,
            Error::Format(_) | Error::Json(_) => DcpfStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DcpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcpfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DcpfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DcpfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(DcpfStatus::InvalidArgument, msg)
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn input<'a>(p: *const f64, len: usize, expected: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len != expected {
        return Err(Failure(DcpfStatus::Dimension, format!("{what} has length {len}, expected {expected}")));
    }
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len != expected {
        return Err(Failure(DcpfStatus::Dimension, format!("{what} has length {len}, expected {expected}")));
    }
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn subset(code: i32) -> Result<Subset, Failure> {
    match code {
        DCPF_SUBSET_TRAIN => Ok(Subset::Train),
        DCPF_SUBSET_TEST => Ok(Subset::Test),
        _ => Err(invalid(format!("unknown subset code {code}"))),
    }
}

fn wrap_network(net: Network) -> Result<DcpfNetwork, Failure> {
    let adm = build_admittances(&net);
    let model = Arc::new(DcModel::new(&net)?);
    Ok(DcpfNetwork { net, adm, model })
}

fn check_params(net: &DcpfNetwork, params: &DcParameters) -> Result<(), Failure> {
    params.validate(&net.net)?;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcpf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dcpf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a case file (MATPOWER `.m` or JSON), or a bundled case by name
/// (`case14`, `case30`, `case57`, `case118`).
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_load(spec: *const c_char, out: *mut *mut DcpfNetwork) -> DcpfStatus {
    guard(|| {
        let net = Network::load(as_str(spec, "spec")?)?;
        put(out, wrap_network(net)?)
    })
}

/// Parses a case from MATPOWER or JSON text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_parse(text: *const c_char, out: *mut *mut DcpfNetwork) -> DcpfStatus {
    guard(|| {
        let net = Network::parse(as_str(text, "text")?)?;
        put(out, wrap_network(net)?)
    })
}

/// The network with one branch taken out of service.
///
/// Fails with `DCPF_STATUS_ISLANDING` if the outage splits the network.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_remove_branch(
    net: *const DcpfNetwork,
    branch_id: usize,
    out: *mut *mut DcpfNetwork,
) -> DcpfStatus {
    guard(|| {
        let outaged = as_ref(net, "net")?.net.remove_branch(branch_id)?;
        put(out, wrap_network(outaged)?)
    })
}

/// # Safety
/// `net` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_free(net: *mut DcpfNetwork) {
    free(net);
}

/// Number of buses, reference included. Zero for a NULL handle.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_n_buses(net: *const DcpfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.buses().len())
}

/// Length of an injection vector: buses other than the reference.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_n_injections(net: *const DcpfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.model.n_buses())
}

/// Length of a flow vector: in-service branches.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_n_branches(net: *const DcpfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.model.n_branches())
}

/// Copies the in-service branch ids, in flow-vector order.
///
/// # Safety
/// `net` must be a live handle and `ids` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn dcpf_network_branch_ids(net: *const DcpfNetwork, ids: *mut usize, len: usize) -> DcpfStatus {
    guard(|| {
        let src = as_ref(net, "net")?.model.incidence().branch_ids();
        if len != src.len() {
            return Err(Failure(DcpfStatus::Dimension, format!("ids has length {len}, expected {}", src.len())));
        }
        if len > 0 {
            if ids.is_null() {
                return Err(null("ids"));
            }
            std::slice::from_raw_parts_mut(ids, len).copy_from_slice(src);
        }
        Ok(())
    })
}

/// Cold-start parameters from the series admittances, with zero biases.
/// A nonzero `r_zero` selects `b = 1/x`.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_cold(net: *const DcpfNetwork, r_zero: bool, out: *mut *mut DcpfParams) -> DcpfStatus {
    guard(|| {
        let n = as_ref(net, "net")?;
        let variant = if r_zero { ColdVariant::RZero } else { ColdVariant::WithR };
        put(out, DcpfParams(cold_start(&n.net, &n.adm, variant)))
    })
}

/// Hot-start parameters linearized at the solved nominal AC operating point.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_hot(net: *const DcpfNetwork, out: *mut *mut DcpfParams) -> DcpfStatus {
    guard(|| {
        let n = as_ref(net, "net")?;
        let base = solve_ac(&n.net, &n.adm, &InjectionSpec::from_network(&n.net), &SolverOptions::default())?;
        put(out, DcpfParams(hot_start(&n.net, &n.adm, &base)?))
    })
}

/// Reads a parameter file written for this network.
///
/// # Safety
/// `net` must be a live handle, `path` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_load(
    net: *const DcpfNetwork,
    path: *const c_char,
    out: *mut *mut DcpfParams,
) -> DcpfStatus {
    guard(|| {
        let n = as_ref(net, "net")?;
        put(out, DcpfParams(DcParameters::load(as_str(path, "path")?, &n.net)?))
    })
}

/// Writes a parameter file tagged with the network checksum.
///
/// # Safety
/// Both handles must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_save(
    params: *const DcpfParams,
    net: *const DcpfNetwork,
    path: *const c_char,
) -> DcpfStatus {
    guard(|| {
        let (p, n) = (as_ref(params, "params")?, as_ref(net, "net")?);
        check_params(n, &p.0)?;
        p.0.save(as_str(path, "path")?, &n.net.checksum(), &[])?;
        Ok(())
    })
}

/// Restricts parameters to an outaged topology: `b` and `rho` of removed
/// branches are dropped, `gamma` is kept.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_project(
    params: *const DcpfParams,
    net: *const DcpfNetwork,
    out: *mut *mut DcpfParams,
) -> DcpfStatus {
    guard(|| {
        let (p, n) = (as_ref(params, "params")?, as_ref(net, "net")?);
        put(out, DcpfParams(p.0.project_to(&n.net)?))
    })
}

/// Length of the stacked parameter vector. Zero for a NULL handle.
///
/// # Safety
/// `params` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_dim(params: *const DcpfParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the stacked vector `[b; gamma; rho]`.
///
/// # Safety
/// `params` must be a live handle and `x` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_get(params: *const DcpfParams, x: *mut f64, len: usize) -> DcpfStatus {
    guard(|| {
        let p = as_ref(params, "params")?;
        output(x, len, p.0.dim(), "x")?.copy_from_slice(&p.0.to_vector());
        Ok(())
    })
}

/// Overwrites the parameters from a stacked vector `[b; gamma; rho]`.
///
/// # Safety
/// `params` must be a live handle and `x` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_set(params: *mut DcpfParams, x: *const f64, len: usize) -> DcpfStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        let x = input(x, len, p.0.dim(), "x")?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameter vector contains non-finite values".into()));
        }
        p.0 = p.0.with_vector(x, p.0.provenance);
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcpf_params_free(params: *mut DcpfParams) {
    free(params);
}

/// DC branch flows for one injection vector, by solving for bus angles.
///
/// # Safety
/// Handles must be live; `p` and `flows` must hold `n_p` and `n_flows` doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dc_flows(
    net: *const DcpfNetwork,
    params: *const DcpfParams,
    p: *const f64,
    n_p: usize,
    flows: *mut f64,
    n_flows: usize,
) -> DcpfStatus {
    guard(|| {
        let (n, prm) = (as_ref(net, "net")?, as_ref(params, "params")?);
        check_params(n, &prm.0)?;
        let p = input(p, n_p, n.model.n_buses(), "p")?;
        let flows = output(flows, n_flows, n.model.n_branches(), "flows")?;
        flows.copy_from_slice(&n.model.solve(&prm.0, p)?.p_dc);
        Ok(())
    })
}

/// DC branch flows for one injection vector, through the PTDF matrix.
/// Agrees with [`dcpf_dc_flows`] up to rounding.
///
/// # Safety
/// Handles must be live; `p` and `flows` must hold `n_p` and `n_flows` doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_ptdf_flows(
    net: *const DcpfNetwork,
    params: *const DcpfParams,
    p: *const f64,
    n_p: usize,
    flows: *mut f64,
    n_flows: usize,
) -> DcpfStatus {
    guard(|| {
        let (n, prm) = (as_ref(net, "net")?, as_ref(params, "params")?);
        check_params(n, &prm.0)?;
        let p = input(p, n_p, n.model.n_buses(), "p")?;
        let flows = output(flows, n_flows, n.model.n_branches(), "flows")?;
        flows.copy_from_slice(&n.model.ptdf_flows(&prm.0, p)?);
        Ok(())
    })
}

/// The PTDF matrix `diag(b) A B'^-1`, row-major with one row per in-service
/// branch and one column per non-reference bus.
///
/// # Safety
/// Handles must be live and `ptdf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_ptdf(
    net: *const DcpfNetwork,
    params: *const DcpfParams,
    ptdf: *mut f64,
    len: usize,
) -> DcpfStatus {
    guard(|| {
        let (n, prm) = (as_ref(net, "net")?, as_ref(params, "params")?);
        check_params(n, &prm.0)?;
        let out = output(ptdf, len, n.model.n_branches() * n.model.n_buses(), "ptdf")?;
        out.copy_from_slice(&n.model.ptdf(&prm.0.b)?);
        Ok(())
    })
}

/// Samples `n` scenarios around the nominal injections, solves each with the
/// AC power flow and splits them into train and test sets.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dataset_generate(
    net: *const DcpfNetwork,
    n: usize,
    sigma: f64,
    seed: u64,
    split: f64,
    out: *mut *mut DcpfDataset,
) -> DcpfStatus {
    guard(|| {
        let nw = as_ref(net, "net")?;
        put(out, DcpfDataset(generate(&nw.net, &nw.adm, n, sigma, seed, split)?))
    })
}

/// Reads a dataset file and checks that it belongs to `net`.
///
/// # Safety
/// `net` must be a live handle, `path` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dataset_load(
    net: *const DcpfNetwork,
    path: *const c_char,
    out: *mut *mut DcpfDataset,
) -> DcpfStatus {
    guard(|| {
        let n = as_ref(net, "net")?;
        put(out, DcpfDataset(ScenarioSet::load(as_str(path, "path")?, &n.net)?))
    })
}

/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dataset_save(data: *const DcpfDataset, path: *const c_char) -> DcpfStatus {
    guard(|| {
        as_ref(data, "data")?.0.save(as_str(path, "path")?)?;
        Ok(())
    })
}

/// Number of scenarios in one subset. Zero for a NULL handle or unknown code.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dataset_len(data: *const DcpfDataset, subset_code: i32) -> usize {
    match (data.as_ref(), subset(subset_code)) {
        (Some(d), Ok(s)) => d.0.indices(s).len(),
        _ => 0,
    }
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcpf_dataset_free(data: *mut DcpfDataset) {
    free(data);
}

/// Loss of `params` over one subset of `data`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_loss(
    net: *const DcpfNetwork,
    data: *const DcpfDataset,
    params: *const DcpfParams,
    subset_code: i32,
    out: *mut DcpfLoss,
) -> DcpfStatus {
    guard(|| {
        let (n, d, p) = (as_ref(net, "net")?, as_ref(data, "data")?, as_ref(params, "params")?);
        if out.is_null() {
            return Err(null("out"));
        }
        check_params(n, &p.0)?;
        let ev = Evaluator::with_model(n.model.clone(), &d.0, d.0.indices(subset(subset_code)?))?;
        let l = ev.loss(&p.0)?;
        *out = DcpfLoss {
            sq_two_norm: l.sq_two_norm,
            inf_norm: l.inf_norm,
            mean_sq_two_norm: l.mean_sq_two_norm,
            n_scenarios: l.n_scenarios,
        };
        Ok(())
    })
}

/// Gradient of the squared two-norm loss, stacked like the parameter vector.
///
/// # Safety
/// Handles must be live and `grad` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dcpf_gradient(
    net: *const DcpfNetwork,
    data: *const DcpfDataset,
    params: *const DcpfParams,
    subset_code: i32,
    grad: *mut f64,
    len: usize,
) -> DcpfStatus {
    guard(|| {
        let (n, d, p) = (as_ref(net, "net")?, as_ref(data, "data")?, as_ref(params, "params")?);
        check_params(n, &p.0)?;
        let grad = output(grad, len, p.0.dim(), "grad")?;
        let ev = Evaluator::with_model(n.model.clone(), &d.0, d.0.indices(subset(subset_code)?))?;
        grad.copy_from_slice(&ev.gradient(&p.0)?.to_vector());
        Ok(())
    })
}

/// Fits parameters on the training subset starting from `init`.
/// `max_iterations` of zero keeps the library default.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcpf_train(
    net: *const DcpfNetwork,
    data: *const DcpfDataset,
    init: *const DcpfParams,
    method: i32,
    max_iterations: usize,
    out: *mut *mut DcpfParams,
) -> DcpfStatus {
    guard(|| {
        let (n, d, p) = (as_ref(net, "net")?, as_ref(data, "data")?, as_ref(init, "init")?);
        check_params(n, &p.0)?;
        let method = match method {
            DCPF_METHOD_LBFGS => Method::Lbfgs,
            DCPF_METHOD_BFGS => Method::Bfgs,
            _ => return Err(invalid(format!("unknown method code {method}"))),
        };
        let mut cfg = OptimizerConfig { method, ..Default::default() };
        if max_iterations > 0 {
            cfg.max_iterations = max_iterations;
        }
        let ev = Evaluator::with_model(n.model.clone(), &d.0, d.0.indices(Subset::Train))?;
        let report = train(&p.0, &ev, None, &cfg, Provenance::Optimized)?;
        put(out, DcpfParams(report.params().clone()))
    })
}
