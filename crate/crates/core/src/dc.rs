//! Parameterized DC power flow.
//!
//! With `B' = A^T diag(b) A` over the non-reference buses:
//!
//! ```text
//! B' theta = P - gamma
//! p_dc     = diag(b) A theta + rho
//! ```
//!
//! [`DcModel`] owns the incidence matrix and the symbolic factorization of
//! `B'` for one topology and caches the numeric factorization for the most
//! recent `b`.

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::ac::AcSolution;
use crate::error::{Error, Result};
use crate::ldl::{Ldl, SymbolicLdl};
use crate::network::{build_incidence, AdmittanceModel, IncidenceMatrix, Network};

/// Condition estimates above this make `B'` unusable.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Angle differences below this use the `sin(x)/x -> 1` limit in the hot start.
const SINC_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Cold,
    ColdR0,
    Hot,
    Optimized,
    OptimizedTailored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColdVariant {
    /// `b = Im(-1 / (r + jx))`
    WithR,
    /// `b = 1 / x`
    RZero,
}

/// The learnable triple `(b, gamma, rho)`, labelled with the ids it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DcParameters {
    /// In-service branch ids, one per entry of `b` and `rho`.
    pub branch_ids: Vec<usize>,
    /// Non-reference bus ids, one per entry of `gamma`.
    pub bus_ids: Vec<usize>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub provenance: Provenance,
}

impl DcParameters {
    pub fn n_branches(&self) -> usize {
        self.b.len()
    }

    pub fn n_buses(&self) -> usize {
        self.gamma.len()
    }

    /// Length of the stacked decision vector `[b; gamma; rho]`.
    pub fn dim(&self) -> usize {
        2 * self.b.len() + self.gamma.len()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(&self.b);
        x.extend_from_slice(&self.gamma);
        x.extend_from_slice(&self.rho);
        x
    }

    pub fn with_vector(&self, x: &[f64], provenance: Provenance) -> DcParameters {
        assert_eq!(x.len(), self.dim());
        let (ne, nb) = (self.b.len(), self.gamma.len());
        DcParameters {
            branch_ids: self.branch_ids.clone(),
            bus_ids: self.bus_ids.clone(),
            b: x[..ne].to_vec(),
            gamma: x[ne..ne + nb].to_vec(),
            rho: x[ne + nb..].to_vec(),
            provenance,
        }
    }

    /// Checks finiteness, nonzero `b`, and that the ids match the network.
    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.b.len() != self.branch_ids.len()
            || self.rho.len() != self.branch_ids.len()
            || self.gamma.len() != self.bus_ids.len()
        {
            return Err(Error::Dimension("parameter vectors do not match their id lists".into()));
        }
        if self.branch_ids != net.in_service_branch_ids() {
            return Err(Error::Dimension(format!(
                "parameters cover branches {:?}, network has {:?} in service",
                self.branch_ids,
                net.in_service_branch_ids()
            )));
        }
        if self.bus_ids != net.non_ref_bus_ids() {
            return Err(Error::Dimension("parameters do not cover the network's non-reference buses".into()));
        }
        if let Some(k) = self.b.iter().position(|b| *b == 0.0 || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "b for branch {} must be finite and nonzero",
                self.branch_ids[k]
            )));
        }
        if self.gamma.iter().chain(&self.rho).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("bias parameters must be finite".into()));
        }
        Ok(())
    }

    /// Restricts to the in-service branches of `net` by dropping the entries
    /// of outaged branches. `gamma` is kept as is.
    pub fn project_to(&self, net: &Network) -> Result<DcParameters> {
        if self.bus_ids != net.non_ref_bus_ids() {
            return Err(Error::Dimension("bus sets differ".into()));
        }
        let mut out = DcParameters {
            branch_ids: Vec::new(),
            bus_ids: self.bus_ids.clone(),
            b: Vec::new(),
            gamma: self.gamma.clone(),
            rho: Vec::new(),
            provenance: self.provenance,
        };
        for id in net.in_service_branch_ids() {
            let k = self
                .branch_ids
                .iter()
                .position(|b| *b == id)
                .ok_or_else(|| Error::Dimension(format!("no parameters for branch {id}")))?;
            out.branch_ids.push(id);
            out.b.push(self.b[k]);
            out.rho.push(self.rho[k]);
        }
        Ok(out)
    }

    pub fn to_file_string(&self, case_checksum: &str, notes: &[String]) -> String {
        let file = ParamsFile {
            format: PARAMS_FORMAT.into(),
            provenance: self.provenance,
            case_checksum: case_checksum.into(),
            b: keyed(&self.branch_ids, &self.b),
            gamma: keyed(&self.bus_ids, &self.gamma),
            rho: keyed(&self.branch_ids, &self.rho),
            notes: notes.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("parameters serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>, case_checksum: &str, notes: &[String]) -> Result<()> {
        std::fs::write(path, self.to_file_string(case_checksum, notes))?;
        Ok(())
    }

    /// Parses a parameter file, returning the parameters and the case checksum they were fitted on.
    pub fn from_file_str(text: &str) -> Result<(DcParameters, String)> {
        let f: ParamsFile = serde_json::from_str(text)?;
        if f.format != PARAMS_FORMAT {
            return Err(Error::Format(format!("unsupported parameter format `{}`", f.format)));
        }
        let branch_ids: Vec<usize> = f.b.iter().map(|e| e.id).collect();
        if f.rho.iter().map(|e| e.id).ne(branch_ids.iter().copied()) {
            return Err(Error::Format("b and rho must list the same branches".into()));
        }
        let params = DcParameters {
            branch_ids,
            bus_ids: f.gamma.iter().map(|e| e.id).collect(),
            b: f.b.iter().map(|e| e.value).collect(),
            gamma: f.gamma.iter().map(|e| e.value).collect(),
            rho: f.rho.iter().map(|e| e.value).collect(),
            provenance: f.provenance,
        };
        Ok((params, f.case_checksum))
    }

    /// Loads parameters and checks them against `net`.
    pub fn load(path: impl AsRef<Path>, net: &Network) -> Result<DcParameters> {
        let (params, checksum) = Self::from_file_str(&std::fs::read_to_string(path)?)?;
        let expected = net.checksum();
        if checksum != expected {
            return Err(Error::ChecksumMismatch { expected, found: checksum });
        }
        params.validate(net)?;
        Ok(params)
    }
}

const PARAMS_FORMAT: &str = "dcpf-params/1";

#[derive(Debug, Serialize, Deserialize)]
struct Keyed {
    id: usize,
    value: f64,
}

fn keyed(ids: &[usize], vals: &[f64]) -> Vec<Keyed> {
    ids.iter().zip(vals).map(|(&id, &value)| Keyed { id, value }).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    provenance: Provenance,
    case_checksum: String,
    b: Vec<Keyed>,
    gamma: Vec<Keyed>,
    rho: Vec<Keyed>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

pub fn cold_start(net: &Network, adm: &AdmittanceModel, variant: ColdVariant) -> DcParameters {
    let b = adm
        .branches
        .iter()
        .zip(net.in_service_branches())
        .map(|(ya, br)| match variant {
            ColdVariant::WithR => -ya.series.im,
            ColdVariant::RZero => 1.0 / br.x,
        })
        .collect();
    let n_bus = net.buses().len() - 1;
    let n_br = adm.branches.len();
    DcParameters {
        branch_ids: net.in_service_branch_ids(),
        bus_ids: net.non_ref_bus_ids(),
        b,
        gamma: vec![0.0; n_bus],
        rho: vec![0.0; n_br],
        provenance: match variant {
            ColdVariant::WithR => Provenance::Cold,
            ColdVariant::RZero => Provenance::ColdR0,
        },
    }
}

/// Localized-loss hot start around a solved AC operating point.
pub fn hot_start(net: &Network, adm: &AdmittanceModel, base: &AcSolution) -> Result<DcParameters> {
    if !base.converged {
        return Err(Error::InvalidArgument("hot start needs a converged AC solution".into()));
    }
    let (v, th) = (&base.v, &base.theta);
    let mut gamma_all = vec![0.0; net.buses().len()];
    let mut b = Vec::with_capacity(adm.branches.len());
    let mut rho = Vec::with_capacity(adm.branches.len());
    for br in &adm.branches {
        let (i, j) = (br.from, br.to);
        let nominal = -br.series.im;
        let g = br.series.re;
        let delta = th[i] - th[j];
        let sinc = if delta.abs() < SINC_GUARD { 1.0 } else { delta.sin() / delta };
        b.push(nominal * v[i] * v[j] * sinc);
        let loss_from = g * v[i] * (v[i] - v[j] * delta.cos());
        let loss_to = g * v[j] * (v[j] - v[i] * delta.cos());
        rho.push(loss_from);
        gamma_all[i] += loss_from;
        gamma_all[j] += loss_to;
    }
    let ref_pos = net.ref_position();
    let gamma = gamma_all
        .into_iter()
        .enumerate()
        .filter(|(k, _)| *k != ref_pos)
        .map(|(_, g)| g)
        .collect();
    Ok(DcParameters {
        branch_ids: net.in_service_branch_ids(),
        bus_ids: net.non_ref_bus_ids(),
        b,
        gamma,
        rho,
        provenance: Provenance::Hot,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// Angles at non-reference buses, radians.
    pub theta: Vec<f64>,
    pub p_dc: Vec<f64>,
}

/// Numeric factorization of `B'` for one `b`.
#[derive(Debug)]
pub struct BPrime {
    b: Vec<f64>,
    ldl: Ldl,
    condition: f64,
}

impl BPrime {
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        self.ldl.solve_in_place(rhs)
    }

    /// Solves every column of a column-major block.
    pub fn solve_columns(&self, data: &mut [f64]) {
        self.ldl.solve_columns(data)
    }
}

/// DC power flow machinery for one topology.
#[derive(Debug)]
pub struct DcModel {
    incidence: IncidenceMatrix,
    symbolic: Arc<SymbolicLdl>,
    cache: Mutex<Option<Arc<BPrime>>>,
}

impl DcModel {
    pub fn new(net: &Network) -> Result<Self> {
        Ok(Self::from_incidence(build_incidence(net)?))
    }

    pub fn from_incidence(incidence: IncidenceMatrix) -> Self {
        let mut pattern = Vec::with_capacity(3 * incidence.n_branches());
        for &(f, t) in incidence.ends() {
            if let Some(f) = f {
                pattern.push((f, f));
            }
            if let Some(t) = t {
                pattern.push((t, t));
            }
            if let (Some(f), Some(t)) = (f, t) {
                pattern.push((f, t));
            }
        }
        let symbolic = SymbolicLdl::new(incidence.n_buses(), &pattern);
        DcModel { incidence, symbolic, cache: Mutex::new(None) }
    }

    pub fn incidence(&self) -> &IncidenceMatrix {
        &self.incidence
    }

    pub fn n_branches(&self) -> usize {
        self.incidence.n_branches()
    }

    pub fn n_buses(&self) -> usize {
        self.incidence.n_buses()
    }

    /// Factorizes `B'(b)`, reusing the cached factorization when `b` is unchanged.
    pub fn factor(&self, b: &[f64]) -> Result<Arc<BPrime>> {
        if b.len() != self.n_branches() {
            return Err(Error::Dimension(format!(
                "b has {} entries, network has {} in-service branches",
                b.len(),
                self.n_branches()
            )));
        }
        if let Some(hit) = self.cache.lock().expect("cache lock").as_ref() {
            if hit.b.as_slice() == b {
                return Ok(Arc::clone(hit));
            }
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { pivot: None, condition_estimate: f64::NAN });
        }
        let mut values = Vec::with_capacity(3 * b.len());
        for (&(f, t), &w) in self.incidence.ends().iter().zip(b) {
            if f.is_some() {
                values.push(w);
            }
            if t.is_some() {
                values.push(w);
            }
            if f.is_some() && t.is_some() {
                values.push(-w);
            }
        }
        let ldl = Ldl::factor(&self.symbolic, &values)?;
        let condition = ldl.condition_estimate();
        if !(condition <= CONDITION_LIMIT) {
            log::debug!("rejecting B' with condition estimate {condition:e}");
            return Err(Error::SingularMatrix { pivot: None, condition_estimate: condition });
        }
        let fact = Arc::new(BPrime { b: b.to_vec(), ldl, condition });
        *self.cache.lock().expect("cache lock") = Some(Arc::clone(&fact));
        Ok(fact)
    }

    fn check(&self, params: &DcParameters, p: &[f64]) -> Result<()> {
        if params.gamma.len() != self.n_buses() || params.rho.len() != self.n_branches() {
            return Err(Error::Dimension("parameters do not match the network".into()));
        }
        if p.len() != self.n_buses() {
            return Err(Error::Dimension(format!(
                "injection vector has {} entries, expected {}",
                p.len(),
                self.n_buses()
            )));
        }
        Ok(())
    }

    /// Angle form: solve `B' theta = P - gamma`, then `p = diag(b) A theta + rho`.
    pub fn solve(&self, params: &DcParameters, p: &[f64]) -> Result<DcSolution> {
        self.check(params, p)?;
        let fact = self.factor(&params.b)?;
        let mut theta: Vec<f64> = p.iter().zip(&params.gamma).map(|(p, g)| p - g).collect();
        fact.solve_in_place(&mut theta);
        let mut p_dc = vec![0.0; self.n_branches()];
        self.incidence.mul(&theta, &mut p_dc);
        for ((f, b), r) in p_dc.iter_mut().zip(&params.b).zip(&params.rho) {
            *f = *f * b + r;
        }
        Ok(DcSolution { theta, p_dc })
    }

    /// PTDF matrix `diag(b) A B'^-1`, row-major `n_branches x n_buses`, built
    /// from solves against `A^T diag(b)` rather than an explicit inverse.
    pub fn ptdf(&self, b: &[f64]) -> Result<Vec<f64>> {
        let fact = self.factor(b)?;
        let (ne, nb) = (self.n_branches(), self.n_buses());
        // column e of B'^-1 A^T diag(b) is row e of the PTDF (B' is symmetric)
        let mut block = vec![0.0; ne * nb];
        for (e, (&(f, t), &w)) in self.incidence.ends().iter().zip(b).enumerate() {
            let col = &mut block[e * nb..(e + 1) * nb];
            if let Some(f) = f {
                col[f] = w;
            }
            if let Some(t) = t {
                col[t] = -w;
            }
        }
        fact.solve_columns(&mut block);
        Ok(block)
    }

    /// PTDF form: `p = diag(b) A B'^-1 (P - gamma) + rho`.
    pub fn ptdf_flows(&self, params: &DcParameters, p: &[f64]) -> Result<Vec<f64>> {
        self.check(params, p)?;
        let ptdf = self.ptdf(&params.b)?;
        let nb = self.n_buses();
        let shifted: Vec<f64> = p.iter().zip(&params.gamma).map(|(p, g)| p - g).collect();
        Ok(ptdf
            .chunks_exact(nb.max(1))
            .take(self.n_branches())
            .zip(&params.rho)
            .map(|(row, r)| row.iter().zip(&shifted).map(|(a, x)| a * x).sum::<f64>() + r)
            .collect())
    }
}

pub fn solve_dc(net: &Network, params: &DcParameters, p: &[f64]) -> Result<DcSolution> {
    DcModel::new(net)?.solve(params, p)
}

pub fn ptdf_flows(net: &Network, params: &DcParameters, p: &[f64]) -> Result<Vec<f64>> {
    DcModel::new(net)?.ptdf_flows(params, p)
}

/// Specified net injections at the non-reference buses, in bus order.
pub fn non_ref_injections(net: &Network, p_all: &[f64]) -> Vec<f64> {
    let r = net.ref_position();
    p_all.iter().enumerate().filter(|(k, _)| *k != r).map(|(_, p)| *p).collect()
}
