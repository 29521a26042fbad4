//! Randomized operating points and their AC flows.
//!
//! Every nonzero nominal active injection (each bus load and each generator
//! output) is multiplied by its own `N(1, sigma)` factor. Reactive load follows
//! the active load factor of its bus. Draws are taken sequentially from one
//! seeded stream, solved in parallel, and kept in draw order, so the result
//! does not depend on the thread count.
//!
//! File layout: one JSON header line, then the payload as little-endian
//! `f64`: per scenario the non-reference injections followed by the
//! from-side branch flows.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ac::{AcSolver, InjectionSpec, SolverOptions};
use crate::error::{Error, Result};
use crate::network::{hex, AdmittanceModel, Network};
use crate::seed;

pub const DEFAULT_SIGMA: f64 = 0.10;
const FORMAT: &str = "dcpf-scenarios/1";
/// Rejection-rate guard is only armed after this many attempts.
const MIN_ATTEMPTS_FOR_ABORT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Subset {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Net active injections at the non-reference buses.
    pub p: Vec<f64>,
    /// AC from-side active flows over in-service branches.
    pub p_ac: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub case_checksum: String,
    pub seed: u64,
    pub sigma: f64,
    pub split: f64,
    pub bus_ids: Vec<usize>,
    pub branch_ids: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub rejected_count: usize,
}

/// Multiplicative factors for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    /// Per bus position; 1 where the bus has no active load.
    pub load: Vec<f64>,
    /// Per generator; 1 for out-of-service or zero-output units.
    pub gen: Vec<f64>,
}

/// Draws one set of factors: buses in order, then generators in order.
pub fn draw_factors<R: Rng>(net: &Network, sigma: f64, rng: &mut R) -> Factors {
    let mut normal = |active: bool| {
        if active {
            let z: f64 = rng.sample(StandardNormal);
            1.0 + sigma * z
        } else {
            1.0
        }
    };
    let load = net.buses().iter().map(|b| normal(b.p_load != 0.0)).collect();
    let gen = net.generators().iter().map(|g| normal(g.in_service && g.p_gen != 0.0)).collect();
    Factors { load, gen }
}

/// Injection spec for the network scaled by `f`.
pub fn scaled_spec(net: &Network, f: &Factors) -> InjectionSpec {
    let mut spec = InjectionSpec::from_network(net);
    for (k, b) in net.buses().iter().enumerate() {
        spec.p[k] = -b.p_load * f.load[k];
        spec.q[k] = -b.q_load * f.load[k];
    }
    for (g, s) in net.generators().iter().zip(&f.gen) {
        if g.in_service {
            let k = net.bus_position(g.bus).expect("validated");
            spec.p[k] += g.p_gen * s;
            spec.q[k] += g.q_gen;
        }
    }
    spec
}

fn n_train(n: usize, split: f64) -> usize {
    ((n as f64) * split).round() as usize
}

pub fn generate(
    net: &Network,
    adm: &AdmittanceModel,
    n: usize,
    sigma: f64,
    seed: u64,
    split: f64,
) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("scenario count must be at least 1".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {split}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    let solver = AcSolver::new(net, adm)?;
    let opts = SolverOptions::default();
    let ref_pos = net.ref_position();
    let mut rng = seed::rng(seed, "scenarios", 0);
    let mut scenarios = Vec::with_capacity(n);
    let (mut attempts, mut rejected) = (0usize, 0usize);

    while scenarios.len() < n {
        let batch: Vec<InjectionSpec> = (0..n - scenarios.len())
            .map(|_| scaled_spec(net, &draw_factors(net, sigma, &mut rng)))
            .collect();
        let solved: Vec<Option<Scenario>> = batch
            .par_iter()
            .map(|spec| match solver.solve(spec, &opts) {
                Ok(sol) if sol.converged => Some(Scenario {
                    p: spec
                        .p
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != ref_pos)
                        .map(|(_, p)| *p)
                        .collect(),
                    p_ac: sol.p_from,
                    converged: true,
                }),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("scenario solve failed: {e}");
                    None
                }
            })
            .collect();
        for s in solved {
            attempts += 1;
            match s {
                Some(s) => scenarios.push(s),
                None => rejected += 1,
            }
        }
        if attempts >= MIN_ATTEMPTS_FOR_ABORT && 2 * rejected > attempts {
            return Err(Error::RejectionRate { rejected, attempts });
        }
    }
    if rejected > 0 {
        log::info!("{rejected} of {attempts} draws did not converge and were resampled");
    }
    let k = n_train(n, split);
    Ok(ScenarioSet {
        case_checksum: net.checksum(),
        seed,
        sigma,
        split,
        bus_ids: net.non_ref_bus_ids(),
        branch_ids: net.in_service_branch_ids(),
        scenarios,
        train_indices: (0..k).collect(),
        test_indices: (k..n).collect(),
        rejected_count: rejected,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    prng: String,
    case_checksum: String,
    seed: u64,
    sigma: f64,
    split: f64,
    n_scenarios: usize,
    bus_ids: Vec<usize>,
    branch_ids: Vec<usize>,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
    rejected_count: usize,
    payload_sha256: String,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn indices(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::Train => &self.train_indices,
            Subset::Test => &self.test_indices,
        }
    }

    /// Copy restricted to `indices`, all of which become training scenarios.
    pub fn select(&self, indices: &[usize]) -> ScenarioSet {
        ScenarioSet {
            scenarios: indices.iter().map(|&i| self.scenarios[i].clone()).collect(),
            train_indices: (0..indices.len()).collect(),
            test_indices: Vec::new(),
            ..self.clone()
        }
    }

    /// Fails unless the set was generated for `net`.
    pub fn check_case(&self, net: &Network) -> Result<()> {
        let expected = net.checksum();
        if self.case_checksum != expected {
            return Err(Error::ChecksumMismatch { expected, found: self.case_checksum.clone() });
        }
        Ok(())
    }

    fn payload(&self) -> Vec<u8> {
        let per = self.bus_ids.len() + self.branch_ids.len();
        let mut out = Vec::with_capacity(8 * per * self.len());
        for s in &self.scenarios {
            for v in s.p.iter().chain(&s.p_ac) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let header = Header {
            format: FORMAT.into(),
            prng: seed::PRNG_NAME.into(),
            case_checksum: self.case_checksum.clone(),
            seed: self.seed,
            sigma: self.sigma,
            split: self.split,
            n_scenarios: self.len(),
            bus_ids: self.bus_ids.clone(),
            branch_ids: self.branch_ids.clone(),
            train_indices: self.train_indices.clone(),
            test_indices: self.test_indices.clone(),
            rejected_count: self.rejected_count,
            payload_sha256: hex(&Sha256::digest(&payload)),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&payload);
        out
    }

    /// SHA-256 of the serialized file.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn from_reader(reader: impl Read) -> Result<ScenarioSet> {
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end())?;
        if h.format != FORMAT {
            return Err(Error::Format(format!("unsupported dataset format `{}`", h.format)));
        }
        if h.prng != seed::PRNG_NAME {
            log::warn!("dataset was generated with `{}`", h.prng);
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let (nb, ne) = (h.bus_ids.len(), h.branch_ids.len());
        if payload.len() != 8 * (nb + ne) * h.n_scenarios {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                8 * (nb + ne) * h.n_scenarios
            )));
        }
        let digest = hex(&Sha256::digest(&payload));
        if digest != h.payload_sha256 {
            return Err(Error::Format("payload checksum does not match header".into()));
        }
        let mut indices: Vec<usize> = h.train_indices.iter().chain(&h.test_indices).copied().collect();
        indices.sort_unstable();
        if indices.iter().copied().ne(0..h.n_scenarios) {
            return Err(Error::Format("train/test indices must partition the scenarios".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let scenarios = values
            .chunks_exact((nb + ne).max(1))
            .take(h.n_scenarios)
            .map(|row| Scenario { p: row[..nb].to_vec(), p_ac: row[nb..].to_vec(), converged: true })
            .collect();
        Ok(ScenarioSet {
            case_checksum: h.case_checksum,
            seed: h.seed,
            sigma: h.sigma,
            split: h.split,
            bus_ids: h.bus_ids,
            branch_ids: h.branch_ids,
            scenarios,
            train_indices: h.train_indices,
            test_indices: h.test_indices,
            rejected_count: h.rejected_count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a dataset and checks it belongs to `net`.
    pub fn load(path: impl AsRef<Path>, net: &Network) -> Result<ScenarioSet> {
        let set = Self::from_reader(std::fs::File::open(path)?)?;
        set.check_case(net)?;
        Ok(set)
    }

    /// Long-format CSV: `scenario_id,subset,quantity,id,value`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "scenario_id,subset,quantity,id,value")?;
        let mut subset = vec!["train"; self.len()];
        for &i in &self.test_indices {
            subset[i] = "test";
        }
        for (m, s) in self.scenarios.iter().enumerate() {
            for (id, v) in self.bus_ids.iter().zip(&s.p) {
                writeln!(w, "{m},{},p_injection,{id},{v:e}", subset[m])?;
            }
            for (id, v) in self.branch_ids.iter().zip(&s.p_ac) {
                writeln!(w, "{m},{},p_ac_from,{id},{v:e}", subset[m])?;
            }
        }
        Ok(())
    }
}

/// Number of buses whose loads get a random factor and generators that do.
pub fn n_random_sources(net: &Network) -> (usize, usize) {
    let loads = net.buses().iter().filter(|b| b.p_load != 0.0).count();
    let gens = net.generators().iter().filter(|g| g.in_service && g.p_gen != 0.0).count();
    (loads, gens)
}
