//! Training loss and its gradient.
//!
//! For scenarios `m` with residuals `r_m = p_dc(P_m) - p_ac_m`:
//!
//! ```text
//! L = (1/|E|) sum_m |r_m|^2
//! ```
//!
//! The gradient is the vector-Jacobian product of the PTDF flow map. With
//! `M_m = A B'^-1 (P_m - gamma)` and `W_m = B'^-1 A^T diag(b) r_m`:
//!
//! ```text
//! g_b     = (2/|E|) sum_m M_m .* (r_m - A W_m)
//! g_gamma = -(2/|E|) sum_m W_m
//! g_rho   = (2/|E|) sum_m r_m
//! ```
//!
//! `H = A B'^-1 A^T` is never formed; it is applied through solves with the
//! single factorization of `B'` made per parameter point.

use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dc::{BPrime, DcModel, DcParameters};
use crate::error::{Error, Result};
use crate::network::Network;
pub use crate::scenario::Subset;
use crate::scenario::ScenarioSet;
use crate::seed;

/// Scenarios per work unit. Fixed so that the reduction order, and hence the
/// floating-point result, does not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub sq_two_norm: f64,
    pub inf_norm: f64,
    pub n_scenarios: usize,
    /// `sq_two_norm / n_scenarios`, for comparing datasets of different size.
    pub mean_sq_two_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub g_b: Vec<f64>,
    pub g_gamma: Vec<f64>,
    pub g_rho: Vec<f64>,
}

impl Gradient {
    /// Stacked `[g_b; g_gamma; g_rho]`, matching [`DcParameters::to_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut g = self.g_b.clone();
        g.extend_from_slice(&self.g_gamma);
        g.extend_from_slice(&self.g_rho);
        g
    }

    pub fn inf_norm(&self) -> f64 {
        self.g_b.iter().chain(&self.g_gamma).chain(&self.g_rho).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Loss evaluation for one topology and one scenario subset.
#[derive(Debug)]
pub struct Evaluator {
    model: Arc<DcModel>,
    branch_ids: Vec<usize>,
    bus_ids: Vec<usize>,
    /// Injections, one column of length `n_buses` per scenario.
    p: Vec<f64>,
    /// Targets, one column of length `n_branches` per scenario.
    target: Vec<f64>,
    /// Multiplier of the bias terms per row: 1 for real scenarios.
    weight: Vec<f64>,
    /// Squared residual that no parameter choice can remove (compressed form only).
    constant: f64,
    n: usize,
    /// Scenarios the rows stand for.
    represented: usize,
    compressed: bool,
}

/// Per-chunk partial sums.
struct Partial {
    sq: f64,
    inf: f64,
    g_b: Vec<f64>,
    g_gamma: Vec<f64>,
    g_rho: Vec<f64>,
}

impl Evaluator {
    pub fn new(net: &Network, data: &ScenarioSet, subset: Subset) -> Result<Self> {
        Self::with_model(Arc::new(DcModel::new(net)?), data, data.indices(subset))
    }

    /// Shares an existing model; `indices` pick the scenarios to use.
    pub fn with_model(model: Arc<DcModel>, data: &ScenarioSet, indices: &[usize]) -> Result<Self> {
        let inc = model.incidence();
        if data.branch_ids != inc.branch_ids() || data.bus_ids != inc.bus_ids() {
            return Err(Error::Dimension("dataset was generated for a different topology".into()));
        }
        let (nb, ne) = (inc.n_buses(), inc.n_branches());
        let mut p = Vec::with_capacity(nb * indices.len());
        let mut target = Vec::with_capacity(ne * indices.len());
        for &i in indices {
            let s = data
                .scenarios
                .get(i)
                .ok_or_else(|| Error::Dimension(format!("scenario index {i} out of range")))?;
            if s.p.len() != nb || s.p_ac.len() != ne {
                return Err(Error::Dimension(format!("scenario {i} has the wrong length")));
            }
            p.extend_from_slice(&s.p);
            target.extend_from_slice(&s.p_ac);
        }
        Ok(Evaluator {
            branch_ids: inc.branch_ids().to_vec(),
            bus_ids: inc.bus_ids().to_vec(),
            model,
            p,
            target,
            weight: vec![1.0; indices.len()],
            constant: 0.0,
            n: indices.len(),
            represented: indices.len(),
            compressed: false,
        })
    }

    /// Equivalent evaluator over at most `n_buses + 1` rows.
    ///
    /// For fixed parameters the flows are linear in `z = [P; 1]`, so the loss
    /// is `|Z F^T - Y|^2` with scenarios as rows of `Z` and `Y`. A QR
    /// factorization of `[Z Y]` gives `R = [R11 R12; 0 R22]` with
    /// `|Z F^T - Y|^2 = |R11 F^T - R12|^2 + |R22|^2`, so the rows of
    /// `[R11 R12]` act as weighted pseudo-scenarios and `|R22|^2` is a
    /// constant. Loss and gradient are unchanged; the infinity norm is not
    /// available from the compressed rows and is reported as NaN.
    pub fn compress(&self) -> Evaluator {
        let (nb, ne) = (self.bus_ids.len(), self.branch_ids.len());
        let k = nb + 1;
        if self.compressed || self.n <= k {
            return self.clone_rows();
        }
        let cols = k + ne;
        let z = faer::Mat::<f64>::from_fn(self.n, cols, |m, j| {
            if j < nb {
                self.p[m * nb + j]
            } else if j == nb {
                self.weight[m]
            } else {
                self.target[m * ne + j - k]
            }
        });
        let qr = z.qr();
        let r = qr.thin_R();
        let mut p = Vec::with_capacity(k * nb);
        let mut target = Vec::with_capacity(k * ne);
        let mut weight = Vec::with_capacity(k);
        for i in 0..k {
            p.extend((0..nb).map(|j| r[(i, j)]));
            weight.push(r[(i, nb)]);
            target.extend((k..cols).map(|j| r[(i, j)]));
        }
        let mut constant = 0.0;
        for i in k..r.nrows() {
            for j in k..cols {
                constant += r[(i, j)] * r[(i, j)];
            }
        }
        Evaluator {
            model: self.model.clone(),
            branch_ids: self.branch_ids.clone(),
            bus_ids: self.bus_ids.clone(),
            p,
            target,
            weight,
            constant,
            n: k,
            represented: self.represented,
            compressed: true,
        }
    }

    fn clone_rows(&self) -> Evaluator {
        Evaluator {
            model: self.model.clone(),
            branch_ids: self.branch_ids.clone(),
            bus_ids: self.bus_ids.clone(),
            p: self.p.clone(),
            target: self.target.clone(),
            weight: self.weight.clone(),
            constant: self.constant,
            n: self.n,
            represented: self.represented,
            compressed: self.compressed,
        }
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    pub fn model(&self) -> &Arc<DcModel> {
        &self.model
    }

    pub fn n_scenarios(&self) -> usize {
        self.represented
    }

    fn check(&self, params: &DcParameters) -> Result<()> {
        if params.branch_ids != self.branch_ids || params.bus_ids != self.bus_ids {
            return Err(Error::Dimension("parameters do not match the dataset topology".into()));
        }
        if params.b.len() != self.branch_ids.len()
            || params.rho.len() != self.branch_ids.len()
            || params.gamma.len() != self.bus_ids.len()
        {
            return Err(Error::Dimension("parameter vector lengths are inconsistent".into()));
        }
        Ok(())
    }

    /// Residuals `p_dc - p_ac`, one column per scenario.
    pub fn residuals(&self, params: &DcParameters) -> Result<Vec<f64>> {
        self.check(params)?;
        let fact = self.model.factor(&params.b)?;
        let (nb, ne) = (self.bus_ids.len(), self.branch_ids.len());
        let mut out = vec![0.0; ne * self.n];
        out.par_chunks_mut((ne * CHUNK).max(1)).enumerate().for_each(|(c, r)| {
            let first = c * CHUNK;
            let cols = r.len() / ne.max(1);
            let mut theta = self.shifted(params, first, cols);
            fact.solve_columns(&mut theta);
            let mut m = vec![0.0; ne];
            for j in 0..cols {
                self.model.incidence().mul(&theta[j * nb..(j + 1) * nb], &mut m);
                let t = &self.target[(first + j) * ne..(first + j + 1) * ne];
                let w = self.weight[first + j];
                for e in 0..ne {
                    r[j * ne + e] = params.b[e] * m[e] + w * params.rho[e] - t[e];
                }
            }
        });
        Ok(out)
    }

    /// `P - gamma` for `cols` scenarios starting at `first`.
    fn shifted(&self, params: &DcParameters, first: usize, cols: usize) -> Vec<f64> {
        let nb = self.bus_ids.len();
        let mut x = self.p[first * nb..(first + cols) * nb].to_vec();
        for (col, w) in x.chunks_exact_mut(nb.max(1)).zip(&self.weight[first..]) {
            for (v, g) in col.iter_mut().zip(&params.gamma) {
                *v -= w * g;
            }
        }
        x
    }

    fn chunk(&self, params: &DcParameters, fact: &BPrime, first: usize, cols: usize, grad: bool) -> Partial {
        let (nb, ne) = (self.bus_ids.len(), self.branch_ids.len());
        let inc = self.model.incidence();
        let mut theta = self.shifted(params, first, cols);
        fact.solve_columns(&mut theta);
        let mut m = vec![0.0; ne * cols];
        let mut r = vec![0.0; ne * cols];
        let (mut sq, mut inf) = (0.0, 0.0f64);
        for j in 0..cols {
            let mj = &mut m[j * ne..(j + 1) * ne];
            inc.mul(&theta[j * nb..(j + 1) * nb], mj);
            let t = &self.target[(first + j) * ne..(first + j + 1) * ne];
            let w = self.weight[first + j];
            for e in 0..ne {
                let v = params.b[e] * mj[e] + w * params.rho[e] - t[e];
                r[j * ne + e] = v;
                sq += v * v;
                inf = inf.max(v.abs());
            }
        }
        let mut part = Partial { sq, inf, g_b: Vec::new(), g_gamma: Vec::new(), g_rho: Vec::new() };
        if !grad {
            return part;
        }
        // W = B'^-1 A^T diag(b) R, reusing theta's storage
        let mut w = theta;
        let mut br = vec![0.0; ne];
        for j in 0..cols {
            for e in 0..ne {
                br[e] = params.b[e] * r[j * ne + e];
            }
            inc.mul_transpose(&br, &mut w[j * nb..(j + 1) * nb]);
        }
        fact.solve_columns(&mut w);
        part.g_b = vec![0.0; ne];
        part.g_gamma = vec![0.0; nb];
        part.g_rho = vec![0.0; ne];
        let mut aw = vec![0.0; ne];
        for j in 0..cols {
            let wj = &w[j * nb..(j + 1) * nb];
            let c = self.weight[first + j];
            inc.mul(wj, &mut aw);
            for e in 0..ne {
                let rj = r[j * ne + e];
                part.g_b[e] += m[j * ne + e] * (rj - aw[e]);
                part.g_rho[e] += c * rj;
            }
            for (g, v) in part.g_gamma.iter_mut().zip(wj) {
                *g -= c * v;
            }
        }
        part
    }

    fn evaluate(&self, params: &DcParameters, grad: bool) -> Result<(LossValue, Option<Gradient>)> {
        self.check(params)?;
        let fact = self.model.factor(&params.b)?;
        let n_chunks = self.n.div_ceil(CHUNK);
        let parts: Vec<Partial> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let first = c * CHUNK;
                self.chunk(params, &fact, first, CHUNK.min(self.n - first), grad)
            })
            .collect();
        let ne = self.branch_ids.len();
        let scale = 1.0 / ne as f64;
        let mut sq = 0.0;
        let mut inf = 0.0f64;
        for p in &parts {
            sq += p.sq;
            inf = inf.max(p.inf);
        }
        let sq = (sq + self.constant) * scale;
        let value = LossValue {
            sq_two_norm: sq,
            inf_norm: if self.compressed { f64::NAN } else { inf },
            n_scenarios: self.represented,
            mean_sq_two_norm: if self.represented == 0 { 0.0 } else { sq / self.represented as f64 },
        };
        if !grad {
            return Ok((value, None));
        }
        let mut g = Gradient {
            g_b: vec![0.0; ne],
            g_gamma: vec![0.0; self.bus_ids.len()],
            g_rho: vec![0.0; ne],
        };
        for p in &parts {
            add(&mut g.g_b, &p.g_b);
            add(&mut g.g_gamma, &p.g_gamma);
            add(&mut g.g_rho, &p.g_rho);
        }
        let two = 2.0 * scale;
        for v in g.g_b.iter_mut().chain(&mut g.g_gamma).chain(&mut g.g_rho) {
            *v *= two;
        }
        Ok((value, Some(g)))
    }

    pub fn loss(&self, params: &DcParameters) -> Result<LossValue> {
        Ok(self.evaluate(params, false)?.0)
    }

    pub fn loss_and_gradient(&self, params: &DcParameters) -> Result<(LossValue, Gradient)> {
        let (v, g) = self.evaluate(params, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    pub fn gradient(&self, params: &DcParameters) -> Result<Gradient> {
        Ok(self.loss_and_gradient(params)?.1)
    }

    /// Central-difference check of the analytic gradient on up to `n_coords`
    /// random coordinates per block.
    pub fn fd_check(
        &self,
        params: &DcParameters,
        n_coords: usize,
        step: f64,
        seed: u64,
    ) -> Result<FdReport> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
        }
        let mut report = FdReport { step, resolution: 0.0, blocks: Vec::new() };
        if n_coords == 0 {
            return Ok(report);
        }
        let g = self.gradient(params)?.to_vector();
        // First-order change of f when every flow carries a relative rounding
        // error of eps; quotients below this over the step are noise.
        let r = self.residuals(params)?;
        let spread: f64 = r.iter().zip(&self.target).map(|(r, t)| r.abs() * (t.abs() + r.abs())).sum();
        let resolution = RESOLUTION_FACTOR * f64::EPSILON * 2.0 * spread / self.branch_ids.len() as f64 / step;
        report.resolution = resolution;
        let x = params.to_vector();
        let (ne, nb) = (params.n_branches(), params.n_buses());
        let blocks = [(Block::B, 0, ne), (Block::Gamma, ne, nb), (Block::Rho, ne + nb, ne)];
        let mut rng = seed::rng(seed, "fd_check", 0);
        let f = |x: &[f64]| self.loss(&params.with_vector(x, params.provenance)).map(|l| l.sq_two_norm);
        let central = |i: usize, h: f64| -> Result<f64> {
            let mut xp = x.clone();
            xp[i] += h;
            let fp = f(&xp)?;
            xp[i] = x[i] - h;
            let fm = f(&xp)?;
            Ok((fp - fm) / (2.0 * h))
        };
        for (block, offset, len) in blocks {
            if len == 0 {
                continue;
            }
            let mut picks: Vec<usize> = sample(&mut rng, len, n_coords.min(len)).into_vec();
            picks.sort_unstable();
            let mut entries = Vec::with_capacity(picks.len());
            for k in picks {
                let i = offset + k;
                let fd = central(i, step)?;
                let fd_half = central(i, step / 2.0)?;
                entries.push(FdEntry {
                    index: k,
                    analytic: g[i],
                    finite_difference: fd,
                    rel_error: rel_error(g[i], fd),
                    scaled_error: scaled_error(g[i], fd, resolution),
                    finite_difference_half_step: fd_half,
                });
            }
            let worst = entries.iter().map(|e| e.scaled_error).fold(0.0, f64::max);
            let worst_half = entries
                .iter()
                .map(|e| scaled_error(e.analytic, e.finite_difference_half_step, 2.0 * resolution))
                .fold(0.0, f64::max);
            // truncation error is O(h^2): halving the step cuts it about 4x,
            // while rounding error would grow instead
            let truncation_dominated = worst > FD_TOLERANCE && worst_half < 0.5 * worst;
            report.blocks.push(FdBlock { block, max_rel_error: worst, truncation_dominated, entries });
        }
        Ok(report)
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Acceptance threshold for [`FdReport::passes`].
pub const FD_TOLERANCE: f64 = 1e-5;

/// Safety multiple on the estimated rounding noise of a difference quotient.
pub const RESOLUTION_FACTOR: f64 = 10.0;

/// Relative error whose denominator never drops below `resolution / FD_TOLERANCE`,
/// so differences at the rounding level of the quotient itself count as agreement.
pub fn scaled_error(analytic: f64, fd: f64, resolution: f64) -> f64 {
    let d = analytic.abs().max(fd.abs()).max(resolution / FD_TOLERANCE);
    if d == 0.0 {
        0.0
    } else {
        (analytic - fd).abs() / d
    }
}

/// `|a - b| / max(|a|, |b|)`, or 0 when both vanish.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    B,
    Gamma,
    Rho,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdEntry {
    /// Position within the block.
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    /// Plain relative error.
    pub rel_error: f64,
    /// See [`scaled_error`].
    pub scaled_error: f64,
    pub finite_difference_half_step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdBlock {
    pub block: Block,
    /// Largest [`scaled_error`] in the block.
    pub max_rel_error: f64,
    pub truncation_dominated: bool,
    pub entries: Vec<FdEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdReport {
    pub step: f64,
    /// Estimated rounding noise of a difference quotient at this step.
    pub resolution: f64,
    pub blocks: Vec<FdBlock>,
}

impl FdReport {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_rel_error() <= FD_TOLERANCE
    }
}

pub fn loss(net: &Network, params: &DcParameters, data: &ScenarioSet, subset: Subset) -> Result<LossValue> {
    Evaluator::new(net, data, subset)?.loss(params)
}

pub fn gradient(net: &Network, params: &DcParameters, data: &ScenarioSet, subset: Subset) -> Result<Gradient> {
    Evaluator::new(net, data, subset)?.gradient(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::{cold_start, ColdVariant};
    use crate::network::build_admittances;
    use crate::network::fixtures::*;
    use crate::scenario::Scenario;
    use approx::assert_relative_eq;

    fn set_for(net: &Network, scenarios: Vec<Scenario>) -> ScenarioSet {
        let n = scenarios.len();
        ScenarioSet {
            case_checksum: net.checksum(),
            seed: 0,
            sigma: 0.0,
            split: 0.5,
            bus_ids: net.non_ref_bus_ids(),
            branch_ids: net.in_service_branch_ids(),
            scenarios,
            train_indices: (0..n).collect(),
            test_indices: vec![],
            rejected_count: 0,
        }
    }

    fn ring_data(params: &DcParameters, net: &Network, n: usize) -> ScenarioSet {
        let model = DcModel::new(net).unwrap();
        let scen = (0..n)
            .map(|m| {
                let p = vec![0.3 + 0.1 * m as f64, -0.5 + 0.05 * m as f64];
                let mut p_ac = model.solve(params, &p).unwrap().p_dc;
                // targets off the DC manifold so residuals are nonzero
                p_ac[m % 3] += 0.05;
                p_ac[(m + 1) % 3] -= 0.02 * m as f64;
                Scenario { p, p_ac, converged: true }
            })
            .collect();
        set_for(net, scen)
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let net = ring3();
        let params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let model = DcModel::new(&net).unwrap();
        let scen = [[0.2, -0.4], [1.0, 0.1]]
            .iter()
            .map(|p| Scenario { p: p.to_vec(), p_ac: model.solve(&params, p).unwrap().p_dc, converged: true })
            .collect();
        let data = set_for(&net, scen);
        let ev = Evaluator::new(&net, &data, Subset::Train).unwrap();
        let (l, g) = ev.loss_and_gradient(&params).unwrap();
        assert!(l.sq_two_norm < 1e-28 && l.inf_norm < 1e-14);
        assert!(g.inf_norm() < 1e-13);
    }

    #[test]
    fn single_residual_formula() {
        // 20 parallel branches between two buses: one scenario, one residual of 0.3
        let branches = (1..=20).map(|k| line(k, 1, 2, 0.0, 0.1)).collect();
        let net = Network::new(
            "p".into(),
            100.0,
            vec![bus(1, crate::network::BusKind::Ref, 0.0), bus(2, crate::network::BusKind::Pq, 0.0)],
            branches,
            vec![],
        )
        .unwrap();
        let params = cold_start(&net, &build_admittances(&net), ColdVariant::RZero);
        let mut p_ac = vec![0.0; 20];
        p_ac[4] = -0.3;
        let data = set_for(&net, vec![Scenario { p: vec![0.0], p_ac, converged: true }]);
        let l = loss(&net, &params, &data, Subset::Train).unwrap();
        assert_relative_eq!(l.sq_two_norm, 0.0045, max_relative = 1e-14);
        assert_relative_eq!(l.inf_norm, 0.3);
    }

    #[test]
    fn g_rho_is_scaled_residual_sum() {
        let net = ring3();
        let mut params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        params.gamma = vec![0.01, -0.02];
        let data = ring_data(&params, &net, 5);
        let ev = Evaluator::new(&net, &data, Subset::Train).unwrap();
        let g = ev.gradient(&params).unwrap();
        let r = ev.residuals(&params).unwrap();
        for e in 0..3 {
            let s: f64 = (0..5).map(|m| r[m * 3 + e]).sum();
            assert_relative_eq!(g.g_rho[e], 2.0 / 3.0 * s, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = ring3();
        let mut params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let data = ring_data(&params, &net, 6);
        params.b = vec![9.0, 11.0, 10.5];
        params.gamma = vec![0.02, -0.01];
        params.rho = vec![0.0, 0.01, -0.03];
        let ev = Evaluator::new(&net, &data, Subset::Train).unwrap();
        let rep = ev.fd_check(&params, 10, 1e-6, 1).unwrap();
        assert_eq!(rep.blocks.len(), 3);
        assert!(rep.passes(), "{rep:#?}");
    }

    #[test]
    fn fd_check_boundaries() {
        let net = ring3();
        let mut params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let data = ring_data(&params, &net, 6);
        params.b = vec![9.0, 11.0, 10.5];
        let ev = Evaluator::new(&net, &data, Subset::Train).unwrap();
        assert!(ev.fd_check(&params, 0, 1e-6, 1).unwrap().is_empty());
        let rep = ev.fd_check(&params, 3, 1e-1, 1).unwrap();
        let b = rep.blocks.iter().find(|b| b.block == Block::B).unwrap();
        assert!(b.truncation_dominated, "{b:#?}");
    }

    #[test]
    fn scaled_error_floor() {
        // an exactly zero derivative against rounding noise in the quotient
        assert!(scaled_error(0.0, 8e-14, 1e-12) <= FD_TOLERANCE);
        assert_eq!(rel_error(0.0, 8e-14), 1.0);
        // above the floor it is the plain relative error
        assert_relative_eq!(scaled_error(2.0, 2.0002, 1e-12), rel_error(2.0, 2.0002));
        assert!(scaled_error(1e-3, 1.1e-3, 1e-12) > FD_TOLERANCE);
    }

    #[test]
    fn loss_is_additive_over_disjoint_subsets() {
        let net = ring3();
        let params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let mut data = ring_data(&params, &net, 70);
        let mut p2 = params.clone();
        p2.b[1] = 12.0;
        let all = loss(&net, &p2, &data, Subset::Train).unwrap().sq_two_norm;
        data.train_indices = (0..40).collect();
        data.test_indices = (40..70).collect();
        let a = loss(&net, &p2, &data, Subset::Train).unwrap().sq_two_norm;
        let b = loss(&net, &p2, &data, Subset::Test).unwrap().sq_two_norm;
        assert_relative_eq!(a + b, all, max_relative = 1e-13);
    }

    #[test]
    fn compressed_rows_give_the_same_loss_and_gradient() {
        let net = ring3();
        let mut params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let data = ring_data(&params, &net, 50);
        params.b = vec![9.0, 11.0, 10.5];
        params.gamma = vec![0.02, -0.01];
        params.rho = vec![0.0, 0.01, -0.03];
        let ev = Evaluator::new(&net, &data, Subset::Train).unwrap();
        let small = ev.compress();
        assert!(small.is_compressed());
        assert_eq!(small.n, 3);
        assert_eq!(small.n_scenarios(), 50);
        let (l, g) = ev.loss_and_gradient(&params).unwrap();
        let (lc, gc) = small.loss_and_gradient(&params).unwrap();
        assert_relative_eq!(l.sq_two_norm, lc.sq_two_norm, max_relative = 1e-12);
        assert!(lc.inf_norm.is_nan());
        for (a, b) in g.to_vector().iter().zip(gc.to_vector()) {
            assert_relative_eq!(*a, b, max_relative = 1e-10, epsilon = 1e-13);
        }
    }

    #[test]
    fn mismatched_topology_rejected() {
        let net = ring3();
        let params = cold_start(&net, &build_admittances(&net), ColdVariant::WithR);
        let data = ring_data(&params, &net, 2);
        assert!(Evaluator::new(&two_bus(), &data, Subset::Train).is_err());
    }
}
