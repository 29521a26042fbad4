//! Newton-Raphson AC power flow in polar coordinates.
//!
//! The reference bus absorbs active and reactive slack, PV buses hold their
//! voltage magnitude unconditionally (no reactive limits), and the Jacobian is
//! refactorized by a sparse LU at every iteration. The symbolic analysis is
//! done once per topology in [`AcSolver::new`] and shared by every solve.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::MatMut;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{AdmittanceModel, BusKind, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Largest acceptable active/reactive mismatch, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-8, max_iterations: 30 }
    }
}

/// Specified injections per bus position. `p` is ignored at the REF bus,
/// `q` at PV and REF buses; `v_setpoint` is used only at PV and REF buses.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v_setpoint: Vec<f64>,
}

impl InjectionSpec {
    pub fn from_network(net: &Network) -> Self {
        InjectionSpec {
            p: net.net_p(),
            q: net.net_q(),
            v_setpoint: net.buses().iter().map(|b| b.v_setpoint.unwrap_or(1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSolution {
    pub v: Vec<f64>,
    /// Radians, zero at the REF bus.
    pub theta: Vec<f64>,
    /// Flows over in-service branches, in branch order.
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    /// Realized net injections at every bus, including REF.
    pub p_net: Vec<f64>,
    pub q_net: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFlows {
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
}

/// Terminal flows of every in-service branch for a given voltage state.
pub fn branch_flows(adm: &AdmittanceModel, v: &[f64], theta: &[f64]) -> BranchFlows {
    let n = adm.branches.len();
    let mut out = BranchFlows {
        p_from: Vec::with_capacity(n),
        q_from: Vec::with_capacity(n),
        p_to: Vec::with_capacity(n),
        q_to: Vec::with_capacity(n),
    };
    for br in &adm.branches {
        let vf = Complex64::from_polar(v[br.from], theta[br.from]);
        let vt = Complex64::from_polar(v[br.to], theta[br.to]);
        let sf = vf * (br.y_ff * vf + br.y_ft * vt).conj();
        let st = vt * (br.y_tf * vf + br.y_tt * vt).conj();
        out.p_from.push(sf.re);
        out.q_from.push(sf.im);
        out.p_to.push(st.re);
        out.q_to.push(st.im);
    }
    out
}

pub fn solve_ac(
    net: &Network,
    adm: &AdmittanceModel,
    spec: &InjectionSpec,
    opts: &SolverOptions,
) -> Result<AcSolution> {
    AcSolver::new(net, adm)?.solve(spec, opts)
}

/// Where each Jacobian entry of a given Ybus position lands.
#[derive(Debug, Clone, Copy)]
struct JacSlots {
    p_theta: Option<usize>,
    p_vm: Option<usize>,
    q_theta: Option<usize>,
    q_vm: Option<usize>,
}

/// Prepared solver for one topology and admittance model.
#[derive(Debug, Clone)]
pub struct AcSolver {
    adm: AdmittanceModel,
    kinds: Vec<BusKind>,
    ref_pos: usize,
    /// Ybus rows: (column, value), diagonal included.
    ybus: Vec<Vec<(usize, Complex64)>>,
    /// Jacobian slots aligned with `ybus`.
    slots: Vec<Vec<JacSlots>>,
    theta_var: Vec<Option<usize>>,
    vm_var: Vec<Option<usize>>,
    dim: usize,
    pattern: SymbolicSparseColMat<usize>,
    symbolic_lu: SymbolicLu<usize>,
}

impl AcSolver {
    pub fn new(net: &Network, adm: &AdmittanceModel) -> Result<Self> {
        let n = net.buses().len();
        let kinds: Vec<BusKind> = net.buses().iter().map(|b| b.kind).collect();
        let ref_pos = net.ref_position();

        let mut dense_rows: Vec<std::collections::BTreeMap<usize, Complex64>> =
            vec![Default::default(); n];
        for (i, y) in adm.bus_shunt.iter().enumerate() {
            *dense_rows[i].entry(i).or_default() += *y;
        }
        for br in &adm.branches {
            *dense_rows[br.from].entry(br.from).or_default() += br.y_ff;
            *dense_rows[br.from].entry(br.to).or_default() += br.y_ft;
            *dense_rows[br.to].entry(br.from).or_default() += br.y_tf;
            *dense_rows[br.to].entry(br.to).or_default() += br.y_tt;
        }
        let ybus: Vec<Vec<(usize, Complex64)>> =
            dense_rows.into_iter().map(|r| r.into_iter().collect()).collect();

        // unknowns: angles at PV+PQ, magnitudes at PQ; equations mirror them
        let mut theta_var = vec![None; n];
        let mut vm_var = vec![None; n];
        let mut dim = 0;
        for i in 0..n {
            if kinds[i] != BusKind::Ref {
                theta_var[i] = Some(dim);
                dim += 1;
            }
        }
        for i in 0..n {
            if kinds[i] == BusKind::Pq {
                vm_var[i] = Some(dim);
                dim += 1;
            }
        }

        let mut coords: Vec<(usize, usize)> = Vec::new();
        let mut raw_slots: Vec<Vec<[Option<usize>; 4]>> = Vec::with_capacity(n);
        for (i, row) in ybus.iter().enumerate() {
            let mut row_slots = Vec::with_capacity(row.len());
            for &(j, _) in row {
                let mut push = |r: Option<usize>, c: Option<usize>| match (r, c) {
                    (Some(r), Some(c)) => {
                        coords.push((r, c));
                        Some(coords.len() - 1)
                    }
                    _ => None,
                };
                row_slots.push([
                    push(theta_var[i], theta_var[j]),
                    push(theta_var[i], vm_var[j]),
                    push(vm_var[i], theta_var[j]),
                    push(vm_var[i], vm_var[j]),
                ]);
            }
            raw_slots.push(row_slots);
        }

        // CSC layout of the coordinate list; every (row, col) pair is unique
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| (coords[k].1, coords[k].0));
        let mut position = vec![0; coords.len()];
        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(coords.len());
        for (pos, &k) in order.iter().enumerate() {
            position[k] = pos;
            col_ptr[coords[k].1 + 1] += 1;
            row_idx.push(coords[k].0);
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }
        let pattern = SymbolicSparseColMat::new_checked(dim, dim, col_ptr, None, row_idx);
        let symbolic_lu = SymbolicLu::try_new(pattern.as_ref())
            .map_err(|e| Error::Validation(format!("Jacobian symbolic analysis failed: {e:?}")))?;

        let slots = raw_slots
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|s| JacSlots {
                        p_theta: s[0].map(|k| position[k]),
                        p_vm: s[1].map(|k| position[k]),
                        q_theta: s[2].map(|k| position[k]),
                        q_vm: s[3].map(|k| position[k]),
                    })
                    .collect()
            })
            .collect();

        Ok(AcSolver {
            adm: adm.clone(),
            kinds,
            ref_pos,
            ybus,
            slots,
            theta_var,
            vm_var,
            dim,
            pattern,
            symbolic_lu,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        self.dim
    }

    fn bus_currents(&self, volts: &[Complex64]) -> Vec<Complex64> {
        self.ybus
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * volts[j]).sum())
            .collect()
    }

    fn mismatch(&self, spec: &InjectionSpec, volts: &[Complex64], out: &mut [f64]) -> f64 {
        let cur = self.bus_currents(volts);
        let mut worst: f64 = 0.0;
        for i in 0..volts.len() {
            let s = volts[i] * cur[i].conj();
            if let Some(r) = self.theta_var[i] {
                out[r] = s.re - spec.p[i];
                worst = worst.max(out[r].abs());
            }
            if let Some(r) = self.vm_var[i] {
                out[r] = s.im - spec.q[i];
                worst = worst.max(out[r].abs());
            }
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    /// Jacobian values in CSC order for the current voltages.
    fn jacobian(&self, volts: &[Complex64], vals: &mut [f64]) {
        let cur = self.bus_currents(volts);
        let j_unit = Complex64::new(0.0, 1.0);
        for (i, (row, slots)) in self.ybus.iter().zip(&self.slots).enumerate() {
            let vi = volts[i];
            let si = vi * cur[i].conj();
            for (&(j, y), s) in row.iter().zip(slots) {
                let term = vi * (y * volts[j]).conj();
                let vj_mag = volts[j].norm();
                let (d_theta, d_vm) = if i == j {
                    (j_unit * si - j_unit * term, (term + si) / vj_mag)
                } else {
                    (-j_unit * term, term / vj_mag)
                };
                if let Some(k) = s.p_theta {
                    vals[k] = d_theta.re;
                }
                if let Some(k) = s.p_vm {
                    vals[k] = d_vm.re;
                }
                if let Some(k) = s.q_theta {
                    vals[k] = d_theta.im;
                }
                if let Some(k) = s.q_vm {
                    vals[k] = d_vm.im;
                }
            }
        }
    }

    /// Dense Jacobian at a given state; used by tests and diagnostics.
    pub fn jacobian_dense(&self, v: &[f64], theta: &[f64]) -> Vec<Vec<f64>> {
        let volts: Vec<Complex64> =
            v.iter().zip(theta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let mut vals = vec![0.0; self.pattern.row_idx().len()];
        self.jacobian(&volts, &mut vals);
        let mut dense = vec![vec![0.0; self.dim]; self.dim];
        let cp = self.pattern.col_ptr();
        let ri = self.pattern.row_idx();
        for c in 0..self.dim {
            for k in cp[c]..cp[c + 1] {
                dense[ri[k]][c] = vals[k];
            }
        }
        dense
    }

    /// Mismatch vector at a given state, in Jacobian row order.
    pub fn mismatch_vector(&self, spec: &InjectionSpec, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let volts: Vec<Complex64> =
            v.iter().zip(theta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let mut f = vec![0.0; self.dim];
        self.mismatch(spec, &volts, &mut f);
        f
    }

    /// Unknown vector `[theta(pv, pq); |V|(pq)]` to/from full bus vectors.
    pub fn state_to_vector(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for i in 0..v.len() {
            if let Some(k) = self.theta_var[i] {
                x[k] = theta[i];
            }
            if let Some(k) = self.vm_var[i] {
                x[k] = v[i];
            }
        }
        x
    }

    pub fn vector_to_state(&self, x: &[f64], v: &mut [f64], theta: &mut [f64]) {
        for i in 0..v.len() {
            if let Some(k) = self.theta_var[i] {
                theta[i] = x[k];
            }
            if let Some(k) = self.vm_var[i] {
                v[i] = x[k];
            }
        }
    }

    pub fn solve(&self, spec: &InjectionSpec, opts: &SolverOptions) -> Result<AcSolution> {
        let n = self.kinds.len();
        if spec.p.len() != n || spec.q.len() != n || spec.v_setpoint.len() != n {
            return Err(Error::Dimension(format!(
                "injection spec must have {n} entries per vector"
            )));
        }
        let mut vm: Vec<f64> = (0..n)
            .map(|i| if self.kinds[i] == BusKind::Pq { 1.0 } else { spec.v_setpoint[i] })
            .collect();
        let mut va = vec![0.0; n];
        let mut volts: Vec<Complex64> = vm.iter().map(|&m| Complex64::new(m, 0.0)).collect();

        let mut f = vec![0.0; self.dim];
        let mut vals = vec![0.0; self.pattern.row_idx().len()];
        let mut max_mismatch = self.mismatch(spec, &volts, &mut f);
        let mut iterations = 0;
        let mut converged = max_mismatch <= opts.tolerance;

        while !converged && iterations < opts.max_iterations && max_mismatch.is_finite() {
            self.jacobian(&volts, &mut vals);
            let mat = SparseColMatRef::new(self.pattern.as_ref(), &vals);
            let lu = Lu::try_new_with_symbolic(self.symbolic_lu.clone(), mat)
                .map_err(|_| Error::SingularJacobian { iteration: iterations })?;
            let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
            lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut dx, self.dim, 1));
            if dx.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularJacobian { iteration: iterations });
            }
            for i in 0..n {
                if let Some(k) = self.theta_var[i] {
                    va[i] += dx[k];
                }
                if let Some(k) = self.vm_var[i] {
                    vm[i] += dx[k];
                }
                volts[i] = Complex64::from_polar(vm[i], va[i]);
            }
            iterations += 1;
            max_mismatch = self.mismatch(spec, &volts, &mut f);
            converged = max_mismatch <= opts.tolerance;
        }

        let cur = self.bus_currents(&volts);
        let (p_net, q_net): (Vec<f64>, Vec<f64>) = volts
            .iter()
            .zip(&cur)
            .map(|(v, i)| {
                let s = v * i.conj();
                (s.re, s.im)
            })
            .unzip();
        debug_assert_eq!(va[self.ref_pos], 0.0);
        let flows = branch_flows(&self.adm, &vm, &va);
        Ok(AcSolution {
            v: vm,
            theta: va,
            p_from: flows.p_from,
            q_from: flows.q_from,
            p_to: flows.p_to,
            q_to: flows.q_to,
            p_net,
            q_net,
            converged,
            iterations,
            max_mismatch,
        })
    }
}
