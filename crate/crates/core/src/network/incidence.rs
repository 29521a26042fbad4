use super::Network;
use crate::error::{Error, Result};

/// Branch-by-bus incidence matrix with the reference column removed.
///
/// Stored as the (from, to) column pair of each row; `None` marks the
/// reference bus. Row `e` has `+1` in the from column and `-1` in the to column.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    branch_ids: Vec<usize>,
    bus_ids: Vec<usize>,
    ends: Vec<(Option<usize>, Option<usize>)>,
}

pub fn build_incidence(net: &Network) -> Result<IncidenceMatrix> {
    let ref_pos = net.ref_position();
    let mut column = vec![None; net.buses().len()];
    let mut bus_ids = Vec::with_capacity(net.buses().len().saturating_sub(1));
    for (i, b) in net.buses().iter().enumerate() {
        if i != ref_pos {
            column[i] = Some(bus_ids.len());
            bus_ids.push(b.id);
        }
    }
    let mut branch_ids = Vec::new();
    let mut ends = Vec::new();
    for br in net.in_service_branches() {
        let f = net.bus_position(br.from_bus).expect("validated");
        let t = net.bus_position(br.to_bus).expect("validated");
        branch_ids.push(br.id);
        ends.push((column[f], column[t]));
    }
    let a = IncidenceMatrix { branch_ids, bus_ids, ends };
    if !a.spans_all_buses() {
        return Err(Error::Disconnected("incidence matrix is column-rank deficient".into()));
    }
    Ok(a)
}

impl IncidenceMatrix {
    pub fn n_branches(&self) -> usize {
        self.ends.len()
    }

    /// Number of non-reference buses.
    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn branch_ids(&self) -> &[usize] {
        &self.branch_ids
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn ends(&self) -> &[(Option<usize>, Option<usize>)] {
        &self.ends
    }

    /// `out = A x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, &(f, t)) in out.iter_mut().zip(&self.ends) {
            *o = f.map_or(0.0, |f| x[f]) - t.map_or(0.0, |t| x[t]);
        }
    }

    /// `out = A^T y`
    pub fn mul_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&v, &(f, t)) in y.iter().zip(&self.ends) {
            if let Some(f) = f {
                out[f] += v;
            }
            if let Some(t) = t {
                out[t] -= v;
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.n_buses()]; self.n_branches()];
        for (row, &(f, t)) in rows.iter_mut().zip(&self.ends) {
            if let Some(f) = f {
                row[f] += 1.0;
            }
            if let Some(t) = t {
                row[t] -= 1.0;
            }
        }
        rows
    }

    /// Every non-reference bus reaches the reference through the listed rows,
    /// which is equivalent to full column rank.
    fn spans_all_buses(&self) -> bool {
        let n = self.n_buses();
        // union-find with node n standing for the reference
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(f, t) in &self.ends {
            let a = find(&mut parent, f.unwrap_or(n));
            let b = find(&mut parent, t.unwrap_or(n));
            parent[a] = b;
        }
        let root = find(&mut parent, n);
        (0..n).all(|i| find(&mut parent, i) == root)
    }
}
