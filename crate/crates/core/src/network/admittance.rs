use num_complex::Complex64;

use super::Network;

/// Two-port admittances of one in-service branch.
///
/// `series` and `shunt` are the plain pi-model values. The `y_ff .. y_tt`
/// entries fold in tap and phase shift so that
/// `I_from = y_ff V_from + y_ft V_to` and `I_to = y_tf V_from + y_tt V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub branch_id: usize,
    pub from: usize,
    pub to: usize,
    pub series: Complex64,
    /// Per terminal.
    pub shunt: Complex64,
    pub y_ff: Complex64,
    pub y_ft: Complex64,
    pub y_tf: Complex64,
    pub y_tt: Complex64,
}

#[derive(Debug, Clone)]
pub struct AdmittanceModel {
    /// In-service branches only, in branch order.
    pub branches: Vec<BranchAdmittance>,
    /// Bus shunt admittance per bus position.
    pub bus_shunt: Vec<Complex64>,
}

pub fn build_admittances(net: &Network) -> AdmittanceModel {
    let branches = net
        .in_service_branches()
        .map(|br| {
            let series = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let shunt = Complex64::new(0.0, br.b_charging / 2.0);
            let ytt = series + shunt;
            let t = Complex64::from_polar(br.tap, br.shift);
            BranchAdmittance {
                branch_id: br.id,
                from: net.bus_position(br.from_bus).expect("validated"),
                to: net.bus_position(br.to_bus).expect("validated"),
                series,
                shunt,
                y_ff: ytt / (br.tap * br.tap),
                y_ft: -series / t.conj(),
                y_tf: -series / t,
                y_tt: ytt,
            }
        })
        .collect();
    let bus_shunt = net.buses().iter().map(|b| Complex64::new(b.g_shunt, b.b_shunt)).collect();
    AdmittanceModel { branches, bus_shunt }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{BusKind, Network};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lossless_series() {
        let adm = build_admittances(&two_bus());
        let y = adm.branches[0].series;
        assert_relative_eq!(y.re, 0.0);
        assert_relative_eq!(y.im, -10.0, epsilon = 1e-12);
    }

    #[test]
    fn lossy_series_matches_hand_reciprocal() {
        let net = Network::new(
            "x".into(),
            100.0,
            vec![bus(1, BusKind::Ref, 0.0), bus(2, BusKind::Pq, 0.0)],
            vec![line(1, 1, 2, 0.01, 0.1)],
            vec![],
        )
        .unwrap();
        let y = build_admittances(&net).branches[0].series;
        // 1/(r + jx) = (r - jx)/(r^2 + x^2)
        let den = 0.01 * 0.01 + 0.1 * 0.1;
        assert_relative_eq!(y.re, 0.01 / den, max_relative = 1e-14);
        assert_relative_eq!(y.im, -0.1 / den, max_relative = 1e-14);
        assert_relative_eq!(den, 0.0101, max_relative = 1e-14);
    }

    #[test]
    fn bus_shunt_and_charging() {
        let mut b2 = bus(2, BusKind::Pq, 0.0);
        b2.b_shunt = 0.19;
        let mut l = line(1, 1, 2, 0.0, 0.1);
        l.b_charging = 0.05;
        let net = Network::new("x".into(), 100.0, vec![bus(1, BusKind::Ref, 0.0), b2], vec![l], vec![])
            .unwrap();
        let adm = build_admittances(&net);
        assert_eq!(adm.bus_shunt[1], Complex64::new(0.0, 0.19));
        assert_eq!(adm.branches[0].shunt.im, 0.025);
        // untapped branch: symmetric two-port
        let b = adm.branches[0];
        assert_eq!(b.y_ff, b.y_tt);
        assert_eq!(b.y_ft, b.y_tf);
        assert_eq!(b.y_ft, -b.series);
    }
}
