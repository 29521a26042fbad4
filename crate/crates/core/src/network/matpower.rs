//! Reader for MATPOWER version 2 case files (`mpc.baseMVA`, `mpc.bus`,
//! `mpc.gen`, `mpc.branch`). Other `mpc.*` fields are skipped.

use std::collections::HashMap;

use super::{Branch, Bus, BusKind, Generator, Network};
use crate::error::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Row {
    line: usize,
    values: Vec<f64>,
}

enum State {
    Top,
    Matrix { name: String, rows: Vec<Row> },
    Cell,
}

pub(super) fn parse(text: &str) -> Result<Network> {
    let mut name = String::new();
    let mut base_mva = None;
    let mut tables: HashMap<String, Vec<Row>> = HashMap::new();
    let mut state = State::Top;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = match raw.find('%') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut rest = line.trim();
        if rest.is_empty() {
            continue;
        }
        loop {
            match &mut state {
                State::Top => {
                    if let Some(func) = rest.strip_prefix("function") {
                        if let Some((_, n)) = func.split_once('=') {
                            name = n.trim().trim_end_matches(';').to_string();
                        }
                        break;
                    }
                    let Some(field) = rest.strip_prefix("mpc.") else {
                        return Err(parse_err(line_no, format!("unexpected statement `{rest}`")));
                    };
                    let Some((key, value)) = field.split_once('=') else {
                        return Err(parse_err(line_no, "expected `mpc.<field> = ...`"));
                    };
                    let key = key.trim().to_string();
                    let value = value.trim();
                    if let Some(body) = value.strip_prefix('[') {
                        state = State::Matrix { name: key, rows: Vec::new() };
                        rest = body;
                        continue;
                    } else if let Some(body) = value.strip_prefix('{') {
                        if body.contains('}') {
                            break;
                        }
                        state = State::Cell;
                        break;
                    } else if key == "baseMVA" {
                        let v = value.trim_end_matches(';').trim();
                        base_mva = Some(v.parse::<f64>().map_err(|_| {
                            parse_err(line_no, format!("invalid baseMVA `{v}`"))
                        })?);
                    }
                    break;
                }
                State::Cell => {
                    if rest.contains('}') {
                        state = State::Top;
                    }
                    break;
                }
                State::Matrix { name: key, rows } => {
                    let (body, closed) = match rest.find(']') {
                        Some(i) => (&rest[..i], true),
                        None => (rest, false),
                    };
                    for seg in body.split(';') {
                        let toks: Vec<&str> = seg
                            .split(|c: char| c.is_whitespace() || c == ',')
                            .filter(|t| !t.is_empty())
                            .collect();
                        if toks.is_empty() {
                            continue;
                        }
                        let mut values = Vec::with_capacity(toks.len());
                        for t in toks {
                            values.push(t.parse::<f64>().map_err(|_| {
                                parse_err(line_no, format!("invalid number `{t}` in mpc.{key}"))
                            })?);
                        }
                        rows.push(Row { line: line_no, values });
                    }
                    if closed {
                        let State::Matrix { name: key, rows } =
                            std::mem::replace(&mut state, State::Top)
                        else {
                            unreachable!()
                        };
                        tables.insert(key, rows);
                    }
                    break;
                }
            }
        }
    }
    if let State::Matrix { name: key, rows } = state {
        let line = rows.last().map_or(0, |r| r.line);
        return Err(parse_err(line, format!("unterminated matrix mpc.{key}")));
    }

    let base_mva = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA"))?;
    let bus_rows = tables.remove("bus").ok_or_else(|| parse_err(0, "missing mpc.bus"))?;
    let gen_rows = tables.remove("gen").unwrap_or_default();
    let branch_rows = tables.remove("branch").ok_or_else(|| parse_err(0, "missing mpc.branch"))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        check_cols(row, BUS_COLS, "bus")?;
        let v = &row.values;
        let kind = match v[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Ref,
            4 => {
                return Err(Error::Validation(format!(
                    "bus {} is isolated (type 4), which is not supported",
                    v[0]
                )))
            }
            t => return Err(parse_err(row.line, format!("unknown bus type {t}"))),
        };
        buses.push(Bus {
            id: as_id(row, v[0])?,
            kind,
            p_load: v[2] / base_mva,
            q_load: v[3] / base_mva,
            g_shunt: v[4] / base_mva,
            b_shunt: v[5] / base_mva,
            v_setpoint: None,
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for row in &gen_rows {
        check_cols(row, GEN_COLS, "gen")?;
        let v = &row.values;
        generators.push(Generator {
            bus: as_id(row, v[0])?,
            p_gen: v[1] / base_mva,
            q_gen: v[2] / base_mva,
            v_setpoint: v[5],
            in_service: v[7] > 0.0,
        });
    }

    // voltage setpoints come from the first in-service generator at a bus;
    // PV buses without one are demoted to PQ
    for bus in &mut buses {
        if bus.kind == BusKind::Pq {
            continue;
        }
        match generators.iter().find(|g| g.in_service && g.bus == bus.id) {
            Some(g) => bus.v_setpoint = Some(g.v_setpoint),
            None if bus.kind == BusKind::Pv => bus.kind = BusKind::Pq,
            None => {
                return Err(Error::Validation(format!(
                    "REF bus {} has no in-service generator",
                    bus.id
                )))
            }
        }
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (k, row) in branch_rows.iter().enumerate() {
        check_cols(row, BRANCH_COLS, "branch")?;
        let v = &row.values;
        branches.push(Branch {
            id: k + 1,
            from_bus: as_id(row, v[0])?,
            to_bus: as_id(row, v[1])?,
            r: v[2],
            x: v[3],
            b_charging: v[4],
            tap: if v[8] == 0.0 { 1.0 } else { v[8] },
            shift: v[9].to_radians(),
            in_service: v[10] > 0.0,
        });
    }

    Network::new(name, base_mva, buses, branches, generators)
}

fn check_cols(row: &Row, min: usize, table: &str) -> Result<()> {
    if row.values.len() < min {
        return Err(parse_err(
            row.line,
            format!("mpc.{table} row has {} columns, expected at least {min}", row.values.len()),
        ));
    }
    Ok(())
}

fn as_id(row: &Row, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(parse_err(row.line, format!("invalid bus number {v}")))
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	100	0	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
";

    #[test]
    fn minimal_case() {
        let net = parse(TWO_BUS).unwrap();
        assert_eq!(net.name(), "two");
        assert_eq!(net.buses().len(), 2);
        assert_eq!(net.branches().len(), 1);
        assert_eq!(net.ref_bus(), 1);
        assert_eq!(net.buses()[1].p_load, 1.0);
        assert_eq!(net.branches()[0].tap, 1.0);
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = TWO_BUS.replace("2	1	100", "2	1	1x0");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_row_reports_line() {
        let text = TWO_BUS.replace("1	2	0	0.1	0	250	250	250	0	0	1	-360	360;", "1	2	0	0.1;");
        assert!(matches!(parse(&text), Err(Error::Parse { line: 13, .. })));
    }

    #[test]
    fn two_ref_buses() {
        let text = TWO_BUS.replace("2	1	100", "2	3	100");
        let text = text.replace("mpc.gen = [\n", "mpc.gen = [\n\t2	0	0	300	-300	1	100	1	250	10;\n");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_reactance() {
        let text = TWO_BUS.replace("1	2	0	0.1", "1	2	0.01	0");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn pv_without_generator_becomes_pq() {
        let text = TWO_BUS.replace("2	1	100", "2	2	100");
        let net = parse(&text).unwrap();
        assert_eq!(net.buses()[1].kind, BusKind::Pq);
    }

    #[test]
    fn skips_cell_arrays_and_inline_rows() {
        let text = format!(
            "{TWO_BUS}\nmpc.bus_name = {{\n\t'a';\n\t'b';\n}};\nmpc.gencost = [2 0 0 3 0.1 20 0; ];\n"
        );
        assert_eq!(parse(&text).unwrap().buses().len(), 2);
    }
}
