//! Reader and writer for a subset of the MATPOWER case layout.
//!
//! Supported tables: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and
//! `mpc.gencost` (polynomial rows with at most three coefficients). Other
//! assignments are skipped with a warning. Out-of-service generators and
//! branches are dropped.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{Branch, Bus, BusType, Generator, Network, DEFAULT_THETA_MAX};
use crate::error::{Error, Result};

struct Row {
    line: usize,
    values: Vec<f64>,
}

#[derive(Default)]
struct Tables {
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
    gencost: Option<Vec<Row>>,
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        msg: msg.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let v = match tok {
        "Inf" | "inf" => f64::INFINITY,
        "-Inf" | "-inf" => f64::NEG_INFINITY,
        _ => tok
            .parse::<f64>()
            .map_err(|_| syntax(line, format!("invalid number '{tok}'")))?,
    };
    Ok(v)
}

fn tokenize(text: &str) -> Result<Tables> {
    enum Mode {
        Top,
        Matrix {
            name: String,
            rows: Vec<Row>,
            start: usize,
        },
        Skip {
            close: char,
            start: usize,
        },
    }

    let mut tables = Tables::default();
    let mut mode = Mode::Top;
    let mut pending: Vec<f64> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut rest = strip_comment(raw).trim().to_string();
        loop {
            match &mut mode {
                Mode::Top => {
                    let line = rest.trim();
                    if line.is_empty() || line.starts_with("function") || line == "end" || line == "return" {
                        break;
                    }
                    let Some(stmt) = line.strip_prefix("mpc.") else {
                        return Err(syntax(lineno, format!("unexpected statement '{line}'")));
                    };
                    let Some((name, rhs)) = stmt.split_once('=') else {
                        return Err(syntax(lineno, "expected assignment"));
                    };
                    let name = name.trim().to_string();
                    let rhs = rhs.trim();
                    if let Some(body) = rhs.strip_prefix('[') {
                        mode = Mode::Matrix {
                            name,
                            rows: Vec::new(),
                            start: lineno,
                        };
                        rest = body.to_string();
                        continue;
                    }
                    if let Some(body) = rhs.strip_prefix('{') {
                        log::warn!("ignoring unsupported case section mpc.{name}");
                        mode = Mode::Skip {
                            close: '}',
                            start: lineno,
                        };
                        rest = body.to_string();
                        continue;
                    }
                    let value = rhs.trim_end_matches(';').trim();
                    match name.as_str() {
                        "baseMVA" => tables.base_mva = Some(parse_number(value, lineno)?),
                        "version" => {}
                        other => log::warn!("ignoring unsupported case field mpc.{other}"),
                    }
                    break;
                }
                Mode::Skip { close, .. } => {
                    if let Some(pos) = rest.find(*close) {
                        rest = rest[pos + 1..].trim_start_matches(';').to_string();
                        mode = Mode::Top;
                        continue;
                    }
                    break;
                }
                Mode::Matrix { rows, .. } => {
                    let (body, closed) = match rest.find(']') {
                        Some(pos) => (rest[..pos].to_string(), Some(rest[pos + 1..].to_string())),
                        None => (rest.clone(), None),
                    };
                    for (ri, chunk) in body.split(';').enumerate() {
                        if ri > 0 && !pending.is_empty() {
                            rows.push(Row {
                                line: lineno,
                                values: std::mem::take(&mut pending),
                            });
                        }
                        for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                            if !tok.is_empty() {
                                pending.push(parse_number(tok, lineno)?);
                            }
                        }
                    }
                    // a newline also terminates a matrix row
                    if !pending.is_empty() {
                        rows.push(Row {
                            line: lineno,
                            values: std::mem::take(&mut pending),
                        });
                    }
                    let Some(after) = closed else { break };
                    let Mode::Matrix { name, rows, .. } = std::mem::replace(&mut mode, Mode::Top) else {
                        unreachable!()
                    };
                    match name.as_str() {
                        "bus" => tables.bus = Some(rows),
                        "gen" => tables.gen = Some(rows),
                        "branch" => tables.branch = Some(rows),
                        "gencost" => tables.gencost = Some(rows),
                        other => log::warn!("ignoring unsupported case section mpc.{other}"),
                    }
                    rest = after.trim().trim_start_matches(';').to_string();
                    continue;
                }
            }
        }
    }
    match mode {
        Mode::Top => Ok(tables),
        Mode::Matrix { start, .. } | Mode::Skip { start, .. } => Err(syntax(start, "unterminated matrix")),
    }
}

fn require_cols(row: &Row, n: usize, table: &str) -> Result<()> {
    if row.values.len() < n {
        return Err(syntax(
            row.line,
            format!("{table} row has {} columns, need at least {n}", row.values.len()),
        ));
    }
    Ok(())
}

fn as_id(v: f64, line: usize) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(syntax(line, format!("expected integer id, got {v}")));
    }
    Ok(v as i64)
}

fn angle_limit(angmin: Option<f64>, angmax: Option<f64>) -> f64 {
    let valid = |d: f64| d > 0.0 && d < 360.0;
    let lo = angmin.map(|a| -a).filter(|&a| valid(a));
    let hi = angmax.filter(|&a| valid(a));
    match (lo, hi) {
        (Some(a), Some(b)) => a.min(b).to_radians(),
        (Some(a), None) | (None, Some(a)) => a.to_radians(),
        (None, None) => DEFAULT_THETA_MAX,
    }
}

/// Parses case text into a validated [`Network`].
pub fn parse_case(text: &str) -> Result<Network> {
    let tables = tokenize(text)?;
    let base = tables
        .base_mva
        .ok_or_else(|| Error::InvalidData("missing mpc.baseMVA".into()))?;
    let bus_rows = tables
        .bus
        .ok_or_else(|| Error::InvalidData("missing mpc.bus".into()))?;
    let gen_rows = tables.gen.unwrap_or_default();
    let branch_rows = tables
        .branch
        .ok_or_else(|| Error::InvalidData("missing mpc.branch".into()))?;
    let cost_rows = tables.gencost.unwrap_or_default();

    let mut generators = Vec::new();
    let mut gen_lines = Vec::new();
    for (k, row) in gen_rows.iter().enumerate() {
        require_cols(row, 10, "gen")?;
        let v = &row.values;
        if v[7] <= 0.0 {
            log::warn!("dropping out-of-service generator on line {}", row.line);
            continue;
        }
        let (c2, c1, c0) = match cost_rows.get(k) {
            Some(c) => parse_cost(c, base)?,
            None => (0.0, 0.0, 0.0),
        };
        generators.push(Generator {
            bus: as_id(v[0], row.line)?,
            q_max: v[3] / base,
            q_min: v[4] / base,
            v_setpoint: v[5],
            p_max: v[8] / base,
            p_min: v[9] / base,
            c2,
            c1,
            c0,
        });
        gen_lines.push(row.line);
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        require_cols(row, 13, "bus")?;
        let v = &row.values;
        let id = as_id(v[0], row.line)?;
        let has_gen = generators.iter().any(|g| g.bus == id);
        let kind = match (v[1] as i64, has_gen) {
            (3, true) => BusType::Slack,
            (1..=3, true) => BusType::Pv,
            (1..=3, false) => BusType::Pq,
            (t, _) => return Err(syntax(row.line, format!("unsupported bus type {t}"))),
        };
        buses.push(Bus {
            id,
            kind,
            p_load: v[2] / base,
            q_load: v[3] / base,
            g_shunt: v[4] / base,
            b_shunt: v[5] / base,
            v_max: v[11],
            v_min: v[12],
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        require_cols(row, 11, "branch")?;
        let v = &row.values;
        if v[10] <= 0.0 {
            log::warn!("dropping out-of-service branch on line {}", row.line);
            continue;
        }
        branches.push(Branch {
            from: as_id(v[0], row.line)?,
            to: as_id(v[1], row.line)?,
            r: v[2],
            x: v[3],
            b_charge: v[4],
            s_max: v[5] / base,
            tap: if v[8] == 0.0 { 1.0 } else { v[8] },
            shift: v[9] * PI / 180.0,
            theta_max: angle_limit(v.get(11).copied(), v.get(12).copied()),
        });
    }

    Network::new(base, buses, branches, generators)
}

fn parse_cost(row: &Row, base: f64) -> Result<(f64, f64, f64)> {
    require_cols(row, 4, "gencost")?;
    let v = &row.values;
    if v[0] as i64 != 2 {
        return Err(syntax(
            row.line,
            "only polynomial (model 2) cost rows are supported",
        ));
    }
    let n = v[3] as usize;
    if n > 3 {
        return Err(syntax(
            row.line,
            format!("cost polynomial of degree {} not supported", n - 1),
        ));
    }
    require_cols(row, 4 + n, "gencost")?;
    let coeffs = &v[4..4 + n];
    let mut c = [0.0; 3];
    // coefficients are listed highest degree first
    for (deg, &val) in coeffs.iter().rev().enumerate() {
        c[deg] = val;
    }
    Ok((c[2] * base * base, c[1] * base, c[0]))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Canonical serialization; [`parse_case`] reads it back.
pub fn write_case(net: &Network) -> String {
    let base = net.base_mva();
    let mut s = String::new();
    s.push_str("function mpc = case\nmpc.version = '2';\n\n");
    let _ = writeln!(s, "mpc.baseMVA = {};\n", num(base));

    s.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n");
    for b in net.buses() {
        let kind = match b.kind {
            BusType::Slack => 3,
            BusType::Pv => 2,
            BusType::Pq => 1,
        };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t1\t0\t0\t1\t{}\t{};",
            b.id,
            kind,
            num(b.p_load * base),
            num(b.q_load * base),
            num(b.g_shunt * base),
            num(b.b_shunt * base),
            num(b.v_max),
            num(b.v_min)
        );
    }
    s.push_str("];\n\n");

    s.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
    for g in net.generators() {
        let _ = writeln!(
            s,
            "\t{}\t0\t0\t{}\t{}\t{}\t{}\t1\t{}\t{};",
            g.bus,
            num(g.q_max * base),
            num(g.q_min * base),
            num(g.v_setpoint),
            num(base),
            num(g.p_max * base),
            num(g.p_min * base)
        );
    }
    s.push_str("];\n\n");

    s.push_str(
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\nmpc.branch = [\n",
    );
    for br in net.branches() {
        let rate = num(br.s_max * base);
        let deg = br.theta_max * 180.0 / PI;
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{rate}\t{rate}\t{rate}\t{}\t{}\t1\t{}\t{};",
            br.from,
            br.to,
            num(br.r),
            num(br.x),
            num(br.b_charge),
            num(br.tap),
            num(br.shift * 180.0 / PI),
            num(-deg),
            num(deg)
        );
    }
    s.push_str("];\n\n");

    s.push_str("%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0\nmpc.gencost = [\n");
    for g in net.generators() {
        let _ = writeln!(
            s,
            "\t2\t0\t0\t3\t{}\t{}\t{};",
            num(g.c2 / (base * base)),
            num(g.c1 / base),
            num(g.c0)
        );
    }
    s.push_str("];\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 40 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1;
];
";

    #[test]
    fn minimal_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
        assert_eq!(net.buses()[0].kind, BusType::Slack);
        assert_eq!(net.buses()[1].kind, BusType::Pq);
        assert!((net.buses()[1].p_load - 0.4).abs() < 1e-15);
        assert!((net.branches()[0].theta_max - DEFAULT_THETA_MAX).abs() < 1e-15);
        assert_eq!(net.branches()[0].tap, 1.0);
    }

    #[test]
    fn dangling_branch_endpoint() {
        let text = TWO_BUS.replace("1 2 0.01 0.1", "1 99 0.01 0.1");
        assert!(matches!(
            parse_case(&text),
            Err(Error::DanglingBus { bus: 99, .. })
        ));
    }

    #[test]
    fn duplicate_bus() {
        let text = TWO_BUS.replace("  2 1 40", "  1 1 40");
        assert!(matches!(parse_case(&text), Err(Error::DuplicateBus(1))));
    }

    #[test]
    fn missing_slack() {
        let text = TWO_BUS.replace("  1 3 0", "  1 2 0");
        assert!(matches!(parse_case(&text), Err(Error::NoSlack)));
    }

    #[test]
    fn disconnected_graph() {
        let text = TWO_BUS.replace(
            "  2 1 40 10 0 0 1 1 0 230 1 1.1 0.9;",
            "  2 1 40 10 0 0 1 1 0 230 1 1.1 0.9;\n  3 1 0 0 0 0 1 1 0 230 1 1.1 0.9;",
        );
        assert!(matches!(parse_case(&text), Err(Error::Disconnected(3))));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = TWO_BUS.replace("0.01 0.1", "0.01 zz");
        match parse_case(&text) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 10),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unterminated_matrix() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n";
        assert!(matches!(parse_case(text), Err(Error::Syntax { line: 2, .. })));
    }

    #[test]
    fn short_rows_rejected() {
        let text = TWO_BUS.replace("  1 2 0.01 0.1 0 0 0 0 0 0 1;", "  1 2 0.01;");
        assert!(matches!(parse_case(&text), Err(Error::Syntax { .. })));
    }

    #[test]
    fn unknown_sections_are_skipped() {
        let text = format!("{TWO_BUS}mpc.bus_name = {{\n 'a';\n 'b';\n}};\nmpc.areas = [\n 1 1;\n];\n");
        assert_eq!(parse_case(&text).unwrap().n_buses(), 2);
    }

    #[test]
    fn cost_rows_convert_to_per_unit() {
        let text = format!("{TWO_BUS}mpc.gencost = [\n 2 0 0 3 0.01 20 5;\n];\n");
        let net = parse_case(&text).unwrap();
        let g = &net.generators()[0];
        assert!((g.c2 - 100.0).abs() < 1e-12);
        assert!((g.c1 - 2000.0).abs() < 1e-12);
        assert_eq!(g.c0, 5.0);
    }

    #[test]
    fn piecewise_cost_rejected() {
        let text = format!("{TWO_BUS}mpc.gencost = [\n 1 0 0 2 0 0 100 2000;\n];\n");
        assert!(matches!(parse_case(&text), Err(Error::Syntax { .. })));
    }
}
