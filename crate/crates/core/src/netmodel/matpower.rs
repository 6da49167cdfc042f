//! Reader and writer for the subset of the MATPOWER case format used here.
//!
//! Only `mpc.baseMVA` and the `bus`, `gen`, `branch` and `gencost` matrices
//! are interpreted. Other assignments are skipped, including cell arrays.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Branch, Bus, BusKind, Generator, NetError, Network};

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

pub fn parse_matpower_file(path: &Path) -> Result<Network, NetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| NetError::Semantic(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut net = parse_matpower_case(&text)?;
    if net.name.is_empty() {
        net.name = name;
    }
    Ok(net)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' | '"' => in_quote = !in_quote,
            '%' | '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64, NetError> {
    match tok {
        "Inf" | "inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| NetError::Syntax {
            line,
            message: format!("expected a number, found `{tok}`"),
        }),
    }
}

/// Scalar assignments with the line they appear on.
type Scalars = HashMap<String, (usize, f64)>;

/// Splits the source into scalar assignments and numeric matrices.
fn scan(text: &str) -> Result<(Scalars, HashMap<String, Matrix>), NetError> {
    enum State {
        Top,
        Matrix {
            name: String,
            start: usize,
            rows: Vec<(usize, Vec<f64>)>,
            row: Vec<f64>,
        },
        Skip {
            close: char,
        },
    }

    let mut scalars = HashMap::new();
    let mut matrices = HashMap::new();
    let mut state = State::Top;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let mut rest = strip_comment(raw).trim();
        loop {
            match &mut state {
                State::Top => {
                    if rest.is_empty() {
                        break;
                    }
                    let Some(stmt) = rest.strip_prefix("mpc.") else {
                        // function header and other statements
                        break;
                    };
                    let Some(eq) = stmt.find('=') else {
                        return Err(NetError::Syntax {
                            line: line_no,
                            message: format!("expected assignment in `{rest}`"),
                        });
                    };
                    let name = stmt[..eq].trim().to_string();
                    let value = stmt[eq + 1..].trim();
                    if let Some(body) = value.strip_prefix('[') {
                        state = State::Matrix {
                            name,
                            start: line_no,
                            rows: Vec::new(),
                            row: Vec::new(),
                        };
                        rest = body;
                    } else if let Some(body) = value.strip_prefix('{') {
                        state = State::Skip { close: '}' };
                        rest = body;
                    } else {
                        let value = value.trim_end_matches(';').trim();
                        if value.starts_with('\'') || value.starts_with('"') {
                            break;
                        }
                        let v = parse_number(value, line_no)?;
                        scalars.insert(name, (line_no, v));
                        break;
                    }
                }
                State::Skip { close } => match rest.find(*close) {
                    Some(pos) => {
                        rest = rest[pos + 1..].trim_start_matches(';').trim();
                        state = State::Top;
                    }
                    None => break,
                },
                State::Matrix {
                    name, rows, row, ..
                } => {
                    let end = rest.find(']');
                    let body = match end {
                        Some(pos) => &rest[..pos],
                        None => rest,
                    };
                    for (k, chunk) in body.split(';').enumerate() {
                        if k > 0 && !row.is_empty() {
                            rows.push((line_no, std::mem::take(row)));
                        }
                        for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                            if !tok.is_empty() {
                                row.push(parse_number(tok, line_no)?);
                            }
                        }
                    }
                    // a newline also terminates a row
                    if !row.is_empty() {
                        rows.push((line_no, std::mem::take(row)));
                    }
                    match end {
                        Some(pos) => {
                            let name = std::mem::take(name);
                            let rows = std::mem::take(rows);
                            matrices.insert(name, Matrix { rows });
                            rest = rest[pos + 1..].trim_start_matches(';').trim();
                            state = State::Top;
                        }
                        None => break,
                    }
                }
            }
        }
    }
    match state {
        State::Matrix { name, start, .. } => Err(NetError::Syntax {
            line: last_line,
            message: format!("matrix mpc.{name} opened on line {start} is never closed"),
        }),
        State::Skip { .. } => Err(NetError::Syntax {
            line: last_line,
            message: "unterminated cell array".into(),
        }),
        State::Top => Ok((scalars, matrices)),
    }
}

fn require_cols(row: &[f64], n: usize, what: &str, line: usize) -> Result<(), NetError> {
    if row.len() < n {
        return Err(NetError::Syntax {
            line,
            message: format!(
                "{what} row has {} columns, expected at least {n}",
                row.len()
            ),
        });
    }
    Ok(())
}

fn as_id(v: f64, line: usize) -> Result<u32, NetError> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(NetError::Syntax {
            line,
            message: format!("`{v}` is not a valid bus id"),
        });
    }
    Ok(v as u32)
}

/// Parses MATPOWER case text into a per-unit [`Network`].
pub fn parse_matpower_case(text: &str) -> Result<Network, NetError> {
    let (scalars, matrices) = scan(text)?;
    let base = scalars.get("baseMVA").map(|&(_, v)| v).unwrap_or(100.0);
    if !(base > 0.0 && base.is_finite()) {
        return Err(NetError::Semantic(format!(
            "baseMVA must be positive, got {base}"
        )));
    }
    let empty = Matrix { rows: Vec::new() };
    let bus_m = matrices
        .get("bus")
        .ok_or_else(|| NetError::Semantic("missing mpc.bus".into()))?;
    let gen_m = matrices.get("gen").unwrap_or(&empty);
    let branch_m = matrices.get("branch").unwrap_or(&empty);
    let cost_m = matrices.get("gencost").unwrap_or(&empty);

    let mut buses = Vec::new();
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut isolated: Vec<u32> = Vec::new();
    let mut slack = None;
    for (line, row) in &bus_m.rows {
        require_cols(row, 13, "bus", *line)?;
        let id = as_id(row[0], *line)?;
        if index.contains_key(&id) || isolated.contains(&id) {
            return Err(NetError::DuplicateBus(id));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            4 => {
                isolated.push(id);
                continue;
            }
            other => {
                return Err(NetError::Syntax {
                    line: *line,
                    message: format!("unknown bus type {other}"),
                })
            }
        };
        if kind == BusKind::Slack {
            if slack.is_some() {
                return Err(NetError::Semantic(format!(
                    "more than one slack bus (second is bus {id})"
                )));
            }
            slack = Some(buses.len());
        }
        index.insert(id, buses.len());
        buses.push(Bus {
            id,
            kind,
            p_demand: row[2] / base,
            q_demand: row[3] / base,
            g_shunt: row[4] / base,
            b_shunt: row[5] / base,
            v_max: row[11],
            v_min: row[12],
        });
    }
    let slack = slack.ok_or_else(|| NetError::Semantic("missing slack bus (type 3)".into()))?;

    let lookup = |v: f64, line: usize, what: &str| -> Result<Option<usize>, NetError> {
        let id = as_id(v, line)?;
        if let Some(&i) = index.get(&id) {
            Ok(Some(i))
        } else if isolated.contains(&id) {
            Ok(None)
        } else {
            Err(NetError::Semantic(format!(
                "{what} on line {line} references nonexistent bus {id}"
            )))
        }
    };

    let mut generators = Vec::new();
    let mut kept_gen_rows = Vec::new();
    for (k, (line, row)) in gen_m.rows.iter().enumerate() {
        require_cols(row, 10, "gen", *line)?;
        let Some(bus) = lookup(row[0], *line, "generator")? else {
            continue;
        };
        if row[7] <= 0.0 {
            continue;
        }
        kept_gen_rows.push(k);
        generators.push(Generator {
            bus,
            p_setpoint: row[1] / base,
            q_max: row[3] / base,
            q_min: row[4] / base,
            v_setpoint: row[5],
            p_max: row[8] / base,
            p_min: row[9] / base,
            cost_quadratic: 0.0,
            cost_linear: 0.0,
            cost_constant: 0.0,
        });
    }

    if !cost_m.rows.is_empty() {
        if cost_m.rows.len() < gen_m.rows.len() {
            return Err(NetError::Semantic(format!(
                "mpc.gencost has {} rows for {} generators",
                cost_m.rows.len(),
                gen_m.rows.len()
            )));
        }
        for (gen, &k) in generators.iter_mut().zip(&kept_gen_rows) {
            let (line, row) = &cost_m.rows[k];
            require_cols(row, 4, "gencost", *line)?;
            if row[0] as i64 != 2 {
                return Err(NetError::Semantic(format!(
                    "gencost on line {line}: only polynomial (model 2) costs are supported"
                )));
            }
            let ncost = row[3] as usize;
            if !(1..=3).contains(&ncost) || row[3].fract() != 0.0 {
                return Err(NetError::Semantic(format!(
                    "gencost on line {line}: unsupported number of coefficients {}",
                    row[3]
                )));
            }
            require_cols(row, 4 + ncost, "gencost", *line)?;
            let mut coeffs = [0.0; 3];
            coeffs[3 - ncost..].copy_from_slice(&row[4..4 + ncost]);
            gen.cost_quadratic = coeffs[0] * base * base;
            gen.cost_linear = coeffs[1] * base;
            gen.cost_constant = coeffs[2];
        }
    }

    let mut branches = Vec::new();
    for (line, row) in &branch_m.rows {
        require_cols(row, 11, "branch", *line)?;
        let from = lookup(row[0], *line, "branch")?;
        let to = lookup(row[1], *line, "branch")?;
        let (Some(from_bus), Some(to_bus)) = (from, to) else {
            continue;
        };
        if row[10] <= 0.0 {
            continue;
        }
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(Branch {
            from_bus,
            to_bus,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap,
            shift: row[9].to_radians(),
            s_max: (row[5] > 0.0).then(|| row[5] / base),
        });
    }

    Network::new("", base, buses, branches, generators, slack)
}

/// Writes a network back out in MATPOWER syntax (engineering units).
pub fn write_matpower_case(net: &Network) -> String {
    let base = net.base_mva();
    let mut out = String::new();
    let name = if net.name().is_empty() {
        "case"
    } else {
        net.name()
    };
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {base};");
    let _ = writeln!(
        out,
        "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin"
    );
    let _ = writeln!(out, "mpc.bus = [");
    for b in net.buses() {
        let kind = match b.kind {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        };
        let _ = writeln!(
            out,
            "\t{}\t{kind}\t{}\t{}\t{}\t{}\t1\t1\t0\t0\t1\t{}\t{};",
            b.id,
            b.p_demand * base,
            b.q_demand * base,
            b.g_shunt * base,
            b.b_shunt * base,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(
        out,
        "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin"
    );
    let _ = writeln!(out, "mpc.gen = [");
    for g in net.generators() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t{}\t{}\t{}\t{base}\t1\t{}\t{};",
            net.buses()[g.bus].id,
            g.p_setpoint * base,
            g.q_max * base,
            g.q_min * base,
            g.v_setpoint,
            g.p_max * base,
            g.p_min * base
        );
    }
    let _ = writeln!(
        out,
        "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus"
    );
    let _ = writeln!(out, "mpc.branch = [");
    for br in net.branches() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t0\t0\t{}\t{}\t1;",
            net.buses()[br.from_bus].id,
            net.buses()[br.to_bus].id,
            br.r,
            br.x,
            br.b_charging,
            br.s_max.map_or(0.0, |s| s * base),
            br.tap,
            br.shift.to_degrees()
        );
    }
    let _ = writeln!(out, "];\n\n%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0");
    let _ = writeln!(out, "mpc.gencost = [");
    for g in net.generators() {
        let _ = writeln!(
            out,
            "\t2\t0\t0\t3\t{}\t{}\t{};",
            g.cost_quadratic / (base * base),
            g.cost_linear / base,
            g.cost_constant
        );
    }
    let _ = writeln!(out, "];");
    out
}
