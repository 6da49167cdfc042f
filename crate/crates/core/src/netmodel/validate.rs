use std::fmt;

use super::Network;

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticKind {
    BusBounds,
    BranchParameters,
    GeneratorBounds,
    NoGenerators,
    SlackWithoutGenerator,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn push(out: &mut Vec<Diagnostic>, kind: DiagnosticKind, message: String) {
    out.push(Diagnostic { kind, message });
}

/// Checks every physical invariant of the network plus connectivity.
/// An empty result means the network is usable by all solvers.
pub fn validate_network(net: &Network) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for b in net.buses() {
        if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
            push(
                &mut out,
                DiagnosticKind::BusBounds,
                format!(
                    "bus {}: voltage bounds [{}, {}] are invalid",
                    b.id, b.v_min, b.v_max
                ),
            );
        }
    }
    for (l, br) in net.branches().iter().enumerate() {
        let from = net.buses()[br.from_bus].id;
        let to = net.buses()[br.to_bus].id;
        let mut problems = Vec::new();
        if br.from_bus == br.to_bus {
            problems.push("both ends on the same bus".to_string());
        }
        if br.x == 0.0 {
            problems.push("zero series reactance".to_string());
        }
        if !(br.tap > 0.0) {
            problems.push(format!("tap ratio {} is not positive", br.tap));
        }
        if let Some(s) = br.s_max {
            if !(s > 0.0) {
                problems.push(format!("apparent power limit {s} is not positive"));
            }
        }
        for p in problems {
            push(
                &mut out,
                DiagnosticKind::BranchParameters,
                format!("branch {} ({from}-{to}): {p}", l + 1),
            );
        }
    }
    for (g, gen) in net.generators().iter().enumerate() {
        let bus = net.buses()[gen.bus].id;
        if !(gen.p_min <= gen.p_max) || !(gen.q_min <= gen.q_max) {
            push(
                &mut out,
                DiagnosticKind::GeneratorBounds,
                format!(
                    "generator {} at bus {bus}: inconsistent output bounds",
                    g + 1
                ),
            );
        }
        if !(gen.cost_quadratic >= 0.0) {
            push(
                &mut out,
                DiagnosticKind::GeneratorBounds,
                format!("generator {} at bus {bus}: cost is not convex", g + 1),
            );
        }
    }
    if net.n_generators() == 0 {
        push(
            &mut out,
            DiagnosticKind::NoGenerators,
            "network has no generators".into(),
        );
    } else if net.slack_gen().is_none() {
        push(
            &mut out,
            DiagnosticKind::SlackWithoutGenerator,
            format!(
                "slack bus {} hosts no generator",
                net.buses()[net.slack_bus()].id
            ),
        );
    }

    let components = connected_components(net);
    if components > 1 {
        push(
            &mut out,
            DiagnosticKind::Disconnected,
            format!("network has {components} connected components"),
        );
    }
    out
}

fn connected_components(net: &Network) -> usize {
    let n = net.n_buses();
    let mut adj = vec![Vec::new(); n];
    for br in net.branches() {
        adj[br.from_bus].push(br.to_bus);
        adj[br.to_bus].push(br.from_bus);
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(b) = stack.pop() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    count
}
