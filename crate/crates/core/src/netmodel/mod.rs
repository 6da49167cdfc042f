//! Network data model in per-unit on the system MVA base.
//!
//! Buses are indexed densely `0..N` in file order; the original case-file
//! identifiers are kept on each [`Bus`] for reporting. Branch admittance
//! constants are derived once at construction time.

mod matpower;
mod validate;

pub use matpower::{parse_matpower_case, parse_matpower_file, write_matpower_case};
pub use validate::{validate_network, Diagnostic, DiagnosticKind};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Semantic(String),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("invalid network json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Identifier used in the source case file.
    pub id: u32,
    pub kind: BusKind,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub p_demand: f64,
    pub q_demand: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Off-nominal tap ratio magnitude, 1 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent power limit; `None` means unlimited.
    pub s_max: Option<f64>,
}

/// Real and imaginary parts of the four branch admittance coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchConstants {
    pub g_ff: f64,
    pub b_ff: f64,
    pub g_ft: f64,
    pub b_ft: f64,
    pub g_tf: f64,
    pub b_tf: f64,
    pub g_tt: f64,
    pub b_tt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Cost coefficients of `a p^2 + b p + c` with `p` in p.u.
    pub cost_quadratic: f64,
    pub cost_linear: f64,
    pub cost_constant: f64,
    /// Active power set point from the case file.
    pub p_setpoint: f64,
    /// Voltage magnitude set point from the case file.
    pub v_setpoint: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        (self.cost_quadratic * p + self.cost_linear) * p + self.cost_constant
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.cost_quadratic * p + self.cost_linear
    }
}

/// Computes the admittance coefficients of a branch pi-model with an ideal
/// transformer of ratio `tap * exp(j shift)` at the from end.
pub fn compute_branch_constants(branch: &Branch) -> BranchConstants {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(branch.r, branch.x);
    let half_charging = Complex64::new(0.0, branch.b_charging / 2.0);
    let tt = ys + half_charging;
    let ff = tt / (branch.tap * branch.tap);
    let ft = -ys / Complex64::from_polar(branch.tap, -branch.shift);
    let tf = -ys / Complex64::from_polar(branch.tap, branch.shift);
    BranchConstants {
        g_ff: ff.re,
        b_ff: ff.im,
        g_ft: ft.re,
        b_ft: ft.im,
        g_tf: tf.re,
        b_tf: tf.im,
        g_tt: tt.re,
        b_tt: tt.im,
    }
}

/// Nodal active and reactive demand in p.u., one entry per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl DemandProfile {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Feature vector `[p_0..p_n, q_0..q_n]`.
    pub fn features(&self) -> Vec<f64> {
        self.p.iter().chain(self.q.iter()).copied().collect()
    }

    pub fn from_features(features: &[f64]) -> Self {
        let n = features.len() / 2;
        Self {
            p: features[..n].to_vec(),
            q: features[n..2 * n].to_vec(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            p: self.p.iter().map(|v| v * factor).collect(),
            q: self.q.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn total_p(&self) -> f64 {
        self.p.iter().sum()
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkData {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    slack_bus: usize,
}

/// Immutable grid description.
///
/// Fields are read through accessors so that the derived tables (branch
/// constants, generator-bus maps) can never go stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct Network {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    constants: Vec<BranchConstants>,
    generators: Vec<Generator>,
    slack_bus: usize,
    gen_buses: Vec<usize>,
    gen_bus_slot: Vec<Option<usize>>,
    gens_at_bus: Vec<Vec<usize>>,
    slack_gen: Option<usize>,
}

impl TryFrom<NetworkData> for Network {
    type Error = NetError;

    fn try_from(d: NetworkData) -> Result<Self, NetError> {
        Network::new(
            d.name,
            d.base_mva,
            d.buses,
            d.branches,
            d.generators,
            d.slack_bus,
        )
    }
}

impl From<Network> for NetworkData {
    fn from(n: Network) -> Self {
        NetworkData {
            name: n.name,
            base_mva: n.base_mva,
            buses: n.buses,
            branches: n.branches,
            generators: n.generators,
            slack_bus: n.slack_bus,
        }
    }
}

impl Network {
    /// Assembles a network. Only index references are checked here; use
    /// [`validate_network`] for the full set of physical invariants.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        slack_bus: usize,
    ) -> Result<Self, NetError> {
        let n = buses.len();
        if slack_bus >= n {
            return Err(NetError::Semantic(format!(
                "slack bus index {slack_bus} out of range ({n} buses)"
            )));
        }
        for (l, br) in branches.iter().enumerate() {
            if br.from_bus >= n || br.to_bus >= n {
                return Err(NetError::Semantic(format!(
                    "branch {l} references a bus index out of range"
                )));
            }
        }
        let mut gens_at_bus = vec![Vec::new(); n];
        for (g, gen) in generators.iter().enumerate() {
            if gen.bus >= n {
                return Err(NetError::Semantic(format!(
                    "generator {g} references a bus index out of range"
                )));
            }
            gens_at_bus[gen.bus].push(g);
        }
        let gen_buses: Vec<usize> = (0..n).filter(|&b| !gens_at_bus[b].is_empty()).collect();
        let mut gen_bus_slot = vec![None; n];
        for (k, &b) in gen_buses.iter().enumerate() {
            gen_bus_slot[b] = Some(k);
        }
        let slack_gen = gens_at_bus[slack_bus].first().copied();
        let constants = branches.iter().map(compute_branch_constants).collect();
        Ok(Self {
            name: name.into(),
            base_mva,
            buses,
            branches,
            constants,
            generators,
            slack_bus,
            gen_buses,
            gen_bus_slot,
            gens_at_bus,
            slack_gen,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn constants(&self) -> &[BranchConstants] {
        &self.constants
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Bus indices hosting at least one generator, ascending.
    pub fn gen_buses(&self) -> &[usize] {
        &self.gen_buses
    }

    /// Position of `bus` within [`Network::gen_buses`].
    pub fn gen_bus_slot(&self, bus: usize) -> Option<usize> {
        self.gen_bus_slot[bus]
    }

    pub fn gens_at_bus(&self, bus: usize) -> &[usize] {
        &self.gens_at_bus[bus]
    }

    /// The generator that absorbs the active power imbalance: the first
    /// generator connected to the slack bus.
    pub fn slack_gen(&self) -> Option<usize> {
        self.slack_gen
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn nominal_demand(&self) -> DemandProfile {
        DemandProfile {
            p: self.buses.iter().map(|b| b.p_demand).collect(),
            q: self.buses.iter().map(|b| b.q_demand).collect(),
        }
    }

    pub fn total_cost(&self, p: &[f64]) -> f64 {
        self.generators.iter().zip(p).map(|(g, &p)| g.cost(p)).sum()
    }

    /// Returns a copy with different branch limits, keeping everything else.
    pub fn with_branch_limits(&self, limits: impl Fn(usize, &Branch) -> Option<f64>) -> Network {
        let branches = self
            .branches
            .iter()
            .enumerate()
            .map(|(l, br)| Branch {
                s_max: limits(l, br),
                ..br.clone()
            })
            .collect();
        Network::new(
            self.name.clone(),
            self.base_mva,
            self.buses.clone(),
            branches,
            self.generators.clone(),
            self.slack_bus,
        )
        .expect("indices unchanged")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Network, NetError> {
        serde_json::from_str(text).map_err(|e| NetError::Json(e.to_string()))
    }

    /// Short content hash identifying the network in dataset manifests.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("network serializes"));
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn branch(r: f64, x: f64, b: f64, tap: f64, shift: f64) -> Branch {
        Branch {
            from_bus: 0,
            to_bus: 1,
            r,
            x,
            b_charging: b,
            tap,
            shift,
            s_max: None,
        }
    }

    // Straight transcription of the pi-model admittances in complex form.
    fn oracle(br: &Branch) -> [Complex64; 4] {
        let j = Complex64::i();
        let y = 1.0 / Complex64::new(br.r, br.x);
        let ff = (y + j * br.b_charging / 2.0) / (br.tap * br.tap);
        let ft = -y / (br.tap * (-j * br.shift).exp());
        let tf = -y / (br.tap * (j * br.shift).exp());
        let tt = y + j * br.b_charging / 2.0;
        [ff, ft, tf, tt]
    }

    #[test]
    fn lossless_unit_branch() {
        let c = compute_branch_constants(&branch(0.0, 1.0, 0.0, 1.0, 0.0));
        assert_eq!(c.b_ff, -1.0);
        assert_eq!(c.b_ft, 1.0);
        assert_eq!(c.g_ff, 0.0);
        assert_eq!(c.g_ft.abs(), 0.0);
        assert_eq!(c.b_tt, -1.0);
        assert_eq!(c.b_tf, 1.0);
    }

    #[test]
    fn tap_scaling() {
        let c = compute_branch_constants(&branch(0.0, 1.0, 0.0, 2.0, 0.0));
        assert!((c.b_ff + 0.25).abs() < 1e-15);
        assert!((c.b_ft - 0.5).abs() < 1e-15);
        assert!((c.b_tt + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lossy_line_matches_complex_oracle() {
        let br = branch(0.01, 0.1, 0.02, 1.0, 0.0);
        let c = compute_branch_constants(&br);
        let [ff, ft, _, _] = oracle(&br);
        assert!((c.g_ff - ff.re).abs() < 1e-12 && (c.b_ff - ff.im).abs() < 1e-12);
        assert!((c.g_ft - ft.re).abs() < 1e-12 && (c.b_ft - ft.im).abs() < 1e-12);
        // frozen values from the oracle
        assert!((c.g_ff - 0.990099).abs() < 1e-6);
        assert!((c.b_ff + 9.89099).abs() < 1e-5);
        assert!((c.g_ft + 0.990099).abs() < 1e-6);
        assert!((c.b_ft - 9.90099).abs() < 1e-5);
    }

    #[test]
    fn phase_shifter_matches_oracle() {
        let br = branch(0.02, 0.3, 0.1, 0.95, 0.2);
        let c = compute_branch_constants(&br);
        let [ff, ft, tf, tt] = oracle(&br);
        for (got, want) in [
            ((c.g_ff, c.b_ff), ff),
            ((c.g_ft, c.b_ft), ft),
            ((c.g_tf, c.b_tf), tf),
            ((c.g_tt, c.b_tt), tt),
        ] {
            assert!((got.0 - want.re).abs() < 1e-12);
            assert!((got.1 - want.im).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn transfer_terms_symmetric_without_shift(
            r in 0.0f64..0.2, x in 0.01f64..1.0, b in 0.0f64..0.5, tap in 0.8f64..1.2
        ) {
            let c = compute_branch_constants(&branch(r, x, b, tap, 0.0));
            proptest::prop_assert!((c.g_ft - c.g_tf).abs() < 1e-12);
            proptest::prop_assert!((c.b_ft - c.b_tf).abs() < 1e-12);
            let u = compute_branch_constants(&branch(r, x, 0.0, 1.0, 0.0));
            proptest::prop_assert!((u.g_ff - u.g_tt).abs() < 1e-12);
            proptest::prop_assert!((u.b_ff - u.b_tt).abs() < 1e-12);
        }
    }
}
