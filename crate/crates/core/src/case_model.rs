//! Network case data: MATPOWER-style parsing, validation and the bus
//! admittance matrix.
//!
//! Loads, shunts and generator outputs are kept in the physical units of the
//! case file (MW / MVAr); angles are stored in radians. Conversion to per-unit
//! happens where injections are assembled (see [`crate::powerflow::BusInjections`]).

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required table `mpc.{0}`")]
    MissingTable(&'static str),
    #[error("base MVA must be positive, got {0}")]
    BadBaseMva(f64),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("bus id must be a positive integer, got {0}")]
    BadBusId(f64),
    #[error("bus {0} has unknown type code {1}")]
    BadBusType(u32, f64),
    #[error("bus {0} has non-positive voltage magnitude {1}")]
    BadVoltage(u32, f64),
    #[error("case has {0} slack buses, exactly one is required")]
    SlackCount(usize),
    #[error("branch {index} references unknown bus {bus}")]
    DanglingBranch { index: usize, bus: u32 },
    #[error("branch {0} has zero series impedance")]
    ZeroImpedance(usize),
    #[error("branch {0} has non-positive tap ratio {1}")]
    BadTap(usize, f64),
    #[error("generator {index} references unknown bus {bus}")]
    DanglingGenerator { index: usize, bus: u32 },
    #[error("generator {index} sits on bus {bus}, which is neither slack nor PV")]
    GeneratorOnPqBus { index: usize, bus: u32 },
    #[error("generator {0} has q_min > q_max")]
    BadQLimits(usize),
    #[error("network is disconnected: bus {0} is not reachable from bus {1}")]
    Disconnected(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

impl BusKind {
    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 if code == 1.0 => Some(BusKind::PQ),
            2 if code == 2.0 => Some(BusKind::PV),
            3 if code == 3.0 => Some(BusKind::Slack),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            BusKind::PQ => 1,
            BusKind::PV => 2,
            BusKind::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// MW
    pub p_load: f64,
    /// MVAr
    pub q_load: f64,
    /// MW consumed at 1 pu voltage
    pub g_shunt: f64,
    /// MVAr injected at 1 pu voltage
    pub b_shunt: f64,
    pub v_mag: f64,
    /// radians
    pub v_ang: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    /// total line charging susceptance, pu
    pub b_charging: f64,
    /// off-nominal turns ratio; 1.0 means no transformer
    pub tap: f64,
    /// phase shift, radians
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub p_gen: f64,
    pub q_gen: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkCaseData {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

/// A validated, immutable network description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkCaseData", into = "NetworkCaseData")]
pub struct NetworkCase {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    index: HashMap<u32, usize>,
    slack: usize,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
    }
}

impl TryFrom<NetworkCaseData> for NetworkCase {
    type Error = CaseError;

    fn try_from(d: NetworkCaseData) -> Result<Self, CaseError> {
        NetworkCase::new(d.base_mva, d.buses, d.branches, d.generators)
    }
}

impl From<NetworkCase> for NetworkCaseData {
    fn from(c: NetworkCase) -> Self {
        NetworkCaseData {
            base_mva: c.base_mva,
            buses: c.buses,
            branches: c.branches,
            generators: c.generators,
        }
    }
}

impl NetworkCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if !(base_mva > 0.0) {
            return Err(CaseError::BadBaseMva(base_mva));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if b.id == 0 {
                return Err(CaseError::BadBusId(0.0));
            }
            if index.insert(b.id, i).is_some() {
                return Err(CaseError::DuplicateBus(b.id));
            }
            if !(b.v_mag > 0.0) {
                return Err(CaseError::BadVoltage(b.id, b.v_mag));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(CaseError::SlackCount(slacks.len()));
        }
        for (k, br) in branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if !index.contains_key(&bus) {
                    return Err(CaseError::DanglingBranch { index: k + 1, bus });
                }
            }
            if !(br.tap > 0.0) {
                return Err(CaseError::BadTap(k + 1, br.tap));
            }
            if br.in_service && br.r * br.r + br.x * br.x <= 0.0 {
                return Err(CaseError::ZeroImpedance(k + 1));
            }
        }
        for (k, g) in generators.iter().enumerate() {
            let Some(&bi) = index.get(&g.bus) else {
                return Err(CaseError::DanglingGenerator { index: k + 1, bus: g.bus });
            };
            if g.q_min > g.q_max {
                return Err(CaseError::BadQLimits(k + 1));
            }
            if g.in_service && buses[bi].kind == BusKind::PQ {
                return Err(CaseError::GeneratorOnPqBus { index: k + 1, bus: g.bus });
            }
        }
        let case = NetworkCase {
            base_mva,
            buses,
            branches,
            generators,
            index,
            slack: slacks[0],
        };
        case.check_connected()?;
        Ok(case)
    }

    fn check_connected(&self) -> Result<(), CaseError> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let f = self.index[&br.from_bus];
            let t = self.index[&br.to_bus];
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(CaseError::Disconnected(
                self.buses[i].id,
                self.buses[self.slack].id,
            )),
            None => Ok(()),
        }
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

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in [`NetworkCase::buses`].
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Effective bus types for power flow: a PV bus without any in-service
    /// generator is treated as PQ.
    pub fn effective_kinds(&self) -> Vec<BusKind> {
        let mut has_gen = vec![false; self.buses.len()];
        for g in self.generators.iter().filter(|g| g.in_service) {
            has_gen[self.index[&g.bus]] = true;
        }
        self.buses
            .iter()
            .zip(has_gen)
            .map(|(b, g)| match b.kind {
                BusKind::PV if !g => BusKind::PQ,
                k => k,
            })
            .collect()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

// ---------------------------------------------------------------------------
// MATPOWER text format
// ---------------------------------------------------------------------------

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    // '%' starts a comment unless it sits inside a quoted string
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' | '"' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_row(text: &str, line: usize) -> Result<Option<Vec<f64>>, CaseError> {
    let cleaned = text.replace(',', " ");
    let mut row = Vec::new();
    for tok in cleaned.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| CaseError::Syntax {
            line,
            message: format!("invalid number `{tok}`"),
        })?;
        row.push(v);
    }
    Ok(if row.is_empty() { None } else { Some(row) })
}

/// Parse a MATPOWER-style case file.
///
/// Recognized assignments are `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and
/// `mpc.branch`; every other assignment (including cell arrays) is skipped.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let mut base_mva = None;
    let mut tables: HashMap<String, Table> = HashMap::new();
    let mut current: Option<(String, Table)> = None;
    let mut skipping_cell = false;

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if skipping_cell {
            if line.contains('}') {
                skipping_cell = false;
            }
            continue;
        }
        if let Some((name, mut table)) = current.take() {
            let (body, closed) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for seg in body.split(';') {
                if let Some(row) = parse_row(seg, ln)? {
                    table.rows.push((ln, row));
                }
            }
            if closed {
                tables.insert(name, table);
            } else {
                current = Some((name, table));
            }
            continue;
        }
        if line.starts_with("function") {
            continue;
        }
        let Some((lhs, rhs)) = line.split_once('=') else {
            return Err(CaseError::Syntax {
                line: ln,
                message: format!("expected an assignment, found `{line}`"),
            });
        };
        let lhs = lhs.trim();
        let rhs = rhs.trim();
        let Some(field) = lhs.strip_prefix("mpc.") else {
            return Err(CaseError::Syntax {
                line: ln,
                message: format!("expected `mpc.<field> = ...`, found `{lhs}`"),
            });
        };
        if let Some(after) = rhs.strip_prefix('[') {
            let mut table = Table { rows: Vec::new() };
            let (body, closed) = match after.find(']') {
                Some(pos) => (&after[..pos], true),
                None => (after, false),
            };
            for seg in body.split(';') {
                if let Some(row) = parse_row(seg, ln)? {
                    table.rows.push((ln, row));
                }
            }
            if closed {
                tables.insert(field.to_string(), table);
            } else {
                current = Some((field.to_string(), table));
            }
        } else if rhs.starts_with('{') {
            skipping_cell = !rhs.contains('}');
        } else if field == "baseMVA" {
            let v = rhs.trim_end_matches(';').trim();
            base_mva = Some(v.parse::<f64>().map_err(|_| CaseError::Syntax {
                line: ln,
                message: format!("invalid baseMVA `{v}`"),
            })?);
        }
    }
    if let Some((name, _)) = current {
        return Err(CaseError::Syntax {
            line: text.lines().count(),
            message: format!("unterminated matrix `mpc.{name}`"),
        });
    }

    let base_mva = base_mva.ok_or(CaseError::MissingTable("baseMVA"))?;
    let bus_t = tables.remove("bus").ok_or(CaseError::MissingTable("bus"))?;
    let gen_t = tables.remove("gen").ok_or(CaseError::MissingTable("gen"))?;
    let branch_t = tables.remove("branch").ok_or(CaseError::MissingTable("branch"))?;

    let short = |ln: usize, what: &str, need: usize, got: usize| CaseError::Syntax {
        line: ln,
        message: format!("{what} row has {got} columns, expected at least {need}"),
    };

    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for (ln, r) in &bus_t.rows {
        if r.len() < BUS_COLS {
            return Err(short(*ln, "bus", BUS_COLS, r.len()));
        }
        if r[0] < 1.0 || r[0].fract() != 0.0 || r[0] > u32::MAX as f64 {
            return Err(CaseError::BadBusId(r[0]));
        }
        let id = r[0] as u32;
        let kind = BusKind::from_code(r[1]).ok_or(CaseError::BadBusType(id, r[1]))?;
        buses.push(Bus {
            id,
            kind,
            p_load: r[2],
            q_load: r[3],
            g_shunt: r[4],
            b_shunt: r[5],
            v_mag: r[7],
            v_ang: r[8].to_radians(),
            base_kv: r[9],
        });
    }
    let bus_ref = |v: f64, ln: usize| -> Result<u32, CaseError> {
        if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            Err(CaseError::Syntax { line: ln, message: format!("invalid bus reference {v}") })
        } else {
            Ok(v as u32)
        }
    };

    let mut generators = Vec::with_capacity(gen_t.rows.len());
    for (ln, r) in &gen_t.rows {
        if r.len() < GEN_COLS {
            return Err(short(*ln, "gen", GEN_COLS, r.len()));
        }
        generators.push(Generator {
            bus: bus_ref(r[0], *ln)?,
            p_gen: r[1],
            q_gen: r[2],
            q_max: r[3],
            q_min: r[4],
            v_set: r[5],
            in_service: r[7] > 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    for (ln, r) in &branch_t.rows {
        if r.len() < BRANCH_COLS {
            return Err(short(*ln, "branch", BRANCH_COLS, r.len()));
        }
        branches.push(Branch {
            from_bus: bus_ref(r[0], *ln)?,
            to_bus: bus_ref(r[1], *ln)?,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            in_service: r[10] > 0.0,
        });
    }

    NetworkCase::new(base_mva, buses, branches, generators)
}

/// Write a case back out in MATPOWER layout. Columns the model does not
/// carry are filled with neutral values.
pub fn write_case(case: &NetworkCase) -> String {
    let mut s = String::new();
    let f = |v: f64| format!("{v:.17e}");
    s.push_str("function mpc = exported_case\n");
    s.push_str("mpc.version = '2';\n");
    let _ = writeln!(s, "mpc.baseMVA = {};", f(case.base_mva));
    s.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n");
    s.push_str("mpc.bus = [\n");
    for b in &case.buses {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t1.1\t0.9;",
            b.id,
            b.kind.code(),
            f(b.p_load),
            f(b.q_load),
            f(b.g_shunt),
            f(b.b_shunt),
            f(b.v_mag),
            f(b.v_ang.to_degrees()),
            f(b.base_kv)
        );
    }
    s.push_str("];\n\n");
    s.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\n");
    s.push_str("mpc.gen = [\n");
    for g in &case.generators {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            g.bus,
            f(g.p_gen),
            f(g.q_gen),
            f(g.q_max),
            f(g.q_min),
            f(g.v_set),
            f(case.base_mva),
            u8::from(g.in_service)
        );
    }
    s.push_str("];\n\n");
    s.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\n");
    s.push_str("mpc.branch = [\n");
    for br in &case.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};",
            br.from_bus,
            br.to_bus,
            f(br.r),
            f(br.x),
            f(br.b_charging),
            f(br.tap),
            f(br.shift.to_degrees()),
            u8::from(br.in_service)
        );
    }
    s.push_str("];\n");
    s
}

// ---------------------------------------------------------------------------
// Admittance matrix
// ---------------------------------------------------------------------------

/// Sparse bus admittance matrix in per-unit, stored row-wise with sorted
/// column indices.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }
}

/// Build the bus admittance matrix using the standard pi-model with an
/// ideal phase-shifting transformer on the from side.
pub fn admittance_matrix(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut acc: Vec<HashMap<usize, Complex64>> = vec![HashMap::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| {
        *acc[i].entry(j).or_default() += y;
    };
    for br in case.branches.iter().filter(|b| b.in_service) {
        let f = case.index[&br.from_bus];
        let t = case.index[&br.to_bus];
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b_charging / 2.0);
        let ratio = Complex64::from_polar(br.tap, br.shift);
        add(f, f, (ys + bc) / (br.tap * br.tap));
        add(t, t, ys + bc);
        add(f, t, -ys / ratio.conj());
        add(t, f, -ys / ratio);
    }
    for (i, b) in case.buses.iter().enumerate() {
        if b.g_shunt != 0.0 || b.b_shunt != 0.0 {
            add(i, i, Complex64::new(b.g_shunt, b.b_shunt) / case.base_mva);
        }
    }
    let rows = acc
        .into_iter()
        .map(|m| {
            let mut r: Vec<_> = m.into_iter().collect();
            r.sort_by_key(|&(j, _)| j);
            r
        })
        .collect();
    AdmittanceMatrix { n, rows }
}
