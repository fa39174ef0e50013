use serde::{Deserialize, Serialize};

use super::copula::PairCopula;
use super::UncertaintyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VineKind {
    #[serde(rename = "c-vine", alias = "cvine", alias = "C")]
    CVine,
    #[serde(rename = "d-vine", alias = "dvine", alias = "D")]
    DVine,
}

/// One pair copula of the vine. `tree` and `index` are 1-based.
///
/// In a D-vine, edge `index` of tree `t` couples vine positions `index` and
/// `index + t` given the positions strictly between them. In a C-vine it
/// couples position `t` and position `t + index` given positions `1..t-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VineEdge {
    pub tree: usize,
    pub index: usize,
    pub copula: PairCopula,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    tree: usize,
    index: usize,
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parameter: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VineSpecData {
    kind: VineKind,
    order: Vec<usize>,
    edges: Vec<EdgeRecord>,
}

/// A validated C- or D-vine over `dim` uniform variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VineSpecData", into = "VineSpecData")]
pub struct VineSpec {
    kind: VineKind,
    order: Vec<usize>,
    // table[t][i]: tree t+1, edge i+1
    table: Vec<Vec<PairCopula>>,
}

impl TryFrom<VineSpecData> for VineSpec {
    type Error = UncertaintyError;
    fn try_from(d: VineSpecData) -> Result<Self, Self::Error> {
        let edges = d
            .edges
            .iter()
            .map(|e| {
                Ok(VineEdge {
                    tree: e.tree,
                    index: e.index,
                    copula: PairCopula::from_parts(&e.family, e.parameter)?,
                })
            })
            .collect::<Result<Vec<_>, UncertaintyError>>()?;
        VineSpec::new(d.kind, d.order, edges)
    }
}

impl From<VineSpec> for VineSpecData {
    fn from(v: VineSpec) -> Self {
        VineSpecData {
            kind: v.kind,
            edges: v
                .edges()
                .into_iter()
                .map(|e| EdgeRecord {
                    tree: e.tree,
                    index: e.index,
                    family: e.copula.family_name().to_string(),
                    parameter: e.copula.parameter(),
                })
                .collect(),
            order: v.order,
        }
    }
}

impl VineSpec {
    /// `order[k]` is the 1-based input column placed at vine position k+1.
    pub fn new(kind: VineKind, order: Vec<usize>, edges: Vec<VineEdge>) -> Result<Self, UncertaintyError> {
        let p = order.len();
        let bad = |m: String| Err(UncertaintyError::InvalidVine(m));
        if p < 2 {
            return bad(format!("dimension must be at least 2, got {p}"));
        }
        let mut seen = vec![false; p];
        for &o in &order {
            if o == 0 || o > p || seen[o - 1] {
                return bad(format!("order {order:?} is not a permutation of 1..{p}"));
            }
            seen[o - 1] = true;
        }
        if edges.len() != p * (p - 1) / 2 {
            return bad(format!("expected {} edges for dimension {p}, got {}", p * (p - 1) / 2, edges.len()));
        }
        let mut table: Vec<Vec<Option<PairCopula>>> = (1..p).map(|t| vec![None; p - t]).collect();
        for e in &edges {
            if e.tree == 0 || e.tree >= p {
                return bad(format!("edge tree level {} outside 1..{}", e.tree, p - 1));
            }
            if e.index == 0 || e.index > p - e.tree {
                return bad(format!("tree {} has {} edges, index {} is out of range", e.tree, p - e.tree, e.index));
            }
            e.copula.validate()?;
            let slot = &mut table[e.tree - 1][e.index - 1];
            if slot.is_some() {
                return bad(format!("duplicate edge (tree {}, index {})", e.tree, e.index));
            }
            *slot = Some(e.copula);
        }
        let table = table.into_iter().map(|row| row.into_iter().map(|c| c.unwrap()).collect()).collect();
        Ok(VineSpec { kind, order, table })
    }

    /// Vine with every edge set to the independence copula.
    pub fn independence(kind: VineKind, dim: usize) -> Result<Self, UncertaintyError> {
        let edges = (1..dim)
            .flat_map(|t| (1..=dim - t).map(move |i| VineEdge { tree: t, index: i, copula: PairCopula::Independence }))
            .collect();
        VineSpec::new(kind, (1..=dim).collect(), edges)
    }

    pub fn kind(&self) -> VineKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn edge(&self, tree: usize, index: usize) -> Option<PairCopula> {
        self.table.get(tree.wrapping_sub(1))?.get(index.wrapping_sub(1)).copied()
    }

    pub fn edges(&self) -> Vec<VineEdge> {
        self.table
            .iter()
            .enumerate()
            .flat_map(|(t, row)| {
                row.iter().enumerate().map(move |(i, &c)| VineEdge { tree: t + 1, index: i + 1, copula: c })
            })
            .collect()
    }

    /// Input columns (0-based) joined by each tree-1 edge, in edge order.
    pub fn first_tree_pairs(&self) -> Vec<(usize, usize, PairCopula)> {
        let col = |k: usize| self.order[k] - 1;
        self.table[0]
            .iter()
            .enumerate()
            .map(|(i, &c)| match self.kind {
                VineKind::DVine => (col(i), col(i + 1), c),
                VineKind::CVine => (col(0), col(i + 1), c),
            })
            .collect()
    }

    fn check_point(&self, x: &[f64], what: &'static str) -> Result<Vec<f64>, UncertaintyError> {
        if x.len() != self.dim() {
            return Err(UncertaintyError::InvalidVine(format!(
                "point has {} coordinates, vine has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some(&bad) = x.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(UncertaintyError::Domain { what, value: bad });
        }
        Ok(self.order.iter().map(|&o| x[o - 1]).collect())
    }

    fn scatter(&self, vine_pos: Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; vine_pos.len()];
        for (k, &o) in self.order.iter().enumerate() {
            out[o - 1] = vine_pos[k];
        }
        out
    }

    /// Log copula density of the vine at `u`.
    pub fn log_density(&self, u: &[f64]) -> Result<f64, UncertaintyError> {
        let x = self.check_point(u, "vine density argument")?;
        let p = x.len();
        let mut total = 0.0;
        match self.kind {
            VineKind::DVine => {
                // a[i] = F(x_i | x_{i+1..i+j}), b[i] = F(x_{i+j+1} | x_{i+1..i+j})
                let mut a: Vec<f64> = x[..p - 1].to_vec();
                let mut b: Vec<f64> = x[1..].to_vec();
                for j in 0..p - 1 {
                    let row = &self.table[j];
                    for i in 0..p - 1 - j {
                        total += row[i].log_density_raw(a[i], b[i]);
                    }
                    if j + 1 < p - 1 {
                        let na = (0..p - 2 - j).map(|i| row[i].h_raw(a[i], b[i])).collect();
                        let nb = (0..p - 2 - j).map(|i| row[i + 1].h_raw(b[i + 1], a[i + 1])).collect();
                        a = na;
                        b = nb;
                    }
                }
            }
            VineKind::CVine => {
                // v[m] = F(x_m | x_0..x_{j-1})
                let mut v = x.clone();
                for j in 0..p - 1 {
                    let row = &self.table[j];
                    let pivot = v[j];
                    for m in j + 1..p {
                        let c = row[m - j - 1];
                        total += c.log_density_raw(pivot, v[m]);
                        v[m] = c.h_raw(v[m], pivot);
                    }
                }
            }
        }
        Ok(total)
    }

    /// Maps independent uniforms `w` to dependent uniforms following the vine.
    pub fn sample_inverse(&self, w: &[f64]) -> Result<Vec<f64>, UncertaintyError> {
        let w = self.check_point(w, "independent uniform")?;
        let p = w.len();
        let mut u = vec![0.0; p];
        match self.kind {
            VineKind::DVine => {
                // a[j][i] = F(x_i | x_{i+1..i+j})
                let mut a = vec![vec![0.0; p]; p];
                u[0] = w[0];
                a[0][0] = u[0];
                let mut c = vec![0.0; p];
                for k in 1..p {
                    c[k] = w[k];
                    for j in (0..k).rev() {
                        let i = k - 1 - j;
                        c[j] = self.table[j][i].h_inv_raw(c[j + 1], a[j][i])?;
                    }
                    u[k] = c[0];
                    a[0][k] = u[k];
                    if k + 1 < p {
                        for j in 0..k {
                            let i = k - 1 - j;
                            a[j + 1][i] = self.table[j][i].h_raw(a[j][i], c[j]);
                        }
                    }
                }
            }
            VineKind::CVine => {
                for k in 0..p {
                    let mut c = w[k];
                    for j in (0..k).rev() {
                        c = self.table[j][k - j - 1].h_inv_raw(c, w[j])?;
                    }
                    u[k] = c;
                }
            }
        }
        Ok(self.scatter(u))
    }

    /// Rosenblatt transform: the exact inverse of [`VineSpec::sample_inverse`].
    pub fn rosenblatt_forward(&self, u: &[f64]) -> Result<Vec<f64>, UncertaintyError> {
        let x = self.check_point(u, "dependent uniform")?;
        let p = x.len();
        let mut w = vec![0.0; p];
        match self.kind {
            VineKind::DVine => {
                let mut a = vec![vec![0.0; p]; p];
                a[0][..p].copy_from_slice(&x);
                w[0] = x[0];
                for k in 1..p {
                    let mut c = vec![0.0; k + 1];
                    c[0] = x[k];
                    for j in 0..k {
                        let i = k - 1 - j;
                        c[j + 1] = self.table[j][i].h_raw(c[j], a[j][i]);
                    }
                    w[k] = c[k];
                    if k + 1 < p {
                        for j in 0..k {
                            let i = k - 1 - j;
                            a[j + 1][i] = self.table[j][i].h_raw(a[j][i], c[j]);
                        }
                    }
                }
            }
            VineKind::CVine => {
                let mut v = x.clone();
                for j in 0..p - 1 {
                    w[j] = v[j];
                    let pivot = v[j];
                    for (m, vm) in v.iter_mut().enumerate().skip(j + 1) {
                        *vm = self.table[j][m - j - 1].h_raw(*vm, pivot);
                    }
                }
                w[p - 1] = v[p - 1];
            }
        }
        Ok(self.scatter(w))
    }
}
