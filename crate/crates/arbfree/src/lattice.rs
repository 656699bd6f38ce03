//! The fixed liquid lattice of (time-to-expiry, forward log-moneyness) nodes
//! on which option prices are modelled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite set of liquid `(tau, m)` nodes, grouped by expiry with strictly
/// increasing moneyness inside each expiry slice.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "LatticeRaw", into = "LatticeRaw")]
pub struct OptionLattice {
    expiries: Vec<f64>,
    /// Per-expiry moneyness grids, strictly increasing.
    moneyness: Vec<Vec<f64>>,
    /// Flattened `(tau, m)` nodes, expiry-major.
    nodes: Vec<(f64, f64)>,
    /// Half-open node index range of each expiry slice.
    ranges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct LatticeRaw {
    expiries: Vec<f64>,
    moneyness: Vec<Vec<f64>>,
}

impl TryFrom<LatticeRaw> for OptionLattice {
    type Error = Error;
    fn try_from(raw: LatticeRaw) -> Result<Self> {
        OptionLattice::new(raw.expiries.into_iter().zip(raw.moneyness).collect())
    }
}

impl From<OptionLattice> for LatticeRaw {
    fn from(l: OptionLattice) -> Self {
        LatticeRaw {
            expiries: l.expiries,
            moneyness: l.moneyness,
        }
    }
}

impl OptionLattice {
    pub fn new(groups: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidLattice("no expiries".into()));
        }
        let mut expiries = Vec::with_capacity(groups.len());
        let mut moneyness = Vec::with_capacity(groups.len());
        for (tau, ms) in groups {
            if !tau.is_finite() || tau <= 0.0 {
                return Err(Error::InvalidLattice(format!(
                    "expiry must be positive and finite, got {tau}"
                )));
            }
            if let Some(&last) = expiries.last() {
                if tau <= last {
                    return Err(Error::InvalidLattice(format!(
                        "expiries must be strictly increasing, but {last} >= {tau}"
                    )));
                }
            }
            if ms.len() < 2 {
                return Err(Error::InvalidLattice(format!(
                    "expiry {tau} has {} strikes; at least 2 required",
                    ms.len()
                )));
            }
            for w in ms.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::InvalidLattice(format!(
                        "moneyness must be strictly increasing within expiry {tau}: {} >= {}",
                        w[0], w[1]
                    )));
                }
            }
            if ms.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidLattice(format!(
                    "non-finite moneyness in expiry {tau}"
                )));
            }
            expiries.push(tau);
            moneyness.push(ms);
        }
        let mut nodes = Vec::new();
        let mut ranges = Vec::with_capacity(expiries.len());
        for (tau, ms) in expiries.iter().zip(&moneyness) {
            let start = nodes.len();
            nodes.extend(ms.iter().map(|&m| (*tau, m)));
            ranges.push((start, nodes.len()));
        }
        Ok(Self {
            expiries,
            moneyness,
            nodes,
            ranges,
        })
    }

    /// Group a flat `(tau, m)` node list by expiry.
    pub fn from_nodes(flat: &[(f64, f64)]) -> Result<Self> {
        let mut taus: Vec<f64> = flat.iter().map(|&(t, _)| t).collect();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        taus.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        let mut groups = Vec::with_capacity(taus.len());
        for tau in taus {
            let mut ms: Vec<f64> = flat
                .iter()
                .filter(|&&(t, _)| (t - tau).abs() <= 1e-12)
                .map(|&(_, m)| m)
                .collect();
            ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            groups.push((tau, ms));
        }
        Self::new(groups)
    }

    /// 46-node widening lattice mimicking the liquidity profile of an FX
    /// options book: short expiries quote a narrow moneyness range, longer
    /// expiries a wider one, and grids are nested so calendar pairs exist.
    pub fn default_fx() -> Self {
        const M: [f64; 12] = [
            -0.1733, -0.1320, -0.0943, -0.0600, -0.0283, 0.0, 0.0267, 0.0533, 0.0807, 0.1133,
            0.1493, 0.1893,
        ];
        let slice = |lo: usize, hi: usize| M[lo..hi].to_vec();
        Self::new(vec![
            (1.0 / 12.0, slice(3, 8)),
            (2.0 / 12.0, slice(2, 8)),
            (3.0 / 12.0, slice(2, 9)),
            (6.0 / 12.0, slice(1, 9)),
            (9.0 / 12.0, slice(1, 10)),
            (1.0, slice(0, 11)),
        ])
        .expect("built-in lattice is valid")
    }

    /// Total number of nodes N.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flattened `(tau, m)` nodes, expiry-major, moneyness ascending.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn expiries(&self) -> &[f64] {
        &self.expiries
    }

    pub fn moneyness(&self, expiry_idx: usize) -> &[f64] {
        &self.moneyness[expiry_idx]
    }

    /// Half-open node index range `[start, end)` of each expiry slice.
    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.expiries[0], *self.expiries.last().unwrap())
    }

    /// Index of the node matching `(tau, m)` within `tol`, if any.
    pub fn node_index(&self, tau: f64, m: f64, tol: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|&(t, mm)| (t - tau).abs() <= tol && (mm - m).abs() <= tol)
    }

    /// CSV with columns `tau,m`, one node per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,m\n");
        for &(tau, m) in &self.nodes {
            out.push_str(&format!("{},{}\n", fmt_f64(tau), fmt_f64(m)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut flat = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("tau")) {
                continue;
            }
            let mut parts = line.split(',');
            let tau: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    Error::InvalidLattice(format!("bad tau on line {}", lineno + 1))
                })?;
            let m: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidLattice(format!("bad m on line {}", lineno + 1)))?;
            flat.push((tau, m));
        }
        Self::from_nodes(&flat)
    }
}

/// 17-significant-digit float formatting used by all CSV writers, so that
/// re-running a command reproduces byte-identical output.
pub fn fmt_f64(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x:.16e}")
    }
}
