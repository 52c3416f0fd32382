use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Cortical areas in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AreaName {
    V1,
    V2Interstripe,
    V2Thin,
    V2Thick,
    V4,
    Pit,
    Cit,
    Ait,
    Mt,
    Mst,
    Parietal,
}

impl AreaName {
    pub const ALL: [AreaName; 11] = [
        AreaName::V1,
        AreaName::V2Interstripe,
        AreaName::V2Thin,
        AreaName::V2Thick,
        AreaName::V4,
        AreaName::Pit,
        AreaName::Cit,
        AreaName::Ait,
        AreaName::Mt,
        AreaName::Mst,
        AreaName::Parietal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AreaName::V1 => "V1",
            AreaName::V2Interstripe => "V2_interstripe",
            AreaName::V2Thin => "V2_thin",
            AreaName::V2Thick => "V2_thick",
            AreaName::V4 => "V4",
            AreaName::Pit => "PIT",
            AreaName::Cit => "CIT",
            AreaName::Ait => "AIT",
            AreaName::Mt => "MT",
            AreaName::Mst => "MST",
            AreaName::Parietal => "Parietal",
        }
    }
}

impl fmt::Display for AreaName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AreaName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AreaName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown area `{s}`")))
    }
}

/// Directed area graph: feedforward edges plus an optional feedback edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub edges: Vec<(AreaName, AreaName)>,
    pub feedback: Option<(AreaName, AreaName)>,
}

impl Topology {
    /// Ventral path V1 -> {V2 interstripe, V2 thin} -> V4 -> PIT -> CIT -> AIT,
    /// dorsal path V1 -> V2 thick -> MT -> MST -> Parietal, cross-links
    /// V2 thick -> V4 and MST -> AIT, and feedback AIT -> V1.
    pub fn canonical() -> Self {
        use AreaName::*;
        Self {
            edges: vec![
                (V1, V2Interstripe),
                (V1, V2Thin),
                (V1, V2Thick),
                (V2Interstripe, V4),
                (V2Thin, V4),
                (V2Thick, V4),
                (V4, Pit),
                (Pit, Cit),
                (Cit, Ait),
                (V2Thick, Mt),
                (Mt, Mst),
                (Mst, Parietal),
                (Mst, Ait),
            ],
            feedback: Some((Ait, V1)),
        }
    }

    pub fn add_edge(&mut self, from: AreaName, to: AreaName) {
        self.edges.push((from, to));
    }

    /// Feedforward predecessors of `area`, in edge order.
    pub fn predecessors(&self, area: AreaName) -> Vec<AreaName> {
        self.edges.iter().filter(|e| e.1 == area).map(|e| e.0).collect()
    }

    pub fn in_degree(&self, area: AreaName) -> usize {
        self.edges.iter().filter(|e| e.1 == area).count()
    }

    fn nodes(&self) -> BTreeSet<AreaName> {
        self.edges.iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    /// Kahn's algorithm over feedforward edges; ready areas are taken in
    /// lexical order of their names. The feedback edge is ignored.
    pub fn execution_order(&self) -> Result<Vec<AreaName>> {
        let nodes = self.nodes();
        let mut indegree: BTreeMap<AreaName, usize> = nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, b) in &self.edges {
            *indegree.get_mut(&b).expect("node") += 1;
        }
        let mut ready: BTreeSet<(&'static str, AreaName)> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| (n.as_str(), n))
            .collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(first) = ready.pop_first() {
            let area = first.1;
            order.push(area);
            for &(a, b) in &self.edges {
                if a == area {
                    let d = indegree.get_mut(&b).expect("node");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert((b.as_str(), b));
                    }
                }
            }
        }
        if order.len() != nodes.len() {
            let stuck = indegree
                .iter()
                .find(|(n, &d)| d > 0 && !order.contains(n))
                .map(|(n, _)| n.to_string())
                .unwrap_or_default();
            return Err(Error::Cycle(stuck));
        }
        Ok(order)
    }

    /// Checks the structural rules the network relies on.
    pub fn validate(&self) -> Result<Vec<AreaName>> {
        let order = self.execution_order()?;
        if order.first() != Some(&AreaName::V1) || self.in_degree(AreaName::V1) != 0 {
            return Err(Error::Config("V1 must be the unique source of the feedforward graph".into()));
        }
        let present = self.nodes();
        if let Some(missing) = AreaName::ALL.iter().find(|a| !present.contains(a)) {
            return Err(Error::Config(format!("area {missing} is not connected")));
        }
        // every node reachable from V1
        let mut reached = BTreeSet::from([AreaName::V1]);
        for &area in &order {
            if reached.contains(&area) {
                for &(a, b) in &self.edges {
                    if a == area {
                        reached.insert(b);
                    }
                }
            }
        }
        if let Some(unreached) = present.iter().find(|a| !reached.contains(a)) {
            return Err(Error::Config(format!("area {unreached} is not reachable from V1")));
        }
        if self.in_degree(AreaName::Ait) < 2 {
            return Err(Error::Config("AIT must receive convergent inputs (in-degree >= 2)".into()));
        }
        if let Some(fb) = self.feedback {
            if fb != (AreaName::Ait, AreaName::V1) {
                return Err(Error::Config(format!("feedback edge must be AIT -> V1, got {} -> {}", fb.0, fb.1)));
            }
        }
        Ok(order)
    }
}
