//! Pass/fail records shared by the auditor, the SK checks and the
//! control-representation checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Statistical slack for one-sided checks: `abs_tol + sigmas · stderr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackPolicy {
    pub sigmas: f64,
    pub abs_tol: f64,
}

impl Default for SlackPolicy {
    fn default() -> Self {
        Self {
            sigmas: 3.0,
            abs_tol: 1e-3,
        }
    }
}

impl SlackPolicy {
    pub fn slack(&self, stderr: f64) -> f64 {
        self.abs_tol + self.sigmas * stderr
    }
}

/// One tested location. The check holds there iff `margin >= -slack`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckPoint {
    pub location: f64,
    pub margin: f64,
    pub slack: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl CheckPoint {
    pub fn new(location: f64, margin: f64, slack: f64) -> Self {
        Self {
            location,
            margin,
            slack,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn holds(&self) -> bool {
        self.margin >= -self.slack
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Margin at the tightest point, i.e. where `margin + slack` is smallest.
    pub worst_margin: f64,
    pub location: Option<f64>,
    pub slack_used: f64,
    pub points: Vec<CheckPoint>,
}

impl Check {
    pub fn from_points(name: impl Into<String>, points: Vec<CheckPoint>) -> Self {
        let tightest = points
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (a.margin + a.slack).total_cmp(&(b.margin + b.slack)))
            .map(|(i, _)| i);
        let pass = points.iter().all(CheckPoint::holds);
        match tightest {
            Some(i) => Self {
                name: name.into(),
                pass,
                worst_margin: points[i].margin,
                location: Some(points[i].location),
                slack_used: points[i].slack,
                points,
            },
            None => Self {
                name: name.into(),
                pass: true,
                worst_margin: 0.0,
                location: None,
                slack_used: 0.0,
                points,
            },
        }
    }

    /// Re-evaluates the check with every point's slack replaced by `slack`.
    pub fn with_slack(&self, slack: impl Fn(&CheckPoint) -> f64) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| CheckPoint {
                slack: slack(p),
                ..p.clone()
            })
            .collect();
        Self::from_points(self.name.clone(), points)
    }
}
