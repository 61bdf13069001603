//! JSON documents for problem instances and solutions.
//!
//! An instance document looks like
//!
//! ```json
//! {
//!   "locations": [{"id": 0, "lat": 36.16, "lon": -86.78, "area": "37203"}, ...],
//!   "matrix": {"size": 3, "seconds": [0, 60, ...], "meters": [0.0, 500.0, ...]},
//!   "depot": 0,
//!   "config": {"capacity": 9, "dwell": 180, ...},
//!   "requests": [{"id": 1, "pickup": 1, "dropoff": 2, "passengers": 1,
//!                 "booking_instant": 32400,
//!                 "broad_window": {"start": 28800, "end": 39600}}],
//!   "windows": [{"start": 30600, "end": 32400}]
//! }
//! ```
//!
//! `config` fields are optional and default to the standard fleet constants;
//! the top-level `depot` overrides `config.depot`. `windows` is optional and
//! pairs tight windows with requests by position; when absent the broad
//! windows apply. Unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    route_bounds, Location, LocationId, Problem, ProblemConfig, Seconds, Solution, Stop, TimeWindow,
    TravelTimeMatrix, TripRequest,
};

/// Number of triples sampled by the triangle-inequality audit on load.
pub const TRIANGLE_AUDIT_TRIPLES: usize = 200_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDoc {
    size: usize,
    seconds: Vec<Seconds>,
    meters: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    #[serde(default)]
    locations: Vec<Location>,
    matrix: MatrixDoc,
    depot: LocationId,
    #[serde(default)]
    config: ProblemConfig,
    requests: Vec<TripRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    windows: Option<Vec<TimeWindow>>,
}

/// A validated offline problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub locations: Vec<Location>,
    pub matrix: TravelTimeMatrix,
    pub cfg: ProblemConfig,
    pub requests: Vec<TripRequest>,
    /// Tight windows by request position; `None` means broad windows.
    pub windows: Option<Vec<TimeWindow>>,
}

impl Instance {
    pub fn new(
        locations: Vec<Location>,
        matrix: TravelTimeMatrix,
        cfg: ProblemConfig,
        requests: Vec<TripRequest>,
        windows: Option<Vec<TimeWindow>>,
    ) -> Result<Self> {
        let inst = Self { locations, matrix, cfg, requests, windows };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if !self.locations.is_empty() && self.locations.len() != self.matrix.size() {
            return Err(Error::invalid(format!(
                "{} locations but matrix size {}",
                self.locations.len(),
                self.matrix.size()
            )));
        }
        for (i, loc) in self.locations.iter().enumerate() {
            if loc.id != i {
                return Err(Error::invalid(format!("location at position {i} has id {}", loc.id)));
            }
            if loc.area.is_empty() {
                return Err(Error::invalid(format!("location {i} has an empty area code")));
            }
        }
        if let Some(&(a, b, c)) = self.matrix.triangle_violations(TRIANGLE_AUDIT_TRIPLES).first() {
            return Err(Error::invalid(format!(
                "travel times violate the triangle inequality on {a} -> {b} -> {c}"
            )));
        }
        for r in &self.requests {
            r.validate(&self.cfg)?;
        }
        if let Some(ws) = &self.windows {
            for (r, w) in self.requests.iter().zip(ws) {
                if !r.broad_window.contains_window(w) || w.len() > self.cfg.window_len {
                    return Err(Error::invalid(format!("tight window of trip {} is not admissible", r.id)));
                }
            }
        }
        self.problem().map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        let matrix = TravelTimeMatrix::new(doc.matrix.size, doc.matrix.seconds, doc.matrix.meters)?;
        let mut cfg = doc.config;
        cfg.depot = doc.depot;
        Self::new(doc.locations, matrix, cfg, doc.requests, doc.windows)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            locations: self.locations.clone(),
            matrix: MatrixDoc {
                size: self.matrix.size(),
                seconds: self.matrix.seconds().to_vec(),
                meters: self.matrix.meters().to_vec(),
            },
            depot: self.cfg.depot,
            config: self.cfg.clone(),
            requests: self.requests.clone(),
            windows: self.windows.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Windows in force: the tight windows when present, else broad ones.
    pub fn active_windows(&self) -> Vec<TimeWindow> {
        match &self.windows {
            Some(ws) => ws.clone(),
            None => self.requests.iter().map(|r| r.broad_window).collect(),
        }
    }

    pub fn problem(&self) -> Result<Problem<'_>> {
        Problem::new(&self.requests, self.active_windows(), &self.cfg, &self.matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDoc {
    pub start: Seconds,
    pub end: Seconds,
    pub stops: Vec<Stop>,
}

/// Solution document printed by the command line tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub cost: Seconds,
    pub routes: Vec<RouteDoc>,
}

impl SolutionDoc {
    pub fn new(sol: &Solution, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<Self> {
        let mut routes = Vec::with_capacity(sol.routes.len());
        let mut cost = 0;
        for r in &sol.routes {
            let (start, end) = route_bounds(r, cfg, m)?;
            cost += end - start + cfg.route_overhead;
            routes.push(RouteDoc { start, end, stops: r.stops.clone() });
        }
        Ok(Self { cost, routes })
    }

    pub fn solution(&self) -> Solution {
        Solution::new(self.routes.iter().map(|r| crate::model::Route::new(r.stops.clone())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{solution_cost, Route, StopKind};

    const TINY: &str = r#"{
        "locations": [
            {"id": 0, "lat": 36.16, "lon": -86.78, "area": "a"},
            {"id": 1, "lat": 36.17, "lon": -86.78, "area": "a"},
            {"id": 2, "lat": 36.18, "lon": -86.77, "area": "b"}
        ],
        "matrix": {"size": 3, "seconds": [0, 134, 280, 134, 0, 171, 280, 171, 0],
                   "meters": [0, 1112, 2330, 1112, 0, 1420, 2330, 1420, 0]},
        "depot": 0,
        "config": {"dwell": 120},
        "requests": [{"id": 7, "pickup": 1, "dropoff": 2, "passengers": 2, "booking_instant": 36000,
                      "broad_window": {"start": 28800, "end": 39600}}]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let inst = Instance::from_json(TINY).unwrap();
        assert_eq!(inst.cfg.dwell, 120);
        assert_eq!(inst.cfg.capacity, 9);
        assert_eq!(inst.matrix.travel(1, 2), 171);
        let again = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = TINY.replace("\"depot\": 0,", "\"depot\": 0, \"extra\": 1,");
        assert!(matches!(Instance::from_json(&text), Err(Error::Json(_))));
        let text = TINY.replace("\"dwell\": 120", "\"dwel\": 120");
        assert!(Instance::from_json(&text).is_err());
    }

    #[test]
    fn rejects_triangle_violation() {
        let text = TINY.replace("[0, 134, 280, 134, 0, 171, 280, 171, 0]", "[0, 134, 400, 134, 0, 171, 400, 171, 0]");
        assert!(matches!(Instance::from_json(&text), Err(Error::Invalid(_))));
    }

    #[test]
    fn rejects_short_broad_window() {
        let text = TINY.replace("\"end\": 39600", "\"end\": 29000");
        assert!(Instance::from_json(&text).is_err());
    }

    #[test]
    fn solution_document_reports_cost() {
        let inst = Instance::from_json(TINY).unwrap();
        let p = inst.problem().unwrap();
        let route = p.retime(&Route::new(vec![p.pickup_stop(0, 0), p.dropoff_stop(0, 0)])).unwrap();
        assert_eq!(route.stops[1].kind, StopKind::Dropoff);
        let sol = Solution::new(vec![route]);
        let doc = SolutionDoc::new(&sol, &inst.cfg, &inst.matrix).unwrap();
        assert_eq!(doc.cost, solution_cost(&sol, &inst.cfg, &inst.matrix).unwrap());
        // depot -> 1 -> 2 -> depot with two dwells
        assert_eq!(doc.cost, 134 + 120 + 171 + 120 + 280 + 1800);
        assert_eq!(doc.solution(), sol);
    }
}
