use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// New-world initialization time by node count, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct InitCostTable {
    /// (nodes, seconds), ascending by nodes.
    points: Vec<(u32, f64)>,
}

impl InitCostTable {
    pub fn new(mut points: Vec<(u32, f64)>) -> Option<Self> {
        points.sort_by_key(|p| p.0);
        points.dedup_by_key(|p| p.0);
        let ok = !points.is_empty() && points.iter().all(|&(n, s)| n > 0 && s.is_finite() && s >= 0.0);
        ok.then_some(Self { points })
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    /// Seconds to initialize a world spanning `nodes` nodes. Extrapolates
    /// along the nearest segment, never below zero.
    pub fn cost(&self, nodes: u32) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1 * f64::from(nodes) / f64::from(p[0].0);
        }
        let i = p.iter().position(|&(n, _)| n >= nodes).unwrap_or(p.len() - 1).clamp(1, p.len() - 1);
        let (x0, y0) = (f64::from(p[i - 1].0), p[i - 1].1);
        let (x1, y1) = (f64::from(p[i].0), p[i].1);
        (y0 + (f64::from(nodes) - x0) * (y1 - y0) / (x1 - x0)).max(0.0)
    }
}

impl Default for InitCostTable {
    /// Roughly 6 s within one node, about 30 s at four 8-GPU nodes.
    fn default() -> Self {
        Self { points: vec![(1, 6.0), (2, 14.0), (4, 29.0)] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldTransition {
    pub old_nodes: Vec<u32>,
    pub new_nodes: Vec<u32>,
    pub init_cost: f64,
    pub train_step_cost: f64,
    pub switch_cost: f64,
}

impl WorldTransition {
    /// Looks the init cost up by the new world's node count; an unchanged
    /// node set needs no new world.
    pub fn from_nodes(
        old_nodes: Vec<u32>,
        new_nodes: Vec<u32>,
        table: &InitCostTable,
        train_step_cost: f64,
        switch_cost: f64,
    ) -> Self {
        let same = old_nodes.iter().collect::<BTreeSet<_>>() == new_nodes.iter().collect::<BTreeSet<_>>();
        let init_cost = if same { 0.0 } else { table.cost(new_nodes.len() as u32) };
        Self { old_nodes, new_nodes, init_cost, train_step_cost, switch_cost }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// Same world; groups swap in place.
    InPlace,
    /// New world initialized in the background while training continues.
    Overlapped,
    /// Training stops while the new world initializes.
    Blocking,
}

impl ScaleMode {
    pub fn name(self) -> &'static str {
        match self {
            ScaleMode::InPlace => "in-place",
            ScaleMode::Overlapped => "overlapped",
            ScaleMode::Blocking => "blocking",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [ScaleMode::InPlace, ScaleMode::Overlapped, ScaleMode::Blocking].into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: &'static str,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTimeline {
    pub mode: ScaleMode,
    pub init_cost: f64,
    /// Whole training steps run during background init.
    pub overlapped_steps: u64,
    pub overlapped: f64,
    pub exposed: f64,
    /// `None` when there was nothing to overlap.
    pub overlap_ratio: Option<f64>,
    pub phases: Vec<Phase>,
}

/// Fraction of the total interruption that was hidden.
pub fn overlap_ratio(overlapped: f64, exposed: f64) -> Option<f64> {
    let total = overlapped + exposed;
    (total > 0.0).then(|| overlapped / total)
}

/// Accounts one scale event. Switches happen at step boundaries, so only
/// whole training steps overlap the background init.
pub fn simulate_scale_event(t: &WorldTransition, mode: ScaleMode) -> ScaleTimeline {
    let init = if mode == ScaleMode::InPlace { 0.0 } else { t.init_cost.max(0.0) };
    let step = t.train_step_cost.max(0.0);
    let switch = t.switch_cost.max(0.0);
    let (steps, overlapped) = match mode {
        ScaleMode::Overlapped if step > 0.0 && init > 0.0 => {
            // truncation is floor for non-negative values
            let steps = (init / step + 1e-9) as u64;
            (steps, init.min(steps as f64 * step))
        }
        _ => (0, 0.0),
    };
    let exposed = switch + (init - overlapped);
    let mut phases = Vec::new();
    if overlapped > 0.0 {
        phases.push(Phase { name: "train", start: 0.0, end: overlapped });
        phases.push(Phase { name: "init-background", start: 0.0, end: overlapped });
    }
    let mut cursor = overlapped;
    if init - overlapped > 0.0 {
        phases.push(Phase { name: "init", start: cursor, end: cursor + init - overlapped });
        cursor += init - overlapped;
    }
    phases.push(Phase { name: "switch", start: cursor, end: cursor + switch });
    ScaleTimeline {
        mode,
        init_cost: init,
        overlapped_steps: steps,
        overlapped,
        exposed,
        overlap_ratio: if init > 0.0 { overlap_ratio(overlapped, exposed) } else { None },
        phases,
    }
}

/// Renders a timeline as `key: value` lines.
pub fn format_timeline(t: &ScaleTimeline) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", t.mode);
    for p in &t.phases {
        let _ = writeln!(s, "phase {}: {:.3} .. {:.3}", p.name, p.start, p.end);
    }
    let _ = writeln!(s, "init_cost: {:.3}", t.init_cost);
    let _ = writeln!(s, "overlapped_steps: {}", t.overlapped_steps);
    let _ = writeln!(s, "overlapped: {:.3}", t.overlapped);
    let _ = writeln!(s, "exposed: {:.3}", t.exposed);
    match t.overlap_ratio {
        Some(r) => {
            let _ = writeln!(s, "overlap_ratio: {:.1}%", r * 100.0);
        }
        None => {
            let _ = writeln!(s, "overlap_ratio: no overlap needed");
        }
    }
    s
}
