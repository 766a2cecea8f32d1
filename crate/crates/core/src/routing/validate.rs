use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::planner::{device_regions, fragments, region_bytes, region_of, RoutingPlan};
use super::transfer::{element_bytes, SliceTransfer, StateKind};
use super::TransitionPlan;
use crate::vps::{ParallelConfig, RegionSet, Vps};
use crate::{Device, Result};

/// One broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Two of send/recv/retain overlap.
    Overlap { device: Device, kind: StateKind, sets: &'static str },
    /// send ∪ recv ∪ retain differs from src ∪ dst.
    Decomposition { device: Device, kind: StateKind },
    UncoveredDestination { device: Device, kind: StateKind, region: String },
    ExcessDestination { device: Device, kind: StateKind, region: String },
    MultipleSources { device: Device, kind: StateKind },
    /// A transfer is not listed exactly once by both endpoints.
    Unmatched { transfer: String, in_send: usize, in_recv: usize },
    SelfTransfer { transfer: String },
    ByteCount { transfer: String, expected: u64 },
    SourceMissing { transfer: String },
    Unresolved { kind: StateKind },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Overlap { device, kind, sets } => {
                write!(f, "rank {device} {kind}: {sets} overlap")
            }
            Violation::Decomposition { device, kind } => {
                write!(f, "rank {device} {kind}: send/recv/retain do not cover src ∪ dst")
            }
            Violation::UncoveredDestination { device, kind, region } => {
                write!(f, "uncovered destination region: rank {device} {kind} {region}")
            }
            Violation::ExcessDestination { device, kind, region } => {
                write!(f, "excess destination region: rank {device} {kind} {region}")
            }
            Violation::MultipleSources { device, kind } => {
                write!(f, "rank {device} {kind}: element received from more than one source")
            }
            Violation::Unmatched { transfer, in_send, in_recv } => write!(
                f,
                "unmatched transfer {transfer}: {in_send} sender entries, {in_recv} receiver entries"
            ),
            Violation::SelfTransfer { transfer } => write!(f, "self transfer {transfer}"),
            Violation::ByteCount { transfer, expected } => {
                write!(f, "transfer {transfer}: expected {expected} bytes")
            }
            Violation::SourceMissing { transfer } => {
                write!(f, "transfer {transfer}: sender does not hold the fragment")
            }
            Violation::Unresolved { kind } => write!(f, "{kind} plan has unresolved peers"),
        }
    }
}

/// Totals and violations of a plan audit. An empty violation list means the
/// plan is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanReport {
    pub violations: Vec<Violation>,
    pub transfers: usize,
    pub bytes_moved: u64,
    pub bytes_retained: u64,
}

impl PlanReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn describe(vps: &Vps, t: &SliceTransfer) -> String {
    format!("{} {} {} {}->{}", t.kind, t.fragment.name(vps), t.fragment, t.src, t.dst)
}

fn describe_region(vps: &Vps, r: &RegionSet) -> String {
    let mut s = String::new();
    for (i, f) in fragments(r).iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&format!("{} {f}", f.name(vps)));
    }
    s
}

/// Audits one resolved routing plan against the destination config.
pub fn validate_plan(plan: &RoutingPlan, vps: &Vps, dst_cfg: &ParallelConfig) -> Result<PlanReport> {
    let mut report = PlanReport::default();
    let kind = plan.kind;
    if !plan.resolved {
        report.violations.push(Violation::Unresolved { kind });
    }
    let n = plan.world.device_count();
    let expected_dst = match kind {
        StateKind::Optimizer => {
            device_regions(vps, dst_cfg, plan.world.dst_world(), n, |c, r| vps.optimizer_region(c, r))?
        }
        _ => device_regions(vps, dst_cfg, plan.world.dst_world(), n, |c, r| vps.project(c, r))?,
    };

    for d in &plan.devices {
        let dev = d.device;
        let pairs = [
            (&d.send_set, &d.recv_set, "send/recv"),
            (&d.send_set, &d.retain, "send/retain"),
            (&d.recv_set, &d.retain, "recv/retain"),
        ];
        for (a, b, sets) in pairs {
            if !a.intersect(b)?.is_empty() {
                report.violations.push(Violation::Overlap { device: dev, kind, sets });
            }
        }
        let whole = d.send_set.union(&d.recv_set)?.union(&d.retain)?;
        if !whole.set_eq(&d.src.union(&d.dst)?)? {
            report.violations.push(Violation::Decomposition { device: dev, kind });
        }

        let received = region_of(vps, d.recv.iter().map(|t| &t.fragment));
        let listed: u64 = d.recv.iter().map(|t| t.fragment.numel()).sum();
        if listed != received.numel() {
            report.violations.push(Violation::MultipleSources { device: dev, kind });
        }
        let have = received.union(&d.retain)?;
        let want = &expected_dst[dev as usize];
        let missing = want.difference(&have)?;
        if !missing.is_empty() {
            report.violations.push(Violation::UncoveredDestination {
                device: dev,
                kind,
                region: describe_region(vps, &missing),
            });
        }
        let excess = have.difference(want)?;
        if !excess.is_empty() {
            report.violations.push(Violation::ExcessDestination {
                device: dev,
                kind,
                region: describe_region(vps, &excess),
            });
        }
        report.bytes_retained += region_bytes(vps, kind, &d.retain, plan.policy);
    }

    let mut seen: BTreeMap<&SliceTransfer, (usize, usize)> = BTreeMap::new();
    for d in &plan.devices {
        for t in &d.send {
            let e = seen.entry(t).or_default();
            e.0 += usize::from(t.src == d.device);
        }
        for t in &d.recv {
            let e = seen.entry(t).or_default();
            e.1 += usize::from(t.dst == d.device);
        }
    }
    for (t, (s, r)) in seen {
        if s != 1 || r != 1 {
            report.violations.push(Violation::Unmatched { transfer: describe(vps, t), in_send: s, in_recv: r });
        }
        if t.src == t.dst {
            report.violations.push(Violation::SelfTransfer { transfer: describe(vps, t) });
        }
        let expected = t.fragment.numel() * element_bytes(vps, t.kind, &t.fragment, plan.policy);
        if t.bytes != expected {
            report.violations.push(Violation::ByteCount { transfer: describe(vps, t), expected });
        }
        let holder = &plan.devices[t.src as usize].src;
        let frag = region_of(vps, [&t.fragment]);
        if !frag.difference(holder)?.is_empty() {
            report.violations.push(Violation::SourceMissing { transfer: describe(vps, t) });
        }
        report.transfers += 1;
        report.bytes_moved += t.bytes;
    }
    Ok(report)
}

/// Audits every state kind of a transition plan.
pub fn validate_transition(plan: &TransitionPlan, vps: &Vps, dst_cfg: &ParallelConfig) -> Result<PlanReport> {
    let mut total = PlanReport::default();
    for p in plan.routing_plans() {
        let r = validate_plan(p, vps, dst_cfg)?;
        total.violations.extend(r.violations);
        total.transfers += r.transfers;
        total.bytes_moved += r.bytes_moved;
        total.bytes_retained += r.bytes_retained;
    }
    total.transfers += plan.scalars.receivers.len();
    total.bytes_moved += plan.scalars.bytes() * plan.scalars.receivers.len() as u64;
    Ok(total)
}
