//! Line-oriented plan and schedule dumps. Both are byte-stable for a given
//! input.

use std::fmt::Write;

use reshard_core::engine::{Release, TransitionSchedule};
use reshard_core::routing::{fragments, Fragment, SliceTransfer, StateKind, TransitionPlan};
use reshard_core::vps::Vps;

fn fragment_name<'a>(vps: &'a Vps, kind: StateKind, frag: &Fragment) -> &'a str {
    if kind == StateKind::Scalar {
        "@scalars"
    } else {
        frag.name(vps)
    }
}

/// `kind name region src=S dst=D bytes=B`
pub fn transfer_line(vps: &Vps, t: &SliceTransfer) -> String {
    format!(
        "{} {} {} src={} dst={} bytes={}",
        t.kind,
        fragment_name(vps, t.kind, &t.fragment),
        t.fragment,
        t.src,
        t.dst,
        t.bytes
    )
}

/// One line per transfer, sorted by (src, dst, tensor, region). A transition
/// that moves nothing dumps nothing.
pub fn plan_dump(vps: &Vps, plan: &TransitionPlan) -> String {
    let mut s = String::new();
    for t in plan.transfers(vps) {
        s.push_str(&transfer_line(vps, &t));
        s.push('\n');
    }
    s
}

fn release_lines(s: &mut String, vps: &Vps, label: &str, releases: &[Release]) {
    for r in releases {
        for f in fragments(&r.region) {
            let _ = writeln!(s, "{label} dev={} {} {} {}", r.device, r.kind, fragment_name(vps, r.kind, &f), f);
        }
    }
}

/// The plan dump's records nested under collective, stage and step headers,
/// with release lists and buffer offsets.
pub fn schedule_dump(vps: &Vps, schedule: &TransitionSchedule) -> String {
    let mut s = String::new();
    let budget = if schedule.budget == u64::MAX { "unlimited".to_string() } else { schedule.budget.to_string() };
    let _ = writeln!(
        s,
        "schedule devices={} budget={} collectives={} stages={} bytes={}",
        schedule.devices,
        budget,
        schedule.collectives.len(),
        schedule.stages.len(),
        schedule.bytes_moved()
    );
    release_lines(&mut s, vps, "free", &schedule.free_list);
    for (i, c) in schedule.collectives.iter().enumerate() {
        let participants: Vec<String> = c.participants.iter().map(u32::to_string).collect();
        let _ = writeln!(
            s,
            "collective {i} {} {} root={} participants={} bytes={}",
            c.kind,
            c.state,
            c.root,
            participants.join(","),
            c.bytes
        );
        for t in &c.payload {
            let _ = writeln!(s, "  {}", transfer_line(vps, t));
        }
    }
    release_lines(&mut s, vps, "release stage=0", &schedule.collective_release);
    for stage in &schedule.stages {
        let steps: Vec<String> = stage.steps.iter().map(|c| format!("{}:{}", c.step, c.cost)).collect();
        // phase 0 is the collective phase
        let _ = writeln!(s, "stage {} steps={} mem_cost={}", stage.index + 1, steps.join(","), stage.mem_cost);
        for b in &stage.buffers {
            let _ = writeln!(s, "  step {} src={} dst={} bytes={}", b.step, b.src, b.dst, b.bytes);
            for slot in &b.slots {
                let _ = writeln!(s, "    @{} {}", slot.offset, transfer_line(vps, &slot.transfer));
            }
        }
        release_lines(&mut s, vps, &format!("release stage={}", stage.index + 1), &stage.release);
    }
    s
}
