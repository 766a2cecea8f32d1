use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::state::{Cluster, RankStatus};
use super::transport::{drive, Delivery, Handler, Op};
use crate::engine::{pack_layout, BufferSlot, CollectiveKind, CommOp, Release, TransitionSchedule};
use crate::routing::{SliceTransfer, TransitionPlan};
use crate::topology::{Device, Topology};
use crate::vps::Vps;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExecMode {
    /// One message per fragment, collectives decomposed, steps sequential.
    Naive,
    /// One packed buffer per (peer, step), steps sequential.
    BufferSync,
    /// Packed buffers, all steps of a stage overlapped.
    BufferAsync,
}

impl ExecMode {
    pub const ALL: [ExecMode; 3] = [ExecMode::Naive, ExecMode::BufferSync, ExecMode::BufferAsync];

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Naive => "naive",
            ExecMode::BufferSync => "buffer-sync",
            ExecMode::BufferAsync => "buffer-async",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How paired ranks order their sends and receives within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairOrder {
    /// The lower rank sends first.
    #[default]
    LowerSendsFirst,
    /// Both sides send first. Deadlocks under blocking delivery; kept as a
    /// negative fixture for the detector.
    SendFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecOptions {
    pub order: PairOrder,
}

/// One delivered message. Stage 0 is the collective phase; schedule stage
/// `i` is reported as `i + 1`. Step 0 marks a collective.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub src: Device,
    pub dst: Device,
    pub bytes: u64,
    pub step: u32,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecReport {
    pub mode: ExecMode,
    pub sim_time: f64,
    /// Collective phase first, then one entry per stage.
    pub phase_times: Vec<f64>,
    pub peak_bytes: Vec<u64>,
    pub messages: u64,
    pub bytes_moved: u64,
    pub deadlock: bool,
    pub witness: Vec<Device>,
    pub trace: Vec<TraceEvent>,
}

impl ExecReport {
    pub fn max_peak(&self) -> u64 {
        self.peak_bytes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct Message {
    src: Device,
    dst: Device,
    phase: usize,
    step: u32,
    /// Sender-side layout.
    slots: Vec<BufferSlot>,
    bytes: u64,
    /// Position among the messages of the same (src, dst, phase), for
    /// per-fragment delivery.
    seq: usize,
    end_time: f64,
}

impl Message {
    fn pack_cost(&self, topo: &Topology) -> f64 {
        if self.slots.len() >= 2 {
            topo.pack_time(self.bytes)
        } else {
            0.0
        }
    }

    /// Pack, wire and unpack time of one message sent on its own.
    fn solo_time(&self, topo: &Topology) -> f64 {
        2.0 * self.pack_cost(topo) + topo.transfer_time(self.src, self.dst, self.bytes)
    }
}

type PhaseSteps = Vec<BTreeMap<u32, Vec<usize>>>;

/// Messages per phase and step, in sender order.
fn build_messages(vps: &Vps, schedule: &TransitionSchedule, mode: ExecMode) -> (Vec<Message>, PhaseSteps) {
    let mut messages: Vec<Message> = Vec::new();
    let mut phases: PhaseSteps = vec![BTreeMap::new(); schedule.stages.len() + 1];
    let mut seq: BTreeMap<(Device, Device, usize), usize> = BTreeMap::new();
    let mut push = |messages: &mut Vec<Message>, phases: &mut PhaseSteps, phase, step, src, dst, slots: Vec<BufferSlot>| {
        let bytes = slots.iter().map(|s| s.transfer.bytes).sum();
        let n = seq.entry((src, dst, phase)).or_insert(0);
        phases[phase].entry(step).or_default().push(messages.len());
        messages.push(Message { src, dst, phase, step, slots, bytes, seq: *n, end_time: 0.0 });
        *n += 1;
    };
    if mode == ExecMode::Naive {
        let mut payload: Vec<SliceTransfer> = schedule.collectives.iter().flat_map(CommOp::decompose).collect();
        payload.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)).then_with(|| a.cmp_packing(b, vps)));
        for t in payload {
            let (src, dst) = (t.src, t.dst);
            push(&mut messages, &mut phases, 0, src ^ dst, src, dst, vec![BufferSlot { transfer: t, offset: 0 }]);
        }
    }
    for (i, stage) in schedule.stages.iter().enumerate() {
        for b in &stage.buffers {
            if mode == ExecMode::Naive {
                for s in &b.slots {
                    let slot = BufferSlot { transfer: s.transfer.clone(), offset: 0 };
                    push(&mut messages, &mut phases, i + 1, b.step, b.src, b.dst, vec![slot]);
                }
            } else {
                push(&mut messages, &mut phases, i + 1, b.step, b.src, b.dst, b.slots.clone());
            }
        }
    }
    (messages, phases)
}

/// Per-rank programs: an optional collective phase, then each stage, each
/// phase closed by a barrier.
fn build_programs(
    n: u32,
    schedule: &TransitionSchedule,
    mode: ExecMode,
    order: PairOrder,
    messages: &[Message],
    phases: &PhaseSteps,
) -> Vec<Vec<Op>> {
    let mut programs = vec![Vec::new(); n as usize];
    for (p, steps) in phases.iter().enumerate() {
        if p == 0 && mode != ExecMode::Naive {
            for (id, c) in schedule.collectives.iter().enumerate() {
                for &d in &c.participants {
                    programs[d as usize].push(Op::Group { id: id as u64, participants: c.participants.clone() });
                }
            }
        }
        for r in 0..n {
            let prog = &mut programs[r as usize];
            let sends = |step: u32| {
                steps.get(&step).into_iter().flatten().filter(move |&&m| messages[m].src == r).map(|&m| Op::Send {
                    peer: messages[m].dst,
                    tag: m as u64,
                })
            };
            let recvs = |step: u32| {
                steps.get(&step).into_iter().flatten().filter(move |&&m| messages[m].dst == r).map(|&m| Op::Recv {
                    peer: messages[m].src,
                    tag: m as u64,
                })
            };
            let active: Vec<u32> =
                steps.keys().copied().filter(|&s| (r ^ s) < n).collect();
            if mode == ExecMode::BufferAsync {
                for &s in &active {
                    prog.extend(sends(s));
                }
                for &s in &active {
                    prog.extend(recvs(s));
                }
            } else {
                for &s in &active {
                    let peer = r ^ s;
                    if r < peer || order == PairOrder::SendFirst {
                        prog.extend(sends(s));
                        prog.extend(recvs(s));
                    } else {
                        prog.extend(recvs(s));
                        prog.extend(sends(s));
                    }
                }
            }
        }
        for prog in &mut programs {
            prog.push(Op::Barrier);
        }
    }
    programs
}

/// Time of one collective: the cheaper of a log-depth tree bounded by the
/// slowest root link and sequential per-peer messages from the root.
fn collective_time(topo: &Topology, c: &CommOp) -> f64 {
    let others: Vec<Device> = c.participants.iter().copied().filter(|&d| d != c.root).collect();
    if others.is_empty() {
        return 0.0;
    }
    let rounds = f64::from(usize::BITS - (c.participants.len() - 1).leading_zeros());
    let bw_min = others.iter().map(|&d| topo.bandwidth(c.root, d)).fold(f64::INFINITY, f64::min);
    let lat = topo.per_message_latency;
    let tree = match c.kind {
        CollectiveKind::Broadcast => rounds * (lat + c.buffer_bytes(c.root) as f64 / bw_min),
        CollectiveKind::Scatter | CollectiveKind::Gather => rounds * lat + c.bytes as f64 / bw_min,
    };
    let mut per_pair: BTreeMap<(Device, Device), u64> = BTreeMap::new();
    for t in &c.payload {
        *per_pair.entry((t.src, t.dst)).or_default() += t.bytes;
    }
    let seq: f64 = per_pair.iter().map(|(&(s, d), &b)| topo.transfer_time(s, d, b)).sum();
    tree.min(seq)
}

/// Analytic phase times; fills each message's completion time.
fn timing(
    topo: &Topology,
    n: u32,
    schedule: &TransitionSchedule,
    mode: ExecMode,
    messages: &mut [Message],
    phases: &PhaseSteps,
) -> (Vec<f64>, Vec<f64>) {
    let mut phase_times = Vec::with_capacity(phases.len());
    let mut collective_ends = Vec::new();
    let mut start = 0.0;
    for (p, steps) in phases.iter().enumerate() {
        let mut t = 0.0;
        if p == 0 && mode != ExecMode::Naive {
            let mut per_device = vec![0.0f64; n as usize];
            for c in &schedule.collectives {
                let ct = collective_time(topo, c);
                let mut end = 0.0f64;
                for &d in &c.participants {
                    per_device[d as usize] += ct;
                    end = end.max(per_device[d as usize]);
                }
                collective_ends.push(start + end);
            }
            t = per_device.into_iter().fold(0.0, f64::max);
        }
        if mode == ExecMode::BufferAsync {
            // per rank: one overlapped latency per direction, intra- and
            // inter-node links in parallel, bytes serialized per link
            let mut link = vec![[[0u64; 2]; 2]; n as usize];
            let mut pack = vec![0.0f64; n as usize];
            for &m in steps.values().flatten() {
                let msg = &messages[m];
                let tier = usize::from(!topo.same_node(msg.src, msg.dst));
                link[msg.src as usize][0][tier] += msg.bytes;
                link[msg.dst as usize][1][tier] += msg.bytes;
                pack[msg.src as usize] += msg.pack_cost(topo);
                pack[msg.dst as usize] += msg.pack_cost(topo);
            }
            let dir = |b: [u64; 2]| {
                if b == [0, 0] {
                    0.0
                } else {
                    topo.per_message_latency
                        + (b[0] as f64 / topo.intra_node_bw).max(b[1] as f64 / topo.inter_node_bw)
                }
            };
            for r in 0..n as usize {
                t = f64::max(t, dir(link[r][0]).max(dir(link[r][1])) + pack[r]);
            }
            for &m in steps.values().flatten() {
                messages[m].end_time = start + messages[m].solo_time(topo);
            }
        } else {
            let mut cursor = t;
            for (&step, ms) in steps {
                // pairs run in parallel; within a pair messages are sequential
                let mut pair_time: BTreeMap<(Device, Device), f64> = BTreeMap::new();
                let mut ordered: Vec<usize> = ms.clone();
                ordered.sort_by_key(|&m| {
                    let msg = &messages[m];
                    (msg.src.min(msg.dst), msg.src > msg.dst, m)
                });
                for m in ordered {
                    let key = (messages[m].src.min(messages[m].dst), messages[m].src.max(messages[m].dst));
                    let acc = pair_time.entry(key).or_insert(0.0);
                    *acc += messages[m].solo_time(topo);
                    messages[m].end_time = start + cursor + *acc;
                }
                let _ = step;
                cursor += pair_time.values().copied().fold(0.0, f64::max);
            }
            t = cursor;
        }
        phase_times.push(t);
        start += t;
    }
    (phase_times, collective_ends)
}

struct Exec<'a> {
    cluster: &'a mut Cluster,
    vps: &'a Vps,
    schedule: &'a TransitionSchedule,
    mode: ExecMode,
    messages: &'a [Message],
    /// Receiver-side view: transfers each device expects from a peer in a
    /// phase, in packing order.
    expected: BTreeMap<(Device, Device, usize), Vec<SliceTransfer>>,
    collective_ends: Vec<f64>,
    phase: usize,
    bytes_moved: u64,
    trace: Vec<TraceEvent>,
}

impl Exec<'_> {
    fn charge(&mut self, device: Device, bytes: u64) -> Result<()> {
        let r = &mut self.cluster.ranks[device as usize];
        let requested = r.mem_current + bytes;
        if let Some(cap) = self.cluster.mem_cap {
            if requested > cap {
                return Err(Error::OutOfMemory { device, stage: self.phase, requested, cap });
            }
        }
        r.mem_current = requested;
        r.mem_peak = r.mem_peak.max(requested);
        Ok(())
    }

    fn credit(&mut self, device: Device, bytes: u64) {
        let r = &mut self.cluster.ranks[device as usize];
        r.mem_current = r.mem_current.saturating_sub(bytes);
    }

    fn read(&self, device: Device, slots: &[BufferSlot]) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for s in slots {
            let store = self.cluster.ranks[device as usize].store(s.transfer.kind);
            for k in s.transfer.fragment.elements(self.vps) {
                match store.get(&k) {
                    Some(&v) => out.push(v),
                    None => {
                        return Err(Error::Execution(format!(
                            "rank {device} lacks {} element {k}",
                            s.transfer.kind
                        )))
                    }
                }
            }
        }
        Ok(out)
    }

    fn write(&mut self, device: Device, layout: &[SliceTransfer], data: Vec<u64>) -> Result<()> {
        let expected: u64 = layout.iter().map(|t| t.fragment.numel()).sum();
        if expected != data.len() as u64 {
            return Err(Error::Execution(format!(
                "rank {device} expected {expected} elements, received {}",
                data.len()
            )));
        }
        let mut values = data.into_iter();
        for t in layout {
            for k in t.fragment.elements(self.vps) {
                let v = values.next().unwrap_or_default();
                self.cluster.ranks[device as usize].store_mut(t.kind).insert(k, v);
            }
        }
        Ok(())
    }

    fn apply(&mut self, releases: &[Release]) {
        for r in releases {
            let flat = self.vps.to_flat(&r.region);
            let store = self.cluster.ranks[r.device as usize].store_mut(r.kind);
            store.retain(|k, _| !flat.contains(*k));
        }
    }

    fn charge_stage(&mut self, stage: usize) -> Result<()> {
        if let Some(s) = self.schedule.stages.get(stage) {
            for (d, &b) in s.rank_bytes.iter().enumerate() {
                self.charge(d as Device, b)?;
            }
        }
        Ok(())
    }

    fn credit_stage(&mut self, stage: usize) {
        if let Some(s) = self.schedule.stages.get(stage) {
            for (d, &b) in s.rank_bytes.iter().enumerate() {
                self.credit(d as Device, b);
            }
        }
    }
}

impl Handler for Exec<'_> {
    fn pack(&mut self, src: Device, dst: Device, tag: u64) -> Result<Vec<u64>> {
        let msg = &self.messages[tag as usize];
        if msg.src != src || msg.dst != dst {
            return Err(Error::Execution(format!("message {tag} is not {src}->{dst}")));
        }
        if self.mode == ExecMode::Naive {
            self.charge(src, msg.bytes)?;
        }
        self.read(src, &msg.slots)
    }

    fn unpack(&mut self, src: Device, dst: Device, tag: u64, data: Vec<u64>) -> Result<()> {
        let msg = &self.messages[tag as usize];
        let mine = self.expected.get(&(src, dst, msg.phase)).cloned().unwrap_or_default();
        let layout: Vec<SliceTransfer> = if self.mode == ExecMode::Naive {
            mine.get(msg.seq).cloned().into_iter().collect()
        } else {
            pack_layout(self.vps, mine).into_iter().map(|s| s.transfer).collect()
        };
        if self.mode == ExecMode::Naive {
            self.charge(dst, msg.bytes)?;
        }
        self.write(dst, &layout, data)?;
        if self.mode == ExecMode::Naive {
            self.credit(src, msg.bytes);
            self.credit(dst, msg.bytes);
        }
        self.bytes_moved += msg.bytes;
        self.trace.push(TraceEvent {
            time: msg.end_time,
            src,
            dst,
            bytes: msg.bytes,
            step: msg.step,
            stage: msg.phase,
        });
        Ok(())
    }

    fn group(&mut self, id: u64) -> Result<()> {
        let c = &self.schedule.collectives[id as usize];
        for &d in &c.participants {
            self.charge(d, c.buffer_bytes(d))?;
        }
        for t in &c.payload {
            let slot = [BufferSlot { transfer: t.clone(), offset: 0 }];
            let data = self.read(t.src, &slot)?;
            self.write(t.dst, core::slice::from_ref(t), data)?;
            self.bytes_moved += t.bytes;
            self.trace.push(TraceEvent {
                time: self.collective_ends[id as usize],
                src: t.src,
                dst: t.dst,
                bytes: t.bytes,
                step: 0,
                stage: 0,
            });
        }
        for &d in &c.participants {
            self.credit(d, c.buffer_bytes(d));
        }
        Ok(())
    }

    fn barrier(&mut self, index: usize) -> Result<()> {
        if index == 0 {
            let r = self.schedule.collective_release.clone();
            self.apply(&r);
        } else {
            let r = self.schedule.stages[index - 1].release.clone();
            self.apply(&r);
            if self.mode != ExecMode::Naive {
                self.credit_stage(index - 1);
            }
        }
        self.phase = index + 1;
        if self.mode != ExecMode::Naive {
            self.charge_stage(index)?;
        }
        Ok(())
    }
}

/// Receiver-side expectations derived from each device's own receive lists.
fn expectations(
    vps: &Vps,
    plan: &TransitionPlan,
    schedule: &TransitionSchedule,
) -> BTreeMap<(Device, Device, usize), Vec<SliceTransfer>> {
    let in_collective: Vec<&SliceTransfer> = schedule.collectives.iter().flat_map(|c| &c.payload).collect();
    let mut out: BTreeMap<(Device, Device, usize), Vec<SliceTransfer>> = BTreeMap::new();
    let mut own: Vec<SliceTransfer> = plan.routing_plans().flat_map(|p| p.devices.iter().flat_map(|d| d.recv.clone())).collect();
    own.extend(plan.scalars.transfers());
    for t in own {
        let phase = if in_collective.contains(&&t) {
            0
        } else {
            match schedule.stage_of(t.src ^ t.dst) {
                Some(i) => i + 1,
                None => continue,
            }
        };
        out.entry((t.src, t.dst, phase)).or_default().push(t);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.cmp_packing(b, vps));
    }
    out
}

/// Executes a schedule on a cluster loaded with the source state. On success
/// the cluster holds exactly the destination state.
pub fn execute(
    cluster: &mut Cluster,
    vps: &Vps,
    plan: &TransitionPlan,
    schedule: &TransitionSchedule,
    mode: ExecMode,
) -> Result<ExecReport> {
    execute_with(cluster, vps, plan, schedule, mode, ExecOptions::default())
}

pub fn execute_with(
    cluster: &mut Cluster,
    vps: &Vps,
    plan: &TransitionPlan,
    schedule: &TransitionSchedule,
    mode: ExecMode,
    options: ExecOptions,
) -> Result<ExecReport> {
    let n = schedule.devices;
    if cluster.ranks.len() != n as usize {
        return Err(Error::Execution(format!(
            "cluster has {} devices, schedule needs {n}",
            cluster.ranks.len()
        )));
    }
    cluster.reset_runtime();
    let topo = cluster.topology.clone();
    let (mut messages, phases) = build_messages(vps, schedule, mode);
    let (phase_times, collective_ends) = timing(&topo, n, schedule, mode, &mut messages, &phases);
    let programs = build_programs(n, schedule, mode, options.order, &messages, &phases);
    let delivery = match mode {
        ExecMode::BufferAsync => Delivery::Eager,
        ExecMode::Naive | ExecMode::BufferSync => Delivery::Rendezvous,
    };
    let mut exec = Exec {
        cluster,
        vps,
        schedule,
        mode,
        messages: &messages,
        expected: expectations(vps, plan, schedule),
        collective_ends,
        phase: 0,
        bytes_moved: 0,
        trace: Vec::new(),
    };
    exec.apply(&schedule.free_list);
    let outcome = drive(&programs, delivery, &mut exec)?;
    let (bytes_moved, mut trace) = (exec.bytes_moved, core::mem::take(&mut exec.trace));
    trace.sort_by(|a, b| {
        a.time.total_cmp(&b.time).then_with(|| (a.stage, a.step, a.src, a.dst).cmp(&(b.stage, b.step, b.src, b.dst)))
    });
    if outcome.completed {
        prune_to_destination(cluster, vps, schedule);
    }
    for r in &mut cluster.ranks {
        r.status = if outcome.completed { RankStatus::Done } else { RankStatus::Running };
    }
    for (i, &d) in outcome.witness.iter().enumerate() {
        let next = outcome.witness[(i + 1) % outcome.witness.len()];
        cluster.ranks[d as usize].status = RankStatus::Blocked(next);
    }
    let collectives = if mode == ExecMode::Naive { 0 } else { schedule.collectives.len() as u64 };
    Ok(ExecReport {
        mode,
        sim_time: if outcome.completed { phase_times.iter().sum() } else { f64::INFINITY },
        phase_times,
        peak_bytes: cluster.ranks.iter().map(|r| r.mem_peak).collect(),
        messages: outcome.messages + collectives,
        bytes_moved,
        deadlock: !outcome.completed,
        witness: outcome.witness,
        trace,
    })
}

fn prune_to_destination(cluster: &mut Cluster, vps: &Vps, schedule: &TransitionSchedule) {
    for layout in &schedule.final_layout {
        let rank = &mut cluster.ranks[layout.device as usize];
        for (kind, region) in &layout.regions {
            let flat = vps.to_flat(region);
            rank.store_mut(*kind).retain(|k, _| flat.contains(*k));
        }
        if !layout.scalars {
            rank.store_mut(crate::routing::StateKind::Scalar).clear();
        }
    }
}

/// Renders a report as `key: value` lines.
pub fn format_report(r: &ExecReport) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", r.mode);
    let _ = writeln!(s, "sim_time: {:.9}", r.sim_time);
    for (i, t) in r.phase_times.iter().enumerate() {
        let _ = writeln!(s, "stage_time[{i}]: {t:.9}");
    }
    let _ = writeln!(s, "messages: {}", r.messages);
    let _ = writeln!(s, "bytes_moved: {}", r.bytes_moved);
    let _ = writeln!(s, "peak_bytes: {:?}", r.peak_bytes);
    let _ = writeln!(s, "deadlock: {}", r.deadlock);
    if r.deadlock {
        let _ = writeln!(s, "witness: {:?}", r.witness);
    }
    s
}
