use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec::Vec;

use crate::topology::Device;
use crate::{Error, Result};

/// One instruction of a rank's communication program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Send { peer: Device, tag: u64 },
    Recv { peer: Device, tag: u64 },
    /// Collective joined by every listed participant.
    Group { id: u64, participants: Vec<Device> },
    /// Global barrier.
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// A send completes only when the peer posts the matching receive.
    Rendezvous,
    /// Sends are posted to the peer's mailbox and return immediately.
    Eager,
}

/// Callbacks invoked as the transport makes progress.
pub trait Handler {
    /// Packs the message `tag` on the sender.
    fn pack(&mut self, src: Device, dst: Device, tag: u64) -> Result<Vec<u64>>;
    /// Unpacks the message `tag` on the receiver.
    fn unpack(&mut self, src: Device, dst: Device, tag: u64, data: Vec<u64>) -> Result<()>;
    fn group(&mut self, id: u64) -> Result<()>;
    /// Called once all ranks pass barrier number `index`.
    fn barrier(&mut self, index: usize) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub completed: bool,
    /// Ranks on a wait-for cycle (or the stuck chain) when not completed.
    pub witness: Vec<Device>,
    pub messages: u64,
}

/// Drives per-rank programs to completion or quiescence. Ranks are polled in
/// ascending order, so progress is deterministic.
pub fn drive(programs: &[Vec<Op>], delivery: Delivery, handler: &mut impl Handler) -> Result<Outcome> {
    let n = programs.len();
    let mut pc = alloc::vec![0usize; n];
    let mut mailboxes: BTreeMap<(Device, Device), VecDeque<(u64, Vec<u64>)>> = BTreeMap::new();
    let mut barriers = 0usize;
    let mut messages = 0u64;
    let op = |pc: &[usize], r: usize| programs[r].get(pc[r]);
    loop {
        let mut progressed = false;
        for r in 0..n {
            let me = r as Device;
            let Some(current) = op(&pc, r) else { continue };
            match current {
                Op::Send { peer, tag } => {
                    check_peer(*peer, n)?;
                    match delivery {
                        Delivery::Eager => {
                            let data = handler.pack(me, *peer, *tag)?;
                            mailboxes.entry((me, *peer)).or_default().push_back((*tag, data));
                            pc[r] += 1;
                            messages += 1;
                            progressed = true;
                        }
                        Delivery::Rendezvous => {
                            if op(&pc, *peer as usize) == Some(&Op::Recv { peer: me, tag: *tag }) {
                                let data = handler.pack(me, *peer, *tag)?;
                                handler.unpack(me, *peer, *tag, data)?;
                                pc[r] += 1;
                                pc[*peer as usize] += 1;
                                messages += 1;
                                progressed = true;
                            }
                        }
                    }
                }
                Op::Recv { peer, tag } => {
                    check_peer(*peer, n)?;
                    match delivery {
                        Delivery::Eager => {
                            if let Some((got, data)) = mailboxes.get_mut(&(*peer, me)).and_then(VecDeque::pop_front) {
                                if got != *tag {
                                    return Err(Error::Execution(format!(
                                        "rank {me} expected message {tag} from {peer}, got {got}"
                                    )));
                                }
                                handler.unpack(*peer, me, *tag, data)?;
                                pc[r] += 1;
                                progressed = true;
                            }
                        }
                        Delivery::Rendezvous => {
                            if op(&pc, *peer as usize) == Some(&Op::Send { peer: me, tag: *tag }) {
                                let data = handler.pack(*peer, me, *tag)?;
                                handler.unpack(*peer, me, *tag, data)?;
                                pc[r] += 1;
                                pc[*peer as usize] += 1;
                                messages += 1;
                                progressed = true;
                            }
                        }
                    }
                }
                Op::Group { id, participants } => {
                    let ready = participants.iter().all(|&p| {
                        matches!(op(&pc, p as usize), Some(Op::Group { id: other, .. }) if other == id)
                    });
                    if ready {
                        handler.group(*id)?;
                        for &p in participants {
                            pc[p as usize] += 1;
                        }
                        progressed = true;
                    }
                }
                Op::Barrier => {
                    if (0..n).all(|q| op(&pc, q) == Some(&Op::Barrier)) {
                        handler.barrier(barriers)?;
                        barriers += 1;
                        for p in pc.iter_mut() {
                            *p += 1;
                        }
                        progressed = true;
                    }
                }
            }
        }
        if (0..n).all(|r| op(&pc, r).is_none()) {
            return Ok(Outcome { completed: true, witness: Vec::new(), messages });
        }
        if !progressed {
            let witness = wait_for_cycle(programs, &pc);
            return Ok(Outcome { completed: false, witness, messages });
        }
    }
}

fn check_peer(peer: Device, n: usize) -> Result<()> {
    if (peer as usize) < n {
        Ok(())
    } else {
        Err(Error::Execution(format!("peer {peer} outside a world of {n}")))
    }
}

/// The rank a blocked rank waits on.
fn waits_on(programs: &[Vec<Op>], pc: &[usize], r: usize) -> Option<usize> {
    match programs[r].get(pc[r])? {
        Op::Send { peer, .. } | Op::Recv { peer, .. } => Some(*peer as usize),
        Op::Group { id, participants } => participants
            .iter()
            .map(|&p| p as usize)
            .find(|&p| !matches!(programs[p].get(pc[p]), Some(Op::Group { id: other, .. }) if other == id)),
        Op::Barrier => (0..programs.len()).find(|&q| programs[q].get(pc[q]) != Some(&Op::Barrier)),
    }
}

/// Follows wait-for edges from the lowest blocked rank. Returns the cycle if
/// one is reached, otherwise the chain ending at a finished rank.
fn wait_for_cycle(programs: &[Vec<Op>], pc: &[usize]) -> Vec<Device> {
    let Some(start) = (0..programs.len()).find(|&r| programs[r].get(pc[r]).is_some()) else {
        return Vec::new();
    };
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if let Some(pos) = path.iter().position(|&p| p == cur) {
            return path[pos..].iter().map(|&p| p as Device).collect();
        }
        path.push(cur);
        match waits_on(programs, pc, cur) {
            Some(next) => cur = next,
            None => return path.into_iter().map(|p| p as Device).collect(),
        }
    }
}
