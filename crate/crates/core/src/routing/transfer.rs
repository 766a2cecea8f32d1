use core::cmp::Ordering;
use core::fmt;

use crate::vps::{PrecisionPolicy, Span, TensorBox, Vps};
use crate::Device;

/// Kind of training state a transfer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateKind {
    Parameter,
    Optimizer,
    Gradient,
    Scalar,
}

impl StateKind {
    pub const ALL: [StateKind; 4] =
        [StateKind::Parameter, StateKind::Optimizer, StateKind::Gradient, StateKind::Scalar];

    pub fn name(self) -> &'static str {
        match self {
            StateKind::Parameter => "param",
            StateKind::Optimizer => "optim",
            StateKind::Gradient => "grad",
            StateKind::Scalar => "scalar",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of 64-bit slots in the scalar state blob (iteration, seeds,
/// schedule state, loss scale).
pub const SCALAR_SLOTS: u64 = 4;
pub const SCALAR_SLOT_BYTES: u64 = 8;

/// A piece of state: one tensor box, or one interval of a flat space
/// (global offsets for optimizer state, slot indices for scalars).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fragment {
    Box(TensorBox),
    Flat(Span),
}

impl Fragment {
    pub fn numel(&self) -> u64 {
        match self {
            Fragment::Box(b) => b.numel(),
            Fragment::Flat(s) => s.len(),
        }
    }

    /// Tensor id for boxes, `@flat` for flat intervals.
    pub fn name<'a>(&self, vps: &'a Vps) -> &'a str {
        match self {
            Fragment::Box(b) => &vps.tensor(b.tensor).id,
            Fragment::Flat(_) => "@flat",
        }
    }

    /// Packing order: flat intervals first, then tensor id ascending, then
    /// region lexicographic.
    pub fn cmp_in(&self, other: &Fragment, vps: &Vps) -> Ordering {
        match (self, other) {
            (Fragment::Flat(a), Fragment::Flat(b)) => a.cmp(b),
            (Fragment::Flat(_), Fragment::Box(_)) => Ordering::Less,
            (Fragment::Box(_), Fragment::Flat(_)) => Ordering::Greater,
            (Fragment::Box(a), Fragment::Box(b)) => vps
                .tensor(a.tensor)
                .id
                .cmp(&vps.tensor(b.tensor).id)
                .then_with(|| a.dims.cmp(&b.dims)),
        }
    }

    /// Global flat offsets (or slot indices) in packing order.
    pub fn elements(&self, vps: &Vps) -> impl Iterator<Item = u64> {
        let runs = match self {
            Fragment::Box(b) => vps.box_flat_runs(b),
            Fragment::Flat(s) => alloc::vec![*s],
        };
        runs.into_iter().flat_map(|s| s.lo..s.hi)
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fragment::Box(b) => write!(f, "{b}"),
            Fragment::Flat(s) => write!(f, "{s}"),
        }
    }
}

/// Bytes per element of each state kind under a precision policy.
pub fn element_bytes(vps: &Vps, kind: StateKind, frag: &Fragment, policy: PrecisionPolicy) -> u64 {
    match (kind, frag) {
        (StateKind::Parameter, Fragment::Box(b)) => u64::from(vps.tensor(b.tensor).dtype_bytes),
        (StateKind::Parameter, Fragment::Flat(_)) => policy.param_bytes(),
        (StateKind::Gradient, _) => policy.gradient_bytes(),
        (StateKind::Optimizer, _) => policy.optimizer_bytes(),
        (StateKind::Scalar, _) => SCALAR_SLOT_BYTES,
    }
}

/// One point-to-point movement of a fragment between devices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceTransfer {
    pub kind: StateKind,
    pub fragment: Fragment,
    pub src: Device,
    pub dst: Device,
    pub bytes: u64,
}

impl SliceTransfer {
    pub fn new(vps: &Vps, kind: StateKind, fragment: Fragment, src: Device, dst: Device, policy: PrecisionPolicy) -> Self {
        let bytes = fragment.numel() * element_bytes(vps, kind, &fragment, policy);
        Self { kind, fragment, src, dst, bytes }
    }

    /// Dump order: (src, dst, kind, tensor id, region).
    pub fn cmp_in(&self, other: &SliceTransfer, vps: &Vps) -> Ordering {
        (self.src, self.dst, self.kind)
            .cmp(&(other.src, other.dst, other.kind))
            .then_with(|| self.fragment.cmp_in(&other.fragment, vps))
    }

    /// Packing order inside a per-peer buffer: (kind, tensor id, region).
    pub fn cmp_packing(&self, other: &SliceTransfer, vps: &Vps) -> Ordering {
        self.kind.cmp(&other.kind).then_with(|| self.fragment.cmp_in(&other.fragment, vps))
    }
}

pub fn sort_transfers(v: &mut [SliceTransfer], vps: &Vps) {
    v.sort_by(|a, b| a.cmp_in(b, vps));
}
