//! Two-tier cluster topology: fast links inside a node, slower links between
//! nodes.

use crate::{Error, Result};

/// Physical device id. Plans and schedules address devices, not ranks; the
/// [`crate::routing::WorldMap`] relates the two.
pub type Device = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Topology {
    pub num_nodes: u32,
    pub ranks_per_node: u32,
    /// Bytes per simulated second.
    pub intra_node_bw: f64,
    pub inter_node_bw: f64,
    /// Seconds charged once per message.
    pub per_message_latency: f64,
    /// Bandwidth of on-device packing and unpacking.
    pub pack_bw: f64,
}

impl Topology {
    pub const DEFAULT_INTRA_BW: f64 = 150e9;
    pub const DEFAULT_INTER_BW: f64 = 25e9;
    pub const DEFAULT_LATENCY: f64 = 20e-6;

    /// Topology with default link parameters; pack bandwidth is ten times the
    /// inter-node bandwidth.
    pub fn new(num_nodes: u32, ranks_per_node: u32) -> Self {
        Self {
            num_nodes,
            ranks_per_node,
            intra_node_bw: Self::DEFAULT_INTRA_BW,
            inter_node_bw: Self::DEFAULT_INTER_BW,
            per_message_latency: Self::DEFAULT_LATENCY,
            pack_bw: 10.0 * Self::DEFAULT_INTER_BW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 || self.ranks_per_node == 0 {
            return Err(Error::InvalidTopology("num_nodes and ranks_per_node must be positive"));
        }
        if !(self.intra_node_bw > 0.0 && self.inter_node_bw > 0.0 && self.pack_bw > 0.0) {
            return Err(Error::InvalidTopology("bandwidths must be positive"));
        }
        if !(self.per_message_latency >= 0.0) {
            return Err(Error::InvalidTopology("latency must be non-negative"));
        }
        Ok(())
    }

    pub fn capacity(&self) -> u32 {
        self.num_nodes * self.ranks_per_node
    }

    pub fn node(&self, device: Device) -> u32 {
        device / self.ranks_per_node
    }

    pub fn same_node(&self, a: Device, b: Device) -> bool {
        self.node(a) == self.node(b)
    }

    pub fn bandwidth(&self, a: Device, b: Device) -> f64 {
        if self.same_node(a, b) {
            self.intra_node_bw
        } else {
            self.inter_node_bw
        }
    }

    /// Latency plus serialization time of one message.
    pub fn transfer_time(&self, a: Device, b: Device, bytes: u64) -> f64 {
        self.per_message_latency + bytes as f64 / self.bandwidth(a, b)
    }

    pub fn pack_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.pack_bw
    }
}
