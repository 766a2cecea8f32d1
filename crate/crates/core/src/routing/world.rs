use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::{Device, Error, Result};

/// Correspondence between the ranks of the source and destination worlds
/// and the physical devices that persist across the transition.
///
/// `src[r]` is the device running source rank `r`; `dst[r]` the device
/// running destination rank `r`. Devices are numbered densely `0..N` over
/// the union of both worlds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldMap {
    src: Vec<Device>,
    dst: Vec<Device>,
    devices: u32,
}

impl WorldMap {
    pub fn identity(n: u32) -> Self {
        Self::resize(n, n)
    }

    /// Devices `0..max(n_src, n_dst)`; rank `r` runs on device `r` in both
    /// worlds, so the tail devices join or leave.
    pub fn resize(n_src: u32, n_dst: u32) -> Self {
        Self { src: (0..n_src).collect(), dst: (0..n_dst).collect(), devices: n_src.max(n_dst) }
    }

    pub fn explicit(src: Vec<Device>, dst: Vec<Device>) -> Result<Self> {
        let s: BTreeSet<Device> = src.iter().copied().collect();
        let d: BTreeSet<Device> = dst.iter().copied().collect();
        if s.len() != src.len() || d.len() != dst.len() {
            return Err(Error::InvalidWorldMap("a device appears twice in one world".into()));
        }
        if src.is_empty() || dst.is_empty() {
            return Err(Error::InvalidWorldMap("both worlds need at least one rank".into()));
        }
        let all: BTreeSet<Device> = s.union(&d).copied().collect();
        let n = all.len() as u32;
        if all.iter().copied().ne(0..n) {
            return Err(Error::InvalidWorldMap(format!(
                "devices must be numbered densely from 0 (found {all:?})"
            )));
        }
        Ok(Self { src, dst, devices: n })
    }

    pub fn device_count(&self) -> u32 {
        self.devices
    }

    pub fn src_world(&self) -> &[Device] {
        &self.src
    }

    pub fn dst_world(&self) -> &[Device] {
        &self.dst
    }

    pub fn src_rank(&self, device: Device) -> Option<u32> {
        self.src.iter().position(|&d| d == device).map(|r| r as u32)
    }

    pub fn dst_rank(&self, device: Device) -> Option<u32> {
        self.dst.iter().position(|&d| d == device).map(|r| r as u32)
    }

    pub fn joining(&self) -> Vec<Device> {
        self.dst.iter().copied().filter(|d| !self.src.contains(d)).collect()
    }

    pub fn leaving(&self) -> Vec<Device> {
        self.src.iter().copied().filter(|d| !self.dst.contains(d)).collect()
    }

    pub fn is_static(&self) -> bool {
        self.joining().is_empty() && self.leaving().is_empty()
    }

    pub(crate) fn check_sizes(&self, src_world: u32, dst_world: u32) -> Result<()> {
        if self.src.len() as u32 != src_world || self.dst.len() as u32 != dst_world {
            return Err(Error::InvalidWorldMap(format!(
                "world map has {}/{} ranks but configs need {}/{}",
                self.src.len(),
                self.dst.len(),
                src_world,
                dst_world
            )));
        }
        Ok(())
    }
}
