use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::vps::ParallelConfig;
use crate::Result;

/// Communicator groups of one parallel configuration, as sorted rank lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSet {
    pub config: ParallelConfig,
    pub tp: Vec<Vec<u32>>,
    pub dp: Vec<Vec<u32>>,
    pub pp: Vec<Vec<u32>>,
    /// Expert all-to-all groups: data-parallel ranks sharing an expert-dp
    /// index.
    pub ep: Vec<Vec<u32>>,
    /// Data-parallel groups of expert replicas.
    pub edp: Vec<Vec<u32>>,
    /// Groups sharding dense optimizer state; singletons without ZeRO.
    pub optimizer: Vec<Vec<u32>>,
}

impl GroupSet {
    /// Derives every group from the configuration alone.
    pub fn derive(cfg: &ParallelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.world_size();
        let mut keyed: [BTreeMap<(u32, u32, u32), Vec<u32>>; 5] = Default::default();
        for rank in 0..n {
            let c = cfg.coord(rank)?;
            let (ep_rank, edp_rank) = (cfg.ep_rank(c), cfg.edp_rank(c));
            keyed[0].entry((c.pp_rank, c.dp_rank, 0)).or_default().push(rank);
            keyed[1].entry((c.pp_rank, c.tp_rank, 0)).or_default().push(rank);
            keyed[2].entry((c.dp_rank, c.tp_rank, 0)).or_default().push(rank);
            keyed[3].entry((c.pp_rank, c.tp_rank, edp_rank)).or_default().push(rank);
            keyed[4].entry((c.pp_rank, c.tp_rank, ep_rank)).or_default().push(rank);
        }
        let [tp, dp, pp, ep, edp] = keyed.map(|m| {
            let mut g: Vec<Vec<u32>> = m.into_values().collect();
            for v in &mut g {
                v.sort_unstable();
            }
            g.sort();
            g
        });
        let optimizer = if cfg.zero { dp.clone() } else { (0..n).map(|r| alloc::vec![r]).collect() };
        Ok(Self { config: *cfg, tp, dp, pp, ep, edp, optimizer })
    }

    pub fn dimensions(&self) -> [(&'static str, &[Vec<u32>]); 6] {
        [
            ("tp", &self.tp),
            ("dp", &self.dp),
            ("pp", &self.pp),
            ("ep", &self.ep),
            ("edp", &self.edp),
            ("optimizer", &self.optimizer),
        ]
    }

    /// Total communicators to create, singletons excluded.
    pub fn group_count(&self) -> usize {
        self.dimensions().iter().map(|(_, g)| g.iter().filter(|x| x.len() > 1).count()).sum()
    }
}

/// Cache of group sets keyed by configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCache {
    entries: BTreeMap<ParallelConfig, GroupSet>,
    /// Simulated seconds to create one communicator.
    pub per_group_cost: f64,
    pub hits: u64,
    pub misses: u64,
}

impl GroupCache {
    pub const DEFAULT_PER_GROUP_COST: f64 = 0.05;

    pub fn new(per_group_cost: f64) -> Self {
        Self { entries: BTreeMap::new(), per_group_cost, hits: 0, misses: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cfg: &ParallelConfig) -> bool {
        self.entries.contains_key(cfg)
    }
}

impl Default for GroupCache {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PER_GROUP_COST)
    }
}

/// Returns the cached groups for `cfg`, deriving them on a miss. The second
/// value is the simulated creation cost: zero on a hit.
pub fn get_or_create_groups<'a>(cache: &'a mut GroupCache, cfg: &ParallelConfig) -> Result<(&'a GroupSet, f64)> {
    let cost = if cache.entries.contains_key(cfg) {
        cache.hits += 1;
        0.0
    } else {
        let groups = GroupSet::derive(cfg)?;
        cache.misses += 1;
        let cost = groups.group_count() as f64 * cache.per_group_cost;
        cache.entries.insert(*cfg, groups);
        cost
    };
    Ok((&cache.entries[cfg], cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tp_groups_under_default_order() {
        let g = GroupSet::derive(&ParallelConfig::new(2, 2, 2)).unwrap();
        assert_eq!(g.tp, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
        assert_eq!(g.dp, vec![vec![0, 2], vec![1, 3], vec![4, 6], vec![5, 7]]);
        assert_eq!(g.pp, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
    }

    #[test]
    fn expert_groups_split_dp() {
        let g = GroupSet::derive(&ParallelConfig::new(4, 1, 1).with_ep(2)).unwrap();
        assert_eq!(g.ep, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(g.edp, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn cache_hit_is_free() {
        let mut cache = GroupCache::default();
        let cfg = ParallelConfig::new(2, 2, 1);
        let (_, first) = get_or_create_groups(&mut cache, &cfg).unwrap();
        assert!(first > 0.0);
        let (_, second) = get_or_create_groups(&mut cache, &cfg).unwrap();
        assert_eq!(second, 0.0);
        assert_eq!((cache.hits, cache.misses), (1, 1));
    }
}
