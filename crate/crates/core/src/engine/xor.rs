use alloc::vec::Vec;

/// Peer of `rank` at logical step `step`, or `None` when the partner falls
/// outside the world.
pub fn xor_peer(rank: u32, step: u32, n: u32) -> Option<u32> {
    let peer = rank ^ step;
    (peer < n).then_some(peer)
}

/// Upper bound (exclusive) of the logical steps needed so every pair of ranks
/// in a world of `n` meets once: the next power of two.
pub fn step_bound(n: u32) -> u32 {
    n.max(1).next_power_of_two()
}

/// The `(step, peer)` pairs rank `rank` communicates with during a stage.
/// Steps whose partner is out of range or has no traffic with `rank` are
/// skipped.
pub fn xor_schedule(
    steps: &[u32],
    n: u32,
    rank: u32,
    has_traffic: impl Fn(u32, u32) -> bool,
) -> Vec<(u32, u32)> {
    steps
        .iter()
        .filter_map(|&s| xor_peer(rank, s, n).map(|p| (s, p)))
        .filter(|&(_, p)| has_traffic(rank, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn four_rank_table() {
        let pairs = |s| (0..4).filter_map(|i| xor_peer(i, s, 4).filter(|&p| i < p).map(|p| (i, p))).collect::<Vec<_>>();
        assert_eq!(pairs(1), vec![(0, 1), (2, 3)]);
        assert_eq!(pairs(2), vec![(0, 2), (1, 3)]);
        assert_eq!(pairs(3), vec![(0, 3), (1, 2)]);
    }

    #[test]
    fn out_of_range_partner_is_skipped() {
        assert_eq!(xor_peer(3, 6, 5), None);
        assert_eq!(step_bound(5), 8);
        assert_eq!(step_bound(1), 1);
    }

    #[test]
    fn involution() {
        for n in 1..=17 {
            for s in 1..step_bound(n) {
                for i in 0..n {
                    if let Some(p) = xor_peer(i, s, n) {
                        assert_eq!(xor_peer(p, s, n), Some(i));
                        assert_ne!(p, i);
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_filters_inactive_steps() {
        let sched = xor_schedule(&[1, 2, 3], 4, 0, |a, b| a + b != 2);
        assert_eq!(sched, vec![(1, 1), (3, 3)]);
    }
}
