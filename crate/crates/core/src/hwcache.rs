//! Fast tier as a page-granular direct-mapped cache in front of the slow tier.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::CostModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Clone, Debug)]
pub struct DirectMappedCache {
    frames: u64,
    // frame -> resident page; sparse so huge frame counts cost nothing up front
    occupant: HashMap<u64, u64>,
    hit_ns: u64,
    miss_ns: u64,
    stats: CacheStats,
}

impl DirectMappedCache {
    pub fn new(frames: u64, cost: &CostModel) -> Self {
        Self {
            frames,
            occupant: HashMap::new(),
            hit_ns: cost.fast_read_ns,
            miss_ns: cost.slow_read_ns() + cost.hw_page_fill_ns,
            stats: CacheStats::default(),
        }
    }

    /// Looks up `page`; on a miss its frame is refilled. With zero frames
    /// every access is served straight from the slow tier at the miss price.
    pub fn access(&mut self, page: u64) -> (bool, u64) {
        if self.frames == 0 {
            self.stats.misses += 1;
            return (false, self.miss_ns);
        }
        let frame = page % self.frames;
        match self.occupant.insert(frame, page) {
            Some(prev) if prev == page => {
                self.stats.hits += 1;
                (true, self.hit_ns)
            }
            _ => {
                self.stats.misses += 1;
                (false, self.miss_ns)
            }
        }
    }

    /// Frames currently holding a page.
    pub fn resident_frames(&self) -> u64 {
        self.occupant.len() as u64
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache(frames: u64) -> DirectMappedCache {
        DirectMappedCache::new(frames, &CostModel::default())
    }

    #[test]
    fn warm_up_then_hits() {
        let mut c = cache(8);
        assert_eq!(c.access(3), (false, 400 + 1000));
        for _ in 0..5 {
            assert_eq!(c.access(3), (true, 100));
        }
        assert_eq!(c.stats(), CacheStats { hits: 5, misses: 1 });
    }

    #[test]
    fn conflicting_pages_thrash() {
        let mut c = cache(8);
        for i in 0..20 {
            let (hit, _) = c.access(if i % 2 == 0 { 1 } else { 9 });
            assert!(!hit);
        }
        assert_eq!(c.resident_frames(), 1);
    }

    #[test]
    fn compulsory_misses_only() {
        let mut c = cache(16);
        for _ in 0..3 {
            for p in 0..16 {
                c.access(p);
            }
        }
        assert_eq!(c.stats().misses, 16);
        assert!(c.resident_frames() <= 16);
    }
}
