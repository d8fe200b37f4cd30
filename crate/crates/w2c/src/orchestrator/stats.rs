//! Run counters: how much came in, what survived, and what it cost.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub images_in: u64,
    pub images_out: u64,
    pub images_dropped: u64,
    pub images_errored: u64,
    pub concepts_detected: u64,
    pub groups_total: u64,
    pub groups_inconsistent: u64,
    pub candidates_scored: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
}

impl RunStats {
    /// Every image is accounted for exactly once.
    pub fn is_conserved(&self) -> bool {
        self.images_in == self.images_out + self.images_dropped + self.images_errored
    }

    pub fn render(&self) -> String {
        format!(
            "images:     {} in, {} out, {} dropped, {} errored\n\
             concepts:   {} detected, {} groups ({} counting-inconsistent)\n\
             re-ranking: {} candidates scored\n\
             backends:   {} calls, {} cache hits\n",
            self.images_in,
            self.images_out,
            self.images_dropped,
            self.images_errored,
            self.concepts_detected,
            self.groups_total,
            self.groups_inconsistent,
            self.candidates_scored,
            self.backend_calls,
            self.cache_hits,
        )
    }
}
