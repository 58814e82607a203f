use serde::{Deserialize, Serialize};

use super::p2p::FLOPS_PER_PAIR;

/// Kernel call counters and accumulated kernel time (seconds, summed over threads).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub p2p_calls: u64,
    pub p2p_pairs: u64,
    pub p2p_flops: u64,
    pub coincident_pairs: u64,
    pub p2m_calls: u64,
    pub m2m_calls: u64,
    pub m2l_calls: u64,
    pub m2p_calls: u64,
    pub l2l_calls: u64,
    pub l2p_calls: u64,
    pub p2p_time: f64,
    pub m2l_time: f64,
    pub m2p_time: f64,
}

impl KernelStats {
    pub(crate) fn record_p2p(&mut self, pairs: u64, coincident: u64) {
        self.p2p_calls += 1;
        self.p2p_pairs += pairs;
        self.p2p_flops += FLOPS_PER_PAIR * pairs;
        self.coincident_pairs += coincident;
    }

    pub fn merge(&mut self, o: &KernelStats) {
        self.p2p_calls += o.p2p_calls;
        self.p2p_pairs += o.p2p_pairs;
        self.p2p_flops += o.p2p_flops;
        self.coincident_pairs += o.coincident_pairs;
        self.p2m_calls += o.p2m_calls;
        self.m2m_calls += o.m2m_calls;
        self.m2l_calls += o.m2l_calls;
        self.m2p_calls += o.m2p_calls;
        self.l2l_calls += o.l2l_calls;
        self.l2p_calls += o.l2p_calls;
        self.p2p_time += o.p2p_time;
        self.m2l_time += o.m2l_time;
        self.m2p_time += o.m2p_time;
    }

    /// Counters only, for comparisons that must ignore timing.
    pub fn counts(&self) -> [u64; 10] {
        [
            self.p2p_calls,
            self.p2p_pairs,
            self.p2p_flops,
            self.coincident_pairs,
            self.p2m_calls,
            self.m2m_calls,
            self.m2l_calls,
            self.m2p_calls,
            self.l2l_calls,
            self.l2p_calls,
        ]
    }

    pub fn kernel_time(&self) -> f64 {
        self.p2p_time + self.m2l_time + self.m2p_time
    }
}
