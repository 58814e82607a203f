//! Laplace kernels: Cartesian Taylor expansion operators and direct P2P.

mod expansion;
pub mod multi_index;
mod p2p;
mod stats;

pub use expansion::{
    l2l, l2l_accumulate, l2p, laplace_derivatives, m2l, m2m, m2m_accumulate, m2p, p2m, Expansion,
    Scratch,
};
pub(crate) use expansion::{check_order, l2l_into, l2p_into, m2l_into, m2l_mutual, m2m_into, m2p_into, p2m_into};
pub use multi_index::{term_count, MAX_ORDER};
pub(crate) use p2p::views;
pub use p2p::{
    direct, direct_self, p2p, p2p_mutual, p2p_self, p2p_self_mutual, rsqrt_approx, P2pMode, Sources,
    Targets, FLOPS_PER_PAIR, LANES,
};
pub use stats::KernelStats;
