use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Size of the speculation search space for a corpus of `k` documents,
/// `n` strategies and buffer size `b`. Large counts are reported as log10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// `ceil(k / b) * n`: sandboxes opened when speculating at every buffer.
    pub sandboxes_total: u64,
    /// `(k / b) log10 n`: one strategy choice per buffer, all combinations.
    pub full_option_paths_log10: f64,
    /// `log10 k!`: insertion orders an incremental algorithm could see.
    pub incremental_orders_log10: f64,
    /// `(k - 2) log10 k`: labelled trees on `k` nodes (Cayley).
    pub all_trees_log10: f64,
}

pub fn search_space_accounting(k: u64, n: u64, b: u64) -> SearchSpace {
    let b = b.max(1);
    let kf = k as f64;
    SearchSpace {
        sandboxes_total: k.div_ceil(b) * n,
        full_option_paths_log10: kf / b as f64 * (n as f64).log10(),
        incremental_orders_log10: ln_gamma(kf + 1.0) / std::f64::consts::LN_10,
        all_trees_log10: if k == 0 { 0.0 } else { (kf - 2.0) * kf.log10() },
    }
}
