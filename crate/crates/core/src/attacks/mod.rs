//! The adversary suite: the gradient-matching attack with a learned dummy
//! mask, success-rate grids over (k, d), the representation similarity-search
//! attack, the reconstruction-network attack, and the brute-force subset-sum
//! oracle for planted instances.

mod grad_match;
mod reprecon;
mod rss;
mod subset_sum;

pub use grad_match::{
    attack_success_rate, grad_match_attack, make_instance, AttackConfig, AttackOutcome,
    CellResult, CurvePoint, GradMatchInstance, Scenario, VictimDims, VictimModel,
};
pub use reprecon::{reprecon_attack, reprecon_train, ReconConfig, ReconNet};
pub use rss::{rss_build_index, rss_query, RssEntry, RssIndex};
pub use subset_sum::{binomial, plant_instance, subset_sum_recover, SubsetSumOutcome};
