//! Regression heads: feed-forward network, gradient-boosted trees, partial
//! least squares, and random hyper-parameter search.

mod gbt;
mod mlp;
mod pls;
mod search;

pub use gbt::{gbt_fit, gbt_predict, GbtModel, GbtSpec, Node, Tree};
pub use mlp::{mlp_fit, mlp_from_network, mlp_grad_check, mlp_predict, MlpModel, MlpSpec};
pub use pls::{pls_choose_components, pls_fit, pls_predict, ComponentChoice, PlsModel};
pub use search::{
    apply_params, cv_mse, random_search, write_search_table, ParamDist, ParamSet, SearchResult, SearchRow,
    SearchSpec,
};
