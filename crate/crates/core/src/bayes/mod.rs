//! Post-hoc Bayesian layers: layer selection, Gaussian weight posteriors
//! centred on pretrained weights, low-density rejection sampling and
//! Monte-Carlo ensemble prediction.

mod chi2;
mod ensemble;
mod posterior;
mod selection;

pub use chi2::{chi_square_cdf, chi_square_quantile};
pub use ensemble::{draw_member, mc_predict, predictive_mean, Ensemble, EnsembleConfig, PredictiveSummary};
pub use posterior::{build_posteriors, sample_layer_weights, GaussianLayerPosterior, LayerDraw, SIGMA_FLOOR};
pub use selection::{select_layers, LayerSelection, SelectionPolicy};
