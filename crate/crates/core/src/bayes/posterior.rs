use super::chi2::chi_square_quantile;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::numerics::{Rng, Tensor};

/// Floor applied to the layer RMS, relative to `alpha`, for all-zero layers.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Isotropic Gaussian over one layer's weights, centred on the pretrained
/// values. Biases stay at their pretrained values.
///
/// Draws are restricted to the low-density region: a proposal is kept only when
/// its squared Mahalanobis radius exceeds the chi-square quantile `r²(q)` for
/// `m` degrees of freedom, so the expected acceptance rate is `1 − q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLayerPosterior {
    layer_name: String,
    layer_index: usize,
    mean: Vec<Tensor>,
    sigma: f64,
    dim: usize,
    epsilon_quantile: f64,
    radius2_threshold: f64,
}

/// One accepted draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDraw {
    pub params: Vec<Tensor>,
    /// Squared Mahalanobis radius of the accepted draw.
    pub radius2: f64,
    /// Proposals consumed, including the accepted one.
    pub attempts: usize,
}

impl GaussianLayerPosterior {
    pub fn new(
        layer_name: &str,
        layer_index: usize,
        mean: Vec<Tensor>,
        sigma: f64,
        epsilon_quantile: f64,
    ) -> Result<Self> {
        let dim: usize = mean.iter().map(Tensor::len).sum();
        if dim == 0 {
            return Err(Error::invalid(format!("layer `{layer_name}` has no parameters")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let radius2_threshold = chi_square_quantile(dim, epsilon_quantile)?;
        Ok(Self {
            layer_name: layer_name.to_owned(),
            layer_index,
            mean,
            sigma,
            dim,
            epsilon_quantile,
            radius2_threshold,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn mean(&self) -> &[Tensor] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon_quantile(&self) -> f64 {
        self.epsilon_quantile
    }

    pub fn radius2_threshold(&self) -> f64 {
        self.radius2_threshold
    }

    /// Same posterior with a different width.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(&self.layer_name, self.layer_index, self.mean.clone(), sigma, self.epsilon_quantile)
    }

    /// Default rejection cap: `max(100, ceil(50 / (1 − q)))`.
    pub fn default_max_attempts(&self) -> usize {
        // The slack keeps representation error (50 / 0.1 = 500.00000000000006)
        // from bumping exact quotients to the next integer.
        100.max((50.0 / (1.0 - self.epsilon_quantile) - 1e-9).ceil() as usize)
    }

    /// `Σ ((θ_i − μ_i) / σ)²` over every parameter.
    pub fn mahalanobis2(&self, params: &[Tensor]) -> f64 {
        self.mean
            .iter()
            .zip(params)
            .flat_map(|(m, p)| m.data().iter().zip(p.data()))
            .map(|(m, p)| {
                let z = (p - m) / self.sigma;
                z * z
            })
            .sum()
    }

    /// Acceptance predicate; `q = 0` disables the constraint.
    pub fn accepts(&self, radius2: f64) -> bool {
        self.epsilon_quantile == 0.0 || radius2 > self.radius2_threshold
    }

    /// One unconstrained proposal from `N(μ, σ²I)` and its squared radius.
    pub fn propose(&self, rng: &mut Rng) -> (Vec<Tensor>, f64) {
        let params: Vec<Tensor> = self
            .mean
            .iter()
            .map(|m| m.map(|mu| mu + self.sigma * rng.standard_normal()))
            .collect();
        let r2 = self.mahalanobis2(&params);
        (params, r2)
    }

    /// Rejection-samples until a proposal lands in the accepted region.
    pub fn sample(&self, rng: &mut Rng, max_attempts: usize) -> Result<LayerDraw> {
        for attempt in 1..=max_attempts {
            let (params, radius2) = self.propose(rng);
            if self.accepts(radius2) {
                if params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                    return Err(Error::NonFinite("weight sampling"));
                }
                return Ok(LayerDraw { params, radius2, attempts: attempt });
            }
        }
        Err(Error::SamplerExhausted { layer: self.layer_name.clone(), attempts: max_attempts })
    }
}

/// Free-function form of [`GaussianLayerPosterior::sample`].
pub fn sample_layer_weights(post: &GaussianLayerPosterior, rng: &mut Rng, max_attempts: usize) -> Result<LayerDraw> {
    post.sample(rng, max_attempts)
}

/// Posteriors for the named layers: mean = pretrained weight tensors,
/// `σ = alpha · RMS`, floored at `alpha · 1e-6`.
pub fn build_posteriors(
    model: &Model,
    selection: &[String],
    alpha: f64,
    epsilon_quantile: f64,
) -> Result<Vec<GaussianLayerPosterior>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..1.0).contains(&epsilon_quantile) {
        return Err(Error::Config(format!("epsilon_quantile must lie in [0, 1), got {epsilon_quantile}")));
    }
    selection
        .iter()
        .map(|name| {
            let idx = model
                .layer_index(name)
                .ok_or_else(|| Error::Config(format!("layer `{name}` not found")))?;
            let layer = &model.layers()[idx];
            let mean: Vec<Tensor> = layer.weights().to_vec();
            let n: usize = mean.iter().map(Tensor::len).sum();
            if n == 0 {
                return Err(Error::invalid(format!("layer `{name}` carries no parameters")));
            }
            let ss: f64 = mean.iter().flat_map(|t| t.data()).map(|v| v * v).sum();
            let rms = (ss / n as f64).sqrt();
            let sigma = alpha * if rms > 0.0 { rms } else { SIGMA_FLOOR };
            GaussianLayerPosterior::new(name, idx, mean, sigma, epsilon_quantile)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, Model};

    fn single(weights: Vec<f64>, bias: Vec<f64>) -> Model {
        let n = weights.len();
        let fc = LayerSpec::linear("fc", Tensor::matrix(1, n, weights).unwrap(), Tensor::vector(bias).unwrap()).unwrap();
        Model::new(vec![fc], 0, 1, false).unwrap()
    }

    #[test]
    fn sigma_from_rms() {
        let m = single(vec![1.0, -2.0], vec![7.0]);
        let p = build_posteriors(&m, &["fc".into()], 0.1, 0.05).unwrap();
        assert_eq!(p[0].dim(), 2);
        assert!((p[0].sigma() - 0.158_114).abs() < 1e-6);
        assert!((p[0].sigma() - 0.1 * (2.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(p[0].mean().len(), 1);
        assert_eq!(p[0].mean()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_layer_uses_floor() {
        let m = single(vec![0.0, 0.0], vec![0.0]);
        let p = build_posteriors(&m, &["fc".into()], 0.1, 0.0).unwrap();
        assert_eq!(p[0].sigma(), 0.1 * SIGMA_FLOOR);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let m = single(vec![1.0], vec![0.0]);
        assert!(build_posteriors(&m, &["fc".into()], 0.0, 0.05).is_err());
        assert!(build_posteriors(&m, &["fc".into()], 0.1, 1.0).is_err());
        assert!(build_posteriors(&m, &["nope".into()], 0.1, 0.05).is_err());
    }

    #[test]
    fn exhaustion_is_reported() {
        let m = single(vec![1.0], vec![0.5]);
        let p = build_posteriors(&m, &["fc".into()], 0.1, 0.999_999).unwrap();
        let mut rng = Rng::new(0);
        let err = p[0].sample(&mut rng, 3).unwrap_err();
        assert!(matches!(err, Error::SamplerExhausted { attempts: 3, .. }));
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn default_cap() {
        let m = single(vec![1.0], vec![0.5]);
        let cap = |q| build_posteriors(&m, &["fc".into()], 0.1, q).unwrap()[0].default_max_attempts();
        assert_eq!(cap(0.05), 100);
        assert_eq!(cap(0.9), 500);
    }

    #[test]
    fn accepted_draws_lie_outside_the_threshold() {
        let m = single(vec![0.3; 9], vec![0.1]);
        let p = &build_posteriors(&m, &["fc".into()], 0.05, 0.5).unwrap()[0];
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let d = p.sample(&mut rng, 1000).unwrap();
            assert!(d.radius2 > p.radius2_threshold());
            assert_eq!(p.mahalanobis2(&d.params), d.radius2);
        }
    }
}
