//! Synthetic cover source.
//!
//! An image is reduced to what the embedding simulator consumes: one
//! embedding cost and one residual variance per coefficient. Costs and
//! variances are log-normal; each image also draws a uniform offset on the
//! log-cost scale so some images are cheaper to embed in than others.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverParams {
    pub n_coeffs: usize,
    pub cost_log_mean: f64,
    pub cost_log_sd: f64,
    pub var_log_mean: f64,
    pub var_log_sd: f64,
    /// Half-width of the per-image uniform offset on the log-cost scale.
    pub heterogeneity: f64,
}

impl Default for CoverParams {
    fn default() -> Self {
        CoverParams {
            n_coeffs: 4096,
            cost_log_mean: 0.0,
            cost_log_sd: 1.0,
            var_log_mean: 0.0,
            var_log_sd: 0.5,
            heterogeneity: 0.5,
        }
    }
}

impl CoverParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_coeffs == 0 {
            return Err(Error::param("n_coeffs must be at least 1"));
        }
        let finite = [
            self.cost_log_mean,
            self.cost_log_sd,
            self.var_log_mean,
            self.var_log_sd,
            self.heterogeneity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("cover parameters must be finite"));
        }
        if self.cost_log_sd < 0.0 || self.var_log_sd < 0.0 {
            return Err(Error::param("log-normal spreads must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(Error::param("heterogeneity must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageModel {
    /// Index of the image within its bag.
    pub id: usize,
    /// The seed the image was generated from; identifies the image to the
    /// detector model across payloads.
    pub key: u64,
    pub costs: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ImageModel {
    /// Builds an image from explicit maps, checking the model invariants.
    pub fn from_maps(id: usize, key: u64, costs: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::param("an image needs at least one coefficient"));
        }
        if costs.len() != variances.len() {
            return Err(Error::param(format!(
                "cost map has {} entries but variance map has {}",
                costs.len(),
                variances.len()
            )));
        }
        if costs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::param("costs must be finite and non-negative"));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::param("variances must be finite and positive"));
        }
        Ok(ImageModel {
            id,
            key,
            costs,
            variances,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.costs.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: u64,
    pub images: Vec<ImageModel>,
}

/// Generates one image; deterministic in `(seed, id, params)`.
pub fn gen_image(seed: u64, id: usize, params: &CoverParams) -> Result<ImageModel> {
    params.validate()?;
    let key = seed::derive(seed, id as u64);
    Ok(materialize(key, id, params))
}

fn materialize(key: u64, id: usize, params: &CoverParams) -> ImageModel {
    let mut rng = seed::rng(seed::derive(key, seed::TAG_IMAGE));
    let h = params.heterogeneity;
    let offset = if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
    let cost_mu = params.cost_log_mean + offset;
    let n = params.n_coeffs;
    let mut costs = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        costs.push((cost_mu + params.cost_log_sd * z).exp());
    }
    let mut variances = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        variances.push((params.var_log_mean + params.var_log_sd * z).exp());
    }
    ImageModel {
        id,
        key,
        costs,
        variances,
    }
}

/// Anything with a per-image coefficient count.
pub trait BagShape {
    fn len(&self) -> usize;
    fn n_coeffs(&self, image: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn total_coeffs(&self) -> usize {
        (0..self.len()).map(|i| self.n_coeffs(i)).sum()
    }
}

impl BagShape for Bag {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn n_coeffs(&self, image: usize) -> usize {
        self.images[image].n_coeffs()
    }
}

/// A bag whose images are identified but not yet sampled.
///
/// Strategies that only need coefficient counts work on the plan directly;
/// the cost and variance maps are drawn on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPlan {
    pub bag_id: u64,
    pub keys: Vec<u64>,
    pub params: CoverParams,
}

impl BagPlan {
    pub fn new(seed: u64, bag_id: u64, b: usize, params: &CoverParams) -> Result<Self> {
        if b < 1 {
            return Err(Error::param("bag size must be at least 1"));
        }
        params.validate()?;
        let bag_seed = seed::derive(seed, bag_id);
        let keys = (0..b)
            .map(|i| seed::derive(seed::derive(bag_seed, i as u64), i as u64))
            .collect();
        Ok(BagPlan {
            bag_id,
            keys,
            params: params.clone(),
        })
    }

    pub fn materialize(&self) -> Bag {
        Bag {
            bag_id: self.bag_id,
            images: self
                .keys
                .iter()
                .enumerate()
                .map(|(i, &k)| materialize(k, i, &self.params))
                .collect(),
        }
    }
}

impl BagShape for BagPlan {
    fn len(&self) -> usize {
        self.keys.len()
    }

    fn n_coeffs(&self, _image: usize) -> usize {
        self.params.n_coeffs
    }
}

/// Generates a bag of `b` images with ids `0..b`.
///
/// Image `i` is drawn from a child seed mixed from `(seed, bag_id, i)`, so
/// any image can be regenerated without touching its siblings.
pub fn gen_bag(seed: u64, bag_id: u64, b: usize, params: &CoverParams) -> Result<Bag> {
    Ok(BagPlan::new(seed, bag_id, b, params)?.materialize())
}
