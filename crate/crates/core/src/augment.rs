//! Stochastic view generation for contrastive pairs.
//!
//! A pipeline is an ordered list of transforms, each applied independently
//! with its own probability. Vector data gets additive jitter, coordinate
//! masking and global scaling; image data gets crops, flips, brightness
//! changes and blur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Geometry;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    /// Adds `N(0, sigma²)` noise to every coordinate.
    GaussianJitter {
        sigma: f64,
    },
    /// Zeroes each coordinate independently with probability `fraction`,
    /// sparing one at random if every coordinate was drawn.
    CoordinateMask {
        fraction: f64,
    },
    /// Multiplies the whole vector by a factor drawn from `[min, max]`.
    ScaleJitter {
        min: f64,
        max: f64,
    },
    /// Crops a random region covering at least `min_area` of the image and
    /// resizes it back to full size.
    ResizedCrop {
        min_area: f64,
    },
    HorizontalFlip,
    /// Multiplies pixel values by a factor in `[1 - strength, 1 + strength]`,
    /// clamped to `[0, 1]`.
    BrightnessJitter {
        strength: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    Identity,
}

impl TransformSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::GaussianJitter { .. } => "gaussian_jitter",
            TransformSpec::CoordinateMask { .. } => "coordinate_mask",
            TransformSpec::ScaleJitter { .. } => "scale_jitter",
            TransformSpec::ResizedCrop { .. } => "resized_crop",
            TransformSpec::HorizontalFlip => "horizontal_flip",
            TransformSpec::BrightnessJitter { .. } => "brightness_jitter",
            TransformSpec::GaussianBlur { .. } => "gaussian_blur",
            TransformSpec::Identity => "identity",
        }
    }

    pub fn requires_image(&self) -> bool {
        matches!(
            self,
            TransformSpec::ResizedCrop { .. }
                | TransformSpec::HorizontalFlip
                | TransformSpec::BrightnessJitter { .. }
                | TransformSpec::GaussianBlur { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, what: &str| Err(Error::invalid(field, what));
        match *self {
            TransformSpec::GaussianJitter { sigma } | TransformSpec::GaussianBlur { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return bad("sigma", "must be positive");
                }
            }
            TransformSpec::CoordinateMask { fraction } => {
                if !(0.0..1.0).contains(&fraction) {
                    return bad("fraction", "must lie in [0, 1)");
                }
            }
            TransformSpec::ScaleJitter { min, max } => {
                if !(min > 0.0 && min <= max && max.is_finite()) {
                    return bad("min", "need 0 < min <= max");
                }
            }
            TransformSpec::ResizedCrop { min_area } => {
                if !(min_area > 0.0 && min_area <= 1.0) {
                    return bad("min_area", "must lie in (0, 1]");
                }
            }
            TransformSpec::BrightnessJitter { strength } => {
                if !(0.0..1.0).contains(&strength) {
                    return bad("strength", "must lie in [0, 1)");
                }
            }
            TransformSpec::HorizontalFlip | TransformSpec::Identity => {}
        }
        Ok(())
    }

    fn apply<R: Rng>(&self, x: &mut [f64], geometry: Geometry, rng: &mut R) {
        match *self {
            TransformSpec::GaussianJitter { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                x.iter_mut().for_each(|v| *v += normal.sample(rng));
            }
            TransformSpec::CoordinateMask { fraction } => {
                let masked: Vec<bool> = x.iter().map(|_| rng.random::<f64>() < fraction).collect();
                // at least one coordinate always survives
                let keep = masked
                    .iter()
                    .all(|&m| m)
                    .then(|| rng.random_range(0..x.len()));
                for (i, (v, m)) in x.iter_mut().zip(masked).enumerate() {
                    if m && keep != Some(i) {
                        *v = 0.0;
                    }
                }
            }
            TransformSpec::ScaleJitter { min, max } => {
                let k = if min == max {
                    min
                } else {
                    rng.random_range(min..=max)
                };
                x.iter_mut().for_each(|v| *v *= k);
            }
            TransformSpec::ResizedCrop { min_area } => {
                if let Geometry::Image { height, width } = geometry {
                    resized_crop(x, height, width, min_area, rng);
                }
            }
            TransformSpec::HorizontalFlip => {
                if let Geometry::Image { width, .. } = geometry {
                    x.chunks_mut(width).for_each(|row| row.reverse());
                }
            }
            TransformSpec::BrightnessJitter { strength } => {
                let k = 1.0 + rng.random_range(-strength..=strength);
                x.iter_mut().for_each(|v| *v = (*v * k).clamp(0.0, 1.0));
            }
            TransformSpec::GaussianBlur { sigma } => {
                if let Geometry::Image { height, width } = geometry {
                    gaussian_blur(x, height, width, sigma);
                }
            }
            TransformSpec::Identity => {}
        }
    }
}

/// Flat, serializable form of a pipeline step. Only the parameters relevant
/// to `kind` may be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    kind: String,
    probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strength: Option<f64>,
}

/// A transform paired with the probability that it fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep", into = "RawStep")]
pub struct TransformStep {
    pub spec: TransformSpec,
    pub probability: f64,
}

impl TransformStep {
    pub fn new(spec: TransformSpec, probability: f64) -> Self {
        Self { spec, probability }
    }
}

impl TryFrom<RawStep> for TransformStep {
    type Error = String;

    fn try_from(raw: RawStep) -> std::result::Result<Self, String> {
        let mut used = Vec::new();
        let mut take = |name: &'static str, v: Option<f64>| {
            used.push(name);
            v.ok_or_else(|| format!("transform `{}` needs `{name}`", raw.kind))
        };
        let spec = match raw.kind.as_str() {
            "gaussian_jitter" => TransformSpec::GaussianJitter {
                sigma: take("sigma", raw.sigma)?,
            },
            "coordinate_mask" => TransformSpec::CoordinateMask {
                fraction: take("fraction", raw.fraction)?,
            },
            "scale_jitter" => TransformSpec::ScaleJitter {
                min: take("min", raw.min)?,
                max: take("max", raw.max)?,
            },
            "resized_crop" => TransformSpec::ResizedCrop {
                min_area: take("min_area", raw.min_area)?,
            },
            "horizontal_flip" => TransformSpec::HorizontalFlip,
            "brightness_jitter" => TransformSpec::BrightnessJitter {
                strength: take("strength", raw.strength)?,
            },
            "gaussian_blur" => TransformSpec::GaussianBlur {
                sigma: take("sigma", raw.sigma)?,
            },
            "identity" => TransformSpec::Identity,
            other => return Err(format!("unknown transform kind `{other}`")),
        };
        let given = [
            ("sigma", raw.sigma),
            ("fraction", raw.fraction),
            ("min", raw.min),
            ("max", raw.max),
            ("min_area", raw.min_area),
            ("strength", raw.strength),
        ];
        if let Some((name, _)) = given.iter().find(|(n, v)| v.is_some() && !used.contains(n)) {
            return Err(format!("transform `{}` does not take `{name}`", raw.kind));
        }
        Ok(TransformStep {
            spec,
            probability: raw.probability,
        })
    }
}

impl From<TransformStep> for RawStep {
    fn from(step: TransformStep) -> Self {
        let mut raw = RawStep {
            kind: step.spec.name().to_string(),
            probability: step.probability,
            sigma: None,
            fraction: None,
            min: None,
            max: None,
            min_area: None,
            strength: None,
        };
        match step.spec {
            TransformSpec::GaussianJitter { sigma } | TransformSpec::GaussianBlur { sigma } => {
                raw.sigma = Some(sigma)
            }
            TransformSpec::CoordinateMask { fraction } => raw.fraction = Some(fraction),
            TransformSpec::ScaleJitter { min, max } => {
                raw.min = Some(min);
                raw.max = Some(max);
            }
            TransformSpec::ResizedCrop { min_area } => raw.min_area = Some(min_area),
            TransformSpec::BrightnessJitter { strength } => raw.strength = Some(strength),
            TransformSpec::HorizontalFlip | TransformSpec::Identity => {}
        }
        raw
    }
}

/// Which inputs feed the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// `(T^a(x), T^b(x))`
    #[default]
    AugmentBoth,
    /// `(T^a(x), x)`
    RawSecond,
    /// `(x, x)`
    RawBoth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugmentationPipeline {
    pub steps: Vec<TransformStep>,
}

impl AugmentationPipeline {
    pub fn new(steps: Vec<TransformStep>) -> Self {
        Self { steps }
    }

    /// Default transform family for the given geometry. Apply probabilities
    /// are tunable defaults, not fixed values.
    pub fn default_for(geometry: Geometry) -> Self {
        use TransformSpec::*;
        let steps = match geometry {
            Geometry::Vector(_) => vec![
                TransformStep::new(GaussianJitter { sigma: 0.2 }, 0.8),
                TransformStep::new(CoordinateMask { fraction: 0.2 }, 0.5),
                TransformStep::new(ScaleJitter { min: 0.8, max: 1.2 }, 0.5),
            ],
            // blur is left out for small images
            Geometry::Image { .. } => vec![
                TransformStep::new(ResizedCrop { min_area: 0.2 }, 1.0),
                TransformStep::new(BrightnessJitter { strength: 0.4 }, 0.8),
                TransformStep::new(Identity, 0.2),
                TransformStep::new(HorizontalFlip, 0.5),
            ],
        };
        Self { steps }
    }

    pub fn validate(&self, geometry: Geometry) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if !(0.0..=1.0).contains(&step.probability) {
                return Err(Error::invalid(
                    format!("augmentation[{i}].probability"),
                    format!("{} lies outside [0, 1]", step.probability),
                ));
            }
            step.spec.validate().map_err(|e| match e {
                Error::InvalidField { field, message } => Error::InvalidField {
                    field: format!("augmentation[{i}].{field}"),
                    message: format!("{}: {message}", step.spec.name()),
                },
                other => other,
            })?;
            if step.spec.requires_image() && !matches!(geometry, Geometry::Image { .. }) {
                return Err(Error::invalid(
                    format!("augmentation[{i}].kind"),
                    format!(
                        "{} needs image data, dataset is a plain vector",
                        step.spec.name()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// One augmented view of `x`.
    pub fn sample_view<R: Rng>(
        &self,
        x: &[f64],
        geometry: Geometry,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.sample_view_traced(x, geometry, rng).map(|(v, _)| v)
    }

    /// Like [`sample_view`](Self::sample_view), also reporting which steps
    /// fired.
    pub fn sample_view_traced<R: Rng>(
        &self,
        x: &[f64],
        geometry: Geometry,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<bool>)> {
        self.validate(geometry)?;
        if x.len() != geometry.dim() {
            return Err(Error::Dimension {
                op: "sample_view",
                left: (1, x.len()),
                right: (1, geometry.dim()),
            });
        }
        let mut out = x.to_vec();
        let mut fired = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let hit = step.probability > 0.0 && rng.random::<f64>() < step.probability;
            if hit {
                step.spec.apply(&mut out, geometry, rng);
            }
            fired.push(hit);
        }
        Ok((out, fired))
    }

    /// Two views of `x` according to `mode`.
    pub fn make_pair<R: Rng>(
        &self,
        x: &[f64],
        geometry: Geometry,
        mode: PairMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match mode {
            PairMode::AugmentBoth => {
                let a = self.sample_view(x, geometry, rng)?;
                let b = self.sample_view(x, geometry, rng)?;
                Ok((a, b))
            }
            PairMode::RawSecond => Ok((self.sample_view(x, geometry, rng)?, x.to_vec())),
            PairMode::RawBoth => {
                self.validate(geometry)?;
                Ok((x.to_vec(), x.to_vec()))
            }
        }
    }

    /// Views for every row of `batch`. Row `i` draws from its own generator
    /// seeded by `keys[i]`, so the result does not depend on `exec`.
    pub fn augment_batch(
        &self,
        batch: &Matrix,
        geometry: Geometry,
        mode: PairMode,
        keys: &[u64],
        exec: Execution,
    ) -> Result<(Matrix, Matrix)> {
        if keys.len() != batch.rows() {
            return Err(Error::contract(format!(
                "{} seeds for a batch of {}",
                keys.len(),
                batch.rows()
            )));
        }
        self.validate(geometry)?;
        let pairs = exec.map(batch.rows(), |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(keys[i]);
            self.make_pair(batch.row(i), geometry, mode, &mut rng)
        });
        let d = batch.cols();
        let mut a = Vec::with_capacity(batch.len());
        let mut b = Vec::with_capacity(batch.len());
        for p in pairs {
            let (va, vb) = p?;
            a.extend(va);
            b.extend(vb);
        }
        Ok((
            Matrix::from_vec(batch.rows(), d, a)?,
            Matrix::from_vec(batch.rows(), d, b)?,
        ))
    }
}

fn resized_crop<R: Rng>(x: &mut [f64], height: usize, width: usize, min_area: f64, rng: &mut R) {
    let area = (height * width) as f64;
    let target = area * rng.random_range(min_area..=1.0);
    let log_ratio = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln());
    let ratio = log_ratio.exp();
    let cw = ((target * ratio).sqrt().round() as usize).clamp(1, width);
    let ch = ((target / ratio).sqrt().round() as usize).clamp(1, height);
    let top = rng.random_range(0..=height - ch);
    let left = rng.random_range(0..=width - cw);

    let src = x.to_vec();
    let at = |r: usize, c: usize| src[(top + r) * width + left + c];
    for r in 0..height {
        // sample the crop at pixel centres, bilinear
        let sy = ((r as f64 + 0.5) * ch as f64 / height as f64 - 0.5).clamp(0.0, (ch - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let fy = sy - y0 as f64;
        for c in 0..width {
            let sx =
                ((c as f64 + 0.5) * cw as f64 / width as f64 - 0.5).clamp(0.0, (cw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let fx = sx - x0 as f64;
            let top_row = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom_row = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            x[r * width + c] = top_row * (1.0 - fy) + bottom_row * fy;
        }
    }
}

fn gaussian_blur(x: &mut [f64], height: usize, width: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; x.len()];
    for r in 0..height {
        for c in 0..width {
            tmp[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[r * width + clamp(c as isize + k as isize - radius, width)])
                .sum();
        }
    }
    for r in 0..height {
        for c in 0..width {
            x[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as isize + k as isize - radius, height) * width + c])
                .sum();
        }
    }
}
