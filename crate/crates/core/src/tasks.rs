//! Synthetic paired restoration datasets and evaluation metrics.
//!
//! Generators are bit-reproducible from their spec: sample `i` draws from the
//! ChaCha substream with stream-id `i`, so regeneration and parallel
//! generation agree exactly.
//!
//! Fixed geometry constants (documented so reported numbers are stable):
//! - two moons: unit-moon construction scaled by 0.3, point jitter std 0.05;
//! - rings: radii 0.25 and 0.5, jitter std 0.05;
//! - tiny images: sums of two random Gaussian blobs on an `s x s` grid,
//!   normalized to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};

/// Scale applied to the unit two-moons construction.
pub const MOON_SCALE: f64 = 0.3;
/// Gaussian jitter applied to every generated point-cloud sample.
pub const POINT_JITTER: f64 = 0.05;
/// Ring radii for the two-rings task.
pub const RING_RADII: (f64, f64) = (0.25, 0.5);
/// PSNR peak value; data is treated as living in `[0, 1]`.
pub const PSNR_PEAK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Moons2d,
    Rings2d,
    Tinyimage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    GaussNoise,
    BlurDownsample,
    Mask,
}

/// Degradation parameters; only the field relevant to the chosen kind is
/// consulted.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationParams {
    #[serde(default)]
    pub noise_sigma: f64,
    /// Odd box width for the blur; 1 is the identity blur.
    #[serde(default = "default_blur_width")]
    pub blur_width: usize,
    #[serde(default)]
    pub mask_fraction: f64,
}

fn default_blur_width() -> usize {
    3
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            blur_width: 3,
            mask_fraction: 0.0,
        }
    }
}

/// Full description of a paired dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_samples: usize,
    /// State dimension: 2 for point tasks, side*side for tiny images.
    pub dim: usize,
    pub degradation: Degradation,
    #[serde(default)]
    pub degradation_params: DegradationParams,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        match self.kind {
            TaskKind::Moons2d | TaskKind::Rings2d => {
                if self.dim != 2 {
                    return Err(Error::Config(format!(
                        "point tasks have dim 2, got {}",
                        self.dim
                    )));
                }
            }
            TaskKind::Tinyimage => {
                let side = (self.dim as f64).sqrt().round() as usize;
                if side * side != self.dim || !(side == 8 || side == 16) {
                    return Err(Error::Config(format!(
                        "tinyimage dim must be 64 or 256, got {}",
                        self.dim
                    )));
                }
            }
        }
        let p = &self.degradation_params;
        if p.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&p.mask_fraction) {
            return Err(Error::Config("mask_fraction must be in [0, 1)".into()));
        }
        if p.blur_width == 0 || p.blur_width.is_multiple_of(2) {
            return Err(Error::Config("blur_width must be odd and >= 1".into()));
        }
        Ok(())
    }
}

/// Paired clean/degraded samples, regenerable bit-exactly from the spec.
#[derive(Debug, Clone)]
pub struct PairedSet {
    pub clean: Vec<Tensor>,
    pub degraded: Vec<Tensor>,
    pub spec: TaskSpec,
}

impl PairedSet {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

/// Generates the paired dataset described by the spec.
pub fn gen_pairs(spec: &TaskSpec) -> Result<PairedSet> {
    spec.validate()?;
    let mut clean = Vec::with_capacity(spec.n_samples);
    let mut degraded = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut rng = SeededRng::substream(spec.seed, i as u64);
        let x0 = gen_clean(spec, &mut rng);
        let y = degrade(&x0, spec.degradation, &spec.degradation_params, &mut rng)?;
        clean.push(x0);
        degraded.push(y);
    }
    Ok(PairedSet {
        clean,
        degraded,
        spec: spec.clone(),
    })
}

fn gen_clean(spec: &TaskSpec, rng: &mut SeededRng) -> Tensor {
    match spec.kind {
        TaskKind::Moons2d => {
            let theta = rng.uniform_in(0.0, std::f64::consts::PI);
            let which = rng.below(2);
            let (mut x, mut y) = if which == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            x = x * MOON_SCALE + POINT_JITTER * rng.normal();
            y = y * MOON_SCALE + POINT_JITTER * rng.normal();
            Tensor::from_slice(&[x, y])
        }
        TaskKind::Rings2d => {
            let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
            let r = if rng.below(2) == 0 {
                RING_RADII.0
            } else {
                RING_RADII.1
            };
            let x = r * theta.cos() + POINT_JITTER * rng.normal();
            let y = r * theta.sin() + POINT_JITTER * rng.normal();
            Tensor::from_slice(&[x, y])
        }
        TaskKind::Tinyimage => {
            let side = (spec.dim as f64).sqrt().round() as usize;
            let mut img = vec![0.0f64; spec.dim];
            for _ in 0..2 {
                let cx = rng.uniform_in(0.0, side as f64 - 1.0);
                let cy = rng.uniform_in(0.0, side as f64 - 1.0);
                let w = rng.uniform_in(0.8, side as f64 / 3.0);
                let amp = rng.uniform_in(0.4, 1.0);
                for r in 0..side {
                    for c in 0..side {
                        let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                        img[r * side + c] += amp * (-d2 / (2.0 * w * w)).exp();
                    }
                }
            }
            let max = img.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
            for v in &mut img {
                *v /= max;
            }
            Tensor::from_slice(&img)
        }
    }
}

/// Applies the named degradation. The output always has the input's shape.
pub fn degrade(
    x0: &Tensor,
    kind: Degradation,
    params: &DegradationParams,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    match kind {
        Degradation::GaussNoise => {
            if params.noise_sigma < 0.0 {
                return Err(Error::Config("noise_sigma must be >= 0".into()));
            }
            if params.noise_sigma == 0.0 {
                return Ok(x0.clone());
            }
            let noise = rng.normal_tensor(x0.len());
            Ok(x0.affine(1.0, &noise, params.noise_sigma))
        }
        Degradation::BlurDownsample => {
            let side = (x0.len() as f64).sqrt().round() as usize;
            if side * side != x0.len() || side < 2 {
                return Err(Error::Config(
                    "blur_downsample needs a square image of side >= 2".into(),
                ));
            }
            if params.blur_width == 0 || params.blur_width.is_multiple_of(2) {
                return Err(Error::Config("blur_width must be odd and >= 1".into()));
            }
            let blurred = box_blur(x0.data(), side, params.blur_width);
            Ok(Tensor::new(
                vec![x0.len()],
                decimate_upsample(&blurred, side, 2),
            )?)
        }
        Degradation::Mask => {
            if !(0.0..1.0).contains(&params.mask_fraction) {
                return Err(Error::Config("mask_fraction must be in [0, 1)".into()));
            }
            let n = x0.len();
            let masked = (params.mask_fraction * n as f64).round() as usize;
            if masked == 0 {
                return Ok(x0.clone());
            }
            let start = rng.below(n);
            let mut data = x0.data().to_vec();
            for k in 0..masked {
                data[(start + k) % n] = 0.0;
            }
            Ok(Tensor::new(vec![n], data)?)
        }
    }
}

/// Separable box blur with replicate padding; preserves constant images.
pub fn box_blur(img: &[f64], side: usize, width: usize) -> Vec<f64> {
    assert_eq!(img.len(), side * side, "image must be square");
    assert!(width % 2 == 1 && width >= 1, "box width must be odd");
    if width == 1 {
        return img.to_vec();
    }
    let half = (width / 2) as isize;
    let clamp = |i: isize| -> usize { i.clamp(0, side as isize - 1) as usize };
    let mut rows = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for k in -half..=half {
                acc += img[r * side + clamp(c as isize + k)];
            }
            rows[r * side + c] = acc / width as f64;
        }
    }
    let mut out = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for k in -half..=half {
                acc += rows[clamp(r as isize + k) * side + c];
            }
            out[r * side + c] = acc / width as f64;
        }
    }
    out
}

/// Decimates by `factor` and re-upsamples with nearest neighbor, keeping the
/// original resolution.
fn decimate_upsample(img: &[f64], side: usize, factor: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let rr = (r / factor) * factor;
            let cc = (c / factor) * factor;
            out[r * side + c] = img[rr * side + cc];
        }
    }
    out
}

/// Restoration metrics over a set of predictions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub mse: f64,
    /// `10 log10(peak^2 / mse)`; infinite when mse is zero.
    pub psnr: f64,
    pub energy_distance: f64,
}

/// Mean squared error, PSNR (peak fixed at 1.0), and the energy distance
/// between the prediction and truth sets.
pub fn eval_metrics(pred: &[Tensor], truth: &[Tensor]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "prediction count {} does not match truth count {}",
            pred.len(),
            truth.len()
        )));
    }
    let dim = truth[0].len();
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != dim || t.len() != dim {
            return Err(Error::Input("inconsistent sample dimensions".into()));
        }
        acc += p.sub(t).sq_norm();
    }
    let mse = acc / (pred.len() * dim) as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
    };
    Ok(Metrics {
        mse,
        psnr,
        energy_distance: energy_distance(pred, truth),
    })
}

/// Pairwise-distance energy statistic `2 E||p - t|| - E||p - p'|| - E||t - t'||`
/// with V-statistic means, on up to 512 evenly spaced samples per set.
/// Symmetric, nonnegative, and exactly zero on identical sets.
pub fn energy_distance(a: &[Tensor], b: &[Tensor]) -> f64 {
    let sub_a = subsample(a, 512);
    let sub_b = subsample(b, 512);
    let cross = mean_pair_dist(&sub_a, &sub_b);
    let within_a = mean_pair_dist(&sub_a, &sub_a);
    let within_b = mean_pair_dist(&sub_b, &sub_b);
    (2.0 * cross - within_a - within_b).max(0.0)
}

fn subsample(set: &[Tensor], cap: usize) -> Vec<&Tensor> {
    if set.len() <= cap {
        return set.iter().collect();
    }
    (0..cap).map(|i| &set[i * set.len() / cap]).collect()
}

fn mean_pair_dist(a: &[&Tensor], b: &[&Tensor]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        for y in b {
            acc += x.sub(y).norm();
        }
    }
    acc / (a.len() * b.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moons_spec(n: usize, sigma: f64) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Moons2d,
            n_samples: n,
            dim: 2,
            degradation: Degradation::GaussNoise,
            degradation_params: DegradationParams {
                noise_sigma: sigma,
                ..Default::default()
            },
            seed: 7,
        }
    }

    #[test]
    fn zero_sigma_is_identity_degradation() {
        let set = gen_pairs(&moons_spec(16, 0.0)).unwrap();
        for (c, d) in set.clean.iter().zip(&set.degraded) {
            assert_eq!(c.data(), d.data());
        }
    }

    #[test]
    fn noise_second_moment_matches_chi_square() {
        let sigma = 0.3;
        let set = gen_pairs(&moons_spec(10_000, sigma)).unwrap();
        let mean_sq: f64 = set
            .clean
            .iter()
            .zip(&set.degraded)
            .map(|(c, d)| d.sub(c).sq_norm())
            .sum::<f64>()
            / set.len() as f64;
        let expect = 2.0 * sigma * sigma;
        // Var of ||n||^2 per sample is 4 sigma^4 (2 dims); 3 standard errors.
        let se = (4.0 * sigma.powi(4) / set.len() as f64).sqrt();
        assert!(
            (mean_sq - expect).abs() < 3.0 * se,
            "mean {mean_sq} vs {expect} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let a = gen_pairs(&moons_spec(64, 0.3)).unwrap();
        let b = gen_pairs(&moons_spec(64, 0.3)).unwrap();
        for (x, y) in a.clean.iter().zip(&b.clean) {
            assert_eq!(x.data(), y.data());
        }
        for (x, y) in a.degraded.iter().zip(&b.degraded) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn mask_fraction_zero_is_identity() {
        let x = Tensor::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let mut rng = SeededRng::new(1);
        let params = DegradationParams {
            mask_fraction: 0.0,
            ..Default::default()
        };
        let y = degrade(&x, Degradation::Mask, &params, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn mask_zeroes_requested_fraction() {
        let x = Tensor::from_slice(&vec![1.0; 100]);
        let mut rng = SeededRng::new(1);
        let params = DegradationParams {
            mask_fraction: 0.25,
            ..Default::default()
        };
        let y = degrade(&x, Degradation::Mask, &params, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 25);
    }

    #[test]
    fn blur_downsample_preserves_constant_images() {
        let x = Tensor::from_slice(&vec![0.7; 64]);
        let mut rng = SeededRng::new(1);
        let params = DegradationParams::default();
        let y = degrade(&x, Degradation::BlurDownsample, &params, &mut rng).unwrap();
        for v in y.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_spreads_to_plateau_under_box_blur() {
        let side = 8;
        let mut img = vec![0.0; side * side];
        img[3 * side + 4] = 1.0;
        let out = box_blur(&img, side, 3);
        for r in 0..side {
            for c in 0..side {
                let expect = if (2..=4).contains(&r) && (3..=5).contains(&c) {
                    1.0 / 9.0
                } else {
                    0.0
                };
                assert!(
                    (out[r * side + c] - expect).abs() < 1e-12,
                    "({r},{c}) = {}",
                    out[r * side + c]
                );
            }
        }
    }

    #[test]
    fn degrade_never_changes_shape() {
        let mut rng = SeededRng::new(9);
        let img = Tensor::from_slice(&(0..64).map(|i| i as f64 / 64.0).collect::<Vec<_>>());
        for kind in [
            Degradation::GaussNoise,
            Degradation::BlurDownsample,
            Degradation::Mask,
        ] {
            let params = DegradationParams {
                noise_sigma: 0.1,
                blur_width: 3,
                mask_fraction: 0.3,
            };
            let y = degrade(&img, kind, &params, &mut rng).unwrap();
            assert_eq!(y.shape(), img.shape());
        }
    }

    #[test]
    fn metrics_on_identical_sets() {
        let set: Vec<Tensor> = (0..10)
            .map(|i| Tensor::from_slice(&[i as f64, -(i as f64)]))
            .collect();
        let m = eval_metrics(&set, &set).unwrap();
        assert_eq!(m.mse, 0.0);
        assert!(m.psnr.is_infinite());
        assert!(m.energy_distance <= 1e-12);
    }

    #[test]
    fn psnr_logarithm_identity() {
        let truth = vec![Tensor::from_slice(&[0.0])];
        let pred = vec![Tensor::from_slice(&[0.1])];
        let m = eval_metrics(&pred, &truth).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-15);
        assert!((m.psnr - 20.0).abs() < 1e-9);
    }

    #[test]
    fn energy_distance_separates_shifted_distributions() {
        let mut rng = SeededRng::new(3);
        let a: Vec<Tensor> = (0..2000).map(|_| rng.normal_tensor(1)).collect();
        let b: Vec<Tensor> = (0..2000).map(|_| rng.normal_tensor(1)).collect();
        let shifted: Vec<Tensor> = (0..2000)
            .map(|_| {
                let g = rng.normal_tensor(1);
                Tensor::from_slice(&[g.data()[0] + 3.0])
            })
            .collect();
        let same = energy_distance(&a, &b);
        let far = energy_distance(&a, &shifted);
        assert!(far > 10.0 * same, "far {far} vs same {same}");
        // Symmetry.
        let rev = energy_distance(&shifted, &a);
        assert!((far - rev).abs() < 1e-12);
    }

    #[test]
    fn tinyimage_values_in_unit_range() {
        let spec = TaskSpec {
            kind: TaskKind::Tinyimage,
            n_samples: 8,
            dim: 64,
            degradation: Degradation::GaussNoise,
            degradation_params: DegradationParams::default(),
            seed: 2,
        };
        let set = gen_pairs(&spec).unwrap();
        for img in &set.clean {
            for &v in img.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = moons_spec(0, 0.1);
        assert!(s.validate().is_err());
        s = moons_spec(4, 0.1);
        s.dim = 3;
        assert!(s.validate().is_err());
        s = moons_spec(4, -0.1);
        assert!(s.validate().is_err());
    }
}
