//! Packing-limit and feasibility-shrinkage calculators with their empirical
//! counterparts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::IntentDataset;
use crate::encoders::IntentHead;
use crate::error::{Error, Result};
use crate::featurizer::Featurizer;
use crate::simulator::sample_variants;
use crate::types::IntentId;
use crate::vector::{dot_f64, normalize_or_e0};

/// Below this angular separation (radians) the small-angle form applies.
pub const SMALL_ANGLE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    pub tau_int: f64,
    /// Angular radius of the intent region, radians.
    pub r_mal: f64,
    pub d_int: u32,
}

impl GeometryParams {
    /// Minimum angle between two embeddings that both evade `tau_int`.
    pub fn separation(&self) -> f64 {
        self.tau_int.acos()
    }

    pub fn small_angle(&self) -> bool {
        self.separation() < SMALL_ANGLE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackingBound {
    pub value: f64,
    pub small_angle: bool,
}

impl PackingBound {
    /// Caveat to print next to the value, if any.
    pub fn warning(&self) -> Option<&'static str> {
        (!self.small_angle).then_some("separation angle >= 0.3 rad: outside the small-angle regime")
    }
}

/// `(2 R / arccos(tau))^d`.
pub fn packing_limit(p: &GeometryParams) -> Result<PackingBound> {
    if !(p.tau_int > -1.0 && p.tau_int < 1.0) {
        return Err(Error::InvalidConfig(format!("tau_int {} outside (-1, 1)", p.tau_int)));
    }
    if !(p.r_mal > 0.0) || p.d_int == 0 {
        return Err(Error::InvalidConfig("r_mal must be positive and d_int at least 1".into()));
    }
    Ok(PackingBound {
        value: (2.0 * p.r_mal / p.separation()).powi(p.d_int as i32),
        small_angle: p.small_angle(),
    })
}

/// Uniform point in the cap of angular radius `radius` around `e_0` on the
/// unit sphere of `R^(d+1)`.
pub fn sample_cap(d: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // The polar angle has density proportional to sin^(d-1).
    let peak = radius.min(std::f64::consts::FRAC_PI_2).sin();
    let theta = loop {
        let t = rng.random_range(0.0..radius);
        if d == 1 || rng.random::<f64>() < (t.sin() / peak).powi(d as i32 - 1) {
            break t;
        }
    };
    let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    normalize_or_e0(&mut dir);
    let mut p = Vec::with_capacity(d + 1);
    p.push(theta.cos());
    p.extend(dir.iter().map(|x| x * theta.sin()));
    p
}

/// Greedy packing: draws `samples` cap points and keeps each one whose angle
/// to every kept point is at least `separation`. Returns the kept count.
pub fn greedy_cap_packing(d: usize, radius: f64, separation: f64, samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = separation.cos();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for _ in 0..samples {
        let p = sample_cap(d, radius, &mut rng);
        if kept.iter().all(|k| dot_f64(k, &p) <= limit) {
            kept.push(p);
        }
    }
    kept.len()
}

/// `(i, (1 - gamma)^-(i - 1))` for `i = 1..=i_max`.
pub fn feasibility_curve(gamma: f64, i_max: usize) -> Result<Vec<(usize, f64)>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} outside (0, 1)")));
    }
    Ok((1..=i_max).map(|i| (i, (1.0 - gamma).powi(-(i as i32 - 1)))).collect())
}

pub const MIN_VARIANTS: usize = 100;

/// Fraction of sampled fragment variants whose intent vector lies strictly
/// above `tau_int` from one blocked fragment, averaged over every fragment
/// taken as the blocked one and over every malicious intent in `dataset`.
pub fn estimate_gamma(
    head: &IntentHead,
    dataset: &IntentDataset,
    tau_int: f64,
    n_variants: usize,
    seed: u64,
) -> Result<f64> {
    if n_variants < MIN_VARIANTS {
        return Err(Error::TooFewVariants { needed: MIN_VARIANTS, got: n_variants });
    }
    let featurizer = Featurizer::new(head.dims().input)?;
    let encode = |t: &str| -> Result<Vec<f64>> { head.encode(&featurizer.featurize(t)?) };
    let mut per_intent = Vec::new();
    for intent in dataset.malicious_intents() {
        let frags = dataset.fragments_of(intent);
        if frags.is_empty() {
            continue;
        }
        let variants = sample_variants(dataset, intent, n_variants, seed ^ intent as u64)?
            .iter()
            .map(|v| encode(v))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = 0.0;
        for f in &frags {
            let zb = encode(&f.text)?;
            let hit = variants.iter().filter(|v| dot_f64(v, &zb) > tau_int).count();
            acc += hit as f64 / variants.len() as f64;
        }
        per_intent.push(acc / frags.len() as f64);
    }
    if per_intent.is_empty() {
        return Err(Error::TooFewVariants { needed: MIN_VARIANTS, got: 0 });
    }
    Ok(per_intent.iter().sum::<f64>() / per_intent.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentRadius {
    /// Largest angle (radians) from a fragment to its intent's mean direction.
    pub per_intent: Vec<(IntentId, f64)>,
    pub mean: f64,
    pub max: f64,
}

/// Angular radius of each malicious intent's fragment vectors under `head`.
pub fn intent_radius(head: &IntentHead, dataset: &IntentDataset) -> Result<IntentRadius> {
    let featurizer = Featurizer::new(head.dims().input)?;
    let mut per_intent = Vec::new();
    for intent in dataset.malicious_intents() {
        let zs = dataset
            .fragments_of(intent)
            .iter()
            .map(|f| head.encode(&featurizer.featurize(&f.text)?))
            .collect::<Result<Vec<_>>>()?;
        if zs.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; zs[0].len()];
        for z in &zs {
            mean.iter_mut().zip(z).for_each(|(m, x)| *m += x);
        }
        normalize_or_e0(&mut mean);
        let r = zs
            .iter()
            .map(|z| dot_f64(z, &mean).clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max);
        per_intent.push((intent, r));
    }
    if per_intent.is_empty() {
        return Err(Error::InvalidConfig("no malicious fragments to measure".into()));
    }
    let mean = per_intent.iter().map(|p| p.1).sum::<f64>() / per_intent.len() as f64;
    let max = per_intent.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(IntentRadius { per_intent, mean, max })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero when the residuals vanish.
    pub slope_se: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::InvalidConfig("a fit needs at least two points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("a fit needs two distinct x values".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if points.len() > 2 {
        let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit { slope, intercept, slope_se })
}
