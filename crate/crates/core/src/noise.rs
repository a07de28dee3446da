//! Impulse-noise generators, the adaptive median detector and the plain
//! median filter.
//!
//! Random streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Uniform draws are `Rng::gen::<f64>()`. Pixels are
//! visited in row-major order. For each visited pixel one location draw
//! `u` is taken; if `u < p` the pixel is corrupted and one value draw per
//! corrupted channel follows immediately. With independent channel
//! locations the channels are visited one after another, each as a full
//! row-major pass; with common locations a single pass draws `u` once per
//! pixel and then one value per channel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AlohaError, Result};
use crate::hankel::Patch;

pub type Mask = DMatrix<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Rvin,
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLocations {
    #[default]
    Independent,
    Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Fraction of corrupted pixels.
    pub density: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
    pub channel_locations: ChannelLocations,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, density: f64, seed: u64) -> Self {
        Self {
            kind,
            density,
            d_min: 0.0,
            d_max: 1.0,
            seed,
            channel_locations: ChannelLocations::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(AlohaError::InvalidConfig(format!(
                "noise density must lie in [0, 1], got {}",
                self.density
            )));
        }
        if !(self.d_min < self.d_max) || !self.d_min.is_finite() || !self.d_max.is_finite() {
            return Err(AlohaError::InvalidConfig(format!(
                "dynamic range [{}, {}] is empty",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

/// Draws corruption sites and asks `corrupt(rng)` for each new value.
fn corrupt_image<F>(image: &[Patch], spec: &NoiseSpec, mut corrupt: F) -> Result<(Vec<Patch>, Vec<Mask>)>
where
    F: FnMut(&mut ChaCha8Rng, f64) -> Option<f64>,
{
    spec.validate()?;
    let first = image
        .first()
        .ok_or_else(|| AlohaError::EmptyInput("image has no channels".into()))?;
    let (rows, cols) = first.shape();
    if image.iter().any(|p| p.shape() != (rows, cols)) {
        return Err(AlohaError::InvalidShape("channels differ in size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = image.to_vec();
    let mut masks = vec![Mask::from_element(rows, cols, false); image.len()];
    match spec.channel_locations {
        ChannelLocations::Independent => {
            for c in 0..image.len() {
                for i in 0..rows {
                    for j in 0..cols {
                        let u: f64 = rng.gen();
                        if let Some(v) = corrupt(&mut rng, u) {
                            noisy[c][(i, j)] = v;
                            masks[c][(i, j)] = true;
                        }
                    }
                }
            }
        }
        ChannelLocations::Common => {
            for i in 0..rows {
                for j in 0..cols {
                    let u: f64 = rng.gen();
                    if u < spec.density {
                        for c in 0..image.len() {
                            let v = corrupt(&mut rng, u).expect("u below density");
                            noisy[c][(i, j)] = v;
                            masks[c][(i, j)] = true;
                        }
                    }
                }
            }
        }
    }
    Ok((noisy, masks))
}

/// Random-valued impulse noise: each site is replaced with probability `p`
/// by a uniform draw on `[d_min, d_max]`.
pub fn add_rvin(image: &[Patch], spec: &NoiseSpec) -> Result<(Vec<Patch>, Vec<Mask>)> {
    if spec.kind != NoiseKind::Rvin {
        return Err(AlohaError::InvalidConfig("add_rvin needs kind = rvin".into()));
    }
    let (p, lo, span) = (spec.density, spec.d_min, spec.d_max - spec.d_min);
    corrupt_image(image, spec, |rng, u| (u < p).then(|| lo + span * rng.gen::<f64>()))
}

/// Salt and pepper: `d_min` with probability `p/2`, `d_max` with `p/2`.
/// The location draw also picks the polarity, so no value draw is taken.
pub fn add_salt_pepper(image: &[Patch], spec: &NoiseSpec) -> Result<(Vec<Patch>, Vec<Mask>)> {
    if spec.kind != NoiseKind::SaltPepper {
        return Err(AlohaError::InvalidConfig("add_salt_pepper needs kind = salt_pepper".into()));
    }
    let (p, lo, hi) = (spec.density, spec.d_min, spec.d_max);
    if spec.channel_locations == ChannelLocations::Common {
        // one polarity per channel, drawn after the shared location draw
        return corrupt_image(image, spec, |rng, _| {
            Some(if rng.gen::<f64>() < 0.5 { lo } else { hi })
        });
    }
    corrupt_image(image, spec, |_, u| {
        if u < p / 2.0 {
            Some(lo)
        } else if u < p {
            Some(hi)
        } else {
            None
        }
    })
}

pub fn add_noise(image: &[Patch], spec: &NoiseSpec) -> Result<(Vec<Patch>, Vec<Mask>)> {
    match spec.kind {
        NoiseKind::Rvin => add_rvin(image, spec),
        NoiseKind::SaltPepper => add_salt_pepper(image, spec),
    }
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(index: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = index.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn window_values(image: &Patch, i: usize, j: usize, half: usize, buf: &mut Vec<f64>) {
    buf.clear();
    let h = half as isize;
    for di in -h..=h {
        let r = reflect(i as isize + di, image.nrows());
        for dj in -h..=h {
            buf.push(image[(r, reflect(j as isize + dj, image.ncols()))]);
        }
    }
    buf.sort_by(f64::total_cmp);
}

fn check_window(window: usize, name: &str) -> Result<()> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(AlohaError::InvalidConfig(format!(
            "{name} must be odd, got {window}"
        )));
    }
    Ok(())
}

/// Per-pixel median over a `window × window` neighborhood with mirrored
/// borders.
pub fn median_filter(image: &Patch, window: usize) -> Result<Patch> {
    check_window(window, "median window")?;
    let half = window / 2;
    let mut buf = Vec::with_capacity(window * window);
    Ok(Patch::from_fn(image.nrows(), image.ncols(), |i, j| {
        window_values(image, i, j, half, &mut buf);
        buf[buf.len() / 2]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmfParams {
    pub start_window: usize,
    pub max_window: usize,
    /// Only pixels at one of these values can be flagged.
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for AmfParams {
    fn default() -> Self {
        Self {
            start_window: 3,
            max_window: 19,
            d_min: 0.0,
            d_max: 1.0,
        }
    }
}

impl AmfParams {
    pub fn with_max_window(max_window: usize) -> Self {
        Self {
            max_window,
            ..Self::default()
        }
    }
}

/// Adaptive median filter detection. A pixel is flagged when the filter
/// would replace it (the window median is an impulse-free level but the
/// pixel sits at the window extreme, or no such level is found before
/// `max_window` and the median differs from the pixel) and the pixel is
/// at `d_min` or `d_max`.
pub fn amf_detect(image: &Patch, params: &AmfParams) -> Result<Mask> {
    check_window(params.start_window, "AMF start window")?;
    check_window(params.max_window, "AMF max window")?;
    if params.start_window < 3 || params.max_window < params.start_window {
        return Err(AlohaError::InvalidConfig(format!(
            "AMF windows must satisfy 3 <= start ({}) <= max ({})",
            params.start_window, params.max_window
        )));
    }
    let mut buf = Vec::new();
    Ok(Mask::from_fn(image.nrows(), image.ncols(), |i, j| {
        let z = image[(i, j)];
        if z != params.d_min && z != params.d_max {
            return false;
        }
        let mut window = params.start_window;
        loop {
            window_values(image, i, j, window / 2, &mut buf);
            let (lo, hi) = (buf[0], buf[buf.len() - 1]);
            let med = buf[buf.len() / 2];
            if lo < med && med < hi {
                return !(lo < z && z < hi);
            }
            window += 2;
            if window > params.max_window {
                return med != z;
            }
        }
    }))
}
