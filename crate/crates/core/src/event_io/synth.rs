//! Synthetic event source driven by the brightness-threshold model.
//!
//! Each pixel keeps a reference log-brightness. Whenever the sampled
//! log-brightness moves at least one contrast threshold `C` away from the
//! reference, an event of the matching polarity is emitted and the reference
//! moves by exactly `C`. Event times are interpolated linearly between
//! samples and rounded to microseconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Event, EventSequence, Polarity};
use crate::error::{Error, Result};

/// Relative slack on the threshold comparison so that a ramp of exactly
/// `k * C` yields `k` events despite rounding.
const THRESHOLD_SLACK: f64 = 1e-9;
const MIN_INTENSITY: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// Soft-edged bar sweeping across the sensor. `vertical` bars move along
    /// x, horizontal ones along y. Positions in pixels, speed in px/s.
    Bar { vertical: bool, start: f64, speed: f64, width: f64, softness: f64, contrast: f64 },
    /// Gaussian blob on a straight trajectory.
    Dot { x0: f64, y0: f64, vx: f64, vy: f64, radius: f64, contrast: f64 },
    /// `count` dots with positions, speeds and contrast signs drawn from the seed.
    RandomDots { count: usize, max_speed: f64, radius: f64, contrast: f64 },
    /// One pixel whose log-brightness rises linearly by `delta` over the duration.
    PixelRamp { x: u16, y: u16, delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    /// Contrast threshold on log-brightness.
    pub threshold: f64,
    pub patterns: Vec<Pattern>,
    pub duration_us: u64,
    pub seed: u64,
    /// Sampling period of the simulated brightness.
    pub step_us: u64,
    /// Linear background intensity.
    pub background: f64,
    /// Per-pixel relative threshold mismatch, uniform in `[-j, j]`.
    pub threshold_jitter: f64,
}

impl SceneConfig {
    pub fn new(width: u16, height: u16, threshold: f64, duration_us: u64, seed: u64) -> Self {
        Self {
            width,
            height,
            threshold,
            patterns: Vec::new(),
            duration_us,
            seed,
            step_us: 50,
            background: 0.5,
            threshold_jitter: 0.0,
        }
    }

    pub fn with_pattern(mut self, p: Pattern) -> Self {
        self.patterns.push(p);
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold <= 0.0 {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.duration_us == 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if self.step_us == 0 {
            return Err(Error::Config("simulation step must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("sensor dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.threshold_jitter) {
            return Err(Error::Config("threshold jitter must lie in [0, 1)".into()));
        }
        if self.background.is_nan() || self.background <= 0.0 {
            return Err(Error::Config("background intensity must be positive".into()));
        }
        Ok(())
    }
}

/// Concrete scene after random patterns have been drawn.
#[derive(Debug, Clone)]
struct Scene {
    bars: Vec<(bool, f64, f64, f64, f64, f64)>,
    dots: Vec<(f64, f64, f64, f64, f64, f64)>,
    ramps: Vec<(u16, u16, f64)>,
    background: f64,
    /// Ramps complete at the last sampled microsecond.
    ramp_span_us: f64,
}

impl Scene {
    fn build(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Scene {
            bars: Vec::new(),
            dots: Vec::new(),
            ramps: Vec::new(),
            background: cfg.background,
            ramp_span_us: cfg.duration_us.saturating_sub(1).max(1) as f64,
        };
        for p in &cfg.patterns {
            match *p {
                Pattern::Bar { vertical, start, speed, width, softness, contrast } => {
                    s.bars.push((vertical, start, speed, width, softness.max(1e-6), contrast))
                }
                Pattern::Dot { x0, y0, vx, vy, radius, contrast } => s.dots.push((x0, y0, vx, vy, radius, contrast)),
                Pattern::RandomDots { count, max_speed, radius, contrast } => {
                    for _ in 0..count {
                        let x0 = rng.gen::<f64>() * cfg.width as f64;
                        let y0 = rng.gen::<f64>() * cfg.height as f64;
                        let vx = (rng.gen::<f64>() * 2.0 - 1.0) * max_speed;
                        let vy = (rng.gen::<f64>() * 2.0 - 1.0) * max_speed;
                        let r = radius * (0.5 + rng.gen::<f64>());
                        let c = if rng.gen::<bool>() { contrast } else { -contrast };
                        s.dots.push((x0, y0, vx, vy, r, c));
                    }
                }
                Pattern::PixelRamp { x, y, delta } => s.ramps.push((x, y, delta)),
            }
        }
        s
    }

    /// Log-brightness at pixel centre (x, y) at time `t_us`.
    fn log_intensity(&self, x: u16, y: u16, t_us: f64) -> f64 {
        let ts = t_us * 1e-6;
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut intensity = self.background;
        for &(vertical, start, speed, width, soft, contrast) in &self.bars {
            let c = start + speed * ts;
            let u = if vertical { px } else { py };
            let lo = ((u - (c - 0.5 * width)) / soft + 0.5).clamp(0.0, 1.0);
            let hi = (((c + 0.5 * width) - u) / soft + 0.5).clamp(0.0, 1.0);
            intensity += contrast * lo * hi;
        }
        for &(x0, y0, vx, vy, r, contrast) in &self.dots {
            let dx = px - (x0 + vx * ts);
            let dy = py - (y0 + vy * ts);
            intensity += contrast * (-(dx * dx + dy * dy) / (2.0 * r * r)).exp();
        }
        let mut l = intensity.max(MIN_INTENSITY).ln();
        for &(rx, ry, delta) in &self.ramps {
            if rx == x && ry == y {
                l += delta * (t_us / self.ramp_span_us).min(1.0);
            }
        }
        l
    }
}

/// Renders the configured scene through the threshold model.
///
/// A scene without brightness change yields an empty sequence. The output is
/// a pure function of the config (including `seed`).
pub fn generate_synthetic(cfg: &SceneConfig) -> Result<EventSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = Scene::build(cfg, &mut rng);
    let (w, h) = (cfg.width, cfg.height);
    let thresholds: Vec<f64> = (0..w as usize * h as usize)
        .map(|_| cfg.threshold * (1.0 + cfg.threshold_jitter * (rng.gen::<f64>() * 2.0 - 1.0)))
        .collect();

    // sample instants: 0, step, 2*step, ..., and always the last microsecond
    let last = cfg.duration_us - 1;
    let mut samples: Vec<u64> = (0..).map(|k| k * cfg.step_us).take_while(|&t| t < last).collect();
    samples.push(last);

    let per_pixel: Vec<Vec<Event>> = (0..w as usize * h as usize)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % w as usize) as u16, (idx / w as usize) as u16);
            pixel_events(&scene, x, y, thresholds[idx], &samples, last)
        })
        .collect();

    let mut events: Vec<Event> = per_pixel.into_iter().flatten().collect();
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventSequence::new(w, h, events)
}

fn pixel_events(scene: &Scene, x: u16, y: u16, c: f64, samples: &[u64], last_us: u64) -> Vec<Event> {
    let mut out = Vec::new();
    let mut prev_l = scene.log_intensity(x, y, samples[0] as f64);
    let mut reference = prev_l;
    let mut prev_t = samples[0];
    let mut last_emit: Option<u64> = None;
    let slack = c * (1.0 - THRESHOLD_SLACK);
    for &t in &samples[1..] {
        let l = scene.log_intensity(x, y, t as f64);
        loop {
            let p = if l - reference >= slack {
                Polarity::Positive
            } else if reference - l >= slack {
                Polarity::Negative
            } else {
                break;
            };
            reference += c * p.as_f64();
            let span = l - prev_l;
            let frac = if span.abs() > 0.0 { ((reference - prev_l) / span).clamp(0.0, 1.0) } else { 1.0 };
            let mut te = (prev_t as f64 + frac * (t - prev_t) as f64).round() as u64;
            if let Some(le) = last_emit {
                te = te.max(le + 1);
            }
            if te > last_us {
                continue;
            }
            last_emit = Some(te);
            out.push(Event { t: te, x, y, p });
        }
        prev_l = l;
        prev_t = t;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_scene_is_empty() {
        let cfg = SceneConfig::new(16, 16, 0.2, 100_000, 1);
        assert!(generate_synthetic(&cfg).unwrap().is_empty());
    }

    /// Independent scalar threshold loop over a linear ramp.
    fn ramp_oracle(total: f64, c: f64, steps: usize) -> (usize, usize) {
        let (mut pos, mut neg) = (0, 0);
        let mut reference = 0.0;
        for k in 1..=steps {
            let l = total * k as f64 / steps as f64;
            while l - reference >= c * (1.0 - 1e-9) {
                reference += c;
                pos += 1;
            }
            while reference - l >= c * (1.0 - 1e-9) {
                reference -= c;
                neg += 1;
            }
        }
        (pos, neg)
    }

    #[test]
    fn ramp_of_three_thresholds_gives_three_events() {
        let c = 0.17;
        let (pos, neg) = ramp_oracle(3.0 * c, c, 1000);
        assert_eq!((pos, neg), (3, 0));
        let cfg = SceneConfig::new(8, 8, c, 50_000, 3).with_pattern(Pattern::PixelRamp { x: 2, y: 5, delta: 3.0 * c });
        let seq = generate_synthetic(&cfg).unwrap();
        assert_eq!(seq.len(), 3);
        assert!(seq.events().iter().all(|e| (e.x, e.y, e.p) == (2, 5, Polarity::Positive)));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SceneConfig::new(24, 24, 0.15, 60_000, 9)
            .with_pattern(Pattern::RandomDots { count: 4, max_speed: 200.0, radius: 2.5, contrast: 0.8 });
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        let other = generate_synthetic(&SceneConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn every_event_crosses_one_threshold() {
        // replay the reference levels from the emitted polarities and check
        // they stay within one threshold of the brightness sampled at event time
        let c = 0.2;
        let cfg = SceneConfig::new(20, 12, c, 80_000, 5).with_pattern(Pattern::Bar {
            vertical: true,
            start: -4.0,
            speed: 300.0,
            width: 5.0,
            softness: 3.0,
            contrast: 1.0,
        });
        let seq = generate_synthetic(&cfg).unwrap();
        assert!(seq.len() > 100);
        let scene = Scene::build(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let mut refs = vec![f64::NAN; 20 * 12];
        for e in seq.events() {
            let i = seq.pixel_index(e);
            if refs[i].is_nan() {
                refs[i] = scene.log_intensity(e.x, e.y, 0.0);
            }
            refs[i] += c * e.p.as_f64();
            // the interpolated crossing is within one sample step of the event time
            let lo = scene.log_intensity(e.x, e.y, e.t.saturating_sub(cfg.step_us) as f64);
            let hi = scene.log_intensity(e.x, e.y, (e.t + cfg.step_us) as f64);
            let (mn, mx) = (lo.min(hi), lo.max(hi));
            assert!(refs[i] >= mn - 1e-9 && refs[i] <= mx + 1e-9, "reference left sampled range at {e:?}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_synthetic(&SceneConfig::new(4, 4, 0.0, 10, 0)).is_err());
        assert!(generate_synthetic(&SceneConfig::new(4, 4, 0.1, 0, 0)).is_err());
    }
}
