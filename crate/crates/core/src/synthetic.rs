//! Generated tracking sequences: a textured object drifting over a static
//! cluttered background, with exact ground truth.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evalbench::TrackSequence;
use crate::frame::Frame;
use crate::tracker::TargetState;
use crate::util::rng_for;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    pub frames: usize,
    /// Object side range in pixels (before aspect jitter).
    pub min_object: f64,
    pub max_object: f64,
    /// Largest center displacement per frame in pixels.
    pub max_speed: f64,
    /// Largest relative size change per frame.
    pub max_scale_drift: f64,
    /// Number of background clutter shapes.
    pub clutter: usize,
    /// Amplitude of per-frame pixel noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frame_width: 200,
            frame_height: 160,
            frames: 40,
            min_object: 26.0,
            max_object: 40.0,
            max_speed: 4.0,
            max_scale_drift: 0.01,
            clutter: 12,
            noise: 6.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.frames < 2 {
            errs.push("synthetic sequences need at least 2 frames".to_string());
        }
        if !(self.min_object >= 4.0 && self.max_object >= self.min_object) {
            errs.push(format!("object size range [{}, {}] invalid", self.min_object, self.max_object));
        }
        let room = self.frame_width.min(self.frame_height) as f64;
        if self.max_object * 2.0 > room {
            errs.push(format!("objects up to {} px do not fit a {room}-px frame", self.max_object));
        }
        if !(self.max_speed >= 0.0 && self.max_scale_drift >= 0.0 && self.max_scale_drift < 0.5) {
            errs.push("speed and scale drift must be nonnegative (drift < 0.5)".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

type Rgb = [f64; 3];

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [0, 1, 2].map(|_| rng.random_range(20.0..235.0))
}

struct Texture {
    size: usize,
    pixels: Vec<Rgb>,
}

impl Texture {
    /// Checkerboard of two colors crossed by a diagonal band of a third,
    /// inside a dark border.
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let size = 32;
        let a = random_color(rng);
        let b = random_color(rng);
        let band = random_color(rng);
        let cell = rng.random_range(4..9);
        let slope = if rng.random_bool(0.5) { 1 } else { -1 };
        let mut pixels = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let border = x < 2 || y < 2 || x >= size - 2 || y >= size - 2;
                let diag = if slope > 0 {
                    (x as i64 - y as i64).abs()
                } else {
                    (x as i64 + y as i64 - size as i64).abs()
                };
                let px = if border {
                    [15.0, 15.0, 15.0]
                } else if diag < 4 {
                    band
                } else if (x / cell + y / cell) % 2 == 0 {
                    a
                } else {
                    b
                };
                pixels.push(px);
            }
        }
        Self { size, pixels }
    }

    fn sample(&self, u: f64, v: f64) -> Rgb {
        let x = ((u * self.size as f64) as usize).min(self.size - 1);
        let y = ((v * self.size as f64) as usize).min(self.size - 1);
        self.pixels[y * self.size + x]
    }
}

fn background(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let (w, h) = (cfg.frame_width, cfg.frame_height);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let mut bg = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        let t = (x as f64 / w as f64 + y as f64 / h as f64) / 2.0;
        c0[c] * (1.0 - t) + c1[c] * t
    });
    for _ in 0..cfg.clutter {
        let color = random_color(rng);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(4.0..cfg.max_object * 0.6);
        let disk = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= r * 0.5
                };
                if inside {
                    for c in 0..3 {
                        bg[[y, x, c]] = color[c];
                    }
                }
            }
        }
    }
    bg
}

fn to_frame(img: &Array3<f64>) -> Frame {
    Frame::new(img.mapv(|v| v.round().clamp(0.0, 255.0) as u8)).expect("valid dimensions")
}

fn render(bg: &Array3<f64>, tex: &Texture, target: &TargetState, noise: f64, rng: &mut ChaCha8Rng) -> Frame {
    let mut img = bg.clone();
    let (h, w, _) = img.dim();
    let [x0, y0, bw, bh] = target.to_top_left();
    let xs = (x0.floor().max(0.0) as usize)..((x0 + bw).ceil().min(w as f64) as usize);
    let ys = (y0.floor().max(0.0) as usize)..((y0 + bh).ceil().min(h as f64) as usize);
    for y in ys {
        for x in xs.clone() {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if px < x0 || px >= x0 + bw || py < y0 || py >= y0 + bh {
                continue;
            }
            let c = tex.sample((px - x0) / bw, (py - y0) / bh);
            for k in 0..3 {
                img[[y, x, k]] = c[k];
            }
        }
    }
    if noise > 0.0 {
        img.mapv_inplace(|v| v + rng.random_range(-noise..=noise));
    }
    to_frame(&img)
}

/// Generates one in-memory sequence from `seed`.
pub fn generate_sequence(cfg: &SyntheticConfig, name: &str, seed: u64) -> Result<TrackSequence> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &format!("synthetic.{name}"));
    let bg = background(cfg, &mut rng);
    let tex = Texture::random(&mut rng);
    let (fw, fh) = (cfg.frame_width as f64, cfg.frame_height as f64);
    let side = rng.random_range(cfg.min_object..=cfg.max_object);
    let aspect: f64 = rng.random_range(0.75..1.33);
    let (mut bw, mut bh) = (side * aspect.sqrt(), side / aspect.sqrt());
    let mut cx = rng.random_range(fw * 0.3..fw * 0.7);
    let mut cy = rng.random_range(fh * 0.3..fh * 0.7);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut speed = rng.random_range(0.5 * cfg.max_speed..=cfg.max_speed);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut boxes = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let t = TargetState::new(cx, cy, bw, bh);
        frames.push(render(&bg, &tex, &t, cfg.noise, &mut rng));
        boxes.push(t);

        heading += rng.random_range(-0.3..0.3);
        speed = (speed + rng.random_range(-0.3..0.3)).clamp(0.0, cfg.max_speed);
        let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
        let margin_x = bw / 2.0 + 4.0;
        let margin_y = bh / 2.0 + 4.0;
        if cx + vx < margin_x || cx + vx > fw - margin_x {
            vx = -vx;
        }
        if cy + vy < margin_y || cy + vy > fh - margin_y {
            vy = -vy;
        }
        heading = vy.atan2(vx);
        cx += vx;
        cy += vy;
        let drift = if cfg.max_scale_drift > 0.0 {
            1.0 + rng.random_range(-cfg.max_scale_drift..=cfg.max_scale_drift)
        } else {
            1.0
        };
        let next = (bw * drift, bh * drift);
        if next.0.max(next.1) <= cfg.max_object * 1.3 && next.0.min(next.1) >= cfg.min_object * 0.7 {
            bw = next.0;
            bh = next.1;
        }
    }
    TrackSequence::in_memory(name, frames, boxes)
}

/// `count` sequences named `<prefix>NNN`, each from its own sub-seed.
pub fn generate_dataset(cfg: &SyntheticConfig, prefix: &str, count: usize, seed: u64) -> Result<Vec<TrackSequence>> {
    (0..count)
        .map(|i| generate_sequence(cfg, &format!("{prefix}{i:03}"), seed))
        .collect()
}

/// A frame of uniform random noise, as after the target vanishes.
pub fn noise_frame(width: usize, height: usize, seed: u64) -> Frame {
    let mut rng = rng_for(seed, "synthetic.noise");
    let img = Array3::from_shape_fn((height, width, 3), |_| rng.random_range(0.0..255.0));
    to_frame(&img)
}

/// Writes `seq` as `<root>/<name>/img/NNNN.png` plus `groundtruth_rect.txt`.
pub fn write_sequence(seq: &TrackSequence, root: &Path) -> Result<()> {
    let dir = root.join(&seq.name);
    let img = dir.join("img");
    fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
    let mut gt = String::new();
    for i in 0..seq.len() {
        seq.frame(i)?.save(&img.join(format!("{:04}.png", i + 1)))?;
        let [x, y, w, h] = seq.ground_truth[i].to_top_left();
        let _ = writeln!(gt, "{x},{y},{w},{h}");
    }
    let p = dir.join("groundtruth_rect.txt");
    fs::write(&p, gt).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::{iou, load_sequence};

    #[test]
    fn motion_bounds_hold() {
        let cfg = SyntheticConfig::default();
        for s in 0..5 {
            let seq = generate_sequence(&cfg, "m", s).unwrap();
            assert_eq!(seq.len(), cfg.frames);
            for w in seq.ground_truth.windows(2) {
                let d = (w[1].center_x - w[0].center_x).hypot(w[1].center_y - w[0].center_y);
                assert!(d <= cfg.max_speed + 1e-9, "{d}");
                let r = w[1].width / w[0].width;
                assert!((r - 1.0).abs() <= cfg.max_scale_drift + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig {
            frames: 5,
            ..SyntheticConfig::default()
        };
        let a = generate_sequence(&cfg, "d", 7).unwrap();
        let b = generate_sequence(&cfg, "d", 7).unwrap();
        let c = generate_sequence(&cfg, "d", 8).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(*a.frame(3).unwrap(), *b.frame(3).unwrap());
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn disk_round_trip() {
        let cfg = SyntheticConfig {
            frames: 3,
            ..SyntheticConfig::default()
        };
        let seq = generate_sequence(&cfg, "rt", 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(&dir.path().join("rt")).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(*back.frame(2).unwrap(), *seq.frame(2).unwrap());
        for (a, b) in back.ground_truth.iter().zip(&seq.ground_truth) {
            assert!(iou(a, b) > 0.999_999);
        }
    }
}
