//! Procedural re-identification data: each identity is a textured ellipse
//! (stripe frequency and orientation, spot layout) whose colour, pose and
//! lighting change from image to image. Backgrounds are either cluttered with
//! random high-frequency structure or flat.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Manifest, Record};
use crate::error::{Error, Result};
use crate::raster::ColorImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Clutter,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub ids: usize,
    pub imgs_per_id: usize,
    pub size: usize,
    pub background: Background,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ids: 30,
            imgs_per_id: 10,
            size: 64,
            background: Background::Clutter,
            seed: 0,
        }
    }
}

/// Texture parameters that define one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTexture {
    /// Stripe cycles across the image width.
    pub stripe_cycles: f64,
    pub stripe_angle: f64,
    pub stripe_phase: f64,
    /// Spots in object coordinates: `(u, v, radius)` with `u, v` in units of the semi-axes.
    pub spots: Vec<(f64, f64, f64)>,
    pub light_spots: bool,
}

impl IdentityTexture {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let count = rng.random_range(0..=8);
        let spots = (0..count)
            .map(|_| loop {
                let (u, v) = (rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
                if u * u + v * v < 0.64 {
                    break (u, v, rng.random_range(0.03..0.06));
                }
            })
            .collect();
        IdentityTexture {
            stripe_cycles: rng.random_range(5.0..14.0),
            stripe_angle: rng.random_range(0.0..PI),
            stripe_phase: rng.random_range(0.0..2.0 * PI),
            spots,
            light_spots: rng.random_bool(0.5),
        }
    }
}

/// One rendered image with its object mask (row-major, `size × size`).
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub identity: usize,
    pub image: ColorImage,
    pub mask: Vec<bool>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Texture of identity `id` under dataset seed `seed`.
pub fn identity_texture(seed: u64, id: usize) -> IdentityTexture {
    IdentityTexture::sample(&mut rng_for(seed, (id as u64) << 32 | 0xFFFF_FFFF))
}

fn random_color<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(lo..hi))
}

struct Grating {
    cycles: f64,
    cos: f64,
    sin: f64,
    phase: f64,
    color: [f64; 3],
}

struct Bar {
    cy: f64,
    cx: f64,
    half_len: f64,
    half_width: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

pub fn render<R: Rng + ?Sized>(
    texture: &IdentityTexture,
    size: usize,
    background: Background,
    rng: &mut R,
) -> Result<(ColorImage, Vec<bool>)> {
    let s = size as f64;
    // Pose.
    let (cx, cy) = (0.5 + rng.random_range(-0.06..0.06), 0.5 + rng.random_range(-0.06..0.06));
    let scale = rng.random_range(0.92..1.05);
    let (a, b) = (0.40 * scale, 0.32 * scale);
    let rho: f64 = rng.random_range(-0.25..0.25);
    let (rc, rs) = (rho.cos(), rho.sin());
    let (tc, ts) = (texture.stripe_angle.cos(), texture.stripe_angle.sin());
    // Appearance nuisance.
    let light = random_color(rng, 0.45, 1.0);
    let dark = light.map(|c| c * 0.25);
    let spot = if texture.light_spots { [0.95; 3] } else { [0.05; 3] };
    let bg = random_color(rng, 0.2, 0.8);
    let (gratings, bars, gain, beta) = match background {
        Background::Plain => (Vec::new(), Vec::new(), 0.0, 0.0),
        Background::Clutter => {
            let gratings: Vec<Grating> = (0..3)
                .map(|_| {
                    let th: f64 = rng.random_range(0.0..PI);
                    Grating {
                        cycles: rng.random_range(4.0..20.0),
                        cos: th.cos(),
                        sin: th.sin(),
                        phase: rng.random_range(0.0..2.0 * PI),
                        color: random_color(rng, -0.15, 0.15),
                    }
                })
                .collect();
            let bars: Vec<Bar> = (0..8)
                .map(|_| {
                    let th: f64 = rng.random_range(0.0..PI);
                    Bar {
                        cy: rng.random_range(0.0..1.0),
                        cx: rng.random_range(0.0..1.0),
                        half_len: rng.random_range(0.05..0.25),
                        half_width: rng.random_range(0.01..0.03),
                        cos: th.cos(),
                        sin: th.sin(),
                        color: random_color(rng, 0.0, 1.0),
                    }
                })
                .collect();
            (
                gratings,
                bars,
                rng.random_range(0.0..0.6),
                rng.random_range(0.0..2.0 * PI),
            )
        }
    };
    let (bc, bs) = (f64::cos(beta), f64::sin(beta));
    let mut mask = vec![false; size * size];
    let image = ColorImage::from_fn(size, size, |y, x| {
        let (px, py) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let (dx, dy) = (px - cx, py - cy);
        let u = dx * rc + dy * rs;
        let v = -dx * rs + dy * rc;
        let mut c = if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
            mask[y * size + x] = true;
            let t = 0.5
                + 0.5
                    * (3.0 * (2.0 * PI * texture.stripe_cycles * (u * tc + v * ts) + texture.stripe_phase).sin())
                        .tanh();
            let on_spot = texture
                .spots
                .iter()
                .any(|&(su, sv, r)| (u - su * a).powi(2) + (v - sv * b).powi(2) < r * r);
            if on_spot {
                spot
            } else {
                [0, 1, 2].map(|i| dark[i] + (light[i] - dark[i]) * t)
            }
        } else {
            let mut c = bg;
            for g in &gratings {
                let w = (2.0 * PI * g.cycles * (px * g.cos + py * g.sin) + g.phase).sin();
                for i in 0..3 {
                    c[i] += g.color[i] * w;
                }
            }
            for bar in &bars {
                let (ex, ey) = (px - bar.cx, py - bar.cy);
                let along = ex * bar.cos + ey * bar.sin;
                let across = -ex * bar.sin + ey * bar.cos;
                if along.abs() <= bar.half_len && across.abs() <= bar.half_width {
                    c = bar.color;
                }
            }
            c
        };
        let lum = 1.0 + gain * ((px - 0.5) * bc + (py - 0.5) * bs);
        for v in &mut c {
            *v = (*v * lum).clamp(0.0, 1.0);
        }
        c
    })?;
    Ok((image, mask))
}

/// Renders the whole dataset in memory, identity-major.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthSample>> {
    if config.ids == 0 || config.imgs_per_id == 0 || config.size < 8 {
        return Err(Error::Config(format!(
            "synthetic dataset needs ids, imgs_per_id > 0 and size >= 8, got {config:?}"
        )));
    }
    let mut out = Vec::with_capacity(config.ids * config.imgs_per_id);
    for id in 0..config.ids {
        let texture = identity_texture(config.seed, id);
        for k in 0..config.imgs_per_id {
            let mut rng = rng_for(config.seed, (id as u64) << 32 | k as u64);
            let (image, mask) = render(&texture, config.size, config.background, &mut rng)?;
            out.push(SynthSample {
                identity: id,
                image,
                mask,
            });
        }
    }
    Ok(out)
}

pub fn identity_name(id: usize) -> String {
    format!("id_{id:03}")
}

/// Writes PNGs, `manifest.tsv` and `synth.toml` under `dir`; returns the manifest.
pub fn write_dataset(config: &SynthConfig, dir: &Path) -> Result<Manifest> {
    let samples = generate(config)?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let name = identity_name(sample.identity);
        let sub = dir.join(&name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let path = sub.join(format!("{:03}.png", i % config.imgs_per_id));
        sample.image.save_png(&path)?;
        records.push(Record {
            path,
            identity: name,
            species: Some("synthetic".into()),
        });
    }
    let manifest = Manifest {
        name: "manifest".into(),
        records,
    };
    let mpath = dir.join("manifest.tsv");
    fs::write(&mpath, manifest.to_text(dir)).map_err(|e| Error::io(&mpath, e))?;
    let cpath = dir.join("synth.toml");
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&cpath, text).map_err(|e| Error::io(&cpath, e))?;
    Ok(manifest)
}

/// Fraction of each patch's pixels covered by `mask`, patches row-major.
pub fn patch_coverage(mask: &[bool], height: usize, width: usize, patch: usize) -> Vec<f64> {
    let (gr, gc) = (height / patch, width / patch);
    let mut out = vec![0.0; gr * gc];
    for (y, row) in mask.chunks(width).enumerate().take(gr * patch) {
        for (x, &m) in row.iter().enumerate().take(gc * patch) {
            if m {
                out[(y / patch) * gc + x / patch] += 1.0;
            }
        }
    }
    let area = (patch * patch) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}
