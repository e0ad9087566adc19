//! Static figures: attention heatmaps, selected-patch masks, augmentation
//! previews and line plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::model::ReidModel;
use super::write_text;
use crate::datapipe::{augment_view, eval_input};
use crate::error::{Error, Result};
use crate::raster::{ColorImage, GrayImage};
use crate::selection::{selection_size, summarize_attention, top_z};
use crate::spectral::{fma_trace, AlphaMode, FmaTrace};

/// Final-layer class attention of one image, rendered at the image's own size.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    /// Head-averaged class-to-patch attention, row-major over the patch grid; sums to 1.
    pub scores: Vec<f64>,
    pub grid: (usize, usize),
    /// Bilinearly upsampled scores, min-max normalised to `[0, 1]`.
    pub heat: GrayImage,
    pub overlay: ColorImage,
    /// Patches the top-Z rule keeps at the given `mu`.
    pub selected: Vec<usize>,
    /// Input with unselected patches dimmed.
    pub selection_view: ColorImage,
}

/// Blue-to-red colour ramp.
pub fn colormap(t: f64) -> [f64; 3] {
    let f = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Bilinear upsampling of a row-major grid to `height × width`, then min-max normalisation.
pub fn upsample_grid(values: &[f64], grid: (usize, usize), height: usize, width: usize) -> Result<GrayImage> {
    let unit = min_max(values);
    let small = GrayImage::new(grid.0, grid.1, unit)?;
    let big = small.to_color().resize(height, width).to_gray();
    GrayImage::new(height, width, min_max(big.pixels()))
}

pub fn attention_map(model: &ReidModel, image: &ColorImage, mu: f64) -> Result<AttentionMap> {
    let cfg = model.config;
    let n = cfg.num_patches();
    let out = model.forward(&[eval_input(image, cfg.image_height, cfg.image_width)])?;
    let scores = summarize_attention(&out, n)?.scores.remove(0);
    let grid = cfg.grid();
    let (h, w) = (image.height(), image.width());
    let heat = upsample_grid(&scores, grid, h, w)?;
    let overlay = ColorImage::from_fn(h, w, |y, x| {
        let c = colormap(heat.get(y, x));
        let p = image.pixel(y, x);
        [0, 1, 2].map(|i| 0.5 * p[i] + 0.5 * c[i])
    })?;
    let selected = top_z(&scores, selection_size(mu, n)?);
    let mut keep = vec![false; n];
    selected.iter().for_each(|&i| keep[i] = true);
    let selection_view = ColorImage::from_fn(h, w, |y, x| {
        let (r, c) = (y * grid.0 / h, x * grid.1 / w);
        let p = image.pixel(y, x);
        if keep[r * grid.1 + c] {
            p
        } else {
            p.map(|v| 0.25 * v)
        }
    })?;
    Ok(AttentionMap {
        scores,
        grid,
        heat,
        overlay,
        selected,
        selection_view,
    })
}

/// Share of `heat` lying inside `mask` (same row-major layout).
pub fn mass_inside(heat: &[f64], mask: &[bool]) -> f64 {
    let total: f64 = heat.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    heat.iter().zip(mask).filter(|(_, m)| **m).map(|(h, _)| h).sum::<f64>() / total
}

/// Renders heatmap, overlay and selected-patch mask for each image into `out_dir`.
/// Returns the files written.
pub fn attnmap(checkpoint: &Checkpoint, images: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = checkpoint.model()?;
    let mu = checkpoint.config.mu;
    write_text(&out_dir.join("config.toml"), &checkpoint.config.to_toml())?;
    let mut written = Vec::new();
    for path in images {
        let img = ColorImage::load(path)?;
        let map = attention_map(&model, &img, mu)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Input(format!("{} has no file name", path.display())))?;
        for (suffix, save) in [
            ("heat", &map.heat.to_color()),
            ("overlay", &map.overlay),
            ("selected", &map.selection_view),
        ] {
            let p = out_dir.join(format!("{stem}_{suffix}.png"));
            save.save_png(&p)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Augments one image as in training, with the mixing ratio forced to
/// `alpha`, and writes every stage of the frequency-mixing pipeline as PNGs.
/// Returns the trace.
pub fn augment_preview(
    image: &ColorImage,
    config: &TrainConfig,
    alpha: AlphaMode,
    seed: u64,
    out_dir: &Path,
) -> Result<FmaTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aug = config.augment();
    aug.fma.alpha = alpha;
    let (view, _) = augment_view(image, &aug, &mut rng);
    let gray = view.to_gray();
    let trace = fma_trace(&gray, &aug.fma, &mut rng)?;
    let alpha_text = match alpha {
        AlphaMode::Random => "\"random\"".to_string(),
        AlphaMode::Fixed(a) => format!("{a:?}"),
    };
    let resolved = format!("{}\n[preview]\nalpha = {alpha_text}\nseed = {seed}\n", config.to_toml());
    write_text(&out_dir.join("config.toml"), &resolved)?;
    let (h, w) = (gray.height(), gray.width());
    let mask = GrayImage::new(h, w, trace.mask.grid().iter().map(|&b| b as f64).collect())?;
    for (name, img) in [
        ("view", view.clone()),
        ("gray", gray.to_color()),
        ("spectrum_original", trace.original.log_magnitude().to_color()),
        ("spectrum_filtered", trace.filtered.log_magnitude().to_color()),
        ("spectrum_mixed", trace.mixed.log_magnitude().to_color()),
        ("mix_mask", mask.to_color()),
        ("high_frequency", trace.output.to_color()),
    ] {
        img.save_png(&out_dir.join(format!("{name}.png")))?;
    }
    Ok(trace)
}

/// Minimal SVG line chart with markers and axis labels.
pub fn line_plot_svg(xs: &[f64], ys: &[f64], x_label: &str, y_label: &str) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo).abs() < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(xs);
    let (y0, y1) = span(ys);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#,
            px(x),
            py(y)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            px(x),
            h - m + 16.0
        );
    }
    for y in [y0, 0.5 * (y0 + y1), y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"#,
            m - 6.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
