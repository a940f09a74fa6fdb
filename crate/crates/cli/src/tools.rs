//! Smaller subcommands: schedule dump and the augmentation demo.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use reid_core::augment::{
    augment, cutout, random_erasing, random_flip, random_patch, resize, AugmentConfig, CropMode,
};
use reid_core::rng::seeded;
use reid_core::schedule::{is_backbone_frozen, lr_at};
use reid_core::ImageTensor;

use crate::config::ScheduleConfig;
use crate::error::{CliError, Result};
use crate::format::g9;
use crate::io::checksum;

/// `iter,lr,frozen` rows at every `stride` iterations; the final iteration is
/// always included.
pub fn dump_schedule(s: &ScheduleConfig) -> Result<String> {
    if s.stride == 0 {
        return Err(CliError::Config("schedule.stride must be positive".into()));
    }
    let lr = s.lr_schedule();
    lr.validate()?;
    let mut iters: Vec<u64> = (0..=lr.total_iters).step_by(s.stride as usize).collect();
    if iters.last() != Some(&lr.total_iters) {
        iters.push(lr.total_iters);
    }
    let mut out = String::from("iter,lr,frozen\n");
    for it in iters {
        let frozen = u8::from(is_backbone_frozen(it, s.freeze_iters));
        let _ = writeln!(out, "{it},{},{frozen}", g9(lr_at(it, &lr)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum DemoOp {
    /// Resize, random flip, random erasing.
    #[default]
    Chain,
    Flip,
    Erase,
    Cutout,
    /// Paste a crop of a second seeded image.
    Patch,
}

pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        img.get_pixel(c as u32, r as u32)[ch] as f64 / 255.0
    });
    Ok(ImageTensor::new(data)?)
}

pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |c, r| {
        image::Rgb(std::array::from_fn(|ch| {
            (img.get(r as usize, c as usize, ch) * 255.0).round() as u8
        }))
    });
    buf.save(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn seeded_image(rng: &mut impl Rng, h: usize, w: usize) -> Result<ImageTensor> {
    let data = Array3::from_shape_fn((h, w, 3), |_| rng.random::<f64>());
    Ok(ImageTensor::new(data)?)
}

/// Applies one operator with a fixed seed; returns the image and a SHA-256
/// digest of its values.
pub fn augment_demo(
    input: Option<&Path>,
    op: DemoOp,
    cfg: &AugmentConfig,
) -> Result<(ImageTensor, String)> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let img = match input {
        Some(p) => load_png(p)?,
        None => seeded_image(&mut rng, cfg.target_h, cfg.target_w)?,
    };
    let out = match op {
        DemoOp::Chain => augment(&img, cfg, &mut rng)?,
        DemoOp::Flip => random_flip(&resize(&img, cfg.target_h, cfg.target_w)?, cfg, &mut rng),
        DemoOp::Erase => random_erasing(&img, cfg, &mut rng)?,
        DemoOp::Cutout => cutout(&img, cfg, &mut rng)?,
        DemoOp::Patch => {
            let source = seeded_image(&mut rng, img.height(), img.width())?;
            random_patch(&img, &source, cfg, CropMode::Random, &mut rng)?
        }
    };
    let digest = checksum(out.view().iter());
    Ok((out, digest))
}
