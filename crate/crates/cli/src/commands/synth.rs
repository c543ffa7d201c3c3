//! `synth`: writes a synthetic competition to disk with a manifest.
//!
//! Layout under `--out`:
//!
//! ```text
//! manifest.json
//! truth_ranking.json      models ordered by noise rate, mu = -rate
//! images/<id>.png         RGB render of the ground truth
//! annotations/<id>.png    ground truth label maps
//! models/<model>/<id>.png predictions
//! train/<n>.png           labeled maps for scale statistics
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mad_core::segmap::save_label_map;
use mad_core::synth::{SynthCompetition, SynthConfig};
use mad_core::{Gauge, LabelMap, RankingVector};
use rayon::prelude::*;

use crate::manifest::{Manifest, ModelEntry};
use crate::report::write_json;
use crate::settings::Settings;

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub images: usize,
    /// Labeled maps for scale statistics.
    #[arg(long, default_value_t = 100)]
    pub train: usize,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    /// Class count including background.
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Per-model pixel corruption rates; one model per value.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.25,0.35,0.45")]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub min_blobs: usize,
    #[arg(long, default_value_t = 3)]
    pub max_blobs: usize,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_images: self.images,
            n_train: self.train,
            width: self.width,
            height: self.height,
            num_classes: self.classes,
            blobs_per_image: (self.min_blobs, self.max_blobs),
            noise_rates: self.noise.clone(),
        }
    }
}

/// Colour of class `c` in the RGB renders.
pub fn palette(c: u8) -> [u8; 3] {
    if c == 0 {
        return [0, 0, 0];
    }
    let h = (c as u32).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
}

fn save_rgb(map: &LabelMap, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut enc = png::Encoder::new(file, map.width(), map.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = map.pixels().iter().flat_map(|&c| palette(c)).collect();
    enc.write_header()?.write_image_data(&data)?;
    Ok(())
}

fn write_maps<'a>(dir: &Path, maps: impl IntoParallelIterator<Item = (String, &'a LabelMap)>) -> Result<()> {
    fs::create_dir_all(dir)?;
    maps.into_par_iter().try_for_each(|(id, m)| {
        let p = dir.join(format!("{id}.png"));
        save_label_map(m, &p).with_context(|| format!("writing {}", p.display()))
    })
}

/// Writes the competition and returns the manifest path.
pub fn cmd_synth(args: &SynthArgs, s: &Settings) -> Result<PathBuf> {
    let cfg = args.config(s.seed);
    let comp = s.in_pool(|| SynthCompetition::build(&cfg))??;
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    s.in_pool(|| -> Result<()> {
        let images = out.join("images");
        fs::create_dir_all(&images)?;
        comp.truth
            .par_iter()
            .try_for_each(|(id, m)| save_rgb(m, &images.join(format!("{id}.png"))))?;
        write_maps(
            &out.join("annotations"),
            comp.truth.par_iter().map(|(id, m)| (id.clone(), m)),
        )?;
        for (id, _, preds) in &comp.models {
            write_maps(
                &out.join("models").join(id),
                preds.par_iter().map(|(i, m)| (i.clone(), m)),
            )?;
        }
        let width = comp.labeled_train.len().to_string().len().max(5);
        write_maps(
            &out.join("train"),
            comp.labeled_train
                .par_iter()
                .enumerate()
                .map(|(n, m)| (format!("{n:0width$}"), m)),
        )
    })??;

    let truth = RankingVector {
        model_ids: comp.models.iter().map(|(id, _, _)| id.clone()).collect(),
        mu: comp.models.iter().map(|(_, rate, _)| -rate).collect(),
        gauge: Gauge::ZeroSum,
        log_likelihood: 0.0,
        iterations: 0,
    };
    write_json(&out.join("truth_ranking.json"), &truth.to_json_value())?;

    let manifest = Manifest {
        corpus_root: "images".into(),
        catalog: comp.catalog.clone(),
        models: comp
            .models
            .iter()
            .map(|(id, _, _)| ModelEntry {
                model_id: id.clone(),
                prediction_dir: Path::new("models").join(id),
            })
            .collect(),
        labeled_train: vec!["train".into()],
        annotations_dir: Some("annotations".into()),
    };
    let path = out.join("manifest.json");
    write_json(&path, &serde_json::to_value(&manifest)?)?;
    Ok(path)
}
