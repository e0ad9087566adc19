use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Stage, TrainConfig};
use super::data::ImageSet;
use super::train::train;
use super::{median, write_json, write_text};
use crate::error::{Error, Result};
use crate::probe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stage: Stage,
    pub label: String,
    /// Test mAP per seed, in the order of [`AblationTable::seeds`].
    pub map: Vec<f64>,
    pub rank1: Vec<f64>,
    pub median_map: f64,
    pub median_rank1: f64,
    /// Calls into spectral and selection code summed over the stage's runs.
    pub spectral_calls: u64,
    pub selection_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, stage: Stage) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }

    /// Fixed-width text table, one row per stage, mAP in percent.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "stage");
        for s in &self.seeds {
            let _ = write!(out, " {:>9}", format!("seed {s}"));
        }
        let _ = writeln!(out, " {:>10} {:>10}", "median mAP", "median R1");
        for r in &self.rows {
            let _ = write!(out, "{:<10}", r.label);
            for m in &r.map {
                let _ = write!(out, " {:>9.2}", 100.0 * m);
            }
            let _ = writeln!(out, " {:>10.2} {:>10.2}", 100.0 * r.median_map, 100.0 * r.median_rank1);
        }
        out
    }
}

/// Trains and evaluates every stage for every seed on the same split.
/// Each run's config is `base` with `stage` and `seed` replaced.
pub fn ablate(
    base: &TrainConfig,
    stages: &[Stage],
    seeds: &[u64],
    train_set: &ImageSet,
    test_set: &ImageSet,
    out: Option<&Path>,
) -> Result<AblationTable> {
    if stages.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one stage and one seed".into()));
    }
    let mut rows = Vec::new();
    for &stage in stages {
        let (mut map, mut rank1) = (Vec::new(), Vec::new());
        let (mut spectral, mut selection) = (0, 0);
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.stage = stage;
            cfg.seed = seed;
            let dir = out.map(|d| d.join(format!("{}_seed{seed}", stage_dir(stage))));
            probe::reset();
            let run = train(&cfg, train_set, Some(test_set), dir.as_deref())?;
            spectral += probe::count(probe::Path::Spectral);
            selection += probe::count(probe::Path::Selection);
            let report = run.record.final_report.expect("test set given");
            map.push(report.map);
            rank1.push(report.rank1);
        }
        rows.push(AblationRow {
            stage,
            label: stage.label().to_string(),
            median_map: median(&map),
            median_rank1: median(&rank1),
            map,
            rank1,
            spectral_calls: spectral,
            selection_calls: selection,
        });
    }
    let table = AblationTable {
        seeds: seeds.to_vec(),
        rows,
    };
    if let Some(dir) = out {
        write_text(&dir.join("config.toml"), &base.to_toml())?;
        write_text(&dir.join("ablation.txt"), &table.render())?;
        write_json(&dir.join("ablation.json"), &table)?;
    }
    Ok(table)
}

fn stage_dir(stage: Stage) -> &'static str {
    match stage {
        Stage::Baseline => "baseline",
        Stage::PureHf => "pure_hf",
        Stage::Fma => "fma",
        Stage::Ods => "ods",
        Stage::Full => "full",
    }
}
