use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::ImageSet;
use super::train::train;
use super::viz::line_plot_svg;
use super::{write_json, write_text};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Mu,
    Lambda,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(Error::Config(format!("cannot sweep {other:?}; use mu or lambda"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::Lambda => "lambda",
        }
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::Mu => cfg.mu = value,
            SweepParam::Lambda => cfg.lambda = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `map[i][j]`: test mAP at `values[i]` with `seeds[j]`.
    pub map: Vec<Vec<f64>>,
    pub mean_map: Vec<f64>,
}

impl SweepTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<8}", self.param.name());
        for s in &self.seeds {
            let _ = write!(out, " {:>9}", format!("seed {s}"));
        }
        out.push_str("   mean mAP\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = write!(out, "{v:<8}");
            for m in &self.map[i] {
                let _ = write!(out, " {:>9.2}", 100.0 * m);
            }
            let _ = writeln!(out, " {:>10.2}", 100.0 * self.mean_map[i]);
        }
        out
    }

    pub fn plot(&self) -> String {
        let pct: Vec<f64> = self.mean_map.iter().map(|m| 100.0 * m).collect();
        line_plot_svg(&self.values, &pct, self.param.name(), "mAP (%)")
    }
}

/// One train+eval per `(value, seed)`; the base config's own value of the
/// swept parameter is ignored.
pub fn sweep(
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    train_set: &ImageSet,
    test_set: &ImageSet,
    out: Option<&Path>,
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let mut map = Vec::with_capacity(values.len());
    for &v in values {
        let mut row = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            param.apply(&mut cfg, v);
            cfg.seed = seed;
            let dir = out.map(|d| d.join(format!("{}_{v}_seed{seed}", param.name())));
            let run = train(&cfg, train_set, Some(test_set), dir.as_deref())?;
            row.push(run.record.final_report.expect("test set given").map);
        }
        map.push(row);
    }
    let mean_map = map.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let table = SweepTable {
        param,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        map,
        mean_map,
    };
    if let Some(dir) = out {
        write_text(&dir.join("config.toml"), &base.to_toml())?;
        write_text(&dir.join("sweep.txt"), &table.render())?;
        write_text(&dir.join("sweep.svg"), &table.plot())?;
        write_json(&dir.join("sweep.json"), &table)?;
    }
    Ok(table)
}
