//! Preset comparisons: the focal-γ sweep and the temporal-fusion ablation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TemporalMode};
use crate::synthvid::{build_dataset, Dataset, DatasetSpec, Scenario};

use super::eval::{evaluate_model, EvalConfig};
use super::sampling::{reference_pairs, ReferencePolicy};
use super::train::{build_model, train, LrSchedule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    FocalSweep,
    #[serde(rename = "ablation_2d_vs_3d")]
    Ablation2dVs3d,
    Full,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::FocalSweep => "focal_sweep",
            Preset::Ablation2dVs3d => "ablation_2d_vs_3d",
            Preset::Full => "full",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focal_sweep" => Ok(Preset::FocalSweep),
            "ablation_2d_vs_3d" | "ablation" => Ok(Preset::Ablation2dVs3d),
            "full" => Ok(Preset::Full),
            _ => Err(Error::InvalidArgument {
                arg: "preset",
                reason: format!("unknown preset `{s}` (focal_sweep, ablation_2d_vs_3d, full)"),
            }),
        }
    }
}

/// Desk-scale training recipe shared by the presets.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        lr: LrSchedule {
            initial: 1e-2,
            decayed: 1e-3,
            boundary: 8,
        },
        samples_per_epoch: Some(2400),
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub dataset: DatasetSpec,
    /// Leading sequences used for training; the rest are held out.
    pub train_sequences: usize,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gammas: Vec<f64>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = desk_train_config();
        Self {
            preset,
            dataset: DatasetSpec::blur_heavy(200, 2024),
            train_sequences: 150,
            seeds: vec![1, 2, 3],
            train,
            eval: EvalConfig {
                iou_threshold: 0.5,
                ..EvalConfig::default()
            },
            gammas: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }

    /// `(label, config)` of every variant, seed unset.
    pub fn variants(&self) -> Vec<(String, TrainConfig)> {
        let mut out = Vec::new();
        if matches!(self.preset, Preset::FocalSweep | Preset::Full) {
            for &g in &self.gammas {
                let mut c = self.train.clone();
                c.loss.focal.gamma = g;
                out.push((format!("gamma={g}"), c));
            }
        }
        if matches!(self.preset, Preset::Ablation2dVs3d | Preset::Full) {
            for (label, mode) in [("3d", TemporalMode::Conv3d), ("2d", TemporalMode::Center2d)] {
                let mut c = self.train.clone();
                c.model.temporal_mode = mode;
                out.push((label.to_string(), c));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub preset: Preset,
    pub variant: String,
    /// `None` on the per-variant mean row.
    pub seed: Option<u64>,
    pub config_hash: String,
    pub map: f64,
    pub per_scenario: BTreeMap<Scenario, f64>,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn mean(&self, variant: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("preset,variant,seed,config_hash,map");
        for sc in Scenario::ALL {
            s.push(',');
            s.push_str(sc.as_str());
        }
        s.push_str(",train_seconds\n");
        for r in &self.rows {
            let seed = r.seed.map(|v| v.to_string()).unwrap_or_else(|| "mean".into());
            s.push_str(&format!("{},{},{},{},{:.6}", r.preset, r.variant, seed, r.config_hash, r.map));
            for sc in Scenario::ALL {
                match r.per_scenario.get(&sc) {
                    Some(v) => s.push_str(&format!(",{v:.6}")),
                    None => s.push(','),
                }
            }
            s.push_str(&format!(",{:.1}\n", r.train_seconds));
        }
        s
    }
}

fn mean_row(preset: Preset, variant: &str, hash: &str, runs: &[ExperimentRow]) -> ExperimentRow {
    let n = runs.len() as f64;
    let mut per_scenario = BTreeMap::new();
    for sc in Scenario::ALL {
        let v: Vec<f64> = runs.iter().filter_map(|r| r.per_scenario.get(&sc).copied()).collect();
        if v.len() == runs.len() && !v.is_empty() {
            per_scenario.insert(sc, v.iter().sum::<f64>() / n);
        }
    }
    ExperimentRow {
        preset,
        variant: variant.to_string(),
        seed: None,
        config_hash: hash.to_string(),
        map: runs.iter().map(|r| r.map).sum::<f64>() / n,
        per_scenario,
        train_seconds: runs.iter().map(|r| r.train_seconds).sum(),
    }
}

/// Trains and evaluates one configuration; returns the held-out report row.
pub fn run_variant(
    preset: Preset,
    label: &str,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    eval: &EvalConfig,
    out: Option<&Path>,
) -> Result<ExperimentRow> {
    let start = Instant::now();
    let mut model = build_model(cfg, train_set)?;
    train(&mut model, train_set, cfg, out)?;
    let secs = start.elapsed().as_secs_f64();
    let pairs = reference_pairs(test_set, ReferencePolicy::All);
    let report = evaluate_model(&model, test_set, &pairs, eval)?;
    let hash = TrainConfig { seed: 0, ..cfg.clone() }.hash();
    log::info!("{preset} {label} seed {}: mAP {:.4} in {secs:.0}s", cfg.seed, report.map);
    Ok(ExperimentRow {
        preset,
        variant: label.to_string(),
        seed: Some(cfg.seed),
        config_hash: hash,
        map: report.map,
        per_scenario: report.per_scenario,
        train_seconds: secs,
    })
}

/// Runs every variant for every seed on one benchmark build. With `out`,
/// each run's log and model land in `out/<variant>_seed<k>/` and the table
/// in `out/results.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentTable> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    let data = build_dataset(&cfg.dataset)?;
    if cfg.train_sequences == 0 || cfg.train_sequences >= data.len() {
        return Err(Error::Config(format!(
            "train split of {} leaves no held-out sequences out of {}",
            cfg.train_sequences,
            data.len()
        )));
    }
    let (train_set, test_set) = data.split(cfg.train_sequences);
    let mut table = ExperimentTable::default();
    for (label, base) in cfg.variants() {
        let mut runs = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let run_cfg = TrainConfig { seed, ..base.clone() };
            let dir = out.map(|o| o.join(format!("{label}_seed{seed}")));
            runs.push(run_variant(cfg.preset, &label, &run_cfg, &train_set, &test_set, &cfg.eval, dir.as_deref())?);
        }
        let hash = runs[0].config_hash.clone();
        let mean = mean_row(cfg.preset, &label, &hash, &runs);
        table.rows.extend(runs);
        table.rows.push(mean);
    }
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        let p = o.join("results.csv");
        std::fs::write(&p, table.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in [Preset::FocalSweep, Preset::Ablation2dVs3d, Preset::Full] {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn variants_per_preset() {
        assert_eq!(ExperimentConfig::preset(Preset::FocalSweep).variants().len(), 5);
        assert_eq!(ExperimentConfig::preset(Preset::Ablation2dVs3d).variants().len(), 2);
        assert_eq!(ExperimentConfig::preset(Preset::Full).variants().len(), 7);
    }

    #[test]
    fn hash_ignores_nothing_but_is_stable() {
        let v = ExperimentConfig::preset(Preset::FocalSweep).variants();
        assert_ne!(v[0].1.hash(), v[1].1.hash());
        assert_eq!(v[0].1.hash(), v[0].1.clone().hash());
    }
}
