//! Configuration grid over interaction mode, branches, bank and depth.

use std::fmt::Write as _;
use std::io::Write;

use log::info;
use serde::{Deserialize, Serialize};

use cycleacr_core::model::InteractionMode;
use cycleacr_core::synth::SceneSpec;
use cycleacr_core::Real;

use crate::config::{RunConfig, SplitConfig};
use crate::data::Dataset;
use crate::train::train;
use crate::{HarnessError, Result};

/// Where the grid's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub scene: SceneSpec,
    pub count: usize,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub base: RunConfig,
    pub data: DataConfig,
    pub modes: Vec<InteractionMode>,
    /// `(use_local, use_global)` pairs; ignored by the C2A mode.
    pub branches: Vec<(bool, bool)>,
    pub banks: Vec<bool>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// The full grid: every mode, branch subset, bank setting and depth 1-3.
    pub fn full(base: RunConfig, data: DataConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            data,
            modes: InteractionMode::ALL.to_vec(),
            branches: vec![(true, true), (true, false), (false, true)],
            banks: vec![false, true],
            depths: vec![1, 2, 3],
            seeds,
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            let branches: Vec<(bool, bool)> = if mode == InteractionMode::C2a {
                vec![(true, true)]
            } else {
                self.branches.iter().copied().filter(|&(l, g)| l || g).collect()
            };
            for &(use_local, use_global) in &branches {
                for &use_bank in &self.banks {
                    for &depth in &self.depths {
                        out.push(Cell {
                            mode,
                            use_local,
                            use_global,
                            use_bank,
                            depth,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: InteractionMode,
    pub use_local: bool,
    pub use_global: bool,
    pub use_bank: bool,
    pub depth: usize,
}

impl Cell {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.model.mode = self.mode;
        cfg.model.cycle.use_local = self.use_local;
        cfg.model.cycle.use_global = self.use_global;
        cfg.model.cycle.layers = self.depth;
        cfg.model.use_bank = self.use_bank;
        cfg
    }

    pub fn label(&self) -> String {
        let branches = match (self.mode, self.use_local, self.use_global) {
            (InteractionMode::C2a, _, _) => "-",
            (_, true, true) => "local+global",
            (_, true, false) => "local",
            _ => "global",
        };
        format!(
            "{} {} bank={} depth={}",
            self.mode.as_str(),
            branches,
            if self.use_bank { "on" } else { "off" },
            self.depth
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub maps: Vec<Real>,
    pub mean: Real,
    pub std: Real,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[Real]) -> (Real, Real) {
    if xs.is_empty() {
        return (Real::NAN, Real::NAN);
    }
    let n = xs.len() as Real;
    let mean = xs.iter().sum::<Real>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train one cell once per seed and collect validation mAP.
pub fn run_cell(base: &RunConfig, cell: Cell, seeds: &[u64], train_set: &Dataset, val: &Dataset) -> Result<CellResult> {
    let mut maps = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = RunConfig { seed, ..cell.apply(base) };
        let trained = train(&cfg, train_set, None)?;
        let report = crate::eval::evaluate(&trained.checkpoint.model, val, cfg.confidence_threshold)?;
        info!("{} seed {seed}: mAP {:.4}", cell.label(), report.map);
        maps.push(report.map);
    }
    let (mean, std) = mean_std(&maps);
    Ok(CellResult { cell, maps, mean, std })
}

pub fn run(grid: &AblationGrid) -> Result<Vec<CellResult>> {
    if grid.seeds.is_empty() {
        return Err(HarnessError::Config("the ablation grid needs at least one seed".into()));
    }
    let base = Dataset::generate(&grid.data.scene, grid.data.count, grid.base.model.roi_hw)?;
    let (train_set, val) = base.split(&grid.data.split)?;
    grid.cells()
        .into_iter()
        .map(|cell| run_cell(&grid.base, cell, &grid.seeds, &train_set, &val))
        .collect()
}

pub fn write_csv<W: Write>(results: &[CellResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "local", "global", "bank", "depth", "seeds", "mean_map", "std_map", "maps"])?;
    for r in results {
        let maps: Vec<String> = r.maps.iter().map(|m| format!("{m:.6}")).collect();
        out.write_record([
            r.cell.mode.as_str().to_owned(),
            r.cell.use_local.to_string(),
            r.cell.use_global.to_string(),
            r.cell.use_bank.to_string(),
            r.cell.depth.to_string(),
            r.maps.len().to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
            maps.join(";"),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::Io {
        path: "ablation table".into(),
        source: e,
    })?;
    Ok(())
}

/// Plain-text tables: interaction mode, components, bank and depth, each
/// holding the other factors at the reference setting (cycle, both
/// branches, bank off, depth 2) where available.
pub fn render_tables(results: &[CellResult]) -> String {
    let find = |mode, l, g, bank, depth| {
        results.iter().find(|r| {
            r.cell.mode == mode
                && (mode == InteractionMode::C2a || (r.cell.use_local == l && r.cell.use_global == g))
                && r.cell.use_bank == bank
                && r.cell.depth == depth
        })
    };
    let fmt = |r: Option<&CellResult>| r.map_or("n/a".to_owned(), |r| format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std));
    let mut s = String::new();
    let _ = writeln!(s, "Interaction mode        mAP");
    for m in InteractionMode::ALL {
        let _ = writeln!(s, "  {:<20}  {}", m.as_str(), fmt(find(m, true, true, false, 2)));
    }
    let _ = writeln!(s, "Components (local, global)");
    for (l, g) in [(true, false), (false, true), (true, true)] {
        let _ = writeln!(s, "  {:<20}  {}", format!("{l} {g}"), fmt(find(InteractionMode::Cycle, l, g, false, 2)));
    }
    let _ = writeln!(s, "Memory bank");
    for b in [false, true] {
        let _ = writeln!(s, "  {:<20}  {}", if b { "on" } else { "off" }, fmt(find(InteractionMode::Cycle, true, true, b, 2)));
    }
    let _ = writeln!(s, "Depth");
    for d in 1..=3 {
        let _ = writeln!(s, "  {:<20}  {}", d, fmt(find(InteractionMode::Cycle, true, true, false, d)));
    }
    s
}
