//! The (λ1, λ2) grid: one MAFE training run and held-out PSNR per cell.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Result;
use mcdm_core::mafe::LossWeights;
use serde::{Deserialize, Serialize};

use crate::run::RunContext;
use crate::stages::{derive_seed, fit_mafe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self { lambda1: vec![0., 1., 5., 10.], lambda2: vec![0., 0.005, 0.01, 0.05, 0.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Held-out middle-frame PSNR; `None` when training failed or diverged.
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: AblationGrid,
    pub steps: usize,
    /// Row-major over `lambda1` then `lambda2`.
    pub cells: Vec<AblationCell>,
    pub baseline_psnr: f64,
}

impl AblationTable {
    pub fn cell(&self, i: usize, j: usize) -> &AblationCell {
        &self.cells[i * self.grid.lambda2.len() + j]
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| λ1 \\ λ2 |");
        for l2 in &self.grid.lambda2 {
            let _ = write!(s, " {l2} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.grid.lambda2.len()));
        s.push('\n');
        for (i, l1) in self.grid.lambda1.iter().enumerate() {
            let _ = write!(s, "| {l1} |");
            for j in 0..self.grid.lambda2.len() {
                match self.cell(i, j).psnr {
                    Some(p) => {
                        let _ = write!(s, " {p:.2} |");
                    }
                    None => s.push_str(" failed |"),
                }
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nheld-out PSNR in dB after {} steps; (I0+I1)/2 baseline {:.2} dB", self.steps, self.baseline_psnr);
        s
    }
}

fn run_cell(ctx: &RunContext, l1: f64, l2: f64, steps: usize) -> AblationCell {
    let mut cfg = ctx.config.mafe.train(derive_seed(ctx.config.seed, "mafe"));
    cfg.steps = steps;
    cfg.weights = LossWeights { lambda1: l1, lambda2: l2 };
    match fit_mafe(ctx, &cfg, derive_seed(ctx.config.seed, "mafe-init")) {
        Ok(fit) if fit.summary.held_out.psnr.is_finite() && fit.summary.final_eval_loss.total.is_finite() => {
            AblationCell { lambda1: l1, lambda2: l2, psnr: Some(fit.summary.held_out.psnr), error: None }
        }
        Ok(_) => AblationCell { lambda1: l1, lambda2: l2, psnr: None, error: Some("non-finite result".into()) },
        Err(e) => {
            log::warn!("ablation cell ({l1}, {l2}) failed: {e:#}");
            AblationCell { lambda1: l1, lambda2: l2, psnr: None, error: Some(format!("{e:#}")) }
        }
    }
}

/// Trains every cell; failed cells are recorded and the run continues.
pub fn run_ablation(ctx: &RunContext, grid: &AblationGrid) -> Result<AblationTable> {
    let steps = ctx.config.ablation.steps.unwrap_or(ctx.config.mafe.steps);
    let jobs: Vec<(f64, f64)> = grid.lambda1.iter().flat_map(|&a| grid.lambda2.iter().map(move |&b| (a, b))).collect();
    let results: Mutex<Vec<Option<AblationCell>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = ctx.config.ablation.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(l1, l2)) = jobs.get(k) else { break };
                log::info!("ablation cell {}/{}: λ1={l1} λ2={l2}", k + 1, jobs.len());
                let cell = run_cell(ctx, l1, l2, steps);
                results.lock().expect("no poisoned workers")[k] = Some(cell);
            });
        }
    });
    let cells = results.into_inner().expect("no poisoned workers").into_iter().map(|c| c.expect("every job ran")).collect();
    let baseline = crate::stages::baseline_psnr(ctx)?;
    let table = AblationTable { grid: grid.clone(), steps, cells, baseline_psnr: baseline };
    std::fs::write(ctx.path("ablation.json"), serde_json::to_string_pretty(&table)?)?;
    std::fs::write(ctx.path("ablation.md"), table.to_markdown())?;
    Ok(table)
}
