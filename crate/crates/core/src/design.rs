//! Quantization table design: split bands into original-favored (OF) and
//! adversarial-favored (AF) sets by their deviation ratio, then search
//! `(k, qs_af)` jointly against an evaluator.

use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{defend, CodecConfig};
use crate::error::{Error, Result};
use crate::image::{ColorPath, ImageBuffer, BLOCK_LEN};
use crate::metrics::{psnr, suppression};
use crate::perturb::MAX_EPS;
use crate::quant::{QuantTable, MAX_STEP};
use crate::stats::BandRatio;

/// Cumulative anti-diagonal sizes: `T[k - 1]` bands are OF for pattern `k`.
pub const OF_SIZES: [usize; 15] = [1, 3, 6, 10, 15, 21, 28, 36, 43, 49, 54, 58, 61, 63, 64];
pub const K_MAX: u8 = 15;
/// Benign accuracy drop must stay strictly below this.
pub const ACC_DEC_LIMIT: f64 = 0.01;
pub const DEFAULT_PSNR_TAU: f64 = 28.0;

/// `1, 6, 11, ..., 116`.
pub fn qs_af_grid() -> impl Iterator<Item = u16> + Clone {
    (1..=116).step_by(5)
}

pub fn k_grid() -> impl Iterator<Item = u8> + Clone {
    1..=K_MAX
}

/// `round(16 * 255 * eps)`, at least 1 and at most 255.
pub fn qs_of_from_eps(eps: f64) -> Result<u16> {
    if !(eps > 0.0 && eps <= MAX_EPS) {
        return Err(Error::InvalidArgument(format!(
            "eps {eps} outside (0, {MAX_EPS}]"
        )));
    }
    Ok((16.0 * 255.0 * eps).round().clamp(1.0, f64::from(MAX_STEP)) as u16)
}

fn check_k(k: u8) -> Result<()> {
    if !(1..=K_MAX).contains(&k) {
        return Err(Error::InvalidArgument(format!("k {k} outside [1, {K_MAX}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandPartition {
    k: u8,
    of_mask: [bool; BLOCK_LEN],
}

impl BandPartition {
    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn is_of(&self, band: usize) -> bool {
        self.of_mask[band]
    }

    /// OF band indices, ascending.
    pub fn of_set(&self) -> Vec<usize> {
        (0..BLOCK_LEN).filter(|&b| self.of_mask[b]).collect()
    }

    pub fn af_set(&self) -> Vec<usize> {
        (0..BLOCK_LEN).filter(|&b| !self.of_mask[b]).collect()
    }
}

/// The first `T(k)` bands of the ascending ratio order are OF. DC is always
/// OF; if the ratio order would leave it out, it replaces the last
/// (highest-ratio) OF member.
pub fn build_partition(ratio: &BandRatio, k: u8) -> Result<BandPartition> {
    check_k(k)?;
    ratio.validate()?;
    let n = OF_SIZES[usize::from(k) - 1];
    let mut of: Vec<usize> = ratio.order[..n].to_vec();
    if !of.contains(&0) {
        of[n - 1] = 0;
    }
    let mut of_mask = [false; BLOCK_LEN];
    for b in of {
        of_mask[b] = true;
    }
    Ok(BandPartition { k, of_mask })
}

pub fn build_table(p: &BandPartition, qs_of: u16, qs_af: u16) -> Result<QuantTable> {
    let natural = std::array::from_fn(|b| if p.is_of(b) { qs_of } else { qs_af });
    QuantTable::from_natural(natural)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub eps: f64,
    pub k: u8,
    pub qs_of: u16,
    pub qs_af: u16,
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        check_k(self.k)?;
        for (name, v) in [("qs_of", self.qs_of), ("qs_af", self.qs_af)] {
            if !(1..=MAX_STEP).contains(&v) {
                return Err(Error::Validation(format!("{name}: {v} outside [1, {MAX_STEP}]")));
            }
        }
        if !(0.0..=MAX_EPS).contains(&self.eps) {
            return Err(Error::Validation(format!("eps: {} outside [0, {MAX_EPS}]", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_dec: f64,
    pub def_eff: f64,
    /// Free-form label for what `def_eff` measures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
}

impl EvalReport {
    pub fn new(acc_dec: f64, def_eff: f64) -> Self {
        Self { acc_dec, def_eff, metric: None }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("acc_dec", self.acc_dec), ("def_eff", self.def_eff)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name}: {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn feasible(&self) -> bool {
        self.acc_dec < ACC_DEC_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPoint {
    pub k: u8,
    pub qs_af: u16,
}

/// Scores one candidate table. Implementations own whatever corpora they
/// need and must be safe to call from several threads.
pub trait Evaluator: Sync {
    fn evaluate(&self, point: GridPoint, table: &QuantTable) -> Result<EvalReport>;
}

impl<F> Evaluator for F
where
    F: Fn(GridPoint, &QuantTable) -> Result<EvalReport> + Sync,
{
    fn evaluate(&self, point: GridPoint, table: &QuantTable) -> Result<EvalReport> {
        self(point, table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub k: u8,
    pub qs_af: u16,
    pub acc_dec: f64,
    pub def_eff: f64,
}

/// Contents of `design.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub format: u32,
    pub eps: f64,
    pub k: u8,
    pub qs_of: u16,
    pub qs_af: u16,
    #[serde(with = "crate::stats::band_array")]
    pub order: [usize; BLOCK_LEN],
    pub report: EvalReport,
    /// Set when no grid point met the accuracy constraint.
    pub infeasible: bool,
    pub grid: Vec<GridEntry>,
}

impl Design {
    pub fn config(&self) -> DesignConfig {
        DesignConfig {
            eps: self.eps,
            k: self.k,
            qs_of: self.qs_of,
            qs_af: self.qs_af,
        }
    }

    /// Rebuilds the chosen table from the stored order.
    pub fn table(&self) -> Result<QuantTable> {
        let ratio = order_only(self.order)?;
        build_table(&build_partition(&ratio, self.k)?, self.qs_of, self.qs_af)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != 1 {
            return Err(Error::Validation(format!("format: unsupported version {}", self.format)));
        }
        self.config().validate()?;
        order_only(self.order)?;
        self.report.validate().map_err(|e| Error::Validation(format!("report.{e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let d: Design = crate::json::read_json(path)?;
        d.validate()?;
        Ok(d)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::json::write_json(path, self)
    }
}

// A ratio carrying only an order, for rebuilding partitions.
fn order_only(order: [usize; BLOCK_LEN]) -> Result<BandRatio> {
    let mut ratio = [0.0; BLOCK_LEN];
    for (rank, &b) in order.iter().enumerate() {
        if b >= BLOCK_LEN {
            return Err(Error::Validation(format!("order[{rank}]: band {b} out of range")));
        }
        ratio[b] = 1.0 + rank as f64;
    }
    let r = BandRatio::from_ratios(ratio)?;
    if r.order != order {
        return Err(Error::Validation("order: not a permutation of 0..63".into()));
    }
    Ok(r)
}

/// Picks the winning grid entry. Feasible entries compete on `def_eff`;
/// without any, the lowest `acc_dec` wins, then `def_eff`. Remaining ties go
/// to the smaller `qs_af`, then the smaller `k`. Returns the index and
/// whether the pick is infeasible.
pub fn select(grid: &[GridEntry]) -> Option<(usize, bool)> {
    let feasible = |e: &GridEntry| e.acc_dec < ACC_DEC_LIMIT;
    let any_feasible = grid.iter().any(feasible);
    let better = |a: &GridEntry, b: &GridEntry| -> bool {
        // true if a beats b
        if !any_feasible && a.acc_dec != b.acc_dec {
            return a.acc_dec < b.acc_dec;
        }
        if a.def_eff != b.def_eff {
            return a.def_eff > b.def_eff;
        }
        (a.qs_af, a.k) < (b.qs_af, b.k)
    };
    let mut best: Option<usize> = None;
    for (i, e) in grid.iter().enumerate() {
        if any_feasible && !feasible(e) {
            continue;
        }
        if best.is_none_or(|b| better(e, &grid[b])) {
            best = Some(i);
        }
    }
    best.map(|i| (i, !any_feasible))
}

/// Exhaustive search over `k in 1..=15` and `qs_af in 1, 6, ..., 116`.
/// Points are evaluated in parallel; the result does not depend on
/// scheduling. An evaluator failure aborts the search and names the first
/// failing point in grid order (`qs_af` outer, `k` inner).
pub fn optimize(ratio: &BandRatio, eps: f64, evaluator: &dyn Evaluator) -> Result<Design> {
    let qs_of = qs_of_from_eps(eps)?;
    let partitions: Vec<BandPartition> = k_grid()
        .map(|k| build_partition(ratio, k))
        .collect::<Result<_>>()?;
    let points: Vec<GridPoint> = qs_af_grid()
        .flat_map(|qs_af| k_grid().map(move |k| GridPoint { k, qs_af }))
        .collect();

    let results: Vec<Result<EvalReport>> = points
        .par_iter()
        .map(|&p| {
            let table = build_table(&partitions[usize::from(p.k) - 1], qs_of, p.qs_af)?;
            let report = evaluator.evaluate(p, &table)?;
            report.validate()?;
            Ok(report)
        })
        .collect();

    let mut grid = Vec::with_capacity(points.len());
    let mut reports = Vec::with_capacity(points.len());
    for (p, r) in points.iter().zip(results) {
        let report = r.map_err(|e| Error::Evaluator {
            k: p.k,
            qs_af: p.qs_af,
            message: e.to_string(),
        })?;
        grid.push(GridEntry {
            k: p.k,
            qs_af: p.qs_af,
            acc_dec: report.acc_dec,
            def_eff: report.def_eff,
        });
        reports.push(report);
    }
    let (best, infeasible) = select(&grid).expect("grid is non-empty");
    Ok(Design {
        format: 1,
        eps,
        k: grid[best].k,
        qs_of,
        qs_af: grid[best].qs_af,
        order: ratio.order,
        report: reports.swap_remove(best),
        infeasible,
        grid,
    })
}

/// Built-in proxy objective: `def_eff` is the mean perturbation-energy
/// suppression over benign/adversarial pairs and `acc_dec` the fraction of
/// benign images whose defended PSNR falls below `tau`.
#[derive(Debug, Clone)]
pub struct SignalEvaluator {
    benign: Vec<ImageBuffer>,
    adv: Vec<ImageBuffer>,
    pub color_path: ColorPath,
    pub tau: f64,
}

impl SignalEvaluator {
    pub fn new(benign: Vec<ImageBuffer>, adv: Vec<ImageBuffer>) -> Result<Self> {
        if benign.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        if benign.len() != adv.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} benign images but {} adversarial",
                benign.len(),
                adv.len()
            )));
        }
        for (i, (b, a)) in benign.iter().zip(&adv).enumerate() {
            if (b.width(), b.height()) != (a.width(), a.height()) {
                return Err(Error::DimensionMismatch(format!(
                    "pair {i}: {}x{} vs {}x{}",
                    b.width(),
                    b.height(),
                    a.width(),
                    a.height()
                )));
            }
        }
        Ok(Self {
            benign,
            adv,
            color_path: ColorPath::Rgb,
            tau: DEFAULT_PSNR_TAU,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_color_path(mut self, path: ColorPath) -> Self {
        self.color_path = path;
        self
    }

    pub fn len(&self) -> usize {
        self.benign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.benign.is_empty()
    }

    /// Scores an arbitrary codec configuration on this corpus.
    pub fn evaluate_config(&self, cfg: &CodecConfig) -> Result<EvalReport> {
        let per_pair: Vec<(f64, bool)> = self
            .benign
            .par_iter()
            .zip(self.adv.par_iter())
            .map(|(b, a)| {
                let db = defend(b, cfg)?;
                let da = defend(a, cfg)?;
                Ok((suppression(b, a, &db, &da)?, psnr(b, &db)? < self.tau))
            })
            .collect::<Result<_>>()?;
        let n = per_pair.len() as f64;
        Ok(EvalReport {
            acc_dec: per_pair.iter().filter(|p| p.1).count() as f64 / n,
            def_eff: per_pair.iter().map(|p| p.0).sum::<f64>() / n,
            metric: Some("suppression".into()),
        })
    }
}

impl Evaluator for SignalEvaluator {
    fn evaluate(&self, _point: GridPoint, table: &QuantTable) -> Result<EvalReport> {
        self.evaluate_config(&CodecConfig::custom(*table, self.color_path))
    }
}

/// Runs `program args.. --benign-dir B --adv-dir A --table T` per grid point
/// and parses the first non-empty stdout line as an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub benign_dir: PathBuf,
    pub adv_dir: PathBuf,
}

impl ExternalEvaluator {
    pub fn new(program: impl Into<PathBuf>, benign_dir: impl Into<PathBuf>, adv_dir: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            benign_dir: benign_dir.into(),
            adv_dir: adv_dir.into(),
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, _point: GridPoint, table: &QuantTable) -> Result<EvalReport> {
        let file = tempfile::Builder::new()
            .prefix("table-")
            .suffix(".json")
            .tempfile()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        std::fs::write(file.path(), table.to_json()).map_err(|e| Error::io(file.path(), e))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg("--benign-dir")
            .arg(&self.benign_dir)
            .arg("--adv-dir")
            .arg(&self.adv_dir)
            .arg("--table")
            .arg(file.path())
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(Error::Validation(format!(
                "evaluator exited with {}: {}",
                out.status,
                stderr.trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Validation("evaluator printed nothing".into()))?;
        let report: EvalReport = crate::json::from_str_with_path(line)?;
        report.validate()?;
        Ok(report)
    }
}
