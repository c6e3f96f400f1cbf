//! Churn statistics and group sizing: the Skellam law of net node change,
//! Monte Carlo estimates of the group decoding-failure probability f(k, N),
//! a persisted failure table with log-linear extrapolation, and the table
//! lookup that picks k_m.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::degree::{encoding_distribution, DegreeDistribution};
use crate::error::SizingError;
use crate::protocol::{ChurnModel, EpsilonSchedule, GroupSpec, Network, PayloadMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkellamParams {
    pub lambda_leave: f64,
    pub lambda_join: f64,
    pub gamma: f64,
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - ln_factorial(k)).exp()
}

/// Pr(Δ = s) where Δ = joins − leaves over `gamma` epochs.
pub fn skellam_pmf(s: i64, p: &SkellamParams) -> f64 {
    let mu_e = p.gamma * p.lambda_join;
    let mu_l = p.gamma * p.lambda_leave;
    if mu_e == 0.0 {
        return if s <= 0 { poisson_pmf(s.unsigned_abs(), mu_l) } else { 0.0 };
    }
    if mu_l == 0.0 {
        return if s >= 0 { poisson_pmf(s as u64, mu_e) } else { 0.0 };
    }
    // Sum over j leaves with j + s joins, in log space.
    let (ln_e, ln_l) = (mu_e.ln(), mu_l.ln());
    let j0 = (-s).max(0) as u64;
    let joins0 = (j0 as i64 + s) as u64;
    let mut lt = joins0 as f64 * ln_e + j0 as f64 * ln_l - ln_factorial(joins0) - ln_factorial(j0) - mu_e - mu_l;
    let mut logs = Vec::new();
    let mut max = f64::NEG_INFINITY;
    let mut j = j0;
    loop {
        logs.push(lt);
        max = max.max(lt);
        let joins = (j as i64 + s) as u64;
        let ratio = mu_e * mu_l / ((joins + 1) as f64 * (j + 1) as f64);
        if ratio < 1.0 && lt < max - 41.5 {
            break;
        }
        lt += ratio.ln();
        j += 1;
    }
    max.exp() * logs.iter().map(|l| (l - max).exp()).sum::<f64>()
}

/// Parameters of one failure-probability experiment (everything but k, N).
#[derive(Debug, Clone, PartialEq)]
pub struct FailureModel {
    pub c: f64,
    pub delta: f64,
    pub precode_rate: f64,
    pub churn: ChurnModel,
    /// Epochs simulated before the probe decode; may be fractional.
    pub horizon: f64,
    pub schedule: EpsilonSchedule,
}

impl FailureModel {
    pub fn code_length(&self, k: usize) -> usize {
        ((k as f64 / self.precode_rate).round() as usize).max(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureEstimate {
    pub trials: u64,
    pub failures: u64,
    pub estimate: f64,
    /// Wilson 95% interval half-width.
    pub ci_halfwidth: f64,
}

impl FailureEstimate {
    pub fn from_counts(trials: u64, failures: u64) -> Self {
        let n = trials as f64;
        let p = if trials == 0 { 0.0 } else { failures as f64 / n };
        let ci_halfwidth = if trials == 0 {
            1.0
        } else {
            let z = 1.959_963_984_540_054;
            z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / (1.0 + z * z / n)
        };
        FailureEstimate {
            trials,
            failures,
            estimate: p,
            ci_halfwidth,
        }
    }

    pub fn upper(&self) -> f64 {
        (self.estimate + self.ci_halfwidth).min(1.0)
    }
}

/// Private stream for trial `trial` of cell (nodes, k).
pub fn trial_seed(master: u64, nodes: usize, k: usize, trial: u64) -> u64 {
    let mut x = master;
    for v in [nodes as u64, k as u64, trial] {
        x = splitmix(x ^ splitmix(v));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One trial: encode a group of size k over `nodes` nodes, run churn with the
/// NMA for the horizon, then probe-decode. Returns true on failure.
pub fn failure_trial(k: usize, nodes: usize, model: &FailureModel, omega: &Arc<DegreeDistribution>, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.code_length(k);
    let mut net = Network::with_nodes(PayloadMode::Structural, nodes);
    net.register_group(GroupSpec {
        seq: 0,
        k,
        n,
        omega: omega.clone(),
        generator: None,
        intermediates: None,
    });
    net.assign_encoding(0, &mut rng);
    let whole = model.horizon.floor() as u64;
    let frac = model.horizon - whole as f64;
    for _ in 0..whole {
        let r = net.churn_step(&model.churn, &mut rng, &model.schedule);
        if r.network_died || net.is_group_lost(0) {
            return true;
        }
    }
    if frac > 0.0 {
        let r = net.churn_step(&model.churn.scaled(frac), &mut rng, &model.schedule);
        if r.network_died {
            return true;
        }
    }
    !net.probe_decode(0)
}

/// Ω for a group of k originals. Groups too small for a robust soliton
/// (tiny n) fall back to plain replication: every block is a copy.
pub fn encoding_omega(k: usize, model: &FailureModel) -> Result<Arc<DegreeDistribution>, SizingError> {
    let n = model.code_length(k);
    match encoding_distribution(n, model.c, model.delta) {
        Ok(d) => Ok(Arc::new(d)),
        Err(_) if n <= 4 => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            Ok(Arc::new(DegreeDistribution::from_weights(&w)?))
        }
        Err(e) => Err(e.into()),
    }
}

/// Monte Carlo estimate of f(k, N). Trials run on the current rayon pool.
pub fn estimate_failure(
    k: usize,
    nodes: usize,
    model: &FailureModel,
    trials: u64,
    seed: u64,
) -> Result<FailureEstimate, SizingError> {
    estimate_failure_capped(k, nodes, model, trials, u64::MAX, seed)
}

/// Like [`estimate_failure`], but stops early once `cap` failures are seen.
/// Trials run in fixed chunks, so the stopping point does not depend on
/// thread count.
pub fn estimate_failure_capped(
    k: usize,
    nodes: usize,
    model: &FailureModel,
    trials: u64,
    cap: u64,
    seed: u64,
) -> Result<FailureEstimate, SizingError> {
    if k == 0 || k > nodes {
        return Err(SizingError::Domain(format!("need 1 <= k <= N, got k={k}, N={nodes}")));
    }
    if trials == 0 {
        return Err(SizingError::Domain("trials must be >= 1".into()));
    }
    let omega = encoding_omega(k, model)?;
    let (mut done, mut failures) = (0u64, 0u64);
    while done < trials && failures < cap {
        let end = (done + CHUNK).min(trials);
        failures += (done..end)
            .into_par_iter()
            .filter(|&t| failure_trial(k, nodes, model, &omega, trial_seed(seed, nodes, k, t)))
            .count() as u64;
        done = end;
    }
    Ok(FailureEstimate::from_counts(done, failures))
}

const CHUNK: u64 = 32;

/// Group sizes simulated for a given network size.
#[derive(Debug, Clone, PartialEq)]
pub enum KGrid {
    Absolute(Vec<usize>),
    /// k = round(ratio * N).
    Ratios(Vec<f64>),
}

impl KGrid {
    pub fn for_nodes(&self, nodes: usize) -> Vec<usize> {
        let mut ks: Vec<usize> = match self {
            KGrid::Absolute(v) => v.clone(),
            KGrid::Ratios(r) => r.iter().map(|x| (x * nodes as f64).round() as usize).collect(),
        };
        ks.retain(|&k| k >= 1 && k <= nodes);
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn is_empty(&self) -> bool {
        match self {
            KGrid::Absolute(v) => v.is_empty(),
            KGrid::Ratios(v) => v.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableCell {
    pub raw: FailureEstimate,
    /// Isotonic (non-decreasing in k) estimate.
    pub estimate: f64,
    /// Isotonic upper confidence bound.
    pub upper: f64,
}

/// log10 f = intercept + slope * k, valid below `k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Smallest k with an observed failure; extrapolation applies below it.
    pub k_max: usize,
    pub points: usize,
}

impl LogLinearFit {
    pub fn log10_f(&self, k: f64) -> f64 {
        self.intercept + self.slope * k
    }

    /// Largest real k with predicted f <= zeta.
    pub fn k_for(&self, zeta: f64) -> f64 {
        (zeta.log10() - self.intercept) / self.slope
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FailureTable {
    pub horizon: f64,
    pub cells: BTreeMap<(usize, usize), TableCell>,
    pub fits: BTreeMap<usize, LogLinearFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBuild {
    pub nodes: Vec<usize>,
    pub ks: KGrid,
    /// Trials per cell.
    pub budget: u64,
    pub seed: u64,
    /// Stop descending in k after this many consecutive zero-failure cells.
    pub zero_run: usize,
    /// A cell stops early once it has seen this many failures.
    pub failure_cap: u64,
}

pub fn build_failure_table(build: &TableBuild, model: &FailureModel) -> Result<FailureTable, SizingError> {
    if build.nodes.is_empty() || build.ks.is_empty() {
        return Err(SizingError::Domain("failure table grids must be nonempty".into()));
    }
    if build.budget == 0 {
        return Err(SizingError::Domain("budget must be >= 1 trial per cell".into()));
    }
    let mut table = FailureTable {
        horizon: model.horizon,
        ..Default::default()
    };
    for &nodes in &build.nodes {
        let mut zeros = 0;
        for &k in build.ks.for_nodes(nodes).iter().rev() {
            let est = estimate_failure_capped(k, nodes, model, build.budget, build.failure_cap.max(1), build.seed)?;
            table.cells.insert(
                (nodes, k),
                TableCell {
                    raw: est,
                    estimate: est.estimate,
                    upper: est.upper(),
                },
            );
            zeros = if est.failures == 0 { zeros + 1 } else { 0 };
            if zeros >= build.zero_run.max(1) {
                break;
            }
        }
    }
    table.cleanup();
    table.refit();
    Ok(table)
}

/// Pool-adjacent-violators: weighted non-decreasing fit.
fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w.max(1e-12), 1));
        while blocks.len() > 1 {
            let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if a.0 <= b.0 {
                break;
            }
            blocks.pop();
            let w = a.1 + b.1;
            *blocks.last_mut().unwrap() = ((a.0 * a.1 + b.0 * b.1) / w, w, a.2 + b.2);
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

impl FailureTable {
    pub fn covered_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cells.keys().map(|&(n, _)| n).collect();
        v.dedup();
        v
    }

    fn row(&self, nodes: usize) -> Vec<(usize, TableCell)> {
        self.cells
            .range((nodes, 0)..=(nodes, usize::MAX))
            .map(|(&(_, k), c)| (k, *c))
            .collect()
    }

    /// Isotonic cleanup of estimates and upper bounds: non-decreasing in k,
    /// and a smaller network never looks safer than a larger one at equal k.
    pub fn cleanup(&mut self) {
        let nodes = self.covered_nodes();
        for &n in nodes.iter().rev() {
            let row = self.row(n);
            let w: Vec<f64> = row.iter().map(|(_, c)| c.raw.trials as f64).collect();
            let est = isotonic(&row.iter().map(|(_, c)| c.raw.estimate).collect::<Vec<_>>(), &w);
            let up = isotonic(&row.iter().map(|(_, c)| c.raw.upper()).collect::<Vec<_>>(), &w);
            for (i, (k, _)) in row.iter().enumerate() {
                let cell = self.cells.get_mut(&(n, *k)).unwrap();
                cell.estimate = est[i];
                cell.upper = up[i];
            }
        }
        // Raise smaller-N cells to the larger-N value at the same k.
        for (i, &n) in nodes.iter().enumerate() {
            for &bigger in &nodes[i + 1..] {
                for (k, c) in self.row(bigger) {
                    if let Some(cell) = self.cells.get_mut(&(n, k)) {
                        cell.estimate = cell.estimate.max(c.estimate);
                        cell.upper = cell.upper.max(c.upper);
                    }
                }
            }
        }
    }

    /// Per-N least-squares line through (k, log10 f) over the smallest decade
    /// of observed failure probabilities.
    pub fn refit(&mut self) {
        self.fits.clear();
        for n in self.covered_nodes() {
            let pts: Vec<(f64, f64)> = self
                .row(n)
                .into_iter()
                .filter(|(_, c)| c.raw.failures > 0 && c.raw.estimate < 1.0)
                .map(|(k, c)| (k as f64, c.raw.estimate))
                .collect();
            let Some(fmin) = pts.iter().map(|p| p.1).reduce(f64::min) else {
                continue;
            };
            // Widen a decade at a time while the points give no rising line.
            let mut span = 10.0;
            loop {
                let chosen: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1 <= span * fmin).collect();
                if let Some((slope, intercept)) = least_squares(&chosen).filter(|f| f.0 > 0.0) {
                    self.fits.insert(
                        n,
                        LogLinearFit {
                            slope,
                            intercept,
                            k_max: chosen.iter().map(|p| p.0 as usize).min().unwrap(),
                            points: chosen.len(),
                        },
                    );
                    break;
                }
                if chosen.len() == pts.len() {
                    break;
                }
                span *= 10.0;
            }
        }
    }

    /// f(k, N) for a covered N: table value on grid cells, otherwise the
    /// extrapolation below the simulated region, otherwise the next grid cell up.
    pub fn lookup(&self, nodes: usize, k: usize) -> Option<f64> {
        if let Some(c) = self.cells.get(&(nodes, k)) {
            if c.raw.failures > 0 || self.fits.get(&nodes).is_none_or(|f| k >= f.k_max) {
                return Some(c.estimate);
            }
        }
        if let Some(fit) = self.fits.get(&nodes) {
            if k < fit.k_max {
                return Some(10f64.powf(fit.log10_f(k as f64)));
            }
        }
        self.row(nodes).into_iter().find(|(kk, _)| *kk >= k).map(|(_, c)| c.upper)
    }

    /// Largest k meeting `zeta` at exactly this covered N.
    fn k_at(&self, nodes: usize, zeta: f64) -> Option<usize> {
        let row = self.row(nodes);
        let from_cells = row.iter().filter(|(_, c)| c.upper <= zeta).map(|(k, _)| *k).max();
        let from_fit = self.fits.get(&nodes).and_then(|fit| {
            let k = fit.k_for(zeta).floor();
            (k >= 1.0).then(|| (k as usize).min(fit.k_max.saturating_sub(1)))
        });
        match (from_cells, from_fit) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0).max(b.unwrap_or(0))),
        }
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("N,k,trials,failures,estimate,ci_halfwidth\n");
        for (&(n, k), c) in &self.cells {
            writeln!(
                out,
                "{n},{k},{},{},{:e},{:e}",
                c.raw.trials, c.raw.failures, c.raw.estimate, c.raw.ci_halfwidth
            )
            .unwrap();
        }
        std::fs::write(path, out)?;
        let mut fit = format!("# horizon={}\nN,slope,intercept,k_max,points\n", self.horizon);
        for (n, f) in &self.fits {
            writeln!(fit, "{n},{:e},{:e},{},{}", f.slope, f.intercept, f.k_max, f.points).unwrap();
        }
        std::fs::write(fit_path(path), fit)
    }

    /// Reads the cell file (and the fit file's horizon if present) and
    /// recomputes cleanup and fits from the raw counts.
    pub fn read_csv(path: &Path) -> Result<FailureTable, SizingError> {
        let parse = |e: String| SizingError::Parse(format!("{}: {e}", path.display()));
        let file = std::fs::File::open(path).map_err(|e| parse(e.to_string()))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines.next().ok_or_else(|| parse("empty file".into()))?.map_err(|e| parse(e.to_string()))?;
        if header.trim() != "N,k,trials,failures,estimate,ci_halfwidth" {
            return Err(parse(format!("unexpected header `{header}`")));
        }
        let mut table = FailureTable::default();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(parse(format!("line {}: expected 6 fields", i + 2)));
            }
            let num = |s: &str| s.trim().parse::<u64>().map_err(|e| parse(format!("line {}: {e}", i + 2)));
            let (n, k, trials, failures) = (num(f[0])? as usize, num(f[1])? as usize, num(f[2])?, num(f[3])?);
            if failures > trials {
                return Err(parse(format!("line {}: failures exceed trials", i + 2)));
            }
            let raw = FailureEstimate::from_counts(trials, failures);
            table.cells.insert(
                (n, k),
                TableCell {
                    raw,
                    estimate: raw.estimate,
                    upper: raw.upper(),
                },
            );
        }
        if let Ok(fit) = std::fs::read_to_string(fit_path(path)) {
            if let Some(h) = fit.lines().next().and_then(|l| l.strip_prefix("# horizon=")) {
                table.horizon = h.trim().parse().map_err(|_| parse("bad horizon in fit file".into()))?;
            }
        }
        table.cleanup();
        table.refit();
        Ok(table)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("horizon {:.4} epochs, {} cells\n", self.horizon, self.cells.len());
        for n in self.covered_nodes() {
            let row = self.row(n);
            let observed = row.iter().filter(|(_, c)| c.raw.failures > 0).count();
            write!(s, "N={n}: {} cells ({observed} with failures)", row.len()).unwrap();
            match self.fits.get(&n) {
                Some(f) => writeln!(
                    s,
                    ", fit log10 f = {:.4} + {:.6} k over {} points below k={}",
                    f.intercept, f.slope, f.points, f.k_max
                )
                .unwrap(),
                None => writeln!(s, ", no fit").unwrap(),
            }
        }
        s
    }
}

fn fit_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("failure_table");
    path.with_file_name(format!("{stem}_fit.csv"))
}

fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1.log10()));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for p in pts {
        sxx += (p.0 - mx) * (p.0 - mx);
        sxy += (p.0 - mx) * (p.1.log10() - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingPolicy {
    pub zeta: f64,
    pub gamma: f64,
    pub alpha: u64,
    pub beta: u64,
}

impl SizingPolicy {
    /// γ + α/β, kept real-valued.
    pub fn horizon(&self) -> f64 {
        self.gamma + self.alpha as f64 / self.beta as f64
    }
}

/// Largest k with f(k, N) <= ζ, read from the largest covered N at or below
/// `nodes_now`. Since f does not increase with N, that row's answer is capped
/// by every larger covered row, so noise in one row's extrapolation cannot
/// inflate k_m.
pub fn choose_group_size(nodes_now: usize, table: &FailureTable, policy: &SizingPolicy) -> Result<usize, SizingError> {
    if !(policy.zeta > 0.0 && policy.zeta <= 1.0) {
        return Err(SizingError::Domain(format!("zeta must be in (0, 1], got {}", policy.zeta)));
    }
    let covered = table.covered_nodes();
    let Some(&row) = covered.iter().filter(|&&n| n <= nodes_now).max() else {
        return Err(SizingError::Uncovered(nodes_now));
    };
    covered
        .iter()
        .filter(|&&n| n >= row)
        .try_fold(usize::MAX, |acc, &n| table.k_at(n, policy.zeta).filter(|&k| k >= 1).map(|k| acc.min(k)))
        .ok_or(SizingError::Infeasible {
            zeta: policy.zeta,
            nodes: nodes_now,
        })
}

/// Decoding threshold in a shrinking network: encode one group of k
/// originals over `nodes` nodes, apply churn with the NMA epoch by epoch, and
/// probe-decode after each epoch. Returns the alive count at the last
/// successful decode before the first failure, or `None` if the group never
/// failed within `max_epochs`. `precode_rate: None` is plain LT (n = k).
pub fn survivors_at_failure(
    k: usize,
    nodes: usize,
    churn: &ChurnModel,
    precode_rate: Option<f64>,
    c: f64,
    delta: f64,
    max_epochs: u64,
    seed: u64,
) -> Result<Option<usize>, SizingError> {
    let model = FailureModel {
        c,
        delta,
        precode_rate: precode_rate.unwrap_or(1.0),
        churn: *churn,
        horizon: 0.0,
        schedule: EpsilonSchedule::default(),
    };
    let n = model.code_length(k);
    if k == 0 || n > nodes {
        return Err(SizingError::Domain(format!("need 1 <= n={n} <= N={nodes}")));
    }
    let omega = encoding_omega(k, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::with_nodes(PayloadMode::Structural, nodes);
    net.register_group(GroupSpec {
        seq: 0,
        k,
        n,
        omega,
        generator: None,
        intermediates: None,
    });
    net.assign_encoding(0, &mut rng);
    let mut last_ok = net.alive_count();
    for _ in 0..max_epochs {
        let r = net.churn_step(churn, &mut rng, &model.schedule);
        if r.network_died || net.is_group_lost(0) || !net.probe_decode(0) {
            return Ok(Some(last_ok));
        }
        last_ok = net.alive_count();
    }
    Ok(None)
}

/// Writes `rows` of already formatted CSV under `header`.
pub fn write_rows(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()
}
