//! Run records and the files a run leaves behind.
//!
//! Every CSV starts with a `# config_hash=<hash>` comment line, and no file
//! contains timestamps or absolute paths, so repeating a run with the same
//! configuration reproduces every metric file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vgf::agent::MetricRow;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const RUN_RECORD_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_FILE: &str = "eval.csv";
pub const BOUND_FILE: &str = "bound.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.vgf";

/// Crate version plus the git revision the binary was built from, when known.
pub fn build_id() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), option_env!("VGF_GIT_REV").unwrap_or("unknown"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub build_id: String,
    /// Paths relative to the run directory, sorted.
    pub files: Vec<String>,
    pub summary: Summary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub training: Vec<TrainSummary>,
    pub eval: Vec<EvalSummary>,
    pub bound: Option<BoundSummary>,
}

/// Last logged metrics of one trained cell and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub cell: String,
    pub seed: u64,
    pub steps: usize,
    pub last: Option<MetricRow>,
}

/// Mean return across training seeds for one policy, with the spread across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub cell: String,
    pub policy: String,
    pub l_test: Option<usize>,
    pub seeds: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub cells: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub max_mmd2: f64,
}

/// One evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub cell: String,
    pub seed: u64,
    pub policy: String,
    pub l_test: Option<usize>,
    pub episode_seed: u64,
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
    /// First action of the episode.
    pub first_action: Vec<f64>,
}

impl EvalRow {
    pub const HEADER: &'static str = "cell,seed,policy,l_test,episode_seed,return,success,steps,first_action";

    /// Total order used to sort rows before writing.
    pub fn key(&self) -> (String, String, Option<usize>, u64, u64) {
        (self.cell.clone(), self.policy.clone(), self.l_test, self.seed, self.episode_seed)
    }

    pub fn csv(&self) -> String {
        let action: Vec<String> = self.first_action.iter().map(|v| format!("{v:?}")).collect();
        format!(
            "{},{},{},{},{},{:?},{},{},{}",
            self.cell,
            self.seed,
            self.policy,
            self.l_test.map(|l| l.to_string()).unwrap_or_default(),
            self.episode_seed,
            self.ret,
            self.success as u8,
            self.steps,
            action.join(";")
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |what: &str| {
            HarnessError::Core(vgf::Error::Format {
                path: EVAL_FILE.into(),
                reason: format!("bad {what} in row {line:?}"),
            })
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("column count"));
        }
        Ok(EvalRow {
            cell: f[0].to_string(),
            seed: f[1].parse().map_err(|_| bad("seed"))?,
            policy: f[2].to_string(),
            l_test: if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad("l_test"))?) },
            episode_seed: f[4].parse().map_err(|_| bad("episode_seed"))?,
            ret: f[5].parse().map_err(|_| bad("return"))?,
            success: f[6] == "1",
            steps: f[7].parse().map_err(|_| bad("steps"))?,
            first_action: if f[8].is_empty() {
                Vec::new()
            } else {
                f[8].split(';').map(|v| v.parse().map_err(|_| bad("first_action"))).collect::<Result<_>>()?
            },
        })
    }
}

/// One bound-check cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub epsilon: f64,
    pub steps: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub num_particles: usize,
    pub reward_scale: f64,
    pub seed: u64,
    pub mmd2: f64,
    pub bound: f64,
}

impl BoundRow {
    pub const HEADER: &'static str = "epsilon,steps,alpha,sigma,num_particles,reward_scale,seed,mmd2,bound,slack,ok";

    pub fn slack(&self) -> f64 {
        self.bound - self.mmd2
    }

    pub fn key(&self) -> (u64, u64, usize, u64, u64, usize, u64) {
        (
            self.epsilon.to_bits(),
            self.alpha.to_bits(),
            self.steps,
            self.sigma.to_bits(),
            self.reward_scale.to_bits(),
            self.num_particles,
            self.seed,
        )
    }

    pub fn csv(&self) -> String {
        format!(
            "{:?},{},{:?},{:?},{},{:?},{},{:e},{:e},{:e},{}",
            self.epsilon,
            self.steps,
            self.alpha,
            self.sigma,
            self.num_particles,
            self.reward_scale,
            self.seed,
            self.mmd2,
            self.bound,
            self.slack(),
            (self.slack() >= 0.0) as u8
        )
    }
}

pub fn hash_line(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

/// Header comment, column header, rows.
pub fn csv_with_hash<I: IntoIterator<Item = String>>(hash: &str, header: &str, rows: I) -> String {
    let mut out = hash_line(hash);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn metrics_csv(hash: &str, rows: &[MetricRow]) -> String {
    csv_with_hash(hash, MetricRow::CSV_HEADER, rows.iter().map(MetricRow::csv))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Data lines of a hashed CSV: comment and header skipped.
pub fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).filter(|l| !l.is_empty())
}

pub fn read_eval_rows(path: &Path) -> Result<Vec<EvalRow>> {
    data_lines(&read(path)?).map(EvalRow::parse).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per (cell, policy, L_test): mean over episodes within each seed, then
/// mean and population std of those per-seed means across seeds.
pub fn summarize_eval(rows: &[EvalRow]) -> Vec<EvalSummary> {
    let mut rows: Vec<&EvalRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let group = (&rows[i].cell, &rows[i].policy, rows[i].l_test);
        let mut j = i;
        let mut per_seed: Vec<f64> = Vec::new();
        let mut successes = 0;
        while j < rows.len() && (&rows[j].cell, &rows[j].policy, rows[j].l_test) == group {
            let seed = rows[j].seed;
            let mut k = j;
            let mut total = 0.0;
            while k < rows.len() && (&rows[k].cell, &rows[k].policy, rows[k].l_test) == group && rows[k].seed == seed {
                total += rows[k].ret;
                successes += rows[k].success as usize;
                k += 1;
            }
            per_seed.push(total / (k - j) as f64);
            j = k;
        }
        let (mean, std) = mean_std(&per_seed);
        out.push(EvalSummary {
            cell: group.0.clone(),
            policy: group.1.clone(),
            l_test: group.2,
            seeds: per_seed.len(),
            episodes: j - i,
            mean_return: mean,
            std_return: std,
            success_rate: successes as f64 / (j - i) as f64,
        });
        i = j;
    }
    out
}

pub fn summarize_bound(rows: &[BoundRow]) -> BoundSummary {
    BoundSummary {
        cells: rows.len(),
        violations: rows.iter().filter(|r| r.slack() < 0.0).count(),
        min_slack: rows.iter().map(BoundRow::slack).fold(f64::INFINITY, f64::min),
        max_mmd2: rows.iter().map(|r| r.mmd2).fold(0.0, f64::max),
    }
}

impl RunRecord {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_RECORD_FILE);
        write(&path, &(serde_json::to_string_pretty(self)? + "\n"))?;
        write(&dir.join(SUMMARY_FILE), &(serde_json::to_string_pretty(&self.summary)? + "\n"))?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read(&dir.join(RUN_RECORD_FILE))?)?)
    }

    /// Human-readable digest for the terminal.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} [{}] config {}", self.command, self.config.name, self.config_hash);
        for e in &self.summary.eval {
            let l = e.l_test.map(|l| format!("L_test={l}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "  {:<24} {:<14} {:<9} return {:.4} ± {:.4}  success {:.2}",
                e.cell, e.policy, l, e.mean_return, e.std_return, e.success_rate
            );
        }
        if let Some(b) = &self.summary.bound {
            let _ = writeln!(s, "  bound: {} cells, {} violations, min slack {:e}", b.cells, b.violations, b.min_slack);
        }
        s
    }
}
