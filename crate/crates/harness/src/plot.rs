//! Hand-written SVG plots of finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vgf::envs::BimodalBandit;
use vgf::flow::Trajectory;

use crate::config::Task;
use crate::error::{HarnessError, Result};
use crate::record::{self, EvalSummary, RunRecord};

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn header(w: f64, h: f64) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

// White to dark blue.
fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(255.0, 8.0), c(255.0, 48.0), c(255.0, 107.0))
}

/// Reward heat map of the bandit on `[-1, 1]²` with particle paths on top.
/// Filled dots mark where each particle ends.
pub fn bandit_particles_svg(traj: &Trajectory) -> String {
    let size = 400.0;
    let to_px = |v: f64| (v + 1.0) / 2.0 * size;
    let mut s = header(size, size);
    let cells = 50;
    let cell = size / cells as f64;
    let mut grid = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let x = -1.0 + (i as f64 + 0.5) * 2.0 / cells as f64;
            let y = 1.0 - (j as f64 + 0.5) * 2.0 / cells as f64;
            grid.push(BimodalBandit::reward(&[x, y]));
        }
    }
    let max = grid.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    for (k, r) in grid.iter().enumerate() {
        let (i, j) = (k % cells, k / cells);
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            i as f64 * cell,
            j as f64 * cell,
            cell + 0.5,
            cell + 0.5,
            shade(r / max)
        );
    }
    for p in 0..traj.num_particles() {
        let path = traj.path(p);
        let color = PALETTE[p % PALETTE.len()];
        let pts: Vec<String> = path.iter().map(|c| format!("{:.2},{:.2}", to_px(c[0]), size - to_px(c[1]))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
        if let (Some(first), Some(last)) = (path.first(), path.last()) {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"none\" stroke=\"{color}\"/>", to_px(first[0]), size - to_px(first[1]));
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>", to_px(last[0]), size - to_px(last[1]));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean return against `L_test` for every trained cell, with a ±1 std band
/// across seeds. Baselines are drawn as dashed horizontal lines.
/// `None` when there is no VGF row to draw.
pub fn return_chart_svg(summaries: &[EvalSummary]) -> Option<String> {
    let vgf: Vec<&EvalSummary> = summaries.iter().filter(|e| e.l_test.is_some()).collect();
    if vgf.is_empty() {
        return None;
    }
    let baselines: Vec<&EvalSummary> = summaries.iter().filter(|e| e.l_test.is_none()).collect();
    let x_max = vgf.iter().filter_map(|e| e.l_test).max().unwrap_or(0).max(1) as f64;
    let lo = summaries.iter().map(|e| e.mean_return - e.std_return).fold(f64::MAX, f64::min);
    let hi = summaries.iter().map(|e| e.mean_return + e.std_return).fold(f64::MIN, f64::max);
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let px = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut s = header(W, H);
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - PAD, W - PAD, H - PAD);
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">L_test</text>", W / 2.0, H - 12.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"11\">{hi:.3}</text>", PAD);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"11\">{lo:.3}</text>", H - PAD);

    let mut cells: Vec<&str> = vgf.iter().map(|e| e.cell.as_str()).collect();
    cells.sort_unstable();
    cells.dedup();
    for (k, cell) in cells.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<&EvalSummary> = vgf.iter().copied().filter(|e| e.cell == *cell).collect();
        pts.sort_by_key(|e| e.l_test);
        let upper: Vec<String> = pts.iter().map(|e| format!("{:.2},{:.2}", px(e.l_test.unwrap_or(0) as f64), py(e.mean_return + e.std_return))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|e| format!("{:.2},{:.2}", px(e.l_test.unwrap_or(0) as f64), py(e.mean_return - e.std_return))).collect();
        let _ = writeln!(s, "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", upper.join(" "), lower.join(" "));
        let line: Vec<String> = pts.iter().map(|e| format!("{:.2},{:.2}", px(e.l_test.unwrap_or(0) as f64), py(e.mean_return))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", line.join(" "));
        for e in &pts {
            let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>", px(e.l_test.unwrap_or(0) as f64), H - PAD + 14.0, e.l_test.unwrap_or(0));
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{cell}</text>", W - PAD - 120.0, PAD + 14.0 * k as f64);
    }
    for (k, b) in baselines.iter().enumerate() {
        let y = py(b.mean_return);
        let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>", W - PAD);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" font-size=\"10\" fill=\"gray\">{} ({})</text>", PAD + 4.0 + 90.0 * k as f64, y - 3.0, b.policy, b.cell);
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let cells = dir.join("cells");
    let mut out = Vec::new();
    if !cells.is_dir() {
        return Ok(out);
    }
    let list = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| HarnessError::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for cell in list(&cells)? {
        for seed in list(&cell)? {
            let f = seed.join(record::TRAJECTORY_FILE);
            if f.is_file() {
                out.push(f);
            }
        }
    }
    Ok(out)
}

/// Render every plot a finished run supports into `<dir>/plots`.
/// A run with nothing to draw writes no files and returns an empty list.
pub fn plot_run(dir: &Path) -> Result<Vec<PathBuf>> {
    let rec = RunRecord::load(dir)?;
    let out = dir.join("plots");
    let mut written = Vec::new();
    if let Some(svg) = return_chart_svg(&rec.summary.eval) {
        let p = out.join("returns.svg");
        record::write(&p, &svg)?;
        written.push(p);
    }
    if rec.config.task == Task::Bandit {
        for f in trajectory_files(dir)? {
            let text = record::read(&f)?;
            let traj = Trajectory::read_csv(text.as_bytes())?;
            if traj.is_empty() {
                continue;
            }
            let seed_dir = f.parent().expect("file in a seed dir");
            let seed = seed_dir.file_name().unwrap_or_default().to_string_lossy();
            let cell = seed_dir.parent().and_then(|c| c.file_name()).unwrap_or_default().to_string_lossy();
            let p = out.join(format!("particles_{cell}_{seed}.svg"));
            record::write(&p, &bandit_particles_svg(&traj))?;
            written.push(p);
        }
    }
    if written.is_empty() {
        eprintln!("warning: {} has no evaluation results or particle paths to plot", dir.display());
    }
    Ok(written)
}
