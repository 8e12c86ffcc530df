//! CSV rendering of an [`AnalysisReport`].
//!
//! Each file starts with a `#` provenance comment, then a header row, then
//! numeric rows. Floats use the shortest representation that round-trips.
//!
//! | file | columns |
//! |---|---|
//! | `global_zeros.csv` | `block,zeros,total,percent` (block 0 = state, 1 = action) |
//! | `zero_fraction_state.csv` | `row,col_0,...` percent of steps with the entry zero |
//! | `zero_fraction_action.csv` | same, action block |
//! | `*_rounded.csv` | the two tables above rounded to integers |
//! | `sparsity_hist.csv` | `bin_lo,bin_hi,state,action,combined` sample counts |
//! | `timeseries_ep<k>.csv` | `step,state,action,combined` per-sample sparsity |
//! | `durations.csv` | `block,row,col,zero,length,count,full_episode` |
//! | `embedding.csv` | `pc1,pc2,sparsity` |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::AnalysisReport;
use crate::sparsity::{Block, ElementDurations};
use crate::{Error, Result};

/// Fixed file names; `timeseries_ep<k>.csv` come in addition.
pub const CSV_FILES: [&str; 8] = [
    "global_zeros.csv",
    "zero_fraction_state.csv",
    "zero_fraction_action.csv",
    "zero_fraction_state_rounded.csv",
    "zero_fraction_action_rounded.csv",
    "sparsity_hist.csv",
    "durations.csv",
    "embedding.csv",
];

fn table(comment: &str, header: &str) -> String {
    format!("{comment}{header}\n")
}

fn fraction_table(comment: &str, m: &[Vec<f64>], rounded: bool) -> String {
    let cols = m.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("row".to_string())
        .chain((0..cols).map(|j| format!("col_{j}")))
        .collect();
    let mut s = table(comment, &header.join(","));
    for (i, row) in m.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            if rounded {
                let _ = write!(s, ",{}", v.round() as i64);
            } else {
                let _ = write!(s, ",{v}");
            }
        }
        s.push('\n');
    }
    s
}

fn block_id(b: Block) -> u8 {
    match b {
        Block::State => 0,
        Block::Action => 1,
        Block::Combined => 2,
    }
}

fn duration_rows(s: &mut String, e: &ElementDurations) {
    let b = block_id(e.block);
    let mut full = |zero: u8, lens: &[usize]| {
        let mut counts = std::collections::BTreeMap::new();
        for &l in lens {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        for (l, c) in counts {
            let _ = writeln!(s, "{b},{},{},{zero},{l},{c},1", e.row, e.col);
        }
    };
    full(1, &e.full_episode_zero);
    full(0, &e.full_episode_nonzero);
    for (zero, h) in [(1, &e.zero_runs), (0, &e.nonzero_runs)] {
        for (l, c) in h {
            let _ = writeln!(s, "{b},{},{},{zero},{l},{c},0", e.row, e.col);
        }
    }
}

/// Renders every table of `r` as `(file name, contents)`, in a fixed order.
pub fn render_csvs(r: &AnalysisReport, timeseries_steps: Option<usize>) -> Vec<(String, String)> {
    let c = r.provenance.csv_comment();
    let g = &r.global_zeros;
    let mut out = Vec::new();

    let mut s = table(&c, "block,zeros,total,percent");
    let _ = writeln!(s, "0,{},{},{}", g.state_count, g.state_total, g.state_percent);
    let _ = writeln!(s, "1,{},{},{}", g.action_count, g.action_total, g.action_percent);
    out.push((CSV_FILES[0].to_string(), s));
    out.push((CSV_FILES[1].to_string(), fraction_table(&c, &r.zero_fraction_state, false)));
    out.push((CSV_FILES[2].to_string(), fraction_table(&c, &r.zero_fraction_action, false)));
    out.push((CSV_FILES[3].to_string(), fraction_table(&c, &r.zero_fraction_state, true)));
    out.push((CSV_FILES[4].to_string(), fraction_table(&c, &r.zero_fraction_action, true)));

    let h = &r.histogram;
    let mut s = table(&c, "bin_lo,bin_hi,state,action,combined");
    for k in 0..h.state.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            h.edges[k],
            h.edges[k + 1],
            h.state[k],
            h.action[k],
            h.combined[k]
        );
    }
    out.push((CSV_FILES[5].to_string(), s));

    let mut s = table(&c, "block,row,col,zero,length,count,full_episode");
    for e in &r.durations {
        duration_rows(&mut s, e);
    }
    out.push((CSV_FILES[6].to_string(), s));

    let mut s = table(&c, "pc1,pc2,sparsity");
    if let Some(e) = &r.embedding {
        for (p, col) in e.coords.iter().zip(&e.colors) {
            let _ = writeln!(s, "{},{},{}", p[0], p[1], col);
        }
    }
    out.push((CSV_FILES[7].to_string(), s));

    for ts in &r.timeseries {
        let n = timeseries_steps.map_or(ts.state.len(), |m| m.min(ts.state.len()));
        let mut s = table(&c, "step,state,action,combined");
        for t in 0..n {
            let _ = writeln!(s, "{t},{},{},{}", ts.state[t], ts.action[t], ts.combined[t]);
        }
        out.push((format!("timeseries_ep{}.csv", ts.episode), s));
    }
    out
}

/// Writes all tables of `r` into `dir`.
pub fn write_report_csvs(r: &AnalysisReport, dir: &Path, timeseries_steps: Option<usize>) -> Result<()> {
    for (name, body) in render_csvs(r, timeseries_steps) {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{analyze, RunConfig};
    use super::*;
    use crate::envs::make_env;
    use crate::rollout;

    fn report() -> AnalysisReport {
        let mut c = RunConfig {
            env: "bouncer".into(),
            episodes: 2,
            ..Default::default()
        };
        c.env_params.insert("horizon".into(), 40.0);
        let env = make_env(&c.env, &c.env_params).unwrap();
        let d = rollout::collect(&env, &c.policy_descriptor(), 2, 3).unwrap();
        analyze(&d, &c).unwrap()
    }

    fn parse(body: &str) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut lines = body.lines();
        assert!(lines.next().unwrap().starts_with("# format_version=1 config_hash="));
        let header = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
            .collect();
        (header, rows)
    }

    #[test]
    fn tables_are_rectangular_and_numeric() {
        let r = report();
        let files = render_csvs(&r, None);
        assert_eq!(files.len(), CSV_FILES.len() + 2);
        for (name, body) in &files {
            let (h, rows) = parse(body);
            assert!(rows.iter().all(|row| row.len() == h.len()), "{name}");
        }
        let (_, hist) = parse(&files[5].1);
        assert_eq!(hist.len(), 10);
        let total: f64 = hist.iter().map(|r| r[2]).sum();
        assert_eq!(total as usize, r.dataset.samples);
        let (_, ts) = parse(&files[8].1);
        assert_eq!(ts.len(), r.timeseries[0].state.len());
    }

    #[test]
    fn durations_account_for_every_step() {
        let r = report();
        let files = render_csvs(&r, None);
        let (_, rows) = parse(&files[6].1);
        let mut per_element = std::collections::BTreeMap::new();
        for row in rows {
            let key = (row[0] as u8, row[1] as usize, row[2] as usize);
            *per_element.entry(key).or_insert(0.0) += row[4] * row[5];
        }
        assert_eq!(per_element.len(), r.durations.len());
        assert!(per_element.values().all(|&v| v as usize == r.dataset.samples));
    }

    #[test]
    fn truncated_timeseries() {
        let r = report();
        let files = render_csvs(&r, Some(5));
        let (_, ts) = parse(&files[9].1);
        assert_eq!(ts.len(), 5);
        assert_eq!(ts[4][0], 4.0);
    }

    #[test]
    fn rounded_tables_hold_integers() {
        let r = report();
        let files = render_csvs(&r, None);
        let (_, raw) = parse(&files[1].1);
        let (_, rounded) = parse(&files[3].1);
        for (a, b) in raw.iter().zip(&rounded) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(y.fract(), 0.0);
                assert!((x - y).abs() <= 0.5);
            }
        }
    }
}
