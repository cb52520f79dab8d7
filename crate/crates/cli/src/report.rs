//! `report`: a markdown summary of whatever stages have produced output.
//!
//! Missing or unreadable artifacts become warning lines; the report itself never
//! fails on them. The text contains no paths or timestamps, so identical runs give
//! identical reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::analyze::{self, AnalysisReport};
use crate::domains::{self, DomainsReport};
use crate::envs::{self, EnvsIndex};
use crate::episodes::{self, CurriculumLog};
use crate::output::{ensure_dir, write_atomic};
use crate::simulate::{self, SimReport};
use crate::Result;

pub const FILE: &str = "report.md";

fn load<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn warn(md: &mut String, what: &str) {
    let _ = writeln!(md, "> warning: {what} not found; run the stage that produces it.\n");
}

fn domains_section(md: &mut String, r: Option<DomainsReport>) {
    md.push_str("## Domains\n\n");
    let Some(r) = r else { return warn(md, "domain report") };
    let _ = writeln!(md, "{} domains, validation {}.\n", r.count, if r.all_passed { "passed" } else { "FAILED" });
    if !r.domains.is_empty() {
        md.push_str("| file | domain | tools | density | valid |\n|---|---|---|---|---|\n");
        for d in &r.domains {
            let _ = writeln!(md, "| {} | {} | {} | {:.4} | {} |", d.file, d.domain, d.tools, d.density, d.passed);
        }
        md.push('\n');
    }
}

fn envs_section(md: &mut String, r: Option<EnvsIndex>) {
    md.push_str("## Environments\n\n");
    let Some(r) = r else { return warn(md, "environment index") };
    let _ = writeln!(
        md,
        "{} environments over {} domains. Minimum tools included: {}. Gold plans executable: {}. Rubrics sound: {}.\n",
        r.count, r.domains, r.min_tools_included, r.all_executable, r.all_rubrics_sound
    );
}

fn csv_table(md: &mut String, path: &Path, what: &str) {
    let Ok(mut reader) = csv::Reader::from_path(path) else { return warn(md, what) };
    let Ok(header) = reader.headers().cloned() else { return warn(md, what) };
    let rows: Vec<csv::StringRecord> = reader.records().filter_map(|r| r.ok()).collect();
    if rows.is_empty() {
        let _ = writeln!(md, "No episodes were run.\n");
        return;
    }
    let _ = writeln!(md, "| {} |", header.iter().collect::<Vec<_>>().join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(md, "| {} |", r.iter().collect::<Vec<_>>().join(" | "));
    }
    md.push('\n');
}

fn curriculum_section(md: &mut String, log: Option<CurriculumLog>) {
    md.push_str("## Curriculum\n\n");
    let Some(log) = log else { return warn(md, "curriculum log") };
    if log.steps.is_empty() {
        md.push_str("No curriculum steps were run.\n\n");
        return;
    }
    let _ = writeln!(md, "Solver skill {}. Final level {}.\n", log.skill, log.state.current_level);
    md.push_str("| step | level | clean | noisy | gap | promoted |\n|---|---|---|---|---|---|\n");
    for (i, s) in log.steps.iter().enumerate() {
        let _ = writeln!(
            md,
            "| {i} | {} | {:.3} | {:.3} | {:.3} | {} |",
            s.level, s.clean_pass, s.noisy_pass, s.gap, s.promoted
        );
    }
    md.push('\n');
}

fn sim_section(md: &mut String, r: Option<SimReport>) {
    md.push_str("## Simulation\n\n");
    let Some(r) = r else { return warn(md, "simulation metrics") };
    md.push_str(
        "| mode | makespan | samples/s | load ratio | mean staleness | max staleness | kv recompute | overlap |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for (name, m) in &r.runs {
        let _ = writeln!(
            md,
            "| {name} | {:.2} | {:.3} | {:.3} | {:.3} | {} | {} | {:.3} |",
            m.makespan,
            m.samples_per_sec,
            m.request_load_ratio,
            m.mean_staleness,
            m.max_staleness,
            m.kv_recomputations,
            m.transfer_overlap_ratio
        );
    }
    if let Some(s) = r.speedup {
        let _ = writeln!(md, "\nAsync speedup over sync: {s:.3}x.");
    }
    md.push('\n');
}

fn analysis_section(md: &mut String, r: Option<AnalysisReport>) {
    md.push_str("## Analysis\n\n");
    let Some(r) = r else { return warn(md, "analysis summary") };
    let _ = writeln!(
        md,
        "At skill {}: {} tasks, {} rollouts allocated, mean task value {:.4}. {} groups carry a learning signal (mean |advantage| {:.3}).\n",
        r.skill, r.tasks, r.total_rollouts, r.mean_value, r.informative_groups, r.mean_abs_advantage
    );
    let tiers: Vec<String> = r.tier_counts.iter().map(|(t, n)| format!("{t} {n}")).collect();
    let _ = writeln!(md, "Curriculum tiers: {}.\n", if tiers.is_empty() { "none".into() } else { tiers.join(", ") });
    let _ = writeln!(
        md,
        "Selected for training: {}.\n",
        if r.selected.is_empty() { "none".into() } else { r.selected.join(", ") }
    );
    if let Some(h) = &r.hparams {
        let _ = writeln!(
            md,
            "Loss law: {:.4} * C^{:.4}. Batch law exponent {:.4}, learning-rate law exponent {:.4}.",
            h.laws.loss.coefficient, h.laws.loss.exponent, h.laws.batch_size.exponent, h.laws.learning_rate.exponent
        );
        if let Some(p) = &h.prediction {
            let _ = writeln!(
                md,
                "Predicted batch size {:.1}, learning rate {:.3e} at equivalent compute {:.3e}{}.",
                p.batch_size,
                p.learning_rate,
                p.equivalent_compute,
                if p.extrapolated { " (extrapolated)" } else { "" }
            );
        }
        md.push('\n');
    }
}

/// Renders the report from the artifacts under `out`.
pub fn render(out: &Path) -> String {
    let mut md = String::from("# Run report\n\n");
    domains_section(&mut md, load(&out.join(domains::DIR).join("report.json")));
    envs_section(&mut md, load(&out.join(envs::DIR).join("index.json")));
    md.push_str("## Episodes\n\n");
    csv_table(&mut md, &out.join(episodes::DIR).join("pass_matrix.csv"), "pass matrix");
    curriculum_section(&mut md, load(&out.join(episodes::DIR).join("curriculum.json")));
    sim_section(&mut md, load(&out.join(simulate::DIR).join("sim_metrics.json")));
    analysis_section(&mut md, load(&out.join(analyze::DIR).join("analysis.json")));
    md
}

/// Writes `report.md` into `out` and returns its text.
pub fn report(out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let md = render(out);
    write_atomic(&out.join(FILE), md.as_bytes())?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_gives_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let md = report(dir.path()).unwrap();
        assert_eq!(md.matches("> warning:").count(), 6);
        assert!(dir.path().join(FILE).exists());
        assert_eq!(md, render(dir.path()));
    }
}
