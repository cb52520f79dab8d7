//! `gen-domains`: one tool graph per domain plus a validation report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toolforge_core::rng::derive_seed;
use toolforge_core::{generate_domain, validate_toolset, DomainError, DomainGenConfig, ToolGraph, ValidationReport};

use crate::output::{ensure_dir, io_err, numbered_files, remove_numbered, require_dir, write_atomic, write_json};
use crate::{CliError, Result, RunConfig};

pub const DIR: &str = "domains";
pub const PREFIX: &str = "domain_";

pub fn domain_file(index: usize) -> String {
    format!("{PREFIX}{index:03}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub file: String,
    pub domain: String,
    pub seed: u64,
    pub tools: usize,
    pub density: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainsReport {
    pub count: usize,
    pub all_passed: bool,
    pub domains: Vec<DomainSummary>,
    pub validation: Vec<ValidationReport>,
}

fn domain_error(e: DomainError) -> CliError {
    match e {
        DomainError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Invariant(other.to_string()),
    }
}

/// Generates `domains.count` graphs. Exits with an invariant error, after writing
/// everything, when any graph fails validation.
pub fn gen_domains(config: &RunConfig, seed: u64, out: &Path) -> Result<DomainsReport> {
    config.validate()?;
    let dir = out.join(DIR);
    remove_numbered(&dir, PREFIX)?;
    let count = config.domains.count;
    let report_path = dir.join("report.json");
    if count == 0 {
        if report_path.exists() {
            std::fs::remove_file(&report_path).map_err(|e| io_err(&report_path, e))?;
        }
        return Ok(DomainsReport { count: 0, all_passed: true, domains: vec![], validation: vec![] });
    }
    ensure_dir(&dir)?;
    let built: Vec<(ToolGraph, ValidationReport, u64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, "domain", i as u64);
            let cfg = DomainGenConfig {
                style: config.domains.gen.style.wrapping_add(i as u32),
                ..config.domains.gen.clone()
            };
            let (_, g) = generate_domain(s, &cfg).map_err(domain_error)?;
            let report = validate_toolset(&g);
            Ok((g, report, s))
        })
        .collect::<Result<_>>()?;

    let mut domains = Vec::with_capacity(count);
    let mut validation = Vec::with_capacity(count);
    for (i, (g, report, s)) in built.into_iter().enumerate() {
        let file = domain_file(i);
        write_atomic(&dir.join(&file), g.to_json().as_bytes())?;
        domains.push(DomainSummary {
            file,
            domain: g.domain().to_string(),
            seed: s,
            tools: g.len(),
            density: g.density(),
            passed: report.passed,
        });
        validation.push(report);
    }
    let all_passed = domains.iter().all(|d| d.passed);
    let report = DomainsReport { count, all_passed, domains, validation };
    write_json(&report_path, &report)?;
    if !all_passed {
        let bad: Vec<&str> = report.domains.iter().filter(|d| !d.passed).map(|d| d.file.as_str()).collect();
        return Err(CliError::Invariant(format!("tool validation failed for {}", bad.join(", "))));
    }
    Ok(report)
}

/// Loads every generated graph in index order.
pub fn load_domains(out: &Path) -> Result<Vec<(PathBuf, ToolGraph)>> {
    let dir = out.join(DIR);
    require_dir(&dir, "gen-domains")?;
    numbered_files(&dir, PREFIX)?
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let g = ToolGraph::from_json(&text).map_err(|e| CliError::Invariant(format!("{}: {e}", p.display())))?;
            Ok((p, g))
        })
        .collect()
}
