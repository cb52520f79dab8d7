//! Snapshot of the small test-mode domain. Set `TOOLFORGE_BLESS=1` to rewrite it.

use std::path::PathBuf;

use toolforge_core::{generate_domain, validate_toolset, DomainGenConfig, ToolGraph};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/domain_seed7_tools8.json")
}

fn small() -> ToolGraph {
    let cfg = DomainGenConfig { tools: 8, tables: 4, test_mode: true, ..DomainGenConfig::default() };
    generate_domain(7, &cfg).expect("test-mode config is feasible").1
}

#[test]
fn seed7_test_mode_matches_golden() {
    let text = small().to_json();
    let path = golden_path();
    if std::env::var_os("TOOLFORGE_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file present");
    let want = ToolGraph::from_json(&golden).unwrap();
    let got = ToolGraph::from_json(&text).unwrap();
    let ids = |g: &ToolGraph| g.tools().iter().map(|t| t.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&got), ids(&want));
    assert_eq!(got.edges(), want.edges());
    assert_eq!(text, golden);
}

#[test]
fn golden_graph_is_valid() {
    let g = ToolGraph::from_json(&std::fs::read_to_string(golden_path()).unwrap()).unwrap();
    assert_eq!(g.len(), 8);
    assert!(g.is_dag());
    assert!(validate_toolset(&g).passed);
}
