//! Config parsing: the shipped presets, error paths with exact locations,
//! and the serialize/parse round trip.

use std::path::Path;

use ebf_cli::config::{ConfigError, Mode, parse_config, parse_duration};
use ebf_core::topology::Plan;

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn parse_str(text: &str) -> Result<ebf_cli::config::ParsedConfig, ConfigError> {
    parse_config(text, Path::new("."))
}

const MINIMAL: &str = r#"
mode = "simulate"
seed = 1

[workload]
loop = "open"
rate_per_sec = 10.0
fraction_text = 1.0
stop = { requests = 100 }

[topology]
entry = "server"
plan = "server"

[component.server]
kind = "non_ai"
servers = 1
service = { dist = "exponential", rate_per_sec = 20.0 }
"#;

#[test]
fn shipped_ecommerce_preset_parses_to_the_full_pipeline() {
    let text = std::fs::read_to_string(configs_dir().join("ecommerce.toml")).unwrap();
    let cfg = parse_config(&text, &configs_dir()).unwrap();
    assert_eq!(cfg.mode, Mode::Simulate);
    let topo = cfg.topology.as_ref().unwrap();
    assert_eq!(topo.entry(), "planner");
    assert_eq!(topo.components().len(), 10);
    assert_eq!(topo.module_labels(), ["recommender", "searcher"]);
    // The plan is a four-stage sequence: planner, recommender module,
    // searcher module (tiered), ranker.
    let Plan::Seq(stages) = topo.plan() else {
        panic!("expected seq")
    };
    assert_eq!(stages.len(), 4);
    assert!(
        matches!(&stages[2], Plan::Module { label, inner } if label == "searcher"
        && matches!(inner.as_ref(), Plan::Tiered { quota: 100, tiers } if tiers.len() == 3))
    );
    assert!(cfg.prediction.is_some());
    assert!(cfg.quality.is_some());
}

#[test]
fn shipped_mm1_preset_parses_with_sweep() {
    let text = std::fs::read_to_string(configs_dir().join("mm1.toml")).unwrap();
    let cfg = parse_config(&text, &configs_dir()).unwrap();
    assert_eq!(cfg.sweep, vec![1.0, 9.1, 16.7]);
    assert_eq!(cfg.prediction.as_ref().unwrap().mu_per_sec, 20.0);
}

#[test]
fn minimal_config_parses() {
    let cfg = parse_str(MINIMAL).unwrap();
    assert!(cfg.topology.is_some());
    assert!(cfg.workload.is_some());
    assert!(cfg.sweep.is_empty());
}

#[test]
fn empty_config_is_a_syntax_or_structure_error() {
    let err = parse_str("").unwrap_err();
    // An empty file is missing required keys; that's a hard parse error.
    assert!(
        matches!(
            err,
            ConfigError::Syntax { .. } | ConfigError::Constraint { .. }
        ),
        "{err:?}"
    );
}

#[test]
fn unknown_keys_are_errors_with_exact_paths() {
    let text = MINIMAL.replace("servers = 1", "servres = 1");
    let err = parse_str(&text).unwrap_err();
    match err {
        ConfigError::UnknownKey { path, .. } => {
            assert!(path.contains("component.server"), "path was {path}")
        }
        other => panic!("expected UnknownKey, got {other:?}"),
    }
}

#[test]
fn misspelled_distribution_names_the_offending_path() {
    let text = MINIMAL.replace("dist = \"exponential\"", "dist = \"exponentail\"");
    let err = parse_str(&text).unwrap_err();
    match err {
        ConfigError::Constraint { path, reason } => {
            assert_eq!(path, "component.server.service");
            assert!(reason.contains("exponentail"));
        }
        other => panic!("expected Constraint, got {other:?}"),
    }
}

#[test]
fn toml_syntax_errors_carry_line_numbers() {
    let err = parse_str("mode = \"simulate\"\nseed = = 1\n").unwrap_err();
    match err {
        ConfigError::Syntax { line, .. } => assert_eq!(line, 2),
        other => panic!("expected Syntax, got {other:?}"),
    }
}

#[test]
fn branch_weight_violations_surface_from_validation() {
    let text = MINIMAL.replace(
        "plan = \"server\"",
        "plan = \"branch(0.9: server, 0.2: server)\"",
    );
    let err = parse_str(&text).unwrap_err();
    assert!(matches!(
        err,
        ConfigError::Topology(ebf_core::topology::TopologyError::BranchWeightSumInvalid { .. })
    ));
}

#[test]
fn unstable_or_unknown_references_are_rejected() {
    let text = MINIMAL.replace("plan = \"server\"", "plan = \"seq(server, ghost)\"");
    let err = parse_str(&text).unwrap_err();
    assert!(matches!(
        err,
        ConfigError::Topology(ebf_core::topology::TopologyError::UnknownNodeId(id)) if id == "ghost"
    ));
}

#[test]
fn named_sub_plan_cycles_are_detected() {
    let text = format!("{MINIMAL}\n[plans]\na = \"seq(server, b)\"\nb = \"seq(a, server)\"\n")
        .replace("plan = \"server\"", "plan = \"a\"");
    let err = parse_str(&text).unwrap_err();
    assert!(matches!(
        err,
        ConfigError::Topology(ebf_core::topology::TopologyError::CycleDetected(_))
    ));
}

#[test]
fn sweep_must_be_positive_and_sorted() {
    let text = format!("{MINIMAL}\n[sweep]\nlambdas = [9.1, 1.0]\n");
    assert!(
        matches!(parse_str(&text).unwrap_err(), ConfigError::Constraint { path, .. } if path == "sweep.lambdas")
    );
    let text = format!("{MINIMAL}\n[sweep]\nlambdas = [-1.0, 2.0]\n");
    assert!(parse_str(&text).is_err());
}

#[test]
fn edge_delay_extension_point_must_be_zero() {
    let ok = MINIMAL.replace(
        "plan = \"server\"",
        "plan = \"server\"\nedge_delay = \"0ms\"",
    );
    assert!(parse_str(&ok).is_ok());
    let bad = MINIMAL.replace(
        "plan = \"server\"",
        "plan = \"server\"\nedge_delay = \"1ms\"",
    );
    assert!(
        matches!(parse_str(&bad).unwrap_err(), ConfigError::Constraint { path, .. } if path == "topology.edge_delay")
    );
}

#[test]
fn predict_only_configs_need_a_prediction_section() {
    let bare = "mode = \"simulate\"\nseed = 1\n";
    assert!(parse_str(bare).is_err());
    let predict_only = format!("{bare}[prediction]\nmu_per_sec = 20.0\nlambdas = [1.0, 9.1]\n");
    let cfg = parse_str(&predict_only).unwrap();
    assert!(cfg.topology.is_none());
    assert!(cfg.prediction.is_some());
}

#[test]
fn workload_requires_a_topology() {
    let text = r#"
mode = "simulate"
seed = 1

[workload]
loop = "open"
rate_per_sec = 10.0
fraction_text = 1.0
stop = { requests = 100 }
"#;
    let err = parse_str(text).unwrap_err();
    assert!(matches!(err, ConfigError::Constraint { path, .. } if path == "topology"));
}

#[test]
fn stop_rule_must_be_exactly_one_of_requests_or_duration() {
    let both = MINIMAL.replace(
        "stop = { requests = 100 }",
        "stop = { requests = 100, duration = \"10s\" }",
    );
    assert!(parse_str(&both).is_err());
    let neither = MINIMAL.replace("stop = { requests = 100 }", "stop = {}");
    assert!(parse_str(&neither).is_err());
}

#[test]
fn round_trip_preserves_the_config() {
    for name in ["ecommerce.toml", "mm1.toml"] {
        let text = std::fs::read_to_string(configs_dir().join(name)).unwrap();
        let parsed = parse_config(&text, &configs_dir()).unwrap();
        let serialized = toml::to_string(&parsed.file).unwrap();
        let reparsed = parse_config(&serialized, &configs_dir()).unwrap();
        assert_eq!(parsed.file, reparsed.file, "{name} did not round-trip");
    }
}

#[test]
fn config_hash_is_stable_per_content() {
    let a = parse_str(MINIMAL).unwrap();
    let b = parse_str(MINIMAL).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    let c = parse_str(&MINIMAL.replace("seed = 1", "seed = 2")).unwrap();
    assert_ne!(a.config_hash, c.config_hash);
}

#[test]
fn durations_parse_with_units() {
    assert_eq!(parse_duration("250ns", "t").unwrap(), 250);
    assert_eq!(parse_duration("10us", "t").unwrap(), 10_000);
    assert_eq!(parse_duration("5ms", "t").unwrap(), 5_000_000);
    assert_eq!(parse_duration("1.5s", "t").unwrap(), 1_500_000_000);
    assert_eq!(parse_duration("2m", "t").unwrap(), 120_000_000_000);
    assert_eq!(parse_duration("1h", "t").unwrap(), 3_600_000_000_000);
    assert!(parse_duration("10", "t").is_err());
    assert!(parse_duration("10 parsecs", "t").is_err());
    assert!(parse_duration("-5ms", "t").is_err());
}

#[test]
fn empirical_service_models_load_relative_to_the_config() {
    let dir = std::env::temp_dir().join(format!("ebf-empirical-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("samples.txt"),
        "# recorded service times\n10ms\n12ms\n9ms\n",
    )
    .unwrap();
    let text = MINIMAL.replace(
        "service = { dist = \"exponential\", rate_per_sec = 20.0 }",
        "service = { dist = \"empirical\", path = \"samples.txt\" }",
    );
    let cfg = parse_config(&text, &dir).unwrap();
    let topo = cfg.topology.unwrap();
    let spec = topo.component("server").unwrap();
    match &spec.service {
        ebf_core::component::ServiceTimeModel::Empirical { samples, .. } => {
            assert_eq!(samples.len(), 3)
        }
        other => panic!("expected empirical, got {other:?}"),
    }
    // An empty sample file violates the non-empty invariant.
    std::fs::write(dir.join("samples.txt"), "\n").unwrap();
    assert!(parse_config(&text, &dir).is_err());
    std::fs::remove_dir_all(&dir).ok();
}
