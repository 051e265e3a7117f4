//! End-to-end ingestion checks: canonical round-trips on generated and
//! perturbed instances, the 32-job PSPLIB fixture, and error surfaces.

use pnf_core::graph::Relation;
use pnf_core::ingest::{parse_psplib, read_canonical, write_canonical, IngestError};
use pnf_core::synthgen::{generate_project, perturb, GenConfig, Perturbation};

#[test]
fn canonical_roundtrip_is_byte_stable() {
    let inst = generate_project(&GenConfig::new(50, 0.1, 13)).unwrap();
    let bytes = write_canonical(&inst).unwrap();
    let back = read_canonical(&bytes).unwrap();
    assert_eq!(back.t_true, inst.t_true);
    assert_eq!(back.c_true, inst.c_true);
    assert_eq!(back.demands, inst.demands);
    assert_eq!(back.graph.edges(), inst.graph.edges());
    let again = write_canonical(&back).unwrap();
    assert_eq!(bytes, again, "write -> read -> write must be byte-identical");
}

#[test]
fn canonical_roundtrip_preserves_missing_mask() {
    let inst = generate_project(&GenConfig::new(12, 0.15, 4)).unwrap();
    let masked = perturb(&inst, Perturbation::Missingness { rate: 0.4 }, 8).unwrap();
    let bytes = write_canonical(&masked).unwrap();
    let back = read_canonical(&bytes).unwrap();
    assert_eq!(back.demand_mask, masked.demand_mask);
    // Observed entries survive exactly; masked entries are absent, not NaN.
    let mask = masked.demand_mask.as_ref().unwrap();
    for i in 0..masked.n_activities() {
        for k in 0..masked.n_resources() {
            if mask[i][k] {
                assert_eq!(back.demands[i][k], masked.demands[i][k]);
            }
        }
    }
}

#[test]
fn psplib_fixture_parses_with_consistent_successor_counts() {
    let text = include_str!("data/fixture_j30.sm");
    let inst = parse_psplib(text).unwrap();
    assert_eq!(inst.n_activities(), 32);
    assert_eq!(inst.n_resources(), 4);

    // Edge count equals the sum of #successors fields in the file.
    let declared: usize = text
        .lines()
        .skip_while(|l| !l.contains("PRECEDENCE RELATIONS"))
        .skip(2)
        .take_while(|l| !l.starts_with("****"))
        .filter_map(|l| {
            let v: Vec<i64> = l
                .split_whitespace()
                .filter_map(|t| t.parse().ok())
                .collect();
            v.get(2).map(|&c| c as usize)
        })
        .sum();
    let prec = inst
        .graph
        .edges()
        .iter()
        .filter(|e| e.relation == Relation::Precedence)
        .count();
    assert_eq!(prec, declared);

    // Structure is a valid schedulable DAG with normalized demands.
    assert!(inst.graph.topo_order().is_ok());
    for row in &inst.demands {
        for &d in row {
            assert!((0.0..=1.0).contains(&d));
        }
    }
    // Dummy source and sink have zero durations.
    let t = inst.t_true.as_ref().unwrap();
    assert_eq!(t[0], 0.0);
    assert_eq!(t[31], 0.0);

    // The parsed instance serializes through the canonical format.
    let bytes = write_canonical(&inst).unwrap();
    let back = read_canonical(&bytes).unwrap();
    assert_eq!(write_canonical(&back).unwrap(), bytes);
}

#[test]
fn malformed_psplib_inputs_report_lines() {
    let text = include_str!("data/fixture_j30.sm");
    // Drop everything from REQUESTS/DURATIONS onward.
    let cut = text.split("REQUESTS/DURATIONS").next().unwrap();
    match parse_psplib(cut) {
        Err(IngestError::ParseError { expected, .. }) => {
            assert!(expected.contains("REQUESTS/DURATIONS"));
        }
        other => panic!("expected ParseError, got {other:?}"),
    }
    // Corrupt one request row.
    let corrupted = text.replace("  5      1    ", "  5      x    ");
    match parse_psplib(&corrupted) {
        Err(IngestError::ParseError { line, .. }) => assert!(line > 0),
        other => panic!("expected ParseError, got {other:?}"),
    }
}
