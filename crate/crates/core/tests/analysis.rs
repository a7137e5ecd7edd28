use fastboost::analysis::{count_macs, count_params, parse_patterns, sweep, sweep_csv, LayerKind};
use fastboost::nn::ArchConfig;

fn configs(patterns: &str) -> Vec<ArchConfig> {
    parse_patterns(patterns)
        .unwrap()
        .iter()
        .map(|p| ArchConfig::with_expansions(p, 10))
        .collect()
}

#[test]
fn conv_macs_scale_with_area() {
    for cfg in [ArchConfig::tiny(10), ArchConfig::base(10)] {
        let small = count_macs(&cfg, 32).unwrap();
        let large = count_macs(&cfg, 64).unwrap();
        assert_eq!(large.conv_macs(), 4 * small.conv_macs());
        assert_eq!(small.params(), large.params());
    }
}

#[test]
fn conv_rows_by_hand() {
    let rep = count_macs(&ArchConfig::tiny(10), 32).unwrap();
    let row = |name: &str| rep.rows.iter().find(|r| r.name == name).unwrap().clone();
    let stem = row("stem.conv");
    assert_eq!(stem.params, 32 * 3 * 9);
    assert_eq!(stem.macs, 32 * 3 * 9 * 32 * 32);
    // the second block runs at 16x16 after one pooling step
    let dw = row("blocks.1.layers.0.depthwise");
    assert_eq!(dw.kind, LayerKind::Depthwise);
    assert_eq!(dw.macs, 128 * 9 * 16 * 16);
    let fc = row("blocks.2.attention.se.fc1");
    assert_eq!((fc.params, fc.macs), (256 * 128 + 128, 256 * 128));
}

#[test]
fn sweep_rows_are_ordered_and_formatted() {
    let rows = sweep(&configs("1-1-1-1,2-2-2-2,1-2-3-4,1-2-4-6,1-2-4-8,2-4-6-8"), 32).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.windows(2).all(|w| w[0].params < w[1].params));
    let csv = sweep_csv(&rows);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "pattern,layers,params,macs,flops");
    assert!(lines[2].starts_with("2-2-2-2,4,"));
    assert_eq!(lines.len(), 7);
    assert!(!csv.contains('\r'));
}

#[test]
fn larger_expansions_cost_more() {
    let pairs = [("1-1-1-1", "1-1-1-2"), ("2-2-2", "2-3-2"), ("1-2-4-8", "2-2-4-8")];
    for (a, b) in pairs {
        let (ca, cb) = (&configs(a)[0], &configs(b)[0]);
        let (ra, rb) = (count_macs(ca, 32).unwrap(), count_macs(cb, 32).unwrap());
        assert!(ra.params() < rb.params(), "{a} vs {b}");
        assert!(ra.macs() < rb.macs(), "{a} vs {b}");
    }
}

#[test]
fn report_mentions_convention() {
    let text = count_params(&ArchConfig::tiny(10)).unwrap().render();
    assert!(text.contains("total MACs"));
    assert!(text.contains("FLOPs = 2*MACs"));
}
