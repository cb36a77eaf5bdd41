use redinfo::graph::{from_jsonl, gen_dataset, to_jsonl, Dataset, GraphInstance, MotifKind, TestShift, TwoPieceConfig};

fn cfg(a: f64, b: f64, n_train: usize, n_test: usize) -> TwoPieceConfig {
    TwoPieceConfig { n_train, n_val: 90, n_test, ..TwoPieceConfig::new(a, b) }
}

fn causal_guess(g: &GraphInstance) -> usize {
    let m = MotifKind::identify(&g.sub_edges(&g.causal)).unwrap();
    MotifKind::CAUSAL.iter().position(|&k| k == m).unwrap()
}

fn spurious_guess(g: &GraphInstance) -> usize {
    let m = MotifKind::identify(&g.sub_edges(&g.spurious)).unwrap();
    MotifKind::SPURIOUS.iter().position(|&k| k == m).unwrap()
}

fn accuracy(gs: &[GraphInstance], f: impl Fn(&GraphInstance) -> usize) -> f64 {
    gs.iter().filter(|g| f(g) == g.y).count() as f64 / gs.len() as f64
}

#[test]
fn causal_motif_decides_label_when_a_is_one() {
    let ds = gen_dataset(&cfg(1.0, 1.0 / 3.0, 1000, 1000)).unwrap();
    assert_eq!(accuracy(&ds.train, causal_guess), 1.0);
    assert_eq!(accuracy(&ds.test, causal_guess), 1.0);
}

#[test]
fn spurious_alignment_rate() {
    let ds = gen_dataset(&cfg(0.8, 0.9, 10_000, 90)).unwrap();
    let aligned = ds.train.iter().filter(|g| g.env == g.y).count() as f64 / ds.train.len() as f64;
    assert!((aligned - 0.9).abs() <= 0.02, "{aligned}");
}

#[test]
fn uniform_test_breaks_the_correlation() {
    let ds = gen_dataset(&cfg(0.8, 0.9, 90, 10_000)).unwrap();
    let aligned = ds.test.iter().filter(|g| g.env == g.y).count() as f64 / ds.test.len() as f64;
    assert!((aligned - 1.0 / 3.0).abs() <= 0.02, "{aligned}");
}

#[test]
fn reversed_test_shift() {
    let c = TwoPieceConfig { test_shift: TestShift::Reversed, ..cfg(0.8, 0.9, 90, 5000) };
    let ds = gen_dataset(&c).unwrap();
    let next = ds.test.iter().filter(|g| g.env == (g.y + 1) % 3).count() as f64 / ds.test.len() as f64;
    assert!((next - 0.9).abs() <= 0.02, "{next}");
}

#[test]
fn recoverability_and_leakage() {
    let ds = gen_dataset(&cfg(0.8, 0.9, 5000, 5000)).unwrap();
    let c = accuracy(&ds.train, causal_guess);
    assert!(c >= 0.8 - 0.02, "{c}");
    let s_train = accuracy(&ds.train, spurious_guess);
    let s_test = accuracy(&ds.test, spurious_guess);
    assert!((s_train - 0.9).abs() <= 0.03, "{s_train}");
    assert!((s_test - 1.0 / 3.0).abs() <= 0.03, "{s_test}");
}

#[test]
fn serialization_is_stable() {
    let ds = gen_dataset(&cfg(0.8, 0.9, 100, 90)).unwrap();
    let text = to_jsonl(&ds.train);
    let back = from_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back, ds.train);
    assert_eq!(to_jsonl(&back), text);
    let first = text.lines().next().unwrap();
    for key in ["\"n\":", "\"edges\":", "\"x\":", "\"y\":", "\"causal\":", "\"spurious\":", "\"env\":"] {
        assert!(first.contains(key), "{key}");
    }
}

#[test]
fn directory_roundtrip_and_determinism() {
    let c = cfg(0.8, 0.9, 120, 90);
    let ds = gen_dataset(&c).unwrap();
    assert_eq!(ds, gen_dataset(&c).unwrap());
    assert_ne!(ds.train, gen_dataset(&TwoPieceConfig { seed: 1, ..c }).unwrap().train);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
}

#[test]
fn malformed_lines_rejected() {
    assert!(from_jsonl("{\"n\": 2}\n".as_bytes()).is_err());
    let disconnected = r#"{"n":3,"edges":[[0,1]],"x":[[1.0],[1.0],[1.0]],"y":0,"causal":[0],"spurious":[],"env":0}"#;
    assert!(from_jsonl(disconnected.as_bytes()).is_err());
}
