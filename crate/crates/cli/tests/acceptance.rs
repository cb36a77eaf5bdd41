//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

use redinfo::dist::{gates, mutual_information, Axis, JointDistribution};
use redinfo::graph::{gen_dataset, Dataset, GraphInstance, TwoPieceConfig};
use redinfo::nn::{check_gradients, Anchor, Batch, ContrastSets, EncoderConfig, Pooling, Tape};
use redinfo::pid::{
    broja_oracle, broja_unique, compute_pid, gacs_korner_components, intersection_info, PidResult, Source,
    DEFAULT_TOL, MAX_INTERSECTION_ALPHABET,
};
use redinfo::rig::{
    causal_accuracy, consistency_loss, fit_assistant, pid_of_predictions, similarity, size_penalty, train,
    Method, ModelConfig, ModelKind, ModelState, Need, PidRow, StepSwitches, TrainSchedule,
};
use redinfo::scm::{self, gen_fiif, gen_piif, Lemma1Thresholds, ScmConfig};

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!("criterion {:>2} {:<28} {}  {}", v.id, v.name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v
}

fn dirichlet_tables<const N: usize>(card: [usize; 3], count: usize, seed: u64) -> Vec<JointDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Dirichlet::<f64, N>::new([1.0; N]).unwrap();
    (0..count).map(|_| JointDistribution::new(card, law.sample(&mut rng).to_vec()).unwrap()).collect()
}

/// Worst violation of the non-negativity and decomposition identities, in bits.
fn identity_error(d: &JointDistribution, r: &PidResult) -> (f64, f64) {
    let ia = mutual_information(d, Axis::Y, Axis::A).unwrap();
    let ib = mutual_information(d, Axis::Y, Axis::B).unwrap();
    let min_component = r.components().into_iter().fold(f64::INFINITY, f64::min);
    let sum = (r.components().iter().sum::<f64>() - r.total_mi).abs();
    let ident = sum.max((r.unique_a + r.redundancy - ia).abs()).max((r.unique_b + r.redundancy - ib).abs());
    (min_component, ident)
}

/// Tables from criteria 1 to 4, kept for the intersection check.
#[derive(Default)]
struct Suite {
    tables: Vec<(JointDistribution, PidResult)>,
}

fn c1_consistency(suite: &mut Suite) -> Verdict {
    let t = Instant::now();
    let mut tables = dirichlet_tables::<8>([2, 2, 2], 500, 101);
    tables.extend(dirichlet_tables::<27>([3, 3, 3], 100, 102));
    let (mut min_c, mut worst) = (f64::INFINITY, 0.0f64);
    for d in tables {
        let r = compute_pid(&d, DEFAULT_TOL).unwrap();
        let (m, e) = identity_error(&d, &r);
        min_c = min_c.min(m);
        worst = worst.max(e);
        suite.tables.push((d, r));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = min_c >= -1e-6 && worst <= 1e-6 && secs < 120.0;
    verdict(1, "PID algebra consistency", pass, format!("min component {min_c:.2e}, worst identity {worst:.2e}, {secs:.1}s"))
}

fn c2_oracle(suite: &mut Suite) -> Verdict {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for d in dirichlet_tables::<8>([2, 2, 2], 500, 201) {
        let (u, _) = broja_unique(&d, Source::A, DEFAULT_TOL).unwrap();
        worst = worst.max((u - broja_oracle(&d, 2000).unwrap()).abs());
        let r = compute_pid(&d, DEFAULT_TOL).unwrap();
        suite.tables.push((d, r));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-3 && secs < 300.0;
    verdict(2, "BROJA oracle equivalence", pass, format!("worst |solver - oracle| {worst:.2e} bits, {secs:.1}s"))
}

fn c3_gates(suite: &mut Suite) -> Verdict {
    let near = |v: f64, want: f64, tol: f64| (v - want).abs() <= tol;
    let copy = compute_pid(&gates::copy(), DEFAULT_TOL).unwrap();
    let xor = compute_pid(&gates::xor(), DEFAULT_TOL).unwrap();
    let and_d = gates::and();
    let and = compute_pid(&and_d, DEFAULT_TOL).unwrap();
    let and_red = mutual_information(&and_d, Axis::Y, Axis::A).unwrap() - broja_oracle(&and_d, 2000).unwrap();
    let pass = near(copy.redundancy, 1.0, 1e-4)
        && near(xor.synergy, 1.0, 1e-4)
        && [xor.redundancy, xor.unique_a, xor.unique_b].iter().all(|&v| near(v, 0.0, 1e-4))
        && near(and.unique_a, 0.0, 1e-3)
        && near(and.unique_b, 0.0, 1e-3)
        && near(and.redundancy, and_red, 1e-3);
    let detail = format!(
        "copy Red {:.6}; xor Syn {:.6}; and Red {:.6} (oracle {:.6}), Uni {:.2e}/{:.2e}",
        copy.redundancy, xor.synergy, and.redundancy, and_red, and.unique_a, and.unique_b
    );
    for (d, r) in [(gates::copy(), copy), (gates::xor(), xor), (and_d, and)] {
        suite.tables.push((d, r));
    }
    verdict(3, "canonical gates", pass, detail)
}

fn c4_lemma1(suite: &mut Suite) -> Verdict {
    let t = Instant::now();
    let cfg = ScmConfig { n_bins: 16, n_samples: 100_000, ..ScmConfig::fiif(0.5) };
    let report = scm::verify_lemma1(&cfg, Lemma1Thresholds { eps_uni: 0.02, eps_red: 0.2 }).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (uni, red) = (report.measured("uni_s_given_c").unwrap(), report.measured("red").unwrap());
    let table = gen_fiif(&cfg).unwrap().table_sc(cfg.n_bins).unwrap();
    let r = compute_pid(&table, DEFAULT_TOL).unwrap();
    suite.tables.push((table, r));
    let pass = uni <= 0.02 && red >= 0.2 && secs < 60.0;
    verdict(4, "lemma 1 (FIIF)", pass, format!("Uni(Y;S|C) {uni:.4}, Red {red:.4}, {secs:.1}s"))
}

fn c5_lemma2(suite: &mut Suite) -> Verdict {
    let s_dom = ScmConfig::piif(4.0, 0.1);
    let c_dom = ScmConfig::piif(0.1, 4.0);
    let report = scm::verify_lemma2((&s_dom, &c_dom), 0.02).unwrap();
    let m = |k: &str| report.measured(k).unwrap();
    let gap_s = m("s_dominant.uni_s_given_c") - m("s_dominant.uni_c_given_s");
    let gap_c = m("c_dominant.uni_c_given_s") - m("c_dominant.uni_s_given_c");
    for cfg in [s_dom, c_dom] {
        let table = gen_piif(&cfg).unwrap().table_sc(cfg.n_bins).unwrap();
        let r = compute_pid(&table, DEFAULT_TOL).unwrap();
        suite.tables.push((table, r));
    }
    let pass = gap_s >= 0.02 && gap_c >= 0.02;
    verdict(5, "lemma 2 (PIIF)", pass, format!("S-dominant gap {gap_s:.4}, C-dominant gap {gap_c:.4}"))
}

fn c6_lemma3(suite: &mut Suite) -> Verdict {
    let sigmas = [0.25, 0.5, 1.0, 2.0, 4.0];
    let cfg = ScmConfig::default();
    let (_, curve) = scm::verify_lemma3(&sigmas, &cfg).unwrap();
    let excess = curve.iter().map(|p| p.mi_bits - p.bound_bits).fold(f64::NEG_INFINITY, f64::max);
    let rise = curve.windows(2).map(|w| w[1].mi_bits - w[0].mi_bits).fold(f64::NEG_INFINITY, f64::max);
    for &sigma in &sigmas {
        let c = ScmConfig { sigma_n: sigma, ..cfg.clone() };
        let table = gen_fiif(&c).unwrap().table_sc(c.n_bins).unwrap();
        let r = compute_pid(&table, DEFAULT_TOL).unwrap();
        suite.tables.push((table, r));
    }
    let pass = excess <= 0.05 && rise <= 0.02;
    let mi: Vec<String> = curve.iter().map(|p| format!("{:.3}", p.mi_bits)).collect();
    verdict(6, "lemma 3 bound", pass, format!("I = [{}], max excess {excess:.4}, max rise {rise:.4}", mi.join(", ")))
}

/// `I(Y; Q)` for the Gács–Körner common part `Q`. Every common function is
/// a function of `Q`, so this equals the intersection information.
fn common_part_info(d: &JointDistribution) -> f64 {
    let (f, _) = gacs_korner_components(d);
    let k = f.iter().max().map_or(1, |m| m + 1);
    let q = d.map_a(k, |a| f[a]).unwrap();
    mutual_information(&q, Axis::Y, Axis::A).unwrap()
}

fn c7_intersection(suite: &Suite) -> Verdict {
    let (mut worst, mut exhaustive) = (f64::NEG_INFINITY, 0);
    for (d, r) in &suite.tables {
        let [_, ca, cb] = d.card();
        let bits = if ca <= MAX_INTERSECTION_ALPHABET && cb <= MAX_INTERSECTION_ALPHABET {
            exhaustive += 1;
            intersection_info(d).unwrap().bits
        } else {
            common_part_info(d)
        };
        worst = worst.max(bits - r.redundancy);
    }
    let pass = worst <= 1e-6;
    let n = suite.tables.len();
    verdict(7, "intersection lower bound", pass, format!("{n} tables ({exhaustive} exhaustive), max I_cap - Red {worst:.2e}"))
}

fn pick_batch(ds: &Dataset) -> Vec<&GraphInstance> {
    let mut picked = Vec::new();
    for y in [0, 0, 1, 1, 2] {
        let g = ds.train.iter().find(|g| g.y == y && !picked.iter().any(|p: &&GraphInstance| std::ptr::eq(*p, *g)));
        picked.push(g.unwrap());
    }
    picked
}

fn contrast_sets(labels: &[usize]) -> ContrastSets {
    let anchors = (0..labels.len())
        .filter_map(|i| {
            let positives: Vec<usize> = (0..labels.len()).filter(|&j| j != i && labels[j] == labels[i]).collect();
            let negatives: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != labels[i]).collect();
            (!positives.is_empty()).then_some(Anchor { index: i, positives, negatives })
        })
        .collect();
    ContrastSets { anchors }
}

fn c8_gradients() -> Verdict {
    let ds = gen_dataset(&TwoPieceConfig { n_train: 90, n_val: 90, n_test: 90, seed: 8, ..TwoPieceConfig::default() }).unwrap();
    let graphs = pick_batch(&ds);
    let batch = Batch::new(&graphs);
    let labels: Vec<usize> = graphs.iter().map(|g| g.y).collect();
    let sets = Rc::new(contrast_sets(&labels));
    let mut worst = 0.0f64;
    let mut entries = 0;
    for seed in [1, 2, 3] {
        let cfg = ModelConfig { kind: ModelKind::Masked, in_dim: 1, encoder: EncoderConfig::default(), ratio: 0.25, seed };
        let mut model = ModelState::new(cfg);
        // Move mu away from 1 so its gradient is not trivially symmetric.
        model.store.value_mut(model.log_mu)[(0, 0)] = 0.3;
        let ids: Vec<_> = model.store.ids().collect();
        // A small step keeps the probes from straddling ReLU kinks.
        let r = check_gradients(&model.store, &ids, 1e-6, 3, |store| {
            let mut m = model.clone();
            m.store = store.clone();
            let mut t = Tape::new();
            let out = m.forward(&mut t, &batch, Need { spurious: true, consistency: true, detach_mask: false });
            let ce_c = t.softmax_ce(out.logits_c, batch.labels.clone());
            let ce_s = t.softmax_ce(out.logits_s.unwrap(), batch.labels.clone());
            let l_c = consistency_loss(&mut t, out.rep_s.unwrap(), out.rep_cc.unwrap());
            let rho = t.param(&m.store, m.log_mu);
            let mu = t.exp(rho);
            let weighted = t.scale_by(l_c, mu);
            let rho2 = t.square(rho);
            let sim = similarity(&mut t, out.rep_c, 0.5);
            let cont = t.contrastive(sim, sets.clone());
            let size = size_penalty(&mut t, &batch, out.w_c.unwrap(), 0.25);
            let mut loss = ce_c;
            for term in [ce_s, weighted, rho2, cont, size] {
                loss = t.add(loss, term);
            }
            (t, loss)
        });
        worst = worst.max(r.rel_error);
        entries += r.entries;
    }
    let pass = worst <= 1e-3;
    verdict(8, "gradient correctness", pass, format!("max relative error {worst:.2e} over {entries} entries, 3 seeds"))
}

#[derive(Debug, Default, Clone, Copy)]
struct SeedRun {
    erm: f64,
    rig: f64,
    gala: f64,
    no_step1: f64,
    rig_pid: Option<PidRow>,
}

fn experiment_schedule(seed: u64) -> TrainSchedule {
    TrainSchedule {
        seed,
        epochs: 100,
        lambda2: 1.0,
        lambda3: 8.0,
        encoder: EncoderConfig { pooling: Pooling::Sum, ..EncoderConfig::default() },
        ..TrainSchedule::default()
    }
}

fn run_seed(seed: u64) -> SeedRun {
    let t = Instant::now();
    let ds = gen_dataset(&TwoPieceConfig { a: 0.8, b: 0.9, seed, ..TwoPieceConfig::default() }).unwrap();
    let base = experiment_schedule(seed);
    // The assistant is the ERM baseline itself.
    let assistant = fit_assistant(&ds, &base).unwrap();
    let mut run = SeedRun { erm: causal_accuracy(&assistant.model, &ds.test), ..SeedRun::default() };
    let variants = [
        ("rig", base.clone()),
        ("gala", TrainSchedule { method: Method::GalaLike, ..base.clone() }),
        ("no_step1", TrainSchedule { steps: StepSwitches { redundancy: false, ..StepSwitches::default() }, ..base.clone() }),
    ];
    for (name, schedule) in variants {
        let out = train(&ds, &schedule, Some(&assistant)).unwrap();
        let acc = causal_accuracy(&out.model, &ds.test);
        match name {
            "rig" => {
                run.rig = acc;
                run.rig_pid = Some(pid_of_predictions(&out.model, &ds.test).unwrap());
            }
            "gala" => run.gala = acc,
            _ => run.no_step1 = acc,
        }
    }
    println!(
        "  seed {seed}: ERM {:.3}  RIG {:.3}  gala_like {:.3}  no_step1 {:.3}  ({:.0}s)",
        run.erm,
        run.rig,
        run.gala,
        run.no_step1,
        t.elapsed().as_secs_f64()
    );
    run
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c9_to_c11() -> Vec<Verdict> {
    let t = Instant::now();
    let runs: Vec<SeedRun> = (0..5).map(run_seed).collect();
    let per_seed = t.elapsed() / 5;
    let erm = mean(runs.iter().map(|r| r.erm));
    let rig = mean(runs.iter().map(|r| r.rig));
    let gala = mean(runs.iter().map(|r| r.gala));
    let no_step1 = mean(runs.iter().map(|r| r.no_step1));
    let pass9 = rig - erm >= 0.10 && rig - gala >= 0.0 && per_seed < Duration::from_secs(30 * 60);
    let v9 = verdict(
        9,
        "desk-scale OOD separation",
        pass9,
        format!(
            "mean OOD acc RIG {rig:.3}, ERM {erm:.3} (diff {:+.1} pts, need +10), gala_like {gala:.3} (diff {:+.1} pts), {:.0}s/seed",
            100.0 * (rig - erm),
            100.0 * (rig - gala),
            per_seed.as_secs_f64()
        ),
    );
    let pids: Vec<PidRow> = runs.iter().filter_map(|r| r.rig_pid).collect();
    let red = mean(pids.iter().map(|p| p.red));
    let uc = mean(pids.iter().map(|p| p.uniq_c));
    let us = mean(pids.iter().map(|p| p.uniq_s));
    let syn = mean(pids.iter().map(|p| p.syn));
    let pass10 = red > 0.02 && uc > us && us <= 0.05;
    let v10 = verdict(
        10,
        "PID-of-predictions pattern",
        pass10,
        format!("mean over seeds: Red {red:.4}, Uniq_C {uc:.4}, Uniq_S {us:.4}, Syn {syn:.4}"),
    );
    let v11 = verdict(
        11,
        "ablation direction",
        rig >= no_step1,
        format!("mean OOD acc RIG {rig:.3} vs redundancy step disabled {no_step1:.3}"),
    );
    vec![v9, v10, v11]
}

fn c12_determinism() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let config = |out: &str| {
        format!(
            r#"
out = "{out}"
[data.generate]
a = 0.8
b = 0.9
n_train = 300
n_val = 100
n_test = 100
seed = 12
[schedule]
method = "rig"
epochs = 12
warmup_epochs = 4
red_epochs = 2
max_epochs = 2
early_stop_from = 12
lambda3 = 8.0
seed = 12
"#
        )
    };
    let mut histories = Vec::new();
    for name in ["first", "second"] {
        let path = dir.path().join(format!("{name}.toml"));
        fs::write(&path, config(name)).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_redinfo"))
            .args(["train", "--config", path.to_str().unwrap()])
            .env("RUST_LOG", "off")
            .status()
            .unwrap();
        assert!(status.success(), "train exited with {status}");
        histories.push(fs::read(dir.path().join(name).join("history.csv")).unwrap());
    }
    let identical = histories[0] == histories[1];
    let rows = String::from_utf8_lossy(&histories[0]).lines().count().saturating_sub(1);
    let models_equal = fs::read(dir.path().join("first/model.json")).unwrap()
        == fs::read(Path::new(dir.path()).join("second/model.json")).unwrap();
    verdict(
        12,
        "determinism",
        identical && rows == 12,
        format!("history CSV bit-identical: {identical} ({rows} epochs); checkpoints identical: {models_equal}"),
    )
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are accepted and ignored.
    let mut suite = Suite::default();
    let mut verdicts = vec![
        c1_consistency(&mut suite),
        c2_oracle(&mut suite),
        c3_gates(&mut suite),
        c4_lemma1(&mut suite),
        c5_lemma2(&mut suite),
        c6_lemma3(&mut suite),
    ];
    verdicts.push(c7_intersection(&suite));
    verdicts.push(c8_gradients());
    verdicts.push(c12_determinism());
    verdicts.extend(c9_to_c11());
    verdicts.sort_by_key(|v| v.id);
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| format!("{} ({})", v.id, v.name)).collect();
    println!("\nsummary:");
    for v in &verdicts {
        println!("  {:>2} {}", v.id, if v.pass { "PASS" } else { "FAIL" });
    }
    if failed.is_empty() {
        println!("all {} criteria passed", verdicts.len());
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
