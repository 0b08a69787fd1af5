//! Acceptance checks, one test per criterion. Each prints a single
//! `ACCEPTANCE <id> ... PASS|FAIL` line; run with `--nocapture` to see them.
//!
//! Criteria that need the full 20news-bydate corpus are `#[ignore]`d and read
//! its location from `CRYPTEXT_20NG_ROOT`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{embed_gradient_error, fixture_config, lstm_gradient_error};
use cryptext_core::boost::mlogloss;
use cryptext_core::embed::Mode;
use cryptext_core::eval::compute_report;
use cryptext_core::pipeline::{self, Arm, ClassifierChoice, ComparisonReport, ExperimentConfig};
use cryptext_core::wordcrypt::{
    ciphertoken_hex_len, decrypt_token, derive_context, encrypt_token, CipherContext,
};
use rand::{Rng, SeedableRng};

fn verdict(id: &str, what: &str, check: impl FnOnce() -> String) {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(detail) => println!("ACCEPTANCE {id} {what}: PASS ({detail})"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("ACCEPTANCE {id} {what}: FAIL ({msg})");
            panic!("{id} failed: {msg}");
        }
    }
}

fn corpus_root() -> PathBuf {
    let root = std::env::var_os("CRYPTEXT_20NG_ROOT")
        .map(PathBuf::from)
        .expect("set CRYPTEXT_20NG_ROOT to an unpacked 20news-bydate directory (cryptext fetch)");
    assert!(
        root.join("train").is_dir(),
        "{} has no train/ directory",
        root.display()
    );
    root
}

fn assert_exact(report: &ComparisonReport) {
    let e = &report.equivariance;
    assert!(e.vocab_size_equal, "vocabulary sizes differ");
    assert!(e.doc_vectors_equal, "document vectors differ");
    assert_eq!(
        e.plaintext_leaks, 0,
        "plaintext tokens in the encrypted arm"
    );
    assert_eq!(e.round_trip_failures, 0);
    for c in &report.classifiers {
        assert!(c.predictions_equal, "{:?} predictions differ", c.classifier);
        assert!(c.delta.exact_equal, "{:?} reports differ", c.classifier);
        assert_eq!(c.plain, c.encrypted);
    }
}

fn run_compare(cfg: &ExperimentConfig) -> (ComparisonReport, f64) {
    let ctx = derive_context("acceptance passphrase").unwrap();
    let start = Instant::now();
    let (report, _) = pipeline::compare(cfg, &ctx).unwrap();
    (report, start.elapsed().as_secs_f64())
}

#[test]
fn c1_equivariance_on_fixture() {
    verdict(
        "C1a",
        "exact plain/encrypted equality on the bundled fixture, gbt+lstm",
        || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = fixture_config("small", dir.path());
            assert_eq!(cfg.classifier, ClassifierChoice::Both);
            let (report, secs) = run_compare(&cfg);
            assert_exact(&report);
            assert_eq!(report.classifiers.len(), 2);
            assert!(secs <= 120.0, "took {secs:.1}s");
            format!(
                "vocab {}, gbt acc {:.4}, lstm acc {:.4}, {secs:.1}s",
                report.equivariance.vocab_size_plain,
                report.classifiers[0].plain.accuracy,
                report.classifiers[1].plain.accuracy
            )
        },
    );
}

#[test]
#[ignore = "needs the 20news-bydate corpus; set CRYPTEXT_20NG_ROOT"]
fn c1_equivariance_on_20ng_subset() {
    verdict(
        "C1b",
        "exact plain/encrypted equality on a 4-category 20NG subset, gbt+lstm",
        || {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = ExperimentConfig {
                corpus_root: corpus_root(),
                output_dir: dir.path().to_path_buf(),
                ..ExperimentConfig::default()
            };
            cfg.set(
                "categories",
                "comp.graphics,rec.autos,sci.space,talk.politics.guns",
            )
            .unwrap();
            let (report, secs) = run_compare(&cfg);
            assert_exact(&report);
            assert!(secs <= 120.0, "took {secs:.1}s");
            format!(
                "gbt acc {:.4}, lstm acc {:.4}, {secs:.1}s",
                report.classifiers[0].plain.accuracy, report.classifiers[1].plain.accuracy
            )
        },
    );
}

#[test]
#[ignore = "needs the 20news-bydate corpus; set CRYPTEXT_20NG_ROOT"]
fn c2_full_corpus_reproduction() {
    verdict(
        "C2",
        "full 20NG bydate: gbt 51±5, lstm 55±5 / 54±5, zero gap",
        || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ExperimentConfig {
                corpus_root: corpus_root(),
                output_dir: dir.path().to_path_buf(),
                ..ExperimentConfig::default()
            };
            let (report, secs) = run_compare(&cfg);
            assert_exact(&report);
            let gbt = &report.classifiers[0];
            let lstm = &report.classifiers[1];
            let within = |x: f64, target: f64| (x - target).abs() <= 0.05;
            assert!(
                within(gbt.plain.accuracy, 0.51),
                "gbt plain {:.4}",
                gbt.plain.accuracy
            );
            assert!(
                within(gbt.encrypted.accuracy, 0.51),
                "gbt encrypted {:.4}",
                gbt.encrypted.accuracy
            );
            assert!(
                within(lstm.plain.accuracy, 0.55),
                "lstm plain {:.4}",
                lstm.plain.accuracy
            );
            assert!(
                within(lstm.encrypted.accuracy, 0.54),
                "lstm encrypted {:.4}",
                lstm.encrypted.accuracy
            );
            format!(
                "gbt {:.4}/{:.4}, lstm {:.4}/{:.4}, {secs:.0}s",
                gbt.plain.accuracy,
                gbt.encrypted.accuracy,
                lstm.plain.accuracy,
                lstm.encrypted.accuracy
            )
        },
    );
}

#[test]
fn c3_gradient_correctness() {
    verdict(
        "C3",
        "analytic gradients vs central differences, rel err < 1e-4",
        || {
            let mut worst: f64 = 0.0;
            for seed in [1, 2] {
                for mode in [Mode::PvDmMean, Mode::PvDbow] {
                    let (err, active) = embed_gradient_error(mode, seed);
                    assert!(active > 0);
                    assert!(err < 1e-4, "embed {mode:?} seed {seed}: {err:e}");
                    worst = worst.max(err);
                }
                let (err, active) = lstm_gradient_error(seed);
                assert!(active > 0);
                assert!(err < 1e-4, "lstm seed {seed}: {err:e}");
                worst = worst.max(err);
            }
            format!("worst relative error {worst:.2e}")
        },
    );
}

#[test]
#[allow(clippy::approx_constant)]
fn c4_loss_oracles() {
    verdict("C4", "mlogloss of uniform predictions equals ln C", || {
        let uniform = |c: usize, n: usize| {
            mlogloss(
                &vec![1.0 / c as f64; c * n],
                c,
                &(0..n).map(|i| i % c).collect::<Vec<_>>(),
            )
        };
        let l20 = uniform(20, 40);
        let l2 = uniform(2, 10);
        assert!((l20 - 2.995732).abs() <= 1e-6, "C=20: {l20}");
        assert!((l2 - 0.693147).abs() <= 1e-6, "C=2: {l2}");
        format!("C=20 {l20:.6}, C=2 {l2:.6}")
    });
}

#[test]
fn c5_crypto_correctness() {
    verdict(
        "C5",
        "AES-256-CBC known answers, 1000 round trips, length law 1..48",
        || {
            let key: [u8; 32] =
                hex::decode("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4")
                    .unwrap()
                    .try_into()
                    .unwrap();
            let iv: [u8; 16] = hex::decode("000102030405060708090a0b0c0d0e0f")
                .unwrap()
                .try_into()
                .unwrap();
            let nist = CipherContext::with_key_iv(key, iv);
            let block = hex::decode("6bc1bee22e409f96e93d7e117393172a").unwrap();
            assert_eq!(
                hex::encode(nist.encrypt_bytes(&block)),
                "f58c4c04d6e5f1ba779eabfb5f7bfbd6485a5c81519cf378fa36d42b8547edc0"
            );
            assert_eq!(
                encrypt_token(&nist, "apple").unwrap().as_str(),
                "f8673d5d5c8777c20852c5b56696abdc"
            );
            let k = derive_context("k").unwrap();
            assert_eq!(
                hex::encode(k.key()),
                "8254c329a92850f6d539dd376f4816ee2764517da5e0235514af433164480d7a"
            );
            assert_eq!(hex::encode(k.iv()), "ce746cbe410b8668d70ac42007230e91");
            assert_eq!(
                encrypt_token(&k, "apple").unwrap().as_str(),
                "66e9d420deba156a2a31591325835a14"
            );
            assert_eq!(
                encrypt_token(&k, "sixteen-bytes-xx").unwrap().as_str(),
                "3e98ef3d52c7a295a243b4838615f4d4dc5922e5808f9505b70cde5c8bc383a8"
            );

            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
            let mut trips = 0;
            while trips < 1000 {
                let len = rng.gen_range(1..=24);
                let tok: String = (0..len).map(|_| rng.gen::<char>()).collect();
                let ct = encrypt_token(&k, &tok).unwrap();
                assert_eq!(decrypt_token(&k, &ct).unwrap(), tok);
                trips += 1;
            }
            for n in 1..=48 {
                let tok = "x".repeat(n);
                assert_eq!(
                    encrypt_token(&k, &tok).unwrap().as_str().len(),
                    ciphertoken_hex_len(n)
                );
                assert_eq!(ciphertoken_hex_len(n), 32 * (n / 16 + 1));
            }
            format!("{trips} round trips")
        },
    );
}

#[test]
fn c6_metrics_oracle() {
    verdict(
        "C6",
        "classification report on [0,0,1,1] vs [0,1,1,1]",
        || {
            let names = vec!["a".to_string(), "b".to_string()];
            let r = compute_report(&[0, 0, 1, 1], &[0, 1, 1, 1], &names).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-6;
            assert!(close(r.accuracy, 0.75));
            assert!(close(r.per_class[0].precision, 1.0));
            assert!(close(r.per_class[0].recall, 0.5));
            assert!(close(r.per_class[0].f1, 2.0 / 3.0));
            assert!(close(r.per_class[1].precision, 2.0 / 3.0));
            assert!(close(r.per_class[1].recall, 1.0));
            assert!(close(r.per_class[1].f1, 0.8));
            assert!(close(r.macro_avg.precision, 5.0 / 6.0));
            assert!(close(r.macro_avg.recall, 0.75));
            assert!(
                close(r.macro_avg.f1, 11.0 / 15.0),
                "macro f1 {}",
                r.macro_avg.f1
            );
            assert!(close(r.weighted_avg.f1, 11.0 / 15.0));
            format!("accuracy {:.6}, macro f1 {:.6}", r.accuracy, r.macro_avg.f1)
        },
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timings.json" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c7_stage_reruns_are_byte_identical() {
    verdict(
        "C7",
        "every stage re-run reproduces its artifacts byte for byte",
        || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = fixture_config("small", dir.path());
            let ctx = derive_context("determinism").unwrap();
            pipeline::compare(&cfg, &ctx).unwrap();
            let reference = snapshot(dir.path());
            let check = |stage: &str| {
                let now = snapshot(dir.path());
                for (name, bytes) in &reference {
                    assert!(
                        now.get(name) == Some(bytes),
                        "{name} changed after re-running {stage}"
                    );
                }
            };
            pipeline::stage_prep(&cfg).unwrap();
            check("prep");
            pipeline::stage_encrypt(&cfg, &ctx).unwrap();
            check("encrypt");
            for arm in Arm::BOTH {
                pipeline::stage_embed(&cfg, arm).unwrap();
                check("embed");
                pipeline::stage_train(&cfg, arm).unwrap();
                check("train");
                pipeline::stage_evaluate(&cfg, arm).unwrap();
                check("evaluate");
            }
            pipeline::compare(&cfg, &ctx).unwrap();
            check("compare");
            format!("{} artifacts", reference.len())
        },
    );
}
