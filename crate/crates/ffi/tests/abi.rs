use std::ffi::{CStr, CString};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use topicforge::corpus::{generate_synthetic, SyntheticSpec};
use topicforge_ffi::*;

fn last_error() -> String {
    let p = tf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_corpus(dir: &Path) -> CString {
    let (corpus, _) = generate_synthetic(&SyntheticSpec::new(3, 30, 400, 9)).unwrap();
    let path = dir.join("corpus.jsonl");
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn train_cluster_and_read_centroids() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_corpus(tmp.path());
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(tf_corpus_load(path.as_ptr(), &mut corpus), TfStatus::Ok);
        let mut v = 0;
        assert_eq!(tf_corpus_vocab_size(corpus, &mut v), TfStatus::Ok);
        assert_eq!(v, 30);

        let mut cfg = std::mem::zeroed::<TfTrainConfig>();
        assert_eq!(tf_train_config_default(&mut cfg), TfStatus::Ok);
        assert_eq!(
            (cfg.iterations, cfg.burn_in, cfg.lag, cfg.chains),
            (50_000, 30_000, 5_000, 4)
        );
        cfg.topics = 3;
        cfg.iterations = 300;
        cfg.burn_in = 200;
        cfg.lag = 50;
        cfg.chains = 2;
        cfg.seed = 4;
        let mut samples = ptr::null_mut();
        assert_eq!(
            tf_train(corpus, &cfg, &mut samples),
            TfStatus::Ok,
            "{}",
            last_error()
        );
        let mut n = 0;
        assert_eq!(tf_samples_count(samples, &mut n), TfStatus::Ok);
        assert_eq!(n, 6);

        let mut model = ptr::null_mut();
        assert_eq!(
            tf_cluster(samples, 0.35, 6, 0, &mut model),
            TfStatus::Ok,
            "{}",
            last_error()
        );
        let (mut k, mut width) = (0, 0);
        tf_model_num_topics(model, &mut k);
        tf_model_vocab_size(model, &mut width);
        assert_eq!((k, width), (3, 30));
        for i in 0..k {
            let mut size = 0;
            assert_eq!(tf_model_cluster_size(model, i, &mut size), TfStatus::Ok);
            assert_eq!(size, 6);
            let mut row = vec![0.0; width];
            assert_eq!(
                tf_model_centroid(model, i, row.as_mut_ptr(), width),
                TfStatus::Ok
            );
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut row = vec![0.0; width];
        assert_eq!(
            tf_model_centroid(model, k, row.as_mut_ptr(), width),
            TfStatus::OutOfRange
        );
        assert_eq!(
            tf_model_centroid(model, 0, row.as_mut_ptr(), width - 1),
            TfStatus::InvalidArgument
        );

        tf_model_free(model);
        tf_samples_free(samples);
        tf_corpus_free(corpus);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut corpus = ptr::null_mut();
        let missing = CString::new("/nonexistent/corpus.jsonl").unwrap();
        assert_eq!(tf_corpus_load(missing.as_ptr(), &mut corpus), TfStatus::Io);
        assert!(corpus.is_null());
        assert!(last_error().contains("/nonexistent/corpus.jsonl"));

        assert_eq!(
            tf_corpus_load(ptr::null(), &mut corpus),
            TfStatus::NullPointer
        );
        assert_eq!(
            tf_corpus_load(missing.as_ptr(), ptr::null_mut()),
            TfStatus::NullPointer
        );

        let bad = [0xffu8, 0];
        assert_eq!(
            tf_corpus_load(bad.as_ptr().cast(), &mut corpus),
            TfStatus::InvalidUtf8
        );

        let zero = [0.0; 3];
        let mut out = 0.0;
        assert_eq!(
            tf_cosine_similarity(zero.as_ptr(), zero.as_ptr(), 3, &mut out),
            TfStatus::Runtime
        );

        let mut cfg = std::mem::zeroed::<TfTrainConfig>();
        tf_train_config_default(&mut cfg);
        cfg.topics = 2;
        cfg.burn_in = cfg.iterations;
        let mut samples = ptr::null_mut();
        assert_eq!(
            tf_train(ptr::null(), &cfg, &mut samples),
            TfStatus::NullPointer
        );

        tf_corpus_free(ptr::null_mut());
        tf_samples_free(ptr::null_mut());
        tf_model_free(ptr::null_mut());
    }
}

#[test]
fn invalid_training_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_corpus(tmp.path());
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(tf_corpus_load(path.as_ptr(), &mut corpus), TfStatus::Ok);
        let mut cfg = std::mem::zeroed::<TfTrainConfig>();
        tf_train_config_default(&mut cfg);
        cfg.topics = 2;
        cfg.burn_in = cfg.iterations;
        let mut samples = ptr::null_mut();
        assert_eq!(
            tf_train(corpus, &cfg, &mut samples),
            TfStatus::InvalidArgument
        );
        assert!(last_error().contains("burn-in"));
        assert!(samples.is_null());
        tf_corpus_free(corpus);
    }
}

#[test]
fn metric_oracles() {
    let mut out = 0.0;
    let (u, v) = ([0.5, 0.5, 0.0], [0.0, 0.5, 0.5]);
    unsafe {
        assert_eq!(
            tf_cosine_similarity(u.as_ptr(), v.as_ptr(), 3, &mut out),
            TfStatus::Ok
        );
        assert!((out - 0.5).abs() < 1e-12);
        let traces = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert_eq!(tf_rhat(traces.as_ptr(), 2, 3, &mut out), TfStatus::Ok);
        assert!((out - (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }
    let version = unsafe { CStr::from_ptr(tf_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/topicforge.h");
    let header_text = fs::read_to_string(&header).unwrap();
    for name in [
        "tf_corpus_load",
        "tf_train",
        "tf_cluster",
        "tf_model_centroid",
        "tf_last_error_message",
        "TF_STATUS_OK",
    ] {
        assert!(header_text.contains(name), "header lacks {name}");
    }
    let lib = target_dir().join("libtopicforge_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("topicforge "));
}
