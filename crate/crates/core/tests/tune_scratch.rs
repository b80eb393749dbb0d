// scratch tuning harness — delete before finishing
use std::path::Path;

use evblur_core::adapt::{
    evaluate_on_test, load_checkpoint, run_stage, EvalDomain, EvalModel, StageConfig,
};
use evblur_core::eval::Kappas;
use evblur_core::pose::DecodeParams;
use evblur_core::sim::{generate_corpus, CorpusConfig};

#[test]
#[ignore]
fn gen_default_corpus() {
    let t = std::time::Instant::now();
    let root = Path::new("/tmp/corpus_default");
    if root.exists() {
        std::fs::remove_dir_all(root).unwrap();
    }
    generate_corpus(&CorpusConfig::default(), root, 7).unwrap();
    println!("corpus generated in {:?}", t.elapsed());
}

#[test]
#[ignore]
fn tune_stage1() {
    let corpus = Path::new("/tmp/corpus_default");
    let lr: f64 = std::env::var("LR").unwrap().parse().unwrap();
    let epochs: usize = std::env::var("EPOCHS").unwrap().parse().unwrap();
    let sigma: f64 = std::env::var("SIGMA")
        .unwrap_or_else(|_| "2.0".into())
        .parse()
        .unwrap();
    let radius: usize = std::env::var("RADIUS")
        .unwrap_or_else(|_| "3".into())
        .parse()
        .unwrap();
    let work =
        std::path::PathBuf::from(format!("/tmp/tune_s1_lr{lr}_e{epochs}_s{sigma}_r{radius}"));
    if work.exists() {
        std::fs::remove_dir_all(&work).unwrap();
    }
    let mut cfg = StageConfig::defaults(1, corpus, &work, 0);
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.sigma = sigma;
    cfg.window_radius = radius;
    let t = std::time::Instant::now();
    let out = run_stage(&cfg).unwrap();
    println!("stage 1 lr={lr} epochs={epochs} took {:?}", t.elapsed());
    for m in &out.metrics {
        println!(
            "  epoch {:2}: heat {:.6} off {:.4} mAP {:.4}",
            m.epoch, m.heatmap_loss, m.offset_loss, m.map_val
        );
    }

    // Held-out center localization: fused teacher on test blur frames.
    let (te, _) = load_checkpoint(&work.join("stage1_teacher_event")).unwrap();
    let (tie, _) = load_checkpoint(&work.join("stage1_teacher_image_event")).unwrap();
    let fused = EvalModel::Fused {
        event: &te,
        image_event: &tie,
    };
    let res = evaluate_on_test(
        &fused,
        corpus,
        EvalDomain::Blur,
        &DecodeParams::default(),
        &Kappas::default(),
    )
    .unwrap();
    println!("fused test-blur mAP {:.4} mAR {:.4}", res.map, res.mar);
}
