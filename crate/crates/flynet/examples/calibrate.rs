use flynet::dataset::Appearance;
use flynet::eval::Tolerance;
use flynet::pipeline::{run_pipeline, FilterKind, PipelineConfig, TraverseSource};

fn base_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.num_places = 200;
    cfg.synth.seed = 1234;
    cfg.tolerance = Tolerance { frames: 5 };
    cfg.encoder.seed = 1234;
    cfg.train.seed = 1234;
    cfg.rnn_train.seed = 1234;
    cfg
}

fn run(cfg: &PipelineConfig, label: &str) {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let outcome = run_pipeline(
        cfg,
        &TraverseSource::Synthetic,
        &TraverseSource::Synthetic,
        None,
        dir.path(),
    )
    .unwrap();
    // prediction accuracy within tolerance
    let correct = outcome
        .records
        .iter()
        .filter(|r| r.predicted.map(|p| p.abs_diff(r.gt_ref) <= 5).unwrap_or(false))
        .count();
    eprintln!(
        "  {label:24} auc {:.4}  acc@5 {:.3}  ({:.1}s)",
        outcome.auc,
        correct as f64 / outcome.records.len() as f64,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "identity".into());
    match mode.as_str() {
        "identity" => {
            eprintln!("identity pair (appearance none):");
            for filter in [FilterKind::None, FilterKind::SeqSlam, FilterKind::Cann] {
                let mut c = base_cfg();
                c.filter = filter;
                run(&c, filter.name());
            }
        }
        "extreme" => {
            let mut cfg = base_cfg();
            cfg.synth.appearance = Appearance::Extreme;
            cfg.synth.noise_sigma = 0.15;
            cfg.synth.occluder_count = 3;
            cfg.synth.viewpoint_jitter_px = 2;
            eprintln!("extreme pair:");
            for filter in [FilterKind::None, FilterKind::SeqSlam] {
                let mut c = cfg.clone();
                c.filter = filter;
                run(&c, filter.name());
            }
            // seqslam knob sweep
            for (ds, window) in [(10usize, 10usize), (20, 20), (20, 40), (10, 40)] {
                let mut c = cfg.clone();
                c.filter = FilterKind::SeqSlam;
                c.seqslam.ds = ds;
                c.seqslam.enhance_window = window;
                run(&c, &format!("seqslam ds={ds} w={window}"));
            }
            // hamming mode
            let mut c = cfg.clone();
            c.filter = FilterKind::SeqSlam;
            c.matrix_source = flynet::seqslam::MatrixSource::Hamming;
            run(&c, "seqslam hamming");
        }
        "cann" => {
            let mut cfg = base_cfg();
            cfg.synth.appearance = Appearance::Extreme;
            cfg.synth.noise_sigma = 0.15;
            cfg.synth.occluder_count = 3;
            cfg.synth.viewpoint_jitter_px = 2;
            eprintln!("cann sweep on extreme pair:");
            for gain in [0.25, 0.5, 1.0] {
                for inhibition in [0.05, 0.1, 0.3] {
                    let mut c = cfg.clone();
                    c.filter = FilterKind::Cann;
                    c.cann.input_gain = gain;
                    c.cann.inhibition = inhibition;
                    run(&c, &format!("cann k={gain} phi={inhibition}"));
                }
            }
        }
        "rnn" => {
            let mut cfg = base_cfg();
            cfg.synth.appearance = Appearance::Extreme;
            cfg.synth.noise_sigma = 0.15;
            cfg.synth.occluder_count = 3;
            cfg.synth.viewpoint_jitter_px = 2;
            eprintln!("rnn sweep on extreme pair:");
            for (epochs, batch, lr, augment, hidden) in [
                (30usize, 4usize, 0.002f64, 3usize, 512usize),
                (50, 4, 0.002, 3, 512),
                (80, 4, 0.002, 3, 512),
                (50, 4, 0.002, 5, 512),
            ] {
                let mut c = cfg.clone();
                c.filter = FilterKind::Rnn;
                c.rnn_train.epochs = epochs;
                c.rnn_train.batch_size = batch;
                c.rnn_train.learning_rate = lr;
                c.rnn_augment = augment;
                c.rnn_hidden = hidden;
                run(&c, &format!("rnn e={epochs} b={batch} lr={lr} a={augment} h={hidden}"));
            }
        }
        "wta" => {
            use flynet::classifier::{fit, TrainConfig};
            use flynet::dataset::SynthConfig;
            use flynet::encoder::{build_projection, encode_traverse, EncoderConfig};
            let args: Vec<String> = std::env::args().collect();
            let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(77);
            let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
            let synth = SynthConfig { num_places: 100, seed, ..Default::default() };
            let (reference, _) = flynet::dataset::generate_synthetic(&synth).unwrap();
            let train = TrainConfig { epochs: 50, batch_size: batch, seed, ..Default::default() };
            let mut measure = |ratio: f64, wta: f64| -> f64 {
                let enc = EncoderConfig {
                    sampling_ratio: ratio,
                    wta_fraction: wta,
                    seed: 77,
                    ..Default::default()
                };
                let w = build_projection(&enc).unwrap();
                let descs = encode_traverse(&w, &reference, &enc).unwrap();
                let result = fit(&descs, &reference.labels, &train).unwrap();
                result.trace.last().unwrap().accuracy
            };
            eprintln!("wta sweep at ratio 0.1:");
            for wta in [0.05, 0.25, 0.4, 0.5, 0.75, 0.95] {
                eprintln!("  wta {wta}: acc {:.4}", measure(0.1, wta));
            }
            eprintln!("ratio sweep at wta 0.5:");
            for ratio in [0.1, 0.3, 0.5, 0.7, 0.9] {
                eprintln!("  ratio {ratio}: acc {:.4}", measure(ratio, 0.5));
            }
        }
        _ => eprintln!("unknown mode"),
    }
}
// appended: rnn sweep handled in main via mode == "rnn" (see match arm patch)
