use flynet::classifier::fit;
use flynet::dataset::{apply_appearance, generate_synthetic, Appearance};
use flynet::encoder::{build_projection, encode_traverse};
use flynet::eval::Tolerance;
use flynet::pipeline::{rnn_training_sequences, score_descriptors, PipelineConfig};
use flynet::rng::Rng;
use flynet::rnn::{fit_rnn, rnn_loss_and_grads, rnn_match};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.002);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(512);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);

    let mut cfg = PipelineConfig::default();
    cfg.synth.num_places = 200;
    cfg.synth.seed = 1234;
    cfg.synth.appearance = Appearance::Extreme;
    cfg.synth.noise_sigma = 0.15;
    cfg.synth.occluder_count = 3;
    cfg.synth.viewpoint_jitter_px = 2;
    cfg.tolerance = Tolerance { frames: 5 };
    cfg.encoder.seed = 1234;
    cfg.train.seed = 1234;
    cfg.rnn_train.seed = 1234;
    cfg.rnn_train.epochs = epochs;
    cfg.rnn_train.learning_rate = lr;
    cfg.rnn_train.batch_size = batch;
    cfg.rnn_hidden = hidden;

    let (reference, query) = generate_synthetic(&cfg.synth).unwrap();
    let projection = build_projection(&cfg.encoder).unwrap();
    let ref_desc = encode_traverse(&projection, &reference, &cfg.encoder).unwrap();
    let head = fit(&ref_desc, &reference.labels, &cfg.train).unwrap().head;

    let sequences = rnn_training_sequences(&cfg, &reference, &projection, &head).unwrap();
    let model = fit_rnn(&sequences, cfg.rnn_hidden, &cfg.rnn_train).unwrap();

    // Training-window loss and stateful accuracies.
    let mut train_loss = 0.0;
    let mut windows = 0;
    for seq in &sequences {
        for chunk_start in (0..seq.inputs.len()).step_by(cfg.rnn_train.bptt_len) {
            let end = (chunk_start + cfg.rnn_train.bptt_len).min(seq.inputs.len());
            let (l, _) = rnn_loss_and_grads(
                &model,
                &seq.inputs[chunk_start..end],
                &seq.labels[chunk_start..end],
                f64::INFINITY,
            )
            .unwrap();
            train_loss += l;
            windows += 1;
        }
    }
    eprintln!("train window mean loss: {:.4} (ln R = {:.3})", train_loss / windows as f64, (200.0f64).ln());

    let acc = |inputs: &[Vec<f64>], labels: &[usize], tag: &str| {
        let m = rnn_match(&model, inputs).unwrap();
        let correct = m
            .iter()
            .zip(labels)
            .filter(|((p, _), &l)| p.abs_diff(l) <= 5)
            .count();
        eprintln!("  {tag}: acc@5 {:.3}", correct as f64 / labels.len() as f64);
    };

    // Stateful over the full clean reference.
    acc(&sequences[0].inputs, &sequences[0].labels, "clean reference (stateful)");

    // Fresh extreme copy of reference frames.
    let mut rng = Rng::for_stream(999, 7);
    let fresh_frames: Vec<_> = reference
        .frames
        .iter()
        .map(|f| apply_appearance(f, Appearance::Extreme, cfg.synth.noise_sigma, cfg.synth.occluder_count, &mut rng))
        .collect();
    let fresh = flynet::dataset::Traverse::new(fresh_frames, reference.labels.clone(), "fresh").unwrap();
    let fresh_desc = encode_traverse(&projection, &fresh, &cfg.encoder).unwrap();
    let fresh_scores = score_descriptors(&head, &fresh_desc).unwrap();
    let fresh_inputs: Vec<Vec<f64>> = fresh_scores.iter().map(|s| s.scores().to_vec()).collect();
    acc(&fresh_inputs, &reference.labels, "fresh extreme copy (stateful)");

    // Actual query.
    let query_desc = encode_traverse(&projection, &query, &cfg.encoder).unwrap();
    let query_scores = score_descriptors(&head, &query_desc).unwrap();
    let query_inputs: Vec<Vec<f64>> = query_scores.iter().map(|s| s.scores().to_vec()).collect();
    let single_frame = query_scores
        .iter()
        .enumerate()
        .filter(|(i, s)| s.argmax().abs_diff(*i) <= 5)
        .count();
    eprintln!("  single-frame query: acc@5 {:.3}", single_frame as f64 / 200.0);
    acc(&query_inputs, &reference.labels, "query (stateful)");

    // Windowed evaluation: reset state every bptt_len steps, like training.
    let mut windowed = Vec::new();
    for start in (0..query_inputs.len()).step_by(cfg.rnn_train.bptt_len) {
        let end = (start + cfg.rnn_train.bptt_len).min(query_inputs.len());
        windowed.extend(rnn_match(&model, &query_inputs[start..end]).unwrap());
    }
    let correct = windowed
        .iter()
        .zip(&reference.labels)
        .filter(|((p, _), &l)| p.abs_diff(l) <= 5)
        .count();
    eprintln!("  query (windowed): acc@5 {:.3}", correct as f64 / 200.0);
    let clean_w: usize = (0..sequences[0].inputs.len())
        .step_by(cfg.rnn_train.bptt_len)
        .flat_map(|start| {
            let end = (start + cfg.rnn_train.bptt_len).min(sequences[0].inputs.len());
            rnn_match(&model, &sequences[0].inputs[start..end]).unwrap()
        })
        .zip(&sequences[0].labels)
        .filter(|((p, _), &l)| p.abs_diff(l) <= 5)
        .count();
    eprintln!("  clean reference (windowed): acc@5 {:.3}", clean_w as f64 / 200.0);
}
