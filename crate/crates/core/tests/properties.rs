mod common;

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use common::*;
use nil_core::degrade::{draw_assignment, measured_snr_db, mix_at_snr, replay, ContaminationSpec, MixRecord, NoiseBank};
use nil_core::enhance::{EarlyStopping, StopDecision, WaveUNet, WaveUNetConfig};
use nil_core::intent::{ClassifierConfig, IntentClassifier};
use nil_core::metrics::{composites_unclamped, fwsnrseg, llr, segmental_snr, stoi};
use nil_core::nn::{conv1d_forward, softmax, AdamConfig, AdamState, Conv1dLayer, Tape, Tensor};
use nil_core::signal::{log_mel_features, read_wav, write_wav, AudioClip, SpectrumAnalyzer};
use proptest::prelude::*;

fn naive_conv(x: &[f64], cin: usize, t: usize, w: &[f64], b: &[f64], cout: usize, k: usize, stride: usize, dil: usize, pad: usize) -> (Vec<f64>, usize) {
    let span = dil * (k - 1) + 1;
    let tout = (t + 2 * pad - span) / stride + 1;
    let mut y = vec![0.0; cout * tout];
    for o in 0..cout {
        for j in 0..tout {
            let mut acc = b[o];
            for i in 0..cin {
                for tap in 0..k {
                    let pos = (j * stride + tap * dil) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += w[(o * cin + i) * k + tap] * x[i * t + pos as usize];
                    }
                }
            }
            y[o * tout + j] = acc;
        }
    }
    (y, tout)
}

fn naive_dft_magnitude(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in frame.iter().enumerate() {
                let a = TAU * (k * i % n) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn data_chunk(bytes: &[u8]) -> &[u8] {
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let size = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as usize;
        if &bytes[at..at + 4] == b"data" {
            return &bytes[at + 8..at + 8 + size];
        }
        at += 8 + size + (size & 1);
    }
    panic!("no data chunk");
}

fn bank(seed: u64) -> NoiseBank {
    NoiseBank::new([
        ("a".to_string(), white(seed, 1.5, 0.5)),
        ("b".to_string(), voiced(seed + 1, 2.0)),
        ("c".to_string(), white(seed + 2, 1.2, 0.1)),
    ])
    .unwrap()
}

const SNRS: [f64; 6] = [-20.0, -15.0, -5.0, 5.0, 15.0, 20.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = softmax(&z);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn conv1d_matches_nested_loops(
        seed in 0u64..10_000,
        cin in 1usize..4, cout in 1usize..4, k in 1usize..6,
        stride in 1usize..4, dil in 1usize..4, pad in 0usize..4, extra in 0usize..20,
    ) {
        let t = dil * (k - 1) + 1 + extra;
        let x = uniform(seed, cin * t, 1.0);
        let w = uniform(seed + 1, cout * cin * k, 1.0);
        let b = uniform(seed + 2, cout, 1.0);
        let layer = Conv1dLayer::from_weights(
            Tensor::new(vec![cout, cin, k], w.clone()).unwrap(),
            Some(Tensor::vector(b.clone())),
            stride, dil, pad,
        ).unwrap();
        let y = conv1d_forward(&Tensor::matrix(cin, t, x.clone()).unwrap(), &layer).unwrap();
        let (oracle, tout) = naive_conv(&x, cin, t, &w, &b, cout, k, stride, dil, pad);
        prop_assert_eq!(y.shape(), &[cout, tout][..]);
        for (a, o) in y.data().iter().zip(&oracle) {
            prop_assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_naive_dft(seed in 0u64..10_000, log2 in 3u32..=10, fill in 0.25f64..=1.0) {
        let n = 1usize << log2;
        let frame = uniform(seed, ((n as f64 * fill) as usize).max(1), 1.0);
        let fast = SpectrumAnalyzer::new(n).unwrap().magnitude(&frame).unwrap();
        for (a, b) in fast.iter().zip(naive_dft_magnitude(&frame, n)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(seed in 0u64..10_000, n in 1usize..50, steps in 1usize..5) {
        let mut p = Tensor::vector(uniform(seed, n, 2.0)).with_requires_grad(true);
        let before = p.data().to_vec();
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..steps {
            p.set_grad(vec![0.0; n]).unwrap();
            adam.step(&mut [&mut p]).unwrap();
        }
        prop_assert_eq!(p.data(), &before[..]);
        prop_assert_eq!(adam.step_count(), steps as u64);
    }

    #[test]
    fn normalized_channels_are_standardized(seed in 0u64..10_000, c in 1usize..6, t in 2usize..60, pad in 0usize..10) {
        let mut data = uniform(seed, c * (t + pad), 5.0);
        for v in data[..t + pad].iter_mut() {
            *v = 1.5;
        }
        let mut tape = Tape::new();
        let x = tape.input(c, t + pad, data).unwrap();
        let y = tape.normalize_channels(x, t).unwrap();
        let v = tape.value(y);
        for ch in 0..c {
            let row = &v[ch * (t + pad)..ch * (t + pad) + t];
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
            if ch == 0 {
                prop_assert!(row.iter().all(|x| *x == 0.0));
            } else {
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
            prop_assert!(v[ch * (t + pad) + t..(ch + 1) * (t + pad)].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn wav_data_chunk_round_trips(samples in prop::collection::vec(any::<i16>(), 1..2000), rate in prop::sample::select(vec![8000u32, 16000, 44100])) {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&src, spec).unwrap();
        for s in &samples {
            w.write_sample(*s).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&src).unwrap();
        prop_assert_eq!(clip.sample_rate, rate);
        let dst = dir.path().join("dst.wav");
        write_wav(&clip, &dst).unwrap();
        let (a, b) = (std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
        prop_assert_eq!(data_chunk(&a), data_chunk(&b));
    }

    #[test]
    fn mixing_hits_target_and_stays_in_range(seed in 0u64..10_000, snr in prop::sample::select(SNRS.to_vec()), loud in 0.1f64..3.0, offset in 0usize..40_000) {
        let clean = voiced(seed, 1.2).scaled(loud.min(1.0 / voiced(seed, 1.2).peak()));
        let noise = white(seed + 7, 1.1, loud);
        let m = mix_at_snr(&clean, &noise, snr, offset).unwrap();
        prop_assert!((measured_snr_db(&m.clean_ref.samples, &m.noisy.samples) - snr).abs() < 0.01);
        prop_assert!(m.noisy.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(m.norm_factor > 0.0 && m.norm_factor <= 1.0);
    }

    #[test]
    fn replay_is_bit_exact(seed in 0u64..10_000, id in "[a-z]{1,8}/[0-9]{1,4}") {
        let bank = bank(seed % 5);
        let spec = ContaminationSpec::paper_default(seed);
        let clean = voiced(seed, 1.1);
        let (noise_name, noise_offset, snr_db) = draw_assignment(&spec, &bank, &id);
        let first = mix_at_snr(&clean, bank.get(&noise_name).unwrap(), snr_db, noise_offset).unwrap();
        let record = MixRecord {
            utterance_id: id.clone(),
            noise_name,
            noise_offset,
            snr_db,
            noise_gain: first.noise_gain,
            norm_factor: first.norm_factor,
        };
        let again = replay(&record, &clean, &bank).unwrap();
        prop_assert_eq!(first, again);
        prop_assert_eq!(draw_assignment(&spec, &bank, &id), (record.noise_name, record.noise_offset, record.snr_db));
    }

    #[test]
    fn stoi_and_llr_ignore_processed_gain(seed in 0u64..1000, gain in 0.1f64..=1.0, snr in prop::sample::select(SNRS.to_vec())) {
        let clean = voiced(seed, 1.5);
        let m = mix_at_snr(&clean, &white(seed + 3, 1.5, 0.3), snr, 0).unwrap();
        let scaled = m.noisy.scaled(gain);
        prop_assert!((stoi(&m.clean_ref, &m.noisy).unwrap() - stoi(&m.clean_ref, &scaled).unwrap()).abs() < 1e-6);
        prop_assert!((llr(&m.clean_ref, &m.noisy).unwrap() - llr(&m.clean_ref, &scaled).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn snr_means_stay_in_clamp_range(seed in 0u64..1000, snr in -40.0f64..60.0) {
        let clean = voiced(seed, 1.2);
        let m = mix_at_snr(&clean, &white(seed + 5, 1.2, 0.2), snr, 0).unwrap();
        for v in [segmental_snr(&m.clean_ref, &m.noisy).unwrap(), fwsnrseg(&m.clean_ref, &m.noisy).unwrap()] {
            prop_assert!((-10.0..=35.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn composites_are_affine(pesq in -0.5f64..4.5, l in 0.0f64..2.0, w in 0.0f64..150.0, s in -10.0f64..35.0) {
        let c = composites_unclamped(pesq, l, w, s);
        prop_assert_eq!(c.csig, 3.093 - 1.029 * l + 0.603 * pesq - 0.009 * w);
        prop_assert_eq!(c.cbak, 1.634 + 0.478 * pesq - 0.007 * w + 0.063 * s);
        prop_assert_eq!(c.covl, 1.594 + 0.805 * pesq - 0.512 * l - 0.007 * w);
    }

    #[test]
    fn early_stopping_bounds_overrun(scores in prop::collection::vec(0.0f64..1.0, 1..60), patience in 1usize..6) {
        let mut stop = EarlyStopping::new(patience);
        let mut best_at = 0;
        for (i, s) in scores.iter().enumerate() {
            match stop.observe(*s) {
                StopDecision::Improved => best_at = i,
                StopDecision::Continue => prop_assert!(i - best_at < patience),
                StopDecision::Stop => {
                    prop_assert_eq!(i - best_at, patience);
                    break;
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn enhancer_preserves_shape_and_range(seed in 0u64..1000, depth in 1usize..5, blocks in 1usize..4, amp in 0.1f64..20.0) {
        let config = WaveUNetConfig { depth, base_filters: 3, growth_per_level: 2, kernel_down: 5, kernel_up: 3, input_len: 16 << depth };
        let model = WaveUNet::build(config.clone(), seed).unwrap();
        let x = uniform(seed, config.input_len, amp);
        let y = model.forward(&x).unwrap();
        prop_assert_eq!(y.len(), x.len());
        prop_assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(&y, &model.forward(&x).unwrap());
        let clip = AudioClip::new(uniform(seed + 1, blocks * config.input_len + 7, 1.0), RATE).unwrap();
        let out = model.enhance_clip(&clip).unwrap();
        prop_assert_eq!(out.len(), clip.len());
    }

    #[test]
    fn classifier_padding_is_neutral_and_pure(seed in 0u64..1000, t in 3usize..40, pad in 1usize..30) {
        let config = ClassifierConfig { bottleneck_channels: 6, blocks_per_stack: 3, dilations: vec![1, 2, 4], ..ClassifierConfig::paper(5) };
        let model = IntentClassifier::build(config, toy_labels(5), seed).unwrap();
        let raw = uniform(seed, 40 * t, 4.0);
        let mut padded = vec![0.0; 40 * (t + pad)];
        for c in 0..40 {
            padded[c * (t + pad)..c * (t + pad) + t].copy_from_slice(&raw[c * t..(c + 1) * t]);
        }
        let a = model.logits(&Tensor::matrix(40, t, raw).unwrap(), t).unwrap();
        let b = model.logits(&Tensor::matrix(40, t + pad, padded.clone()).unwrap(), t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(&b, &model.logits(&Tensor::matrix(40, t + pad, padded).unwrap(), t).unwrap());
    }

    #[test]
    fn features_shift_by_one_hop(seed in 0u64..1000) {
        let clip = voiced(seed, 0.5);
        let shifted = AudioClip::new(clip.samples[160..].to_vec(), RATE).unwrap();
        let a = log_mel_features(&clip).unwrap();
        let b = log_mel_features(&shifted).unwrap();
        let (c, ta) = a.dims2().unwrap();
        let tb = b.dims2().unwrap().1;
        for ch in 0..c {
            for j in 1..tb.min(ta - 1) - 1 {
                prop_assert!((a.data()[ch * ta + j + 1] - b.data()[ch * tb + j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn snr_choices_are_uniform_over_many_ids() {
    let bank = bank(0);
    for seed in [0u64, 1, 2] {
        let spec = ContaminationSpec::paper_default(seed);
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        let n = 6000;
        for i in 0..n {
            let (_, _, snr) = draw_assignment(&spec, &bank, &format!("speaker{}/utt{i}", i % 97));
            *counts.entry(snr as i64).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (snr, c) in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.05, "seed {seed} snr {snr}: {f}");
        }
    }
}
