use proptest::prelude::*;

use me_rppg::bench::{self, alloc::TrackingAllocator};
use me_rppg::data::{synth_clip, SynthConfig};
use me_rppg::model::{flow_init, forward_chunk_values, forward_flow_step, init_model, ModelConfig, ModelParams};
use me_rppg::signal::{estimate_hr, green_baseline, pearson, HrBand, GRID_BPM};
use me_rppg::ssd::{ssd_step, SelectiveSeq, SsdState};
use me_rppg::tn::{tn_flow_init, DEFAULT_ALPHA, DEFAULT_EPS};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[test]
fn tn_state_is_fixed_over_a_long_stream() {
    let d = 16;
    let mut st = tn_flow_init(DEFAULT_ALPHA, DEFAULT_EPS, &vec![0.5f64; d]).unwrap();
    let before = st.state_bytes();
    let mut x = vec![0.0f64; d];
    let mut out = vec![0.0; d];
    let (_, allocated) = bench::alloc::measure_peak(|| {
        for t in 0..100_000 {
            x.iter_mut().enumerate().for_each(|(i, v)| *v = (t as f64 * 0.01 * (i + 1) as f64).sin() + 1e-3 * t as f64);
            st.step(&x, &mut out);
        }
    });
    assert_eq!(st.state_bytes(), before);
    assert_eq!(allocated, 0);
    assert_eq!(st.warm(), 100_000);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn ssd_state_is_fixed_over_a_long_stream() {
    let (n, m) = (8, 4);
    let seq = SelectiveSeq::new(n, 1, 1, vec![0.9; n], vec![0.1; n], vec![1.0; n]).unwrap();
    let mut st = SsdState::<f64>::zeros(n, m);
    let before = st.state_bytes();
    let x = [1.0; 4];
    let mut y = [0.0; 4];
    let (_, allocated) = bench::alloc::measure_peak(|| {
        for _ in 0..100_000 {
            ssd_step(&seq, 0, &mut st, &x, &mut y).unwrap();
        }
    });
    assert_eq!(st.state_bytes(), before);
    assert_eq!(allocated, 0);
    // Fixed point of h = 0.9 h + 0.1.
    assert!(st.h().iter().all(|h| (h - 1.0).abs() < 1e-12));
}

#[test]
fn flow_memory_is_flat_and_chunk_memory_grows() {
    let params: ModelParams<f32> = init_model(&ModelConfig::desk()).unwrap();
    let flow = bench::bench_flow_memory(&params, &[100, 1000, 10_000]).unwrap();
    let peaks: Vec<usize> = flow.points.iter().map(|p| p.1).collect();
    assert!(peaks.windows(2).all(|w| w[0] == w[1]), "{peaks:?}");
    let chunk = bench::bench_chunk_memory(&params, &[100, 200, 400, 800]).unwrap();
    assert!(chunk.r2 >= 0.99 && chunk.slope > 0.0, "{chunk:?}");
    assert!(chunk.ratio() > 2.0, "{chunk:?}");
}

#[test]
fn green_baseline_recovers_clean_heart_rates() {
    for hr in [40.0, 72.0, 120.0, 170.0] {
        let clip = synth_clip(&SynthConfig { hr_bpm: hr, duration_s: 20.0, resolution: (8, 8), ..SynthConfig::default() }).unwrap();
        let est = estimate_hr(&green_baseline(&clip.frames).unwrap(), HrBand::default()).unwrap();
        assert!((est.bpm - hr).abs() <= GRID_BPM, "{hr} -> {}", est.bpm);
    }
}

#[test]
fn model_modes_agree_on_heart_rate_with_normalization_active() {
    let cfg = ModelConfig { input_h: 8, input_w: 8, encoder_channels: vec![8, 16], feature_dim: 32, state_dim: 8, ..ModelConfig::default() };
    let params: ModelParams<f64> = init_model(&cfg).unwrap();
    for (hr, seed) in [(45.0, 1), (72.0, 2), (110.0, 3), (160.0, 4)] {
        let clip = synth_clip(&SynthConfig {
            hr_bpm: hr,
            duration_s: 30.0,
            resolution: (8, 8),
            noise_sigma: 0.005,
            trend_slope: 2e-4,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let chunk = forward_chunk_values(&params, &clip.frames).unwrap();
        let mut st = flow_init(&params).unwrap();
        let flow: Vec<f64> = (0..clip.len()).map(|t| forward_flow_step(&params, &mut st, clip.frames.frame(t)).unwrap()).collect();
        // First differences drop the slow baseline, where the two normalizers
        // legitimately differ, and keep the pulse band.
        let diff = |y: &[f64]| y.windows(2).map(|w| w[1] - w[0]).collect::<Vec<f64>>();
        let r = pearson(&diff(&chunk[300..]), &diff(&flow[300..])).unwrap();
        assert!(r >= 0.85, "{hr} BPM: r = {r}");
        let band = HrBand::default();
        let hr_of = |y: &[f64]| estimate_hr(&me_rppg::data::BvpSignal::new(y.to_vec(), 30.0).unwrap(), band).unwrap().bpm;
        assert!((hr_of(&chunk[300..]) - hr_of(&flow[300..])).abs() <= 2.0 * GRID_BPM);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_output_is_causal_and_finite(seed in 0u64..1000, cut in 5usize..30) {
        let cfg = ModelConfig { input_h: 8, input_w: 8, encoder_channels: vec![4], feature_dim: 8, state_dim: 4, ..ModelConfig::default() };
        let params: ModelParams<f64> = init_model(&ModelConfig { seed, ..cfg.clone() }).unwrap();
        let a = bench::bench_frames(&cfg, 40, seed).unwrap();
        let mut data = a.data().to_vec();
        let per = a.frame_len();
        data[cut * per..].iter_mut().for_each(|v| *v = 1.0 - *v);
        let b = me_rppg::data::FrameTensor::new(a.dims(), 30.0, data).unwrap();
        let run = |f: &me_rppg::data::FrameTensor| {
            let mut st = flow_init(&params).unwrap();
            (0..f.frames()).map(|t| forward_flow_step(&params, &mut st, f.frame(t)).unwrap()).collect::<Vec<f64>>()
        };
        let (ya, yb) = (run(&a), run(&b));
        prop_assert!(ya.iter().chain(&yb).all(|v| v.is_finite()));
        prop_assert_eq!(&ya[..cut], &yb[..cut]);
    }

    #[test]
    fn hr_estimate_ignores_positive_affine_maps(hr in 40.0f64..170.0, gain in 0.01f64..100.0, offset in -50.0f64..50.0) {
        let clip = synth_clip(&SynthConfig { hr_bpm: hr, duration_s: 12.0, resolution: (2, 2), ..SynthConfig::default() }).unwrap();
        let base = estimate_hr(&clip.bvp, HrBand::default()).unwrap().bpm;
        let mapped = me_rppg::data::BvpSignal::new(clip.bvp.samples().iter().map(|v| gain * v + offset).collect(), 30.0).unwrap();
        prop_assert_eq!(estimate_hr(&mapped, HrBand::default()).unwrap().bpm, base);
    }
}
