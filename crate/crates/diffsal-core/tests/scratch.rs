//! Temporary timing probe; not part of the suite.

use diffsal_core::config::RunConfig;
use diffsal_core::diffusion::cosine_schedule;
use diffsal_core::model::{ModelConfig, SaliencyModel};
use diffsal_core::synth;
use diffsal_core::training::{TrainConfig, Trainer};
use diffsal_core::CounterRng;
use std::time::Instant;

#[test]
#[ignore]
fn timing_probe() {
    // Desk-scale data generation: 8 clips at 16x32x48.
    let t0 = Instant::now();
    let base = synth::SceneConfig::desk(42);
    let frontend = diffsal_core::audio::FrontendConfig::desk();
    let mut items = Vec::new();
    let mut gts = Vec::new();
    for i in 0..8 {
        let cfg = synth::sample_config(&base, i);
        let s = synth::generate(&cfg).unwrap();
        let mel = diffsal_core::audio::log_mel_slices(&s.waveform, &frontend).unwrap();
        let gt3 = diffsal_core::Tensor::new(
            vec![s.gt.height(), s.gt.width(), 1],
            s.gt.values().data.clone(),
        )
        .unwrap();
        items.push(diffsal_core::training::TrainItem { clip: s.clip, mel: mel.slices, gt: gt3 });
        gts.push(s.gt);
    }
    println!("datagen 8 clips: {:?}", t0.elapsed());

    // One training step, c_base=8, batch 1 and batch 4.
    let model_cfg = ModelConfig::new(8, 2, 4);
    let sched = cosine_schedule(1000).unwrap();
    for batch in [1usize, 4] {
        let mut model = SaliencyModel::new(model_cfg.clone(), 0).unwrap();
        println!("params: {}", model.num_parameters());
        let tc = TrainConfig::new(4, batch, 1e-4, 0);
        let mut trainer = Trainer::new(&model, tc);
        let t0 = Instant::now();
        for _ in 0..4 {
            trainer.step(&mut model, &items, &sched).unwrap();
        }
        println!("train step batch {batch}: {:?}/step", t0.elapsed() / 4);
    }

    // 4-step sampling at desk scale.
    let model = SaliencyModel::new(model_cfg, 0).unwrap();
    let t0 = Instant::now();
    let mut rng = CounterRng::keyed(0, 0, "probe");
    model
        .sample(&items[0].clip, &items[0].mel, 4, &sched, &mut rng)
        .unwrap();
    println!("desk 4-step sample: {:?}", t0.elapsed());

    // Paper-scale forward: encode + 1-step sample.
    let mut cfg = RunConfig::default();
    cfg.apply_preset("paper").unwrap();
    let mc = cfg.model().unwrap();
    let model = SaliencyModel::new(mc, 0).unwrap();
    println!("paper params: {}", model.num_parameters());
    let clip = diffsal_core::Tensor::zeros(&[16, 224, 384, 3]);
    let mel = diffsal_core::Tensor::zeros(&[9, 112, 192, 1]);
    let t0 = Instant::now();
    let mut rng = CounterRng::keyed(0, 1, "probe");
    let map = model.sample(&clip, &mel, 1, &sched, &mut rng).unwrap();
    println!("paper 1-step sample: {:?} shape {:?}", t0.elapsed(), map.shape);
}

fn desk_items(
    n: usize,
    base: &synth::SceneConfig,
) -> (Vec<diffsal_core::training::TrainItem>, Vec<synth::SceneSample>) {
    let frontend = diffsal_core::audio::FrontendConfig::desk();
    let mut items = Vec::new();
    let mut samples = Vec::new();
    for i in 0..n {
        let cfg = synth::sample_config(base, i);
        let s = synth::generate(&cfg).unwrap();
        let mel = diffsal_core::audio::log_mel_slices(&s.waveform, &frontend).unwrap();
        let gt3 = diffsal_core::Tensor::new(
            vec![s.gt.height(), s.gt.width(), 1],
            s.gt.values().data.clone(),
        )
        .unwrap();
        items.push(diffsal_core::training::TrainItem {
            clip: s.clip.clone(),
            mel: mel.slices,
            gt: gt3,
        });
        samples.push(s);
    }
    (items, samples)
}

fn eval_cc_sim(
    model: &SaliencyModel,
    items: &[diffsal_core::training::TrainItem],
    samples: &[synth::SceneSample],
    steps: usize,
    sched: &diffsal_core::diffusion::NoiseSchedule,
) -> (f64, f64) {
    let mut cc_sum = 0.0;
    let mut sim_sum = 0.0;
    for (i, (item, s)) in items.iter().zip(samples).enumerate() {
        let mut rng = CounterRng::keyed(0xE7A1_5EED, i as u64, "eval-noise");
        let map = model.sample(&item.clip, &item.mel, steps, sched, &mut rng).unwrap();
        let flat =
            diffsal_core::Tensor::new(vec![map.shape[0], map.shape[1]], map.data).unwrap();
        let pred = diffsal_core::metrics::SaliencyMap::new(flat).unwrap();
        cc_sum += diffsal_core::metrics::cc(&pred, &s.gt).unwrap();
        sim_sum += diffsal_core::metrics::sim(&pred, &s.gt).unwrap();
    }
    (cc_sum / items.len() as f64, sim_sum / items.len() as f64)
}

#[test]
#[ignore]
fn overfit_probe() {
    let base = synth::SceneConfig::desk(42);
    let (items, samples) = desk_items(8, &base);
    let sched = cosine_schedule(1000).unwrap();
    let model_cfg = ModelConfig::new(8, 2, 4);
    let mut model = SaliencyModel::new(model_cfg, 0).unwrap();
    let tc = TrainConfig::new(2000, 1, 1e-4, 0);
    let mut trainer = Trainer::new(&model, tc);
    let start = Instant::now();
    for step in 1..=2000usize {
        let rec = trainer.step(&mut model, &items, &sched).unwrap();
        if step % 250 == 0 {
            let (cc, sim) = eval_cc_sim(&model, &items, &samples, 4, &sched);
            println!(
                "step {step}: loss {:.5} cc {cc:.4} sim {sim:.4} elapsed {:?}",
                rec.loss,
                start.elapsed()
            );
        }
    }
}

#[test]
#[ignore]
fn disambiguation_probe() {
    let mut base = synth::SceneConfig::desk(7);
    base.frames = 8;
    base.height = 24;
    base.width = 32;
    base.objects = 2;
    base.tones_hz = vec![440.0, 3960.0];
    let (items, samples) = desk_items(64, &base);
    let sched = cosine_schedule(1000).unwrap();
    let start = Instant::now();
    let mut means = Vec::new();
    for mode in [diffsal_core::model::Mode::AudioVisual, diffsal_core::model::Mode::VideoOnly] {
        let mut mc = ModelConfig::new(4, 2, 4);
        mc.mode = mode;
        let mut model = SaliencyModel::new(mc, 0).unwrap();
        let tc = TrainConfig::new(2000, 2, 1e-4, 0);
        let mut trainer = Trainer::new(&model, tc);
        for step in 1..=2000usize {
            trainer.step(&mut model, &items, &sched).unwrap();
            if step % 500 == 0 {
                let (cc, sim) = eval_cc_sim(&model, &items, &samples, 4, &sched);
                println!(
                    "{} step {step}: cc {cc:.4} sim {sim:.4} elapsed {:?}",
                    mode.name(),
                    start.elapsed()
                );
            }
        }
        let (cc, _) = eval_cc_sim(&model, &items, &samples, 4, &sched);
        means.push(cc);
    }
    println!("av {:.4} vs video_only {:.4}: gap {:.4}", means[0], means[1], means[0] - means[1]);
}
