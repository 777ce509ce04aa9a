use super::*;
use crate::data::gen_gaussian_sequence;
use crate::nd::Linear;
use crate::rng::seeded;
use crate::testing::uniform_tensor;

fn small_cfg(seed: u64) -> AliTrainConfig {
    AliTrainConfig {
        iterations: 10,
        batch_size: 16,
        gen_hidden: vec![12, 12],
        disc_hidden: vec![12, 12],
        seed,
        ..AliTrainConfig::default()
    }
}

fn three_marginals() -> MarginalDataset {
    gen_gaussian_sequence(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 0.0]], 0.2, 40, 5).unwrap()
}

fn five_marginals() -> MarginalDataset {
    let means: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64, (k as f64 * 1.3).sin()]).collect();
    gen_gaussian_sequence(&means, 0.1, 30, 9).unwrap()
}

#[test]
fn three_marginals_always_train_the_middle_one() {
    let data = three_marginals();
    let mut tr = AliTrainer::new(small_cfg(1), &data).unwrap();
    for _ in 0..20 {
        let r = tr.step(&data).unwrap();
        assert_eq!(r.index, Some(1));
        assert_eq!(r.t_i, data.times()[1]);
    }
}

#[test]
fn intermediate_index_covers_interior_only() {
    let data = five_marginals();
    let tr = AliTrainer::new(small_cfg(2), &data).unwrap();
    let mut seen = [0usize; 5];
    for s in 0..200 {
        let b = tr.draw_batch(&data, &mut stream(2, s)).unwrap();
        seen[b.index.unwrap()] += 1;
    }
    assert_eq!(seen[0], 0);
    assert_eq!(seen[4], 0);
    assert!(seen[1..4].iter().all(|&c| c > 30), "{seen:?}");
}

#[test]
fn ten_step_trace_is_reproducible() {
    let data = five_marginals();
    let run = || {
        let mut tr = AliTrainer::new(small_cfg(7), &data).unwrap();
        let recs: Vec<_> = (0..10).map(|_| tr.step(&data).unwrap()).collect();
        (recs, tr.gen.net().clone(), tr.disc.net().clone())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    let other = {
        let mut tr = AliTrainer::new(small_cfg(8), &data).unwrap();
        tr.step(&data).unwrap()
    };
    assert_ne!(other, a.0[0]);
}

#[test]
fn endpoints_are_untouched_by_training() {
    let data = three_marginals();
    let mut tr = AliTrainer::new(small_cfg(3), &data).unwrap();
    tr.train::<Vec<u8>>(&data, None).unwrap();
    let x0 = data.batch(0).points().clone();
    let x1 = data.batch(2).points().clone();
    let n = x0.rows();
    assert_eq!(tr.gen.eval(&x0, &x1, &vec![0.0; n]).unwrap(), x0);
    assert_eq!(tr.gen.eval(&x0, &x1, &vec![1.0; n]).unwrap(), x1);
}

#[test]
fn uninformative_discriminator_gives_two_log_half() {
    let l = gan_losses_from_logits(&[0.0; 5], &[0.0; 3], GanVariant::NonSaturating).unwrap();
    assert!((l.l_gan - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    assert!((l.disc + l.l_gan).abs() < 1e-15);
    assert!((l.gen - 2f64.ln()).abs() < 1e-15);

    let mut rng = seeded(4);
    let net = Mlp::new(&[3, 6, 1], Activation::Elu, None, &mut rng).unwrap();
    let mut layers = net.layers().to_vec();
    layers[1] = Linear {
        weight: Tensor::zeros(&[6, 1]),
        bias: Tensor::zeros(&[1, 1]),
    };
    let disc = Discriminator::from_net(Mlp::from_layers(layers, Activation::Elu, None).unwrap()).unwrap();
    let fake = uniform_tensor(&mut rng, 7, 2, 3.0);
    let real = uniform_tensor(&mut rng, 4, 2, 3.0);
    assert!(disc.probabilities(&real, 0.3).unwrap().iter().all(|&p| p == 0.5));
    let l = gan_losses(&disc, &fake, &real, 0.3, GanVariant::Saturating).unwrap();
    assert!((l.l_gan - 2.0 * 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn losses_match_hand_computed_cross_entropy() {
    let real = [1.0, -2.0];
    let fake = [0.5, 3.0];
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    let log_d_real = (s(1.0).ln() + s(-2.0).ln()) / 2.0;
    let log_1m_fake = ((1.0 - s(0.5)).ln() + (1.0 - s(3.0)).ln()) / 2.0;
    let ns = GanLosses {
        l_gan: log_1m_fake + log_d_real,
        disc: -(log_1m_fake + log_d_real),
        gen: -(s(0.5).ln() + s(3.0).ln()) / 2.0,
    };
    let got = gan_losses_from_logits(&real, &fake, GanVariant::NonSaturating).unwrap();
    for (a, b) in [(got.l_gan, ns.l_gan), (got.disc, ns.disc), (got.gen, ns.gen)] {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let sat = gan_losses_from_logits(&real, &fake, GanVariant::Saturating).unwrap();
    assert!((sat.gen - log_1m_fake).abs() < 1e-14);
}

#[test]
fn probabilities_are_clamped() {
    let l = gan_losses_from_logits(&[-1e4], &[1e4], GanVariant::NonSaturating).unwrap();
    let floor = PROB_CLAMP.ln();
    assert!((l.l_gan - 2.0 * floor).abs() < 1e-9);
    assert!(l.gen.is_finite());
    assert!(gan_losses_from_logits(&[f64::NAN], &[0.0], GanVariant::NonSaturating).is_err());
    assert!(gan_losses_from_logits(&[], &[0.0], GanVariant::NonSaturating).is_err());
}

fn perturbed(net: &Mlp, layer: usize, weight: bool, idx: usize, h: f64) -> Mlp {
    let mut n = net.clone();
    let mut ps = n.params_mut();
    ps[2 * layer + usize::from(!weight)].data_mut()[idx] += h;
    n
}

#[test]
fn discriminator_loss_gradient_matches_finite_differences() {
    let mut rng = seeded(11);
    let disc = Discriminator::new(2, &[5], Activation::Tanh, &mut rng).unwrap();
    let fake = uniform_tensor(&mut rng, 6, 2, 1.0);
    let real = uniform_tensor(&mut rng, 5, 2, 1.0);
    let t = 0.4;
    let mut tape = Tape::new();
    let params = disc.net.leaves(&mut tape);
    let xf = tape.constant(fake.clone());
    let xr = tape.constant(real.clone());
    let lf = disc.record(&mut tape, Some(&params), xf, &[t; 6]).unwrap();
    let lr = disc.record(&mut tape, Some(&params), xr, &[t; 5]).unwrap();
    let a = record_mean_log_prob(&mut tape, lf, -1.0);
    let b = record_mean_log_prob(&mut tape, lr, 1.0);
    let l = tape.add(a, b).unwrap();
    let loss = tape.scale(l, -1.0);
    let direct = gan_losses(&disc, &fake, &real, t, GanVariant::NonSaturating).unwrap().disc;
    assert!((tape.value(loss).item().unwrap() - direct).abs() < 1e-14);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
    for (k, &p) in params.iter().enumerate() {
        let g = grads.get_or_zeros(p, tape.value(p));
        for idx in 0..g.len() {
            let f = |s: f64| {
                let d = Discriminator::from_net(perturbed(&disc.net, k / 2, k % 2 == 0, idx, s)).unwrap();
                gan_losses(&d, &fake, &real, t, GanVariant::NonSaturating).unwrap().disc
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let an = g.data()[idx];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "param {k}[{idx}]: {an} vs {fd}");
        }
    }
}

#[test]
fn generator_loss_gradient_matches_finite_differences() {
    let data = three_marginals();
    let cfg = AliTrainConfig {
        gen_hidden: vec![6],
        disc_hidden: vec![6],
        activation: Activation::Tanh,
        time_noise_std: 0.0,
        ..small_cfg(12)
    };
    let tr = AliTrainer::new(cfg, &data).unwrap();
    let batch = tr.draw_batch(&data, &mut stream(12, 0)).unwrap();
    let t_gate = batch.t.clone();
    let loss_of = |gen: &AliGenerator| {
        let fake = gen.eval(&batch.x0, &batch.x1, &t_gate).unwrap();
        let gan = gan_losses(&tr.disc, &fake, &batch.xt, batch.t_i, GanVariant::NonSaturating).unwrap().gen;
        let reg = crate::regularizers::reg_linear(gen, &batch.x0, &batch.x1, batch.t_i).unwrap();
        gan + 0.7 * reg
    };
    let mut tape = Tape::new();
    let params = tr.gen.leaves(&mut tape);
    let rec = tr.gen.record(&mut tape, Some(&params), &batch.x0, &batch.x1, &t_gate, &batch.t_input).unwrap();
    let logits = tr.disc.record(&mut tape, None, rec.output, &t_gate).unwrap();
    let l = record_mean_log_prob(&mut tape, logits, 1.0);
    let gan = tape.scale(l, -1.0);
    let reg = record_linear_from_gated(&mut tape, rec.gated);
    let reg = tape.scale(reg, 0.7);
    let total = tape.add(gan, reg).unwrap();
    assert!((tape.value(total).item().unwrap() - loss_of(&tr.gen)).abs() < 1e-12);
    let grads = tape.backward(total).unwrap();
    let h = 1e-5;
    for (k, &p) in params.iter().enumerate() {
        let g = grads.get_or_zeros(p, tape.value(p));
        for idx in 0..g.len() {
            let f = |s: f64| {
                let net = perturbed(tr.gen.net(), k / 2, k % 2 == 0, idx, s);
                loss_of(&AliGenerator::from_net(net, 0.0).unwrap())
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let an = g.data()[idx];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "param {k}[{idx}]: {an} vs {fd}");
        }
    }
}

#[test]
fn generator_step_leaves_discriminator_alone() {
    let data = three_marginals();
    let mut tr = AliTrainer::new(small_cfg(13), &data).unwrap();
    let mut disc_only = tr.clone();
    tr.step(&data).unwrap();
    // replay only the discriminator half on the clone by zeroing the generator learning rate
    disc_only.gen_opt = Adam::for_mlp(disc_only.gen.net(), 1e-300);
    disc_only.step(&data).unwrap();
    assert_eq!(tr.disc.net(), disc_only.disc.net());
    assert_ne!(tr.gen.net(), disc_only.gen.net());
}

fn mean_correction_norm(gen: &AliGenerator, data: &MarginalDataset, t: f64) -> f64 {
    let x0 = data.batch(0).points();
    let x1 = data.batch(data.len() - 1).points();
    let f = gen.correction(x0, x1, &vec![t; x0.rows()]).unwrap();
    f.row_sq_norms().iter().map(|v| v.sqrt()).sum::<f64>() / x0.rows() as f64
}

#[test]
fn huge_lambda_collapses_to_the_reference() {
    let data = three_marginals();
    let mut cfg = small_cfg(14);
    cfg.iterations = 2000;
    cfg.regulariser.lambda = 1e6;
    let mut tr = AliTrainer::new(cfg, &data).unwrap();
    let before = mean_correction_norm(&tr.gen, &data, 0.5);
    tr.train::<Vec<u8>>(&data, None).unwrap();
    let after = mean_correction_norm(&tr.gen, &data, 0.5);
    assert!(after <= 1e-2, "mean |f| = {after} (initially {before})");
}

#[test]
fn pretraining_reduces_the_regulariser() {
    let data = five_marginals();
    for kind in [RegulariserKind::LinearRef, RegulariserKind::PiecewiseRef, RegulariserKind::SecondDerivative] {
        let mut cfg = small_cfg(15);
        cfg.pretrain_steps = 200;
        cfg.pretrain_lr = 3e-3;
        cfg.regulariser.kind = kind;
        let mut tr = AliTrainer::new(cfg, &data).unwrap();
        let probe = |tr: &AliTrainer| (0..8).map(|s| tr.regulariser_value(&data, 1000 + s).unwrap()).sum::<f64>();
        let before = probe(&tr);
        let trace = tr.pretrain(&data).unwrap();
        assert_eq!(trace.len(), 200);
        assert_eq!(tr.pretrain_steps_done(), 200);
        let after = probe(&tr);
        assert!(after < 0.5 * before, "{kind:?}: {before} -> {after}");
    }
}

#[test]
fn auto_lambda_matches_loss_ratio() {
    let data = three_marginals();
    let mut cfg = small_cfg(16);
    cfg.regulariser.auto_lambda = true;
    let mut tr = AliTrainer::new(cfg, &data).unwrap();
    tr.pretrain(&data).unwrap();
    let lambda = tr.lambda();
    assert!(lambda.is_finite() && lambda > 0.0);
    assert_ne!(lambda, 1.0);
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let data = five_marginals();
    let mut cfg = small_cfg(17);
    cfg.pretrain_steps = 3;
    cfg.regulariser.kind = RegulariserKind::SecondDerivative;
    cfg.regulariser.norm = RegNorm::Land;
    let mut full = AliTrainer::new(cfg.clone(), &data).unwrap();
    let full_recs = full.train::<Vec<u8>>(&data, None).unwrap();

    let mut half_cfg = cfg.clone();
    half_cfg.iterations = 4;
    let mut half = AliTrainer::new(half_cfg, &data).unwrap();
    let mut recs = half.train::<Vec<u8>>(&data, None).unwrap();
    let bytes = half.to_checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = AliTrainer::from_checkpoint(&ck, cfg, &data).unwrap();
    assert_eq!(resumed.iteration(), 4);
    recs.extend(resumed.train::<Vec<u8>>(&data, None).unwrap());
    assert_eq!(recs, full_recs);
    assert_eq!(resumed.gen.net(), full.gen.net());
    assert_eq!(resumed.disc.net(), full.disc.net());
    assert_eq!(resumed.to_checkpoint().to_bytes(), full.to_checkpoint().to_bytes());
}

#[test]
fn log_has_header_and_one_row_per_step() {
    let data = three_marginals();
    let mut buf = Vec::new();
    train_ali(small_cfg(18), &data, Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 11);
    for (i, l) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0].parse::<u64>().unwrap(), i as u64);
        assert!(cols[1..].iter().all(|c| c.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn exploding_output_is_reported_as_divergence() {
    let data = three_marginals();
    let mut cfg = small_cfg(19);
    cfg.divergence_threshold = 1e-3;
    let mut tr = AliTrainer::new(cfg, &data).unwrap();
    match tr.step(&data) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn rejects_bad_inputs() {
    let two = gen_gaussian_sequence(&[vec![0.0], vec![1.0]], 0.1, 5, 0).unwrap();
    let mut tr = AliTrainer::new(small_cfg(0), &two).unwrap();
    assert!(matches!(tr.step(&two), Err(Error::InvalidArgument(_))));
    let mut cfg = small_cfg(0);
    cfg.batch_size = 0;
    assert!(AliTrainer::new(cfg, &three_marginals()).is_err());
    let mut cfg = small_cfg(0);
    cfg.lr_gen = -1.0;
    assert!(cfg.validate().is_err());
    let cfg: AliTrainConfig = toml::from_str("iterations = 5\n[regulariser]\nkind = \"second-derivative\"\n").unwrap();
    assert_eq!(cfg.iterations, 5);
    assert_eq!(cfg.regulariser.kind, RegulariserKind::SecondDerivative);
    assert!(toml::from_str::<AliTrainConfig>("bogus = 1").is_err());
}

#[test]
fn perfect_discriminator_drives_l_gan_to_zero_from_below() {
    let l = gan_losses_from_logits(&[60.0; 4], &[-60.0; 4], GanVariant::NonSaturating).unwrap();
    let floor = 2.0 * (1.0 - PROB_CLAMP).ln();
    assert!(l.l_gan < 0.0);
    assert!((l.l_gan - floor).abs() < 1e-15, "{}", l.l_gan);
}

#[test]
fn zero_pretrain_steps_leave_the_generator_unchanged() {
    let data = five_marginals();
    let mut tr = AliTrainer::new(small_cfg(20), &data).unwrap();
    let before = tr.gen.clone();
    assert!(tr.pretrain(&data).unwrap().is_empty());
    assert_eq!(tr.gen, before);
    assert_eq!(tr.pretrain_steps_done(), 0);
}

#[test]
fn linear_pretrain_trends_down_over_500_steps() {
    let data = five_marginals();
    let mut cfg = small_cfg(21);
    cfg.pretrain_steps = 500;
    let mut tr = AliTrainer::new(cfg, &data).unwrap();
    let trace = tr.pretrain(&data).unwrap();
    let means: Vec<f64> = trace.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert_eq!(means.len(), 5);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "window means {means:?}");
    }
}

#[test]
fn linear_midpoint_target_is_matched() {
    let ends = gen_gaussian_sequence(&[vec![-1.0, 0.0], vec![1.0, 0.5]], 0.3, 64, 22).unwrap();
    let (a, b) = (ends.batch(0), ends.batch(1));
    let (x0, x1) = minibatch_ot(a, b).unwrap().gather(a, b);
    let mid = x0.zip_map(&x1, |p, q| 0.5 * (p + q)).unwrap();
    let data = MarginalDataset::new(vec![
        (0.0, a.points().clone()),
        (0.5, mid.clone()),
        (1.0, b.points().clone()),
    ])
    .unwrap();
    let cfg = AliTrainConfig {
        iterations: 1000,
        batch_size: 64,
        gen_hidden: vec![32, 32],
        disc_hidden: vec![32, 32],
        seed: 22,
        ..AliTrainConfig::default()
    };
    let gen = train_ali(cfg, &data, None::<Vec<u8>>).unwrap().gen;
    let g = gen.eval(&x0, &x1, &[0.5; 64]).unwrap();
    let d = crate::eval::emd(&Batch::new(g).unwrap(), data.batch(1), crate::eval::GroundCost::Euclidean).unwrap();
    assert!(d <= 0.1, "EMD at t = 1/2: {d}");
}

#[test]
fn extra_discriminator_steps_use_fresh_batches() {
    let data = five_marginals();
    let mut cfg = small_cfg(23);
    cfg.disc_steps = 3;
    let mut tr = AliTrainer::new(cfg.clone(), &data).unwrap();
    let mut manual = tr.clone();
    let rec = tr.step(&data).unwrap();
    let mut rng = stream(cfg.seed, 0);
    let mut last = None;
    for _ in 0..3 {
        let b = manual.draw_batch(&data, &mut rng).unwrap();
        manual.disc_step(&b, 0).unwrap();
        last = Some(b);
    }
    assert_eq!(tr.disc.net(), manual.disc.net());
    assert_eq!(rec.index, last.unwrap().index);
    assert_eq!(tr.iteration(), 1);
    cfg.disc_steps = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn embedded_time_trains_and_resumes() {
    let data = five_marginals();
    let mut cfg = small_cfg(24);
    cfg.time_embedding = TimeEmbedding::new(3);
    let mut full = AliTrainer::new(cfg.clone(), &data).unwrap();
    assert_eq!(full.gen.net().input_width(), 2 * 2 + 7);
    assert_eq!(full.disc.net().input_width(), 2 + 7);
    assert_eq!(full.disc.dim(), 2);
    let full_recs = full.train::<Vec<u8>>(&data, None).unwrap();

    let mut half = AliTrainer::new(AliTrainConfig { iterations: 5, ..cfg.clone() }, &data).unwrap();
    let mut recs = half.train::<Vec<u8>>(&data, None).unwrap();
    let ck = half.to_checkpoint();
    let mut resumed = AliTrainer::from_checkpoint(&ck, cfg.clone(), &data).unwrap();
    recs.extend(resumed.train::<Vec<u8>>(&data, None).unwrap());
    assert_eq!(recs, full_recs);
    assert_eq!(resumed.gen, full.gen);

    let raw = AliTrainConfig { time_embedding: TimeEmbedding::RAW, ..cfg };
    assert!(AliTrainer::from_checkpoint(&ck, raw, &data).is_err());
}
