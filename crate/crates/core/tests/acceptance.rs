//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cagan_core::autograd::gradcheck::check_gradients;
use cagan_core::autograd::{Graph, Var};
use cagan_core::data::{
    sample_index_pairs, synthesize_toy_dataset, PairedDataset, Resolution, ToyDatasetSpec, ToyGroundTruth,
};
use cagan_core::evaluation::{evaluate_toy, ArticleSwapper, EvalReport, SwapIndices};
use cagan_core::networks::{Discriminator, DiscriminatorSpec, Generator, GeneratorOutput, GeneratorSpec};
use cagan_core::objectives::{
    adversarial_loss_d, adversarial_loss_d_graph, cycle_loss_graph, identity_loss, identity_loss_graph, total_losses,
    LossComponents, LossWeights,
};
use cagan_core::trainer::{read_metrics, train_loop, TrainConfig, TrainState, CHECKPOINT_FORMAT_VERSION};
use cagan_core::{error::Result, networks::DiscriminatorField};
use ndarray::{s, Array4, ArrayD, ArrayView4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = std::result::Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Sets the generator's head so that alpha saturates to exactly 0 or 1.
fn force_alpha<T: cagan_core::autograd::Scalar>(g: &mut Generator<T>, logit: f64) {
    let depth = g.spec().depth;
    let names: Vec<String> = g.params().names().map(str::to_string).collect();
    for (name, t) in names.iter().zip(g.params_mut().tensors_mut()) {
        if *name == format!("dec{depth}.weight") {
            t.slice_mut(s![.., 0, .., ..]).fill(T::zero());
        }
        if *name == format!("dec{depth}.bias") {
            t[[0]] = T::from_f64_lossy(logit);
        }
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (n, h, w) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..9));
        let color = random4(&mut rng, (n, 3, h, w), -1.0, 1.0);
        let x = random4(&mut rng, (n, 3, h, w), -1.0, 1.0);
        for (a, expected) in [(0.0, &x), (1.0, &color)] {
            let mut g = Graph::<f64>::new();
            let av = g.constant(ArrayD::from_elem(IxDyn(&[n, 1, h, w]), a));
            let cv = g.constant(color.clone().into_dyn());
            let xv = g.constant(x.clone().into_dyn());
            let out = g.alpha_blend(av, cv, xv);
            check!(g.value(out) == &expected.clone().into_dyn(), "blend with alpha {a} is not exact");
        }
    }
    // Whole generator with its head saturated.
    let spec = GeneratorSpec {
        input_resolution: Resolution::new(16, 16),
        base_channels: 8,
        depth: 2,
    };
    for (logit, name) in [(-1e4, "zero"), (1e4, "one")] {
        let mut gen = Generator::<f32>::new(spec, &mut rng).map_err(|e| e.to_string())?;
        force_alpha(&mut gen, logit);
        for _ in 0..5 {
            let img = |rng: &mut ChaCha8Rng| random4(rng, (2, 3, 16, 16), -1.0, 1.0).mapv(|v| v as f32);
            let (x, yo, yn) = (img(&mut rng), img(&mut rng), img(&mut rng));
            let out = gen.forward(x.view(), yo.view(), yn.view()).map_err(|e| e.to_string())?;
            let expected = if logit < 0.0 { &x } else { &out.raw_color };
            check!(&out.composite == expected, "generator composite not exact with alpha {name}");
        }
    }
    Ok("100 random blends and 10 saturated generator passes exact".into())
}

fn criterion_2() -> Outcome {
    let half = DiscriminatorField::constant(2, 4, 3, 0.5f64).map_err(|e| e.to_string())?;
    let d = adversarial_loss_d(&half, &half, &half).map_err(|e| e.to_string())?.total;
    let expected_d = 3.0 * 2f64.ln();
    check!((d - expected_d).abs() <= 1e-6, "d_total {d} vs {expected_d}");
    let alpha = Array4::from_shape_vec((1, 1, 2, 2), vec![0.1f64, 0.2, 0.3, 0.4]).unwrap();
    let id = identity_loss(alpha.view());
    check!((id - 0.25).abs() <= 1e-9, "identity_loss {id}");
    let weights = LossWeights::default();
    check!(weights.gamma_i == 0.1 && weights.gamma_c == 1.0, "default weights {weights:?}");
    let report = total_losses(
        &LossComponents {
            g_adv: 0.7,
            l_id: 0.5,
            l_cyc: 0.1,
            ..Default::default()
        },
        &weights,
        1,
    )
    .map_err(|e| e.to_string())?;
    check!((report.g_total - 0.85).abs() <= 1e-9, "g_total {}", report.g_total);
    Ok(format!("d_total={d:.7} identity=0.25 g_total={:.9}", report.g_total))
}

fn criterion_3() -> Outcome {
    const TOL: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut record = |name: &str, err: f64| -> std::result::Result<(), String> {
        worst = worst.max(err);
        if err < TOL {
            Ok(())
        } else {
            Err(format!("{name}: relative error {err:e}"))
        }
    };

    let unit = |rng: &mut ChaCha8Rng| random4(rng, (1, 1, 2, 2), 0.05, 0.95).into_dyn();
    let (r, f, m) = (unit(&mut rng), unit(&mut rng), unit(&mut rng));
    let rep = check_gradients(
        &|g: &mut Graph<f64>, v: &[Var]| adversarial_loss_d_graph(g, v[0], v[1], v[2]).total,
        &[r, f.clone(), m],
        1e-6,
        4,
        &mut rng,
    );
    record("discriminator loss", rep.max_relative_error)?;
    let rep = check_gradients(&|g: &mut Graph<f64>, v: &[Var]| g.neg_mean_log(v[0]), &[f], 1e-6, 4, &mut rng);
    record("generator adversarial loss", rep.max_relative_error)?;
    let a = unit(&mut rng);
    let rep = check_gradients(&|g: &mut Graph<f64>, v: &[Var]| identity_loss_graph(g, v[0]), &[a], 1e-6, 4, &mut rng);
    record("identity loss", rep.max_relative_error)?;
    let (x, y) = (
        random4(&mut rng, (1, 1, 2, 2), -1.0, 1.0).into_dyn(),
        random4(&mut rng, (1, 1, 2, 2), -1.0, 1.0).into_dyn(),
    );
    let rep = check_gradients(&|g: &mut Graph<f64>, v: &[Var]| cycle_loss_graph(g, v[0], v[1]), &[x, y], 1e-6, 4, &mut rng);
    record("cycle loss", rep.max_relative_error)?;

    let res = Resolution::new(8, 8);
    let gen = Generator::<f64>::new(
        GeneratorSpec {
            input_resolution: res,
            base_channels: 8,
            depth: 2,
        },
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let images: Vec<ArrayD<f64>> = (0..3).map(|_| random4(&mut rng, (2, 3, 8, 8), -1.0, 1.0).into_dyn()).collect();
    let weights_c = random4(&mut rng, (2, 3, 8, 8), -1.0, 1.0).into_dyn();
    let weights_a = random4(&mut rng, (2, 1, 8, 8), -1.0, 1.0).into_dyn();
    let mut inputs = images.clone();
    inputs.extend(gen.params().tensors().cloned());
    let rep = check_gradients(
        &|g: &mut Graph<f64>, v: &[Var]| {
            let out = gen.forward_graph(g, &v[3..], v[0], v[1], v[2]);
            let a = g.weighted_sum(out.composite, weights_c.clone());
            let b = g.weighted_sum(out.alpha, weights_a.clone());
            g.linear_combination(&[(a, 1.0), (b, 1.0)])
        },
        &inputs,
        1e-6,
        12,
        &mut rng,
    );
    record("generator 8x8 depth 2", rep.max_relative_error)?;

    let disc = Discriminator::<f64>::new(DiscriminatorSpec::standard(res, 8), &mut rng).map_err(|e| e.to_string())?;
    let mut inputs = images[..2].to_vec();
    inputs.extend(disc.params().tensors().cloned());
    let rep = check_gradients(
        &|g: &mut Graph<f64>, v: &[Var]| {
            let scores = disc.forward_graph(g, &v[2..], v[0], v[1]);
            g.neg_mean_log(scores)
        },
        &inputs,
        1e-6,
        12,
        &mut rng,
    );
    record("discriminator 8x8", rep.max_relative_error)?;
    Ok(format!("max relative error {worst:.2e} (< {TOL:e})"))
}

fn criterion_4() -> Outcome {
    let res = Resolution::new(128, 96);
    let d_spec = DiscriminatorSpec::standard(res, 64);
    check!(d_spec.receptive_field() == 63, "receptive field {}", d_spec.receptive_field());
    let stride_product: usize = d_spec.conv_layers.iter().map(|l| l.stride).product();
    let expected = (128 / stride_product, 96 / stride_product);
    check!(d_spec.field_shape() == expected, "field {:?} vs {expected:?}", d_spec.field_shape());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disc = Discriminator::<f32>::new(DiscriminatorSpec::standard(res, 16), &mut rng).map_err(|e| e.to_string())?;
    let x = Array4::<f32>::zeros((1, 3, 128, 96));
    let field = disc.forward(x.view(), x.view()).map_err(|e| e.to_string())?;
    check!(field.shape() == (1, 4, 3), "built field shape {:?}", field.shape());

    let spec = GeneratorSpec {
        input_resolution: res,
        base_channels: 16,
        depth: 5,
    };
    let gen = Generator::<f32>::new(spec, &mut rng).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let params = gen.params().bind(&mut g, false);
    let xv = g.constant(Array4::<f32>::zeros((1, 3, 128, 96)).into_dyn());
    let vars = gen.forward_graph(&mut g, &params, xv, xv, xv);
    let (mut c, mut h, mut w) = (3usize, 128usize, 96usize);
    for (k, &v) in vars.encoder.iter().enumerate() {
        let shape = g.value(v).shape().to_vec();
        let expected_c = if k == 0 { 16 } else { 2 * c };
        check!(
            shape == vec![1, expected_c, h / 2, w / 2],
            "encoder stage {k} has shape {shape:?}"
        );
        (c, h, w) = (expected_c, h / 2, w / 2);
    }
    check!((h, w) == (4, 3), "bottleneck {h}x{w}");
    Ok("receptive field 63, 128x96 -> 4x3 field, 5 encoder stages halve and double".into())
}

fn criterion_5() -> Outcome {
    const N: usize = 10;
    const DRAWS: usize = 10_000;
    let pairs = sample_index_pairs(N, DRAWS, &mut ChaCha8Rng::seed_from_u64(5)).map_err(|e| e.to_string())?;
    let violations = pairs.iter().filter(|(i, j)| i == j).count();
    check!(violations == 0, "{violations} draws with i == j");
    let mut counts = [0usize; N];
    for &(_, j) in &pairs {
        counts[j] += 1;
    }
    let expected = DRAWS as f64 / N as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((N - 1) as f64).unwrap().inverse_cdf(1.0 - 0.001);
    // Tabulated 0.999 quantile with 9 degrees of freedom.
    check!((critical - 27.877).abs() < 1e-3, "critical value {critical}");
    check!(stat < critical, "chi-square {stat} >= {critical}");
    Ok(format!("0 violations, chi-square {stat:.2} < {critical:.3}"))
}

fn write_toy(dir: &Path, count: usize, res: Resolution, seed: u64) -> Result<()> {
    let toy = synthesize_toy_dataset(&ToyDatasetSpec {
        count,
        resolution: res,
        seed,
        ..ToyDatasetSpec::default()
    })?;
    toy.write(dir)?;
    Ok(())
}

fn criterion_6() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let res = Resolution::new(48, 64);
    write_toy(&data, 12, res, 6).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        steps: 8,
        batch_size: 4,
        resolution: res,
        seed: 6,
        checkpoint_every: 4,
        data_root: data.clone(),
        generator_base_channels: 8,
        generator_depth: 4,
        discriminator_base_channels: 8,
        ..TrainConfig::default()
    };
    let run = |name: &str, config: &TrainConfig, resume: Option<&Path>| {
        let out = tmp.path().join(name);
        train_loop(config, &out, resume).map_err(|e| e.to_string())?;
        std::fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run("a", &config, None)?;
    let b = run("b", &config, None)?;
    check!(a == b, "two identical runs wrote different metrics");
    check!(
        read_metrics(&tmp.path().join("a/metrics.jsonl")).map_err(|e| e.to_string())?.len() == 8,
        "expected 8 metrics lines"
    );

    // Interrupted after 4 steps, then resumed to 8 in the same directory.
    let short = TrainConfig { steps: 4, ..config.clone() };
    run("c", &short, None)?;
    let c = run("c", &config, Some(&tmp.path().join("c/final.cagan")))?;
    check!(c == a, "resumed run diverged from the uninterrupted one");

    // Resuming from the periodic checkpoint of run a reproduces its tail.
    let d = run("d", &config, Some(&tmp.path().join("a/ckpt-000004.cagan")))?;
    let tail_a: Vec<&[u8]> = a.split(|&b| b == b'\n').skip(4).collect();
    let tail_d: Vec<&[u8]> = d.split(|&b| b == b'\n').collect();
    check!(tail_a == tail_d, "metrics after the checkpoint differ");
    check!(CHECKPOINT_FORMAT_VERSION >= 1, "format version");
    Ok("identical logs for equal seeds; resume at step 4 reproduces steps 5-8 exactly".into())
}

/// Steps per toy run.
const TOY_STEPS: u64 = 1000;
const TOY_SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_SAMPLES: usize = 256;

fn toy_data(count: usize, seed: u64) -> Result<(PairedDataset, ToyGroundTruth)> {
    let toy = synthesize_toy_dataset(&ToyDatasetSpec {
        count,
        resolution: Resolution::new(48, 64),
        seed,
        ..ToyDatasetSpec::default()
    })?;
    let truth = toy.ground_truth();
    let manifest = toy.manifest(Path::new("toy"))?;
    Ok((PairedDataset::from_images(manifest, toy.humans, toy.articles)?, truth))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v[v.len() / 2]
}

fn criterion_7() -> Outcome {
    let (data, truth) = toy_data(200, 7).map_err(|e| e.to_string())?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for seed in TOY_SEEDS {
        let started = Instant::now();
        let config = TrainConfig {
            steps: TOY_STEPS,
            seed,
            resolution: data.resolution(),
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(config).map_err(|e| e.to_string())?;
        for _ in 0..TOY_STEPS {
            let batch = state.sample_batch(&data).map_err(|e| e.to_string())?;
            state.train_step(&batch).map_err(|e| e.to_string())?;
        }
        let r = evaluate_toy(state.generator(), &data, &truth, EVAL_SAMPLES, 1000 + seed).map_err(|e| e.to_string())?;
        println!(
            "  criterion 7 seed {seed}: alpha_iou {:.3} color_swap_error {:.3} identity_leakage {:.4} cycle_error {:.4} ({:.0}s)",
            r.alpha_iou,
            r.color_swap_error,
            r.identity_leakage,
            r.cycle_error,
            started.elapsed().as_secs_f64()
        );
        reports.push(r);
    }
    let iou = median(reports.iter().map(|r| r.alpha_iou).collect());
    let color = median(reports.iter().map(|r| r.color_swap_error).collect());
    let leak = median(reports.iter().map(|r| r.identity_leakage).collect());
    let cycle = median(reports.iter().map(|r| r.cycle_error).collect());
    let summary = format!(
        "median over {} seeds at {TOY_STEPS} steps: alpha_iou {iou:.3} (>= 0.6), color_swap_error {color:.3} (<= 0.15), identity_leakage {leak:.4} (<= 0.05), cycle_error {cycle:.4} (<= 0.08)",
        TOY_SEEDS.len()
    );
    check!(
        iou >= 0.6 && color <= 0.15 && leak <= 0.05 && cycle <= 0.08,
        "{summary}"
    );
    Ok(summary)
}

/// Paints the target article's dominant color exactly over the person's
/// ground-truth garment mask.
struct MaskOracle<'a> {
    truth: &'a ToyGroundTruth,
    resolution: Resolution,
}

impl ArticleSwapper for MaskOracle<'_> {
    fn resolution(&self) -> Resolution {
        self.resolution
    }

    fn swap_batch(
        &self,
        x: ArrayView4<f32>,
        _y_old: ArrayView4<f32>,
        _y_new: ArrayView4<f32>,
        indices: &[SwapIndices],
    ) -> Result<GeneratorOutput<f32>> {
        let (n, _, h, w) = x.dim();
        let mut alpha = Array4::zeros((n, 1, h, w));
        let mut raw_color = Array4::zeros((n, 3, h, w));
        for (k, idx) in indices.iter().enumerate() {
            let mask = &self.truth.masks[idx.human];
            alpha
                .slice_mut(s![k, 0, .., ..])
                .assign(&mask.mapv(|m| if m { 1.0f32 } else { 0.0 }));
            let color = self.truth.pairs[idx.new_article].dominant_color;
            for c in 0..3 {
                raw_color.slice_mut(s![k, c, .., ..]).fill(color[c]);
            }
        }
        let composite = ndarray::Zip::from(&raw_color)
            .and(&x)
            .and_broadcast(&alpha.broadcast((n, 3, h, w)).expect("broadcast"))
            .map_collect(|&c, &xv, &a| a * c + (1.0 - a) * xv);
        Ok(GeneratorOutput {
            alpha,
            raw_color,
            composite,
        })
    }
}

struct ZeroAlpha(Resolution);

impl ArticleSwapper for ZeroAlpha {
    fn resolution(&self) -> Resolution {
        self.0
    }

    fn swap_batch(
        &self,
        x: ArrayView4<f32>,
        _y_old: ArrayView4<f32>,
        _y_new: ArrayView4<f32>,
        _indices: &[SwapIndices],
    ) -> Result<GeneratorOutput<f32>> {
        let (n, _, h, w) = x.dim();
        Ok(GeneratorOutput {
            alpha: Array4::zeros((n, 1, h, w)),
            raw_color: Array4::zeros((n, 3, h, w)),
            composite: x.to_owned(),
        })
    }
}

fn criterion_8() -> Outcome {
    let (data, truth) = toy_data(200, 8).map_err(|e| e.to_string())?;
    let oracle = MaskOracle {
        truth: &truth,
        resolution: data.resolution(),
    };
    let r = evaluate_toy(&oracle, &data, &truth, 128, 8).map_err(|e| e.to_string())?;
    check!(r.alpha_iou == 1.0, "oracle alpha_iou {}", r.alpha_iou);
    check!(r.identity_leakage == 0.0, "oracle identity_leakage {}", r.identity_leakage);
    check!(r.color_swap_error < 1e-6, "oracle color_swap_error {}", r.color_swap_error);
    let again = evaluate_toy(&oracle, &data, &truth, 128, 8).map_err(|e| e.to_string())?;
    check!(again == r, "evaluation is not deterministic");

    let zero = evaluate_toy(&ZeroAlpha(data.resolution()), &data, &truth, 128, 8).map_err(|e| e.to_string())?;
    let pairs = sample_index_pairs(data.len(), 128, &mut ChaCha8Rng::seed_from_u64(8)).map_err(|e| e.to_string())?;
    let gap: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (truth.pairs[i].worn_color, truth.pairs[j].dominant_color);
            (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum::<f64>() / 3.0
        })
        .sum::<f64>()
        / pairs.len() as f64;
    check!(zero.alpha_iou == 0.0 && zero.identity_leakage == 0.0, "zero-alpha scores {zero:?}");
    check!((zero.color_swap_error - gap).abs() < 1e-5, "zero-alpha color error {} vs {gap}", zero.color_swap_error);
    Ok(format!(
        "oracle: alpha_iou 1.0, identity_leakage 0, color_swap_error {:.1e}; zero-alpha color gap {gap:.4}",
        r.color_swap_error
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("blend endpoints", criterion_1),
        ("loss oracles", criterion_2),
        ("gradient checks", criterion_3),
        ("receptive field and shape algebra", criterion_4),
        ("triplet sampling", criterion_5),
        ("determinism and resume", criterion_6),
        ("toy-task training", criterion_7),
        ("metric oracle", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| *f == id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
