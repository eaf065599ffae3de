// Scratch harness for sweeping dataset difficulty and grid settings.

use dynshot::data::{gen_synthetic, nearest_center_accuracy, split_classes, SynthConfig};
use dynshot::graph::Activation;
use dynshot::metric::MetricArch;
use dynshot::optim::{MomentumKind, TrainConfig};
use dynshot::relational::RelationArch;
use dynshot::trainer::{run_grid, GridConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("nc");

    if mode == "nc" {
        for per_class in [6usize, 8, 12] {
            for noise in [0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6] {
                let cfg = SynthConfig {
                    num_classes: 28,
                    examples_per_class: per_class,
                    feature_dim: 32,
                    center_scale: 1.0,
                    noise_scale: noise,
                    seed: 1,
                };
                let ds = gen_synthetic(&cfg).unwrap();
                println!(
                    "per_class {per_class} noise {noise}: NC accuracy {:.3}",
                    nearest_center_accuracy(&ds)
                );
            }
        }
        return;
    }

    if mode == "diag" {
        // diag <classes> <noise> <alpha> <steps>: dynamic row only.
        let classes: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(208);
        let noise: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.6);
        let alpha: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.05);
        let steps: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2000);
        let synth = SynthConfig {
            num_classes: classes,
            examples_per_class: 12,
            feature_dim: 32,
            center_scale: 1.0,
            noise_scale: noise,
            seed: 1,
        };
        let dataset =
            split_classes(&gen_synthetic(&synth).unwrap(), 8.0 / classes as f64, 1).unwrap();
        println!("NC accuracy: {:.3}", nearest_center_accuracy(&dataset));
        let grid_cfg = GridConfig {
            base: TrainConfig {
                learning_rate: alpha,
                momentum: 0.9,
                batch_size: 32,
                momentum_kind: MomentumKind::Classic,
                shot_range: (2, 5),
                steps,
                seed: 0,
            },
            relation_arch: RelationArch::default(),
            metric_arch: MetricArch::default(),
            train_sizes: vec![],
            eval_sizes: vec![2, 3, 4, 5],
            seeds: vec![0],
            eval_episodes: 1000,
        };
        let grid = run_grid(&dataset, &grid_cfg).unwrap();
        print!("{}", grid.to_text());
        return;
    }

    if mode == "curve" {
        // curve <noise> <alpha> <steps> <shot_lo> <shot_hi> [ghidden] [embed] [fhidden]
        let noise: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.3);
        let alpha: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.02);
        let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2000);
        let lo: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2);
        let hi: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(5);
        let gh: Vec<usize> = args
            .get(7)
            .map(|s| s.split(',').map(|p| p.parse().unwrap()).collect())
            .unwrap_or_else(|| vec![64]);
        let embed: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(32);
        let fh: Vec<usize> = args
            .get(9)
            .map(|s| s.split(',').map(|p| p.parse().unwrap()).collect())
            .unwrap_or_else(|| vec![64]);
        let synth = SynthConfig {
            num_classes: 28,
            examples_per_class: 12,
            feature_dim: 32,
            center_scale: 1.0,
            noise_scale: noise,
            seed: 1,
        };
        let dataset = split_classes(&gen_synthetic(&synth).unwrap(), 8.0 / 28.0, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: alpha,
            momentum: 0.9,
            batch_size: 32,
            momentum_kind: MomentumKind::Classic,
            shot_range: (lo, hi),
            steps,
            seed: 0,
        };
        let mut cache = dynshot::ModelCache::new(
            32,
            RelationArch {
                hidden_sizes: gh,
                embed_dim: embed,
                activation: Activation::Relu,
                symmetrize: true,
            },
            MetricArch {
                hidden_sizes: fh,
                activation: Activation::Relu,
            },
            0,
        );
        let history = dynshot::train(&mut cache, &dataset, &cfg).unwrap();
        let window = 50.min(steps / 2);
        for start in (0..steps).step_by(steps / 10) {
            let end = (start + window).min(steps);
            println!(
                "steps {start:>5}..{end:>5}: loss {:.4}",
                history.mean_loss_over(start..end)
            );
        }
        use dynshot::data::Split;
        use rand::SeedableRng;
        for es in [2, 3, 4, 5] {
            let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(900 + es as u64);
            let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(800 + es as u64);
            let h = dynshot::trainer::evaluate_on(&mut cache, &dataset, Split::Heldout, es, 1000, &mut r1)
                .unwrap();
            let t = dynshot::trainer::evaluate_on(&mut cache, &dataset, Split::Train, es, 1000, &mut r2)
                .unwrap();
            println!("eval n={es}: heldout {h:.3} train {t:.3}");
        }
        return;
    }

    // grid mode: grid <noise> <alpha> <steps> <seeds> <eval_eps> [hidden] [embed] [per_class]
    let noise: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.6);
    let alpha: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(500);
    let num_seeds: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);
    let eval_eps: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let g_hidden: Vec<usize> = args
        .get(7)
        .map(|s| s.split(',').map(|p| p.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![32]);
    let embed: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(16);
    let per_class: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(12);
    let f_hidden: Vec<usize> = args
        .get(10)
        .map(|s| s.split(',').map(|p| p.parse().unwrap()).collect())
        .unwrap_or_else(|| g_hidden.clone());
    let kind = match args.get(11).map(|s| s.as_str()) {
        Some("nesterov") => MomentumKind::Nesterov,
        _ => MomentumKind::Classic,
    };
    let symmetrize = args.get(12).map(|s| s.as_str()) != Some("asym");
    let activation = Activation::Relu;

    let synth = SynthConfig {
        num_classes: 28,
        examples_per_class: per_class,
        feature_dim: 32,
        center_scale: 1.0,
        noise_scale: noise,
        seed: 1,
    };
    let dataset = split_classes(&gen_synthetic(&synth).unwrap(), 8.0 / 28.0, 1).unwrap();
    println!(
        "NC accuracy: {:.3}, heldout classes: {}",
        nearest_center_accuracy(&dataset),
        dataset.classes_in(dynshot::data::Split::Heldout).len()
    );

    let grid_cfg = GridConfig {
        base: TrainConfig {
            learning_rate: alpha,
            momentum: 0.9,
            batch_size: 32,
            momentum_kind: kind,
            shot_range: (2, 5),
            steps,
            seed: 0,
        },
        relation_arch: RelationArch {
            hidden_sizes: g_hidden,
            embed_dim: embed,
            activation,
            symmetrize,
        },
        metric_arch: MetricArch {
            hidden_sizes: f_hidden,
            activation,
        },
        train_sizes: vec![2, 3, 4, 5],
        eval_sizes: vec![2, 3, 4, 5],
        seeds: (0..num_seeds).collect(),
        eval_episodes: eval_eps,
    };
    let start = Instant::now();
    let grid = run_grid(&dataset, &grid_cfg).unwrap();
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    print!("{}", grid.to_text());
    let dyn_mean = grid.rows.last().unwrap().mean_over_eval_sizes();
    for row in &grid.rows[..grid.rows.len() - 1] {
        println!(
            "dynamic - {}: {:+.2} pts",
            row.label,
            100.0 * (dyn_mean - row.mean_over_eval_sizes())
        );
    }
}
