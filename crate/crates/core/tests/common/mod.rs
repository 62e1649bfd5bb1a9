#![allow(dead_code)]

pub mod fixtures;
pub mod oracles;

use rand::Rng;
use tripaug::featgen::{
    gradient_penalty, generator_loss, wgan_gp_loss, Activation, Judges, Mlp, MlpGrad,
};
use tripaug::rng::indexed_substream;

pub const FD_STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Largest central-difference discrepancy over every parameter of `net`.
pub fn param_fd<F: Fn(&Mlp) -> f64>(net: &Mlp, analytic: &[f64], f: F) -> f64 {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        probe.set_flat_params(&p).unwrap();
        let up = f(&probe);
        p[i] = base[i] - FD_STEP;
        probe.set_flat_params(&p).unwrap();
        let down = f(&probe);
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn input_fd<F: Fn(&[f64]) -> f64>(x: &[f64], analytic: &[f64], f: F) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + FD_STEP;
        let up = f(&p);
        p[i] = x[i] - FD_STEP;
        let down = f(&p);
        p[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn vec_of<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn min_abs_pre(net: &Mlp, x: &[f64]) -> f64 {
    let c = net.forward(x).unwrap();
    let mut m = f64::INFINITY;
    for (l, z) in net.layers().iter().zip(c.pre_activations()) {
        if matches!(l.activation, Activation::LeakyRelu(_)) {
            m = m.min(z.iter().fold(f64::INFINITY, |a, v| a.min(v.abs())));
        }
    }
    m
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    [a, b].concat()
}

/// Worst relative errors for one random configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradReport {
    pub generator: f64,
    pub critic: f64,
    pub classifier: f64,
    pub reconstructor: f64,
    pub inputs: f64,
    pub penalty: f64,
    pub objective: f64,
    pub generator_objective: f64,
}

impl GradReport {
    pub fn first_order(&self) -> f64 {
        [
            self.generator,
            self.critic,
            self.classifier,
            self.reconstructor,
            self.inputs,
            self.objective,
            self.generator_objective,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Draws a small configuration whose LeakyReLU pre-activations all sit at
/// least 1e-2 from the kink, then checks every analytic gradient.
pub fn check_configuration(index: u64) -> GradReport {
    let mut rng = indexed_substream(2024, "gradcheck", index);
    loop {
        let fx = rng.random_range(2..5);
        let sx = rng.random_range(1..4);
        let zx = rng.random_range(1..4);
        let hidden = rng.random_range(2..6);
        let classes = rng.random_range(2..4);
        let batch = rng.random_range(1..4);
        let slope = rng.random_range(0.05..0.5);
        let leaky = Activation::LeakyRelu(slope);
        let g = Mlp::init(&[zx + sx, hidden, fx], &[leaky, Activation::Identity], &mut rng).unwrap();
        let d = Mlp::init(&[fx + sx, hidden, 1], &[leaky, Activation::Identity], &mut rng).unwrap();
        let cls = Mlp::init(&[fx, classes], &[Activation::Softmax], &mut rng).unwrap();
        let rec = Mlp::init(&[fx, hidden, sx], &[leaky, Activation::Identity], &mut rng).unwrap();
        let real: Vec<Vec<f64>> = (0..batch).map(|_| vec_of(fx, &mut rng)).collect();
        let fake: Vec<Vec<f64>> = (0..batch).map(|_| vec_of(fx, &mut rng)).collect();
        let cond: Vec<Vec<f64>> = (0..batch).map(|_| vec_of(sx, &mut rng)).collect();
        let noise: Vec<Vec<f64>> = (0..batch).map(|_| vec_of(zx, &mut rng)).collect();
        let alphas: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let lambda = rng.random_range(0.5..10.0);
        let (beta, gamma) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));

        let hats: Vec<Vec<f64>> = (0..batch)
            .map(|i| {
                real[i]
                    .iter()
                    .zip(&fake[i])
                    .map(|(x, y)| alphas[i] * x + (1.0 - alphas[i]) * y)
                    .collect()
            })
            .collect();
        let gen_out: Vec<Vec<f64>> = (0..batch)
            .map(|i| g.apply(&concat(&noise[i], &cond[i])).unwrap())
            .collect();
        let mut margin = f64::INFINITY;
        for i in 0..batch {
            margin = margin.min(min_abs_pre(&g, &concat(&noise[i], &cond[i])));
            for x in [&real[i], &fake[i], &hats[i], &gen_out[i]] {
                margin = margin.min(min_abs_pre(&d, &concat(x, &cond[i])));
                margin = margin.min(min_abs_pre(&rec, x));
            }
        }
        if margin < 1e-2 {
            continue;
        }

        let mut report = GradReport::default();
        // Plain reverse passes on a weighted-sum loss, every network.
        for (net, slot) in [(&g, 0), (&d, 1), (&cls, 2), (&rec, 3)] {
            let x = vec_of(net.input_dim(), &mut rng);
            if min_abs_pre(net, &x) < 1e-2 {
                continue;
            }
            let w = vec_of(net.output_dim(), &mut rng);
            let loss = |n: &Mlp, x: &[f64]| -> f64 {
                n.apply(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let c = net.forward(&x).unwrap();
            let mut grads = MlpGrad::zeros_like(net);
            let gin = net.backward(&c, &w, Some(&mut grads)).unwrap();
            let e = param_fd(net, &grads.flatten(), |n| loss(n, &x));
            report.inputs = report.inputs.max(input_fd(&x, &gin, |p| loss(net, p)));
            match slot {
                0 => report.generator = e,
                1 => report.critic = e,
                2 => report.classifier = e,
                _ => report.reconstructor = e,
            }
        }

        // Penalty path on its own.
        let mut pg = MlpGrad::zeros_like(&d);
        gradient_penalty(&d, &hats[0], &cond[0], Some(&mut pg), 1.0).unwrap();
        report.penalty = param_fd(&d, &pg.flatten(), |n| {
            gradient_penalty(n, &hats[0], &cond[0], None, 1.0).unwrap().0
        });

        // Full critic objective.
        let l = wgan_gp_loss(&d, &real, &fake, &cond, &alphas, lambda).unwrap();
        report.objective = param_fd(&d, &l.grads.flatten(), |n| {
            wgan_gp_loss(n, &real, &fake, &cond, &alphas, lambda).unwrap().loss
        });

        // Generator objective through the frozen judges.
        let judges = Judges {
            critic: &d,
            classifier: &cls,
            reconstructor: &rec,
        };
        let gl = generator_loss(&g, judges, &noise, &cond, &labels, beta, gamma).unwrap();
        report.generator_objective = param_fd(&g, &gl.grads.flatten(), |n| {
            generator_loss(n, judges, &noise, &cond, &labels, beta, gamma)
                .unwrap()
                .loss
        });
        return report;
    }
}
