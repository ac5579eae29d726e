use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiclassical_ir::model::{ModelSystem, MorseBathParams, PhasePoint};
use semiclassical_ir::sampling::{sample_rng, BoltzmannSampler, DifferenceSampler, Proposal};
use semiclassical_ir::semiclassics::WidthMatrix;

const BETA: f64 = 1.0 / 7.0;

/// Weighted mean of `f` and its standard error.
fn weighted_mean(samples: &[(f64, f64)]) -> (f64, f64) {
    let sw: f64 = samples.iter().map(|s| s.0).sum();
    let mean = samples.iter().map(|(w, x)| w * x).sum::<f64>() / sw;
    let var: f64 = samples.iter().map(|(w, x)| (w * (x - mean)).powi(2)).sum();
    (mean, var.sqrt() / sw)
}

fn plain_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn morse_bath_averages_match_rejection_sampling() {
    let params = MorseBathParams::reference();
    let model = ModelSystem::morse_bath(params, 1).unwrap();

    // rejection oracle on the thermal window: V = 50 kT on the repulsive wall,
    // V = 0.999 D on the plateau side
    let (d, a) = (params.d, params.alpha);
    let lo = -(1.0 + (50.0 / (BETA * d)).sqrt()).ln() / a;
    let hi = -(1.0 - 0.999f64.sqrt()).ln() / a;
    let k = 2.0 * d * (params.chi * a).powi(2);
    let c = params.coupling;
    let half = 12.0 / (BETA * k).sqrt();
    let floor = -(c * lo.abs().max(hi)).powi(2) / (2.0 * k);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut v_ref, mut q_ref) = (Vec::new(), Vec::new());
    while v_ref.len() < 100_000 {
        let q = [rng.random_range(lo..hi), rng.random_range(-half..half)];
        let u = 1.0 - (-a * q[0]).exp();
        let v = d * u * u + 0.5 * k * q[1] * q[1] - c * q[0] * q[1];
        let accept = (-BETA * (v - floor)).exp();
        assert!(accept <= 1.0);
        if rng.random::<f64>() < accept {
            v_ref.push(v);
            q_ref.push(q[0]);
        }
    }

    let sampler = BoltzmannSampler::new(&model, BETA, Proposal::Separable {}).unwrap();
    let (mut v_is, mut q_is) = (Vec::new(), Vec::new());
    for i in 0..100_000 {
        let (z, lw) = sampler.draw(&model, &mut sample_rng(5, i));
        let w = (lw - sampler.log_weight_reference()).exp();
        v_is.push((w, model.potential(&z.q).unwrap()));
        q_is.push((w, z.q[0]));
    }

    for (name, a, b) in [
        ("<V>", weighted_mean(&v_is), plain_mean(&v_ref)),
        ("<q>", weighted_mean(&q_is), plain_mean(&q_ref)),
    ] {
        let sigma = (a.1 * a.1 + b.1 * b.1).sqrt();
        assert!((a.0 - b.0).abs() < 3.0 * sigma, "{name}: {} vs {} (sigma {sigma})", a.0, b.0);
    }
}

#[test]
fn momenta_are_maxwell_boltzmann() {
    let model = ModelSystem::harmonic(&[2.0, 1.0], vec![1.0, 3.0], 1, vec![(0, 1, 0.5)]).unwrap();
    let beta = 0.8;
    let sampler = BoltzmannSampler::new(&model, beta, Proposal::Separable {}).unwrap();
    let n = 100_000;
    let mut p2 = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n as u64 {
        let (z, _) = sampler.draw(&model, &mut sample_rng(8, i));
        for j in 0..2 {
            p2[j].push(z.p[j] * z.p[j] / model.masses()[j]);
        }
    }
    for xs in &p2 {
        let (m, e) = plain_mean(xs);
        assert!((m - 1.0 / beta).abs() < 3.0 * e, "{m} vs {}", 1.0 / beta);
    }
}

#[test]
fn difference_variables_have_the_coherent_state_covariance() {
    let gamma = WidthMatrix::new(vec![2.5, 0.4, 7.0], 2).unwrap();
    let sampler = DifferenceSampler::new(&gamma, 0..2);
    let n = 100_000;
    let mut dz = PhasePoint::zeros(3);
    let mut cols = vec![Vec::with_capacity(n); 4];
    let mut cross = Vec::with_capacity(n);
    for i in 0..n as u64 {
        sampler.draw(&mut sample_rng(21, i), &mut dz);
        assert_eq!((dz.p[2], dz.q[2]), (0.0, 0.0));
        cols[0].push(dz.q[0] * dz.q[0]);
        cols[1].push(dz.q[1] * dz.q[1]);
        cols[2].push(dz.p[0] * dz.p[0]);
        cols[3].push(dz.p[1] * dz.p[1]);
        cross.push(dz.p[0] * dz.q[0]);
    }
    let expect = [2.0 / 2.5, 2.0 / 0.4, 2.0 * 2.5, 2.0 * 0.4];
    for (xs, want) in cols.iter().zip(expect) {
        let (m, e) = plain_mean(xs);
        assert!((m - want).abs() < 3.0 * e, "{m} vs {want}");
    }
    let (m, e) = plain_mean(&cross);
    assert!(m.abs() < 3.0 * e);
}

#[test]
fn difference_density_is_normalized() {
    // midpoint rule over ±8 sigma in each of the two variables
    let gamma = WidthMatrix::new(vec![1.7], 1).unwrap();
    let sampler = DifferenceSampler::new(&gamma, 0..1);
    let (sq, sp) = ((2.0 / 1.7f64).sqrt(), (2.0 * 1.7f64).sqrt());
    let m = 400;
    let (hq, hp) = (16.0 * sq / m as f64, 16.0 * sp / m as f64);
    let mut total = 0.0;
    let mut dz = PhasePoint::zeros(1);
    for i in 0..m {
        for j in 0..m {
            dz.q[0] = -8.0 * sq + (i as f64 + 0.5) * hq;
            dz.p[0] = -8.0 * sp + (j as f64 + 0.5) * hp;
            total += sampler.log_density(&dz).exp() * hq * hp;
        }
    }
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn draws_depend_only_on_seed_and_index() {
    let model = ModelSystem::morse_bath(MorseBathParams::reference(), 2).unwrap();
    let sampler = BoltzmannSampler::new(&model, BETA, Proposal::Separable {}).unwrap();
    let a: Vec<_> = (0..50u64).map(|i| sampler.draw(&model, &mut sample_rng(3, i))).collect();
    let b: Vec<_> = (0..50u64).rev().map(|i| sampler.draw(&model, &mut sample_rng(3, i))).collect();
    for (x, y) in a.iter().zip(b.iter().rev()) {
        assert_eq!(x.0, y.0);
        assert_eq!(x.1.to_bits(), y.1.to_bits());
    }
    let other = sampler.draw(&model, &mut sample_rng(4, 0));
    assert_ne!(other.0, a[0].0);
}
