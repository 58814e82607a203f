use fmm_core::kernels::{l2l, m2l, m2m, p2m, Expansion};
use fmm_core::ParticleSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn vec3(rng: &mut ChaCha8Rng, h: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.gen_range(-h..h))
}

fn cluster(rng: &mut ChaCha8Rng, n: usize, c: [f64; 3], h: f64) -> ParticleSet {
    let mut ps = ParticleSet::default();
    for _ in 0..n {
        let d = vec3(rng, h);
        ps.push([c[0] + d[0], c[1] + d[1], c[2] + d[2]], rng.gen_range(-1.0..1.0));
    }
    ps
}

#[test]
fn m2m_recompute_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        let p = 1 + case % 10;
        let src = cluster(&mut rng, 15, [0.0; 3], 0.5);
        let c1 = vec3(&mut rng, 0.3);
        let c2 = vec3(&mut rng, 0.3);
        let shift = [c2[0] - c1[0], c2[1] - c1[1], c2[2] - c1[2]];
        let a = p2m(&src, c1, p).unwrap();
        let moved = m2m(&a, shift);
        assert!(rel(moved.coeffs(), p2m(&src, c2, p).unwrap().coeffs()) < 1e-12, "case {case}");
        let back = m2m(&moved, [-shift[0], -shift[1], -shift[2]]);
        assert!(rel(back.coeffs(), a.coeffs()) < 1e-12, "case {case}");
        assert_eq!(moved.get([0, 0, 0]), a.get([0, 0, 0]));
    }
}

#[test]
fn l2l_recompute_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..100 {
        let p = 1 + case % 10;
        let src = cluster(&mut rng, 10, [6.0, 1.0, -2.0], 0.5);
        let m = p2m(&src, [6.0, 1.0, -2.0], p).unwrap();
        let c1 = vec3(&mut rng, 0.3);
        let l1 = m2l(&m, [c1[0] - 6.0, c1[1] - 1.0, c1[2] + 2.0]).unwrap();
        let s = vec3(&mut rng, 0.3);
        let l2 = l2l(&l1, s);
        for _ in 0..3 {
            let y = vec3(&mut rng, 0.2);
            let (phi_a, f_a) = l2.eval_local(y);
            let (phi_b, f_b) = l1.eval_local([y[0] + s[0], y[1] + s[1], y[2] + s[2]]);
            assert!((phi_a - phi_b).abs() <= 1e-12 * phi_b.abs().max(1e-300), "case {case}");
            assert!(rel(&f_a, &f_b) < 1e-12, "case {case}");
        }
        let back = l2l(&l2, [-s[0], -s[1], -s[2]]);
        assert!(rel(back.coeffs(), l1.coeffs()) < 1e-12, "case {case}");
    }
}

#[test]
fn total_charge_survives_every_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let src = cluster(&mut rng, 40, [0.0; 3], 0.5);
    let q: f64 = src.q.iter().sum();
    let m = p2m(&src, [0.0; 3], 5).unwrap();
    assert_eq!(m.get([0, 0, 0]), q);
    assert_eq!(m2m(&m, [0.3, -0.2, 0.1]).get([0, 0, 0]), q);
    assert!(Expansion::zeros(5).unwrap().is_zero());
}
