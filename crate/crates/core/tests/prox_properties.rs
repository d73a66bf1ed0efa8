use proptest::prelude::*;
use rhc_core::prox::{active_set_size, find_mu_star, prox_sql1, prox_sql2, psi, ProxParams};

fn objective(u: &[f64], x: &[f64], s: f64) -> f64 {
    let fit: f64 = u.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    let l1: f64 = u.iter().map(|a| a.abs()).sum();
    0.5 * fit + 0.5 * s * l1 * l1
}

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

fn params() -> impl Strategy<Value = ProxParams> {
    (0.01f64..5.0, 0.01f64..50.0).prop_map(|(a, b)| ProxParams::new(a, b).unwrap())
}

proptest! {
    #[test]
    fn prox_is_nonexpansive(x in vector(8), dx in vector(8), p in params()) {
        let y: Vec<f64> = x.iter().zip(dx.iter().cycle()).map(|(a, d)| a + d).collect();
        let px = prox_sql1(&x, &p);
        let py = prox_sql1(&y, &p);
        let out: f64 = px.iter().zip(&py).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let inp: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(out <= inp * (1.0 + 1e-7) + 1e-9);
    }

    #[test]
    fn prox_commutes_with_signs_and_permutations(x in vector(8), p in params(), flip in any::<u8>()) {
        let px = prox_sql1(&x, &p);
        let signs: Vec<f64> = (0..x.len()).map(|i| if (flip >> (i % 8)) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let flipped: Vec<f64> = x.iter().zip(&signs).map(|(a, s)| a * s).collect();
        let pf = prox_sql1(&flipped, &p);
        for i in 0..x.len() {
            prop_assert!((pf[i] - signs[i] * px[i]).abs() <= 1e-9 * (1.0 + px[i].abs()));
        }
        let reversed: Vec<f64> = x.iter().rev().cloned().collect();
        let pr = prox_sql1(&reversed, &p);
        for i in 0..x.len() {
            prop_assert!((pr[i] - px[x.len() - 1 - i]).abs() <= 1e-9 * (1.0 + px[i].abs()));
        }
    }

    #[test]
    fn prox_shrinks_componentwise_and_keeps_signs(x in vector(8), p in params()) {
        let u = prox_sql1(&x, &p);
        for (a, b) in u.iter().zip(&x) {
            prop_assert!(a.abs() <= b.abs() + 1e-12);
            prop_assert!(a * b >= 0.0);
        }
        let nonzero = u.iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(nonzero, active_set_size(&x, &p));
    }

    #[test]
    fn prox_beats_perturbations(x in vector(5), p in params(), d in vector(5)) {
        let s = p.alpha * p.beta;
        let u = prox_sql1(&x, &p);
        let base = objective(&u, &x, s);
        for eps in [1e-3, 1e-1] {
            let v: Vec<f64> = u.iter().zip(d.iter().cycle()).map(|(a, b)| a + eps * b).collect();
            prop_assert!(objective(&v, &x, s) >= base - 1e-9 * (1.0 + base));
        }
    }

    #[test]
    fn multipliers_sum_to_one(x in vector(8), p in params()) {
        prop_assume!(x.iter().any(|v| *v != 0.0));
        let mu = find_mu_star(&x, &p).unwrap();
        prop_assert!(psi(mu, &x, &p).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn one_dimension_agrees_with_squared_l2(x in -10.0f64..10.0, p in params()) {
        let a = prox_sql1(&[x], &p)[0];
        let b = prox_sql2(&[x], &p)[0];
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + x.abs()));
    }
}

#[test]
fn zero_input_is_fixed() {
    let p = ProxParams::new(1.0, 1.0).unwrap();
    assert_eq!(prox_sql1(&[0.0, 0.0, 0.0], &p), vec![0.0; 3]);
    assert_eq!(psi(0.3, &[0.0, 0.0], &p).unwrap(), -1.0);
}
