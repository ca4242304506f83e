use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use contagion::special::{student_t_cdf, student_t_upper};
use contagion::stats::{grubbs, grubbs_critical, grubbs_statistic, ols, pearson};

#[test]
fn student_t_matches_high_precision_table() {
    let text = include_str!("data/student_t_cdf.csv");
    let mut n = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let got = student_t_cdf(v[0], v[1]);
        assert!((got - v[2]).abs() < 1e-10, "t={} df={}: {got} vs {}", v[0], v[1], v[2]);
        n += 1;
    }
    assert_eq!(n, 100);
}

#[test]
fn student_t_cdf_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let chi = ChiSquared::new(10.0).unwrap();
    let samples = 10_000_000;
    let below = (0..samples)
        .filter(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let w: f64 = chi.sample(&mut rng);
            z / (w / 10.0).sqrt() <= 2.0
        })
        .count();
    let mc = below as f64 / samples as f64;
    assert!((mc - student_t_cdf(2.0, 10.0)).abs() < 5e-4, "{mc}");
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Q(i64, i64);

impl Q {
    fn new(n: i64, d: i64) -> Self {
        fn gcd(a: i64, b: i64) -> i64 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(n, d).max(1) * d.signum();
        Q(n / g, d / g)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn sub(self, o: Q) -> Q {
        Q::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Q) -> Q {
        Q::new(self.0 * o.1, self.1 * o.0)
    }
    fn f(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

#[test]
fn ols_matches_exact_normal_equations() {
    let xs = [1i64, 2, 4];
    let ys = [2i64, 3, 7];
    // [n sx; sx sxx] [B; C] = [sy; sxy]
    let q = |v: i64| Q::new(v, 1);
    let n = q(3);
    let sx = xs.iter().fold(q(0), |a, &x| a.add(q(x)));
    let sy = ys.iter().fold(q(0), |a, &y| a.add(q(y)));
    let sxx = xs.iter().fold(q(0), |a, &x| a.add(q(x * x)));
    let sxy = xs.iter().zip(&ys).fold(q(0), |a, (&x, &y)| a.add(q(x * y)));
    let det = n.mul(sxx).sub(sx.mul(sx));
    let c = n.mul(sxy).sub(sx.mul(sy)).div(det);
    let b = sxx.mul(sy).sub(sx.mul(sxy)).div(det);
    assert_eq!(c, Q(12, 7));
    assert_eq!(b, Q(0, 1));

    let r = ols(&[1.0, 2.0, 4.0], &[2.0, 3.0, 7.0]).unwrap();
    assert!((r.slope - c.f()).abs() < 1e-14);
    assert!((r.intercept - b.f()).abs() < 1e-14);
    assert_eq!(r.n_obs, 3);
}

#[test]
fn pearson_p_matches_closed_form_tails() {
    // n = 3: one degree of freedom, Cauchy tail
    let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.5]).unwrap();
    let t = r.rho * (1.0 / (1.0 - r.rho * r.rho)).sqrt();
    let p = 1.0 - 2.0 / std::f64::consts::PI * t.abs().atan();
    assert!((r.p - p).abs() < 1e-12, "{} vs {p}", r.p);

    // n = 4: two degrees of freedom
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.5]).unwrap();
    let t = r.rho * (2.0 / (1.0 - r.rho * r.rho)).sqrt();
    let p = 1.0 - t.abs() / (2.0 + t * t).sqrt();
    assert!((r.p - p).abs() < 1e-12, "{} vs {p}", r.p);
}

#[test]
fn grubbs_agrees_with_monte_carlo_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut null: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let s: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            grubbs_statistic(&s).unwrap().1
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let mc = null[950_000];
    // the Bonferroni critical value is nearly exact at this size
    assert!((mc - grubbs_critical(5, 0.05)).abs() < 5e-3, "{mc}");

    let sample = [0.0, 0.0, 0.0, 0.0, 10.0];
    let g = grubbs_statistic(&sample).unwrap().1;
    let out = grubbs(&sample, 0.05).unwrap().expect("outlier");
    assert_eq!(out.index, 4);
    assert!(g > mc);
    let exceed = null.iter().filter(|&&v| v >= g - 1e-12).count() as f64 / null.len() as f64;
    assert!(exceed < 0.05 && out.p < 0.05);
}

#[test]
fn upper_tail_and_cdf_agree() {
    for &df in &[0.5, 1.0, 3.0, 30.0] {
        for &t in &[0.1, 1.0, 4.0] {
            assert!((student_t_upper(t, df) - (1.0 - student_t_cdf(t, df))).abs() < 1e-14);
        }
    }
}
