mod common;

use common::rng;
use ibflow::effdim::{d_eff, measure, NormalizedSpectrum, SpectralMeasure};
use ibflow::linalg::Spectrum;
use proptest::prelude::*;
use rand::Rng;

fn normalized(raw: &[f64]) -> NormalizedSpectrum {
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // push the round-off into the largest entry so the sum is 1 to ~1 ulp
    let err = 1.0 - p.iter().sum::<f64>();
    let (imax, _) = p.iter().enumerate().fold((0, 0.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
    p[imax] += err;
    NormalizedSpectrum::from_probabilities(p).unwrap()
}

fn raw_spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..10.0, 1..=32)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn measure_is_bounded_by_log_length(raw in raw_spectrum()) {
        let p = normalized(&raw);
        let ln_n = (p.len() as f64).ln();
        for m in SpectralMeasure::ALL {
            let v = measure(&p, m);
            prop_assert!((0.0..=ln_n).contains(&v));
            let spread = raw.iter().cloned().fold(f64::MIN, f64::max) - raw.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-3 * raw.iter().cloned().fold(0.0, f64::max) {
                prop_assert!(v < ln_n, "{m}: non-uniform spectrum reached the maximum");
            }
        }
    }

    #[test]
    fn uniform_spectrum_attains_maximum(n in 1usize..=32) {
        let p = NormalizedSpectrum::from_probabilities(vec![1.0 / n as f64; n]);
        // 1/n may not sum to exactly 1 for every n; fall back to the raw path
        let d = d_eff(&Spectrum::new(vec![1.0; n]), SpectralMeasure::ShannonEntropy).unwrap();
        prop_assert_eq!(d, n as f64);
        if let Ok(p) = p {
            prop_assert!((measure(&p, SpectralMeasure::L2Participation) - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrating_transfer_never_raises_measure(raw in prop::collection::vec(1e-2f64..10.0, 2..=32), seed in any::<u64>()) {
        let p = normalized(&raw);
        let mut r = rng(seed);
        let probs = p.probabilities().to_vec();
        let n = probs.len();
        let i = r.random_range(0..n);
        let mut j = r.random_range(0..n - 1);
        if j >= i { j += 1; }
        // move mass from the smaller entry to the larger one
        let (big, small) = if probs[i] >= probs[j] { (i, j) } else { (j, i) };
        let eps = probs[small] * r.random_range(0.01..0.99);
        let mut q = probs.clone();
        q[big] += eps;
        q[small] -= eps;
        let err = 1.0 - q.iter().sum::<f64>();
        q[big] += err;
        let q = NormalizedSpectrum::from_probabilities(q).unwrap();
        for m in SpectralMeasure::ALL {
            prop_assert!(measure(&q, m) <= measure(&p, m) + 1e-12, "{}", m);
        }
    }

    #[test]
    fn d_eff_is_scale_invariant(raw in raw_spectrum(), k in -20i32..20, c in 1e-6f64..1e6) {
        let s = Spectrum::new(raw.clone());
        for m in SpectralMeasure::ALL {
            let base = d_eff(&s, m).unwrap();
            // powers of two scale without rounding
            let pow2 = Spectrum::new(raw.iter().map(|v| v * 2f64.powi(k)).collect());
            prop_assert_eq!(d_eff(&pow2, m).unwrap(), base);
            let scaled = Spectrum::new(raw.iter().map(|v| v * c).collect());
            prop_assert!((d_eff(&scaled, m).unwrap() - base).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn d_eff_lies_between_one_and_rank(raw in raw_spectrum()) {
        let s = Spectrum::new(raw.clone());
        for m in SpectralMeasure::ALL {
            let d = d_eff(&s, m).unwrap();
            prop_assert!(d >= 1.0 && d <= raw.len() as f64 * (1.0 + 1e-12));
        }
    }
}

#[test]
fn fixed_spectra() {
    let l2 = SpectralMeasure::L2Participation;
    let cases: [(&[f64], f64); 3] = [(&[1.0, 1.0, 1.0, 1.0], 4.0), (&[1.0, 0.0, 0.0], 1.0), (&[3.0, 1.0], 1.6)];
    for (s, want) in cases {
        let d = d_eff(&Spectrum::new(s.to_vec()), l2).unwrap();
        assert!((d - want).abs() < 1e-12, "{s:?}: {d}");
    }
}

#[test]
fn all_zero_spectrum_is_degenerate() {
    for m in SpectralMeasure::ALL {
        assert!(matches!(
            d_eff(&Spectrum::new(vec![0.0; 3]), m),
            Err(ibflow::Error::DegenerateSpectrum)
        ));
    }
}

/// Trend agreement between the two measures is reported, not asserted.
#[test]
fn measures_mostly_agree_on_ordering() {
    let mut r = rng(11);
    let (mut considered, mut agree) = (0, 0);
    for _ in 0..100 {
        let n = r.random_range(2..=16);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..10.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..10.0)).collect();
        let (sa, sb) = (Spectrum::new(a), Spectrum::new(b));
        let sh = |s: &Spectrum| d_eff(s, SpectralMeasure::ShannonEntropy).unwrap();
        let l2 = |s: &Spectrum| d_eff(s, SpectralMeasure::L2Participation).unwrap();
        if sh(&sa) > sh(&sb) {
            considered += 1;
            agree += usize::from(l2(&sa) >= l2(&sb));
        } else if sh(&sb) > sh(&sa) {
            considered += 1;
            agree += usize::from(l2(&sb) >= l2(&sa));
        }
    }
    println!("measure ordering agreement: {agree}/{considered}");
    assert!(considered > 0);
}
