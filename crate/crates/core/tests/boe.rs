use proptest::prelude::*;

use pcc_core::boe::{descriptor, fit_centers, select, BoECenters, DESCRIPTOR_LEN, SHALLOW_MAX_LEVEL};

fn symbols() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    prop::collection::vec((0u8..16, 0u8..16), 1..200).prop_map(|v| v.into_iter().unzip())
}

fn dist(a: &[f64; DESCRIPTOR_LEN], b: &[f64; DESCRIPTOR_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn descriptor_is_a_distribution((q1, q2) in symbols()) {
        let h = descriptor(&q1, &q2).unwrap().0;
        prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((h[..16].iter().sum::<f64>() - 0.5).abs() < 1e-9);
        for s in 0..16u8 {
            let c1 = q1.iter().filter(|&&v| v == s).count() as f64;
            prop_assert!((h[s as usize] - c1 / (2 * q1.len()) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_ignores_repetition((q1, q2) in symbols(), m in 2usize..5, seed in any::<u64>()) {
        let descs: Vec<_> = (0..8u8)
            .map(|i| descriptor(&[i, i + 1, 15 - i], &[i / 2, 7, i]).unwrap().0)
            .collect();
        let centers = fit_centers(&descs, 3, seed).unwrap().centers;
        let rep1: Vec<u8> = q1.iter().cycle().take(q1.len() * m).copied().collect();
        let rep2: Vec<u8> = q2.iter().cycle().take(q2.len() * m).copied().collect();
        let a = descriptor(&q1, &q2).unwrap();
        let b = descriptor(&rep1, &rep2).unwrap();
        for level in [SHALLOW_MAX_LEVEL + 1, 12] {
            prop_assert_eq!(select(level, Some(&a), &centers).unwrap(), select(level, Some(&b), &centers).unwrap());
        }
    }

    #[test]
    fn selection_picks_the_nearest_center((q1, q2) in symbols(), seed in any::<u64>()) {
        let descs: Vec<_> = (0..12u8)
            .map(|i| descriptor(&[i, i, 3, 15 - i], &[i % 5, 7, i, 1]).unwrap().0)
            .collect();
        let fit = fit_centers(&descs, 4, seed).unwrap();
        prop_assert!(fit.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for c in fit.centers.centers() {
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let h = descriptor(&q1, &q2).unwrap();
        let k = select(9, Some(&h), &fit.centers).unwrap();
        prop_assert!((1..=4).contains(&k));
        let best = dist(&h.0, &fit.centers.centers()[k - 1]);
        for c in fit.centers.centers() {
            prop_assert!(best <= dist(&h.0, c) + 1e-15);
        }
        for level in 0..=SHALLOW_MAX_LEVEL {
            prop_assert_eq!(select(level, None, &fit.centers).unwrap(), 0);
        }
    }
}

#[test]
fn missing_descriptor_and_empty_pool() {
    let centers = BoECenters::new(vec![[1.0 / 32.0; DESCRIPTOR_LEN]]);
    assert!(select(7, None, &centers).is_err());
    let h = descriptor(&[1], &[2]).unwrap();
    assert!(select(7, Some(&h), &BoECenters::new(Vec::new())).is_err());
    assert_eq!(select(7, Some(&h), &centers).unwrap(), 1);
    assert!(fit_centers(&[h.0], 2, 0).is_err());
    assert!(descriptor(&[], &[]).is_err());
    assert!(descriptor(&[1, 2], &[3]).is_err());
}
