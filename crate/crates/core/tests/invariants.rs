use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use netpanel::bolmt::critical_value;
use netpanel::factors::{annihilator, demean_columns};
use netpanel::impact::{effects, impact_matrices, spillins};
use netpanel::netbuild::{read_edges, row_normalize, write_edges, NetworkMatrix, Provenance};
use proptest::prelude::*;

/// Random sparse network as (n, entries).
fn network() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..12).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 0.05f64..2.0);
        (Just(n), prop::collection::vec(edge, 1..3 * n))
    })
}

fn build(n: usize, entries: &[(usize, usize, f64)]) -> NetworkMatrix {
    let mut seen = std::collections::BTreeMap::new();
    for &(i, j, v) in entries {
        if i != j {
            seen.insert((i, j), v);
        }
    }
    NetworkMatrix::from_triplets(n, seen.into_iter().map(|((i, j), v)| (i, j, v)), Provenance::Imported).unwrap()
}

proptest! {
    #[test]
    fn row_normalized_rows_sum_to_one((n, entries) in network()) {
        let w = row_normalize(&build(n, &entries)).unwrap();
        prop_assert!(w.is_normalized());
        for i in 0..n {
            let s = w.row_sum(i);
            prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            prop_assert_eq!(w.get(i, i), 0.0);
        }
    }

    #[test]
    fn edge_list_round_trips((n, entries) in network()) {
        let w = build(n, &entries);
        let mut buf = Vec::new();
        write_edges(&w, &mut buf).unwrap();
        let back = read_edges(buf.as_slice(), n, Provenance::Imported).unwrap();
        prop_assert_eq!(back.to_dense(), w.to_dense());
    }

    #[test]
    fn effects_add_up_and_spillins_close(
        (n, entries) in network(),
        psi in prop::collection::vec(-0.9f64..0.9, 12),
        beta in prop::collection::vec(-2.0f64..2.0, 24),
        groups in prop::collection::vec(0usize..3, 12),
    ) {
        let w = row_normalize(&build(n, &entries)).unwrap();
        let betas = DMatrix::from_fn(n, 2, |i, l| beta[2 * i + l]);
        let im = impact_matrices(&psi[..n], &w, &betas).unwrap();
        let labels: Vec<String> = groups[..n].iter().map(|g| g.to_string()).collect();
        for (e, s) in effects(&im).iter().zip(spillins(&im, &labels).unwrap()) {
            prop_assert!((e.de + e.ie - e.te).abs() < 1e-12);
            prop_assert!((s.within + s.between - e.ie).abs() < 1e-12);
            prop_assert!((s.all - e.ie).abs() < 1e-12);
        }
    }

    #[test]
    fn relabelling_units_leaves_effects_unchanged(
        (n, entries) in network(),
        psi in -0.8f64..0.8,
        shift in 1usize..11,
    ) {
        let w = row_normalize(&build(n, &entries)).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let betas = DMatrix::from_fn(n, 1, |i, _| 1.0 + i as f64 / n as f64);
        let mut pb = betas.clone();
        for i in 0..n {
            pb[(perm[i], 0)] = betas[(i, 0)];
        }
        let a = effects(&impact_matrices(&vec![psi; n], &w, &betas).unwrap());
        let b = effects(&impact_matrices(&vec![psi; n], &w.permuted(&perm), &pb).unwrap());
        prop_assert!((a[0].te - b[0].te).abs() < 1e-10);
        prop_assert!((a[0].ie - b[0].ie).abs() < 1e-10);
    }

    #[test]
    fn critical_value_grows_with_candidates(p in 0.001f64..0.2, n in 1usize..5000, delta in 0.1f64..3.0) {
        let a = critical_value(p, n, 1.0, delta).unwrap();
        let b = critical_value(p, n + 1, 1.0, delta).unwrap();
        prop_assert!(b > a);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn annihilator_is_an_orthogonal_projection(seed in 0u64..1000, t in 6usize..30, r in 1usize..4) {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let f = DMatrix::from_fn(t, r, |_, _| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let f = demean_columns(&f);
        let m = annihilator(&f).unwrap();
        prop_assert!((&m * &m - &m).amax() < 1e-10);
        prop_assert!((&m - m.transpose()).amax() < 1e-12);
        prop_assert!((&m * &f).amax() < 1e-10);
    }
}

#[test]
fn two_unit_closed_form() {
    let w = NetworkMatrix::from_triplets(2, [(0, 1, 1.0), (1, 0, 1.0)], Provenance::Imported).unwrap();
    let e = effects(&impact_matrices(&[0.5, 0.5], &w, &DMatrix::from_element(2, 1, 1.0)).unwrap())[0];
    assert_abs_diff_eq!(e.de, 4.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(e.ie, 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(e.te, 2.0, epsilon = 1e-12);
}
