//! Property tests for algebraic invariants.

mod common;

use common::*;
use lindblad_learn::chebyshev::derivative_weights;
use lindblad_learn::coefficients::{learn_coefficients, ProbeMode};
use lindblad_learn::evolution::{
    build_adjoint_ptm, chi_from_fidelities, coefficient, evolve_observable, fidelities_from_chi,
    Backend, ChannelOracle,
};
use lindblad_learn::linalg::rank_of;
use lindblad_learn::lowerbound::{
    n_anticommuting, n_anticommuting_closed_form, n_star, BalancedPauliSet, Variant,
};
use lindblad_learn::PauliString;
use num_rational::BigRational;
use proptest::prelude::*;

fn pauli(max_n: usize) -> impl Strategy<Value = PauliString> {
    (1..=max_n).prop_flat_map(|n| {
        (0..1u64 << n, 0..1u64 << n).prop_map(move |(x, z)| PauliString::new(n, x, z).unwrap())
    })
}

fn pauli_pair(max_n: usize) -> impl Strategy<Value = (PauliString, PauliString)> {
    (1..=max_n).prop_flat_map(|n| {
        let one = move || {
            (0..1u64 << n, 0..1u64 << n).prop_map(move |(x, z)| PauliString::new(n, x, z).unwrap())
        };
        (one(), one())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_matches_dense((a, b) in pauli_pair(4)) {
        let prod = a.mul(&b).unwrap();
        let dense = dense_pauli(&a) * dense_pauli(&b);
        let expected = dense_pauli(&prod.pauli) * prod.coefficient();
        prop_assert!((dense - expected).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn commutation_matches_dense((a, b) in pauli_pair(4)) {
        let (da, db) = (dense_pauli(&a), dense_pauli(&b));
        let commute = (&da * &db - &db * &da).iter().all(|v| v.norm() < 1e-12);
        prop_assert_eq!(a.commutes(&b).unwrap(), commute);
        prop_assert_eq!(a.symplectic_product(&b) % 2 == 0, commute);
    }

    #[test]
    fn multiplication_is_associative((a, b) in pauli_pair(5), seed in 0u64..64) {
        let c = PauliString::from_index(a.n(), (seed as usize * 7919) % (1 << (2 * a.n()))).unwrap();
        let left = a.mul(&b).unwrap().mul(&lindblad_learn::PhasedPauli::new(c, 0)).unwrap();
        let right = lindblad_learn::PhasedPauli::new(a, 0).mul(&b.mul(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn text_and_index_identify_paulis(p in pauli(6)) {
        prop_assert_eq!(p.to_string().parse::<PauliString>().unwrap(), p);
        prop_assert_eq!(PauliString::from_index(p.n(), p.index()).unwrap(), p);
        prop_assert_eq!(p.weight(), p.to_string().chars().filter(|&ch| ch != 'I').count());
    }

    #[test]
    fn walsh_transform_inverts(values in proptest::collection::vec(-1.0f64..1.0, 16)) {
        let back = fidelities_from_chi(&chi_from_fidelities(&values).unwrap()).unwrap();
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_weights_exact_on_polynomials(
        r in 2usize..12,
        tau in 0.01f64..2.0,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 12),
    ) {
        let (nodes, w1, w2) = derivative_weights(tau, r).unwrap();
        let poly = |t: f64| coeffs[..=r].iter().rev().fold(0.0, |acc, c| acc * t + c);
        let samples: Vec<f64> = nodes.iter().map(|&t| poly(t)).collect();
        let d1: f64 = w1.iter().zip(&samples).map(|(w, s)| w * s).sum();
        let d2: f64 = w2.iter().zip(&samples).map(|(w, s)| w * s).sum();
        let scale: f64 = w1.iter().chain(&w2).map(|w| w.abs()).sum::<f64>().max(1.0);
        prop_assert!((d1 - coeffs[1]).abs() < 1e-12 * scale);
        prop_assert!((d2 - 2.0 * coeffs[2]).abs() < 1e-12 * scale);
    }

    #[test]
    fn anticommuting_count_closed_form(n in 2usize..7, kappa in 2usize..5, index in 1usize..4096) {
        prop_assume!(kappa <= n);
        let set = BalancedPauliSet::new(n, kappa, Variant::Null).unwrap();
        let q = PauliString::from_index(n, index % (1 << (2 * n))).unwrap();
        prop_assume!(!q.is_identity());
        let brute = n_anticommuting(&q, &set).unwrap();
        prop_assert_eq!(n_anticommuting_closed_form(&q, &set).unwrap() as usize, brute);
        prop_assert!(brute as f64 >= n_star(n, kappa).unwrap() - 1e-9);
    }

    #[test]
    fn float_and_exact_rank_agree(
        dim in 1usize..6,
        entries in proptest::collection::vec(-2i64..=2, 36),
        rows in 1usize..7,
    ) {
        let matrix: Vec<Vec<i64>> = (0..rows).map(|i| (0..dim).map(|j| entries[i * 6 + j]).collect()).collect();
        let as_f64: Vec<Vec<f64>> = matrix.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let as_q: Vec<Vec<BigRational>> =
            matrix.iter().map(|r| r.iter().map(|&v| BigRational::from_integer(v.into())).collect()).collect();
        prop_assert_eq!(rank_of(&as_f64, dim).unwrap(), rank_of(&as_q, dim).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn heisenberg_evolution_matches_dense(seed in 0u64..10_000, n in 1usize..=3, t in 0.0f64..1.5) {
        let model = seeded_model(seed, n, 2, 2, 0.1);
        let ptm = build_adjoint_ptm(&model);
        let l = dense_liouvillian(&model);
        let e = expm(&l, t);
        let d = 1usize << n;
        for o in PauliString::all(n).unwrap().into_iter().skip(1).step_by(3) {
            let v = evolve_observable(&ptm, t, &o).unwrap();
            for q in PauliString::all(n).unwrap().iter().step_by(2) {
                // tr(O e^{tL}(Q)) / d equals the coefficient of Q in the Heisenberg image.
                let dense = normalized_trace(&dense_pauli(&o), &apply(&e, &dense_pauli(q))).re;
                prop_assert!((dense - coefficient(&v, q)).abs() < 1e-9, "O = {o}, Q = {q}, d = {d}");
            }
        }
    }

    #[test]
    fn exact_coefficients_recover_model(seed in 0u64..10_000, n in 1usize..=3) {
        let model = seeded_model(seed, n, n.min(2), 2.min(3usize.pow(n as u32) - 1), 0.1);
        let oracle = ChannelOracle::new(model.clone(), Backend::Exact);
        let est = learn_coefficients(
            &oracle,
            &model.hamiltonian_structure(),
            &model.dissipator_structure(),
            0.05,
            0.05,
            ProbeMode::ProbeByProbe,
        )
        .unwrap();
        prop_assert!(est.max_error(&model) < 1e-6);
    }
}
