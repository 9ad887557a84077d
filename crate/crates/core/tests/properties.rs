use pearl_core::label_transfer::{Pair, ABSTAIN_THRESHOLD};
use pearl_core::ot_align::{sinkhorn_log, TransportPlan};
use pearl_core::reward_model::{bt_probability, entropy_reg_loss, gaussian_entropy};
use pearl_core::synthetic_tasks::{
    brute_force_align, brute_force_transfer, flip_labels, labels_from_returns, permutation_objective,
};
use pearl_core::trajectory::reshape;
use pearl_core::*;
use proptest::prelude::*;

fn points(n: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), n)
}

fn euclid(rows: &[Vec<f64>]) -> DistanceMatrix {
    let n = rows.len();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let m = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { d(&rows[i], &rows[j]) });
    DistanceMatrix::new(m, Metric::Euclidean).unwrap()
}

fn set_from(flat: &[Vec<f64>], h: usize, ds: usize, da: usize) -> TrajectorySet {
    let segs = flat.iter().map(|f| reshape(f, h, ds, da).unwrap()).collect();
    TrajectorySet::new(segs, None).unwrap()
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn plan_strategy(m: usize, n: usize) -> impl Strategy<Value = TransportPlan> {
    prop::collection::vec(0.0..1.0f64, m * n).prop_map(move |v| {
        let total: f64 = v.iter().sum::<f64>().max(1e-9);
        TransportPlan::from_matrix(Matrix::from_vec(m, n, v.iter().map(|x| x / total).collect()).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_symmetric_and_triangular(flat in points(3..=6, 6)) {
        let set = set_from(&flat, 2, 2, 1);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let Ok(d) = pairwise_distance(&set, metric) else { continue };
            for i in 0..d.len() {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..d.len() {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    if metric == Metric::Euclidean {
                        for k in 0..d.len() {
                            prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn flatten_round_trips(flat in prop::collection::vec(-10.0..10.0f64, 12)) {
        let seg = reshape(&flat, 3, 3, 1).unwrap();
        prop_assert_eq!(flatten(&seg), flat);
    }

    #[test]
    fn kmeans_deterministic_with_monotone_sse(flat in points(4..=10, 4), seed in 0u64..1000) {
        let set = set_from(&flat, 2, 1, 1);
        let a = kmeans_cluster(&set, 2, 50, seed).unwrap();
        let b = kmeans_cluster(&set, 2, 50, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.sse_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(!a.members(0).is_empty() && !a.members(1).is_empty());
    }

    #[test]
    fn sinkhorn_hits_marginals(
        costs in prop::collection::vec(0.0..3.0f64, 64),
        m in 1usize..=8,
        n in 1usize..=8,
        wp in prop::collection::vec(0.1..1.0f64, 8),
        wq in prop::collection::vec(0.1..1.0f64, 8),
    ) {
        let c = Matrix::from_fn(m, n, |i, j| costs[i * 8 + j]);
        let norm = |w: &[f64]| { let s: f64 = w.iter().sum(); w.iter().map(|x| x / s).collect::<Vec<_>>() };
        let p = norm(&wp[..m]);
        let q = norm(&wq[..n]);
        for r in [sinkhorn(&c, &p, &q, 0.5, 5000, 1e-12).unwrap(), sinkhorn_log(&c, &p, &q, 0.5, 5000, 1e-12).unwrap()] {
            prop_assert!(r.plan.row_residual() < 1e-9);
            prop_assert!(r.plan.col_residual() < 1e-9);
            prop_assert!((r.plan.total_mass() - 1.0).abs() < 1e-9);
            prop_assert!(r.plan.values.as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn gw_swap_symmetry_and_scale_equivariance(a in points(3..=5, 2), b in points(3..=5, 2)) {
        let (cs, ct) = (euclid(&a), euclid(&b));
        let cfg = GwConfig { omega: Some(0.5), ..GwConfig::default() };
        let (p, q) = (uniform(cs.len()), uniform(ct.len()));
        let fwd = entropic_gw(&cs, &ct, &p, &q, &cfg).unwrap();
        let back = entropic_gw(&ct, &cs, &q, &p, &cfg).unwrap();
        // Sinkhorn on an ill-conditioned kernel may stop short; the two runs
        // update in opposite orders, so they only agree once it converges
        prop_assume!(fwd.sinkhorn_converged && back.sinkhorn_converged);
        prop_assert!(fwd.plan.values.max_abs_diff(&back.plan.transpose().values) < 1e-8);

        // scaling both distance matrices by c and ω by c² leaves the plan fixed
        let c = 3.0;
        let scaled = |d: &DistanceMatrix| DistanceMatrix::new(d.values().scale(c), Metric::Euclidean).unwrap();
        let cfg2 = GwConfig { omega: Some(0.5 * c * c), ..GwConfig::default() };
        let s = entropic_gw(&scaled(&cs), &scaled(&ct), &p, &q, &cfg2).unwrap();
        // rounding can move the outer stopping step by one iteration
        prop_assert!(fwd.plan.values.max_abs_diff(&s.plan.values) < 1e-8);
    }

    #[test]
    fn sinkhorn_depends_only_on_cost_over_omega(
        costs in prop::collection::vec(0.0..3.0f64, 25),
        c in 0.1..10.0f64,
    ) {
        let cost = Matrix::from_vec(5, 5, costs).unwrap();
        let p = uniform(5);
        let a = sinkhorn(&cost, &p, &p, 0.7, 5000, 1e-12).unwrap();
        let b = sinkhorn(&cost.scale(c), &p, &p, 0.7 * c, 5000, 1e-12).unwrap();
        prop_assert!(a.plan.values.max_abs_diff(&b.plan.values) < 1e-12);
    }

    #[test]
    fn gw_beats_independent_coupling(a in points(3..=6, 2), b in points(3..=6, 2)) {
        let (cs, ct) = (euclid(&a), euclid(&b));
        let (p, q) = (uniform(cs.len()), uniform(ct.len()));
        let r = entropic_gw(&cs, &ct, &p, &q, &GwConfig::default()).unwrap();
        let indep = gw_objective(&cs, &ct, &init_plan(cs.len(), ct.len()));
        prop_assert!(r.objective <= indep + 1e-9);
    }

    #[test]
    fn brute_force_lower_bounds_every_permutation(a in points(3..=5, 2), b in points(3..=5, 2)) {
        let m = a.len().min(b.len());
        let (cs, ct) = (euclid(&a[..m]), euclid(&b[..m]));
        let best = brute_force_align(&cs, &ct).unwrap();
        let mut perm: Vec<usize> = (0..m).collect();
        loop {
            let mut t = Matrix::zeros(m, m);
            for (j, &i) in perm.iter().enumerate() {
                t[(i, j)] = 1.0 / m as f64;
            }
            let obj = gw_objective(&cs, &ct, &TransportPlan::from_matrix(t).unwrap());
            prop_assert!((obj - permutation_objective(&cs, &ct, &perm)).abs() < 1e-9);
            prop_assert!(best.objective <= obj + 1e-12);
            // next lexicographic permutation
            let Some(i) = (1..m).rev().find(|&i| perm[i - 1] < perm[i]) else { break };
            let j = (i..m).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
            perm.swap(i - 1, j);
            perm[i..].reverse();
        }
    }

    #[test]
    fn transfer_is_antisymmetric(plan in plan_strategy(4, 3), returns in prop::collection::vec(-3.0..3.0f64, 4)) {
        let source = labels_from_returns(&returns).unwrap();
        for (j, k) in [(0, 1), (0, 2), (1, 2)] {
            let fwd = transfer_label(&pair_match(&plan, j, k).unwrap(), &source).unwrap();
            let rev = transfer_label(&pair_match(&plan, k, j).unwrap(), &source).unwrap();
            let total: f64 = {
                let (a, b) = (plan.column(j), plan.column(k));
                let mut s = 0.0;
                for i in 0..4 { for i2 in 0..4 { if i != i2 { s += a[i] * b[i2]; } } }
                s
            };
            if let (Some(x), Some(y)) = (fwd.value(), rev.value()) {
                prop_assert!((x + y - total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transfer_matches_oracle(plan in plan_strategy(4, 4), returns in prop::collection::vec(-3.0..3.0f64, 4)) {
        let source = labels_from_returns(&returns).unwrap();
        for ((j, k), o) in brute_force_transfer(&plan, &source).unwrap() {
            let path = transfer_label(&pair_match(&plan, j, k).unwrap(), &source).unwrap();
            match (o, path) {
                (TransferOutcome::Label(x), TransferOutcome::Label(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn binarized_labels_ignore_increasing_affine_maps(
        raw in prop::collection::vec(-10.0..10.0f64, 1..12),
        scale in 0.01..100.0f64,
        shift in -50.0..50.0f64,
    ) {
        let batch = |f: &dyn Fn(f64) -> f64| -> Vec<(Pair, TransferOutcome)> {
            raw.iter().enumerate().map(|(k, &z)| ((k, k + 1), TransferOutcome::Label(f(z)))).collect()
        };
        let a = normalize_labels(&batch(&|z| z)).unwrap();
        let b = normalize_labels(&batch(&|z| scale * z + shift)).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            let (x, y) = (x.value().unwrap(), y.value().unwrap());
            // a value sitting on the threshold can move by rounding
            if (x - 0.5).abs() > 1e-9 {
                prop_assert_eq!(binarize(x), binarize(y));
            }
        }
    }

    #[test]
    fn bradley_terry_shift_and_complement(
        r0 in prop::collection::vec(-20.0..20.0f64, 3),
        r1 in prop::collection::vec(-20.0..20.0f64, 3),
        c in -50.0..50.0f64,
    ) {
        let p = bt_probability(&r0, &r1);
        let shift = |r: &[f64]| r.iter().map(|x| x + c).collect::<Vec<_>>();
        prop_assert!((bt_probability(&shift(&r0), &shift(&r1)) - p).abs() < 1e-12);
        prop_assert!((p + bt_probability(&r1, &r0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_hinge_monotone(mut vars in prop::collection::vec(1e-5..1e5f64, 2..20), eta in -5.0..10.0f64) {
        vars.sort_by(f64::total_cmp);
        for w in vars.windows(2) {
            prop_assert!(gaussian_entropy(w[0]) <= gaussian_entropy(w[1]));
            prop_assert!(entropy_reg_loss(&[w[1]], eta) <= entropy_reg_loss(&[w[0]], eta));
        }
    }

    #[test]
    fn flipping_twice_is_identity(returns in prop::collection::vec(-3.0..3.0f64, 2..8), f in 0.0..=1.0f64, seed: u64) {
        let d = labels_from_returns(&returns).unwrap();
        let once = flip_labels(&d, f, seed).unwrap();
        prop_assert_eq!(flip_labels(&once, f, seed).unwrap(), d);
    }
}

#[test]
fn abstain_threshold_is_tiny() {
    assert_eq!(ABSTAIN_THRESHOLD, 1e-12);
}
