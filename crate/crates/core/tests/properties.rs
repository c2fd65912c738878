use hebbset::encoder::{self, EncoderParams, LayerWeights, WinnerMask};
use hebbset::hebbian::{self, frame_updates, hebbian_step, instar_update, objective_from_counts, optimal_activity};
use hebbset::numerics::Tensor;
use hebbset::setdecoder::{chamfer, smooth_l1};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(max: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..=max).prop_map(|v| {
        let rows: Vec<Vec<f64>> = v.into_iter().map(|(x, y)| vec![x, y]).collect();
        Tensor::from_rows(&rows).unwrap()
    })
}

fn weights(rows: usize, cols: usize) -> impl Strategy<Value = LayerWeights<f64>> {
    prop::collection::vec(-1.0f64..2.0, rows * cols)
        .prop_map(move |d| LayerWeights::new(Tensor::matrix(rows, cols, d).unwrap()))
}

fn brute_winners(x: &[f64], w: &LayerWeights<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(f64, usize)> = (0..w.d_out())
        .map(|j| (x.iter().zip(w.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    idx.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<usize> = idx[..k].iter().map(|p| p.1).collect();
    out.sort_unstable();
    out
}

fn chamfer_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let d = |p: &[f64], q: &[f64]| smooth_l1(p[0], q[0]) + smooth_l1(p[1], q[1]);
    let one_way = |s: &Tensor<f64>, t: &Tensor<f64>| -> f64 {
        (0..s.rows())
            .map(|i| (0..t.rows()).map(|j| d(s.row(i), t.row(j))).fold(f64::INFINITY, f64::min))
            .sum()
    };
    one_way(a, b) + one_way(b, a)
}

fn reversed(t: &Tensor<f64>) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = (0..t.rows()).rev().map(|i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn small_encoder(k: usize, seed: u64) -> EncoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EncoderParams::<f64>::init(&[2, 6, 8, 5], WinnerMask::Kwta(k), &[], &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kwta_matches_brute_force(
        (w, k) in (1usize..10).prop_flat_map(|d| (weights(d, 3), 1..=d)),
        x in prop::collection::vec(-1.0f64..2.0, 3),
    ) {
        prop_assert_eq!(encoder::kwta_winners(&x, &w, k).unwrap(), brute_winners(&x, &w, k));
    }

    #[test]
    fn codes_have_at_most_k_nonzeros(x in points(12), k in 1usize..=5, seed in 0u64..50) {
        let p = small_encoder(k, seed);
        let tr = encoder::trace(&x, &p).unwrap();
        for code in &tr.codes {
            for i in 0..code.rows() {
                prop_assert!(code.row(i).iter().filter(|&&v| v != 0.0).count() <= k);
                prop_assert!(code.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn latent_ignores_order_and_duplicates(x in points(12), k in 1usize..=5, seed in 0u64..50) {
        let p = small_encoder(k, seed);
        let z = encoder::encode_points(&x, &p).unwrap();
        prop_assert_eq!(encoder::encode_points(&reversed(&x), &p).unwrap(), z.clone());
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
        rows.push(rows[0].clone());
        let dup = Tensor::from_rows(&rows).unwrap();
        prop_assert_eq!(encoder::encode_points(&dup, &p).unwrap(), z);
    }

    #[test]
    fn hebbian_row_moves_toward_then_away_from_nearest(
        x in points(8),
        w in weights(1, 2),
        eta in 0.001f64..0.5,
    ) {
        let near = hebbian::nearest_point(w.row(0), &x);
        let before: f64 = x.row(near).iter().zip(w.row(0)).map(|(a, b)| (a - b).powi(2)).sum();
        let step = |sign: i8| {
            let dw = instar_update(&x, &w, &[sign], eta).unwrap();
            let next: Vec<f64> = w.row(0).iter().zip(dw.row(0)).map(|(a, d)| a + d).collect();
            x.row(near).iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let toward = step(1);
        let away = step(-1);
        prop_assert!(toward <= before + 1e-15);
        prop_assert!(away >= before - 1e-15);
        // the Hebbian step never overshoots the point
        let factor = 1.0 - eta / x.rows() as f64;
        prop_assert!((toward - factor * factor * before).abs() <= 1e-12 * (1.0 + before));
        let idle = instar_update(&x, &w, &[0], eta).unwrap();
        prop_assert_eq!(idle.data(), &[0.0, 0.0][..]);
    }

    #[test]
    fn prototype_on_a_point_is_a_fixed_point(x in points(8), pick in 0usize..8) {
        let row = x.row(pick % x.rows()).to_vec();
        let w = LayerWeights::new(Tensor::matrix(1, 2, row).unwrap());
        let dw = instar_update(&x, &w, &[1], 0.3).unwrap();
        prop_assert!(dw.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn frame_updates_agree_with_per_layer_steps(x in points(10), k in 1usize..=5, seed in 0u64..50) {
        let p = small_encoder(k, seed);
        let eta = 0.01;
        let ups = frame_updates(&p, &x, eta).unwrap();
        let tr = encoder::trace(&x, &p).unwrap();
        for (l, layer) in p.layers.iter().enumerate() {
            let p_star = optimal_activity(k, layer.d_out()).unwrap();
            let want = hebbian_step(&tr.inputs[l], layer, &tr.codes[l], p_star, eta).unwrap();
            prop_assert_eq!(&ups[l], &want);
        }
    }

    #[test]
    fn spreading_activations_never_raises_the_objective(
        counts in prop::collection::vec(0usize..10, 2..6),
        pick in any::<prop::sample::Index>(),
    ) {
        // Moving one activation from the busiest neuron to the idlest cannot hurt.
        let (hi, _) = counts.iter().enumerate().max_by_key(|p| p.1).unwrap();
        let (lo, _) = counts.iter().enumerate().min_by_key(|p| p.1).unwrap();
        prop_assume!(counts[hi] >= counts[lo] + 2);
        let mut moved = counts.clone();
        moved[hi] -= 1;
        moved[lo] += 1;
        prop_assert!(objective_from_counts(&moved) < objective_from_counts(&counts));
        let _ = pick;
    }

    #[test]
    fn chamfer_matches_oracle_and_is_symmetric(a in points(20), b in points(20)) {
        let c = chamfer(&a, &b).unwrap();
        prop_assert!((c - chamfer_oracle(&a, &b)).abs() < 1e-9);
        prop_assert_eq!(c, chamfer(&b, &a).unwrap());
        prop_assert_eq!(c, chamfer(&reversed(&a), &b).unwrap());
        prop_assert!(c >= 0.0);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }
}
