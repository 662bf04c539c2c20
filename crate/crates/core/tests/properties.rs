//! Property-based checks of the stated invariants.

use ocd_cvae::config::TrainConfig;
use ocd_cvae::dataset::{load_dataset, make_synthetic, save_dataset, split_gzsl, SynthConfig};
use ocd_cvae::eval::{harmonic_mean, per_class_accuracy};
use ocd_cvae::losses::{kl_divergence_value, mine_batch_triplets, obtl_loss, triplet_loss, MiningMode};
use ocd_cvae::models::{classify, Architecture, Networks};
use ocd_cvae::numgrad::{Graph, Rng, Tensor2};
use ocd_cvae::ocd::{generate_ocd, partner_indices, shuffle_means, OcdParams};
use proptest::prelude::*;

fn labels_strategy(max_classes: usize, max_n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max_classes, 2..max_n)
}

fn sorted_rows(t: &Tensor2) -> Vec<Vec<u64>> {
    let mut v: Vec<Vec<u64>> = t.iter_rows().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_is_row_permutation(rows in 2usize..40, cols in 1usize..5, seed in any::<u64>(), forbid in any::<bool>()) {
        let mu = Rng::new(seed ^ 1).normal_matrix(rows, cols);
        let s = shuffle_means(&mu, &mut Rng::new(seed), forbid).unwrap();
        prop_assert_eq!(sorted_rows(&s), sorted_rows(&mu));
        if forbid {
            for i in 0..rows {
                prop_assert_ne!(s.row(i), mu.row(i));
            }
        }
    }

    #[test]
    fn partners_form_derangement(n in 2usize..700, seed in any::<u64>()) {
        let p = partner_indices(n, 256, true, &mut Rng::new(seed)).unwrap();
        let mut seen = vec![false; n];
        for (i, &j) in p.iter().enumerate() {
            prop_assert_ne!(i, j);
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
    }

    #[test]
    fn ocd_midpoint_and_attribute_passthrough(seed in any::<u64>(), per_class in 1usize..6) {
        let arch = Architecture { d_x: 4, attr_dim: 3, latent_dim: 2, hidden: 6 };
        let nets = Networks::init(arch, &mut Rng::new(seed)).unwrap();
        let attrs = Rng::new(seed ^ 7).normal_matrix(3, 3);
        let p = OcdParams::new(0.0, 0.12, 0.5, per_class, true, 256).unwrap();
        let b = generate_ocd(&nets, &attrs, &[4, 1, 6], &p, &mut Rng::new(seed)).unwrap();
        let classes = [4usize, 1, 6];
        for i in 0..b.len() {
            let k = classes.iter().position(|&c| c == b.labels[i]).unwrap();
            prop_assert_eq!(b.attrs.row(i), attrs.row(k));
            for j in 0..2 {
                let mid = (b.mu.get(i, j) + b.mu.get(b.partner[i], j)) / 2.0;
                prop_assert_eq!(b.mu_oc.get(i, j), mid);
            }
        }
    }

    #[test]
    fn hardest_negative_count(labels in labels_strategy(5, 60), seed in any::<u64>()) {
        let emb = Rng::new(seed).normal_matrix(labels.len(), 3);
        let got = mine_batch_triplets(&emb, &labels, MiningMode::HardestNegative).unwrap().len();
        let mut counts = [0usize; 5];
        for &l in &labels { counts[l] += 1; }
        let classes = counts.iter().filter(|&&c| c > 0).count();
        let want: usize = if classes >= 2 { counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum() } else { 0 };
        prop_assert_eq!(got, want);
    }

    #[test]
    fn mined_triplets_are_valid(labels in labels_strategy(4, 30), seed in any::<u64>()) {
        let emb = Rng::new(seed).normal_matrix(labels.len(), 2);
        for mode in [MiningMode::AllValid, MiningMode::HardestNegative] {
            for t in mine_batch_triplets(&emb, &labels, mode).unwrap() {
                prop_assert!(t.anchor < t.positive);
                prop_assert_eq!(labels[t.anchor], labels[t.positive]);
                prop_assert_ne!(labels[t.negative], labels[t.anchor]);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = Rng::new(seed);
        let mu = rng.normal_matrix(n, 3);
        let lv = rng.normal_matrix(n, 3);
        prop_assert!(kl_divergence_value(&mu, &lv).unwrap() >= -1e-12);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut g = Graph::new();
        let e = g.constant(rng.normal_matrix(n, 2));
        let v = obtl_loss(&mut g, e, &labels, 0.4, MiningMode::HardestNegative).unwrap();
        prop_assert!(g.scalar(v) >= 0.0);
        let (a, p, q) = (rng.normal_matrix(1, 2), rng.normal_matrix(1, 2), rng.normal_matrix(1, 2));
        prop_assert!(triplet_loss(a.row(0), p.row(0), q.row(0), 0.4) >= 0.0);
    }

    #[test]
    fn harmonic_below_arithmetic(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let h = harmonic_mean(a, b).unwrap();
        prop_assert!(h <= (a + b) / 2.0 + 1e-12);
        if (a - b).abs() > 1e-6 {
            prop_assert!(h < (a + b) / 2.0);
        }
    }

    #[test]
    fn per_class_accuracy_order_invariant(labels in labels_strategy(4, 50), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let pred: Vec<usize> = labels.iter().map(|_| rng.below(4)).collect();
        let classes = [0, 1, 2, 3];
        let perm = rng.permutation(labels.len());
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let pp: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        let a = per_class_accuracy(&pred, &labels, &classes).unwrap();
        let b = per_class_accuracy(&pp, &pl, &classes).unwrap();
        prop_assert_eq!(a.per_class, b.per_class);
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn classify_candidate_order_invariant(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = Rng::new(seed);
        let attrs = rng.normal_matrix(8, 3).map(|v| v.round());
        let a_hat = rng.normal_matrix(1, 3).map(|v| v.round());
        let mut cands: Vec<usize> = rng.permutation(8)[..k].to_vec();
        let first = classify(a_hat.row(0), &attrs, &cands).unwrap();
        cands.reverse();
        prop_assert_eq!(classify(a_hat.row(0), &attrs, &cands).unwrap(), first);
        rng.shuffle(&mut cands);
        prop_assert_eq!(classify(a_hat.row(0), &attrs, &cands).unwrap(), first);
    }

    #[test]
    fn split_partitions_seen_samples(seed in any::<u64>(), per_class in 2usize..30) {
        let ds = make_synthetic(&SynthConfig { num_seen: 3, num_unseen: 2, samples_per_class: per_class, ..Default::default() }).unwrap();
        let s = split_gzsl(&ds, 0.8, seed).unwrap();
        let mut all: Vec<usize> = s.train_seen_idx.iter().chain(&s.test_seen_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ds.seen_indices());
        for &c in ds.seen() {
            let n_train = s.train_seen_idx.iter().filter(|&&i| ds.labels()[i] == c).count();
            prop_assert_eq!(n_train, (0.8 * per_class as f64).floor() as usize);
        }
    }

    #[test]
    fn config_text_round_trip(seed in any::<u64>(), sp in 0.2f64..1.0, ocd in any::<bool>(), samples in 1usize..1000) {
        let mut c = TrainConfig { seed, use_ocd: ocd, ..TrainConfig::default() };
        c.hyper.sigma_prime_hp = sp;
        c.hyper.ocd_samples_per_class = samples;
        prop_assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dataset_save_load_identity(seed in any::<u64>(), seen in 1usize..4, unseen in 0usize..3, per_class in 1usize..6) {
        let ds = make_synthetic(&SynthConfig { num_seen: seen, num_unseen: unseen, samples_per_class: per_class, d_x: 3, attr_dim: 2, seed, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }
}
