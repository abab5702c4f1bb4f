mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fewtag::episodes::{build_split, sample_episode, sample_support, EpisodeSet};

#[test]
fn criteria_hold_on_random_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let domain = common::random_domain(&mut rng, 200, 6);
    for k in [1, 5] {
        for trial in 0..150 {
            let mut r = ChaCha8Rng::seed_from_u64(trial);
            let s = sample_support(&domain, k, 0.0, &mut r).unwrap();
            common::covers(&domain, s.sentences(), k).unwrap();
            common::minimal(&domain, s.sentences(), k).unwrap();
            let s = sample_support(&domain, k, 0.2, &mut r).unwrap();
            common::covers(&domain, s.sentences(), k).unwrap();
        }
    }
}

#[test]
fn queries_are_disjoint_and_replayable() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let domain = common::random_domain(&mut rng, 120, 4);
    let a = sample_episode(&domain, 1, 20, 0.2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = sample_episode(&domain, 1, 20, 0.2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.queries.len(), 20);
    for q in &a.queries {
        assert!(!a.support.sentences().contains(q));
    }
}

#[test]
fn split_round_trips_and_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d1 = common::random_domain(&mut rng, 80, 3);
    let set = build_split(&[d1.clone()], 100, 1, 20, 0.2, 4).unwrap();
    assert_eq!(set.episodes.iter().map(|e| e.queries.len()).sum::<usize>(), 2000);
    let mut buf = Vec::new();
    set.write_jsonl(&mut buf).unwrap();
    assert_eq!(EpisodeSet::read_jsonl(&buf[..]).unwrap(), set);
    assert!(set.mean_support_size() < (d1.label_set().len() * 2) as f64);
    assert!(build_split(&[d1], 0, 1, 20, 0.2, 4).unwrap().is_empty());
}
