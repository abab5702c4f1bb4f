use std::time::Instant;

use fewtag::embeddings::{hash_embed, Embedder, EmbeddingStore, Role, SentenceKey};

#[test]
fn distinct_tokens_are_nearly_orthogonal() {
    let dim = 256;
    let vs: Vec<_> = (0..1000).map(|i| hash_embed::<f64>(&format!("tok{i}"), dim, 11)).collect();
    let mut worst: f64 = 0.0;
    let mut mean = 0.0;
    let mut pairs = 0.0;
    for i in 0..vs.len() {
        for j in i + 1..vs.len().min(i + 50) {
            let c = vs[i].dot(&vs[j]);
            worst = worst.max(c.abs());
            mean += c;
            pairs += 1.0;
        }
    }
    assert!((mean / pairs).abs() < 0.01, "{}", mean / pairs);
    assert!(worst < 0.35, "{worst}");
    assert_eq!(hash_embed::<f64>("Tok1", dim, 11), vs[1]);
}

#[test]
fn ten_thousand_records_load_quickly() {
    let dim = 64;
    let mut store = EmbeddingStore::new(dim);
    for r in 0..10_000usize {
        let key = SentenceKey {
            episode_id: r / 100,
            role: if r % 2 == 0 { Role::Query } else { Role::Support },
            sentence: (r / 2) % 50,
            pair: Some(0),
        };
        let v: Vec<f32> = (0..dim).map(|d| ((r * 31 + d) % 17) as f32 / 17.0).collect();
        store.insert_token(key, 0, v).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    store.save(&path).unwrap();
    let t = Instant::now();
    let loaded = EmbeddingStore::load(&path).unwrap();
    let elapsed = t.elapsed();
    assert_eq!(loaded, store);
    assert!(elapsed.as_secs_f64() < 2.0, "{elapsed:?}");
    let key = SentenceKey {
        episode_id: 0,
        role: Role::Query,
        sentence: 0,
        pair: Some(0),
    };
    let m = Embedder::<f32>::sentence(&loaded, key, &["w".to_string()]).unwrap();
    assert_eq!(m.shape(), (1, dim));
}
