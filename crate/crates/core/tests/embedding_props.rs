use chrono::{DateTime, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ticketrag::corpus::{ArtifactChunk, Partition};
use ticketrag::embedding::{embed_corpus, hashing_embed, EmbedderSpec, EmbeddingRecord, HashingEmbedder};
use ticketrag::exec::Execution;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum::<f64>() / (norm(a) * norm(b))
}

proptest! {
    #[test]
    fn vectors_have_unit_norm(text in "[a-zA-Z0-9 .,:_-]{1,80}", seed in any::<u64>(), dim in 8usize..512) {
        if let Ok(v) = hashing_embed(&text, dim, seed) {
            prop_assert_eq!(v.len(), dim);
            prop_assert!((norm(&v) - 1.0).abs() <= 1e-6);
        } else {
            prop_assert!(!text.chars().any(char::is_alphanumeric));
        }
    }

    #[test]
    fn embedding_is_pure(text in "[a-z ]{1,60}", seed in any::<u64>()) {
        prop_assert_eq!(hashing_embed(&text, 384, seed).ok(), hashing_embed(&text, 384, seed).ok());
    }

    #[test]
    fn self_cosine_is_one(text in "[a-z][a-z ]{0,60}") {
        let v = hashing_embed(&text, 384, 0).unwrap();
        prop_assert!((cosine(&v, &v) - 1.0).abs() <= 1e-6);
    }
}

fn random_text(rng: &mut ChaCha8Rng, prefix: char) -> String {
    let n = rng.random_range(3..12);
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..8);
            let body: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            format!("{prefix}{body}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn disjoint_texts_are_nearly_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = 0.0;
    for _ in 0..1000 {
        let a = hashing_embed(&random_text(&mut rng, 'p'), 384, 0).unwrap();
        let b = hashing_embed(&random_text(&mut rng, 'q'), 384, 0).unwrap();
        total += cosine(&a, &b).abs();
    }
    let mean = total / 1000.0;
    assert!(mean < 0.2, "mean |cosine| of disjoint pairs {mean}");
}

#[test]
fn shared_tokens_raise_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut shared, mut disjoint) = (0.0, 0.0);
    for _ in 0..500 {
        let common = random_text(&mut rng, 'c');
        let a = format!("{common} {}", random_text(&mut rng, 'p'));
        let b = format!("{common} {}", random_text(&mut rng, 'q'));
        let c = random_text(&mut rng, 'r');
        let (va, vb, vc) = (hashing_embed(&a, 384, 0).unwrap(), hashing_embed(&b, 384, 0).unwrap(), hashing_embed(&c, 384, 0).unwrap());
        shared += cosine(&va, &vb);
        disjoint += cosine(&va, &vc);
    }
    assert!(shared / 500.0 > disjoint / 500.0 + 0.2, "shared {shared} vs disjoint {disjoint}");
}

#[test]
fn store_keeps_one_dimension_and_model() {
    let at: DateTime<Utc> = "2025-01-01T00:00:00Z".parse().unwrap();
    let chunks: Vec<ArtifactChunk> = (0..20)
        .map(|i| ArtifactChunk {
            chunk_id: format!("ticket:K-{i}"),
            partition: Partition::Ticket,
            text: format!("ticket number {i} crashes"),
            timestamp: at,
            source_key: format!("K-{i}"),
        })
        .collect();
    let embedder = HashingEmbedder::new(EmbedderSpec::hashing(64, 3)).unwrap();
    let mut store = embed_corpus(&chunks, &embedder, at, Execution::default()).unwrap();
    assert!(store.records().all(|r| r.vector.len() == 64 && r.model_version == store.model_version()));
    assert!(store.records().all(|r| (norm(&r.vector) - 1.0).abs() <= 1e-6));

    let other = EmbedderSpec::hashing(64, 4);
    let foreign = EmbeddingRecord {
        chunk_id: "ticket:X-1".into(),
        partition: Partition::Ticket,
        vector: hashing_embed("x", 64, 4).unwrap(),
        model_version: other.model_version.clone(),
        embedded_at: at,
    };
    assert!(store.insert(foreign.clone()).is_err());
    let wrong_dim = EmbeddingRecord { vector: vec![1.0; 32], model_version: store.model_version().to_owned(), ..foreign };
    assert!(store.insert(wrong_dim).is_err());
    assert_eq!(store.len(), 20);
}
