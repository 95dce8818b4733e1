use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapdiag_core::{build_snapshot, normalize, search, search_batch, GalleryRecord, IndexSnapshot, Modality, QuerySpec};

/// Scores everything sequentially in f64, sorts by (-score, id), truncates.
fn reference(snapshot: &IndexSnapshot, query: &QuerySpec) -> Vec<(String, f64)> {
    let q = query.vector.as_slice();
    let mut all: Vec<(String, f64)> = snapshot
        .records()
        .iter()
        .filter(|r| query.exclude_id.as_deref() != Some(r.id.as_str()))
        .filter(|r| query.modality_filter.map_or(true, |m| m == r.modality))
        .filter(|r| query.class_filter.as_ref().map_or(true, |c| c.contains(&r.class_label)))
        .map(|r| {
            let row = snapshot.row_vector(r.row);
            let mut s = 0.0f64;
            for i in 0..row.len() {
                s += row[i] as f64 * q[i] as f64;
            }
            (r.id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(query.k);
    all
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(v) = normalize(&raw, dim) {
            return v.into_vec();
        }
    }
}

/// Random gallery; roughly one row in eight duplicates an earlier one so that
/// exact score ties occur.
fn random_gallery(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> IndexSnapshot {
    let mut vectors = Vec::with_capacity(n * dim);
    let mut records = Vec::with_capacity(n);
    for row in 0..n {
        let v = if row > 0 && rng.random_ratio(1, 8) {
            let src = rng.random_range(0..row);
            vectors[src * dim..(src + 1) * dim].to_vec()
        } else {
            random_unit(rng, dim)
        };
        vectors.extend(v);
        records.push(GalleryRecord {
            id: format!("item-{:05}", rng.random_range(0..1_000_000u32) * 1000 + row as u32 % 1000),
            row,
            class_label: format!("c{}", rng.random_range(0..7)),
            modality: if rng.random_ratio(1, 5) { Modality::Text } else { Modality::Image },
            uri: String::new(),
            caption: None,
        });
    }
    // Make ids unique while keeping their order random relative to rows.
    for (row, r) in records.iter_mut().enumerate() {
        r.id = format!("{}-{row}", r.id);
    }
    build_snapshot(records, vectors, dim).unwrap()
}

fn random_query(rng: &mut ChaCha8Rng, snapshot: &IndexSnapshot, k: usize) -> QuerySpec {
    let dim = snapshot.dim();
    let vector = if snapshot.count() > 0 && rng.random_ratio(1, 4) {
        // Query equal to a stored row: the self-match ties with its duplicates.
        let row = rng.random_range(0..snapshot.count());
        normalize(snapshot.row_vector(row), dim).unwrap()
    } else {
        normalize(&random_unit(rng, dim), dim).unwrap()
    };
    let mut q = QuerySpec::new(vector, k);
    if snapshot.count() > 0 && rng.random_ratio(1, 3) {
        q.exclude_id = Some(snapshot.record(rng.random_range(0..snapshot.count())).id.clone());
    }
    if rng.random_ratio(1, 4) {
        let classes: BTreeSet<String> = (0..rng.random_range(1..3)).map(|_| format!("c{}", rng.random_range(0..7))).collect();
        q.class_filter = Some(classes);
    }
    if rng.random_ratio(1, 4) {
        q.modality_filter = Some(Modality::Image);
    }
    q
}

fn check_against_reference(snapshot: &IndexSnapshot, query: &QuerySpec) -> Result<(), TestCaseError> {
    let got = search(snapshot, query).unwrap();
    let want = reference(snapshot, query);
    let got_ids: Vec<&str> = got.iter().map(|h| h.record_id.as_str()).collect();
    let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
    prop_assert_eq!(got_ids, want_ids);
    for (h, (_, s)) in got.iter().zip(&want) {
        prop_assert!((h.score - s).abs() <= 1e-5, "score {} vs {}", h.score, s);
    }
    for (i, h) in got.iter().enumerate() {
        prop_assert_eq!(h.rank, i + 1);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_equals_naive_reference(seed in any::<u64>(), n in 1usize..=1000, dim in prop::sample::select(vec![2usize, 8, 13, 64])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snapshot = random_gallery(&mut rng, n, dim);
        for _ in 0..4 {
            let k = rng.random_range(0..=n + 5);
            let q = random_query(&mut rng, &snapshot, k);
            check_against_reference(&snapshot, &q)?;
        }
    }

    #[test]
    fn filters_are_sound(seed in any::<u64>(), n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snapshot = random_gallery(&mut rng, n, 8);
        let excluded = snapshot.record(rng.random_range(0..n)).id.clone();
        let q = QuerySpec::new(normalize(&random_unit(&mut rng, 8), 8).unwrap(), n)
            .excluding(excluded.clone())
            .with_classes(["c3"]);
        for h in search(&snapshot, &q).unwrap() {
            prop_assert_eq!(&h.class_label, "c3");
            prop_assert_ne!(&h.record_id, &excluded);
        }
    }

    #[test]
    fn top1_is_prefix_of_larger_k(seed in any::<u64>(), n in 1usize..300, k in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snapshot = random_gallery(&mut rng, n, 8);
        let q = random_query(&mut rng, &snapshot, k);
        let mut one = q.clone();
        one.k = 1;
        let top1 = search(&snapshot, &one).unwrap();
        let topk = search(&snapshot, &q).unwrap();
        prop_assert_eq!(top1.first(), topk.first());
        prop_assert!(topk.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn repeated_search_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let snapshot = random_gallery(&mut rng, 500, 64);
    let q = random_query(&mut rng, &snapshot, 25);
    let first = search(&snapshot, &q).unwrap();
    for _ in 0..10 {
        let again = search(&snapshot, &q).unwrap();
        assert_eq!(again.len(), first.len());
        for (a, b) in again.iter().zip(&first) {
            assert_eq!(a.record_id, b.record_id);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }
}

#[test]
fn batch_matches_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let snapshot = random_gallery(&mut rng, 800, 32);
    let queries: Vec<QuerySpec> = (0..100)
        .map(|_| {
            let k = rng.random_range(0..40);
            random_query(&mut rng, &snapshot, k)
        })
        .collect();
    let batched = search_batch(&snapshot, &queries).unwrap();
    let sequential: Vec<_> = queries.iter().map(|q| search(&snapshot, q).unwrap()).collect();
    assert_eq!(batched, sequential);
}
