mod common;

use common::{embedding_at, grid_box, identification_trial, rasterized_iou};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ucfollow::perception::{match_face_to_body, verify_face, FaceEmbedding, IdentityGallery, PerceptionConfig};
use ucfollow::sim::scenario::{sample_identities, IDENTITY_DIM};
use ucfollow::{iou, BoundingBox};

#[test]
fn identification_picks_target_every_time() {
    assert_eq!(PerceptionConfig::default().embedding_noise, 0.05);
    let correct = (0..1000u64).filter(|&s| identification_trial(s).unwrap()).count();
    assert_eq!(correct, 1000);
}

#[test]
fn noise_distance_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = 0.05;
    let (mut raw_sum, mut worst) = (0.0, 0.0f64);
    let n = 100_000;
    let latent = FaceEmbedding::new(sample_identities(1, &mut rng).remove(0)).unwrap();
    for _ in 0..n {
        let noise: Vec<f64> = (0..IDENTITY_DIM).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        raw_sum += noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let noisy: Vec<f64> = latent.values().iter().zip(&noise).map(|(a, b)| a + b).collect();
        let e = FaceEmbedding::new(noisy).unwrap();
        assert!((e.values().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        worst = worst.max(e.distance(&latent));
    }
    let mean = raw_sum / n as f64;
    assert!((mean - sigma * (IDENTITY_DIM as f64).sqrt()).abs() < 0.01, "mean {mean}");
    assert!(worst < 0.9, "worst {worst}");
}

#[test]
fn threshold_boundary() {
    let mut a = vec![0.0; IDENTITY_DIM];
    a[0] = 1.0;
    let target = FaceEmbedding::new(a).unwrap();
    let at = embedding_at;
    let probe = at(0.9);
    let d = probe.distance(&target);
    let gallery = IdentityGallery::new(target.clone(), d).unwrap();
    assert!(!verify_face(&probe, &gallery));
    assert!(verify_face(&at(0.9 - 1e-9), &IdentityGallery::new(target.clone(), 0.9).unwrap()));
    assert!(!verify_face(&at(2f64.sqrt()), &IdentityGallery::new(target, 0.9).unwrap()));
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0f64..0.8, 0.0f64..0.8, 0.05f64..0.5, 0.05f64..0.5)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0)).unwrap())
}

fn grid() -> impl Strategy<Value = BoundingBox> {
    (0u32..800, 0u32..800, 10u32..500, 10u32..500).prop_map(|(x, y, w, h)| grid_box(x, y, w, h))
}

fn unit_embedding() -> impl Strategy<Value = FaceEmbedding> {
    prop::collection::vec(-1.0f64..1.0, IDENTITY_DIM)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| FaceEmbedding::new(v).unwrap())
}

#[test]
fn iou_against_raster_oracle_hand_case() {
    let a = BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
    let b = BoundingBox::new(0.25, 0.25, 0.75, 0.75).unwrap();
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    assert!((rasterized_iou(&a, &b, 1000) - 1.0 / 7.0).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iou_matches_rasterization(a in grid(), b in grid()) {
        prop_assert!((iou(&a, &b) - rasterized_iou(&a, &b, 1000)).abs() < 1e-3);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn verification_is_monotone(target in unit_embedding(), probe in unit_embedding(), shrink in 0.0f64..1.0) {
        let gallery = IdentityGallery::new(target.clone(), 0.9).unwrap();
        if verify_face(&probe, &gallery) {
            // Pull the probe toward the target; the chord can only get shorter.
            let mixed: Vec<f64> = probe.values().iter().zip(target.values()).map(|(p, t)| p * (1.0 - shrink) + t * shrink).collect();
            if let Ok(closer) = FaceEmbedding::new(mixed) {
                prop_assert!(closer.distance(&target) <= probe.distance(&target) + 1e-12);
                prop_assert!(verify_face(&closer, &gallery));
            }
        }
    }

    #[test]
    fn body_match_is_argmax(face in arb_box(), persons in prop::collection::vec(arb_box(), 1..6)) {
        let scores: Vec<f64> = persons.iter().map(|p| iou(&face, p)).collect();
        match match_face_to_body(&face, &persons).unwrap() {
            Some(i) => {
                prop_assert!(scores.iter().all(|s| *s <= scores[i]));
                prop_assert!(scores[..i].iter().all(|s| *s < scores[i]));
            }
            None => prop_assert!(scores.iter().all(|s| *s == 0.0)),
        }
    }

    #[test]
    fn noisy_embeddings_stay_unit(latent in unit_embedding(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = latent.values().iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let e = FaceEmbedding::new(noisy).unwrap();
        prop_assert_eq!(e.values().len(), IDENTITY_DIM);
        prop_assert!((e.values().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }
}
