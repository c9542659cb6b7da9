//! Example-free scene profiles, image scoring, ranking, fusion and AP/MAP.

mod eval;
mod profile;
mod rank;
mod score;

use thiserror::Error;

pub use eval::{EvalReport, SceneAp};
pub use profile::{
    build_scene_profile, Block, BlockColor, Illustration, PriorModel, ProfileContext, ProfileKind, ProfilePayload,
    ProfileSource, SceneProfile,
};
pub use rank::{
    average_precision, fuse_rankings, mean_average_precision, rank_images, FusionMethod, RankedEntry, RankedList,
};
pub use score::{dap_score, fv_distance_score, DapConfig, DapVariant};

use crate::grammar::GrammarError;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty profile source")]
    EmptySource,
    #[error("profile kind does not match the scoring context")]
    KindMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("score for image {image_id} is not finite ({score})")]
    NonFiniteScore { image_id: String, score: f64 },
    #[error("the two score sets cover different images")]
    MismatchedImageSets,
    #[error("relevance set is empty")]
    EmptyRelevance,
    #[error("relevant image {0} is missing from the ranking")]
    RelevantNotRanked(String),
    #[error("invalid block geometry: {0:?} must lie inside the unit canvas with positive size")]
    InvalidBlock(Block),
    #[error("smoothing pseudo-count must be positive (got {0})")]
    InvalidSmoothing(f64),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, HashSet};

    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::color::Color;
    use crate::encoder::{encode_fv, FisherVector, FvOptions, GmmModel};
    use crate::grammar::{HistogramLayout, StatementHistogram};
    use crate::things::{PropertyMask, SyntaxMatrix, ThingWindow};

    fn hist(layout: HistogramLayout, counts: Vec<f64>) -> StatementHistogram {
        StatementHistogram { layout, counts }
    }

    fn hist_profile(h: StatementHistogram) -> SceneProfile {
        SceneProfile {
            scene_id: "s".into(),
            payload: ProfilePayload::StatementHistogram {
                bins: h.layout.bins,
                payload: h.normalized(),
            },
        }
    }

    fn fv_profile(values: Vec<f64>) -> SceneProfile {
        SceneProfile {
            scene_id: "f".into(),
            payload: ProfilePayload::FisherVector {
                components: 1,
                payload: FisherVector {
                    values,
                    options: FvOptions::RAW,
                },
            },
        }
    }

    #[test]
    fn repeated_statement_profile() {
        let texts = vec!["Green small squared thing at top middle".to_string(); 4];
        let p = build_scene_profile(
            "g",
            ProfileSource::Statements(&texts),
            ProfileContext::Statements {
                bins: 3,
                mask: PropertyMask::FULL,
            },
        )
        .unwrap();
        let h = p.histogram().unwrap();
        let nonzero: Vec<_> = h.counts.iter().filter(|c| **c != 0.0).collect();
        assert_eq!(nonzero, vec![&1.0]);
        assert!(matches!(
            build_scene_profile(
                "g",
                ProfileSource::Statements(&[]),
                ProfileContext::Statements {
                    bins: 3,
                    mask: PropertyMask::FULL
                }
            ),
            Err(RetrievalError::EmptySource)
        ));
    }

    fn small_model() -> GmmModel {
        GmmModel::new(
            5,
            PropertyMask::FULL,
            vec![0.5, 0.5],
            vec![0.3, 0.3, 0.1, 0.3, 0.3, 0.7, 0.7, 0.3, 0.7, 0.6],
            vec![0.05; 10],
        )
        .unwrap()
    }

    #[test]
    fn block_profile_is_the_merged_encoding() {
        let ill = vec![
            vec![
                Block { x: 0.0, y: 0.0, w: 0.2, h: 0.5, color: BlockColor::Named(Color::Grey) },
                Block { x: 0.5, y: 0.5, w: 0.5, h: 0.1, color: BlockColor::Named(Color::Brown) },
                Block { x: 0.1, y: 0.7, w: 0.3, h: 0.3, color: BlockColor::Named(Color::Green) },
            ],
            vec![
                Block { x: 0.3, y: 0.1, w: 0.4, h: 0.4, color: BlockColor::Named(Color::Blue) },
                Block { x: 0.0, y: 0.9, w: 1.0, h: 0.1, color: BlockColor::Named(Color::Black) },
                Block { x: 0.6, y: 0.0, w: 0.1, h: 0.9, color: BlockColor::Named(Color::White) },
            ],
        ];
        let model = small_model();
        let p = build_scene_profile(
            "b",
            ProfileSource::Blocks(&ill),
            ProfileContext::Fisher {
                model: &model,
                options: FvOptions::default(),
            },
        )
        .unwrap();
        let rows: Vec<ThingWindow> = ill
            .iter()
            .flatten()
            .map(|b| {
                let BlockColor::Named(c) = b.color else { unreachable!() };
                ThingWindow::from_unit_block(b.x, b.y, b.w, b.h, c).unwrap()
            })
            .collect();
        assert_eq!(rows.len(), 6);
        let direct = encode_fv(&SyntaxMatrix::new("m", rows), &model, FvOptions::default());
        assert_eq!(p.fisher_vector().unwrap(), &direct);
    }

    #[test]
    fn invalid_blocks_are_rejected() {
        let model = small_model();
        let bad = vec![vec![Block { x: 0.8, y: 0.0, w: 0.3, h: 0.2, color: BlockColor::Any }]];
        let r = build_scene_profile(
            "b",
            ProfileSource::Blocks(&bad),
            ProfileContext::Fisher { model: &model, options: FvOptions::default() },
        );
        assert!(matches!(r, Err(RetrievalError::InvalidBlock(_))));
        let empty: Vec<Illustration> = vec![vec![]];
        let r = build_scene_profile(
            "b",
            ProfileSource::Blocks(&empty),
            ProfileContext::Fisher { model: &model, options: FvOptions::default() },
        );
        assert!(matches!(r, Err(RetrievalError::EmptySource)));
    }

    #[test]
    fn uniform_image_and_prior_score_zero() {
        let layout = HistogramLayout::new(3);
        let prior = PriorModel::from_counts(hist(layout, vec![5.0; 891]), 1.0).unwrap();
        let image = hist(layout, vec![2.0; 891]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let q: Vec<f64> = (0..891).map(|_| rng.random::<f64>()).collect();
            let s = dap_score(&image, &hist_profile(hist(layout, q)), &prior, &DapConfig::default()).unwrap();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn dap_is_monotone_in_target_mass() {
        let layout = HistogramLayout::new(3);
        let prior = PriorModel::from_counts(hist(layout, vec![1.0; 891]), 1.0).unwrap();
        let mut q = vec![0.0; 891];
        q[17] = 1.0;
        let profile = hist_profile(hist(layout, q));
        let mut a = vec![0.0; 891];
        a[17] = 5.0;
        let mut b = vec![0.0; 891];
        b[17] = 1.0;
        b[3] = 4.0;
        let sa = dap_score(&hist(layout, a), &profile, &prior, &DapConfig::default()).unwrap();
        let sb = dap_score(&hist(layout, b), &profile, &prior, &DapConfig::default()).unwrap();
        assert!(sa > sb);
    }

    #[test]
    fn dap_matches_direct_summation_on_a_toy_case() {
        // 4-bin layout: ratio x color would be 33, so use a hand-made layout
        // through the ratio-only mask at B=4
        let mask = PropertyMask::new([crate::things::Property::Ratio]).unwrap();
        let layout = HistogramLayout::with_mask(4, mask);
        assert_eq!(layout.len(), 4);
        let prior_counts = vec![10.0, 3.0, 0.0, 7.0];
        let prior = PriorModel::from_counts(hist(layout, prior_counts.clone()), 1.0).unwrap();
        let image_counts = vec![1.0, 0.0, 4.0, 2.0];
        let image = hist(layout, image_counts.clone());
        let scenes = [vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 1.0], vec![0.25, 0.25, 0.25, 0.25]];
        for q in scenes {
            let qs: f64 = q.iter().sum();
            let mut oracle = 0.0;
            for m in 0..4 {
                let qn = q[m] / qs;
                if qn == 0.0 {
                    continue;
                }
                let px = (image_counts[m] + 1.0) / (7.0 + 4.0);
                let pp = (prior_counts[m] + 1.0) / (20.0 + 4.0);
                oracle += qn * (px.ln() - pp.ln());
            }
            let s = dap_score(&image, &hist_profile(hist(layout, q)), &prior, &DapConfig::default()).unwrap();
            assert!((s - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_variant_counts_presence() {
        let mask = PropertyMask::new([crate::things::Property::Ratio]).unwrap();
        let layout = HistogramLayout::with_mask(3, mask);
        let prior = PriorModel::from_counts(hist(layout, vec![1.0, 1.0, 1.0]), 1.0).unwrap();
        let image = hist(layout, vec![3.0, 0.0, 1.0]);
        let profile = hist_profile(hist(layout, vec![9.0, 0.0, 1.0]));
        let cfg = DapConfig { alpha: 1.0, variant: DapVariant::Binary };
        let s = dap_score(&image, &profile, &prior, &cfg).unwrap();
        let oracle = (4.0f64 / 7.0).ln() - (1.0f64 / 3.0).ln() + (2.0f64 / 7.0).ln() - (1.0f64 / 3.0).ln();
        assert!((s - oracle).abs() < 1e-12);
    }

    #[test]
    fn dap_ranking_ignores_prior_offsets() {
        let layout = HistogramLayout::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = PriorModel::from_counts(hist(layout, (0..891).map(|_| rng.random_range(0.0..5.0)).collect()), 1.0).unwrap();
        let mut shifted = prior.clone();
        // adding c to every log prior = multiplying every prior by e^c
        shifted.probs.iter_mut().for_each(|p| *p *= 2.5f64.exp());
        let profile = hist_profile(hist(layout, (0..891).map(|_| rng.random::<f64>()).collect()));
        let images: Vec<StatementHistogram> =
            (0..30).map(|_| hist(layout, (0..891).map(|_| rng.random_range(0.0..3.0f64).floor()).collect())).collect();
        let rank = |p: &PriorModel| {
            rank_images(
                images
                    .iter()
                    .enumerate()
                    .map(|(i, h)| (format!("{i:02}"), dap_score(h, &profile, p, &DapConfig::default()).unwrap())),
            )
            .unwrap()
            .ids()
            .map(str::to_string)
            .collect::<Vec<_>>()
        };
        assert_eq!(rank(&prior), rank(&shifted));
    }

    #[test]
    fn dimension_guard() {
        let p3 = hist_profile(hist(HistogramLayout::new(3), vec![1.0; 891]));
        let prior = PriorModel::from_counts(hist(HistogramLayout::new(3), vec![0.0; 891]), 1.0).unwrap();
        let image5 = StatementHistogram::zeros(HistogramLayout::new(5));
        assert!(matches!(
            dap_score(&image5, &p3, &prior, &DapConfig::default()),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        let fv = FisherVector { values: vec![0.0; 3], options: FvOptions::RAW };
        assert!(matches!(dap_score(&image5, &fv_profile(vec![0.0; 3]), &prior, &DapConfig::default()), Err(RetrievalError::KindMismatch)));
        assert!(matches!(fv_distance_score(&fv, &fv_profile(vec![0.0; 4])), Err(RetrievalError::DimensionMismatch { .. })));
    }

    #[test]
    fn fv_distance_cases() {
        let v = vec![0.3, -0.2, 0.9];
        let fv = FisherVector { values: v.clone(), options: FvOptions::RAW };
        assert_eq!(fv_distance_score(&fv, &fv_profile(v.clone())).unwrap(), 0.0);
        let near = FisherVector { values: vec![0.31, -0.21, 0.91], options: FvOptions::RAW };
        let far = FisherVector { values: vec![0.4, -0.3, 1.0], options: FvOptions::RAW };
        assert!(fv_distance_score(&near, &fv_profile(v.clone())).unwrap() > fv_distance_score(&far, &fv_profile(v)).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut sq = 0.0;
            for i in 0..10 {
                sq += (a[i] - b[i]) * (a[i] - b[i]);
            }
            let fa = FisherVector { values: a, options: FvOptions::RAW };
            assert!((fv_distance_score(&fa, &fv_profile(b)).unwrap() + sq.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn fv_ranking_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prof: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let imgs: Vec<Vec<f64>> = (0..20).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
        let rank = |scale: f64| {
            let p = fv_profile(prof.iter().map(|v| v * scale).collect());
            rank_images(imgs.iter().enumerate().map(|(i, v)| {
                let fv = FisherVector { values: v.iter().map(|x| x * scale).collect(), options: FvOptions::RAW };
                (format!("{i:02}"), fv_distance_score(&fv, &p).unwrap())
            }))
            .unwrap()
            .ids()
            .map(str::to_string)
            .collect::<Vec<_>>()
        };
        assert_eq!(rank(1.0), rank(3.5));
    }

    #[test]
    fn ranking_examples() {
        let r = rank_images([("a", 1.0), ("b", 2.0)]).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["b", "a"]);
        let r = rank_images([("b", 1.0), ("a", 1.0)]).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["a", "b"]);
        assert!(matches!(rank_images([("x", f64::NAN)]), Err(RetrievalError::NonFiniteScore { image_id, .. }) if image_id == "x"));
    }

    #[test]
    fn ranking_agrees_with_reference_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<(String, f64)> = (0..1000)
            .map(|i| (format!("img{i:04}"), (rng.random_range(0..200) as f64) / 7.0))
            .collect();
        let r = rank_images(scores.clone()).unwrap();
        // reference: insertion by explicit pairwise comparison
        let mut reference: Vec<(String, f64)> = Vec::new();
        for (id, s) in scores {
            let pos = reference
                .iter()
                .position(|(rid, rs)| s > *rs || (s == *rs && id < *rid))
                .unwrap_or(reference.len());
            reference.insert(pos, (id, s));
        }
        let got: Vec<(String, f64)> = r.entries.into_iter().map(|e| (e.image_id, e.score)).collect();
        assert_eq!(got, reference);
    }

    fn map_of(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn fusion_cases() {
        let a = map_of(&[("a", 0.1), ("b", 0.5), ("c", 0.3), ("d", 0.9)]);
        let same = fuse_rankings(&a, &a, FusionMethod::ScoreAverage).unwrap();
        assert_eq!(same.ids().collect::<Vec<_>>(), rank_images(a.clone()).unwrap().ids().collect::<Vec<_>>());

        let constant = map_of(&[("a", 2.0), ("b", 2.0), ("c", 2.0), ("d", 2.0)]);
        let fused = fuse_rankings(&a, &constant, FusionMethod::ScoreAverage).unwrap();
        assert_eq!(fused.ids().collect::<Vec<_>>(), ["d", "b", "c", "a"]);

        // toy oracle: a normalized = (0, .5, .25, 1); b normalized by hand
        let b = map_of(&[("a", 10.0), ("b", 0.0), ("c", 5.0), ("d", 2.0)]);
        let fused = fuse_rankings(&a, &b, FusionMethod::ScoreAverage).unwrap();
        let expected = [("d", (1.0 + 0.2) / 2.0), ("a", (0.0 + 1.0) / 2.0), ("c", (0.25 + 0.5) / 2.0), ("b", (0.5 + 0.0) / 2.0)];
        for (e, (id, s)) in fused.entries.iter().zip(expected) {
            assert_eq!(e.image_id, id);
            assert!((e.score - s).abs() < 1e-12);
        }

        let other = map_of(&[("a", 1.0), ("z", 2.0), ("c", 0.0), ("d", 0.0)]);
        assert!(matches!(fuse_rankings(&a, &other, FusionMethod::ScoreAverage), Err(RetrievalError::MismatchedImageSets)));

        let rrf = fuse_rankings(&a, &a, FusionMethod::ReciprocalRank { k: 60.0 }).unwrap();
        assert_eq!(rrf.ids().collect::<Vec<_>>(), ["d", "b", "c", "a"]);
    }

    fn ranked(ids: &[&str]) -> RankedList {
        rank_images(ids.iter().enumerate().map(|(i, id)| (id.to_string(), -(i as f64)))).unwrap()
    }

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ranked(&["a", "b", "c", "d"]), &set(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(average_precision(&ranked(&["a", "b", "c", "d"]), &set(&["b"])).unwrap(), 0.5);
        assert!(matches!(average_precision(&ranked(&["a"]), &set(&[])), Err(RetrievalError::EmptyRelevance)));
        assert!(matches!(average_precision(&ranked(&["a"]), &set(&["q"])), Err(RetrievalError::RelevantNotRanked(_))));
    }

    #[test]
    fn random_ranking_ap_is_near_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ids: Vec<String> = (0..40).map(|i| format!("{i:02}")).collect();
        let relevant: HashSet<String> = ids[..10].iter().cloned().collect();
        let mut total = 0.0;
        for _ in 0..1000 {
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            let r = rank_images(order.iter().enumerate().map(|(i, id)| (id.clone(), -(i as f64)))).unwrap();
            let ap = average_precision(&r, &relevant).unwrap();
            assert!((0.0..=1.0).contains(&ap));
            total += ap;
        }
        // closed-form expectation under a uniformly random permutation:
        // (R-1)/(N-1) + (1 - (R-1)/(N-1)) * H_N / N, which tends to R/N
        let (r, n) = (10.0, 40.0);
        let harmonic: f64 = (1..=40).map(|i| 1.0 / i as f64).sum();
        let expected = (r - 1.0) / (n - 1.0) + (1.0 - (r - 1.0) / (n - 1.0)) * harmonic / n;
        assert!((total / 1000.0 - expected).abs() < 0.01, "{} vs {expected}", total / 1000.0);

        let ids: Vec<String> = (0..200).map(|i| format!("{i:03}")).collect();
        let relevant: HashSet<String> = ids[..20].iter().cloned().collect();
        let mut total = 0.0;
        for _ in 0..1000 {
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            let r = rank_images(order.iter().enumerate().map(|(i, id)| (id.clone(), -(i as f64)))).unwrap();
            total += average_precision(&r, &relevant).unwrap();
        }
        assert!((total / 1000.0 - 0.1).abs() < 0.05, "{}", total / 1000.0);
    }

    #[test]
    fn eval_report_csv() {
        let mut rankings = BTreeMap::new();
        rankings.insert("x".to_string(), ranked(&["1", "2", "3"]));
        rankings.insert("y".to_string(), ranked(&["3", "1", "2"]));
        let labels: BTreeMap<String, String> =
            [("1", "x"), ("2", "y"), ("3", "y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let report = EvalReport::evaluate(&rankings, &labels).unwrap();
        // x: "1" first -> 1.0; y: "3" at 1, "2" at 3 -> (1 + 2/3)/2
        assert_eq!(report.scenes[0].ap, 1.0);
        assert!((report.scenes[1].ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("scene_id,AP\n"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("MAP,"));
    }
}
