//! Implementation-independent checks: brute-force, closed-form and
//! finite-difference oracles.

mod common;

use approx::assert_relative_eq;
use euphem_core::backend::{LanguageModel, ModelInput};
use euphem_core::classifier::{
    batch_loss, positive_probability, Classifier, ClassifierConfig, EncodedExample, ImageryPair, Projection, Variant,
};
use euphem_core::imagery::{embed_imagery, mean_embedding, ImagerySet, VisualEncoder};
use euphem_core::metrics::{ensemble, f1, paired_t_test, EnsembleMethod};
use euphem_core::prompting::{build_prompt, PromptTemplate, PromptVariant};
use euphem_core::Error;
use image::RgbImage;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_f1(pred: &[u8], gold: &[u8]) -> f64 {
    let count = |p: u8, g: u8| pred.iter().zip(gold).filter(|(a, b)| **a == p && **b == g).count() as f64;
    let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[test]
fn f1_matches_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let gold: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(f1(&pred, &gold).unwrap(), brute_force_f1(&pred, &gold));
    }
}

/// Two-sided tail of Student's t by Simpson integration of the density.
fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| statrs::function::gamma::ln_gamma(x);
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let density = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    // integrate 0..|t| and subtract from one half
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = density(0.0) + density(t.abs());
    for i in 1..n {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * (0.5 - s * h / 3.0)
}

#[test]
fn t_test_reference_values() {
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    let t = 2.0 * 3f64.sqrt();
    assert!((r.t_statistic - t).abs() < 1e-12);
    // closed form for two degrees of freedom
    let p_closed = 1.0 - t / (t * t + 2.0).sqrt();
    assert!((r.p_value - p_closed).abs() < 1e-10);
    assert!((r.t_statistic - 3.4641).abs() < 1e-4);
    assert!((r.p_value - 0.0742).abs() < 1e-4);
    assert_eq!(r.n_pairs, 3);
    assert!(r.two_sided);
}

#[test]
fn t_test_matches_quadrature_for_other_dof() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [4usize, 5, 8, 12] {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..0.95)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..0.95)).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let oracle = t_two_sided_quadrature(r.t_statistic, (n - 1) as f64);
        assert!((r.p_value - oracle).abs() < 1e-8, "n={n}: {} vs {oracle}", r.p_value);
    }
}

proptest! {
    #[test]
    fn t_test_antisymmetry_and_location(
        a in prop::collection::vec(-10.0f64..10.0, 2..12),
        noise in prop::collection::vec(-1.0f64..1.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let ab = match paired_t_test(&a, &b) {
            Ok(r) => r,
            Err(Error::DegeneratePairedSample) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        let sa: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let sb: Vec<f64> = b.iter().map(|x| x + shift).collect();
        let shifted = paired_t_test(&sa, &sb).unwrap();
        prop_assert!((shifted.t_statistic - ab.t_statistic).abs() <= 1e-6 * ab.t_statistic.abs().max(1.0));
        prop_assert!((shifted.p_value - ab.p_value).abs() <= 1e-6);
    }

    #[test]
    fn ensemble_is_row_order_free(rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 7), 1..6), seed: u64) {
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for method in [EnsembleMethod::MeanProbability, EnsembleMethod::MajorityVote] {
            prop_assert_eq!(ensemble(&rows, 0.5, method).unwrap(), ensemble(&shuffled, 0.5, method).unwrap());
        }
    }

    #[test]
    fn unanimous_folds_decide_the_ensemble(labels in prop::collection::vec(0u8..2, 1..20), folds in 1usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..folds)
            .map(|_| labels.iter().map(|&y| if y == 1 { rng.random_range(0.5..=1.0) } else { rng.random_range(0.0..0.5) }).collect())
            .collect();
        prop_assert_eq!(ensemble(&rows, 0.5, EnsembleMethod::MeanProbability).unwrap(), labels.clone());
        prop_assert_eq!(ensemble(&rows, 0.5, EnsembleMethod::MajorityVote).unwrap(), labels);
    }
}

/// Encoder returning a fixed vector per image, looked up by the red channel.
struct TableEncoder(Vec<Vec<f32>>);

impl VisualEncoder for TableEncoder {
    fn id(&self) -> &str {
        "table"
    }
    fn dim(&self) -> usize {
        self.0[0].len()
    }
    fn encode(&self, image: &RgbImage) -> euphem_core::Result<Vec<f32>> {
        Ok(self.0[image.get_pixel(0, 0)[0] as usize].clone())
    }
}

fn indexed_set(order: &[usize]) -> ImagerySet {
    ImagerySet {
        source_text: "t".into(),
        seed: 0,
        backend_id: "b".into(),
        images: order
            .iter()
            .map(|&i| RgbImage::from_pixel(1, 1, image::Rgb([i as u8, 0, 0])))
            .collect(),
    }
}

#[test]
fn imagery_mean_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let table: Vec<Vec<f32>> = (0..9)
            .map(|_| (0..16).map(|_| rng.random_range(-5.0f32..5.0) * 10f32.powi(rng.random_range(-3..3))).collect())
            .collect();
        let enc = TableEncoder(table.clone());
        let order: Vec<usize> = (0..9).collect();
        let base = embed_imagery(&indexed_set(&order), &enc).unwrap();

        let mut perm = order.clone();
        perm.shuffle(&mut rng);
        assert_eq!(embed_imagery(&indexed_set(&perm), &enc).unwrap().vector, base.vector);

        let doubled: Vec<usize> = order.iter().chain(&order).copied().collect();
        let dup = embed_imagery(&indexed_set(&doubled), &enc).unwrap();
        for (a, b) in dup.vector.iter().zip(&base.vector) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        // summation oracle: naive left-to-right sum over the table
        for j in 0..16 {
            let mut s = 0.0f64;
            for row in &table {
                s += f64::from(row[j]);
            }
            let oracle = s / 9.0;
            assert_relative_eq!(base.vector[j], oracle, max_relative = 1e-12, epsilon = 1e-300);
        }
        assert_eq!(base.k_used, 9);
    }
    let single = TableEncoder(vec![vec![0.25f32, -3.5, 1e-7]]);
    let one = embed_imagery(&indexed_set(&[0]), &single).unwrap();
    assert_eq!(one.vector, vec![0.25, -3.5, f64::from(1e-7f32)]);
    let same = vec![vec![1.5f32, 2.5]; 9];
    assert_eq!(mean_embedding(&same).unwrap(), vec![1.5, 2.5]);
}

/// Logits are a fixed function of the input vectors.
struct Double;

impl LanguageModel for Double {
    fn id(&self) -> &str {
        "double"
    }
    fn hidden_size(&self) -> usize {
        4
    }
    fn max_positions(&self) -> usize {
        64
    }
    fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| w.len() as u32).collect()
    }
    fn embed(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        ids.iter().map(|&i| vec![0.1 * f64::from(i), -0.05, 0.0, 0.01]).collect()
    }
    fn logits(&self, input: &ModelInput) -> euphem_core::Result<[f64; 2]> {
        let s: f64 = input
            .vectors
            .iter()
            .zip(&input.position_ids)
            .map(|(v, &p)| v.iter().sum::<f64>() * (1.0 + 0.1 * p as f64))
            .sum();
        Ok([0.3, s])
    }
}

#[test]
fn desc_imag_with_zero_projection_matches_double() {
    let config = ClassifierConfig {
        variant: Variant::DescImag,
        lm_backend_id: "double".into(),
        hidden_size: 4,
        imagery_dim: 3,
        max_tokens: 32,
        threshold: 0.5,
        seed: 0,
        template: PromptTemplate::default(),
    };
    let c = Classifier::new(config, Double, Some(Projection::zeros(3, 4))).unwrap();
    let lex = common::toy_lexicon();
    let ex = &common::toy_examples(&lex, 1, 0)[0];
    let prompt = build_prompt(PromptVariant::Described, lex.get(&ex.pet_id).unwrap(), ex).unwrap();
    let v = [1.0, 2.0, 3.0];
    let pred = c
        .score(&prompt, Some(ImageryPair { term: &v, description: &v }))
        .unwrap();

    let ids = Double.tokenize(&prompt.text);
    let mut vectors = vec![vec![0.0; 4], vec![0.0; 4]];
    vectors.extend(Double.embed(&ids));
    let n = vectors.len();
    let expected = positive_probability(
        Double
            .logits(&ModelInput {
                vectors,
                attention_mask: vec![true; n],
                position_ids: (0..n).collect(),
            })
            .unwrap(),
    );
    assert_eq!(pred.p_hat, expected);
}

#[test]
fn projection_gradient_matches_finite_differences() {
    let config = ClassifierConfig {
        variant: Variant::DescImag,
        lm_backend_id: "tiny-test".into(),
        hidden_size: 16,
        imagery_dim: 8,
        max_tokens: 32,
        threshold: 0.5,
        seed: 11,
        template: PromptTemplate::default(),
    };
    let mut c = Classifier::init_tiny(config, common::tiny_lm(16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<(EncodedExample, u8)> = (0..6)
        .map(|i| {
            let vec8 = |rng: &mut ChaCha8Rng| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            (
                EncodedExample {
                    token_ids: (0..5).map(|_| rng.random_range(0..64)).collect(),
                    imagery: Some([vec8(&mut rng), vec8(&mut rng)]),
                },
                (i % 2) as u8,
            )
        })
        .collect();
    let refs: Vec<(&EncodedExample, u8)> = batch.iter().map(|(e, y)| (e, *y)).collect();
    let (_, grad) = c.batch_grad(&refs).unwrap();

    let objective = |c: &Classifier<_>| {
        let pairs: Vec<(f64, u8)> = batch
            .iter()
            .map(|(e, y)| (c.probability_encoded(e).unwrap(), *y))
            .collect();
        batch_loss(&pairs)
    };
    let h = 1e-5;
    let mut numeric = Vec::new();
    for i in 0..8 * 16 {
        let w = c.projection.as_ref().unwrap().weight[i];
        c.projection.as_mut().unwrap().weight[i] = w + h;
        let up = objective(&c);
        c.projection.as_mut().unwrap().weight[i] = w - h;
        let down = objective(&c);
        c.projection.as_mut().unwrap().weight[i] = w;
        numeric.push((up - down) / (2.0 * h));
    }
    let analytic = &grad.projection_weight;
    let diff_norm = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(scale > 1e-6, "gradient vanished");
    assert!(diff_norm / scale < 1e-4, "relative error {}", diff_norm / scale);
    for (a, n) in analytic.iter().zip(&numeric) {
        if a.abs().max(n.abs()) > 1e-6 {
            assert!((a - n).abs() / a.abs().max(n.abs()) < 1e-4, "{a} vs {n}");
        }
    }
}
