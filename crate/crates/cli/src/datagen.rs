//! Deterministic synthetic Mulan-style datasets.
//!
//! Each dataset is drawn from a fixed generative story: every label owns
//! a feature prototype (adjacent labels get correlated prototypes so
//! they are confusable), a sample's features are the sum of its labels'
//! prototypes plus Gaussian noise, and label sets are sampled with a
//! skewed primary-label distribution plus window-correlated co-labels.
//! Post-draw adjustment pins the total label count exactly, so dataset
//! statistics (sample count, label count, mean labels per sample) are
//! stable targets rather than random outcomes.

use std::path::{Path, PathBuf};

use mlcld_core::dataio::{write_dense_arff, ArffAttribute, ArffRelation, AttrKind, MulanDataset};
use mlcld_core::matrix::Matrix;
use mlcld_core::rng::Rng;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub name: &'static str,
    pub label_names: Vec<String>,
    pub num_features: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Exact total label counts (sum over the label matrix).
    pub total_train: usize,
    pub total_test: usize,
    /// Decay of the primary-label categorical weights.
    pub primary_decay: f64,
    /// Co-label probability inside / outside the correlation window.
    pub window: usize,
    pub p_near: f64,
    pub p_far: f64,
    /// Feature noise level.
    pub noise: f64,
    pub seed: u64,
}

pub fn yeast_spec() -> SyntheticSpec {
    SyntheticSpec {
        name: "yeast",
        label_names: (1..=14).map(|j| format!("Class{j}")).collect(),
        num_features: 103,
        n_train: 1500,
        n_test: 917,
        total_train: 6345,
        total_test: 3898,
        primary_decay: 0.85,
        window: 3,
        p_near: 0.40,
        p_far: 0.12,
        noise: 5.0,
        seed: 7001,
    }
}

pub fn scene_spec() -> SyntheticSpec {
    SyntheticSpec {
        name: "scene",
        label_names: ["Beach", "Sunset", "FallFoliage", "Field", "Mountain", "Urban"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        num_features: 294,
        n_train: 1210,
        n_test: 1195,
        total_train: 1283,
        total_test: 1303,
        primary_decay: 0.9,
        window: 1,
        p_near: 0.04,
        p_far: 0.01,
        noise: 5.0,
        seed: 7002,
    }
}

fn cyclic_distance(a: usize, b: usize, c: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(c - d)
}

/// Label prototypes, one f-dim row per label. Adjacent labels share
/// structure so the classes overlap.
fn prototypes(spec: &SyntheticSpec) -> Matrix {
    let c = spec.label_names.len();
    let f = spec.num_features;
    let mut rng = Rng::new(spec.seed, 0);
    let mut protos = Matrix::zeros(c, f);
    let mut prev: Vec<f64> = Vec::new();
    for j in 0..c {
        let fresh: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
        let row: Vec<f64> = if j == 0 {
            fresh
        } else {
            fresh.iter().zip(prev.iter()).map(|(&n, &p)| 0.55 * p + 0.9 * n).collect()
        };
        for (k, &v) in row.iter().enumerate() {
            protos.set(j, k, v);
        }
        prev = row;
    }
    protos
}

/// Draw a primary label from the decaying categorical distribution.
fn draw_primary(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

fn draw_labels(
    spec: &SyntheticSpec,
    n: usize,
    total_target: usize,
    label_rng: &mut Rng,
    adjust_rng: &mut Rng,
) -> Matrix {
    let c = spec.label_names.len();
    let weights: Vec<f64> = (0..c).map(|j| spec.primary_decay.powi(j as i32)).collect();
    let mut labels = Matrix::zeros(n, c);
    let mut primary = vec![0usize; n];
    let mut total = 0usize;
    for i in 0..n {
        let p = draw_primary(&weights, label_rng);
        primary[i] = p;
        labels.set(i, p, 1.0);
        total += 1;
        for j in 0..c {
            if j == p {
                continue;
            }
            let prob = if cyclic_distance(j, p, c) <= spec.window {
                spec.p_near
            } else {
                spec.p_far
            };
            if label_rng.coin(prob) {
                labels.set(i, j, 1.0);
                total += 1;
            }
        }
    }
    // Pin the exact total: drop random non-primary labels while over,
    // add random absent labels while under.
    while total > total_target {
        let i = adjust_rng.below(n);
        let j = adjust_rng.below(c);
        if j != primary[i] && labels.get(i, j) == 1.0 {
            labels.set(i, j, 0.0);
            total -= 1;
        }
    }
    while total < total_target {
        let i = adjust_rng.below(n);
        let j = adjust_rng.below(c);
        if labels.get(i, j) == 0.0 {
            labels.set(i, j, 1.0);
            total += 1;
        }
    }
    labels
}

/// Features: sum of the sample's label prototypes plus noise, rounded
/// to four decimals so the ARFF text stays compact and round-trips
/// exactly.
fn draw_features(
    labels: &Matrix,
    protos: &Matrix,
    noise: f64,
    noise_rng: &mut Rng,
) -> Matrix {
    let n = labels.rows();
    let c = labels.cols();
    let f = protos.cols();
    let mut x = Matrix::zeros(n, f);
    for i in 0..n {
        for k in 0..f {
            let mut v = noise * noise_rng.normal();
            for j in 0..c {
                if labels.get(i, j) == 1.0 {
                    v += protos.get(j, k);
                }
            }
            x.set(i, k, (v * 10_000.0).round() / 10_000.0);
        }
    }
    x
}

/// The generated pair. Feature and label layouts match the files the
/// writer produces: features Att1..AttF followed by the label columns.
pub struct GeneratedDataset {
    pub train: MulanDataset,
    pub test: MulanDataset,
}

pub fn generate(spec: &SyntheticSpec) -> GeneratedDataset {
    let protos = prototypes(spec);
    let feature_names: Vec<String> =
        (1..=spec.num_features).map(|k| format!("Att{k}")).collect();

    let mut train_label_rng = Rng::new(spec.seed, 1);
    let mut train_adjust_rng = Rng::new(spec.seed, 2);
    let mut train_noise_rng = Rng::new(spec.seed, 3);
    let train_labels = draw_labels(
        spec,
        spec.n_train,
        spec.total_train,
        &mut train_label_rng,
        &mut train_adjust_rng,
    );
    let train_features = draw_features(&train_labels, &protos, spec.noise, &mut train_noise_rng);

    let mut test_label_rng = Rng::new(spec.seed, 4);
    let mut test_adjust_rng = Rng::new(spec.seed, 5);
    let mut test_noise_rng = Rng::new(spec.seed, 6);
    let test_labels = draw_labels(
        spec,
        spec.n_test,
        spec.total_test,
        &mut test_label_rng,
        &mut test_adjust_rng,
    );
    let test_features = draw_features(&test_labels, &protos, spec.noise, &mut test_noise_rng);

    GeneratedDataset {
        train: MulanDataset {
            features: train_features,
            labels: train_labels,
            feature_names: feature_names.clone(),
            label_names: spec.label_names.clone(),
        },
        test: MulanDataset {
            features: test_features,
            labels: test_labels,
            feature_names,
            label_names: spec.label_names.clone(),
        },
    }
}

fn to_relation(ds: &MulanDataset, relation: String) -> ArffRelation {
    let mut attributes: Vec<ArffAttribute> = ds
        .feature_names
        .iter()
        .map(|n| ArffAttribute { name: n.clone(), kind: AttrKind::Numeric })
        .collect();
    attributes.extend(
        ds.label_names
            .iter()
            .map(|n| ArffAttribute { name: n.clone(), kind: AttrKind::Nominal01 }),
    );
    let n = ds.n();
    let cols = ds.num_features() + ds.num_labels();
    let mut data = Matrix::zeros(n, cols);
    for i in 0..n {
        for k in 0..ds.num_features() {
            data.set(i, k, ds.features.get(i, k));
        }
        for j in 0..ds.num_labels() {
            data.set(i, ds.num_features() + j, ds.labels.get(i, j));
        }
    }
    ArffRelation { relation, attributes, data }
}

pub fn labels_xml_text(label_names: &[String]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    out.push_str("<labels xmlns=\"http://mulan.sourceforge.net/labels\">\n");
    for name in label_names {
        out.push_str(&format!("  <label name=\"{name}\"></label>\n"));
    }
    out.push_str("</labels>\n");
    out
}

/// File paths of one written dataset.
pub struct WrittenDataset {
    pub train_arff: PathBuf,
    pub test_arff: PathBuf,
    pub labels_xml: PathBuf,
}

pub fn write_dataset(
    out_dir: &Path,
    spec: &SyntheticSpec,
    generated: &GeneratedDataset,
) -> std::io::Result<WrittenDataset> {
    std::fs::create_dir_all(out_dir)?;
    let train_arff = out_dir.join(format!("{}_train.arff", spec.name));
    let test_arff = out_dir.join(format!("{}_test.arff", spec.name));
    let labels_xml = out_dir.join(format!("{}_labels.xml", spec.name));
    std::fs::write(
        &train_arff,
        write_dense_arff(&to_relation(&generated.train, format!("{}-train", spec.name))),
    )?;
    std::fs::write(
        &test_arff,
        write_dense_arff(&to_relation(&generated.test, format!("{}-test", spec.name))),
    )?;
    std::fs::write(&labels_xml, labels_xml_text(&spec.label_names))?;
    Ok(WrittenDataset { train_arff, test_arff, labels_xml })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yeast_statistics_are_exact() {
        let spec = yeast_spec();
        let g = generate(&spec);
        assert_eq!(g.train.n(), 1500);
        assert_eq!(g.train.num_features(), 103);
        assert_eq!(g.train.num_labels(), 14);
        assert_eq!(g.train.total_labels(), 6345.0);
        assert!((g.train.mean_labels_per_sample() - 4.23).abs() < 0.01);
        assert_eq!(g.test.n(), 917);
        assert_eq!(g.test.total_labels(), 3898.0);
        assert!((g.test.mean_labels_per_sample() - 4.25).abs() < 0.01);
    }

    #[test]
    fn scene_statistics_are_exact() {
        let spec = scene_spec();
        let g = generate(&spec);
        assert_eq!(g.train.n(), 1210);
        assert_eq!(g.train.num_features(), 294);
        assert_eq!(g.train.num_labels(), 6);
        assert_eq!(g.train.total_labels(), 1283.0);
        assert!((g.train.mean_labels_per_sample() - 1.06).abs() < 0.01);
        assert_eq!(g.test.n(), 1195);
        assert_eq!(g.test.total_labels(), 1303.0);
        assert!((g.test.mean_labels_per_sample() - 1.09).abs() < 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&yeast_spec());
        let b = generate(&yeast_spec());
        assert_eq!(a.train.features, b.train.features);
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.test.features, b.test.features);
    }

    #[test]
    fn every_sample_has_a_label() {
        for spec in [yeast_spec(), scene_spec()] {
            let g = generate(&spec);
            for ds in [&g.train, &g.test] {
                for i in 0..ds.n() {
                    let count: f64 = ds.labels.row(i).iter().sum();
                    assert!(count >= 1.0, "{} row {i} has no labels", spec.name);
                }
            }
        }
    }

    #[test]
    fn features_carry_label_signal() {
        // Matched-filter check: scoring samples against their own
        // label's prototype separates positives from negatives.
        let spec = scene_spec();
        let g = generate(&spec);
        let protos = prototypes(&spec);
        let f = spec.num_features as f64;
        let mut pos = 0.0;
        let mut pos_n = 0.0;
        let mut neg = 0.0;
        let mut neg_n = 0.0;
        for i in 0..g.train.n() {
            for j in 0..g.train.num_labels() {
                let dot: f64 = (0..spec.num_features)
                    .map(|k| g.train.features.get(i, k) * protos.get(j, k))
                    .sum::<f64>()
                    / f;
                if g.train.labels.get(i, j) == 1.0 {
                    pos += dot;
                    pos_n += 1.0;
                } else {
                    neg += dot;
                    neg_n += 1.0;
                }
            }
        }
        assert!(pos / pos_n > neg / neg_n + 0.3, "{} vs {}", pos / pos_n, neg / neg_n);
    }

    #[test]
    fn written_files_parse_back(){
        let dir = tempfile::tempdir().unwrap();
        let spec = scene_spec();
        let g = generate(&spec);
        let written = write_dataset(dir.path(), &spec, &g).unwrap();
        let loaded = mlcld_core::dataio::load_mulan_pair(
            &written.train_arff,
            &written.labels_xml,
        )
        .unwrap();
        assert_eq!(loaded.features, g.train.features);
        assert_eq!(loaded.labels, g.train.labels);
        assert_eq!(loaded.label_names, g.train.label_names);
    }
}
