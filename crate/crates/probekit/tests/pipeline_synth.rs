// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::path::Path;

use probekit::experiment::{agree, sweep, transfer, Experiment};
use probekit::store::{read_meta, write_meta};
use probekit::synth::{generate, write_synthetic, SyntheticSpec};
use probekit::workspace::DataSource;
use probekit_core::pipeline::{EvalReport, PipelineConfig};
use probekit_core::{Label, PoolingSpec};
use rand::seq::SliceRandom;

fn write(dir: &Path, spec: &SyntheticSpec) -> DataSource {
    write_synthetic(dir, &generate(spec).unwrap(), false).unwrap();
    DataSource::open(dir, &spec.dataset, None).unwrap()
}

fn exp(pca_k: usize) -> Experiment {
    Experiment {
        pooling: PoolingSpec::LastToken,
        pca_k,
        cfg: PipelineConfig {
            bootstrap_resamples: 100,
            ..PipelineConfig::default()
        },
    }
}

fn value(r: &EvalReport, layer: u32, probe: &str, metric: &str) -> f64 {
    r.rows
        .iter()
        .find(|row| row.layer == layer && row.probe == probe && row.metric == metric)
        .unwrap_or_else(|| panic!("no {probe}/{metric} at layer {layer}"))
        .value
}

const PROBES: [&str; 3] = ["diffmean", "logistic", "hinge"];

#[test]
fn signal_layer_beats_noise_layers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 32,
        n_per_class: 500,
        n_layers: 3,
        signal_layers: Some(vec![2]),
        seed: 4,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    let r = sweep(&src, &exp(16), &[0, 1, 2]).unwrap();
    for p in PROBES {
        let signal = value(&r, 2, p, "test_auroc");
        for l in [0, 1] {
            let noise = value(&r, l, p, "test_auroc");
            assert!(signal > noise, "{p}: layer 2 {signal} vs layer {l} {noise}");
        }
        assert!(signal > 0.85, "{p}: {signal}");
    }
    let row = r.rows.iter().find(|row| row.layer == 2).unwrap();
    assert_eq!(row.normalized_layer, 1.0);
    assert_eq!(row.setting, "synth/synthetic/last/pca16");
}

#[test]
fn shuffled_labels_give_chance_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 16,
        n_per_class: 2500,
        seed: 8,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    let mut meta = read_meta(&src.meta_path).unwrap();
    let mut labels: Vec<Label> = meta.examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut common::rng(1));
    for (e, l) in meta.examples.iter_mut().zip(labels) {
        e.label = l;
    }
    write_meta(&src.meta_path, &meta).unwrap();
    let src = DataSource::open(dir.path(), "synth", None).unwrap();
    let test = src
        .load_split(0, probekit_core::Split::Test, PoolingSpec::LastToken)
        .unwrap();
    assert_eq!(test.len(), 1000);
    let r = sweep(&src, &exp(0), &[0]).unwrap();
    for p in PROBES {
        let a = value(&r, 0, p, "test_auroc");
        assert!((0.4..=0.6).contains(&a), "{p}: {a}");
    }
}

#[test]
fn reports_are_deterministic_and_hash_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 12,
        n_per_class: 100,
        n_layers: 2,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    let a = agree(&src, &exp(4), &[0, 1]).unwrap();
    let b = agree(&src, &exp(4), &[0, 1]).unwrap();
    assert_eq!(a, b);
    let key = "sha256:synth__train__L1.rqac";
    let before = a.provenance[key].clone();

    let other = tempfile::tempdir().unwrap();
    let src2 = write(other.path(), &SyntheticSpec { seed: 1, ..spec });
    let c = agree(&src2, &exp(4), &[0, 1]).unwrap();
    assert_ne!(c.provenance[key], before);
    assert_eq!(c.provenance["sha256:synth__meta.json"].len(), 64);
    assert_eq!(a.provenance["pca_k"], "4");
}

#[test]
fn self_transfer_reproduces_in_domain_numbers_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 24,
        n_per_class: 300,
        n_layers: 2,
        nuisance_dims: 2,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    for k in [0, 8] {
        let e = exp(k);
        let s = sweep(&src, &e, &[0, 1]).unwrap();
        let t = transfer(&src, &src, &e, &[0, 1]).unwrap();
        for l in [0, 1] {
            for p in PROBES {
                let in_domain = value(&s, l, p, "test_auroc");
                assert_eq!(
                    value(&t, l, p, "transfer_auroc").to_bits(),
                    in_domain.to_bits()
                );
                assert_eq!(
                    value(&t, l, p, "indomain_auroc").to_bits(),
                    in_domain.to_bits()
                );
                assert_eq!(value(&t, l, p, "spearman_vs_indomain"), 1.0);
                assert_eq!(value(&t, l, p, "jaccard_top"), 1.0);
                assert_eq!(value(&t, l, p, "jaccard_bottom"), 1.0);
                assert!((value(&t, l, p, "cosine_cross") - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn failed_layers_are_recorded_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 8,
        n_per_class: 50,
        n_layers: 3,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    let broken = src.path(probekit_core::Split::Validation, 1);
    std::fs::write(&broken, b"XXXX").unwrap();
    let r = sweep(&src, &exp(0), &[0, 1, 2]).unwrap();
    let layers: std::collections::BTreeSet<u32> = r.rows.iter().map(|row| row.layer).collect();
    assert_eq!(layers.into_iter().collect::<Vec<_>>(), [0, 2]);
    assert!(r.provenance["skipped.L1"].contains("synth__validation__L1.rqac"));
    assert!(!r
        .provenance
        .contains_key("sha256:synth__validation__L1.rqac"));

    assert!(sweep(&src, &exp(0), &[1]).is_err());
}

#[test]
fn too_many_components_fails_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d: 64,
        n_per_class: 20,
        ..SyntheticSpec::default()
    };
    let src = write(dir.path(), &spec);
    let err = sweep(&src, &exp(64), &[0]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("synth__train__L0.rqac"), "{err}");
    assert!(sweep(&src, &exp(16), &[0]).is_ok());
}
