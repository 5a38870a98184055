mod common;

use aquanet::gradcheck::{grad_check_with, DifferentiableBlock, GradCheckOptions};
use aquanet::graph::{Graph, Var};
use aquanet::modulation::modulate;
use aquanet::network::{cross_path, AquaNet, AquaNetConfig, Paths};
use aquanet::params::ParamStore;
use aquanet::taxonomy::ClassTaxonomy;
use aquanet::tensor::Tensor;
use aquanet::{Error, Result};
use common::*;

fn toy(tax: &ClassTaxonomy, toggles: (bool, bool, bool)) -> AquaNet {
    AquaNet::new(AquaNetConfig::toy().with_toggles(toggles.0, toggles.1, toggles.2), tax.clone()).unwrap()
}

#[test]
fn atlantis_output_shapes() {
    let net = toy(&ClassTaxonomy::atlantis(), (true, true, true));
    let x = random_tensor(&mut rng(0), &[3, 64, 64], 1.0);
    let (p, aux) = net.forward(&x).unwrap();
    assert_eq!(p.shape(), &[56, 64, 64]);
    assert_eq!(aux.shape(), &[56, 8, 8]);
}

#[test]
fn minimal_split_network() {
    let tax = taxonomy(&[true, false]);
    let net = toy(&tax, (true, true, true));
    let Paths::Dual { aquatic, nonaquatic, .. } = net.paths() else { panic!("expected two paths") };
    assert_eq!((aquatic.head.num_out, nonaquatic.head.num_out), (1, 1));
    let (p, _) = net.forward(&random_tensor(&mut rng(1), &[3, 32, 64], 1.0)).unwrap();
    assert_eq!(p.shape(), &[2, 32, 64]);
}

#[test]
fn rejects_indivisible_input() {
    let net = toy(&taxonomy(&[true, false]), (true, false, false));
    let err = net.forward(&Tensor::zeros(&[3, 65, 65])).unwrap_err();
    assert!(matches!(err, Error::BadInputShape(_)), "{err:?}");
}

#[test]
fn cross_path_without_two_paths_is_rejected() {
    let err = AquaNet::new(AquaNetConfig::toy().with_toggles(false, false, true), taxonomy(&[true, false])).unwrap_err();
    assert!(matches!(err, Error::ConfigInvalid(_)));
}

#[test]
fn forward_is_deterministic() {
    let tax = taxonomy(&[true, false, true]);
    let mut cfg = AquaNetConfig::toy();
    cfg.zero_init_classifier = false;
    let a = AquaNet::new(cfg.clone(), tax.clone()).unwrap();
    let b = AquaNet::new(cfg, tax).unwrap();
    let x = random_tensor(&mut rng(2), &[3, 64, 32], 1.0);
    let first = a.forward(&x).unwrap();
    assert_eq!(first, a.forward(&x).unwrap());
    assert_eq!(first, b.forward(&x).unwrap());
}

#[test]
fn class_scores_normalise() {
    let mut cfg = AquaNetConfig::toy();
    cfg.zero_init_classifier = false;
    let net = AquaNet::new(cfg, taxonomy(&[false, true, false, true, false])).unwrap();
    let (p, _) = net.forward(&random_tensor(&mut rng(3), &[3, 32, 32], 1.0)).unwrap();
    let s = p.softmax_channels();
    let (k, h, w) = s.chw();
    for y in 0..h {
        for x in 0..w {
            let total: f64 = (0..k).map(|c| s.at(c, y, x)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

/// Tags every path output channel with its class id through the classifier
/// bias and checks that the reassembled map lands each tag in its channel.
#[test]
fn reassembly_restores_class_order() {
    let aquatic = [false, true, false, false, true];
    let tax = taxonomy(&aquatic);
    for toggles in [(true, false, false), (true, true, true)] {
        let mut net = toy(&tax, toggles);
        let split = net.split().clone();
        assert_eq!(split.aquatic, vec![1, 4]);
        assert_eq!(split.nonaquatic, vec![0, 2, 3]);
        for (path, ids) in [("aquatic", &split.aquatic), ("nonaquatic", &split.nonaquatic)] {
            let bias = net.params.by_name_mut(&format!("{path}.head.classifier.bias")).unwrap();
            for (j, &id) in ids.iter().enumerate() {
                bias.data_mut()[j] = 100.0 + id as f64;
            }
        }
        let (p, _) = net.forward(&random_tensor(&mut rng(4), &[3, 32, 32], 1.0)).unwrap();
        for c in 0..5 {
            assert!(p.plane(c).iter().all(|&v| v == 100.0 + c as f64), "channel {c} under {toggles:?}");
        }
    }
}

#[test]
fn toggles_add_exactly_their_parameters() {
    let tax = ClassTaxonomy::atlantis();
    let count = |t| toy(&tax, t).num_params();
    let (base, tp, lm, cm, full) = (
        count((false, false, false)),
        count((true, false, false)),
        count((true, true, false)),
        count((true, false, true)),
        count((true, true, true)),
    );
    assert!(tp > base);
    assert!(lm > tp && cm > tp);
    assert_eq!(full - tp, (lm - tp) + (cm - tp));
}

#[test]
fn fresh_cross_path_is_identity() {
    let net = toy(&taxonomy(&[true, false, false]), (true, false, true));
    let Paths::Dual { cross: Some((m1, m2)), .. } = net.paths() else { panic!("expected cross-path modulation") };
    let p1 = random_tensor(&mut rng(5), &[1, 8, 8], 3.0);
    let p2 = random_tensor(&mut rng(6), &[2, 8, 8], 3.0);
    let (q1, q2) = cross_path(m1, m2, &net.params, &p1, &p2).unwrap();
    assert_eq!((q1, q2), (p1, p2));
}

#[test]
fn cross_path_conditions_on_the_originals() {
    let mut net = toy(&taxonomy(&[true, true, false, false]), (true, false, true));
    let names: Vec<String> = net.params.iter().map(|(_, n, _)| n.to_string()).filter(|n| n.starts_with("cross.")).collect();
    let mut r = rng(7);
    for n in names {
        let t = net.params.by_name_mut(&n).unwrap();
        let noise = random_tensor(&mut r, t.shape(), 0.5);
        *t = noise;
    }
    let Paths::Dual { cross: Some((m1, m2)), .. } = net.paths() else { panic!() };
    let p1 = random_tensor(&mut r, &[2, 16, 16], 2.0);
    let p2 = random_tensor(&mut r, &[2, 16, 16], 2.0);
    let (q1, q2) = cross_path(m1, m2, &net.params, &p1, &p2).unwrap();
    assert_eq!(q1, modulate(m1, &net.params, &p1, &p2).unwrap());
    assert_eq!(q2, modulate(m2, &net.params, &p2, &p1).unwrap());
    // Independent weights: swapping the arguments changes the result.
    let (s1, _) = cross_path(m1, m2, &net.params, &p2, &p1).unwrap();
    assert_ne!(q1, s1);
}

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = AquaNetConfig::toy();
    cfg.zero_init_classifier = false;
    cfg.seed = 11;
    let net = AquaNet::new(cfg, taxonomy(&[true, false, false, true])).unwrap();
    let path = dir.path().join("net.aqn");
    net.save(&path).unwrap();
    let back = AquaNet::load(&path).unwrap();
    assert_eq!(back.config, net.config);
    assert_eq!(back.taxonomy, net.taxonomy);
    let x = random_tensor(&mut rng(8), &[3, 32, 32], 1.0);
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    assert_eq!(back.to_checkpoint().to_bytes(), net.to_checkpoint().to_bytes());
}

struct WholeNet(AquaNet);

impl DifferentiableBlock for WholeNet {
    fn params(&self) -> &ParamStore {
        &self.0.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.0.params
    }

    fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>> {
        let v = self.0.forward_graph(g, inputs[0])?;
        // Fixed weights so the scalar objective is not a plain sum.
        let (k, h, w) = g.value(v.logits).chw();
        let weights = g.input(Tensor::from_fn_chw(k, h, w, |c, y, x| ((c * 131 + y * 17 + x) as f64 * 0.37).sin()));
        let weighted = g.mul(v.logits, weights)?;
        Ok(vec![weighted, v.aux])
    }
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    let mut cfg = AquaNetConfig::toy();
    cfg.zero_init_classifier = false;
    let mut net = AquaNet::new(cfg, taxonomy(&[true, false, true])).unwrap();
    // Non-zero modulation heads so their inputs receive gradient.
    let mut r = rng(9);
    let heads: Vec<String> = net
        .params
        .iter()
        .map(|(_, n, _)| n.to_string())
        .filter(|n| n.contains("alpha1") || n.contains("beta1"))
        .collect();
    for n in heads {
        let t = net.params.by_name_mut(&n).unwrap();
        *t = random_tensor(&mut r, t.shape(), 0.1);
    }
    let mut block = WholeNet(net);
    let opts = GradCheckOptions {
        epsilon: 1e-6,
        max_entries: Some(150),
        seed: 3,
        ..Default::default()
    };
    let report = grad_check_with(&mut block, &[vec![3, 32, 32]], &opts).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
