mod common;

use sketchssl::checkpoint::{load, save};
use sketchssl_core::discriminator::Discriminator;
use sketchssl_core::generator::Generator;
use sketchssl_core::optim::Adam;
use sketchssl_core::params::{Grads, ParamId};
use sketchssl_core::retrieval::RetrievalModel;
use sketchssl_core::sketch::CorpusSizes;
use sketchssl_core::trainer::{pretrain_generator, tiny_setup, NullSink};

fn bits(store: &sketchssl_core::params::ParamStore) -> Vec<u64> {
    store
        .params()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|x| x.to_bits()))
        .collect()
}

#[test]
fn generator_with_optimizer_round_trips_bit_exactly() {
    let (data, cfg) = tiny_setup(
        2,
        CorpusSizes {
            labeled: 8,
            unlabeled: 0,
            test: 2,
        },
    )
    .unwrap();
    let mut g = Generator::new(cfg.effective_generator(), 1).unwrap();
    let mut adam = Adam::new(cfg.adam(cfg.lr_generator), &g.store);
    pretrain_generator(&mut g, &mut adam, &data, &cfg, &mut NullSink).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen/step-2/model.ckpt");
    save(&path, "generator", &g, Some(&adam)).unwrap();
    let (g2, adam2) = load::<Generator>(&path, "generator").unwrap();
    assert_eq!(g2.config, g.config);
    assert_eq!(bits(&g2.store), bits(&g.store));
    assert_eq!(adam2.unwrap(), adam);
}

#[test]
fn retrieval_and_discriminator_round_trip() {
    let (_, cfg) = tiny_setup(
        0,
        CorpusSizes {
            labeled: 2,
            unlabeled: 0,
            test: 0,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = RetrievalModel::new(cfg.retrieval.clone(), 7).unwrap();
    save(&dir.path().join("r.ckpt"), "retrieval", &r, None).unwrap();
    let (r2, none) = load::<RetrievalModel>(&dir.path().join("r.ckpt"), "retrieval").unwrap();
    assert!(none.is_none());
    assert_eq!(bits(&r2.store), bits(&r.store));
    let d = Discriminator::new(cfg.discriminator.clone(), 8).unwrap();
    let mut adam = Adam::new(cfg.adam(1e-3), &d.store);
    let mut store = d.store.clone();
    let mut grads = Grads::for_store(&store);
    for (i, p) in store.params().iter().enumerate() {
        grads.accumulate(ParamId(i), &vec![0.5; p.value.len()]);
    }
    adam.step(&mut store, &grads);
    save(&dir.path().join("d.ckpt"), "discriminator", &d, Some(&adam)).unwrap();
    let (d2, adam2) = load::<Discriminator>(&dir.path().join("d.ckpt"), "discriminator").unwrap();
    assert_eq!(bits(&d2.store), bits(&d.store));
    assert_eq!(adam2.unwrap(), adam);
}

#[test]
fn wrong_kind_and_damaged_files_are_rejected() {
    let (_, cfg) = tiny_setup(
        0,
        CorpusSizes {
            labeled: 2,
            unlabeled: 0,
            test: 0,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ckpt");
    let r = RetrievalModel::new(cfg.retrieval.clone(), 7).unwrap();
    save(&path, "teacher", &r, None).unwrap();
    let err = load::<RetrievalModel>(&path, "retrieval").err().unwrap();
    assert!(err.to_string().contains("teacher"), "{err}");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load::<RetrievalModel>(&path, "teacher").is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load::<RetrievalModel>(&path, "teacher").is_err());
}
