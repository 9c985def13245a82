//! Explanation ranking oracles on hand-built bundles.

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::graph::{conv, GraphBuilder};
use protoloc::inference::WeightStore;
use protoloc::model::{Dataset, ModelBundle};
use protoloc::protopart::{PrototypeBank, SimilarityConfig};
use protoloc::tensor::Tensor;

#[test]
fn constant_embedding_ties_rank_by_index() {
    let mut b = GraphBuilder::new("const", [3, 8, 8], "input");
    b.then("emb", conv(1, 1, 0, 4));
    let g = b.build().unwrap();
    let bias = vec![0.3f32, 1.0, 0.2, 0.7];
    let mut w = WeightStore::new();
    w.insert("emb", "weight", Tensor::zeros(vec![4, 3, 1, 1]));
    w.insert("emb", "bias", Tensor::new(vec![4], bias.clone()).unwrap());
    let proto = Tensor::new(vec![4, 1, 1], bias).unwrap();
    let bank = PrototypeBank::new(vec![proto; 6], vec![1, 0, 1, 0, 1, 1], 2).unwrap();
    let bundle = ModelBundle::new(g, w, bank, "emb", SimilarityConfig::default()).unwrap();

    let x = Tensor::from_fn(vec![3, 8, 8], |i| i as f32 * 0.01);
    let z = bundle.embed(&x).unwrap();
    let units = bundle.units(&z).unwrap();
    assert!(units.iter().all(|u| u.score == units[0].score && u.argmin == (0, 0)));

    let e = bundle.explain(&x, 3).unwrap();
    assert_eq!(e.predicted, 1);
    let order: Vec<usize> = e.evidence.iter().map(|ev| ev.prototype).collect();
    assert_eq!(order, vec![0, 2, 4]);
}

#[test]
fn planted_patch_ranks_first() {
    let dir = assets_dir();
    let load = || {
        ModelBundle::load(
            dir.join("toy/graph.json"),
            dir.join("toy/weights.ntsr"),
            dir.join("toy/initial_bank.ntsr"),
            TOY_EMBED_NODE,
            SimilarityConfig::default(),
        )
        .unwrap()
    };
    let ds = Dataset::load(dir.join("toy/dataset.ntsr")).unwrap();
    let base = load();
    for (i, (r, c)) in [(0usize, (2usize, 5usize)), (4, (7, 0)), (9, (3, 3))] {
        let x = &ds.images[i];
        let before = base.explain(x, 1).unwrap();
        let z = base.embed(x).unwrap();
        // Replace the class's last prototype with the embedding patch at (r, c).
        let j = base.bank.of_class(before.predicted).last().unwrap();
        let d = z.dims()[0];
        let patch = Tensor::from_fn(vec![d, 1, 1], |k| z.get(&[k, r, c]));
        let mut protos = base.bank.protos().to_vec();
        protos[j] = patch;
        let bank = PrototypeBank::new(protos, base.bank.class_of().to_vec(), base.bank.num_classes()).unwrap();
        let planted = ModelBundle::new(base.graph.clone(), base.weights.clone(), bank, TOY_EMBED_NODE, base.sim).unwrap();

        let units = planted.units(&z).unwrap();
        assert!(units[j].distance < 1e-12);
        assert_eq!(units[j].argmin, (r, c));
        assert!(units.iter().all(|u| u.score <= units[j].score));
        let e = planted.explain(x, 2).unwrap();
        assert_eq!(e.predicted, before.predicted);
        assert_eq!(e.evidence[0].prototype, j);
        let field = planted.rf().unwrap().patch_field(TOY_EMBED_NODE, r, c, 1, 1).unwrap();
        assert_eq!(e.evidence[0].region, field);
    }
}
