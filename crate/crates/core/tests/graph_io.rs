//! Graph JSON round trips, ordering and error reporting.

mod common;

use common::random_graph;
use proptest::prelude::*;
use protoloc::fixtures::{densenet_block, reference_graphs};
use protoloc::graph::{parse_graph, GraphError, GraphIR, Node};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shuffled(g: &GraphIR, seed: u64) -> GraphIR {
    let mut nodes: Vec<Node> = g.nodes().to_vec();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    GraphIR::new(g.name.clone(), g.input_shape, nodes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn json_round_trip(seed in any::<u64>()) {
        let g = random_graph(seed);
        let back = parse_graph(g.to_json_string().as_bytes()).unwrap();
        prop_assert_eq!(back.to_json_value(), g.to_json_value());
        for n in g.nodes() {
            prop_assert_eq!(back.output_shape(&n.id).unwrap(), g.output_shape(&n.id).unwrap());
        }
    }

    #[test]
    fn topo_sort_puts_inputs_first(seed in any::<u64>(), perm in any::<u64>()) {
        let g = shuffled(&random_graph(seed), perm);
        let sorted = g.topo_sort().unwrap();
        prop_assert!(sorted.is_topologically_sorted());
        let pos = |id: &str| sorted.nodes().iter().position(|n| n.id == id).unwrap();
        for n in sorted.nodes() {
            for i in &n.inputs {
                prop_assert!(pos(i) < pos(&n.id));
            }
        }
        prop_assert_eq!(sorted.nodes().len(), g.nodes().len());
    }
}

#[test]
fn reference_graphs_round_trip() {
    for (stem, g) in reference_graphs() {
        let back = parse_graph(g.to_json_string().as_bytes()).unwrap();
        assert_eq!(back.to_json_value(), g.to_json_value(), "{stem}");
    }
    let d = densenet_block();
    assert_eq!(d.output_shape("fc").unwrap(), &vec![10]);
}

fn raw(nodes: &str) -> Vec<u8> {
    format!(r#"{{"name":"t","input_shape":[1,4,4],"nodes":[{nodes}]}}"#).into_bytes()
}

#[test]
fn errors_name_the_offending_node() {
    let unknown = raw(r#"{"id":"input","op":"input","inputs":[]},{"id":"boom","op":"frobnicate","inputs":["input"]}"#);
    let e = parse_graph(&unknown).unwrap_err();
    assert_eq!(e.node(), Some("boom"));
    assert!(e.to_string().contains("boom"));

    let cycle = raw(
        r#"{"id":"input","op":"input","inputs":[]},{"id":"a","op":"relu","inputs":["b"]},{"id":"b","op":"relu","inputs":["a"]}"#,
    );
    assert!(matches!(parse_graph(&cycle), Err(GraphError::CycleDetected(_))));

    let shape = raw(
        r#"{"id":"input","op":"input","inputs":[]},{"id":"big","op":"maxpool2d","attrs":{"kernel":[9,9],"stride":[1,1]},"inputs":["input"]}"#,
    );
    assert_eq!(parse_graph(&shape).unwrap_err().node(), Some("big"));

    let two_inputs = raw(r#"{"id":"a","op":"input","inputs":[]},{"id":"b","op":"input","inputs":[]}"#);
    assert!(matches!(parse_graph(&two_inputs), Err(GraphError::MalformedGraph(_))));

    let dangling = raw(r#"{"id":"input","op":"input","inputs":[]},{"id":"r","op":"relu","inputs":["ghost"]}"#);
    assert!(parse_graph(&dangling).is_err());
    assert!(parse_graph(b"not json").is_err());
}
