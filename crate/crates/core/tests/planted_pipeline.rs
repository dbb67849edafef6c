use cousinforge::assembly::{generate_cousins, AssemblyConfig};
use cousinforge::evaluation::{fidelity, match_objects, PredObject, DEFAULT_MAX_DIST};
use cousinforge::fusion::{distill, FusionConfig};
use cousinforge::retrieval::{materialize, Catalog, RetrievalConfig};
use cousinforge::synth::{planted_scene, PlantedConfig};

#[test]
fn planted_scene_round_trip() {
    let scene = planted_scene(7, &PlantedConfig::default());
    let graph = distill(&scene.input, &FusionConfig::default()).unwrap();
    graph.validate().unwrap();
    let catalog = Catalog::new(scene.catalog.clone()).unwrap();
    let sel = materialize(&graph, &catalog, &scene.materials, &scene.skies, &RetrievalConfig::default()).unwrap();
    let scenes = generate_cousins(&graph, &sel, &catalog, &AssemblyConfig::default(), None).unwrap();
    let pred: Vec<PredObject> = scenes[0].placements.iter().map(PredObject::from).collect();
    let m = match_objects(&pred, &scene.gt, DEFAULT_MAX_DIST);
    let r = fidelity(&pred, &scene.gt, &m);
    assert_eq!(r.cat_recovery, Some(100.0));
    assert!(r.dist_err.unwrap() <= 0.15);
    assert!(r.ori_err.unwrap() <= 1.0);
    assert_eq!(r.map25, Some(1.0));
    assert_eq!(scenes[0].grounds.iter().find(|g| g.kind == cousinforge::scenegraph::GroundKind::Road).unwrap().material_id, scene.road_material);
}
