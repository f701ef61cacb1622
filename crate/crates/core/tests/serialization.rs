use frustumocc::geom::DepthBins;
use frustumocc::gfp::{AttentionConfig, AttentionScope};
use frustumocc::synth::{generate_scene, RigConfig, Scene, SceneConfig};

#[test]
fn scene_json_round_trip() {
    let scene = generate_scene(&SceneConfig::default(), &RigConfig::default(), 7).unwrap();
    let json = serde_json::to_string(&scene).unwrap();
    let back: Scene = serde_json::from_str(&json).unwrap();
    assert_eq!(back, scene);
}

#[test]
fn invalid_depth_bins_are_rejected_on_load() {
    assert!(serde_json::from_str::<DepthBins>("[1.0, 2.0, 3.0]").is_ok());
    assert!(serde_json::from_str::<DepthBins>("[2.0, 1.0]").is_err());
    assert!(serde_json::from_str::<DepthBins>("[-1.0, 1.0]").is_err());
    assert!(serde_json::from_str::<DepthBins>("[1.0]").is_err());
}

#[test]
fn config_sections_reject_unknown_keys() {
    assert!(serde_json::from_str::<SceneConfig>(r#"{"box_count": 3}"#).is_ok());
    assert!(serde_json::from_str::<SceneConfig>(r#"{"boxes": 3}"#).is_err());
    let cfg: AttentionConfig = serde_json::from_str(r#"{"scope": {"windowed": 5}}"#).unwrap();
    assert_eq!(cfg.scope, AttentionScope::Windowed(5));
}
