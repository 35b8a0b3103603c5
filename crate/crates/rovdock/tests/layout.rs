use proptest::prelude::*;

use rovdock::layout_doc::{
    default_layout, layout_to_toml, load_layout, LayoutDocument, DEEP_STATION,
};
use rovdock::HarnessError;
use rovdock_core::layout::{LayoutError, MarkerLayout};

fn doc() -> LayoutDocument {
    toml::from_str(DEEP_STATION).unwrap()
}

fn violations(d: LayoutDocument) -> Vec<String> {
    match d.into_layout() {
        Err(HarnessError::Layout(LayoutError::Validation(v))) => v,
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn shipped_layout_loads() {
    let layout = default_layout();
    assert_eq!(layout.tags.len(), 21);
    assert_eq!(layout.tag_star_id, 0);
    assert_eq!(layout, MarkerLayout::reconstructed_deep_site());
    let star = layout.tag(0).unwrap();
    assert_eq!(
        [
            star.pose.position.x,
            star.pose.position.y,
            star.pose.position.z
        ],
        [-0.5, 0.0, -0.87]
    );
}

#[test]
fn shipped_document_is_in_normal_form() {
    let again: LayoutDocument =
        toml::from_str(&layout_to_toml(&default_layout()).unwrap()).unwrap();
    assert_eq!(again, doc());
}

#[test]
fn orientations_are_normalised_on_load() {
    let mut d = doc();
    let q = &mut d.tags[3].orientation;
    for c in q.iter_mut() {
        *c *= 1.0 + 1e-8;
    }
    let layout = d.clone().into_layout().unwrap();
    let out = LayoutDocument::from_layout(&layout);
    let n: f64 = out.tags[3]
        .orientation
        .iter()
        .map(|c| c * c)
        .sum::<f64>()
        .sqrt();
    assert!((n - 1.0).abs() < 1e-15);
    assert_eq!(out, doc());
}

#[test]
fn every_violation_is_reported() {
    let mut d = doc();
    d.tags[5].id = d.tags[4].id;
    d.tags[6].position[0] += 0.4;
    d.tags[7].orientation = [2.0, 0.0, 0.0, 0.0];
    let v = violations(d.clone());
    let dup = d.tags[4].id;
    assert!(
        v.iter().any(|m| m == &format!("duplicate tag id {dup}")),
        "{v:?}"
    );
    assert!(
        v.iter()
            .any(|m| m.starts_with(&format!("tag {} at", d.tags[6].id))),
        "{v:?}"
    );
    assert!(v.iter().any(|m| m.contains("unit quaternion")), "{v:?}");
    assert_eq!(v.len(), 3, "{v:?}");
}

#[test]
fn tag_star_must_exist() {
    let mut d = doc();
    d.tag_star_id = 99;
    assert!(violations(d).iter().any(|m| m.contains("tag* id 99")));
}

#[test]
fn version_and_unknown_keys() {
    let e =
        load_layout(&DEEP_STATION.replace("schema_version = 1", "schema_version = 3")).unwrap_err();
    assert!(matches!(e, HarnessError::SchemaMismatch(_)));
    let e = load_layout(&DEEP_STATION.replace("density = 5\n", "density = 5\ncolour = 1\n"))
        .unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_stable_for_any_subset(drop in prop::collection::vec(any::<bool>(), 21)) {
        let full = doc();
        let large = |t: &rovdock::layout_doc::TagEntry| (t.size - 0.22).abs() < 1e-9;
        let mut d = full.clone();
        d.tags = full
            .tags
            .iter()
            .zip(&drop)
            .filter(|(t, gone)| !**gone || t.id == full.tag_star_id || large(t))
            .map(|(t, _)| t.clone())
            .collect();
        let layout = d.clone().into_layout().unwrap();
        let text = layout_to_toml(&layout).unwrap();
        let back = load_layout(&text).unwrap();
        prop_assert_eq!(&back, &layout);
        prop_assert_eq!(LayoutDocument::from_layout(&back), d);
    }
}
