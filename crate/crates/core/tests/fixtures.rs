use std::path::Path;

use gdq_core::nav_env::{EnvConfig, OFFICE7_ENV};
use gdq_core::parse_domain;

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn shipped_environment_matches_builtin() {
    let text = std::fs::read_to_string(configs().join("office7.env")).unwrap();
    assert_eq!(text, OFFICE7_ENV);
}

#[test]
fn shipped_domain_is_generated_from_the_environment() {
    let text = std::fs::read_to_string(configs().join("office7.domain")).unwrap();
    assert_eq!(text, EnvConfig::office7().domain_text());
    let spec = parse_domain(&text).unwrap();
    assert_eq!(spec.objects_of("door").len(), 6);
    assert_eq!(spec.objects_of("area").len(), 7);
}
