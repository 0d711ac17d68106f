use super::*;

#[test]
fn config_round_trips_through_toml() {
    let mut c = SessionConfig::default();
    c.speculation.trigger = crate::engine::TriggerMode::EveryBuffer;
    c.strategies
        .insert("merge_similar_siblings".into(), BTreeMap::from([("tau_merge".into(), 0.7)]));
    let back = SessionConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn partial_config_keeps_defaults() {
    let c = SessionConfig::from_toml("seed = 3\n[speculation]\nb = 5\n").unwrap();
    assert_eq!(c.seed, 3);
    assert_eq!(c.speculation.b, 5);
    assert_eq!(c.speculation.n, 7);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(SessionConfig::from_toml("sede = 3").is_err());
    assert!(SessionConfig::from_toml("[speculation]\nb = 0").is_err());
}
