use pglio::io::config::*;

#[test]
fn empty_is_default() {
    assert_eq!(Config::parse("").unwrap(), Config::default());
    assert_eq!(Config::parse("# only a comment\n\n").unwrap(), Config::default());
}

#[test]
fn map_update_distance_accepted() {
    let c = Config::parse("map.update_dist_m = 2.0").unwrap();
    assert_eq!(c.map.update_dist_m, 2.0);
}

#[test]
fn negative_window_rejected() {
    let e = Config::parse("window.length_s = -1").unwrap_err().to_string();
    assert!(e.contains("window.length_s") && e.contains("out of range"), "{e}");
}

#[test]
fn unknown_and_unparsable() {
    assert!(Config::parse("geo.nope = 1").unwrap_err().to_string().contains("unknown key"));
    assert!(Config::parse("geo.d1 = abc").unwrap_err().to_string().contains("cannot parse"));
    assert!(Config::parse("photo.enabled = maybe").is_err());
}

#[test]
fn text_round_trip() {
    let mut c = Config::default();
    c.photo.enabled = false;
    c.imu.accel_noise = 0.0123;
    let back = Config::parse(&c.to_text()).unwrap();
    assert_eq!(back, c);
}
