use flipst::config::RunConfig;
use flipst::motion::{diffusivity_from_velocity, estimate_velocity, MotionConfig};
use flipst::pipeline;
use flipst::preprocess::reflectivity_to_rain;
use flipst::simulate::{synthetic_storm, StormConfig};

#[test]
fn storm_motion_matches_the_drift() {
    let cfg = StormConfig::default();
    let rain: Vec<_> = synthetic_storm(&cfg).unwrap().iter().map(reflectivity_to_rain).collect();
    let v = pipeline::mean_velocity(&rain[..6], &MotionConfig::default()).unwrap();
    let n = v.vx.len() as f64;
    let (mx, my) = (v.vx.iter().sum::<f64>() / n, v.vy.iter().sum::<f64>() / n);
    assert!((mx - cfg.velocity.0).abs() < 0.005 && (my - cfg.velocity.1).abs() < 0.005, "({mx}, {my})");
    assert!(v.speeds().all(|s| (0.0..=0.1).contains(&s)));
}

#[test]
fn per_pair_diffusivity_is_finite_and_non_negative() {
    let cfg = StormConfig::default();
    let rain: Vec<_> = synthetic_storm(&cfg).unwrap().iter().map(reflectivity_to_rain).collect();
    let m = MotionConfig::default();
    let v = estimate_velocity(&rain[2], &rain[3], &m).unwrap();
    let (dx, dy) = flipst::motion::default_resolution(rain[0].grid(), &m);
    let d = diffusivity_from_velocity(&v, dx, dy).unwrap();
    assert!(d.dxx.iter().all(|x| x.is_finite() && *x >= 0.0));
    assert_eq!(d.dxx, d.dyy);
}

#[test]
fn storm_preset_feeds_rain_rate_to_the_models() {
    let cfg = RunConfig::storm();
    let (raw, units) = pipeline::raw_frames(&cfg).unwrap();
    assert_eq!(units, "dBZ");
    let frames = pipeline::model_frames(&cfg).unwrap();
    assert_eq!(frames[0], reflectivity_to_rain(&raw[0]));
    assert!(frames.iter().all(|f| f.values().iter().all(|&x| x > 0.0)));
}
