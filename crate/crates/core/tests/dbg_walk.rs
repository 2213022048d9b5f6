#[test]
fn dbg_constant_action_walks() {
    use attnloco_core::env::*;
    use attnloco_core::terrain::*;
    let mut cfg = EnvConfig::default();
    cfg.commands.zero_prob = 1.0;
    let mut env = SimEnv::new(RobotModel::quadruped(), cfg, TerrainGenConfig::default(), 5).unwrap();
    let cur = CurriculumState::new(TerrainFamily::Rough, 0, 1);
    env.reset(&cur, &RandomizationConfig::none()).unwrap();
    let yaw0 = env.state.yaw;
    let mut a = vec![0.0; 12];
    // sweep all legs backward in the body frame
    for leg in 0..4 { a[3*leg] = -1.2; }
    let mut dist = 0.0;
    let p0 = env.state.base_pos;
    for k in 0..250 {
        let info = env.step(&a);
        if k % 25 == 0 {
            let v = env.state.base_lin_vel;
            println!("step {k}: vx={:.3} vy={:.3} contacts={:?} timers={:?}", v[0], v[1], env.state.feet_contact, env.state.swing_timer);
        }
        assert!(!info.terminated, "terminated at {k}");
    }
    let p = env.state.base_pos;
    dist += ((p[0]-p0[0]).powi(2) + (p[1]-p0[1]).powi(2)).sqrt();
    let heading = (p[0]-p0[0])*yaw0.cos() + (p[1]-p0[1])*yaw0.sin();
    println!("distance {dist:.3} m in 5 s; heading component {heading:.3}");
    assert!(heading > 1.0, "no sustained walking: {heading}");
}
