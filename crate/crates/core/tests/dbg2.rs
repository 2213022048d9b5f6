#[test]
fn dbg_touchdown() {
    use attnloco_core::env::*;
    use attnloco_core::terrain::*;
    let mut cfg = EnvConfig::default();
    cfg.commands.zero_prob = 1.0;
    let mut env = SimEnv::new(RobotModel::quadruped(), cfg, TerrainGenConfig::default(), 5).unwrap();
    let cur = CurriculumState::new(TerrainFamily::Rough, 0, 1);
    env.reset(&cur, &RandomizationConfig::none()).unwrap();
    let mut a = vec![0.0; 12];
    for leg in 0..4 { a[3*leg] = -1.2; }
    for k in 0..40 {
        let info = env.step(&a);
        let s = &env.state;
        println!("k={k} col={} contacts={:?} t={:?} tgt0=({:.3},{:.3}) foot0=({:.3},{:.3},{:.3}) base=({:.3},{:.3},{:.3}) q0={:.3}",
            info.collisions, s.feet_contact, s.swing_timer, s.swing_target[0][0], s.swing_target[0][1],
            s.feet_pos[0][0], s.feet_pos[0][1], s.feet_pos[0][2], s.base_pos[0], s.base_pos[1], s.base_pos[2], s.q[0]);
    }
}
