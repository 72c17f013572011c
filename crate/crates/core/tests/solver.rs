use vpl_core::exec::Exec;
use vpl_core::grid::ksum;
use vpl_core::io::Checkpoint;
use vpl_core::solver::{DtPolicy, InitialData, Integrator, MeshSpec, Mode, Simulation, SolverConfig};

fn small(mode: Mode, exec: Exec) -> SolverConfig {
    SolverConfig {
        v_max: 5.0,
        n_axis: 8,
        mesh: MeshSpec::Slab { length: 1.0, n_cells: 8 },
        mode,
        integrator: Integrator::Exponential,
        dt: DtPolicy::Cfl { safety: 0.9 },
        t_end: 0.3,
        initial: InitialData::Random { seed: 11 },
        epsilon: 1e-2,
        cadence: 5,
        exec,
        ..Default::default()
    }
}

fn mass(sim: &Simulation, f: &vpl_core::grid::DistributionField) -> f64 {
    let g = &sim.grid;
    ksum((0..f.n_cells).map(|c| sim.mesh.volumes[c] * ksum(f.cell(c).iter().zip(&g.sqrt_mu).map(|(a, b)| a * b))))
}

#[test]
fn transport_with_specular_walls_conserves_mass() {
    let sim = Simulation::new(small(Mode::Frozen, Exec::Sequential)).unwrap();
    let f = sim.initial_field().unwrap();
    let scale = ksum(f.values.iter().map(|x| x.abs()));
    let mut g = f.clone();
    for _ in 0..20 {
        g = sim.step_transport(&g, sim.dt).unwrap();
    }
    assert!((mass(&sim, &g) - mass(&sim, &f)).abs() <= 1e-13 * scale);
}

#[test]
fn backends_give_identical_runs() {
    for mode in [Mode::Frozen, Mode::Full] {
        let a = Simulation::new(small(mode, Exec::Sequential)).unwrap().run().unwrap();
        let b = Simulation::new(small(mode, Exec::Parallel)).unwrap().run().unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_state.unwrap().f.values, b.final_state.unwrap().f.values);
    }
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let dir = std::env::temp_dir().join(format!("vpl-ckpt-{}", std::process::id()));
    let mut cfg = small(Mode::Full, Exec::Parallel);
    cfg.checkpoint_every = 10;
    cfg.checkpoint_dir = Some(dir.clone());
    let sim = Simulation::new(cfg).unwrap();
    let whole = sim.run().unwrap();
    let ck = Checkpoint::load(&dir.join("ckpt_00000010.bin")).unwrap();
    let resumed = sim.run_from(sim.resume(ck).unwrap()).unwrap();
    let (a, b) = (whole.final_state.unwrap(), resumed.final_state.unwrap());
    assert_eq!(a.step_index, b.step_index);
    assert_eq!(a.f.values, b.f.values);
    let (ra, rb) = (whole.records.last().unwrap(), resumed.records.last().unwrap());
    assert_eq!((ra.t, ra.mass, &ra.w_theta), (rb.t, rb.mass, &rb.w_theta));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let sim = Simulation::new(small(Mode::Frozen, Exec::Sequential)).unwrap();
    let state = sim.initial_state().unwrap();
    let ck = sim.checkpoint(&state);
    let mut other = small(Mode::Frozen, Exec::Sequential);
    other.n_axis = 10;
    assert!(Simulation::new(other).unwrap().resume(ck).is_err());
}

#[test]
fn disk_run_conserves_mass_and_angular_momentum() {
    let cfg = SolverConfig { mesh: MeshSpec::Disk { radius: 1.0, n_axis: 8 }, t_end: 0.1, ..small(Mode::Frozen, Exec::Parallel) };
    let out = Simulation::new(cfg).unwrap().run().unwrap();
    let r0 = &out.records[0];
    for r in &out.records {
        assert!((r.mass - r0.mass).abs() <= 1e-12);
        assert!(r.angular_momentum.is_some());
    }
    assert!(out.min_full > 0.0);
}
