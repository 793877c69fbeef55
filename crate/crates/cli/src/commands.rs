use std::thread;

use beamstab::analysis::{default_window, LyapunovConfig};
use beamstab::backstepping::inverse_kernels;
use beamstab::kernel::phi0_matrix;
use beamstab::kernel::Phi0Design;
use beamstab::riemann::default_initial_state;
use beamstab::*;

use crate::config::RunConfig;
use crate::output::{self, SweepRow};

/// Raised when `verify` finds a failing check; mapped to exit code 4.
#[derive(Debug)]
pub struct VerificationFailed(pub usize);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn initial_state(run: &RunConfig, grid: &SpatialGrid) -> PhysicalState {
    default_initial_state(grid).scaled(run.initial_scale)
}

fn prepare_out(run: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&run.out)?;
    Ok(())
}

pub fn gains(run: &RunConfig) -> anyhow::Result<()> {
    let ctrl = run.ctrl.validate()?;
    let grid = run.grid();
    let set = solve_kernels(&run.params, &ctrl, &grid)?;
    let gains = extract_gains(&set);
    prepare_out(run)?;
    output::write_gains(&run.out, &gains, &grid)?;
    output::write_phi(&run.out, &set, &grid)?;

    let res = kernel_residuals(&set);
    println!("pde_residual_k={}", res.pde_k);
    println!("pde_residual_l={}", res.pde_l);
    println!("boundary_residual={}", res.boundary());
    println!("phi_ode_residual={}", res.phi_ode);
    println!("excluded_nodes={}", res.excluded_nodes);
    println!("jump_line_y={}", gains.jump_y);
    println!("jump_size={}", gains.jump);
    match gains.detected_jump {
        Some(j) => println!("detected_jump_cell={},{}", grid.x(j), grid.x(j + 1)),
        None => println!("detected_jump_cell=none"),
    }
    Ok(())
}

pub fn simulate(run: &RunConfig) -> anyhow::Result<()> {
    let grid = run.grid();
    let cfg = run.sim_config();
    let ps0 = initial_state(run, &grid);
    let (series, monitor) = match cfg.mode {
        Mode::ClosedLoop => {
            let ctrl = run.ctrl.validate()?;
            let set = solve_kernels(&run.params, &ctrl, &grid)?;
            let series = beamstab::simulate(&ps0, &run.params, &cfg, Some(&extract_gains(&set)), &grid)?;
            let (lc, _) = LyapunovConfig::default_from_bounds(&set);
            let monitor = monitor_target(&series, &set, &lc, &grid)?;
            (series, Some(monitor))
        }
        Mode::OpenLoop => (beamstab::simulate(&ps0, &run.params, &cfg, None, &grid)?, None),
    };
    prepare_out(run)?;
    output::write_snapshots(&run.out, &series, &grid)?;
    output::write_energy(&run.out, &series, monitor.as_ref())?;
    output::write_controls(&run.out, &series)?;

    let e_final = series.energy.last().copied().unwrap_or(0.0);
    println!("initial_energy={}", series.energy[0]);
    println!("final_energy={e_final}");
    println!("final_energy_ratio={}", series.final_energy_ratio());
    println!("max_energy_ratio={}", series.max_energy_ratio());
    match series.diverged_at {
        Some(t) => println!("diverged_at={t}"),
        None => println!("diverged_at=none"),
    }
    let window = default_window(&run.params, run.t_final);
    match fit_decay_rate(&series, window) {
        Ok(mut report) => {
            report.c2 = Some(theorem_constant_c2(&run.params, &run.ctrl));
            print!("{report}");
        }
        Err(e) => println!("fitted_rate=nan\nfit_error={e}"),
    }
    Ok(())
}

struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.value <= self.limit
    }
}

fn max_abs(m: impl IntoIterator<Item = f64>) -> f64 {
    m.into_iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn smooth_riemann(grid: &SpatialGrid) -> RiemannState {
    RiemannState {
        p: grid.sample(|x| (2.0 * x).sin() - 0.4),
        q: grid.sample(|x| x * x + 0.1),
        r: grid.sample(|x| (1.0 - x).exp()),
        s: grid.sample(|x| (3.0 * x).cos()),
        x1: 0.7,
        x2: -1.3,
    }
}

fn riemann_round_trip(params: &BeamParams, n: usize) -> anyhow::Result<f64> {
    let grid = SpatialGrid::new(n)?;
    let rs = smooth_riemann(&grid);
    let back = to_riemann(&from_riemann(&rs, params, &grid)?, params, &grid)?;
    let fields = [(&rs.p, &back.p), (&rs.q, &back.q), (&rs.r, &back.r), (&rs.s, &back.s)];
    Ok(max_abs(fields.iter().flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(a, b)| a - b))))
}

pub fn verify(run: &RunConfig, gains_file: Option<&std::path::Path>) -> anyhow::Result<()> {
    let ctrl = run.ctrl.validate()?;
    let params = run.params;
    let grid = run.grid();
    let mats = assemble_matrices(&params);
    let mut checks = Vec::new();

    checks.push(Check {
        name: "b2_times_d",
        value: max_abs((mats.b2 * mats.d).iter().copied()),
        limit: 1e-12,
    });
    checks.push(Check {
        name: "d_equals_minus_sqrt_eps_a",
        value: max_abs((mats.d + mats.a * params.sqrt_eps()).iter().copied()),
        limit: 1e-12,
    });
    let e1 = target_matrices(&mats, &phi0_matrix(&params, &ctrl, &mats, Phi0Design::DiagonalE1)).e1;
    checks.push(Check {
        name: "e1_diagonal",
        value: max_abs([e1[(0, 1)], e1[(1, 0)], e1[(0, 0)] + ctrl.delta1, e1[(1, 1)] + ctrl.delta2]),
        limit: 1e-12 * (1.0 + ctrl.delta1.max(ctrl.delta2)),
    });

    let set = solve_kernels(&params, &ctrl, &grid)?;
    let res = kernel_residuals(&set);
    checks.push(Check {
        name: "kernel_pde_residual",
        value: res.pde(),
        limit: 1e-3,
    });
    checks.push(Check {
        name: "kernel_boundary_residual",
        value: res.boundary(),
        limit: 1e-3,
    });
    let gains = extract_gains(&set);
    if let Some(path) = gains_file {
        let rows = output::read_gains(path)?;
        let value = if rows.len() != gains.n + 1 {
            f64::INFINITY
        } else {
            rows.iter()
                .enumerate()
                .map(|(j, r)| {
                    let (k, l) = (gains.k[j], gains.l[j]);
                    let expect = [grid.x(j), k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)], l[(0, 0)], l[(0, 1)], l[(1, 0)], l[(1, 1)]];
                    max_abs(r.iter().zip(expect).map(|(a, b)| a - b))
                })
                .fold(0.0, f64::max)
        };
        checks.push(Check {
            name: "gains_file_kernel_residual",
            value,
            limit: 1e-9 * (1.0 + set.kernels.max_abs()),
        });
    }

    let (e_coarse, e_fine) = (riemann_round_trip(&params, 40)?, riemann_round_trip(&params, 80)?);
    let ratio = e_coarse / e_fine;
    checks.push(Check {
        name: "riemann_round_trip_order",
        value: (ratio - 4.0).abs(),
        limit: 0.5,
    });
    let rs = smooth_riemann(&grid);
    let ts = transform_to_target(&rs, &set.kernels, &set.phi, &grid)?;
    let back = invert_transform(&ts, &set.kernels, &set.phi, &grid)?;
    let pairs = [(&rs.p, &back.p), (&rs.q, &back.q), (&rs.r, &back.r), (&rs.s, &back.s)];
    checks.push(Check {
        name: "target_round_trip",
        value: max_abs(pairs.iter().flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(a, b)| a - b))),
        limit: 1e-9 * (1.0 + set.kernels.max_abs()),
    });
    let inv = inverse_kernels(&set);
    let resolvent = apply_inverse_kernels(&ts, &inv, &grid)?;
    let pairs = [(&rs.p, &resolvent.p), (&rs.r, &resolvent.r)];
    checks.push(Check {
        name: "resolvent_round_trip",
        value: max_abs(pairs.iter().flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(a, b)| a - b))),
        limit: 50.0 * grid.h().powi(2),
    });

    let mut cfg = run.sim_config();
    cfg.mode = Mode::ClosedLoop;
    let series = beamstab::simulate(&initial_state(run, &grid), &params, &cfg, Some(&gains), &grid)?;
    let (lc, _) = LyapunovConfig::default_from_bounds(&set);
    let monitor = monitor_target(&series, &set, &lc, &grid)?;
    let t0 = 1.0 / params.slow_speed() + 0.3;
    let sup = monitor
        .times
        .iter()
        .zip(&monitor.sigma_sup)
        .filter(|(t, _)| **t >= t0)
        .fold(0.0f64, |m, (_, s)| m.max(*s));
    checks.push(Check {
        name: "sigma_vanishing",
        value: sup,
        limit: 1e-2 * series.snapshots[0].riemann.max_abs(),
    });

    let mut failed = 0;
    for c in &checks {
        let status = if c.pass() { "pass" } else { "fail" };
        if !c.pass() {
            failed += 1;
        }
        println!("check={} status={status} value={} limit={}", c.name, c.value, c.limit);
    }
    if failed > 0 {
        return Err(VerificationFailed(failed).into());
    }
    Ok(())
}

fn sweep_pair(run: &RunConfig, delta1: f64, delta2: f64) -> Result<SweepRow> {
    let ctrl = ControllerParams { delta1, delta2 }.validate()?;
    let grid = run.grid();
    let set = solve_kernels(&run.params, &ctrl, &grid)?;
    let mut cfg = run.sim_config();
    cfg.mode = Mode::ClosedLoop;
    let series = beamstab::simulate(&initial_state(run, &grid), &run.params, &cfg, Some(&extract_gains(&set)), &grid)?;
    let report = fit_decay_rate(&series, default_window(&run.params, run.t_final))?;
    Ok(SweepRow {
        delta1,
        delta2,
        c2: theorem_constant_c2(&run.params, &ctrl),
        fitted_rate: report.rate,
        final_energy_ratio: series.final_energy_ratio(),
    })
}

pub fn sweep(run: &RunConfig) -> anyhow::Result<()> {
    let results: Vec<Result<SweepRow>> = thread::scope(|s| {
        let handles: Vec<_> = run
            .pairs
            .iter()
            .map(|&(d1, d2)| s.spawn(move || sweep_pair(run, d1, d2)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let rows: Vec<SweepRow> = run
        .pairs
        .iter()
        .zip(results)
        .map(|(&(delta1, delta2), r)| {
            r.unwrap_or_else(|e| {
                eprintln!("pair ({delta1}, {delta2}) failed: {e}");
                SweepRow {
                    delta1,
                    delta2,
                    c2: f64::NAN,
                    fitted_rate: f64::NAN,
                    final_energy_ratio: f64::NAN,
                }
            })
        })
        .collect();
    prepare_out(run)?;
    output::write_sweep(&run.out, &rows)?;
    for r in &rows {
        println!(
            "delta1={} delta2={} C2={} fitted_rate={} final_energy_ratio={}",
            r.delta1, r.delta2, r.c2, r.fitted_rate, r.final_energy_ratio
        );
    }
    Ok(())
}
