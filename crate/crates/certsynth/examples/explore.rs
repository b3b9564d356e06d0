// Scratch numeric exploration of the grid pipeline (not part of the suite).
use certsynth::numkernel::{self, Matrix};
use certsynth::powergrid::{self, network, GridParams, WtgParams};
use certsynth::sysmodel::{self, ModeSchedule};

fn main() {
    let wtg = WtgParams::default();
    let grid = GridParams::default();

    println!("== calibration ==");
    let k = powergrid::calibrate_drive_ratio(&wtg).expect("calibrate");
    println!("k_drive = {k}");
    let eq = powergrid::find_equilibrium(&wtg, k, None).expect("equilibrium");
    println!("iterations = {}, residual = {:.3e}", eq.iterations, eq.residual_norm);
    println!("x = {:?}", eq.x);
    println!("y = {:?}", eq.y);
    println!("P_gen = {}, wr = {} ({} pu)", eq.y[0], eq.x[2], eq.x[2] / wtg.omega_s);

    let blocks = powergrid::linearize(&wtg, &eq).expect("linearize");
    let reduced = powergrid::kron_reduce(&blocks).expect("kron");
    println!("\n== reduced A_kr ==");
    for i in 0..7 {
        let row: Vec<String> = (0..7).map(|j| format!("{:+.3e}", reduced.a_kr[(i, j)])).collect();
        println!("{}", row.join(" "));
    }
    match numkernel::hurwitz_check(&reduced.a_kr) {
        Ok(()) => println!("A_kr Hurwitz: yes"),
        Err(e) => println!("A_kr Hurwitz: NO ({e})"),
    }
    println!("abscissa estimate: {}", numkernel::spectral_abscissa_estimate(&reduced.a_kr));
    println!("C_kr = {:?}", reduced.c_kr.data());
    println!("D_kr = {:?}", reduced.d_kr.data());
    println!("B_kr = {:?}", reduced.b_kr.data());
    println!("Sigma_kr = {:?}", reduced.sigma_kr.data());

    // Euler stability probe: spectral radius of I + A dt.
    for dt in [0.01, 0.001] {
        let n = reduced.a_kr.rows();
        let mut m = Matrix::identity(n).add(&reduced.a_kr.scale(dt));
        let mut growth: f64 = 0.0;
        let mut v = vec![1.0; n];
        for _ in 0..2000 {
            v = m.matvec(&v);
            let norm = numkernel::norm2(&v);
            growth = norm;
            if !norm.is_finite() || norm > 1e100 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            growth = norm;
        }
        let _ = &mut m;
        println!("euler growth per step at dt={dt}: {growth}");
    }

    println!("\n== full system ==");
    let assembled = powergrid::assemble_switched(&wtg, &grid).expect("assemble");
    for (q, mode) in assembled.sys.modes.iter().enumerate() {
        match numkernel::hurwitz_check(&mode.a) {
            Ok(()) => println!("mode {q} Hurwitz: yes"),
            Err(e) => println!("mode {q} Hurwitz: NO ({e})"),
        }
    }
    let a = &assembled.sys.modes[0].a;
    println!(
        "freq row coupling (first 7): {:?}",
        (0..7).map(|j| a[(7, j)]).collect::<Vec<_>>()
    );

    // Uncontrolled response over 10 s.
    let sched = assembled.sim_schedule.clone();
    let dt = 0.01;
    let steps = (sched.total_time() / dt).round() as usize;
    let u = vec![vec![0.0, 0.0]; steps];
    let x0 = vec![0.0; 11];
    let trace = sysmodel::integrate_nominal(&assembled.sys, &sched, &x0, &u, dt).unwrap();
    let mut min_df: f64 = 0.0;
    let mut at = 0.0;
    for (j, s) in trace.states.iter().enumerate() {
        let df = s[7] / (2.0 * std::f64::consts::PI);
        if df < min_df {
            min_df = df;
            at = j as f64 * dt;
        }
    }
    let last = trace.states.last().unwrap();
    println!(
        "uncontrolled: nadir df = {:.4} Hz at t={:.2}s; df(5s) = {:.4} Hz; df(10) = {:.4} Hz",
        min_df,
        at,
        trace.states[(5.0 / dt) as usize][7] / (2.0 * std::f64::consts::PI),
        last[7] / (2.0 * std::f64::consts::PI)
    );
    println!(
        "uncontrolled rotor: dwr(5s) = {:.4} Hz",
        trace.states[(5.0 / dt) as usize][2] / (2.0 * std::f64::consts::PI)
    );

    // Certificate exploration.
    println!("\n== certificate ==");
    use certsynth::bisim::{optimize_certificate, CertificateOptions, InitialLevel};
    use certsynth::mtl::FragmentBlock;
    use certsynth::mtl::LinearPredicate;
    let mut a_df = vec![0.0; 11];
    a_df[7] = 1.0;
    let mut a_fr = vec![0.0; 11];
    a_fr[2] = 1.0;
    let frag = vec![FragmentBlock {
        tau: 0.0,
        t_end: 5.0,
        preds: vec![
            LinearPredicate::normalized(a_df.clone(), vec![0.0, 0.0], 0.5 * 2.0 * std::f64::consts::PI, "df").unwrap(),
            LinearPredicate::normalized(a_fr.clone(), vec![0.0, 0.0], 10.0 * 2.0 * std::f64::consts::PI, "dfr").unwrap(),
        ],
    }];
    let synth_sched = ModeSchedule::single(0, 5.0);
    let opts = CertificateOptions {
        mu: 0.02,
        zeta: 1.0,
        epsilon: 0.05,
        t_end: 5.0,
        r0: InitialLevel::GammaFactor(4.0),
        shape_index: 2,
        max_sweeps: 200,
        refine_iters: 1000,
        secondary_weight: 0.02,
    };
    let t0 = std::time::Instant::now();
    match optimize_certificate(&assembled.sys, &synth_sched, &opts, &frag) {
        Ok(cert) => {
            println!("took {:?}", t0.elapsed());
            println!("alpha = {:?}", cert.modes.iter().map(|m| m.alpha).collect::<Vec<_>>());
            println!("gamma_hat = {}", cert.gamma_hat);
            println!("r = {:?}", cert.r);
            for block in &cert.offsets {
                for no in block {
                    println!(
                        "normal {} -> z {:?} delta {:?} (Hz: {:?})",
                        no.label,
                        no.z,
                        no.delta_hat,
                        no.delta_hat
                            .iter()
                            .map(|d| d / (2.0 * std::f64::consts::PI))
                            .collect::<Vec<_>>()
                    );
                }
            }
        }
        Err(e) => println!("certificate failed: {e}"),
    }

    // Full feedforward pipeline on the assembled grid.
    println!("\n== synthesis ==");
    {
        use certsynth::mtl::{self, parse_formula, ParseOptions, VarKind, VarRef, VarTable};
        use certsynth::synth::{self, SynthesisProblem};
        let mut vars = VarTable::from_names(&assembled.sys.state_names, &assembled.sys.input_names);
        vars.insert("df", VarRef { kind: VarKind::State, index: 7, scale: 1.0 / (2.0 * std::f64::consts::PI) });
        vars.insert("dfr", VarRef { kind: VarKind::State, index: 2, scale: 1.0 / (2.0 * std::f64::consts::PI) });
        let text = "G[0,5] (df <= 0.5 & df >= -0.5 & dfr <= 10 & dfr >= -10) & G[2,5] (df <= 0.4 & df >= -0.4)";
        let formula = parse_formula(text, &vars, ParseOptions::default()).unwrap().formula;
        let frag2 = mtl::fragment_blocks(&formula, false).unwrap();
        let opts2 = CertificateOptions {
            mu: 0.02,
            zeta: 1.0,
            epsilon: 0.05,
            t_end: 5.0,
            r0: InitialLevel::GammaFactor(4.0),
            shape_index: 2,
            max_sweeps: 200,
            refine_iters: 1000,
            secondary_weight: 0.02,
        };
        let t0 = std::time::Instant::now();
        let cert = optimize_certificate(&assembled.sys, &synth_sched, &opts2, &frag2).unwrap();
        println!("certify took {:?}", t0.elapsed());
        for block in &cert.offsets {
            for no in block {
                println!("  {} delta {:?}", no.label, no.delta_hat);
            }
        }
        let modification = cert.robust_modification();
        let tight = mtl::robustify(&formula, &modification).unwrap();
        let prob = SynthesisProblem {
            sys: &assembled.sys,
            sched: &synth_sched,
            formula: tight.clone(),
            x0: vec![0.0; 11],
            dt: 0.05,
            weights: vec![1.0, 10.0],
            input_bounds: None,
        margin: 0.02,
        };
        let t0 = std::time::Instant::now();
        let synth_result = synth::synthesize(&prob);
        match synth_result {
            Ok(res) => {
                println!(
                    "synth took {:?}: objective {:.4}, robustness {:.5}, lp iters {}",
                    t0.elapsed(),
                    res.objective,
                    res.robustness,
                    res.lp_iterations
                );
                let mut min_df: f64 = 0.0;
                let mut max_uw: f64 = 0.0;
                let mut max_us: f64 = 0.0;
                for s in &res.nominal.states {
                    min_df = min_df.min(s[7] / (2.0 * std::f64::consts::PI));
                }
                for u in &res.u {
                    max_uw = max_uw.max(u[0].abs());
                    max_us = max_us.max(u[1].abs());
                }
                println!("nominal df min {:.4} Hz; |uw| max {:.3}, |us| max {:.3}", min_df, max_uw, max_us);

                // Monte Carlo verification of the feedforward controller.
                use certsynth::mcsim::{self, BatchInputs, ControllerSpec, InitialSampler, Scheme, SimConfig};
                let u_sim: Vec<Vec<f64>> = res
                    .u
                    .iter()
                    .flat_map(|u| std::iter::repeat(u.clone()).take(5))
                    .collect();
                let inputs = BatchInputs {
                    sys: &assembled.sys,
                    sched: &synth_sched,
                    formula: &formula,
                    initial: mcsim::InitialSpec {
                        center: vec![0.0; 11],
                        metric: Some((cert.modes[0].m.clone(), cert.r[0])),
                    },
                    controller: ControllerSpec::Feedforward(&u_sim),
                    nominal: None,
                    certificate: None,
                };
                let cfg = SimConfig {
                    dt: 0.01,
                    horizon: 5.0,
                    paths: 100,
                    seed: 1,
                    scheme: Scheme::ExactDrift,
                    disturbances: vec![],
                    initial: InitialSampler::UniformInBall,
                };
                let t0 = std::time::Instant::now();
                let report = mcsim::run_batch(&inputs, &cfg).unwrap();
                println!(
                    "verify took {:?}: rate {:.3}, min rob {:.4}, mean rob {:.4}",
                    t0.elapsed(),
                    report.satisfaction_rate,
                    report.min_robustness,
                    report.mean_robustness
                );
            }
            Err(e) => println!("synthesis FAILED: {e}"),
        }

        // Feedback library and the unexpected-disturbance comparison.
        println!("\n== feedback ==");
        use certsynth::feedback::{self, LibraryOptions};
        use certsynth::mcsim::{self, BatchInputs, ControllerSpec, Disturbance, InitialSampler, Scheme, SimConfig};
        let prob = SynthesisProblem {
            sys: &assembled.sys,
            sched: &synth_sched,
            formula: tight.clone(),
            x0: vec![0.0; 11],
            dt: 0.05,
            weights: vec![1.0, 10.0],
            input_bounds: None,
        margin: 0.02,
        };
        let centers = feedback::default_centers(5, &vec![0.0; 11], &cert.modes[0].m, cert.r[0], 7).unwrap();
        let t0 = std::time::Instant::now();
        let lib = feedback::build_library(&prob, &cert, &centers, &LibraryOptions { rho: 1.0, dt_sim: 0.01 }).unwrap();
        println!("library took {:?}: {} traces, skipped {:?}", t0.elapsed(), lib.n_traces(), lib.skipped);
        let ff_u = lib.traces[0].inputs.clone();

        let disturbances = vec![Disturbance { start: 0.0, end: 0.1, channel: "dPd".into(), magnitude: 0.38 }];
        let mk_cfg = |d: Vec<Disturbance>| SimConfig {
            dt: 0.01,
            horizon: 5.0,
            paths: 100,
            seed: 1,
            scheme: Scheme::ExactDrift,
            disturbances: d,
            initial: InitialSampler::UniformInBall,
        };
        let base_inputs = BatchInputs {
            sys: &assembled.sys,
            sched: &synth_sched,
            formula: &formula,
            initial: mcsim::InitialSpec {
                center: vec![0.0; 11],
                metric: Some((cert.modes[0].m.clone(), cert.r[0])),
            },
            controller: ControllerSpec::Feedforward(&ff_u),
            nominal: None,
            certificate: None,
        };
        let rep_ff = mcsim::run_batch(&base_inputs, &mk_cfg(disturbances.clone())).unwrap();
        println!("feedforward + kick: rate {:.3}, min rob {:.4}", rep_ff.satisfaction_rate, rep_ff.min_robustness);
        let fb_inputs = BatchInputs { controller: ControllerSpec::Feedback(&lib), ..base_inputs };
        let t0 = std::time::Instant::now();
        let rep_fb = mcsim::run_batch(&fb_inputs, &mk_cfg(disturbances)).unwrap();
        println!("feedback    + kick: rate {:.3}, min rob {:.4} ({:?})", rep_fb.satisfaction_rate, rep_fb.min_robustness, t0.elapsed());
        // Feedback without the kick (theorem-2-style check).
        let rep_fb0 = mcsim::run_batch(&fb_inputs, &mk_cfg(vec![])).unwrap();
        println!("feedback    no kick: rate {:.3}, min rob {:.4}", rep_fb0.satisfaction_rate, rep_fb0.min_robustness);
    }

    // Nine-bus DC flows.
    println!("\n== nine-bus network ==");
    // Nine-bus iterative synthesis prototype.
    {
        use certsynth::mtl::{self, parse_formula, ParseOptions, VarKind, VarRef, VarTable};
        use certsynth::synth::{self, PoolConstraint, SynthesisProblem};
        let mut vars = VarTable::from_names(&assembled.sys.state_names, &assembled.sys.input_names);
        vars.insert("df", VarRef { kind: VarKind::State, index: 7, scale: 1.0 / (2.0 * std::f64::consts::PI) });
        vars.insert("dfr", VarRef { kind: VarKind::State, index: 2, scale: 1.0 / (2.0 * std::f64::consts::PI) });
        let text = "G[0,5] (df <= 0.5 & df >= -0.5 & dfr <= 10 & dfr >= -10) & G[2,5] (df <= 0.4 & df >= -0.4)";
        let formula = parse_formula(text, &vars, ParseOptions::default()).unwrap().formula;
        let frag = mtl::fragment_blocks(&formula, false).unwrap();

        let net = network::ninebus_network();
        let lines = network::line_flow_outputs(&net, &assembled.reduced, &wtg, &grid, 0.25).unwrap();
        let line_frag = vec![certsynth::mtl::FragmentBlock {
            tau: 2.0,
            t_end: 5.0,
            preds: lines.iter().flat_map(|lf| [lf.upper.clone(), lf.lower.clone()]).collect(),
        }];
        // Certificate shaped with the line normals as secondaries.
        let mut combined = frag.clone();
        combined.extend(line_frag.iter().cloned());
        let opts = CertificateOptions {
            mu: 0.02, zeta: 1.0, epsilon: 0.05, t_end: 5.0,
            r0: InitialLevel::GammaFactor(4.0), shape_index: 2, max_sweeps: 200, refine_iters: 1000,
            secondary_weight: 0.15,
        };
        let t0 = std::time::Instant::now();
        let cert = optimize_certificate(&assembled.sys, &synth_sched, &opts, &combined).unwrap();
        println!("ninebus certify took {:?}", t0.elapsed());
        let tight = mtl::robustify(
            &formula,
            &certsynth::bisim::modification_for(&cert, &frag).unwrap(),
        )
        .unwrap();
        let offs = certsynth::bisim::delta_offsets(&cert, &line_frag).unwrap();
        let starts = cert.schedule.segment_starts();
        let rates: Vec<f64> = cert.schedule.entries.iter().map(|&(q, _)| cert.modes[q].mu).collect();
        let mut pool = Vec::new();
        for (pi, no) in offs[0].iter().enumerate() {
            let mut pred = line_frag[0].preds[pi].clone();
            println!("line pred {}: b = {:.4}, delta = {:.4}", pred.label, pred.b, no.delta_hat[0]);
            pred.decay = Some(certsynth::mtl::PiecewiseDecay {
                starts: starts.clone(), rates: rates.clone(), amplitudes: no.delta_hat.clone(),
            });
            pool.push(PoolConstraint { tau: 2.0, pred });
        }
        let prob = SynthesisProblem {
            sys: &assembled.sys, sched: &synth_sched, formula: tight,
            x0: vec![0.0; 11], dt: 0.05, weights: vec![1.0, 100.0], input_bounds: None,
        margin: 0.02,
        };
        let t0 = std::time::Instant::now();
        match synth::synthesize_iterative(&prob, &pool) {
            Ok((res, log)) => {
                println!("ninebus iterative took {:?}: objective {:.4}, robustness {:.5}", t0.elapsed(), res.objective, res.robustness);
                for l in &log { println!("  {l}"); }
                // Check all 18 original line bounds on the final nominal.
                let mut all_ok = true;
                for lf in &lines {
                    for pred in [&lf.upper, &lf.lower] {
                        let check = certsynth::mtl::MtlFormula::always(2.0, 5.0, certsynth::mtl::MtlFormula::Pred(pred.clone()));
                        let m = mtl::robustness(&check, &res.nominal, 0.0).unwrap();
                        if m < 0.0 { all_ok = false; println!("  VIOLATED {}: {m:.4}", pred.label); }
                    }
                }
                println!("all 9 lines within bounds: {all_ok}");
            }
            Err(e) => println!("ninebus FAILED: {e}"),
        }
    }

    let placements: Vec<Vec<(&str, f64)>> = vec![
        vec![("2", 0.4), ("4", 0.1), ("5", 0.05), ("6", 0.05)],
        vec![("2", 0.4), ("5", 0.1), ("4", 0.05), ("6", 0.05)],
        vec![("4", 0.4), ("2", 0.1), ("5", 0.05), ("6", 0.05)],
        vec![("5", 0.4), ("2", 0.1), ("4", 0.05), ("6", 0.05)],
        vec![("4", 0.4), ("5", 0.1), ("2", 0.05), ("6", 0.05)],
        vec![("4", 0.4), ("5", 0.1), ("6", 0.05), ("7", 0.05)],
        vec![("5", 0.4), ("4", 0.1), ("2", 0.05), ("6", 0.05)],
    ];
    for (pi, loads) in placements.iter().enumerate() {
        let mut net = network::ninebus_network();
        net.loads = loads.iter().map(|(b, v)| (b.to_string(), *v)).collect();
        let dc = network::solve_dc(&net).expect("dc");
        println!("placement {pi}: loads {:?}", loads);
        for (l, br) in net.lines.iter().enumerate() {
            println!(
                "  line {}-{}: base {:+.4}, wind sens {:+.4}",
                br.from, br.to, dc.base_flows[l], dc.flow_sensitivity[l]
            );
        }
    }
}
