// Beta sweep against the calibrated nine-bus placement.
use certsynth::bisim::{delta_offsets, optimize_certificate, CertificateOptions, InitialLevel};
use certsynth::mtl::{self, parse_formula, FragmentBlock, ParseOptions, VarKind, VarRef, VarTable};
use certsynth::powergrid::{self, network, GridParams, WtgParams};
use certsynth::sysmodel::ModeSchedule;

fn main() {
    let wtg = WtgParams::default();
    let grid = GridParams::default();
    let assembled = powergrid::assemble_switched(&wtg, &grid).expect("assemble");
    let synth_sched = ModeSchedule::single(0, 5.0);
    let mut vars = VarTable::from_names(&assembled.sys.state_names, &assembled.sys.input_names);
    vars.insert("df", VarRef { kind: VarKind::State, index: 7, scale: 1.0 / (2.0 * std::f64::consts::PI) });
    vars.insert("dfr", VarRef { kind: VarKind::State, index: 2, scale: 1.0 / (2.0 * std::f64::consts::PI) });
    let text = "G[0,5] (df <= 0.5 & df >= -0.5 & dfr <= 10 & dfr >= -10) & G[2,5] (df <= 0.4 & df >= -0.4)";
    let formula = parse_formula(text, &vars, ParseOptions::default()).unwrap().formula;
    let frag = mtl::fragment_blocks(&formula, false).unwrap();
    let mut net = network::ninebus_network();
    net.loads = vec![
        ("2".into(), 0.4),
        ("4".into(), 0.1),
        ("8".into(), 0.05),
        ("9".into(), 0.05),
    ];
    let lines = network::line_flow_outputs(&net, &assembled.reduced, &wtg, &grid, 0.25).unwrap();
    let line_frag = vec![FragmentBlock {
        tau: 2.0,
        t_end: 5.0,
        preds: lines.iter().flat_map(|lf| [lf.upper.clone(), lf.lower.clone()]).collect(),
    }];
    let mut combined = frag.clone();
    combined.extend(line_frag.iter().cloned());
    for beta in [0.05f64, 0.1, 0.15, 0.25] {
        let opts = CertificateOptions {
            mu: 0.02,
            zeta: 1.0,
            epsilon: 0.05,
            t_end: 5.0,
            r0: InitialLevel::GammaFactor(4.0),
            shape_index: 2,
            max_sweeps: 200,
            refine_iters: 1000,
            secondary_weight: beta,
        };
        match optimize_certificate(&assembled.sys, &synth_sched, &opts, &combined) {
            Ok(cert) => {
                let offs = delta_offsets(&cert, &line_frag).unwrap();
                let df = cert.offsets[0][0].delta_hat[0] / (2.0 * std::f64::consts::PI);
                let dfr = cert.offsets[0][2].delta_hat[0] / (2.0 * std::f64::consts::PI);
                let dline = offs[0][0].delta_hat[0];
                println!("beta {beta}: df {df:.4} Hz, dfr {dfr:.3} Hz, line {dline:.4}");
            }
            Err(e) => println!("beta {beta}: FAILED {e}"),
        }
    }
}
