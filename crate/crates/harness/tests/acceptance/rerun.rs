//! The `run` command repeated on the same spec and seed writes identical
//! bytes.

use std::path::Path;
use std::process::Command;

use crate::common::Outcome;

const SPECS: [(&str, &str); 5] = [
    (
        "lasso",
        r#"{"version":1,"problem":{"family":"lasso","samples":40,"features":20,"tau":0.1,"data":{"seed":7}},
            "algorithm":"primal_first","schedule":{"kind":"bernoulli","p":0.5},
            "errors":{"kind":"decay_power","scale":1.0,"exponent":2.0},
            "lambda":1.0,"stop":{"max_iters":2000},"seed":11}"#,
    ),
    (
        "tv",
        r#"{"version":1,"problem":{"family":"tv1d","len":60,"weight":0.3,"data":{"seed":2}},
            "algorithm":"dual_first","schedule":{"kind":"uniform_single"},
            "lambda":0.9,"stop":{"max_iters":3000,"tol":1e-9},"seed":4}"#,
    ),
    (
        "box",
        r#"{"version":1,"problem":{"family":"box_ls","samples":30,"features":10,"lo":-0.2,"hi":0.3,"data":{"seed":3}},
            "algorithm":"primal_first","schedule":{"kind":"bernoulli","p":0.7},
            "lambda":1.0,"stop":{"max_iters":1000},"seed":5}"#,
    ),
    (
        "ridge",
        r#"{"version":1,"problem":{"family":"ridge_consensus","graph":{"kind":"ring","agents":5},"dim":10,"rows":12,
            "reg":0.1,"data":{"seed":7}},
            "algorithm":"dist_optimization","schedule":{"kind":"uniform_single"},
            "lambda":1.0,"stop":{"max_iters":5000},"seed":9}"#,
    ),
    (
        "pairwise",
        r#"{"version":1,"problem":{"family":"ridge_consensus","graph":{"kind":"path","agents":4},"dim":3,"rows":5,
            "reg":0.2,"data":{"seed":1}},
            "algorithm":"dist_pairwise","schedule":{"kind":"bernoulli","p":0.4},
            "lambda":1.0,"stop":{"max_iters":3000},"seed":2}"#,
    ),
];

fn run_once(spec: &Path, out: &Path, seed: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rpd"));
    cmd.arg("run").arg(spec).arg("--out").arg(out).env_remove("RPD_SEED");
    if let Some(s) = seed {
        cmd.args(["--seed", s]);
    }
    let status = cmd.output().map_err(|e| e.to_string())?;
    match status.status.code() {
        Some(0) | Some(4) => Ok(()),
        code => Err(format!("{}: exit {code:?}: {}", spec.display(), String::from_utf8_lossy(&status.stderr))),
    }
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (name, text) in SPECS {
        let spec = dir.path().join(format!("{name}.json"));
        std::fs::write(&spec, text).map_err(|e| e.to_string())?;
        for seed in [None, Some("123")] {
            let (a, b) = (dir.path().join("first"), dir.path().join("second"));
            run_once(&spec, &a, seed)?;
            run_once(&spec, &b, seed)?;
            for ext in ["csv", "json"] {
                let file = format!("{name}.{ext}");
                let (x, y) = (std::fs::read(a.join(&file)), std::fs::read(b.join(&file)));
                match (x, y) {
                    (Ok(x), Ok(y)) if x == y => compared += 1,
                    (Ok(_), Ok(_)) => return Err(format!("{file} (seed {seed:?}) differs between runs")),
                    (x, y) => return Err(format!("{file}: {:?} {:?}", x.err(), y.err())),
                }
            }
        }
    }
    Ok(format!("{compared} output files byte-identical across reruns"))
}
