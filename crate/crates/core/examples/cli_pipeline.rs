// The command-line pipeline driven in-process: generate, fit, segment,
// track and evaluate a small scene.

use std::error::Error;
use std::ffi::OsString;

use gausscade::cli::main_with;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"scene": {"kind": "pendulum", "n_gaussians": 200, "n_frames": 3, "motion": 10, "seed": 0},
            "train": {"layer_sizes": [4, 16, 64], "iters_per_frame": 30}}"#,
    )?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (scene, fit) = (path("scene"), path("fit"));
    let (seg, track, eval) = (path("seg"), path("track"), path("eval"));
    let steps: [&[&str]; 5] = [
        &["generate", "--out", &scene],
        &["fit", "--scene", &scene, "--out", &fit],
        &["segment", "--scene", &scene, "--fit", &fit, "--out", &seg],
        &["track", "--scene", &scene, "--fit", &fit, "--out", &track],
        &["eval", "--scene", &scene, "--fit", &fit, "--out", &eval],
    ];
    for step in steps {
        let mut args: Vec<OsString> = vec!["gausscade".into(), "--config".into(), config.clone().into()];
        args.extend(step.iter().map(OsString::from));
        let code = main_with(args);
        println!("{} -> exit {code}", step[0]);
        if code != 0 {
            return Err(format!("{} failed with exit code {code}", step[0]).into());
        }
    }
    println!("{}", std::fs::read_to_string(dir.path().join("eval/eval.json"))?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
