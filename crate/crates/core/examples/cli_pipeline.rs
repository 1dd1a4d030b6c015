//! Drives the `apalette` command line end to end in a temporary directory:
//! dataset synthesis, control extraction, training, generation and evaluation.

use audio_palette::cli::run;

fn step(args: &[&str]) -> audio_palette::Result<()> {
    println!("$ apalette {}", args.join(" "));
    let code = run(std::iter::once("apalette").chain(args.iter().copied()));
    if code != 0 {
        return Err(audio_palette::Error::InvalidArgument(format!("command exited with {code}")));
    }
    Ok(())
}

pub fn run_example() -> audio_palette::Result<()> {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let p = |s: &str| tmp.path().join(s).display().to_string();
    let (data, ctrls, run_dir, eval_dir) = (p("data"), p("ctrls"), p("run"), p("eval"));
    let manifest = format!("{data}/manifest.tsv");
    let config = p("tiny.cfg");
    std::fs::write(
        &config,
        "seed = 5\nd_model = 32\nn_layers = 2\nn_heads = 2\nbase_steps = 20\nsteps = 10\nbatch_size = 4\ncrop_frames = 32\nsample_steps = 10\n",
    )
    .expect("config file");

    step(&["synth-data", "--n", "4", "--seed", "7", "--duration", "0.5", "--out", &data])?;
    let wav = format!("{data}/clips/0001.wav");
    step(&["extract", "--out", &ctrls, &wav])?;
    step(&["train", "--data", &manifest, "--out", &run_dir, "--config", &config])?;
    let (base, adapters) = (format!("{run_dir}/base.ckpt"), format!("{run_dir}/adapters.ckpt"));
    let apcs = format!("{ctrls}/0001.apcs");
    let out_wav = p("gen/siren.wav");
    step(&[
        "generate", "--base", &base, "--adapters", &adapters, "--prompt", "a siren with a rising pitch",
        "--ref-controls", &apcs, "--s-ctrls", "2.0", "--config", &config, "--out", &out_wav,
    ])?;
    step(&[
        "evaluate", "--data", &manifest, "--base", &base, "--checkpoint", &format!("text={adapters}"),
        "--checkpoint", &format!("full={adapters}"), "--config", &config, "--out", &eval_dir,
    ])?;
    let sidecar = std::fs::read_to_string(p("gen/siren.txt")).expect("sidecar");
    assert!(sidecar.contains("s_ctrls = 2"));
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
