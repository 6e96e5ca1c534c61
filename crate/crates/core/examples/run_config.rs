//! Drives the configuration-based commands from code: validate a shipped
//! configuration, then train and sweep into a temporary directory.

use std::path::Path;

use dynaconv::cli::{run, validate_file, Command, Invocation};

fn main() -> dynaconv::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic-stride.json");
    let violations = validate_file(&config)?;
    println!("{}: {} violations", config.display(), violations.len());

    let out = std::env::temp_dir().join("dynaconv_run_config");
    let inv = Invocation {
        overrides: ["data.source.n=500", "data.eval_samples=40", "train.epochs=2", "train.decay_epoch=null", r#"sweep.slots=["D"]"#]
            .map(String::from)
            .to_vec(),
        output: Some(out.clone()),
        ..Invocation::new(&config)
    };
    for command in [Command::Train, Command::Sweep] {
        let m = run(command, &inv)?;
        println!("{}: {} artifacts, config hash {}", m.command, m.artifacts.len(), &m.config_hash[..12]);
        println!("{}", serde_json::to_string_pretty(&m.summary)?);
    }
    println!("outputs in {}", out.display());
    Ok(())
}
