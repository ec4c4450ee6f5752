//! Runs a scenario file the way the binary does and prints the checks.
//! Usage: `cargo run --example scenario_file -- [command] [scenario.json] [key=value ...]`.

use measure_flow::cli::{apply_overrides, execute, pretty, Command};

fn main() {
    let mut args = std::env::args().skip(1);
    let command = args.next().unwrap_or_else(|| "solve-lq".into());
    let path = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/lq_decoupled.json").into());
    let command: Command = clap::ValueEnum::from_str(&command, false).expect("known command");
    let raw = std::fs::read(&path).expect("readable scenario");
    let cfg = serde_json::from_slice(&raw).expect("JSON scenario");
    let overrides: Vec<String> = args.collect();
    let cfg = apply_overrides(cfg, &overrides).unwrap_or_else(|e| panic!("{e}"));
    match execute(command, &cfg) {
        Ok(out) => {
            print!("{}", String::from_utf8(pretty(&out.report.checks)).unwrap());
            for (name, bytes) in &out.files {
                println!("{name}: {} bytes", bytes.len());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
