use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qsim::scenarios::{run, Protocol, RunOptions, ScenarioConfig};
use qsim::QsimError;

/// Open-system simulations of a flux qubit coupled to a nanotube resonator.
#[derive(Parser, Debug)]
#[command(name = "qsim", version)]
struct Cli {
    /// cool, squeeze, cat, detect, sweep_amplitude, sweep_detuning,
    /// sweep_gamma or validate_expansion
    protocol: String,
    /// JSON scenario configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `output`, then `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweep points.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override the Fock cutoff.
    #[arg(long)]
    cutoff: Option<usize>,
    /// Override the integrator relative tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn execute(cli: &Cli) -> Result<bool, QsimError> {
    let protocol = Protocol::parse(&cli.protocol)?;
    let mut cfg = ScenarioConfig::from_path(&cli.config)?;
    if cfg.protocol != protocol {
        return Err(QsimError::Config(format!(
            "command line asks for `{}` but the configuration describes `{}`",
            protocol.name(),
            cfg.protocol.name()
        )));
    }
    if let Some(n) = cli.cutoff {
        cfg.fock_cutoff = n;
    }
    if let Some(t) = cli.tol {
        cfg.tolerance = t;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = run(&cfg, &RunOptions { workers: cli.workers })?;
    report.write(&out)?;
    for (k, v) in &report.headline {
        println!("{k} = {v}");
    }
    println!("wrote {}", out.display());
    Ok(report.gate_passed())
}

/// Runs a parsed command line and returns the process exit code.
fn run_cli(cli: &Cli) -> u8 {
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: {}", QsimError::ConvergenceGate("headline scalars moved by more than 1e-3".into()));
            4
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::try_parse() {
        Ok(cli) => ExitCode::from(run_cli(&cli)),
        Err(e) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 2 } else { 0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn configs() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
    }

    fn cli(args: &[&str], out: &Path) -> Cli {
        let mut argv = vec!["qsim"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
        Cli::try_parse_from(argv).unwrap()
    }

    fn write_config(dir: &Path, body: &str) -> String {
        let p = dir.join("config.json");
        std::fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn read_report(dir: &Path) -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
    }

    #[test]
    fn squeeze_run_writes_report_and_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join("squeeze.json");
        assert_eq!(run_cli(&cli(&["squeeze", "--config", cfg.to_str().unwrap()], dir.path())), 0);
        let report = read_report(dir.path());
        assert_eq!(report["protocol"], "squeeze");
        assert_eq!(report["convergence_gate"]["passed"], true);
        assert!(report["headline"]["fidelity_squeezed_vacuum"].as_f64().unwrap() > 0.99);
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn configuration_problems_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let squeeze = configs().join("squeeze.json");
        // protocol on the command line disagrees with the file
        assert_eq!(run_cli(&cli(&["cool", "--config", squeeze.to_str().unwrap()], dir.path())), 2);
        assert_eq!(run_cli(&cli(&["bake", "--config", squeeze.to_str().unwrap()], dir.path())), 2);
        let unknown_key = write_config(
            dir.path(),
            r#"{"protocol": "cool", "fock_cutoff": 10, "coupling": {"lambda": 0.05},
                "drives": {"eps_minus_over_2pi_hz": 1e6}, "rates": {"qubit_decay_over_2pi_hz": 4e5},
                "colour": "blue"}"#,
        );
        assert_eq!(run_cli(&cli(&["cool", "--config", &unknown_key], dir.path())), 2);
        let missing = dir.path().join("absent.json");
        assert_eq!(run_cli(&cli(&["cool", "--config", missing.to_str().unwrap()], dir.path())), 2);
        assert!(!dir.path().join("report.json").exists());
    }

    #[test]
    fn missing_required_argument_is_a_usage_error() {
        let err = Cli::try_parse_from(["qsim", "cool"]).unwrap_err();
        assert!(err.use_stderr());
    }

    #[test]
    fn truncation_failure_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join("squeeze.json");
        assert_eq!(run_cli(&cli(&["squeeze", "--config", cfg.to_str().unwrap(), "--cutoff", "6"], dir.path())), 3);
    }

    #[test]
    fn unconverged_cutoff_exits_four_and_keeps_the_report() {
        let dir = tempfile::tempdir().unwrap();
        // a hot, strongly damped oscillator cannot be represented on four levels
        let cfg = write_config(
            dir.path(),
            r#"{"protocol": "cool", "fock_cutoff": 4, "coupling": {"lambda": 0.05},
                "drives": {"eps_minus_over_2pi_hz": 3.5e6},
                "rates": {"qubit_decay_over_2pi_hz": 4e5, "mech_decay_over_2pi_hz": 1e4, "n_th": 50}}"#,
        );
        let out = dir.path().join("out");
        assert_eq!(run_cli(&cli(&["cool", "--config", &cfg], &out)), 4);
        assert_eq!(read_report(&out)["convergence_gate"]["passed"], false);
    }
}
