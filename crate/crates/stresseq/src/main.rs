use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stresseq::config::Config;
use stresseq::harness::{self, HarnessError};

/// Adaptive Taylor-Hood elasticity with equilibrated stress error bounds.
#[derive(Parser)]
#[command(name = "stresseq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive loop described by a configuration file.
    Run { config: PathBuf },
    /// Print size and quality of a mesh file.
    MeshInfo { mesh: PathBuf },
    /// Check the equilibration on the initial mesh only.
    Verify { config: PathBuf },
}

fn run(cmd: Command) -> Result<ExitCode, HarnessError> {
    match cmd {
        Command::Run { config } => {
            let config = Config::read(&config)?;
            let out = harness::run_with(&config, |s| {
                let error = s.error.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into());
                println!(
                    "step {:>3}  N {:>8}  eta {:.3e}  bound {:.3e}  error {error}",
                    s.step,
                    s.n_dofs,
                    s.eta_total(),
                    s.bound.sqrt()
                );
            })?;
            for s in out.run.history.steps.iter().filter(|s| s.error.is_some()) {
                println!(
                    "step {:>3}  error {:.3e}  effectivity {:.3}",
                    s.step,
                    s.error.unwrap_or(f64::NAN),
                    s.effectivity().unwrap_or(f64::NAN)
                );
            }
            println!("wrote {} files to {}", out.files.len(), out.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::MeshInfo { mesh } => {
            println!("{}", harness::mesh_info(&mesh)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config } => {
            let config = Config::read(&config)?;
            let v = harness::verify(&config)?;
            let r = &v.residuals;
            println!("divergence {:.3e}", r.divergence);
            println!("jump       {:.3e}", r.jump);
            println!("neumann    {:.3e}", r.neumann);
            println!("symmetry   {:.3e}", r.symmetry);
            println!("scale      {:.3e}", v.scale);
            println!("free patches {} of {}, compatibility {:.3e}", v.n_free_patches, v.n_patches, v.compatibility);
            if v.passed() {
                println!("equilibration ok");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error[verify]: equilibration residuals exceed 1e-9 * scale");
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(match e {
                HarnessError::Config(_) => 2,
                HarnessError::Problem(_) => 4,
                HarnessError::Io { .. } => 5,
            })
        }
    }
}
