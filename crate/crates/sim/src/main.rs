use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parley_core::export::{ExportBundle, ExportFormat};
use parley_sim::run::admitted_usernames;
use parley_sim::{report_mood_delta, run_simulation, AdminClient, ParticipantScript, SimConfig};

#[derive(Parser)]
#[command(name = "parley-sim", version, about = "Scripted synthetic participants for parley experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run participants against a live experiment, then export and report.
    Simulate {
        #[arg(long, env = "PARLEY_URL", default_value = "http://127.0.0.1:8080")]
        base_url: String,
        #[arg(long)]
        slug: String,
        #[arg(long)]
        n: usize,
        /// ParticipantScript JSON.
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        concurrency: usize,
        /// Directory for the export files and report.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "PARLEY_ADMIN_USER", default_value = "admin")]
        admin_user: String,
        #[arg(long, env = "PARLEY_ADMIN_PASSWORD", hide_env_values = true)]
        admin_password: String,
    },
    /// Per-condition mean Post minus Pre score from an export directory.
    Report {
        /// Directory holding an `{experiment_id}.json` export.
        #[arg(long)]
        export: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        pre_keys: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        post_keys: Vec<String>,
    },
}

fn find_export(dir: &Path) -> Result<ExportBundle, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "report.json"))
        .collect();
    paths.sort();
    for p in paths {
        if let Ok(text) = std::fs::read_to_string(&p) {
            if let Ok(bundle) = ExportBundle::from_json(&text) {
                return Ok(bundle);
            }
        }
    }
    Err(format!("no JSON export found in {}", dir.display()))
}

async fn simulate(cfg: SimConfig, out: PathBuf, admin_user: String, admin_password: String) -> Result<(), String> {
    let http = reqwest::Client::new();
    let admin = AdminClient::login(http.clone(), &cfg.base_url, &admin_user, &admin_password)
        .await
        .map_err(|e| format!("admin login: {e}"))?;
    let outcome = run_simulation(&http, &cfg, &admin).await.map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    for format in [ExportFormat::Json, ExportFormat::Csv] {
        outcome.bundle.write_to_dir(&out, format).map_err(|e| e.to_string())?;
    }
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    std::fs::write(out.join("report.json"), format!("{report}\n")).map_err(|e| e.to_string())?;
    println!("{report}");
    outcome
        .report
        .reconcile(&outcome.bundle, &admitted_usernames(&outcome.logs))
        .map_err(|problems| format!("report does not match the export:\n  {}", problems.join("\n  ")))
}

#[tokio::main]
async fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Simulate {
            base_url,
            slug,
            n,
            script,
            seed,
            concurrency,
            out,
            admin_user,
            admin_password,
        } => {
            let script = std::fs::read_to_string(&script)
                .map_err(|e| format!("{}: {e}", script.display()))
                .and_then(|s| serde_json::from_str::<ParticipantScript>(&s).map_err(|e| format!("script: {e}")));
            match script {
                Ok(script) => {
                    let cfg = SimConfig {
                        base_url,
                        slug,
                        n,
                        script,
                        seed,
                        concurrency,
                    };
                    simulate(cfg, out, admin_user, admin_password).await
                }
                Err(e) => Err(e),
            }
        }
        Command::Report {
            export,
            pre_keys,
            post_keys,
        } => find_export(&export).and_then(|bundle| {
            let deltas = report_mood_delta(&bundle, &pre_keys, &post_keys, None).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&deltas).expect("serializes"));
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parley-sim: {e}");
            ExitCode::FAILURE
        }
    }
}
