//! `fabula`: run, replay and evaluate scenario documents.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fabula_core::components::actor::{HumanInput, HumanReply, PendingActionRequest};
use fabula_core::components::{ComponentRegistry, Resources};
use fabula_core::lm::ProviderKind;
use fabula_core::prefab::{validate, PrefabRegistry, ScenarioDoc};
use fabula_core::runner::{
    self, crossplay, LoadedScenario, ReplayVerdict, RunOptions, RunnerError, EXIT_DIVERGED, EXIT_OK, EXIT_RUNTIME,
    EXIT_VALIDATION,
};
use fabula_core::trace::JsonlSink;

#[derive(Parser)]
#[command(name = "fabula", version, about = "Generative multi-actor simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
        /// Trace output (JSONL).
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
        /// Answer human actors' requests on stdin.
        #[arg(long)]
        interactive: bool,
    },
    /// Re-run a recorded trace against its cassette and compare.
    Replay {
        trace: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        cassette: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Run the cross-play matrix and write CSV.
    Crossplay {
        spec: PathBuf,
        #[arg(long, default_value = "crossplay.csv")]
        out: PathBuf,
    },
    /// List the prefab catalog.
    ListPrefabs {
        /// Print the catalog as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Validate a scenario document.
    Validate { scenario: PathBuf },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    s.parse()
}

impl RunFlags {
    fn options(&self) -> RunOptions {
        RunOptions {
            provider: self.provider,
            script: self.script.clone(),
            cassette: self.cassette.clone(),
            seed: self.seed,
            max_steps: self.max_steps,
            threads: self.threads,
        }
    }
}

/// Human input typed on stdin, one answer per line.
struct StdinInput;

impl HumanInput for StdinInput {
    fn await_action(&self, request: &PendingActionRequest, _timeout: Option<Duration>) -> HumanReply {
        let mut stderr = io::stderr().lock();
        let _ = writeln!(
            stderr,
            "\n{}\n{}",
            request.context_summary,
            request.spec.render_call(request.entity.as_str())
        );
        for (i, option) in request.spec.options.iter().enumerate() {
            let _ = writeln!(stderr, "  {}. {}", i + 1, option);
        }
        let _ = write!(stderr, "> ");
        let _ = stderr.flush();
        let mut line = String::new();
        match io::stdin().lock().read_line(&mut line) {
            Ok(0) | Err(_) => HumanReply::Closed,
            Ok(_) => HumanReply::Submitted(line.trim().to_string()),
        }
    }
}

fn report(error: &RunnerError) -> i32 {
    eprintln!("error: {error}");
    error.exit_code()
}

fn run(scenario: &Path, flags: &RunFlags, out: &Path, interactive: bool) -> i32 {
    let loaded = match LoadedScenario::load(scenario) {
        Ok(loaded) => loaded,
        Err(e) => return report(&e.into()),
    };
    let report_invalid = validate(&loaded.doc, &PrefabRegistry::builtin(), &ComponentRegistry::builtin());
    if !report_invalid.is_ok() {
        eprint!("{report_invalid}");
        return EXIT_VALIDATION;
    }
    let resources = Resources {
        human_input: interactive.then(|| Arc::new(StdinInput) as Arc<dyn HumanInput>),
    };
    let file = match std::fs::File::create(out) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: {}: {e}", out.display());
            return EXIT_RUNTIME;
        }
    };
    let sink = Box::new(JsonlSink::new(io::BufWriter::new(file)));
    match runner::run_scenario(&loaded, &flags.options(), sink, &resources) {
        Ok(outcome) => {
            println!("steps: {}", outcome.steps);
            println!("terminated: {}", outcome.terminated);
            println!("actions: {}", outcome.actions);
            println!("warnings: {}", outcome.warnings);
            for (entity, score) in &outcome.scores {
                println!("score {entity}: mean {:.4} over {}", score.mean, score.count);
            }
            println!("trace: {}", out.display());
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn replay(trace: &Path, scenario: &Path, cassette: &Path, threads: usize) -> i32 {
    let expected = match std::fs::read_to_string(trace) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: {}: {e}", trace.display());
            return EXIT_RUNTIME;
        }
    };
    let loaded = match LoadedScenario::load(scenario) {
        Ok(loaded) => loaded,
        Err(e) => return report(&e.into()),
    };
    match runner::replay(&loaded, &expected, cassette, threads) {
        Ok((ReplayVerdict::Identical, _)) => {
            println!("replay identical");
            EXIT_OK
        }
        Ok((ReplayVerdict::Diverged(seq), _)) => {
            println!("replay diverged at seq {seq}");
            EXIT_DIVERGED
        }
        Err(e) => report(&e),
    }
}

fn crossplay_cmd(spec_path: &Path, out: &Path) -> i32 {
    let spec = match runner::CrossplaySpec::load(spec_path) {
        Ok(spec) => spec,
        Err(e) => return report(&e.into()),
    };
    let base = spec_path.parent().unwrap_or(Path::new(""));
    match crossplay(&spec, base) {
        Ok((csv, rows)) => {
            if let Err(e) = std::fs::write(out, &csv) {
                eprintln!("error: {}: {e}", out.display());
                return EXIT_RUNTIME;
            }
            let failed = rows.iter().filter(|r| r.status == "failed").count();
            println!("{} rows written to {} ({failed} failed)", rows.len(), out.display());
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn list_prefabs(json: bool) -> i32 {
    let registry = PrefabRegistry::builtin();
    if json {
        println!("{}", registry.catalog_json());
    } else {
        for prefab in registry.list() {
            let role = match prefab.role {
                fabula_core::prefab::PrefabRole::Actor => "actor",
                fabula_core::prefab::PrefabRole::Gm => "gm",
            };
            println!("{:<18} {:<5} {}", prefab.name, role, prefab.description);
        }
    }
    EXIT_OK
}

fn validate_cmd(path: &Path) -> i32 {
    let doc = match ScenarioDoc::load(path) {
        Ok(doc) => doc,
        Err(e) => return report(&e.into()),
    };
    let result = validate(&doc, &PrefabRegistry::builtin(), &ComponentRegistry::builtin());
    eprint!("{result}");
    if result.is_ok() {
        println!("ok");
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run {
            scenario,
            flags,
            out,
            interactive,
        } => run(scenario, flags, out, *interactive),
        Command::Replay {
            trace,
            scenario,
            cassette,
            threads,
        } => replay(trace, scenario, cassette, *threads),
        Command::Crossplay { spec, out } => crossplay_cmd(spec, out),
        Command::ListPrefabs { json } => list_prefabs(*json),
        Command::Validate { scenario } => validate_cmd(scenario),
    };
    ExitCode::from(code as u8)
}
