use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carve::pipeline::{read_report, report_metrics, run_pipeline, Outcome, RunConfig, Step};
use carve::resolve::TargetSpec;

const EXIT_NOTHING_TO_AUGMENT: u8 = 2;
const EXIT_PIPELINE_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "carve",
    version,
    about = "Carve dependency unit tests from integration-test traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Resolve the component and its dependency call sites.
    Resolve(RunArgs),
    /// Select the integration tests that reach a call site.
    Filter(RunArgs),
    /// Build seed execution paths.
    Analyze(RunArgs),
    /// Generate test plans and canonical renderings.
    Generate(RunArgs),
    /// Run the full pipeline, including harness rendering.
    Run(RunArgs),
    /// Print the metrics table of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long)]
    prod_dir: String,
    #[arg(long)]
    test_dir: String,
    #[arg(long)]
    component: String,
    #[arg(long)]
    component_file: String,
    #[arg(long)]
    out: PathBuf,
    /// Harness command; verb and path arguments are appended.
    #[arg(long)]
    harness_cmd: Option<String>,
    /// Recorded full-suite trace; no subject code is executed.
    #[arg(long)]
    from_trace: Option<PathBuf>,
    /// AST dump for --from-trace (defaults to the one named in the trace header).
    #[arg(long)]
    ast: Option<PathBuf>,
    #[arg(long)]
    keep_intermediates: bool,
}

impl RunArgs {
    fn config(self, stop_after: Step) -> RunConfig {
        RunConfig {
            root: self.root,
            spec: TargetSpec {
                component_name: self.component,
                component_file: self.component_file,
                production_dir: self.prod_dir,
                test_dir: self.test_dir,
            },
            output_dir: self.out,
            harness_cmd: self.harness_cmd,
            from_trace: self.from_trace,
            ast: self.ast,
            keep_intermediates: self.keep_intermediates,
            stop_after: Some(stop_after),
        }
    }
}

fn print_step(outcome: &Outcome, step: Step) {
    let text = match step {
        Step::Resolve => outcome.sites.as_ref().map(|s| s.to_json_string()),
        Step::Filter => outcome.filter.as_ref().map(|f| f.to_json_string()),
        Step::Analyze => outcome.analysis.as_ref().map(|a| a.to_json_string()),
        Step::Generate | Step::Render => None,
    };
    if let Some(text) = text {
        print!("{text}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, step) = match cli.command {
        Verb::Report { out } => {
            return match read_report(&out) {
                Ok(report) => {
                    print!("{}", report_metrics(&report));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_PIPELINE_ERROR)
                }
            };
        }
        Verb::Resolve(a) => (a, Step::Resolve),
        Verb::Filter(a) => (a, Step::Filter),
        Verb::Analyze(a) => (a, Step::Analyze),
        Verb::Generate(a) => (a, Step::Generate),
        Verb::Run(a) => (a, Step::Render),
    };
    match run_pipeline(&args.config(step)) {
        Ok(outcome) => {
            print_step(&outcome, step);
            for (s, t) in &outcome.report.timings {
                log::info!("{}: {:.3}s", s.as_str(), t.as_secs_f64());
            }
            if step >= Step::Generate || (step >= Step::Filter && outcome.report.nothing_to_augment()) {
                eprint!("{}", report_metrics(&outcome.report));
            }
            if step >= Step::Filter && outcome.report.nothing_to_augment() {
                eprintln!("nothing to augment: no test reaches a dependency call site");
                return ExitCode::from(EXIT_NOTHING_TO_AUGMENT);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PIPELINE_ERROR)
        }
    }
}
