use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carve::ast::{load_ast, AstDocument};
use refexec::{
    build_fixture, dump_ast, read_plans, render_plan_files, run_rendered, trace_merged, trace_suite, trace_text,
    HarnessError, SuiteRun,
};

#[derive(Parser)]
#[command(name = "carve-refexec", version, about = "Reference harness for .sl projects")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Parse production and test sources into an AST interchange document.
    DumpAst {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        prod_dir: String,
        #[arg(long)]
        test_dir: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole suite under tracing.
    Trace {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        ast: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the merged filtered-test module under tracing.
    TraceMerged {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        ast: PathBuf,
        #[arg(long)]
        module: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plan documents into test files, one per dependency.
    Render {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run test files against the production sources of a project.
    RunTests {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        prod_dir: String,
        files: Vec<PathBuf>,
    },
    /// Regenerate the recorded artifacts of a corpus project in place.
    Fixture {
        #[arg(long)]
        root: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Other(String),
    #[error("{0} test(s) failed")]
    Failed(usize),
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn report(run: &SuiteRun) -> usize {
    let mut failed = 0;
    for o in &run.outcomes {
        match &o.fault {
            None => println!("ok   {} :: {}", o.file, o.title),
            Some(f) => {
                failed += 1;
                println!("FAIL {} :: {} ({f})", o.file, o.title);
            }
        }
    }
    failed
}

fn run(verb: Verb) -> Result<(), CliError> {
    match verb {
        Verb::DumpAst {
            root,
            prod_dir,
            test_dir,
            out,
        } => write(&out, &dump_ast(&root, &prod_dir, &test_dir)?.to_json_string()),
        Verb::Trace { ast, out, .. } => {
            let forest = load_ast(&ast).map_err(|e| CliError::Other(e.to_string()))?;
            let run = trace_suite(&forest, &ast.display().to_string());
            report(&run);
            write(&out, &trace_text(&run.events))
        }
        Verb::TraceMerged { ast, module, out, .. } => {
            let forest = load_ast(&ast).map_err(|e| CliError::Other(e.to_string()))?;
            let text =
                fs::read_to_string(&module).map_err(|e| CliError::Other(format!("{}: {e}", module.display())))?;
            let doc: AstDocument = serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))?;
            let run = trace_merged(&forest, &doc, &ast.display().to_string())?;
            report(&run);
            write(&out, &trace_text(&run.events))
        }
        Verb::Render { plans, out, .. } => {
            for name in render_plan_files(&read_plans(&plans)?, &out)? {
                println!("{}", out.join(name).display());
            }
            Ok(())
        }
        Verb::RunTests { root, prod_dir, files } => {
            let mut rendered = Vec::new();
            for f in files {
                let text = fs::read_to_string(&f).map_err(|e| CliError::Other(format!("{}: {e}", f.display())))?;
                let name = f
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                rendered.push((format!("__rendered__/{name}"), text));
            }
            let run = run_rendered(&root, &prod_dir, &rendered)?;
            match report(&run) {
                0 => Ok(()),
                n => Err(CliError::Failed(n)),
            }
        }
        Verb::Fixture { root } => {
            for (name, text) in build_fixture(&root)? {
                write(&root.join(&name), &text)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
