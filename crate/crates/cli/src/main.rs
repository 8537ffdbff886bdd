// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


//! `drc` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use drc_cli::bench::{bench_modes, bench_scaling, scaling_csv, BenchOp, ScalingConfig, ScalingMode};
use drc_cli::{run_pipeline, PipelineConfig, PipelineError, RunOptions};
use drc_core::fabric::Backend;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Inproc,
    Tcp,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Inproc => Backend::InProcess,
            BackendArg::Tcp => Backend::Tcp,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "drc", version, about = "Run data and learning pipelines on a pilot")]
struct Cli {
    /// Session seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Communication backend; overrides the config file.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true, env = "DRC_LOG", default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a pipeline config and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Strong or weak scaling of a single distributed operator.
    BenchScaling {
        #[arg(long, value_enum)]
        op: OpArg,
        #[arg(long, value_enum, default_value = "strong")]
        mode: ModeArg,
        /// Total rows (strong) or rows per rank (weak).
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        parallelism: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Pilot size; defaults to the largest parallelism.
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic join -> train -> infer example (CSVs and config).
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        slots: usize,
    },
    /// Run one config in batch and pipelined mode and compare makespans.
    BenchModes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OpArg {
    Sort,
    Join,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Strong,
    Weak,
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let opts = RunOptions {
        seed: cli.seed,
        backend: cli.backend.map(Backend::from),
        ..Default::default()
    };
    let result: anyhow::Result<u8> = match cli.command {
        Command::Run { config, report } => {
            let opts = RunOptions { report_path: report, ..opts };
            match run_pipeline(&config, &opts) {
                Ok(run) => {
                    println!("{}", serde_json::to_string_pretty(&run.report).expect("report serializes"));
                    for t in run.report.tasks.iter().filter(|t| t.status != "done") {
                        eprintln!("task `{}` failed: {}", t.uid, t.reason.as_deref().unwrap_or(""));
                    }
                    Ok(run.exit_code() as u8)
                }
                Err(PipelineError::Config(msg)) => {
                    eprintln!("config error: {msg}");
                    Ok(2)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::BenchScaling {
            op,
            mode,
            rows,
            parallelism,
            reps,
            slots,
            out,
        } => {
            let cfg = ScalingConfig {
                op: match op {
                    OpArg::Sort => BenchOp::Sort,
                    OpArg::Join => BenchOp::Join,
                },
                mode: match mode {
                    ModeArg::Strong => ScalingMode::Strong,
                    ModeArg::Weak => ScalingMode::Weak,
                },
                base_rows: rows,
                parallelisms: parallelism,
                reps,
                seed: cli.seed.unwrap_or(42),
                backend: opts.backend.unwrap_or(Backend::InProcess),
                slots,
            };
            bench_scaling(&cfg)
                .map_err(anyhow::Error::from)
                .and_then(|rows| write_or_print(out.as_ref(), &scaling_csv(&rows)))
                .map(|_| 0)
        }
        Command::GenData { out_dir, rows, slots } => {
            drc_cli::synth::write_regression_example(&out_dir, rows, slots, cli.seed.unwrap_or(42))
                .with_context(|| format!("writing {}", out_dir.display()))
                .map(|p| {
                    println!("{}", p.display());
                    0
                })
        }
        Command::BenchModes { config, out } => PipelineConfig::load(&config)
            .map_err(|e| anyhow::anyhow!("config error: {e}"))
            .and_then(|cfg| bench_modes(&cfg, &opts).map_err(anyhow::Error::from))
            .and_then(|r| {
                let text = serde_json::to_string_pretty(&r).expect("report serializes") + "\n";
                write_or_print(out.as_ref(), &text)
            })
            .map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
