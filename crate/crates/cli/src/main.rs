//! `semcal`: verify the semantic-calibration theory on toy fixtures,
//! simulate toy generation logs, evaluate logs into calibration reports,
//! and draw reliability diagrams.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semcal_cli::checks::FixtureCaps;
use semcal_cli::commands::{cmd_diagram, cmd_eval, cmd_simulate, cmd_verify, SimulateParams};
use semcal_cli::config::{
    validate_count, validate_sigma, validate_sizes, FileConfig, GroupBy, DEFAULT_FIXTURES,
    DEFAULT_FIXTURE_LENGTH, DEFAULT_FIXTURE_VOCAB, DEFAULT_QUESTIONS, DEFAULT_SAMPLES,
    DEFAULT_SIGMA, DEFAULT_SIM_LENGTH, DEFAULT_SIM_VOCAB,
};
use semcal_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "semcal",
    version,
    about = "Semantic-calibration toolkit: theorem verification, toy simulation, log evaluation, reliability diagrams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the verification suites and print a pass/fail table
    Verify {
        /// Fixture seed (outcomes are seed-independent; fixtures are not)
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on fixture vocabulary size
        #[arg(long)]
        max_vocab: Option<usize>,
        /// Cap on fixture sequence length
        #[arg(long)]
        max_length: Option<usize>,
        /// Number of random fixtures per sweep
        #[arg(long)]
        fixtures: Option<usize>,
        /// Write the check results as JSON here
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON config file; flags win over it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a generation log into calibration reports
    Eval {
        /// Newline-delimited generation log
        #[arg(long)]
        input: Option<PathBuf>,
        /// Kernel bandwidth for SmoothECE and the regression line
        #[arg(long, allow_hyphen_values = true)]
        sigma: Option<f64>,
        /// Output directory for pairs, exclusions, and reports
        #[arg(long)]
        output: Option<PathBuf>,
        /// 'none' (one pooled report) or 'dataset_tag' (one per tag)
        #[arg(long)]
        group_by: Option<String>,
        /// Turn malformed lines into hard errors
        #[arg(long)]
        strict: bool,
        /// JSON config file; flags win over it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a calibration report as an SVG reliability diagram
    Diagram {
        /// Calibration report JSON
        #[arg(long)]
        input: Option<PathBuf>,
        /// SVG file to write
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON config file; flags win over it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sample a toy instance into a generation log
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Questions in the simulated instance
        #[arg(long)]
        questions: Option<usize>,
        /// Samples per question
        #[arg(long)]
        samples: Option<usize>,
        /// Vocabulary size of the toy models
        #[arg(long)]
        max_vocab: Option<usize>,
        /// Sequence length of the toy models
        #[arg(long)]
        max_length: Option<usize>,
        /// Shift the truth mass of each question's top class (default: exactly calibrated)
        #[arg(long, allow_hyphen_values = true)]
        bias: Option<f64>,
        /// Log file to write
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON config file; flags win over it
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Verify {
            seed,
            max_vocab,
            max_length,
            fixtures,
            output,
            config,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let seed = seed.or(file.seed).unwrap_or(0);
            let caps = FixtureCaps {
                max_vocab: max_vocab.or(file.max_vocab).unwrap_or(DEFAULT_FIXTURE_VOCAB),
                max_length: max_length
                    .or(file.max_length)
                    .unwrap_or(DEFAULT_FIXTURE_LENGTH),
                count: validate_count(
                    fixtures.or(file.fixtures).unwrap_or(DEFAULT_FIXTURES),
                    "fixtures",
                )?,
            };
            validate_sizes(caps.max_vocab, caps.max_length)?;
            cmd_verify(seed, caps, output.or(file.output).as_deref())
        }
        Command::Eval {
            input,
            sigma,
            output,
            group_by,
            strict,
            config,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let input = input
                .or(file.input)
                .ok_or_else(|| CliError::Usage("eval requires --input".to_string()))?;
            let sigma = validate_sigma(sigma.or(file.sigma).unwrap_or(DEFAULT_SIGMA))?;
            let output = output
                .or(file.output)
                .ok_or_else(|| CliError::Usage("eval requires --output".to_string()))?;
            let group_by = GroupBy::parse(
                group_by
                    .or(file.group_by)
                    .unwrap_or_else(|| "none".to_string())
                    .as_str(),
            )?;
            let strict = strict || file.strict.unwrap_or(false);
            cmd_eval(&input, sigma, &output, group_by, strict)
        }
        Command::Diagram {
            input,
            output,
            config,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let input = input
                .or(file.input)
                .ok_or_else(|| CliError::Usage("diagram requires --input".to_string()))?;
            let output = output
                .or(file.output)
                .ok_or_else(|| CliError::Usage("diagram requires --output".to_string()))?;
            cmd_diagram(&input, &output)
        }
        Command::Simulate {
            seed,
            questions,
            samples,
            max_vocab,
            max_length,
            bias,
            output,
            config,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let params = SimulateParams {
                seed: seed.or(file.seed).unwrap_or(0),
                questions: validate_count(
                    questions.or(file.questions).unwrap_or(DEFAULT_QUESTIONS),
                    "questions",
                )?,
                samples: validate_count(
                    samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
                    "samples",
                )?,
                vocab: max_vocab.or(file.max_vocab).unwrap_or(DEFAULT_SIM_VOCAB),
                length: max_length.or(file.max_length).unwrap_or(DEFAULT_SIM_LENGTH),
                bias: bias.or(file.bias),
                output: output
                    .or(file.output)
                    .ok_or_else(|| CliError::Usage("simulate requires --output".to_string()))?,
            };
            validate_sizes(params.vocab, params.length)?;
            cmd_simulate(&params)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
