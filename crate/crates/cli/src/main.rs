use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dqcsim::analysis::{
    grid, search_circuit_distance, sweep, to_csv, DistanceSearch, SweepCell, SweepConfig, SweepRow,
};
use dqcsim::circuit::{
    build_nonlocal_cnot_experiment, build_teleportation_experiment, census, serialize, CircuitKind, CircuitProgram,
    NoiseParams,
};
use dqcsim::codes::{CodeDescriptor, StabilizerCode};
use dqcsim::decoder::{BpConfig, BpOsdDecoder, BpSchedule, OsdConfig};
use dqcsim::dem::{dem_from_table, parse_dem, serialize_dem};
use dqcsim::sim::{ShotBatch, SignatureTable};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dqcsim", version, about = "Distributed QEC circuit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Root seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, global = true, env = "DQCSIM_THREADS")]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Build a code and report its parameters.
    BuildCode {
        #[arg(long)]
        code: String,
        /// Also print the sparse check matrices.
        #[arg(long)]
        dump: bool,
    },
    /// Write the noisy circuit and print its gate census.
    Emit {
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the detector error model.
    Dem {
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample shots into a packed batch file.
    Sample {
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        shots: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a packed batch against a detector error model.
    Decode {
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        batch: PathBuf,
        /// Per-shot failure flags, one 0/1 per line.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        decoder: DecoderArgs,
    },
    /// Sample and decode one code over one or more noise levels.
    Run {
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Additional noise levels.
        #[arg(long = "also-p", value_delimiter = ',')]
        also_p: Vec<f64>,
        #[command(flatten)]
        budget: ShotArgs,
        #[command(flatten)]
        decoder: DecoderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid of codes, noise levels and ebit ratios.
    Sweep {
        #[arg(long = "code", required = true)]
        codes: Vec<String>,
        #[arg(long, default_value = "nonlocal-cnot")]
        circuit: CircuitKind,
        #[arg(long = "p", value_delimiter = ',', required = true)]
        ps: Vec<f64>,
        #[arg(long = "ebit-ratio", value_delimiter = ',', default_value = "1")]
        ratios: Vec<f64>,
        #[command(flatten)]
        budget: ShotArgs,
        #[command(flatten)]
        decoder: DecoderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for a low-weight undetectable logical error.
    Distance {
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Prior assignments tried per mechanism.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        budget: u64,
        /// Use every n-th mechanism as a seed.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CircuitArgs {
    #[arg(long)]
    code: String,
    #[arg(long, default_value = "nonlocal-cnot")]
    circuit: CircuitKind,
    #[arg(long, default_value_t = 1e-3)]
    p: f64,
    /// Ebit error probability as a multiple of p.
    #[arg(long, conflicts_with = "ebit_p")]
    ebit_ratio: Option<f64>,
    /// Absolute ebit error probability.
    #[arg(long)]
    ebit_p: Option<f64>,
}

impl CircuitArgs {
    fn p_ebit(&self, p: f64) -> f64 {
        match (self.ebit_p, self.ebit_ratio) {
            (Some(e), _) => e,
            (None, Some(r)) => r * p,
            (None, None) => p,
        }
    }
}

#[derive(Args)]
struct ShotArgs {
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    shots: u64,
    /// Stop a cell early once this many failures are seen.
    #[arg(long)]
    max_fails: Option<u64>,
}

#[derive(Args)]
struct DecoderArgs {
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    bp_iters: u64,
    #[arg(long, default_value_t = 7)]
    osd_order: usize,
    #[arg(long)]
    min_sum: bool,
    /// Update checks one at a time instead of all at once.
    #[arg(long)]
    serial: bool,
}

impl DecoderArgs {
    fn configs(&self) -> (BpConfig, OsdConfig) {
        let mut bp = if self.min_sum {
            BpConfig::min_sum()
        } else {
            BpConfig::default()
        };
        if self.serial {
            bp.schedule = BpSchedule::Serial;
        }
        let osd = OsdConfig {
            order: self.osd_order,
            ..OsdConfig::default()
        };
        (bp.with_max_iterations(self.bp_iters as usize), osd)
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Build(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn build(e: impl Into<anyhow::Error>) -> Self {
        Failure::Build(e.into())
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T> = Result<T, Failure>;

fn build_code(text: &str) -> Outcome<StabilizerCode> {
    let parsed: CodeDescriptor = text.parse().map_err(Failure::build)?;
    parsed.build().map_err(Failure::build)
}

fn build_program(args: &CircuitArgs) -> Outcome<(StabilizerCode, CircuitProgram)> {
    let code = build_code(&args.code)?;
    let noise = NoiseParams::new(args.p, args.p_ebit(args.p), code.is_bb()).map_err(Failure::build)?;
    let prog = match args.circuit {
        CircuitKind::NonlocalCnot => build_nonlocal_cnot_experiment(&code, noise),
        CircuitKind::Teleport => build_teleportation_experiment(&code, noise),
    }
    .map_err(Failure::build)?;
    Ok((code, prog))
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Outcome<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::runtime),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn rows_output(rows: &[SweepRow], format: Format) -> String {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => {
            let items: Vec<_> = rows
                .iter()
                .map(|r| match &r.result {
                    Ok(e) => json!({
                        "code": r.code, "circuit": r.circuit, "p": r.p, "p_ebit": r.p_ebit,
                        "shots": e.shots, "fails": e.fails, "ler": e.point,
                        "ler_lo": e.interval_low, "ler_hi": e.interval_high, "seed": r.seed,
                    }),
                    Err(msg) => json!({
                        "code": r.code, "circuit": r.circuit, "p": r.p, "p_ebit": r.p_ebit,
                        "error": msg, "seed": r.seed,
                    }),
                })
                .collect();
            format!(
                "{}\n",
                serde_json::to_string_pretty(&items).expect("json values serialize")
            )
        }
    }
}

fn execute(cli: Cli) -> Outcome<()> {
    let format = cli.format;
    match cli.command {
        Command::BuildCode { code, dump } => {
            let code = build_code(&code)?;
            let report = code.report();
            let css = code.css_condition_holds();
            if format == Format::Json {
                println!("{}", json!({ "code": code.descriptor(), "report": report, "css": css }));
            } else {
                println!("code {}", code.descriptor());
                println!(
                    "n={} k={} d={}",
                    report.n,
                    report.k,
                    report.d_claimed.map_or("?".into(), |d| d.to_string())
                );
                println!("rate={}", report.encoding_rate);
                println!("css={}", if css { "ok" } else { "violated" });
            }
            if dump {
                print!("{}", code.dump_sparse());
            }
            if !css {
                return Err(Failure::build(anyhow!("CSS condition violated")));
            }
        }
        Command::Emit { circuit, out } => {
            let (_, prog) = build_program(&circuit)?;
            let c = census(&prog);
            write_or_print(&out, &serialize(&prog))?;
            let line = if format == Format::Json {
                json!({ "oneq": c.oneq, "twoq": c.twoq, "meas_mid": c.meas_mid, "meas_total": c.meas_total })
                    .to_string()
            } else {
                format!(
                    "census 1q={} 2q={} M={} M_total={}",
                    c.oneq, c.twoq, c.meas_mid, c.meas_total
                )
            };
            if out.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
        }
        Command::Dem { circuit, out } => {
            let (_, prog) = build_program(&circuit)?;
            let model = dem_from_table(&SignatureTable::build(&prog));
            write_or_print(&out, &serialize_dem(&model))?;
            let line = format!("rows={} cols={}", model.detector_count, model.mechanism_count());
            if out.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
        }
        Command::Sample { circuit, shots, out } => {
            let (_, prog) = build_program(&circuit)?;
            let table = SignatureTable::build(&prog);
            let batch = table.sample(shots as usize, cli.seed);
            fs::write(&out, batch.to_packed())
                .with_context(|| format!("writing {}", out.display()))
                .map_err(Failure::runtime)?;
            println!(
                "shots={shots} detectors={} observables={}",
                batch.detector_bits.cols(),
                batch.observable_bits.cols()
            );
        }
        Command::Decode {
            dem,
            batch,
            out,
            decoder,
        } => {
            let text = fs::read_to_string(&dem)
                .with_context(|| format!("reading {}", dem.display()))
                .map_err(Failure::runtime)?;
            let model = parse_dem(&text).map_err(Failure::runtime)?;
            let bytes = fs::read(&batch)
                .with_context(|| format!("reading {}", batch.display()))
                .map_err(Failure::runtime)?;
            let shots = ShotBatch::from_packed(&bytes, model.detector_count, model.observable_count)
                .map_err(Failure::runtime)?;
            let (bp, osd) = decoder.configs();
            let (fails, flags) = BpOsdDecoder::<f64>::new(&model, bp, osd).decode_batch(&shots);
            if out.is_some() {
                let text: String = flags.iter().map(|&f| if f { "1\n" } else { "0\n" }).collect();
                write_or_print(&out, &text)?;
            }
            println!("shots={} fails={fails}", shots.shots);
        }
        Command::Run {
            circuit,
            also_p,
            budget,
            decoder,
            out,
        } => {
            build_program(&circuit)?;
            let mut ps = vec![circuit.p];
            ps.extend(also_p);
            let cells = ps
                .iter()
                .map(|&p| SweepCell {
                    code: circuit.code.clone(),
                    circuit: circuit.circuit,
                    p,
                    p_ebit: circuit.p_ebit(p),
                })
                .collect::<Vec<_>>();
            let rows = sweep(&cells, &sweep_config(cli.seed, &budget, &decoder));
            write_or_print(&out, &rows_output(&rows, format))?;
            if let Some(bad) = rows.iter().find_map(|r| r.result.as_ref().err()) {
                return Err(Failure::runtime(anyhow!("cell failed: {bad}")));
            }
        }
        Command::Sweep {
            codes,
            circuit,
            ps,
            ratios,
            budget,
            decoder,
            out,
        } => {
            let names: Vec<&str> = codes.iter().map(String::as_str).collect();
            let rows = sweep(
                &grid(&names, circuit, &ps, &ratios),
                &sweep_config(cli.seed, &budget, &decoder),
            );
            write_or_print(&out, &rows_output(&rows, format))?;
        }
        Command::Distance {
            circuit,
            budget,
            stride,
            out,
        } => {
            let (_, prog) = build_program(&circuit)?;
            let model = dem_from_table(&SignatureTable::build(&prog));
            let search = DistanceSearch {
                passes: budget as usize,
                stride: stride as usize,
                seed: cli.seed,
                ..DistanceSearch::default()
            };
            let witness = search_circuit_distance(&model, &search).map_err(Failure::runtime)?;
            let verified = witness.verify(&model);
            write_or_print(&out, &witness.to_text())?;
            println!("weight={} verified={verified}", witness.weight);
            if !verified {
                return Err(Failure::runtime(anyhow!("witness failed re-verification")));
            }
        }
    }
    Ok(())
}

fn sweep_config(seed: u64, budget: &ShotArgs, decoder: &DecoderArgs) -> SweepConfig {
    let (bp, osd) = decoder.configs();
    SweepConfig {
        shots: budget.shots,
        max_fails: budget.max_fails,
        seed,
        bp,
        osd,
        ..SweepConfig::default()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Build(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
