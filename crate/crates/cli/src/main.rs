use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use linewatch_core::dtree::{
    compare_with_reference, read_dataset_csv, render_tree, train, RulesDocument, TrainConfig,
};
use linewatch_core::io::{
    create_file, load_config, open_file, to_json_string, to_toml_string, write_json, write_text,
};
use linewatch_core::montecarlo::{
    generate_cells, render_report, resolve_workers, summarize, sweep, write_cells_csv,
    write_dataset_csv, CellResult, RunOutcome, ScenarioCell, Subsample, SweepConfig, SweepContext,
};
use linewatch_core::plot::trace_plots;
use linewatch_core::sim::{run, write_trace_csv, RunSpec, RunSummary, TraceRow};
use linewatch_core::thermal::{
    calibrate_from_table, read_table_csv, reproduce, table_one, write_calibration_csv,
    write_reproduction_csv, CalibrationSample, TIME_LAW_TOLERANCE,
};
use linewatch_core::Error;

// Writes to stdout, ignoring a closed pipe so `linewatch ... | head` exits quietly.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Fire-near-line detection from two-terminal phasor data: simulation, sweeps and rule mining.
#[derive(Debug, Parser)]
#[command(name = "linewatch", version)]
struct Cli {
    /// Configuration file (TOML, or JSON by extension) for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, env = "LINEWATCH_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Cell selection for sweeps: full, stratified:N or lhs:N.
    #[arg(long, global = true)]
    subsample: Option<Subsample>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the fire distance factor from a rise table and report per-entry residuals.
    CalibrateFire {
        /// Table CSV with columns d_m, t_f_s, delta_ta_c; the built-in table when omitted.
        table: Option<PathBuf>,
        /// Fit only on rows with these heating times; residuals are still reported for all rows.
        #[arg(long, value_delimiter = ',')]
        fit_times: Vec<f64>,
    },
    /// Run one scenario and write its trace, summary and plots.
    Simulate {
        #[arg(long)]
        no_plots: bool,
    },
    /// Run a Monte Carlo sweep over the scenario grid.
    Sweep {
        #[arg(long)]
        tests_per_cell: Option<usize>,
        /// Also write the run specification of every test as JSON under `specs/`.
        #[arg(long)]
        write_specs: bool,
    },
    /// Train a decision tree on a dataset and extract its rules.
    TrainRules {
        dataset: PathBuf,
        #[arg(long, default_value = "label")]
        label: String,
        /// Columns to leave out of the feature set.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long, default_value_t = 0.9)]
        min_purity: f64,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        purity_stop: Option<f64>,
        #[arg(long)]
        min_gain: Option<f64>,
        /// Pruning confidence level.
        #[arg(long, conflicts_with = "no_prune")]
        prune_confidence: Option<f64>,
        /// Keep the fully grown tree.
        #[arg(long)]
        no_prune: bool,
    },
    /// Print the default configuration of a command.
    PrintDefaults {
        #[arg(value_enum, default_value_t = DefaultsKind::Run)]
        kind: DefaultsKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DefaultsKind {
    Run,
    Sweep,
    Train,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            for c in e.chain() {
                if let Some(Error::Calibration { rows, .. }) = c.downcast_ref::<Error>() {
                    for (d, t, v) in rows {
                        eprintln!("  offending row: d_m = {d}, t_f_s = {t}, delta_ta_c = {v}");
                    }
                }
            }
            let validation = e
                .chain()
                .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::CalibrateFire { table, fit_times } => {
            calibrate_fire(cli, table.as_deref(), fit_times)
        }
        Command::Simulate { no_plots } => simulate(cli, *no_plots),
        Command::Sweep {
            tests_per_cell,
            write_specs,
        } => run_sweep(cli, *tests_per_cell, *write_specs),
        Command::TrainRules {
            dataset,
            label,
            exclude,
            min_purity,
            min_leaf,
            max_depth,
            purity_stop,
            min_gain,
            prune_confidence,
            no_prune,
        } => {
            let mut cfg: TrainConfig = load_or_default(cli.config.as_deref())?;
            if let Some(v) = min_leaf {
                cfg.min_leaf = *v;
            }
            if let Some(v) = max_depth {
                cfg.max_depth = *v;
            }
            if let Some(v) = purity_stop {
                cfg.purity_stop = *v;
            }
            if let Some(v) = min_gain {
                cfg.min_gain = *v;
            }
            if let Some(v) = prune_confidence {
                cfg.prune_confidence = Some(*v);
            }
            if *no_prune {
                cfg.prune_confidence = None;
            }
            train_rules(cli, dataset, label, exclude, *min_purity, cfg)
        }
        Command::PrintDefaults { kind } => {
            let text = match (kind, cli.format) {
                (DefaultsKind::Run, Format::Csv) => to_toml_string(&RunSpec::default())?,
                (DefaultsKind::Run, Format::Json) => to_json_string(&RunSpec::default())?,
                (DefaultsKind::Sweep, Format::Csv) => to_toml_string(&SweepConfig::default())?,
                (DefaultsKind::Sweep, Format::Json) => to_json_string(&SweepConfig::default())?,
                (DefaultsKind::Train, Format::Csv) => to_toml_string(&TrainConfig::default())?,
                (DefaultsKind::Train, Format::Json) => to_json_string(&TrainConfig::default())?,
            };
            out!("{text}");
            Ok(())
        }
    }
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(T::default()),
    }
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema: &'static str,
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn calibrate_fire(cli: &Cli, table: Option<&Path>, fit_times: &[f64]) -> Result<()> {
    let samples: Vec<CalibrationSample> = match table {
        Some(p) => read_table_csv(open_file(p)?)
            .map_err(Error::from)
            .with_context(|| format!("reading {}", p.display()))?,
        None => table_one(),
    };
    if samples.is_empty() {
        return Err(Error::Invalid {
            what: "fire table".into(),
            message: "no rows; expected columns d_m, t_f_s, delta_ta_c".into(),
        }
        .into());
    }
    let fit: Vec<CalibrationSample> = if fit_times.is_empty() {
        samples.clone()
    } else {
        samples
            .iter()
            .filter(|s| fit_times.contains(&s.t_f_s))
            .copied()
            .collect()
    };
    let cal = calibrate_from_table(&fit)?;
    let rows = reproduce(&cal, &samples)?;

    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.format {
        Format::Csv => {
            write_calibration_csv(create_file(&cli.out.join("fire_calibration.csv"))?, &cal)?
        }
        Format::Json => write_json(
            &cli.out.join("fire_calibration.json"),
            &Versioned {
                schema: "linewatch-fire-calibration",
                version: 1,
                body: &cal,
            },
        )?,
    }
    write_reproduction_csv(create_file(&cli.out.join("fire_reproduction.csv"))?, &rows)?;

    outln!("distance factors (°C/√s)");
    for (d, f) in &cal.distance_grid {
        outln!("  d = {d:>5} m   f = {f:.6}");
    }
    outln!("\n  d (m)  t_f (s)   observed  predicted  residual");
    let mut offending = Vec::new();
    for r in &rows {
        let flag = if r.residual.abs() > TIME_LAW_TOLERANCE {
            offending.push((r.d_m, r.t_f_s, r.observed_c));
            "  <-- exceeds 1%"
        } else {
            ""
        };
        outln!(
            "  {:>5} {:>8} {:>10.4} {:>10.4} {:>+9.4}%{flag}",
            r.d_m,
            r.t_f_s,
            r.observed_c,
            r.predicted_c,
            100.0 * r.residual
        );
    }
    if !offending.is_empty() {
        return Err(Error::Calibration {
            message: format!("{} row(s) reproduced outside 1%", offending.len()),
            rows: offending,
        }
        .into());
    }
    Ok(())
}

fn simulate(cli: &Cli, no_plots: bool) -> Result<()> {
    let mut spec: RunSpec = load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let trace = run(&spec)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.format {
        Format::Csv => write_trace_csv(create_file(&cli.out.join("trace.csv"))?, &trace.records)?,
        Format::Json => {
            let rows: Vec<TraceRow> = trace.records.iter().map(TraceRow::from_record).collect();
            write_json(
                &cli.out.join("trace.json"),
                &Versioned {
                    schema: "linewatch-trace",
                    version: 1,
                    body: &TraceDoc { rows },
                },
            )?;
        }
    }
    write_json(
        &cli.out.join("summary.json"),
        &Versioned {
            schema: "linewatch-run-summary",
            version: 1,
            body: &trace.summary,
        },
    )?;
    if !no_plots {
        for (stem, svg) in trace_plots(&trace) {
            write_text(&cli.out.join(format!("{stem}.svg")), &svg)?;
        }
    }
    print_run_summary(&trace.summary);
    Ok(())
}

#[derive(Serialize)]
struct TraceDoc {
    rows: Vec<TraceRow>,
}

fn opt_s(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v:.4} s"))
}

fn print_run_summary(s: &RunSummary) {
    if let Some(why) = &s.discarded {
        outln!("run discarded after {} samples: {why}", s.samples);
    }
    outln!("samples            {}", s.samples);
    outln!(
        "conductor          {:.3} -> {:.3} °C (ΔT_c {:.4})",
        s.t_c_start,
        s.t_c_end,
        s.delta_tc
    );
    outln!("fire ΔT_a at end   {:.3} °C", s.delta_ta_end);
    outln!("control 1 trip     {}", opt_s(s.control1_time_s));
    outln!("control 2 trip     {}", opt_s(s.control2_time_s));
    outln!("detection latency  {}", opt_s(s.detection_latency_s));
    outln!("end to end         {}", opt_s(s.end_to_end_s));
    outln!("restarts           {}", s.restarts.len());
}

#[derive(Serialize)]
struct CellDoc<'a> {
    cell: &'a ScenarioCell,
    outcomes: &'a [RunOutcome],
}

fn run_sweep(cli: &Cli, tests_per_cell: Option<usize>, write_specs: bool) -> Result<()> {
    let mut cfg: SweepConfig = load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = cli.subsample {
        cfg.subsample = s;
    }
    if let Some(n) = tests_per_cell {
        cfg.tests_per_cell = n;
    }
    let ctx = SweepContext::new(cfg)?;
    let plan = generate_cells(&ctx.config.grid, ctx.config.subsample, ctx.config.seed)?;
    log::info!(
        "{} cells x {} tests on {} workers",
        plan.len(),
        ctx.config.tests_per_cell,
        resolve_workers(cli.workers)
    );
    let result = sweep(&ctx, &plan, cli.workers)?;
    let summary = summarize(&ctx, &result);

    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.format {
        Format::Csv => write_cells_csv(create_file(&cli.out.join("cells.csv"))?, &ctx, &result)?,
        Format::Json => {
            let cells: Vec<CellDoc> = result
                .cells
                .iter()
                .map(|c: &CellResult| CellDoc {
                    cell: &c.cell,
                    outcomes: &c.outcomes,
                })
                .collect();
            write_json(
                &cli.out.join("cells.json"),
                &Versioned {
                    schema: "linewatch-sweep-cells",
                    version: 1,
                    body: &CellsDoc { cells },
                },
            )?;
        }
    }
    write_json(&cli.out.join("summary.json"), &summary)?;
    let (rows, skipped) = write_dataset_csv(create_file(&cli.out.join("dataset.csv"))?, &result)?;
    let mut report = render_report(&summary);
    report.push_str(&format!(
        "\ndataset: {rows} rows, {skipped} runs skipped (discarded or detector never warm)\n"
    ));
    write_text(&cli.out.join("report.txt"), &report)?;
    if write_specs {
        for c in &result.cells {
            for o in &c.outcomes {
                let spec = linewatch_core::montecarlo::build_run_spec(
                    &ctx,
                    &o.params,
                    linewatch_core::montecarlo::test_seed(&c.cell, o.test_index),
                )?;
                let path = cli
                    .out
                    .join("specs")
                    .join(format!("cell{}_test{}.json", c.cell.ordinal, o.test_index));
                write_text(&path, &to_json_string(&spec)?)?;
            }
        }
    }
    out!("{report}");
    Ok(())
}

#[derive(Serialize)]
struct CellsDoc<'a> {
    cells: Vec<CellDoc<'a>>,
}

fn train_rules(
    cli: &Cli,
    dataset: &Path,
    label: &str,
    exclude: &[String],
    min_purity: f64,
    cfg: TrainConfig,
) -> Result<()> {
    if !(0.0..=1.0).contains(&min_purity) {
        bail!(Error::Invalid {
            what: "min_purity".into(),
            message: "must lie in [0, 1]".into(),
        });
    }
    let data = read_dataset_csv(open_file(dataset)?, label, exclude)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", dataset.display()))?;
    if data.is_empty() {
        bail!(Error::Invalid {
            what: "dataset".into(),
            message: "no rows".into(),
        });
    }
    let tree = train(&data, &cfg)?;
    let doc = RulesDocument::new(&data, label, cfg, min_purity, tree);

    let mut text = render_tree(&doc.tree);
    text.push_str(&format!(
        "\ntraining accuracy {:.2}% over {} rows\n\nrules (purity >= {:.0}%)\n",
        100.0 * doc.training_accuracy,
        data.len(),
        100.0 * min_purity
    ));
    for r in &doc.rules {
        text.push_str(&format!("  {r}\n"));
    }
    text.push_str("\nthresholds next to reference values\n");
    text.push_str(&compare_with_reference(&doc.rules));

    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write_json(&cli.out.join("rules.json"), &doc)?;
    write_text(&cli.out.join("tree.txt"), &text)?;
    out!("{text}");
    Ok(())
}
