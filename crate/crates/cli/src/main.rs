// SPDX-License-Identifier: MIT OR Apache-2.0

//! `rhythm`: attention-rhythm analysis and credit weights from the shell.
//!
//! Exit status is 0 on success, 1 when an input fails validation or a run
//! records failed traces, and 2 on usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rhythm_core::credit::Scheme;
use rhythm_core::perturb::{load_rollout_pairs, perturbation_report, Stoplist};
use rhythm_core::pipeline::{self, RunConfig, RunManifest};
use rhythm_core::plot::{emit_plot, Panel, PlotFormat, PlotSpec};
use rhythm_core::synth::{synth_example, CorpusSpec, SynthKind};
use rhythm_core::tensor_io::{
    decode_attention_dump, load_token_trace, validate_stack, write_attention_dump, write_token_trace,
    LayerPolicy,
};

const CONFIG_SCHEMA: &str = r#"config file (TOML), relative paths resolve against its directory:
  seed = <u64>                      required
  output_dir = "<dir>"              required
  inputs = ["<glob of .attd>", ...]
  workers = 0                       0 = all cores
  head_quantile = 0.3
  span_mode = "per-trace" | "corpus-mean"
  layer_policy = "lenient" | "strict"
  n_shuffles = 1000
  max_lag = 1
  aggregation = "micro" | "macro"
  [metrics]  window = 10, h_lo = 10, h_hi = 50, q = 0.4, sink = "include" | "exclude"
  [metrics.peak_method]  method = "topq", q = 0.4  |  method = "local-max", kappa = 1.0
  [credit]  gamma_amp = 1.5, q = 0.4, alpha = 0.5, k = 2, nonneg_only = true,
            delta_credit = "earlier" | "later",
            tau_waad = { quantile = 0.3 } | { absolute = <f64> },
            tau_delta = { quantile = 0.7 } | { absolute = <f64> }"#;

#[derive(Parser)]
#[command(name = "rhythm", version, about = "Attention-rhythm metrics and token credit weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, env = "RHYTHM_CONFIG")]
    config: PathBuf,
    /// Override the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = absolute(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check an attention dump for structural and numeric validity.
    Validate {
        dump: PathBuf,
        /// Also check a token trace against the dump.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value = "lenient", value_parser = ["lenient", "strict"])]
        policy: String,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Profiles, head tables and the coupling report for a corpus.
    Analyze(RunArgs),
    /// Per-token credit weights for a corpus.
    Weights {
        #[arg(long, value_parser = ["local", "global", "coupled"])]
        scheme: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Coupling report only; prints the CSV table.
    Couple(RunArgs),
    /// Jaccard deviation report for counterfactual rollout pairs.
    Perturb {
        #[arg(long)]
        pairs: PathBuf,
        /// One word per line; defaults to the built-in English list.
        #[arg(long, conflicts_with = "no_stoplist")]
        stoplist: Option<PathBuf>,
        #[arg(long)]
        no_stoplist: bool,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic dumps and traces with planted structure.
    Synth {
        #[arg(long, value_parser = ["sawtooth", "anchor"])]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trace")]
        prefix: String,
        #[arg(long)]
        n_tokens: Option<usize>,
        #[arg(long)]
        prompt_len: Option<usize>,
        #[arg(long)]
        layers: Option<u32>,
        #[arg(long)]
        heads_per_layer: Option<u16>,
    },
    /// Render figure panels for one trace of a corpus.
    Plot {
        #[arg(long)]
        trace: String,
        /// Comma-separated: attention-heatmap, waad, fai-global, fai-receiver, entropy.
        #[arg(long, value_delimiter = ',', required = true)]
        panels: Vec<String>,
        #[arg(long, default_value = "svg", value_parser = ["svg", "csv"])]
        format: String,
        /// Head group shown by the heatmap panel.
        #[arg(long, default_value = "local", value_parser = ["local", "global", "receiver"])]
        heatmap_group: String,
        /// Do not mark peaks.
        #[arg(long)]
        no_highlight: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Failure with a chosen exit status.
struct Exit(u8);

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}

fn write_or_print(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn report_run(manifest: &RunManifest, what: &str) -> Result<(), Exit> {
    eprintln!(
        "{what}: {} traces ok, {} failed",
        manifest.n_ok(),
        manifest.n_failed()
    );
    for t in manifest.traces.iter().filter(|t| t.error.is_some()) {
        eprintln!(
            "  {}: [{}] {}",
            t.trace_id,
            t.error_code.as_deref().unwrap_or(""),
            t.error.as_deref().unwrap_or("")
        );
    }
    for s in &manifest.skipped_statistics {
        eprintln!("  skipped {}: [{}] {}", s.statistic_name, s.error_code, s.error);
    }
    if manifest.n_failed() > 0 {
        Err(Exit(1))
    } else {
        Ok(())
    }
}

fn run(cli: Cli) -> anyhow::Result<Result<(), Exit>> {
    match cli.command {
        Command::Validate {
            dump,
            trace,
            policy,
            json,
        } => {
            let policy = if policy == "strict" { LayerPolicy::Strict } else { LayerPolicy::Lenient };
            let bytes = std::fs::read(&dump).with_context(|| format!("reading {}", dump.display()))?;
            let stack = match decode_attention_dump(&bytes) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: [{}] {e}", dump.display(), e.code());
                    return Ok(Err(Exit(1)));
                }
            };
            let report = validate_stack(&stack, policy);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{}: {}", dump.display(), report.summary());
            }
            if !report.ok {
                return Ok(Err(Exit(1)));
            }
            if let Some(t) = trace {
                let checked = load_token_trace(&t).and_then(|tr| rhythm_core::profile::check_pairing(&stack, &tr));
                if let Err(e) = checked {
                    eprintln!("{}: [{}] {e}", t.display(), e.code());
                    return Ok(Err(Exit(1)));
                }
            }
            Ok(Ok(()))
        }
        Command::Analyze(args) => {
            let cfg = args.load()?;
            let manifest = pipeline::run_analysis(&cfg)?;
            Ok(report_run(&manifest, "analyze"))
        }
        Command::Weights { scheme, run } => {
            let scheme: Scheme = scheme.parse()?;
            let cfg = run.load()?;
            let manifest = pipeline::run_credit(&cfg, scheme)?;
            Ok(report_run(&manifest, "weights"))
        }
        Command::Couple(args) => {
            let cfg = args.load()?;
            let manifest = pipeline::run_coupling(&cfg)?;
            let csv = std::fs::read_to_string(cfg.resolved_output_dir().join("coupling.csv"))?;
            print!("{csv}");
            Ok(report_run(&manifest, "couple"))
        }
        Command::Perturb {
            pairs,
            stoplist,
            no_stoplist,
            out,
        } => {
            let stop = match (stoplist, no_stoplist) {
                (Some(p), _) => Stoplist::load(p)?,
                (None, true) => Stoplist::empty(),
                (None, false) => Stoplist::english(),
            };
            let pairs = load_rollout_pairs(&pairs)?;
            let report = perturbation_report(&pairs, &stop)?;
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            write_or_print(out.as_deref(), s.as_bytes())?;
            Ok(Ok(()))
        }
        Command::Synth {
            kind,
            out,
            count,
            seed,
            prefix,
            n_tokens,
            prompt_len,
            layers,
            heads_per_layer,
        } => {
            let mut spec = CorpusSpec {
                kind: kind.parse::<SynthKind>()?,
                ..CorpusSpec::default()
            };
            if let Some(n) = n_tokens {
                spec.n_tokens = n;
            }
            if let Some(p) = prompt_len {
                spec.prompt_len = p;
            }
            if let Some(l) = layers {
                spec.layer_count = l;
            }
            if let Some(h) = heads_per_layer {
                spec.heads_per_layer = h;
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for i in 0..count {
                let id = format!("{prefix}-{i:03}");
                let (stack, trace, planted) = synth_example(&spec, seed + i as u64)?;
                write_attention_dump(out.join(format!("{id}.attd")), &stack)?;
                write_token_trace(out.join(format!("{id}.json")), &trace)?;
                let mut p = serde_json::to_string_pretty(&planted)?;
                p.push('\n');
                std::fs::write(out.join(format!("{id}.planted.json")), p)?;
            }
            eprintln!("wrote {count} {kind} traces to {}", out.display());
            Ok(Ok(()))
        }
        Command::Plot {
            trace,
            panels,
            format,
            heatmap_group,
            no_highlight,
            out,
            run,
        } => {
            let panels: Vec<Panel> = panels.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
            let format: PlotFormat = format.parse()?;
            let cfg = run.load()?;
            let (_, analysis) = pipeline::analyze_one(&cfg, &trace)?;
            let heatmap = match heatmap_group.as_str() {
                "global" => Some(&analysis.global_map),
                "receiver" => analysis.receiver_map.as_ref(),
                _ => Some(&analysis.local_map),
            };
            let mut spec = PlotSpec::new(panels, format);
            if !no_highlight {
                spec = spec.with_profile_peaks(&analysis.profile);
            }
            let doc = emit_plot(&analysis.profile, heatmap.map(|m| &m.map), &spec)?;
            write_or_print(out.as_deref(), &doc)?;
            Ok(Ok(()))
        }
    }
}

fn is_usage_error(code: &str) -> bool {
    matches!(
        code,
        "invalid-config" | "quantile-out-of-range" | "unknown-method" | "invalid-lag" | "invalid-spec"
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Exit(code))) => ExitCode::from(code),
        Err(err) => {
            let core = err.downcast_ref::<rhythm_core::Error>();
            let code = core.map(rhythm_core::Error::code).unwrap_or("error");
            eprintln!("error[{code}]: {err:#}");
            if is_usage_error(code) {
                if code == "invalid-config" {
                    eprintln!("\n{CONFIG_SCHEMA}");
                }
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
