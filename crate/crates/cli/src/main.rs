use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mapss::config::{load_bank_file, Encoder, RunConfig, Scenario};
use mapss::pipeline::EvalOptions;
use mapss::report::render_text;
use mapss::{demo, run_evaluation, sweep};
use mapss_audio::distortions::{generate_bank, BankConfig, Variant};
use mapss_audio::{read_wav, write_wav, Signal};

#[derive(Parser)]
#[command(name = "mapss", version, about = "Perceptual separation and match scores for source-separation outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Embedding file for PS (and PM unless --embeddings-pm is given); single-system runs only.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embeddings_pm: Option<PathBuf>,
    /// CSV with columns trial,system,source,mos.
    #[arg(long)]
    mos: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bank_seed: Option<u64>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    ps_bank_size: Option<usize>,
    #[arg(long)]
    pm_bank_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write nmi.svg.
    #[arg(long)]
    nmi_svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Score every frame, pool per utterance and correlate with MOS.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Continue an interrupted run from its frames.jsonl.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate with the outputs delayed by each listed amount.
    SweepDelay {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated delays in milliseconds.
        #[arg(long, value_delimiter = ',', default_value = "0,20,50,100")]
        delays: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a distortion bank as TOML, and its renderings of --input as WAVs.
    Bank {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Bank TOML to start from instead of the default enumeration.
        #[arg(long)]
        bank_config: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        bank_seed: u64,
        /// Rate at which the bank is realized when no --input is given.
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long, default_value_t = -23.0)]
        target_lufs: f64,
    },
    /// Write a small synthetic corpus with a ready-to-run config.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the evaluation.
        #[arg(long)]
        run: bool,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn apply(cfg: &mut RunConfig, o: Overrides) -> Result<()> {
    if o.embeddings.is_some() || o.embeddings_pm.is_some() {
        let systems: usize = cfg.trials.iter().map(|t| t.systems.len()).sum();
        if systems != 1 {
            bail!("--embeddings needs a config with exactly one system, found {systems}");
        }
        let sys = &mut cfg.trials[0].systems[0];
        if let Some(p) = o.embeddings {
            sys.embeddings_ps = Some(p);
        }
        if let Some(p) = o.embeddings_pm {
            sys.embeddings_pm = Some(p);
        }
        cfg.encoder = Encoder::File;
    }
    macro_rules! set {
        ($($src:ident => $dst:expr),*) => { $(if let Some(v) = o.$src { $dst = v; })* };
    }
    set!(out => cfg.output_dir, seed => cfg.seed, scenario => cfg.scenario, tau => cfg.tau);
    if o.mos.is_some() {
        cfg.mos = o.mos;
    }
    if o.bank_seed.is_some() {
        cfg.bank_seed = o.bank_seed;
    }
    if o.alpha.is_some() {
        cfg.alpha = o.alpha;
    }
    if o.ps_bank_size.is_some() {
        cfg.ps_bank.size = o.ps_bank_size;
    }
    if o.pm_bank_size.is_some() {
        cfg.pm_bank.size = o.pm_bank_size;
    }
    if o.threads.is_some() {
        cfg.threads = o.threads;
    }
    cfg.nmi_svg |= o.nmi_svg;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    cfg.resolve()?;
    Ok(())
}

fn load(config: &Path, o: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    apply(&mut cfg, o)?;
    Ok(cfg)
}

fn dump_bank(
    variant: Variant,
    out: &Path,
    input: Option<&Path>,
    bank_config: Option<&Path>,
    size: Option<usize>,
    bank_seed: u64,
    sample_rate: u32,
    target_lufs: f64,
) -> Result<()> {
    let mut bank = match bank_config {
        Some(p) => load_bank_file(p)?,
        None => BankConfig::new(variant),
    };
    if bank.variant != variant {
        bail!("bank file declares variant {:?}, asked for {:?}", bank.variant, variant);
    }
    if size.is_some() {
        bank.size = size;
    }
    let signal = input.map(read_wav).transpose()?;
    let sr = signal.as_ref().map_or(sample_rate, |s| s.sample_rate);
    let specs = bank.specs(sr)?;
    std::fs::create_dir_all(out)?;
    let explicit = BankConfig { variant, size: None, families: None, specs: specs.clone() };
    std::fs::write(out.join("bank.toml"), toml::to_string(&explicit)?)?;
    if let Some(sig) = signal {
        let rendered = generate_bank(&sig.samples, sr, &specs, bank_seed, Some(target_lufs))?;
        for (i, (spec, y)) in specs.iter().zip(rendered).enumerate() {
            let name = format!("{i:03}_{}.wav", serde_json::to_value(spec.family())?.as_str().unwrap_or("entry"));
            write_wav(&out.join(name), &Signal { samples: y, sample_rate: sr })?;
        }
    }
    println!("{} {:?} entries written to {}", specs.len(), variant, out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Eval { config, resume, overrides } => {
            let cfg = load(&config, overrides)?;
            let report = run_evaluation(&cfg, &EvalOptions { resume, delay_ms: 0.0 })?;
            print!("{}", render_text(&report));
            println!("\nresults in {}", cfg.output_dir.display());
        }
        Command::SweepDelay { config, delays, overrides } => {
            let cfg = load(&config, overrides)?;
            let out = cfg.output_dir.clone();
            let results = sweep::sweep_delays(&cfg, &delays, &out)?;
            println!("{:>9} {:>8} {:>8}", "delay_ms", "PS", "PM");
            for (d, r) in &results {
                let f = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
                println!("{d:>9} {:>8} {:>8}", f(r.ps_mean), f(r.pm_mean));
            }
            println!("\nsweep table in {}", out.join(sweep::SWEEP_FILE).display());
        }
        Command::Bank { variant, out, input, bank_config, size, bank_seed, sample_rate, target_lufs } => {
            dump_bank(variant, &out, input.as_deref(), bank_config.as_deref(), size, bank_seed, sample_rate, target_lufs)?;
        }
        Command::Demo { out, seed, run } => {
            let cfg_path = demo::write_demo(&out, seed)?;
            println!("demo corpus written; run `mapss eval --config {}`", cfg_path.display());
            if run {
                let cfg = RunConfig::load(&cfg_path)?;
                let report = run_evaluation(&cfg, &EvalOptions::default())?;
                print!("{}", render_text(&report));
            }
        }
    }
    Ok(())
}
