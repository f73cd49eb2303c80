use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use alf_core::agent::AgentConfig;
use alf_core::codec::{bandwidth_bps, decode_message, deserialize, encode_message, serialize, MessageSchema};
use alf_core::config::{AgentSpec, RunConfig};
use alf_core::geometry::{format_boxes, parse_boxes, transform_box, Pose2};
use alf_core::raster::rasterize;
use alf_core::sim::ablation::{ablate_kmax, ablate_quant_bits, ablation_csv_rows, BITS_SWEEP, KMAX_SWEEP};
use alf_core::sim::{evaluate_suite, run_pipeline, write_metrics_csv, MetricsReport};
use alf_core::Result;

#[derive(Parser)]
#[command(name = "alf", version, about = "Box-level late-to-intermediate fusion tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Bits per message field.
    #[arg(long)]
    bits: Option<u8>,
    /// Boxes per message.
    #[arg(long)]
    kmax: Option<usize>,
    /// Channel budget per frame, in bytes.
    #[arg(long)]
    budget_bytes: Option<u64>,
    /// Message rate used for bandwidth figures [default: 10].
    #[arg(long)]
    rate_hz: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode a box list into a fixed-size message.
    Encode {
        /// Box list, one `x y w l yaw score` per line.
        input: PathBuf,
        /// Message file to write.
        #[arg(short, long)]
        output: PathBuf,
        /// Sending agent: preset name; defaults to the configured ego.
        #[arg(long)]
        agent: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Decode a message and express its boxes in the ego frame.
    Decode {
        input: PathBuf,
        /// Box list to write; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        agent: Option<String>,
        /// Sender pose in the ego frame, `x,y,yaw`.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        pose: Option<Pose2>,
        #[command(flatten)]
        common: Common,
    },
    /// Rasterize a box list onto an agent's BEV grid.
    Rasterize {
        input: PathBuf,
        #[arg(long)]
        agent: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline over the configured seeds.
    Simulate {
        /// Also write every synthesized feature map as text.
        #[arg(long)]
        dump_features: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep field width or message size and write the metrics table.
    Ablate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bits,
    Kmax,
}

fn parse_pose(s: &str) -> std::result::Result<Pose2, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, yaw] if v.iter().all(|a| a.is_finite()) => Ok(Pose2::new(x, y, yaw)),
        _ => Err("expected finite x,y,yaw".into()),
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(b) = self.bits {
            cfg.link.bits = b;
        }
        if let Some(k) = self.kmax {
            cfg.link.k_max = k;
        }
        if let Some(b) = self.budget_bytes {
            cfg.budget_bytes = Some(b);
        }
        if let Some(r) = self.rate_hz {
            cfg.link.rate_hz = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn agent_for(cfg: &RunConfig, name: &Option<String>) -> Result<AgentConfig> {
    match name {
        Some(n) => AgentSpec::Name(n.clone()).resolve(),
        None => cfg.ego.resolve(),
    }
}

fn schema_for(cfg: &RunConfig, agent: &AgentConfig) -> Result<MessageSchema> {
    let schema = cfg.link.schema_for(agent);
    schema.validate()?;
    Ok(schema)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn fmt_hz(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r}")
    }
}

fn print_metrics(label: &str, m: &MetricsReport) {
    println!("{label:<10} mAP@0.5 {:.4}  mAP@0.7 {:.4}", m.map50(), m.map70());
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Encode { input, output, agent, common } => {
            let cfg = common.load()?;
            let schema = schema_for(&cfg, &agent_for(&cfg, &agent)?)?;
            let boxes = parse_boxes(&fs::read_to_string(&input)?)?;
            let bytes = serialize(&encode_message(&boxes, &schema), &schema)?;
            fs::write(&output, &bytes)?;
            let bps = bandwidth_bps(&schema, cfg.link.rate_hz)?;
            println!("{} bytes", bytes.len());
            println!("{bps:.0} bps @{}Hz", fmt_hz(cfg.link.rate_hz));
        }
        Cmd::Decode { input, output, agent, pose, common } => {
            let cfg = common.load()?;
            let schema = schema_for(&cfg, &agent_for(&cfg, &agent)?)?;
            let msg = deserialize(&fs::read(&input)?, &schema)?;
            let pose = pose.unwrap_or(Pose2::IDENTITY);
            let boxes: Vec<_> = decode_message(&msg, &schema)?.iter().map(|b| transform_box(b, &pose)).collect();
            let text = format_boxes(&boxes);
            match output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Rasterize { input, agent, common } => {
            let cfg = common.load()?;
            let a = agent_for(&cfg, &agent)?;
            let bev = rasterize(&parse_boxes(&fs::read_to_string(&input)?)?, &a.grid);
            fs::create_dir_all(&cfg.out_dir)?;
            write_with(&cfg.out_dir.join("pseudo_bev.pgm"), |w| bev.write_pgm(w))?;
            write_with(&cfg.out_dir.join("pseudo_bev.txt"), |w| bev.map.write_text(w))?;
            let (h, w) = a.bev_dims();
            println!("{h}x{w} grid, {} occupied cells", bev.occupied_cells());
        }
        Cmd::Simulate { dump_features, common } => {
            let cfg = common.load()?;
            let suite = cfg.suite()?;
            let syn = cfg.synthesis()?;
            let budget = cfg.budget_bits();
            fs::create_dir_all(&cfg.out_dir)?;
            let mut reports = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                let run = run_pipeline(&suite.scenario(seed), &suite.harness, &syn, budget)?;
                for (i, a) in run.report.agents.iter().enumerate() {
                    let stem = format!("seed{seed}_aux{}_{}", i + 1, a.name);
                    write_with(&cfg.out_dir.join(format!("{stem}_bev.pgm")), |w| run.pseudo_bev[i].write_pgm(w))?;
                    if dump_features {
                        write_with(&cfg.out_dir.join(format!("{stem}_feature.txt")), |w| {
                            run.features[i].write_text(w)
                        })?;
                    }
                }
                print_metrics(&format!("seed {seed}"), &run.report.fused);
                reports.push(run.report);
            }
            let pooled = evaluate_suite(&suite)?;
            let (bits, k) = (cfg.link.bits, cfg.link.k_max);
            let bytes = pooled.bytes_per_agent;
            let mut rows: Vec<_> = reports.iter().map(|r| (r.seed.to_string(), bits, k, bytes, r.fused)).collect();
            rows.push(("all".into(), bits, k, bytes, pooled.pooled));
            rows.push(("ego-only".into(), bits, 0, 0, pooled.ego_only));
            write_metrics_csv(create(&cfg.out_dir.join("metrics.csv"))?, &rows)?;
            write_with(&cfg.out_dir.join("pipeline.json"), |w| {
                serde_json::to_writer_pretty(&mut *w, &reports).map_err(std::io::Error::other)?;
                writeln!(w)
            })?;
            print_metrics("ego-only", &pooled.ego_only);
            print_metrics("fused", &pooled.pooled);
            println!("wrote {}", cfg.out_dir.display());
        }
        Cmd::Ablate { mode, common } => {
            let cfg = common.load()?;
            let suite = cfg.suite()?;
            let (rows, name) = match mode {
                Mode::Bits => (ablate_quant_bits(&suite, &BITS_SWEEP)?, "ablation_bits.csv"),
                Mode::Kmax => (ablate_kmax(&suite, &KMAX_SWEEP)?, "ablation_kmax.csv"),
            };
            fs::create_dir_all(&cfg.out_dir)?;
            write_metrics_csv(create(&cfg.out_dir.join(name))?, &ablation_csv_rows(&rows))?;
            println!("{:>4} {:>5} {:>6} {:>9} {:>9}", "bits", "k_max", "bytes", "mAP@0.5", "mAP@0.7");
            for r in &rows {
                println!(
                    "{:>4} {:>5} {:>6} {:>9.4} {:>9.4}",
                    r.bits,
                    r.k_max,
                    r.bytes_per_agent,
                    r.metrics.map50(),
                    r.metrics.map70()
                );
            }
            if let Some(r) = rows.first() {
                println!("ego-only mAP@0.7 {:.4}", r.ego_only.map70());
            }
            println!("wrote {}", cfg.out_dir.join(name).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alf: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
