use crate::output::Staging;
use crate::{Cli, CliError, Command, Format};
use cascade_core::analysis::{
    analyze_segment, assemble_matrix, diagonal_fraction, pearson, CorrelationMatrix, MatrixExport, MatrixOptions,
    SegmentCounts,
};
use cascade_core::config::{ConfigFile, ResolvedConfig};
use cascade_core::montecarlo::{setting_config, simulate, GroundTruthSummary, SimulationOutput};
use cascade_core::statistics::{
    alpha_from_drive, apply_loss, multipair_ratio, pn_tmsv, tmsv_order_for_tail, MultipairRatio,
};
use cascade_core::stream::{merge_sorted, Channel, EventStream};
use cascade_core::tagstream::{parse_tags, write_tags, write_tags_csv, TagFile};
use cascade_core::units::{parse_quantity, Dimension};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

fn load_config(cli: &Cli) -> Result<ConfigFile, CliError> {
    let mut file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ConfigFile::from_toml(&text)?
        }
        None => ConfigFile::default(),
    };
    if let Some(seed) = cli.seed {
        file.seed = seed;
    }
    Ok(file)
}

fn finish(mut staging: Staging, command: &str, hash: &str, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let manifest = RunManifest {
        config_hash: hash.to_string(),
        seed,
        command: command.to_string(),
        artifacts: staging.artifacts().to_vec(),
        tool_version: TOOL_VERSION.to_string(),
    };
    staging.write_json("manifest.json", &manifest)?;
    staging.commit()
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let file = load_config(cli)?;
    match &cli.command {
        Command::Spectrum => spectrum(cli, &file.resolve()?),
        Command::Stats { power } => stats(cli, &file.resolve()?, power.as_deref()),
        Command::Simulate => simulate_cmd(cli, &file.resolve()?),
        Command::Analyze { scan, segment, pump_ell } => analyze(cli, &file, scan.as_deref(), segment, *pump_ell),
        Command::Compare { a, b } => compare(cli, &file, a, b),
    }
}

fn spectrum(cli: &Cli, cfg: &ResolvedConfig) -> Result<Vec<PathBuf>, CliError> {
    let table = &cfg.experiment.second_source.modes;
    let mut oam: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    for e in &table.entries {
        *oam.entry((e.signal.ell, e.idler.ell)).or_insert(0.0) += e.weight;
    }
    let mut staging = Staging::new(&cli.out_dir)?;
    match cli.format {
        Format::Csv => {
            staging.write("mode_weights.csv", table.to_csv().as_bytes())?;
            let mut m = format!("# config_hash={}\nell_s,ell_i,weight\n", cfg.config_hash);
            for ((s, i), w) in &oam {
                let _ = writeln!(m, "{s},{i},{w:.11e}");
            }
            staging.write("weight_matrix.csv", m.as_bytes())?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Spectrum<'a> {
                config_hash: &'a str,
                pump: &'a cascade_core::modes::LgMode,
                entries: &'a [cascade_core::modes::ModeWeight],
                oam_matrix: BTreeMap<String, f64>,
            }
            staging.write_json(
                "mode_weights.json",
                &Spectrum {
                    config_hash: &cfg.config_hash,
                    pump: &table.pump,
                    entries: &table.entries,
                    oam_matrix: oam.iter().map(|((s, i), w)| (format!("{s},{i}"), *w)).collect(),
                },
            )?;
        }
    }
    finish(staging, "spectrum", &cfg.config_hash, cfg.experiment.seed)
}

#[derive(Debug, Serialize)]
struct StatsReport<'a> {
    config_hash: &'a str,
    first_source: &'a cascade_core::statistics::CalibrationReport,
    kappa: f64,
    drive_power: f64,
    alpha_d: f64,
    gamma: f64,
    eta: f64,
    tail_bound: f64,
    p_before_loss: Vec<f64>,
    p_after_loss: Vec<f64>,
    multipair_ratio: Option<MultipairRatio>,
    multipair_ratio_value: Option<f64>,
}

fn stats(cli: &Cli, cfg: &ResolvedConfig, power: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let drive_power = match power {
        Some(p) => parse_quantity(p, Dimension::Power).map_err(|e| CliError::Config(format!("--power: {e}")))?,
        None => cfg.stats_drive_power,
    };
    let exp = &cfg.experiment;
    let numerical = |e: cascade_core::statistics::StatsError| CliError::Numerical(e.to_string());
    let (alpha_d, gamma) = if drive_power == 0.0 {
        (0.0, 0.0)
    } else {
        let a = alpha_from_drive(drive_power, exp.drive_wavelength, exp.t_coh).map_err(|e| CliError::Config(e.to_string()))?;
        (a, a * exp.kappa1)
    };
    let n_max = tmsv_order_for_tail(gamma, cfg.stats_tail_bound);
    let before = pn_tmsv(gamma, n_max).map_err(numerical)?;
    let eta = exp.pump_losses.eta_total;
    let after = apply_loss(&before, eta).map_err(numerical)?;
    let ratio = multipair_ratio(&after).ok();
    let report = StatsReport {
        config_hash: &cfg.config_hash,
        first_source: &cfg.first_source,
        kappa: exp.kappa1,
        drive_power,
        alpha_d,
        gamma,
        eta,
        tail_bound: after.tail_bound,
        p_before_loss: before.probs.clone(),
        p_after_loss: after.probs.clone(),
        multipair_ratio: ratio,
        multipair_ratio_value: ratio.map(|r| r.value()).filter(|v| v.is_finite()),
    };
    let mut staging = Staging::new(&cli.out_dir)?;
    match cli.format {
        Format::Json => staging.write_json("stats.json", &report)?,
        Format::Csv => {
            let mut s = format!(
                "# config_hash={}\n# kappa={}\n# drive_power={}\n# alpha_d={}\n# gamma={}\n# eta={}\n# ratio={}\nn,p_before_loss,p_after_loss\n",
                cfg.config_hash,
                exp.kappa1,
                drive_power,
                alpha_d,
                gamma,
                eta,
                ratio.map(|r| r.value()).unwrap_or(f64::NAN)
            );
            for (n, (b, a)) in before.probs.iter().zip(&after.probs).enumerate() {
                let _ = writeln!(s, "{n},{b:e},{a:e}");
            }
            staging.write("stats.csv", s.as_bytes())?;
        }
    }
    finish(staging, "stats", &cfg.config_hash, exp.seed)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScanIndex {
    pub config_hash: String,
    pub seed: u64,
    pub pump_ell: i32,
    pub segments: Vec<ScanEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScanEntry {
    pub index: usize,
    pub file: String,
    pub truth: String,
    pub setting: (i32, i32),
    pub duration_ps: u64,
    pub seed: u64,
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    summary: &'a GroundTruthSummary,
}

fn simulate_cmd(cli: &Cli, cfg: &ResolvedConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut staging = Staging::new(&cli.out_dir)?;
    let mut segments = Vec::new();
    for (index, &setting) in cfg.scan.settings.iter().enumerate() {
        let c = setting_config(&cfg.experiment, index, setting, cfg.scan.time_per_setting);
        let output = if c.duration_ps() == 0 {
            SimulationOutput {
                duration_ps: 0,
                streams: Channel::ALL.iter().map(|&ch| EventStream::empty(ch)).collect(),
                truth: vec![Vec::new(); 4],
                summary: GroundTruthSummary::new(&c),
            }
        } else {
            simulate(&c)?
        };
        let stem = format!("setting_{index:03}");
        let file = format!("{stem}.tags");
        let path = staging.path(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        write_tags(&output.streams, output.duration_ps, &mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        staging.register(&file);
        if cli.format == Format::Csv {
            let csv_name = format!("{stem}.csv");
            let csv_path = staging.path(&csv_name);
            let mut w = BufWriter::new(File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?);
            write_tags_csv(&output.streams, output.duration_ps, &mut w)?;
            w.flush().map_err(|e| CliError::io(&csv_path, e))?;
            staging.register(&csv_name);
        }
        let truth = format!("{stem}.truth.json");
        staging.write_json(
            &truth,
            &TruthSidecar {
                config_hash: &cfg.config_hash,
                summary: &output.summary,
            },
        )?;
        segments.push(ScanEntry {
            index,
            file,
            truth,
            setting,
            duration_ps: output.duration_ps,
            seed: c.seed,
        });
    }
    staging.write_json(
        "scan.json",
        &ScanIndex {
            config_hash: cfg.config_hash.clone(),
            seed: cfg.experiment.seed,
            pump_ell: cfg.experiment.pump_ell,
            segments,
        },
    )?;
    if let Some(fit) = &cfg.rate_fit {
        staging.write_json("calibration.json", fit)?;
    }
    finish(staging, "simulate", &cfg.config_hash, cfg.experiment.seed)
}

fn read_tags(path: &Path) -> Result<TagFile, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_tags(BufReader::new(f)).map_err(|e| CliError::io(path, e))
}

fn channel<'a>(tags: &'a TagFile, ch: Channel) -> &'a [u64] {
    tags.stream(ch.name()).map(|s| s.timestamps.as_slice()).unwrap_or(&[])
}

fn parse_segment(spec: &str) -> Result<(PathBuf, (i32, i32)), CliError> {
    let bad = || CliError::Config(format!("--segment {spec:?}: expected FILE=ELL_S,ELL_I"));
    let (file, setting) = spec.rsplit_once('=').ok_or_else(bad)?;
    let (s, i) = setting.split_once(',').ok_or_else(bad)?;
    Ok((
        PathBuf::from(file),
        (s.trim().parse().map_err(|_| bad())?, i.trim().parse().map_err(|_| bad())?),
    ))
}

fn analyze(
    cli: &Cli,
    file: &ConfigFile,
    scan: Option<&Path>,
    segment_specs: &[String],
    pump_ell: Option<i32>,
) -> Result<Vec<PathBuf>, CliError> {
    let options = file.analysis_options()?;
    let (hash, pump_ell, segments): (String, i32, Vec<(PathBuf, (i32, i32))>) = match scan {
        Some(scan_path) => {
            let text = fs::read_to_string(scan_path).map_err(|e| CliError::io(scan_path, e))?;
            let index: ScanIndex =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", scan_path.display())))?;
            let base = scan_path.parent().unwrap_or(Path::new("."));
            let segs = index.segments.iter().map(|s| (base.join(&s.file), s.setting)).collect();
            (index.config_hash, pump_ell.unwrap_or(index.pump_ell), segs)
        }
        None => {
            if segment_specs.is_empty() {
                return Err(CliError::Config("analyze needs --scan or at least one --segment".into()));
            }
            let segs = segment_specs.iter().map(|s| parse_segment(s)).collect::<Result<Vec<_>, _>>()?;
            (file.config_hash()?, pump_ell.unwrap_or(file.pump.ell), segs)
        }
    };

    let heralded_opts = MatrixOptions { heralded: true, ..options };
    let mut unheralded: Vec<SegmentCounts> = Vec::new();
    let mut heralded: Vec<SegmentCounts> = Vec::new();
    for (path, setting) in &segments {
        let tags = read_tags(path)?;
        let herald = merge_sorted(&[channel(&tags, Channel::HeraldA), channel(&tags, Channel::HeraldB)]);
        let (signal, idler) = (channel(&tags, Channel::Signal), channel(&tags, Channel::Idler));
        unheralded.push(analyze_segment(*setting, tags.duration_ps, &herald, signal, idler, &options)?);
        heralded.push(analyze_segment(*setting, tags.duration_ps, &herald, signal, idler, &heralded_opts)?);
    }
    let m_u = assemble_matrix(pump_ell, &unheralded, &[], &options)?;
    let m_h = assemble_matrix(pump_ell, &heralded, &[], &heralded_opts)?;

    let mut staging = Staging::new(&cli.out_dir)?;
    for (kind, results) in [("unheralded", &unheralded), ("heralded", &heralded)] {
        let mut merged: BTreeMap<(i32, i32), SegmentCounts> = BTreeMap::new();
        for r in results.iter() {
            match merged.get_mut(&r.setting) {
                Some(m) => m.merge(r)?,
                None => {
                    merged.insert(r.setting, r.clone());
                }
            }
        }
        for ((s, i), r) in &merged {
            let text = format!("# config_hash={hash}\n{}", r.histogram.to_csv());
            staging.write(&format!("histogram_{kind}_{s}_{i}.csv"), text.as_bytes())?;
        }
    }
    for (kind, m) in [("unheralded", &m_u), ("heralded", &m_h)] {
        match cli.format {
            Format::Json => staging.write_json(&format!("matrix_{kind}.json"), &m.export(&hash))?,
            Format::Csv => staging.write(&format!("matrix_{kind}.csv"), m.to_csv(&hash).as_bytes())?,
        }
    }
    finish(staging, "analyze", &hash, file.seed)
}

fn read_matrix(path: &Path) -> Result<(CorrelationMatrix, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let export: MatrixExport =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let hash = export.config_hash.clone();
        Ok((export.into_matrix()?, hash))
    } else {
        Ok(CorrelationMatrix::from_csv(&text)?)
    }
}

#[derive(Debug, Serialize)]
struct Comparison {
    config_hash_a: String,
    config_hash_b: String,
    pearson: f64,
    diagonal_fraction_a: Option<f64>,
    diagonal_fraction_b: Option<f64>,
    /// Rate of B minus rate of A, per hour.
    deltas: BTreeMap<String, f64>,
}

fn compare(cli: &Cli, file: &ConfigFile, a: &Path, b: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (ma, ha) = read_matrix(a)?;
    let (mb, hb) = read_matrix(b)?;
    let c = pearson(&ma, &mb)?;
    let deltas = ma
        .cells
        .iter()
        .map(|(&(s, i), ca)| (format!("{s},{i}"), mb.cells[&(s, i)].rate_per_hour - ca.rate_per_hour))
        .collect();
    let report = Comparison {
        config_hash_a: ha,
        config_hash_b: hb,
        pearson: c,
        diagonal_fraction_a: diagonal_fraction(&ma).ok(),
        diagonal_fraction_b: diagonal_fraction(&mb).ok(),
        deltas,
    };
    let mut staging = Staging::new(&cli.out_dir)?;
    match cli.format {
        Format::Json => staging.write_json("compare.json", &report)?,
        Format::Csv => {
            let mut s = format!(
                "# pearson={}\n# diagonal_fraction_a={}\n# diagonal_fraction_b={}\nell_s,ell_i,delta_per_hour\n",
                report.pearson,
                report.diagonal_fraction_a.unwrap_or(f64::NAN),
                report.diagonal_fraction_b.unwrap_or(f64::NAN)
            );
            for (k, d) in &report.deltas {
                let _ = writeln!(s, "{k},{d}");
            }
            staging.write("compare.csv", s.as_bytes())?;
        }
    }
    let hash = file.config_hash()?;
    finish(staging, "compare", &hash, file.seed)
}
