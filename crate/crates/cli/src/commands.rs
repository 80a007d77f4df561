//! Subcommand bodies. Inputs are validated before any output is staged.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spkm::analysis::{cross_correlation, peak_prominence, selectivity_report};
use spkm::codec::{cost_report_with_mode, pack_stream, unpack_stream, CostMode, CostReport, FormatChoice, StorageFormat};
use spkm::cost_model::full_sweep;
use spkm::synthdata::{read_wav, render, sample_score, toy_dataset, write_wav, DatasetConfig, FeatureExtractor, FeatureFrames, FrameConfig, NoteBank};
use spkm::toynet::checkpoint;
use spkm::toynet::train::{default_b0, metrics_csv, train_with_progress, StepMetrics, TrainConfig};
use spkm::toynet::{mu_select as select_mu, ModelConfig, MuPlacement, ToyAutoencoder, Variant};
use spkm::EventMatrix;

use crate::config::KeyValues;
use crate::output::{numbered, Staged};
use crate::{AnalyzeArgs, CliError, CostArgs, DecodeArgs, EncodeArgs, MuSelectArgs, PackArgs, SweepArgs, SynthArgs, TrainArgs, UnpackArgs};

const MAX_DIM: u64 = 1 << 32;
const MAX_SWEEP_CELLS: u64 = 1 << 26;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<EventMatrix, CliError> {
    EventMatrix::from_text(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_format(name: &str) -> Result<FormatChoice, CliError> {
    if name == "auto" {
        return Ok(FormatChoice::Auto);
    }
    name.parse::<StorageFormat>()
        .map(FormatChoice::Fixed)
        .map_err(|_| CliError::Usage(format!("unknown format {name:?}; use auto, dense, coo, time or units")))
}

fn check_shape(n: u64, t: u64) -> Result<(), CliError> {
    if n == 0 || t == 0 || n >= MAX_DIM || t >= MAX_DIM {
        return Err(CliError::Data(format!("shape {n}x{t} must have both sides in 1..2^32")));
    }
    Ok(())
}

pub fn cost(a: CostArgs) -> Result<(), CliError> {
    let (n, t, s) = match (&a.matrix, a.n, a.t, a.s) {
        (Some(path), None, None, None) => {
            let m = read_matrix(path)?;
            (m.n_units() as u64, m.n_steps() as u64, m.event_count() as u64)
        }
        (None, Some(n), Some(t), Some(s)) => (n, t, s),
        _ => return Err(CliError::Usage("give either --matrix FILE or all of --n, --t and --s".into())),
    };
    check_shape(n, t)?;
    if s > n * t {
        return Err(CliError::Data(format!("S = {s} exceeds N*T = {}", n * t)));
    }
    let mut out = format!("mode,{}\n", CostReport::CSV_HEADER);
    for (name, mode) in [("nominal", CostMode::Nominal), ("exact", CostMode::Exact)] {
        let _ = writeln!(out, "{name},{}", cost_report_with_mode(n, t, s, mode).csv_row());
    }
    if let Some(path) = &a.csv {
        let mut staged = Staged::new();
        staged.write(path, out.as_bytes())?;
        staged.commit()?;
    }
    print!("{out}");
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    check_shape(a.n, a.t)?;
    if a.n * a.t > MAX_SWEEP_CELLS {
        return Err(CliError::Data(format!("N*T = {} is too large to sweep", a.n * a.t)));
    }
    let table = full_sweep(a.n, a.t)?;
    let mut staged = Staged::new();
    staged.write(&a.out, table.to_csv().as_bytes())?;
    if let Some(svg) = &a.svg {
        staged.write(svg, table.to_svg(a.nominal_overlay).as_bytes())?;
    }
    staged.commit()?;
    for r in table.regimes() {
        println!("{}: S in {}..={}", r.format, r.s_start, r.s_end);
    }
    Ok(())
}

pub fn pack(a: PackArgs) -> Result<(), CliError> {
    let choice = parse_format(&a.format)?;
    let matrices = a.inputs.iter().map(|p| read_matrix(p)).collect::<Result<Vec<_>, _>>()?;
    let packed = pack_stream(&matrices, choice)?;
    for (path, s) in a.inputs.iter().zip(&packed.samples) {
        println!(
            "{}: {} events, {} ({} payload bits)",
            path.display(),
            s.event_count,
            s.format,
            s.payload_bits
        );
    }
    println!("{} samples, {} bytes", packed.samples.len(), packed.bytes.len());
    let mut staged = Staged::new();
    staged.write(&a.out, &packed.bytes)?;
    staged.commit()
}

pub fn unpack(a: UnpackArgs) -> Result<(), CliError> {
    let matrices = unpack_stream(&read_bytes(&a.input)?)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let mut staged = Staged::new();
    for (k, m) in matrices.iter().enumerate() {
        staged.write(&a.out_dir.join(format!("sample_{k:04}.txt")), m.to_text().as_bytes())?;
    }
    staged.commit()?;
    println!("{} samples", matrices.len());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = FrameConfig::default();
    let bank = NoteBank::arpeggio(a.k)?;
    let grid = sample_score(a.seed, a.k, a.t, a.rate)?;
    let wave = render(&grid, &bank, &cfg)?;
    let mut staged = Staged::new();
    staged.write_with(&with_suffix(&a.out, ".wav"), |tmp| Ok(write_wav(tmp, &wave, cfg.sample_rate as u32)?))?;
    staged.write(&with_suffix(&a.out, ".grid.txt"), grid.to_text().as_bytes())?;
    staged.commit()?;
    println!("{} onsets, {} samples", grid.event_count(), wave.len());
    Ok(())
}

/// Training settings assembled from defaults, a config file, `--set`
/// overrides and explicit flags, in increasing priority.
struct TrainSettings {
    cfg: TrainConfig,
    data_seed: u64,
    clips: usize,
    notes: usize,
    onset_rate: f64,
}

const TRAIN_KEYS: &[&str] = &[
    "variant",
    "seed",
    "data_seed",
    "clips",
    "notes",
    "onset_rate",
    "n_steps",
    "n_units",
    "hidden",
    "enc_kernel",
    "dec_kernel",
    "mu_placement",
    "b0",
    "gamma_inf",
    "steps",
    "phase1",
    "phase2",
    "phase3",
    "lr",
    "batch_size",
    "grad_clip",
];

fn split_steps(total: usize) -> [usize; 3] {
    let p1 = total * 2 / 5;
    let p2 = (total - p1) / 2;
    [p1, p2, total - p1 - p2]
}

fn train_settings(a: &TrainArgs) -> Result<TrainSettings, CliError> {
    let mut kv = match &a.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::default(),
    };
    for s in &a.set {
        kv.set(s)?;
    }
    if let Some(v) = &a.variant {
        kv.insert("variant", v);
    }
    if let Some(v) = a.steps {
        kv.insert("steps", v);
        for p in ["phase1", "phase2", "phase3"] {
            kv.insert(p, "");
        }
    }
    if let Some(v) = a.seed {
        kv.insert("seed", v);
    }
    if let Some(v) = a.clips {
        kv.insert("clips", v);
    }
    if let Some(bad) = kv.keys().find(|k| !TRAIN_KEYS.contains(k)) {
        return Err(CliError::Data(format!("unknown config key {bad:?}")));
    }
    let defaults = TrainConfig::default();
    let variant = match kv.get::<String>("variant")? {
        Some(v) => Variant::from_name(&v).map_err(|_| CliError::Usage(format!("unknown variant {v:?}")))?,
        None => return Err(CliError::Usage("a variant is required (--variant free|sparse|mu)".into())),
    };
    let placement = match kv.get::<String>("mu_placement")?.as_deref() {
        None | Some("both") => MuPlacement::Both,
        Some("encoder") => MuPlacement::EncoderOutput,
        Some("decoder") => MuPlacement::DecoderInput,
        Some(other) => return Err(CliError::Data(format!("unknown mu_placement {other:?}"))),
    };
    let frame = FrameConfig::default();
    let model = ModelConfig {
        n_features: frame.n_mels,
        hidden: kv.get_or("hidden", defaults.model.hidden)?,
        n_units: kv.get_or("n_units", defaults.model.n_units)?,
        enc_kernel: kv.get_or("enc_kernel", defaults.model.enc_kernel)?,
        dec_kernel: kv.get_or("dec_kernel", defaults.model.dec_kernel)?,
        mu_placement: placement,
    };
    let n_steps = kv.get_or("n_steps", defaults.n_steps)?;
    let explicit_phases = ["phase1", "phase2", "phase3"]
        .iter()
        .map(|p| kv.get::<String>(p).map(|v| v.filter(|s| !s.is_empty())))
        .collect::<Result<Vec<_>, _>>()?;
    let phase_steps = if explicit_phases.iter().all(Option::is_some) {
        let mut out = [0; 3];
        for (o, v) in out.iter_mut().zip(&explicit_phases) {
            let v = v.as_deref().unwrap_or_default();
            *o = v.parse().map_err(|_| CliError::Data(format!("bad phase length {v:?}")))?;
        }
        out
    } else if explicit_phases.iter().any(Option::is_some) {
        return Err(CliError::Data("give all of phase1, phase2, phase3 or none".into()));
    } else {
        match kv.get::<usize>("steps")? {
            Some(total) => split_steps(total),
            None => defaults.phase_steps,
        }
    };
    let cfg = TrainConfig {
        variant,
        model,
        n_steps,
        b0: kv.get_or("b0", default_b0(model.n_units, n_steps))?,
        gamma_inf: kv.get_or("gamma_inf", defaults.gamma_inf)?,
        phase_steps,
        learning_rate: kv.get_or("lr", defaults.learning_rate)?,
        batch_size: kv.get_or("batch_size", defaults.batch_size)?,
        seed: kv.get_or("seed", defaults.seed)?,
        grad_clip: match kv.get::<f64>("grad_clip")? {
            Some(c) if c <= 0.0 => None,
            Some(c) => Some(c),
            None => defaults.grad_clip,
        },
    };
    cfg.validate().map_err(|e| CliError::Data(e.to_string()))?;
    let settings = TrainSettings {
        data_seed: kv.get_or("data_seed", cfg.seed)?,
        clips: kv.get_or("clips", 64)?,
        notes: kv.get_or("notes", 8)?,
        onset_rate: kv.get_or("onset_rate", DatasetConfig::default().onset_rate)?,
        cfg,
    };
    if settings.clips == 0 {
        return Err(CliError::Data("clips must be positive".into()));
    }
    Ok(settings)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let st = train_settings(&a)?;
    let bank = NoteBank::arpeggio(st.notes)?;
    let data_cfg = DatasetConfig {
        n_steps: st.cfg.n_steps,
        onset_rate: st.onset_rate,
        frame: FrameConfig::default(),
    };
    let clips = toy_dataset(st.data_seed, st.clips, &bank, &data_cfg)?;
    let features: Vec<_> = clips.into_iter().map(|c| c.features).collect();
    let every = a.log_every;
    let mut report = |m: &StepMetrics| {
        if every > 0 && m.step.is_multiple_of(every) {
            eprintln!(
                "step {} loss_x {:.6} loss_z {:.1} gamma {:.3e} mean_S {:.1} density {:.4}",
                m.step, m.loss_x, m.loss_z, m.gamma, m.mean_s, m.density
            );
        }
    };
    let (model, log) = train_with_progress(&st.cfg, &features, &mut report)?;
    let mut staged = Staged::new();
    staged.write(&with_suffix(&a.out, ".spkn"), &checkpoint::to_bytes(&model))?;
    staged.write(&with_suffix(&a.out, ".metrics.csv"), metrics_csv(&log).as_bytes())?;
    staged.commit()?;
    if let Some(last) = log.last() {
        println!(
            "{} steps: loss_x {:.6} mean_S {:.1} density {:.4} bits {:.0}",
            log.len(),
            last.loss_x,
            last.mean_s,
            last.density,
            last.bits_exact
        );
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<ToyAutoencoder, CliError> {
    checkpoint::from_bytes(&read_bytes(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn wav_features(path: &Path, model: &ToyAutoencoder) -> Result<FeatureFrames, CliError> {
    let cfg = FrameConfig::default();
    let (samples, rate) = read_wav(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if rate as f64 != cfg.sample_rate {
        return Err(CliError::Data(format!(
            "{}: sample rate {rate} Hz, expected {}",
            path.display(),
            cfg.sample_rate
        )));
    }
    let frames = FeatureExtractor::new(cfg)
        .features(&samples)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if frames.nrows() != model.config.n_features {
        return Err(CliError::Data(format!(
            "model expects {} feature bins, audio gives {}",
            model.config.n_features,
            frames.nrows()
        )));
    }
    Ok(frames)
}

pub fn encode(a: EncodeArgs) -> Result<(), CliError> {
    let choice = parse_format(&a.format)?;
    let model = load_model(&a.checkpoint)?;
    model.check_mu(a.mu)?;
    let mut matrices = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let x = wav_features(path, &model)?;
        matrices.push(model.encode_to_matrix(&x, a.mu)?);
    }
    let packed = pack_stream(&matrices, choice)?;
    for (path, s) in a.inputs.iter().zip(&packed.samples) {
        println!("{}: {} events, {} {} bits", path.display(), s.event_count, s.format, s.payload_bits);
    }
    let mut staged = Staged::new();
    staged.write(&a.out, &packed.bytes)?;
    staged.commit()
}

pub fn decode(a: DecodeArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    model.check_mu(a.mu)?;
    let matrices = unpack_stream(&read_bytes(&a.input)?)?;
    let cfg = FrameConfig::default();
    let extractor = FeatureExtractor::new(cfg);
    let mut staged = Staged::new();
    for (k, m) in matrices.iter().enumerate() {
        let frames = model.decode_matrix(m, a.mu)?;
        let wave = extractor.resynthesize(&frames);
        let path = if matrices.len() == 1 { a.out.clone() } else { numbered(&a.out, k) };
        staged.write_with(&path, |tmp| Ok(write_wav(tmp, &wave, cfg.sample_rate as u32)?))?;
    }
    staged.commit()?;
    println!("{} samples decoded", matrices.len());
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    if a.wavs.len() != a.grids.len() {
        return Err(CliError::Usage(format!(
            "{} --wav files but {} --grid files",
            a.wavs.len(),
            a.grids.len()
        )));
    }
    let model = load_model(&a.checkpoint)?;
    model.check_mu(a.mu)?;
    let mut codes = Vec::with_capacity(a.wavs.len());
    let mut grids = Vec::with_capacity(a.grids.len());
    for (wav, grid) in a.wavs.iter().zip(&a.grids) {
        let x = wav_features(wav, &model)?;
        codes.push(model.encode_to_matrix(&x, a.mu)?);
        grids.push(read_matrix(grid)?);
    }
    let vol = cross_correlation(&codes, &grids, a.window)?;
    let prom = peak_prominence(&vol, a.peak)?;
    let report = selectivity_report(&prom, a.top_k, a.anchor)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let mut staged = Staged::new();
    staged.write(&a.out_dir.join("correlation.csv"), vol.to_csv().as_bytes())?;
    staged.write(&a.out_dir.join("prominence.csv"), prom.to_csv().as_bytes())?;
    staged.write(&a.out_dir.join("selectivity.csv"), report.to_csv().as_bytes())?;
    staged.commit()?;
    println!("dispersion {:.6}", prom.dispersion());
    println!("top units for note {}: {:?}", a.anchor, report.units());
    Ok(())
}

pub fn mu_select(a: MuSelectArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    if model.variant != Variant::MuSparse {
        return Err(CliError::Data("mu-select needs a checkpoint trained with variant mu".into()));
    }
    let mut rows = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let x = wav_features(path, &model)?;
        rows.push((path, select_mu(&model, &x, a.min_sisnr)?));
    }
    println!("file,mu,met_floor,si_snr_db,events,bits");
    for (path, sel) in rows {
        if !sel.met_floor {
            eprintln!(
                "warning: {} does not reach {} dB at any mu; falling back to mu = 0",
                path.display(),
                a.min_sisnr
            );
        }
        println!(
            "{},{},{},{:.3},{},{}",
            path.display(),
            sel.mu,
            sel.met_floor,
            sel.si_snr_db,
            sel.events,
            sel.bits
        );
    }
    Ok(())
}
