use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cryforge::audio::{
    mel_spectrogram, prepare_corpus, read_manifest, read_wav, read_wav_with_info, resample,
    write_wav, SAMPLE_RATE,
};
use cryforge::sampling::{run_reverse, ReversePlan};
use cryforge::training::{load_checkpoint, train_loop, Dataset, LoopOptions, LOG_HEADER};
use cryforge::{EpsilonNet, TrainError, Trainer, VarianceSchedule, Waveform};
use sha2::{Digest, Sha256};

use crate::{CliError, ConfigArgs, GenerateArgs, MelArgs, MelFormat, PrepareArgs, RunConfig};
use crate::{ScheduleArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.dwck";
pub const LOG_FILE: &str = "train_log.csv";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const GENERATION_MANIFEST: &str = "generation_manifest.csv";

// items generated together; results do not depend on this
const GENERATE_CHUNK: usize = 4;

fn layered(common: &ConfigArgs, flags: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&common.set)?;
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn prepare(args: &PrepareArgs) -> Result<(), CliError> {
    if let Err(e) = fs::read_dir(&args.input) {
        return Err(CliError::Usage(format!(
            "cannot read input directory {}: {e}",
            args.input.display()
        )));
    }
    if !(args.clip_seconds > 0.0 && args.clip_seconds.is_finite()) {
        return Err(CliError::Usage("--clip-seconds must be positive".into()));
    }
    if args.rate == 0 {
        return Err(CliError::Usage("--rate must be positive".into()));
    }
    create_dir(&args.out)?;
    let manifest = args.out.join("manifest.csv");
    let report =
        prepare_corpus(&args.input, args.clip_seconds, args.rate, &manifest).map_err(CliError::runtime)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("files in: {}", report.files_in);
    println!("files skipped: {}", report.files_skipped);
    println!("clips out: {}", report.clips_out);
    println!("seconds discarded: {:.3}", report.seconds_discarded);
    println!("manifest: {}", manifest.display());
    Ok(())
}

/// Reads training clips from a manifest, or cuts every WAV below a
/// directory into consecutive clips of `clip_len` samples.
pub fn load_clips(data: &Path, clip_len: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let check_rate = |w: &Waveform, path: &Path| {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(CliError::Runtime(format!(
                "{} is {} Hz; training expects {SAMPLE_RATE} Hz (run `cryforge prepare` first)",
                path.display(),
                w.sample_rate()
            )));
        }
        Ok(())
    };
    if data.is_file() {
        let rows = read_manifest(data).map_err(CliError::runtime)?;
        let mut clips = Vec::with_capacity(rows.len());
        for row in rows {
            let w = read_wav(&row.clip_path).map_err(CliError::runtime)?;
            check_rate(&w, &row.clip_path)?;
            if w.len() != clip_len {
                return Err(CliError::Runtime(format!(
                    "{} has {} samples but audio_length is {clip_len}",
                    row.clip_path.display(),
                    w.len()
                )));
            }
            clips.push(w.into_samples());
        }
        return Ok(clips);
    }
    if data.is_dir() {
        let mut files = Vec::new();
        collect_wavs(data, &mut files)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", data.display())))?;
        files.sort();
        let mut clips = Vec::new();
        for f in files {
            let w = read_wav(&f).map_err(CliError::runtime)?;
            check_rate(&w, &f)?;
            clips.extend(w.samples().chunks_exact(clip_len).map(<[f64]>::to_vec));
        }
        return Ok(clips);
    }
    Err(CliError::Usage(format!("training data {} does not exist", data.display())))
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = layered(
        &args.common,
        &[
            ("data", args.data.as_ref().map(|p| p.display().to_string())),
            ("out_dir", args.out.as_ref().map(|p| p.display().to_string())),
            ("max_steps", args.max_steps.map(|v| v.to_string())),
            ("seed", args.seed.map(|v| v.to_string())),
        ],
    )?;
    if args.common.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    cfg.model
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.schedule
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no training data: pass --data or set `data`".into()))?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path).map_err(CliError::runtime)?;
            Trainer::resume(ck, Some(&cfg.model), Some(cfg.train.clone()))
                .map_err(|e| CliError::Runtime(format!("cannot resume from {}: {e}", path.display())))?
        }
        None => Trainer::new(cfg.model.clone(), cfg.schedule, cfg.train.clone())
            .map_err(CliError::runtime)?,
    };
    let clips = load_clips(&data_path, cfg.model.audio_length)?;
    let data = Dataset::new(clips).map_err(CliError::runtime)?;

    create_dir(&cfg.out_dir)?;
    let config_path = cfg.out_dir.join(RUN_CONFIG_FILE);
    fs::write(&config_path, cfg.to_text())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", config_path.display())))?;
    let opts = LoopOptions {
        checkpoint_path: Some(cfg.out_dir.join(CHECKPOINT_FILE)),
        log_path: Some(cfg.out_dir.join(LOG_FILE)),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "{LOG_HEADER}");
    let result = train_loop(&data, &mut trainer, &opts, |rec| {
        let _ = writeln!(out, "{}", rec.csv_line());
    });
    match result {
        Ok(outcome) => {
            eprintln!(
                "trained to step {}; checkpoint {}",
                outcome.checkpoint.step,
                cfg.out_dir.join(CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => Err(CliError::Runtime(format!("training diverged: {e}"))),
        Err(e) => Err(CliError::runtime(e)),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let cfg = layered(
        &args.common,
        &[
            ("num_samples", args.num.map(|v| v.to_string())),
            ("length", args.length.map(|v| v.to_string())),
            ("seed", args.seed.map(|v| v.to_string())),
            ("fast_steps", args.fast_steps.map(|v| v.to_string())),
            ("out_dir", args.out.as_ref().map(|p| p.display().to_string())),
        ],
    )?;
    if args.common.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    if let Some(s) = cfg.fast_steps {
        if s < 2 {
            return Err(CliError::Usage(format!("--fast-steps must be at least 2, got {s}")));
        }
    }
    if cfg.num_samples == 0 {
        return Err(CliError::Usage("--num must be at least 1".into()));
    }
    if cfg.length == Some(0) {
        return Err(CliError::Usage("--length must be at least 1".into()));
    }

    let bytes = fs::read(&args.ckpt)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", args.ckpt.display())))?;
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let ck = cryforge::Checkpoint::from_bytes(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.ckpt.display())))?;
    let sched = ck.schedule.build().map_err(CliError::runtime)?;
    let net = EpsilonNet::from_parameters(ck.model.clone(), ck.params).map_err(CliError::runtime)?;
    let plan = match cfg.fast_steps {
        Some(s) if s > sched.num_steps() => {
            return Err(CliError::Usage(format!(
                "--fast-steps {s} exceeds the checkpoint's {} diffusion steps",
                sched.num_steps()
            )))
        }
        Some(s) => ReversePlan::reduced(&sched, s).map_err(CliError::runtime)?,
        None => ReversePlan::full(&sched),
    };
    let length = cfg.length.unwrap_or(ck.model.audio_length);
    let seed = cfg.train.seed;

    create_dir(&cfg.out_dir)?;
    let mut manifest = String::from("file,seed,index,steps,fast,checkpoint_sha256\n");
    let indices: Vec<u64> = (0..cfg.num_samples as u64).collect();
    for chunk in indices.chunks(GENERATE_CHUNK) {
        let signals = run_reverse(&net, &plan, seed, chunk, length).map_err(CliError::runtime)?;
        for (&k, x) in chunk.iter().zip(signals) {
            let name = format!("sample_{seed}_{k}.wav");
            let path = cfg.out_dir.join(&name);
            let w = Waveform::new(x, SAMPLE_RATE).map_err(CliError::runtime)?.clamped();
            write_wav(&w, &path).map_err(CliError::runtime)?;
            manifest.push_str(&format!(
                "{name},{seed},{k},{},{},{digest}\n",
                plan.num_steps(),
                cfg.fast_steps.is_some()
            ));
            println!("{}", path.display());
        }
    }
    let manifest_path = cfg.out_dir.join(GENERATION_MANIFEST);
    fs::write(&manifest_path, manifest)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", manifest_path.display())))?;
    Ok(())
}

pub fn mel(args: &MelArgs) -> Result<(), CliError> {
    let (wave, info) = read_wav_with_info(&args.input).map_err(CliError::runtime)?;
    if info.channels == 2 {
        eprintln!("note: {} is stereo; channels averaged to mono", args.input.display());
    }
    let wave = if wave.sample_rate() != SAMPLE_RATE {
        eprintln!(
            "note: resampling {} Hz input to {SAMPLE_RATE} Hz",
            wave.sample_rate()
        );
        resample(&wave, SAMPLE_RATE)
    } else {
        wave
    };
    let m = mel_spectrogram(&wave).map_err(CliError::runtime)?;
    let bytes = match args.format {
        MelFormat::Csv => m.to_csv().into_bytes(),
        MelFormat::Raw => m.to_raw(),
        MelFormat::Pgm => m.to_pgm(),
    };
    fs::write(&args.out, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("{} x {} mel grid written to {}", m.channels(), m.frames, args.out.display());
    Ok(())
}

/// `t,beta,alpha_bar,beta_tilde` for `t = 1..=T`, each value printed in its
/// shortest round-trip form.
pub fn schedule_csv(s: &VarianceSchedule) -> String {
    let mut out = String::from("t,beta,alpha_bar,beta_tilde\n");
    for t in 1..=s.num_steps() {
        out.push_str(&format!(
            "{t},{},{},{}\n",
            s.beta(t),
            s.alpha_bar(t),
            s.beta_tilde(t)
        ));
    }
    out
}

pub fn schedule_inspect(args: &ScheduleArgs) -> Result<(), CliError> {
    let s = VarianceSchedule::linear(args.steps, args.beta_start, args.beta_end)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let csv = schedule_csv(&s);
    match &args.out {
        Some(path) => fs::write(path, csv)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
