//! Training folds sampled from a grammar, train/eval overlap statistics, and
//! additive noise at a target SNR.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Cursor;

use rand::Rng as _;
use thiserror::Error;

use crate::command::Command;
use crate::grammar::{Automaton, GrammarError, SampleMode};
use crate::util::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid fold spec: {0}")]
    FoldSpec(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("{0} command list is empty")]
    Empty(&'static str),
    #[error("invalid audio: {0}")]
    Audio(String),
    #[error("sample rates differ: clean {clean} Hz, noise {noise} Hz")]
    RateMismatch { clean: u32, noise: u32 },
    #[error("{0} signal has zero power")]
    ZeroPower(&'static str),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

/// Sizes and fold counts for the sampled training sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub sizes: Vec<usize>,
    pub folds_per_size: usize,
    pub seed: u64,
    pub mode: SampleMode,
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec {
            sizes: (11..=16).map(|k| 1usize << k).collect(),
            folds_per_size: 5,
            seed: 0,
            mode: SampleMode::default(),
        }
    }
}

impl FoldSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.sizes.is_empty() {
            return Err(CorpusError::FoldSpec("no sizes".into()));
        }
        if self.sizes[0] == 0 {
            return Err(CorpusError::FoldSpec("sizes must be positive".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CorpusError::FoldSpec("sizes must be strictly increasing".into()));
        }
        if self.folds_per_size == 0 {
            return Err(CorpusError::FoldSpec("folds_per_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed for the sample at `(size, fold)`.
    pub fn fold_seed(&self, size: usize, fold: usize) -> u64 {
        derive_seed(self.seed, &[size as u64, fold as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub size: usize,
    pub fold: usize,
    pub commands: Vec<Command>,
}

impl Fold {
    pub fn file_name(&self) -> String {
        fold_file_name(self.size, self.fold)
    }
}

pub fn fold_file_name(size: usize, fold: usize) -> String {
    format!("train_n{size}_fold{fold}.txt")
}

/// One fold of `size` commands.
pub fn sample_fold(
    a: &Automaton,
    spec: &FoldSpec,
    size: usize,
    fold: usize,
) -> Result<Vec<Command>, CorpusError> {
    Ok(a.sample(size, spec.fold_seed(size, fold), spec.mode)?)
}

/// All folds, ordered by size then fold index.
pub fn make_folds(a: &Automaton, spec: &FoldSpec) -> Result<Vec<Fold>, CorpusError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.sizes.len() * spec.folds_per_size);
    for &size in &spec.sizes {
        for fold in 0..spec.folds_per_size {
            out.push(Fold {
                size,
                fold,
                commands: sample_fold(a, spec, size, fold)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n: usize,
    pub unique: usize,
    /// Evaluation commands (with multiplicity) that occur in the training set.
    pub overlap_count: usize,
    pub overlap_proportion: f64,
}

impl DatasetStats {
    pub const TSV_HEADER: &'static str = "n\tunique\toverlap\tproportion";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}",
            self.n, self.unique, self.overlap_count, self.overlap_proportion
        )
    }
}

pub fn stats(train: &[Command], eval: &[Command]) -> Result<DatasetStats, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::Empty("training"));
    }
    if eval.is_empty() {
        return Err(CorpusError::Empty("evaluation"));
    }
    let distinct: HashSet<&Command> = train.iter().collect();
    let overlap_count = eval.iter().filter(|e| distinct.contains(e)).count();
    Ok(DatasetStats {
        n: train.len(),
        unique: distinct.len(),
        overlap_count,
        overlap_proportion: overlap_count as f64 / eval.len() as f64,
    })
}

pub fn stats_tsv(rows: &[DatasetStats]) -> String {
    let mut out = String::from(DatasetStats::TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.tsv_row());
    }
    out
}

/// Mono audio with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, CorpusError> {
        if samples.is_empty() {
            return Err(CorpusError::Audio("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(CorpusError::Audio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(CorpusError::Audio(format!("non-finite sample at {i}")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads 16-bit PCM mono WAV.
    pub fn read_wav(bytes: &[u8]) -> Result<Self, CorpusError> {
        let reader = hound::WavReader::new(Cursor::new(bytes))?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(CorpusError::Audio(format!(
                "expected 16-bit PCM mono, found {} channel(s), {} bits, {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<Vec<_>, _>>()?;
        AudioClip::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM mono WAV; amplitudes outside [-1, 1] are clipped.
    pub fn write_wav(&self) -> Result<Vec<u8>, CorpusError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec)?;
            for &x in &self.samples {
                w.write_sample((x.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
            }
            w.finalize()?;
        }
        Ok(buf.into_inner())
    }
}

/// Mean squared amplitude.
pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10 log10(P_signal / P_noise)`.
pub fn measured_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// A mixed clip and the components it was summed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixed: AudioClip,
    /// Noise after alignment and scaling; `mixed = clean + scaled_noise`.
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

/// Noise gain giving `snr_db` for the given component powers.
pub fn snr_gain(p_clean: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` to `clean` at `snr_db`. Short noise is looped; long noise is
/// cropped at an offset drawn from `seed`. The gain is computed from the
/// aligned segment, so the SNR of the stored components is exact.
pub fn mix_noise(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    seed: u64,
) -> Result<Mixture, CorpusError> {
    if clean.sample_rate != noise.sample_rate {
        return Err(CorpusError::RateMismatch {
            clean: clean.sample_rate,
            noise: noise.sample_rate,
        });
    }
    if !snr_db.is_finite() {
        return Err(CorpusError::Audio(format!("snr must be finite, got {snr_db}")));
    }
    let n = clean.len();
    let aligned: Vec<f64> = if noise.len() > n {
        let offset = rng_from_seed(seed).gen_range(0..=noise.len() - n);
        noise.samples[offset..offset + n].to_vec()
    } else {
        noise.samples.iter().copied().cycle().take(n).collect()
    };
    let p_clean = power(&clean.samples);
    let p_noise = power(&aligned);
    if p_clean == 0.0 {
        return Err(CorpusError::ZeroPower("clean"));
    }
    if p_noise == 0.0 {
        return Err(CorpusError::ZeroPower("noise"));
    }
    let gain = snr_gain(p_clean, p_noise, snr_db);
    let scaled_noise: Vec<f64> = aligned.iter().map(|x| gain * x).collect();
    let mixed = clean
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(c, z)| c + z)
        .collect();
    Ok(Mixture {
        mixed: AudioClip::new(mixed, clean.sample_rate)?,
        scaled_noise,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use proptest::prelude::*;

    fn toy() -> Automaton {
        let g = parse_grammar(
            r#"command = ("go" | "turn" | "move") ("left" | "right" | "up" | "down" | "back") ["slowly" | "quickly"] ("now" | "later" | "again" | "twice");"#,
        )
        .unwrap();
        Automaton::compile(&g)
    }

    fn cmds(lines: &[&str]) -> Vec<Command> {
        lines.iter().map(|l| Command::parse(l).unwrap()).collect()
    }

    #[test]
    fn default_spec_matches_the_protocol() {
        let s = FoldSpec::default();
        assert_eq!(s.sizes, vec![2048, 4096, 8192, 16384, 32768, 65536]);
        assert_eq!(s.folds_per_size, 5);
        s.validate().unwrap();
    }

    #[test]
    fn folds_are_sized_deterministic_and_named() {
        let a = toy();
        assert_eq!(a.count_language().unwrap(), 180);
        let spec = FoldSpec {
            sizes: vec![8],
            folds_per_size: 2,
            seed: 3,
            mode: SampleMode::ProductionUniform,
        };
        let f = make_folds(&a, &spec).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|x| x.commands.len() == 8 && x.commands.iter().all(|c| a.accepts_command(c))));
        assert_eq!(f, make_folds(&a, &spec).unwrap());
        assert_ne!(f[0].commands, f[1].commands);

        let full = FoldSpec::default();
        let names: HashSet<String> = full
            .sizes
            .iter()
            .flat_map(|&s| (0..full.folds_per_size).map(move |k| fold_file_name(s, k)))
            .collect();
        assert_eq!(names.len(), 30);
        assert!(names.contains("train_n65536_fold4.txt"));
    }

    #[test]
    fn invalid_specs() {
        for (sizes, folds) in [(vec![], 1), (vec![4, 4], 1), (vec![8, 4], 1), (vec![0, 4], 1), (vec![4], 0)] {
            let s = FoldSpec {
                sizes,
                folds_per_size: folds,
                ..FoldSpec::default()
            };
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn overlap_statistics() {
        let t = cmds(&["go left", "go left", "go right"]);
        let s = stats(&t, &t).unwrap();
        assert_eq!((s.n, s.unique, s.overlap_count), (3, 2, 3));
        assert_eq!(s.overlap_proportion, 1.0);
        let e = cmds(&["turn up", "go left", "go left", "move"]);
        let s = stats(&t, &e).unwrap();
        assert_eq!((s.overlap_count, s.overlap_proportion), (2, 0.5));
        let s = stats(&cmds(&["a"]), &cmds(&["b"])).unwrap();
        assert_eq!(s.overlap_count, 0);
        assert!(stats(&[], &e).is_err());
        assert_eq!(
            stats_tsv(&[s]),
            "n\tunique\toverlap\tproportion\n1\t1\t0\t0.0000\n"
        );
    }

    fn tone(n: usize, f: f64, amp: f64) -> AudioClip {
        AudioClip::new((0..n).map(|i| amp * (i as f64 * f).sin()).collect(), 16000).unwrap()
    }

    #[test]
    fn equal_power_gain() {
        let c = AudioClip::new(vec![0.5, -0.5, 0.5, -0.5], 8000).unwrap();
        let m = mix_noise(&c, &c, 10.0, 0).unwrap();
        assert!((m.gain - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!((m.gain - 0.31623).abs() < 1e-5);
        assert!((measured_snr_db(c.samples(), &m.scaled_noise) - 10.0).abs() < 0.01);
        assert!((mix_noise(&c, &c, 0.0, 0).unwrap().gain - 1.0).abs() < 1e-12);
        let quiet = mix_noise(&c, &c, 300.0, 0).unwrap();
        assert!(quiet.gain < 1e-14);
        assert!(quiet.mixed.samples().iter().zip(c.samples()).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn noise_is_looped_or_cropped() {
        let clean = tone(1000, 0.1, 0.3);
        let short = tone(300, 0.37, 0.1);
        let m = mix_noise(&clean, &short, 10.0, 0).unwrap();
        assert_eq!(m.mixed.len(), 1000);
        assert!((m.scaled_noise[300] - m.scaled_noise[0]).abs() < 1e-15);
        assert!((measured_snr_db(clean.samples(), &m.scaled_noise) - 10.0).abs() < 1e-9);

        let long = AudioClip::new((0..5000).map(|i| ((i * 7919) % 101) as f64 / 100.0 - 0.5).collect(), 16000).unwrap();
        let a = mix_noise(&clean, &long, 5.0, 1).unwrap();
        let b = mix_noise(&clean, &long, 5.0, 2).unwrap();
        assert_eq!(a, mix_noise(&clean, &long, 5.0, 1).unwrap());
        assert_ne!(a.scaled_noise, b.scaled_noise);
        for m in [a, b] {
            assert!((measured_snr_db(clean.samples(), &m.scaled_noise) - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_errors() {
        let c = tone(100, 0.1, 0.5);
        let silent = AudioClip::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(mix_noise(&c, &silent, 10.0, 0), Err(CorpusError::ZeroPower("noise"))));
        assert!(matches!(mix_noise(&silent, &c, 10.0, 0), Err(CorpusError::ZeroPower("clean"))));
        let other_rate = AudioClip::new(vec![0.1; 100], 8000).unwrap();
        assert!(matches!(mix_noise(&c, &other_rate, 10.0, 0), Err(CorpusError::RateMismatch { .. })));
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let c = AudioClip::new(vec![0.0, 0.5, -0.5, 2.0, -2.0], 22050).unwrap();
        let back = AudioClip::read_wav(&c.write_wav().unwrap()).unwrap();
        assert_eq!(back.sample_rate(), 22050);
        let expect = [0.0, 0.5, -0.5, 1.0, -1.0];
        for (a, b) in back.samples().iter().zip(expect) {
            assert!((a - b).abs() < 1e-4, "{a} {b}");
        }
    }

    fn command_strategy() -> impl Strategy<Value = Vec<Command>> {
        prop::collection::vec(0usize..12, 1..30).prop_map(|v| {
            v.into_iter()
                .map(|i| Command::parse(&format!("w{} x", i % 7)).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn stats_ignore_order(train in command_strategy(), eval in command_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = rng_from_seed(seed);
            let (mut t2, mut e2) = (train.clone(), eval.clone());
            t2.shuffle(&mut rng);
            e2.shuffle(&mut rng);
            prop_assert_eq!(stats(&train, &eval).unwrap(), stats(&t2, &e2).unwrap());
        }

        #[test]
        fn overlap_grows_with_nested_training_sets(train in command_strategy(), eval in command_strategy(), cut in 1usize..30) {
            let k = cut.min(train.len());
            let small = stats(&train[..k], &eval).unwrap();
            let big = stats(&train, &eval).unwrap();
            prop_assert!(small.overlap_count <= big.overlap_count);
            prop_assert!(big.unique <= big.n);
        }

        #[test]
        fn measured_snr_matches_request(snr in -20.0f64..40.0, seed in any::<u64>(), n in 10usize..400, m in 5usize..800) {
            let mut rng = rng_from_seed(seed);
            let clean = AudioClip::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000).unwrap();
            let noise = AudioClip::new((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000).unwrap();
            let mix = mix_noise(&clean, &noise, snr, seed).unwrap();
            prop_assert!((measured_snr_db(clean.samples(), &mix.scaled_noise) - snr).abs() < 0.01);
        }
    }
}
