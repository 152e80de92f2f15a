use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{row_spec, ExpError, Rescorer, BASELINE_ROW};
use crate::corpus::FoldSpec;
use crate::grammar::SampleMode;
use crate::ngram::Smoothing;
use crate::rnnlm::Optimizer;
use crate::util::fnv1a;

/// Everything one experiment run depends on. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Grammar defining the command language; folds and the evaluation set are
    /// sampled from it.
    pub grammar: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Numbered systems to run, from 1 to 6.
    #[serde(default = "all_rows")]
    pub rows: Vec<u8>,
    /// Also run the unadapted generic n-gram decoder.
    #[serde(default)]
    pub baseline: bool,
    /// Parallel cells; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    /// Per-cell results and pretrained models are kept here between runs.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub folds: FoldSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub channel: ChannelSettings,
    #[serde(default)]
    pub generic: GenericSettings,
    #[serde(default)]
    pub ngram: NGramSettings,
    #[serde(default)]
    pub rnn: RnnSettings,
    #[serde(default)]
    pub images: ImageSettings,
}

fn all_rows() -> Vec<u8> {
    (1..=6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSettings {
    pub sizes: Vec<usize>,
    pub folds_per_size: usize,
    /// `production-uniform` or `language-uniform`; also used for the evaluation set.
    pub sampling: String,
}

impl Default for FoldSettings {
    fn default() -> Self {
        let d = FoldSpec::default();
        FoldSettings {
            sizes: d.sizes,
            folds_per_size: d.folds_per_size,
            sampling: "production-uniform".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Utterances in the evaluation set, drawn with repeats from the grammar.
    pub size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { size: 2880 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSettings {
    pub nbest: usize,
    pub noise_sd: f64,
    /// Confusion table; without one, grammar words are paired at random.
    pub confusion: Option<PathBuf>,
    /// Penalty range for randomly paired words.
    pub penalty_range: [f64; 2],
}

impl Default for ChannelSettings {
    fn default() -> Self {
        ChannelSettings {
            nbest: 10,
            noise_sd: 1.0,
            confusion: None,
            penalty_range: [0.3, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenericSettings {
    /// Out-of-domain text, one sentence per line; synthesized when absent.
    pub corpus: Option<PathBuf>,
    pub sentences: usize,
    pub fillers: usize,
}

impl Default for GenericSettings {
    fn default() -> Self {
        GenericSettings {
            corpus: None,
            sentences: 5000,
            fillers: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramSettings {
    pub order: usize,
    pub smoothing: String,
    /// Weight of the in-domain component.
    pub lambda: f64,
    /// N-gram budget of each component of the first-pass model.
    pub small_budget: usize,
    /// N-gram budget of each component of the rescoring model.
    pub large_budget: usize,
    pub decode_weight: f64,
    pub rescore_weight: f64,
    pub word_insertion_penalty: f64,
}

impl Default for NGramSettings {
    fn default() -> Self {
        NGramSettings {
            order: 4,
            smoothing: "witten-bell".into(),
            lambda: 0.9,
            small_budget: 20_000,
            large_budget: 100_000,
            decode_weight: 1.0,
            rescore_weight: 1.0,
            word_insertion_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnSettings {
    /// Embedding and hidden size.
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub tied: bool,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    pub lm_weight: f64,
}

impl Default for RnnSettings {
    fn default() -> Self {
        RnnSettings {
            dim: 32,
            layers: 2,
            dropout: 0.0,
            tied: true,
            pretrain_epochs: 3,
            finetune_epochs: 25,
            learning_rate: 0.01,
            batch_size: 16,
            clip_norm: 5.0,
            optimizer: Optimizer::Adam,
            lm_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSettings {
    /// Lexicon, class index and feature files. Give all three, or none and
    /// list `keywords` to synthesize them.
    pub lexicon: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub keywords: Vec<String>,
    pub images_per_class: usize,
    pub feat_dim: usize,
    pub feature_noise: f64,
    /// Share of synthesized keywords listed with a second, wrong class.
    pub ambiguous_fraction: f64,
    /// Epochs on generic sentences paired with images, before fine-tuning.
    pub caption_epochs: usize,
}

impl Default for ImageSettings {
    fn default() -> Self {
        ImageSettings {
            lexicon: None,
            classes: None,
            features: None,
            keywords: Vec::new(),
            images_per_class: 5,
            feat_dim: 8,
            feature_noise: 0.3,
            ambiguous_fraction: 0.2,
            caption_epochs: 3,
        }
    }
}

impl ExperimentConfig {
    /// A config with defaults everywhere except the grammar path.
    pub fn new(grammar: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            grammar: grammar.into(),
            seed: 0,
            rows: all_rows(),
            baseline: false,
            jobs: 0,
            cache_dir: None,
            folds: FoldSettings::default(),
            eval: EvalSettings::default(),
            channel: ChannelSettings::default(),
            generic: GenericSettings::default(),
            ngram: NGramSettings::default(),
            rnn: RnnSettings::default(),
            images: ImageSettings::default(),
        }
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ExpError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
        ExperimentConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.grammar];
        v.extend(self.cache_dir.as_mut());
        v.extend(self.channel.confusion.as_mut());
        v.extend(self.generic.corpus.as_mut());
        v.extend(self.images.lexicon.as_mut());
        v.extend(self.images.classes.as_mut());
        v.extend(self.images.features.as_mut());
        v
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn fold_spec(&self) -> Result<FoldSpec, ExpError> {
        let spec = FoldSpec {
            sizes: self.folds.sizes.clone(),
            folds_per_size: self.folds.folds_per_size,
            seed: self.seed,
            mode: self.sampling()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sampling(&self) -> Result<SampleMode, ExpError> {
        self.folds.sampling.parse().map_err(ExpError::Config)
    }

    pub fn smoothing(&self) -> Result<Smoothing, ExpError> {
        Ok(self.ngram.smoothing.parse()?)
    }

    /// Rows to run in table order, the baseline first when enabled.
    pub fn active_rows(&self) -> Vec<u8> {
        let mut rows = self.rows.clone();
        if self.baseline {
            rows.push(BASELINE_ROW);
        }
        rows.sort_unstable();
        rows
    }

    pub fn needs_images(&self) -> bool {
        self.rows
            .iter()
            .any(|&r| row_spec(r).is_some_and(|s| s.rescorer == Rescorer::MmRnn))
    }

    pub fn needs_rnn(&self) -> bool {
        self.rows
            .iter()
            .any(|&r| row_spec(r).is_some_and(|s| matches!(s.rescorer, Rescorer::Rnn | Rescorer::MmRnn)))
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |m: String| Err(ExpError::Config(m));
        if self.rows.is_empty() && !self.baseline {
            return bad("no rows selected".into());
        }
        let mut seen = [false; 7];
        for &r in &self.rows {
            if !(1..=6).contains(&r) {
                return bad(format!("row {r} is not one of 1-6"));
            }
            if std::mem::replace(&mut seen[r as usize], true) {
                return bad(format!("row {r} listed twice"));
            }
        }
        self.fold_spec()?;
        self.smoothing()?;
        if self.eval.size == 0 {
            return bad("eval.size must be positive".into());
        }
        if self.channel.nbest == 0 {
            return bad("channel.nbest must be at least 1".into());
        }
        if !self.channel.noise_sd.is_finite() || self.channel.noise_sd < 0.0 {
            return bad("channel.noise_sd must be finite and >= 0".into());
        }
        let [lo, hi] = self.channel.penalty_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return bad("channel.penalty_range must satisfy 0 <= lo < hi".into());
        }
        let n = &self.ngram;
        if n.order == 0 {
            return bad("ngram.order must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&n.lambda) {
            return bad(format!("ngram.lambda {} is outside [0, 1]", n.lambda));
        }
        for (name, w) in [
            ("decode_weight", n.decode_weight),
            ("rescore_weight", n.rescore_weight),
            ("rnn.lm_weight", self.rnn.lm_weight),
        ] {
            if !w.is_finite() || w < 0.0 {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !n.word_insertion_penalty.is_finite() {
            return bad("ngram.word_insertion_penalty must be finite".into());
        }
        if self.generic.corpus.is_none() && self.generic.sentences == 0 {
            return bad("generic.sentences must be positive".into());
        }
        let r = &self.rnn;
        if self.needs_rnn() && (r.dim == 0 || r.batch_size == 0) {
            return bad("rnn.dim and rnn.batch_size must be positive".into());
        }
        if self.needs_images() {
            if r.layers == 0 {
                return bad("the MM-RNN needs rnn.layers >= 1".into());
            }
            let im = &self.images;
            let given = [&im.lexicon, &im.classes, &im.features]
                .iter()
                .filter(|p| p.is_some())
                .count();
            if given != 0 && given != 3 {
                return bad("images.lexicon, images.classes and images.features go together".into());
            }
            if given == 0 && (im.keywords.is_empty() || im.images_per_class == 0 || im.feat_dim == 0) {
                return bad("rows 5 and 6 need image files or images.keywords".into());
            }
        }
        let mut paths = vec![&self.grammar];
        paths.extend(&self.channel.confusion);
        paths.extend(&self.generic.corpus);
        paths.extend(&self.images.lexicon);
        paths.extend(&self.images.classes);
        paths.extend(&self.images.features);
        for p in paths {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Hash of everything that determines cell results: settings plus the
    /// contents of referenced files. Row selection, parallelism and the cache
    /// location are left out so they can change without invalidating results.
    pub fn fingerprint(&self) -> Result<String, ExpError> {
        let mut c = self.clone();
        c.rows.clear();
        c.baseline = false;
        c.jobs = 0;
        c.cache_dir = None;
        for p in c.paths_mut() {
            let bytes = std::fs::read(&*p).map_err(|e| ExpError::io(&*p, e))?;
            *p = PathBuf::from(format!("{:016x}", fnv1a(&bytes)));
        }
        let json = serde_json::to_string(&c).expect("config serializes");
        Ok(format!("{:016x}", fnv1a(format!("v{}:{json}", super::run::CACHE_VERSION).as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults_and_relative_paths() {
        let cfg = ExperimentConfig::from_toml(
            "grammar = \"g.txt\"\nrows = [1, 2]\n[folds]\nsizes = [32, 256]\n[ngram]\nlambda = 0.8\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.grammar, PathBuf::from("/data/g.txt"));
        assert_eq!(cfg.rows, [1, 2]);
        assert_eq!(cfg.folds.sizes, [32, 256]);
        assert_eq!(cfg.folds.folds_per_size, 5);
        assert_eq!(cfg.ngram.lambda, 0.8);
        assert_eq!(cfg.ngram.order, 4);
        assert_eq!(cfg.rnn.finetune_epochs, 25);
        assert!(ExperimentConfig::from_toml("grammar = \"g\"\nbogus = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.txt");
        std::fs::write(&g, "command = \"go\";").unwrap();
        let ok = ExperimentConfig::new(&g);
        assert!(ok.validate().is_err(), "rows 5 and 6 need images");
        let mut c = ok.clone();
        c.images.keywords = vec!["go".into()];
        c.validate().unwrap();
        for f in [
            |c: &mut ExperimentConfig| c.rows = vec![7],
            |c: &mut ExperimentConfig| c.rows = vec![1, 1],
            |c: &mut ExperimentConfig| c.rows.clear(),
            |c: &mut ExperimentConfig| c.folds.sizes = vec![8, 4],
            |c: &mut ExperimentConfig| c.folds.sampling = "odd".into(),
            |c: &mut ExperimentConfig| c.ngram.lambda = 1.5,
            |c: &mut ExperimentConfig| c.ngram.smoothing = "good-turing".into(),
            |c: &mut ExperimentConfig| c.channel.nbest = 0,
            |c: &mut ExperimentConfig| c.channel.confusion = Some("/no/such/file".into()),
            |c: &mut ExperimentConfig| c.images.lexicon = Some("/no/such/file".into()),
        ] {
            let mut bad = c.clone();
            f(&mut bad);
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let mut base_only = c.clone();
        base_only.rows.clear();
        base_only.baseline = true;
        base_only.validate().unwrap();
        assert_eq!(base_only.active_rows(), [0]);
    }

    #[test]
    fn fingerprint_tracks_inputs_not_scheduling() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.txt");
        std::fs::write(&g, "command = \"go\";").unwrap();
        let a = ExperimentConfig::new(&g);
        let mut b = a.clone();
        b.jobs = 3;
        b.rows = vec![1];
        b.cache_dir = Some(dir.path().to_path_buf());
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        b.seed = 1;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let before = a.fingerprint().unwrap();
        std::fs::write(&g, "command = \"stop\";").unwrap();
        assert_ne!(before, a.fingerprint().unwrap());
    }
}
