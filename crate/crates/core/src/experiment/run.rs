use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::channel::{simulate_channel, ConfusionTable};
use super::config::ExperimentConfig;
use super::report::{CellResult, Report};
use super::world::{generic_corpus, image_world};
use super::{row_spec, Decoder, ExpError, ImageAssoc, Rescorer};
use crate::associate::{associate, find_keywords, AssocPolicy, ClassIndex, KeywordLexicon};
use crate::command::{parse_command_lines, Command};
use crate::corpus::{sample_fold, FoldSpec};
use crate::eval::wer_pair;
use crate::grammar::{fsg_decode, parse_grammar, Automaton};
use crate::multimodal::{attach_encoder, read_features, MmRnnLm, VisualFeature};
use crate::ngram::{count_ngrams, estimate, interpolate, prune, NGramModel};
use crate::rescore::{lm_scores, rescore, Hypothesis, NBestList, RescoreConfig, SentenceScorer};
use crate::rnnlm::{load_checkpoint, save_checkpoint, RnnLm, RnnLmConfig, TrainConfig};
use crate::util::{derive_seed, fnv1a, rng_from_seed};
use crate::vocab::Vocab;

/// Bumped whenever cached results would no longer match a fresh run.
pub(crate) const CACHE_VERSION: u32 = 1;

// Independent random streams derived from the experiment seed.
const EVAL_STREAM: u64 = 1;
const CONFUSION_STREAM: u64 = 2;
const CHANNEL_STREAM: u64 = 3;
const GENERIC_STREAM: u64 = 4;
const IMAGE_STREAM: u64 = 5;
const RNN_INIT_STREAM: u64 = 6;
const PRETRAIN_STREAM: u64 = 7;
const CAPTION_STREAM: u64 = 8;
const ANNOTATED_STREAM: u64 = 9;
const GENERATED_STREAM: u64 = 10;
const TRAIN_ASSOC_STREAM: u64 = 11;
const FINETUNE_STREAM: u64 = 12;

/// A finished run and how much of it came from the cache.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: Report,
    /// `(row, size, fold)` cells computed in this run.
    pub computed: usize,
    /// Cells loaded from the cache.
    pub cached: usize,
    pub fingerprint: String,
}

/// Runs every selected system on every `(size, fold)` and aggregates WER.
///
/// Cells are independent and run on a pool of `cfg.jobs` threads. With a
/// cache directory, each finished cell is stored under the config
/// fingerprint and later runs load it instead of retraining.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, ExpError> {
    cfg.validate()?;
    let spec = cfg.fold_spec()?;
    let rows = cfg.active_rows();
    let fingerprint = cfg.fingerprint()?;
    let cache = match &cfg.cache_dir {
        Some(d) => {
            let dir = d.join(&fingerprint);
            std::fs::create_dir_all(&dir).map_err(|e| ExpError::io(&dir, e))?;
            Some(dir)
        }
        None => None,
    };

    let mut results = Vec::new();
    let mut todo: Vec<(usize, usize, Vec<u8>)> = Vec::new();
    for &size in &spec.sizes {
        for fold in 0..spec.folds_per_size {
            let mut missing = Vec::new();
            for &row in &rows {
                match cache.as_deref().and_then(|c| load_cell(c, row, size, fold)) {
                    Some(r) => results.push(r),
                    None => missing.push(row),
                }
            }
            if !missing.is_empty() {
                todo.push((size, fold, missing));
            }
        }
    }
    let cached = results.len();
    let computed = todo.iter().map(|t| t.2.len()).sum();
    log::info!("{cached} cells cached, {computed} to compute");

    if !todo.is_empty() {
        let mut needed: Vec<u8> = todo.iter().flat_map(|t| t.2.iter().copied()).collect();
        needed.sort_unstable();
        needed.dedup();
        let shared = Shared::build(cfg, &needed, cache.as_deref())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| ExpError::Config(format!("thread pool: {e}")))?;
        let fresh: Vec<Vec<CellResult>> = pool.install(|| {
            todo.par_iter()
                .map(|(size, fold, rows)| {
                    let out = compute_cell(&shared, cfg, &spec, *size, *fold, rows)?;
                    if let Some(c) = cache.as_deref() {
                        for r in &out {
                            store_cell(c, r)?;
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_, ExpError>>()
        })?;
        results.extend(fresh.into_iter().flatten());
    }

    Ok(ExperimentRun {
        report: Report::new(rows, spec.sizes.clone(), spec.folds_per_size, results),
        computed,
        cached,
        fingerprint,
    })
}

fn cell_path(dir: &Path, row: u8, size: usize, fold: usize) -> PathBuf {
    dir.join(format!("row{row}_n{size}_fold{fold}.json"))
}

fn load_cell(dir: &Path, row: u8, size: usize, fold: usize) -> Option<CellResult> {
    let path = cell_path(dir, row, size, fold);
    let bytes = std::fs::read(&path).ok()?;
    match serde_json::from_slice::<CellResult>(&bytes) {
        Ok(r) if (r.row, r.size, r.fold) == (row, size, fold) => Some(r),
        _ => {
            log::warn!("ignoring unreadable cache entry {}", path.display());
            None
        }
    }
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated entry behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExpError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| ExpError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ExpError::io(path, e))
}

fn store_cell(dir: &Path, r: &CellResult) -> Result<(), ExpError> {
    let json = serde_json::to_vec(r).expect("cell serializes");
    write_atomic(&cell_path(dir, r.row, r.size, r.fold), &json)
}

fn read_text(path: &Path) -> Result<String, ExpError> {
    std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))
}

struct Images {
    lexicon: KeywordLexicon,
    classes: ClassIndex,
    features: BTreeMap<String, VisualFeature>,
    feat_dim: usize,
}

impl Images {
    fn feature(&self, image: Option<&str>) -> Result<VisualFeature, ExpError> {
        match image {
            None => Ok(VisualFeature::zeros(self.feat_dim)),
            Some(id) => self
                .features
                .get(id)
                .cloned()
                .ok_or_else(|| ExpError::Config(format!("image `{id}` has no feature vector"))),
        }
    }

    /// Features from generated associations, zeros where nothing matched.
    fn associated(
        &self,
        items: &[(String, Command)],
        seed: u64,
    ) -> Result<Vec<VisualFeature>, ExpError> {
        let table = associate(items, &self.lexicon, &self.classes, seed, AssocPolicy::FirstMatch)?;
        items
            .iter()
            .map(|(id, _)| self.feature(table.get(id).and_then(|r| r.image_id.as_deref())))
            .collect()
    }

    /// Features from the curated association: the first listed class of the
    /// first keyword, with a seeded choice among that class's images.
    fn annotated(&self, items: &[(String, Command)], seed: u64) -> Result<Vec<VisualFeature>, ExpError> {
        items
            .iter()
            .map(|(id, cmd)| {
                let Some(m) = find_keywords(cmd.words(), &self.lexicon).into_iter().next() else {
                    return self.feature(None);
                };
                let class = &self.lexicon.classes(&m.phrase).expect("matched")[0];
                let images = self
                    .classes
                    .images(class)
                    .ok_or_else(|| ExpError::Config(format!("class `{class}` has no images")))?;
                let mut rng = rng_from_seed(derive_seed(seed, &[fnv1a(id.as_bytes())]));
                self.feature(images.choose(&mut rng).map(String::as_str))
            })
            .collect()
    }
}

/// Inputs every cell reads: evaluation lists, out-of-domain models and the
/// pretrained recurrent models.
struct Shared {
    gold: Automaton,
    vocab: Vocab,
    /// Simulated lists with acoustic scores only.
    acoustic: Vec<NBestList>,
    generic_small: Option<NGramModel>,
    generic_large: Option<NGramModel>,
    rnn: Option<RnnLm>,
    mm: Option<MmRnnLm>,
    images: Option<Images>,
    annotated: Vec<VisualFeature>,
    generated: Vec<VisualFeature>,
}

impl Shared {
    fn build(cfg: &ExperimentConfig, rows: &[u8], cache: Option<&Path>) -> Result<Self, ExpError> {
        let seed = cfg.seed;
        let specs: Vec<_> = rows.iter().filter_map(|&r| row_spec(r)).collect();
        let needs = |f: &dyn Fn(&super::RowSpec) -> bool| specs.iter().any(f);

        let gold = Automaton::compile(&parse_grammar(&read_text(&cfg.grammar)?)?);
        let eval_cmds = gold.sample(cfg.eval.size, derive_seed(seed, &[EVAL_STREAM]), cfg.sampling()?)?;
        let eval: Vec<(String, Command)> = eval_cmds
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("e{i:05}"), c))
            .collect();

        let confusion = match &cfg.channel.confusion {
            Some(p) => ConfusionTable::parse(&read_text(p)?)?,
            None => {
                let [lo, hi] = cfg.channel.penalty_range;
                ConfusionTable::random_pairs(&gold.words(), lo, hi, derive_seed(seed, &[CONFUSION_STREAM]))
            }
        };
        let acoustic = simulate_channel(
            &eval,
            &confusion,
            cfg.channel.nbest,
            cfg.channel.noise_sd,
            derive_seed(seed, &[CHANNEL_STREAM]),
        )?;

        let mut known: Vec<String> = gold
            .words()
            .into_iter()
            .chain(confusion.words())
            .map(String::from)
            .collect();
        known.sort();
        known.dedup();
        let generic = match &cfg.generic.corpus {
            Some(p) => parse_command_lines(&read_text(p)?).map_err(|e| ExpError::Config(format!("{}: {e}", p.display())))?,
            None => generic_corpus(
                &known,
                cfg.generic.fillers,
                cfg.generic.sentences,
                derive_seed(seed, &[GENERIC_STREAM]),
            ),
        };
        let mut words = known.clone();
        words.extend(generic.iter().flat_map(|c| c.words().iter().cloned()));
        words.sort();
        words.dedup();
        let vocab = Vocab::from_words(&words);

        let (mut generic_small, mut generic_large) = (None, None);
        if needs(&|s| s.decoder != Decoder::Fsg) {
            let model = estimate(&count_ngrams(&words_of(&generic), cfg.ngram.order, &vocab)?, cfg.smoothing()?)?;
            generic_small = Some(prune(&model, cfg.ngram.small_budget)?);
            if needs(&|s| s.rescorer == Rescorer::NGramLarge) {
                generic_large = Some(prune(&model, cfg.ngram.large_budget)?);
            }
        }

        let images = if needs(&|s| s.rescorer == Rescorer::MmRnn) {
            Some(load_images(cfg)?)
        } else {
            None
        };
        let (mut annotated, mut generated) = (Vec::new(), Vec::new());
        if let Some(im) = &images {
            if needs(&|s| s.assoc == ImageAssoc::Annotated) {
                annotated = im.annotated(&eval, derive_seed(seed, &[ANNOTATED_STREAM]))?;
            }
            if needs(&|s| s.assoc == ImageAssoc::Generated) {
                generated = im.associated(&eval, derive_seed(seed, &[GENERATED_STREAM]))?;
            }
        }

        let rnn = if needs(&|s| matches!(s.rescorer, Rescorer::Rnn | Rescorer::MmRnn)) {
            Some(pretrained_rnn(cfg, &vocab, &generic, cache)?)
        } else {
            None
        };
        let mm = match (&images, &rnn) {
            (Some(im), Some(base)) => Some(pretrained_mm(cfg, base, im, &generic, cache)?),
            _ => None,
        };

        Ok(Shared {
            gold,
            vocab,
            acoustic,
            generic_small,
            generic_large,
            rnn,
            mm,
            images,
            annotated,
            generated,
        })
    }
}

fn words_of(cmds: &[Command]) -> Vec<Vec<String>> {
    cmds.iter().map(|c| c.words().to_vec()).collect()
}

fn load_images(cfg: &ExperimentConfig) -> Result<Images, ExpError> {
    let im = &cfg.images;
    let (lexicon, classes, features) = match (&im.lexicon, &im.classes, &im.features) {
        (Some(l), Some(c), Some(f)) => (
            KeywordLexicon::parse(&read_text(l)?)?,
            ClassIndex::parse(&read_text(c)?)?,
            read_features(&read_text(f)?, &f.display().to_string())?,
        ),
        _ => {
            let w = image_world(
                &im.keywords,
                im.images_per_class,
                im.feat_dim,
                im.feature_noise,
                im.ambiguous_fraction,
                derive_seed(cfg.seed, &[IMAGE_STREAM]),
            );
            (w.lexicon, w.classes, w.features)
        }
    };
    let mut dims = features.values().map(VisualFeature::dim);
    let feat_dim = dims
        .next()
        .ok_or_else(|| ExpError::Config("no image features".into()))?;
    if feat_dim == 0 || dims.any(|d| d != feat_dim) {
        return Err(ExpError::Config("image features must share one positive dimension".into()));
    }
    Ok(Images {
        lexicon,
        classes,
        features,
        feat_dim,
    })
}

fn train_config(cfg: &ExperimentConfig, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.rnn.learning_rate,
        epochs,
        batch_size: cfg.rnn.batch_size,
        bptt: None,
        clip_norm: cfg.rnn.clip_norm,
        seed,
        optimizer: cfg.rnn.optimizer,
    }
}

/// Generic-text RNN, rounded to checkpoint precision so that a model loaded
/// from the cache is bit-identical to a freshly trained one.
fn pretrained_rnn(
    cfg: &ExperimentConfig,
    vocab: &Vocab,
    generic: &[Command],
    cache: Option<&Path>,
) -> Result<RnnLm, ExpError> {
    let path = cache.map(|c| c.join("pretrain_rnn.ckpt"));
    if let Some(bytes) = path.as_ref().and_then(|p| std::fs::read(p).ok()) {
        return Ok(load_checkpoint(&bytes)?);
    }
    let r = &cfg.rnn;
    let mc = RnnLmConfig {
        vocab_size: vocab.len(),
        embed_dim: r.dim,
        hidden_dim: r.dim,
        num_layers: r.layers,
        dropout: r.dropout,
        tie_embeddings: r.tied,
    };
    let mut m = RnnLm::init(mc, vocab.clone(), derive_seed(cfg.seed, &[RNN_INIT_STREAM]))?;
    if r.pretrain_epochs > 0 {
        log::info!("pretraining the RNN on {} generic sentences", generic.len());
        m.train(&words_of(generic), &train_config(cfg, r.pretrain_epochs, derive_seed(cfg.seed, &[PRETRAIN_STREAM])))?;
    }
    m.round_to_f32();
    if let Some(p) = path {
        write_atomic(&p, &save_checkpoint(&m))?;
    }
    Ok(m)
}

/// Attaches the visual projection to the generic RNN and trains on the
/// generic sentences that associate with an image.
fn pretrained_mm(
    cfg: &ExperimentConfig,
    base: &RnnLm,
    images: &Images,
    generic: &[Command],
    cache: Option<&Path>,
) -> Result<MmRnnLm, ExpError> {
    let path = cache.map(|c| c.join("pretrain_mm.ckpt"));
    if let Some(bytes) = path.as_ref().and_then(|p| std::fs::read(p).ok()) {
        return Ok(MmRnnLm::from_lm(load_checkpoint(&bytes)?)?);
    }
    let mut mm = attach_encoder(base, images.feat_dim)?;
    let items: Vec<(String, Command)> = generic
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("g{i:06}"), c.clone()))
        .collect();
    let table = associate(
        &items,
        &images.lexicon,
        &images.classes,
        derive_seed(cfg.seed, &[CAPTION_STREAM]),
        AssocPolicy::FirstMatch,
    )?;
    let mut captions = Vec::new();
    for (id, c) in &items {
        if let Some(img) = table.get(id).and_then(|r| r.image_id.as_deref()) {
            captions.push((c.words().to_vec(), images.feature(Some(img))?));
        }
    }
    let epochs = cfg.images.caption_epochs;
    if epochs > 0 && !captions.is_empty() {
        log::info!("pretraining the MM-RNN on {} captioned sentences", captions.len());
        mm.train(&captions, &train_config(cfg, epochs, derive_seed(cfg.seed, &[CAPTION_STREAM, 1])))?;
    }
    let mut lm = mm.lm().clone();
    lm.round_to_f32();
    if let Some(p) = path {
        write_atomic(&p, &save_checkpoint(&lm))?;
    }
    Ok(MmRnnLm::from_lm(lm)?)
}

/// First-pass decoding: each hypothesis gets `weight · ln p + wip · words` as
/// its first-pass LM score, and lists are re-sorted.
fn first_pass(
    lists: &[NBestList],
    lm: &dyn SentenceScorer,
    weight: f64,
    wip: f64,
) -> Result<Vec<NBestList>, ExpError> {
    lists
        .iter()
        .map(|nb| {
            let scores = lm_scores(nb, lm, None)?;
            let hyps = nb
                .hyps
                .iter()
                .zip(scores)
                .map(|(h, s)| Hypothesis::new(h.text.clone(), h.acoustic, Some(weight * s + wip * h.text.len() as f64)))
                .collect();
            Ok(NBestList {
                hyps,
                ..nb.clone()
            }
            .validated()?)
        })
        .collect()
}

fn rescore_all(
    lists: &[NBestList],
    scorer: &dyn SentenceScorer,
    cfg: &RescoreConfig,
    features: Option<&[VisualFeature]>,
) -> Result<Vec<Command>, ExpError> {
    lists
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let out = rescore(nb, scorer, cfg, features.map(|f| &f[i]))?;
            Ok(out.one_best().expect("lists are nonempty").clone())
        })
        .collect()
}

fn score_row(
    sh: &Shared,
    row: u8,
    size: usize,
    fold: usize,
    hyps: &[Command],
) -> Result<CellResult, ExpError> {
    let mut errors = 0;
    let mut ref_words = 0;
    let mut correct = Vec::with_capacity(hyps.len());
    for (nb, h) in sh.acoustic.iter().zip(hyps) {
        let r = nb.reference.as_ref().expect("simulated lists carry references");
        let w = wer_pair(r.words(), h.words())?;
        errors += w.errors();
        ref_words += w.ref_words;
        correct.push(r == h);
    }
    Ok(CellResult {
        row,
        size,
        fold,
        errors,
        ref_words,
        correct,
    })
}

/// All requested rows for one training fold. Models shared between rows
/// (the in-domain n-gram, the first-pass lists, the fine-tuned MM-RNN) are
/// built once.
fn compute_cell(
    sh: &Shared,
    cfg: &ExperimentConfig,
    spec: &FoldSpec,
    size: usize,
    fold: usize,
    rows: &[u8],
) -> Result<Vec<CellResult>, ExpError> {
    log::info!("computing rows {rows:?} for n={size}, fold {fold}");
    let train = sample_fold(&sh.gold, spec, size, fold).map_err(|e| ExpError::from(e).in_cell(rows[0], size, fold))?;
    let train_words = words_of(&train);
    let n = &cfg.ngram;
    let wip = n.word_insertion_penalty;
    let mut domain: Option<NGramModel> = None;
    let mut decoded: Option<Vec<NBestList>> = None;
    let mut mm: Option<MmRnnLm> = None;
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let spec_row = row_spec(row).expect("rows are validated");
        let result = (|| -> Result<CellResult, ExpError> {
            let hyps: Vec<Command> = match spec_row.decoder {
                Decoder::Fsg => {
                    let fsg = Automaton::from_commands(&train);
                    sh.acoustic
                        .iter()
                        .map(|nb| fsg_decode(&fsg, nb))
                        .collect::<Result<_, _>>()?
                }
                Decoder::Generic => {
                    let g = sh.generic_small.as_ref().expect("built for n-gram rows");
                    one_bests(&first_pass(&sh.acoustic, g, n.decode_weight, wip)?)
                }
                Decoder::NGramSmall => {
                    if domain.is_none() {
                        domain = Some(estimate(&count_ngrams(&train_words, n.order, &sh.vocab)?, cfg.smoothing()?)?);
                    }
                    let dom = domain.as_ref().expect("just built");
                    if decoded.is_none() {
                        let small = interpolate(
                            prune(dom, n.small_budget)?,
                            sh.generic_small.clone().expect("built for n-gram rows"),
                            n.lambda,
                        )?;
                        decoded = Some(first_pass(&sh.acoustic, &small, n.decode_weight, wip)?);
                    }
                    let lists = decoded.as_ref().expect("just built");
                    let rc = |w: f64| RescoreConfig {
                        lm_weight: w,
                        word_insertion_penalty: wip,
                        replace_firstpass_lm: true,
                    };
                    let cell_seed = |stream: u64| derive_seed(cfg.seed, &[stream, size as u64, fold as u64, u64::from(row)]);
                    match spec_row.rescorer {
                        Rescorer::None => one_bests(lists),
                        Rescorer::NGramLarge => {
                            let large = interpolate(
                                prune(dom, n.large_budget)?,
                                sh.generic_large.clone().expect("built for row 3"),
                                n.lambda,
                            )?;
                            rescore_all(lists, &large, &rc(n.rescore_weight), None)?
                        }
                        Rescorer::Rnn => {
                            let mut lm = sh.rnn.clone().expect("built for RNN rows");
                            lm.finetune(&train_words, cfg.rnn.finetune_epochs, &train_config(cfg, 1, cell_seed(FINETUNE_STREAM)))?;
                            rescore_all(lists, &lm, &rc(cfg.rnn.lm_weight), None)?
                        }
                        Rescorer::MmRnn => {
                            let im = sh.images.as_ref().expect("built for MM rows");
                            if mm.is_none() {
                                let items: Vec<(String, Command)> = train
                                    .iter()
                                    .enumerate()
                                    .map(|(i, c)| (format!("t{i:06}"), c.clone()))
                                    .collect();
                                // both MM rows share one model, so the seeds ignore the row
                                let assoc_seed = derive_seed(cfg.seed, &[TRAIN_ASSOC_STREAM, size as u64, fold as u64]);
                                let feats = im.associated(&items, assoc_seed)?;
                                let pairs: Vec<(Vec<String>, VisualFeature)> =
                                    train_words.iter().cloned().zip(feats).collect();
                                let mut m = sh.mm.clone().expect("built for MM rows");
                                let tc_seed = derive_seed(cfg.seed, &[FINETUNE_STREAM, size as u64, fold as u64, 5]);
                                m.finetune(&pairs, cfg.rnn.finetune_epochs, &train_config(cfg, 1, tc_seed))?;
                                mm = Some(m);
                            }
                            let feats = match spec_row.assoc {
                                ImageAssoc::Annotated => &sh.annotated,
                                _ => &sh.generated,
                            };
                            rescore_all(lists, mm.as_ref().expect("just built"), &rc(cfg.rnn.lm_weight), Some(feats))?
                        }
                    }
                }
            };
            score_row(sh, row, size, fold, &hyps)
        })()
        .map_err(|e| e.in_cell(row, size, fold))?;
        out.push(result);
    }
    Ok(out)
}

fn one_bests(lists: &[NBestList]) -> Vec<Command> {
    lists
        .iter()
        .map(|nb| nb.one_best().expect("lists are nonempty").clone())
        .collect()
}
