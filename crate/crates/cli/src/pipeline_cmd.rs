//! `assoc`, `rescore` and `eval` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use cmdlm::associate::{associate, read_commands_with_ids, AssocPolicy, ClassIndex, KeywordLexicon};
use cmdlm::eval::{aggregate_folds, corpus_wer, mcnemar, pair_by_id, read_utterances};
use cmdlm::multimodal::{read_features, VisualFeature};
use cmdlm::rescore::{read_nbest_jsonl, rescore, write_nbest_jsonl, RescoreConfig};

use crate::error::CliError;
use crate::io::{read_text, write_output};
use crate::models::Model;

#[derive(Debug, Subcommand)]
pub enum AssocCmd {
    /// Give each command an image of the class its first keyword names.
    Build {
        /// `id<TAB>command` lines.
        #[arg(long)]
        commands: PathBuf,
        /// `keyword<TAB>class1,class2,..` lines.
        #[arg(long)]
        lexicon: PathBuf,
        /// `class<TAB>image_id` lines.
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// first-match or any-match.
        #[arg(long, default_value = "first-match")]
        policy: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RescoreCmd {
    /// Rerank n-best lists with a second-pass language model.
    Run {
        /// JSON n-best records, one per line.
        #[arg(long)]
        nbest: PathBuf,
        /// ARPA model, mixture spec, or recurrent checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lm_weight: f64,
        /// Word insertion penalty, added per hypothesis word.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        wip: f64,
        /// Drop the first-pass LM score instead of adding to it.
        #[arg(long)]
        replace_firstpass_lm: bool,
        /// Image features, looked up by each list's `image_id`. Required for
        /// multimodal checkpoints.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Reranked n-best records.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write `utt_id<TAB>text` of each top hypothesis.
        #[arg(long)]
        one_best: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Corpus word error rate of hypotheses against references.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// McNemar's test on whole-utterance correctness of two systems.
    Mcnemar {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp_a: PathBuf,
        #[arg(long)]
        hyp_b: PathBuf,
    },
    /// Mean ± 2·SE of fold WERs from a `system n fold wer` TSV.
    Aggregate {
        /// Results table with a header line.
        cells: PathBuf,
    },
}

pub fn run_assoc(cmd: AssocCmd) -> Result<(), CliError> {
    let AssocCmd::Build {
        commands,
        lexicon,
        classes,
        seed,
        policy,
        out,
    } = cmd;
    let policy: AssocPolicy = policy.parse().map_err(CliError::Usage)?;
    let cmds = read_commands_with_ids(&read_text(&commands)?).map_err(|e| CliError::from(e).in_file(&commands))?;
    let lex = KeywordLexicon::parse(&read_text(&lexicon)?).map_err(|e| CliError::from(e).in_file(&lexicon))?;
    let index = ClassIndex::parse(&read_text(&classes)?).map_err(|e| CliError::from(e).in_file(&classes))?;
    let table = associate(&cmds, &lex, &index, seed, policy)?;
    log::info!(
        "{} of {} commands associated ({:.1}%)",
        table.matched(),
        table.rows.len(),
        100.0 * table.coverage()
    );
    write_output(out.as_deref(), table.to_tsv().as_bytes())
}

fn feature_for(
    feats: Option<&BTreeMap<String, VisualFeature>>,
    image_id: Option<&str>,
    feat_dim: usize,
    utt_id: &str,
) -> Result<VisualFeature, CliError> {
    match (feats, image_id) {
        (Some(f), Some(id)) => f
            .get(id)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("{utt_id}: no feature for image `{id}`"))),
        _ => {
            log::warn!("{utt_id}: no image, scoring with the zero feature");
            Ok(VisualFeature::zeros(feat_dim))
        }
    }
}

pub fn run_rescore(cmd: RescoreCmd) -> Result<(), CliError> {
    let RescoreCmd::Run {
        nbest,
        model,
        lm_weight,
        wip,
        replace_firstpass_lm,
        features,
        out,
        one_best,
    } = cmd;
    let cfg = RescoreConfig {
        lm_weight,
        word_insertion_penalty: wip,
        replace_firstpass_lm,
    };
    cfg.validate()?;
    let lists = read_nbest_jsonl(&read_text(&nbest)?).map_err(|e| CliError::from(e).in_file(&nbest))?;
    let m = Model::load(&model)?;
    let feats = match &features {
        Some(p) => Some(
            read_features(&read_text(p)?, &p.display().to_string()).map_err(|e| CliError::from(e).in_file(p))?,
        ),
        None => None,
    };
    let feat_dim = match &m {
        Model::Mm(mm) => Some(mm.feat_dim()),
        _ if feats.is_some() => {
            return Err(CliError::Usage(format!(
                "--features needs a multimodal checkpoint; {} holds {}",
                model.display(),
                m.kind()
            )))
        }
        _ => None,
    };
    let mut reranked = Vec::with_capacity(lists.len());
    for nb in &lists {
        let feature = feat_dim
            .map(|d| feature_for(feats.as_ref(), nb.image_id.as_deref(), d, &nb.utt_id))
            .transpose()?;
        reranked.push(rescore(nb, m.scorer(), &cfg, feature.as_ref())?);
    }
    if let Some(p) = one_best {
        let mut text = String::new();
        for nb in &reranked {
            let best = nb.one_best().map(ToString::to_string).unwrap_or_default();
            let _ = writeln!(text, "{}\t{best}", nb.utt_id);
        }
        write_output(Some(&p), text.as_bytes())?;
    }
    write_output(out.as_deref(), write_nbest_jsonl(&reranked).as_bytes())
}

fn read_utts(path: &Path) -> Result<Vec<(String, Vec<String>)>, CliError> {
    read_utterances(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

pub fn run_eval(cmd: EvalCmd) -> Result<(), CliError> {
    match cmd {
        EvalCmd::Wer { reference, hyp } => {
            let pairs = pair_by_id(&read_utts(&reference)?, &read_utts(&hyp)?)?;
            let r = corpus_wer(&pairs)?;
            let line = format!(
                "wer {:.4}\terrors {}\tsub {}\tdel {}\tins {}\tref_words {}\n",
                100.0 * r.wer(),
                r.errors(),
                r.substitutions,
                r.deletions,
                r.insertions,
                r.ref_words
            );
            write_output(None, line.as_bytes())
        }
        EvalCmd::Mcnemar { reference, hyp_a, hyp_b } => {
            let refs = read_utts(&reference)?;
            let correct = |hyps: &Path| -> Result<Vec<bool>, CliError> {
                Ok(pair_by_id(&refs, &read_utts(hyps)?)?
                    .into_iter()
                    .map(|(r, h)| r == h)
                    .collect())
            };
            let r = mcnemar(&correct(&hyp_a)?, &correct(&hyp_b)?)?;
            let line = format!(
                "b {}\tc {}\tstatistic {:.4}\tp {:.6}\ttest {}\tsignificant {}\n",
                r.b,
                r.c,
                r.statistic,
                r.p_value,
                if r.exact { "exact" } else { "chi2" },
                if r.significant { "yes" } else { "no" }
            );
            write_output(None, line.as_bytes())
        }
        EvalCmd::Aggregate { cells } => {
            let text = read_text(&cells)?;
            let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
            for (i, line) in text.lines().enumerate().skip(1) {
                if line.trim().is_empty() {
                    continue;
                }
                let bad = || CliError::Data(format!("{} line {}: expected `system<TAB>n<TAB>fold<TAB>wer`", cells.display(), i + 1));
                let f: Vec<&str> = line.split('\t').collect();
                let [system, n, _fold, wer] = f[..] else {
                    return Err(bad());
                };
                let n: usize = n.trim().parse().map_err(|_| bad())?;
                let wer: f64 = wer.trim().parse().map_err(|_| bad())?;
                groups.entry((system.to_string(), n)).or_default().push(wer);
            }
            let mut out = String::from("system\tn\tfolds\tmean\ttwo_se\n");
            for ((system, n), v) in &groups {
                let a = aggregate_folds(v)?;
                let _ = writeln!(out, "{system}\t{n}\t{}\t{:.4}\t{:.4}", v.len(), a.mean, a.two_se);
            }
            write_output(None, out.as_bytes())
        }
    }
}
