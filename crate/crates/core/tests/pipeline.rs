//! Grammar to corpus to n-gram to rescoring to WER, through the public API only.

use cmdlm::eval::{corpus_wer, mcnemar};
use cmdlm::experiment::{simulate_channel, ConfusionTable};
use cmdlm::grammar::{fsg_decode, parse_grammar, Automaton, SampleMode};
use cmdlm::ngram::{count_ngrams, estimate, read_arpa, write_arpa, Smoothing};
use cmdlm::rescore::{read_nbest_jsonl, rescore, write_nbest_jsonl, RescoreConfig};
use cmdlm::{Command, Vocab};

const GRAMMAR: &str = include_str!("../data/toy.grammar");
const CONFUSIONS: &str = include_str!("../data/toy_confusions.tsv");

fn words(cs: &[Command]) -> Vec<Vec<String>> {
    cs.iter().map(|c| c.words().to_vec()).collect()
}

#[test]
fn rescoring_and_grammar_decoding_beat_the_first_pass() {
    let fsg = Automaton::compile(&parse_grammar(GRAMMAR).unwrap());
    assert_eq!(fsg.count_language().unwrap(), 500);
    let train = words(&fsg.sample(400, 1, SampleMode::ProductionUniform).unwrap());
    let eval: Vec<(String, Command)> = fsg
        .sample(150, 2, SampleMode::ProductionUniform)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("utt{i:03}"), c))
        .collect();

    let table = ConfusionTable::parse(CONFUSIONS).unwrap();
    let lists = simulate_channel(&eval, &table, 10, 1.0, 3).unwrap();
    assert_eq!(read_nbest_jsonl(&write_nbest_jsonl(&lists)).unwrap(), lists);

    let vocab = Vocab::from_corpus(&train, None);
    let lm = estimate(&count_ngrams(&train, 4, &vocab).unwrap(), Smoothing::WittenBell).unwrap();
    let lm = read_arpa(&write_arpa(&lm)).unwrap();
    let cfg = RescoreConfig {
        lm_weight: 1.0,
        word_insertion_penalty: 0.0,
        replace_firstpass_lm: false,
    };

    let mut first = Vec::new();
    let mut grammar = Vec::new();
    let mut rescored = Vec::new();
    for (nb, (_, reference)) in lists.iter().zip(&eval) {
        let r = reference.words().to_vec();
        first.push((r.clone(), nb.one_best().unwrap().words().to_vec()));
        grammar.push((r.clone(), fsg_decode(&fsg, nb).unwrap().words().to_vec()));
        let best = rescore(nb, &lm, &cfg, None).unwrap();
        rescored.push((r, best.one_best().unwrap().words().to_vec()));
    }
    let w_first = corpus_wer(&first).unwrap().wer();
    let w_grammar = corpus_wer(&grammar).unwrap().wer();
    let w_rescored = corpus_wer(&rescored).unwrap().wer();
    assert!(w_first > 0.05, "channel too clean: {w_first}");
    assert!(w_grammar < w_first, "{w_grammar} vs {w_first}");
    assert!(w_rescored < w_first, "{w_rescored} vs {w_first}");

    let correct = |pairs: &[(Vec<String>, Vec<String>)]| pairs.iter().map(|(r, h)| r == h).collect::<Vec<_>>();
    let test = mcnemar(&correct(&first), &correct(&rescored)).unwrap();
    assert!(test.significant, "{test:?}");
}
