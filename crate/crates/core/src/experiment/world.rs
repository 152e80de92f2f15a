//! Synthetic stand-ins for the external resources of the protocol: a generic
//! text corpus, image classes with feature vectors, and a small grounded
//! corpus where the visual feature determines one word of each sentence.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::associate::{ClassIndex, KeywordLexicon};
use crate::command::Command;
use crate::multimodal::{FeatureSource, VisualFeature};
use crate::util::{derive_seed, rng_from_seed};

/// A 500-command grammar whose first word fixes the last one, four words
/// later, which is out of reach of a 4-gram context.
pub const TOY_GRAMMAR: &str = include_str!("../../data/toy.grammar");

/// Confusions for [`TOY_GRAMMAR`]: closing words confuse with each other,
/// objects with other objects, and the remaining words mostly with words
/// outside the grammar.
pub const TOY_CONFUSIONS: &str = include_str!("../../data/toy_confusions.tsv");

/// Object words of [`TOY_GRAMMAR`], each the label of one image class.
pub const TOY_KEYWORDS: [&str; 10] = [
    "truck", "track", "boat", "boot", "house", "horse", "tree", "three", "road", "rope",
];

/// Sentences from a random sparse word chain over `words` plus `fillers`
/// extra words. Each word has three possible successors, so the text has
/// local structure but none of the command grammar's.
pub fn generic_corpus<S: AsRef<str>>(
    words: &[S],
    fillers: usize,
    sentences: usize,
    seed: u64,
) -> Vec<Command> {
    let mut vocab: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
    vocab.sort();
    vocab.dedup();
    vocab.extend((0..fillers).map(|i| format!("filler{i}")));
    if vocab.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    let succ: Vec<[usize; 3]> = (0..vocab.len())
        .map(|_| std::array::from_fn(|_| rng.gen_range(0..vocab.len())))
        .collect();
    (0..sentences)
        .map(|_| {
            let len = rng.gen_range(3..=9);
            let mut w = rng.gen_range(0..vocab.len());
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                out.push(vocab[w].clone());
                w = succ[w][rng.gen_range(0..3)];
            }
            Command::from_words(out).expect("nonempty")
        })
        .collect()
}

/// Image classes with feature vectors and the keyword lexicon pointing at them.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageWorld {
    pub lexicon: KeywordLexicon,
    pub classes: ClassIndex,
    pub features: BTreeMap<String, VisualFeature>,
}

/// One class per keyword, named after it, holding `images_per_class` images
/// `<keyword>_<j>`. Features are a per-class Gaussian prototype plus
/// `noise`-scaled Gaussian jitter. A fraction of keywords are listed in the
/// lexicon with a second, wrong class after the right one, which makes
/// generated associations imperfect.
pub fn image_world<S: AsRef<str>>(
    keywords: &[S],
    images_per_class: usize,
    dim: usize,
    noise: f64,
    ambiguous_fraction: f64,
    seed: u64,
) -> ImageWorld {
    let mut rng = rng_from_seed(seed);
    let kws: Vec<&str> = keywords.iter().map(AsRef::as_ref).collect();
    let mut lexicon = KeywordLexicon::default();
    let mut classes = ClassIndex::default();
    let mut features = BTreeMap::new();
    for (i, kw) in kws.iter().enumerate() {
        let proto: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for j in 0..images_per_class {
            let id = format!("{kw}_{j}");
            let v = proto
                .iter()
                .map(|p| p + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            classes.insert(kw, &id);
            features.insert(
                id,
                VisualFeature {
                    values: v,
                    source: FeatureSource::Synthetic,
                },
            );
        }
        let ambiguous = kws.len() > 1 && rng.gen_bool(ambiguous_fraction.clamp(0.0, 1.0));
        if ambiguous {
            let other = loop {
                let o = rng.gen_range(0..kws.len());
                if o != i {
                    break kws[o];
                }
            };
            lexicon.insert(kw, &[*kw, other]);
        } else {
            lexicon.insert(kw, &[*kw]);
        }
    }
    ImageWorld {
        lexicon,
        classes,
        features,
    }
}

/// Sentences paired with features, some grounded in an image and some with
/// the all-zero feature.
#[derive(Debug, Clone)]
pub struct GroundedCorpus {
    pub train: Vec<(Vec<String>, VisualFeature)>,
    pub heldout: Vec<(Vec<String>, VisualFeature)>,
    pub feat_dim: usize,
}

const GROUNDED_VERBS: [&str; 4] = ["go to", "look at", "follow", "stop by"];
const GROUNDED_OBJECTS: [&str; 8] = ["truck", "boat", "bridge", "house", "car", "tree", "road", "river"];

impl GroundedCorpus {
    /// `<verb> the <object> [now]`, where the object is the class of the
    /// paired image. A quarter of the sentences carry the zero feature, so a
    /// model trained on them also learns the text-only distribution.
    pub fn generate(n_train: usize, n_heldout: usize, feat_dim: usize, seed: u64) -> Self {
        let world = image_world(&GROUNDED_OBJECTS, 6, feat_dim, 0.3, 0.0, derive_seed(seed, &[1]));
        let mut rng = rng_from_seed(derive_seed(seed, &[2]));
        let mut draw = |n: usize| -> Vec<(Vec<String>, VisualFeature)> {
            (0..n)
                .map(|_| {
                    let obj = GROUNDED_OBJECTS.choose(&mut rng).expect("nonempty");
                    let mut words: Vec<String> = GROUNDED_VERBS
                        .choose(&mut rng)
                        .expect("nonempty")
                        .split(' ')
                        .map(String::from)
                        .collect();
                    words.push("the".into());
                    words.push(obj.to_string());
                    if rng.gen_bool(0.5) {
                        words.push("now".into());
                    }
                    let feature = if rng.gen_bool(0.25) {
                        VisualFeature::zeros(feat_dim)
                    } else {
                        let imgs = world.classes.images(obj).expect("class exists");
                        let img = imgs.choose(&mut rng).expect("nonempty");
                        world.features[img].clone()
                    };
                    (words, feature)
                })
                .collect()
        };
        let train = draw(n_train);
        let heldout = draw(n_heldout);
        GroundedCorpus {
            train,
            heldout,
            feat_dim,
        }
    }

    /// Held-out pairs with every feature replaced by zeros.
    pub fn heldout_zeroed(&self) -> Vec<(Vec<String>, VisualFeature)> {
        self.heldout
            .iter()
            .map(|(s, _)| (s.clone(), VisualFeature::zeros(self.feat_dim)))
            .collect()
    }

    pub fn heldout_text(&self) -> Vec<Vec<String>> {
        self.heldout.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn train_text(&self) -> Vec<Vec<String>> {
        self.train.iter().map(|(s, _)| s.clone()).collect()
    }
}
