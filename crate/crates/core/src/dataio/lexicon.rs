use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD};

/// Tokens kept per tag category.
pub const TAG_SLOTS: usize = 5;

/// The fixed question-word category.
pub const WH_WORDS: [&str; 7] = ["why", "how", "what", "when", "where", "who", "which"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosClass {
    /// Nouns and pronouns.
    Noun,
    /// Verbs and adverbs.
    Verb,
    Other,
}

// Nouns and pronouns.
const NOUNS: &str = "
    i you he she it we they me him her us them this that these those someone something
    man men woman women boy girl child children kid kids person people player players baby
    lady guy family crowd team rider skier surfer driver chef
    dog dogs cat cats horse horses bird birds cow cows sheep elephant elephants giraffe
    giraffes zebra zebras bear bears animal animals duck fish
    bus buses train trains truck trucks car cars bicycle bike bikes motorcycle boat boats
    plane planes airplane vehicle traffic
    pizza cake sandwich banana bananas apple apples donut donuts food plate bowl meal
    broccoli orange oranges carrot vegetables fruit coffee drink
    table chair chairs bench couch bed clock vase umbrella kite frisbee skateboard
    surfboard ball laptop phone book books bottle cup glass computer keyboard tv television
    shirt hat tie bag toilet sink mirror window door wall floor sign light lights
    park street beach kitchen field room yard station road lake market garden city water
    snow grass tree trees sky wave waves mountain hill building house restaurant store
    area air ground court track shore ocean river picture photo view day night time
    game fun color size top side front middle corner
";

// Verbs and adverbs. Forms of be/have/do are tagged separately in the
// Brown scheme and are left out here.
const VERBS: &str = "
    sitting standing running eating playing riding flying sleeping walking jumping
    holding waiting looking wearing carrying sits stands runs eats plays rides flies
    sleeps walks jumps holds waits looks wears carries sit stand run eat play ride fly
    sleep walk jump hold wait look wear carry go going goes went come coming comes
    make making made take taking took get getting got see seeing saw seen
    parked parking cooking cooked cut cutting lying laying hanging cross crossing
    grazing watching watch throwing throw catching catch swinging hitting hit
    surfing skiing skating drinking drink driving drive owns own arrive arrived
    leave left stopped stop think like want need feel kept keep
    here there now very quickly slowly together outside inside down up away also
    still just really almost often never always again
";

/// Bundled word → part-of-speech lookup.
#[derive(Clone, Debug)]
pub struct Lexicon {
    classes: HashMap<String, PosClass>,
}

impl Lexicon {
    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| {
            let mut classes = HashMap::new();
            for w in NOUNS.split_whitespace() {
                classes.insert(w.to_string(), PosClass::Noun);
            }
            for w in VERBS.split_whitespace() {
                classes.entry(w.to_string()).or_insert(PosClass::Verb);
            }
            Lexicon { classes }
        })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, PosClass)>) -> Self {
        Self {
            classes: entries.into_iter().collect(),
        }
    }

    pub fn class(&self, token: &str) -> PosClass {
        self.classes.get(token).copied().unwrap_or(PosClass::Other)
    }
}

/// Up to [`TAG_SLOTS`] tokens per category, in sentence order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagBundle {
    #[serde(default)]
    pub noun: Vec<String>,
    #[serde(default)]
    pub verb: Vec<String>,
    #[serde(default)]
    pub wh: Vec<String>,
}

impl TagBundle {
    /// Ids per category (noun, verb, wh), truncated or `PAD`-filled to
    /// exactly [`TAG_SLOTS`].
    pub fn encode(&self, vocab: &Vocabulary) -> [Vec<usize>; 3] {
        let fit = |toks: &[String]| {
            let mut ids = vocab.encode(&toks[..toks.len().min(TAG_SLOTS)]);
            ids.resize(TAG_SLOTS, PAD);
            ids
        };
        [fit(&self.noun), fit(&self.verb), fit(&self.wh)]
    }
}

/// Splits a token sequence into noun, verb and question-word categories.
pub fn pos_tags<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> TagBundle {
    let mut bundle = TagBundle::default();
    for tok in tokens {
        let tok = tok.as_ref();
        let slot = if WH_WORDS.contains(&tok) {
            &mut bundle.wh
        } else {
            match lexicon.class(tok) {
                PosClass::Noun => &mut bundle.noun,
                PosClass::Verb => &mut bundle.verb,
                PosClass::Other => continue,
            }
        };
        if slot.len() < TAG_SLOTS {
            slot.push(tok.to_string());
        }
    }
    bundle
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_nouns_and_verbs() {
        let t = pos_tags(&["a", "man", "riding", "a", "skateboard"], Lexicon::bundled());
        assert_eq!(t.noun, ["man", "skateboard"]);
        assert_eq!(t.verb, ["riding"]);
        assert!(t.wh.is_empty());
    }

    #[test]
    fn question_word() {
        let t = pos_tags(&["what", "is", "he", "doing"], Lexicon::bundled());
        assert_eq!(t.wh, ["what"]);
    }

    #[test]
    fn empty_input_pads_everything() {
        let t = pos_tags::<&str>(&[], Lexicon::bundled());
        assert_eq!(t, TagBundle::default());
        let vocab = Vocabulary::from_tokens(vec!["man".to_string()]).unwrap();
        assert_eq!(t.encode(&vocab), [vec![PAD; 5], vec![PAD; 5], vec![PAD; 5]]);
    }

    #[test]
    fn at_most_five_per_category() {
        let toks = ["dog", "cat", "man", "boy", "girl", "kite", "ball"];
        let t = pos_tags(&toks, Lexicon::bundled());
        assert_eq!(t.noun, ["dog", "cat", "man", "boy", "girl"]);
    }

    #[test]
    fn all_seven_wh_words() {
        let t = pos_tags(&WH_WORDS, Lexicon::bundled());
        assert_eq!(t.wh.len(), 5);
        assert_eq!(t.wh, ["why", "how", "what", "when", "where"]);
    }
}
