use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Hand-crafted feature families extracted per word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTemplate {
    /// Word identity.
    Word,
    /// Lowercased form.
    Lower,
    /// Prefixes of length 1 to 3.
    Prefixes,
    /// Suffixes of length 1 to 3.
    Suffixes,
    /// Collapsed character-class shape such as `Xx` or `dd`.
    Shape,
    /// Constant feature fired at every word-initial position (a bias).
    WordInitial,
    /// Identity of neighbouring words at offsets -2, -1, +1, +2.
    Context,
}

impl FeatureTemplate {
    pub const ALL: [FeatureTemplate; 7] = [
        FeatureTemplate::Word,
        FeatureTemplate::Lower,
        FeatureTemplate::Prefixes,
        FeatureTemplate::Suffixes,
        FeatureTemplate::Shape,
        FeatureTemplate::WordInitial,
        FeatureTemplate::Context,
    ];
}

/// Marker substituted for an occluded word.
pub const UNKNOWN_WORD: &str = "\u{0}unk";

/// Word shape with runs collapsed: `Ibuprofen` -> `Xx`, `400mg` -> `dx`.
pub fn word_shape(word: &str) -> String {
    let mut out = String::new();
    let mut last = None;
    for c in word.chars() {
        let class = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if last != Some(class) {
            out.push(class);
            last = Some(class);
        }
    }
    out
}

/// Sparse feature extractor with a growable string-to-index vocabulary.
///
/// Indices are dense and append-only: once assigned, a feature keeps its
/// index. After [`FeatureEncoder::freeze`] unseen features are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "EncoderFile", into = "EncoderFile")]
pub struct FeatureEncoder {
    templates: Vec<FeatureTemplate>,
    names: Vec<String>,
    index: HashMap<String, u32>,
    frozen: bool,
    dropout_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    templates: Vec<FeatureTemplate>,
    features: Vec<String>,
    frozen: bool,
    dropout_rate: f64,
}

impl From<EncoderFile> for FeatureEncoder {
    fn from(f: EncoderFile) -> Self {
        let index = f
            .features
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self {
            templates: f.templates,
            names: f.features,
            index,
            frozen: f.frozen,
            dropout_rate: f.dropout_rate,
        }
    }
}

impl From<FeatureEncoder> for EncoderFile {
    fn from(e: FeatureEncoder) -> Self {
        Self {
            templates: e.templates,
            features: e.names,
            frozen: e.frozen,
            dropout_rate: e.dropout_rate,
        }
    }
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        Self::new(FeatureTemplate::ALL.to_vec(), 0.0)
    }
}

impl PartialEq for FeatureEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.templates == other.templates
            && self.names == other.names
            && self.frozen == other.frozen
            && self.dropout_rate.to_bits() == other.dropout_rate.to_bits()
    }
}

impl FeatureEncoder {
    /// # Panics
    /// If `dropout_rate` is outside `[0, 1)`.
    pub fn new(templates: Vec<FeatureTemplate>, dropout_rate: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&dropout_rate),
            "dropout rate must lie in [0, 1), got {dropout_rate}"
        );
        Self {
            templates,
            names: Vec::new(),
            index: HashMap::new(),
            frozen: false,
            dropout_rate,
        }
    }

    pub fn templates(&self) -> &[FeatureTemplate] {
        &self.templates
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1), got {rate}");
        self.dropout_rate = rate;
    }

    pub fn num_features(&self) -> usize {
        self.names.len()
    }

    pub fn feature_name(&self, index: u32) -> &str {
        &self.names[index as usize]
    }

    pub fn feature_index(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Feature strings for every word position. Occluded positions (set to
    /// [`UNKNOWN_WORD`]) fire only the bias and context features, and
    /// neighbours see them as `<unk>`.
    pub fn extract(&self, words: &[String]) -> Vec<Vec<String>> {
        let neighbour = |i: isize| -> String {
            if i < 0 {
                "<s>".to_string()
            } else if i as usize >= words.len() {
                "</s>".to_string()
            } else if words[i as usize] == UNKNOWN_WORD {
                "<unk>".to_string()
            } else {
                words[i as usize].clone()
            }
        };
        words
            .iter()
            .enumerate()
            .map(|(i, word)| {
                let mut f = Vec::new();
                let unknown = word == UNKNOWN_WORD;
                let chars: Vec<char> = word.chars().collect();
                for t in &self.templates {
                    match t {
                        FeatureTemplate::WordInitial => f.push("init".to_string()),
                        FeatureTemplate::Context => {
                            let i = i as isize;
                            f.push(format!("w-2={}", neighbour(i - 2)));
                            f.push(format!("w-1={}", neighbour(i - 1)));
                            f.push(format!("w+1={}", neighbour(i + 1)));
                            f.push(format!("w+2={}", neighbour(i + 2)));
                        }
                        _ if unknown => {}
                        FeatureTemplate::Word => f.push(format!("w={word}")),
                        FeatureTemplate::Lower => f.push(format!("lw={}", word.to_lowercase())),
                        FeatureTemplate::Prefixes => {
                            for n in 1..=3.min(chars.len()) {
                                f.push(format!("p{n}={}", chars[..n].iter().collect::<String>()));
                            }
                        }
                        FeatureTemplate::Suffixes => {
                            for n in 1..=3.min(chars.len()) {
                                f.push(format!("s{n}={}", chars[chars.len() - n..].iter().collect::<String>()));
                            }
                        }
                        FeatureTemplate::Shape => f.push(format!("sh={}", word_shape(word))),
                    }
                }
                f
            })
            .collect()
    }

    /// Indices of known features; unknown ones are skipped.
    pub fn encode(&self, words: &[String]) -> Vec<Vec<u32>> {
        self.extract(words)
            .into_iter()
            .map(|fs| fs.iter().filter_map(|f| self.index.get(f).copied()).collect())
            .collect()
    }

    /// Like [`encode`](Self::encode) but first adds unseen features to the
    /// vocabulary unless the encoder is frozen.
    pub fn encode_growing(&mut self, words: &[String]) -> Vec<Vec<u32>> {
        if self.frozen {
            return self.encode(words);
        }
        self.extract(words)
            .into_iter()
            .map(|fs| fs.into_iter().map(|f| self.intern(f)).collect())
            .collect()
    }

    /// Index of `name`, adding it unless the vocabulary is frozen.
    pub fn intern_name(&mut self, name: &str) -> Option<u32> {
        match self.index.get(name) {
            Some(&i) => Some(i),
            None if self.frozen => None,
            None => Some(self.intern(name.to_string())),
        }
    }

    fn intern(&mut self, name: String) -> u32 {
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn shapes() {
        assert_eq!(word_shape("Ibuprofen"), "Xx");
        assert_eq!(word_shape("400mg"), "dx");
        assert_eq!(word_shape("b.i.d."), "x.x.x.");
    }

    #[test]
    fn extracts_all_templates() {
        let enc = FeatureEncoder::default();
        let f = enc.extract(&words(&["Aspirin", "daily"]));
        assert!(f[0].contains(&"w=Aspirin".to_string()));
        assert!(f[0].contains(&"lw=aspirin".to_string()));
        assert!(f[0].contains(&"p3=Asp".to_string()));
        assert!(f[0].contains(&"s3=rin".to_string()));
        assert!(f[0].contains(&"sh=Xx".to_string()));
        assert!(f[0].contains(&"w-1=<s>".to_string()));
        assert!(f[0].contains(&"w+1=daily".to_string()));
        assert!(f[1].contains(&"w+2=</s>".to_string()));
    }

    #[test]
    fn unknown_word_keeps_only_bias_and_context() {
        let enc = FeatureEncoder::default();
        let f = enc.extract(&words(&["take", UNKNOWN_WORD]));
        assert!(f[1].iter().all(|x| x == "init" || x.starts_with("w-") || x.starts_with("w+")));
        assert!(f[0].contains(&"w+1=<unk>".to_string()));
    }

    #[test]
    fn frozen_vocab_does_not_grow() {
        let mut enc = FeatureEncoder::new(vec![FeatureTemplate::Word], 0.0);
        enc.encode_growing(&words(&["a", "b"]));
        assert_eq!(enc.num_features(), 2);
        enc.freeze();
        let ids = enc.encode_growing(&words(&["a", "c"]));
        assert_eq!(enc.num_features(), 2);
        assert_eq!(ids, vec![vec![0], vec![]]);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let mut enc = FeatureEncoder::default();
        enc.encode_growing(&words(&["x", "y"]));
        let json = serde_json::to_string(&enc).unwrap();
        let back: FeatureEncoder = serde_json::from_str(&json).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.feature_index("w=y"), enc.feature_index("w=y"));
    }

    #[test]
    #[should_panic]
    fn dropout_one_is_rejected() {
        FeatureEncoder::new(vec![], 1.0);
    }
}
