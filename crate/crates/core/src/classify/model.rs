use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, softmax, ClassifyError, Logits, ProbabilityPair, SpeakerPredictor};
use crate::text::tokenize;
use crate::transcript::SpeakerLabel;

const MODEL_FORMAT: &str = "clinote-classifier";
const MODEL_VERSION: u32 = 1;

/// Term to index map. Index `len()` is reserved for the bias feature.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorted unique tokens of the corpus.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let terms: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        Self::from_terms(terms.into_iter().collect()).expect("terms are unique")
    }

    pub fn from_terms(terms: Vec<String>) -> Result<Self, ClassifyError> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ClassifyError::InvalidModel(format!("duplicate vocabulary term `{t}`")));
            }
        }
        Ok(Self { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn bias_index(&self) -> usize {
        self.terms.len()
    }
}

/// Sparse term counts plus the constant bias feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    entries: BTreeMap<usize, f64>,
    bias_index: usize,
}

impl Features {
    pub fn count(&self, index: usize) -> f64 {
        self.entries.get(&index).copied().unwrap_or(0.0)
    }

    pub fn bias(&self) -> f64 {
        self.count(self.bias_index)
    }

    /// Non-zero entries, bias last.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(i, v)| (*i, *v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dimension(&self) -> usize {
        self.bias_index + 1
    }
}

/// Unigram counts over the vocabulary; unknown terms are dropped.
pub fn featurize(text: &str, vocab: &Vocabulary) -> Features {
    let mut entries = BTreeMap::new();
    for token in tokenize(text) {
        if let Some(i) = vocab.index_of(&token) {
            *entries.entry(i).or_insert(0.0) += 1.0;
        }
    }
    entries.insert(vocab.bias_index(), 1.0);
    Features { entries, bias_index: vocab.bias_index() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Features,
    pub label: SpeakerLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 200, l2: 1e-4, seed: 0 }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), ClassifyError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClassifyError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ClassifyError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ClassifyError::InvalidConfig("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Two-class logistic model over bag-of-words features.
///
/// `weights` holds one block of `|V| + 1` values per class (clinician first),
/// the last value of each block being the class bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    vocabulary: Vocabulary,
    weights: Vec<f64>,
    training_meta: Option<TrainingMeta>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    vocabulary: Vec<String>,
    weights: Vec<f64>,
    #[serde(default)]
    training_meta: Option<TrainingMeta>,
}

impl ClassifierModel {
    pub fn new(vocabulary: Vocabulary, weights: Vec<f64>) -> Result<Self, ClassifyError> {
        let expected = 2 * (vocabulary.len() + 1);
        if weights.len() != expected {
            return Err(ClassifyError::InvalidModel(format!(
                "expected {expected} weights for {} terms, found {}",
                vocabulary.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifyError::InvalidModel("weights must be finite".into()));
        }
        Ok(Self { vocabulary, weights, training_meta: None })
    }

    pub fn zeros(vocabulary: Vocabulary) -> Self {
        let weights = vec![0.0; 2 * (vocabulary.len() + 1)];
        Self { vocabulary, weights, training_meta: None }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.training_meta.as_ref()
    }

    pub fn logits(&self, features: &Features) -> Logits {
        let z = logits_for(&self.weights, self.vocabulary.len() + 1, features);
        Logits::new(z[0], z[1]).expect("finite weights and counts give finite logits")
    }

    pub fn predict_features(&self, features: &Features) -> (SpeakerLabel, ProbabilityPair) {
        let p = softmax(&self.logits(features));
        (p.label(), p)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            vocabulary: self.vocabulary.terms.clone(),
            weights: self.weights.clone(),
            training_meta: self.training_meta,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifyError> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| ClassifyError::InvalidModel(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(ClassifyError::InvalidModel(format!(
                "unsupported model format {} v{}",
                doc.format, doc.version
            )));
        }
        let mut model = Self::new(Vocabulary::from_terms(doc.vocabulary)?, doc.weights)?;
        model.training_meta = doc.training_meta;
        Ok(model)
    }
}

impl SpeakerPredictor for ClassifierModel {
    fn predict(&self, text: &str) -> (SpeakerLabel, ProbabilityPair) {
        self.predict_features(&featurize(text, &self.vocabulary))
    }
}

fn logits_for(weights: &[f64], block: usize, features: &Features) -> [f64; 2] {
    let mut z = [0.0; 2];
    for (c, zc) in z.iter_mut().enumerate() {
        *zc = features.iter().map(|(j, x)| weights[c * block + j] * x).sum();
    }
    z
}

fn check_dataset(dataset: &[LabeledExample], block: usize) -> Result<(), ClassifyError> {
    if dataset.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    for ex in dataset {
        if ex.features.dimension() != block {
            return Err(ClassifyError::FeatureOutOfRange { index: ex.features.dimension() - 1, len: block - 1 });
        }
    }
    Ok(())
}

/// Training objective: summed cross-entropy plus `l2 * ||w||²` over the
/// non-bias weights.
pub fn objective(weights: &[f64], vocab_len: usize, dataset: &[LabeledExample], l2: f64) -> Result<f64, ClassifyError> {
    let block = vocab_len + 1;
    check_dataset(dataset, block)?;
    let pairs: Vec<(SpeakerLabel, f64)> = dataset
        .iter()
        .map(|ex| {
            let z = logits_for(weights, block, &ex.features);
            let p = softmax(&Logits::new(z[0], z[1])?);
            Ok((ex.label, p.patient()))
        })
        .collect::<Result<_, ClassifyError>>()?;
    Ok(cross_entropy(&pairs)? + l2 * penalty(weights, block))
}

fn penalty(weights: &[f64], block: usize) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(k, _)| k % block != block - 1)
        .map(|(_, w)| w * w)
        .sum()
}

/// Analytic gradient of [`objective`].
pub fn objective_gradient(
    weights: &[f64],
    vocab_len: usize,
    dataset: &[LabeledExample],
    l2: f64,
) -> Result<Vec<f64>, ClassifyError> {
    let block = vocab_len + 1;
    check_dataset(dataset, block)?;
    let mut grad = vec![0.0; weights.len()];
    for ex in dataset {
        let z = logits_for(weights, block, &ex.features);
        let p = softmax(&Logits::new(z[0], z[1])?);
        for c in 0..2 {
            let target = if ex.label.code() as usize == c { 1.0 } else { 0.0 };
            let delta = p.values()[c] - target;
            for (j, x) in ex.features.iter() {
                grad[c * block + j] += delta * x;
            }
        }
    }
    for (k, g) in grad.iter_mut().enumerate() {
        if k % block != block - 1 {
            *g += 2.0 * l2 * weights[k];
        }
    }
    Ok(grad)
}

/// Full-batch gradient descent. Returns the model and the objective value
/// before training and after every epoch.
pub fn train_with_trace(
    vocabulary: Vocabulary,
    dataset: &[LabeledExample],
    cfg: &TrainingConfig,
) -> Result<(ClassifierModel, Vec<f64>), ClassifyError> {
    cfg.validate()?;
    let block = vocabulary.len() + 1;
    check_dataset(dataset, block)?;
    let first = dataset[0].label;
    if dataset.iter().all(|ex| ex.label == first) {
        return Err(ClassifyError::DegenerateDataset(first));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights: Vec<f64> = (0..2 * block).map(|_| rng.gen_range(-0.01..0.01)).collect();
    // The objective is a sum over examples; scaling the step by 1/N keeps the
    // configured learning rate meaningful across dataset sizes.
    let step = cfg.learning_rate / dataset.len() as f64;
    let mut trace = vec![objective(&weights, vocabulary.len(), dataset, cfg.l2)?];
    for _ in 0..cfg.epochs {
        let grad = objective_gradient(&weights, vocabulary.len(), dataset, cfg.l2)?;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        trace.push(objective(&weights, vocabulary.len(), dataset, cfg.l2)?);
    }
    let meta = TrainingMeta {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        l2: cfg.l2,
        seed: cfg.seed,
        initial_loss: trace[0],
        final_loss: *trace.last().expect("non-empty trace"),
    };
    let mut model = ClassifierModel::new(vocabulary, weights)?;
    model.training_meta = Some(meta);
    Ok((model, trace))
}

pub fn train(vocabulary: Vocabulary, dataset: &[LabeledExample], cfg: &TrainingConfig) -> Result<ClassifierModel, ClassifyError> {
    train_with_trace(vocabulary, dataset, cfg).map(|(m, _)| m)
}

impl ClassifierModel {
    /// Builds the vocabulary from the texts and trains on them.
    pub fn train_on_texts<S: AsRef<str>>(
        examples: &[(S, SpeakerLabel)],
        cfg: &TrainingConfig,
    ) -> Result<ClassifierModel, ClassifyError> {
        let vocab = Vocabulary::build(examples.iter().map(|(t, _)| t.as_ref()));
        let dataset: Vec<LabeledExample> = examples
            .iter()
            .map(|(t, y)| LabeledExample { features: featurize(t.as_ref(), &vocab), label: *y })
            .collect();
        train(vocab, &dataset, cfg)
    }
}
