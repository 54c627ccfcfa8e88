//! Disease–symptom knowledge bases and synthetic patient records.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_SAMPLE_ATTEMPTS: usize = 1000;

pub const KB_FILE: &str = "kb.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KbFile {
    diseases: Vec<DiseaseEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiseaseEntry {
    id: String,
    symptoms: Vec<SymptomEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SymptomEntry {
    id: String,
    prob: f64,
}

/// Diseases, symptoms and per-disease symptom marginals. Indices follow file order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    diseases: Vec<String>,
    symptoms: Vec<String>,
    profiles: Vec<Vec<(usize, f64)>>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from `(disease, [(symptom, prob)])` entries.
    pub fn new<D, S>(entries: impl IntoIterator<Item = (D, Vec<(S, f64)>)>) -> Result<Self>
    where
        D: Into<String>,
        S: Into<String>,
    {
        let file = KbFile {
            diseases: entries
                .into_iter()
                .map(|(id, symptoms)| DiseaseEntry {
                    id: id.into(),
                    symptoms: symptoms
                        .into_iter()
                        .map(|(id, prob)| SymptomEntry { id: id.into(), prob })
                        .collect(),
                })
                .collect(),
        };
        Self::from_file(file)
    }

    fn from_file(file: KbFile) -> Result<Self> {
        if file.diseases.is_empty() {
            return Err(Error::Validation("knowledge base has no diseases".into()));
        }
        let mut diseases = Vec::with_capacity(file.diseases.len());
        let mut disease_ids = HashMap::new();
        let mut symptoms: Vec<String> = Vec::new();
        let mut symptom_ids: HashMap<String, usize> = HashMap::new();
        let mut profiles = Vec::with_capacity(file.diseases.len());
        for entry in file.diseases {
            if disease_ids.insert(entry.id.clone(), diseases.len()).is_some() {
                return Err(Error::Validation(format!("duplicate disease id `{}`", entry.id)));
            }
            if entry.symptoms.is_empty() {
                return Err(Error::Validation(format!("disease `{}` has no symptoms", entry.id)));
            }
            let mut profile = Vec::with_capacity(entry.symptoms.len());
            for s in entry.symptoms {
                if !(s.prob > 0.0 && s.prob <= 1.0) {
                    return Err(Error::Validation(format!(
                        "disease `{}`, symptom `{}`: probability {} outside (0, 1]",
                        entry.id, s.id, s.prob
                    )));
                }
                let idx = *symptom_ids.entry(s.id.clone()).or_insert_with(|| {
                    symptoms.push(s.id.clone());
                    symptoms.len() - 1
                });
                if profile.iter().any(|&(i, _)| i == idx) {
                    return Err(Error::Validation(format!(
                        "disease `{}` lists symptom `{}` twice",
                        entry.id, s.id
                    )));
                }
                profile.push((idx, s.prob));
            }
            diseases.push(entry.id);
            profiles.push(profile);
        }
        Ok(KnowledgeBase {
            diseases,
            symptoms,
            profiles,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KbFile = serde_json::from_str(text).map_err(|e| Error::parse("knowledge base", e))?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        let file = KbFile {
            diseases: self
                .diseases
                .iter()
                .zip(&self.profiles)
                .map(|(id, profile)| DiseaseEntry {
                    id: id.clone(),
                    symptoms: profile
                        .iter()
                        .map(|&(s, prob)| SymptomEntry {
                            id: self.symptoms[s].clone(),
                            prob,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("knowledge base serializes")
    }

    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn num_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    pub fn diseases(&self) -> &[String] {
        &self.diseases
    }

    pub fn symptoms(&self) -> &[String] {
        &self.symptoms
    }

    pub fn profile(&self, disease: usize) -> &[(usize, f64)] {
        &self.profiles[disease]
    }

    pub fn symptom_index(&self, id: &str) -> Option<usize> {
        self.symptoms.iter().position(|s| s == id)
    }

    pub fn disease_index(&self, id: &str) -> Option<usize> {
        self.diseases.iter().position(|d| d == id)
    }
}

pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KnowledgeBase::from_json(&text).map_err(|e| match e {
        Error::Parse { source, .. } => Error::parse(path.display().to_string(), source),
        other => other,
    })
}

/// A simulated patient: ground-truth disease, positive symptoms, and the self-reported one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatientRecord {
    pub disease: usize,
    /// Sorted, unique symptom indices.
    pub positives: Vec<usize>,
    pub self_report: usize,
}

impl PatientRecord {
    pub fn has(&self, symptom: usize) -> bool {
        self.positives.binary_search(&symptom).is_ok()
    }

    /// Complete 0/1 symptom vector.
    pub fn full_vector(&self, num_symptoms: usize) -> Vec<f64> {
        let mut x = vec![0.0; num_symptoms];
        for &s in &self.positives {
            x[s] = 1.0;
        }
        x
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    disease: String,
    positives: Vec<String>,
    self_report: String,
}

impl RecordLine {
    fn from_record(kb: &KnowledgeBase, r: &PatientRecord) -> Self {
        RecordLine {
            disease: kb.diseases[r.disease].clone(),
            positives: r.positives.iter().map(|&s| kb.symptoms[s].clone()).collect(),
            self_report: kb.symptoms[r.self_report].clone(),
        }
    }

    fn into_record(self, kb: &KnowledgeBase) -> Result<PatientRecord> {
        let unknown = |kind: &str, id: &str| Error::Validation(format!("record references unknown {kind} `{id}`"));
        let disease = kb
            .disease_index(&self.disease)
            .ok_or_else(|| unknown("disease", &self.disease))?;
        let positives: BTreeSet<usize> = self
            .positives
            .iter()
            .map(|s| kb.symptom_index(s).ok_or_else(|| unknown("symptom", s)))
            .collect::<Result<_>>()?;
        let self_report = kb
            .symptom_index(&self.self_report)
            .ok_or_else(|| unknown("symptom", &self.self_report))?;
        if !positives.contains(&self_report) {
            return Err(Error::Validation(format!(
                "self-report `{}` is not among the record's positive symptoms",
                self.self_report
            )));
        }
        Ok(PatientRecord {
            disease,
            positives: positives.into_iter().collect(),
            self_report,
        })
    }
}

/// Draws one patient: uniform disease, independent Bernoulli symptoms, uniform self-report.
/// Draws with no positive symptom are rejected and redrawn.
pub fn sample_patient<R: Rng + ?Sized>(kb: &KnowledgeBase, rng: &mut R) -> Result<PatientRecord> {
    let disease = rng.gen_range(0..kb.num_diseases());
    let profile = kb.profile(disease);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut positives: Vec<usize> = profile
            .iter()
            .filter(|&&(_, p)| rng.gen::<f64>() < p)
            .map(|&(s, _)| s)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let self_report = positives[rng.gen_range(0..positives.len())];
        positives.sort_unstable();
        return Ok(PatientRecord {
            disease,
            positives,
            self_report,
        });
    }
    Err(Error::Config(format!(
        "disease `{}` produced no positive symptom in {MAX_SAMPLE_ATTEMPTS} draws",
        kb.diseases[disease]
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PatientRecord>,
    pub valid: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub seed: u64,
}

pub fn generate_dataset(
    kb: &KnowledgeBase,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Result<Vec<PatientRecord>> {
        (0..n).map(|_| sample_patient(kb, &mut rng)).collect()
    };
    Ok(DatasetSplit {
        train: draw(n_train)?,
        valid: draw(n_valid)?,
        test: draw(n_test)?,
        seed,
    })
}

pub fn write_records(path: &Path, kb: &KnowledgeBase, records: &[PatientRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&RecordLine::from_record(kb, r)).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path, kb: &KnowledgeBase) -> Result<Vec<PatientRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))?;
        records.push(parsed.into_record(kb)?);
    }
    Ok(records)
}

/// Writes `kb.json` and the three record files into `dir`.
pub fn write_dataset(dir: &Path, kb: &KnowledgeBase, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let kb_path = dir.join(KB_FILE);
    fs::write(&kb_path, kb.to_json()).map_err(|e| Error::io(&kb_path, e))?;
    write_records(&dir.join(TRAIN_FILE), kb, &split.train)?;
    write_records(&dir.join(VALID_FILE), kb, &split.valid)?;
    write_records(&dir.join(TEST_FILE), kb, &split.test)
}

/// Reads a directory produced by [`write_dataset`]. The seed is not stored and reads back as 0.
pub fn read_dataset(dir: &Path) -> Result<(KnowledgeBase, DatasetSplit)> {
    let kb = load_knowledge_base(dir.join(KB_FILE))?;
    let split = DatasetSplit {
        train: read_records(&dir.join(TRAIN_FILE), &kb)?,
        valid: read_records(&dir.join(VALID_FILE), &kb)?,
        test: read_records(&dir.join(TEST_FILE), &kb)?,
        seed: 0,
    };
    Ok((kb, split))
}

/// Random knowledge base with every symptom used by at least one disease.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbGenerator {
    pub diseases: usize,
    pub symptoms: usize,
    pub min_profile: usize,
    pub max_profile: usize,
    pub min_prob: f64,
    pub max_prob: f64,
}

impl Default for KbGenerator {
    fn default() -> Self {
        KbGenerator {
            diseases: 20,
            symptoms: 60,
            min_profile: 3,
            max_profile: 8,
            min_prob: 0.3,
            max_prob: 0.9,
        }
    }
}

impl KbGenerator {
    pub fn generate(&self, seed: u64) -> Result<KnowledgeBase> {
        if self.min_profile == 0 || self.min_profile > self.max_profile || self.max_profile > self.symptoms {
            return Err(Error::Config(format!("bad profile size range {}..={}", self.min_profile, self.max_profile)));
        }
        if !(self.min_prob > 0.0 && self.min_prob <= self.max_prob && self.max_prob <= 1.0) {
            return Err(Error::Config(format!("bad probability range {}..={}", self.min_prob, self.max_prob)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..self.diseases)
            .map(|_| rng.gen_range(self.min_profile..=self.max_profile))
            .collect();
        if sizes.iter().sum::<usize>() < self.symptoms {
            return Err(Error::Config(format!(
                "{} diseases with profiles of at most {} symptoms cannot cover {} symptoms",
                self.diseases, self.max_profile, self.symptoms
            )));
        }
        let mut profiles: Vec<Vec<usize>> = vec![Vec::new(); self.diseases];
        // Cover every symptom once, round-robin over diseases that still have room.
        let mut order: Vec<usize> = (0..self.symptoms).collect();
        order.shuffle(&mut rng);
        let mut d = 0;
        for s in order {
            while profiles[d].len() >= sizes[d] {
                d = (d + 1) % self.diseases;
            }
            profiles[d].push(s);
            d = (d + 1) % self.diseases;
        }
        for (profile, &size) in profiles.iter_mut().zip(&sizes) {
            while profile.len() < size {
                let s = rng.gen_range(0..self.symptoms);
                if !profile.contains(&s) {
                    profile.push(s);
                }
            }
        }
        let width = self.symptoms.to_string().len();
        let dwidth = self.diseases.to_string().len();
        let mut entries: Vec<(String, Vec<(String, f64)>)> = Vec::with_capacity(self.diseases);
        for (i, profile) in profiles.iter().enumerate() {
            let symptoms = profile
                .iter()
                .map(|&s| {
                    let p = rng.gen_range(self.min_prob..=self.max_prob);
                    (format!("s{s:0width$}"), (p * 1000.0).round() / 1000.0)
                })
                .collect();
            entries.push((format!("d{i:0dwidth$}"), symptoms));
        }
        KnowledgeBase::new(entries)
    }
}
