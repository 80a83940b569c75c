//! Seeded synthetic multi-domain test streams.
//!
//! A sample is a class template plus Gaussian noise, pushed through a
//! photometric domain transform `contrast * x + brightness + N(0, noise)`.
//! Every batch is a pure function of `(seed, batch index)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InputShape;
use crate::tensor::FeatureMap;

/// Contrast change per severity step, scaled by the domain's contrast level.
pub const CONTRAST_PER_SEVERITY: f64 = 0.15;
/// Brightness offset per severity step, scaled by the domain's brightness level.
pub const BRIGHTNESS_PER_SEVERITY: f64 = 0.3;
pub const NOISE_PER_SEVERITY: f64 = 0.05;

pub const TEMPLATE_STD: f64 = 1.0;
pub const DEFAULT_BASE_NOISE: f64 = 1.0;
/// Minimum pairwise Euclidean distance between class templates, as a fraction
/// of the expected distance `sqrt(2 * dim) * TEMPLATE_STD`.
pub const TEMPLATE_DISTANCE_FRACTION: f64 = 0.75;
const TEMPLATE_RESAMPLE_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: usize,
    pub contrast: f64,
    pub brightness: f64,
    pub noise_sigma: f64,
    pub severity: u8,
}

impl DomainSpec {
    /// The clean domain.
    pub fn identity(id: usize) -> Self {
        DomainSpec {
            id,
            contrast: 1.0,
            brightness: 0.0,
            noise_sigma: 0.0,
            severity: 1,
        }
    }

    /// Parameters from the severity table. Levels lie in `[-1, 1]` and pick
    /// the direction and relative size of the contrast and brightness shifts.
    pub fn from_severity(id: usize, severity: u8, contrast_level: f64, brightness_level: f64) -> Result<Self> {
        let s = severity as f64;
        let d = DomainSpec {
            id,
            contrast: 1.0 + CONTRAST_PER_SEVERITY * s * contrast_level,
            brightness: BRIGHTNESS_PER_SEVERITY * s * brightness_level,
            noise_sigma: NOISE_PER_SEVERITY * s,
            severity,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("domains[{}].{f}", self.id);
        if !(self.contrast > 0.0) || !self.contrast.is_finite() {
            return Err(Error::config(field("contrast"), "must be positive"));
        }
        if !self.brightness.is_finite() {
            return Err(Error::config(field("brightness"), "must be finite"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config(field("noise_sigma"), "must be >= 0"));
        }
        if !(1..=5).contains(&self.severity) {
            return Err(Error::config(field("severity"), "must be in 1..=5"));
        }
        Ok(())
    }

    fn apply<R: Rng>(&self, x: &mut [f32], rng: &mut R) {
        for v in x {
            let n: f64 = if self.noise_sigma > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * self.noise_sigma
            } else {
                0.0
            };
            *v = (self.contrast * *v as f64 + self.brightness + n) as f32;
        }
    }
}

/// `count` domains at one severity. Brightness and contrast levels are evenly
/// spaced over `[-1, 1]` and assigned to domains by two independent seeded
/// permutations, so no two domains share a brightness offset.
pub fn generate_domains(count: usize, severity: u8, seed: u64) -> Result<Vec<DomainSpec>> {
    if count == 0 {
        return Err(Error::config("scenario.domains.count", "must be at least 1"));
    }
    let levels: Vec<f64> = if count == 1 {
        vec![1.0]
    } else {
        (0..count).map(|d| -1.0 + 2.0 * d as f64 / (count - 1) as f64).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d0ba_1157_u64);
    let mut brightness = levels.clone();
    brightness.shuffle(&mut rng);
    let mut contrast = levels;
    contrast.shuffle(&mut rng);
    (0..count)
        .map(|d| DomainSpec::from_severity(d, severity, contrast[d], brightness[d]))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTemplates {
    pub shape: InputShape,
    pub base_noise: f64,
    pub min_distance: f64,
    templates: Vec<Vec<f32>>,
}

impl ClassTemplates {
    pub fn classes(&self) -> usize {
        self.templates.len()
    }

    pub fn template(&self, k: usize) -> &[f32] {
        &self.templates[k]
    }
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `classes` Gaussian templates whose pairwise distances all reach the floor;
/// a violating template is redrawn a bounded number of times.
pub fn generate_class_templates(classes: usize, seed: u64, base_noise: f64) -> Result<ClassTemplates> {
    generate_class_templates_with(classes, seed, base_noise, InputShape::STANDARD, TEMPLATE_DISTANCE_FRACTION)
}

pub fn generate_class_templates_with(
    classes: usize,
    seed: u64,
    base_noise: f64,
    shape: InputShape,
    distance_fraction: f64,
) -> Result<ClassTemplates> {
    if classes < 2 {
        return Err(Error::config("model.classes", "need at least two classes"));
    }
    if !(base_noise >= 0.0) {
        return Err(Error::config("model.base_noise", "must be >= 0"));
    }
    let dim = shape.channels * shape.height * shape.width;
    let min_distance = distance_fraction * (2.0 * dim as f64).sqrt() * TEMPLATE_STD;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut templates: Vec<Vec<f32>> = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut attempts = 0;
        loop {
            let t: Vec<f32> = (0..dim)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * TEMPLATE_STD) as f32)
                .collect();
            if templates.iter().all(|o| distance(o, &t) >= min_distance) {
                templates.push(t);
                break;
            }
            attempts += 1;
            if attempts >= TEMPLATE_RESAMPLE_LIMIT {
                return Err(Error::config(
                    "model.classes",
                    format!("could not place template {k} at distance {min_distance:.3} from the others"),
                ));
            }
        }
    }
    Ok(ClassTemplates {
        shape,
        base_noise,
        min_distance,
        templates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    Static,
    CrossMix,
    Shuffle,
    Random,
    Wild,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSource {
    List(Vec<DomainSpec>),
    Generate { count: usize, severity: u8 },
}

/// Scenario as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub domains: DomainSource,
    pub batch_size: usize,
    pub num_batches: usize,
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default)]
    pub dirichlet_delta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<StreamScenario> {
        self.resolve_with_seed(self.seed)
    }

    /// Resolves with a replacement seed, for repetitions.
    pub fn resolve_with_seed(&self, seed: u64) -> Result<StreamScenario> {
        let domains = match &self.domains {
            DomainSource::List(list) => list.clone(),
            DomainSource::Generate { count, severity } => {
                if !(1..=5).contains(severity) {
                    return Err(Error::config("scenario.domains.severity", "must be in 1..=5"));
                }
                generate_domains(*count, *severity, seed)?
            }
        };
        let s = StreamScenario {
            kind: self.kind,
            domains,
            batch_size: self.batch_size,
            num_batches: self.num_batches,
            rounds: self.rounds,
            dirichlet_delta: self.dirichlet_delta,
            seed,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamScenario {
    pub kind: ScenarioKind,
    pub domains: Vec<DomainSpec>,
    pub batch_size: usize,
    pub num_batches: usize,
    pub rounds: usize,
    pub dirichlet_delta: Option<f64>,
    pub seed: u64,
}

impl StreamScenario {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::config("scenario.domains", "need at least one domain"));
        }
        for d in &self.domains {
            d.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::config("scenario.batch_size", "must be at least 1"));
        }
        if self.num_batches == 0 {
            return Err(Error::config("scenario.num_batches", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("scenario.rounds", "must be at least 1"));
        }
        match (self.kind, self.dirichlet_delta) {
            (ScenarioKind::Wild, Some(d)) if d > 0.0 && d.is_finite() => {}
            (ScenarioKind::Wild, _) => {
                return Err(Error::config("scenario.dirichlet_delta", "Wild needs a finite delta > 0"));
            }
            (_, Some(_)) => {
                return Err(Error::config("scenario.dirichlet_delta", "only valid for Wild"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn total_batches(&self) -> usize {
        self.num_batches * self.rounds
    }

    fn batch_rng(&self, round_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(round_index as u64);
        rng
    }

    /// Domain of every sample in the batch at `round_index`.
    fn assign_domains(&self, round_index: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let m = self.domains.len();
        let b = self.batch_size;
        let spread = |chosen: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
            let offset = rng.random_range(0..chosen.len());
            let mut ids: Vec<usize> = (0..b).map(|i| chosen[(offset + i) % chosen.len()]).collect();
            ids.shuffle(rng);
            ids
        };
        let all: Vec<usize> = (0..m).collect();
        match self.kind {
            ScenarioKind::Static => {
                let persistence = (self.num_batches / m).max(1);
                vec![(round_index / persistence) % m; b]
            }
            ScenarioKind::CrossMix => spread(&all, rng),
            ScenarioKind::Shuffle => {
                if round_index % 2 == 0 {
                    spread(&all, rng)
                } else {
                    vec![rng.random_range(0..m); b]
                }
            }
            ScenarioKind::Random | ScenarioKind::Wild => {
                let count = rng.random_range(1..=m);
                let mut chosen = all;
                chosen.shuffle(rng);
                chosen.truncate(count);
                spread(&chosen, rng)
            }
        }
    }
}

/// One test batch. Domain ids are diagnostics only; normalizers receive `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    x: FeatureMap<f32>,
    labels: Vec<usize>,
    domain_ids: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(x: FeatureMap<f32>, labels: Vec<usize>, domain_ids: Vec<usize>) -> Result<Self> {
        if labels.len() != x.batch() || domain_ids.len() != x.batch() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels and domain ids", x.batch()),
                actual: format!("{} labels, {} domain ids", labels.len(), domain_ids.len()),
            });
        }
        Ok(LabeledBatch { x, labels, domain_ids })
    }

    pub fn x(&self) -> &FeatureMap<f32> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain_ids(&self) -> &[usize] {
        &self.domain_ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Splits into consecutive batches of at most `size` samples.
    pub fn rechunk(&self, size: usize) -> Result<Vec<LabeledBatch>> {
        if size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size)
            .map(|c| {
                LabeledBatch::new(
                    self.x.select(c)?,
                    c.iter().map(|&i| self.labels[i]).collect(),
                    c.iter().map(|&i| self.domain_ids[i]).collect(),
                )
            })
            .collect()
    }
}

pub fn sample_batch(scenario: &StreamScenario, templates: &ClassTemplates, batch_index: usize) -> Result<LabeledBatch> {
    if batch_index >= scenario.total_batches() {
        return Err(Error::Contract(format!(
            "batch {batch_index} beyond stream of {}",
            scenario.total_batches()
        )));
    }
    let t = batch_index % scenario.num_batches;
    let mut rng = scenario.batch_rng(t);
    let b = scenario.batch_size;
    let k = templates.classes();

    let domain_ids = scenario.assign_domains(t, &mut rng);
    let labels = match (scenario.kind, scenario.dirichlet_delta) {
        (ScenarioKind::Wild, Some(delta)) => dirichlet_segment(delta, k, b, &mut rng),
        _ => (0..b).map(|_| rng.random_range(0..k)).collect(),
    };

    let dims = templates.shape.dims(b);
    let per_sample = dims.sample_len();
    let mut data = Vec::with_capacity(dims.len());
    let mut sample = vec![0.0f32; per_sample];
    for i in 0..b {
        for (s, t) in sample.iter_mut().zip(templates.template(labels[i])) {
            let n: f64 = rng.sample(StandardNormal);
            *s = (*t as f64 + templates.base_noise * n) as f32;
        }
        scenario.domains[domain_ids[i]].apply(&mut sample, &mut rng);
        data.extend_from_slice(&sample);
    }
    let ids = domain_ids.iter().map(|&d| scenario.domains[d].id).collect();
    LabeledBatch::new(FeatureMap::new(dims, data)?, labels, ids)
}

/// Class proportions `p ~ Dirichlet(delta * 1_k)`, sampled in log space so
/// that tiny concentrations do not underflow.
fn dirichlet_proportions<R: Rng>(delta: f64, k: usize, rng: &mut R) -> Vec<f64> {
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    let gamma = Gamma::new(delta + 1.0, 1.0).expect("shape is positive");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.max(f64::MIN_POSITIVE).ln() + u.ln() / delta
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Labels for one segment: Dirichlet proportions rounded by largest
/// remainder, emitted grouped by class.
fn dirichlet_segment<R: Rng>(delta: f64, k: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let p = dirichlet_proportions(delta, k, rng);
    let mut counts: Vec<usize> = p.iter().map(|q| (q * n as f64).floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = p[a] * n as f64 - counts[a] as f64;
        let fb = p[b] * n as f64 - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[c] += 1;
        rest -= 1;
    }
    counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
}

/// Temporally correlated labels: consecutive segments of `segment_len`
/// samples, each with its own Dirichlet class mix. Lower `delta` concentrates
/// each segment on fewer classes.
pub fn dirichlet_label_schedule(
    delta: f64,
    classes: usize,
    num_samples: usize,
    segment_len: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::config("dirichlet_delta", "must be finite and > 0"));
    }
    if classes == 0 || segment_len == 0 {
        return Err(Error::config("dirichlet", "classes and segment length must be positive"));
    }
    let mut labels = Vec::with_capacity(num_samples);
    let mut segment = 0u64;
    while labels.len() < num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(segment);
        let n = segment_len.min(num_samples - labels.len());
        labels.extend(dirichlet_segment(delta, classes, n, &mut rng));
        segment += 1;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn templates() -> ClassTemplates {
        generate_class_templates(4, 11, DEFAULT_BASE_NOISE).unwrap()
    }

    fn scenario(kind: ScenarioKind, m: usize, b: usize) -> StreamScenario {
        StreamScenario {
            kind,
            domains: generate_domains(m, 5, 3).unwrap(),
            batch_size: b,
            num_batches: 100,
            rounds: 1,
            dirichlet_delta: (kind == ScenarioKind::Wild).then_some(0.1),
            seed: 42,
        }
    }

    #[test]
    fn templates_are_reproducible_and_spaced() {
        let a = generate_class_templates(2, 5, 1.0).unwrap();
        assert_eq!(a, generate_class_templates(2, 5, 1.0).unwrap());
        assert!(distance(a.template(0), a.template(1)) >= a.min_distance);
        assert!(generate_class_templates(1, 5, 1.0).is_err());
    }

    #[test]
    fn unreachable_floor_is_a_config_error() {
        let err = generate_class_templates_with(3, 1, 1.0, InputShape::STANDARD, 10.0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn static_batches_are_single_domain() {
        let s = scenario(ScenarioKind::Static, 5, 16);
        for t in 0..100 {
            let b = sample_batch(&s, &templates(), t).unwrap();
            assert!(b.domain_ids().iter().all(|&d| d == b.domain_ids()[0]));
        }
    }

    #[test]
    fn crossmix_covers_all_domains() {
        let s = scenario(ScenarioKind::CrossMix, 5, 64);
        for t in 0..20 {
            let mut ids = sample_batch(&s, &templates(), t).unwrap().domain_ids().to_vec();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 5);
        }
    }

    #[test]
    fn shuffle_alternates() {
        let s = scenario(ScenarioKind::Shuffle, 4, 32);
        for t in 0..100 {
            let mut ids = sample_batch(&s, &templates(), t).unwrap().domain_ids().to_vec();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), if t % 2 == 0 { 4 } else { 1 }, "batch {t}");
        }
    }

    #[test]
    fn random_domain_counts_vary() {
        let s = scenario(ScenarioKind::Random, 5, 64);
        let mut counts = std::collections::BTreeSet::new();
        for t in 0..100 {
            let mut ids = sample_batch(&s, &templates(), t).unwrap().domain_ids().to_vec();
            ids.sort_unstable();
            ids.dedup();
            counts.insert(ids.len());
        }
        assert!(counts.len() >= 3, "{counts:?}");
    }

    #[test]
    fn rounds_replay_and_bound() {
        let mut s = scenario(ScenarioKind::CrossMix, 3, 8);
        s.num_batches = 4;
        s.rounds = 3;
        let t = templates();
        for i in 0..4 {
            assert_eq!(sample_batch(&s, &t, i).unwrap(), sample_batch(&s, &t, i + 8).unwrap());
        }
        assert!(sample_batch(&s, &t, 12).is_err());
    }

    #[test]
    fn identity_domain_is_template_plus_noise() {
        let mut s = scenario(ScenarioKind::Static, 1, 4);
        s.domains = vec![DomainSpec::identity(0)];
        let mut t = templates();
        t.base_noise = 0.0;
        let b = sample_batch(&s, &t, 0).unwrap();
        for i in 0..4 {
            assert_eq!(b.x().sample(i), t.template(b.labels()[i]));
        }
    }

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::from_severity(0, 6, 0.0, 0.0).is_err());
        let mut d = DomainSpec::identity(0);
        d.contrast = 0.0;
        assert!(d.validate().is_err());
        let mut s = scenario(ScenarioKind::Wild, 2, 4);
        s.dirichlet_delta = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn generated_domains_have_distinct_brightness() {
        let d = generate_domains(5, 5, 9).unwrap();
        let mut b: Vec<i64> = d.iter().map(|d| (d.brightness * 1000.0).round() as i64).collect();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 5);
        assert!(d.iter().all(|d| d.contrast > 0.0 && (d.noise_sigma - 0.25).abs() < 1e-12));
    }

    #[test]
    fn dirichlet_segment_counts_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for delta in [0.005, 0.1, 1.0, 1e6] {
            let s = dirichlet_segment(delta, 10, 64, &mut rng);
            assert_eq!(s.len(), 64);
            assert!(s.iter().all(|&c| c < 10));
        }
        assert!(dirichlet_label_schedule(0.0, 10, 10, 5, 0).is_err());
    }

    #[test]
    fn wild_labels_follow_schedule_shape() {
        let s = scenario(ScenarioKind::Wild, 3, 64);
        let b = sample_batch(&s, &templates(), 0).unwrap();
        assert!(b.labels().windows(2).all(|w| w[0] <= w[1]));
    }
}
