use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Sample, Split, PLACE_DIM};
use crate::error::{Error, Result};

const NOUNS: [&str; 48] = [
    "dog", "cat", "horse", "bird", "cow", "sheep", "elephant", "giraffe", "zebra", "bear", "man",
    "woman", "boy", "girl", "child", "player", "bus", "train", "truck", "car", "bicycle",
    "motorcycle", "boat", "plane", "pizza", "cake", "sandwich", "banana", "apple", "donut",
    "table", "chair", "bench", "couch", "bed", "clock", "vase", "umbrella", "kite", "frisbee",
    "skateboard", "surfboard", "ball", "laptop", "phone", "book", "bottle", "cup",
];
const ADJECTIVES: [&str; 12] = [
    "red", "blue", "green", "white", "black", "brown", "small", "large", "young", "old",
    "wooden", "yellow",
];
const VERBS: [&str; 12] = [
    "sitting", "standing", "running", "eating", "playing", "riding", "flying", "sleeping",
    "walking", "jumping", "holding", "waiting",
];
const PLACES: [&str; 12] = [
    "park", "street", "beach", "kitchen", "field", "room", "yard", "station", "road", "lake",
    "market", "garden",
];
const WH: [&str; 7] = ["what", "where", "how", "who", "which", "why", "when"];

const NOUNS_PER_CLUSTER: usize = 4;
const ADJ_PER_CLUSTER: usize = 3;
const VERBS_PER_CLUSTER: usize = 3;

/// Generator settings; see [`synth_dataset`] for the defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_samples: usize,
    pub n_clusters: usize,
    pub d_img: usize,
    /// Emit `(cells, dim)` grid features.
    pub grid: Option<(usize, usize)>,
    pub place: bool,
    /// Scale of the per-object offset added to the cluster centroid.
    pub object_scale: f64,
    /// Scale of the per-sample noise.
    pub noise: f64,
}

impl SynthOptions {
    pub fn new(seed: u64, n_samples: usize, n_clusters: usize, d_img: usize) -> Self {
        Self {
            seed,
            n_samples,
            n_clusters,
            d_img,
            grid: None,
            place: true,
            object_scale: 0.35,
            noise: 0.05,
        }
    }
}

/// Generator cluster of the `index`-th synthetic sample.
pub fn synth_cluster(index: usize, n_clusters: usize) -> usize {
    index % n_clusters
}

fn word(list: &[&str], i: usize) -> String {
    let base = list[i % list.len()];
    match i / list.len() {
        0 => base.to_string(),
        round => format!("{base}{round}"),
    }
}

fn question(wh: &str, adj: &str, obj: &str, verb: &str, place: &str) -> String {
    match wh {
        "what" => format!("what is the {adj} {obj} doing in the {place}?"),
        "where" => format!("where is the {adj} {obj} {verb}?"),
        "how" => format!("how old is the {adj} {obj}?"),
        "who" => format!("who is {verb} with the {obj}?"),
        "which" => format!("which {obj} is {verb} near the {place}?"),
        "why" => format!("why is the {adj} {obj} {verb}?"),
        _ => format!("when is the {obj} {verb} in the {place}?"),
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Deterministic clustered dataset: sample `i` belongs to cluster
/// `i % n_clusters`; features are the cluster centroid plus an object
/// offset plus noise, and every cluster owns a question/caption template.
pub fn synth_dataset(seed: u64, n_samples: usize, n_clusters: usize, d_img: usize) -> Result<Dataset> {
    synth_dataset_with(&SynthOptions::new(seed, n_samples, n_clusters, d_img))
}

pub fn synth_dataset_with(opts: &SynthOptions) -> Result<Dataset> {
    if opts.n_clusters < 2 || opts.n_samples < opts.n_clusters {
        return Err(Error::invalid(format!(
            "synth_dataset needs n_samples >= n_clusters >= 2 (got {} samples, {} clusters)",
            opts.n_samples, opts.n_clusters
        )));
    }
    if opts.d_img == 0 {
        return Err(Error::invalid("synth_dataset needs d_img >= 1"));
    }
    if matches!(opts.grid, Some((c, d)) if c == 0 || d == 0) {
        return Err(Error::invalid("grid extents must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centroids: Vec<Vec<f64>> = (0..opts.n_clusters)
        .map(|_| normal_vec(&mut rng, opts.d_img))
        .collect();
    let n_objects = NOUNS_PER_CLUSTER * opts.n_clusters;
    let objects: Vec<Vec<f64>> = (0..n_objects)
        .map(|_| normal_vec(&mut rng, opts.d_img))
        .collect();
    let grids: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = opts.grid.map(|(cells, dim)| {
        let base = (0..opts.n_clusters)
            .map(|_| normal_vec(&mut rng, cells * dim))
            .collect();
        let obj = (0..n_objects).map(|_| normal_vec(&mut rng, dim)).collect();
        (base, obj)
    });

    let mut samples = Vec::with_capacity(opts.n_samples);
    for i in 0..opts.n_samples {
        let c = synth_cluster(i, opts.n_clusters);
        let local_obj = rng.random_range(0..NOUNS_PER_CLUSTER);
        let obj_index = c * NOUNS_PER_CLUSTER + local_obj;
        let obj = word(&NOUNS, obj_index);
        let adj = word(&ADJECTIVES, c * ADJ_PER_CLUSTER + rng.random_range(0..ADJ_PER_CLUSTER));
        let verb = word(&VERBS, c * VERBS_PER_CLUSTER + rng.random_range(0..VERBS_PER_CLUSTER));
        let place = word(&PLACES, c);
        let wh = WH[c % WH.len()];

        let features: Vec<f64> = (0..opts.d_img)
            .map(|j| {
                let n: f64 = rng.sample(StandardNormal);
                centroids[c][j] + opts.object_scale * objects[obj_index][j] + opts.noise * n
            })
            .collect();

        let grid_features = match (&grids, opts.grid) {
            (Some((base, obj_vecs)), Some((cells, dim))) => {
                let hot = obj_index % cells;
                Some(
                    (0..cells)
                        .map(|r| {
                            (0..dim)
                                .map(|k| {
                                    let n: f64 = rng.sample(StandardNormal);
                                    let mut v = 0.5 * base[c][r * dim + k] + opts.noise * n;
                                    if r == hot {
                                        v += obj_vecs[obj_index][k];
                                    }
                                    v.tanh()
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            _ => None,
        };

        let place_features = opts.place.then(|| {
            let scene = (c * 31 + 7) % PLACE_DIM;
            let mut v: Vec<f64> = (0..PLACE_DIM).map(|_| rng.random_range(0.0..0.01)).collect();
            v[scene] += 0.9;
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            v
        });

        samples.push(Sample {
            id: format!("syn-{i:05}"),
            features,
            grid_features,
            place_features,
            captions: vec![format!("a {adj} {obj} {verb} in the {place}.")],
            questions: vec![question(wh, &adj, &obj, &verb, &place)],
            tags: None,
        });
    }
    Dataset::new(samples, Split::Train)
}
