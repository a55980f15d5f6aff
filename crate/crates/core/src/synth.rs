//! Synthetic heterogeneous bags.
//!
//! Each image is a disk of "tissue" on a white background, tiled into square
//! regions. Every region is filled with one texture class drawn from the
//! bag's mixture, so the ground-truth class proportions of a bag are known
//! exactly and task labels can be defined as functions of them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::io::{read_i32, read_tensor, read_u32, write_tensor};
use crate::nn::TaskLabels;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TextureClass {
    pub id: usize,
    pub base_color: [f64; 3],
    /// Expected spots per pixel.
    pub spot_density: f64,
    pub spot_radius: f64,
    /// Half-width of the uniform per-channel noise.
    pub noise: f64,
}

impl TextureClass {
    fn spot_color(&self) -> [f64; 3] {
        self.base_color.map(|c| c * 0.45)
    }
}

/// Three visually distinct textures.
pub fn default_textures() -> Vec<TextureClass> {
    vec![
        TextureClass {
            id: 0,
            base_color: [0.92, 0.62, 0.74],
            spot_density: 0.02,
            spot_radius: 1.5,
            noise: 0.08,
        },
        TextureClass {
            id: 1,
            base_color: [0.52, 0.36, 0.70],
            spot_density: 0.05,
            spot_radius: 1.0,
            noise: 0.08,
        },
        TextureClass {
            id: 2,
            base_color: [0.85, 0.66, 0.42],
            spot_density: 0.01,
            spot_radius: 2.0,
            noise: 0.08,
        },
    ]
}

/// How a task label is derived from a bag's class proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelRule {
    /// Label is the most frequent texture class.
    ArgmaxOfMixture,
    /// Label is 1 iff the proportion of `class` exceeds `threshold`.
    ProportionAbove { class: usize, threshold: f64 },
}

impl LabelRule {
    pub fn classes(&self, textures: usize) -> usize {
        match self {
            Self::ArgmaxOfMixture => textures,
            Self::ProportionAbove { .. } => 2,
        }
    }

    pub fn apply(&self, mixture: &[f64]) -> usize {
        match *self {
            Self::ArgmaxOfMixture => crate::agg::argmax(mixture),
            Self::ProportionAbove { class, threshold } => usize::from(mixture[class] > threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagRecipe {
    pub image_size: usize,
    pub region_size: usize,
    pub disk_radius: f64,
    pub textures: Vec<TextureClass>,
    /// Probability of each texture per region; sums to one.
    pub mixture: Vec<f64>,
    pub tasks: Vec<LabelRule>,
    pub missing_rate: Vec<f64>,
    /// Images per group.
    pub group_size: usize,
}

/// Proportion-threshold task cutoff used by the default tasks.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

impl BagRecipe {
    /// 64×64 images, 8-pixel regions, three textures and two tasks: the
    /// argmax of the mixture and whether texture 1 exceeds 30%.
    pub fn desk_scale(mixture: Vec<f64>) -> Self {
        Self {
            image_size: 64,
            region_size: 11,
            disk_radius: 30.0,
            textures: default_textures(),
            mixture,
            tasks: vec![
                LabelRule::ArgmaxOfMixture,
                LabelRule::ProportionAbove {
                    class: 1,
                    threshold: DEFAULT_THRESHOLD,
                },
            ],
            missing_rate: vec![0.0, 0.0],
            group_size: 1,
        }
    }

    pub fn task_classes(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.classes(self.textures.len())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mixture.len() != self.textures.len() {
            return Err(invalid("one mixture weight per texture expected"));
        }
        if self.mixture.iter().any(|&p| p < 0.0) || (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture {:?} is not a distribution", self.mixture)));
        }
        if self.missing_rate.len() != self.tasks.len() {
            return Err(invalid("one missing rate per task expected"));
        }
        if self.region_size == 0 || self.group_size == 0 {
            return Err(invalid("region and group sizes must be positive"));
        }
        let n = self.image_size as f64;
        let covered = std::f64::consts::PI * self.disk_radius * self.disk_radius;
        if 2.0 * self.disk_radius > n || covered < 0.5 * n * n {
            return Err(invalid(format!(
                "disk of radius {} must fit the image and cover half of it",
                self.disk_radius
            )));
        }
        Ok(())
    }

    fn labels(&self, mixture: &[f64], rng: &mut impl Rng) -> TaskLabels {
        TaskLabels(
            self.tasks
                .iter()
                .zip(&self.missing_rate)
                .map(|(rule, &rate)| (!rng.gen_bool(rate)).then(|| rule.apply(mixture)))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    /// `W × W × 3`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `W × W` binary foreground mask.
    pub mask: Tensor<f32>,
    pub labels: TaskLabels,
    pub group_id: u32,
    /// Realized share of foreground pixels per texture class.
    pub true_mixture: Vec<f64>,
}

pub fn disk_mask(size: usize, radius: f64) -> Tensor<f32> {
    let c = (size as f64 - 1.0) / 2.0;
    Tensor::from_fn(&[size, size], |p| {
        let (y, x) = ((p / size) as f64 - c, (p % size) as f64 - c);
        if x * x + y * y <= radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

fn draw_class(mixture: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in mixture.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    mixture.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Realizes one bag. Labels follow `true_mixture` (with missing labels drawn
/// at the recipe's rates) and the output is a pure function of `seed`.
pub fn generate_bag(recipe: &BagRecipe, seed: u64) -> Result<Bag> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = recipe.image_size;
    let rs = recipe.region_size;
    let mask = disk_mask(n, recipe.disk_radius);
    let tiles = n.div_ceil(rs);
    let classes: Vec<usize> = (0..tiles * tiles).map(|_| draw_class(&recipe.mixture, &mut rng)).collect();

    let mut image = vec![1.0f32; n * n * 3];
    let mut pixel_counts = vec![0usize; recipe.textures.len()];
    for (tile, &class) in classes.iter().enumerate() {
        let texture = &recipe.textures[class];
        let (y0, x0) = ((tile / tiles) * rs, (tile % tiles) * rs);
        let (y1, x1) = ((y0 + rs).min(n), (x0 + rs).min(n));
        let area = ((y1 - y0) * (x1 - x0)) as f64;
        let spots = {
            let expected = texture.spot_density * area;
            expected.floor() as usize + usize::from(rng.gen_bool(expected.fract()))
        };
        let centers: Vec<(f64, f64)> = (0..spots)
            .map(|_| (rng.gen_range(y0 as f64..y1 as f64), rng.gen_range(x0 as f64..x1 as f64)))
            .collect();
        let r2 = texture.spot_radius * texture.spot_radius;
        for y in y0..y1 {
            for x in x0..x1 {
                let spotted = centers.iter().any(|&(cy, cx)| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    dy * dy + dx * dx <= r2
                });
                let color = if spotted { texture.spot_color() } else { texture.base_color };
                let noise: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-texture.noise..=texture.noise));
                if mask.data()[y * n + x] == 0.0 {
                    continue;
                }
                pixel_counts[class] += 1;
                for ch in 0..3 {
                    image[(y * n + x) * 3 + ch] = (color[ch] + noise[ch]).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    let total: usize = pixel_counts.iter().sum();
    let true_mixture: Vec<f64> = pixel_counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Bag {
        image: Tensor::new(&[n, n, 3], image)?,
        mask,
        labels: recipe.labels(&true_mixture, &mut rng),
        group_id: 0,
        true_mixture,
    })
}

/// Distribution over bag mixtures, used to populate a dataset with one
/// recipe per group.
#[derive(Clone, Debug, PartialEq)]
pub enum MixturePrior {
    Fixed(Vec<f64>),
    /// Proportion of `class` drawn from `U(0, θ)` with probability `below`
    /// and from `U(θ, upper)` otherwise; the remainder is split uniformly at
    /// random among the other classes.
    Straddle {
        class: usize,
        threshold: f64,
        below: f64,
        upper: f64,
    },
    /// Every bag is a single texture, picked with the given weights.
    Pure(Vec<f64>),
}

impl MixturePrior {
    /// The heterogeneous prior used by the experiments.
    pub fn heterogeneous() -> Self {
        Self::Straddle {
            class: 1,
            threshold: DEFAULT_THRESHOLD,
            below: 0.3,
            upper: 0.6,
        }
    }

    /// Single-texture bags with the label balance of
    /// [`MixturePrior::heterogeneous`] on the threshold task.
    pub fn homogeneous() -> Self {
        Self::Pure(vec![0.15, 0.7, 0.15])
    }

    pub fn sample(&self, textures: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Self::Fixed(m) => m.clone(),
            Self::Pure(weights) => {
                let k = draw_class(weights, rng);
                (0..textures).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
            }
            &Self::Straddle {
                class,
                threshold,
                below,
                upper,
            } => {
                let p = if rng.gen_bool(below) {
                    rng.gen_range(0.0..threshold)
                } else {
                    rng.gen_range(threshold..upper)
                };
                // Uniform split of the remainder: sorted uniform cut points.
                let mut cuts: Vec<f64> = (0..textures.saturating_sub(2)).map(|_| rng.gen()).collect();
                cuts.push(0.0);
                cuts.push(1.0);
                cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                let mut shares = cuts.windows(2).map(|w| (w[1] - w[0]) * (1.0 - p));
                (0..textures)
                    .map(|i| if i == class { p } else { shares.next().unwrap_or(0.0) })
                    .collect()
            }
        }
    }
}

/// One recipe per group, with mixtures drawn from `prior`.
pub fn sample_recipes(template: &BagRecipe, prior: &MixturePrior, groups: usize, seed: u64) -> Vec<(BagRecipe, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..groups)
        .map(|_| {
            let mut recipe = template.clone();
            recipe.mixture = prior.sample(template.textures.len(), &mut rng);
            (recipe, 1)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task_classes: Vec<usize>,
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
}

fn bag_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `count` groups per recipe and splits the groups in half between
/// train and test. Within a group all images share one label vector, derived
/// from the group's pooled pixel counts.
pub fn generate_dataset(recipes: &[(BagRecipe, usize)], seed: u64) -> Result<Dataset> {
    let first = recipes.first().ok_or_else(|| invalid("no recipes"))?;
    let task_classes = first.0.task_classes();
    let mut groups: Vec<Vec<Bag>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = 0u64;
    for (recipe, count) in recipes {
        if recipe.task_classes() != task_classes {
            return Err(invalid("recipes disagree on tasks"));
        }
        for _ in 0..*count {
            let group_id = groups.len() as u32;
            let mut bags = (0..recipe.group_size)
                .map(|_| {
                    index += 1;
                    generate_bag(recipe, bag_seed(seed, index))
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled = pooled_mixture(&bags);
            let labels = recipe.labels(&pooled, &mut rng);
            for bag in &mut bags {
                bag.group_id = group_id;
                bag.labels = labels.clone();
            }
            groups.push(bags);
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let n_test = groups.len() / 2;
    let mut test_ids: Vec<usize> = order[..n_test].to_vec();
    test_ids.sort_unstable();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, bags) in groups.into_iter().enumerate() {
        if test_ids.binary_search(&g).is_ok() {
            test.extend(bags);
        } else {
            train.extend(bags);
        }
    }
    Ok(Dataset {
        task_classes,
        train,
        test,
    })
}

/// Mean of the members' mixtures; all members share an image size.
pub fn pooled_mixture(bags: &[Bag]) -> Vec<f64> {
    let k = bags[0].true_mixture.len();
    let mut out = vec![0.0; k];
    for bag in bags {
        for (o, &p) in out.iter_mut().zip(&bag.true_mixture) {
            *o += p;
        }
    }
    out.iter_mut().for_each(|o| *o /= bags.len() as f64);
    out
}

/// Bags grouped by `group_id`, in ascending id order.
pub fn groups(bags: &[Bag]) -> BTreeMap<u32, Vec<usize>> {
    let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, bag) in bags.iter().enumerate() {
        map.entry(bag.group_id).or_default().push(i);
    }
    map
}

pub fn write_dataset<W: Write>(w: &mut W, task_classes: &[usize], bags: &[Bag]) -> Result<()> {
    w.write_all(&(bags.len() as u32).to_le_bytes())?;
    w.write_all(&(task_classes.len() as u32).to_le_bytes())?;
    for &c in task_classes {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    for bag in bags {
        w.write_all(&bag.group_id.to_le_bytes())?;
        for label in &bag.labels.0 {
            let v = label.map_or(-1, |l| l as i32);
            w.write_all(&v.to_le_bytes())?;
        }
        let mix = Tensor::new(&[bag.true_mixture.len()], bag.true_mixture.clone())?;
        write_tensor(w, &mix)?;
        write_tensor(w, &bag.image)?;
        write_tensor(w, &bag.mask)?;
    }
    Ok(())
}

/// Returns the task class counts and the bags.
pub fn read_dataset<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<Bag>)> {
    let count = read_u32(r)? as usize;
    let tasks = read_u32(r)? as usize;
    let task_classes = (0..tasks)
        .map(|_| read_u32(r).map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut bags = Vec::with_capacity(count);
    for _ in 0..count {
        let group_id = read_u32(r)?;
        let labels = (0..tasks)
            .map(|t| match read_i32(r)? {
                -1 => Ok(None),
                l if l >= 0 && (l as usize) < task_classes[t] => Ok(Some(l as usize)),
                l => Err(Error::Format(format!("label {l} for task {t}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mix = read_tensor(r)?;
        let image = read_tensor(r)?;
        let mask = read_tensor(r)?;
        if image.rank() != 3 || mask.rank() != 2 || image.shape()[..2] != *mask.shape() {
            return Err(Error::Format(format!(
                "image {:?} and mask {:?} disagree",
                image.shape(),
                mask.shape()
            )));
        }
        bags.push(Bag {
            image,
            mask,
            labels: TaskLabels(labels),
            group_id,
            true_mixture: mix.data().iter().map(|&v| v as f64).collect(),
        });
    }
    Ok((task_classes, bags))
}

pub fn save_dataset(path: &Path, task_classes: &[usize], bags: &[Bag]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, task_classes, bags)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(Vec<usize>, Vec<Bag>)> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}
