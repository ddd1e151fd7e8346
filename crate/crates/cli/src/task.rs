//! Network and data for each task.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gdlab::datasets::{load_cifar10, load_iris, load_mnist, split, Dataset, SplitDataset};
use gdlab::model::{InitScheme, NetworkSpec};

use crate::config::{Task, TaskConfig};

pub struct LoadedTask {
    pub spec: NetworkSpec,
    pub split: SplitDataset,
    pub scheme: InitScheme,
}

pub fn network(cfg: &TaskConfig) -> Result<(NetworkSpec, InitScheme)> {
    let (input, default_hidden, classes): (usize, &[usize], usize) = match cfg.name {
        Task::Iris => (4, &[10], 3),
        Task::Mnist => (784, &[64], 10),
        Task::MnistDeep => (784, &[32, 32], 10),
        Task::Cifar10 => (3072, &[256], 10),
        Task::MnistCnn => {
            if cfg.hidden.is_some() {
                bail!("task.hidden does not apply to mnist_cnn");
            }
            return Ok((NetworkSpec::mnist_cnn(), InitScheme::CnnSmall));
        }
    };
    let hidden = cfg.hidden.as_deref().unwrap_or(default_hidden);
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    Ok((NetworkSpec::mlp(&sizes, cfg.activation)?, InitScheme::Standard))
}

fn truncate(d: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) => d.take(n),
        None => d,
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("data file {} does not exist", path.display());
    }
    Ok(())
}

pub fn load(cfg: &TaskConfig) -> Result<LoadedTask> {
    let (spec, scheme) = network(cfg)?;
    let data = cfg.data.as_path();
    let split = match cfg.name {
        Task::Iris => {
            require(data)?;
            let d = load_iris(data)?;
            let n_train = cfg.n_train.unwrap_or(120);
            split(&d, n_train, cfg.split_seed)
                .context("splitting Iris")?
                .standardized()
        }
        Task::Mnist | Task::MnistDeep | Task::MnistCnn => {
            let files = [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ]
            .map(|f| data.join(f));
            for f in &files {
                require(f)?;
            }
            let train = load_mnist(&files[0], &files[1])?;
            let test = load_mnist(&files[2], &files[3])?;
            SplitDataset::new(truncate(train, cfg.n_train), truncate(test, cfg.n_test))?
        }
        Task::Cifar10 => {
            let train_files: Vec<_> = (1..=5)
                .map(|i| data.join(format!("data_batch_{i}.bin")))
                .collect();
            let test_file = data.join("test_batch.bin");
            for f in train_files.iter().chain([&test_file]) {
                require(f)?;
            }
            let train = load_cifar10(&train_files)?;
            let test = load_cifar10(&[test_file])?;
            SplitDataset::new(truncate(train, cfg.n_train), truncate(test, cfg.n_test))?
        }
    };
    if split.train.n_features() != spec.input_len() {
        bail!(
            "task {:?} expects {} input features, data has {}",
            cfg.name,
            spec.input_len(),
            split.train.n_features()
        );
    }
    log::info!(
        "task {:?}: {} parameters, {} train / {} test samples",
        cfg.name,
        spec.param_count(),
        split.train.n_samples(),
        split.test.n_samples()
    );
    Ok(LoadedTask { spec, split, scheme })
}
