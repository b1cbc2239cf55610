//! Datasets, CIFAR ingestion, two-task builders and synthetic generators.

mod builders;
mod cifar;
mod dataset;
mod synth;

pub use builders::{
    add_other_category, make_split_task, make_superclass_shift_task, mixup_interpolate, mixup_with_pairing,
    restrict_classes,
};
pub use cifar::{
    load_cifar10, load_cifar100, load_cifar100_dir, load_cifar10_dir, parse_cifar10, parse_cifar100, superclass_of,
    CIFAR100_COARSE, CIFAR100_FINE, CIFAR100_HIERARCHY, CIFAR100_RECORD, CIFAR10_ANIMALS, CIFAR10_CLASSES,
    CIFAR10_OBJECTS, CIFAR10_RECORD, DATA_ROOT_ENV, IMAGE_SHAPE,
};
pub use dataset::{concat, Dataset, HeadMode, Labels, Split, Standardizer, TaskData, TaskPair};
pub use synth::{
    cifar100_hierarchy, cifar10_hierarchy, synth_cifar100_like, synth_cifar10_like, synth_cluster_task, synth_pool,
    ClusterTaskConfig, Hierarchy, SynthPoolConfig,
};
