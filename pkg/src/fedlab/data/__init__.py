from .fds import load_dataset, load_fds, save_dataset, write_fds
from .preprocess import (Accepted, Excluded, detect_low_illumination, downsample_for_mlp,
                         exclude_sparse_users, preprocess_corpus, preprocess_sample)
from .split import kfold_user_folds, user_independent_split
from .synth import SynthSpec, draw_user_profiles, synth_generate
from .types import FederatedSplit, Sample, UserDataset, pooled

__all__ = [
    "Accepted", "Excluded", "FederatedSplit", "Sample", "SynthSpec", "UserDataset",
    "detect_low_illumination", "downsample_for_mlp", "draw_user_profiles",
    "exclude_sparse_users", "kfold_user_folds", "load_dataset", "load_fds", "pooled",
    "preprocess_corpus", "preprocess_sample", "save_dataset", "synth_generate",
    "user_independent_split", "write_fds",
]
