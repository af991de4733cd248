"""Model zoo generation: datasets, CNN architectures, training and persistence."""
from .arch import (
    INIT_SCHEMES,
    ArchitectureSpec,
    Conv,
    Flatten,
    Linear,
    MaxPool,
    ParamBlock,
    ReLU,
    accuracy,
    build_model,
    desk_arch,
    forward_classifier,
    linear_arch,
    mlp_arch,
    paper_arch,
    predict_logits,
    unpack_layer,
)
from .container import pack_container, read_container, unpack_container, write_container
from .data import DATASET_KINDS, Dataset, gen_dataset, load_dataset, read_idx, save_dataset, write_idx
from .forge import (
    CNNClassifier,
    ModelCheckpoint,
    Zoo,
    ZooGrid,
    ZooHyperparams,
    agreement,
    assign_splits,
    default_checkpoint_epochs,
    train_zoo,
)

__all__ = [
    "INIT_SCHEMES", "ArchitectureSpec", "Conv", "Flatten", "Linear", "MaxPool", "ParamBlock", "ReLU",
    "accuracy", "build_model", "desk_arch", "forward_classifier", "linear_arch", "mlp_arch", "paper_arch",
    "predict_logits", "unpack_layer", "pack_container", "read_container", "unpack_container",
    "write_container", "DATASET_KINDS", "Dataset", "gen_dataset", "load_dataset", "read_idx", "save_dataset",
    "write_idx", "CNNClassifier", "ModelCheckpoint", "Zoo", "ZooGrid", "ZooHyperparams", "agreement",
    "assign_splits", "default_checkpoint_epochs", "train_zoo",
]
