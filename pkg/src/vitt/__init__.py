"""ViT-Transformer surrogate for path-dependent composite stress, on a numpy autodiff core."""
from .data import DatasetManifest, Scaler, SequenceData, build_dataset, load_dataset
from .evaluation import make_protocol, relative_error, run_unseen_suite
from .models import DecoderOnly, GRUConfig, GRUModel, ViTTransformer, ViTTransformerConfig
from .tensor import Tensor, no_grad
from .training import Adam, LrSchedule, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
