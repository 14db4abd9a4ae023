"""Guided CTC text recognition on a small numpy autodiff engine."""

from .config import RunConfig, TrainConfig
from .ctc import Alphabet, collapse, ctc_loss_bruteforce, ctc_loss_dp, enumerate_paths, greedy_decode
from .dataset import Corpus, CorpusSpec, generate_corpus, load_corpus
from .encoder import Encoder, EncoderConfig, shape_plan
from .errors import (
    CapacityError,
    CheckpointError,
    ContractError,
    CorpusFormatError,
    DimensionError,
    GTCError,
    InfeasibleLabelError,
    NumericError,
)
from .gcn import GcnDecoder, distance_matrix, gcn_forward, similarity_matrix
from .guidance import AttentionGuidance
from .kernels import BACKEND
from .tensor import Parameter, Tensor, backward, detach, no_grad
from .trainer import GTCModel, Trainer, evaluate, run_training

__version__ = "0.1.0"
