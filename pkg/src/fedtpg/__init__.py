"""Deterministic desk-scale simulator of federated text-driven prompt generation.

A frozen synthetic embedding world stands in for a pretrained vision-language
encoder; a cross-attention prompt generator (and fixed-prompt baselines) are
trained across disjoint-class few-shot clients by federated averaging and
evaluated on local / base / new class splits.
"""

__version__ = "0.1.0"

from .encoders import (
    EmbeddingStore,
    SurrogateEncoder,
    SynthConfig,
    handcrafted_prompts,
    load_store,
    save_store,
    surrogate_encode,
    synth_world,
)
from .evals import MetricsRecord, eval_accuracy, eval_protocol, harmonic_mean, pca_project
from .fedcore import (
    FederationConfig,
    aggregate,
    cosine_lr,
    local_train,
    run_federation,
    sample_clients,
)
from .models import (
    FixedPromptParams,
    ModelConfig,
    PredictConfig,
    PromptGenParams,
    class_probs,
    generate_prompts,
    init_prompt_gen,
    kg_penalty,
    loss_and_grad,
)
from .partition import ClientShard, build_shards, split_base_new
from .snapshot import (
    ModelSnapshot,
    finite_diff_grad,
    load_snapshot,
    save_snapshot,
    sgd_momentum_step,
)
from .tensor import GradTape, Matrix, cosine_rows, layer_norm, matmul, row_softmax
