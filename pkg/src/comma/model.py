"""The grounding model: embedding, the CA -> SA -> CA attention stack, pooling.

Video grid features go through a linear projection into the joint space,
word features through a two-layer ReLU MLP. The stack runs bidirectional
cross-modal attention, one self-attention layer over each modality, and a
second cross-modal attention layer; there are no residual connections,
normalization layers, or positional encodings. Pooled clip and sentence
vectors are plain means over region and word columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attention import (
    AttentionKind,
    AttentionLayerParams,
    cross_attention_layer,
    self_attention_layer,
)
from .masks import ModalityLayout, SelfAttentionVariant
from .tensor import (
    Tensor,
    concat_cols,
    linear,
    mean_over,
    mlp2,
    parameter,
    read_tensor_file,
    reshape,
    slice_cols,
    write_tensor_file,
)

__all__ = [
    "CommaConfig",
    "LinearParams",
    "MlpParams",
    "CommaParams",
    "CommaOutput",
    "CommaModel",
    "PRODUCTION_EMBED_DIM",
    "PRODUCTION_GRID",
    "init_params",
    "embed_inputs",
    "forward",
    "pool",
    "save_checkpoint",
    "load_checkpoint",
]

# Production-scale layout this architecture was designed around: a 2 x 4 x 4
# feature grid with a 512-dim joint space over 16-frame, 224 x 224 clips.
# Desk-scale work defaults to a 32-dim joint space instead.
PRODUCTION_EMBED_DIM = 512
PRODUCTION_GRID = (2, 4, 4)
DESK_EMBED_DIM = 32


@dataclass(frozen=True)
class CommaConfig:
    """Model hyperparameters; `d` is the joint embedding dimension."""

    d_video_in: int
    d_word_in: int
    d: int = DESK_EMBED_DIM
    sa_variant: SelfAttentionVariant = SelfAttentionVariant.SPATIOTEMPORAL
    seed: int = 0

    def __post_init__(self):
        if min(self.d_video_in, self.d_word_in, self.d) < 1:
            raise ValueError("embedding dimensions must be >= 1")
        if not isinstance(self.sa_variant, SelfAttentionVariant):
            object.__setattr__(self, "sa_variant", SelfAttentionVariant.parse(str(self.sa_variant)))

    def to_dict(self) -> dict:
        return {
            "d_video_in": self.d_video_in,
            "d_word_in": self.d_word_in,
            "d": self.d,
            "sa_variant": self.sa_variant.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CommaConfig":
        return cls(
            d_video_in=int(data["d_video_in"]),
            d_word_in=int(data["d_word_in"]),
            d=int(data["d"]),
            sa_variant=SelfAttentionVariant.parse(data["sa_variant"]),
            seed=int(data["seed"]),
        )


@dataclass(frozen=True)
class LinearParams:
    weight: Tensor
    bias: Tensor


@dataclass(frozen=True)
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass(frozen=True)
class CommaParams:
    """All trainable parameters. Cross-attention projections are constants
    (exact identities) and deliberately absent."""

    video_proj: LinearParams
    word_proj: MlpParams
    sa: AttentionLayerParams
    word_value_mlp: MlpParams

    def named(self) -> dict[str, Tensor]:
        """Flat name -> tensor view of every trainable parameter."""
        return {
            "video_proj.weight": self.video_proj.weight,
            "video_proj.bias": self.video_proj.bias,
            "word_proj.w1": self.word_proj.w1,
            "word_proj.b1": self.word_proj.b1,
            "word_proj.w2": self.word_proj.w2,
            "word_proj.b2": self.word_proj.b2,
            "sa.w_key": self.sa.w_key,
            "sa.w_query": self.sa.w_query,
            "sa.w_value": self.sa.w_value,
            "word_value_mlp.w1": self.word_value_mlp.w1,
            "word_value_mlp.b1": self.word_value_mlp.b1,
            "word_value_mlp.w2": self.word_value_mlp.w2,
            "word_value_mlp.b2": self.word_value_mlp.b2,
        }

    @classmethod
    def from_named(cls, named: dict[str, Tensor]) -> "CommaParams":
        def p(name: str) -> Tensor:
            t = named[name]
            return t if t.name == name else parameter(name, t.data)

        return cls(
            video_proj=LinearParams(p("video_proj.weight"), p("video_proj.bias")),
            word_proj=MlpParams(p("word_proj.w1"), p("word_proj.b1"), p("word_proj.w2"), p("word_proj.b2")),
            sa=AttentionLayerParams(
                AttentionKind.SELF, p("sa.w_key"), p("sa.w_query"), p("sa.w_value")
            ),
            word_value_mlp=MlpParams(
                p("word_value_mlp.w1"),
                p("word_value_mlp.b1"),
                p("word_value_mlp.w2"),
                p("word_value_mlp.b2"),
            ),
        )


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_params(config: CommaConfig) -> CommaParams:
    """Seeded uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(config.seed)
    d = config.d

    def lin(prefix: str, fan_out: int, fan_in: int) -> LinearParams:
        return LinearParams(
            parameter(f"{prefix}.weight", _glorot(rng, fan_out, fan_in)),
            parameter(f"{prefix}.bias", np.zeros(fan_out)),
        )

    def mlp(prefix: str, fan_in: int) -> MlpParams:
        return MlpParams(
            parameter(f"{prefix}.w1", _glorot(rng, d, fan_in)),
            parameter(f"{prefix}.b1", np.zeros(d)),
            parameter(f"{prefix}.w2", _glorot(rng, d, d)),
            parameter(f"{prefix}.b2", np.zeros(d)),
        )

    sa = AttentionLayerParams(
        AttentionKind.SELF,
        parameter("sa.w_key", _glorot(rng, d, d)),
        parameter("sa.w_query", _glorot(rng, d, d)),
        parameter("sa.w_value", _glorot(rng, d, d)),
    )
    return CommaParams(
        video_proj=lin("video_proj", d, config.d_video_in),
        word_proj=mlp("word_proj", config.d_word_in),
        sa=sa,
        word_value_mlp=mlp("word_value_mlp", d),
    )


def embed_inputs(
    clip_features: Tensor, word_features: Tensor, params: CommaParams
) -> tuple[Tensor, Tensor]:
    """Project raw features into the joint space.

    ``clip_features`` is d_video_in x T x H x W and is flattened to one
    column per grid cell in (t, h, w) row-major order; ``word_features`` is
    d_word_in x n_words. Returns (region_tokens, word_tokens), each D x N.
    """
    if clip_features.ndim != 4:
        raise ValueError(f"clip features must be rank 4, got {clip_features.shape}")
    if word_features.ndim != 2:
        raise ValueError(f"word features must be a matrix, got {word_features.shape}")
    d_in = clip_features.shape[0]
    cells = clip_features.data.size // d_in
    flat = reshape(clip_features, (d_in, cells))
    region_tokens = linear(flat, params.video_proj.weight, params.video_proj.bias)
    word_tokens = mlp2(
        word_features,
        params.word_proj.w1,
        params.word_proj.b1,
        params.word_proj.w2,
        params.word_proj.b2,
    )
    return region_tokens, word_tokens


@dataclass(frozen=True)
class CommaOutput:
    """Final region/word contexts plus each layer's attention weights."""

    region_context: Tensor  # D x (T*H*W)
    word_context: Tensor  # D x n_words
    attention_weights: tuple[Tensor, Tensor, Tensor]  # (ca1, sa, ca2)


def forward(
    region_tokens: Tensor,
    word_tokens: Tensor,
    layout: ModalityLayout,
    params: CommaParams,
    variant: SelfAttentionVariant | None = None,
) -> CommaOutput:
    """Run the CA1 -> SA -> CA2 stack over the concatenated token sequence."""
    if word_tokens.shape[1] != layout.n_words or region_tokens.shape[1] != layout.n_regions:
        raise ValueError(
            f"token counts {word_tokens.shape[1]} words / {region_tokens.shape[1]} regions "
            f"do not match layout {layout}"
        )
    if variant is None:
        variant = SelfAttentionVariant.SPATIOTEMPORAL
    tokens = concat_cols([word_tokens, region_tokens])
    ca1 = cross_attention_layer(tokens, layout)
    sa = self_attention_layer(ca1.context, layout, params.sa, variant)
    ca2 = cross_attention_layer(sa.context, layout)
    word_context = slice_cols(ca2.context, 0, layout.n_words)
    region_context = slice_cols(ca2.context, layout.n_words, layout.total)
    return CommaOutput(
        region_context=region_context,
        word_context=word_context,
        attention_weights=(ca1.weights, sa.weights, ca2.weights),
    )


def pool(output: CommaOutput, layout: ModalityLayout) -> tuple[Tensor, Tensor]:
    """Mean-pool the final contexts: (clip vector, sentence vector), each (D,)."""
    clip_vec = mean_over(output.region_context, axes=(1,))
    sentence_vec = mean_over(output.word_context, axes=(1,))
    return clip_vec, sentence_vec


@dataclass(frozen=True)
class CommaModel:
    """A config together with a concrete set of parameters."""

    config: CommaConfig
    params: CommaParams

    @classmethod
    def initialize(cls, config: CommaConfig) -> "CommaModel":
        return cls(config=config, params=init_params(config))

    def with_params(self, params: CommaParams) -> "CommaModel":
        return replace(self, params=params)


# ---------------------------------------------------------------------------
# checkpoints: a JSON manifest plus one tensor file per parameter

CHECKPOINT_MANIFEST = "checkpoint.json"


def save_checkpoint(model: CommaModel, directory: str | Path) -> Path:
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    files = {}
    for name, value in sorted(model.params.named().items()):
        rel = f"params/{name}.cmma"
        write_tensor_file(directory / rel, value)
        files[name] = rel
    manifest = {
        "format": "comma-checkpoint-v1",
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "params": files,
    }
    path = directory / CHECKPOINT_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory: str | Path) -> CommaModel:
    directory = Path(directory)
    manifest = json.loads((directory / CHECKPOINT_MANIFEST).read_text())
    if manifest.get("format") != "comma-checkpoint-v1":
        raise ValueError(f"{directory}: not a comma checkpoint")
    config = CommaConfig.from_dict(manifest["config"])
    named = {
        name: parameter(name, read_tensor_file(directory / rel).data)
        for name, rel in manifest["params"].items()
    }
    params = CommaParams.from_named(named)
    _check_param_shapes(config, params)
    return CommaModel(config=config, params=params)


def _check_param_shapes(config: CommaConfig, params: CommaParams) -> None:
    d = config.d
    expect = {
        "video_proj.weight": (d, config.d_video_in),
        "video_proj.bias": (d,),
        "word_proj.w1": (d, config.d_word_in),
        "word_proj.b1": (d,),
        "word_proj.w2": (d, d),
        "word_proj.b2": (d,),
        "sa.w_key": (d, d),
        "sa.w_query": (d, d),
        "sa.w_value": (d, d),
        "word_value_mlp.w1": (d, d),
        "word_value_mlp.b1": (d,),
        "word_value_mlp.w2": (d, d),
        "word_value_mlp.b2": (d,),
    }
    for name, value in params.named().items():
        if value.shape != expect[name]:
            raise ValueError(f"{name}: shape {value.shape} does not match config {expect[name]}")
