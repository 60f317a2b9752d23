"""
Character transformer with three heads over one shared encoder body:
masked character prediction (mlm), per letter diacritic classification
(eo) and an autoregressive diacritic decoder (ed).

Layers are pre-norm with GELU feed forward blocks and learned absolute
positions. The ed decoder reads the 15 class ids plus a BOS row.
"""

from dataclasses import asdict, dataclass
import math
from typing import Dict, Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

from .arabic_text import N_CLASSES
from .corpus import IGNORE
from .errors import LengthExceeded, PrefixLengthMismatch, ShapeMismatch
from .log import get_logger

log = get_logger("tashkeel")

ARCHITECTURES = ("mlm", "eo", "ed")


@dataclass
class ModelConfig:
    arch: str = "eo"
    d_model: int = 512
    n_heads: int = 16
    n_layers_encoder: int = 6
    n_layers_decoder: int = 0
    ffn_dim: Optional[int] = None
    dropout: float = 0.1
    max_len: int = 1024
    vocab_size: int = 0
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.d_model

        self.validate()

    @property
    def bos_id(self) -> int:
        """Decoder input id that starts every label prefix"""
        return self.n_classes

    def validate(self) -> None:
        errors = []

        if self.arch not in ARCHITECTURES:
            errors.append(f"arch must be one of {ARCHITECTURES}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            errors.append(
                f"d_model ({self.d_model}) must be divisible by n_heads"
                f" ({self.n_heads})"
            )
        if not 0 <= self.dropout < 1:
            errors.append(f"dropout ({self.dropout}) must be in [0, 1)")
        if self.max_len < 1:
            errors.append("max_len must be at least 1")
        if self.vocab_size < 1:
            errors.append("vocab_size must be at least 1")
        if self.n_layers_encoder < 0:
            errors.append("n_layers_encoder must not be negative")
        if self.arch == "ed" and self.n_layers_decoder < 1:
            errors.append("ed models need at least one decoder layer")
        if self.arch != "ed" and self.n_layers_decoder:
            errors.append(f"{self.arch} models take no decoder layers")

        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    hidden: Optional[torch.Tensor] = None


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.o_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.head_dim).transpose(
            1, 2
        )

    def forward(
        self,
        query,
        key_value,
        key_mask=None,
        causal=False,
        cache=None,
        static_kv=False,
    ) -> torch.Tensor:
        """
        Parameters
        ----------
        query : torch.Tensor
            [B x Lq x d_model]
        key_value : torch.Tensor
            [B x Lk x d_model]
        key_mask : torch.Tensor | None
            [B x Lk] bool, True where a key may be attended to
        causal : bool
            forbid attending to keys after the query position
        cache : dict | None
            incremental decoding state, keys / values are appended to it
        static_kv : bool
            keys / values do not change between steps (cross attention),
            project them once and reuse from the cache
        """
        batch, q_len, d_model = query.shape
        q = self._split(self.q_proj(query))

        if cache is not None and static_kv and "k" in cache:
            k, v = cache["k"], cache["v"]
        else:
            k = self._split(self.k_proj(key_value))
            v = self._split(self.v_proj(key_value))

            if cache is not None:
                if not static_kv and "k" in cache:
                    k = torch.cat([cache["k"], k], dim=2)
                    v = torch.cat([cache["v"], v], dim=2)
                cache["k"], cache["v"] = k, v

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)

        if key_mask is not None:
            scores = scores.masked_fill(
                ~key_mask[:, None, None, :], float("-inf")
            )

        if causal:
            k_len = k.shape[2]
            allowed = torch.ones(
                q_len, k_len, dtype=torch.bool, device=query.device
            ).tril(diagonal=k_len - q_len)
            scores = scores.masked_fill(~allowed, float("-inf"))

        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(batch, q_len, d_model)

        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, ffn_dim, dropout):
        super().__init__()
        self.up = nn.Linear(d_model, ffn_dim)
        self.down = nn.Linear(ffn_dim, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.down(self.dropout(F.gelu(self.up(x))))


class EncoderLayer(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.self_attn_norm = nn.LayerNorm(config.d_model)
        self.self_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout
        )
        self.ffn_norm = nn.LayerNorm(config.d_model)
        self.ffn = FeedForward(config.d_model, config.ffn_dim, config.dropout)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, key_mask):
        h = self.self_attn_norm(x)
        x = x + self.dropout(self.self_attn(h, h, key_mask=key_mask))

        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class DecoderLayer(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.self_attn_norm = nn.LayerNorm(config.d_model)
        self.self_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout
        )
        self.cross_attn_norm = nn.LayerNorm(config.d_model)
        self.cross_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout
        )
        self.ffn_norm = nn.LayerNorm(config.d_model)
        self.ffn = FeedForward(config.d_model, config.ffn_dim, config.dropout)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, memory, src_mask, tgt_mask, cache=None):
        h = self.self_attn_norm(x)
        x = x + self.dropout(
            self.self_attn(
                h,
                h,
                key_mask=tgt_mask,
                causal=True,
                cache=None if cache is None else cache["self"],
            )
        )

        h = self.cross_attn_norm(x)
        x = x + self.dropout(
            self.cross_attn(
                h,
                memory,
                key_mask=src_mask,
                cache=None if cache is None else cache["cross"],
                static_kv=True,
            )
        )

        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class DiacritizationTransformer(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config

        self.token_embedding = nn.Embedding(config.vocab_size, config.d_model)
        self.position_embedding = nn.Embedding(config.max_len, config.d_model)
        self.embedding_dropout = nn.Dropout(config.dropout)

        self.encoder_layers = nn.ModuleList(
            [EncoderLayer(config) for _ in range(config.n_layers_encoder)]
        )
        self.encoder_norm = nn.LayerNorm(config.d_model)

        if config.arch == "mlm":
            self.mlm_head = nn.Linear(config.d_model, config.vocab_size)
        else:
            self.classifier = nn.Linear(config.d_model, config.n_classes)

        if config.arch == "ed":
            self.label_embedding = nn.Embedding(
                config.n_classes + 1, config.d_model
            )
            self.decoder_layers = nn.ModuleList(
                [DecoderLayer(config) for _ in range(config.n_layers_decoder)]
            )
            self.decoder_norm = nn.LayerNorm(config.d_model)

    def _check_input(self, token_ids) -> None:
        if token_ids.shape[1] > self.config.max_len:
            raise LengthExceeded(
                f"input length {token_ids.shape[1]} exceeds max_len"
                f" {self.config.max_len}"
            )

        if token_ids.numel() and (
            token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size
        ):
            raise ValueError(
                f"token ids must lie in [0, {self.config.vocab_size})"
            )

    def _positions(self, length, device) -> torch.Tensor:
        return self.position_embedding(torch.arange(length, device=device))

    def encode(self, token_ids, mask) -> torch.Tensor:
        self._check_input(token_ids)

        x = self.token_embedding(token_ids) + self._positions(
            token_ids.shape[1], token_ids.device
        )
        x = self.embedding_dropout(x)

        for layer in self.encoder_layers:
            x = layer(x, key_mask=mask)

        return self.encoder_norm(x)

    def decode(self, memory, src_mask, label_prefix_ids, tgt_mask):
        x = self.label_embedding(label_prefix_ids) + self._positions(
            label_prefix_ids.shape[1], label_prefix_ids.device
        )
        x = self.embedding_dropout(x)

        for layer in self.decoder_layers:
            x = layer(x, memory, src_mask=src_mask, tgt_mask=tgt_mask)

        return self.decoder_norm(x)

    def decoder_step(self, prev_labels, position, memory, src_mask, caches):
        """
        Run the decoder for a single position, extending the caches

        Parameters
        ----------
        prev_labels : torch.Tensor
            [B] decoder input ids for this position
        position : int
            position being predicted
        memory : torch.Tensor
            [B x L x d_model] encoder output
        src_mask : torch.Tensor
            [B x L] bool encoder padding mask
        caches : list
            one {"self": {}, "cross": {}} dict per decoder layer

        Returns
        -------
        torch.Tensor
            [B x n_classes] logits for this position
        """
        x = self.label_embedding(prev_labels)[:, None, :]
        x = x + self.position_embedding.weight[position]
        tgt_mask = src_mask[:, : position + 1]

        for layer, cache in zip(self.decoder_layers, caches):
            x = layer(
                x, memory, src_mask=src_mask, tgt_mask=tgt_mask, cache=cache
            )

        return self.classifier(self.decoder_norm(x))[:, 0]


def _as_bool(mask) -> torch.Tensor:
    return mask.bool()


def init_parameters(config, seed) -> DiacritizationTransformer:
    """
    Build a model with deterministic weights: projections and embeddings
    drawn from N(0, d_model^-1/2), biases zero, layer norm gains one.

    Parameters
    ----------
    config : ModelConfig
        architecture
    seed : int
        seed for the weight draw

    Returns
    -------
    DiacritizationTransformer
        freshly initialised model
    """
    model = DiacritizationTransformer(config)
    reinitialise(model, seed=seed)

    return model


def reinitialise(model, seed) -> None:
    """
    Draw the initial values of every parameter from a generator seeded
    with `seed`
    """
    generator = torch.Generator().manual_seed(seed)
    std = model.config.d_model**-0.5

    with torch.no_grad():
        for name, param in model.named_parameters():
            owner = model.get_submodule(name.rsplit(".", 1)[0])

            if isinstance(owner, nn.LayerNorm):
                param.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                param.zero_()
            else:
                param.copy_(
                    torch.randn(param.shape, generator=generator) * std
                )


def parameter_manifest(model) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of every learnable array"""
    return {
        name: tuple(param.shape) for name, param in model.named_parameters()
    }


def encoder_forward(model, token_ids, mask, train_mode=False) -> torch.Tensor:
    """
    Bidirectional encoder states [B x L x d_model]; dropout only in
    train_mode
    """
    model.train(train_mode)

    return model.encode(token_ids, _as_bool(mask))


def eo_forward(model, token_ids, mask, train_mode=False) -> ForwardOutput:
    """Per position logits over the diacritic classes from the encoder"""
    hidden = encoder_forward(model, token_ids, mask, train_mode=train_mode)

    return ForwardOutput(logits=model.classifier(hidden), hidden=hidden)


def mlm_forward(model, token_ids, mask, train_mode=False) -> ForwardOutput:
    """Per position logits over the input vocabulary"""
    hidden = encoder_forward(model, token_ids, mask, train_mode=train_mode)

    return ForwardOutput(logits=model.mlm_head(hidden), hidden=hidden)


def shift_labels(label_ids, bos_id) -> torch.Tensor:
    """
    Build the teacher forced decoder input: BOS at position 0, then the
    gold label of the previous position

    Parameters
    ----------
    label_ids : torch.Tensor
        [B x L] class ids (no IGNORE values)
    bos_id : int
        decoder BOS id

    Returns
    -------
    torch.Tensor
        [B x L] decoder input ids
    """
    prefix = torch.full_like(label_ids, bos_id)
    prefix[:, 1:] = label_ids[:, :-1]

    return prefix


def ed_forward(
    model, token_ids, mask, label_prefix_ids, train_mode=False
) -> ForwardOutput:
    """
    Teacher forced encoder-decoder logits: position i sees every input
    position and decoder inputs 0..i (i.e. labels 1..i-1 after BOS)

    Raises
    ------
    PrefixLengthMismatch
        Raised when the label prefix and tokens differ in shape
    """
    if label_prefix_ids.shape != token_ids.shape:
        raise PrefixLengthMismatch(
            f"label prefix shape {tuple(label_prefix_ids.shape)} does not"
            f" match token shape {tuple(token_ids.shape)}"
        )

    mask = _as_bool(mask)
    memory = encoder_forward(model, token_ids, mask, train_mode=train_mode)
    hidden = model.decode(memory, mask, label_prefix_ids, tgt_mask=mask)

    return ForwardOutput(logits=model.classifier(hidden), hidden=hidden)


@torch.no_grad()
def greedy_decode(
    model, token_ids, mask, forced_labels=None, return_logits=False
):
    """
    Decode labels left to right, taking the argmax class at each step
    (lowest class id on ties) and feeding it back as the next input.

    Parameters
    ----------
    model : DiacritizationTransformer
        ed model
    token_ids : torch.Tensor
        [B x L] input ids
    mask : torch.Tensor
        [B x L] 1 for real positions
    forced_labels : torch.Tensor | None
        [B x L] class ids to emit instead of the argmax, IGNORE where free
    return_logits : bool
        additionally return the [B x L x n_classes] step logits

    Returns
    -------
    torch.Tensor
        [B x L] decoded class ids
    """
    mask = _as_bool(mask)
    model.eval()

    memory = model.encode(token_ids, mask)
    batch, length = token_ids.shape

    caches = [{"self": {}, "cross": {}} for _ in model.decoder_layers]
    prev = torch.full(
        (batch,),
        model.config.bos_id,
        dtype=torch.long,
        device=token_ids.device,
    )
    decoded = torch.empty((batch, length), dtype=torch.long)
    step_logits = []

    for position in range(length):
        logits = model.decoder_step(prev, position, memory, mask, caches)
        # torch.argmax returns the first maximal index
        prediction = logits.argmax(dim=-1)

        if forced_labels is not None:
            forced = forced_labels[:, position]
            prediction = torch.where(forced != IGNORE, forced, prediction)

        decoded[:, position] = prediction
        prev = prediction
        step_logits.append(logits)

    if return_logits:
        return decoded, torch.stack(step_logits, dim=1)

    return decoded


def _transfer_mapping(target_config, source_layers) -> Dict[str, str]:
    """Target module prefix -> source module prefix"""
    mapping = {
        "token_embedding": "token_embedding",
        "position_embedding": "position_embedding",
        "encoder_norm": "encoder_norm",
    }

    for idx in range(target_config.n_layers_encoder):
        mapping[f"encoder_layers.{idx}"] = f"encoder_layers.{idx}"

    if target_config.arch == "ed":
        # decoder layers take the upper source layers; cross attention has
        # no counterpart in an encoder-only source
        offset = target_config.n_layers_encoder
        for idx in range(target_config.n_layers_decoder):
            for part in ("self_attn", "self_attn_norm", "ffn", "ffn_norm"):
                mapping[f"decoder_layers.{idx}.{part}"] = (
                    f"encoder_layers.{offset + idx}.{part}"
                )

    needed = target_config.n_layers_encoder + (
        target_config.n_layers_decoder if target_config.arch == "ed" else 0
    )
    if needed > source_layers:
        raise ShapeMismatch(
            f"target needs {needed} pretrained layers, source has"
            f" {source_layers}"
        )

    return mapping


def transfer_pretrained(
    bert, target_config, seed=0
) -> Tuple[DiacritizationTransformer, dict]:
    """
    Initialise an eo or ed model from a pretrained mlm encoder.

    eo: embeddings, final norm and the first n_layers_encoder layers are
    copied, the classifier is fresh. ed: the encoder takes the lower
    source layers, the decoder self attention and feed forward blocks take
    the following ones; cross attention, the label embedding, decoder norm
    and classifier are fresh.

    Parameters
    ----------
    bert : DiacritizationTransformer
        pretrained source model
    target_config : ModelConfig
        eo or ed architecture to build
    seed : int
        seed for the freshly initialised arrays

    Returns
    -------
    DiacritizationTransformer
        initialised target model
    dict
        report with `copied` (target name -> source name) and `fresh`

    Raises
    ------
    ShapeMismatch
        Raised when dimensions, heads or vocabulary differ, or the source
        has too few layers
    """
    source_config = bert.config

    for key in ("d_model", "n_heads", "ffn_dim", "vocab_size", "max_len"):
        if getattr(source_config, key) != getattr(target_config, key):
            raise ShapeMismatch(
                f"{key} differs between pretrained"
                f" ({getattr(source_config, key)}) and target"
                f" ({getattr(target_config, key)}) models"
            )

    if target_config.arch not in ("eo", "ed"):
        raise ShapeMismatch(
            f"can not transfer into a {target_config.arch} model"
        )

    mapping = _transfer_mapping(
        target_config, source_layers=source_config.n_layers_encoder
    )

    target = init_parameters(target_config, seed=seed)
    source_params = dict(bert.named_parameters())
    report = {"copied": {}, "fresh": []}

    with torch.no_grad():
        for name, param in target.named_parameters():
            source_name = None

            for prefix, source_prefix in mapping.items():
                if name.startswith(prefix + "."):
                    source_name = source_prefix + name[len(prefix) :]
                    break

            if source_name is None:
                report["fresh"].append(name)
                continue

            param.copy_(source_params[source_name])
            report["copied"][name] = source_name

    log.info(
        "Transferred %s pretrained arrays into %s model, %s freshly"
        " initialised: %s",
        len(report["copied"]),
        target_config.arch,
        len(report["fresh"]),
        ", ".join(report["fresh"]),
    )

    return target, report


def predict(model, token_ids, mask, forced_labels=None) -> torch.Tensor:
    """
    Inference for either diacritizer head: argmax per position for eo,
    greedy decoding for ed

    Returns
    -------
    torch.Tensor
        [B x L] class ids
    """
    if model.config.arch == "ed":
        return greedy_decode(
            model, token_ids, mask, forced_labels=forced_labels
        )

    with torch.no_grad():
        prediction = eo_forward(model, token_ids, mask).logits.argmax(dim=-1)

    if forced_labels is not None:
        prediction = torch.where(
            forced_labels != IGNORE, forced_labels, prediction
        )

    return prediction


def count_parameters(model) -> int:
    return sum(x.numel() for x in model.parameters())
