"""
Losses, the AdamW optimizer and the three training procedures: MLM
pretraining, encoder-only fine-tuning and encoder-decoder fine-tuning
"""

from dataclasses import asdict, dataclass
import math
import os
from timeit import default_timer as timer
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch.optim import Optimizer

from .arabic_text import DiacriticClass, LabeledSequence
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import IGNORE, CharVocab, make_batches, split_validation
from .errors import AllIgnored, NonFiniteGradient, ShapeMismatch
from .evaluation import Counts, EvalMode, count_errors, pair_sequences
from .inference import forced_space_labels
from .io import append_jsonl
from .log import get_logger
from .model import (
    ModelConfig,
    count_parameters,
    ed_forward,
    eo_forward,
    init_parameters,
    mlm_forward,
    predict,
    shift_labels,
    transfer_pretrained,
)

log = get_logger("tashkeel")

INITS = ("scratch", "pretrained", "warm_start")
METRICS_LOG = "metrics.jsonl"
TRAIN_STATE = "train_state.pt"


@dataclass
class TrainConfig:
    lr: float = 3e-5
    weight_decay: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 5
    mask_prob: float = 0.15
    seed: int = 0
    eval_fraction: float = 0.02
    checkpoint_epoch: int = 5

    def __post_init__(self):
        errors = []

        if self.lr <= 0 or self.weight_decay < 0:
            errors.append("lr must be positive and weight_decay not negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            errors.append("batch_size and max_epochs must be at least 1")
        if self.patience < 1:
            errors.append("patience must be at least 1")
        if not 0 <= self.mask_prob <= 1:
            errors.append("mask_prob must be in [0, 1]")
        if not 0 < self.eval_fraction <= 0.5:
            errors.append("eval_fraction must be in (0, 0.5]")

        if errors:
            raise ValueError("; ".join(errors))


class EarlyStopping:
    """
    Tracks the best (lowest) validation metric and the number of epochs
    since it was reached
    """

    def __init__(
        self, patience, best_metric=math.inf, best_epoch=0, epochs_since_best=0
    ):
        self.patience = patience
        self.best_metric = best_metric
        self.best_epoch = best_epoch
        self.epochs_since_best = epochs_since_best

    def update(self, metric, epoch) -> bool:
        """Record an epoch's metric, returns True if it is a new best"""
        if metric < self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True

        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience

    def state(self) -> dict:
        return {
            "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "epochs_since_best": self.epochs_since_best,
        }


def mlm_mask(
    token_ids, attention_mask, mask_prob, generator, vocab_size
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Corrupt a batch for masked character prediction: each real position
    is selected with probability mask_prob; selected positions become
    MASK (80%), a random character (10%) or stay unchanged (10%)

    Parameters
    ----------
    token_ids : torch.Tensor
        [B x L] input ids
    attention_mask : torch.Tensor
        [B x L] 1 for real positions
    mask_prob : float
        selection probability
    generator : torch.Generator
        source of randomness
    vocab_size : int
        size of the input vocabulary

    Returns
    -------
    torch.Tensor
        corrupted ids
    torch.Tensor
        target ids, IGNORE where not selected
    torch.Tensor
        bool loss mask of the selected positions
    """
    real = attention_mask.bool()
    probabilities = torch.full(token_ids.shape, float(mask_prob))
    selected = torch.bernoulli(probabilities, generator=generator).bool()
    selected &= real

    draw = torch.rand(token_ids.shape, generator=generator)
    random_ids = torch.randint(
        len(CharVocab.SPECIALS),
        max(vocab_size, len(CharVocab.SPECIALS) + 1),
        token_ids.shape,
        generator=generator,
    )

    corrupted = token_ids.clone()
    corrupted[selected & (draw < 0.8)] = CharVocab.MASK
    replace = selected & (draw >= 0.8) & (draw < 0.9)
    corrupted[replace] = random_ids[replace]

    targets = token_ids.masked_fill(~selected, IGNORE)

    return corrupted, targets, selected


def cross_entropy(
    logits, targets, ignore_mask=None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean negative log likelihood over counted positions

    Parameters
    ----------
    logits : torch.Tensor
        [... x C] unnormalised scores
    targets : torch.Tensor
        [...] class ids, IGNORE positions are not counted
    ignore_mask : torch.Tensor | None
        [...] bool, additionally excludes positions where True

    Returns
    -------
    torch.Tensor
        scalar loss, differentiable with respect to logits
    torch.Tensor
        gradient of the loss with respect to logits:
        (softmax - one_hot) / count at counted positions, zero elsewhere

    Raises
    ------
    AllIgnored
        Raised when no position is counted
    """
    counted = targets != IGNORE
    if ignore_mask is not None:
        counted = counted & ~ignore_mask.bool()

    count = int(counted.sum())
    if not count:
        raise AllIgnored("every position of the batch is ignored")

    safe_targets = targets.masked_fill(~counted, 0)
    log_probs = F.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(-1, safe_targets.unsqueeze(-1)).squeeze(-1)
    loss = (nll * counted).sum() / count

    with torch.no_grad():
        grad = torch.softmax(logits, dim=-1) - F.one_hot(
            safe_targets, logits.shape[-1]
        ).to(logits.dtype)
        grad = grad * counted.unsqueeze(-1) / count

    return loss, grad


def adamw_step(
    params,
    grads,
    state,
    lr=3e-5,
    betas=(0.9, 0.999),
    eps=1e-8,
    weight_decay=1e-2,
) -> dict:
    """
    One AdamW update applied in place. Weight decay is decoupled: the
    weights are scaled by (1 - lr * weight_decay) directly rather than
    through the gradient.

    Parameters
    ----------
    params : dict
        name -> parameter tensor, updated in place
    grads : dict
        name -> gradient tensor, None entries are skipped
    state : dict
        {"step": int, "exp_avg": {name: tensor}, "exp_avg_sq": {...}},
        empty moments are created as zeros
    lr, betas, eps, weight_decay
        optimizer hyperparameters

    Returns
    -------
    dict
        the updated state

    Raises
    ------
    NonFiniteGradient
        Raised before any parameter is touched when a gradient holds NaN
        or inf
    """
    for name, grad in grads.items():
        if grad is not None and not torch.isfinite(grad).all():
            log.error("Non-finite gradient found in %s, aborting step", name)
            raise NonFiniteGradient(name)

    beta1, beta2 = betas
    state["step"] = state.get("step", 0) + 1
    step = state["step"]
    exp_avgs = state.setdefault("exp_avg", {})
    exp_avg_sqs = state.setdefault("exp_avg_sq", {})

    bias_correction1 = 1 - beta1**step
    bias_correction2 = 1 - beta2**step

    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue

            exp_avg = exp_avgs.setdefault(name, torch.zeros_like(param))
            exp_avg_sq = exp_avg_sqs.setdefault(name, torch.zeros_like(param))

            if weight_decay:
                param.mul_(1 - lr * weight_decay)

            exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
            exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

            denom = (exp_avg_sq / bias_correction2).sqrt_().add_(eps)
            param.addcdiv_(exp_avg / bias_correction1, denom, value=-lr)

    return state


class AdamW(Optimizer):
    "AdamW over named parameters, moments kept by parameter name"

    def __init__(
        self,
        named_params,
        lr=3e-5,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=1e-2,
    ):
        named_params = list(named_params)
        self.names = [name for name, _ in named_params]
        self.moments = {"step": 0, "exp_avg": {}, "exp_avg_sq": {}}
        super().__init__(
            [param for _, param in named_params],
            dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay),
        )

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        group = self.param_groups[0]
        params = dict(zip(self.names, group["params"]))

        adamw_step(
            params,
            {name: param.grad for name, param in params.items()},
            self.moments,
            lr=group["lr"],
            betas=group["betas"],
            eps=group["eps"],
            weight_decay=group["weight_decay"],
        )

        return loss


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_metric: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    seed: int = 0

    def save(self, path, optimizer) -> None:
        torch.save(
            {**asdict(self), "optimizer": optimizer.moments},
            os.path.join(path, TRAIN_STATE),
        )

    @classmethod
    def load(cls, path, optimizer):
        data = torch.load(os.path.join(path, TRAIN_STATE))
        optimizer.moments = data.pop("optimizer")

        return cls(**data)


def _epoch_seed(seed, epoch) -> int:
    # every epoch reseeds dropout, shuffling and masking so a resumed run
    # follows the uninterrupted one exactly
    return seed * 100_003 + epoch


def _checkpoint_dir(run_dir, name) -> str:
    return os.path.join(run_dir, "checkpoints", name)


def _resume(run_dir):
    """Load the last checkpoint, its training state and metric history"""
    last = _checkpoint_dir(run_dir, "last")
    model, vocab, manifest = load_checkpoint(last)

    log.info(
        "Resuming run in %s from epoch %s", run_dir, manifest["epoch"]
    )

    return model, vocab, manifest


def pretrain_mlm(
    train_config, corpus, model_config, vocab, run_dir, resume=False
) -> str:
    """
    Masked character pretraining over bare lines

    Parameters
    ----------
    train_config : TrainConfig
        optimisation settings, max_epochs is the number of epochs run
    corpus : list
        prepared pretraining lines (prepare_pretrain output)
    model_config : ModelConfig
        mlm architecture
    vocab : CharVocab
        input vocabulary
    run_dir : str
        run directory for metrics and checkpoints
    resume : bool
        continue from the last checkpoint in run_dir

    Returns
    -------
    str
        path of the best (lowest masked loss) checkpoint

    Raises
    ------
    AllIgnored
        Raised when an epoch masks no position, e.g. mask_prob of 0
    """
    seqs = [
        LabeledSequence(
            letters=x, labels=(DiacriticClass.NO_TASHKEEL,) * len(x)
        )
        for x in corpus
    ]

    if resume:
        model, _, manifest = _resume(run_dir)
        history = manifest["metric_history"]
    else:
        model = init_parameters(model_config, seed=train_config.seed)
        history = []

    optimizer = AdamW(
        model.named_parameters(),
        lr=train_config.lr,
        weight_decay=train_config.weight_decay,
    )
    state = TrainState(seed=train_config.seed)

    if resume:
        state = TrainState.load(_checkpoint_dir(run_dir, "last"), optimizer)

    log.info(
        "Pretraining %s parameter mlm model on %s lines for %s epochs",
        count_parameters(model),
        len(seqs),
        train_config.max_epochs,
    )

    for epoch in range(state.epoch + 1, train_config.max_epochs + 1):
        start = timer()
        seed = _epoch_seed(train_config.seed, epoch)
        torch.manual_seed(seed)
        generator = torch.Generator().manual_seed(seed)

        total_loss = 0.0
        total_count = 0

        for batch in make_batches(
            seqs,
            vocab,
            batch_size=train_config.batch_size,
            max_len=model.config.max_len,
            shuffle_seed=seed,
        ):
            corrupted, targets, loss_mask = mlm_mask(
                batch.token_ids,
                batch.attention_mask,
                train_config.mask_prob,
                generator,
                len(vocab),
            )
            if not loss_mask.any():
                continue

            logits = mlm_forward(
                model, corrupted, batch.attention_mask, train_mode=True
            ).logits
            loss, _ = cross_entropy(logits, targets)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            state.step += 1
            count = int(loss_mask.sum())
            total_loss += loss.item() * count
            total_count += count

        if not total_count:
            raise AllIgnored(
                f"no position was masked in epoch {epoch}, mask_prob is"
                f" {train_config.mask_prob}"
            )

        state.epoch = epoch
        record = {
            "epoch": epoch,
            "step": state.step,
            "train_loss": total_loss / total_count,
            "wall_time": round(timer() - start, 3),
        }
        history.append(record)
        append_jsonl(os.path.join(run_dir, METRICS_LOG), record)

        log.info(
            "Epoch %s/%s | masked loss %.4f | %ss",
            epoch,
            train_config.max_epochs,
            record["train_loss"],
            record["wall_time"],
        )

        if record["train_loss"] < state.best_metric:
            state.best_metric = record["train_loss"]
            state.best_epoch = epoch
            save_checkpoint(
                _checkpoint_dir(run_dir, "best"),
                model,
                vocab,
                step=state.step,
                epoch=epoch,
                metric_history=history,
            )

        last = _checkpoint_dir(run_dir, "last")
        save_checkpoint(
            last,
            model,
            vocab,
            step=state.step,
            epoch=epoch,
            metric_history=history,
        )
        state.save(last, optimizer)

    return _checkpoint_dir(run_dir, "best")


def _batch_loss(model, arch, batch, train_mode) -> torch.Tensor:
    if arch == "ed":
        prefix = shift_labels(batch.decoder_targets(), model.config.bos_id)
        logits = ed_forward(
            model,
            batch.token_ids,
            batch.attention_mask,
            prefix,
            train_mode=train_mode,
        ).logits
    else:
        logits = eo_forward(
            model, batch.token_ids, batch.attention_mask, train_mode=train_mode
        ).logits

    loss, _ = cross_entropy(logits, batch.label_ids)

    return loss


def validation_loss(model, arch, val_corpus, vocab, batch_size=32) -> float:
    """Teacher forced loss over letter positions of the validation set"""
    total = 0.0
    count = 0

    with torch.no_grad():
        for batch in make_batches(
            val_corpus,
            vocab,
            batch_size=batch_size,
            max_len=model.config.max_len,
        ):
            counted = int((batch.label_ids != IGNORE).sum())
            if not counted:
                continue

            loss = _batch_loss(model, arch, batch, train_mode=False)
            total += loss.item() * counted
            count += counted

    return total / count if count else math.nan


def evaluate_epoch(model, arch, val_corpus, vocab, batch_size=32) -> float:
    """
    Validation DER with case ending: argmax per position for eo, greedy
    decoding for ed

    Parameters
    ----------
    model : DiacritizationTransformer
        model to evaluate
    arch : str
        eo or ed
    val_corpus : list
        LabeledSequence references
    vocab : CharVocab
        input vocabulary
    batch_size : int
        inference batch size

    Returns
    -------
    float
        diacritic error rate as a fraction
    """
    counts = Counts()

    for batch_idx, batch in enumerate(
        make_batches(
            val_corpus,
            vocab,
            batch_size=batch_size,
            max_len=model.config.max_len,
        )
    ):
        predictions = predict(
            model,
            batch.token_ids,
            batch.attention_mask,
            forced_labels=forced_space_labels(batch.token_ids, vocab),
        )
        references = val_corpus[
            batch_idx * batch_size : (batch_idx + 1) * batch_size
        ]

        for row, reference in enumerate(references):
            hypothesis = LabeledSequence(
                letters=reference.letters,
                labels=predictions[row, : len(reference)].tolist(),
            )
            counts += count_errors(
                pair_sequences(reference, hypothesis), EvalMode.CE
            )

    return counts.der()


def _initial_model(arch, init, model_config, vocab, seed, init_checkpoint):
    """Build the model to fine-tune according to the init strategy"""
    if init == "scratch":
        return init_parameters(model_config, seed=seed), {}

    source, source_vocab, manifest = load_checkpoint(init_checkpoint)

    if source_vocab.vocab_hash() != vocab.vocab_hash():
        raise ShapeMismatch(
            f"vocabulary of {init_checkpoint} differs from the run vocabulary"
        )

    if init == "pretrained":
        model, report = transfer_pretrained(source, model_config, seed=seed)
        return model, {
            "transfer_report": report,
            "init_checkpoint": init_checkpoint,
        }

    if source.config.arch != arch:
        raise ShapeMismatch(
            f"can not warm start a {arch} model from a {source.config.arch}"
            " checkpoint"
        )

    return source, {
        "init_checkpoint": init_checkpoint,
        "init_params_sha256": manifest["params_sha256"],
    }


def finetune(
    arch,
    init,
    train_config,
    corpus,
    vocab,
    run_dir,
    model_config=None,
    init_checkpoint=None,
    resume=False,
    val_corpus=None,
) -> List[dict]:
    """
    Fine-tune an eo or ed diacritizer with early stopping on validation
    DER (case ending)

    Checkpoints written under run_dir/checkpoints: `epoch_<n>` after
    train_config.checkpoint_epoch epochs, `best` and `last` (with the
    training state for resuming).

    Parameters
    ----------
    arch : str
        eo or ed
    init : str
        scratch, pretrained (mlm checkpoint) or warm_start (same arch)
    train_config : TrainConfig
        optimisation settings
    corpus : list
        filtered LabeledSequence records, the validation split is carved
        from it by seed unless val_corpus is given
    vocab : CharVocab
        input vocabulary
    run_dir : str
        run directory for metrics and checkpoints
    model_config : ModelConfig | None
        architecture for scratch / pretrained inits, warm starts reuse the
        checkpoint's
    init_checkpoint : str | None
        checkpoint for pretrained / warm_start inits
    resume : bool
        continue from the last checkpoint in run_dir
    val_corpus : list | None
        held out LabeledSequence records used for validation, corpus is
        then trained on in full

    Returns
    -------
    list
        one metric record per epoch run (including resumed history)
    """
    if arch not in ("eo", "ed"):
        raise ValueError(f"can not fine-tune a {arch} model")
    if init not in INITS:
        raise ValueError(f"init must be one of {INITS}")

    split = None
    if val_corpus is None:
        train_corpus, val_corpus = split_validation(
            corpus, train_config.eval_fraction, train_config.seed
        )
        split = {
            "seed": train_config.seed,
            "eval_fraction": train_config.eval_fraction,
        }
    else:
        train_corpus = corpus

    if resume:
        model, _, manifest = _resume(run_dir)
        history = manifest["metric_history"]
        extra = {
            x: manifest[x]
            for x in ("init", "init_checkpoint", "validation_split")
            if x in manifest
        }
    else:
        model, extra = _initial_model(
            arch, init, model_config, vocab, train_config.seed, init_checkpoint
        )
        history = []
        extra["init"] = init
        if split:
            extra["validation_split"] = split

    optimizer = AdamW(
        model.named_parameters(),
        lr=train_config.lr,
        weight_decay=train_config.weight_decay,
    )
    state = TrainState(seed=train_config.seed)

    if resume:
        state = TrainState.load(_checkpoint_dir(run_dir, "last"), optimizer)

    stopper = EarlyStopping(
        train_config.patience,
        best_metric=state.best_metric,
        best_epoch=state.best_epoch,
        epochs_since_best=state.epochs_since_best,
    )

    log.info(
        "Fine-tuning %s parameter %s model (%s init) on %s sentences, %s"
        " held out for validation",
        count_parameters(model),
        arch,
        init,
        len(train_corpus),
        len(val_corpus),
    )

    for epoch in range(state.epoch + 1, train_config.max_epochs + 1):
        if stopper.should_stop:
            break

        start = timer()
        seed = _epoch_seed(train_config.seed, epoch)
        torch.manual_seed(seed)

        total_loss = 0.0
        total_count = 0

        for batch in make_batches(
            train_corpus,
            vocab,
            batch_size=train_config.batch_size,
            max_len=model.config.max_len,
            shuffle_seed=seed,
        ):
            counted = int((batch.label_ids != IGNORE).sum())
            if not counted:
                continue

            loss = _batch_loss(model, arch, batch, train_mode=True)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            state.step += 1
            total_loss += loss.item() * counted
            total_count += counted

        val_loss = validation_loss(
            model, arch, val_corpus, vocab, batch_size=train_config.batch_size
        )
        val_der = evaluate_epoch(
            model, arch, val_corpus, vocab, batch_size=train_config.batch_size
        )
        improved = stopper.update(val_der, epoch)

        state.epoch = epoch
        state.best_metric = stopper.best_metric
        state.best_epoch = stopper.best_epoch
        state.epochs_since_best = stopper.epochs_since_best

        record = {
            "epoch": epoch,
            "step": state.step,
            "train_loss": (
                total_loss / total_count if total_count else math.nan
            ),
            "val_loss": val_loss,
            "val_der": val_der,
            "wall_time": round(timer() - start, 3),
        }
        history.append(record)
        append_jsonl(os.path.join(run_dir, METRICS_LOG), record)

        log.info(
            "Epoch %s/%s | train loss %.4f | val loss %.4f | val DER %.3f%%"
            " | %ss",
            epoch,
            train_config.max_epochs,
            record["train_loss"],
            val_loss,
            val_der * 100,
            record["wall_time"],
        )

        checkpoint_args = dict(
            model=model,
            vocab=vocab,
            step=state.step,
            epoch=epoch,
            metric_history=history,
            extra=extra,
        )

        if epoch == train_config.checkpoint_epoch:
            save_checkpoint(
                _checkpoint_dir(run_dir, f"epoch_{epoch}"), **checkpoint_args
            )

        if improved:
            save_checkpoint(
                _checkpoint_dir(run_dir, "best"), **checkpoint_args
            )

        last = _checkpoint_dir(run_dir, "last")
        save_checkpoint(last, **checkpoint_args)
        state.save(last, optimizer)

    if stopper.should_stop:
        log.info(
            "Early stopping after epoch %s, best validation DER %.3f%% at"
            " epoch %s",
            state.epoch,
            stopper.best_metric * 100,
            stopper.best_epoch,
        )

    return history
