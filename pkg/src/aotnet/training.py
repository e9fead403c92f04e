"""Multi-task training, early stopping, ablations and inference."""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig, configs_from_dict, configs_to_dict
from .corpus import Item, Vocabulary, build_vocabulary
from .model import AOTNet, EncodedItem, encode_item
from .tagger import foc_attention_mass

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite."""


def multitask_loss(loss_cla, loss_aln, loss_gen, lambdas=(1.0, 1.0, 1.0), step: Optional[int] = None):
    """Weighted sum of the salience, alignment and generation losses."""
    for name, value in (("L_cla", loss_cla), ("L_aln", loss_aln), ("L_gen", loss_gen)):
        if not math.isfinite(float(value.detach() if torch.is_tensor(value) else value)):
            where = f" at step {step}" if step is not None else ""
            raise TrainingDiverged(f"{name} is {float(value)}{where}")
    l1, l2, l3 = lambdas
    return l1 * loss_cla + l2 * loss_aln + l3 * loss_gen


def lr_at(step: int, d_model: int, warmup: int, base_lr: Optional[float] = None) -> float:
    """Inverse-square-root schedule with linear warmup, optionally capped at ``base_lr``."""
    if step < 1:
        raise ValueError("step counts from 1")
    rate = d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)
    return rate if base_lr is None else min(rate, base_lr)


def apply_ablation(model: AOTNet, train_cfg: TrainConfig, flags: Iterable[str]) -> tuple[AOTNet, TrainConfig]:
    """Switch components off. Idempotent; flags accumulate."""
    flags = tuple(set(train_cfg.ablations) | set(flags))
    train_cfg = dataclasses.replace(train_cfg, ablations=flags)
    if "no_sse" in flags:
        train_cfg = dataclasses.replace(train_cfg, lambda_cla=0.0)
    if "no_al" in flags:
        train_cfg = dataclasses.replace(train_cfg, lambda_aln=0.0)
    model.set_ablations(train_cfg.ablations)
    return model, train_cfg


def lambdas(train_cfg: TrainConfig) -> tuple[float, float, float]:
    return train_cfg.lambda_cla, train_cfg.lambda_aln, train_cfg.lambda_gen


def item_loss(model: AOTNet, item: EncodedItem, train_cfg: TrainConfig, step: Optional[int] = None):
    out = model(item, label_smoothing=train_cfg.label_smoothing)
    loss = multitask_loss(out.loss_cla, out.loss_aln, out.loss_gen, lambdas(train_cfg), step)
    return loss, out


@torch.no_grad()
def evaluate_loss(model: AOTNet, items: list[EncodedItem], train_cfg: TrainConfig) -> float:
    was_training = model.training
    model.eval()
    total = 0.0
    for item in items:
        loss, _ = item_loss(model, item, train_cfg)
        total += float(loss)
    model.train(was_training)
    return total / len(items)


@dataclass
class TrainResult:
    model: AOTNet
    vocab: Vocabulary
    checkpoint: Checkpoint
    history: list = field(default_factory=list)


def _snapshot(model: AOTNet, optimizer, model_cfg, train_cfg, vocab, step, history) -> Checkpoint:
    return Checkpoint(
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=configs_to_dict(model_cfg, train_cfg),
        vocab=vocab.to_list(),
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        step=step,
        history=list(history),
    )


def build_model(model_cfg: ModelConfig, train_cfg: TrainConfig, vocab_size: int,
                dtype=torch.float32) -> tuple[AOTNet, TrainConfig]:
    torch.manual_seed(train_cfg.seed)
    model = AOTNet(model_cfg, vocab_size).to(dtype)
    return apply_ablation(model, train_cfg, train_cfg.ablations)


def train(train_items: list[Item], valid_items: list[Item], model_cfg: ModelConfig,
          train_cfg: TrainConfig, vocab: Optional[Vocabulary] = None) -> TrainResult:
    """Teacher-forced multi-task training with validation early stopping.

    Returns the model restored to its best-validation state.
    """
    if not train_items or not valid_items:
        raise ValueError("training needs non-empty train and validation splits")
    if vocab is None:
        vocab = build_vocabulary(train_items, model_cfg.vocab_cap)
    model, train_cfg = build_model(model_cfg, train_cfg, len(vocab))
    train_enc = [encode_item(it, vocab, model_cfg.max_tags) for it in train_items]
    valid_enc = [encode_item(it, vocab, model_cfg.max_tags) for it in valid_items]
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr,
                                 betas=(train_cfg.beta1, train_cfg.beta2), eps=train_cfg.eps)
    rng = np.random.default_rng(train_cfg.seed)

    history: list[dict] = []
    best_loss, best = math.inf, None
    bad_evals, step = 0, 0
    done = False
    for epoch in range(1, train_cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(train_enc))
        epoch_loss, n_tok, n_ok = 0.0, 0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_enc[i] for i in order[start:start + train_cfg.batch_size]]
            step += 1
            optimizer.zero_grad()
            for item in batch:
                loss, out = item_loss(model, item, train_cfg, step)
                (loss / len(batch)).backward()
                epoch_loss += float(loss.detach())
                n_tok += out.n_tokens
                n_ok += out.n_correct
            if train_cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.clip_norm)
            for group in optimizer.param_groups:
                group["lr"] = lr_at(step, model_cfg.d_model, train_cfg.warmup, train_cfg.lr)
            optimizer.step()
            if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                done = True
                break
        valid_loss = evaluate_loss(model, valid_enc, train_cfg)
        record = {"epoch": epoch, "step": step, "train_loss": epoch_loss / len(train_enc),
                  "train_token_acc": n_ok / max(n_tok, 1), "valid_loss": valid_loss}
        history.append(record)
        log.info("epoch %d step %d train %.4f acc %.4f valid %.4f", epoch, step,
                 record["train_loss"], record["train_token_acc"], valid_loss)
        if valid_loss < best_loss:
            best_loss, bad_evals = valid_loss, 0
            best = _snapshot(model, optimizer, model_cfg, train_cfg, vocab, step, history)
        else:
            bad_evals += 1
            if bad_evals > train_cfg.patience:
                break
        if done:
            break

    best.history = history
    model.load_state_dict(best.model_state)
    model.eval()
    return TrainResult(model, vocab, best, history)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[AOTNet, Vocabulary, TrainConfig]:
    model_cfg, train_cfg = configs_from_dict(ckpt.config)
    vocab = Vocabulary(ckpt.vocab)
    dtype = next(iter(ckpt.model_state.values())).dtype
    model = AOTNet(model_cfg, len(vocab)).to(dtype)
    model, train_cfg = apply_ablation(model, train_cfg, train_cfg.ablations)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model, vocab, train_cfg


@dataclass
class Prediction:
    item_id: str
    tags: list[str]
    n_generated: int
    attention: list  # per step (L_mem,) tensors
    focus: list
    p_gen: list
    tag_index: list


@torch.no_grad()
def infer(item: Item, model: AOTNet, vocab: Vocabulary) -> Prediction:
    """Greedy decoding of a ranked tag list for one item."""
    model.eval()
    encoded = encode_item(dataclasses.replace(item, gold_tags=[]), vocab, model.config.max_tags)
    tags, result, _ = model.decode(encoded, vocab)
    return Prediction(item.item_id, [" ".join(t) for t in tags], len(result.tokens),
                      result.attention, result.focus, result.p_gen, result.tag_index)


@torch.no_grad()
def teacher_forced_focus(model: AOTNet, items: list[Item], vocab: Vocabulary) -> tuple[float, float]:
    """FOC/OOC attention mass with gold prefixes (one trace per item)."""
    model.eval()
    traces = []
    for item in items:
        out = model(encode_item(item, vocab, model.config.max_tags))
        traces.append((out.decoder.attention, out.decoder.focus))
    return foc_attention_mass(traces)


def decoded_focus(predictions: list[Prediction]) -> tuple[float, float]:
    traces = [(torch.stack(p.attention), torch.stack(p.focus)) for p in predictions if p.attention]
    return foc_attention_mass(traces)


@torch.no_grad()
def token_accuracy(model: AOTNet, items: list[Item], vocab: Vocabulary) -> float:
    model.eval()
    n_tok = n_ok = 0
    for item in items:
        out = model(encode_item(item, vocab, model.config.max_tags))
        n_tok += out.n_tokens
        n_ok += out.n_correct
    return n_ok / n_tok
