"""Three-stage training: adapter alignment, output projection, LoRA fine-tuning.

Stage 1 trains the understanding adapters (with prefix queries and injection
gates) on captioning pairs; stage 2 trains the output projection to map
audio-token states onto target conditioning embeddings; stage 3 adds LoRA to
the LM attention query/value matrices and tunes it jointly with both.

For batches whose targets contain music the loss is

    CE + MSE(g(audio-token states), y_embeddings) + penalty_weight * penalty

where ``penalty`` is the mean probability mass the model puts on the wrong
token family (audio ids where the target is text, text ids where it is an
audio id).  Text batches use CE alone.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from musefuse.audio_io import load_media
from musefuse.errors import InvalidInput
from musefuse.model import MusicModel

log = logging.getLogger(__name__)

STAGE_EPOCHS = {1: 5, 2: 5, 3: 2}
DEFAULT_LR = 1e-4
IGNORE = -100

IMAGE_QUESTION = "Describe the image in detail."
VIDEO_QUESTION = "Describe the video in detail."


@dataclass
class TrainConfig:
    stage: int
    epochs: int | None = None
    lr: float = DEFAULT_LR
    batch_size: int = 8
    lora_rank: int = 8
    lora_alpha: float = 16.0
    penalty_weight: float = 1.0
    grad_clip: float = 1.0
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGE_EPOCHS:
            raise InvalidInput(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.epochs is None:
            self.epochs = STAGE_EPOCHS[self.stage]
        if self.epochs < 1 or self.lr <= 0 or self.lora_rank < 1 or self.batch_size < 1:
            raise InvalidInput("epochs, lr, lora_rank and batch_size must be positive")


@dataclass
class LossBreakdown:
    ce: torch.Tensor
    mse: torch.Tensor
    audio_penalty: torch.Tensor
    total: torch.Tensor

    def row(self) -> dict:
        return {
            "total": self.total.item(), "ce": self.ce.item(),
            "mse": self.mse.item(), "penalty": self.audio_penalty.item(),
        }


@dataclass
class Example:
    tokens: list
    prompt_len: int
    media: dict = field(default_factory=dict)  # modality -> encoder embedding (L, F)
    target_embedding: np.ndarray | None = None
    is_music: bool = False


@dataclass
class Batch:
    inputs: torch.Tensor
    targets: torch.Tensor
    embeddings: dict
    masks: dict
    is_music_target: bool
    audio_positions: torch.Tensor | None = None
    target_embeddings: torch.Tensor | None = None


# --- parameter selection -------------------------------------------------


def _is_adapter(name: str) -> bool:
    return name.startswith("adapters.") or name in ("lm.prefix_queries", "lm.gates")


def _in_stage(name: str, stage: int) -> bool:
    if stage == 1:
        return _is_adapter(name)
    if stage == 2:
        return name.startswith("output_projection.")
    if stage == 3:
        return "lora_" in name or _is_adapter(name) or name.startswith("output_projection.")
    raise InvalidInput(f"stage must be 1, 2 or 3, got {stage}")


def trainable_params_for_stage(stage: int, model: MusicModel) -> dict:
    return {n: p for n, p in model.named_parameters() if _in_stage(n, stage)}


def freeze_for_stage(stage: int, model: MusicModel) -> dict:
    trainable = trainable_params_for_stage(stage, model)
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable)
        p.grad = None
    return trainable


def apply_lora(model: MusicModel, cfg: TrainConfig) -> MusicModel:
    model.apply_lora(cfg.lora_rank, cfg.lora_alpha)
    return model


# --- loss ----------------------------------------------------------------


def loss_from_outputs(
    logits: torch.Tensor,
    final_hidden: torch.Tensor,
    batch: Batch,
    model: MusicModel,
    penalty_weight: float = 1.0,
) -> LossBreakdown:
    vocab = logits.shape[-1]
    ce = F.cross_entropy(logits.reshape(-1, vocab), batch.targets.reshape(-1), ignore_index=IGNORE)
    zero = ce.new_zeros(())
    if not batch.is_music_target:
        return LossBreakdown(ce, zero, zero, ce)
    if batch.target_embeddings is None or batch.audio_positions is None:
        raise InvalidInput("music batch needs target embeddings and audio-token positions")

    rows = torch.gather(
        final_hidden, 1,
        batch.audio_positions.unsqueeze(-1).expand(-1, -1, final_hidden.shape[-1]),
    )
    pred = model.output_projection(rows, model.cfg.target)
    target = batch.target_embeddings.to(pred.dtype)
    if pred.shape != target.shape:
        raise InvalidInput(f"target embedding shape {tuple(target.shape)} != {tuple(pred.shape)}")
    mse = torch.mean((pred - target) ** 2)

    base = model.cfg.fusion.vocab_size
    probs = torch.softmax(logits, dim=-1)
    audio_mass = probs[..., base:].sum(-1)
    text_mass = probs[..., :base].sum(-1)
    valid = batch.targets != IGNORE
    target_is_audio = batch.targets >= base
    wrong = torch.where(target_is_audio, text_mass, audio_mass)
    penalty = wrong[valid].mean()
    total = ce + mse + penalty_weight * penalty
    return LossBreakdown(ce, mse, penalty, total)


def compute_loss(batch: Batch, model: MusicModel, cfg: TrainConfig) -> LossBreakdown:
    logits, hidden = model(batch.inputs, batch.embeddings, batch.masks)
    return loss_from_outputs(logits, hidden.final, batch, model, cfg.penalty_weight)


# --- batching ------------------------------------------------------------


def collate(examples: list, model: MusicModel) -> Batch:
    if not examples:
        raise InvalidInput("cannot collate an empty batch")
    music = {ex.is_music for ex in examples}
    if len(music) != 1:
        raise InvalidInput("a batch must be all music targets or all text targets")
    is_music = music.pop()
    pad = model.cfg.fusion.eos_id
    T = max(len(ex.tokens) for ex in examples) - 1
    inputs = torch.full((len(examples), T), pad, dtype=torch.long)
    targets = torch.full((len(examples), T), IGNORE, dtype=torch.long)
    for b, ex in enumerate(examples):
        toks = torch.tensor(ex.tokens, dtype=torch.long)
        n = len(ex.tokens) - 1
        inputs[b, :n] = toks[:-1]
        targets[b, :n] = toks[1:]
        targets[b, : max(ex.prompt_len - 1, 0)] = IGNORE

    dtype = model.lm.tok_emb.weight.dtype
    embeddings, masks = {}, {}
    kinds = sorted({k for ex in examples for k in ex.media})
    for kind in kinds:
        shape = model.cfg.encoder.shape(kind)
        stack = np.zeros((len(examples), *shape), dtype=np.float32)
        present = torch.zeros(len(examples), dtype=torch.bool)
        for b, ex in enumerate(examples):
            if kind in ex.media:
                stack[b] = ex.media[kind]
                present[b] = True
        embeddings[kind] = torch.as_tensor(stack, dtype=dtype)
        masks[kind] = present

    positions = target_emb = None
    if is_music:
        audio = set(model.cfg.fusion.audio_ids)
        pos = []
        for ex in examples:
            p = [i for i, t in enumerate(ex.tokens[:-1]) if t in audio]
            if len(p) != model.cfg.fusion.n_audio_tokens:
                raise InvalidInput("music example must carry exactly one audio-token suffix")
            pos.append(p)
        positions = torch.tensor(pos, dtype=torch.long)
        if any(ex.target_embedding is None for ex in examples):
            raise InvalidInput("music example missing its target embedding")
        target_emb = torch.as_tensor(
            np.stack([ex.target_embedding for ex in examples]), dtype=dtype
        )
    return Batch(inputs, targets, embeddings, masks, is_music, positions, target_emb)


def iterate_batches(examples: list, batch_size: int, generator: torch.Generator):
    """Shuffle, then fill music and text buckets separately, emitting full batches in order."""
    order = torch.randperm(len(examples), generator=generator).tolist()
    buckets = {True: [], False: []}
    for i in order:
        ex = examples[i]
        buckets[ex.is_music].append(ex)
        if len(buckets[ex.is_music]) == batch_size:
            yield buckets[ex.is_music]
            buckets[ex.is_music] = []
    for key in (True, False):
        if buckets[key]:
            yield buckets[key]


# --- loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    history: list
    steps: int
    trainable: list


def train_stage(stage: int, examples: list, model: MusicModel, cfg: TrainConfig) -> TrainResult:
    if not examples:
        raise InvalidInput("training dataset is empty")
    if stage != cfg.stage:
        raise InvalidInput(f"config is for stage {cfg.stage}, asked to train stage {stage}")
    if stage == 3:
        apply_lora(model, cfg)
    trainable = freeze_for_stage(stage, model)
    params = list(trainable.values())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        for group in iterate_batches(examples, cfg.batch_size, gen):
            batch = collate(group, model)
            opt.zero_grad(set_to_none=True)
            loss = compute_loss(batch, model, cfg)
            if loss.total.requires_grad:  # e.g. text batches reach no stage-2 parameter
                loss.total.backward()
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()
            step += 1
            history.append({"step": step, **loss.row()})
            if step % 50 == 0:
                log.info("stage %d epoch %d step %d loss %.4f", stage, epoch, step, loss.row()["total"])
            if cfg.max_steps and step >= cfg.max_steps:
                break
        if cfg.max_steps and step >= cfg.max_steps:
            break
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return TrainResult(history, step, sorted(trainable))


def write_history_csv(path, history: list):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "total", "ce", "mse", "penalty"])
        writer.writeheader()
        for row in history:
            writer.writerow(row)


# --- targets and examples -----------------------------------------------


class TargetEmbedder:
    """Seeded random projection of a caption's token counts, L2-normalized."""

    def __init__(self, shape: tuple, vocab: int, seed: int = 0):
        self.shape = tuple(shape)
        rng = np.random.default_rng([seed, 31337])
        self.weight = rng.standard_normal((vocab, int(np.prod(self.shape))))

    def __call__(self, ids) -> np.ndarray:
        counts = np.bincount(np.asarray(ids, dtype=np.int64), minlength=self.weight.shape[0])
        v = counts @ self.weight
        v = v / (np.linalg.norm(v) + 1e-12)
        return v.reshape(self.shape).astype(np.float32)


def target_embedder_for(model: MusicModel) -> TargetEmbedder:
    shape = model.cfg.projection.shape(model.cfg.target)
    return TargetEmbedder(shape, model.cfg.fusion.total_vocab, model.cfg.fusion.seed)


_AUDIO_MARKERS = re.compile(r"\s*\[AUD_\d+\]")


def strip_audio_markers(text: str) -> str:
    return _AUDIO_MARKERS.sub("", text).strip()


def make_example(model, prompt: str, response: str, media=None, target_text=None) -> Example:
    tok = model.tokenizer
    prompt_ids = tok.encode(prompt + "\n", bos=True)
    response_ids = tok.encode(response, eos=True)
    tokens = prompt_ids + response_ids
    audio = set(model.cfg.fusion.audio_ids)
    is_music = any(t in audio for t in response_ids)
    target = None
    if is_music:
        text = target_text if target_text is not None else strip_audio_markers(response)
        target = target_embedder_for(model)(tok.encode(text))
    return Example(tokens, len(prompt_ids), dict(media or {}), target, is_music)


def read_jsonl(path) -> list:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class _MediaCache:
    def __init__(self, model, root):
        self.model = model
        self.root = Path(root)
        self.cache = {}

    def __call__(self, rel):
        if rel not in self.cache:
            raw = load_media(self.root / rel)
            self.cache[rel] = (raw.kind, self.model.encode_media(raw))
        return self.cache[rel]


def audio_suffix(k: int) -> str:
    return "".join(f"[AUD_{i}]" for i in range(k))


def examples_for_stage(stage: int, data_dir, model: MusicModel) -> list:
    """Build training examples for ``stage`` from a dataset directory."""
    data_dir = Path(data_dir)
    media = _MediaCache(model, data_dir)
    suffix = audio_suffix(model.cfg.fusion.n_audio_tokens)
    out = []
    kinds = ("mucaps", "muimage", "muvideo", "muedit")
    records = {k: read_jsonl(data_dir / f"{k}.jsonl") for k in kinds}
    metas = {k: read_jsonl(data_dir / f"{k}.meta.jsonl") for k in kinds}

    if stage == 1:
        for rec in records["mucaps"]:
            kind, emb = media(rec["input_media"])
            out.append(make_example(model, rec["instruction"], rec["response"], {kind: emb}))
        for name, question in (("muimage", IMAGE_QUESTION), ("muvideo", VIDEO_QUESTION)):
            for rec, meta in zip(records[name], metas[name]):
                kind, emb = media(rec["input_media"])
                out.append(make_example(model, question, meta["media_caption"], {kind: emb}))
    elif stage == 2:
        for rec in records["mucaps"]:
            caption = rec["response"]
            out.append(make_example(model, caption, suffix, target_text=caption))
    else:
        for name in kinds:
            meta_rows = metas[name] or [{}] * len(records[name])
            for rec, meta in zip(records[name], meta_rows):
                m = {}
                if rec.get("input_media"):
                    kind, emb = media(rec["input_media"])
                    m[kind] = emb
                out.append(
                    make_example(model, rec["instruction"], rec["response"], m, meta.get("target_caption"))
                )
    return out
