"""``musefuse`` command line: dataset, train, generate, eval.

Exit codes: 0 success, 1 runtime/data error, 2 usage error.  Every command
writes one ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from musefuse import __version__
from musefuse.audio_io import load_media, read_wav, write_wav
from musefuse.checkpoint import load_checkpoint, save_checkpoint
from musefuse.config import DEFAULTS, load_config, resolve
from musefuse.datasets import DATASETS, BuildConfig, DirectorySource, SyntheticSource, build_dataset
from musefuse.errors import InvalidInput
from musefuse.fusion import SamplingConfig, detect_audio_tokens, generate
from musefuse.metrics import (
    BandClassifier, BandEmbedder, JointEmbedder, MetricReport, clap_score, fad, ib_rank,
    kl_metric, lsd, rank_by_cosine, text_metrics,
)
from musefuse.model import ModelConfig, MusicModel
from musefuse.projection import ConditioningEmbedding, decode_stub
from musefuse.training import (
    DEFAULT_LR, STAGE_EPOCHS, TrainConfig, examples_for_stage, train_stage, write_history_csv,
)

log = logging.getLogger("musefuse")

MODEL_KEYS = (
    "n_layers", "block_len", "d_model", "n_heads", "vocab_size", "n_audio_tokens", "max_seq_len",
    "seed", "scale", "music_seq_len", "music_feat_dim", "image_seq_len", "image_feat_dim",
    "video_seq_len", "video_feat_dim", "adapter_variant", "conv_kernel", "conv_stride", "target",
    "toy_cond_dim", "max_len",
)
TASK_METRICS = {
    "mu": ("bleu", "rouge_l"),
    "t2m": ("fad", "kl", "clap"),
    "edit": ("fad", "kl", "lsd"),
    "i2m": ("fad", "kl", "ib_rank"),
    "v2m": ("fad", "kl", "ib_rank"),
}
FORCE_AUDIO_BIAS = 1e4


def write_manifest(out_dir: Path, command: str, argv, config_path, cfg: dict, inputs, outputs, extra=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_path": str(config_path) if config_path else None,
        "seed": cfg.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
        "config": cfg,
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _flags(args, **names) -> dict:
    return {key: getattr(args, attr, None) for key, attr in names.items()}


# --- dataset ---------------------------------------------------------------


def cmd_dataset(args, argv) -> int:
    out = Path(args.out)
    cfg = resolve(load_config(args.config), _flags(args, seed="seed"))
    build = BuildConfig(seconds=args.clip_seconds, n_audio_tokens=cfg["n_audio_tokens"])
    source = DirectorySource(args.source_dir, build) if args.source_dir else SyntheticSource(build)
    kinds = DATASETS if args.kind == "all" else (args.kind,)
    counts = {}
    for kind in kinds:
        for subtype, n in build_dataset(kind, out, args.count, cfg["seed"], source, build, args.templates).items():
            counts[subtype] = counts.get(subtype, 0) + n
    for subtype, n in counts.items():
        print(f"{subtype}: {n}")
    outputs = [out / f"{k}.jsonl" for k in kinds]
    write_manifest(out, "dataset", argv, args.config, cfg, [args.source_dir or "synthetic"], outputs,
                   {"counts": counts, "kind": args.kind})
    return 0


# --- train -----------------------------------------------------------------


def cmd_train(args, argv) -> int:
    data = Path(args.data)
    if not data.is_dir() or not any(data.glob("*.jsonl")):
        raise InvalidInput(f"training data {data} not found (expected a dataset directory)")
    cfg = resolve(load_config(args.config), _flags(args, seed="seed", lr="lr", max_steps="steps",
                                                   batch_size="batch_size"))
    stage = args.stage
    if args.resume:
        model, meta = load_checkpoint(args.resume)
        if meta.get("stage") != stage - 1:
            raise InvalidInput(
                f"stage {stage} needs a stage-{stage - 1} checkpoint, {args.resume} is stage {meta.get('stage')}"
            )
        cfg.update({k: meta["config"][k] for k in MODEL_KEYS if k in meta.get("config", {})})
    else:
        torch.manual_seed(cfg["seed"])
        model = MusicModel(ModelConfig.from_flat(cfg))
    epochs = args.epochs or cfg[f"epochs_stage{stage}"]
    tcfg = TrainConfig(
        stage=stage, epochs=epochs, lr=cfg["lr"], batch_size=cfg["batch_size"],
        lora_rank=cfg["lora_rank"], lora_alpha=cfg["lora_alpha"], penalty_weight=cfg["penalty_weight"],
        grad_clip=cfg["grad_clip"], max_steps=cfg["max_steps"] or None, seed=cfg["seed"],
    )
    defaults = {"epochs": dict(STAGE_EPOCHS), "lr": DEFAULT_LR}
    print(f"stage defaults: epochs {STAGE_EPOCHS[1]}/{STAGE_EPOCHS[2]}/{STAGE_EPOCHS[3]}, lr {DEFAULT_LR:g}")
    print(f"training stage {stage}: epochs {tcfg.epochs}, lr {tcfg.lr:g}, batch {tcfg.batch_size}")
    examples = examples_for_stage(stage, data, model)
    result = train_stage(stage, examples, model, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, csv_path = out / "checkpoint.npz", out / "loss.csv"
    save_checkpoint(model, ckpt, stage, cfg)
    write_history_csv(csv_path, result.history)
    first, last = result.history[0]["total"], result.history[-1]["total"]
    print(f"steps {result.steps}: loss {first:.4f} -> {last:.4f}")
    write_manifest(out, "train", argv, args.config, cfg, [data] + ([args.resume] if args.resume else []),
                   [ckpt, csv_path],
                   {"stage": stage, "stage_defaults": defaults, "epochs": tcfg.epochs, "lr": tcfg.lr,
                    "steps": result.steps, "trainable": result.trainable})
    return 0


# --- generate --------------------------------------------------------------


def load_embeddings(model: MusicModel, media_paths) -> dict:
    out = {}
    for path in media_paths or ():
        raw = load_media(path)
        if raw.kind in out:
            raise InvalidInput(f"more than one {raw.kind} input given")
        out[raw.kind] = model.encode_media(raw)
    return out


def run_generation(model: MusicModel, prompt: str, embeddings: dict, sampling: SamplingConfig, seed: int,
                   force_audio: bool = False, duration_s: float = 4.0, sample_rate: int = 16000):
    """Generate a response; returns ``(text, n_audio_tokens, wave or None)``."""
    tok = model.tokenizer
    prompt_ids = tok.encode(prompt + "\n", bos=True)
    bias = None
    if force_audio:
        bias = torch.zeros(model.cfg.fusion.total_vocab)
        bias[model.cfg.fusion.audio_ids[0]] = FORCE_AUDIO_BIAS
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        feats = model.adapt(embeddings)
        new = generate(model.lm, prompt_ids, feats, sampling, gen, bias)
        seq = prompt_ids + new
        positions = detect_audio_tokens(seq, model.cfg.fusion)
        text_ids = [t for t in new if t < model.cfg.fusion.vocab_size]
        text = tok.decode(text_ids)
        if positions is None:
            return text, 0, None
        _, hidden = model.lm(torch.tensor(seq[-model.cfg.fusion.max_seq_len:]), feats)
        offset = max(len(seq) - model.cfg.fusion.max_seq_len, 0)
        cond = model.project_audio(hidden.final, [p - offset for p in positions])
    wave = decode_stub(ConditioningEmbedding(model.cfg.target, cond), duration_s, seed, sample_rate)
    return text, len(positions), wave


def cmd_generate(args, argv) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    cfg = {**meta.get("config", {})}
    cfg.update({k: v for k, v in _flags(args, seed="seed", temperature="temperature", top_p="top_p",
                                         max_len="max_len").items() if v is not None})
    cfg = resolve({k: v for k, v in cfg.items() if k in DEFAULTS})
    model.eval()
    embeddings = load_embeddings(model, args.media)
    sampling = SamplingConfig(cfg["temperature"], cfg["top_p"], cfg["max_len"])
    text, n_audio, wave = run_generation(model, args.prompt, embeddings, sampling, cfg["seed"],
                                         args.force_audio, cfg["duration_s"], cfg["sample_rate"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "response.txt"]
    outputs[0].write_text(text, encoding="utf-8")
    print(text)
    if wave is not None:
        log.info("audio tokens: %d", n_audio)
        outputs.append(write_wav(out / "output.wav", wave, cfg["sample_rate"]))
        print(f"wrote {outputs[-1]}")
    else:
        log.info("audio tokens: 0 (text only)")
    write_manifest(out, "generate", argv, None, cfg, [args.checkpoint, *(args.media or [])], outputs,
                   {"prompt": args.prompt, "audio_tokens": n_audio, "force_audio": bool(args.force_audio)})
    return 0


# --- eval ------------------------------------------------------------------


def read_eval_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"evaluation manifest {path} not found")
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not rows:
        raise InvalidInput(f"evaluation manifest {path} is empty")
    return rows


def _wave(root: Path, rel) -> np.ndarray:
    wave, _ = read_wav(root / rel)
    return wave


def evaluate(task: str, rows: list, root: Path, seed: int = 0, model=None, cfg=None) -> MetricReport:
    """Compute the task's metric columns over manifest rows (paths relative to ``root``)."""
    notes = {"lsd_stft": "1024-point, hop 256, periodic Hann", "kl_direction": "KL(ref || gen)"}
    if task == "mu":
        cands = []
        for row in rows:
            if "candidate" in row:
                cands.append(row["candidate"])
            elif model is not None:
                sampling = SamplingConfig(cfg["temperature"], cfg["top_p"], cfg["max_len"])
                emb = load_embeddings(model, [root / row["media"]] if row.get("media") else [])
                cands.append(run_generation(model, row["prompt"], emb, sampling, seed)[0])
            else:
                raise InvalidInput("mu row has no candidate and no checkpoint was given")
        return MetricReport(task, text_metrics(cands, [r["reference"] for r in rows]), len(rows), notes)

    embedder = BandEmbedder(seed=seed)
    classifier = BandClassifier(seed=seed)
    refs = [_wave(root, r["reference"]) for r in rows]
    gens = [_wave(root, r["candidate"]) for r in rows]
    metrics = {
        "fad": fad(embedder.embed_set(refs, "reference"), embedder.embed_set(gens, "candidate")),
        "kl": kl_metric(refs, gens, classifier),
    }
    joint = JointEmbedder(seed=seed)
    if task == "t2m":
        metrics["clap"] = float(np.mean([
            clap_score(joint.embed_audio(g), joint.embed_text(r["text"])) for g, r in zip(gens, rows)
        ]))
    elif task == "edit":
        notes["lsd_truncated_pairs"] = sum(len(a) != len(b) for a, b in zip(refs, gens))
        metrics["lsd"] = float(np.mean([lsd(a, b) for a, b in zip(refs, gens)]))
    else:
        ranks = []
        names = None
        for row, gen, ref in zip(rows, gens, refs):
            systems = {"candidate": gen}
            systems.update({k: _wave(root, v) for k, v in sorted(row.get("alternatives", {}).items())})
            if len(systems) < 2:
                systems["reference"] = ref
            if names is None:
                names = list(systems)
            elif list(systems) != names:
                raise InvalidInput("every i2m/v2m row must list the same alternatives")
            visual = joint.embed_visual(load_media(root / row["visual"]).data)
            ranks.append(rank_by_cosine(visual, [joint.embed_audio(w) for w in systems.values()]))
        scores = ib_rank(np.array(ranks))
        metrics["ib_rank"] = float(scores[0])
        notes["ib_rank_by_system"] = dict(zip(names, map(float, scores)))
    return MetricReport(task, metrics, len(rows), notes)


def cmd_eval(args, argv) -> int:
    cfg = resolve(load_config(args.config), _flags(args, seed="seed"))
    model = None
    if args.checkpoint:
        model, meta = load_checkpoint(args.checkpoint)
        cfg = resolve({k: v for k, v in meta.get("config", {}).items() if k in DEFAULTS},
                      _flags(args, seed="seed"))
    rows = read_eval_manifest(args.manifest)
    report = evaluate(args.task, rows, Path(args.manifest).parent, cfg["seed"], model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    for name in TASK_METRICS[args.task]:
        print(f"{name}: {report.metrics[name]:.6g}")
    write_manifest(out, "eval", argv, args.config, cfg, [args.manifest], [report_path], {"task": args.task})
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="musefuse", description="Multi-modal music understanding and generation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dataset", help="build instruction datasets")
    d.add_argument("--kind", required=True, choices=[*DATASETS, "all"])
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", action="store_true", help="use seeded synthetic media")
    src.add_argument("--source-dir",
                     help="directory of *.wav clips, *.png/*.npy images, 4-D *.npy videos and stem subdirectories")
    d.add_argument("--count", type=int, default=20)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.add_argument("--clip-seconds", type=float, default=10.0)
    d.add_argument("--templates", help="directory overriding the built-in template pools")

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint from the previous stage")
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)

    g = sub.add_parser("generate", help="generate text, and music when audio tokens fire")
    g.add_argument("--prompt", required=True)
    g.add_argument("--media", action="append", help="music .wav, image .png/.npy or video .npy")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--temperature", type=float)
    g.add_argument("--top-p", type=float)
    g.add_argument("--max-len", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--force-audio", action="store_true", help="test harness: bias sampling toward [AUD_0]")

    e = sub.add_parser("eval", help="score candidates against references")
    e.add_argument("--task", required=True, choices=tuple(TASK_METRICS))
    e.add_argument("--manifest", required=True, help="JSONL of candidate/reference pairs")
    e.add_argument("--checkpoint")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    return p


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "generate": cmd_generate, "eval": cmd_eval}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        return COMMANDS[args.command](args, argv)
    except (InvalidInput, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
