"""Adam optimization of the generator against the keyframe/style objective."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .core import KeyframePair, TrainingConfig, UnpairedSet
from .generator import Generator, GeneratorConfig, build_generator
from .perceptual import (
    FeatureExtractor,
    LossBreakdown,
    content_loss,
    default_extractor,
    gram,
    total_objective,
)

__all__ = [
    "FORMAT_VERSION",
    "METRICS_HEADER",
    "TrainingDivergence",
    "CheckpointError",
    "ExtractorMismatchWarning",
    "TrainState",
    "TrainingData",
    "Checkpoint",
    "init_state",
    "draw_terms",
    "step_loss",
    "training_step",
    "epoch_length",
    "accumulate_epoch",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "serialize_checkpoint",
    "checkpoint_digest",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"KSTYCKPT"
METRICS_HEADER = "iter,l1,style,content,total,lambda,grad_norm"
METRICS_TAIL = 20


class TrainingDivergence(RuntimeError):
    """The loss or its gradient became non-finite."""


class CheckpointError(IOError):
    pass


class ExtractorMismatchWarning(UserWarning):
    pass


@dataclass
class TrainingData:
    """Tensors and fixed style targets prepared once per training run."""

    keyframes: Sequence[KeyframePair]
    unpaired: UnpairedSet
    sources: list[torch.Tensor]
    styles: list[torch.Tensor]
    frames: list[torch.Tensor]
    style_grams: list[list[torch.Tensor]]
    frame_features: list[list[torch.Tensor]] | None = None

    @classmethod
    def prepare(cls, keyframes, unpaired, extractor: FeatureExtractor, dtype=torch.float32,
                with_content: bool = False):
        if not keyframes:
            raise ValueError("at least one keyframe is required")
        unpaired.check_compatible(keyframes)
        ext_dtype = next(extractor.parameters()).dtype
        sources = [k.source.to_tensor(dtype) for k in keyframes]
        styles = [k.style.to_tensor(dtype) for k in keyframes]
        frames = [f.to_tensor(dtype) for f in unpaired.frames]
        with torch.no_grad():
            grams = [[gram(m[0]) for m in extractor(y.to(ext_dtype))] for y in styles]
            feats = [[m[0] for m in extractor(z.to(ext_dtype))] for z in frames] if with_content else None
        return cls(keyframes, unpaired, sources, styles, frames, grams, feats)

    def matches(self, keyframes, unpaired) -> bool:
        return self.keyframes is keyframes and self.unpaired is unpaired


@dataclass
class TrainState:
    generator: Generator
    optimizer: torch.optim.Optimizer
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    extractor: FeatureExtractor | None = None
    data: TrainingData | None = None
    draw_log: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def params(self):
        return self.generator.state_dict()

    def moments(self) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        out = {}
        for name, p in self.generator.named_parameters():
            st = self.optimizer.state.get(p, {})
            if st:
                out[name] = (st["exp_avg"], st["exp_avg_sq"])
        return out


def init_state(generator_config: GeneratorConfig, config: TrainingConfig,
               extractor: FeatureExtractor | None = None, dtype=torch.float32) -> TrainState:
    gen = build_generator(generator_config, seed=config.seed).to(dtype)
    gen.train()
    opt = torch.optim.Adam(gen.parameters(), lr=config.learning_rate,
                           betas=(config.beta1, config.beta2))
    return TrainState(gen, opt, 0, np.random.default_rng(config.seed), extractor)


def draw_terms(state: TrainState, n_keyframes: int, n_unpaired: int,
               schedule: str = "random") -> tuple[int, int, int]:
    """Keyframe index (round-robin) plus an (unpaired frame, style) pair."""
    t = state.iteration
    i = t % n_keyframes
    if schedule == "sweep":
        p = t % (n_unpaired * n_keyframes)
        j, k = divmod(p, n_keyframes)
    else:
        j = int(state.rng.integers(n_unpaired))
        k = int(state.rng.integers(n_keyframes))
    return i, j, k


def step_loss(generator: Generator, extractor: FeatureExtractor, data: TrainingData,
              i: int, j: int, k: int, lam: float, content_weight: float = 0.0,
              l1_weight: float = 1.0):
    """Differentiable single-draw objective and its breakdown."""
    ext_dtype = next(extractor.parameters()).dtype
    out_x = generator(data.sources[i])
    reg_terms, content_terms = [], None
    if lam > 0 or content_weight > 0:
        out_z = generator(data.frames[j])
        feats = [m[0] for m in extractor(out_z.to(ext_dtype))]
        if lam > 0:
            reg_terms.append((feats, data.style_grams[k]))
        if content_weight > 0:
            if data.frame_features is None:
                raise ValueError("training data was prepared without content features")
            content_terms = [(feats, data.frame_features[j])]
    return total_objective([(out_x, data.styles[i])], reg_terms, lam,
                           content_weight=content_weight, content_terms=content_terms,
                           l1_weight=l1_weight)


def _grad_norm(params) -> float:
    sq = sum(float((p.grad.detach().double() ** 2).sum()) for p in params if p.grad is not None)
    return sq ** 0.5


def training_step(state: TrainState, keyframes: Sequence[KeyframePair], unpaired: UnpairedSet,
                  config: TrainingConfig, extractor: FeatureExtractor | None = None):
    """One Adam update on a single stochastic draw; returns (state, LossBreakdown)."""
    if not keyframes:
        raise ValueError("at least one keyframe is required")
    extractor = extractor or state.extractor or default_extractor()
    state.extractor = extractor
    if state.data is None or not state.data.matches(keyframes, unpaired):
        dtype = next(state.generator.parameters()).dtype
        state.data = TrainingData.prepare(keyframes, unpaired, extractor, dtype,
                                          with_content=config.content_loss_weight > 0)
    lam = config.resolve_lambda(len(unpaired), len(extractor.layer_names))
    i, j, k = draw_terms(state, len(keyframes), len(unpaired), config.pair_schedule)
    state.draw_log.append((i, j, k))

    gen = state.generator
    gen.train()
    state.optimizer.zero_grad(set_to_none=True)
    total, bd = step_loss(gen, extractor, state.data, i, j, k, lam,
                          config.content_loss_weight, config.l1_weight)
    if not torch.isfinite(total):
        raise TrainingDivergence(
            f"non-finite loss at iteration {state.iteration + 1}: l1={bd.l1_term} "
            f"style={bd.style_term} content={bd.content_term} lambda={lam}"
        )
    total.backward()
    params = [p for p in gen.parameters() if p.grad is not None]
    grad_norm = _grad_norm(params)
    if not np.isfinite(grad_norm):
        raise TrainingDivergence(f"non-finite gradient norm at iteration {state.iteration + 1}")
    if config.grad_clip > 0 and grad_norm > config.grad_clip:
        torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
        log.info("iteration %d: gradient norm %.4g clipped to %g",
                 state.iteration + 1, grad_norm, config.grad_clip)
        bd.extras["clipped"] = True
    state.optimizer.step()
    state.iteration += 1
    bd.extras.update(iteration=state.iteration, grad_norm=grad_norm, draw=(i, j, k))
    return state, bd


def epoch_length(n_keyframes: int, n_unpaired: int) -> int:
    """Steps for the sweep schedule to visit every (frame, style) pair once."""
    return n_keyframes * n_unpaired


def accumulate_epoch(records: Sequence[LossBreakdown], n_keyframes: int) -> float:
    """Fold one sweep epoch of per-step records into the full double-sum objective.

    Each keyframe's L1 term is seen ``len(records) / n_keyframes`` times, each
    (frame, style) pair exactly once.
    """
    visits = len(records) / n_keyframes
    l1 = sum(r.l1_weight * r.l1_term for r in records) / visits
    style = sum(r.lam * r.style_term for r in records)
    content = sum(r.content_weight * r.content_term for r in records)
    return l1 + style + content


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    generator_config: GeneratorConfig
    training_config: TrainingConfig
    iteration: int
    extractor_hash: str
    metrics_tail: list[dict] = field(default_factory=list)
    # not serialized
    history: list[LossBreakdown] = field(default_factory=list, repr=False, compare=False)
    draw_log: list[tuple[int, int, int]] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def from_state(cls, state: TrainState, training_config, history=()):
        params = {k: v.detach().to(torch.float32).cpu().numpy().copy()
                  for k, v in state.generator.state_dict().items()}
        ext = state.extractor
        return cls(params, state.generator.config, training_config, state.iteration,
                   ext.digest() if ext is not None else "",
                   [_record(r) for r in list(history)[-METRICS_TAIL:]],
                   list(history), list(state.draw_log))

    def generator(self) -> Generator:
        gen = Generator(self.generator_config)
        gen.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.params.items()})
        return gen.eval()


def _record(bd: LossBreakdown) -> dict:
    return {
        "iter": int(bd.extras.get("iteration", 0)),
        "l1": bd.l1_term,
        "style": bd.style_term,
        "content": bd.content_term,
        "total": bd.total,
        "lambda": bd.lam,
        "grad_norm": float(bd.extras.get("grad_norm", 0.0)),
    }


def _metrics_line(bd: LossBreakdown) -> str:
    r = _record(bd)
    return ",".join([str(r["iter"])] + [repr(float(r[k])) for k in METRICS_HEADER.split(",")[1:]])


def train(keyframes: Sequence[KeyframePair], unpaired: UnpairedSet,
          training_config: TrainingConfig, generator_config: GeneratorConfig | None = None,
          out_dir=None, extractor: FeatureExtractor | None = None,
          callback: Callable[[TrainState, LossBreakdown], None] | None = None,
          dtype=torch.float32) -> Checkpoint:
    """Run ``training_config.iterations`` steps and return the final checkpoint.

    With ``out_dir`` set, appends to ``metrics.csv`` every ``log_every`` steps,
    writes ``ckpt_<iter>.kst`` every ``checkpoint_every`` steps (0 disables)
    and ``checkpoint.kst`` at the end.
    """
    generator_config = generator_config or GeneratorConfig()
    extractor = extractor or default_extractor()
    state = init_state(generator_config, training_config, extractor, dtype)
    history: list[LossBreakdown] = []
    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        mpath = out_dir / "metrics.csv"
        metrics = mpath.open("a")
        if mpath.stat().st_size == 0:
            metrics.write(METRICS_HEADER + "\n")
    try:
        for _ in range(training_config.iterations):
            state, bd = training_step(state, keyframes, unpaired, training_config, extractor)
            history.append(bd)
            if callback is not None:
                callback(state, bd)
            it = state.iteration
            if metrics is not None and (it % training_config.log_every == 0 or it == 1):
                metrics.write(_metrics_line(bd) + "\n")
                metrics.flush()
            every = training_config.checkpoint_every
            if out_dir is not None and every and it % every == 0 and it != training_config.iterations:
                save_checkpoint(Checkpoint.from_state(state, training_config, history),
                                out_dir / f"ckpt_{it:07d}.kst")
    finally:
        if metrics is not None:
            metrics.close()
    ckpt = Checkpoint.from_state(state, training_config, history)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "checkpoint.kst")
    return ckpt


def _config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "generator_config": _config_dict(ckpt.generator_config),
        "training_config": _config_dict(ckpt.training_config),
        "iteration": ckpt.iteration,
        "extractor_hash": ckpt.extractor_hash,
        "metrics_tail": ckpt.metrics_tail,
        "params": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for raw in blobs:
        buf.write(raw)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def checkpoint_digest(ckpt: Checkpoint) -> str:
    return hashlib.sha256(serialize_checkpoint(ckpt)).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(serialize_checkpoint(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path, extractor: FeatureExtractor | None = None) -> Checkpoint:
    """Read and verify a checkpoint file.

    The trailing SHA-256 is checked before anything is parsed. If ``extractor``
    is given and its digest differs from the recorded one, an
    ``ExtractorMismatchWarning`` is issued.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 12 + 32:
        raise CheckpointError(f"{path}: digest mismatch (file truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: digest mismatch (corrupt or truncated file)")
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    blob = memoryview(body)[start + hlen:]
    params = {}
    for e in header["params"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        params[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    ckpt = Checkpoint(
        params=params,
        generator_config=GeneratorConfig(**header["generator_config"]),
        training_config=TrainingConfig(**header["training_config"]),
        iteration=header["iteration"],
        extractor_hash=header["extractor_hash"],
        metrics_tail=header["metrics_tail"],
    )
    if extractor is not None and ckpt.extractor_hash and extractor.digest() != ckpt.extractor_hash:
        warnings.warn(
            f"checkpoint {path} was trained with extractor {ckpt.extractor_hash[:12]}, "
            f"current extractor is {extractor.digest()[:12]}",
            ExtractorMismatchWarning,
            stacklevel=2,
        )
    return ckpt


