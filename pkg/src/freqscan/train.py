"""Training, evaluation and gradient checking.

Reverse-mode differentiation is torch autograd: the forward pass records the
graph and ``loss.backward()`` walks it once in reverse topological order.
Band decomposition is fixed preprocessing, so the graph starts at the patch
embedding.
"""

from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from freqscan.checkpoint import save_checkpoint
from freqscan.data import Dataset, load_image_folder, split_dataset, synthetic_bands
from freqscan.model import ModelConfig, PlainClassifier, batch_bands, build, preset
from freqscan.serialization import band_images_batch

METRICS_FIELDS = ["epoch", "step", "split", "loss", "accuracy", "lr"]
DIVERGENCE_LOSS = 1e4


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_fraction: float = 0.05
    label_smoothing: float = 0.1
    seed: int = 0
    dataset: str = "synthetic_bands"
    data_dir: str | None = None
    n_train: int = 1024
    n_test: int = 512
    num_classes: int = 4
    image_size: int = 64
    preset: str = "micro_plain"
    flip: bool = True
    # Ablation overrides; None keeps the preset value.
    K: int | None = None
    order: str | None = None
    order_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.base_lr <= 0 or self.weight_decay < 0:
            raise ValueError("base_lr must be positive and weight_decay non-negative")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.dataset not in ("synthetic_bands", "image_folder"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "image_folder" and not self.data_dir:
            raise ValueError("image_folder needs data_dir")
        if self.K is not None and not 1 <= self.K <= 6:
            raise ValueError("ablation K must be in [1, 6]")

    def model_config(self) -> ModelConfig:
        cfg = preset(self.preset, num_classes=self.num_classes, image_size=self.image_size)
        changes = {}
        if self.K is not None:
            changes["K"] = self.K
        if self.order is not None:
            changes.update(order=self.order, order_seed=self.order_seed)
        return cfg.with_serialization(**changes) if changes else cfg

    def to_dict(self) -> dict:
        return asdict(self)


def warmup_steps(total_steps: int, fraction: float) -> int:
    w = max(1, int(round(fraction * total_steps)))
    if w >= total_steps:
        raise ValueError(f"warmup ({w}) must be shorter than the run ({total_steps} steps)")
    return w


def lr_at(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear warmup to ``base_lr`` at ``step == warmup``, then cosine to 0 at ``total``."""
    if step <= warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total - warmup)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def loss_fn(logits: torch.Tensor, labels: torch.Tensor, smoothing: float = 0.0) -> torch.Tensor:
    return F.cross_entropy(logits, labels, label_smoothing=smoothing)


def backward(loss: torch.Tensor, model: torch.nn.Module) -> dict[str, torch.Tensor]:
    """Run reverse mode from ``loss`` and return a gradient for every parameter.

    Parameters off the forward path get an explicit zero gradient.
    """
    if not torch.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss.item()}")
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    return grads


@dataclass
class GradCheckReport:
    rows: list[dict] = field(default_factory=list)
    tolerance: float = 1e-2

    @property
    def errors(self) -> np.ndarray:
        return np.array([r["rel_err"] for r in self.rows])

    @property
    def max_error(self) -> float:
        return float(self.errors.max()) if self.rows else 0.0

    @property
    def median_error(self) -> float:
        return float(np.median(self.errors)) if self.rows else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["name", "index", "analytic", "numeric", "rel_err"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "index": ";".join(map(str, r["index"]))})
        return buf.getvalue()


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(model: torch.nn.Module, loss_of, eps: float = 1e-3, tolerance: float = 1e-2,
               n_params: int = 50, seed: int = 0, oracle_dtype=torch.float64) -> GradCheckReport:
    """Compare autograd gradients with central differences at sampled scalar parameters.

    ``loss_of(model)`` returns a scalar loss. Autograd runs on ``model`` as is;
    the finite-difference oracle runs on a copy cast to ``oracle_dtype`` so its
    own rounding stays well below the tolerance. Entries are sampled by first
    picking a parameter tensor uniformly, so every module is covered.
    """
    grads = backward(loss_of(model), model)
    oracle = copy.deepcopy(model).to(oracle_dtype)
    params = dict(oracle.named_parameters())
    names = list(params)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    with torch.no_grad():
        for _ in range(n_params):
            name = names[rng.integers(len(names))]
            p = params[name]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            orig = p[idx].item()
            p[idx] = orig + eps
            up = loss_of(oracle).item()
            p[idx] = orig - eps
            down = loss_of(oracle).item()
            p[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name][idx].item()
            report.rows.append({"name": name, "index": idx, "analytic": analytic,
                                "numeric": numeric, "rel_err": relative_error(analytic, numeric)})
    return report


def prepare(config: TrainConfig, model_config: ModelConfig):
    """Load the dataset and precompute resampled band stacks for both splits."""
    if config.dataset == "synthetic_bands":
        train = synthetic_bands(config.n_train, config.num_classes, config.image_size, config.seed, "train")
        test = synthetic_bands(config.n_test, config.num_classes, config.image_size, config.seed, "test")
    else:
        full = load_image_folder(config.data_dir, config.image_size)
        if full.num_classes != config.num_classes:
            raise ValueError(f"{config.data_dir} has {full.num_classes} classes, config says {config.num_classes}")
        train, test = split_dataset(full, 0.2, config.seed)
    ser = model_config.serialization
    return (train, band_images_batch(train.images, ser)), (test, band_images_batch(test.images, ser))


@torch.no_grad()
def evaluate(model: PlainClassifier, bands: list[np.ndarray], labels: np.ndarray,
             batch_size: int = 128, smoothing: float = 0.0) -> tuple[float, float]:
    """Mean loss and accuracy over precomputed band stacks."""
    model.eval()
    total_loss, correct, n = 0.0, 0, len(labels)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        y = torch.from_numpy(labels[sl])
        logits = model(batch_bands(bands, sl))
        total_loss += loss_fn(logits, y, smoothing).item() * len(y)
        correct += int((logits.argmax(1) == y).sum())
    return total_loss / n, correct / n


def _param_groups(model: torch.nn.Module, weight_decay: float):
    no_decay = ("pos_embed", "band_embed", "cls_token", "A_log")
    decay, rest = [], []
    for name, p in model.named_parameters():
        (rest if p.ndim < 2 or any(k in name for k in no_decay) else decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": rest, "weight_decay": 0.0}]


@dataclass
class TrainResult:
    model: PlainClassifier
    metrics: list[dict]
    test_accuracy: float
    checkpoint: Path | None = None
    metrics_path: Path | None = None


def format_metrics(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, METRICS_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"epoch": r["epoch"], "step": r["step"], "split": r["split"],
                    "loss": f"{r['loss']:.6f}", "accuracy": f"{r['accuracy']:.6f}", "lr": f"{r['lr']:.8g}"})
    return buf.getvalue()


def fit(model: PlainClassifier, bands: list[np.ndarray], labels: np.ndarray, config: TrainConfig,
        eval_data=None, log=None) -> list[dict]:
    """Optimise ``model`` in place with AdamW and the warmup-cosine schedule."""
    n = len(labels)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    warmup = warmup_steps(total, config.warmup_fraction)
    opt = torch.optim.AdamW(_param_groups(model, config.weight_decay), lr=config.base_lr)
    rng = np.random.default_rng([config.seed, 3])
    rows, step = [], 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        loss_sum, correct, lr = 0.0, 0, 0.0
        for start in range(0, n, config.batch_size):
            # Sorted indices keep the within-batch reduction order fixed.
            idx = np.sort(order[start:start + config.batch_size])
            batch = batch_bands(bands, idx)
            if config.flip:
                flip = torch.from_numpy(rng.random(len(idx)) < 0.5)
                batch = [torch.where(flip[:, None, None, None], b.flip(-1), b) for b in batch]
            y = torch.from_numpy(labels[idx])
            step += 1
            lr = lr_at(step, config.base_lr, warmup, total)
            for g in opt.param_groups:
                g["lr"] = lr
            logits = model(batch)
            loss = loss_fn(logits, y, config.label_smoothing)
            if not torch.isfinite(loss) or loss.item() > DIVERGENCE_LOSS:
                raise DivergenceError(f"loss {loss.item():.4g} at epoch {epoch}, step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.argmax(1) == y).sum())
        rows.append({"epoch": epoch, "step": step, "split": "train",
                     "loss": loss_sum / n, "accuracy": correct / n, "lr": lr})
        if eval_data is not None:
            te_loss, te_acc = evaluate(model, *eval_data, smoothing=config.label_smoothing)
            rows.append({"epoch": epoch, "step": step, "split": "test",
                         "loss": te_loss, "accuracy": te_acc, "lr": lr})
        if log is not None:
            log(rows[-1])
    return rows


def overfit_one_batch(model: PlainClassifier, bands: list[torch.Tensor], labels: torch.Tensor,
                      max_steps: int = 300, lr: float = 1e-3) -> int | None:
    """Full-batch AdamW at constant lr without regularisation.

    Returns the number of updates after which every sample is classified
    correctly, or None if that never happens within ``max_steps``.
    """
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    model.train()
    for step in range(max_steps + 1):
        logits = model(bands)
        if bool((logits.argmax(1) == labels).all()):
            return step
        if step == max_steps:
            return None
        loss = loss_fn(logits, labels)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return None


def train(config: TrainConfig, out_dir=None, log=None) -> TrainResult:
    """Train from scratch; writes ``metrics.csv`` and ``model.gmba`` when ``out_dir`` is set."""
    model_config = config.model_config()
    (train_ds, train_bands), (test_ds, test_bands) = prepare(config, model_config)
    model = build(model_config, seed=config.seed)
    rows = fit(model, train_bands, train_ds.labels, config, (test_bands, test_ds.labels), log=log)
    result = TrainResult(model, rows, rows[-1]["accuracy"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.metrics_path = out / "metrics.csv"
        result.metrics_path.write_text(format_metrics(rows))
        result.checkpoint = out / "model.gmba"
        save_checkpoint(result.checkpoint, model, {"train_config": config.to_dict(),
                                                   "test_accuracy": result.test_accuracy})
    return result


def dataset_for_eval(ds: Dataset, model_config: ModelConfig):
    return band_images_batch(ds.images, model_config.serialization), ds.labels
