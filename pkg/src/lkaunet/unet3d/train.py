"""Adam and a small deterministic training loop for toy volumes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import tensor_core as tc
from ..autodiff import Parameter
from ..eval_metrics import dice_score
from .losses import bce_dice_loss, class_weights, one_hot, soft_dice_loss
from .model import UNet3D, probabilities, unet_forward


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.value = p.value - update.astype(p.value.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def supervision_weights(n_heads: int) -> np.ndarray:
    """``2^-k`` per head, normalised to sum to one."""
    w = 0.5 ** np.arange(n_heads)
    return w / w.sum()


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour label downsampling by an integer factor."""
    return labels[..., ::factor, ::factor, ::factor]


def make_sphere_volume(size: int = 32, radius: float | None = None, noise: float = 0.1, seed: int = 0,
                       dtype="float32"):
    """One synthetic volume: a bright ball in noise. Returns ``(x[1,1,n,n,n], labels[n,n,n])``."""
    radius = size / 4 if radius is None else radius
    c = (size - 1) / 2
    g = np.indices((size,) * 3, dtype=np.float64)
    dist = np.sqrt(((g - c) ** 2).sum(axis=0))
    labels = (dist <= radius).astype(np.uint8)
    eps, _ = tc.normal(tc.Rng(seed), 0.0, noise, labels.shape)
    x = (labels.astype(np.float64) + eps)
    x = (x - x.mean()) / x.std()
    return x.astype(dtype)[None, None], labels


@dataclass
class TrainOptions:
    steps: int = 300
    lr: float = 3e-4
    seed: int = 0
    loss: str = "dice"  # "dice" (class-weighted soft Dice) or "bce_dice"
    deep_supervision_weights: list | None = None


@dataclass
class StepRecord:
    step: int
    loss: float
    dice: float


@dataclass
class History:
    records: list[StepRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def dice(self) -> list[float]:
        return [r.dice for r in self.records]

    def to_csv(self) -> str:
        lines = ["step,loss,dice"]
        lines += [f"{r.step},{r.loss!r},{r.dice!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def _targets(labels: np.ndarray, net: UNet3D, dtype):
    cfg = net.config
    out = []
    for s in cfg.head_scales:
        lab = downsample_labels(labels, 2**s)
        if cfg.output_nonlinearity == "softmax":
            out.append((lab, one_hot(lab, cfg.out_classes, dtype)))
        else:
            # sigmoid heads: one channel per foreground label 1..O
            oh = one_hot(lab, cfg.out_classes + 1, dtype)[:, 1:]
            out.append((lab, oh))
    return out


def hard_dice(net: UNet3D, logits0: np.ndarray, labels: np.ndarray) -> float:
    cfg = net.config
    if cfg.output_nonlinearity == "softmax":
        pred = logits0[0].argmax(axis=0)
        classes = range(1, cfg.out_classes)
        return float(np.mean([dice_score(pred == c, labels == c) for c in classes]))
    scores = [dice_score(logits0[0, c] > 0, labels == c + 1) for c in range(cfg.out_classes)]
    return float(np.mean(scores))


def train_toy(net: UNet3D, dataset, opts: TrainOptions | None = None, **kw) -> History:
    """Adam on batch-1 samples; one sample per step in a seeded epoch order."""
    opts = opts or TrainOptions(**kw)
    if not dataset:
        raise ValueError("dataset is empty")
    cfg = net.config
    dtype = tc.as_dtype(cfg.dtype)
    params = net.parameters()
    opt = Adam(params, lr=opts.lr)
    lam = np.asarray(opts.deep_supervision_weights or supervision_weights(len(cfg.head_scales)), dtype=float)
    if lam.size != len(cfg.head_scales):
        raise ValueError(f"{lam.size} supervision weights for {len(cfg.head_scales)} heads")
    lam = lam / lam.sum()
    prepared = [(np.asarray(x, dtype=dtype), np.asarray(lab), _targets(np.asarray(lab), net, dtype))
                for x, lab in dataset]
    rng = tc.Rng(opts.seed)
    order: list[int] = []
    history = History()
    for step in range(opts.steps):
        if not order:
            perm, rng = tc.permutation(rng, len(prepared))
            order = list(perm)
        x, labels, targets = prepared[order.pop(0)]

        def objective(xv):
            heads = unet_forward(net, xv)
            total = None
            for k, (logits, (lab, tgt)) in enumerate(zip(heads, targets)):
                if opts.loss == "dice":
                    term = soft_dice_loss(probabilities(cfg, logits), tgt,
                                          class_weights(lab, cfg.out_classes)
                                          if cfg.output_nonlinearity == "softmax" else None)
                elif opts.loss == "bce_dice":
                    term = bce_dice_loss(logits, tgt)
                else:
                    raise ValueError(f"unknown loss {opts.loss!r}")
                term = term * float(lam[k])
                total = term if total is None else total + term
            return total, heads[0]

        opt.zero_grad()
        (loss, logits0), tape = ad.forward_traced(objective, [x])
        loss = float(loss)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at step {step}")
        ad.backward(tape, [np.ones((), dtype=dtype), np.zeros_like(logits0)])
        opt.step()
        history.records.append(StepRecord(step, loss, hard_dice(net, logits0, labels)))
    return history
