"""Loss assembly, Adam optimizer, and the deterministic training loop.

The total objective is a weighted sum of stage losses, a multi-scale
perceptual proxy, and the luminance-attention prediction error. Training is
bit-reproducible under a fixed seed: parameter init, batch sampling, crops
and flips all draw from seeded generators in a fixed order.
"""

import dataclasses
import json
import os

import numpy as np

from . import color
from . import stage1 as s1mod
from . import stage2 as s2mod
from . import tensor as T
from .checkpoint import save_checkpoint
from .tensor import NumericError, ShapeError, Tape, Tensor


@dataclasses.dataclass
class LossWeights:
    """Weights of the four loss terms (stage1, stage2, perceptual, luminance)."""

    l1: float = 0.5
    l2: float = 1.0
    l3: float = 0.2
    l4: float = 0.1


@dataclasses.dataclass
class TrainConfig:
    """Full experiment description; defaults follow the reference protocol."""

    crop: int = 256
    batch: int = 8
    lr: float = 4.0e-4
    iters: int = 100_000
    seed: int = 0
    c1: int = 16             # stage-1 feature width
    c: int = 64              # stage-2 feature width
    la_width: int = 8        # LA-Net base width
    leaky_slope: float = 0.2
    la_eps: float = 1e-3
    la_clamp: float = 10.0
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    milestones: tuple = (0.5, 0.75)   # lr decay points as fractions of iters
    lr_decay: float = 0.5
    checkpoint_every: int = 0         # 0 = final checkpoint only
    init: str = "train"
    disable_luminance_branch: bool = False
    disable_infrared_branch: bool = False
    disable_luminance_augment: bool = False
    disable_infrared_augment: bool = False
    disable_ffc_path: bool = False
    disable_multiscale_path: bool = False
    disable_stage1: bool = False
    disable_stage2: bool = False

    @classmethod
    def desk(cls, **overrides):
        """Small-scale preset used for fast local experiments and tests."""
        base = dict(crop=64, batch=4, iters=300, c1=8, c=16)
        base.update(overrides)
        return cls(**base)

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["milestones"] = tuple(d.get("milestones", (0.5, 0.75)))
        return cls(**d)


# toggle name (as used by the CLI and ablation harness) -> config field
ABLATION_TOGGLES = {
    "luminance-branch": "disable_luminance_branch",
    "infrared-branch": "disable_infrared_branch",
    "luminance-augment": "disable_luminance_augment",
    "infrared-augment": "disable_infrared_augment",
    "ffc-path": "disable_ffc_path",
    "multiscale-path": "disable_multiscale_path",
    "stage1": "disable_stage1",
    "stage2": "disable_stage2",
}


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(a, b):
    return T.mean_all(T.square(T.sub(a, b)))


_PYRAMID_KERNELS = {}


def _pyramid_spec(channels):
    """Separable binomial 5-tap blur as a stride-2 valid convolution."""
    if channels not in _PYRAMID_KERNELS:
        taps = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
        win = np.outer(taps, taps)
        kernel = np.zeros((channels, channels, 5, 5))
        for i in range(channels):
            kernel[i, i] = win
        _PYRAMID_KERNELS[channels] = T.ConvSpec(
            Tensor(kernel), T.zeros((channels,)), stride=2, padding=0)
    return _PYRAMID_KERNELS[channels]


def perceptual_proxy(a, b, levels=3):
    """Mean MSE across Gaussian-pyramid levels (1x, 1/2x, 1/4x).

    The blur kernel is normalized, so a constant offset between the inputs is
    preserved at every level and the proxy equals the squared offset exactly.
    Levels that would shrink below the blur support are skipped (tiny inputs).
    """
    if a.shape != b.shape:
        raise ShapeError(f"perceptual_proxy: shapes {a.shape} and {b.shape} differ")
    spec = _pyramid_spec(a.shape[1])
    terms = [mse_loss(a, b)]
    for _ in range(levels - 1):
        if min(a.shape[2], a.shape[3]) < 5:
            break
        a = T.conv2d(a, spec)
        b = T.conv2d(b, spec)
        terms.append(mse_loss(a, b))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))


def loss_total(i_s1, i_s2, gt, l_att_pred, l_att_target, weights=None):
    """Weighted total loss plus a per-term breakdown.

    Any of i_s1, i_s2, or the attention pair may be None (ablated); the
    perceptual term follows the final output (i_s2 when present, else i_s1).
    """
    w = weights or LossWeights()
    if i_s1 is None and i_s2 is None:
        raise ValueError("loss_total needs at least one stage output")
    for img in (i_s1, i_s2):
        if img is not None and img.shape != gt.shape:
            raise ShapeError(f"loss_total: output {img.shape} vs gt {gt.shape}")
    if (l_att_pred is None) != (l_att_target is None):
        raise ValueError("attention prediction and target must come together")
    if l_att_pred is not None and l_att_pred.shape != l_att_target.shape:
        raise ShapeError(f"loss_total: attention map {l_att_pred.shape} vs "
                         f"target {l_att_target.shape}")

    breakdown = {"loss_s1": 0.0, "loss_s2": 0.0, "loss_per": 0.0, "loss_lum": 0.0}
    parts = []
    if i_s1 is not None:
        l_s1 = mse_loss(i_s1, gt)
        breakdown["loss_s1"] = l_s1.item()
        parts.append(T.scale(l_s1, w.l1))
    if i_s2 is not None:
        l_s2 = mse_loss(i_s2, gt)
        breakdown["loss_s2"] = l_s2.item()
        parts.append(T.scale(l_s2, w.l2))
    final = i_s2 if i_s2 is not None else i_s1
    l_per = perceptual_proxy(final, gt)
    breakdown["loss_per"] = l_per.item()
    parts.append(T.scale(l_per, w.l3))
    if l_att_pred is not None:
        l_lum = mse_loss(l_att_pred, l_att_target)
        breakdown["loss_lum"] = l_lum.item()
        parts.append(T.scale(l_lum, w.l4))

    total = parts[0]
    for p in parts[1:]:
        total = T.add(total, p)
    breakdown["total"] = total.item()
    return total, breakdown


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named_params):
        return cls(m={n: np.zeros(p.shape) for n, p in named_params},
                   v={n: np.zeros(p.shape) for n, p in named_params})


def adam_step(named_params, grads, state, lr):
    """One bias-corrected Adam update; returns the new parameter tensors."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    updated = []
    for (name, p), g in zip(named_params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs param "
                             f"{p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite adjoint for {name!r} at step {t}")
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * (g * g)
        step_arr = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        updated.append((name, Tensor(p.data - step_arr, _owned=True)))
    return updated


def lr_at(cfg, iteration):
    lr = cfg.lr
    for frac in cfg.milestones:
        if iteration >= int(frac * cfg.iters):
            lr *= cfg.lr_decay
    return lr


# ---------------------------------------------------------------------------
# Networks and the loop
# ---------------------------------------------------------------------------

def build_networks(cfg):
    """Construct the stage networks described by ``cfg`` (None if disabled)."""
    if cfg.disable_stage1 and cfg.disable_stage2:
        raise ValueError("both stages disabled; nothing to train")
    net1 = None
    if not cfg.disable_stage1:
        net1 = s1mod.build_stage1(c1=cfg.c1, la_width=cfg.la_width,
                                  seed=cfg.seed, init=cfg.init,
                                  slope=cfg.leaky_slope)
    net2 = None
    if not cfg.disable_stage2:
        net2 = s2mod.build_stage2(c=cfg.c, seed=cfg.seed + 1, init=cfg.init,
                                  slope=cfg.leaky_slope,
                                  use_ffc=not cfg.disable_ffc_path,
                                  use_multiscale=not cfg.disable_multiscale_path)
    return net1, net2


def collect_parameters(net1, net2):
    params = []
    if net1 is not None:
        params.extend(T.named_parameters(net1, "stage1"))
    if net2 is not None:
        params.extend(T.named_parameters(net2, "stage2"))
    return params


def forward_pipeline(i_low, i_inf, cfg, net1, net2):
    """Run whichever stages are enabled; returns (i_s1, final, l_att_pred)."""
    i_s1 = None
    l_att = None
    if net1 is not None:
        out = s1mod.stage1_forward(
            i_low, i_inf, net1,
            use_luminance=not cfg.disable_luminance_branch,
            use_infrared=not cfg.disable_infrared_branch,
            use_luminance_augment=not cfg.disable_luminance_augment,
            use_infrared_augment=not cfg.disable_infrared_augment)
        i_s1 = out.i_s1
        l_att = out.l_att_pred
    stage2_in = i_s1 if i_s1 is not None else i_low
    final = s2mod.stage2_forward(stage2_in, net2) if net2 is not None else i_s1
    return i_s1, final, l_att


@dataclasses.dataclass
class TrainResult:
    stage1: object
    stage2: object
    log: list
    saw_nonzero_grad: dict
    config: TrainConfig


def _augmented_batch(pairs, cfg, rng):
    """Assemble one batch of random crops with horizontal-flip augmentation."""
    lows, gts, infs = [], [], []
    picks = rng.integers(0, len(pairs), size=cfg.batch)
    for i in picks:
        pair = pairs[int(i)]
        low, gt, inf = pair.low.data[0], pair.gt.data[0], pair.infrared.data[0]
        h, w = low.shape[1], low.shape[2]
        y0 = int(rng.integers(0, h - cfg.crop + 1))
        x0 = int(rng.integers(0, w - cfg.crop + 1))
        flip = bool(rng.integers(0, 2))
        sl = np.s_[:, y0:y0 + cfg.crop, x0:x0 + cfg.crop]
        low_c, gt_c, inf_c = low[sl], gt[sl], inf[sl]
        if flip:
            low_c = np.flip(low_c, axis=2)
            gt_c = np.flip(gt_c, axis=2)
            inf_c = np.flip(inf_c, axis=2)
        lows.append(low_c)
        gts.append(gt_c)
        infs.append(inf_c)
    return (np.ascontiguousarray(np.stack(lows)),
            np.ascontiguousarray(np.stack(gts)),
            np.ascontiguousarray(np.stack(infs)))


def train(cfg, pairs, out_dir=None, progress=None):
    """Train on registered image pairs; deterministic for a fixed seed.

    Writes ``log.jsonl`` and checkpoints under ``out_dir`` when given. The
    returned result carries the trained networks, the per-iteration loss log,
    and a per-parameter flag telling whether a nonzero adjoint was ever seen.
    """
    if not pairs:
        raise ValueError("training dataset is empty")
    min_side = min(min(p.low.shape[2], p.low.shape[3]) for p in pairs)
    if cfg.crop > min_side:
        raise ValueError(f"crop {cfg.crop} larger than smallest image side "
                         f"{min_side}")

    net1, net2 = build_networks(cfg)
    params = collect_parameters(net1, net2)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    saw_nonzero = {name: False for name, _ in params}
    log = []
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "log.jsonl"), "w")

    try:
        for it in range(cfg.iters):
            low_b, gt_b, inf_b = _augmented_batch(pairs, cfg, rng)
            i_low = Tensor(low_b, _owned=True)
            i_inf = Tensor(inf_b, _owned=True)
            gt = Tensor(gt_b, _owned=True)
            l_att_target = None
            if net1 is not None and not cfg.disable_luminance_branch:
                y_low = color.rgb_to_ycbcr(i_low).y
                y_gt = color.rgb_to_ycbcr(gt).y
                l_att_target = color.luminance_attention_target(
                    y_low, y_gt, eps=cfg.la_eps, clamp_max=cfg.la_clamp)

            with Tape() as tape:
                params = collect_parameters(net1, net2)
                for _, p in params:
                    tape.watch(p)
                i_s1, final, l_att = forward_pipeline(i_low, i_inf, cfg, net1, net2)
                total, bd = loss_total(i_s1, final if net2 is not None else None,
                                       gt, l_att, l_att_target, cfg.weights)
            grads = tape.backward(total)
            grad_list = [grads.get(p) for _, p in params]
            for (name, _), g in zip(params, grad_list):
                if not saw_nonzero[name] and np.any(g):
                    saw_nonzero[name] = True

            lr = lr_at(cfg, it)
            for name, new_p in adam_step(params, grad_list, state, lr):
                root = net1 if name.startswith("stage1") else net2
                T.set_parameter(root, name.split(".", 1)[1], new_p)

            record = dict(iteration=it, lr=lr, **bd)
            log.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if progress is not None:
                progress(record)
            if (out_dir is not None and cfg.checkpoint_every > 0
                    and (it + 1) % cfg.checkpoint_every == 0
                    and (it + 1) < cfg.iters):
                _emit_checkpoint(out_dir, cfg, it + 1, net1, net2,
                                 name=f"checkpoint_{it + 1:06d}.bin")
    finally:
        if log_file is not None:
            log_file.close()

    if out_dir is not None:
        _emit_checkpoint(out_dir, cfg, cfg.iters, net1, net2)
    return TrainResult(stage1=net1, stage2=net2, log=log,
                       saw_nonzero_grad=saw_nonzero, config=cfg)


def _emit_checkpoint(out_dir, cfg, iteration, net1, net2, name="checkpoint.bin"):
    manifest = {"config": cfg.as_dict(), "seed": cfg.seed, "iteration": iteration}
    save_checkpoint(os.path.join(out_dir, name), manifest,
                    collect_parameters(net1, net2))


def restore_networks(manifest, param_arrays):
    """Rebuild the stage networks recorded in a checkpoint manifest."""
    cfg = TrainConfig.from_dict(manifest["config"])
    net1, net2 = build_networks(cfg)
    expected = collect_parameters(net1, net2)
    if ([n for n, _ in expected] != list(param_arrays.keys())
            or any(p.shape != param_arrays[n].shape for n, p in expected)):
        raise ValueError("checkpoint parameter blocks do not match the "
                         "architecture described by its config")
    for name, arr in param_arrays.items():
        root = net1 if name.startswith("stage1") else net2
        T.set_parameter(root, name.split(".", 1)[1], Tensor(arr))
    return cfg, net1, net2
