"""Motion refiner: coarse block motion -> dense flow and motion tokens.

Each motion-grid cell sees the 3x3 neighbourhood of displacements around
it (zero padded at the border), passes it through two tanh layers and
emits a ``block_h x block_w x 2`` flow patch. Motion tokens come from the
mean of the second-layer features over cells, mapped to ``n_tokens x d_s``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .codec import MotionField, block_match
from .errors import InvalidInputError, NumericError, TrainingDivergenceError
from .synthflow import DenseFlow, MotionSpec, render_clip

PARAM_NAMES = ("trunk1.W", "trunk1.b", "trunk2.W", "trunk2.b",
               "flow.W", "flow.b", "token.W", "token.b")
FLOW_PATH = PARAM_NAMES[:6]
DIVERGENCE_LOSS = 1e6
GRADCHECK_FLOOR = 1e-8


@dataclass(frozen=True)
class RefinerConfig:
    block_h: int = 4
    block_w: int = 4
    hidden: int = 32
    n_tokens: int = 16
    d_s: int = 32
    input_scale: float = 0.25

    def shapes(self):
        h, out = self.hidden, self.block_h * self.block_w * 2
        return {
            "trunk1.W": (18, h), "trunk1.b": (h,),
            "trunk2.W": (h, h), "trunk2.b": (h,),
            "flow.W": (h, out), "flow.b": (out,),
            "token.W": (h, self.n_tokens * self.d_s), "token.b": (self.n_tokens * self.d_s,),
        }


@dataclass
class RefinerParams:
    config: RefinerConfig
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        for name in PARAM_NAMES:
            arr = np.asarray(self.tensors.get(name, np.zeros(shapes[name])), dtype=np.float64)
            if arr.shape != shapes[name]:
                raise InvalidInputError(f"{name}: expected shape {shapes[name]}, got {arr.shape}")
            self.tensors[name] = arr

    def __getitem__(self, name):
        return self.tensors[name]

    @classmethod
    def zeros(cls, config=None):
        return cls(config or RefinerConfig())

    @classmethod
    def init(cls, config=None, seed=0):
        config = config or RefinerConfig()
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in config.shapes().items():
            if name.endswith(".W"):
                tensors[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
            else:
                tensors[name] = np.zeros(shape)
        return cls(config, tensors)

    def copy(self):
        return RefinerParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self):
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def manifest(self):
        return {"kind": "refiner", "config": self.config.__dict__, "names": list(PARAM_NAMES)}

    @classmethod
    def from_named(cls, tensors, manifest):
        return cls(RefinerConfig(**manifest["config"]), {k: np.asarray(v, np.float64)
                                                         for k, v in tensors.items()})


def _grids(mv):
    """Stack motion input(s) into a float (B, gh, gw, 2) array."""
    if isinstance(mv, MotionField):
        return mv.grid[None].astype(np.float64)
    if isinstance(mv, (list, tuple)):
        return np.stack([m.grid if isinstance(m, MotionField) else m for m in mv]).astype(np.float64)
    g = np.asarray(mv, dtype=np.float64)
    return g[None] if g.ndim == 3 else g


def neighbourhoods(grids):
    """(B, gh, gw, 2) -> (B, gh, gw, 18): 3x3 window of (dy, dx) pairs per cell."""
    B, gh, gw, _ = grids.shape
    padded = np.pad(grids, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = [padded[:, oy:oy + gh, ox:ox + gw] for oy in range(3) for ox in range(3)]
    return np.concatenate(cols, axis=-1)


def _check_grid(params, grids):
    if grids.ndim != 4 or grids.shape[-1] != 2:
        raise InvalidInputError(f"motion grids must be (B, gh, gw, 2), got {grids.shape}")


def _trunk(params, grids):
    X = neighbourhoods(grids).reshape(-1, 18) * params.config.input_scale
    h1 = np.tanh(X @ params["trunk1.W"] + params["trunk1.b"])
    if not np.isfinite(h1).all():
        raise NumericError("non-finite activations in layer trunk1", where="trunk1")
    h2 = np.tanh(h1 @ params["trunk2.W"] + params["trunk2.b"])
    if not np.isfinite(h2).all():
        raise NumericError("non-finite activations in layer trunk2", where="trunk2")
    return X, h1, h2


def _patches_to_flow(P, B, gh, gw, bh, bw):
    return (P.reshape(B, gh, gw, bh, bw, 2)
             .transpose(0, 1, 3, 2, 4, 5)
             .reshape(B, gh * bh, gw * bw, 2))


def _flow_to_patches(F, gh, gw, bh, bw):
    B = F.shape[0]
    return (F.reshape(B, gh, bh, gw, bw, 2)
             .transpose(0, 1, 3, 2, 4, 5)
             .reshape(B * gh * gw, bh * bw * 2))


def _forward(params, grids):
    _check_grid(params, grids)
    c = params.config
    B, gh, gw, _ = grids.shape
    X, h1, h2 = _trunk(params, grids)
    P = h2 @ params["flow.W"] + params["flow.b"]
    if not np.isfinite(P).all():
        raise NumericError("non-finite activations in layer flow", where="flow")
    return (X, h1, h2), _patches_to_flow(P, B, gh, gw, c.block_h, c.block_w)


def refine_flow(params, mv):
    """Dense flow for one motion field (a batch in, a batch out)."""
    grids = _grids(mv)
    _, flow = _forward(params, grids)
    if isinstance(mv, MotionField):
        return DenseFlow(flow[0])
    return [DenseFlow(f) for f in flow]


def embed_motion(params, mv):
    """``(n_tokens, d_s)`` motion tokens for one motion field."""
    grids = _grids(mv)
    if grids.shape[0] != 1:
        raise InvalidInputError("embed_motion takes a single motion field")
    _, _, h2 = _trunk(params, grids)
    c = params.config
    tokens = h2.mean(axis=0) @ params["token.W"] + params["token.b"]
    return tokens.reshape(c.n_tokens, c.d_s)


def embed_motion_batch(params, grids):
    """Tokens for a stack of motion grids: ``(B, n_tokens, d_s)``."""
    grids = _grids(grids)
    B, gh, gw, _ = grids.shape
    _, _, h2 = _trunk(params, grids)
    c = params.config
    pooled = h2.reshape(B, gh * gw, -1).mean(axis=1)
    return (pooled @ params["token.W"] + params["token.b"]).reshape(B, c.n_tokens, c.d_s)


def l2_loss(pred, target):
    p = pred.grid if isinstance(pred, DenseFlow) else np.asarray(pred, np.float64)
    t = target.grid if isinstance(target, DenseFlow) else np.asarray(target, np.float64)
    if p.shape != t.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def _targets(target):
    if isinstance(target, DenseFlow):
        return target.grid[None]
    if isinstance(target, (list, tuple)):
        return np.stack([t.grid if isinstance(t, DenseFlow) else t for t in target])
    t = np.asarray(target, np.float64)
    return t[None] if t.ndim == 3 else t


def loss_and_grad(params, mv, target):
    """Return ``(loss, grads)``; grads cover every tensor (token head is zero)."""
    grids = _grids(mv)
    targets = _targets(target)
    c = params.config
    B, gh, gw, _ = grids.shape
    (X, h1, h2), flow = _forward(params, grids)
    if targets.shape != flow.shape:
        raise InvalidInputError(f"target shape {targets.shape} != prediction shape {flow.shape}")
    diff = flow - targets
    loss = float(np.mean(diff ** 2))
    dP = _flow_to_patches(2.0 * diff / diff.size, gh, gw, c.block_h, c.block_w)
    grads = {
        "flow.W": h2.T @ dP,
        "flow.b": dP.sum(axis=0),
    }
    da2 = (dP @ params["flow.W"].T) * (1.0 - h2 ** 2)
    grads["trunk2.W"] = h1.T @ da2
    grads["trunk2.b"] = da2.sum(axis=0)
    da1 = (da2 @ params["trunk2.W"].T) * (1.0 - h1 ** 2)
    grads["trunk1.W"] = X.T @ da1
    grads["trunk1.b"] = da1.sum(axis=0)
    grads["token.W"] = np.zeros_like(params["token.W"])
    grads["token.b"] = np.zeros_like(params["token.b"])
    for name in FLOW_PATH:
        if not np.isfinite(grads[name]).all():
            raise NumericError(f"non-finite gradient in {name}", where=name)
    return loss, grads


def backward(params, mv, target):
    return loss_and_grad(params, mv, target)[1]


def upsample_baseline(mv):
    """Nearest-neighbour block->pixel upsampling, negated into flow convention.

    A displacement points from the current block to its match in the
    previous frame, so the content moved by the opposite amount.
    """
    g = mv.grid.astype(np.float64)
    up = np.repeat(np.repeat(g, mv.block_h, axis=0), mv.block_w, axis=1)
    return DenseFlow(-up)


@dataclass
class TrainResult:
    params: RefinerParams
    losses: list

    def trace_lines(self):
        return [json.dumps({"step": i, "loss": l}) for i, l in enumerate(self.losses)]


def pretrain(params, dataset, steps=2000, learning_rate=1e-2, seed=0, batch_size=None,
             log_every=0, logger=None):
    """Plain fixed-step gradient descent on the L2 flow loss.

    ``dataset`` is a list of ``(MotionField, DenseFlow)`` pairs. With
    ``batch_size`` set, minibatches are drawn from ``seed``; otherwise every
    step uses the whole dataset.
    """
    if not dataset:
        raise InvalidInputError("empty dataset")
    grids = _grids([m for m, _ in dataset])
    targets = _targets([f for _, f in dataset])
    rng = np.random.default_rng(seed)
    params = params.copy()
    losses = []
    for step in range(steps):
        if batch_size and batch_size < len(grids):
            idx = np.sort(rng.choice(len(grids), batch_size, replace=False))
            g, t = grids[idx], targets[idx]
        else:
            g, t = grids, targets
        loss, grads = loss_and_grad(params, g, t)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise TrainingDivergenceError(f"loss {loss:.3g} at step {step}", where=step)
        losses.append(loss)
        if learning_rate:
            for name in FLOW_PATH:
                params.tensors[name] = params.tensors[name] - learning_rate * grads[name]
        if logger and log_every and step % log_every == 0:
            logger.info("step %d loss %.6f", step, loss)
    return TrainResult(params, losses)


def random_spec(rng, max_disp=3.5, extent=32.0):
    """Draw a motion whose displacements stay inside ``max_disp`` pixels."""
    kind = ("translate", "rotate", "zoom")[rng.integers(3)]
    if kind == "translate":
        ty, tx = rng.uniform(-max_disp / np.sqrt(2), max_disp / np.sqrt(2), 2)
        return MotionSpec("translate", ty=float(ty), tx=float(tx))
    # corner radius ~ extent * sqrt(2)
    limit = max_disp / (extent * np.sqrt(2))
    if kind == "rotate":
        return MotionSpec("rotate", theta=float(rng.uniform(-limit, limit)))
    return MotionSpec("zoom", scale=float(1.0 + rng.uniform(-limit, limit)))


def make_dataset(n_clips, seed, T=4, H=64, W=64, block_h=4, block_w=4, search_range=4,
                 backend="auto"):
    """(motion field, analytic flow) pairs from randomly moving textures."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_clips):
        spec = random_spec(rng, max_disp=search_range - 0.5, extent=min(H, W) / 2)
        clip, flows = render_clip(spec, T, H, W, texture_seed=int(rng.integers(2 ** 31)))
        for t in range(1, T):
            mv = block_match(clip.frames[t], clip.frames[t - 1], block_h, block_w,
                             search_range, backend)
            pairs.append((mv, flows[t - 1]))
    return pairs


def dataset_epe(params, dataset):
    """Mean EPE of the refiner and of the upsampling baseline over ``dataset``."""
    from .synthflow import endpoint_error

    refined = refine_flow(params, [m for m, _ in dataset])
    ref = [endpoint_error(r, f) for r, (_, f) in zip(refined, dataset)]
    base = [endpoint_error(upsample_baseline(m), f) for m, f in dataset]
    return float(np.mean(ref)), float(np.mean(base))


def finite_difference(params, mv, target, name, eps=1e-4):
    """Central-difference gradient of the L2 loss w.r.t. one tensor."""
    grids, targets = _grids(mv), _targets(target)
    work = params.copy()
    arr = work.tensors[name]
    grad = np.zeros_like(arr)
    for i in range(arr.size):
        orig = arr.flat[i]
        arr.flat[i] = orig + eps
        up = l2_loss(_forward(work, grids)[1], targets)
        arr.flat[i] = orig - eps
        down = l2_loss(_forward(work, grids)[1], targets)
        arr.flat[i] = orig
        grad.flat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=GRADCHECK_FLOOR):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max(initial=0.0))


def random_case(rng):
    """A small random (params, motion, target) triple with random shapes."""
    config = RefinerConfig(block_h=int(rng.integers(1, 4)), block_w=int(rng.integers(1, 4)),
                           hidden=int(rng.integers(2, 7)), n_tokens=int(rng.integers(1, 4)),
                           d_s=int(rng.integers(1, 5)))
    gh, gw = (int(v) for v in rng.integers(2, 5, 2))
    tensors = {name: rng.standard_normal(shape) * 0.5 for name, shape in config.shapes().items()}
    params = RefinerParams(config, tensors)
    mv = MotionField(rng.integers(-3, 4, (gh, gw, 2)).astype(np.int16), config.block_h, config.block_w)
    target = DenseFlow(rng.standard_normal((gh * config.block_h, gw * config.block_w, 2)))
    return params, mv, target


def gradient_check(seed=0, trials=20, eps=1e-4, corrupt=None):
    """Max relative error per tensor between ``backward`` and central differences.

    ``corrupt`` names a tensor whose analytic gradient is perturbed, to
    prove the check can fail.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in PARAM_NAMES}
    for _ in range(trials):
        params, mv, target = random_case(rng)
        grads = backward(params, mv, target)
        if corrupt is not None:
            if corrupt not in grads:
                raise InvalidInputError(f"unknown tensor {corrupt!r}")
            grads[corrupt] = grads[corrupt] * 1.01 + 1e-3
        for name in PARAM_NAMES:
            numeric = finite_difference(params, mv, target, name, eps)
            worst[name] = max(worst[name], relative_error(grads[name], numeric))
    return worst
