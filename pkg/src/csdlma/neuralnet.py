"""Small numpy neural-network engine for the Q-network.

Two architectures are supported:

``recurrent``
    LSTM(64) over the M channel states -> dense(64, ReLU) -> linear output.
``feedforward``
    dense(64, ReLU) over the flattened window -> dense(64, ReLU) -> linear.

The output has one unit per (node, action) pair and is reshaped to
``(batch, nodes, actions)``.  Gradients are computed by hand (backpropagation
through time for the LSTM) and applied with RMSProp.

Checkpoint format (version ``csdlma-params/1``): a numpy ``.npz`` archive
holding one array per parameter under ``param/<name>`` (each array carries its
own shape header), the string ``__format__`` and a JSON document ``__meta__``
with the architecture and any caller-supplied metadata.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "csdlma-params/1"
VARIANTS = ("recurrent", "feedforward")

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class Architecture:
    """Shape of a Q-network.

    Attributes:
        variant: ``"recurrent"`` or ``"feedforward"``.
        input_width: width of one encoded channel state.
        history: number of channel states per input window (M).
        num_nodes: rows of the output matrix (L + 1).
        num_actions: columns of the output matrix (R_Cmax + 1).
        hidden: width of every hidden layer.
    """

    variant: str
    input_width: int
    history: int
    num_nodes: int
    num_actions: int
    hidden: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("input_width", "history", "num_nodes", "num_actions", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def num_outputs(self) -> int:
        return self.num_nodes * self.num_actions

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, k = self.hidden, self.num_outputs
        if self.variant == "recurrent":
            d = self.input_width
            return {
                "lstm_W": (d, 4 * h), "lstm_U": (h, 4 * h), "lstm_b": (4 * h,),
                "fc_W": (h, h), "fc_b": (h,),
                "out_W": (h, k), "out_b": (k,),
            }
        flat = self.input_width * self.history
        return {
            "fc1_W": (flat, h), "fc1_b": (h,),
            "fc2_W": (h, h), "fc2_b": (h,),
            "out_W": (h, k), "out_b": (k,),
        }

    def fan_in(self, name: str) -> int:
        if name.startswith("lstm"):
            return self.input_width + self.hidden
        return self.shapes()[name.split("_")[0] + "_W"][0]


def init_params(arch: Architecture, rng: np.random.Generator, dtype=np.float64) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    params = {}
    for name, shape in arch.shapes().items():
        bound = 1.0 / np.sqrt(arch.fan_in(name))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def check_shapes(arch: Architecture, params: Params) -> None:
    expected = arch.shapes()
    if set(params) != set(expected):
        raise ValueError(f"parameter names {sorted(params)} do not match {sorted(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def forward(arch: Architecture, params: Params, x: np.ndarray, keep: bool = False):
    """Q-values for a batch of encoded windows.

    Computation runs in the dtype of the parameters.

    Args:
        x: array of shape ``(batch, history, input_width)``; a single window of
            shape ``(history, input_width)`` is also accepted.
        keep: also return the intermediate values needed by :func:`backward`.

    Returns:
        ``q`` of shape ``(batch, num_nodes, num_actions)`` (no batch axis for a
        single window), and the cache when ``keep`` is set.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (arch.history, arch.input_width):
        raise ValueError(
            f"expected windows of shape {(arch.history, arch.input_width)}, got {x.shape[1:]}"
        )
    x = x.astype(params["out_W"].dtype, copy=False)
    if arch.variant == "recurrent":
        feat, cache = _lstm_forward(params, x, arch.hidden)
        a1 = feat @ params["fc_W"] + params["fc_b"]
        r1 = np.maximum(a1, 0.0)
        out = r1 @ params["out_W"] + params["out_b"]
        cache.update(feat=feat, a1=a1, r1=r1)
    else:
        flat = x.reshape(len(x), -1)
        a1 = flat @ params["fc1_W"] + params["fc1_b"]
        r1 = np.maximum(a1, 0.0)
        a2 = r1 @ params["fc2_W"] + params["fc2_b"]
        r2 = np.maximum(a2, 0.0)
        out = r2 @ params["out_W"] + params["out_b"]
        cache = dict(flat=flat, a1=a1, r1=r1, a2=a2, r2=r2)
    q = out.reshape(len(x), arch.num_nodes, arch.num_actions)
    if single:
        q = q[0]
    return (q, cache) if keep else q


def _gate_scale(hidden, dtype):
    # sigmoid(z) = (1 + tanh(z / 2)) / 2, so the i, f, o columns are pre-halved
    # and all four gates go through a single tanh call
    scale = np.ones(4 * hidden, dtype=dtype)
    scale[: 3 * hidden] = 0.5
    return scale


def _lstm_forward(params, x, hidden):
    """Gate order in the 4H axis is input, forget, output, candidate."""
    batch, steps, _ = x.shape
    H = hidden
    dtype = x.dtype
    scale = _gate_scale(H, dtype)
    U = params["lstm_U"] * scale
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))  # time-major (M, B, D)
    gates = np.matmul(xt, params["lstm_W"] * scale)
    gates += params["lstm_b"] * scale
    cells = np.zeros((steps + 1, batch, H), dtype=dtype)
    hs = np.zeros((steps + 1, batch, H), dtype=dtype)
    tcs = np.empty((steps, batch, H), dtype=dtype)
    for t in range(steps):
        g = gates[t]
        g += hs[t] @ U
        np.tanh(g, out=g)
        sig = g[:, : 3 * H]
        sig *= 0.5
        sig += 0.5
        c = cells[t + 1]
        np.multiply(g[:, H : 2 * H], cells[t], out=c)
        c += g[:, :H] * g[:, 3 * H :]
        np.tanh(c, out=tcs[t])
        np.multiply(g[:, 2 * H : 3 * H], tcs[t], out=hs[t + 1])
    return hs[steps], dict(xt=xt, gates=gates, cells=cells, hs=hs, tcs=tcs)


def backward(arch: Architecture, params: Params, cache: dict, dq: np.ndarray) -> Params:
    """Gradients of a scalar loss given its gradient ``dq`` w.r.t. the batch output."""
    dout = dq.reshape(len(dq), arch.num_outputs).astype(params["out_W"].dtype, copy=False)
    grads: Params = {}
    if arch.variant == "recurrent":
        r1 = cache["r1"]
        grads["out_W"] = r1.T @ dout
        grads["out_b"] = dout.sum(axis=0)
        da1 = (dout @ params["out_W"].T) * (cache["a1"] > 0)
        grads["fc_W"] = cache["feat"].T @ da1
        grads["fc_b"] = da1.sum(axis=0)
        dh = da1 @ params["fc_W"].T
        grads.update(_lstm_backward(params, cache, dh, arch.hidden))
    else:
        r2 = cache["r2"]
        grads["out_W"] = r2.T @ dout
        grads["out_b"] = dout.sum(axis=0)
        da2 = (dout @ params["out_W"].T) * (cache["a2"] > 0)
        grads["fc2_W"] = cache["r1"].T @ da2
        grads["fc2_b"] = da2.sum(axis=0)
        da1 = (da2 @ params["fc2_W"].T) * (cache["a1"] > 0)
        grads["fc1_W"] = cache["flat"].T @ da1
        grads["fc1_b"] = da1.sum(axis=0)
    return grads


def _lstm_backward(params, cache, dh, hidden):
    H = hidden
    xt, gates, cells, hs, tcs = cache["xt"], cache["gates"], cache["cells"], cache["hs"], cache["tcs"]
    steps, batch, _ = xt.shape
    UT = params["lstm_U"].T
    dz_all = np.empty_like(gates)
    dc = np.zeros((batch, H), dtype=gates.dtype)
    for t in range(steps - 1, -1, -1):
        g = gates[t]
        i, f, o, cand = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = tcs[t]
        dc += dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cells[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - cand * cand)
        dh = dz @ UT
        dc *= f
    flat_dz = dz_all.reshape(steps * batch, 4 * H)
    return {
        "lstm_W": xt.reshape(steps * batch, -1).T @ flat_dz,
        "lstm_U": hs[:steps].reshape(steps * batch, H).T @ flat_dz,
        "lstm_b": flat_dz.sum(axis=0),
    }


class RMSProp:
    """RMSProp with one squared-gradient accumulator per parameter array.

    ``acc = decay * acc + (1 - decay) * g**2`` then
    ``p -= learning_rate * g / sqrt(acc + epsilon)``.
    """

    def __init__(self, learning_rate: float = 1e-3, decay: float = 0.95, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.acc: Params = {}

    def update(self, params: Params, grads: Params) -> None:
        """Apply one step to ``params`` in place."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        for name, g in grads.items():
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(g)
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            params[name] -= self.learning_rate * g / np.sqrt(acc + self.epsilon)


def rmsprop_update(params, grads, acc, learning_rate, decay, epsilon):
    """Functional form of one RMSProp step; returns ``(new_params, new_acc)``."""
    opt = RMSProp(learning_rate, decay, epsilon)
    opt.acc = copy_params(acc) if acc else {}
    new = copy_params(params)
    opt.update(new, grads)
    return new, opt.acc


def sync_target(online: Params, target: Params) -> None:
    """Overwrite ``target`` with an independent copy of ``online``."""
    if set(online) != set(target):
        raise ValueError("online and target parameter sets differ")
    for name, value in online.items():
        if target[name].shape != value.shape:
            raise ValueError(f"{name}: shape mismatch {target[name].shape} vs {value.shape}")
        target[name] = value.copy()


def save_checkpoint(path, arch: Architecture, params: Params, meta: dict | None = None) -> Path:
    path = Path(path)
    doc = {"architecture": asdict(arch), "meta": meta or {}}
    arrays = {f"param/{k}": v for k, v in params.items()}
    try:
        with path.open("wb") as fh:
            np.savez(fh, __format__=np.array(CHECKPOINT_FORMAT), __meta__=np.array(json.dumps(doc)), **arrays)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> tuple[Architecture, Params, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        fmt = str(data["__format__"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        doc = json.loads(str(data["__meta__"]))
        params = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("param/")}
    arch = Architecture(**doc["architecture"])
    check_shapes(arch, params)
    return arch, params, doc["meta"]
