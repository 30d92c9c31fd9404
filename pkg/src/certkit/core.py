"""Network representation, exact inference, input gradients and file formats."""

from __future__ import annotations

import csv
import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

MODEL_FORMAT_VERSION = 1

# Slack subtracted from every certified margin before declaring Robust.
TAU = 1e-6


class DimensionError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Base class for problems with a model file."""


class MalformedDimensionsError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class DatasetError(ValueError):
    pass


class VerifierTimeout(Exception):
    """Raised by a `Deadline` once its wall-clock budget is spent."""


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Affine:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, 2))
        object.__setattr__(self, "bias", _frozen(self.bias, 1))
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"weights have {self.weights.shape[0]} rows but bias has {self.bias.shape[0]} entries"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Relu:
    pass


Layer = Union[Affine, Relu]


@dataclass(frozen=True, eq=False)
class Network:
    """Alternating affine/ReLU stack, starting and ending with an affine layer."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise DimensionError("network has no layers")
        for k, layer in enumerate(layers):
            want = Affine if k % 2 == 0 else Relu
            if not isinstance(layer, want):
                raise DimensionError(
                    f"layer {k} must be {want.__name__}: affine and relu layers strictly alternate"
                )
        if not isinstance(layers[-1], Affine):
            raise DimensionError("last layer must be affine")
        affines = self.affine_layers
        for prev, nxt in zip(affines, affines[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer output dim {prev.out_dim} does not match next input dim {nxt.in_dim}"
                )

    @classmethod
    def from_weights(cls, weights: Sequence, biases: Sequence) -> "Network":
        layers: list = []
        for k, (w, b) in enumerate(zip(weights, biases)):
            if k:
                layers.append(Relu())
            layers.append(Affine(w, b))
        return cls(tuple(layers))

    @property
    def affine_layers(self) -> list[Affine]:
        return [l for l in self.layers if isinstance(l, Affine)]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_sizes(self) -> list[int]:
        return [a.out_dim for a in self.affine_layers[:-1]]

    @property
    def weights(self) -> list[np.ndarray]:
        return [a.weights for a in self.affine_layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [a.bias for a in self.affine_layers]


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise DimensionError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    return x


def forward(net: Network, x) -> np.ndarray:
    """Logits of `net` at `x`. Accepts a single vector or a batch of row vectors."""
    z = _check_input(net, x)
    for layer in net.layers:
        if isinstance(layer, Affine):
            z = z @ layer.weights.T + layer.bias
        else:
            z = np.maximum(z, 0.0)
    return z


def predict(net: Network, x) -> Union[int, np.ndarray]:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    logits = forward(net, x)
    out = np.argmax(logits, axis=-1)
    return int(out) if out.ndim == 0 else out


def preactivations(net: Network, x) -> list[np.ndarray]:
    """Pre-activation vectors of every hidden layer at `x`."""
    z = _check_input(net, x)
    pre = []
    affines = net.affine_layers
    for a in affines[:-1]:
        zh = z @ a.weights.T + a.bias
        pre.append(zh)
        z = np.maximum(zh, 0.0)
    return pre


def backward_input(net: Network, x, grad_logits) -> np.ndarray:
    """Gradient of ``grad_logits . f(x)`` with respect to `x`.

    Works on a single vector or row-batched inputs. The ReLU derivative at
    exactly zero is taken to be zero.
    """
    x = _check_input(net, x)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape[-1] != net.num_classes:
        raise DimensionError(f"grad_logits has dimension {g.shape[-1]}, expected {net.num_classes}")
    affines = net.affine_layers
    masks = [zh > 0 for zh in preactivations(net, x)]
    for k in range(len(affines) - 1, -1, -1):
        g = g @ affines[k].weights
        if k:
            g = g * masks[k - 1]
    return g


class Norm(str, enum.Enum):
    LINF = "linf"
    L2 = "l2"
    L1 = "l1"

    @classmethod
    def parse(cls, value) -> "Norm":
        if isinstance(value, Norm):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown norm {value!r}; expected one of linf, l2, l1") from None

    @property
    def dual_ord(self) -> float:
        return {Norm.LINF: 1, Norm.L2: 2, Norm.L1: np.inf}[self]

    @property
    def ord(self) -> float:
        return {Norm.LINF: np.inf, Norm.L2: 2, Norm.L1: 1}[self]


@dataclass(frozen=True, eq=False)
class VerificationProblem:
    """Is the label `y0` constant on the closed `norm`-ball of radius `eps` around `x0`?"""

    x0: np.ndarray
    y0: int
    eps: float
    norm: Norm = Norm.LINF

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(self.x0, 1))
        object.__setattr__(self, "norm", Norm.parse(self.norm))
        object.__setattr__(self, "y0", int(self.y0))
        # eps = 0 is accepted: it degenerates to checking the point prediction
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        object.__setattr__(self, "eps", float(self.eps))

    def box(self, clip: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Smallest axis-aligned box containing the ball."""
        lo, hi = self.x0 - self.eps, self.x0 + self.eps
        if clip:
            if self.norm is not Norm.LINF:
                raise ValueError("clipping to [0,1]^n is only supported for linf balls")
            lo, hi = np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)
        return lo, hi

    def contains(self, x, slack: float = 1e-9) -> bool:
        d = np.asarray(x, dtype=np.float64) - self.x0
        return bool(np.linalg.norm(d, ord=self.norm.ord) <= self.eps + slack)

    def with_eps(self, eps: float) -> "VerificationProblem":
        return VerificationProblem(self.x0, self.y0, eps, self.norm)


def check_problem(problem: VerificationProblem, net: Network) -> None:
    if problem.x0.shape[0] != net.input_dim:
        raise DimensionError(
            f"x0 has dimension {problem.x0.shape[0]}, network expects {net.input_dim}"
        )
    if not 0 <= problem.y0 < net.num_classes:
        raise ValueError(f"label {problem.y0} out of range for {net.num_classes} classes")


class Status(str, enum.Enum):
    ROBUST = "robust"
    NOT_ROBUST = "not_robust"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"
    ABSTAIN = "abstain"


@dataclass
class Verdict:
    status: Status
    # certified lower bound of f_y0 - f_y' per competitor class y'
    margins: dict = field(default_factory=dict)
    counterexample: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def robust(self) -> bool:
        return self.status is Status.ROBUST

    @property
    def min_margin(self) -> float:
        return min(self.margins.values()) if self.margins else float("inf")


def margin_verdict(margins: dict, tau: float = TAU, **info) -> Verdict:
    ok = all(m > tau for m in margins.values())
    return Verdict(Status.ROBUST if ok else Status.UNKNOWN, dict(margins), info=info)


class Deadline:
    """Cooperative wall-clock budget polled by verifiers between major steps."""

    def __init__(self, seconds: float | None):
        self.seconds = seconds
        self._end = None if seconds is None else time.monotonic() + seconds

    def expired(self) -> bool:
        return self._end is not None and time.monotonic() >= self._end

    def check(self) -> None:
        if self.expired():
            raise VerifierTimeout(f"time budget of {self.seconds}s exhausted")

    def remaining(self) -> float:
        return float("inf") if self._end is None else max(0.0, self._end - time.monotonic())


NO_DEADLINE = Deadline(None)


# ---------------------------------------------------------------- model files


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            layers.append(
                {"type": "affine", "weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
            )
        else:
            layers.append({"type": "relu"})
    return {
        "version": MODEL_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "num_classes": net.num_classes,
        "layers": layers,
    }


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise ModelFormatError("model file must contain a JSON object")
    version = data.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported model format version {version!r}")
    try:
        specs = data["layers"]
        input_dim = int(data["input_dim"])
        num_classes = int(data["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"missing or invalid field: {exc}") from None
    layers: list = []
    for k, spec in enumerate(specs):
        kind = spec.get("type")
        if kind == "relu":
            layers.append(Relu())
        elif kind == "affine":
            w, b = spec.get("weights"), spec.get("bias")
            if not isinstance(w, list) or not w or not isinstance(b, list):
                raise MalformedDimensionsError(f"layer {k}: weights/bias missing or empty")
            if len({len(row) for row in w}) != 1:
                raise MalformedDimensionsError(f"layer {k}: ragged weight rows")
            if len(w) != len(b):
                raise MalformedDimensionsError(
                    f"layer {k}: {len(w)} weight rows but {len(b)} bias entries"
                )
            layers.append(Affine(w, b))
        else:
            raise ModelFormatError(f"layer {k}: unknown layer type {kind!r}")
    try:
        net = Network(tuple(layers))
    except DimensionError as exc:
        raise MalformedDimensionsError(str(exc)) from None
    if net.input_dim != input_dim or net.num_classes != num_classes:
        raise MalformedDimensionsError(
            f"declared shape ({input_dim} -> {num_classes}) does not match layers "
            f"({net.input_dim} -> {net.num_classes})"
        )
    return net


def save_network(net: Network, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


def load_network(path) -> Network:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None
    return network_from_dict(data)


# -------------------------------------------------------------- dataset files


@dataclass(frozen=True, eq=False)
class LabeledSample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, 1))
        object.__setattr__(self, "y", int(self.y))


def load_dataset(path, num_classes: int | None = None) -> list[LabeledSample]:
    """Read a ``label,f0,...,f{n-1}`` CSV file.

    Features must lie in [0, 1]; labels must lie in ``[0, num_classes)`` when
    `num_classes` is given. Errors name the 1-based data row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    samples = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise DatasetError(f"{path}: header must start with 'label'")
        n = len(header) - 1
        expected = [f"f{i}" for i in range(n)]
        if [h.strip() for h in header[1:]] != expected:
            raise DatasetError(f"{path}: feature columns must be named f0..f{n - 1}")
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != n + 1:
                raise DatasetError(f"row {row_no}: expected {n + 1} fields, got {len(row)}")
            try:
                label = int(row[0])
                x = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"row {row_no}: {exc}") from None
            if not np.all((x >= 0.0) & (x <= 1.0)):
                bad = int(np.flatnonzero(~((x >= 0.0) & (x <= 1.0)))[0])
                raise DatasetError(f"row {row_no}: feature f{bad}={x[bad]} outside [0, 1]")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DatasetError(f"row {row_no}: label {label} outside [0, {num_classes})")
            samples.append(LabeledSample(x, label))
    return samples


def save_dataset(samples: Sequence[LabeledSample], path) -> None:
    n = len(samples[0].x) if samples else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(n)])
        for s in samples:
            w.writerow([s.y] + [repr(float(v)) for v in s.x])


def random_network(sizes: Sequence[int], rng: np.random.Generator, scale: float = 1.0) -> Network:
    """Network with layer widths `sizes` and fan-in scaled Gaussian weights."""
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        ws.append(rng.normal(size=(fan_out, fan_in)) * scale / np.sqrt(fan_in))
        bs.append(rng.normal(size=fan_out) * 0.1 * scale)
    return Network.from_weights(ws, bs)
