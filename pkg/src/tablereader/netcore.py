"""Four-direction recurrent network core.

The computation graph is a fixed Gabor filter front end followed by a
configurable chain of stages: block-subsampling layers (trainable linear
map + tanh on non-overlapping blocks), recurrent grid layers scanned in
four column-first directions whose outputs are summed, per-position tanh
layers, a row-collapse, and a softmax output layer.

Two recurrent cell kinds are provided.  The default "leaky" cell keeps
its state inside [-1, 1] by construction: three gate pre-activations are
softmax-normalized into convex weights over the two neighbor states and
a tanh candidate.  A conventional two-dimensional LSTM with per-axis
forget gates ("mdlstm") is available as a drop-in comparison cell.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .preproc import Raster


class NonFiniteActivationError(FloatingPointError):
    """A NaN/Inf appeared in an activation grid."""

    def __init__(self, layer: str, position):
        self.layer = layer
        self.position = position
        super().__init__(f"non-finite activation in {layer} at {position}")


def _check_finite(arr: np.ndarray, layer: str) -> None:
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteActivationError(layer, tuple(int(v) for v in bad))


# ---------------------------------------------------------------------------
# alphabet


class Alphabet:
    """Ordered task symbols plus one artificial garbage symbol appended
    at the end (index ``garbage_index``).  Symbols may be multi-character
    tokens; encoding uses greedy longest match."""

    def __init__(self, symbols):
        symbols = tuple(symbols)
        if len(symbols) != len(set(symbols)):
            raise ValueError("alphabet symbols must be distinct")
        if not symbols:
            raise ValueError("alphabet needs at least one task symbol")
        self.symbols = symbols
        self._index = {s: i for i, s in enumerate(symbols)}
        self._by_length = sorted(symbols, key=len, reverse=True)

    @property
    def garbage_index(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def tokenize(self, text: str) -> list[str]:
        tokens = []
        pos = 0
        while pos < len(text):
            for sym in self._by_length:
                if text.startswith(sym, pos):
                    tokens.append(sym)
                    pos += len(sym)
                    break
            else:
                raise ValueError(f"character {text[pos]!r} not in alphabet")
        return tokens

    def encode(self, text: str) -> np.ndarray:
        return np.array([self._index[t] for t in self.tokenize(text)], dtype=np.int64)

    def decode(self, indices) -> str:
        return "".join(self.symbols[int(i)] for i in indices)

    def __contains__(self, text: str) -> bool:
        try:
            self.tokenize(text)
        except ValueError:
            return False
        return True

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __len__(self) -> int:
        return self.size


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GaborBank:
    """Fixed (non-trainable) filter bank; kernels are zero-mean."""

    orientations_deg: tuple = (0.0, 45.0, 90.0, 135.0)
    wavelength: float = 8.0
    sigma: float = 4.0
    kernel_size: int = 11

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and >= 1")
        object.__setattr__(self, "orientations_deg", tuple(float(a) for a in self.orientations_deg))

    @property
    def channels(self) -> int:
        return len(self.orientations_deg)

    def kernels(self) -> np.ndarray:
        k = self.kernel_size
        half = k // 2
        ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
        bank = np.empty((self.channels, k, k))
        for c, deg in enumerate(self.orientations_deg):
            theta = np.deg2rad(deg)
            xr = xs * np.cos(theta) + ys * np.sin(theta)
            yr = -xs * np.sin(theta) + ys * np.cos(theta)
            g = np.exp(-(xr**2 + yr**2) / (2.0 * self.sigma**2)) * np.cos(
                2.0 * np.pi * xr / self.wavelength
            )
            bank[c] = g - g.mean()
        return bank


RECURRENT_KINDS = ("leaky", "mdlstm")
STAGE_KINDS = RECURRENT_KINDS + ("subsample", "tanh", "collapse", "softmax")


@dataclass(frozen=True)
class StageSpec:
    kind: str
    units: int = 0
    fy: int = 1
    fx: int = 1

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.kind in ("subsample", "tanh") + RECURRENT_KINDS and self.units < 1:
            raise ValueError(f"{self.kind} stage needs units >= 1")
        if self.fy < 1 or self.fx < 1:
            raise ValueError("subsample factors must be >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    """Complete architecture description; JSON round-trippable."""

    name: str
    input_height: int
    stages: tuple
    alphabet: Alphabet
    gabor: GaborBank = field(default_factory=GaborBank)
    seed: int = 1
    field_type: str = ""
    cells: int = 0  # informational unit total recorded for the config
    trainable_weights: int = 0  # expected parameter total, 0 = unchecked

    def __post_init__(self):
        stages = tuple(
            s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages
        )
        object.__setattr__(self, "stages", stages)
        if len(stages) < 2 or stages[-2].kind != "collapse" or stages[-1].kind != "softmax":
            raise ValueError("stage plan must end with collapse followed by softmax")
        if any(s.kind == "collapse" for s in stages[:-2]):
            raise ValueError("collapse may appear only once, before softmax")
        if self.input_height < 1:
            raise ValueError("input_height must be >= 1")

    @property
    def output_neurons(self) -> int:
        return self.alphabet.size

    @property
    def x_factor(self) -> int:
        f = 1
        for s in self.stages:
            f *= s.fx
        return f

    def timesteps(self, width: int) -> int:
        return -(-width // self.x_factor)

    def layer_layouts(self) -> list[tuple[str, list[tuple[str, tuple]]]]:
        """(layer name, [(param name, shape), ...]) for every trainable
        layer, in forward order.  The Gabor front end is fixed and has
        no entry."""
        layouts = []
        channels = self.gabor.channels
        for i, s in enumerate(self.stages):
            name = f"stage{i}_{s.kind}"
            if s.kind == "subsample":
                layouts.append((name, [("w", (s.units, channels * s.fy * s.fx)), ("b", (s.units,))]))
                channels = s.units
            elif s.kind == "tanh":
                layouts.append((name, [("w", (s.units, channels)), ("b", (s.units,))]))
                channels = s.units
            elif s.kind in RECURRENT_KINDS:
                g = 4 if s.kind == "leaky" else 5
                params = []
                for d in range(4):
                    params += [
                        (f"d{d}_w", (g * s.units, channels)),
                        (f"d{d}_uy", (g * s.units, s.units)),
                        (f"d{d}_ux", (g * s.units, s.units)),
                        (f"d{d}_b", (g * s.units,)),
                    ]
                layouts.append((name, params))
                channels = s.units
            elif s.kind == "collapse":
                pass
            elif s.kind == "softmax":
                layouts.append((name, [("w", (self.alphabet.size, channels)), ("b", (self.alphabet.size,))]))
                channels = self.alphabet.size
        return layouts

    def parameter_count(self) -> int:
        return sum(
            int(np.prod(shape)) for _, params in self.layer_layouts() for _, shape in params
        )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "input_height": self.input_height,
            "gabor": {
                "orientations_deg": list(self.gabor.orientations_deg),
                "wavelength": self.gabor.wavelength,
                "sigma": self.gabor.sigma,
                "kernel_size": self.gabor.kernel_size,
            },
            "stages": [self._stage_dict(s) for s in self.stages],
            "alphabet": list(self.alphabet.symbols),
            "seed": self.seed,
        }
        if self.field_type:
            d["field_type"] = self.field_type
        if self.cells:
            d["cells"] = self.cells
        if self.trainable_weights:
            d["trainable_weights"] = self.trainable_weights
        return d

    @staticmethod
    def _stage_dict(s: StageSpec) -> dict:
        d = {"kind": s.kind}
        if s.units:
            d["units"] = s.units
        if s.fy != 1:
            d["fy"] = s.fy
        if s.fx != 1:
            d["fx"] = s.fx
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            name=d["name"],
            input_height=int(d["input_height"]),
            stages=tuple(StageSpec(**s) for s in d["stages"]),
            alphabet=Alphabet(d["alphabet"]),
            gabor=GaborBank(**d.get("gabor", {})),
            seed=int(d.get("seed", 1)),
            field_type=d.get("field_type", ""),
            cells=int(d.get("cells", 0)),
            trainable_weights=int(d.get("trainable_weights", 0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


# ---------------------------------------------------------------------------
# weights


class WeightStore:
    """One flat parameter array per trainable layer plus a matching
    velocity array for momentum.  Individual parameters are contiguous
    views into the flat arrays, so optimizer steps operate on the flats
    while the layers see shaped matrices."""

    def __init__(self, spec: NetworkSpec, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layouts = spec.layer_layouts()
        self._layout_map = dict(self.layouts)
        self.layer_names = [name for name, _ in self.layouts]
        self.data: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        for name, params in self.layouts:
            n = sum(int(np.prod(shape)) for _, shape in params)
            self.data[name] = np.zeros(n, self.dtype)
            self.velocity[name] = np.zeros(n, self.dtype)
        expected = spec.trainable_weights
        if expected and expected != self.total_parameters():
            raise ValueError(
                f"descriptor expects {expected} trainable weights, "
                f"layout yields {self.total_parameters()}"
            )

    @classmethod
    def create(cls, spec: NetworkSpec, dtype=np.float64) -> "WeightStore":
        """Seeded uniform [-0.1, 0.1] initialization."""
        store = cls(spec, dtype)
        rng = np.random.default_rng(spec.seed)
        for name, _ in store.layouts:
            flat = store.data[name]
            flat[:] = rng.uniform(-0.1, 0.1, flat.size).astype(store.dtype)
        return store

    def views(self, layer: str) -> dict[str, np.ndarray]:
        params = self._layout_map[layer]
        flat = self.data[layer]
        out = {}
        off = 0
        for pname, shape in params:
            n = int(np.prod(shape))
            out[pname] = flat[off : off + n].reshape(shape)
            off += n
        return out

    def total_parameters(self) -> int:
        return sum(arr.size for arr in self.data.values())

    def copy(self) -> "WeightStore":
        dup = WeightStore(self.spec, self.dtype)
        for name in self.layer_names:
            dup.data[name][:] = self.data[name]
            dup.velocity[name][:] = self.velocity[name]
        return dup

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.data.items()}

    def pack_grads(self, layer: str, parts: dict[str, np.ndarray]) -> np.ndarray:
        params = self._layout_map[layer]
        return np.concatenate([np.ravel(parts[pname]) for pname, _ in params])


# ---------------------------------------------------------------------------
# scan directions

# (flip_y, flip_x): top-down/bottom-up crossed with left-to-right/right-to-left
DIRECTIONS = ((False, False), (True, False), (False, True), (True, True))


def scan_orders(width: int, height: int) -> list[list[tuple[int, int]]]:
    """The four column-first total orderings of a width x height grid as
    (col, row) sequences."""
    if width < 1 or height < 1:
        raise ValueError("grid must be at least 1x1")
    orders = []
    for flip_y, flip_x in DIRECTIONS:
        cols = range(width - 1, -1, -1) if flip_x else range(width)
        rows = range(height - 1, -1, -1) if flip_y else range(height)
        orders.append([(c, r) for c in cols for r in rows])
    return orders


def _orient(grid: np.ndarray, direction: int) -> np.ndarray:
    """Flip a (rows, cols, channels) grid so the given scan direction
    becomes the canonical top-down/left-to-right one."""
    flip_y, flip_x = DIRECTIONS[direction]
    g = grid
    if flip_y:
        g = g[::-1]
    if flip_x:
        g = g[:, ::-1]
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# layer ops


def gabor_forward(r: Raster, bank: GaborBank, dtype=np.float64) -> np.ndarray:
    """Fixed front end: scale the raster to [0, 1], shift to zero mean,
    and take the sliding dot product with every kernel."""
    img = r.pixels.astype(np.float64) / 255.0
    img = (img - img.mean()).astype(dtype)
    kernels = bank.kernels().astype(dtype)
    out = _kernels.conv2d_bank(img, kernels)
    _check_finite(out, "gabor")
    return out


def leaky_cell_forward(weights: dict, grid: np.ndarray, direction: int) -> np.ndarray:
    """One directional pass of the leaky cell; weights holds w (4U,D),
    uy (4U,U), ux (4U,U), b (4U,)."""
    xd = _orient(grid, direction)
    state, _, _ = _kernels.leaky_forward(xd, weights["w"], weights["uy"], weights["ux"], weights["b"])
    return _orient(state, direction)


def mdlstm_cell_forward(weights: dict, grid: np.ndarray, direction: int) -> np.ndarray:
    """One directional pass of the two-dimensional LSTM; weights holds
    w (5U,D), uy (5U,U), ux (5U,U), b (5U,)."""
    xd = _orient(grid, direction)
    h, _, _ = _kernels.mdlstm_forward(xd, weights["w"], weights["uy"], weights["ux"], weights["b"])
    return _orient(h, direction)


def direction_merge(grids) -> np.ndarray:
    """Element-wise sum of the four directional outputs."""
    grids = list(grids)
    if len(grids) != 4:
        raise ValueError("direction_merge expects exactly 4 grids")
    out = np.zeros_like(grids[0])
    for g in grids:
        out += g
    return out


def _gather_blocks(grid: np.ndarray, fy: int, fx: int) -> np.ndarray:
    """Non-overlapping fy x fx blocks, zero-padded at partial borders,
    flattened per block in (dy, dx, channel) order."""
    H, W, C = grid.shape
    Ho = -(-H // fy)
    Wo = -(-W // fx)
    padded = np.zeros((Ho * fy, Wo * fx, C), grid.dtype)
    padded[:H, :W] = grid
    blocks = padded.reshape(Ho, fy, Wo, fx, C).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(Ho, Wo, fy * fx * C))


def _scatter_blocks(dblocks: np.ndarray, in_shape, fy: int, fx: int) -> np.ndarray:
    H, W, C = in_shape
    Ho, Wo, _ = dblocks.shape
    padded = dblocks.reshape(Ho, Wo, fy, fx, C).transpose(0, 2, 1, 3, 4)
    padded = padded.reshape(Ho * fy, Wo * fx, C)
    return np.ascontiguousarray(padded[:H, :W])


def subsample(grid: np.ndarray, fy: int, fx: int, weights: dict) -> np.ndarray:
    """Block-subsample: concatenate each fy x fx block channel-wise and
    apply a trainable linear map followed by tanh.  Output dims are the
    ceilings of the input dims over the factors."""
    blocks = _gather_blocks(grid, fy, fx)
    return np.tanh(blocks @ weights["w"].T + weights["b"])


def collapse_columns(grid: np.ndarray) -> np.ndarray:
    """Per channel, sum over the remaining rows; returns (width, channels)."""
    return grid.sum(axis=0)


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max subtraction; logits and result are
    (alphabet, T)."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


@dataclass
class OutputMatrix:
    """Per-timestep probability columns over the alphabet; shape
    (alphabet_size, T)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        if self.probs.ndim != 2:
            raise ValueError("output matrix must be 2-D (alphabet, T)")

    @property
    def timesteps(self) -> int:
        return self.probs.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        if not np.isfinite(self.probs).all():
            raise NonFiniteActivationError("output", (0, 0))
        sums = self.probs.sum(axis=0)
        if np.abs(sums - 1.0).max() > tol:
            raise ValueError(f"columns must sum to 1, worst error {np.abs(sums - 1.0).max()}")
        if (self.probs <= 0.0).any() or (self.probs >= 1.0).any():
            raise ValueError("probabilities must lie strictly inside (0, 1)")


# ---------------------------------------------------------------------------
# full network


_RECURRENT_KERNELS = {
    "leaky": (_kernels.leaky_forward, _kernels.leaky_backward),
    "mdlstm": (_kernels.mdlstm_forward, _kernels.mdlstm_backward),
}


def _recurrent_layer_forward(kind: str, views: dict, grid: np.ndarray):
    """All four directions of a recurrent stage; returns the merged grid
    and the per-direction caches in canonical orientation."""
    fwd = _RECURRENT_KERNELS[kind][0]
    merged = None
    caches = []
    for d in range(4):
        xd = _orient(grid, d)
        out = fwd(xd, views[f"d{d}_w"], views[f"d{d}_uy"], views[f"d{d}_ux"], views[f"d{d}_b"])
        caches.append(out)
        back = _orient(out[0], d)
        merged = back if merged is None else merged + back
    return merged, caches


def _recurrent_layer_backward(kind: str, views: dict, grid: np.ndarray, caches, d_out: np.ndarray):
    bwd = _RECURRENT_KERNELS[kind][1]
    d_in = np.zeros_like(grid)
    parts = {}
    for d in range(4):
        xd = _orient(grid, d)
        dd = _orient(d_out, d)
        dx, dw, duy, dux, db = bwd(
            xd, views[f"d{d}_w"], views[f"d{d}_uy"], views[f"d{d}_ux"], *caches[d], dd
        )
        d_in += _orient(dx, d)
        parts[f"d{d}_w"] = dw
        parts[f"d{d}_uy"] = duy
        parts[f"d{d}_ux"] = dux
        parts[f"d{d}_b"] = db
    return d_in, parts


def network_forward(spec: NetworkSpec, store: WeightStore, r: Raster, want_trace: bool = False):
    """Run the full graph on one raster.  Returns the OutputMatrix, or
    (OutputMatrix, trace) when want_trace is set; the trace carries the
    intermediate activations needed by network_backward."""
    if r.height != spec.input_height:
        raise ValueError(f"raster height {r.height} != spec input height {spec.input_height}")
    grid = gabor_forward(r, spec.gabor, store.dtype)
    trace = {"gabor": grid, "stages": []}
    for i, s in enumerate(spec.stages):
        name = f"stage{i}_{s.kind}"
        if s.kind == "subsample":
            views = store.views(name)
            blocks = _gather_blocks(grid, s.fy, s.fx)
            out = np.tanh(blocks @ views["w"].T + views["b"])
            trace["stages"].append({"name": name, "in_shape": grid.shape, "blocks": blocks, "out": out})
            grid = out
        elif s.kind == "tanh":
            views = store.views(name)
            out = np.tanh(grid @ views["w"].T + views["b"])
            trace["stages"].append({"name": name, "in": grid, "out": out})
            grid = out
        elif s.kind in RECURRENT_KINDS:
            views = store.views(name)
            out, caches = _recurrent_layer_forward(s.kind, views, grid)
            trace["stages"].append({"name": name, "in": grid, "caches": caches})
            grid = out
        elif s.kind == "collapse":
            trace["stages"].append({"name": name, "in_height": grid.shape[0]})
            grid = collapse_columns(grid)[None, :, :]
        elif s.kind == "softmax":
            views = store.views(name)
            cols = grid[0]  # (T, C)
            logits = views["w"] @ cols.T + views["b"][:, None]
            trace["stages"].append({"name": name, "cols": cols})
            trace["logits"] = logits
            grid = logits
        _check_finite(grid, name)
    probs = softmax_columns(trace["logits"].astype(np.float64))
    out = OutputMatrix(probs)
    trace["output"] = out
    return (out, trace) if want_trace else out


def network_backward(
    spec: NetworkSpec,
    store: WeightStore,
    r: Raster,
    d_logits: np.ndarray,
    trace: dict | None = None,
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of every trainable parameter.

    d_logits is the upstream gradient at the pre-softmax output columns,
    shape (alphabet, T) — the form the CTC module produces.  Returns one
    flat gradient array per layer, matching the WeightStore layout.  The
    Gabor front end is fixed, so backpropagation stops after the first
    trainable stage."""
    if trace is None:
        _, trace = network_forward(spec, store, r, want_trace=True)
    d_logits = np.asarray(d_logits, dtype=store.dtype)
    grads = {}
    d_grid = None
    for i in range(len(spec.stages) - 1, -1, -1):
        s = spec.stages[i]
        cache = trace["stages"][i]
        name = cache["name"]
        if s.kind == "softmax":
            views = store.views(name)
            cols = cache["cols"]
            dw = d_logits @ cols
            db = d_logits.sum(axis=1)
            grads[name] = store.pack_grads(name, {"w": dw, "b": db})
            d_grid = (d_logits.T @ views["w"])[None, :, :]
        elif s.kind == "collapse":
            d_grid = np.broadcast_to(d_grid[0], (cache["in_height"],) + d_grid.shape[1:]).copy()
        elif s.kind in RECURRENT_KINDS:
            views = store.views(name)
            d_grid, parts = _recurrent_layer_backward(s.kind, views, cache["in"], cache["caches"], d_grid)
            grads[name] = store.pack_grads(name, parts)
        elif s.kind == "tanh":
            views = store.views(name)
            dz = d_grid * (1.0 - cache["out"] ** 2)
            dw = np.einsum("ijk,ijl->kl", dz, cache["in"])
            db = dz.sum(axis=(0, 1))
            grads[name] = store.pack_grads(name, {"w": dw, "b": db})
            d_grid = dz @ views["w"]
        elif s.kind == "subsample":
            views = store.views(name)
            dz = d_grid * (1.0 - cache["out"] ** 2)
            dw = np.einsum("ijk,ijl->kl", dz, cache["blocks"])
            db = dz.sum(axis=(0, 1))
            grads[name] = store.pack_grads(name, {"w": dw, "b": db})
            d_grid = _scatter_blocks(dz @ views["w"], cache["in_shape"], s.fy, s.fx)
        _check_finite(grads.get(name, d_grid), f"grad:{name}")
    return grads
