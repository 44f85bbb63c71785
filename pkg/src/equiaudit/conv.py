"""Convolution engine and the discretized continuous CNN.

A layer maps a C_in-channel stack to a C_out-channel stack: each output
channel is sigma(sum_m x_m * k_{m,c} + b_c) with compactly supported kernels,
the sum over input channels accumulated in fixed ascending order. The single
convolution is a direct (non-FFT) summation with h^2 quadrature weight and
zero reads outside the domain, so locality statements stay exact at sample
level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import convolve2d
from scipy.special import expit

from .errors import (
    DomainFitError,
    GeometryMismatchError,
    InvalidModelError,
    TransformClassError,
)
from .grid import (
    FeatureStack,
    Grid,
    GridGeometry,
    embed,
    refine,
    render,
    resample_affine,
    support_estimate,
)
from .transform import LinearMap2, classify, iterate

__all__ = [
    "Filter",
    "Nonlinearity",
    "ConvLayer",
    "CnnModel",
    "filter_from_grid",
    "convolve",
    "layer_forward",
    "model_forward",
    "model_forward_stages",
    "transform_filter",
    "receptive_radius",
    "radial_filter",
    "gaussian_filter",
    "ring_filter",
    "impulse_filter",
    "n_fold_symmetrize",
    "elliptic_ring_filter",
    "smooth_window",
    "random_blob_filter",
    "random_radial_filter",
    "refine_filter",
    "refine_model",
    "embed_filter",
    "model_to_json",
    "model_from_json",
    "save_model",
    "load_model",
    "build_model",
]

_RADIUS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Filter:
    """A compactly supported kernel.

    support_radius is an upper-bound promise: samples with |x| > support_radius
    are 0. A loose bound is valid (just pessimistic for locality estimates).
    """

    grid: Grid
    support_radius: float

    def __post_init__(self):
        r = float(self.support_radius)
        if not r >= 0.0:
            raise ValueError(f"support radius must be nonnegative, got {r}")
        X, Y = self.grid.geometry.coords()
        outside = np.hypot(X, Y) > r + _RADIUS_TOL
        if np.any(self.grid.values[outside] != 0.0):
            raise ValueError("filter has nonzero samples beyond its support radius")
        object.__setattr__(self, "support_radius", r)

    @property
    def spacing(self) -> float:
        return self.grid.spacing


def filter_from_grid(grid: Grid, support_radius: Optional[float] = None) -> Filter:
    """Wrap a grid as a filter; the radius is measured from the samples when omitted."""
    if support_radius is None:
        support_radius = support_estimate(grid, 0.0).radius
    return Filter(grid, float(support_radius))


def convolve(f: Grid, lam: Filter) -> Grid:
    """(f * lam)(x) = sum_y lam(y) f(x - y) h^2 with zero reads outside f's domain.

    Direct summation (no FFT); the output shares f's geometry.
    """
    kg = lam.grid
    if not np.isclose(f.spacing, kg.spacing, rtol=1e-12, atol=0.0):
        raise GeometryMismatchError(
            f"image spacing {f.spacing} != filter spacing {kg.spacing}"
        )
    if f.extent <= lam.support_radius - _RADIUS_TOL:
        raise DomainFitError(
            f"image extent {f.extent} does not exceed filter support radius "
            f"{lam.support_radius}"
        )
    h = f.spacing
    out = convolve2d(f.values, kg.values, mode="same", boundary="fill", fillvalue=0.0)
    return Grid(f.geometry, out * (h * h))


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise nonlinearity: identity, relu, lipschitz_sigmoid(L), or softmax
    over channels (per spatial sample)."""

    kind: str
    lipschitz: float = 1.0

    _KINDS = ("identity", "relu", "lipschitz_sigmoid", "softmax")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidModelError(
                f"unknown nonlinearity {self.kind!r}; expected {self._KINDS}"
            )
        if self.kind == "lipschitz_sigmoid" and not self.lipschitz > 0:
            raise InvalidModelError("sigmoid Lipschitz constant must be positive")

    @classmethod
    def parse(cls, text: str) -> "Nonlinearity":
        t = text.strip()
        if t in ("identity", "relu"):
            return cls(t)
        if t in ("softmax", "softmax_over_channels"):
            return cls("softmax")
        if t.startswith("lipschitz_sigmoid(") and t.endswith(")"):
            arg = t[len("lipschitz_sigmoid(") : -1]
            try:
                return cls("lipschitz_sigmoid", float(arg))
            except ValueError:
                raise InvalidModelError(
                    f"bad lipschitz_sigmoid argument {arg!r}"
                ) from None
        raise InvalidModelError(f"unknown nonlinearity {text!r}")

    def to_string(self) -> str:
        if self.kind == "lipschitz_sigmoid":
            return f"lipschitz_sigmoid({self.lipschitz!r})"
        if self.kind == "softmax":
            return "softmax_over_channels"
        return self.kind

    def apply(self, pre: np.ndarray) -> np.ndarray:
        """pre has shape (channels, n, n)."""
        if self.kind == "identity":
            return pre
        if self.kind == "relu":
            return np.maximum(pre, 0.0)
        if self.kind == "lipschitz_sigmoid":
            # logistic scaled so the maximum slope equals the Lipschitz constant
            return expit(4.0 * self.lipschitz * pre)
        shifted = pre - pre.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=0, keepdims=True)


@dataclass(frozen=True, eq=False)
class ConvLayer:
    """kernels[m][c] maps input channel m to output channel c; one bias per
    output channel; bias is added before the nonlinearity."""

    kernels: Tuple[Tuple[Filter, ...], ...]
    biases: Tuple[float, ...]
    nonlinearity: Nonlinearity

    def __post_init__(self):
        kernels = tuple(tuple(row) for row in self.kernels)
        if not kernels or not kernels[0]:
            raise InvalidModelError("a layer needs at least one kernel")
        width = len(kernels[0])
        if any(len(row) != width for row in kernels):
            raise InvalidModelError("kernel matrix must be rectangular")
        g0 = kernels[0][0].grid.geometry
        for row in kernels:
            for k in row:
                if not k.grid.geometry.close_to(g0):
                    raise GeometryMismatchError("all kernels in a layer must share geometry")
        biases = tuple(float(b) for b in self.biases)
        if len(biases) != width:
            raise InvalidModelError(
                f"got {len(biases)} biases for {width} output channels"
            )
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "biases", biases)

    @property
    def in_channels(self) -> int:
        return len(self.kernels)

    @property
    def out_channels(self) -> int:
        return len(self.kernels[0])

    @property
    def kernel_geometry(self) -> GridGeometry:
        return self.kernels[0][0].grid.geometry


@dataclass(frozen=True, eq=False)
class CnnModel:
    """A stack of layers; channel counts must chain, and softmax (a cross-
    channel map) is only legal in the final layer."""

    layers: Tuple[ConvLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_channels != nxt.in_channels:
                raise InvalidModelError(
                    f"layer output channels {prev.out_channels} != next layer "
                    f"input channels {nxt.in_channels}"
                )
        for layer in layers[:-1]:
            if layer.nonlinearity.kind == "softmax":
                raise InvalidModelError("softmax is only legal as the final layer")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)


def receptive_radius(model: CnnModel, depth: Optional[int] = None) -> float:
    """Per-channel recursion r_c(i) = max_m [r_m(i-1) + r(k_{m,c})], maximized
    over channels at the requested depth (default: full depth); depth 0 is 0."""
    L = len(model.layers)
    depth = L if depth is None else int(depth)
    if not 0 <= depth <= L:
        raise ValueError(f"depth {depth} outside [0, {L}]")
    radii = [0.0] * (model.layers[0].in_channels if model.layers else 1)
    for layer in model.layers[:depth]:
        radii = [
            max(radii[m] + layer.kernels[m][c].support_radius for m in range(layer.in_channels))
            for c in range(layer.out_channels)
        ]
    return max(radii)


def _as_stack(x: Union[Grid, FeatureStack, Sequence[Grid]]) -> FeatureStack:
    if isinstance(x, FeatureStack):
        return x
    if isinstance(x, Grid):
        return FeatureStack((x,))
    return FeatureStack(tuple(x))


def layer_forward(stack: Union[Grid, FeatureStack], layer: ConvLayer) -> FeatureStack:
    stack = _as_stack(stack)
    if stack.channel_count != layer.in_channels:
        raise GeometryMismatchError(
            f"stack has {stack.channel_count} channels, layer expects {layer.in_channels}"
        )
    pre = []
    for c in range(layer.out_channels):
        acc = None
        for m in range(layer.in_channels):
            g = convolve(stack.channels[m], layer.kernels[m][c])
            acc = g.values if acc is None else acc + g.values
        pre.append(acc + layer.biases[c])
    post = layer.nonlinearity.apply(np.stack(pre, axis=0))
    geom = stack.geometry
    return FeatureStack(tuple(Grid(geom, post[c]) for c in range(layer.out_channels)))


def model_forward_stages(
    x: Union[Grid, FeatureStack], model: CnnModel
) -> Tuple[FeatureStack, ...]:
    """All intermediate stacks: stage 0 is the input, stage i the output of layer i."""
    stack = _as_stack(x)
    stages = [stack]
    for layer in model.layers:
        stack = layer_forward(stack, layer)
        stages.append(stack)
    return tuple(stages)


def model_forward(x: Union[Grid, FeatureStack], model: CnnModel) -> FeatureStack:
    return model_forward_stages(x, model)[-1]


def transform_filter(lam: Filter, T: LinearMap2) -> Filter:
    """The filter |det T| * lam(T x), whose convolution reproduces a warped-
    input convolution viewed in the warped frame.

    The support becomes T^-1(supp lam), so the radius scales by the operator
    norm of T^-1 (plus a sqrt(2) h bilinear halo); the grid extent grows when
    the new support needs more room.
    """
    inv = T.inverse()
    adet = abs(T.det)
    h = lam.spacing
    new_radius = inv.operator_norm() * (lam.support_radius + math.sqrt(2.0) * h)
    geom = GridGeometry(max(lam.grid.extent, new_radius), h)
    warped = resample_affine(lam.grid, inv, geometry=geom)
    src = None
    if warped.source is not None:
        wsrc = warped.source
        src = lambda x, y: adet * wsrc(x, y)
    out = Grid(geom, adet * warped.values, source=src)
    return Filter(out, new_radius)


def _profile_callable(profile) -> Callable[[np.ndarray], np.ndarray]:
    if callable(profile):
        return profile
    radii, values = profile
    radii = np.asarray(radii, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    return lambda r: np.interp(r, radii, values, left=values[0], right=0.0)


def radial_filter(profile, geometry: GridGeometry) -> Filter:
    """lam(x) = profile(|x|), truncated to the inscribed disc |x| <= extent.

    profile is a vectorized callable on radius, or a (radii, values) table
    interpolated linearly (zero beyond the last knot).
    """
    prof = _profile_callable(profile)
    R = geometry.extent

    def src(x, y):
        r = np.hypot(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return np.where(r <= R, prof(r), 0.0)

    g = render(geometry, src)
    radius = support_estimate(g, 0.0).radius
    return Filter(g, radius)


def gaussian_filter(sigma: float, geometry: GridGeometry, amplitude: float = 1.0) -> Filter:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s2 = 2.0 * sigma * sigma
    return radial_filter(lambda r: amplitude * np.exp(-(r * r) / s2), geometry)


def ring_filter(
    r0: float, width: float, geometry: GridGeometry, amplitude: float = 1.0
) -> Filter:
    """An annular profile peaking at radius r0."""
    if width <= 0:
        raise ValueError("width must be positive")
    w2 = 2.0 * width * width
    return radial_filter(lambda r: amplitude * np.exp(-((r - r0) ** 2) / w2), geometry)


def impulse_filter(geometry: GridGeometry) -> Filter:
    """Discrete unit-mass impulse: a single center sample of value 1/h^2."""
    n = geometry.size
    vals = np.zeros((n, n))
    h = geometry.spacing
    vals[geometry.half_count, geometry.half_count] = 1.0 / (h * h)
    return Filter(Grid(geometry, vals), 0.0)


def n_fold_symmetrize(lam: Filter, T: LinearMap2, n: int) -> Filter:
    """Average of lam over the orbit {T^j : j < n}; requires T to have finite
    order dividing n, and returns a fixed point of the filter transform."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be a positive integer")
    if n == 1:
        return lam
    cls = classify(T)
    if cls.kind == "identity":
        order = 1
    elif cls.kind in ("elliptic_finite_order", "reflection_conjugate"):
        order = cls.order
    else:
        raise TransformClassError(f"map {T} has no finite order (kind {cls.kind})")
    if order is None or n % order != 0:
        raise TransformClassError(f"map order {order} does not divide n = {n}")
    h = lam.spacing
    powers = [iterate(T, j) for j in range(n)]
    halo = lam.support_radius + math.sqrt(2.0) * h
    radius = max(p.operator_norm() * halo for p in powers)
    geom = GridGeometry(max(lam.grid.extent, radius), h)
    acc = None
    sources = []
    for p in powers:
        term = resample_affine(lam.grid, p, geometry=geom)
        acc = term.values if acc is None else acc + term.values
        sources.append(term.source)
    vals = acc / float(n)
    src = None
    if all(s is not None for s in sources):
        src = lambda x, y: sum(s(x, y) for s in sources) / float(n)
    return Filter(Grid(geom, vals, source=src), radius)


def elliptic_ring_filter(B: LinearMap2, profile, geometry: GridGeometry) -> Filter:
    """lam(x) = profile(|B x|): constant on the concentric ellipses |Bx| = const,
    hence invariant under B^-1 R(theta) B for every angle."""
    prof = _profile_callable(profile)
    R = geometry.extent

    def src(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        r = np.hypot(B.a * x + B.b * y, B.c * x + B.d * y)
        return np.where(np.hypot(x, y) <= R, prof(r), 0.0)

    g = render(geometry, src)
    radius = support_estimate(g, 0.0).radius
    return Filter(g, radius)


def smooth_window(t: np.ndarray) -> np.ndarray:
    """C-infinity taper: exp(1 - 1/(1 - t^2)) for |t| < 1, zero beyond."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape, dtype=np.float64)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def random_blob_filter(
    geometry: GridGeometry,
    radius: float,
    rng: np.random.Generator,
    n_blobs: int = 4,
    amplitude: float = 1.0,
) -> Filter:
    """Smooth random filter: a windowed sum of random Gaussian blobs supported
    inside |x| <= radius. Generically asymmetric."""
    if radius <= 0 or radius > geometry.extent + _RADIUS_TOL:
        raise ValueError(f"radius {radius} must lie in (0, extent {geometry.extent}]")
    angles = rng.uniform(0.0, 2.0 * math.pi, size=n_blobs)
    dists = rng.uniform(0.15, 0.6, size=n_blobs) * radius
    cxs = dists * np.cos(angles)
    cys = dists * np.sin(angles)
    sigmas = rng.uniform(0.15, 0.3, size=n_blobs) * radius
    amps = rng.uniform(0.4, 1.0, size=n_blobs) * rng.choice([-1.0, 1.0], size=n_blobs)

    def src(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acc = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
        for cx, cy, s, a in zip(cxs, cys, sigmas, amps):
            acc += a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * s * s))
        return acc * smooth_window(np.hypot(x, y) / radius)

    g = render(geometry, src)
    peak = g.sup_norm()
    if peak > 0:
        scale = amplitude / peak
        gsrc = g.source
        g = Grid(geometry, g.values * scale, source=lambda x, y: scale * gsrc(x, y))
    # the window zeroes everything at |x| >= radius, so radius is a valid bound
    return Filter(g, radius)


def random_radial_filter(
    geometry: GridGeometry,
    radius: float,
    rng: np.random.Generator,
    n_modes: int = 3,
    amplitude: float = 1.0,
) -> Filter:
    """Random rotation-invariant filter: windowed random radial rings."""
    if radius <= 0 or radius > geometry.extent + _RADIUS_TOL:
        raise ValueError(f"radius {radius} must lie in (0, extent {geometry.extent}]")
    centers = rng.uniform(0.0, 0.7, size=n_modes) * radius
    widths = rng.uniform(0.15, 0.35, size=n_modes) * radius
    amps = rng.uniform(0.4, 1.0, size=n_modes) * rng.choice([-1.0, 1.0], size=n_modes)

    def prof(r):
        r = np.asarray(r, dtype=np.float64)
        acc = np.zeros(r.shape, dtype=np.float64)
        for c, w, a in zip(centers, widths, amps):
            acc += a * np.exp(-((r - c) ** 2) / (2.0 * w * w))
        return acc * smooth_window(r / radius)

    lam = radial_filter(prof, geometry)
    peak = lam.grid.sup_norm()
    if peak > 0:
        scale = amplitude / peak
        gsrc = lam.grid.source
        g = Grid(geometry, lam.grid.values * scale, source=lambda x, y: scale * gsrc(x, y))
        lam = Filter(g, lam.support_radius)
    return lam


def refine_filter(lam: Filter, factor: int) -> Filter:
    """Same filter at spacing/factor (re-rendered from its source when present).

    Finer sampling can reveal support the coarse measurement missed, so the
    radius is re-measured and can only grow toward the true bound.
    """
    g = refine(lam.grid, factor)
    measured = support_estimate(g, 0.0).radius
    return Filter(g, max(lam.support_radius, measured))


def refine_model(model: CnnModel, factor: int) -> CnnModel:
    layers = tuple(
        ConvLayer(
            tuple(tuple(refine_filter(k, factor) for k in row) for row in layer.kernels),
            layer.biases,
            layer.nonlinearity,
        )
        for layer in model.layers
    )
    return CnnModel(layers)


def embed_filter(lam: Filter, geometry: GridGeometry) -> Filter:
    """Zero-pad a filter onto a larger same-spacing geometry (sample-exact)."""
    return Filter(embed(lam.grid, geometry), lam.support_radius)


# ---------------------------------------------------------------------------
# model (de)serialization


def _filter_to_json(lam: Filter) -> dict:
    return {
        "values": [[float(v) for v in row] for row in lam.grid.values],
        "spacing": lam.spacing,
        "support_radius": lam.support_radius,
    }


def _filter_from_json(obj: dict) -> Filter:
    try:
        values = np.asarray(obj["values"], dtype=np.float64)
        spacing = float(obj["spacing"])
        radius = float(obj["support_radius"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidModelError(f"bad filter reference: {e}") from None
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] % 2 == 0:
        raise InvalidModelError(
            f"filter values must be a square odd-sided array, got shape {values.shape}"
        )
    m = values.shape[0] // 2
    geom = GridGeometry(max(m, 1) * spacing, spacing)
    if geom.size != values.shape[0]:
        raise InvalidModelError("filter geometry does not reproduce the array size")
    try:
        return Filter(Grid(geom, values), radius)
    except ValueError as e:
        raise InvalidModelError(str(e)) from None


def model_to_json(model: CnnModel) -> dict:
    return {
        "layers": [
            {
                "kernels": [[_filter_to_json(k) for k in row] for row in layer.kernels],
                "biases": list(layer.biases),
                "nonlinearity": layer.nonlinearity.to_string(),
            }
            for layer in model.layers
        ]
    }


def model_from_json(obj: dict) -> CnnModel:
    if not isinstance(obj, dict) or "layers" not in obj:
        raise InvalidModelError("model JSON must be an object with a 'layers' list")
    layers = []
    for i, spec in enumerate(obj["layers"]):
        try:
            kernels = tuple(
                tuple(_filter_from_json(k) for k in row) for row in spec["kernels"]
            )
            biases = tuple(float(b) for b in spec["biases"])
            nl = Nonlinearity.parse(spec["nonlinearity"])
        except InvalidModelError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidModelError(f"bad layer {i}: {e}") from None
        try:
            layers.append(ConvLayer(kernels, biases, nl))
        except (ValueError, GeometryMismatchError) as e:
            raise InvalidModelError(f"bad layer {i}: {e}") from None
    try:
        return CnnModel(tuple(layers))
    except ValueError as e:
        raise InvalidModelError(str(e)) from None


def save_model(model: CnnModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), indent=2, sort_keys=True))


def load_model(path) -> CnnModel:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidModelError(f"cannot read model file {path}: {e}") from None
    return model_from_json(obj)


# ---------------------------------------------------------------------------
# model synthesis


def build_model(recipe: dict, spacing: float, rng: np.random.Generator) -> CnnModel:
    """Synthesize a model from a recipe dict:

    {layers, channels, kernel_radius, nonlinearity, symmetrization, n_fold, bias_scale}

    symmetrization: 'radial' (rotation-invariant random profiles), 'n_fold'
    (random filters averaged over the rotation orbit of order n_fold), or
    'none' (raw random blobs). A softmax nonlinearity applies only to the
    final layer, with relu before it.
    """
    known = {
        "layers",
        "channels",
        "kernel_radius",
        "nonlinearity",
        "symmetrization",
        "n_fold",
        "bias_scale",
    }
    extra = set(recipe) - known
    if extra:
        raise ValueError(f"unknown model recipe keys: {sorted(extra)}")
    try:
        L = int(recipe.get("layers", 1))
        C = int(recipe.get("channels", 1))
        radius = float(recipe.get("kernel_radius", 0.24))
        n_fold = int(recipe.get("n_fold", 4))
        bias_scale = float(recipe.get("bias_scale", 0.0))
    except (TypeError, ValueError) as e:
        raise ValueError(f"bad model recipe value: {e}") from None
    nl = Nonlinearity.parse(recipe.get("nonlinearity", "identity"))
    sym = recipe.get("symmetrization", "radial")
    if L < 1 or C < 1:
        raise ValueError("layers and channels must be >= 1")
    if sym not in ("radial", "n_fold", "none"):
        raise ValueError(f"unknown symmetrization {sym!r}")
    geom = GridGeometry(radius, spacing)

    def make_kernel() -> Filter:
        if sym == "radial":
            return random_radial_filter(geom, radius, rng)
        raw = random_blob_filter(geom, radius, rng)
        if sym == "none":
            return raw
        return n_fold_symmetrize(raw, LinearMap2.rotation(360.0 / n_fold), n_fold)

    layers = []
    for i in range(L):
        in_c = 1 if i == 0 else C
        kernels = tuple(tuple(make_kernel() for _ in range(C)) for _ in range(in_c))
        biases = tuple(float(b) for b in rng.normal(0.0, 1.0, size=C) * bias_scale)
        if nl.kind == "softmax":
            layer_nl = nl if i == L - 1 else Nonlinearity("relu")
        else:
            layer_nl = nl
        layers.append(ConvLayer(kernels, biases, layer_nl))
    return CnnModel(tuple(layers))
