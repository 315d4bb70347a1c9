"""Neural-field building blocks with explicit VJPs.

Tri-plane feature sampling, sin/cos positional encoding, modulated
fully-connected layers (style modulation + weight demodulation), a plain-FC
mapping network, and the toy per-vertex geometry-field generator. Every
forward has a hand-written VJP so gradients are testable op by op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tetgrid import GeometryField, TetGrid

__all__ = [
    "TriPlane",
    "ModFCLayer",
    "PlainFC",
    "sample_triplane",
    "sample_triplane_vjp",
    "positional_encoding",
    "positional_encoding_vjp",
    "modfc_forward",
    "modfc_vjp",
    "texture_color",
    "texture_color_vjp",
    "mapping_network",
    "mapping_network_vjp",
    "toy_geometry_field",
    "toy_geometry_field_vjp",
]

DEMOD_EPS = 1e-8

# projection axes of the three feature planes: (x,y), (x,z), (y,z)
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class TriPlane:
    """Three axis-aligned feature planes spanning [-1, 1]^2 each."""

    planes: np.ndarray  # (3, N, N, C) float64

    @property
    def size(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @staticmethod
    def zeros(size: int, channels: int) -> "TriPlane":
        return TriPlane(np.zeros((3, size, size, channels)))


@dataclass
class ModFCLayer:
    """Fully-connected layer with style modulation and weight demodulation.

    The style ``h = affine_w @ w + affine_b`` scales weight columns per input
    channel; each output row is then renormalized to unit L2 norm before the
    matrix product. ``slope`` is the leaky-ReLU slope (None = linear output).
    """

    weight: np.ndarray    # (out, in)
    bias: np.ndarray      # (out,)
    affine_w: np.ndarray  # (in, wdim)
    affine_b: np.ndarray  # (in,)
    slope: float | None = 0.2

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, n_out: int, wdim: int,
               slope: float | None = 0.2, scale: float = 1.0) -> "ModFCLayer":
        return ModFCLayer(
            weight=rng.standard_normal((n_out, n_in)) * scale / np.sqrt(n_in),
            bias=np.zeros(n_out),
            affine_w=rng.standard_normal((n_in, wdim)) * scale / np.sqrt(wdim),
            affine_b=np.ones(n_in),
            slope=slope,
        )

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.weight": self.weight,
            f"{prefix}.bias": self.bias,
            f"{prefix}.affine_w": self.affine_w,
            f"{prefix}.affine_b": self.affine_b,
        }


@dataclass
class PlainFC:
    """Ordinary fully-connected layer used by the mapping network."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    slope: float | None = 0.2

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, n_out: int,
               slope: float | None = 0.2) -> "PlainFC":
        return PlainFC(
            weight=rng.standard_normal((n_out, n_in)) / np.sqrt(n_in),
            bias=np.zeros(n_out),
            slope=slope,
        )

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


# ---------------------------------------------------------------------------
# tri-plane sampling
# ---------------------------------------------------------------------------

def _plane_coords(p: np.ndarray, n: int, axes: tuple[int, int]):
    """Bilinear cell indices and fractions for points projected onto a plane."""
    u = np.clip(p[:, axes[0]], -1.0, 1.0)
    v = np.clip(p[:, axes[1]], -1.0, 1.0)
    tu = (u + 1.0) * 0.5 * (n - 1)
    tv = (v + 1.0) * 0.5 * (n - 1)
    iu = np.clip(np.floor(tu).astype(np.int64), 0, n - 2)
    iv = np.clip(np.floor(tv).astype(np.int64), 0, n - 2)
    return iu, iv, tu - iu, tv - iv


def sample_triplane(tp: TriPlane, p: np.ndarray) -> np.ndarray:
    """Sum of bilinear plane samples at each 3D point (clamped to [-1,1]^3).

    ``p`` may be a single point (3,) or a batch (B, 3); the feature dimension
    is the plane channel count.
    """
    single = p.ndim == 1
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    n = tp.size
    out = np.zeros((pts.shape[0], tp.channels))
    for e, axes in enumerate(_PLANE_AXES):
        iu, iv, fu, fv = _plane_coords(pts, n, axes)
        pl = tp.planes[e]
        out += (
            pl[iu, iv] * ((1 - fu) * (1 - fv))[:, None]
            + pl[iu + 1, iv] * (fu * (1 - fv))[:, None]
            + pl[iu, iv + 1] * ((1 - fu) * fv)[:, None]
            + pl[iu + 1, iv + 1] * (fu * fv)[:, None]
        )
    return out[0] if single else out


def sample_triplane_vjp(tp: TriPlane, p: np.ndarray, upstream: np.ndarray):
    """VJP of ``sample_triplane``: (d_planes, d_p).

    Gradients w.r.t. point coordinates vanish where the coordinate was clamped.
    """
    single = p.ndim == 1
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    n = tp.size
    d_planes = np.zeros_like(tp.planes)
    d_p = np.zeros_like(pts)
    half = 0.5 * (n - 1)
    for e, axes in enumerate(_PLANE_AXES):
        iu, iv, fu, fv = _plane_coords(pts, n, axes)
        pl = tp.planes[e]
        w00 = ((1 - fu) * (1 - fv))[:, None]
        w10 = (fu * (1 - fv))[:, None]
        w01 = ((1 - fu) * fv)[:, None]
        w11 = (fu * fv)[:, None]
        np.add.at(d_planes[e], (iu, iv), up * w00)
        np.add.at(d_planes[e], (iu + 1, iv), up * w10)
        np.add.at(d_planes[e], (iu, iv + 1), up * w01)
        np.add.at(d_planes[e], (iu + 1, iv + 1), up * w11)
        # d feature / d fu, fv then chain through t = (coord+1)/2*(n-1)
        g00 = np.einsum("bc,bc->b", up, pl[iu, iv])
        g10 = np.einsum("bc,bc->b", up, pl[iu + 1, iv])
        g01 = np.einsum("bc,bc->b", up, pl[iu, iv + 1])
        g11 = np.einsum("bc,bc->b", up, pl[iu + 1, iv + 1])
        dfu = (-(1 - fv) * g00 + (1 - fv) * g10 - fv * g01 + fv * g11)
        dfv = (-(1 - fu) * g00 - fu * g10 + (1 - fu) * g01 + fu * g11)
        inside_u = np.abs(pts[:, axes[0]]) <= 1.0
        inside_v = np.abs(pts[:, axes[1]]) <= 1.0
        d_p[:, axes[0]] += dfu * half * inside_u
        d_p[:, axes[1]] += dfv * half * inside_v
    return d_planes, (d_p[0] if single else d_p)


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------

def positional_encoding(p: np.ndarray) -> np.ndarray:
    """[sin(p), cos(p)] concatenated componentwise; (…, 3) -> (…, 6)."""
    p = np.asarray(p, dtype=np.float64)
    return np.concatenate([np.sin(p), np.cos(p)], axis=-1)


def positional_encoding_vjp(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    us, uc = up[..., :3], up[..., 3:]
    return us * np.cos(p) - uc * np.sin(p)


# ---------------------------------------------------------------------------
# modulated FC
# ---------------------------------------------------------------------------

def _demodulated(layer: ModFCLayer, w: np.ndarray):
    h = layer.affine_w @ w + layer.affine_b
    wm = layer.weight * h[None, :]
    norm = np.sqrt((wm * wm).sum(axis=1))
    denom = np.maximum(norm, DEMOD_EPS)
    return h, wm, norm, wm / denom[:, None]


def _lrelu(x: np.ndarray, slope: float | None) -> np.ndarray:
    if slope is None:
        return x
    return np.where(x > 0, x, slope * x)


def modfc_forward(layer: ModFCLayer, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Modulate, demodulate, multiply, add bias, activate.

    ``x`` may be (in,) or (B, in); ``w`` is the latent vector feeding the
    style affine.
    """
    if layer.affine_w.shape[1] != np.asarray(w).shape[0]:
        raise ValueError(f"latent dim {np.asarray(w).shape[0]} != affine input {layer.affine_w.shape[1]}")
    single = np.asarray(x).ndim == 1
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if xb.shape[1] != layer.weight.shape[1]:
        raise ValueError(f"input dim {xb.shape[1]} != layer input {layer.weight.shape[1]}")
    _, _, _, wd = _demodulated(layer, np.asarray(w, dtype=np.float64))
    y = _lrelu(xb @ wd.T + layer.bias, layer.slope)
    return y[0] if single else y


def modfc_vjp(layer: ModFCLayer, x: np.ndarray, w: np.ndarray, upstream: np.ndarray):
    """VJP of ``modfc_forward``: (param grads dict-ready tuple, d_x, d_w).

    Returns ((d_weight, d_bias, d_affine_w, d_affine_b), d_x, d_w).
    """
    single = np.asarray(x).ndim == 1
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    h, wm, norm, wd = _demodulated(layer, w)

    y0 = xb @ wd.T + layer.bias
    if layer.slope is None:
        dy0 = up
    else:
        dy0 = up * np.where(y0 > 0, 1.0, layer.slope)

    d_bias = dy0.sum(axis=0)
    d_x = dy0 @ wd
    d_wd = dy0.T @ xb  # (out, in)

    # wd = wm / max(norm, eps); rows at the eps floor see a constant divisor
    denom = np.maximum(norm, DEMOD_EPS)
    live = norm > DEMOD_EPS
    row_dot = (d_wd * wm).sum(axis=1)
    d_wm = d_wd / denom[:, None]
    d_wm -= np.where(live, row_dot / denom**3, 0.0)[:, None] * wm

    d_weight = d_wm * h[None, :]
    d_h = (d_wm * layer.weight).sum(axis=0)
    d_affine_w = np.outer(d_h, w)
    d_affine_b = d_h
    d_w = layer.affine_w.T @ d_h
    return (d_weight, d_bias, d_affine_w, d_affine_b), (d_x[0] if single else d_x), d_w


def _stack_forward(layers: list[ModFCLayer], x: np.ndarray, w: np.ndarray):
    acts = [x]
    for layer in layers:
        acts.append(modfc_forward(layer, acts[-1], w))
    return acts


def _stack_vjp(layers: list[ModFCLayer], acts: list[np.ndarray], w: np.ndarray, upstream: np.ndarray):
    d_w = np.zeros_like(np.asarray(w, dtype=np.float64))
    grads = []
    up = upstream
    for layer, a in zip(reversed(layers), reversed(acts[:-1])):
        g, up, dw = modfc_vjp(layer, a, w, up)
        grads.append(g)
        d_w += dw
    return list(reversed(grads)), up, d_w


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# texture field
# ---------------------------------------------------------------------------

def texture_color(
    p: np.ndarray,
    tp: TriPlane,
    decoder: list[ModFCLayer],
    w_geo: np.ndarray,
    w_tex: np.ndarray,
) -> np.ndarray:
    """RGB in [0,1] at surface points: tri-plane feature -> decoder -> sigmoid.

    The decoder is conditioned on the concatenated geometry and texture
    latents.
    """
    if decoder[0].weight.shape[1] != tp.channels:
        raise ValueError(f"decoder input {decoder[0].weight.shape[1]} != tri-plane channels {tp.channels}")
    w = np.concatenate([np.asarray(w_geo, dtype=np.float64), np.asarray(w_tex, dtype=np.float64)])
    feats = sample_triplane(tp, p)
    out = _stack_forward(decoder, feats, w)[-1]
    return _sigmoid(out)


def texture_color_vjp(
    p: np.ndarray,
    tp: TriPlane,
    decoder: list[ModFCLayer],
    w_geo: np.ndarray,
    w_tex: np.ndarray,
    upstream: np.ndarray,
):
    """VJP of ``texture_color``: (d_planes, layer grads, d_w_geo, d_w_tex, d_p)."""
    w_geo = np.asarray(w_geo, dtype=np.float64)
    w_tex = np.asarray(w_tex, dtype=np.float64)
    w = np.concatenate([w_geo, w_tex])
    feats = sample_triplane(tp, p)
    acts = _stack_forward(decoder, feats, w)
    s = _sigmoid(acts[-1])
    up = np.asarray(upstream, dtype=np.float64) * s * (1.0 - s)
    layer_grads, d_feats, d_w = _stack_vjp(decoder, acts, w, up)
    d_planes, d_p = sample_triplane_vjp(tp, p, d_feats)
    return d_planes, layer_grads, d_w[: w_geo.size], d_w[w_geo.size:], d_p


# ---------------------------------------------------------------------------
# mapping network
# ---------------------------------------------------------------------------

def mapping_network(z: np.ndarray, layers: list[PlainFC]) -> np.ndarray:
    """Feed-forward stack of plain FC layers mapping noise to a latent code."""
    x = np.asarray(z, dtype=np.float64)
    for layer in layers:
        if layer.weight.shape[1] != x.shape[-1]:
            raise ValueError(f"layer expects {layer.weight.shape[1]} inputs, got {x.shape[-1]}")
        x = _lrelu(x @ layer.weight.T + layer.bias, layer.slope)
    return x


def mapping_network_vjp(z: np.ndarray, layers: list[PlainFC], upstream: np.ndarray):
    """VJP of ``mapping_network``: ([(d_weight, d_bias), ...], d_z)."""
    x = np.asarray(z, dtype=np.float64)
    acts = [x]
    pre = []
    for layer in layers:
        y0 = acts[-1] @ layer.weight.T + layer.bias
        pre.append(y0)
        acts.append(_lrelu(y0, layer.slope))
    up = np.asarray(upstream, dtype=np.float64)
    grads = []
    for layer, a, y0 in zip(reversed(layers), reversed(acts[:-1]), reversed(pre)):
        dy0 = up if layer.slope is None else up * np.where(y0 > 0, 1.0, layer.slope)
        if a.ndim == 1:
            d_weight = np.outer(dy0, a)
            d_bias = dy0.copy()
        else:
            d_weight = dy0.T @ a
            d_bias = dy0.sum(axis=0)
        grads.append((d_weight, d_bias))
        up = dy0 @ layer.weight
    return list(reversed(grads)), up


# ---------------------------------------------------------------------------
# toy geometry-field generator
# ---------------------------------------------------------------------------

def toy_geometry_field(grid: TetGrid, w: np.ndarray, net: list[ModFCLayer]) -> GeometryField:
    """Latent-conditioned per-vertex field: PE(v) -> ModFC stack -> tanh.

    The first tanh channel is the SDF; the remaining three, scaled by
    1/resolution, are the deformation (both within their type bounds by
    construction).
    """
    if net[-1].weight.shape[0] != 4:
        raise ValueError(f"geometry decoder must output 4 channels, got {net[-1].weight.shape[0]}")
    if net[0].weight.shape[1] != 6:
        raise ValueError(f"geometry decoder must take the 6-dim positional encoding, got {net[0].weight.shape[1]}")
    x = positional_encoding(grid.vertices)
    out = np.tanh(_stack_forward(net, x, np.asarray(w, dtype=np.float64))[-1])
    bound = 1.0 / grid.resolution
    return GeometryField(sdf=out[:, 0], deform=out[:, 1:] * bound, deform_bound=bound)


def toy_geometry_field_vjp(
    grid: TetGrid,
    w: np.ndarray,
    net: list[ModFCLayer],
    d_sdf: np.ndarray,
    d_deform: np.ndarray,
):
    """VJP of ``toy_geometry_field``: (layer grads, d_w)."""
    w = np.asarray(w, dtype=np.float64)
    x = positional_encoding(grid.vertices)
    acts = _stack_forward(net, x, w)
    t = np.tanh(acts[-1])
    bound = 1.0 / grid.resolution
    up = np.concatenate([np.asarray(d_sdf)[:, None], np.asarray(d_deform) * bound], axis=1)
    up = up * (1.0 - t * t)
    layer_grads, _, d_w = _stack_vjp(net, acts, w, up)
    return layer_grads, d_w
