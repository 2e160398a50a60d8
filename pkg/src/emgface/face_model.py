"""Procedural morphable face model with a differentiable splat renderer.

The model is a deformed surface grid: a neutral face-like height field plus
orthonormal linear bases for identity (shape) and expression (expression +
eyelids + jaw) deformations.  Rendering projects vertices through a scaled
orthographic camera and deposits one isotropic Gaussian splat per vertex,
shaded by a Lambertian-style term on grid normals.  Everything downstream of
the parameter vectors is built from differentiable torch ops, so gradients
of rendered intensity with respect to any parameter block are exact.

Conventions
-----------
* Model space: +x right, +y up, +z toward the camera.
* Pose vector (6,): three rotation angles in radians (applied as
  ``Rx @ Ry @ Rz``), two image-plane translations as fractions of image
  width/height, one log-scale.
* Image coordinates are continuous, ``(col, row)`` in ``[0, W] x [0, H]``
  with the pixel ``(i, j)`` covering ``[i, i+1) x [j, j+1)`` (center at
  ``+0.5``); row grows downward.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np
import torch

from .config import ModelConfig

_KERNEL_RADIUS_SIGMAS = 4.5
_KERNEL_OFFSET = math.exp(-0.5 * _KERNEL_RADIUS_SIGMAS**2)
_REFERENCE_RESOLUTION = 64


@dataclass
class FaceParams:
    """One face configuration: identity, expression, and rigid pose."""

    shape_coeffs: torch.Tensor  # (n_shape,)
    expression: torch.Tensor  # (n_expression,)
    eyelids: torch.Tensor  # (2,)
    jaw: torch.Tensor  # (3,)
    pose: torch.Tensor  # (6,): rotations(3), translation(2), log-scale(1)

    @staticmethod
    def zeros(n_shape: int, n_expression: int, dtype: torch.dtype = torch.float32) -> "FaceParams":
        return FaceParams(
            shape_coeffs=torch.zeros(n_shape, dtype=dtype),
            expression=torch.zeros(n_expression, dtype=dtype),
            eyelids=torch.zeros(2, dtype=dtype),
            jaw=torch.zeros(3, dtype=dtype),
            pose=torch.zeros(6, dtype=dtype),
        )

    def validate(self, model: "ToyMorphableModel") -> None:
        expected = {
            "shape_coeffs": model.n_shape,
            "expression": model.n_expression,
            "eyelids": 2,
            "jaw": 3,
            "pose": 6,
        }
        for name, size in expected.items():
            value = getattr(self, name)
            if not isinstance(value, torch.Tensor) or value.ndim != 1 or value.shape[0] != size:
                got = tuple(value.shape) if isinstance(value, torch.Tensor) else type(value).__name__
                raise ValueError(f"FaceParams.{name}: expected a 1-d tensor of length {size}, got {got}")

    def expression_triplet(self) -> torch.Tensor:
        """Concatenated expression + eyelids + jaw vector (the non-rigid,
        non-identity block that the expression-consistency losses compare)."""
        return torch.cat([self.expression, self.eyelids, self.jaw])

    def to(self, dtype: torch.dtype) -> "FaceParams":
        return FaceParams(*(getattr(self, f.name).to(dtype) for f in fields(self)))

    def detach(self) -> "FaceParams":
        return FaceParams(*(getattr(self, f.name).detach() for f in fields(self)))

    def clone(self) -> "FaceParams":
        return FaceParams(*(getattr(self, f.name).clone() for f in fields(self)))


@dataclass
class ToyMorphableModel:
    """Frozen model data plus the render constants baked into the world."""

    base_vertices: torch.Tensor  # (V, 3) float64
    shape_basis: torch.Tensor  # (V, 3, n_shape)
    expression_basis: torch.Tensor  # (V, 3, n_expression + 5)
    albedo: torch.Tensor  # (V,)
    landmark_indices: torch.Tensor  # (K,) long
    grid_rows: int
    grid_cols: int
    splat_sigma: float
    splat_gain: float
    ambient: float
    base_scale: float
    coverage_threshold: float

    @property
    def n_vertices(self) -> int:
        return self.base_vertices.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[2] - 5

    @property
    def n_landmarks(self) -> int:
        return self.landmark_indices.shape[0]


@dataclass
class GeometryRender:
    """Result of rendering one parameter set."""

    image: torch.Tensor  # (H, W) in [0, 1]
    landmarks2d: torch.Tensor  # (K, 2) continuous (x, y) image coords
    coverage: torch.Tensor  # (H, W) bool: intensity above the coverage threshold


@dataclass
class PixelMask:
    """Bookkeeping for one seeded sparse-retention draw."""

    keep: torch.Tensor  # (H, W) float 0/1
    retention: float
    seed: int
    coverage_count: int
    kept_count: int


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def _gaussian2(u: np.ndarray, v: np.ndarray, cu: float, cv: float, su: float, sv: float) -> np.ndarray:
    return np.exp(-(((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))


def _mirrored(u: np.ndarray, v: np.ndarray, cu: float, cv: float, su: float, sv: float) -> np.ndarray:
    """A left/right pair of bumps, exactly even in u."""
    return _gaussian2(u, v, cu, cv, su, sv) + _gaussian2(u, v, -cu, cv, su, sv)


def _neutral_surface(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = 0.80 * u * (0.82 + 0.18 * np.sqrt(np.clip(1.0 - v * v, 0.0, None)))
    y = v.copy()
    z = (
        0.52 * _gaussian2(u, v, 0.0, 0.0, np.sqrt(0.62), np.sqrt(0.85))
        + 0.30 * _gaussian2(u, v, 0.0, -0.05, np.sqrt(0.018), 0.42)
        + 0.10 * _gaussian2(u, v, 0.0, -0.32, np.sqrt(0.02), 0.10)
        - 0.10 * _mirrored(u, v, 0.40, 0.30, np.sqrt(0.035), 0.16)
        + 0.07 * _gaussian2(u, v, 0.0, 0.52, np.sqrt(0.45), 0.10)
        + 0.06 * _gaussian2(u, v, 0.0, -0.55, np.sqrt(0.06), 0.07)
        + 0.08 * _gaussian2(u, v, 0.0, -0.88, np.sqrt(0.08), 0.12)
        + 0.06 * _mirrored(u, v, 0.48, 0.05, np.sqrt(0.05), 0.22)
    )
    return x, y, z


def _neutral_albedo(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    a = (
        0.72
        + 0.12 * _gaussian2(u, v, 0.0, 0.0, np.sqrt(0.5), np.sqrt(0.6))
        - 0.22 * _mirrored(u, v, 0.40, 0.30, np.sqrt(0.035), 0.16)
        - 0.12 * _mirrored(u, v, 0.38, 0.50, np.sqrt(0.03), 0.05)
        - 0.15 * _gaussian2(u, v, 0.0, -0.55, np.sqrt(0.05), 0.05)
    )
    return np.clip(a, 0.05, 0.95)


def _smooth_field(rng: np.random.Generator, u: np.ndarray, v: np.ndarray, z_bias: float = 1.0) -> np.ndarray:
    """Random low-order polynomial displacement field, (V, 3)."""
    pu = np.stack([np.ones_like(u), u, u * u, u**3], axis=1)  # (V, 4)
    pv = np.stack([np.ones_like(v), v, v * v, v**3], axis=1)
    out = np.zeros((u.shape[0], 3))
    for d, w in enumerate((1.0, 1.0, z_bias)):
        coeff = rng.normal(size=(4, 4))
        out[:, d] = w * np.einsum("vi,ij,vj->v", pu, coeff, pv)
    return out


_EXPRESSION_REGIONS = (
    ("mouth", 0.0, -0.55, np.sqrt(0.12), 0.18),
    ("brows", 0.0, 0.55, np.sqrt(0.5), 0.12),
    ("eyes", None, None, None, None),  # handled as a mirrored pair
    ("mouth_wide", 0.0, -0.55, np.sqrt(0.30), 0.22),
    ("cheeks", None, None, None, None),
    ("lower_face", 0.0, -0.80, np.sqrt(0.5), 0.20),
    ("nose", 0.0, -0.10, np.sqrt(0.06), 0.25),
    ("global", 0.0, 0.0, np.sqrt(1.4), np.sqrt(1.4)),
)


def _region_weight(name: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if name == "eyes":
        return _mirrored(u, v, 0.40, 0.30, 0.16, 0.14)
    if name == "cheeks":
        return _mirrored(u, v, 0.45, 0.05, 0.20, 0.30)
    if name == "eye_plus":
        return _gaussian2(u, v, 0.40, 0.30, 0.16, 0.14)
    if name == "eye_minus":
        return _gaussian2(u, v, -0.40, 0.30, 0.16, 0.14)
    for rname, cu, cv, su, sv in _EXPRESSION_REGIONS:
        if rname == name and cu is not None:
            return _gaussian2(u, v, cu, cv, su, sv)
    raise KeyError(name)


def build_toy_model(config: ModelConfig) -> ToyMorphableModel:
    """Construct the procedural model for a config (deterministic in the seed)."""
    rows, cols = config.grid_rows, config.grid_cols
    if rows < 3 or cols < 3:
        raise ValueError("grid must be at least 3x3")
    r_idx, c_idx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    u = ((c_idx - (cols - 1) / 2) / ((cols - 1) / 2)).reshape(-1)
    v = ((r_idx - (rows - 1) / 2) / ((rows - 1) / 2)).reshape(-1)

    x, y, z = _neutral_surface(u, v)
    base = np.stack([x, y, z], axis=1)
    albedo = _neutral_albedo(u, v)

    rng = np.random.default_rng(config.basis_seed)
    taper = np.exp(-(u * u + v * v) / 1.8)

    columns: list[np.ndarray] = []
    for _ in range(config.n_shape):
        col = _smooth_field(rng, u, v, z_bias=1.6) * taper[:, None]
        columns.append(col)

    region_cycle = [name for name, *_ in _EXPRESSION_REGIONS]
    for k in range(config.n_expression):
        name = region_cycle[k % len(region_cycle)]
        weight = _region_weight(name, u, v)
        col = _smooth_field(rng, u, v, z_bias=1.2) * weight[:, None]
        columns.append(col)
    for side in ("eye_plus", "eye_minus"):
        weight = _region_weight(side, u, v)
        col = _smooth_field(rng, u, v) * 0.3 * weight[:, None]
        col[:, 1] -= weight  # dominant lid-closing motion
        columns.append(col)
    lower = _region_weight("lower_face", u, v)
    for direction in ((0.0, -1.0, 0.35), (0.6, 0.0, 0.2), (0.0, -0.2, 1.0)):
        col = _smooth_field(rng, u, v) * 0.25 * lower[:, None]
        col += lower[:, None] * np.asarray(direction)[None, :]
        columns.append(col)

    # Joint Gram-Schmidt over the flattened columns (two passes for stability).
    flat = np.stack([c.reshape(-1) for c in columns], axis=1)  # (3V, n_cols)
    for _ in range(2):
        for j in range(flat.shape[1]):
            for i in range(j):
                flat[:, j] -= (flat[:, i] @ flat[:, j]) * flat[:, i]
            norm = np.linalg.norm(flat[:, j])
            if norm < 1e-9:
                raise RuntimeError("degenerate basis column during orthonormalization")
            flat[:, j] /= norm
    n_cols = flat.shape[1]
    # Orthonormal columns spread one coefficient unit over all 3V entries
    # (per-vertex RMS displacement ~ 1/sqrt(3V), well under a pixel at the
    # working resolution).  Scale them up so unit coefficients move the
    # surface by a clearly visible amount while staying mutually orthogonal.
    flat *= config.basis_gain
    basis = flat.reshape(base.shape[0], 3, n_cols)

    landmark_rc = _default_landmarks(rows, cols)
    landmark_indices = np.asarray([r * cols + c for r, c in landmark_rc], dtype=np.int64)
    if config.n_landmarks != len(landmark_indices):
        raise ValueError(
            f"n_landmarks={config.n_landmarks} unsupported; the procedural layout defines {len(landmark_indices)}"
        )

    return ToyMorphableModel(
        base_vertices=torch.from_numpy(base),
        shape_basis=torch.from_numpy(basis[:, :, : config.n_shape].copy()),
        expression_basis=torch.from_numpy(basis[:, :, config.n_shape :].copy()),
        albedo=torch.from_numpy(albedo),
        landmark_indices=torch.from_numpy(landmark_indices),
        grid_rows=rows,
        grid_cols=cols,
        splat_sigma=config.splat_sigma,
        splat_gain=config.splat_gain,
        ambient=config.ambient,
        base_scale=config.base_scale,
        coverage_threshold=config.coverage_threshold,
    )


def _default_landmarks(rows: int, cols: int) -> list[tuple[int, int]]:
    """17 landmarks: one midline point plus eight exact left/right pairs.

    Expressed for the default 15x17 grid; scaled proportionally otherwise
    (the midline column requires an odd column count).
    """
    if cols % 2 == 0:
        raise ValueError("landmark layout needs an odd column count (true midline)")
    mid = cols // 2
    rr = (rows - 1) / 14.0  # row positions defined on the 15-row reference
    cc = (cols - 1) / 16.0

    def rc(r15: int, c17: int) -> tuple[int, int]:
        return (round(r15 * rr), round(mid + (c17 - 8) * cc))

    pairs = [
        (9, 2),  # inner eye corners
        (9, 5),  # outer eye corners
        (11, 3),  # brow midpoints
        (3, 3),  # mouth corners
        (5, 1),  # nostril flanks
        (3, 5),  # jawline
        (7, 6),  # cheekbones
        (10, 6),  # temples
    ]
    out = [rc(5, 8)]  # nose tip on the midline
    for r15, off in pairs:
        out.append(rc(r15, 8 - off))
        out.append(rc(r15, 8 + off))
    return out


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def build_mesh(model: ToyMorphableModel, params: FaceParams) -> torch.Tensor:
    """Neutral vertices plus linear shape and expression deformation, (V, 3)."""
    params.validate(model)
    dtype = params.shape_coeffs.dtype
    base = model.base_vertices.to(dtype)
    shape_disp = torch.einsum("vck,k->vc", model.shape_basis.to(dtype), params.shape_coeffs)
    expr_vec = params.expression_triplet()
    expr_disp = torch.einsum("vck,k->vc", model.expression_basis.to(dtype), expr_vec)
    return base + shape_disp + expr_disp


def rotation_matrix(angles: torch.Tensor) -> torch.Tensor:
    """Rx @ Ry @ Rz from three angles in radians."""
    rx, ry, rz = angles[0], angles[1], angles[2]
    one = torch.ones((), dtype=angles.dtype)
    zero = torch.zeros((), dtype=angles.dtype)
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    mx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    my = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    mz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    return mx @ my @ mz


def _camera(pose: torch.Tensor, base_scale: float):
    scale = base_scale * torch.exp(pose[5])
    return scale, pose[3], pose[4]


def transform_vertices(vertices: torch.Tensor, pose: torch.Tensor) -> torch.Tensor:
    """Apply the rigid rotation (translation/scale act in the image plane)."""
    return vertices @ rotation_matrix(pose[:3]).T


def project_points(
    rotated: torch.Tensor, pose: torch.Tensor, base_scale: float, resolution: int
) -> torch.Tensor:
    """Rotated model-space points -> continuous (x, y) image coordinates."""
    scale, tx, ty = _camera(pose, base_scale)
    px = (0.5 + scale * rotated[:, 0] + tx) * resolution
    py = (0.5 - scale * rotated[:, 1] + ty) * resolution
    return torch.stack([px, py], dim=1)


def project_landmarks(
    model: ToyMorphableModel, vertices: torch.Tensor, pose: torch.Tensor, resolution: int
) -> torch.Tensor:
    """(K, 2) image coordinates of the landmark vertices."""
    rotated = transform_vertices(vertices, pose)
    return project_points(rotated[model.landmark_indices], pose, model.base_scale, resolution)


def _grid_normals(rotated: torch.Tensor, rows: int, cols: int) -> torch.Tensor:
    grid = rotated.reshape(rows, cols, 3)
    tu = torch.cat(
        [
            grid[:, 1:2] - grid[:, 0:1],
            (grid[:, 2:] - grid[:, :-2]) * 0.5,
            grid[:, -1:] - grid[:, -2:-1],
        ],
        dim=1,
    )
    tv = torch.cat(
        [
            grid[1:2] - grid[0:1],
            (grid[2:] - grid[:-2]) * 0.5,
            grid[-1:] - grid[-2:-1],
        ],
        dim=0,
    )
    # Grid rows increase with +y and columns with +x, so cross(tu, tv)
    # points toward +z (the camera side).
    normal = torch.cross(tu.reshape(-1, 3), tv.reshape(-1, 3), dim=1)
    norm = torch.linalg.norm(normal, dim=1, keepdim=True)
    return normal / (norm + 1e-9)


_LIGHT_DIR = (0.25, 0.35, 0.90)


def _smooth_relu(x: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    return 0.5 * (x + torch.sqrt(x * x + eps))


def render_geometry(
    model: ToyMorphableModel, params: FaceParams, resolution: int
) -> GeometryRender:
    """Differentiable splat render of one parameter set.

    Each vertex deposits an isotropic Gaussian (truncated to zero,
    continuously, at 4 sigma) of amplitude ``gain * albedo * shading``;
    overlapping splats sum and the image is clipped to [0, 1].
    """
    if resolution < 16:
        raise ValueError(f"resolution must be at least 16, got {resolution}")
    params.validate(model)
    dtype = params.shape_coeffs.dtype

    vertices = build_mesh(model, params)
    rotated = transform_vertices(vertices, params.pose)
    centers = project_points(rotated, params.pose, model.base_scale, resolution)

    normals = _grid_normals(rotated, model.grid_rows, model.grid_cols)
    light = torch.tensor(_LIGHT_DIR, dtype=dtype)
    light = light / torch.linalg.norm(light)
    shade = model.ambient + (1.0 - model.ambient) * _smooth_relu(normals @ light)
    amplitude = model.splat_gain * model.albedo.to(dtype) * shade

    sigma = model.splat_sigma * resolution / _REFERENCE_RESOLUTION
    half = int(math.ceil(_KERNEL_RADIUS_SIGMAS * sigma)) + 1
    offs = torch.arange(-half, half + 1)
    oy, ox = torch.meshgrid(offs, offs, indexing="ij")
    ox = ox.reshape(-1)
    oy = oy.reshape(-1)

    base_ix = torch.floor(centers[:, 0]).long()
    base_iy = torch.floor(centers[:, 1]).long()
    pix_x = base_ix[:, None] + ox[None, :]
    pix_y = base_iy[:, None] + oy[None, :]
    dx = (pix_x.to(dtype) + 0.5) - centers[:, 0:1]
    dy = (pix_y.to(dtype) + 0.5) - centers[:, 1:2]
    kernel = torch.clamp(
        torch.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) - _KERNEL_OFFSET, min=0.0
    )
    values = amplitude[:, None] * kernel

    inside = (pix_x >= 0) & (pix_x < resolution) & (pix_y >= 0) & (pix_y < resolution)
    values = values * inside.to(dtype)
    flat_idx = (pix_y.clamp(0, resolution - 1) * resolution + pix_x.clamp(0, resolution - 1)).reshape(-1)
    image = torch.zeros(resolution * resolution, dtype=dtype).index_add(0, flat_idx, values.reshape(-1))
    image = torch.clamp(image.reshape(resolution, resolution), 0.0, 1.0)

    landmarks = project_points(rotated[model.landmark_indices], params.pose, model.base_scale, resolution)
    coverage = image.detach() > model.coverage_threshold
    return GeometryRender(image=image, landmarks2d=landmarks, coverage=coverage)


def sample_pixels(
    image: torch.Tensor, render: GeometryRender, retention: float, seed: int
) -> tuple[torch.Tensor, PixelMask]:
    """Keep an exact seeded fraction of the render's coverage pixels.

    ``image`` is (H, W) or (H, W, C) and must match the render resolution.
    Exactly ``floor(retention * |coverage|)`` pixels survive; everything
    else (including all pixels outside coverage) is zeroed.
    """
    if not 0.0 <= retention <= 1.0:
        raise ValueError(f"retention must be within [0, 1], got {retention}")
    coverage = render.coverage
    if image.shape[:2] != coverage.shape:
        raise ValueError(
            f"image spatial shape {tuple(image.shape[:2])} does not match render {tuple(coverage.shape)}"
        )
    coords = np.argwhere(coverage.cpu().numpy())
    n_cov = len(coords)
    kept = int(math.floor(retention * n_cov))
    keep = torch.zeros(coverage.shape, dtype=image.dtype)
    if kept > 0:
        rng = np.random.default_rng(seed)
        chosen = coords[rng.permutation(n_cov)[:kept]]
        keep[chosen[:, 0], chosen[:, 1]] = 1.0
    mask = PixelMask(keep=keep, retention=retention, seed=seed, coverage_count=n_cov, kept_count=kept)
    masked = image * (keep if image.ndim == 2 else keep[:, :, None])
    return masked, mask


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT_TAG = "emgface-toy-face/1"
_ARRAY_FIELDS = ("base_vertices", "shape_basis", "expression_basis", "albedo", "landmark_indices")


def save_model(model: ToyMorphableModel, path: str, sidecar: bool = False) -> None:
    """Write the model to JSON (arrays as nested row-major lists).

    With ``sidecar=True`` the arrays are additionally stored in an ``.npz``
    next to the JSON and preferred on load; both routes round-trip
    bit-exactly.
    """
    payload: dict = {"format": _FORMAT_TAG}
    for name in _ARRAY_FIELDS:
        payload[name] = getattr(model, name).cpu().numpy().tolist()
    for name in ("grid_rows", "grid_cols", "splat_sigma", "splat_gain", "ambient", "base_scale", "coverage_threshold"):
        payload[name] = getattr(model, name)
    if sidecar:
        sidecar_name = os.path.basename(path) + ".npz"
        arrays = {name: getattr(model, name).cpu().numpy() for name in _ARRAY_FIELDS}
        np.savez(os.path.join(os.path.dirname(path) or ".", sidecar_name), **arrays)
        payload["sidecar"] = sidecar_name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path: str) -> ToyMorphableModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _FORMAT_TAG:
        raise ValueError(f"unrecognized model format tag {payload.get('format')!r} in {path}")
    arrays: dict[str, np.ndarray] = {}
    sidecar_name = payload.get("sidecar")
    if sidecar_name:
        sidecar_path = os.path.join(os.path.dirname(path) or ".", sidecar_name)
        if os.path.exists(sidecar_path):
            with np.load(sidecar_path) as npz:
                arrays = {name: npz[name] for name in _ARRAY_FIELDS}
    if not arrays:
        for name in _ARRAY_FIELDS:
            dtype = np.int64 if name == "landmark_indices" else np.float64
            arrays[name] = np.asarray(payload[name], dtype=dtype)
    return ToyMorphableModel(
        base_vertices=torch.from_numpy(arrays["base_vertices"]),
        shape_basis=torch.from_numpy(arrays["shape_basis"]),
        expression_basis=torch.from_numpy(arrays["expression_basis"]),
        albedo=torch.from_numpy(arrays["albedo"]),
        landmark_indices=torch.from_numpy(arrays["landmark_indices"].astype(np.int64)),
        grid_rows=payload["grid_rows"],
        grid_cols=payload["grid_cols"],
        splat_sigma=payload["splat_sigma"],
        splat_gain=payload["splat_gain"],
        ambient=payload["ambient"],
        base_scale=payload["base_scale"],
        coverage_threshold=payload["coverage_threshold"],
    )
