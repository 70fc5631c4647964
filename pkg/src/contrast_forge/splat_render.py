"""Differentiable renderer for anisotropic 3D Gaussians.

Forward: project each Gaussian to the image plane with the first-order
(EWA) Jacobian, bin by 16x16 tiles, depth-sort front to back, and
alpha-composite::

    c(p) = sum_i c_i sigma_i prod_{j<i} (1 - sigma_j) + bg prod_j (1 - sigma_j)
    sigma_i = alpha_i exp(-0.5 d^T Sigma'^-1 d),  d = p - mean2d_i

sigma is clamped to <= 0.99 and contributions below 1/255 are skipped,
both mirrored exactly in the backward pass.

Backward: exact analytic gradients of the compositing equation with
respect to all activated parameters, chained through the activations
(exp for scales, sigmoid for opacity, quaternion normalization) to the
stored parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, InvalidParameterError

_CHUNK = 8192  # splats composited per vectorized block


@dataclass
class GaussianCloud:
    """Optimizable splat soup.

    positions (N,3); log_scales (N,3); rotations (N,4) quaternions in
    (w,x,y,z) order, normalized before use; colors (N,3) RGB in [0,1];
    opacities (N,) stored as logits.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            positions=np.zeros((0, 3), dtype=np.float32),
            log_scales=np.zeros((0, 3), dtype=np.float32),
            rotations=np.zeros((0, 4), dtype=np.float32),
            colors=np.zeros((0, 3), dtype=np.float32),
            opacities=np.zeros((0,), dtype=np.float32),
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            colors=self.colors.copy(),
            opacities=self.opacities.copy(),
        )

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.astype(dtype),
            log_scales=self.log_scales.astype(dtype),
            rotations=self.rotations.astype(dtype),
            colors=self.colors.astype(dtype),
            opacities=self.opacities.astype(dtype),
        )

    def activated_alphas(self) -> np.ndarray:
        return _sigmoid(self.opacities)

    def activated_scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def validate(self) -> None:
        n = len(self)
        shapes = {
            "positions": (n, 3), "log_scales": (n, 3),
            "rotations": (n, 4), "colors": (n, 3), "opacities": (n,),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise InvalidParameterError(
                    f"{name} has shape {arr.shape}, expected {want}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} has non-finite entries")
        if n and np.any(np.linalg.norm(self.rotations, axis=1) < 1e-12):
            raise InvalidParameterError("zero-norm quaternion")
        if n and (self.colors.min() < -1e-6 or self.colors.max() > 1 + 1e-6):
            raise InvalidParameterError("colors outside [0,1]")


@dataclass(frozen=True)
class CameraPose:
    """Spherical camera sample looking at a fixed target."""

    distance: float
    fovy_deg: float
    elevation_deg: float
    azimuth_deg: float
    target: tuple = (0.0, 0.0, 0.0)
    width: int = 64
    height: int = 64
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if self.distance <= 0:
            raise InvalidParameterError("camera distance must be > 0")
        if not 0.0 < self.fovy_deg < 180.0:
            raise InvalidParameterError("fovy must be in (0, 180) degrees")

    def eye(self) -> np.ndarray:
        el = math.radians(self.elevation_deg)
        az = math.radians(self.azimuth_deg)
        offset = np.array([
            math.cos(el) * math.sin(az),
            math.sin(el),
            math.cos(el) * math.cos(az),
        ])
        return np.asarray(self.target, dtype=np.float64) + self.distance * offset

    def view_matrix(self) -> np.ndarray:
        """World -> camera rigid transform; camera x right, y down, z forward."""
        eye = self.eye()
        fwd = np.asarray(self.target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        if abs(fwd @ up) > 0.999:
            up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        view = np.eye(4)
        view[0, :3] = right
        view[1, :3] = down
        view[2, :3] = fwd
        view[:3, 3] = -view[:3, :3] @ eye
        return view

    def focals(self) -> tuple:
        fy = self.height / (2.0 * math.tan(math.radians(self.fovy_deg) / 2.0))
        return fy, fy  # square pixels


@dataclass(frozen=True)
class RenderSettings:
    tile_size: int = 16
    sigma_clamp: float = 0.99
    alpha_skip: float = 1.0 / 255.0
    cov_reg: float = 0.3       # px^2 added to the 2D covariance diagonal
    radius_factor: float = 3.5  # tile-binning radius in projected sigmas
    dtype: type = np.float32


DEFAULT_SETTINGS = RenderSettings()
DOUBLE_SETTINGS = RenderSettings(dtype=np.float64)


@dataclass
class ProjectionCache:
    means2d: np.ndarray   # (N,2) pixel coords
    covs2d: np.ndarray    # (N,2,2) pre-regularization
    conics: np.ndarray    # (N,2,2) inverse of regularized covariance
    depths: np.ndarray    # (N,) camera-space z
    radii: np.ndarray     # (N,) binning radius in pixels
    culled: np.ndarray    # (N,) bool
    t_cam: np.ndarray     # (N,3) camera-space centers
    rot_mats: np.ndarray  # (N,3,3) from normalized quaternions
    view: np.ndarray      # (4,4)
    fx: float
    fy: float


@dataclass
class RenderOutput:
    image: np.ndarray  # (H,W,3)
    alpha: np.ndarray  # (H,W)
    camera: CameraPose
    background: np.ndarray
    settings: RenderSettings
    proj: ProjectionCache | None
    tile_order: dict = field(default_factory=dict)  # (ty,tx) -> sorted splat idx


@dataclass
class CloudGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    mean2d_norm: np.ndarray  # per-splat |dL/d mean2d|, densify statistic

    def finite(self) -> bool:
        return all(
            np.all(np.isfinite(a)) for a in (
                self.positions, self.log_scales, self.rotations,
                self.colors, self.opacities,
            )
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Normalized quaternions (N,4) wxyz -> rotation matrices (N,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=1).reshape(-1, 3, 3)


def _quat_rotmat_jacobian(q: np.ndarray) -> np.ndarray:
    """d(R entries)/d(normalized quaternion): (N,3,3,4)."""
    n = q.shape[0]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros(n)
    jac = np.empty((n, 3, 3, 4))
    jac[:, 0, 0] = np.stack([zero, zero, -4 * y, -4 * z], axis=1)
    jac[:, 0, 1] = np.stack([-2 * z, 2 * y, 2 * x, -2 * w], axis=1)
    jac[:, 0, 2] = np.stack([2 * y, 2 * z, 2 * w, 2 * x], axis=1)
    jac[:, 1, 0] = np.stack([2 * z, 2 * y, 2 * x, 2 * w], axis=1)
    jac[:, 1, 1] = np.stack([zero, -4 * x, zero, -4 * z], axis=1)
    jac[:, 1, 2] = np.stack([-2 * x, -2 * w, 2 * z, 2 * y], axis=1)
    jac[:, 2, 0] = np.stack([-2 * y, 2 * z, -2 * w, 2 * x], axis=1)
    jac[:, 2, 1] = np.stack([2 * x, 2 * w, 2 * z, 2 * y], axis=1)
    jac[:, 2, 2] = np.stack([zero, -4 * x, -4 * y, zero], axis=1)
    return jac


def project_gaussian(
    cloud: GaussianCloud,
    camera: CameraPose,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> ProjectionCache:
    """Project every splat: 2D mean, 2x2 EWA covariance, view depth.

    The returned covariance is the raw projection; the renderer adds the
    diagonal regularization when forming conics. Splats behind the near
    plane (or past the far plane) are flagged culled, never an error.
    """
    dtype = settings.dtype
    n = len(cloud)
    view = camera.view_matrix().astype(dtype)
    fx, fy = camera.focals()
    cx, cy = camera.width / 2.0, camera.height / 2.0

    pos = cloud.positions.astype(dtype)
    t = pos @ view[:3, :3].T + view[:3, 3]
    culled = (t[:, 2] <= camera.near) | (t[:, 2] > camera.far)

    qn = cloud.rotations.astype(dtype)
    norms = np.linalg.norm(qn, axis=1, keepdims=True)
    if n and np.any(norms < 1e-12):
        raise InvalidParameterError("zero-norm quaternion")
    qn = qn / np.maximum(norms, 1e-30)
    rot = quat_to_rotmat(qn)
    scales = np.exp(cloud.log_scales.astype(dtype))
    m3 = rot * scales[:, None, :]          # R @ diag(s)
    cov3d = m3 @ np.swapaxes(m3, 1, 2)

    tz = np.where(culled, np.asarray(1.0, dtype), t[:, 2]).astype(dtype)
    jac = np.zeros((n, 2, 3), dtype=dtype)
    jac[:, 0, 0] = fx / tz
    jac[:, 0, 2] = -fx * t[:, 0] / tz**2
    jac[:, 1, 1] = fy / tz
    jac[:, 1, 2] = -fy * t[:, 1] / tz**2
    m = jac @ view[:3, :3]
    covs2d = m @ cov3d @ np.swapaxes(m, 1, 2)

    means2d = np.stack([
        fx * t[:, 0] / tz + cx,
        fy * t[:, 1] / tz + cy,
    ], axis=1)

    reg = covs2d + settings.cov_reg * np.eye(2, dtype=dtype)
    det = reg[:, 0, 0] * reg[:, 1, 1] - reg[:, 0, 1] * reg[:, 1, 0]
    bad = ~np.isfinite(det) | (det <= 0)
    culled = culled | bad
    safe_det = np.where(culled, np.asarray(1.0, dtype), det)
    conics = np.empty_like(reg)
    conics[:, 0, 0] = reg[:, 1, 1] / safe_det
    conics[:, 1, 1] = reg[:, 0, 0] / safe_det
    conics[:, 0, 1] = -reg[:, 0, 1] / safe_det
    conics[:, 1, 0] = -reg[:, 1, 0] / safe_det

    mid = 0.5 * (reg[:, 0, 0] + reg[:, 1, 1])
    disc = np.sqrt(np.maximum(
        (0.5 * (reg[:, 0, 0] - reg[:, 1, 1]))**2 + reg[:, 0, 1]**2, 0.0
    ))
    radii = settings.radius_factor * np.sqrt(np.maximum(mid + disc, 0.0))

    return ProjectionCache(
        means2d=means2d, covs2d=covs2d, conics=conics, depths=t[:, 2],
        radii=radii, culled=culled, t_cam=t, rot_mats=rot, view=view,
        fx=fx, fy=fy,
    )


def _as_background(background, dtype) -> np.ndarray:
    bg = np.asarray(background, dtype=dtype)
    if bg.ndim == 0:
        bg = np.full(3, float(bg), dtype=dtype)
    if bg.shape != (3,):
        raise ContractError("background must be scalar or RGB triple")
    return bg


def _tile_pixels(x0, x1, y0, y1, dtype):
    xs = np.arange(x0, x1, dtype=dtype) + dtype(0.5)
    ys = np.arange(y0, y1, dtype=dtype) + dtype(0.5)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)  # (P,2)


def _tile_candidates(proj, x0, x1, y0, y1):
    m, r = proj.means2d, proj.radii
    keep = (
        ~proj.culled
        & (m[:, 0] + r >= x0) & (m[:, 0] - r < x1)
        & (m[:, 1] + r >= y0) & (m[:, 1] - r < y1)
    )
    cand = np.flatnonzero(keep)
    order = np.argsort(proj.depths[cand], kind="stable")
    return cand[order]


def _composite_tile(proj, cand, pix, colors, alphas, settings, bg):
    """Front-to-back compositing over one tile; returns color, alpha."""
    dtype = settings.dtype
    p = pix.shape[0]
    color = np.zeros((p, 3), dtype=dtype)
    trans = np.ones(p, dtype=dtype)
    for lo in range(0, cand.shape[0], _CHUNK):
        idx = cand[lo: lo + _CHUNK]
        sigma = _sigma_block(proj, idx, pix, alphas, settings)
        one_minus = 1.0 - sigma
        t_within = np.cumprod(one_minus, axis=0)
        t_excl = np.empty_like(t_within)
        t_excl[0] = trans
        if idx.shape[0] > 1:
            t_excl[1:] = trans * t_within[:-1]
        w = sigma * t_excl
        color += np.einsum("kp,kc->pc", w, colors[idx])
        trans = trans * t_within[-1]
    color += bg[None, :] * trans[:, None]
    return color, 1.0 - trans


def _sigma_block(proj, idx, pix, alphas, settings):
    """Clamped, skip-thresholded sigma for a block of splats x pixels."""
    d = proj.means2d[idx][:, None, :] - pix[None, :, :]
    con = proj.conics[idx]
    q = (
        con[:, None, 0, 0] * d[:, :, 0]**2
        + 2.0 * con[:, None, 0, 1] * d[:, :, 0] * d[:, :, 1]
        + con[:, None, 1, 1] * d[:, :, 1]**2
    )
    sigma = alphas[idx][:, None] * np.exp(-0.5 * q)
    sigma = np.minimum(sigma, settings.sigma_clamp)
    if settings.alpha_skip > 0.0:
        sigma = np.where(sigma < settings.alpha_skip, 0.0, sigma)
    return sigma.astype(settings.dtype)


def render(
    cloud: GaussianCloud,
    camera: CameraPose,
    background=1.0,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> RenderOutput:
    """Render the cloud; caches enough state for render_backward."""
    dtype = settings.dtype
    h, w = camera.height, camera.width
    bg = _as_background(background, dtype)
    image = np.empty((h, w, 3), dtype=dtype)
    alpha = np.zeros((h, w), dtype=dtype)
    if len(cloud) == 0:
        image[:] = bg
        return RenderOutput(image=image, alpha=alpha, camera=camera,
                            background=bg, settings=settings, proj=None)

    proj = project_gaussian(cloud, camera, settings)
    colors = cloud.colors.astype(dtype)
    alphas = _sigmoid(cloud.opacities.astype(dtype))

    ts = settings.tile_size
    tile_order = {}
    for ty in range(0, h, ts):
        for tx in range(0, w, ts):
            y1, x1 = min(ty + ts, h), min(tx + ts, w)
            cand = _tile_candidates(proj, tx, x1, ty, y1)
            tile_order[(ty, tx)] = cand
            pix = _tile_pixels(tx, x1, ty, y1, dtype)
            color, a = _composite_tile(
                proj, cand, pix, colors, alphas, settings, bg
            )
            image[ty:y1, tx:x1] = color.reshape(y1 - ty, x1 - tx, 3)
            alpha[ty:y1, tx:x1] = a.reshape(y1 - ty, x1 - tx)
    return RenderOutput(image=image, alpha=alpha, camera=camera,
                        background=bg, settings=settings, proj=proj,
                        tile_order=tile_order)


def render_backward(
    cloud: GaussianCloud,
    camera: CameraPose,
    output: RenderOutput,
    image_gradient: np.ndarray,
) -> CloudGradients:
    """Exact gradients of sum(image * image_gradient) w.r.t. stored params.

    Also reports the per-splat 2D positional gradient magnitude used by
    the densification policy.
    """
    settings = output.settings
    dtype = settings.dtype
    h, w = camera.height, camera.width
    if image_gradient.shape != (h, w, 3):
        raise ContractError(
            f"image_gradient shape {image_gradient.shape} != {(h, w, 3)}"
        )
    n = len(cloud)
    grads = CloudGradients(
        positions=np.zeros((n, 3), dtype=dtype),
        log_scales=np.zeros((n, 3), dtype=dtype),
        rotations=np.zeros((n, 4), dtype=dtype),
        colors=np.zeros((n, 3), dtype=dtype),
        opacities=np.zeros(n, dtype=dtype),
        mean2d_norm=np.zeros(n, dtype=dtype),
    )
    if n == 0:
        return grads
    if output.proj is None:
        raise ContractError("output was not produced by render() on this cloud")

    proj = output.proj
    g_img = image_gradient.astype(dtype)
    colors = cloud.colors.astype(dtype)
    alphas = _sigmoid(cloud.opacities.astype(dtype))

    d_mean2d = np.zeros((n, 2), dtype=dtype)
    d_cov2d = np.zeros((n, 2, 2), dtype=dtype)
    d_alpha = np.zeros(n, dtype=dtype)

    ts = settings.tile_size
    for (ty, tx), cand in output.tile_order.items():
        if cand.shape[0] == 0:
            continue
        y1, x1 = min(ty + ts, h), min(tx + ts, w)
        pix = _tile_pixels(tx, x1, ty, y1, dtype)
        g_tile = g_img[ty:y1, tx:x1].reshape(-1, 3)
        f_tile = output.image[ty:y1, tx:x1].reshape(-1, 3)
        _backward_tile(
            proj, cand, pix, g_tile, f_tile, colors, alphas,
            output.background, settings, grads, d_mean2d, d_cov2d, d_alpha,
        )

    _projection_backward(cloud, proj, settings,
                         d_mean2d, d_cov2d, d_alpha, grads)
    grads.mean2d_norm = np.linalg.norm(d_mean2d, axis=1)
    return grads


def _backward_tile(proj, cand, pix, g_tile, f_tile, colors, alphas, bg,
                   settings, grads, d_mean2d, d_cov2d, d_alpha):
    dtype = settings.dtype
    trans = np.ones(pix.shape[0], dtype=dtype)
    prefix = np.zeros((pix.shape[0], 3), dtype=dtype)
    for lo in range(0, cand.shape[0], _CHUNK):
        idx = cand[lo: lo + _CHUNK]
        d = proj.means2d[idx][:, None, :] - pix[None, :, :]
        con = proj.conics[idx]
        q = (
            con[:, None, 0, 0] * d[:, :, 0]**2
            + 2.0 * con[:, None, 0, 1] * d[:, :, 0] * d[:, :, 1]
            + con[:, None, 1, 1] * d[:, :, 1]**2
        )
        gauss = np.exp(-0.5 * q).astype(dtype)
        sigma_raw = alphas[idx][:, None] * gauss
        clamped = sigma_raw > settings.sigma_clamp
        sigma = np.minimum(sigma_raw, settings.sigma_clamp)
        if settings.alpha_skip > 0.0:
            skipped = sigma < settings.alpha_skip
            sigma = np.where(skipped, 0.0, sigma)
        else:
            skipped = np.zeros_like(clamped)

        one_minus = 1.0 - sigma
        t_within = np.cumprod(one_minus, axis=0)
        t_excl = np.empty_like(t_within)
        t_excl[0] = trans
        if idx.shape[0] > 1:
            t_excl[1:] = trans * t_within[:-1]
        weight = sigma * t_excl

        # dL/dc_i: sigma-weighted coverage.
        grads.colors[idx] += np.einsum("kp,pc->kc", weight, g_tile)

        # Suffix color behind each splat (background included):
        # S_i = F - cumsum_{k<=i}(c_k w_k).
        contrib = weight[:, :, None] * colors[idx][:, None, :]
        prefix_new = prefix + np.cumsum(contrib, axis=0)
        suffix = f_tile[None, :, :] - prefix_new

        d_sigma = np.einsum(
            "kpc,pc->kp",
            t_excl[:, :, None] * colors[idx][:, None, :]
            - suffix / one_minus[:, :, None],
            g_tile,
        )
        live = ~(clamped | skipped)
        d_sigma = np.where(live, d_sigma, 0.0)

        d_alpha_blk = np.einsum("kp,kp->k", d_sigma, gauss)
        d_gauss = d_sigma * alphas[idx][:, None]
        d_q = -0.5 * gauss * d_gauss

        # q = d^T A d: dq/dmean = 2 A d, dq/dA = d d^T.
        ad = np.einsum("kab,kpb->kpa", con, d)
        d_mean2d[idx] += 2.0 * np.einsum("kp,kpa->ka", d_q, ad)
        d_conic = np.einsum("kp,kpa,kpb->kab", d_q, d, d)
        # A = inv(Sigma2D): dL/dSigma = -A dL/dA A.
        d_cov2d[idx] += -np.einsum("kab,kbc,kcd->kad", con, d_conic, con)
        d_alpha[idx] += d_alpha_blk

        prefix = prefix_new[-1] if idx.shape[0] else prefix
        trans = trans * t_within[-1]


def _projection_backward(cloud, proj, settings, d_mean2d, d_cov2d,
                         d_alpha, grads):
    """Chain image-space gradients to the stored splat parameters."""
    dtype = settings.dtype
    live = ~proj.culled
    fx, fy = proj.fx, proj.fy
    rv = proj.view[:3, :3]
    t = proj.t_cam
    tz = np.where(live, t[:, 2], 1.0).astype(dtype)

    # Opacity logits: alpha = sigmoid(o).
    alphas = _sigmoid(cloud.opacities.astype(dtype))
    grads.opacities[:] = np.where(
        live, d_alpha * alphas * (1.0 - alphas), 0.0
    )
    grads.colors[:] = np.where(live[:, None], grads.colors, 0.0)
    d_mean2d[:] = np.where(live[:, None], d_mean2d, 0.0)
    d_cov2d[:] = np.where(live[:, None, None], d_cov2d, 0.0)

    jac = np.zeros((len(cloud), 2, 3), dtype=dtype)
    jac[:, 0, 0] = fx / tz
    jac[:, 0, 2] = -fx * t[:, 0] / tz**2
    jac[:, 1, 1] = fy / tz
    jac[:, 1, 2] = -fy * t[:, 1] / tz**2
    m = jac @ rv

    scales = np.exp(cloud.log_scales.astype(dtype))
    rot = proj.rot_mats
    lmat = rot * scales[:, None, :]
    cov3d = lmat @ np.swapaxes(lmat, 1, 2)

    # Sigma2D = M Sigma3D M^T (+ const reg).
    d_cov3d = np.einsum("kca,kcd,kdb->kab", m, d_cov2d, m)
    sym = d_cov2d + np.swapaxes(d_cov2d, 1, 2)
    d_m = np.einsum("kac,kcd,kdb->kab", sym, m, cov3d)
    d_jac = d_m @ rv.T

    # Mean projection: m = (fx tx/tz + cx, fy ty/tz + cy).
    d_t = np.einsum("kba,kb->ka", jac, d_mean2d)
    # Jacobian entries depend on t as well.
    d_t[:, 0] += d_jac[:, 0, 2] * (-fx / tz**2)
    d_t[:, 1] += d_jac[:, 1, 2] * (-fy / tz**2)
    d_t[:, 2] += (
        d_jac[:, 0, 0] * (-fx / tz**2)
        + d_jac[:, 1, 1] * (-fy / tz**2)
        + d_jac[:, 0, 2] * (2.0 * fx * t[:, 0] / tz**3)
        + d_jac[:, 1, 2] * (2.0 * fy * t[:, 1] / tz**3)
    )
    grads.positions[:] = np.where(live[:, None], d_t @ rv, 0.0)

    # Sigma3D = L L^T with L = R diag(exp(s)).
    d_l = np.einsum("kab,kbc->kac", d_cov3d + np.swapaxes(d_cov3d, 1, 2), lmat)
    d_rot = d_l * scales[:, None, :]
    d_scale = np.einsum("kac,kac->kc", rot, d_l)
    grads.log_scales[:] = np.where(live[:, None], d_scale * scales, 0.0)

    # R(q_hat) with q_hat = q / |q|.
    q = cloud.rotations.astype(dtype)
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / np.maximum(norms, 1e-30)
    jac_r = _quat_rotmat_jacobian(qn).astype(dtype)
    d_qn = np.einsum("kab,kabc->kc", d_rot, jac_r)
    d_q = (d_qn - qn * np.sum(qn * d_qn, axis=1, keepdims=True)) / norms
    grads.rotations[:] = np.where(live[:, None], d_q, 0.0)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio between two images in [0, peak]."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64)
                         - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)
