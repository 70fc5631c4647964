"""Parametric humanoid body: blend shapes + linear blend skinning.

The bundled template is a 24-joint, ~1k-vertex humanoid with the same
mathematical structure as full-resolution licensed body models: a rest
mesh, additive shape/pose/expression displacement bases, a linear joint
regressor, and per-vertex skinning weights over the joint hierarchy.
Users who own a full-resolution asset can export it to the documented
JSON format (see ``load_body_asset``) and load it instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidParameterError, ParameterShapeError, SamplingError

# SMPL-style 24-joint hierarchy; index 0 is the root (pelvis).
JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot",
    "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hand", "right_hand",
]

PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17,
     18, 19, 20, 21],
    dtype=np.int64,
)

FACE_JOINTS = (15,)
HAND_JOINTS = (22, 23)


@dataclass(frozen=True)
class BodyTemplate:
    """Rest mesh plus the linear machinery that deforms and skins it.

    Shapes: vertices (V,3), faces (F,3), parents (J,), joint_regressor
    (J,V), skin_weights (V,J), shape_basis (V,3,S), pose_basis
    (V,3,9*(J-1)), expr_basis (V,3,E).
    """

    vertices: np.ndarray
    faces: np.ndarray
    parents: np.ndarray
    joint_regressor: np.ndarray
    skin_weights: np.ndarray
    shape_basis: np.ndarray
    pose_basis: np.ndarray
    expr_basis: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def shape_rank(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def expr_rank(self) -> int:
        return self.expr_basis.shape[2]

    @property
    def pose_rank(self) -> int:
        return self.pose_basis.shape[2]

    def validate(self) -> None:
        v, j = self.num_vertices, self.num_joints
        if self.vertices.shape != (v, 3):
            raise InvalidParameterError("vertices must be (V,3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise InvalidParameterError("faces must be (F,3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise InvalidParameterError("face index out of range")
        if self.joint_regressor.shape != (j, v):
            raise InvalidParameterError("joint_regressor must be (J,V)")
        if self.skin_weights.shape != (v, j):
            raise InvalidParameterError("skin_weights must be (V,J)")
        if np.any(self.skin_weights < 0):
            raise InvalidParameterError("skin weights must be non-negative")
        row_sums = self.skin_weights.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-6:
            raise InvalidParameterError("skin-weight rows must sum to 1")
        if self.pose_rank != 9 * (j - 1):
            raise InvalidParameterError("pose basis rank must be 9*(J-1)")


@dataclass
class BodyParams:
    """Shape, per-joint pose (axis-angle), and expression coefficients."""

    beta: np.ndarray
    theta: np.ndarray  # (J,3) axis-angle, radians; row 0 is the root
    psi: np.ndarray

    @classmethod
    def rest(cls, template: BodyTemplate) -> "BodyParams":
        return cls(
            beta=np.zeros(template.shape_rank),
            theta=np.zeros((template.num_joints, 3)),
            psi=np.zeros(template.expr_rank),
        )

    @property
    def body_pose(self) -> np.ndarray:
        keep = [j for j in range(self.theta.shape[0])
                if j not in FACE_JOINTS and j not in HAND_JOINTS]
        return self.theta[keep]

    @property
    def face_pose(self) -> np.ndarray:
        return self.theta[list(FACE_JOINTS)]

    @property
    def hand_pose(self) -> np.ndarray:
        return self.theta[list(HAND_JOINTS)]


@dataclass(frozen=True)
class PosedMesh:
    vertices: np.ndarray
    faces: np.ndarray


@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray
    normals: np.ndarray


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (J,3) -> rotation matrices (J,3,3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    single = aa.ndim == 1
    if single:
        aa = aa[None]
    angles = np.linalg.norm(aa, axis=1)
    out = np.tile(np.eye(3), (aa.shape[0], 1, 1))
    nz = angles > 1e-12
    if np.any(nz):
        axes = aa[nz] / angles[nz, None]
        x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
        zero = np.zeros_like(x)
        k = np.stack(
            [zero, -z, y, z, zero, -x, -y, x, zero], axis=1
        ).reshape(-1, 3, 3)
        s = np.sin(angles[nz])[:, None, None]
        c = (1.0 - np.cos(angles[nz]))[:, None, None]
        out[nz] = np.eye(3) + s * k + c * (k @ k)
    return out[0] if single else out


def pose_feature(theta: np.ndarray) -> np.ndarray:
    """Flattened deviation of non-root joint rotations from identity."""
    rots = rodrigues(theta[1:])
    return (rots - np.eye(3)).reshape(-1)


def _check_rank(name: str, got: int, want: int) -> None:
    if got != want:
        raise ParameterShapeError(
            f"{name}: parameter length {got} does not match basis rank {want}"
        )


def shaped_vertices(template: BodyTemplate, params: BodyParams) -> np.ndarray:
    """Rest vertices plus shape, pose-corrective, and expression offsets."""
    _check_rank("shape_basis", len(params.beta), template.shape_rank)
    _check_rank("expr_basis", len(params.psi), template.expr_rank)
    if params.theta.shape != (template.num_joints, 3):
        raise ParameterShapeError(
            f"pose_basis: theta shape {params.theta.shape} does not match "
            f"({template.num_joints}, 3)"
        )
    if not np.all(np.isfinite(params.theta)):
        raise InvalidParameterError("theta contains non-finite entries")
    disp = template.shape_basis @ np.asarray(params.beta, dtype=np.float64)
    disp = disp + template.pose_basis @ pose_feature(params.theta)
    disp = disp + template.expr_basis @ np.asarray(params.psi, dtype=np.float64)
    return template.vertices + disp


def joint_positions(template: BodyTemplate, beta: np.ndarray) -> np.ndarray:
    """Rest joint locations regressed from the shape-deformed vertices."""
    _check_rank("shape_basis", len(beta), template.shape_rank)
    shaped = template.vertices + template.shape_basis @ np.asarray(
        beta, dtype=np.float64
    )
    return template.joint_regressor @ shaped


def joint_world_transforms(
    template: BodyTemplate, params: BodyParams
) -> np.ndarray:
    """Per-joint 4x4 rest->posed transforms, composed along the hierarchy.

    Each returned transform already has the rest joint location folded in,
    so applying transform j to a rest-space point in joint j's region maps
    it to its posed world position.
    """
    if not np.all(np.isfinite(params.theta)):
        raise InvalidParameterError("theta contains non-finite entries")
    joints = joint_positions(template, params.beta)
    rots = rodrigues(params.theta)
    n = template.num_joints
    world = np.zeros((n, 4, 4))
    local = np.tile(np.eye(4), (n, 1, 1))
    local[:, :3, :3] = rots
    local[0, :3, 3] = joints[0]
    local[1:, :3, 3] = joints[1:] - joints[template.parents[1:]]
    world[0] = local[0]
    for j in range(1, n):
        world[j] = world[template.parents[j]] @ local[j]
    # Fold in -J_j so the transform acts on rest-space points directly.
    skinning = world.copy()
    skinning[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints)
    return skinning


def lbs_apply(
    vertices: np.ndarray, weights: np.ndarray, transforms: np.ndarray
) -> np.ndarray:
    """Blend per-joint transforms over vertices: the LBS core."""
    blended = np.einsum("vj,jab->vab", weights, transforms)
    homo = np.concatenate(
        [vertices, np.ones((vertices.shape[0], 1))], axis=1
    )
    return np.einsum("vab,vb->va", blended, homo)[:, :3]


def pose_mesh(template: BodyTemplate, params: BodyParams) -> PosedMesh:
    """Deform the template by params and skin it into the target pose."""
    shaped = shaped_vertices(template, params)
    transforms = joint_world_transforms(template, params)
    posed = lbs_apply(shaped, template.skin_weights, transforms)
    return PosedMesh(vertices=posed, faces=template.faces)


def sample_surface(mesh: PosedMesh, count: int, seed: int) -> SurfaceSamples:
    """Area-weighted uniform surface samples with face normals."""
    if count < 1:
        raise SamplingError("count must be >= 1")
    if mesh.faces.shape[0] < 1:
        raise SamplingError("mesh has no triangles")
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise SamplingError("mesh surface area is zero")
    rng = np.random.default_rng(seed)
    tri = rng.choice(areas.shape[0], size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    points = a[tri] + u[:, None] * (b - a)[tri] + v[:, None] * (c - a)[tri]
    norms = np.linalg.norm(cross[tri], axis=1, keepdims=True)
    normals = cross[tri] / np.maximum(norms, 1e-30)
    return SurfaceSamples(points=points, normals=normals)


# ---------------------------------------------------------------------------
# Asset file format (JSON, row-major nested lists).


_ASSET_FIELDS = (
    "vertices", "faces", "parents", "joint_regressor", "skin_weights",
    "shape_basis", "pose_basis", "expr_basis",
)


def save_body_asset(template: BodyTemplate, path, decimals: int = 7) -> None:
    """Write the documented single-JSON body asset."""

    def rounded(arr):
        return np.round(np.asarray(arr, dtype=np.float64), decimals).tolist()

    doc = {
        "vertices": rounded(template.vertices),
        "faces": template.faces.tolist(),
        "parents": template.parents.tolist(),
        "joint_regressor": rounded(template.joint_regressor),
        "skin_weights": rounded(template.skin_weights),
        "shape_basis": rounded(template.shape_basis),
        "pose_basis": rounded(template.pose_basis),
        "expr_basis": rounded(template.expr_basis),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_body_asset(path) -> BodyTemplate:
    """Load a body asset JSON and validate its invariants."""
    with open(path) as fh:
        doc = json.load(fh)
    missing = [k for k in _ASSET_FIELDS if k not in doc]
    if missing:
        raise InvalidParameterError(f"asset is missing fields: {missing}")
    template = BodyTemplate(
        vertices=np.asarray(doc["vertices"], dtype=np.float64),
        faces=np.asarray(doc["faces"], dtype=np.int64),
        parents=np.asarray(doc["parents"], dtype=np.int64),
        joint_regressor=np.asarray(doc["joint_regressor"], dtype=np.float64),
        skin_weights=np.asarray(doc["skin_weights"], dtype=np.float64),
        shape_basis=np.asarray(doc["shape_basis"], dtype=np.float64),
        pose_basis=np.asarray(doc["pose_basis"], dtype=np.float64),
        expr_basis=np.asarray(doc["expr_basis"], dtype=np.float64),
    )
    template.validate()
    return template


# ---------------------------------------------------------------------------
# Bundled humanoid construction.

# Nominal rest joint locations used to build the mesh (meters, +y up,
# +x = anatomical left, T-pose). The effective rest joints are whatever
# the regressor recovers from the built mesh.
_JOINT_REST = np.array([
    [0.00, 0.95, 0.00],   # pelvis
    [0.09, 0.91, 0.00],   # left_hip
    [-0.09, 0.91, 0.00],  # right_hip
    [0.00, 1.05, 0.00],   # spine1
    [0.10, 0.50, 0.00],   # left_knee
    [-0.10, 0.50, 0.00],  # right_knee
    [0.00, 1.16, 0.00],   # spine2
    [0.10, 0.10, 0.00],   # left_ankle
    [-0.10, 0.10, 0.00],  # right_ankle
    [0.00, 1.28, 0.00],   # spine3
    [0.10, 0.04, 0.10],   # left_foot
    [-0.10, 0.04, 0.10],  # right_foot
    [0.00, 1.45, 0.00],   # neck
    [0.06, 1.41, 0.00],   # left_collar
    [-0.06, 1.41, 0.00],  # right_collar
    [0.00, 1.55, 0.00],   # head
    [0.18, 1.40, 0.00],   # left_shoulder
    [-0.18, 1.40, 0.00],  # right_shoulder
    [0.44, 1.40, 0.00],   # left_elbow
    [-0.44, 1.40, 0.00],  # right_elbow
    [0.68, 1.40, 0.00],   # left_wrist
    [-0.68, 1.40, 0.00],  # right_wrist
    [0.78, 1.40, 0.00],   # left_hand
    [-0.78, 1.40, 0.00],  # right_hand
])


@dataclass
class _MeshAccumulator:
    vertices: list = field(default_factory=list)
    faces: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def add_tube(self, p0, p1, r0, r1, rings, segments, joint_pairs,
                 close_ends=False):
        """Tube from p0 to p1; joint_pairs is [(t, joint)] control points
        for blending skin weights along the axis parameter t."""
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        axis = p1 - p0
        length = np.linalg.norm(axis)
        axis = axis / length
        helper = np.array([0.0, 0.0, 1.0])
        if abs(axis @ helper) > 0.9:
            helper = np.array([1.0, 0.0, 0.0])
        u = np.cross(axis, helper)
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        base = len(self.vertices)
        nj = _JOINT_REST.shape[0]
        for ri, t in enumerate(np.linspace(0.0, 1.0, rings)):
            center = p0 + t * length * axis
            radius = (1.0 - t) * r0 + t * r1
            row = self._blend_weights(t, joint_pairs, nj)
            for si in range(segments):
                ang = 2.0 * np.pi * si / segments
                pt = center + radius * (np.cos(ang) * u + np.sin(ang) * w)
                self.vertices.append(pt)
                self.weights.append(row)
        for ri in range(rings - 1):
            for si in range(segments):
                a = base + ri * segments + si
                b = base + ri * segments + (si + 1) % segments
                c = a + segments
                d = b + segments
                self.faces.append([a, b, d])
                self.faces.append([a, d, c])
        if close_ends:
            for t, ring_start in ((0.0, base),
                                  (1.0, base + (rings - 1) * segments)):
                center = p0 + t * length * axis
                row = self._blend_weights(t, joint_pairs, nj)
                ci = len(self.vertices)
                self.vertices.append(center)
                self.weights.append(row)
                for si in range(segments):
                    a = ring_start + si
                    b = ring_start + (si + 1) % segments
                    tri = [a, ci, b] if t == 0.0 else [a, b, ci]
                    self.faces.append(tri)

    @staticmethod
    def _blend_weights(t, joint_pairs, num_joints):
        row = np.zeros(num_joints)
        if len(joint_pairs) == 1:
            row[joint_pairs[0][1]] = 1.0
            return row
        ts = [tp for tp, _ in joint_pairs]
        js = [j for _, j in joint_pairs]
        if t <= ts[0]:
            row[js[0]] = 1.0
            return row
        if t >= ts[-1]:
            row[js[-1]] = 1.0
            return row
        for k in range(len(ts) - 1):
            if ts[k] <= t <= ts[k + 1]:
                frac = (t - ts[k]) / (ts[k + 1] - ts[k])
                # smoothstep keeps ends rigid and the middle blended
                frac = frac * frac * (3.0 - 2.0 * frac)
                row[js[k]] = 1.0 - frac
                row[js[k + 1]] = frac
                return row
        raise AssertionError("unreachable")


def _smooth_field(rng, verts, scale):
    """Deterministic smooth per-vertex displacement field."""
    freq = rng.uniform(1.0, 4.0, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    amp = np.sin(verts @ freq + phase[0]) + 0.5 * np.cos(
        verts @ freq[::-1].copy() + phase[1]
    )
    return scale * amp[:, None] * direction[None, :]


def _build_humanoid() -> BodyTemplate:
    acc = _MeshAccumulator()
    J = _JOINT_REST

    def seg(a, b):
        return J[a], J[b]

    # torso: pelvis -> spine3 chain
    acc.add_tube(J[0] - [0, 0.06, 0], J[9] + [0, 0.13, 0], 0.155, 0.135,
                 rings=12, segments=14,
                 joint_pairs=[(0.12, 0), (0.40, 3), (0.62, 6), (0.86, 9)],
                 close_ends=True)
    # neck + head
    acc.add_tube(J[12] - [0, 0.02, 0], J[12] + [0, 0.06, 0], 0.05, 0.05,
                 rings=3, segments=10, joint_pairs=[(0.2, 9), (0.8, 12)])
    acc.add_tube(J[15] - [0, 0.05, 0], J[15] + [0, 0.17, 0], 0.085, 0.075,
                 rings=7, segments=12,
                 joint_pairs=[(0.15, 12), (0.45, 15)], close_ends=True)
    for side, hip, knee, ankle, foot in ((1, 1, 4, 7, 10), (-1, 2, 5, 8, 11)):
        # thigh, shin, foot
        acc.add_tube(*seg(hip, knee), 0.080, 0.058, rings=7, segments=11,
                     joint_pairs=[(0.15, hip), (0.88, knee)])
        acc.add_tube(*seg(knee, ankle), 0.056, 0.040, rings=7, segments=11,
                     joint_pairs=[(0.12, knee), (0.88, ankle)])
        acc.add_tube(J[ankle] - [0, 0.02, 0.03], J[foot] + [0, 0.0, 0.08],
                     0.044, 0.030, rings=4, segments=9,
                     joint_pairs=[(0.2, ankle), (0.75, foot)],
                     close_ends=True)
    for side, collar, sho, elb, wri, hand in (
        (1, 13, 16, 18, 20, 22), (-1, 14, 17, 19, 21, 23)
    ):
        acc.add_tube(*seg(collar, sho), 0.055, 0.052, rings=3, segments=9,
                     joint_pairs=[(0.3, collar), (0.8, sho)])
        acc.add_tube(*seg(sho, elb), 0.050, 0.042, rings=6, segments=10,
                     joint_pairs=[(0.15, sho), (0.88, elb)])
        acc.add_tube(*seg(elb, wri), 0.040, 0.030, rings=6, segments=10,
                     joint_pairs=[(0.12, elb), (0.88, wri)])
        acc.add_tube(J[wri], J[hand] + [side * 0.04, 0, 0], 0.032, 0.018,
                     rings=4, segments=8,
                     joint_pairs=[(0.2, wri), (0.7, hand)], close_ends=True)

    vertices = np.asarray(acc.vertices)
    faces = np.asarray(acc.faces, dtype=np.int64)
    weights = np.asarray(acc.weights)
    weights /= weights.sum(axis=1, keepdims=True)

    num_joints = J.shape[0]
    num_vertices = vertices.shape[0]

    # Joint regressor: inverse-distance weights over the 10 nearest verts.
    regressor = np.zeros((num_joints, num_vertices))
    for j in range(num_joints):
        d = np.linalg.norm(vertices - J[j], axis=1)
        nearest = np.argsort(d)[:10]
        inv = 1.0 / (d[nearest] + 1e-3)
        regressor[j, nearest] = inv / inv.sum()

    rng = np.random.default_rng(20240216)
    shape_rank, expr_rank = 10, 5
    shape_basis = np.stack(
        [_smooth_field(rng, vertices, 0.015) for _ in range(shape_rank)],
        axis=2,
    )
    # First two shape directions are interpretable: height and girth.
    centroid_y = vertices[:, 1].mean()
    shape_basis[:, :, 0] = 0.0
    shape_basis[:, 1, 0] = 0.08 * (vertices[:, 1] - centroid_y)
    radial = vertices.copy()
    radial[:, 1] = 0.0
    shape_basis[:, :, 1] = 0.05 * radial

    pose_rank = 9 * (num_joints - 1)
    pose_basis = np.zeros((num_vertices, 3, pose_rank))
    for j in range(1, num_joints):
        blend = (weights[:, j] > 0.05) & (weights[:, j] < 0.95)
        idx = np.flatnonzero(blend)
        if idx.size == 0:
            continue
        block = rng.normal(size=(idx.size, 3, 9)) * 0.002
        pose_basis[idx, :, 9 * (j - 1): 9 * j] = block

    head_region = weights[:, 15] > 0.3
    expr_basis = np.zeros((num_vertices, 3, expr_rank))
    for e in range(expr_rank):
        f = _smooth_field(rng, vertices, 0.004)
        expr_basis[head_region, :, e] = f[head_region]

    template = BodyTemplate(
        vertices=vertices,
        faces=faces,
        parents=PARENTS.copy(),
        joint_regressor=regressor,
        skin_weights=weights,
        shape_basis=shape_basis,
        pose_basis=pose_basis,
        expr_basis=expr_basis,
    )
    template.validate()
    return template


@lru_cache(maxsize=1)
def builtin_template() -> BodyTemplate:
    """The bundled humanoid (cached; treat as immutable)."""
    return _build_humanoid()
