"""Software renderer: grayscale side-view images of the cloth plus pinhole projection.

Pure numpy rasterization (triangles from the cloth grid, depth buffer, flat
Lambertian shading with two-sided normals) so that renders are bit-identical
across machines. Pixel convention: integer coordinates are pixel centers,
(0, 0) is the top-left pixel, and the vertical field of view spans pixel rows
0 .. image_size-1 exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

NEAR_PLANE = 1e-4  # m; points closer than this (or behind) cannot be projected


class ConfigurationError(ValueError):
    """Raised for degenerate camera or visual configurations."""


class ProjectionError(ValueError):
    """Raised when projecting a point at or behind the camera plane."""


@dataclass
class CameraConfig:
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    vertical_fov: float = 1.05  # radians
    image_size: int = 100

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=float)
        self.look_at = np.asarray(self.look_at, dtype=float)
        self.up = np.asarray(self.up, dtype=float)
        if np.allclose(self.eye, self.look_at):
            raise ConfigurationError("camera eye and look_at coincide")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ConfigurationError(f"vertical_fov must be in (0, pi), got {self.vertical_fov}")
        if self.image_size < 1:
            raise ConfigurationError(f"image_size must be >= 1, got {self.image_size}")
        forward = self.look_at - self.eye
        if np.linalg.norm(np.cross(forward, self.up)) < 1e-12:
            raise ConfigurationError("camera up vector is parallel to the view direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward) camera axes."""
        forward = self.look_at - self.eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, forward)
        return right, up, forward


@dataclass
class VisualConfig:
    light_direction: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.3, 0.9]))
    ambient: float = 0.2
    diffuse: float = 0.7
    pixel_noise_sigma: float = 2.0   # gray levels
    camera_jitter: float = 0.0       # m, the per-episode eye perturbation amplitude

    def __post_init__(self):
        self.light_direction = np.asarray(self.light_direction, dtype=float)
        norm = np.linalg.norm(self.light_direction)
        if norm < 1e-12:
            raise ConfigurationError("light_direction must be a nonzero vector")
        self.light_direction = self.light_direction / norm
        if not (0.0 <= self.ambient <= 1.0 and 0.0 <= self.diffuse <= 1.0):
            raise ConfigurationError("ambient and diffuse must lie in [0, 1]")
        if self.ambient + self.diffuse > 1.0 + 1e-12:
            raise ConfigurationError("ambient + diffuse must not exceed 1")
        if self.pixel_noise_sigma < 0.0:
            raise ConfigurationError("pixel_noise_sigma must be >= 0")
        if self.camera_jitter < 0.0:
            raise ConfigurationError("camera_jitter must be >= 0")


def _camera_coords(points: np.ndarray, cam: CameraConfig) -> np.ndarray:
    right, up, forward = cam.basis()
    d = np.atleast_2d(points) - cam.eye
    return np.stack([d @ right, d @ up, d @ forward], axis=1)


def _pixel_from_camera(xyz: np.ndarray, cam: CameraConfig) -> np.ndarray:
    """Camera-space coords -> continuous pixel (u, v); assumes z > 0."""
    tan_half = math.tan(cam.vertical_fov / 2.0)
    x_ndc = xyz[:, 0] / (xyz[:, 2] * tan_half)
    y_ndc = xyz[:, 1] / (xyz[:, 2] * tan_half)
    scale = (cam.image_size - 1) / 2.0
    u = (x_ndc + 1.0) * scale
    v = (1.0 - y_ndc) * scale
    return np.stack([u, v], axis=1)


def project(point, cam: CameraConfig) -> tuple[float, float]:
    """Pinhole projection of one world point to continuous pixel coordinates."""
    xyz = _camera_coords(np.asarray(point, dtype=float), cam)
    if xyz[0, 2] <= NEAR_PLANE:
        raise ProjectionError("point lies at or behind the camera plane")
    uv = _pixel_from_camera(xyz, cam)
    return float(uv[0, 0]), float(uv[0, 1])


def project_many(points, cam: CameraConfig, clamp_near: bool = False) -> np.ndarray:
    """Project (K, 3) points to (K, 2) pixels; optionally clamp depth to the near plane.

    With clamp_near, points behind the camera are pushed onto the near plane
    instead of raising, which keeps label generation total.
    """
    xyz = _camera_coords(np.asarray(points, dtype=float), cam)
    if clamp_near:
        xyz[:, 2] = np.maximum(xyz[:, 2], NEAR_PLANE)
    elif np.any(xyz[:, 2] <= NEAR_PLANE):
        raise ProjectionError("point lies at or behind the camera plane")
    return _pixel_from_camera(xyz, cam)


def cloth_triangles(grid_n: int) -> np.ndarray:
    """Vertex index triples triangulating the cloth grid, two per cell."""
    tris = []
    for j in range(grid_n - 1):
        for i in range(grid_n - 1):
            a = j * grid_n + i
            b = a + 1
            c = a + grid_n
            d = c + 1
            tris.append((a, b, c))
            tris.append((b, d, c))
    return np.array(tris, dtype=int)


def render(points, cam: CameraConfig, vis: VisualConfig,
           noise_seed: int | None = None,
           triangles: np.ndarray | None = None) -> np.ndarray:
    """Rasterize a triangulated point set to a grayscale uint8 image (background 0).

    points is (N, 3) world coordinates; triangles defaults to the cloth grid
    triangulation (N must then be a perfect square). Flat Lambertian shading
    per triangle with two-sided normals: intensity = ambient + diffuse * |n . l|.
    Triangles with any vertex at or behind the near plane are skipped. Gaussian
    pixel noise (sigma in gray levels, seeded by noise_seed) is added last and
    clamped to [0, 255].
    """
    size = cam.image_size
    image = np.zeros((size, size), dtype=float)
    inv_depth = np.zeros((size, size), dtype=float)

    verts = np.asarray(points, dtype=float)
    if verts.size == 0:
        return _finish_image(image, vis, noise_seed)
    if triangles is None:
        grid_n = math.isqrt(verts.shape[0])
        if grid_n * grid_n != verts.shape[0]:
            raise ConfigurationError("point count is not a square grid; pass triangles")
        triangles = cloth_triangles(grid_n)

    xyz = _camera_coords(verts, cam)
    in_front = xyz[:, 2] > NEAR_PLANE
    uv = np.full((len(verts), 2), np.nan)
    if in_front.any():
        uv[in_front] = _pixel_from_camera(xyz[in_front], cam)

    tris = triangles
    cols, rows = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))

    for t in tris:
        if not in_front[t].all():
            continue
        p0, p1, p2 = uv[t[0]], uv[t[1]], uv[t[2]]
        denom = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(denom) < 1e-12:
            continue

        lo_u = max(int(math.ceil(min(p0[0], p1[0], p2[0]))), 0)
        hi_u = min(int(math.floor(max(p0[0], p1[0], p2[0]))), size - 1)
        lo_v = max(int(math.ceil(min(p0[1], p1[1], p2[1]))), 0)
        hi_v = min(int(math.floor(max(p0[1], p1[1], p2[1]))), size - 1)
        if lo_u > hi_u or lo_v > hi_v:
            continue

        normal = np.cross(verts[t[1]] - verts[t[0]], verts[t[2]] - verts[t[0]])
        norm = np.linalg.norm(normal)
        if norm < 1e-15:
            continue
        lambert = abs(float(normal @ vis.light_direction)) / norm
        gray = round(255.0 * min(1.0, vis.ambient + vis.diffuse * lambert))

        pu = cols[lo_v:hi_v + 1, lo_u:hi_u + 1]
        pv = rows[lo_v:hi_v + 1, lo_u:hi_u + 1]
        w1 = ((pu - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (pv - p0[1])) / denom
        w2 = ((p1[0] - p0[0]) * (pv - p0[1]) - (pu - p0[0]) * (p1[1] - p0[1])) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)

        # 1/z interpolates affinely in screen space, giving correct depth order.
        w = w0 / xyz[t[0], 2] + w1 / xyz[t[1], 2] + w2 / xyz[t[2], 2]
        patch_depth = inv_depth[lo_v:hi_v + 1, lo_u:hi_u + 1]
        update = inside & (w > patch_depth)
        patch_depth[update] = w[update]
        image[lo_v:hi_v + 1, lo_u:hi_u + 1][update] = gray

    return _finish_image(image, vis, noise_seed)


def _finish_image(image: np.ndarray, vis: VisualConfig,
                  noise_seed: int | None) -> np.ndarray:
    if vis.pixel_noise_sigma > 0.0 and noise_seed is not None:
        rng = np.random.Generator(np.random.PCG64(noise_seed))
        image = image + rng.normal(0.0, vis.pixel_noise_sigma, image.shape)
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


@dataclass
class VisualRanges:
    """Uniform sampling ranges for the per-episode camera and lighting draw.

    Every field is a (low, high) pair; the camera eye is perturbed by a
    uniform offset in [-jitter, +jitter] per axis, with jitter itself drawn
    from the camera_jitter range.
    """

    base_camera: CameraConfig
    fov: tuple = (1.0, 1.1)
    ambient: tuple = (0.15, 0.30)
    diffuse: tuple = (0.45, 0.65)
    noise_sigma: tuple = (1.0, 3.0)
    light_azimuth: tuple = (0.5, 2.0)
    light_elevation: tuple = (0.6, 1.2)
    camera_jitter: tuple = (0.0, 0.02)

    def __post_init__(self):
        for name in ("fov", "ambient", "diffuse", "noise_sigma",
                     "light_azimuth", "light_elevation", "camera_jitter"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"inverted range for {name}: ({lo}, {hi})")
        if self.fov[0] <= 0.0 or self.fov[1] >= math.pi:
            raise ConfigurationError("fov range must lie inside (0, pi)")
        if self.noise_sigma[0] < 0.0 or self.camera_jitter[0] < 0.0:
            raise ConfigurationError("noise_sigma and camera_jitter must be >= 0")
        if self.ambient[1] + self.diffuse[1] > 1.0 + 1e-12:
            raise ConfigurationError("ambient + diffuse upper bounds exceed 1")


def sample_visual_config(rng: np.random.Generator,
                         ranges: VisualRanges) -> tuple[CameraConfig, VisualConfig]:
    """Draw one episode's camera and lighting, each field independent uniform."""
    fov = rng.uniform(*ranges.fov)
    jitter = rng.uniform(*ranges.camera_jitter)
    eye_offset = rng.uniform(-jitter, jitter, size=3) if jitter > 0.0 else np.zeros(3)
    azimuth = rng.uniform(*ranges.light_azimuth)
    elevation = rng.uniform(*ranges.light_elevation)
    ambient = rng.uniform(*ranges.ambient)
    diffuse = rng.uniform(*ranges.diffuse)
    sigma = rng.uniform(*ranges.noise_sigma)

    base = ranges.base_camera
    cam = CameraConfig(
        eye=base.eye + eye_offset,
        look_at=base.look_at.copy(),
        up=base.up.copy(),
        vertical_fov=fov,
        image_size=base.image_size,
    )
    light = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    vis = VisualConfig(
        light_direction=light,
        ambient=ambient,
        diffuse=diffuse,
        pixel_noise_sigma=sigma,
        camera_jitter=jitter,
    )
    return cam, vis


def default_camera(center, distance: float = 0.6, elevation: float = math.pi / 4,
                   image_size: int = 100) -> CameraConfig:
    """Side-view camera: offset from the scene center along -x, elevated."""
    center = np.asarray(center, dtype=float)
    eye = center + np.array([-distance * math.cos(elevation), 0.0,
                             distance * math.sin(elevation)])
    return CameraConfig(eye=eye, look_at=center, image_size=image_size)


def write_pgm(image: np.ndarray, path) -> None:
    """Write a grayscale uint8 image as binary PGM (P5)."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) written by write_pgm."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {magic!r}")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"unsupported max gray value {maxval}")
        data = fh.read(w * h)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
