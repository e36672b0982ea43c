"""Flat-shaded painter's-algorithm renderer for the 2D driving world.

Scene geometry arrives as world-frame faces grouped into passes (road,
markings, boxes). Ground-plane passes cannot occlude standing boxes from a
roof-height camera, so pass order gives correct occlusion without a z-buffer;
within the box pass the caller supplies faces already ordered far-to-near
(all cameras share the ego origin, so one ordering serves every view). A
per-pixel depth map of the last write is kept for tests and tooling.
"""
import numpy as np

from bevdrive import kernels

Z_NEAR = 0.15

SKY = np.array([134, 186, 227], dtype=np.uint8)
GROUND = np.array([96, 128, 78], dtype=np.uint8)
ROAD = np.array([105, 105, 105], dtype=np.uint8)
MARKING = np.array([238, 238, 230], dtype=np.uint8)
VEHICLE = np.array([200, 44, 44], dtype=np.uint8)
PEDESTRIAN = np.array([44, 84, 214], dtype=np.uint8)

BACKGROUND_DEPTH = 1.0e6


def world_to_ego(pts, ego_xy, ego_yaw):
    """(N, 3) world points -> ego frame (x forward, y left, z up)."""
    c, s = np.cos(ego_yaw), np.sin(ego_yaw)
    out = np.empty_like(pts)
    dx = pts[:, 0] - ego_xy[0]
    dy = pts[:, 1] - ego_xy[1]
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = pts[:, 2]
    return out


def _clip_near(poly_cam):
    """Sutherland-Hodgman clip of a camera-frame polygon against z >= Z_NEAR."""
    out = []
    n = len(poly_cam)
    for i in range(n):
        a = poly_cam[i]
        b = poly_cam[(i + 1) % n]
        a_in = a[2] >= Z_NEAR
        b_in = b[2] >= Z_NEAR
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (Z_NEAR - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.asarray(out) if len(out) >= 3 else None


def box_faces(center_xy, yaw, half_len, half_wid, height):
    """Six world-frame quad faces of an upright box on the ground plane."""
    c, s = np.cos(yaw), np.sin(yaw)
    ex = np.array([c, s, 0.0]) * half_len
    ey = np.array([-s, c, 0.0]) * half_wid
    base = np.array([center_xy[0], center_xy[1], 0.0])
    up = np.array([0.0, 0.0, height])
    lo = [base + sx * ex + sy * ey for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
    hi = [p + up for p in lo]
    faces = [np.array([hi[0], hi[1], hi[2], hi[3]])]  # top
    for i in range(4):
        j = (i + 1) % 4
        faces.append(np.array([lo[i], lo[j], hi[j], hi[i]]))
    return faces


class ScenePass:
    """One painter pass: world-frame convex quads with per-face colors.

    Quads are painted in array order, so callers express occlusion by
    ordering (far to near). faces: (F, 4, 3) float64, colors: (F, 3) uint8.
    """

    def __init__(self, faces, colors):
        self.faces = np.asarray(faces, dtype=np.float64).reshape(-1, 4, 3)
        self.colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)


def render_views(passes, ego_xy, ego_yaw, rig):
    """Rasterize every scene pass into each camera of the rig.

    Passes are concatenated (paint order = face order) and transformed into
    all cameras with one einsum; quads fully in front of the near plane take
    a fully vectorized path, only near-plane crossers hit the per-face
    clipper. Returns (images uint8 (n_cam, H, W, 3), depths (n_cam, H, W)).
    """
    H, W = rig.height, rig.width
    n = rig.n_cameras
    images = np.empty((n, H, W, 3), dtype=np.uint8)
    depths = np.full((n, H, W), BACKGROUND_DEPTH, dtype=np.float64)
    horizon = int(np.ceil(rig.cy))
    faces = [sp.faces for sp in passes if len(sp.faces)]
    images[:, :horizon] = SKY
    images[:, horizon:] = GROUND
    if not faces:
        return images, depths
    faces = np.concatenate(faces, axis=0)
    colors = np.concatenate([sp.colors for sp in passes if len(sp.faces)], axis=0)
    F = len(faces)
    ego_pts = world_to_ego(faces.reshape(-1, 3), ego_xy, ego_yaw)
    # all cameras share one origin, so a single subtraction serves every view
    rel = ego_pts - rig.translations[0]
    pc_all = np.einsum("nk,ckm->cnm", rel, rig.rotations).reshape(n, F, 4, 3)
    z_all = pc_all[:, :, :, 2]
    safe = np.where(z_all > 0, z_all, 1.0)
    u_all = rig.fx * pc_all[:, :, :, 0] / safe + rig.cx
    v_all = rig.fy * pc_all[:, :, :, 1] / safe + rig.cy
    zmin = z_all.min(axis=2)
    zmax = z_all.max(axis=2)
    alive = zmax >= Z_NEAR
    easy = alive & (zmin >= Z_NEAR)
    on_screen = easy & (u_all.max(axis=2) >= 0) & (u_all.min(axis=2) < W) \
        & (v_all.max(axis=2) >= 0) & (v_all.min(axis=2) < H)
    crossing = alive & ~easy
    for cam in range(n):
        vert_blocks, size_blocks, color_blocks, z_blocks = [], [], [], []
        vis = on_screen[cam]
        if vis.any():
            scr = np.stack([u_all[cam][vis], v_all[cam][vis]], axis=2)  # (M, 4, 2)
            e1 = scr[:, 1:3] - scr[:, 0:1]
            e2 = scr[:, 2:4] - scr[:, 0:1]
            area = (e1[:, :, 0] * e2[:, :, 1] - e1[:, :, 1] * e2[:, :, 0]).sum(axis=1)
            flip = area < 0
            scr[flip] = scr[flip, ::-1]
            keep = area != 0
            m = int(keep.sum())
            if m:
                vert_blocks.append(scr[keep].reshape(-1, 2))
                size_blocks.append(np.full(m, 4, dtype=np.int64))
                color_blocks.append(colors[vis][keep])
                z_blocks.append(z_all[cam][vis][keep].mean(axis=1))
        for fi in np.nonzero(crossing[cam])[0]:
            clipped = _clip_near(pc_all[cam, fi])
            if clipped is None:
                continue
            cu, cv = rig.project(clipped)
            if cu.max() < 0 or cu.min() >= W or cv.max() < 0 or cv.min() >= H:
                continue
            pscr = np.stack([cu, cv], axis=1)
            d1 = pscr[1:-1] - pscr[0]
            d2 = pscr[2:] - pscr[0]
            area = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]).sum()
            if area == 0.0:
                continue
            if area < 0:
                pscr = pscr[::-1].copy()
            vert_blocks.append(pscr)
            size_blocks.append(np.array([len(pscr)], dtype=np.int64))
            color_blocks.append(colors[fi:fi + 1])
            z_blocks.append(np.array([clipped[:, 2].mean()]))
        if not vert_blocks:
            continue
        verts = np.concatenate(vert_blocks, axis=0)
        sizes = np.concatenate(size_blocks)
        starts = np.zeros(len(sizes) + 1, dtype=np.int64)
        starts[1:] = np.cumsum(sizes)
        kernels.fill_polys(images[cam], depths[cam],
                           np.ascontiguousarray(verts, dtype=np.float64), starts,
                           np.ascontiguousarray(np.concatenate(color_blocks, axis=0)),
                           np.concatenate(z_blocks))
    return images, depths
