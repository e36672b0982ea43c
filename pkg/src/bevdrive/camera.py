"""Pinhole camera rig shared by the simulator's renderer and the BEV lift.

Conventions: ego frame is x forward, y left, z up; camera frame is x right,
y down, z forward (optical axis). Extrinsics map camera -> ego. Pixel (h, w)
has continuous image coordinates (u, v) = (w + 0.5, h + 0.5) at its center.
"""
import numpy as np

# camera axes expressed in the ego frame at zero yaw offset
_CAM_TO_EGO0 = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])

YAW_OFFSETS_DEG = (0.0, 60.0, -60.0, 120.0, -120.0, 180.0)


def _rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class CameraRig:
    """Six surround cameras with shared intrinsics.

    rotations: (6, 3, 3) camera->ego, translations: (6, 3) camera origin in
    the ego frame.
    """

    def __init__(self, height, width, hfov_deg=70.0, cam_height=1.6,
                 yaw_offsets_deg=YAW_OFFSETS_DEG):
        self.height = int(height)
        self.width = int(width)
        self.fx = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        self.fy = self.fx
        self.cx = width / 2.0
        self.cy = height / 2.0
        self.yaw_offsets = np.radians(np.asarray(yaw_offsets_deg, dtype=np.float64))
        self.rotations = np.stack([_rot_z(y) @ _CAM_TO_EGO0 for y in self.yaw_offsets])
        self.translations = np.tile(np.array([0.0, 0.0, cam_height]), (len(self.yaw_offsets), 1))

    @property
    def n_cameras(self):
        return len(self.yaw_offsets)

    def ego_to_cam(self, cam, pts_ego):
        """(N, 3) ego-frame points -> camera frame."""
        return (pts_ego - self.translations[cam]) @ self.rotations[cam]

    def cam_to_ego(self, cam, pts_cam):
        return pts_cam @ self.rotations[cam].T + self.translations[cam]

    def project(self, pts_cam):
        """Camera-frame points (N, 3) with z>0 -> continuous pixel coords (u, v)."""
        z = pts_cam[:, 2]
        u = self.fx * pts_cam[:, 0] / z + self.cx
        v = self.fy * pts_cam[:, 1] / z + self.cy
        return u, v

    def unproject(self, cam, u, v, depth):
        """Pixel coords + depth along the optical axis -> ego-frame points."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.asarray(depth, dtype=np.float64)
        x = (u - self.cx) / self.fx * d
        y = (v - self.cy) / self.fy * d
        pts = np.stack([x, y, d], axis=-1)
        return self.cam_to_ego(cam, pts.reshape(-1, 3)).reshape(pts.shape)

    def frustum_points(self, bins, feat_h, feat_w):
        """Ego-frame 3D location of every (camera, feature pixel, depth bin).

        Feature pixels are the full-resolution image downsampled by
        width/feat_w; returns (n_cameras, feat_h, feat_w, n_bins, 3).
        """
        ds_h = self.height / feat_h
        ds_w = self.width / feat_w
        u = (np.arange(feat_w) + 0.5) * ds_w
        v = (np.arange(feat_h) + 0.5) * ds_h
        out = np.empty((self.n_cameras, feat_h, feat_w, len(bins), 3))
        ugrid = np.broadcast_to(u[None, :, None], (feat_h, feat_w, len(bins)))
        vgrid = np.broadcast_to(v[:, None, None], (feat_h, feat_w, len(bins)))
        dgrid = np.broadcast_to(np.asarray(bins)[None, None, :], (feat_h, feat_w, len(bins)))
        for cam in range(self.n_cameras):
            out[cam] = self.unproject(cam, ugrid, vgrid, dgrid)
        return out
