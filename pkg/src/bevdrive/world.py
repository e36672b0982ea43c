"""Deterministic 2D driving world.

An episode follows a polyline route. The ego vehicle integrates a kinematic
bicycle model; NPC vehicles follow fixed lane offsets along the same route
with simple spacing braking; pedestrians walk straight paths on sidewalks or
across the road. Rewards: -k_c on collision, (v_m - v_c) when overspeeding,
otherwise 4*v_c*v_s / max(rho^2, ||p_c - p_w||^2) with v_s the cosine between
the velocity direction and the direction to the next waypoint.

All randomness flows through a counter-based Philox generator seeded at
reset, so (config, seed, action sequence) reproduces an episode bitwise.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from bevdrive import raster
from bevdrive.camera import CameraRig

WHEELBASE = 2.7
MAX_STEER = np.radians(35.0)
ACCEL_MAX = 3.0
BRAKE_MAX = 8.0
EGO_HALF_LEN = 2.25
EGO_HALF_WID = 1.0
VEHICLE_HALF_LEN = 2.25
VEHICLE_HALF_WID = 1.0
PED_HALF = 0.3
VEHICLE_HEIGHT = 1.5
PED_HEIGHT = 1.8
DASH_PERIOD = 4.0
DASH_LEN = 2.2
MARK_HALF_WIDTH = 0.12

DENSITY_PRESETS = {
    "low": (10, 10),
    "high": (20, 20),
    "paper_low": (50, 50),
    "paper_high": (100, 100),
}


class Polyline:
    """Arc-length parameterized 2D polyline."""

    def __init__(self, pts):
        self.pts = np.asarray(pts, dtype=np.float64)
        if len(self.pts) < 2:
            raise ValueError("route needs at least 2 waypoints")
        d = np.diff(self.pts, axis=0)
        self.seg_len = np.hypot(d[:, 0], d[:, 1])
        if np.any(self.seg_len <= 0):
            raise ValueError("route has zero-length segment")
        self.tangents = d / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def point_at(self, s):
        s = np.clip(s, 0.0, self.length)
        i = min(np.searchsorted(self.cum, s, side="right") - 1, len(self.seg_len) - 1)
        return self.pts[i] + self.tangents[i] * (s - self.cum[i])

    def tangent_at(self, s):
        s = np.clip(s, 0.0, self.length)
        i = min(np.searchsorted(self.cum, s, side="right") - 1, len(self.seg_len) - 1)
        return self.tangents[i]

    def normal_at(self, s):
        t = self.tangent_at(s)
        return np.array([-t[1], t[0]])  # left of travel direction

    def project(self, p):
        """Closest-point projection: (arc length s, signed lateral offset)."""
        a = self.pts[:-1]
        t = ((p - a) * self.tangents).sum(axis=1)
        t = np.clip(t, 0.0, self.seg_len)
        closest = a + self.tangents * t[:, None]
        d2 = ((p - closest) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        rel = p - closest[i]
        lat = self.tangents[i, 0] * rel[1] - self.tangents[i, 1] * rel[0]
        return float(self.cum[i] + t[i]), float(lat)

    def project_many(self, pts):
        """Vectorized closest-point projection over all segments."""
        a = self.pts[:-1]
        rel = pts[:, None, :] - a[None, :, :]
        t = (rel * self.tangents[None]).sum(axis=2)
        t = np.clip(t, 0.0, self.seg_len[None])
        closest = a[None] + self.tangents[None] * t[:, :, None]
        d2 = ((pts[:, None, :] - closest) ** 2).sum(axis=2)
        i = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        tan = self.tangents[i]
        relc = pts - closest[rows, i]
        lat = tan[:, 0] * relc[:, 1] - tan[:, 1] * relc[:, 0]
        return self.cum[i] + t[rows, i], lat


def _route_from_segments(segments, step=5.0):
    """Build a route from ('straight', length) / ('arc', radius, sweep_deg) parts."""
    pts = [np.zeros(2)]
    heading = 0.0
    for seg in segments:
        if seg[0] == "straight":
            length = seg[1]
            n = max(int(round(length / step)), 1)
            for _ in range(n):
                pts.append(pts[-1] + (length / n) * np.array([np.cos(heading), np.sin(heading)]))
        else:
            _, radius, sweep_deg = seg
            sweep = np.radians(sweep_deg)
            arc_len = abs(sweep) * radius
            n = max(int(round(arc_len / step)), 2)
            for _ in range(n):
                heading += sweep / n
                pts.append(pts[-1] + (arc_len / n) * np.array([np.cos(heading), np.sin(heading)]))
    return np.array(pts)


SCENARIO_SEGMENTS = {
    "straight": [("straight", 130.0)],
    "curve": [("straight", 35.0), ("arc", 40.0, 75.0), ("straight", 35.0)],
    "sturn": [("straight", 25.0), ("arc", 30.0, 50.0), ("arc", 30.0, -50.0), ("straight", 25.0)],
}

SCENARIO_SUITE = ("straight", "curve", "sturn")


def scenario_route(name):
    if name not in SCENARIO_SEGMENTS:
        raise ValueError(f"unknown scenario '{name}' (have {sorted(SCENARIO_SEGMENTS)})")
    return _route_from_segments(SCENARIO_SEGMENTS[name])


@dataclass
class WorldConfig:
    route: np.ndarray
    lane_width: float = 3.5
    n_vehicles: int = 10
    n_pedestrians: int = 10
    speed_limit: float = 10.0
    k_c: float = 100.0
    max_steps: int = 128
    dt: float = 0.1
    reach_radius: float = 2.0
    seed: int = 0
    density: str = "low"
    image_h: int = 32
    image_w: int = 64
    sidewalk_width: float = 2.0
    v_max_sim: float = 20.0

    def __post_init__(self):
        if self.dt <= 0 or self.reach_radius <= 0 or self.speed_limit <= 0:
            raise ValueError("dt, reach_radius and speed_limit must be positive")
        if len(self.route) < 2:
            raise ValueError("route needs at least 2 waypoints")


def make_config(scenario="straight", density="low", seed=0, **overrides):
    nv, npd = DENSITY_PRESETS[density]
    cfg = WorldConfig(route=scenario_route(scenario), n_vehicles=nv, n_pedestrians=npd,
                      density=density, seed=seed)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class Observation:
    images: np.ndarray   # (6, 3, H, W) float32 in [0, 1]
    road: np.ndarray     # (9,)
    vehicle: np.ndarray  # (4,)
    nav: np.ndarray      # (5,)
    images_u8: np.ndarray = None  # (6, H, W, 3) uint8, lossless source of images


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


@dataclass
class EpisodeLog:
    """Per-step kinematic/event record from which every metric derives."""
    step: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    a_long: np.ndarray
    a_lat: np.ndarray
    yaw_rate: np.ndarray
    reward: np.ndarray
    collision: np.ndarray       # 0/1 per step
    collision_kind: list        # '' or vehicle/pedestrian/static
    waypoint_idx: np.ndarray
    wp_x: np.ndarray
    wp_y: np.ndarray
    npc_mean_speed: np.ndarray  # mean NPC-vehicle speed within 30 m, -1 when none
    outcome: str                # collision | timeout | route-complete
    completion: float           # [0, 1] arc-length route completion
    speed_limit: float
    dt: float

    CSV_HEADER = "step,x,y,psi,v,a_long,a_lat,yaw_rate,reward,collision,waypoint_idx,npc_mean_speed"

    def __len__(self):
        return len(self.step)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(self.CSV_HEADER + "\n")
            for i in range(len(self.step)):
                f.write(f"{self.step[i]},{self.x[i]:.9g},{self.y[i]:.9g},{self.psi[i]:.9g},"
                        f"{self.v[i]:.9g},{self.a_long[i]:.9g},{self.a_lat[i]:.9g},"
                        f"{self.yaw_rate[i]:.9g},{self.reward[i]:.9g},{int(self.collision[i])},"
                        f"{int(self.waypoint_idx[i])},{self.npc_mean_speed[i]:.9g}\n")


def reward_value(collided, v_c, v_m, k_c, p_c, p_w, heading, rho):
    """Per-step reward; exactly one branch applies."""
    if collided:
        return -k_c
    if v_c - v_m > 0.0:
        return v_m - v_c
    if v_c < 1e-12:
        v_s = 1.0  # direction undefined at standstill; term vanishes anyway
    else:
        to_wp = p_w - p_c
        norm = np.hypot(to_wp[0], to_wp[1])
        if norm < 1e-12:
            v_s = 1.0
        else:
            v_s = (np.cos(heading) * to_wp[0] + np.sin(heading) * to_wp[1]) / norm
    d2 = (p_c[0] - p_w[0]) ** 2 + (p_c[1] - p_w[1]) ** 2
    return 4.0 * v_c * v_s / max(rho * rho, d2)


def obb_overlap(c1, yaw1, h1, c2, yaw2, h2):
    """Separating-axis test for two oriented 2D boxes (half-extents h=(hl, hw))."""
    for yaw in (yaw1, yaw2):
        c, s = np.cos(yaw), np.sin(yaw)
        for ax in ((c, s), (-s, c)):
            r1 = _obb_radius(yaw1, h1, ax)
            r2 = _obb_radius(yaw2, h2, ax)
            dist = abs((c2[0] - c1[0]) * ax[0] + (c2[1] - c1[1]) * ax[1])
            if dist > r1 + r2:
                return False
    return True


def _obb_radius(yaw, h, ax):
    c, s = np.cos(yaw), np.sin(yaw)
    return (abs((c * ax[0] + s * ax[1])) * h[0] + abs((-s * ax[0] + c * ax[1])) * h[1])


class World:
    """One exclusively-owned simulation instance."""

    def __init__(self, config: WorldConfig, rig: CameraRig = None):
        self.cfg = config
        self.route = Polyline(config.route)
        self.rig = rig or CameraRig(config.image_h, config.image_w)
        self._static_passes = None
        self.done = True

    # -- lifecycle -----------------------------------------------------
    def reset(self, seed=None):
        cfg = self.cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.rng = np.random.Generator(np.random.Philox(key=self.seed))
        t0 = self.route.tangent_at(2.0)
        p0 = self.route.point_at(2.0)
        self.ego = {
            "x": float(p0[0]), "y": float(p0[1]), "psi": float(np.arctan2(t0[1], t0[0])),
            "v": 0.0, "accel": 0.0, "yaw_rate": 0.0, "prev_steer": 0.0,
            "wp_idx": self._first_waypoint_ahead(2.0), "collided": False,
        }
        self._spawn_npcs()
        self.steps = 0
        self.done = False
        self.collision_kind = ""
        self.completion = 0.0
        self._log_rows = []
        self._static_passes = self._build_static_passes()
        return self.render_observation()

    def _first_waypoint_ahead(self, s):
        idx = int(np.searchsorted(self.route.cum, s, side="right"))
        return min(idx, len(self.route.pts) - 1)

    def _spawn_npcs(self):
        cfg = self.cfg
        L = self.route.length
        placed = []  # (x, y, yaw, half_len, half_wid)
        self.npcs = []
        n_total = cfg.n_vehicles + cfg.n_pedestrians
        for i in range(n_total):
            is_vehicle = i < cfg.n_vehicles
            for attempt in range(100):
                if is_vehicle:
                    s = self.rng.uniform(10.0, max(L - 5.0, 12.0))
                    offset = self.rng.choice([-1.0, 1.0]) * self.rng.uniform(1.9, 3.0)
                    cruise = self.rng.uniform(2.0, 6.0)
                    pos = self.route.point_at(s) + offset * self.route.normal_at(s)
                    tan = self.route.tangent_at(s)
                    yaw = float(np.arctan2(tan[1], tan[0]))
                    cand = {"kind": "vehicle", "x": pos[0], "y": pos[1], "yaw": yaw,
                            "speed": cruise, "cruise": cruise, "s": s, "offset": offset,
                            "half": (VEHICLE_HALF_LEN, VEHICLE_HALF_WID)}
                else:
                    s = self.rng.uniform(5.0, max(L - 2.0, 6.0))
                    crossing = self.rng.uniform() < 0.35
                    side = self.rng.choice([-1.0, 1.0])
                    offset = side * (cfg.lane_width + self.rng.uniform(0.3, cfg.sidewalk_width))
                    pos = self.route.point_at(s) + offset * self.route.normal_at(s)
                    tan = self.route.tangent_at(s)
                    base_yaw = float(np.arctan2(tan[1], tan[0]))
                    if crossing:
                        yaw = base_yaw + (np.pi / 2.0 if side < 0 else -np.pi / 2.0)
                    else:
                        yaw = base_yaw + (0.0 if self.rng.uniform() < 0.5 else np.pi)
                    cand = {"kind": "pedestrian", "x": pos[0], "y": pos[1], "yaw": yaw,
                            "speed": self.rng.uniform(0.5, 1.5), "cruise": 0.0,
                            "s": s, "offset": offset, "half": (PED_HALF, PED_HALF)}
                ok = True
                ex, ey = self.ego["x"], self.ego["y"]
                if np.hypot(cand["x"] - ex, cand["y"] - ey) < 8.0:
                    ok = False
                if ok:
                    for (px, py, pyaw, phl, phw) in placed:
                        if obb_overlap((cand["x"], cand["y"]), cand["yaw"], cand["half"],
                                       (px, py), pyaw, (phl, phw)):
                            ok = False
                            break
                if ok:
                    placed.append((cand["x"], cand["y"], cand["yaw"], *cand["half"]))
                    self.npcs.append(cand)
                    break
            else:
                raise RuntimeError(f"could not place NPC {i} after 100 retries")

    # -- stepping --------------------------------------------------------
    def step(self, action):
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        cfg = self.cfg
        steer = float(np.clip(action[0], -1.0, 1.0))
        lon = float(np.clip(action[1], -1.0, 1.0))
        ego = self.ego

        # kinematic bicycle, forward Euler at the pre-update state
        delta = steer * MAX_STEER
        accel_cmd = lon * ACCEL_MAX if lon >= 0 else lon * BRAKE_MAX
        v0 = ego["v"]
        yaw_rate = v0 / WHEELBASE * np.tan(delta)
        ego["x"] += v0 * np.cos(ego["psi"]) * cfg.dt
        ego["y"] += v0 * np.sin(ego["psi"]) * cfg.dt
        ego["psi"] = _wrap_angle(ego["psi"] + yaw_rate * cfg.dt)
        v1 = float(np.clip(v0 + accel_cmd * cfg.dt, 0.0, cfg.v_max_sim))
        ego["accel"] = (v1 - v0) / cfg.dt
        ego["v"] = v1
        ego["yaw_rate"] = float(yaw_rate)
        ego["prev_steer"] = steer

        self._step_npcs()

        kind = self._check_collision()
        ego["collided"] = kind != ""
        self.collision_kind = kind

        advanced = self._advance_waypoint()
        p_c = np.array([ego["x"], ego["y"]])
        p_w = self.route.pts[ego["wp_idx"]]
        dist_wp = float(np.hypot(*(p_w - p_c)))
        r = reward_value(ego["collided"], ego["v"], cfg.speed_limit, cfg.k_c,
                         p_c, p_w, ego["psi"], cfg.reach_radius)

        s_proj, _ = self.route.project(p_c)
        self.completion = max(self.completion, min(s_proj / self.route.length, 1.0))
        complete = dist_wp <= cfg.reach_radius and ego["wp_idx"] == len(self.route.pts) - 1

        self.steps += 1
        self.done = ego["collided"] or complete or self.steps >= cfg.max_steps
        if ego["collided"]:
            self.outcome = "collision"
        elif complete:
            self.outcome = "route-complete"
            self.completion = 1.0
        elif self.done:
            self.outcome = "timeout"

        v_s = self._v_s(p_c, p_w)
        npc_speed = self._npc_mean_speed()
        self._log_rows.append((self.steps - 1, ego["x"], ego["y"], ego["psi"], ego["v"],
                               ego["accel"], ego["v"] * ego["yaw_rate"], ego["yaw_rate"],
                               r, int(ego["collided"]), kind, ego["wp_idx"],
                               p_w[0], p_w[1], npc_speed))
        obs = self.render_observation()
        info = {"collision": kind or None, "waypoint_advanced": advanced,
                "v_s": v_s, "distance_to_waypoint": dist_wp,
                "npc_mean_speed": npc_speed, "outcome": self.outcome if self.done else None}
        return StepResult(obs, float(r), self.done, info)

    def _v_s(self, p_c, p_w):
        if self.ego["v"] < 1e-12:
            return 1.0
        to_wp = p_w - p_c
        n = np.hypot(to_wp[0], to_wp[1])
        if n < 1e-12:
            return 1.0
        return float((np.cos(self.ego["psi"]) * to_wp[0] + np.sin(self.ego["psi"]) * to_wp[1]) / n)

    def _step_npcs(self):
        cfg = self.cfg
        ego_s, ego_lat = self.route.project(np.array([self.ego["x"], self.ego["y"]]))
        for npc in self.npcs:
            if npc["kind"] == "vehicle":
                lead = None
                for other in self.npcs:
                    if other is npc or other["kind"] != "vehicle":
                        continue
                    gap = other["s"] - npc["s"]
                    if 0.0 < gap < 8.0 and abs(other["offset"] - npc["offset"]) < 1.2:
                        lead = gap if lead is None else min(lead, gap)
                ego_gap = ego_s - npc["s"]
                if 0.0 < ego_gap < 8.0 and abs(ego_lat - npc["offset"]) < 1.2:
                    lead = ego_gap if lead is None else min(lead, ego_gap)
                if lead is not None:
                    npc["speed"] = max(npc["speed"] - 3.0 * cfg.dt, 0.0)
                else:
                    npc["speed"] = min(npc["speed"] + 1.5 * cfg.dt, npc["cruise"])
                if npc["s"] >= self.route.length - 2.0:
                    npc["speed"] = 0.0
                npc["s"] += npc["speed"] * cfg.dt
                pos = self.route.point_at(npc["s"]) + npc["offset"] * self.route.normal_at(npc["s"])
                tan = self.route.tangent_at(npc["s"])
                npc["x"], npc["y"] = float(pos[0]), float(pos[1])
                npc["yaw"] = float(np.arctan2(tan[1], tan[0]))
            else:
                npc["x"] += np.cos(npc["yaw"]) * npc["speed"] * cfg.dt
                npc["y"] += np.sin(npc["yaw"]) * npc["speed"] * cfg.dt

    def _check_collision(self):
        ego_c = (self.ego["x"], self.ego["y"])
        ego_h = (EGO_HALF_LEN, EGO_HALF_WID)
        for npc in self.npcs:
            if npc["kind"] == "vehicle" and obb_overlap(ego_c, self.ego["psi"], ego_h,
                                                        (npc["x"], npc["y"]), npc["yaw"], npc["half"]):
                return "vehicle"
        for npc in self.npcs:
            if npc["kind"] == "pedestrian" and obb_overlap(ego_c, self.ego["psi"], ego_h,
                                                           (npc["x"], npc["y"]), npc["yaw"], npc["half"]):
                return "pedestrian"
        _, lat = self.route.project(np.array(ego_c))
        if abs(lat) > self.cfg.lane_width:
            return "static"
        return ""

    def _advance_waypoint(self):
        ego = self.ego
        p = np.array([ego["x"], ego["y"]])
        advanced = False
        while ego["wp_idx"] < len(self.route.pts) - 1 and \
                np.hypot(*(self.route.pts[ego["wp_idx"]] - p)) <= self.cfg.reach_radius:
            ego["wp_idx"] += 1
            advanced = True
        return advanced

    def _npc_mean_speed(self):
        ex, ey = self.ego["x"], self.ego["y"]
        speeds = [npc["speed"] for npc in self.npcs
                  if npc["kind"] == "vehicle" and np.hypot(npc["x"] - ex, npc["y"] - ey) <= 30.0]
        return float(np.mean(speeds)) if speeds else -1.0

    # -- observations ------------------------------------------------------
    def render_observation(self):
        images_u8, _ = self.render_views()
        images = images_u8.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        return Observation(images=images, road=self._road_features(),
                           vehicle=self._vehicle_features(), nav=self._nav_features(),
                           images_u8=images_u8)

    def render_views(self):
        """Raw surround render: (uint8 images (6, H, W, 3), depth maps)."""
        passes = list(self._static_passes) + [self._npc_pass()]
        return raster.render_views(passes, (self.ego["x"], self.ego["y"]), self.ego["psi"], self.rig)

    def _build_static_passes(self):
        road_faces, mark_faces = [], []
        rt = self.route
        w = self.cfg.lane_width
        # road corridor: one quad per segment with miter-averaged joint normals
        normals = np.stack([-rt.tangents[:, 1], rt.tangents[:, 0]], axis=1)
        vnorm = np.empty_like(rt.pts)
        vnorm[0] = normals[0]
        vnorm[-1] = normals[-1]
        for i in range(1, len(rt.pts) - 1):
            m = normals[i - 1] + normals[i]
            vnorm[i] = m / max(np.hypot(*m), 1e-9)
        for i in range(len(rt.pts) - 1):
            a0 = np.append(rt.pts[i] + w * vnorm[i], 0.0)
            a1 = np.append(rt.pts[i] - w * vnorm[i], 0.0)
            b0 = np.append(rt.pts[i + 1] + w * vnorm[i + 1], 0.0)
            b1 = np.append(rt.pts[i + 1] - w * vnorm[i + 1], 0.0)
            road_faces.append(np.array([a0, b0, b1, a1]))
        # dashed center line
        s = 0.0
        while s < rt.length:
            s1 = min(s + DASH_LEN, rt.length)
            p0, p1 = rt.point_at(s), rt.point_at(s1)
            n0, n1 = rt.normal_at(s), rt.normal_at(s1)
            mark_faces.append(np.array([
                np.append(p0 + MARK_HALF_WIDTH * n0, 0.0),
                np.append(p1 + MARK_HALF_WIDTH * n1, 0.0),
                np.append(p1 - MARK_HALF_WIDTH * n1, 0.0),
                np.append(p0 - MARK_HALF_WIDTH * n0, 0.0),
            ]))
            s += DASH_PERIOD
        road_pass = raster.ScenePass(road_faces, np.tile(raster.ROAD, (len(road_faces), 1)))
        mark_pass = raster.ScenePass(mark_faces, np.tile(raster.MARKING, (len(mark_faces), 1)))
        return [road_pass, mark_pass]

    def _npc_pass(self):
        ex, ey = self.ego["x"], self.ego["y"]
        order = sorted(self.npcs, key=lambda n: -((n["x"] - ex) ** 2 + (n["y"] - ey) ** 2))
        faces, colors = [], []
        for npc in order:
            height = VEHICLE_HEIGHT if npc["kind"] == "vehicle" else PED_HEIGHT
            color = raster.VEHICLE if npc["kind"] == "vehicle" else raster.PEDESTRIAN
            for f in raster.box_faces((npc["x"], npc["y"]), npc["yaw"], npc["half"][0],
                                      npc["half"][1], height):
                faces.append(f)
                colors.append(color)
        return raster.ScenePass(faces, np.array(colors) if colors else np.zeros((0, 3), np.uint8))

    def _road_features(self):
        cfg = self.cfg
        p = np.array([self.ego["x"], self.ego["y"]])
        s, lat = self.route.project(p)
        tan = self.route.tangent_at(s)
        head_err = _wrap_angle(self.ego["psi"] - np.arctan2(tan[1], tan[0]))
        return np.array([cfg.speed_limit / 20.0, cfg.lane_width / 5.0, lat / cfg.lane_width,
                         head_err / np.pi, 1.0, 0.0, 0.0, 0.0, 0.0], dtype=np.float32)

    def _vehicle_features(self):
        e = self.ego
        return np.array([e["v"] / self.cfg.speed_limit, e["accel"] / BRAKE_MAX,
                         e["yaw_rate"] / 1.5, e["prev_steer"]], dtype=np.float32)

    def _nav_features(self):
        e = self.ego
        p_w = self.route.pts[e["wp_idx"]]
        dx, dy = p_w[0] - e["x"], p_w[1] - e["y"]
        c, s = np.cos(e["psi"]), np.sin(e["psi"])
        dx_e, dy_e = c * dx + s * dy, -s * dx + c * dy
        dist = np.hypot(dx, dy)
        head_err = _wrap_angle(np.arctan2(dy, dx) - e["psi"]) if dist > 1e-9 else 0.0
        s_proj, _ = self.route.project(np.array([e["x"], e["y"]]))
        remaining = 1.0 - min(s_proj / self.route.length, 1.0)
        return np.array([dx_e / 30.0, dy_e / 30.0, head_err / np.pi, dist, remaining],
                        dtype=np.float32)

    # -- ground truth -------------------------------------------------------
    def bev_ground_truth(self, nx, ny, cell):
        """Class-labeled (nx, ny) grid in the ego frame (+x heading, ego at center).

        Classes: 0 background, 1 road, 2 lane marking, 3 vehicle, 4 pedestrian.
        """
        e = self.ego
        xs = (np.arange(nx) + 0.5) * cell - nx * cell / 2.0
        ys = (np.arange(ny) + 0.5) * cell - ny * cell / 2.0
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        c, s = np.cos(e["psi"]), np.sin(e["psi"])
        wx = e["x"] + c * gx - s * gy
        wy = e["y"] + s * gx + c * gy
        pts = np.stack([wx.ravel(), wy.ravel()], axis=1)
        s_arr, lat = self.route.project_many(pts)
        grid = np.zeros(nx * ny, dtype=np.int64)
        grid[np.abs(lat) <= self.cfg.lane_width] = 1
        dash = (np.abs(lat) <= MARK_HALF_WIDTH) & (np.mod(s_arr, DASH_PERIOD) < DASH_LEN)
        grid[dash] = 2
        for npc in self.npcs:
            dxp = pts[:, 0] - npc["x"]
            dyp = pts[:, 1] - npc["y"]
            cy, sy = np.cos(npc["yaw"]), np.sin(npc["yaw"])
            lx = cy * dxp + sy * dyp
            ly = -sy * dxp + cy * dyp
            inside = (np.abs(lx) <= npc["half"][0]) & (np.abs(ly) <= npc["half"][1])
            grid[inside] = 3 if npc["kind"] == "vehicle" else 4
        return grid.reshape(nx, ny)

    def episode_log(self):
        rows = self._log_rows
        arr = lambda i, dt=np.float64: np.array([r[i] for r in rows], dtype=dt)
        return EpisodeLog(
            step=arr(0, np.int64), x=arr(1), y=arr(2), psi=arr(3), v=arr(4),
            a_long=arr(5), a_lat=arr(6), yaw_rate=arr(7), reward=arr(8),
            collision=arr(9, np.int64), collision_kind=[r[10] for r in rows],
            waypoint_idx=arr(11, np.int64), wp_x=arr(12), wp_y=arr(13),
            npc_mean_speed=arr(14),
            outcome=getattr(self, "outcome", "timeout"), completion=self.completion,
            speed_limit=self.cfg.speed_limit, dt=self.cfg.dt,
        )


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi
