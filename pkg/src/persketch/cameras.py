"""Camera construction and JSON (de)serialization.

A camera file holds either explicit row-major 4x4 projection/modelview
matrices or pinhole parameters (eye/target/up + fov or ortho half-height)
from which the matrices are built.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import PersketchError
from .geom import CameraRig, Viewport


def perspective_projection(fov_y_deg: float, aspect: float,
                           near: float, far: float) -> np.ndarray:
    f = 1.0 / math.tan(math.radians(fov_y_deg) / 2.0)
    m = np.zeros((4, 4))
    m[0, 0] = f / aspect
    m[1, 1] = f
    m[2, 2] = (far + near) / (near - far)
    m[2, 3] = 2.0 * far * near / (near - far)
    m[3, 2] = -1.0
    return m


def orthographic_projection(half_height: float, aspect: float,
                            near: float, far: float) -> np.ndarray:
    m = np.eye(4)
    m[0, 0] = 1.0 / (half_height * aspect)
    m[1, 1] = 1.0 / half_height
    m[2, 2] = -2.0 / (far - near)
    m[2, 3] = -(far + near) / (far - near)
    return m


def look_at(eye, target, up) -> np.ndarray:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    side = np.cross(fwd, np.asarray(up, dtype=np.float64))
    side = side / np.linalg.norm(side)
    upv = np.cross(side, fwd)
    m = np.eye(4)
    m[0, :3] = side
    m[1, :3] = upv
    m[2, :3] = -fwd
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def pinhole_rig(eye, target, up, fov_y_deg: float, viewport: Viewport,
                near: float = 0.1, far: float = 100.0) -> CameraRig:
    aspect = viewport.width / viewport.height
    return CameraRig(perspective_projection(fov_y_deg, aspect, near, far),
                     look_at(eye, target, up), viewport, orthographic=False)


def ortho_rig(eye, target, up, half_height: float, viewport: Viewport,
              near: float = 0.1, far: float = 100.0) -> CameraRig:
    aspect = viewport.width / viewport.height
    return CameraRig(orthographic_projection(half_height, aspect, near, far),
                     look_at(eye, target, up), viewport, orthographic=True)


def camera_from_dict(d: dict) -> CameraRig:
    try:
        vp = Viewport(int(d["viewport"]["width"]), int(d["viewport"]["height"]))
        ortho = bool(d.get("orthographic", False))
        if "projection" in d and "modelview" in d:
            return CameraRig(np.array(d["projection"], dtype=np.float64),
                             np.array(d["modelview"], dtype=np.float64), vp, ortho)
        near = float(d.get("near", 0.1))
        far = float(d.get("far", 100.0))
        if ortho:
            return ortho_rig(d["eye"], d["target"], d.get("up", [0, 1, 0]),
                             float(d["ortho_half_height"]), vp, near, far)
        return pinhole_rig(d["eye"], d["target"], d.get("up", [0, 1, 0]),
                           float(d["fov_y_deg"]), vp, near, far)
    except (KeyError, TypeError, ValueError) as exc:
        raise PersketchError(f"invalid camera description: {exc}") from exc


def camera_to_dict(rig: CameraRig) -> dict:
    return {
        "viewport": {"width": rig.viewport.width, "height": rig.viewport.height},
        "orthographic": rig.orthographic,
        "projection": rig.projection.tolist(),
        "modelview": rig.modelview.tolist(),
    }


def load_camera(path) -> CameraRig:
    with open(path, "r", encoding="utf-8") as fh:
        return camera_from_dict(json.load(fh))


def save_camera(rig: CameraRig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(camera_to_dict(rig), fh, indent=2, sort_keys=True)
        fh.write("\n")
