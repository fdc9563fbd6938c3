"""The spatially varying deviation field: normalized 3D point -> 4x4 matrix.

A small fully connected network (smooth tanh activations, linear output of 15
values reshaped row-major into a 4x4 matrix whose last entry is fixed to 1)
multiplies the camera projection per point.  The final layer starts at zero
weights with an identity bias, so a fresh field is exactly the identity
everywhere.  Training records computations through torch and differentiates
them in reverse mode; finite differences appear only in tests.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
import torch

from .errors import CheckpointError, OutOfDomainError, ProjectionSingularityError
from .geom import CameraRig

CHECKPOINT_FORMAT = "deviation-field/v1"

_IDENTITY15 = np.eye(4, dtype=np.float64).reshape(-1)[:15]


@dataclass
class FieldConfig:
    hidden_layers: int = 4
    hidden_width: int = 128
    activation: str = "tanh"
    posenc: int = 0  # sin/cos frequency octaves on the input; 0 = raw coordinates
    seed: int = 0

    def input_dim(self) -> int:
        return 3 * (1 + 2 * self.posenc)


_ACTIVATIONS = {"tanh": torch.tanh, "softplus": torch.nn.functional.softplus}


def _encode_input(pts: torch.Tensor, posenc: int) -> torch.Tensor:
    if posenc == 0:
        return pts
    feats = [pts]
    for k in range(posenc):
        w = (2.0 ** k) * math.pi
        feats.append(torch.sin(w * pts))
        feats.append(torch.cos(w * pts))
    return torch.cat(feats, dim=1)


class DeviationField:
    """MLP parameters plus evaluation/projection machinery (float64, CPU)."""

    def __init__(self, config: FieldConfig, params: list[torch.Tensor] | None = None,
                 provenance: dict | None = None):
        if config.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {config.activation!r}")
        self.config = config
        self.provenance = dict(provenance or {})
        if params is None:
            params = self._init_params(config)
        self._params = [p.detach().clone().requires_grad_(True) for p in params]

    @staticmethod
    def _init_params(config: FieldConfig) -> list[torch.Tensor]:
        gen = torch.Generator().manual_seed(config.seed)
        dims = [config.input_dim()] + [config.hidden_width] * config.hidden_layers
        params = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / (d_in + d_out))
            w = (torch.rand(d_out, d_in, generator=gen, dtype=torch.float64) * 2 - 1) * bound
            params.append(w)
            params.append(torch.zeros(d_out, dtype=torch.float64))
        params.append(torch.zeros(15, dims[-1], dtype=torch.float64))
        params.append(torch.from_numpy(_IDENTITY15.copy()))
        return params

    def parameters(self) -> list[torch.Tensor]:
        return self._params

    def clone(self) -> "DeviationField":
        return DeviationField(self.config, self._params, self.provenance)

    def load_state(self, params: list[torch.Tensor]) -> None:
        with torch.no_grad():
            for dst, src in zip(self._params, params):
                dst.copy_(src)

    def reinitialize(self, seed: int | None = None) -> None:
        if seed is not None:
            self.config.seed = seed
        self.load_state(self._init_params(self.config))

    # -- evaluation ---------------------------------------------------------

    def matrices(self, pts: torch.Tensor) -> torch.Tensor:
        """Deviation matrices (n, 4, 4) for a batch of 3D points (torch path)."""
        act = _ACTIVATIONS[self.config.activation]
        h = _encode_input(pts, self.config.posenc)
        ps = self._params
        for k in range(self.config.hidden_layers):
            h = act(h @ ps[2 * k].T + ps[2 * k + 1])
        out15 = h @ ps[-2].T + ps[-1]
        ones = torch.ones(len(pts), 1, dtype=out15.dtype)
        return torch.cat([out15, ones], dim=1).reshape(-1, 4, 4)

    def eval(self, points) -> np.ndarray:
        """Deviation matrices for numpy points; (4,4) for a single point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if not np.isfinite(pts).all():
            raise OutOfDomainError("field evaluated at non-finite coordinates")
        with torch.no_grad():
            out = self.matrices(torch.from_numpy(pts)).numpy()
        return out[0] if np.asarray(points).ndim == 1 else out

    def apply(self, rig: CameraRig, points) -> np.ndarray:
        """Deviated projection into normalized image space (numpy path)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if not np.isfinite(pts).all():
            raise OutOfDomainError("field applied at non-finite coordinates")
        with torch.no_grad():
            xy, _, _, _ = project_with_field(self, rig, torch.from_numpy(pts))
        out = xy.numpy()
        return out[0] if np.asarray(points).ndim == 1 else out

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        blob = {
            "format": CHECKPOINT_FORMAT,
            "arch": asdict(self.config),
            "provenance": self.provenance,
            "params": [
                {
                    "shape": list(p.shape),
                    "data": base64.b64encode(
                        np.ascontiguousarray(p.detach().numpy(), dtype="<f8").tobytes()
                    ).decode("ascii"),
                }
                for p in self._params
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DeviationField":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                blob = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unknown checkpoint format {blob.get('format')!r}")
        try:
            config = FieldConfig(**blob["arch"])
            params = []
            for entry in blob["params"]:
                arr = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
                arr = arr.reshape(entry["shape"]).astype(np.float64)
                params.append(torch.from_numpy(arr.copy()))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
        expected = cls._init_params(config)
        if len(params) != len(expected) or any(
                p.shape != e.shape for p, e in zip(params, expected)):
            raise CheckpointError(
                f"checkpoint {path} parameter shapes do not match its architecture")
        return cls(config, params, blob.get("provenance"))


def project_with_field(field: DeviationField, rig: CameraRig, pts: torch.Tensor):
    """Deviated projection of 3D points, differentiable through the field.

    Returns (xy in normalized image space, clip z before divide, w, matrices).
    """
    C = torch.from_numpy(rig.combined)
    aspect = torch.from_numpy(rig.viewport.aspect_scale())
    h0 = torch.cat([pts, torch.ones(len(pts), 1, dtype=pts.dtype)], dim=1) @ C.T
    D = field.matrices(pts)
    h = torch.einsum("nij,nj->ni", D, h0)
    w = h[:, 3]
    if torch.any(torch.abs(w) < 1e-12):
        i = int(torch.argmin(torch.abs(w)))
        raise ProjectionSingularityError(pts[i].detach().numpy(), float(w[i]))
    xy = h[:, :2] / w[:, None] * aspect
    return xy, h[:, 2], w, D


def gradients(field: DeviationField, loss: torch.Tensor) -> list[torch.Tensor]:
    """Reverse-mode derivatives of a recorded scalar wrt every field parameter."""
    grads = torch.autograd.grad(loss, field.parameters(), allow_unused=True,
                                retain_graph=False)
    return [torch.zeros_like(p) if g is None else g
            for p, g in zip(field.parameters(), grads)]
