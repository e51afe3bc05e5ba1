"""Bundle of formatted survey data consumed by the likelihood and fitters."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from .errors import ValidationError
from .mesh import Mesh, distance_matrix
from .survey import CaptureHistories, RobustDesign, TrapArray


@dataclass
class SCRData:
    """Everything a model needs: occasions, traps, mesh, and histories.

    ``trap_covariates`` is an optional per-trap table (e.g. ``stratum``,
    ``openness``) used by detection formulas; ``marked_fraction`` is the known
    proportion of the population that is identifiable, used only when scaling
    reported density and abundance to the whole population.
    """

    design: RobustDesign
    traps: TrapArray
    mesh: Mesh
    histories: CaptureHistories
    trap_covariates: pd.DataFrame | None = None
    marked_fraction: float = 1.0

    @cached_property
    def distances(self) -> np.ndarray:
        """Trap-to-mesh Euclidean distances in meters, (J, M)."""
        return distance_matrix(self.traps, self.mesh)

    @property
    def n_primaries(self) -> int:
        return self.design.n_primaries

    def validate(self) -> None:
        J = self.traps.n_traps
        K = self.design.n_primaries
        L = self.design.max_secondaries
        if self.traps.effort.shape != (J, K, L):
            raise ValidationError(
                f"effort shape {self.traps.effort.shape} does not match (J,K,L)=({J},{K},{L})"
            )
        self.traps.validate()
        if not 0 < self.marked_fraction <= 1:
            raise ValidationError("marked_fraction must be in (0, 1]")
        om = self.histories.omega
        if om.size:
            if om.shape[1:] != (K, L):
                raise ValidationError("capture history shape does not match the design")
            if om.max() >= J:
                raise ValidationError("capture history references a nonexistent trap")
            det = om >= 0
            if np.any(det.sum(axis=(1, 2)) == 0):
                raise ValidationError("individual with no detections")
            j, k, l = np.nonzero(det)
            if np.any(self.traps.effort[om[j, k, l], k, l] == 0):
                raise ValidationError("detection recorded at a trap with zero effort")
        if self.trap_covariates is not None and len(self.trap_covariates) != J:
            raise ValidationError("trap covariate table length does not match traps")

    def design_tables(self) -> dict[str, tuple[pd.DataFrame, tuple[int, ...]]]:
        """Per-parameter evaluation tables for :func:`design.build_param_map`.

        Detection parameters are evaluated per (trap, primary) pair in
        trap-major order; dynamics parameters at the mid-point of the primary
        preceding each gap; density at the mesh points.
        """
        J = self.traps.n_traps
        K = self.design.n_primaries
        times = self.design.times

        det = pd.DataFrame({
            "x": np.repeat(self.traps.xy[:, 0], K) / 1000.0,
            "y": np.repeat(self.traps.xy[:, 1], K) / 1000.0,
            "primary": pd.Categorical(np.tile(np.arange(1, K + 1), J),
                                      categories=np.arange(1, K + 1)),
            "time": np.tile(times, J),
        })
        if self.trap_covariates is not None:
            for col in self.trap_covariates.columns:
                det[col] = np.repeat(self.trap_covariates[col].to_numpy(), K)

        dyn = pd.DataFrame({"time": times[: K - 1]}) if K > 1 else pd.DataFrame({"time": []})
        return {
            "lambda": (det, (J, K)),
            "sigma": (det, (J, K)),
            "gamma": (dyn, (K - 1,)),
            "phi": (dyn, (K - 1,)),
            "D": (self.mesh.covariates, (self.mesh.n_points,)),
        }
