"""Sequential regularized least-squares retargeting.

Every frame minimizes

    sum_j ||x_j(q) - psi_j||^2 + alpha * ||q - q_prev||^2

over joint values inside the chain limits, warm-started from the previous
frame's solution. The solver is a bound-constrained Levenberg-Marquardt
iteration on the stacked residual ``[x(q) - psi; sqrt(alpha) (q - q_prev)]``
with analytic link Jacobians. DoF pinned at a limit with the gradient
pushing outward are held fixed for the step. When the damped normal
equations are ill-conditioned the step falls back to projected gradient
descent with a backtracking line search. Only decreasing steps are taken,
so the returned objective never exceeds the objective at the start point.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import (
    ArrayLike,
    JointConfig,
    KinematicChain,
    as_joint_config,
    chain_frames,
    link_jacobian,
    mean_pose,
)
from dexmimic.retarget.keypoints import NUM_KEYPOINTS, HumanHandTrajectory, keypoint_index

logger = structlog.get_logger(__name__)

# (human keypoint, robot link): fingertips and distal phalanges of thumb,
# index, middle and ring. The pinky has no robot counterpart.
DEFAULT_MAPPING: tuple[tuple[str, str], ...] = (
    ("thumb_tip", "thumb_tip"),
    ("thumb_ip", "thumb_distal"),
    ("index_tip", "index_tip"),
    ("index_dip", "index_distal"),
    ("middle_tip", "middle_tip"),
    ("middle_dip", "middle_distal"),
    ("ring_tip", "ring_tip"),
    ("ring_dip", "ring_distal"),
)


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: int = Field(200, ge=1)
    gradient_tolerance: float = Field(1e-8, gt=0.0)
    step_tolerance: float = Field(1e-12, ge=0.0)
    damping: float = Field(1e-3, gt=0.0)
    condition_limit: float = Field(1e8, gt=1.0)
    max_backtracks: int = Field(40, ge=1)


class RetargetConfig(BaseModel):
    """Keypoint-to-link mapping, temporal weight and solver options.

    Mapping entries accept either keypoint names or indices on the human side.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mapping: tuple[tuple[int | str, str], ...] = DEFAULT_MAPPING
    alpha: float = Field(4e-3, ge=0.0)
    solver: SolverOptions = Field(default_factory=SolverOptions)

    @field_validator("mapping")
    @classmethod
    def _known_keypoints(
        cls, value: tuple[tuple[int | str, str], ...],
    ) -> tuple[tuple[int | str, str], ...]:
        for human, _ in value:
            if isinstance(human, int) and not 0 <= human < NUM_KEYPOINTS:
                raise ValueError(f"keypoint index {human} outside 0..{NUM_KEYPOINTS - 1}")
            if isinstance(human, str):
                keypoint_index(human)
        return value


@dataclass(frozen=True)
class ResolvedMapping:
    keypoints: tuple[int, ...]
    links: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.links)


def resolve_mapping(chain: KinematicChain, config: RetargetConfig) -> ResolvedMapping:
    """Turn the configured mapping into keypoint and link indices for *chain*."""
    keypoints = []
    links = []
    for human, link in config.mapping:
        keypoints.append(human if isinstance(human, int) else keypoint_index(human))
        links.append(chain.index_of(link))
    return ResolvedMapping(tuple(keypoints), tuple(links))


@dataclass(frozen=True, eq=False)
class FrameSolution:
    q: JointConfig
    residual: float
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _check_targets(targets: np.ndarray, links: Sequence[int]) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if targets.size != 3 * len(links):
        raise InvalidInputError(
            f"expected {len(links)} target points for the mapping, got shape {targets.shape}",
        )
    targets = targets.reshape(len(links), 3)
    if not np.all(np.isfinite(targets)):
        raise InvalidInputError("retarget targets contain non-finite values")
    return targets


def _residual(
    chain: KinematicChain,
    q: np.ndarray,
    q_prev: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    links: Sequence[int],
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    frames = chain_frames(chain, q)
    positions = frames[1][list(links), :3, 3] if links else np.zeros((0, 3))
    r = np.concatenate([(positions - targets).ravel(), math.sqrt(alpha) * (q - q_prev)])
    return r, positions, frames


def _residual_jacobian(
    chain: KinematicChain,
    q: np.ndarray,
    alpha: float,
    links: Sequence[int],
    frames: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    rows = [link_jacobian(chain, q, link, frames=frames) for link in links]
    rows.append(math.sqrt(alpha) * np.eye(chain.dof))
    return np.vstack(rows)


def objective(
    chain: KinematicChain,
    q_t: ArrayLike,
    q_prev: ArrayLike,
    targets: np.ndarray,
    alpha: float,
    links: Sequence[int] = (),
) -> float:
    """Squared link-position error plus ``alpha * ||q_t - q_prev||^2``."""
    q_t = as_joint_config(chain, q_t)
    q_prev = as_joint_config(chain, q_prev)
    r, _, _ = _residual(chain, q_t, q_prev, _check_targets(targets, links), alpha, links)
    return float(r @ r)


def objective_gradient(
    chain: KinematicChain,
    q_t: ArrayLike,
    q_prev: ArrayLike,
    targets: np.ndarray,
    alpha: float,
    links: Sequence[int] = (),
) -> np.ndarray:
    """Analytic gradient of :func:`objective` with respect to ``q_t``."""
    q_t = as_joint_config(chain, q_t)
    q_prev = as_joint_config(chain, q_prev)
    targets = _check_targets(targets, links)
    r, _, frames = _residual(chain, q_t, q_prev, targets, alpha, links)
    jac = _residual_jacobian(chain, q_t, alpha, links, frames)
    return 2.0 * jac.T @ r


# ---------------------------------------------------------------------------
# Per-frame solve
# ---------------------------------------------------------------------------

def _projected_gradient(
    g: np.ndarray, q: np.ndarray, lower: np.ndarray, upper: np.ndarray,
) -> np.ndarray:
    pg = g.copy()
    pg[(q <= lower) & (g > 0.0)] = 0.0
    pg[(q >= upper) & (g < 0.0)] = 0.0
    return pg


def retarget_frame(
    chain: KinematicChain,
    q_prev: ArrayLike,
    targets: np.ndarray,
    config: RetargetConfig | None = None,
    *,
    mapping: ResolvedMapping | None = None,
    q_start: ArrayLike | None = None,
) -> FrameSolution:
    """Minimize the frame objective starting from *q_start* (default *q_prev*).

    Non-convergence within the iteration cap is reported through the
    ``converged`` flag on the best iterate, not raised.
    """
    config = config or RetargetConfig()
    opts = config.solver
    mapping = mapping or resolve_mapping(chain, config)
    links = mapping.links
    alpha = config.alpha
    lower, upper = chain.lower, chain.upper
    q_prev = np.clip(as_joint_config(chain, q_prev), lower, upper)
    targets = _check_targets(targets, links)
    q = q_prev.copy() if q_start is None else np.clip(as_joint_config(chain, q_start), lower, upper)

    r, _, frames = _residual(chain, q, q_prev, targets, alpha, links)
    f = float(r @ r)
    mu: float | None = None
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        jac = _residual_jacobian(chain, q, alpha, links, frames)
        g = 2.0 * jac.T @ r
        pg = _projected_gradient(g, q, lower, upper)
        if float(np.linalg.norm(pg)) < opts.gradient_tolerance:
            converged = True
            break
        free = pg != 0.0
        jf = jac[:, free]
        jtj = jf.T @ jf
        if mu is None:
            mu = opts.damping * max(float(np.max(np.diag(jtj))), 1.0)

        accepted = False
        while not accepted and mu < 1e16:
            system = jtj + mu * np.eye(jtj.shape[0])
            delta = np.zeros(chain.dof)
            if np.linalg.cond(system) > opts.condition_limit:
                found = _backtrack(
                    chain, q, q_prev, targets, alpha, links, f, pg, opts.max_backtracks,
                )
                if found is not None:
                    accepted = True
                    step = found[0] - q
                    q, f, r, frames = found
                break
            delta[free] = np.linalg.solve(system, -(jf.T @ r))
            trial = np.clip(q + delta, lower, upper)
            r_trial, _, frames_trial = _residual(chain, trial, q_prev, targets, alpha, links)
            f_trial = float(r_trial @ r_trial)
            if f_trial < f:
                accepted = True
                step = trial - q
                q, f, r, frames = trial, f_trial, r_trial, frames_trial
                mu = max(mu / 3.0, 1e-15)
            else:
                mu *= 4.0
        if not accepted:
            # No decreasing step exists at floating-point resolution.
            converged = float(np.linalg.norm(pg)) < math.sqrt(opts.gradient_tolerance)
            break
        if float(np.linalg.norm(step)) <= opts.step_tolerance:
            converged = True
            break
    return FrameSolution(q=q, residual=f, converged=converged, iterations=iterations)


def _backtrack(
    chain: KinematicChain,
    q: np.ndarray,
    q_prev: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    links: Sequence[int],
    f: float,
    direction: np.ndarray,
    max_backtracks: int,
) -> tuple[np.ndarray, float, np.ndarray, tuple[np.ndarray, np.ndarray]] | None:
    """Armijo backtracking along the negative projected gradient; None if nothing decreases."""
    norm2 = float(direction @ direction)
    t = 1.0 / max(math.sqrt(norm2), 1.0)
    best = None
    for _ in range(max_backtracks):
        trial = np.clip(q - t * direction, chain.lower, chain.upper)
        r_trial, _, frames_trial = _residual(chain, trial, q_prev, targets, alpha, links)
        f_trial = float(r_trial @ r_trial)
        if f_trial <= f - 1e-4 * t * norm2:
            return trial, f_trial, r_trial, frames_trial
        if f_trial < (best[1] if best else f):
            best = (trial, f_trial, r_trial, frames_trial)
        t *= 0.5
    return best


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RobotTrajectory:
    """(T, dof) joint values with per-frame objective and convergence flag."""

    q: np.ndarray
    residual: np.ndarray
    converged: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "residual", np.asarray(self.residual, dtype=float))
        object.__setattr__(self, "converged", np.asarray(self.converged, dtype=bool))
        n = self.q.shape[0]
        if self.q.ndim != 2 or n < 1:
            raise InvalidInputError("a robot trajectory needs at least one frame")
        if self.residual.shape != (n,) or self.converged.shape != (n,):
            raise InvalidInputError("residual and converged must have one entry per frame")

    @property
    def length(self) -> int:
        return self.q.shape[0]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def retarget_trajectory(
    chain: KinematicChain,
    traj: HumanHandTrajectory,
    config: RetargetConfig | None = None,
) -> RobotTrajectory:
    """Solve every frame in order, chaining each solution into the next frame's regularizer.

    The first frame is regularized toward the chain's mean pose.
    """
    config = config or RetargetConfig()
    mapping = resolve_mapping(chain, config)
    q_prev = mean_pose(chain)
    qs, residuals, flags = [], [], []
    total_iterations = 0
    for t in range(traj.length):
        targets = traj.keypoints[t, list(mapping.keypoints)]
        solution = retarget_frame(chain, q_prev, targets, config, mapping=mapping)
        qs.append(solution.q)
        residuals.append(solution.residual)
        flags.append(solution.converged)
        total_iterations += solution.iterations
        q_prev = solution.q
    result = RobotTrajectory(
        q=np.array(qs), residual=np.array(residuals), converged=np.array(flags),
    )
    logger.info(
        "retarget_complete",
        frames=result.length,
        non_converged=int(np.sum(~result.converged)),
        max_residual=float(result.residual.max()),
        iterations=total_iterations,
    )
    return result


def write_robot_trajectory(traj: RobotTrajectory, path: Path | str) -> None:
    lines = [
        json.dumps({
            "t": t,
            "q": traj.q[t].tolist(),
            "residual": float(traj.residual[t]),
            "converged": bool(traj.converged[t]),
        }, sort_keys=True)
        for t in range(traj.length)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_robot_trajectory(path: Path | str) -> RobotTrajectory:
    path = Path(path)
    try:
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        rows.sort(key=lambda r: r["t"])
        if [r["t"] for r in rows] != list(range(len(rows))):
            raise InvalidInputError(f"{path}: frame indices must run 0..T-1 without gaps")
        return RobotTrajectory(
            q=np.array([r["q"] for r in rows], dtype=float),
            residual=np.array([r["residual"] for r in rows], dtype=float),
            converged=np.array([r["converged"] for r in rows], dtype=bool),
        )
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read robot trajectory ({exc})") from exc
    except KeyError as exc:
        raise InvalidInputError(f"{path}: missing field {exc.args[0]!r}") from exc
