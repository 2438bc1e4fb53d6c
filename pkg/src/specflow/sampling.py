"""Step laws, design laws, trajectory generation and windowed datasets."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .dynamics import ReferenceFlow, VectorFieldSpec, integrate_steps, flow
from .errors import ConfigurationError, GenerationError, ValidationError

__all__ = [
    "StepLawSpec",
    "DesignLawSpec",
    "TrajectoryRecord",
    "WindowSample",
    "Dataset",
    "generate_steps",
    "step_moments",
    "generate_dataset",
]

STEP_KINDS = ("uniform_deterministic", "log_uniform", "geometric_ramp")
DESIGN_KINDS = ("iid_uniform_box", "trajectory_time_average")


@dataclass(frozen=True)
class StepLawSpec:
    """Law of time advances.

    ``uniform_deterministic`` uses the constant step ``h_max``.
    ``log_uniform`` draws each step log-uniformly on ``[h_min, h_max]``
    intersected with the ratio window around the previous step.
    ``geometric_ramp`` starts at ``h_min`` and multiplies by ``ramp_ratio``
    (default: the upper ratio bound), reversing direction at ``h_max`` and
    ``h_min`` so that every ratio is ``ramp_ratio`` or its inverse.
    """

    kind: str
    h_min: float
    h_max: float
    ratio_bounds: tuple[float, float] = (0.5, 2.0)
    ramp_ratio: float | None = None

    def validate(self) -> None:
        if self.kind not in STEP_KINDS:
            raise ConfigurationError(f"steps.kind must be one of {STEP_KINDS}, got {self.kind!r}")
        if not (0 < self.h_min and math.isfinite(self.h_max)):
            raise ConfigurationError("steps.h_min must be positive and steps.h_max finite")
        if self.h_min > self.h_max:
            raise ConfigurationError(f"steps.h_min ({self.h_min}) > steps.h_max ({self.h_max})")
        lo, hi = self.ratio_bounds
        if not (0 < lo <= hi):
            raise ConfigurationError("steps.ratio_bounds must satisfy 0 < lower <= upper")
        if self.kind == "geometric_ramp":
            r = self.effective_ramp_ratio
            if r < 1.0:
                raise ConfigurationError("steps.ramp_ratio must be >= 1")
            if not (lo <= 1.0 / r and r <= hi):
                raise ConfigurationError("steps.ratio_bounds exclude the ramp ratio or its inverse")
            if r > 1.0 and self.h_min * r > self.h_max * (1 + 1e-12):
                raise ConfigurationError("steps.h_max too small for one ramp step from h_min")
        elif not (lo <= 1.0 <= hi):
            raise ConfigurationError("steps.ratio_bounds must contain 1 for this step law")

    @property
    def effective_ramp_ratio(self) -> float:
        return self.ramp_ratio if self.ramp_ratio is not None else self.ratio_bounds[1]


@dataclass(frozen=True)
class DesignLawSpec:
    """Law of visited states.

    ``iid_uniform_box`` draws a fresh initial condition per trajectory from
    ``box``. ``trajectory_time_average`` runs each trajectory for ``horizon``
    time units (burn-in toward the time-average law) before recording.
    ``trajectory_length`` fixes the number of recorded states per trajectory;
    by default it is chosen to yield ``n_windows`` windows. When
    ``n_trajectories`` is None every window comes from its own trajectory
    (or as few trajectories as ``trajectory_length`` allows).
    """

    kind: str = "iid_uniform_box"
    box: tuple | None = None
    n_trajectories: int | None = None
    horizon: float = 0.0
    trajectory_length: int | None = None

    def validate(self) -> None:
        if self.kind not in DESIGN_KINDS:
            raise ConfigurationError(f"design.kind must be one of {DESIGN_KINDS}, got {self.kind!r}")
        if self.n_trajectories is not None and self.n_trajectories < 1:
            raise ConfigurationError("design.n_trajectories must be >= 1")
        if self.horizon < 0:
            raise ConfigurationError("design.horizon must be >= 0")
        if self.trajectory_length is not None and self.trajectory_length < 1:
            raise ConfigurationError("design.trajectory_length must be >= 1")


@dataclass
class TrajectoryRecord:
    traj_id: int
    times: np.ndarray
    states: np.ndarray
    shadow_states: np.ndarray
    noise_sigma: float
    seed: int


@dataclass
class WindowSample:
    anchor_x: np.ndarray
    h: float
    zeta: np.ndarray
    window_states: np.ndarray
    label: np.ndarray | None = None
    weight: float = 1.0
    traj_id: int = -1
    start: int = -1


def generate_steps(law: StepLawSpec, count: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """Draw ``count`` steps from ``law``; deterministic given ``seed``."""
    law.validate()
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = law.ratio_bounds
    if law.kind == "uniform_deterministic":
        return np.full(count, float(law.h_max))
    if law.kind == "geometric_ramp":
        r = law.effective_ramp_ratio
        steps = np.empty(count)
        steps[0] = law.h_min
        up = True
        for k in range(1, count):
            if r == 1.0:
                steps[k] = steps[k - 1]
                continue
            if up and steps[k - 1] * r > law.h_max * (1 + 1e-12):
                up = False
            elif not up and steps[k - 1] / r < law.h_min * (1 - 1e-12):
                up = True
            steps[k] = steps[k - 1] * r if up else steps[k - 1] / r
        return steps
    # log_uniform
    log_min, log_max = math.log(law.h_min), math.log(law.h_max)
    u = rng.random(count)
    steps = np.empty(count)
    steps[0] = math.exp(log_min + u[0] * (log_max - log_min))
    for k in range(1, count):
        a = max(log_min, math.log(lo * steps[k - 1]))
        b = min(log_max, math.log(hi * steps[k - 1]))
        steps[k] = min(max(math.exp(a + u[k] * (b - a)), lo * steps[k - 1]), hi * steps[k - 1])
    # exp(log(h)) can land one ulp outside the support
    return np.clip(steps, law.h_min, law.h_max)


def step_moments(steps, qs=(1,)) -> dict[float, float]:
    """Empirical moments ``E[H^q]`` (mean of ``h_k**q``)."""
    steps = np.asarray(steps, dtype=float).ravel()
    return {q: float(np.mean(steps**q)) for q in qs}


@dataclass
class Dataset:
    """Windowed dataset with trajectory provenance.

    Array fields are indexed by window: ``states`` and ``shadow`` have shape
    ``(N, M+1, n)`` ordered oldest to newest, ``zeta`` has shape ``(N, M-1)``.
    ``steps`` holds the ``M`` time steps inside each window.
    """

    M: int
    traj_id: np.ndarray
    start: np.ndarray
    steps: np.ndarray
    states: np.ndarray
    shadow: np.ndarray
    trajectories: list[TrajectoryRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def dim(self) -> int:
        return int(self.states.shape[2])

    @property
    def h(self) -> np.ndarray:
        return self.steps[:, -1]

    @property
    def zeta(self) -> np.ndarray:
        return self.steps[:, 1:] / self.steps[:, :-1]

    @property
    def anchors(self) -> np.ndarray:
        return self.states[:, -1]

    def window(self, i: int) -> WindowSample:
        return WindowSample(
            anchor_x=self.states[i, -1].copy(),
            h=float(self.h[i]),
            zeta=self.zeta[i].copy(),
            window_states=self.states[i].copy(),
            traj_id=int(self.traj_id[i]),
            start=int(self.start[i]),
        )

    def subset(self, n: int) -> "Dataset":
        """First ``n`` windows (trajectory order)."""
        if n > len(self):
            raise ValidationError(f"dataset has {len(self)} windows, asked for {n}")
        return Dataset(
            M=self.M,
            traj_id=self.traj_id[:n],
            start=self.start[:n],
            steps=self.steps[:n],
            states=self.states[:n],
            shadow=self.shadow[:n],
            trajectories=self.trajectories,
            meta=dict(self.meta),
        )

    def flow_inputs(self, include_zeta: bool = True, shadow: bool = False) -> np.ndarray:
        """Flow-space inputs ``(x_prev, h[, zeta])`` of the last step of each window."""
        states = self.shadow if shadow else self.states
        cols = [states[:, -2], self.h[:, None]]
        if include_zeta and self.M > 1:
            cols.append(self.zeta)
        return np.concatenate(cols, axis=1)

    def flow_targets(self, shadow: bool = False) -> np.ndarray:
        return (self.shadow if shadow else self.states)[:, -1]

    def step_moments(self, qs=(1,)) -> dict[float, float]:
        return step_moments(self.h, qs)

    # -- serialization ----------------------------------------------------

    def window_columns(self) -> list[str]:
        cols = ["traj", "start", "h"]
        cols += [f"zeta{i + 1}" for i in range(self.M - 1)]
        cols += [f"step{i}" for i in range(self.M)]
        cols += [f"x{j}_{c}" for j in range(self.M + 1) for c in range(self.dim)]
        return cols

    def save(self, stem: str | Path, manifest_extra: dict | None = None) -> dict[str, Path]:
        """Write ``<stem>.windows.csv``, ``<stem>.traj.csv`` and ``<stem>.manifest.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        n = len(self)
        rows = np.concatenate(
            [
                self.traj_id[:, None].astype(float),
                self.start[:, None].astype(float),
                self.h[:, None],
                self.zeta,
                self.steps,
                self.states.reshape(n, -1),
            ],
            axis=1,
        )
        windows_path = stem.with_name(stem.name + ".windows.csv")
        io.write_csv(windows_path, self.window_columns(), rows, int_columns=2)
        traj_rows = []
        for rec in self.trajectories:
            for k, t in enumerate(rec.times):
                traj_rows.append([rec.traj_id, k, t, *rec.states[k], *rec.shadow_states[k]])
        traj_cols = ["traj", "index", "t"] + [f"obs_{c}" for c in range(self.dim)]
        traj_cols += [f"true_{c}" for c in range(self.dim)]
        traj_path = stem.with_name(stem.name + ".traj.csv")
        io.write_csv(traj_path, traj_cols, np.asarray(traj_rows, dtype=float).reshape(-1, len(traj_cols)), int_columns=2)
        manifest = dict(self.meta)
        manifest.update(manifest_extra or {})
        manifest["files"] = {
            "windows": windows_path.name,
            "trajectories": traj_path.name,
            "windows_sha256": hashlib.sha256(windows_path.read_bytes()).hexdigest(),
        }
        manifest_path = stem.with_name(stem.name + ".manifest.json")
        io.write_json(manifest_path, manifest)
        return {"windows": windows_path, "trajectories": traj_path, "manifest": manifest_path}

    @classmethod
    def load(cls, stem: str | Path) -> "Dataset":
        """Load a dataset written by :meth:`save` (``stem`` may name any of its files)."""
        stem = Path(stem)
        for suffix in (".windows.csv", ".traj.csv", ".manifest.json"):
            if stem.name.endswith(suffix):
                stem = stem.with_name(stem.name[: -len(suffix)])
        manifest_path = stem.with_name(stem.name + ".manifest.json")
        windows_path = stem.with_name(stem.name + ".windows.csv")
        if not manifest_path.exists() or not windows_path.exists():
            raise FileNotFoundError(f"dataset files for {stem} not found")
        meta = json.loads(manifest_path.read_text())
        M = int(meta["M"])
        cols, rows = io.read_csv(windows_path)
        n_dim = (len(cols) - 3 - (M - 1) - M) // (M + 1)
        rows = rows.reshape(-1, len(cols))
        steps = rows[:, 3 + M - 1 : 3 + M - 1 + M]
        states = rows[:, 3 + M - 1 + M :].reshape(-1, M + 1, n_dim)
        trajectories = []
        shadow = states.copy()
        traj_path = stem.with_name(stem.name + ".traj.csv")
        if traj_path.exists():
            _, trows = io.read_csv(traj_path)
            trows = trows.reshape(-1, 3 + 2 * n_dim)
            for tid in np.unique(trows[:, 0]).astype(int):
                sel = trows[trows[:, 0] == tid]
                trajectories.append(
                    TrajectoryRecord(
                        traj_id=int(tid),
                        times=sel[:, 2],
                        states=sel[:, 3 : 3 + n_dim],
                        shadow_states=sel[:, 3 + n_dim :],
                        noise_sigma=float(meta.get("noise_sigma", 0.0)),
                        seed=int(meta.get("seed", 0)),
                    )
                )
            by_id = {rec.traj_id: rec for rec in trajectories}
            for i in range(rows.shape[0]):
                rec = by_id[int(rows[i, 0])]
                s = int(rows[i, 1])
                shadow[i] = rec.shadow_states[s : s + M + 1]
        return cls(
            M=M,
            traj_id=rows[:, 0].astype(int),
            start=rows[:, 1].astype(int),
            steps=steps,
            states=states,
            shadow=shadow,
            trajectories=trajectories,
            meta=meta,
        )


def _inside(states, box):
    return np.all((states >= box[:, 0]) & (states <= box[:, 1]), axis=-1)


def generate_dataset(
    system: VectorFieldSpec,
    design: DesignLawSpec,
    steps: StepLawSpec,
    M: int,
    n_windows: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    ref: ReferenceFlow | None = None,
) -> Dataset:
    """Simulate trajectories and cut them into stride-1 windows of ``M+1`` states.

    Each trajectory draws its initial condition, step schedule and noise from
    its own child of ``SeedSequence(seed)``, so the output does not depend on
    how trajectories are batched. Observation noise is iid Gaussian on states.
    """
    design.validate()
    steps.validate()
    if M < 1:
        raise ValidationError("M must be >= 1")
    if n_windows < 1:
        raise ValidationError("n_windows must be >= 1")
    if noise_sigma < 0 or not math.isfinite(noise_sigma):
        raise ValidationError("noise_sigma must be finite and >= 0")
    ref = ref or ReferenceFlow(system)
    if design.trajectory_length is not None:
        length = design.trajectory_length
        n_traj = design.n_trajectories or math.ceil(n_windows / max(length - M, 1))
    else:
        n_traj = design.n_trajectories or n_windows
        length = math.ceil(n_windows / n_traj) + M
    if length <= M:
        raise GenerationError(
            f"insufficient window length: trajectories have {length} states, windows need M+1={M + 1}"
        )
    per_traj = length - M
    if n_traj * per_traj < n_windows:
        raise GenerationError(
            f"insufficient windows: {n_traj} trajectories x {per_traj} windows < n_windows={n_windows}"
        )
    n_used = math.ceil(n_windows / per_traj)
    box = np.asarray(design.box, dtype=float) if design.box is not None else system.design_box
    if box.shape == (2,):
        box = np.tile(box, (system.dim, 1))

    children = np.random.SeedSequence(seed).spawn(n_used)
    x0 = np.empty((n_used, system.dim))
    step_table = np.empty((n_used, length - 1))
    noise_rngs = []
    for i, child in enumerate(children):
        ic_seed, step_seed, noise_seed = child.spawn(3)
        x0[i] = np.random.default_rng(ic_seed).uniform(box[:, 0], box[:, 1])
        step_table[i] = generate_steps(steps, length - 1, step_seed) if length > 1 else []
        noise_rngs.append(np.random.default_rng(noise_seed))

    t0 = np.zeros(n_used)
    if design.kind == "trajectory_time_average" and design.horizon > 0:
        x0 = flow(ref, x0, design.horizon)
        t0[:] = design.horizon
    shadow_traj = integrate_steps(ref, x0, step_table, t0=t0)

    safety = system.safety_box()
    for i in range(n_used):
        if not np.all(_inside(shadow_traj[i], safety)):
            raise GenerationError(f"trajectory {i} left the safety box of system {system.name}")

    trajectories = []
    for i in range(n_used):
        noise = noise_rngs[i].normal(0.0, 1.0, size=shadow_traj[i].shape) * noise_sigma
        times = t0[i] + np.concatenate([[0.0], np.cumsum(step_table[i])])
        trajectories.append(
            TrajectoryRecord(
                traj_id=i,
                times=times,
                states=shadow_traj[i] + noise if noise_sigma > 0 else shadow_traj[i].copy(),
                shadow_states=shadow_traj[i],
                noise_sigma=noise_sigma,
                seed=int(children[i].generate_state(1)[0]),
            )
        )

    tid, start, wsteps, wstates, wshadow = [], [], [], [], []
    for rec, st in zip(trajectories, step_table):
        for k in range(per_traj):
            if len(tid) == n_windows:
                break
            tid.append(rec.traj_id)
            start.append(k)
            wsteps.append(st[k : k + M])
            wstates.append(rec.states[k : k + M + 1])
            wshadow.append(rec.shadow_states[k : k + M + 1])

    meta = {
        "system": {"name": system.name, "params": _jsonable(system.params)},
        "design": _jsonable(asdict(design)),
        "steps": _jsonable(asdict(steps)),
        "M": M,
        "n_windows": n_windows,
        "noise_sigma": noise_sigma,
        "seed": seed,
        "tolerance": ref.tolerance,
    }
    return Dataset(
        M=M,
        traj_id=np.asarray(tid, dtype=int),
        start=np.asarray(start, dtype=int),
        steps=np.asarray(wsteps, dtype=float).reshape(len(tid), M),
        states=np.asarray(wstates),
        shadow=np.asarray(wshadow),
        trajectories=trajectories,
        meta=meta,
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
