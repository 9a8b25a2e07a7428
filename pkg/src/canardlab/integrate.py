"""Adaptive explicit integration with dense output and event localization.

The default method is a Dormand-Prince 5(4) embedded pair with PI step-size
control.  Dense output is cubic Hermite on accepted steps; events are scalar
functions localized by bisection on the interpolant to ``event_tolerance``.
A semi-implicit fallback (``method="radau"``, backed by scipy) is selectable
for runs that drive the explicit method into step-size underflow.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IntegrationError, StepSizeUnderflow

__all__ = [
    "IntegratorSettings", "Trajectory", "EventRecord", "EventSpec",
    "integrate", "trajectory_crossings", "write_trajectory_csv",
    "write_trajectory_bin", "read_trajectory_bin", "TRAJECTORY_MAGIC",
]

# Dormand-Prince 5(4) tableau; the propagated solution is 5th order and the
# last stage is FSAL.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_ERR = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                        -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    initial_step: Optional[float] = None
    method: str = "dopri5"          # "dopri5" | "radau"
    event_tolerance: float = 1e-9
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.event_tolerance <= 0:
            raise ValueError("event_tolerance must be positive")
        if self.method not in ("dopri5", "radau"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class EventSpec:
    """Scalar event g(t, y); crossing direction +1, -1 or 0 (both)."""

    fn: Callable
    name: str = "event"
    direction: int = 0
    terminal: bool = False


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    t: float
    state: np.ndarray
    direction: int


class Trajectory:
    """Accepted samples plus derivatives; cubic Hermite interpolation between.

    ``ts`` is strictly increasing and starts at the initial condition.
    """

    def __init__(self, ts, ys, fs, stats=None):
        self.ts = np.asarray(ts, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.fs = np.asarray(fs, dtype=float)
        self.stats = dict(stats or {})
        if self.ts.ndim != 1 or self.ys.shape[0] != self.ts.shape[0]:
            raise ValueError("inconsistent trajectory arrays")
        if np.any(np.diff(self.ts) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.ys)):
            raise ValueError("trajectory contains non-finite states")

    @property
    def t0(self):
        return self.ts[0]

    @property
    def t1(self):
        return self.ts[-1]

    @property
    def dim(self):
        return self.ys.shape[1]

    def _interval(self, t):
        if t < self.ts[0] - 1e-12 or t > self.ts[-1] + 1e-12:
            raise ValueError(f"t={t} outside trajectory span [{self.ts[0]}, {self.ts[-1]}]")
        i = int(np.searchsorted(self.ts, t, side="right")) - 1
        return min(max(i, 0), len(self.ts) - 2)

    def interpolate(self, t):
        """Cubic Hermite state at time t."""
        t = float(t)
        if t <= self.ts[0]:
            return self.ys[0].copy()
        if t >= self.ts[-1]:
            return self.ys[-1].copy()
        i = self._interval(t)
        h = self.ts[i + 1] - self.ts[i]
        s = (t - self.ts[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s ** 2 * (3 - 2 * s)
        h11 = s ** 2 * (s - 1)
        return (h00 * self.ys[i] + h01 * self.ys[i + 1]
                + h * (h10 * self.fs[i] + h11 * self.fs[i + 1]))

    def interpolate_many(self, ts):
        """Vectorized Hermite evaluation at an array of times."""
        ts = np.asarray(ts, dtype=float)
        t_clip = np.clip(ts, self.ts[0], self.ts[-1])
        idx = np.clip(np.searchsorted(self.ts, t_clip, side="right") - 1,
                      0, len(self.ts) - 2)
        tl, tr = self.ts[idx], self.ts[idx + 1]
        h = (tr - tl)[:, None]
        s = ((t_clip - tl) / (tr - tl))[:, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s ** 2 * (3 - 2 * s)
        h11 = s ** 2 * (s - 1)
        return (h00 * self.ys[idx] + h01 * self.ys[idx + 1]
                + h * (h10 * self.fs[idx] + h11 * self.fs[idx + 1]))

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self.interpolate(t)
        return self.interpolate_many(t)

    def sample(self, n=None, dt=None):
        """Uniform resampling of the trajectory (times, states)."""
        if (n is None) == (dt is None):
            raise ValueError("give exactly one of n or dt")
        if dt is not None:
            n = max(2, int(np.floor((self.t1 - self.t0) / dt)) + 1)
        ts = np.linspace(self.t0, self.t1, int(n))
        return ts, self(ts)


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(rhs, t0, y0, f0, t_end, rtol, atol, max_step):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = rhs(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end - t0, max_step)


def _hermite(t, tl, tr, yl, yr, fl, fr):
    h = tr - tl
    s = (t - tl) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s ** 2 * (3 - 2 * s)
    h11 = s ** 2 * (s - 1)
    return h00 * yl + h01 * yr + h * (h10 * fl + h11 * fr)


def _locate_event(gfn, tl, tr, yl, yr, fl, fr, g_left, tol):
    """Bisect the Hermite interpolant for a sign change of gfn."""
    a, b = tl, tr
    ga = g_left
    while (b - a) > tol:
        m = 0.5 * (a + b)
        ym = _hermite(m, tl, tr, yl, yr, fl, fr)
        gm = gfn(m, ym)
        if gm == 0.0:
            a = b = m
            break
        if (ga < 0) != (gm < 0):
            b = m
        else:
            a, ga = m, gm
    t_ev = 0.5 * (a + b)
    return t_ev, _hermite(t_ev, tl, tr, yl, yr, fl, fr)


def _integrate_dopri5(rhs, y0, t_span, settings, events):
    t0, t_end = float(t_span[0]), float(t_span[1])
    if t_end <= t0:
        raise ValueError("t_span must satisfy t1 > t0")
    y = np.asarray(y0, dtype=float).copy()
    f = np.asarray(rhs(t0, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise IntegrationError(f"rhs non-finite at initial condition t={t0}")

    rtol, atol = settings.rtol, settings.atol
    h = settings.initial_step or _initial_step(rhs, t0, y, f, t_end, rtol, atol,
                                               settings.max_step)
    h = min(h, settings.max_step, t_end - t0)

    ts, ys, fs = [t0], [y.copy()], [f.copy()]
    records: List[EventRecord] = []
    g_vals = [ev.fn(t0, y) for ev in events]
    err_prev = 1.0
    n_accept = n_reject = n_fev = 1
    t = t0
    K = np.empty((7, y.size))
    finished = False

    while not finished:
        if n_accept + n_reject > settings.max_steps:
            raise IntegrationError(f"exceeded max_steps={settings.max_steps} at t={t:.6g}")
        if h < 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise StepSizeUnderflow(t, y.tolist(), h)
        if t + h >= t_end:
            h = t_end - t
            finished = True

        K[0] = f
        for i in range(1, 7):
            yi = y + h * (K[:i].T @ _A[i])
            K[i] = rhs(t + _C[i] * h, yi)
        n_fev += 6
        y_new = yi                    # stage 7 argument equals the 5th-order solution
        f_new = K[6]
        err_vec = h * (_B_ERR @ K)
        if not np.all(np.isfinite(y_new)):
            raise IntegrationError(f"non-finite state at t={t + h:.6g}")
        err = _error_norm(err_vec, y, y_new, rtol, atol)

        if err <= 1.0:
            t_new = t + h
            # events on the accepted interval
            step_events = []
            for idx, ev in enumerate(events):
                g_new = ev.fn(t_new, y_new)
                g_old = g_vals[idx]
                crossed = (g_old < 0 < g_new) or (g_old > 0 > g_new) or \
                          (g_new == 0.0 and g_old != 0.0)
                direction = 1 if g_new > g_old else -1
                if crossed and ev.direction in (0, direction):
                    t_ev, y_ev = _locate_event(ev.fn, t, t_new, y, y_new, f, f_new,
                                               g_old, settings.event_tolerance)
                    step_events.append((t_ev, idx, y_ev, direction, ev))
                g_vals[idx] = g_new
            step_events.sort(key=lambda e: (e[0], e[1]))
            terminal_hit = None
            for t_ev, idx, y_ev, direction, ev in step_events:
                records.append(EventRecord(ev.name, t_ev, y_ev, direction))
                if ev.terminal:
                    terminal_hit = (t_ev, y_ev)
                    break
            if terminal_hit is not None:
                t_ev, y_ev = terminal_hit
                if t_ev > ts[-1]:
                    ts.append(t_ev)
                    ys.append(y_ev.copy())
                    fs.append(np.asarray(rhs(t_ev, y_ev), dtype=float))
                    n_fev += 1
                n_accept += 1
                break

            t, y, f = t_new, y_new.copy(), f_new.copy()
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            n_accept += 1
            # PI controller (Hairer II.4): mixes current and previous error
            factor = 0.9 * err ** -0.14 * err_prev ** 0.08 if err > 0 else 10.0
            err_prev = max(err, 1e-10)
            h = min(h * min(10.0, max(0.2, factor)), settings.max_step)
            if not finished:
                h = min(h, t_end - t)
            if finished and t < t_end - 1e-12:
                finished = False
        else:
            n_reject += 1
            finished = False
            h *= max(0.1, 0.9 * err ** -0.2)

    stats = {"n_accepted": n_accept, "n_rejected": n_reject, "n_fev": n_fev,
             "method": "dopri5"}
    return Trajectory(ts, ys, fs, stats), records


def _integrate_radau(rhs, y0, t_span, settings, events):
    from scipy.integrate import solve_ivp

    wrapped = []
    for ev in events:
        def make(fn):
            def g(t, y):
                return fn(t, y)
            return g
        g = make(ev.fn)
        g.terminal = ev.terminal
        g.direction = float(ev.direction)
        wrapped.append(g)
    sol = solve_ivp(rhs, (float(t_span[0]), float(t_span[1])), np.asarray(y0, float),
                    method="Radau", rtol=settings.rtol, atol=settings.atol,
                    max_step=settings.max_step, events=wrapped or None,
                    first_step=settings.initial_step, dense_output=False)
    if not sol.success and sol.status != 1:
        raise IntegrationError(f"radau failed: {sol.message}")
    ts, ys = sol.t, sol.y.T
    fs = np.stack([rhs(t, y) for t, y in zip(ts, ys)])
    records = []
    if events:
        for idx, ev in enumerate(events):
            for t_ev, y_ev in zip(sol.t_events[idx], sol.y_events[idx]):
                records.append(EventRecord(ev.name, float(t_ev), np.asarray(y_ev),
                                           ev.direction))
        records.sort(key=lambda r: r.t)
    stats = {"n_accepted": len(ts) - 1, "n_rejected": 0, "n_fev": sol.nfev,
             "method": "radau"}
    return Trajectory(ts, ys, fs, stats), records


def integrate(rhs, y0, t_span, settings: IntegratorSettings = IntegratorSettings(),
              events: Sequence[EventSpec] = ()) -> Tuple[Trajectory, List[EventRecord]]:
    """Integrate y' = rhs(t, y) over t_span with embedded error control.

    Returns the accepted-step trajectory and all localized event records.
    A terminal event truncates the trajectory at the event time.
    """
    events = list(events)
    if settings.method == "radau":
        return _integrate_radau(rhs, y0, t_span, settings, events)
    return _integrate_dopri5(rhs, y0, t_span, settings, events)


def trajectory_crossings(traj: Trajectory, gfn, tol, direction=0, name="crossing"):
    """Post-hoc sign-change localization of g(t, y) along a trajectory."""
    records = []
    g_prev = gfn(traj.ts[0], traj.ys[0])
    for i in range(len(traj.ts) - 1):
        tl, tr = traj.ts[i], traj.ts[i + 1]
        g_new = gfn(tr, traj.ys[i + 1])
        crossed = (g_prev < 0 < g_new) or (g_prev > 0 > g_new) or \
                  (g_new == 0.0 and g_prev != 0.0)
        d = 1 if g_new > g_prev else -1
        if crossed and direction in (0, d):
            t_ev, y_ev = _locate_event(gfn, tl, tr, traj.ys[i], traj.ys[i + 1],
                                       traj.fs[i], traj.fs[i + 1], g_prev, tol)
            records.append(EventRecord(name, t_ev, y_ev, d))
        g_prev = g_new
    return records


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

TRAJECTORY_MAGIC = b"CLTR"
_HEADER = struct.Struct("<4sIQQ")     # magic, version, n_samples, n_cols


def write_trajectory_csv(traj: Trajectory, path, n_osc=None):
    """CSV export: t, then v_i,u_i,x_i,y_i,z_i per oscillator."""
    dim = traj.dim
    if n_osc is None:
        n_osc = dim // 5 if dim % 5 == 0 else None
    if n_osc is not None and n_osc * 5 == dim:
        cols = [f"{nm}{i + 1}" for i in range(n_osc) for nm in ("v", "u", "x", "y", "z")]
    else:
        cols = [f"y{i}" for i in range(dim)]
    with open(path, "w", newline="") as fh:
        fh.write("t," + ",".join(cols) + "\n")
        for t, row in zip(traj.ts, traj.ys):
            fh.write("%.17g," % t + ",".join("%.17g" % v for v in row) + "\n")


def write_trajectory_bin(traj: Trajectory, path):
    """Compact cache: 4-byte magic, version, counts, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRAJECTORY_MAGIC, 1, traj.ts.shape[0], traj.dim))
        fh.write(traj.ts.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.ys, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.fs, dtype="<f8").tobytes())


def read_trajectory_bin(path) -> Trajectory:
    with open(path, "rb") as fh:
        magic, version, n, dim = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != TRAJECTORY_MAGIC:
            raise IOError(f"bad magic {magic!r}; not a trajectory cache")
        if version != 1:
            raise IOError(f"unsupported trajectory cache version {version}")
        ts = np.frombuffer(fh.read(8 * n), dtype="<f8")
        ys = np.frombuffer(fh.read(8 * n * dim), dtype="<f8").reshape(n, dim)
        fs = np.frombuffer(fh.read(8 * n * dim), dtype="<f8").reshape(n, dim)
    return Trajectory(ts, ys, fs, {"method": "cache"})
