"""Joint DDIM sampling across views coupled through a canonical space.

Every timestep has three layers: noise prediction (instance space only),
the Tweedie clean estimate and the DDIM update. A synchronisation strategy
says in which space the last two run and where the views are re-synchronised
by ``F_i = f_i o A o {g_j}``. Strategies are described by a
:class:`DenoisingPlan`; :func:`case_plan` gives the plan for each numbered
case and :func:`run_case` runs the six representative cases (plus the
unsynchronised baseline) from their closed-form step rules.

Trajectories (where Tweedie / DDIM run, ``W`` instance, ``Z`` canonical)::

    1: W / W    2: Z / W    3: Z / Z    4: W / Z

Insertion slots for ``F_i`` per (denoised variable, trajectory):

    instance  1: eps_in eps_out phi_in phi_out psi_in
    instance  2: eps_in psi_in
    instance  3: eps_in
    instance  4: eps_in eps_out phi_in
    canonical 1: eps_out phi_out
    canonical 2: (none)
    canonical 3: (none)
    canonical 4: eps_out

On instance trajectory 1, a mask that re-synchronises all three uses of
``w`` (``eps_in``, ``phi_in`` and ``psi_in``) is executed by synchronising
the step output instead; this is the form in which those four strategies
(cases 3, 26, 32 and 34) are written.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .noise import seeded_gaussian_noise
from .schedule import ddim_step, tweedie
from .spaces import CanonicalState, aggregate, project, unproject

__all__ = [
    "SLOTS",
    "DenoisingPlan",
    "SyncRunResult",
    "TraceStep",
    "AppendixCReport",
    "case_plan",
    "run_case",
    "run_plan",
    "trajectory1_plans",
    "verify_appendix_c_conditions",
]

PROJECT = "project_from_canonical"
DIRECT = "direct_instance"

SLOTS = {
    ("instance", 1): ("eps_in", "eps_out", "phi_in", "phi_out", "psi_in"),
    ("instance", 2): ("eps_in", "psi_in"),
    ("instance", 3): ("eps_in",),
    ("instance", 4): ("eps_in", "eps_out", "phi_in"),
    ("canonical", 1): ("eps_out", "phi_out"),
    ("canonical", 2): (),
    ("canonical", 3): (),
    ("canonical", 4): ("eps_out",),
}


@dataclass(frozen=True)
class DenoisingPlan:
    denoise_space: str
    trajectory: int
    sync_mask: tuple = ()
    init_policy: str = None  # None: choose from the operators

    def __post_init__(self):
        object.__setattr__(self, "sync_mask", tuple(bool(b) for b in self.sync_mask))
        key = (self.denoise_space, self.trajectory)
        if key not in SLOTS:
            raise ConfigError(f"no trajectory {self.trajectory} for {self.denoise_space!r} denoising", "plan")
        if len(self.sync_mask) != len(SLOTS[key]):
            raise ConfigError(
                f"sync_mask needs {len(SLOTS[key])} entries {SLOTS[key]}, got {len(self.sync_mask)}",
                "plan.sync_mask",
            )
        if self.init_policy not in (None, PROJECT, DIRECT):
            raise ConfigError(f"unknown init_policy {self.init_policy!r}", "plan.init_policy")
        if self.denoise_space == "canonical" and self.init_policy == DIRECT:
            raise ConfigError("canonical denoising must start from canonical noise", "plan.init_policy")

    @property
    def slots(self):
        return dict(zip(SLOTS[(self.denoise_space, self.trajectory)], self.sync_mask))

    def with_init(self, init_policy):
        return DenoisingPlan(self.denoise_space, self.trajectory, self.sync_mask, init_policy)


@dataclass
class TraceStep:
    t: int
    instances: list
    canonical: CanonicalState


@dataclass
class SyncRunResult:
    final_canonical: CanonicalState
    final_instances: list
    trace: list = field(default=None)
    plan: DenoisingPlan = None


def _mask(names, trajectory, space="instance"):
    slots = SLOTS[(space, trajectory)]
    unknown = set(names) - set(slots)
    assert not unknown, unknown
    return DenoisingPlan(space, trajectory, tuple(s in names for s in slots))


# Numbered strategies. The instance trajectory-1 entries list which of
# (eps_in, eps_out, phi_in, phi_out, psi_in) are synchronised.
_T1 = {
    "nosync": (),
    1: ("eps_out",),
    2: ("phi_out",),
    3: ("eps_in", "phi_in", "psi_in"),
    7: ("eps_in",),
    8: ("eps_in", "eps_out"),
    9: ("phi_in",),
    10: ("eps_in", "phi_in"),
    11: ("eps_out", "phi_in"),
    12: ("eps_in", "eps_out", "phi_in"),
    13: ("eps_in", "phi_out"),
    14: ("eps_out", "phi_out"),
    15: ("eps_in", "eps_out", "phi_out"),
    16: ("phi_in", "phi_out"),
    17: ("eps_in", "phi_in", "phi_out"),
    18: ("eps_out", "phi_in", "phi_out"),
    19: ("eps_in", "eps_out", "phi_in", "phi_out"),
    20: ("psi_in",),
    21: ("eps_in", "psi_in"),
    22: ("eps_out", "psi_in"),
    23: ("eps_in", "eps_out", "psi_in"),
    24: ("phi_in", "psi_in"),
    25: ("eps_out", "phi_in", "psi_in"),
    26: ("eps_in", "eps_out", "phi_in", "psi_in"),
    27: ("phi_out", "psi_in"),
    28: ("eps_in", "phi_out", "psi_in"),
    29: ("eps_out", "phi_out", "psi_in"),
    30: ("eps_in", "eps_out", "phi_out", "psi_in"),
    31: ("phi_in", "phi_out", "psi_in"),
    32: ("eps_in", "phi_in", "phi_out", "psi_in"),
    33: ("eps_out", "phi_in", "phi_out", "psi_in"),
    34: ("eps_in", "eps_out", "phi_in", "phi_out", "psi_in"),
}
_OTHER = {
    35: ("instance", 2, ()),
    36: ("instance", 2, ("eps_in",)),
    37: ("instance", 2, ("psi_in",)),
    38: ("instance", 2, ("eps_in", "psi_in")),
    39: ("instance", 3, ()),
    40: ("instance", 3, ("eps_in",)),
    41: ("instance", 4, ()),
    42: ("instance", 4, ("eps_in",)),
    43: ("instance", 4, ("eps_out",)),
    44: ("instance", 4, ("eps_in", "eps_out")),
    45: ("instance", 4, ("phi_in",)),
    46: ("instance", 4, ("eps_in", "phi_in")),
    47: ("instance", 4, ("eps_out", "phi_in")),
    48: ("instance", 4, ("eps_in", "eps_out", "phi_in")),
    4: ("canonical", 3, ()),
    5: ("canonical", 4, ()),
    49: ("canonical", 4, ("eps_out",)),
    6: ("canonical", 1, ()),
    50: ("canonical", 1, ("eps_out",)),
    51: ("canonical", 1, ("phi_out",)),
    52: ("canonical", 1, ("eps_out", "phi_out")),
    53: ("canonical", 2, ()),
}


def case_plan(case_id):
    """Plan for a numbered case (1-53) or ``"nosync"``."""
    if isinstance(case_id, str) and case_id.isdigit():
        case_id = int(case_id)
    if case_id in _T1:
        return _mask(_T1[case_id], 1)
    if case_id in _OTHER:
        space, traj, names = _OTHER[case_id]
        return _mask(names, traj, space)
    raise ConfigError(f"unknown case {case_id!r}; expected 1-53 or 'nosync'", "plan.case")


def trajectory1_plans():
    """All 32 instance trajectory-1 plans, in binary order of the mask."""
    return [
        DenoisingPlan("instance", 1, tuple(bool(m >> (4 - b) & 1) for b in range(5)))
        for m in range(32)
    ]


class _Engine:
    """Per-run helper bundling operators, predictor and schedule."""

    def __init__(self, ops, predictor, sched):
        ops = list(ops)
        if not ops:
            raise ContractError("need at least one projection operator")
        first = ops[0]
        for op in ops:
            if op.canonical_shape != first.canonical_shape or op.n_planes != first.n_planes:
                raise ConfigError("operators disagree on the canonical space", "operators")
            if op.canonical_kind != first.canonical_kind:
                raise ConfigError("operators mix multiplane and single-slab canonical spaces", "operators")
        shape = getattr(predictor, "shape", None)
        if shape is not None:
            for i, op in enumerate(ops):
                if tuple(shape) != op.instance_shape:
                    raise ContractError(
                        f"predictor shape {tuple(shape)} does not match view {i} shape {op.instance_shape}"
                    )
        self.ops = ops
        self.predictor = predictor
        self.sched = sched
        self.canonical_shape = (first.n_planes,) + first.canonical_shape
        self.canonical_kind = first.canonical_kind

    # A o {g_j}
    def canon(self, ws):
        return aggregate(unproject(op, w) for op, w in zip(self.ops, ws))

    # {f_i}
    def spread(self, z):
        return [project(op, z) for op in self.ops]

    # {F_i}
    def sync(self, ws):
        return self.spread(self.canon(ws))

    def eps(self, ws, t):
        return [self.predictor.predict(w, t, self.sched) for w in ws]

    def phi(self, xs, es, t):
        return [tweedie(x, e, t, self.sched) for x, e in zip(xs, es)]

    def psi(self, xs, x0s, t, t_prev):
        return [ddim_step(x, x0, t, t_prev, self.sched) for x, x0 in zip(xs, x0s)]

    def phi_c(self, z, e, t):
        return z.like(tweedie(z.slabs, e.slabs, t, self.sched))

    def psi_c(self, z, x0, t, t_prev):
        return z.like(ddim_step(z.slabs, x0.slabs, t, t_prev, self.sched))

    def has_multiplane(self):
        return self.ops[0].n_planes > 1

    def initial(self, space, init_policy, seed):
        z = CanonicalState(seeded_gaussian_noise(self.canonical_shape, seed, 0), self.canonical_kind)
        if space == "canonical":
            return z
        if init_policy == DIRECT:
            return [seeded_gaussian_noise(op.instance_shape, seed, i + 1) for i, op in enumerate(self.ops)]
        return self.spread(z)


def _resolve_init(plan, engine):
    if plan.denoise_space == "canonical":
        return PROJECT
    if plan.init_policy is not None:
        return plan.init_policy
    return DIRECT if engine.has_multiplane() else PROJECT


# ---------------------------------------------------------------------------
# generic plan steps
# ---------------------------------------------------------------------------

def _instance_step(e, plan, w, t, tp):
    s = plan.slots
    traj = plan.trajectory
    if traj == 1:
        out_sync = s["eps_in"] and s["phi_in"] and s["psi_in"]
        a, c, ps = (False, False, False) if out_sync else (s["eps_in"], s["phi_in"], s["psi_in"])
        fw = e.sync(w) if (a or c or ps) else None
        eps = e.eps(fw if a else w, t)
        if s["eps_out"]:
            eps = e.sync(eps)
        x0 = e.phi(fw if c else w, eps, t)
        if s["phi_out"]:
            x0 = e.sync(x0)
        nxt = e.psi(fw if ps else w, x0, t, tp)
        return e.sync(nxt) if out_sync else nxt

    fw = e.sync(w) if any(s.values()) else None
    eps = e.eps(fw if s["eps_in"] else w, t)
    zc = e.canon(w)
    if traj == 2:
        x0 = e.spread(e.phi_c(zc, e.canon(eps), t))
        return e.psi(fw if s["psi_in"] else w, x0, t, tp)
    if traj == 3:
        x0c = e.phi_c(zc, e.canon(eps), t)
        return e.spread(e.psi_c(zc, x0c, t, tp))
    # trajectory 4
    if s["eps_out"]:
        eps = e.sync(eps)
    x0c = e.canon(e.phi(fw if s["phi_in"] else w, eps, t))
    return e.spread(e.psi_c(zc, x0c, t, tp))


def _canonical_step(e, plan, z, t, tp):
    s = plan.slots
    traj = plan.trajectory
    ws = e.spread(z)
    eps = e.eps(ws, t)
    if traj == 1:
        if s["eps_out"]:
            eps = e.sync(eps)
        x0 = e.phi(ws, eps, t)
        if s["phi_out"]:
            x0 = e.sync(x0)
        return e.canon(e.psi(ws, x0, t, tp))
    if traj == 2:
        x0 = e.spread(e.phi_c(z, e.canon(eps), t))
        return e.canon(e.psi(ws, x0, t, tp))
    if traj == 3:
        return e.psi_c(z, e.phi_c(z, e.canon(eps), t), t, tp)
    if s["eps_out"]:
        eps = e.sync(eps)
    return e.psi_c(z, e.canon(e.phi(ws, eps, t)), t, tp)


def _plan_step(e, plan):
    if plan.denoise_space == "canonical":
        return lambda z, t, tp: _canonical_step(e, plan, z, t, tp)
    return lambda w, t, tp: _instance_step(e, plan, w, t, tp)


# ---------------------------------------------------------------------------
# closed-form rules of the representative cases
# ---------------------------------------------------------------------------

def _case_step(e, case_id):
    if case_id == "nosync":
        return lambda w, t, tp: e.psi(w, e.phi(w, e.eps(w, t), t), t, tp)
    if case_id == 1:
        return lambda w, t, tp: e.psi(w, e.phi(w, e.sync(e.eps(w, t)), t), t, tp)
    if case_id == 2:
        return lambda w, t, tp: e.psi(w, e.sync(e.phi(w, e.eps(w, t), t)), t, tp)
    if case_id == 3:
        return lambda w, t, tp: e.sync(e.psi(w, e.phi(w, e.eps(w, t), t), t, tp))

    def case4(z, t, tp):
        eps_c = e.canon(e.eps(e.spread(z), t))
        return e.psi_c(z, e.phi_c(z, eps_c, t), t, tp)

    def case5(z, t, tp):
        ws = e.spread(z)
        return e.psi_c(z, e.canon(e.phi(ws, e.eps(ws, t), t)), t, tp)

    def case6(z, t, tp):
        ws = e.spread(z)
        return e.canon(e.psi(ws, e.phi(ws, e.eps(ws, t), t), t, tp))

    return {4: case4, 5: case5, 6: case6}[case_id]


def _run(e, space, step, init_policy, seed, trace):
    state = e.initial(space, init_policy, seed)
    snapshots = [] if trace else None

    def snap(t, state):
        if space == "canonical":
            snapshots.append(TraceStep(t, e.spread(state), state))
        else:
            snapshots.append(TraceStep(t, list(state), e.canon(state)))

    if trace:
        snap(e.sched.T_train, state)
    for t, tp in e.sched.transitions():
        state = step(state, t, tp)
        if trace:
            snap(tp, state)
    if space == "canonical":
        return SyncRunResult(state, e.spread(state), snapshots)
    return SyncRunResult(e.canon(state), list(state), snapshots)


def run_plan(plan, ops, predictor, sched, seed, trace=False):
    """Sample with an arbitrary plan; returns a :class:`SyncRunResult`."""
    e = _Engine(ops, predictor, sched)
    init = _resolve_init(plan, e)
    result = _run(e, plan.denoise_space, _plan_step(e, plan), init, seed, trace)
    result.plan = plan.with_init(init)
    return result


def run_case(case_id, ops, predictor, sched, z_T_seed, init_policy=None, trace=False):
    """Sample with a numbered case (or ``"nosync"``).

    Cases 1-6 and ``"nosync"`` use their closed-form step rules; any other
    number runs through :func:`run_plan`. ``init_policy`` overrides the
    default, which projects canonical noise into the views except for
    multiplane (n-to-1) setups, whose views start from their own noise.
    """
    plan = case_plan(case_id)
    if init_policy is not None:
        plan = plan.with_init(init_policy)
    key = int(case_id) if str(case_id).isdigit() else case_id
    if key not in ("nosync", 1, 2, 3, 4, 5, 6):
        return run_plan(plan, ops, predictor, sched, z_T_seed, trace)
    e = _Engine(ops, predictor, sched)
    init = _resolve_init(plan, e)
    result = _run(e, plan.denoise_space, _case_step(e, key), init, z_T_seed, trace)
    result.plan = plan.with_init(init)
    return result


# ---------------------------------------------------------------------------
# equivalence preconditions
# ---------------------------------------------------------------------------

@dataclass
class AppendixCReport:
    """Residuals of the two idempotency conditions behind case equivalence.

    ``init_residual``: max |z - A({g_i(f_i(z))})|.
    ``sync_residual``: max |A({g_i(w_i)}) - A({g_i(f_i(A({g_j(w_j)})))})|.
    ``reprojection``: max over views of ||w - f(g(w))||.
    ``uncovered``: canonical pixels no view reaches (they count as zero).
    """

    init_residual: float
    sync_residual: float
    reprojection: float
    uncovered: int
    trials: int

    @property
    def classification(self):
        exact = (
            self.uncovered == 0
            and max(self.init_residual, self.sync_residual, self.reprojection) < 1e-12
        )
        return "exact-1to1" if exact else "approximate"

    def passes(self, tol=1e-9):
        return self.uncovered == 0 and max(self.init_residual, self.sync_residual, self.reprojection) < tol


def verify_appendix_c_conditions(ops, trials, seed):
    """Measure the equivalence preconditions on random canonical and view fields."""
    if trials < 1:
        raise ContractError("trials must be >= 1")
    e = _Engine(ops, None, None)

    def canon(ws):
        return aggregate((unproject(op, w) for op, w in zip(e.ops, ws)), fill=0.0)

    first = [unproject(op, np.zeros(op.instance_shape))[1] for op in e.ops]
    covered = np.logical_or.reduce(first)
    r_init = r_sync = r_rep = 0.0
    stride = len(e.ops) + 1
    for k in range(trials):
        z = CanonicalState(seeded_gaussian_noise(e.canonical_shape, seed, k * stride), e.canonical_kind)
        back = canon(e.spread(z))
        r_init = max(r_init, float(np.max(np.abs(z.slabs - back.slabs))))
        ws = [
            seeded_gaussian_noise(op.instance_shape, seed, k * stride + 1 + i)
            for i, op in enumerate(e.ops)
        ]
        c = canon(ws)
        again = canon(e.spread(c))
        r_sync = max(r_sync, float(np.max(np.abs(c.slabs - again.slabs))))
        for op, w in zip(e.ops, ws):
            partial, _ = unproject(op, w)
            r_rep = max(r_rep, float(np.linalg.norm(w - project(op, partial))))
    return AppendixCReport(r_init, r_sync, r_rep, int((~covered).sum()), trials)
