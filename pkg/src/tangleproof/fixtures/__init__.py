"""Hand-drawn example graphs shipped as golden traces.

These graphs do not arise from the model's own dynamics (for instance
vertex 3 picks vertex 1 before vertex 1 could be a visible tip), so they are
stored as non-strict traces: only the range of each parent id is checked.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..engine import Trace, run
from ..io import read_trace, write_trace
from ..model import ArrivalDecision, ModelParams

NAMES = ("fig1", "fig2_left", "fig2_right")
FIG2_SIZE = 200

FIXTURE_PARAMS = ModelParams(h=(1, 2, 3), p_theta=(1 / 3, 1 / 3, 1 / 3), eps_support=(1,),
                             p_eps=(1.0,), k_parents=2, b=36)


def _fig1() -> dict[int, ArrivalDecision]:
    spec = {1: (1, (0,)), 2: (1, (1, 0)), 3: (1, (1,)), 4: (3, (2, 3)), 5: (2, (2, 3))}
    return {n: ArrivalDecision(th, 1, ps) for n, (th, ps) in spec.items()}


def _fig2_left(size: int = FIG2_SIZE) -> dict[int, ArrivalDecision]:
    out = {1: ArrivalDecision(1, 1, (0,))}
    for n in range(2, size):
        ps = (n - 2, n - 1) if n % 4 in (2, 3) else (n - 2,)
        out[n] = ArrivalDecision(1, 1, ps)
    return out


def _fig2_right(size: int = FIG2_SIZE) -> dict[int, ArrivalDecision]:
    out = {1: ArrivalDecision(1, 1, (0,)), 2: ArrivalDecision(1, 1, (0,))}
    for n in range(3, size):
        out[n] = ArrivalDecision(1, 1, (n - 2,))
    return out


_BUILDERS = {"fig1": _fig1, "fig2_left": _fig2_left, "fig2_right": _fig2_right}


def build_fixture(name: str) -> Trace:
    decisions = _BUILDERS[name]()
    return run(FIXTURE_PARAMS, 0, max(decisions), decisions, strict=False)


def fixture_path(name: str) -> Path:
    if name not in _BUILDERS:
        raise KeyError(f"unknown fixture {name!r}; choose from {NAMES}")
    return Path(str(resources.files(__package__) / f"{name}.json"))


def load_fixture(name: str) -> Trace:
    return read_trace(fixture_path(name))


def regenerate(directory: str | Path | None = None) -> None:
    directory = Path(directory) if directory else Path(__file__).parent
    for name in NAMES:
        write_trace(build_fixture(name), directory, stem=name)
