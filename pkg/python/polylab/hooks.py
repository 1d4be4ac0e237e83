"""Per-step observers for the polymer recursion.

``dp.evolve`` hands every step to a single callable. An
:class:`ObserverChain` lets several consumers share that slot, called in
priority order (lower = earlier).

Example::

    chain = ObserverChain()

    @chain.on(priority=-1)
    def log_step(j, nu, rho, increment):
        print(j, increment)

    evolve(field, beta, n, d, observer=chain)
"""

from __future__ import annotations

import functools
from collections.abc import Callable

from polylab.types import LatticeSlice

__all__ = ["StepObserver", "ObserverChain", "observer"]

StepObserver = Callable[[int, LatticeSlice, LatticeSlice, float], None]


class ObserverChain:
    """Priority-ordered fan-out of step callbacks.

    Observers receive ``(j, nu_j, rho_j, increment)`` where ``increment`` is
    ``ln(Z_j / Z_{j-1})``. Equal priorities run in registration order.
    """

    def __init__(self) -> None:
        self._observers: list[tuple[StepObserver, int]] = []
        self._ordered: list[StepObserver] | None = None

    def on(self, *, priority: int = 0) -> Callable[[StepObserver], StepObserver]:
        """Decorator to register an observer."""

        def decorator(fn: StepObserver) -> StepObserver:
            self.add(fn, priority=priority)
            return fn

        return decorator

    def add(self, fn: StepObserver, *, priority: int | None = None) -> ObserverChain:
        """Register ``fn``. Returns self for chaining.

        Without an explicit ``priority`` the value set by :func:`observer`
        is used, else 0.
        """
        if priority is None:
            priority = getattr(fn, "_observer_priority", 0)
        self._observers.append((fn, priority))
        self._ordered = None
        return self

    def __call__(self, j: int, nu: LatticeSlice, rho: LatticeSlice, increment: float) -> None:
        if self._ordered is None:
            self._ordered = [fn for fn, _ in sorted(self._observers, key=lambda x: x[1])]
        for fn in self._ordered:
            fn(j, nu, rho, increment)

    def clear(self) -> None:
        self._observers.clear()
        self._ordered = None

    def __len__(self) -> int:
        return len(self._observers)


def observer(*, priority: int = 0) -> Callable[[StepObserver], StepObserver]:
    """Mark a function as an observer with a default priority.

    The marked function is registered later with :meth:`ObserverChain.add`.
    """

    def decorator(fn: StepObserver) -> StepObserver:
        @functools.wraps(fn)
        def wrapper(j: int, nu: LatticeSlice, rho: LatticeSlice, increment: float) -> None:
            fn(j, nu, rho, increment)

        wrapper._observer_priority = priority  # type: ignore[attr-defined]
        return wrapper

    return decorator
