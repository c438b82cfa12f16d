"""Protocol definitions for trafficbayes."""

from typing import Protocol

import numpy as np
from numpy.typing import NDArray


class LogDensity(Protocol):
    """
    Protocol for targets of the Hamiltonian Monte Carlo engine.

    A target maps an unconstrained parameter vector to its log density and the
    gradient of that log density. ``ModelPosterior`` implements this protocol, and
    so does any plain function with the same signature, which keeps the engine
    testable on analytic targets.

    Targets must be picklable when chains run in worker processes.
    """

    def __call__(self, q: NDArray[np.float64], /) -> tuple[float, NDArray[np.float64]]:
        """
        Evaluate the target.

        Args:
            q: Unconstrained parameter vector

        Returns:
            Tuple of (log density, gradient); the log density may be ``-inf``
            or ``nan`` outside the support, which the engine treats as a divergence

        """
        ...


class GeneratedQuantities(Protocol):
    """
    Protocol for per-draw derived quantities computed while sampling.

    Implementations return a flat vector for every retained draw; the engine
    stores these alongside the parameter draws under the given names.
    """

    @property
    def names(self) -> tuple[str, ...]:
        """Names of the generated coordinates, in output order."""
        ...

    def __call__(self, q: NDArray[np.float64], /) -> NDArray[np.float64]:
        """
        Compute the generated quantities of one retained draw.

        Args:
            q: Unconstrained parameter vector of the draw

        Returns:
            Vector aligned with ``names``

        """
        ...
