"""Kernel selection: compiled extension if importable, numpy fallback otherwise.

Set ``ERGODIC_GAMES_PURE=1`` to force the fallback.
"""

import os

from ergodic_games import _kernels_py

BACKEND = "python"

if os.environ.get("ERGODIC_GAMES_PURE", "") not in ("1", "true", "yes"):
    try:
        from ergodic_games import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

stencil_apply = _impl.stencil_apply
game_values = _impl.game_values
solve_games = _impl.solve_games

__all__ = ["BACKEND", "stencil_apply", "game_values", "solve_games"]
