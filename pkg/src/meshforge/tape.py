"""Minimal reverse-mode composition tape.

Every differentiable operation in this package exposes a plain forward
function plus an explicit VJP; the tape only chains those closures so the
fitting and training drivers can accumulate parameter gradients without
committing to an autodiff framework.

Usage: wrap leaf arrays in ``Var``, record each computation with
``tape.push(out_var, [(in_var, vjp_fn), ...])`` where ``vjp_fn`` maps the
upstream gradient of the output to the gradient of that input, then call
``tape.backward(loss_var)``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["Var", "Tape"]


class Var:
    """A value in the computation with a slot for its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    def add_grad(self, g) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


class Tape:
    """Records (output, [(input, vjp), ...]) nodes in execution order."""

    def __init__(self):
        self._nodes: list[tuple[Var, list[tuple[Var, Callable]]]] = []

    def push(self, out: Var, pulls: list[tuple[Var, Callable]]) -> Var:
        self._nodes.append((out, pulls))
        return out

    def backward(self, root: Var, seed=1.0) -> None:
        """Propagate gradients from ``root`` to every recorded input."""
        root.add_grad(np.asarray(seed, dtype=np.float64))
        for out, pulls in reversed(self._nodes):
            if out.grad is None:
                continue
            for var, vjp in pulls:
                g = vjp(out.grad)
                if g is not None:
                    var.add_grad(g)
