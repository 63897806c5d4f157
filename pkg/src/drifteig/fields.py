"""Scalar and planar fields built from expressions, plus the bundled example drifts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, parse, to_source

__all__ = [
    "ScalarField", "PlanarField",
    "HAMILTONIAN", "corollary_field", "prop12_field", "rotation_field", "builtin_field",
]

# double-well Hamiltonian used by the corollary family of drifts
HAMILTONIAN = "x2^2/2 + x1^4/4 - x1^2/2"


def _as_expr(e) -> Expr:
    return e if isinstance(e, Expr) else parse(str(e))


@dataclass(frozen=True)
class ScalarField:
    """A scalar function ``c(x)`` given by an expression."""

    expr: Expr

    @classmethod
    def from_str(cls, src: str) -> "ScalarField":
        return cls(parse(src))

    def __call__(self, x1, x2):
        if np.ndim(x1) == 0 and np.ndim(x2) == 0:
            return self.expr.scalar_fn(float(x1), float(x2))
        return self.expr.array_fn(np.asarray(x1, float), np.asarray(x2, float))

    def grad(self, x1: float, x2: float) -> tuple[float, float]:
        _, g1, g2 = self.expr.scalar_grad_fn(float(x1), float(x2))
        return g1, g2

    def shifted(self, k: float) -> "ScalarField":
        return ScalarField(parse(f"({to_source(self.expr)}) + ({float(k)!r})"))

    def __str__(self) -> str:
        return to_source(self.expr)


@dataclass(frozen=True)
class PlanarField:
    """A vector field ``b(x) = (b1(x), b2(x))`` on the plane."""

    b1: Expr
    b2: Expr
    name: str = field(default="", compare=False)

    @classmethod
    def from_str(cls, b1: str, b2: str, name: str = "") -> "PlanarField":
        return cls(parse(b1), parse(b2), name)

    def __call__(self, x1, x2):
        """Field value; scalars give a tuple, arrays give a pair of arrays."""
        if np.ndim(x1) == 0 and np.ndim(x2) == 0:
            x1, x2 = float(x1), float(x2)
            return self.b1.scalar_fn(x1, x2), self.b2.scalar_fn(x1, x2)
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        return self.b1.array_fn(x1, x2), self.b2.array_fn(x1, x2)

    def rhs(self):
        """Fast scalar right-hand side ``f(x1, x2) -> (b1, b2)`` for integration."""
        f1 = self.b1.scalar_fn
        f2 = self.b2.scalar_fn
        return lambda x1, x2: (f1(x1, x2), f2(x1, x2))

    def jacobian(self, x1: float, x2: float) -> np.ndarray:
        _, a11, a12 = self.b1.scalar_grad_fn(float(x1), float(x2))
        _, a21, a22 = self.b2.scalar_grad_fn(float(x1), float(x2))
        return np.array([[a11, a12], [a21, a22]])

    def divergence(self, x1: float, x2: float) -> float:
        return self.b1.scalar_grad_fn(x1, x2)[1] + self.b2.scalar_grad_fn(x1, x2)[2]

    def scaled(self, sigma: float) -> "PlanarField":
        s = float(sigma)
        return PlanarField(parse(f"({s!r}) * ({to_source(self.b1)})"),
                           parse(f"({s!r}) * ({to_source(self.b2)})"),
                           f"{s!r}*{self.name}" if self.name else "")

    def rotated(self, theta: float) -> "PlanarField":
        """The field ``R b(R^T x)`` for the rotation ``R`` by ``theta``."""
        c, s = float(np.cos(theta)), float(np.sin(theta))
        # y = R^T x
        y1 = f"(({c!r})*x1 + ({s!r})*x2)"
        y2 = f"(({-s!r})*x1 + ({c!r})*x2)"
        b1 = _substitute(to_source(self.b1), y1, y2)
        b2 = _substitute(to_source(self.b2), y1, y2)
        return PlanarField(parse(f"({c!r})*({b1}) - ({s!r})*({b2})"),
                           parse(f"({s!r})*({b1}) + ({c!r})*({b2})"))

    def to_json(self) -> dict:
        return {"b1": to_source(self.b1), "b2": to_source(self.b2), "name": self.name}


def _substitute(src: str, y1: str, y2: str) -> str:
    # printed sources only ever contain the canonical names x1, x2
    return src.replace("x1", "\0").replace("x2", y2).replace("\0", y1)


def corollary_field(alpha: float) -> PlanarField:
    """``b = (-dH/dx2, dH/dx1) - (H - alpha) grad H`` for the double-well ``H``."""
    a = float(alpha)
    h = f"({HAMILTONIAN} - ({a!r}))"
    dh1 = "(x1^3 - x1)"
    dh2 = "x2"
    return PlanarField(parse(f"-{dh2} - {h}*{dh1}"), parse(f"{dh1} - {h}*{dh2}"),
                       f"corollary({a!r})")


def prop12_field(alpha: float) -> PlanarField:
    """``b = (1 - alpha)(-x2, x1) + alpha(-1, 0)`` (rotation plus constant push)."""
    a = float(alpha)
    return PlanarField(parse(f"({1 - a!r})*(-x2) - ({a!r})"), parse(f"({1 - a!r})*x1"),
                       f"prop12({a!r})")


def rotation_field() -> PlanarField:
    return PlanarField(parse("-x2"), parse("x1"), "rotation")


def builtin_field(name: str, alpha: float | None = None) -> PlanarField:
    if name == "corollary":
        return corollary_field(_need(alpha, name))
    if name == "prop12":
        return prop12_field(_need(alpha, name))
    if name == "rotation":
        return rotation_field()
    raise KeyError(f"unknown builtin field {name!r}")


def _need(alpha, name):
    if alpha is None:
        raise ValueError(f"builtin {name!r} needs a parameter alpha")
    return alpha
