"""Pure-Python / numpy fallback for the hot kernels.

Mirrors the API of the optional compiled extension ``_kernels``: stack-program
evaluation over arrays or scalars, and a fused Euler-Maruyama step.  Selected
automatically by ``_backend`` when the extension is unavailable (or when
KEMENY1D_PURE=1).
"""

from __future__ import annotations

import numpy as np

from .exprlang import (
    OP_ABS,
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_LOG,
    OP_MUL,
    OP_NEG,
    OP_POW,
    OP_POWI,
    OP_SIGN,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_TANH,
    OP_X,
    DomainError,
)

COMPILED = False


def _first_bad(xs: np.ndarray, mask: np.ndarray) -> float:
    return float(np.asarray(xs)[mask][0]) if mask.ndim else float(xs)


def eval_program(code: np.ndarray, consts: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Evaluate a compiled expression program at every point of xs."""
    xs = np.asarray(xs, dtype=np.float64)
    stack: list = []
    with np.errstate(all="ignore"):
        for op, arg in code:
            if op == OP_CONST:
                stack.append(np.full(xs.shape, consts[arg]))
            elif op == OP_X:
                stack.append(xs.copy())
            elif op == OP_NEG:
                np.negative(stack[-1], out=stack[-1])
            elif op == OP_ADD:
                b = stack.pop()
                stack[-1] += b
            elif op == OP_SUB:
                b = stack.pop()
                stack[-1] -= b
            elif op == OP_MUL:
                b = stack.pop()
                stack[-1] *= b
            elif op == OP_DIV:
                b = stack.pop()
                stack[-1] /= b
            elif op == OP_POW:
                b = stack.pop()
                a = stack[-1]
                bad = (a < 0) & (b != np.floor(b))
                if bad.any():
                    raise DomainError(
                        "negative base with non-integer exponent", _first_bad(xs, bad)
                    )
                stack[-1] = np.power(a, b)
            elif op == OP_POWI:
                a = stack[-1]
                r = a * a
                if arg == 3:
                    r = r * a
                elif arg == 4:
                    r = r * r
                stack[-1] = r
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_LOG:
                a = stack[-1]
                bad = ~(a > 0)
                if bad.any():
                    raise DomainError("log of non-positive value", _first_bad(xs, bad))
                stack[-1] = np.log(a)
            elif op == OP_SQRT:
                a = stack[-1]
                bad = a < 0
                if bad.any():
                    raise DomainError("sqrt of negative value", _first_bad(xs, bad))
                stack[-1] = np.sqrt(a)
            elif op == OP_ABS:
                np.abs(stack[-1], out=stack[-1])
            elif op == OP_SIGN:
                stack[-1] = np.sign(stack[-1])
            elif op == OP_SIN:
                stack[-1] = np.sin(stack[-1])
            elif op == OP_COS:
                stack[-1] = np.cos(stack[-1])
            elif op == OP_TANH:
                stack[-1] = np.tanh(stack[-1])
            else:
                raise ValueError(f"bad opcode {op}")
    out = stack.pop()
    bad = np.isnan(out) & ~np.isnan(xs)
    if bad.any():
        raise DomainError("indeterminate value (NaN)", _first_bad(xs, bad))
    return out


def eval_program_scalar(code: np.ndarray, consts: np.ndarray, x: float) -> float:
    return float(eval_program(code, consts, np.asarray([x]))[0])


def em_step(
    a_code: np.ndarray,
    a_consts: np.ndarray,
    b_code: np.ndarray,
    b_consts: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One Euler-Maruyama step x + b(x) dt + sqrt(a(x) dt) z for a batch of paths.

    Raises DomainError when the diffusion coefficient is not positive at a
    visited point.
    """
    a = eval_program(a_code, a_consts, x)
    bad = ~(a > 0)
    if bad.any():
        raise DomainError("diffusion coefficient a(x) <= 0", _first_bad(x, bad))
    b = eval_program(b_code, b_consts, x)
    return x + b * dt + np.sqrt(a * dt) * z
