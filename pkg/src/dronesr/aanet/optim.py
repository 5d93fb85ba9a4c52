"""ADAM optimizer state and finite-difference gradient verification."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError


@dataclass
class ParamStore:
    """Named parameters plus per-parameter ADAM first/second moments."""

    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))
        for k in self.params:
            if self.m[k].shape != self.params[k].shape or \
                    self.v[k].shape != self.params[k].shape:
                raise InvalidInputError(f"moment shape mismatch for {k!r}")
        if self.step < 0:
            raise InvalidInputError("step must be >= 0")


def adam_step(store: ParamStore, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard bias-corrected ADAM update, in place."""
    for k, g in grads.items():
        if g.shape != store.params[k].shape:
            raise InvalidInputError(
                f"gradient shape {g.shape} != param shape {store.params[k].shape} ({k!r})")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, g in grads.items():
        store.m[k] = beta1 * store.m[k] + (1.0 - beta1) * g
        store.v[k] = beta2 * store.v[k] + (1.0 - beta2) * g * g
        store.params[k] -= lr * (store.m[k] / bc1) / (np.sqrt(store.v[k] / bc2) + eps)


@dataclass(frozen=True)
class GradCheckResult:
    ok: bool
    max_rel_error: float
    n_checked: int
    n_skipped: int
    failures: tuple  # (param name, flat index, analytic, finite-difference)

    def report(self):
        lines = [f"gradient check: {'PASS' if self.ok else 'FAIL'} "
                 f"(max rel err {self.max_rel_error:.3e} over {self.n_checked} "
                 f"coords, {self.n_skipped} skipped)"]
        lines += [f"  {name}[{idx}]: analytic {a:.6e} vs fd {fd:.6e}"
                  for name, idx, a, fd in self.failures]
        return "\n".join(lines)


def gradient_check(loss_fn, params: dict, n_coords: int = 200, fd_step: float = 1e-5,
                   tol: float = 1e-4, atol: float = 1e-10, seed: int = 0) -> GradCheckResult:
    """Compare analytic parameter gradients against central finite differences.

    loss_fn(params) must return (scalar loss, grads dict). Non-differentiable
    coordinates are skipped via two tests: the central difference is probed at
    two step sizes (fd_step and fd_step/2), which disagree across an off-center
    ReLU/abs kink, and the left/right one-sided differences are compared, which
    disagree when the kink sits exactly at the evaluation point (e.g. a ReLU
    input of exactly 0, where the central difference is a consistent 0.5 slope
    on both step sizes). Near-zero pairs (below fd_step * tol) count as agreeing.
    """
    rng = np.random.default_rng(seed)
    l0, grads = loss_fn(params)
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)

    def central(p, idx, orig, h):
        p[idx] = orig + h
        lp, _ = loss_fn(params)
        p[idx] = orig - h
        lm, _ = loss_fn(params)
        p[idx] = orig
        return (lp - lm) / (2.0 * h), lp, lm

    max_rel = 0.0
    n_skipped = 0
    failures = []
    for flat in np.sort(picks):
        i = int(np.searchsorted(cum, flat, side="right"))
        name = names[i]
        idx = int(flat - (cum[i - 1] if i else 0))
        p = params[name].ravel()
        orig = p[idx]
        fd1, lp, lm = central(p, idx, orig, fd_step)
        fd2, _, _ = central(p, idx, orig, fd_step / 2.0)
        a = float(grads[name].ravel()[idx])
        denom = max(abs(a), abs(fd2))
        if denom < fd_step * tol:
            continue
        if abs(fd1 - fd2) > 10.0 * tol * max(abs(fd1), abs(fd2)):
            n_skipped += 1
            continue
        left = (l0 - lm) / fd_step
        right = (lp - l0) / fd_step
        if abs(left - right) > 0.1 * max(abs(left), abs(right), fd_step):
            n_skipped += 1
            continue
        # Richardson extrapolation cancels the O(h^2) truncation term, which
        # otherwise dominates the comparison for small-magnitude gradients
        fd2 = (4.0 * fd2 - fd1) / 3.0
        rel = abs(a - fd2) / denom
        if abs(a - fd2) < atol:  # below FD roundoff; agreement, not error
            continue
        max_rel = max(max_rel, rel)
        if rel > tol:
            failures.append((name, idx, a, fd2))
    return GradCheckResult(ok=not failures, max_rel_error=max_rel,
                           n_checked=len(picks) - n_skipped, n_skipped=n_skipped,
                           failures=tuple(failures))
