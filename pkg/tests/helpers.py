"""Problems and independent oracles shared by the test modules."""

import itertools

import numpy as np

from bilevel_alm import BilevelProblem
from bilevel_alm.lower import solve_lower


def clark_westerberg():
    return BilevelProblem(
        n=1, m=1,
        F=lambda x, y: (x[0] - 3) ** 2 + (y[0] - 2) ** 2,
        f=lambda x, y: (y[0] - 5) ** 2,
        g=[
            lambda x, y: -2 * x[0] + y[0] - 1,
            lambda x, y: x[0] - 2 * y[0] + 2,
            lambda x, y: x[0] + 2 * y[0] - 14,
        ],
        x_bounds=[(0.0, 8.0)],
        name="cw",
    )


class RandomQP:
    """min_y 0.5 y'Qy + (c + Cx)'y  s.t.  A y <= b + Bx, with a strictly feasible point."""

    def __init__(self, rng, n, m, s):
        R = rng.normal(size=(m, m))
        self.Q = R @ R.T + 0.5 * np.eye(m)
        self.c = rng.normal(size=m)
        self.C = rng.normal(size=(m, n))
        self.A = rng.normal(size=(s, m))
        self.B = rng.normal(size=(s, n))
        self.x = rng.normal(size=n)
        y_in = rng.normal(size=m)
        # b chosen so y_in is strictly feasible at self.x
        self.b = self.A @ y_in - self.B @ self.x + rng.uniform(0.1, 1.0, size=s)
        self.n, self.m, self.s = n, m, s

    def problem(self):
        Q, c, C, A, b, B = self.Q, self.c, self.C, self.A, self.b, self.B
        n, m = self.n, self.m

        def f(x, y):
            acc = 0.0
            for i in range(m):
                lin = c[i]
                for j in range(n):
                    lin = lin + C[i, j] * x[j]
                acc = acc + lin * y[i]
                for k in range(m):
                    acc = acc + 0.5 * Q[i, k] * y[i] * y[k]
            return acc

        def row(i):
            def gi(x, y):
                acc = -b[i]
                for k in range(m):
                    acc = acc + A[i, k] * y[k]
                for j in range(n):
                    acc = acc - B[i, j] * x[j]
                return acc
            return gi

        return BilevelProblem(n=n, m=m, F=lambda x, y: 0.0, f=f,
                              g=[row(i) for i in range(self.s)], name="qp")


def enumerate_qp(qp, x):
    """Exact KKT point by trying every active set; returns (y, lam)."""
    Q, m, s = qp.Q, qp.m, qp.s
    q = qp.c + qp.C @ x
    rhs_b = qp.b + qp.B @ x
    best = None
    for k in range(s + 1):
        for S in itertools.combinations(range(s), k):
            S = list(S)
            AS = qp.A[S]
            K = np.block([[Q, AS.T], [AS, np.zeros((k, k))]])
            rhs = np.concatenate([-q, rhs_b[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            y, lam_S = sol[:m], sol[m:]
            if np.any(lam_S < -1e-12) or np.any(qp.A @ y - rhs_b > 1e-10):
                continue
            lam = np.zeros(s)
            lam[S] = lam_S
            if best is None:
                best = (y, lam)
    return best


def fd_lower(p, x, h=1e-5):
    """Central differences of y(x) using cold lower solves."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(p.n):
        e = np.zeros(p.n)
        e[j] = h
        yp = solve_lower(p, x + e).y
        ym = solve_lower(p, x - e).y
        cols.append((yp - ym) / (2 * h))
    return np.column_stack(cols)


def fd_gradient(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    """Max-norm error relative to the reference, floored at 1."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def smooth_samples(entry, count, rng, h=1e-5, tries=400):
    """Random x in the sampling box where y(x) has one active set on [x-h, x+h]."""
    p = entry.solver_problem()
    box = np.array(entry.sampling_box if entry.sampling_box is not None else p.x_bounds, dtype=float)
    out = []
    for _ in range(tries):
        if len(out) == count:
            break
        x = rng.uniform(box[:, 0], box[:, 1])
        sol = solve_lower(p, x)
        if sol.status != "converged":
            continue
        same = True
        for j in range(p.n):
            for sgn in (1.0, -1.0):
                e = np.zeros(p.n)
                e[j] = sgn * h
                other = solve_lower(p, x + e)
                if other.status != "converged" or other.active_set != sol.active_set:
                    same = False
        if same:
            out.append(x)
    return out
