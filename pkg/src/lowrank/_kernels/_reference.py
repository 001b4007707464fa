"""Pure numpy iteration engine; the fallback when the compiled core is unavailable."""

import numpy as np

CONTINUE, CONVERGED, DIVERGED = 0, 1, 2
METHODS = {"gd": 0, "altgd": 1, "nag": 2}


class Engine:
    """Runs GD / AltGD / NAG in place on owned copies of the factors.

    ``target`` is A (factorization) or the label matrix (linear network, with
    ``data`` = D).  ``G`` is the residual that drives the updates: R itself,
    or ``R D^T`` for linear networks.
    """

    def __init__(self, X, Y, X_prev, Y_prev, target, data, method, eta, beta, order="xy"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        if order not in ("xy", "yx"):
            raise ValueError("order must be 'xy' or 'yx'")
        self.method = method
        self.order = order
        self.eta = float(eta)
        self.beta = float(beta)
        self.T = np.asfortranarray(target, dtype=np.float64)
        self.D = None if data is None else np.asfortranarray(data, dtype=np.float64)
        self.X = np.array(X, dtype=np.float64, order="F")
        self.Y = np.array(Y, dtype=np.float64, order="F")
        self.X_prev = np.array(X_prev, dtype=np.float64, order="F")
        self.Y_prev = np.array(Y_prev, dtype=np.float64, order="F")
        self.t = 0
        self.R, self.G = self._residual(self.X, self.Y)
        if method == "nag":
            _, G_prev = self._residual(self.X_prev, self.Y_prev)
            self.Zx_prev = self.X_prev - self.eta * (G_prev @ self.Y_prev)
            self.Zy_prev = self.Y_prev - self.eta * (G_prev.T @ self.X_prev)

    def _residual(self, X, Y):
        if self.D is None:
            R = X @ Y.T - self.T
            return R, R
        R = (X @ Y.T) @ self.D - self.T
        return R, R @ self.D.T

    def _refresh(self):
        self.R, self.G = self._residual(self.X, self.Y)

    def step(self):
        eta, X, Y = self.eta, self.X, self.Y
        self.X_prev = X
        self.Y_prev = Y
        if self.method == "altgd":
            if self.order == "xy":
                self.X = X - eta * (self.G @ Y)
                self._refresh()
                self.Y = Y - eta * (self.G.T @ self.X)
            else:
                self.Y = Y - eta * (self.G.T @ X)
                self._refresh()
                self.X = X - eta * (self.G @ self.Y)
        else:
            Zx = X - eta * (self.G @ Y)
            Zy = Y - eta * (self.G.T @ X)
            if self.method == "gd":
                self.X, self.Y = Zx, Zy
            else:
                b = self.beta
                self.X = Zx + b * (Zx - self.Zx_prev)
                self.Y = Zy + b * (Zy - self.Zy_prev)
                self.Zx_prev, self.Zy_prev = Zx, Zy
        self._refresh()
        self.t += 1

    def advance(self, n_steps, stop_sq, div_sq, X0, Y0, resid_sq, dx_sq, dy_sq):
        """Take up to ``n_steps`` steps, recording squared norms after each.

        Stops early once ``||R||^2 <= stop_sq`` (converged) or the residual
        is non-finite or above ``div_sq`` (diverged).  Returns (steps, status).
        """
        for k in range(n_steps):
            self.step()
            rs = float(np.sum(self.R * self.R))
            resid_sq[k] = rs
            dx_sq[k] = float(np.sum((self.X - X0) ** 2))
            dy_sq[k] = float(np.sum((self.Y - Y0) ** 2))
            if not np.isfinite(rs) or rs > div_sq:
                return k + 1, DIVERGED
            if rs <= stop_sq:
                return k + 1, CONVERGED
        return n_steps, CONTINUE
