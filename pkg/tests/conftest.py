"""Shared synthetic-panel builders for the test suite."""

import numpy as np
import pytest

from panelforest.dataset import PanelDataset, from_records


def fe_panel(seed, n_ent=50, n_per=10, betas=(0.5, -1.0), sigma=0.1,
             corr_effects=0.0, ar_err=0.0, ar_x=0.0):
    """Panel with entity effects: y = b1*x1 + b2*x2 + eff_i + e_it."""
    rng = np.random.default_rng(seed)
    ents, yrs = [], []
    cols = {"y": [], "x1": [], "x2": []}
    for i in range(n_ent):
        eff = rng.normal()
        e_prev = rng.normal() * sigma
        x_prev = rng.normal()
        for t in range(n_per):
            x1 = (ar_x * x_prev + np.sqrt(max(1 - ar_x**2, 0.01)) * rng.normal()
                  + corr_effects * eff)
            x_prev = x1
            x2 = rng.normal()
            e = (ar_err * e_prev
                 + np.sqrt(max(1 - ar_err**2, 0.01)) * rng.normal() * sigma)
            e_prev = e
            ents.append(f"E{i:03d}")
            yrs.append(2000 + t)
            cols["x1"].append(x1)
            cols["x2"].append(x2)
            cols["y"].append(betas[0] * x1 + betas[1] * x2 + eff + e)
    return from_records(ents, yrs, cols)


def dynamic_panel(seed, n_ent=200, n_per=10, rho=0.5, beta=0.3, s_eta=1.0,
                  s_eps=1.0, ma_err=0.0, burn_in=30):
    """Dynamic panel y_it = rho*y_{i,t-1} + beta*x_it + eta_i + eps_it.

    Burn-in from near the stationary mean keeps the level-equation moment
    conditions valid (mean stationarity).
    """
    rng = np.random.default_rng(seed)
    ents, yrs, ys, xs = [], [], [], []
    for i in range(n_ent):
        eta = rng.normal() * s_eta
        x = rng.normal()
        y = (beta * x + eta) / (1 - rho) if rho < 1 else 0.0
        nu_prev = rng.normal()
        for t in range(-burn_in, n_per):
            x = 0.5 * x + rng.normal() + 0.3 * eta
            nu = rng.normal()
            eps = (nu + ma_err * nu_prev) * s_eps
            nu_prev = nu
            y = rho * y + beta * x + eta + eps
            if t >= 0:
                ents.append(f"E{i:03d}")
                yrs.append(2000 + t)
                ys.append(y)
                xs.append(x)
    return from_records(ents, yrs, {"y": ys, "x": xs})


def toy_panel() -> PanelDataset:
    """Three entities, short unbalanced spans, one gap year."""
    rows = [
        ("A", 2000, 1.0, 10.0), ("A", 2001, 2.0, 11.0), ("A", 2002, 3.0, 9.0),
        ("B", 2000, 5.0, 8.0), ("B", 2002, 6.0, 7.5),  # 2001 missing: gap
        ("C", 2001, 4.0, 12.0),
    ]
    return from_records([r[0] for r in rows], [r[1] for r in rows],
                        {"x": [r[2] for r in rows], "z": [r[3] for r in rows]})


@pytest.fixture
def tmp_csv(tmp_path):
    def write(text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return write
