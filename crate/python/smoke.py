"""Quick end-to-end check of the Python bindings.

    pip install -e crates/py --no-build-isolation
    python python/smoke.py
"""

import math
import pathlib
import tempfile

import homolab_py as hl

ROOT = pathlib.Path(__file__).resolve().parent.parent


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    print("homolab", hl.__version__)

    grid = hl.Grid(1, 1024, 256.0)
    field = hl.Field.sample(grid, epsilon=1.0, seed=7)
    assert all(abs(v) < 1.0 for v in field.values())

    fam = hl.Family("rational_uhlenbeck", d=1)
    lam, _ = fam.constants
    audit = fam.validate(n_probe=2000, seed=1)
    assert audit["a1"] and audit["a2"], audit
    assert audit["observed_lambda"] >= lam * (1 - 1e-9)

    # Periodic RVE against the exact 1D formula.
    est = hl.rve_periodic(field, fam, [1.0], tol=1e-11)
    exact = hl.oracle_1d(field, fam, 1.0)
    assert close(est["value"][0], exact, 1e-8), (est["value"], exact)
    print(f"rve {est['value'][0]:.10f}  oracle {exact:.10f}")

    # Constant medium: no corrector, flux equals A(omega, xi).
    flat = hl.Field.from_values(hl.Grid(2, 16, 4.0), [0.3] * 256, 1.0)
    c = hl.solve_corrector(flat, hl.Family("rational_uhlenbeck", d=2), [1.0, 0.5], tol=1e-10)
    assert max(abs(v) for v in c.phi()) < 1e-12
    want = hl.Family("rational_uhlenbeck", d=2).apply([0.3], [1.0, 0.5])
    assert all(close(a, b, 1e-12) for a, b in zip(c.flux_average(), want))

    print("site law flux at xi=1:", hl.site_law_flux(fam, 1.0))

    fit = hl.fit_rate([(2.0**k, 3.0 * 2.0 ** (-0.5 * k)) for k in range(5)])
    assert math.isclose(fit["slope"], -0.5, abs_tol=1e-12)

    text = (ROOT / "configs" / "smoke.json").read_text()
    out = hl.execute(text, json=True)
    print("smoke config rows:", out["rows"])

    with tempfile.TemporaryDirectory() as tmp:
        csv, summary, _ = hl.run_experiment(str(ROOT / "configs" / "smoke.json"), out_dir=tmp)
        assert pathlib.Path(csv).exists() and pathlib.Path(summary).exists()

    try:
        hl.Grid(1, 100, 1.0)
    except ValueError as e:
        print("rejected bad grid:", e)
    else:
        raise AssertionError("non power-of-two grid accepted")

    print("ok")


if __name__ == "__main__":
    main()
