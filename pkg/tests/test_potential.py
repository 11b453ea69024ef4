import numpy as np
import pytest

from pmdrift.field import Grid
from pmdrift.potential import Potential, potential_probe

CONVEX = [
    Potential.quadratic(1.0),
    Potential.quadratic(0.7, [0.3, -0.2]),
    Potential.anisotropic([[2.0, 0.5], [0.5, 1.0]]),
    Potential.cone(1.0),
    Potential.cone(2.0, [0.1, 0.1]),
    Potential.polynomial([0.0, 0.0, 1.0, 0.0, 0.25]),
]


def test_probe_examples():
    v, g, lap = potential_probe(Potential.quadratic(d=2), [0.0, 0.0])
    assert v == 0 and np.all(g == 0) and lap == 4.0
    v, g, lap = potential_probe(Potential.quadratic(), [1.5])
    assert (v, g[0], lap) == (2.25, 3.0, 2.0)
    v, g, lap = potential_probe(Potential.cone(), [0.0])
    assert (v, g[0], lap) == (0.0, 0.0, 1.0)


def test_probe_rejects_out_of_box():
    grid = Grid.from_spacing([-1], [1], 0.1)
    with pytest.raises(ValueError):
        potential_probe(Potential.quadratic(), [2.0], grid)


@pytest.mark.parametrize("phi", CONVEX + [Potential.tabulated(
    [np.linspace(-2, 2, 81)], np.linspace(-2, 2, 81) ** 2)], ids=lambda p: p.form)
def test_gradient_matches_centered_differences(phi):
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.8, 0.8, (20, phi.d)) + 0.05
    errs = []
    for h in (1e-3, 5e-4):
        fd = np.zeros_like(x)
        for k in range(phi.d):
            e = np.zeros(phi.d)
            e[k] = h
            fd[:, k] = (phi.value(x + e) - phi.value(x - e)) / (2 * h)
        errs.append(np.max(np.abs(fd - phi.gradient(x))))
    if phi.form in ("quadratic", "anisotropic"):
        assert errs[0] < 1e-9  # exact for quadratics up to roundoff
    elif phi.form == "tabulated":
        assert errs[0] < 1e-6
    else:
        assert 3.5 <= errs[0] / errs[1] <= 4.5


@pytest.mark.parametrize("phi", CONVEX, ids=lambda p: p.form)
def test_convexity_modulus(phi):
    lower, upper = [-2.0] * phi.d, [2.0] * phi.d
    meta = phi.metadata(lower, upper)
    assert meta.convex and meta.k0 > 0
    rng = np.random.default_rng(2)
    x = rng.uniform(-2, 2, (1000, phi.d))
    rel = x - np.asarray(meta.minimizer)
    quad = np.einsum("ni,nij,nj->n", rel, phi.hessian(x), rel)
    assert np.all(quad >= (meta.k0 - 1e-9) * np.sum(rel**2, axis=1))


def test_metadata_values():
    meta = Potential.quadratic().metadata([-2], [2], radius=0.5)
    assert meta.k0 == pytest.approx(2.0)
    assert meta.M1 == pytest.approx(2.0)
    assert meta.A_min == pytest.approx(1.0, abs=0.02)
    assert meta.minimizer == (0.0,)


def test_dict_roundtrip_and_unknown_keys():
    for phi in CONVEX + [Potential.zero(2)]:
        assert Potential.from_dict(phi.to_dict()) == phi
    with pytest.raises(ValueError):
        Potential.from_dict({"form": "quadratic", "scael": 1.0})
    with pytest.raises(ValueError):
        Potential.from_dict({"form": "bowl"})


def test_zero_potential():
    phi = Potential.zero(1)
    assert phi.is_zero
    assert np.all(phi.gradient(np.linspace(-1, 1, 5)[:, None]) == 0)
