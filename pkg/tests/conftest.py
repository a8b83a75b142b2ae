import numpy as np
import pytest

import viscowear as vw

TAGS = dict(left="dirichlet", top="neumann", right="neumann", bottom="contact")


def unit_square(nx=1, ny=1, lx=1.0, ly=1.0, tags=None):
    return vw.build_rect_mesh(nx, ny, lx, ly, tags or TAGS)


def default_params(**kw):
    base = dict(mu_elastic=1.0, lam_elastic=0.5, mu_viscous=2.0, lam_viscous=0.5, rho=1.0)
    base.update(kw)
    return vw.MaterialParams(**base)


@pytest.fixture
def mesh1x1():
    return unit_square()


@pytest.fixture
def sys2x1():
    mesh = unit_square(nx=2, ny=1, lx=2.0, ly=1.0)
    return vw.assemble_system(mesh, default_params())


@pytest.fixture
def sys2x2():
    mesh = unit_square(nx=2, ny=2)
    return vw.assemble_system(mesh, default_params())


def contact_friction(beta=0.2, mu=0.3, v_star=(0.05, 0.0), eps_reg=1e-4, **kw):
    return vw.FrictionData(beta=beta, mu=mu, v_star=v_star, eps_reg=eps_reg, **kw)
