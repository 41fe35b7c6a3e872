import pytest

from webaudit import web2
from webaudit.field import Rect

PRICE_BOX = Rect(0.8, 1.25, 0.8, 1.25)

# Hotelling web of Pi = 1/(p1 p2) written as a map over (q1, p1)
HOTELLING_Q2 = "p1^3*q1^2"
HOTELLING_P2 = "1/(p1^2*q1)"


@pytest.fixture(scope="session")
def box():
    return PRICE_BOX


@pytest.fixture(scope="session")
def hotelling_map():
    return web2.map_web(HOTELLING_Q2, HOTELLING_P2, PRICE_BOX)


@pytest.fixture(scope="session")
def scaled_map():
    return web2.map_web("2*" + HOTELLING_Q2, HOTELLING_P2, PRICE_BOX)


def perturbed_map(size, bump="p1*q1"):
    return web2.map_web(f"{HOTELLING_Q2}*(1 + {size}*({bump}))", HOTELLING_P2, PRICE_BOX)


@pytest.fixture(scope="session")
def product_map():
    # density a = -(1 + q1) exp(p1) on [0, 1]^2
    return web2.map_web("(q1 + q1^2/2)*exp(p1)", "-p1", Rect(0.0, 1.0, 0.0, 1.0))
