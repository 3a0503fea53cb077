import pytest
from fastapi.testclient import TestClient

from helpers_server import full_config

from cotserve import build_app, load_all


@pytest.fixture(scope="session")
def cfg():
    return full_config()


@pytest.fixture(scope="session")
def handles(cfg):
    return load_all(cfg)


@pytest.fixture(scope="session")
def client(cfg, handles):
    return TestClient(build_app(cfg, handles), raise_server_exceptions=False)
