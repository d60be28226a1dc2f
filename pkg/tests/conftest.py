import pytest

import document_store
import http_service
from constants import RestMode


@pytest.fixture
def store():
    return http_service.seed_fixtures(document_store.Store())


@pytest.fixture
def client(store):
    return http_service.create_app(store, RestMode.OPEN, enable_state=True).test_client()


@pytest.fixture
def json_only_client(store):
    return http_service.create_app(store, RestMode.JSON_ONLY, enable_state=True).test_client()


@pytest.fixture(scope='module')
def vulnerable_lab():
    app = http_service.create_app(rest_mode=RestMode.OPEN, enable_state=True)
    with http_service.serve_in_background(app) as server:
        yield server


@pytest.fixture(scope='module')
def hardened_lab():
    app = http_service.create_app(rest_mode=RestMode.JSON_ONLY, enable_state=True)
    with http_service.serve_in_background(app) as server:
        yield server
