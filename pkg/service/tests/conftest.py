from pathlib import Path

import pytest

SERVICE_ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = SERVICE_ROOT / "fixtures"
TEMPLATES = Path(__file__).parent / "fixtures" / "templates.txt"


@pytest.fixture(scope="session")
def app():
    from clip_score_service.app import create_app

    return create_app(FIXTURE_DIR, model_id="toy")


@pytest.fixture(scope="session")
def client(app):
    from fastapi.testclient import TestClient

    with TestClient(app) as test_client:
        yield test_client
