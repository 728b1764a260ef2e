"""The served protocol against a real HTTP client over a live socket,
including the consumer package's own service backend. Nothing here imports
across the wire boundary: the server side stays pure embedshim, the client
side talks JSON over the port."""

import threading
import time

import numpy as np
import pytest
import requests
import uvicorn

from embedshim.server import create_app
from embedshim.service import ServiceSettings


@pytest.fixture(scope="module")
def base_url():
    app = create_app(ServiceSettings(models=("bert-base-uncased",)))
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def test_health_over_the_wire(base_url):
    body = requests.get(f"{base_url}/health", timeout=10).json()
    assert body["status"] == "ok"
    assert body["dims"] == {"bert-base-uncased": 768}


def test_embed_over_the_wire(base_url):
    resp = requests.post(
        f"{base_url}/embed",
        json={"model": "bert-base-uncased", "pooling": "mean", "texts": ["one", "two"]},
        timeout=30,
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["dim"] == 768
    assert len(body["embeddings"]) == 2


def test_consumer_service_backend_round_trip(base_url, tmp_path):
    """The recommender package's service provider, pointed at this server:
    vectors come back at the advertised dim, land in its cache, and the
    second call is served without touching the socket again."""
    verbrec_embed = pytest.importorskip("verbrec.embed")

    cfg = verbrec_embed.ProviderConfig(
        backend="service",
        model_id="bert-base-uncased",
        pooling="mean",
        endpoint=base_url,
        cache_path=str(tmp_path / "svc.emb"),
    )
    provider = verbrec_embed.EmbeddingProvider(cfg)
    texts = ["a drama from 1994", "a comedy about robots"]
    first = provider.embed_texts(texts)
    assert [v.dim for v in first] == [768, 768]

    offline = verbrec_embed.EmbeddingProvider(
        verbrec_embed.ProviderConfig(
            backend="file",
            model_id="bert-base-uncased",
            pooling="mean",
            cache_path=str(tmp_path / "svc.emb"),
        )
    )
    second = offline.embed_texts(texts)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.values, b.values)
