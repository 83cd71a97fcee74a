"""HTTP facade: endpoints, error envelope, LRU store, preview parity."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from declutter.guidance import Engine
from declutter.scenes import decode_png_bytes, encode_png_bytes
from declutter.server import SessionStore, create_app


def scene_png() -> bytes:
    # flat background with two saturated squares: one interior, one at the
    # top edge, so detection and the margin rule are both deterministic
    img = np.full((64, 64, 3), 0.85, np.float32)
    img[24:34, 24:34] = [0.9, 0.1, 0.1]
    img[0:8, 40:52] = [0.1, 0.2, 0.9]
    return encode_png_bytes(img)


@pytest.fixture(scope="module")
def client(decomposer64, inpainter):
    engine = Engine(decomposer=decomposer64, inpainter=inpainter)
    return TestClient(create_app(engine))


@pytest.fixture()
def session_doc(client):
    resp = client.post("/sessions", content=scene_png(),
                       headers={"content-type": "image/png"})
    assert resp.status_code == 201
    return resp.json()


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_create_session_schema(session_doc):
    assert set(session_doc) == {"id", "width", "height", "objects", "previews"}
    assert session_doc["width"] == 64 and session_doc["height"] == 64
    assert len(session_doc["objects"]) == 2
    kinds = {o["suggestions_kind"] for o in session_doc["objects"]}
    assert kinds == {"interior", "boundary"}
    for o in session_doc["objects"]:
        assert o["overridden"] is False
        assert isinstance(o["q"], float)
        assert o["mask_rle"]["size"] == [64, 64]
    assert session_doc["previews"] == {}


def test_get_session_parity(client, session_doc):
    resp = client.get(f"/sessions/{session_doc['id']}")
    assert resp.status_code == 200
    assert resp.json() == session_doc


def test_multipart_upload(client):
    resp = client.post("/sessions", files={"file": ("p.png", scene_png(), "image/png")})
    assert resp.status_code == 201
    assert len(resp.json()["objects"]) == 2


def test_create_session_errors(client):
    resp = client.post("/sessions", content=b"")
    assert resp.status_code == 400
    assert resp.json() == {"code": "malformed", "message": "empty request body"}

    resp = client.post("/sessions", content=b"junk not a png")
    assert resp.status_code == 422
    assert resp.json()["code"] == "not_an_image"

    resp = client.post("/sessions", files={"note": ("", "text", "text/plain")})
    assert resp.status_code in (400, 422)


def test_unknown_session_404(client):
    for path in ["/sessions/ghost", "/sessions/ghost/objects/0/suggestions",
                 "/sessions/ghost/preview/capture.png", "/sessions/ghost/image.png"]:
        resp = client.get(path)
        assert resp.status_code == 404
        body = resp.json()
        assert body["code"] == "session_not_found"
        assert "message" in body
    resp = client.post("/sessions/ghost/objects/0/flip")
    assert resp.status_code == 404
    assert resp.json()["code"] == "session_not_found"


def test_image_round_trip(client, session_doc):
    resp = client.get(f"/sessions/{session_doc['id']}/image.png")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    img = decode_png_bytes(resp.content)
    assert img.shape == (64, 64, 3)
    assert np.abs(img - decode_png_bytes(scene_png())).max() <= 1e-6


def test_flip_endpoint(client, session_doc):
    sid = session_doc["id"]
    obj = session_doc["objects"][0]
    resp = client.post(f"/sessions/{sid}/objects/{obj['id']}/flip")
    assert resp.status_code == 200
    flipped = resp.json()
    assert flipped["id"] == obj["id"]
    assert flipped["overridden"] is True
    assert flipped["is_clutter"] == (not obj["is_clutter"])

    # involution: a second flip restores the class but stays overridden
    resp = client.post(f"/sessions/{sid}/objects/{obj['id']}/flip")
    again = resp.json()
    assert again["is_clutter"] == obj["is_clutter"]
    assert again["overridden"] is True

    doc = client.get(f"/sessions/{sid}").json()
    rec = next(o for o in doc["objects"] if o["id"] == obj["id"])
    assert rec["overridden"] is True


def test_flip_unknown_object(client, session_doc):
    resp = client.post(f"/sessions/{session_doc['id']}/objects/99/flip")
    assert resp.status_code == 404
    assert resp.json()["code"] == "object_not_found"


def test_suggestions_endpoint(client, session_doc):
    sid = session_doc["id"]
    by_kind = {o["suggestions_kind"]: o for o in session_doc["objects"]}
    interior = client.get(
        f"/sessions/{sid}/objects/{by_kind['interior']['id']}/suggestions").json()
    assert interior == {"kind": "interior",
                        "suggestions": ["move the object out of the scene",
                                        "remove via inpainting"]}
    boundary = client.get(
        f"/sessions/{sid}/objects/{by_kind['boundary']['id']}/suggestions").json()
    assert boundary["kind"] == "boundary"
    assert boundary["suggestions"] == ["zoom in",
                                       "change orientation portrait→landscape",
                                       "adjust camera angle"]
    resp = client.get(f"/sessions/{sid}/objects/99/suggestions")
    assert resp.status_code == 404
    assert resp.json()["code"] == "object_not_found"


def test_clean_flow(client, session_doc):
    sid = session_doc["id"]
    resp = client.get(f"/sessions/{sid}/preview/capture.png")
    assert resp.status_code == 404
    assert resp.json()["code"] == "preview_not_found"

    resp = client.post(f"/sessions/{sid}/clean", json={"fidelity": "capture"})
    assert resp.status_code == 200
    url = resp.json()["preview_url"]
    assert url == f"/sessions/{sid}/preview/capture.png"

    resp = client.get(url)
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    first = resp.content
    assert decode_png_bytes(first).shape == (64, 64, 3)
    # cached preview: byte-identical on refetch
    assert client.get(url).content == first

    doc = client.get(f"/sessions/{sid}").json()
    assert doc["previews"] == {"capture": True}


def test_clean_errors(client, session_doc):
    sid = session_doc["id"]
    resp = client.post(f"/sessions/{sid}/clean", content=b"{not json")
    assert resp.status_code == 400
    assert resp.json()["code"] == "malformed"

    resp = client.post(f"/sessions/{sid}/clean", json={"fidelity": "ultra"})
    assert resp.status_code == 400
    resp = client.post(f"/sessions/{sid}/clean", json={})
    assert resp.status_code == 400
    resp = client.post(f"/sessions/{sid}/clean", json=["capture"])
    assert resp.status_code == 400

    resp = client.get(f"/sessions/{sid}/preview/ultra.png")
    assert resp.status_code == 400
    assert resp.json()["code"] == "malformed"


def test_flip_invalidates_preview(client, session_doc):
    sid = session_doc["id"]
    client.post(f"/sessions/{sid}/clean", json={"fidelity": "capture"})
    assert client.get(f"/sessions/{sid}/preview/capture.png").status_code == 200
    oid = session_doc["objects"][0]["id"]
    client.post(f"/sessions/{sid}/objects/{oid}/flip")
    assert client.get(f"/sessions/{sid}/preview/capture.png").status_code == 404


def test_lru_eviction(decomposer64, inpainter):
    engine = Engine(decomposer=decomposer64, inpainter=inpainter)
    client = TestClient(create_app(engine, capacity=2))
    png = scene_png()
    ids = [client.post("/sessions", content=png).json()["id"] for _ in range(3)]
    assert client.get(f"/sessions/{ids[0]}").status_code == 404  # evicted
    assert client.get(f"/sessions/{ids[1]}").status_code == 200
    assert client.get(f"/sessions/{ids[2]}").status_code == 200
    # touching an old session protects it from the next eviction
    client.get(f"/sessions/{ids[1]}")
    client.post("/sessions", content=png)
    assert client.get(f"/sessions/{ids[1]}").status_code == 200
    assert client.get(f"/sessions/{ids[2]}").status_code == 404


def test_store_validation():
    with pytest.raises(ValueError):
        SessionStore(0)


def test_frontend_mount(tmp_path, decomposer64, inpainter):
    (tmp_path / "index.html").write_text("<html><body>ui</body></html>")
    engine = Engine(decomposer=decomposer64, inpainter=inpainter)
    client = TestClient(create_app(engine, frontend_dir=tmp_path))
    resp = client.get("/")
    assert resp.status_code == 200
    assert "ui" in resp.text
    # API routes still take precedence over the static mount
    assert client.get("/healthz").json() == {"status": "ok"}
