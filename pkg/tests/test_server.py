"""HTTP patch server: endpoints, byte stability, error handling."""

import gzip
import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from vesselgen.manifest import SampleClass
from vesselgen.pipeline import derive_seed
from vesselgen.server import (
    MULTIPART_BOUNDARY,
    PatchServer,
    SampleUnavailableError,
    ServerConfig,
    build_sample,
    parse_multipart_sample,
    server_config_from_dict,
)
from vesselgen.treegen import GrowthParams
from vesselgen.volgrid import read_nifti


def _config():
    # small domain and patch so a vessel sample builds in well under a second
    return ServerConfig(
        port=0,
        growth=GrowthParams(domain_dims=(96, 96, 96), root_radius_range=(8.0, 12.0),
                            tortuosity=0.4, branch_prob_decay=0.95,
                            flow_split_range=(0.25, 0.75)),
        patch_size=64,
        cache_size=4,
    )


def _get(url):
    try:
        with urllib.request.urlopen(url, timeout=120) as r:
            return r.status, dict(r.headers), r.read()
    except urllib.error.HTTPError as e:
        return e.code, dict(e.headers), e.read()


def _decode_volume(tmp_path, name, payload):
    path = tmp_path / name
    path.write_bytes(payload)
    return read_nifti(path)


@pytest.fixture(scope="module")
def served():
    server = PatchServer(_config())
    server.start()
    host, port = server.address
    yield server, f"http://{host}:{port}"
    server.shutdown()


def test_healthz(served):
    _, base = served
    status, headers, body = _get(base + "/healthz")
    assert status == 200
    assert headers["Content-Type"] == "application/json"
    assert json.loads(body) == {"status": "ok"}


def test_config_endpoint(served):
    server, base = served
    status, _, body = _get(base + "/config")
    assert status == 200
    want = json.loads(json.dumps(server.config.to_dict()))  # tuples become lists
    assert json.loads(body) == want


def test_sample_parts_and_metadata(served, tmp_path):
    server, base = served
    status, headers, body = _get(base + "/sample?class=high_tort&index=0")
    assert status == 200
    assert headers["Content-Type"] == f"multipart/mixed; boundary={MULTIPART_BOUNDARY}"
    parts = parse_multipart_sample(body)
    assert set(parts) == {"metadata", "image", "label"}
    meta = parts["metadata"]
    assert meta["class"] == "high_tort"
    assert meta["index"] == 0
    assert meta["seed"] == derive_seed(server.config.master_seed, "train", 0)
    assert meta["dims"] == [64, 64, 64]
    assert meta["qc"]["passed"] is True

    image = _decode_volume(tmp_path, "image.nii.gz", parts["image"])
    label = _decode_volume(tmp_path, "label.nii.gz", parts["label"])
    assert image.data.shape == (64, 64, 64)
    assert label.data.shape == (64, 64, 64)
    assert image.data.dtype == np.float32
    assert label.data.dtype == np.uint8
    occupancy = np.count_nonzero(label.data) / label.data.size
    assert occupancy == pytest.approx(meta["qc"]["occupancy"])
    assert occupancy >= 0.05
    assert image.data.min() >= 0.0 and image.data.max() <= 1.0


def test_sample_bytes_stable_across_repeat_and_restart(served):
    _, base = served
    url = base + "/sample?class=high_tort&index=0"
    _, _, first = _get(url)
    _, _, second = _get(url)  # cache hit
    assert first == second

    fresh = PatchServer(_config())
    fresh.start()
    try:
        host, port = fresh.address
        _, _, third = _get(f"http://{host}:{port}/sample?class=high_tort&index=0")
    finally:
        fresh.shutdown()
    assert first == third


def test_sample_cutout_variant(served, tmp_path):
    _, base = served
    status, _, body = _get(base + "/sample?class=high_tort&index=0&cutout=true")
    assert status == 200
    parts = parse_multipart_sample(body)
    assert set(parts) == {"metadata", "image", "label", "corruption_mask"}
    assert parts["metadata"]["cutout"] is True
    image = _decode_volume(tmp_path, "img.nii.gz", parts["image"])
    cut = _decode_volume(tmp_path, "cut.nii.gz", parts["corruption_mask"])
    hit = cut.data != 0
    assert hit.any()
    assert np.all(image.data[hit] == np.float32(-1.0))
    # the cached clean sample is not polluted by the cutout request
    _, _, clean = _get(base + "/sample?class=high_tort&index=0")
    clean_img = _decode_volume(tmp_path, "clean.nii.gz", parse_multipart_sample(clean)["image"])
    assert clean_img.data.min() >= 0.0


def test_background_sample(served):
    _, base = served
    status, _, body = _get(base + "/sample?class=background&index=3")
    assert status == 200
    parts = parse_multipart_sample(body)
    assert parts["metadata"]["qc"]["passed"] is False
    label = gzip.decompress(parts["label"])
    assert not any(label[352:])  # voxel payload beyond the 352-byte header


def test_error_responses(served):
    _, base = served
    for query, fragment in [
        ("/sample", "required query parameters"),
        ("/sample?class=high_tort", "required query parameters"),
        ("/sample?class=veins&index=0", "unknown class"),
        ("/sample?class=high_tort&index=abc", "u64"),
        ("/sample?class=high_tort&index=-1", "u64"),
        ("/sample?class=high_tort&index=0&cutout=maybe", "cutout"),
    ]:
        status, _, body = _get(base + query)
        assert status == 400, query
        assert fragment in json.loads(body)["error"]
    status, _, body = _get(base + "/nope")
    assert status == 404
    assert "unknown path" in json.loads(body)["error"]


def test_unavailable_sample_is_500():
    cfg = _config()
    cfg.growth = GrowthParams(domain_dims=(96, 96, 96), root_radius_range=(0.6, 0.8),
                              branch_prob_base=0.0, max_depth=1)
    cfg.max_patch_attempts = 10
    server = PatchServer(cfg)
    server.start()
    try:
        host, port = server.address
        status, _, body = _get(f"http://{host}:{port}/sample?class=low_tort&index=0")
    finally:
        server.shutdown()
    assert status == 500
    assert "quality control" in json.loads(body)["error"]


def test_cache_size_zero_still_deterministic():
    cfg = _config()
    cfg.cache_size = 0
    server = PatchServer(cfg)
    server.start()
    try:
        host, port = server.address
        url = f"http://{host}:{port}/sample?class=background&index=9"
        _, _, a = _get(url)
        _, _, b = _get(url)
    finally:
        server.shutdown()
    assert a == b


def test_build_sample_unavailable_exception():
    cfg = _config()
    cfg.growth = GrowthParams(domain_dims=(96, 96, 96), root_radius_range=(0.6, 0.8),
                              branch_prob_base=0.0, max_depth=1)
    cfg.max_patch_attempts = 5
    with pytest.raises(SampleUnavailableError, match="index=4"):
        build_sample(cfg, SampleClass.LOW_TORT, 4)


def test_parse_multipart_keeps_payload_crlf():
    b = MULTIPART_BOUNDARY.encode()
    payload = b"abc\r\n"  # ends with bytes that look like the delimiter
    body = (b"--" + b + b"\r\n"
            b"Content-Type: application/octet-stream\r\n"
            b'Content-Disposition: form-data; name="blob"\r\n'
            b"\r\n" + payload + b"\r\n"
            b"--" + b + b"--\r\n")
    parts = parse_multipart_sample(body)
    assert parts["blob"] == payload


def test_server_config_roundtrip_and_validation():
    cfg = _config()
    back = server_config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ValueError, match="unknown"):
        server_config_from_dict({"no_such": 1})
    bad = _config()
    bad.max_concurrent = 0
    with pytest.raises(ValueError, match="max_concurrent"):
        bad.validate()
    bad = _config()
    bad.patch_size = 200
    with pytest.raises(ValueError, match="patch_size"):
        bad.validate()
