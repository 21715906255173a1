"""On-demand patch generation over HTTP.

The server is stateless by construction: a sample is a pure function of
(configuration, class, index), seeded exactly like dataset generation,
so restarting the server or fetching the same index twice returns the
same bytes. An in-memory read-through cache keyed by (class, index)
only skips recomputation.

Endpoints:
  GET /healthz                              liveness probe
  GET /config                               effective configuration JSON
  GET /sample?class=<c>&index=<u64>[&cutout=true]
      multipart/mixed response: JSON metadata part, gzipped NIfTI image
      and label parts, plus a corruption mask part when cutout=true.
"""

from __future__ import annotations

import dataclasses
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .appearance import AppearanceParams, CutoutParams, SkullParams, apply_cutout, \
    synthesize_background_sample, synthesize_image
from .manifest import SampleClass
from .patchqc import QCReport, extract_patches
from .pipeline import _APPEARANCE_STREAM, _CUTOUT_STREAM, _PATCH_STREAM, \
    dataset_growth_defaults, derive_seed
from .rasterize import rasterize_tree
from .treegen import GrowthParams, grow_tree
from .volgrid import VolumeKind, VoxelVolume, nifti_bytes

# fixed so identical samples serialize to identical response bodies
MULTIPART_BOUNDARY = "vesselgen-sample-7f3a9c"


class SampleUnavailableError(Exception):
    """No patch of the requested tree passed quality control."""


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    master_seed: int = 42
    growth: GrowthParams = field(default_factory=dataset_growth_defaults)
    growth_overrides: dict = field(default_factory=dict)
    appearance: AppearanceParams = field(default_factory=AppearanceParams)
    skull: SkullParams = field(default_factory=SkullParams)
    cutout: CutoutParams = field(default_factory=CutoutParams)
    patch_size: int = 96
    max_patch_attempts: int = 200
    max_concurrent: int = 4
    cache_size: int = 32

    def validate(self) -> None:
        self.growth.validate()
        self.appearance.validate()
        self.skull.validate()
        self.cutout.validate()
        if self.patch_size < 1 or any(self.patch_size > n for n in self.growth.domain_dims):
            raise ValueError("patch_size must fit inside the growth domain")
        if self.max_patch_attempts < 1:
            raise ValueError("max_patch_attempts must be positive")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be positive")
        if self.cache_size < 0:
            raise ValueError("cache_size must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def server_config_from_dict(d: dict) -> ServerConfig:
    from .pipeline import _dataclass_from

    d = dict(d)
    parts = {}
    if "growth" in d:
        parts["growth"] = _dataclass_from(GrowthParams, d.pop("growth"))
    if "appearance" in d:
        a = dict(d.pop("appearance"))
        skull = a.pop("skull", None)
        ap = _dataclass_from(AppearanceParams, a)
        if skull is not None:
            ap = dataclasses.replace(ap, skull=_dataclass_from(SkullParams, skull))
        parts["appearance"] = ap
    if "skull" in d:
        parts["skull"] = _dataclass_from(SkullParams, d.pop("skull"))
    if "cutout" in d:
        parts["cutout"] = _dataclass_from(CutoutParams, d.pop("cutout"))
    base = _dataclass_from(ServerConfig, d)
    return dataclasses.replace(base, **parts)


def _class_growth(config: ServerConfig, cls: SampleClass) -> GrowthParams:
    params = config.growth
    override = dict(config.growth_overrides.get(cls.value, {}))
    for name, value in override.items():
        if isinstance(getattr(params, name), tuple) and isinstance(value, list):
            override[name] = tuple(value)
    if override:
        params = dataclasses.replace(params, **override)
    if cls is SampleClass.LOW_TORT:
        params = dataclasses.replace(params, tortuosity=0.0)
    return params


def build_sample(config: ServerConfig, cls: SampleClass,
                 index: int) -> tuple[dict, VoxelVolume, VoxelVolume]:
    """Generate the sample for (class, index): (metadata, image, label).

    Seeded with derive_seed(master_seed, "train", index) so a dataset
    job and this server agree on what a given index contains. Vessel
    classes serve the first patch of the tree that passes QC; a tree
    yielding none raises SampleUnavailableError (the client should try
    another index).
    """
    seed = derive_seed(config.master_seed, "train", index)
    if cls is SampleClass.BACKGROUND:
        arng = np.random.Generator(np.random.Philox(key=[seed, _APPEARANCE_STREAM]))
        image, label = synthesize_background_sample(
            config.patch_size, config.appearance, arng)
        qc = QCReport(occupancy=0.0, component_count=0, floating_islands=0,
                      continuity_ok=False, passed=False)
    else:
        tree = grow_tree(_class_growth(config, cls), seed)
        raster = rasterize_tree(tree)
        prng = np.random.Generator(np.random.Philox(key=[seed, _PATCH_STREAM]))
        accepted = extract_patches(
            raster, prng, max_accepted=1, max_attempts=config.max_patch_attempts,
            patch_size=config.patch_size)
        if not accepted:
            raise SampleUnavailableError(
                f"no patch passed quality control for class={cls.value} index={index}")
        spec, qc = accepted[0]
        o, s = spec.origin, spec.size
        label = VoxelVolume(
            raster.mask.data[o[0]:o[0] + s, o[1]:o[1] + s, o[2]:o[2] + s].copy(),
            VolumeKind.BINARY_MASK)
        appearance = config.appearance
        if cls is SampleClass.SKULL:
            appearance = dataclasses.replace(appearance, skull=config.skull)
        arng = np.random.Generator(np.random.Philox(key=[seed, _APPEARANCE_STREAM]))
        image = synthesize_image(label, appearance, arng)
    meta = {
        "class": cls.value,
        "index": index,
        "seed": seed,
        "dims": list(image.data.shape),
        "qc": qc.to_dict(),
    }
    return meta, image, label


def _multipart_body(meta: dict, image: VoxelVolume, label: VoxelVolume,
                    cut_mask: VoxelVolume | None) -> bytes:
    b = MULTIPART_BOUNDARY.encode()
    parts = []

    def add(name: str, content_type: str, payload: bytes, filename: str | None = None):
        disposition = f'form-data; name="{name}"'
        if filename:
            disposition += f'; filename="{filename}"'
        parts.append(b"--" + b + b"\r\n"
                     + f"Content-Type: {content_type}\r\n".encode()
                     + f"Content-Disposition: {disposition}\r\n".encode()
                     + b"\r\n" + payload + b"\r\n")

    add("metadata", "application/json",
        json.dumps(meta, sort_keys=True, separators=(",", ":")).encode())
    add("image", "application/gzip", nifti_bytes(image), "image.nii.gz")
    add("label", "application/gzip", nifti_bytes(label), "label.nii.gz")
    if cut_mask is not None:
        add("corruption_mask", "application/gzip", nifti_bytes(cut_mask), "corruption_mask.nii.gz")
    parts.append(b"--" + b + b"--\r\n")
    return b"".join(parts)


class PatchServer:
    """Wraps ThreadingHTTPServer with generation limits and a cache."""

    def __init__(self, config: ServerConfig):
        config.validate()
        self.config = config
        self._gate = threading.Semaphore(config.max_concurrent)
        self._cache: OrderedDict[tuple[str, int], tuple[dict, VoxelVolume, VoxelVolume]] = OrderedDict()
        self._cache_lock = threading.Lock()
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((config.host, config.port), handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def _cached_sample(self, cls: SampleClass, index: int):
        key = (cls.value, index)
        with self._cache_lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        with self._gate:
            # racing requests may compute the same sample twice; both
            # compute identical bytes so the duplicate work is harmless
            sample = build_sample(self.config, cls, index)
        with self._cache_lock:
            if self.config.cache_size > 0:
                self._cache[key] = sample
                self._cache.move_to_end(key)
                while len(self._cache) > self.config.cache_size:
                    self._cache.popitem(last=False)
        return sample

    def sample_response(self, cls: SampleClass, index: int, cutout: bool) -> bytes:
        meta, image, label = self._cached_sample(cls, index)
        cut_mask = None
        if cutout:
            crng = np.random.Generator(
                np.random.Philox(key=[meta["seed"], _CUTOUT_STREAM]))
            image, cut_mask = apply_cutout(image, self.config.cutout, crng)
            meta = dict(meta, cutout=True)
        return _multipart_body(meta, image, label, cut_mask)

    def start(self) -> None:
        """Serve in a daemon thread (returns immediately)."""
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def _make_handler(server: PatchServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, content_type: str, body: bytes) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, obj: dict) -> None:
            self._send(status, "application/json",
                       json.dumps(obj, sort_keys=True, separators=(",", ":")).encode())

        def do_GET(self):  # noqa: N802 (http.server API)
            try:
                url = urlparse(self.path)
                if url.path == "/healthz":
                    self._send_json(200, {"status": "ok"})
                elif url.path == "/config":
                    self._send_json(200, server.config.to_dict())
                elif url.path == "/sample":
                    self._handle_sample(parse_qs(url.query))
                else:
                    self._send_json(404, {"error": f"unknown path {url.path}"})
            except BrokenPipeError:
                pass
            except Exception as e:  # last-resort: always answer JSON
                try:
                    self._send_json(500, {"error": f"internal error: {e}"})
                except Exception:
                    pass

        def _handle_sample(self, query: dict) -> None:
            cls_raw = query.get("class", [None])[0]
            index_raw = query.get("index", [None])[0]
            cutout_raw = query.get("cutout", ["false"])[0].lower()
            if cls_raw is None or index_raw is None:
                self._send_json(400, {"error": "required query parameters: class, index"})
                return
            try:
                cls = SampleClass(cls_raw)
            except ValueError:
                self._send_json(400, {
                    "error": f"unknown class {cls_raw!r}; expected one of "
                             f"{[c.value for c in SampleClass]}"})
                return
            try:
                index = int(index_raw)
                if not 0 <= index < 1 << 64:
                    raise ValueError
            except ValueError:
                self._send_json(400, {"error": f"index must be a u64, got {index_raw!r}"})
                return
            if cutout_raw not in ("true", "false"):
                self._send_json(400, {"error": f"cutout must be true or false, got {cutout_raw!r}"})
                return
            try:
                body = server.sample_response(cls, index, cutout_raw == "true")
            except SampleUnavailableError as e:
                self._send_json(500, {"error": str(e)})
                return
            self._send(200, f"multipart/mixed; boundary={MULTIPART_BOUNDARY}", body)

    return Handler


def serve(config: ServerConfig | None = None) -> None:
    """Run the server until interrupted."""
    server = PatchServer(config or ServerConfig())
    host, port = server.address
    print(f"serving patches on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


def parse_multipart_sample(body: bytes) -> dict[str, bytes | dict]:
    """Split a /sample response body into its named parts.

    Returns {"metadata": dict, "image": bytes, "label": bytes} plus
    "corruption_mask" when present. Convenience for clients and tests.
    """
    b = MULTIPART_BOUNDARY.encode()
    chunks = body.split(b"--" + b)
    out: dict[str, bytes | dict] = {}
    for chunk in chunks:
        if not chunk or chunk in (b"--\r\n", b"--"):
            continue
        try:
            head, payload = chunk.split(b"\r\n\r\n", 1)
        except ValueError:
            continue
        # each part ends with exactly one CRLF before the next boundary;
        # rstrip would eat payload bytes that happen to be \r or \n
        if payload.endswith(b"\r\n"):
            payload = payload[:-2]
        name = None
        for line in head.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition"):
                for token in line.split(b";"):
                    token = token.strip()
                    if token.startswith(b'name="'):
                        name = token[6:-1].decode()
        if name == "metadata":
            out[name] = json.loads(payload.decode())
        elif name:
            out[name] = payload
    return out
