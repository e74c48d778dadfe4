import json

import numpy as np
import pytest
from PIL import Image

from iqarag_extract import load_encoder

# outcome per acceptance test, printed as one line each after the run
_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_extract_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("extractor acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE):
        name = nodeid.split("::")[-1]
        label = name.removeprefix("test_").replace("_", " ")
        status = "PASS" if _ACCEPTANCE[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {label}")


@pytest.fixture(scope="session")
def encoder_cache():
    """Share loaded encoders across tests; model builds dominate runtime."""
    cache = {}

    def get(name="resnet", seed=1, pooling="cls"):
        key = (name, seed, pooling)
        if key not in cache:
            cache[key] = load_encoder(name, weights="random", seed=seed, pooling=pooling)
        return cache[key]

    return get


def write_png(path, seed, size=(48, 36)):
    rng = np.random.default_rng(seed)
    w, h = size
    arr = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)


@pytest.fixture
def make_corpus(tmp_path):
    """Build a manifest plus PNG files under tmp_path.

    ``duplicates`` appends ids whose files are byte copies of earlier
    images; ``broken`` appends ids whose files are not images;
    ``missing`` appends ids whose files do not exist.  The header
    carries the score-scale fields downstream manifest readers expect.
    """

    def build(n=4, *, duplicates=0, broken=0, missing=0, seed=0, name="corpus"):
        root = tmp_path / name
        root.mkdir()
        lines = [json.dumps({"name": name, "scale_min": 0.0, "scale_max": 100.0})]
        rng = np.random.default_rng(seed)

        def record(image_id):
            mos = round(float(rng.uniform(0.0, 100.0)), 2)
            lines.append(json.dumps({"id": image_id, "path": f"{image_id}.png", "mos": mos}))

        for i in range(n):
            write_png(root / f"im{i}.png", seed=1000 * seed + i, size=(40 + 7 * i, 36))
            record(f"im{i}")
        for j in range(duplicates):
            source = (root / f"im{j % n}.png").read_bytes()
            (root / f"dup{j}.png").write_bytes(source)
            record(f"dup{j}")
        for j in range(broken):
            (root / f"bad{j}.png").write_bytes(b"this is not an image")
            record(f"bad{j}")
        for j in range(missing):
            record(f"gone{j}")

        manifest = root / "m.jsonl"
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return manifest

    return build
