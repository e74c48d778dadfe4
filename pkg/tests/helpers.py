"""Shared builders for test datasets."""

import json

import numpy as np

from iqarag.featstore import FeatureMatrix, write_features

GOOD_LOGITS = {"excellent": 2.0, "good": 1.0, "fair": 0.0, "poor": -1.0, "bad": -2.0}


def make_dataset(tmp_path, name, n, seed, dim=6, with_images=False):
    """Synthetic dataset whose features genuinely encode quality.

    Writes a manifest and a feature file under tmp_path and returns
    their paths as strings.  Features place each image near others of
    similar quality, so nearest neighbors carry useful anchors.
    """
    rng = np.random.default_rng(seed)
    raws = rng.uniform(0.0, 100.0, n)
    ids = [f"{name}{i:04d}" for i in range(n)]
    lines = [json.dumps({"name": name, "scale_min": 0.0, "scale_max": 100.0})]
    for img_id, raw in zip(ids, raws):
        lines.append(json.dumps({"id": img_id, "path": f"{img_id}.png", "mos": float(raw)}))
    man_path = tmp_path / f"{name}.jsonl"
    man_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    mos = raws / 100.0
    data = np.zeros((n, dim), dtype=np.float32)
    data[:, 0] = mos
    data[:, 1] = 0.5 * mos**2
    data[:, 2:] = 0.01 * rng.standard_normal((n, dim - 2))
    feat_path = tmp_path / f"{name}.iqft"
    write_features(FeatureMatrix(ids=tuple(ids), data=data, encoder_tag="toy"), feat_path)

    if with_images:
        for img_id in ids:
            (tmp_path / f"{img_id}.png").write_bytes(b"px-" + img_id.encode())
    return str(man_path), str(feat_path)
